#include "stica/evaluation.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>

#include "stica/contrastive.hpp"
#include "stica/ops.hpp"

namespace stica {

std::vector<std::size_t> clip_starts(std::size_t frames, std::size_t clip_len, std::size_t num_clips) {
  if (num_clips == 0) throw ConfigError("num_clips must be positive");
  if (frames < clip_len)
    throw DataError("video of " + std::to_string(frames) + " frames is shorter than the clip length " +
                    std::to_string(clip_len));
  const std::size_t span = frames - clip_len;
  if (num_clips == 1) return {span / 2};
  std::vector<std::size_t> starts(num_clips);
  for (std::size_t i = 0; i < num_clips; ++i)
    starts[i] = static_cast<std::size_t>(
        std::floor(static_cast<double>(i * span) / static_cast<double>(num_clips - 1) + 0.5));
  return starts;
}

Tensor max_pooled_features(const nn::Model& model, const Tensor& feat, std::span<const std::size_t> offsets) {
  return model.pool_time(nn::spatial_max_pool(feat), {}, offsets);
}

namespace {

// C×T×H×W → K×C×T0×H0×W0 for the given starts.
Tensor stack_clips(const Tensor& video, const nn::EncoderConfig& enc, const std::vector<std::size_t>& starts) {
  const auto& s = video.shape();
  std::vector<Tensor> parts;
  for (auto t0 : starts) {
    const CropTube tube{0, s[3], 0, s[2], t0, t0 + enc.in_frames, CropDomain::Input};
    const Tensor clip = input_crop_resize(video, tube, enc.in_height, enc.in_width);
    Shape shape{1};
    shape.insert(shape.end(), clip.shape().begin(), clip.shape().end());
    parts.push_back(reshape(clip, shape));
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

Tensor unit_rows(const Tensor& x, const char* what) {
  const std::size_t n = x.size(0), d = x.size(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += out[i * d + j] * out[i * d + j];
    if (!(ss > 0.0)) throw NumericError(std::string(what) + " row " + std::to_string(i) + " has zero norm");
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= inv;
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Tensor extract_video_embedding(const Tensor& video, const nn::Model& model, std::size_t num_clips) {
  if (video.rank() != 4) throw ShapeError("extract_video_embedding: expected C×T×H×W, got " + to_string(video.shape()));
  if (video.numel() == 0) throw DataError("extract_video_embedding: empty video");
  const auto& enc = model.config().visual;
  if (video.size(0) != enc.in_channels)
    throw ShapeError("extract_video_embedding: video has " + std::to_string(video.size(0)) + " channels, encoder expects " +
                     std::to_string(enc.in_channels));
  NoGradGuard guard;
  // Repeated starts are encoded once and weighted by their multiplicity.
  std::map<std::size_t, std::size_t> weight;
  for (auto t : clip_starts(video.size(1), enc.in_frames, num_clips)) ++weight[t];
  std::vector<std::size_t> unique;
  for (const auto& [t, w] : weight) unique.push_back(t);
  const Tensor pooled = max_pooled_features(model, model.encode_video(stack_clips(video, enc, unique)));
  const std::size_t d = pooled.size(1);
  std::vector<double> acc(d, 0.0);
  std::size_t row = 0;
  for (const auto& [t, w] : weight) {
    for (std::size_t j = 0; j < d; ++j) acc[j] += static_cast<double>(w) * pooled.values()[row * d + j];
    ++row;
  }
  for (auto& v : acc) v /= static_cast<double>(num_clips);
  return Tensor({d}, std::move(acc));
}

Tensor embed_videos(const std::vector<AVInstance>& items, const nn::Model& model, std::size_t num_clips) {
  if (items.empty()) throw DataError("embed_videos: no instances");
  std::vector<double> out;
  std::size_t d = 0;
  for (const auto& inst : items) {
    const Tensor e = extract_video_embedding(inst.video, model, num_clips);
    d = e.numel();
    out.insert(out.end(), e.values().begin(), e.values().end());
  }
  return Tensor({items.size(), d}, std::move(out));
}

std::vector<double> retrieval_recall(const Tensor& queries, const std::vector<int>& query_labels,
                                     const RetrievalIndex& index, const std::vector<std::size_t>& ks) {
  if (index.gallery.rank() != 2 || index.gallery.size(0) == 0) throw DataError("retrieval_recall: empty gallery");
  if (queries.rank() != 2 || queries.size(1) != index.gallery.size(1))
    throw ShapeError("retrieval_recall: queries " + to_string(queries.shape()) + " vs gallery " +
                     to_string(index.gallery.shape()));
  const std::size_t nq = queries.size(0), ng = index.gallery.size(0), d = queries.size(1);
  if (query_labels.size() != nq || index.labels.size() != ng)
    throw ShapeError("retrieval_recall: label counts do not match the feature rows");
  for (auto k : ks)
    if (k == 0 || k > ng)
      throw ConfigError("retrieval_recall: k=" + std::to_string(k) + " outside [1, " + std::to_string(ng) + "]");
  const Tensor q = unit_rows(queries, "query"), g = unit_rows(index.gallery, "gallery");
  const std::size_t kmax = ks.empty() ? 0 : *std::max_element(ks.begin(), ks.end());
  // first_hit[i]: rank (0-based) of the first same-class neighbour, or ng.
  std::vector<std::size_t> first_hit(nq, ng);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<double> sim(ng);
    for (std::size_t j = 0; j < ng; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q.values()[i * d + c] * g.values()[j * d + c];
      sim[j] = s;
    }
    std::vector<std::size_t> order(ng);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(kmax), order.end(),
                      [&](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); });
    for (std::size_t r = 0; r < kmax; ++r)
      if (index.labels[order[r]] == query_labels[i]) {
        first_hit[i] = r;
        break;
      }
  }
  std::vector<double> recall;
  for (auto k : ks) {
    std::size_t hits = 0;
    for (auto r : first_hit) hits += r < k;
    recall.push_back(static_cast<double>(hits) / static_cast<double>(nq));
  }
  return recall;
}

void append_result_csv(const std::string& path, const std::string& metric, const std::string& k_or_mode, double value) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path);
  if (fresh) out << "metric,k_or_mode,value\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  out << metric << ',' << k_or_mode << ',' << buf << '\n';
  if (!out) throw IoError("write failed for " + path);
}

namespace {

struct Standardizer {
  std::vector<double> mean, inv_std;

  static Standardizer fit(const Tensor& x) {
    const std::size_t n = x.size(0), d = x.size(1);
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += x.values()[i * d + j];
    for (auto& m : s.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x.values()[i * d + j] - s.mean[j];
        s.inv_std[j] += c * c;
      }
    for (auto& v : s.inv_std) v = 1.0 / std::sqrt(v / static_cast<double>(n) + 1e-8);
    return s;
  }
  // Constant affine map, so gradients flow through it in full mode.
  Tensor operator()(const Tensor& x) const {
    const std::size_t d = mean.size();
    std::vector<double> shift(d), scale(inv_std);
    for (std::size_t j = 0; j < d; ++j) shift[j] = -mean[j] * inv_std[j];
    return x * Tensor({d}, std::move(scale)) + Tensor({d}, std::move(shift));
  }
};

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.size(0), c = logits.size(1);
  std::vector<double> onehot(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  return mul_scalar(sum_all(log_softmax(logits, 1) * Tensor({n, c}, std::move(onehot))), -1.0 / static_cast<double>(n));
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.size(0), c = logits.size(1);
  std::size_t right = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.values().subspan(i * c, c);
    right += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[i];
  }
  return static_cast<double>(n ? right : 0) / static_cast<double>(std::max<std::size_t>(n, 1));
}

std::vector<int> labels_of(const std::vector<AVInstance>& items) {
  std::vector<int> out;
  for (const auto& inst : items) out.push_back(inst.class_id);
  return out;
}

Tensor rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.size(1);
  std::vector<double> out;
  for (auto i : idx) out.insert(out.end(), x.values().begin() + static_cast<long>(i * d),
                                x.values().begin() + static_cast<long>((i + 1) * d));
  return Tensor({idx.size(), d}, std::move(out));
}

// Full-clip N×3×T0×H0×W0 batch, frames resized and the clip centred in time.
Tensor centre_clips(const std::vector<AVInstance>& items, std::span<const std::size_t> idx, const nn::EncoderConfig& enc) {
  std::vector<Tensor> parts;
  for (auto i : idx) parts.push_back(stack_clips(items[i].video, enc, clip_starts(items[i].video.size(1), enc.in_frames, 1)));
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

}  // namespace

ProbeResult finetune_probe(const Dataset& data, nn::Model& model, std::size_t num_classes, const ProbeConfig& cfg) {
  if (data.train.size() < cfg.batch_size || data.test.empty())
    throw DataError("finetune_probe: need at least one training batch and a test split");
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw ConfigError("probe.epochs and probe.batch_size must be positive");
  for (const auto* split : {&data.train, &data.test})
    for (const auto& inst : *split)
      if (inst.class_id < 0 || static_cast<std::size_t>(inst.class_id) >= num_classes)
        throw DataError("finetune_probe: label " + std::to_string(inst.class_id) + " outside " +
                        std::to_string(num_classes) + " classes");
  const auto& enc = model.config().visual;
  CropPlan plan = cfg.plan;
  plan.grid = {enc.out_frames, enc.out_height, enc.out_width};
  if (cfg.feature_crops) plan.validate();

  const auto train_labels = labels_of(data.train), test_labels = labels_of(data.test);
  const Tensor train_feat = embed_videos(data.train, model, cfg.num_clips);
  const Standardizer standardize = Standardizer::fit(train_feat);

  Rng rng(cfg.seed);
  nn::ParamSet head_params;
  const nn::Linear head(head_params, "probe", train_feat.size(1), num_classes, rng);
  std::vector<Tensor> trainable = param_tensors(head_params);
  if (cfg.mode == ProbeMode::Full)
    for (const auto& t : param_tensors(model.params())) trainable.push_back(t);

  const std::size_t steps_per_epoch = data.train.size() / cfg.batch_size;
  const ScheduleSpec sched = ScheduleSpec::finetune(steps_per_epoch);
  OptimizerState opt{cfg.momentum, cfg.weight_decay, {}, 0};
  const Tensor std_train = standardize(train_feat);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : iterate_batches(data.train.size(), cfg.batch_size, rng)) {
      std::vector<int> y;
      for (auto i : batch) y.push_back(train_labels[i]);
      Tensor loss;
      if (cfg.mode == ProbeMode::Linear && !cfg.feature_crops) {
        loss = cross_entropy(head(rows(std_train, batch)), y);
      } else {
        // Feature crops need the feature map; in linear mode it is computed
        // without recording so the backbone stays fixed.
        Tensor feat;
        {
          std::optional<NoGradGuard> frozen;
          if (cfg.mode == ProbeMode::Linear) frozen.emplace();
          feat = model.encode_video(centre_clips(data.train, batch, enc));
        }
        loss = cross_entropy(head(standardize(max_pooled_features(model, feat))), y);
        if (cfg.feature_crops) {
          for (std::size_t c = 0; c < plan.m + plan.n; ++c) {
            std::vector<CropTube> tubes(batch.size());
            std::vector<std::size_t> offsets(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
              tubes[i] = sample_feature_tube(plan, c, rng);
              offsets[i] = tubes[i].t_min;
            }
            loss = loss + cross_entropy(head(standardize(max_pooled_features(model, feature_crop(feat, tubes), offsets))), y);
          }
          loss = mul_scalar(loss, 1.0 / static_cast<double>(1 + plan.m + plan.n));
        }
      }
      if (!std::isfinite(loss.item())) throw NumericError("finetune_probe: non-finite loss");
      loss.backward();
      if (!sgd_step(trainable, opt, lr_schedule(sched, opt.step)))
        throw NumericError("finetune_probe: non-finite gradient");
      model.params().zero_grad();
    }
  }

  NoGradGuard guard;
  ProbeResult r;
  const Tensor final_train = cfg.mode == ProbeMode::Full ? embed_videos(data.train, model, cfg.num_clips) : train_feat;
  r.train_accuracy = accuracy(head(standardize(final_train)), train_labels);
  r.test_accuracy = accuracy(head(standardize(embed_videos(data.test, model, cfg.num_clips))), test_labels);
  return r;
}

Tensor av_heatmap(const Tensor& video, const Tensor& audio, const nn::Model& model) {
  const auto& enc = model.config().visual;
  if (video.rank() != 4) throw ShapeError("av_heatmap: expected C×T×H×W video, got " + to_string(video.shape()));
  if (audio.rank() != 3) throw ShapeError("av_heatmap: expected 1×F×Ta audio, got " + to_string(audio.shape()));
  NoGradGuard guard;
  const Tensor feat = model.encode_video(stack_clips(video, enc, clip_starts(video.size(1), enc.in_frames, 1)));
  Shape ashape{1};
  ashape.insert(ashape.end(), audio.shape().begin(), audio.shape().end());
  const Tensor a = model.audio_feature(reshape(audio, ashape));
  const std::size_t d = feat.size(1), cells = feat.numel() / d;
  if (a.numel() != d)
    throw ShapeError("av_heatmap: audio feature dim " + std::to_string(a.numel()) + " != visual dim " + std::to_string(d));
  std::vector<double> map(cells, 0.0);
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t j = 0; j < cells; ++j) map[j] += a.values()[c] * feat.values()[c * cells + j];
  return Tensor({feat.size(2), feat.size(3), feat.size(4)}, std::move(map));
}

double heatmap_hit_rate(const Tensor& map, const AVInstance& inst, const nn::Model& model) {
  const auto& enc = model.config().visual;
  if (map.rank() != 3) throw ShapeError("heatmap_hit_rate: expected T×H×W, got " + to_string(map.shape()));
  const std::size_t t1 = map.size(0), h1 = map.size(1), w1 = map.size(2);
  const std::size_t frames = inst.video.size(1), height = inst.video.size(2), width = inst.video.size(3);
  const std::size_t start = clip_starts(frames, enc.in_frames, 1).front(), per_cell = enc.in_frames / t1;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < t1; ++t) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < h1 * w1; ++j)
      if (map.values()[t * h1 * w1 + j] > map.values()[t * h1 * w1 + best]) best = j;
    const std::size_t f = std::min(frames - 1, start + t * per_cell);
    const long ty = static_cast<long>(inst.center_y[f] * h1 / height), tx = static_cast<long>(inst.center_x[f] * w1 / width);
    const long by = static_cast<long>(best / w1), bx = static_cast<long>(best % w1);
    if (std::abs(by - ty) <= 1 && std::abs(bx - tx) <= 1) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(t1);
}

void write_pgm(const std::string& path, const Tensor& map) {
  if (map.rank() != 3) throw ShapeError("write_pgm: expected T×H×W, got " + to_string(map.shape()));
  const auto v = map.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  const std::size_t h = map.size(0) * map.size(1), w = map.size(2);
  out << "P2\n" << w << ' ' << h << "\n255\n";
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double x = v[r * w + c];
      const int level = range > 0.0 ? static_cast<int>(std::lround(255.0 * (x - *lo) / range)) : 0;
      out << (c ? " " : "") << level;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

std::string to_string(CropStrategy s) { return s == CropStrategy::InputCrop ? "input-crop" : "feature-crop"; }

void BenchConfig::validate() const {
  model.validate();
  if (ks.empty()) throw ConfigError("bench.ks must list at least one crop count");
  for (auto k : ks)
    if (k < 2 || k % 2 != 0) throw ConfigError("bench.ks entries must be even and at least 2");
  if (repeats < 5) throw ConfigError("bench.repeats must be at least 5");
  if (batch_size < 2) throw ConfigError("bench.batch_size must be at least 2");
  if (threads < 1) throw ConfigError("threads must be positive");
}

namespace {

struct BenchStep {
  Tensor loss;
  std::size_t terms = 0;
};

// Views per side: one full-size large view, then k/2 - 1 medium boxes.
BenchStep bench_step(CropStrategy strategy, std::size_t k, const Tensor& clips, const nn::Model& model, Rng& rng) {
  const auto& enc = model.config().visual;
  const std::size_t per_side = k / 2;
  const std::size_t cell_h = enc.in_height / enc.out_height, cell_w = enc.in_width / enc.out_width;
  const std::size_t box = std::max<std::size_t>(1, enc.out_height * 6 / 7);  // medium box in feature cells
  std::vector<std::vector<Tensor>> sides(2);
  for (auto& views : sides) {
    if (strategy == CropStrategy::InputCrop) {
      views.push_back(model.embed_features(model.encode_video(clips)));
      for (std::size_t v = 1; v < per_side; ++v) {
        const auto y = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(enc.out_height - box)));
        const auto x = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(enc.out_width - box)));
        const CropTube tube{x * cell_w, (x + box) * cell_w, y * cell_h, (y + box) * cell_h, 0, enc.in_frames,
                            CropDomain::Input};
        views.push_back(model.embed_features(model.encode_video(input_crop_resize(clips, tube, enc.in_height, enc.in_width))));
      }
    } else {
      const Tensor feat = model.encode_video(clips);
      views.push_back(model.embed_features(feat));
      for (std::size_t v = 1; v < per_side; ++v) {
        const auto y = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(enc.out_height - box)));
        const auto x = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(enc.out_width - box)));
        const CropTube tube{x, x + box, y, y + box, 0, enc.out_frames, CropDomain::Feature};
        views.push_back(model.embed_features(feature_crop(feat, tube)));
      }
    }
  }
  BenchStep step;
  for (const auto& a : sides[0])
    for (const auto& b : sides[1]) {
      const Tensor pair = nce_loss(a, b, 0.5) + nce_loss(b, a, 0.5);
      step.loss = step.loss.defined() ? step.loss + pair : pair;
      step.terms += 2;
    }
  return step;
}

}  // namespace

std::vector<BenchRow> crop_cost_benchmark(const BenchConfig& cfg) {
  cfg.validate();
  const int saved_threads = omp_get_max_threads();
  omp_set_num_threads(cfg.threads);
  Rng rng(cfg.seed);
  nn::Model model(cfg.model, rng);
  const auto& enc = cfg.model.visual;
  Shape shape{cfg.batch_size};
  const auto in = enc.input_shape();
  shape.insert(shape.end(), in.begin(), in.end());
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = rng.uniform(0.0, 1.0);
  const Tensor clips(shape, std::move(values));

  std::vector<BenchRow> rows;
  for (auto strategy : {CropStrategy::InputCrop, CropStrategy::FeatureCrop})
    for (auto k : cfg.ks) {
      BenchRow row{strategy, k};
      std::vector<double> ms;
      for (std::size_t r = 0; r < cfg.warmup + cfg.repeats; ++r) {
        model.params().zero_grad();
        reset_peak_tensor_memory();
        const auto base = tensor_memory().live_bytes;
        const auto t0 = std::chrono::steady_clock::now();
        {
          BenchStep step = bench_step(strategy, k, clips, model, rng);
          step.loss.backward();
          row.terms = step.terms;
        }
        const auto t1 = std::chrono::steady_clock::now();
        if (r < cfg.warmup) continue;
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        row.peak_bytes = std::max(row.peak_bytes, tensor_memory().peak_bytes - base);
      }
      const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
      double var = 0.0;
      for (double x : ms) var += (x - mean) * (x - mean);
      row.mean_ms = mean;
      row.std_ms = std::sqrt(var / static_cast<double>(ms.size() - 1));
      rows.push_back(row);
    }
  model.params().zero_grad();
  omp_set_num_threads(saved_threads);

  using tick = std::chrono::steady_clock::period;
  const double tick_ms = 1e3 * static_cast<double>(tick::num) / static_cast<double>(tick::den);
  for (const auto& row : rows)
    if (row.mean_ms < cfg.min_step_ms || row.mean_ms < 1000.0 * tick_ms) {
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "%s k=%zu step takes %.3f ms, below the %.3f ms needed for stable timing; "
                    "raise bench.batch_size or use a larger encoder",
                    to_string(row.strategy).c_str(), row.k, row.mean_ms, std::max(cfg.min_step_ms, 1000.0 * tick_ms));
      throw ConfigError(buf);
    }
  return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "strategy,k,mean_ms,std_ms,peak_bytes\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%lld", to_string(r.strategy).c_str(), r.k, r.mean_ms, r.std_ms,
                  static_cast<long long>(r.peak_bytes));
    out << buf << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace stica
