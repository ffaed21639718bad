// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Arguments select criteria by number (default: all).
// Scratch output goes to $STICA_ACCEPT_DIR, else a temporary directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stica/config.hpp"
#include "stica/contrastive.hpp"
#include "stica/grad_check.hpp"
#include "stica/ops.hpp"

using namespace stica;
using namespace stica::nn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::filesystem::path scratch_root() {
  if (const char* env = std::getenv("STICA_ACCEPT_DIR"); env && *env) return env;
  return std::filesystem::temp_directory_path() / "stica_acceptance";
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = scratch_root() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Values in ±[margin, 1], away from the relu kink.
Tensor away_from_zero(Shape shape, Rng& rng, double margin) {
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(margin, 1.0);
  return Tensor(std::move(shape), std::move(v), true);
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

struct GradSuite {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  bool finite = true;
  std::string failing;

  // d/dinputs of sum(op(inputs) ⊙ W) for a fixed random W, or of op itself
  // when it is already a scalar.
  void check(const std::string& name, const std::function<Tensor()>& op, std::vector<Tensor> inputs, double eps = 1e-6) {
    const Tensor probe = op();
    Rng wr(99);
    const Tensor w = random_tensor(probe.shape(), wr, -1.0, 1.0, false);
    const bool scalar = probe.numel() == 1;
    const auto r = grad_check([&] { return scalar ? op() : sum_all(op() * w); }, inputs, eps);
    ++checks;
    finite = finite && r.nonfinite.empty();
    if (r.max_relative_error >= 1e-4) failing += " " + name;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_name = name;
    }
  }
};

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  GradSuite s;
  Rng rng(2024);

  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), row = random_tensor({4}, rng);
  auto pos = random_tensor({3, 4}, rng, 0.5, 2.0), wide = random_tensor({3, 4}, rng, -3.0, 3.0);
  auto kinked = away_from_zero({3, 4}, rng, 1e-3);
  s.check("add", [&] { return add(a, row); }, {a, row});
  s.check("sub", [&] { return sub(a, b); }, {a, b});
  s.check("mul", [&] { return mul(a, row); }, {a, row});
  s.check("div", [&] { return div(a, pos); }, {a, pos});
  s.check("neg", [&] { return neg(a); }, {a});
  s.check("add_scalar", [&] { return add_scalar(a, 0.3); }, {a});
  s.check("mul_scalar", [&] { return mul_scalar(a, -1.7); }, {a});
  s.check("exp", [&] { return exp(a); }, {a});
  s.check("log", [&] { return log(pos); }, {pos});
  s.check("pow", [&] { return pow(pos, 1.5); }, {pos});
  s.check("relu", [&] { return relu(kinked); }, {kinked});
  s.check("gelu", [&] { return gelu(wide); }, {wide});

  auto x3 = random_tensor({3, 4, 5}, rng);
  for (int axis : {0, 1, 2}) {
    s.check("sum", [&] { return sum(x3, axis); }, {x3});
    s.check("mean", [&] { return mean(x3, axis, true); }, {x3});
    s.check("max", [&] { return max(x3, axis); }, {x3});
  }
  s.check("sum_all", [&] { return sum_all(x3); }, {x3});
  s.check("mean_all", [&] { return mean_all(x3); }, {x3});

  auto y3 = random_tensor({3, 2, 5}, rng), col = random_tensor({4, 1}, rng);
  s.check("broadcast_to", [&] { return broadcast_to(col, {3, 4, 5}); }, {col});
  s.check("reshape", [&] { return reshape(x3, {12, 5}); }, {x3});
  s.check("permute", [&] { return permute(x3, {2, 0, 1}); }, {x3});
  s.check("transpose", [&] { return transpose(x3, 1, 2); }, {x3});
  s.check("slice", [&] { return slice(x3, 2, 1, 4); }, {x3});
  s.check("concat", [&] {
    const Tensor parts[] = {x3, y3};
    return concat(parts, 1);
  }, {x3, y3});

  auto m1 = random_tensor({3, 4}, rng), m2 = random_tensor({4, 5}, rng), mb = random_tensor({2, 3, 4}, rng),
       mr = random_tensor({2, 4, 2}, rng);
  s.check("matmul", [&] { return matmul(m1, m2); }, {m1, m2});
  s.check("matmul batched", [&] { return matmul(mb, mr); }, {mb, mr});

  auto logits = random_tensor({3, 5}, rng, -2.0, 2.0), scores = random_tensor({2, 3, 4}, rng, -2.0, 2.0);
  const std::vector<std::uint8_t> key_mask{1, 0, 1, 1, 0, 1, 0, 0};
  s.check("softmax", [&] { return softmax(logits, 1); }, {logits});
  s.check("log_softmax", [&] { return log_softmax(logits, 1); }, {logits});
  s.check("masked_softmax", [&] { return masked_softmax(scores, key_mask); }, {scores});

  auto ln_x = random_tensor({3, 6}, rng), ln_g = random_tensor({6}, rng, 0.5, 1.5), ln_b = random_tensor({6}, rng);
  s.check("layer_norm", [&] { return layer_norm(ln_x, ln_g, ln_b); }, {ln_x, ln_g, ln_b});
  auto bs_x = random_tensor({4, 3}, rng), bs_g = random_tensor({3}, rng), bs_b = random_tensor({3}, rng);
  s.check("batch_standardize", [&] { return batch_standardize(bs_x, bs_g, bs_b); }, {bs_x, bs_g, bs_b});

  auto cx = random_tensor({2, 2, 3, 5, 4}, rng), cw = random_tensor({3, 2, 3, 3}, rng), cb = random_tensor({3}, rng);
  auto tw = random_tensor({3, 2, 2}, rng), fg = random_tensor({2}, rng, 0.5, 1.5), fb = random_tensor({2}, rng);
  s.check("conv_spatial", [&] { return conv_spatial(cx, cw, cb, 2, 1); }, {cx, cw, cb});
  s.check("conv_temporal", [&] { return conv_temporal(cx, tw, cb, 1, 0); }, {cx, tw, cb});
  s.check("frame_norm", [&] { return frame_norm(cx, fg, fb); }, {cx, fg, fb});
  s.check("spatial_pool", [&] { return spatial_pool(cx); }, {cx});
  s.check("spatial_max_pool", [&] { return spatial_max_pool(cx); }, {cx});
  auto seq = random_tensor({2, 3, 4}, rng);
  s.check("temporal_avg_pool", [&] { return temporal_avg_pool(seq); }, {seq});

  auto q = random_tensor({2, 3, 4}, rng), k = random_tensor({2, 3, 4}, rng), v = random_tensor({2, 3, 4}, rng);
  const std::vector<std::uint8_t> attend{1, 0, 1, 1, 1, 1};
  s.check("attention", [&] { return attention(q, k, v, attend, 2).output; }, {q, k, v});
  {
    ParamSet ps;
    Rng pr(7);
    TransformerPool pool(ps, "p", {2, 2, 8, 16, Aggregation::Mean}, pr);
    auto h = random_tensor({2, 8, 3}, rng);
    std::vector<Tensor> inputs{h};
    // Fresh init leaves attention near uniform and q/k gradients near 1e-6,
    // where central-difference round-off dominates. Check at a generic point
    // with a wider step instead.
    for (const auto& [name, t] : ps.items()) {
      Tensor p = t;
      for (auto& e : p.mutable_values()) e = rng.uniform(-1.0, 1.0);
      inputs.push_back(p);
    }
    s.check("transformer_pool", [&] { return pool.forward(h, attend); }, inputs, 1e-4);
  }

  // Input-space augmentations act on raw data and record no gradient;
  // feature crops act on encoder output and must.
  auto fmap = random_tensor({2, 3, 4, 6, 6}, rng);
  const CropTube cell{1, 3, 2, 4, 0, 2, CropDomain::Feature};
  const CropTube cells[] = {cell, {3, 5, 0, 2, 2, 4, CropDomain::Feature}};
  s.check("feature_crop", [&] { return feature_crop(fmap, cell); }, {fmap});
  s.check("feature_crop per instance", [&] { return feature_crop(fmap, cells); }, {fmap});

  auto za = random_tensor({3, 4}, rng), zb = random_tensor({3, 4}, rng), zc = random_tensor({3, 4}, rng),
       zd = random_tensor({3, 4}, rng);
  LossWeights mixed;
  mixed.lambda_av = 0.5;
  mixed.lambda_aa = 0.25;
  s.check("normalize_rows", [&] { return normalize_rows(za); }, {za});
  s.check("nce_loss", [&] { return nce_loss(za, zb, 0.5); }, {za, zb});
  s.check("cross_modal_loss", [&] { return cross_modal_loss(za, zb, zc, 0.1); }, {za, zb, zc});
  s.check("multicrop_baseline_loss", [&] { return multicrop_baseline_loss(za, zb, zc, 0.5); }, {za, zb, zc});
  s.check("modality_mixed_loss", [&] { return modality_mixed_loss(za, zb, zc, zd, mixed); }, {za, zb, zc, zd});
  {
    ViewSet v1, v2;
    v1.source = 1;
    v2.source = 2;
    std::vector<Tensor> views;
    for (auto* set : {&v1, &v2}) {
      set->views.push_back({ViewSize::Large, random_tensor({3, 4}, rng)});
      set->views.push_back({ViewSize::Medium, random_tensor({3, 4}, rng)});
      for (int i = 0; i < 2; ++i) set->views.push_back({ViewSize::Small, random_tensor({3, 4}, rng)});
      for (std::size_t i = 1; i < set->views.size(); ++i) views.push_back(set->views[i].embedding);
    }
    s.check("within_modal_loss", [&] { return within_modal_loss(v1, v2, 0.5).loss; }, views);
  }

  // End to end: the total loss of a 2-instance micro batch w.r.t. every
  // model parameter.
  Rng mr_rng(9);
  Model model(ModelConfig::micro(), mr_rng);
  const auto l1 = random_tensor({2, 3, 4, 8, 8}, mr_rng, 0.0, 1.0, false);
  const auto l2 = random_tensor({2, 3, 4, 8, 8}, mr_rng, 0.0, 1.0, false);
  const auto au = random_tensor({2, 1, 8, 8}, mr_rng, 0.0, 1.0, false);
  CropPlan plan;
  plan.medium_size = 2;
  plan.small_size = 1;
  plan.time = {{1, 1}, {2, 1}};
  plan.grid = {2, 2, 2};
  s.check("total loss (micro model)", [&] {
    Rng crops(10);
    return compute_losses(l1, l2, au, model, LossWeights{}, plan, crops).total;
  }, param_tensors(model.params()));

  const double secs = seconds_since(t0);
  return {s.worst < 1e-4 && s.finite && secs < 120.0,
          fmt("%zu checks, worst relative error %.3g (%s), %.1f s%s", s.checks, s.worst, s.worst_name.c_str(), secs,
              s.failing.empty() ? "" : (", failing:" + s.failing).c_str())};
}

// ---------------------------------------------------------------------------
// 2. NCE closed forms

double row_cos(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.size(1);
  return cosine_sim(a.values().subspan(i * d, d), b.values().subspan(j * d, d));
}

double nce_oracle(const Tensor& za, const Tensor& zb, double tau) {
  const std::size_t n = za.size(0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(row_cos(za, i, zb, j) / tau);
    total += std::log(std::exp(row_cos(za, i, zb, i) / tau) / denom);
  }
  return -total / static_cast<double>(n);
}

Outcome criterion_nce() {
  Rng rng(5);
  const Tensor one = random_tensor({1, 6}, rng, -1.0, 1.0, false), other = random_tensor({1, 6}, rng, -1.0, 1.0, false);
  const double n1 = std::abs(nce_loss(one, other, 0.1).item());
  bool pass = n1 == 0.0;
  double worst_uniform = 0.0;
  for (std::size_t n : {2, 4, 8, 64}) {
    std::vector<double> eye(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
    const Tensor e({n, n}, eye);
    // Every similarity between e and a constant batch is equal.
    const Tensor flat({n, n}, 1.0);
    worst_uniform = std::max(worst_uniform, std::abs(nce_loss(e, flat, 0.7).item() - std::log(static_cast<double>(n))));
  }
  pass = pass && worst_uniform < 1e-9;
  const Tensor eye2({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const double worked = nce_loss(eye2, eye2, 0.5).item(), oracle = nce_oracle(eye2, eye2, 0.5);
  pass = pass && std::abs(worked - 0.126928) < 1e-6 && std::abs(oracle - 0.126928) < 1e-6;
  return {pass, fmt("N=1 loss %.17g, uniform |loss - ln N| max %.3g, worked example %.9f (oracle %.9f)", n1, worst_uniform,
                    worked, oracle)};
}

// ---------------------------------------------------------------------------
// 3. Pair-count law

Outcome criterion_pair_count() {
  bool pass = true;
  std::string bad;
  Rng rng(6);
  for (std::size_t m = 0; m <= 4; ++m)
    for (std::size_t n = 0; n <= 4; ++n) {
      // Brute force over every (set, view) × (set, view) combination.
      std::size_t brute = 0;
      for (int sa = 1; sa <= 2; ++sa)
        for (int sb = 1; sb <= 2; ++sb)
          for (std::size_t i = 0; i < m + n; ++i)
            for (std::size_t j = 0; j < m + n; ++j)
              if (sa != sb && !(i >= m && j >= m)) ++brute;
      ViewSet v1, v2;
      v1.source = 1;
      v2.source = 2;
      for (auto* set : {&v1, &v2}) {
        set->views.push_back({ViewSize::Large, random_tensor({3, 4}, rng, -1.0, 1.0, false)});
        for (std::size_t i = 0; i < m + n; ++i)
          set->views.push_back({i < m ? ViewSize::Medium : ViewSize::Small, random_tensor({3, 4}, rng, -1.0, 1.0, false)});
      }
      const std::size_t law = 2 * ((m + n) * (m + n) - n * n);
      const std::size_t terms = within_modal_loss(v1, v2, 0.5).terms, listed = enumerate_crop_pairs(m, n).size();
      if (brute != law || terms != law || listed != law) {
        pass = false;
        bad += fmt(" (m=%zu n=%zu: brute %zu loss %zu list %zu law %zu)", m, n, brute, terms, listed, law);
      }
    }
  return {pass, pass ? "25 (m, n) combinations agree with 2((m+n)^2 - n^2)" : "mismatch" + bad};
}

// ---------------------------------------------------------------------------
// 4. Feature-crop equivalence

Outcome criterion_feature_crop() {
  Rng rng(58);
  const std::size_t st = 2, ss = 8;
  const Tensor v = random_tensor({3, 8, 56, 56}, rng, 0.0, 1.0, false);
  const Tensor feat = stride_pool(v, st, ss);
  const CropPlan plan;
  std::size_t exact = 0;
  for (int i = 0; i < 100; ++i) {
    const CropTube fb = sample_feature_tube(plan, static_cast<std::size_t>(i) % (plan.m + plan.n), rng);
    const CropTube ib{fb.x_min * ss, fb.x_max * ss, fb.y_min * ss, fb.y_max * ss, fb.t_min * st, fb.t_max * st,
                      CropDomain::Input};
    const Tensor lhs = feature_crop(feat, fb);
    const Tensor rhs = stride_pool(input_crop_resize(v, ib, ib.height(), ib.width()), st, ss);
    if (lhs.shape() == rhs.shape() && std::equal(lhs.values().begin(), lhs.values().end(), rhs.values().begin())) ++exact;
  }
  return {exact == 100, fmt("%zu/100 tubes bit-identical", exact)};
}

// ---------------------------------------------------------------------------
// 5. Mask discipline

Outcome criterion_masks() {
  Rng rng(40);
  ParamSet ps;
  TransformerPool pool(ps, "p", {2, 4, 64, 128, Aggregation::Mean}, rng);
  const Tensor h = random_tensor({64, 4}, rng, -1.0, 1.0, false);
  const TimeMask mask = TimeMask::window(4, 1, 3);
  const Tensor base = pool(h, mask);
  double max_change = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> pert(h.values().begin(), h.values().end());
    for (std::size_t d = 0; d < 64; ++d) {
      pert[d * 4 + 0] += rng.uniform(-100.0, 100.0);
      pert[d * 4 + 3] = rng.uniform(-1e6, 1e6);
    }
    const Tensor other = pool(Tensor({64, 4}, pert), mask);
    for (std::size_t i = 0; i < 64; ++i) max_change = std::max(max_change, std::abs(base.values()[i] - other.values()[i]));
  }
  // Attention weights on masked keys.
  const Tensor q = random_tensor({2, 5, 8}, rng, -3.0, 3.0, false), k = random_tensor({2, 5, 8}, rng, -3.0, 3.0, false),
               v = random_tensor({2, 5, 8}, rng, -3.0, 3.0, false);
  const std::vector<std::uint8_t> keys{1, 0, 1, 0, 1, 0, 0, 1, 1, 0};
  const Tensor w = attention(q, k, v, keys, 2).weights;  // N×heads×T×T
  double masked_weight = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t hd = 0; hd < 2; ++hd)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
          if (!keys[n * 5 + j]) masked_weight = std::max(masked_weight, std::abs(w.at({n, hd, i, j})));
  return {max_change == 0.0 && masked_weight == 0.0,
          fmt("max output change %.17g over 20 perturbations, max masked attention weight %.17g", max_change, masked_weight)};
}

// ---------------------------------------------------------------------------
// Shared pretraining runs for criteria 6 to 8.

struct RunSummary {
  double loss_ratio = 0.0, recall1 = 0.0, probe_test = 0.0, seconds = 0.0;
};

std::vector<int> labels_of(const std::vector<AVInstance>& items) {
  std::vector<int> out;
  for (const auto& i : items) out.push_back(i.class_id);
  return out;
}

enum class Variant { Default, AveragePooling, CrossModalOnly };

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Default: return "transformer+crops";
    case Variant::AveragePooling: return "average-pooling";
    case Variant::CrossModalOnly: return "cross-modal-only";
  }
  return "?";
}

RunConfig variant_config(Variant v, std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  if (v == Variant::AveragePooling) cfg.pooling = TemporalPooling::Average;
  if (v == Variant::CrossModalOnly) {
    cfg.plan.m = 0;
    cfg.plan.n = 0;
    cfg.weights.lambda_vv = 0.0;
  }
  cfg.validate();
  return cfg;
}

const RunSummary& pretrained(Variant v, std::uint64_t seed) {
  static std::map<std::pair<int, std::uint64_t>, RunSummary> memo;
  const auto key = std::make_pair(static_cast<int>(v), seed);
  if (auto it = memo.find(key); it != memo.end()) return it->second;

  const RunConfig cfg = variant_config(v, seed);
  const Dataset data = build_dataset(cfg.data);
  Rng init(cfg.seed);
  Model model(cfg.model_config(), init);
  const auto t0 = Clock::now();
  const auto res = run_pretraining(cfg.train_config(), data, model,
                                   fresh_dir(fmt("%s_seed%llu", variant_name(v), static_cast<unsigned long long>(seed))).string());
  RunSummary out;
  out.seconds = seconds_since(t0);
  const std::size_t spe = res.steps_per_epoch;
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < spe; ++i) {
    first += res.history[i].loss_total;
    last += res.history[res.history.size() - 1 - i].loss_total;
  }
  out.loss_ratio = last / first;
  const RetrievalIndex index{embed_videos(data.train, model, cfg.num_clips), labels_of(data.train)};
  out.recall1 = retrieval_recall(embed_videos(data.test, model, cfg.num_clips), labels_of(data.test), index, {1})[0];
  out.probe_test = finetune_probe(data, model, cfg.data.num_classes, cfg.probe_config()).test_accuracy;
  std::printf("  [%s seed %llu] loss ratio %.4f, recall@1 %.4f, linear probe %.4f, %.0f s\n", variant_name(v),
              static_cast<unsigned long long>(seed), out.loss_ratio, out.recall1, out.probe_test, out.seconds);
  std::fflush(stdout);
  return memo.emplace(key, out).first->second;
}

double median3(double a, double b, double c) { return std::max(std::min(a, b), std::min(std::max(a, b), c)); }

// ---------------------------------------------------------------------------
// 6. Learning signal

Outcome criterion_learning() {
  const RunSummary& r = pretrained(Variant::Default, 0);
  return {r.loss_ratio < 0.5 && r.recall1 >= 0.60 && r.seconds < 600.0,
          fmt("final/first epoch loss %.4f (< 0.5), recall@1 %.4f (>= 0.60, chance 0.25), %.0f s (< 600)", r.loss_ratio,
              r.recall1, r.seconds)};
}

// 7. Transformer pooling beats average pooling on the linear probe.

Outcome criterion_pooling() {
  double tf[3], gap[3];
  for (std::uint64_t s = 0; s < 3; ++s) {
    tf[s] = pretrained(Variant::Default, s).probe_test;
    gap[s] = pretrained(Variant::AveragePooling, s).probe_test;
  }
  const double mt = median3(tf[0], tf[1], tf[2]), mg = median3(gap[0], gap[1], gap[2]);
  return {mt - mg >= 0.10, fmt("median linear probe transformer %.4f vs average %.4f (gap %+.1f points, need >= +10)", mt,
                               mg, 100.0 * (mt - mg))};
}

// 8. Feature crops improve retrieval over the cross-modal-only objective.

Outcome criterion_crops() {
  double with[3], without[3];
  for (std::uint64_t s = 0; s < 3; ++s) {
    with[s] = pretrained(Variant::Default, s).recall1;
    without[s] = pretrained(Variant::CrossModalOnly, s).recall1;
  }
  const double mw = median3(with[0], with[1], with[2]), mo = median3(without[0], without[1], without[2]);
  return {mw > mo, fmt("median recall@1 with crops %.4f vs cross-modal only %.4f", mw, mo)};
}

// ---------------------------------------------------------------------------
// 9. Crop cost

Outcome criterion_efficiency() {
  RunConfig cfg;
  cfg.command = Command::Bench;
  cfg.validate();
  const auto rows = crop_cost_benchmark(cfg.bench_config());
  write_bench_csv((fresh_dir("bench") / "bench.csv").string(), rows);
  std::map<std::pair<CropStrategy, std::size_t>, double> ms;
  for (const auto& r : rows) ms[{r.strategy, r.k}] = r.mean_ms;
  const double f2 = ms[{CropStrategy::FeatureCrop, 2}], f8 = ms[{CropStrategy::FeatureCrop, 8}];
  const double i2 = ms[{CropStrategy::InputCrop, 2}], i8 = ms[{CropStrategy::InputCrop, 8}];
  const double fr = f8 / f2, ir = i8 / i2;
  return {fr <= 1.25 && ir >= 2.5 && std::min(f2, i2) >= 50.0,
          fmt("feature-crop k8/k2 %.3f (<= 1.25), input-crop k8/k2 %.3f (>= 2.5), k=2 steps %.1f / %.1f ms (>= 50)", fr, ir,
              f2, i2)};
}

// ---------------------------------------------------------------------------
// 10. Determinism and resume

Outcome criterion_determinism() {
  RunConfig cfg;
  cfg.epochs = 3;
  cfg.checkpoint_every = 1;
  cfg.validate();
  const Dataset data = build_dataset(cfg.data);
  auto run = [&](const std::string& name, const std::string& resume) {
    const auto dir = fresh_dir(name);
    Rng init(cfg.seed);
    Model model(cfg.model_config(), init);
    run_pretraining(cfg.train_config(), data, model, dir.string(), resume);
    return dir;
  };
  const auto full = run("determinism_a", ""), again = run("determinism_b", "");
  const std::string a = slurp(full / "metrics.csv"), b = slurp(again / "metrics.csv");
  const auto resumed = run("determinism_resumed", (full / "checkpoint_epoch1.bin").string());
  const std::string r = slurp(resumed / "metrics.csv");

  // The resumed file holds the header and epochs 2..3.
  std::istringstream fa(a), fr(r);
  std::vector<std::string> la, lr;
  for (std::string l; std::getline(fa, l);) la.push_back(l);
  for (std::string l; std::getline(fr, l);) lr.push_back(l);
  const std::size_t per_epoch = (la.size() - 1) / 3;
  bool tail_equal = lr.size() == 1 + 2 * per_epoch && lr.front() == la.front();
  for (std::size_t i = 1; tail_equal && i < lr.size(); ++i) tail_equal = lr[i] == la[per_epoch + i];
  const bool ckpt_equal = slurp(full / "checkpoint_epoch3.bin") == slurp(resumed / "checkpoint_epoch3.bin");
  return {a == b && !a.empty() && tail_equal && ckpt_equal,
          fmt("repeat run metrics %s (%zu rows), resumed epochs 2-3 %s, final checkpoints %s", a == b ? "identical" : "DIFFER",
              la.size() - 1, tail_equal ? "identical" : "DIFFER", ckpt_equal ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"gradient integrity", criterion_gradients},
      {"NCE closed forms", criterion_nce},
      {"pair-count law", criterion_pair_count},
      {"feature-crop equivalence", criterion_feature_crop},
      {"mask discipline", criterion_masks},
      {"learning signal", criterion_learning},
      {"pooling direction of effect", criterion_pooling},
      {"feature-crop direction of effect", criterion_crops},
      {"crop cost", criterion_efficiency},
      {"determinism and resume", criterion_determinism},
  };
  std::vector<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const long n = std::strtol(argv[i], nullptr, 10);
    if (n < 1 || n > static_cast<long>(criteria.size())) {
      std::fprintf(stderr, "criterion numbers run from 1 to %zu\n", criteria.size());
      return 2;
    }
    selected.push_back(static_cast<std::size_t>(n));
  }
  if (selected.empty())
    for (std::size_t i = 1; i <= criteria.size(); ++i) selected.push_back(i);

  bool all = true;
  for (std::size_t n : selected) {
    const auto& [name, fn] = criteria[n - 1];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %2zu %-34s %s  %s\n", n, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
