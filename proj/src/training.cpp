#include "stica/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stica/kernels.hpp"
#include "stica/ops.hpp"
#include "stica/tensor_io.hpp"

namespace stica {

std::vector<Tensor> param_tensors(const nn::ParamSet& params) {
  std::vector<Tensor> out;
  out.reserve(params.count());
  for (const auto& [name, t] : params.items()) out.push_back(t);
  return out;
}

bool sgd_step(std::span<Tensor> params, OptimizerState& state, double lr) {
  if (state.buffers.size() != params.size()) state.buffers.assign(params.size(), {});
  bool finite = true;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) finite &= std::isfinite(g);
  if (!finite) {
    for (auto& p : params) p.zero_grad();
    return false;
  }
  const double mu = state.momentum, wd = state.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& buf = state.buffers[i];
    if (buf.size() != p.numel()) buf.assign(p.numel(), 0.0);
    auto values = p.mutable_values();
    const auto grad = p.has_grad() ? p.grad() : std::span<const double>{};
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      buf[j] = mu * buf[j] + g + wd * values[j];
      values[j] -= lr * buf[j];
    }
    p.zero_grad();
  }
  ++state.step;
  return true;
}

void ScheduleSpec::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("schedule: base learning rate must be positive");
  if (steps_per_epoch == 0) throw ConfigError("schedule: steps_per_epoch must be positive");
  if (!(factor > 0.0 && factor <= 1.0)) throw ConfigError("schedule: decay factor must lie in (0, 1]");
  if (start_lr && *start_lr < 0.0) throw ConfigError("schedule: start learning rate must be non-negative");
}

ScheduleSpec ScheduleSpec::finetune(std::size_t steps_per_epoch) {
  ScheduleSpec s;
  s.base_lr = 0.02;
  s.start_lr = 0.0025;
  s.warmup_epochs = 2;
  s.steps_per_epoch = steps_per_epoch;
  s.policy = PostWarmup::StepDecay;
  s.milestones = {6, 10};
  s.factor = 0.05;
  return s;
}

double lr_schedule(const ScheduleSpec& spec, std::uint64_t step) {
  const std::uint64_t warm = spec.warmup_epochs * spec.steps_per_epoch;
  if (step < warm) {
    const double w = static_cast<double>(warm);
    if (spec.start_lr) return *spec.start_lr + (spec.base_lr - *spec.start_lr) * static_cast<double>(step) / w;
    return spec.base_lr * static_cast<double>(step + 1) / w;
  }
  if (spec.policy == PostWarmup::Constant) return spec.base_lr;
  const std::uint64_t epoch = step / spec.steps_per_epoch;
  double lr = spec.base_lr;
  for (auto m : spec.milestones)
    if (epoch >= m) lr *= spec.factor;
  return lr;
}

Tensor augment_videos(const Tensor& videos, const nn::EncoderConfig& enc, const AugmentConfig& aug, Rng& rng) {
  if (videos.rank() != 5) throw ShapeError("augment_videos: expected N×C×T×H×W, got " + to_string(videos.shape()));
  const auto& s = videos.shape();
  const std::size_t n = s[0], per = s[1] * s[2] * s[3] * s[4];
  if (s[1] != enc.in_channels || s[2] < enc.in_frames)
    throw DataError("clips " + to_string(videos.shape()) + " cannot feed encoder input " + to_string(enc.input_shape()));
  std::vector<double> out;
  out.reserve(n * numel(enc.input_shape()));
  for (std::size_t i = 0; i < n; ++i) {
    Tensor clip({s[1], s[2], s[3], s[4]},
                std::vector<double>(videos.values().begin() + static_cast<long>(i * per),
                                    videos.values().begin() + static_cast<long>((i + 1) * per)));
    const CropTube tube = sample_crop_tube({s[2], s[3], s[4]}, aug.crop, enc.in_frames, rng);
    const Tensor v = photometric_augment(input_crop_resize(clip, tube, enc.in_height, enc.in_width), aug.photometric, rng);
    out.insert(out.end(), v.values().begin(), v.values().end());
  }
  Shape shape{n};
  const auto in = enc.input_shape();
  shape.insert(shape.end(), in.begin(), in.end());
  return Tensor(std::move(shape), std::move(out));
}

Tensor augment_audio(const Tensor& audio, const AugmentConfig& aug, Rng& rng) {
  if (aug.audio_gain_jitter <= 0.0) return audio;
  const std::size_t n = audio.size(0), per = audio.numel() / n;
  std::vector<double> out(audio.values().begin(), audio.values().end());
  for (std::size_t i = 0; i < n; ++i) {
    const double gain = rng.uniform(1.0 - aug.audio_gain_jitter, 1.0 + aug.audio_gain_jitter);
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] *= gain;
  }
  return Tensor(audio.shape(), std::move(out));
}

LossParts compute_losses(const Tensor& large1, const Tensor& large2, const Tensor& audio, const nn::Model& model,
                         const LossWeights& weights, const CropPlan& plan, Rng& rng) {
  const Tensor feat1 = model.encode_video(large1), feat2 = model.encode_video(large2);
  LossParts parts;
  Tensor zl1, zl2;
  if (plan.m + plan.n > 0) {
    auto [v1, v2] = sample_view_sets(feat1, feat2, plan, model, rng);
    auto within = within_modal_loss(v1, v2, weights.tau_within, weights.normalize_within);
    parts.vv = within.loss;
    parts.vv_terms = within.terms;
    zl1 = v1.large().embedding;
    zl2 = v2.large().embedding;
  } else {
    parts.vv = Tensor::scalar(0.0);
    zl1 = model.embed_features(feat1);
    zl2 = model.embed_features(feat2);
  }
  parts.va = cross_modal_loss(zl1, zl2, model.embed_audio(audio), weights.tau_cross);
  parts.total = total_loss(parts.vv, parts.va, weights);
  return parts;
}

StepMetrics train_step(const Tensor& videos, const Tensor& audio, nn::Model& model, OptimizerState& opt,
                       const LossWeights& weights, const CropPlan& plan, const AugmentConfig& aug, double lr, Rng& rng) {
  StepMetrics m;
  m.lr = lr;
  model.params().zero_grad();
  const Tensor large1 = augment_videos(videos, model.config().visual, aug, rng);
  const Tensor large2 = augment_videos(videos, model.config().visual, aug, rng);
  const Tensor a = augment_audio(audio, aug, rng);
  if (weights.lambda_vv == 0.0 && weights.lambda_va == 0.0) return m;

  LossParts parts;
  try {
    parts = compute_losses(large1, large2, a, model, weights, plan, rng);
  } catch (const NumericError&) {
    m.nonfinite = true;
    m.loss_total = m.loss_vv = m.loss_va = std::nan("");
    return m;
  }
  m.loss_total = parts.total.item();
  m.loss_vv = parts.vv.item();
  m.loss_va = parts.va.item();
  m.vv_terms = parts.vv_terms;
  if (!std::isfinite(m.loss_total)) {
    m.nonfinite = true;
    return m;
  }
  parts.total.backward();
  auto params = param_tensors(model.params());
  m.applied = sgd_step(params, opt, lr);
  m.nonfinite = !m.applied;
  return m;
}

void TrainConfig::validate() const {
  data.validate();
  model.validate();
  weights.validate();
  CropPlan p = plan;
  p.grid = {model.visual.out_frames, model.visual.out_height, model.visual.out_width};
  p.validate();
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2 for contrastive negatives");
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (data.frames < model.visual.in_frames)
    throw ConfigError("data.frames " + std::to_string(data.frames) + " shorter than encoder.frames " +
                      std::to_string(model.visual.in_frames));
  if (data.freq_bins != model.audio.freq_bins || data.audio_frames != model.audio.frames)
    throw ConfigError("data.freq_bins/data.audio_frames must match the audio encoder input");
}

std::string metrics_header() { return "step,epoch,lr,loss_total,loss_vv,loss_va"; }

std::string metrics_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%llu,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(m.step),
                static_cast<unsigned long long>(m.epoch), m.lr, m.loss_total, m.loss_vv, m.loss_va);
  return buf;
}

namespace {

constexpr std::uint64_t kTrainerStream = 0x5eedf00dcafe1234ULL;

}  // namespace

PretrainResult run_pretraining(const TrainConfig& cfg, const Dataset& data, nn::Model& model, const std::string& out_dir,
                               const std::string& resume_from) {
  cfg.validate();
  const auto& train = data.train;
  if (train.size() < cfg.batch_size)
    throw DataError("training set of " + std::to_string(train.size()) + " instances is smaller than one batch");
  CropPlan plan = cfg.plan;
  plan.grid = {cfg.model.visual.out_frames, cfg.model.visual.out_height, cfg.model.visual.out_width};

  PretrainResult result;
  result.steps_per_epoch = train.size() / cfg.batch_size;
  ScheduleSpec sched;
  sched.base_lr = cfg.base_lr;
  sched.warmup_epochs = cfg.warmup_epochs;
  sched.steps_per_epoch = result.steps_per_epoch;
  sched.validate();

  TrainerState st{0, 0, Rng(cfg.seed ^ kTrainerStream), OptimizerState{cfg.momentum, cfg.weight_decay, {}, 0}};
  if (!resume_from.empty()) load_checkpoint(resume_from, model, st, cfg.digest_text);

  std::filesystem::create_directories(out_dir);
  const auto metrics_path = (std::filesystem::path(out_dir) / "metrics.csv").string();
  std::ofstream csv(metrics_path, std::ios::trunc);
  if (!csv) throw IoError("cannot write " + metrics_path);
  csv << metrics_header() << '\n';

  int bad_in_a_row = 0;
  for (std::uint64_t epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    for (const auto& batch : iterate_batches(train.size(), cfg.batch_size, st.rng)) {
      const Tensor videos = stack_videos(train, batch), audio = stack_audio(train, batch);
      const double lr = lr_schedule(sched, st.step);
      StepMetrics m = train_step(videos, audio, model, st.optimizer, cfg.weights, plan, cfg.augment, lr, st.rng);
      m.step = ++st.step;
      m.epoch = epoch;
      csv << metrics_row(m) << '\n';
      result.history.push_back(m);
      bad_in_a_row = m.nonfinite ? bad_in_a_row + 1 : 0;
      if (bad_in_a_row >= 2) {
        csv.flush();
        throw NumericError("training aborted: non-finite loss at steps " + std::to_string(m.step - 1) + " and " +
                           std::to_string(m.step));
      }
    }
    csv.flush();
    st.epoch = epoch;
    const bool periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
    if (periodic || epoch == cfg.epochs) {
      const auto path = (std::filesystem::path(out_dir) / ("checkpoint_epoch" + std::to_string(epoch) + ".bin")).string();
      save_checkpoint(path, model, st, cfg.digest_text);
      result.final_checkpoint = path;
    }
  }
  if (!csv) throw IoError("write failed for " + metrics_path);
  return result;
}

void save_checkpoint(const std::string& path, nn::Model& model, TrainerState& state, const std::string& digest_text) {
  auto& items = model.params().items();
  auto& buffers = state.optimizer.buffers;
  if (buffers.size() != items.size()) buffers.assign(items.size(), {});
  TensorFile file;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor p = items[i].second;
    round_to_float32(p.mutable_values());
    if (buffers[i].size() != p.numel()) buffers[i].assign(p.numel(), 0.0);
    round_to_float32(buffers[i]);
    file.tensors.emplace_back("param/" + items[i].first, p);
    file.tensors.emplace_back("momentum/" + items[i].first, Tensor(p.shape(), buffers[i]));
  }
  file.step = state.step;
  file.epoch = state.epoch;
  file.rng_state = state.rng.serialize();
  file.digest = sha256(digest_text);
  write_tensor_file(path, file);
}

namespace {

void restore_params(const TensorFile& file, nn::Model& model, const std::string& path) {
  for (const auto& [name, t] : model.params().items()) {
    const Tensor& stored = file.find("param/" + name);
    if (stored.shape() != t.shape())
      throw IoError(path + ": parameter " + name + " has shape " + to_string(stored.shape()) + ", model expects " +
                    to_string(t.shape()));
    Tensor handle = t;
    auto dst = handle.mutable_values();
    std::copy(stored.values().begin(), stored.values().end(), dst.begin());
  }
}

}  // namespace

void load_checkpoint(const std::string& path, nn::Model& model, TrainerState& state, const std::string& digest_text) {
  const TensorFile file = read_tensor_file(path);
  if (file.digest != sha256(digest_text))
    throw IoError(path + ": config digest " + hex(file.digest) + " does not match the current configuration");
  restore_params(file, model, path);
  const auto& items = model.params().items();
  state.optimizer.buffers.assign(items.size(), {});
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Tensor& buf = file.find("momentum/" + items[i].first);
    state.optimizer.buffers[i].assign(buf.values().begin(), buf.values().end());
  }
  state.step = file.step;
  state.epoch = file.epoch;
  state.optimizer.step = file.step;
  state.rng.deserialize(file.rng_state);
}

void load_parameters(const std::string& path, nn::Model& model) { restore_params(read_tensor_file(path), model, path); }

}  // namespace stica
