#include "stica/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "stica/tensor_io.hpp"

namespace stica {

namespace {

struct Pattern {
  std::array<double, 3> color;
  bool square;
  std::size_t band;  // audio band centre bin as a fraction of F, in eighths
};

// Pattern 2p and 2p+1 form pair p.
constexpr std::array<Pattern, 8> kPatterns{{
    {{0.9, 0.2, 0.2}, false, 1},
    {{0.2, 0.9, 0.2}, true, 3},
    {{0.2, 0.3, 0.9}, false, 5},
    {{0.9, 0.9, 0.2}, true, 7},
    {{0.9, 0.2, 0.9}, false, 2},
    {{0.2, 0.9, 0.9}, true, 4},
    {{0.6, 0.6, 0.9}, false, 6},
    {{0.9, 0.6, 0.3}, true, 0},
}};

constexpr double kBackground = 0.1;
constexpr double kAudioFloor = 0.05;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Shortest signed offset from c to p on a ring of size n.
long ring_offset(std::size_t p, std::size_t c, std::size_t n) {
  long d = static_cast<long>(p) - static_cast<long>(c);
  const long half = static_cast<long>(n) / 2;
  if (d > half) d -= static_cast<long>(n);
  if (d < -half) d += static_cast<long>(n);
  return d;
}

}  // namespace

void SyntheticDatasetSpec::validate() const {
  if (num_classes == 0 || num_classes % 2 != 0 || num_classes > kPatterns.size())
    throw ConfigError("data.classes must be an even number between 2 and " + std::to_string(kPatterns.size()));
  if (instances_per_class == 0) throw ConfigError("data.per_class must be positive");
  if (frames < 2 || frames % 2 != 0) throw ConfigError("data.frames must be even and at least 2");
  if (height == 0 || width == 0) throw ConfigError("data.height and data.width must be positive");
  if (freq_bins < 8 || audio_frames < 2 || audio_frames % 2 != 0)
    throw ConfigError("data.freq_bins must be >= 8 and data.audio_frames even");
  if (2 * blob_radius + 1 > std::min(height, width)) throw ConfigError("data.blob_radius too large for the frame");
  if (noise < 0.0) throw ConfigError("data.noise must be non-negative");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1)");
}

AVInstance generate_instance(const SyntheticDatasetSpec& spec, int class_id, Rng& rng) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= spec.num_classes)
    throw DataError("class id " + std::to_string(class_id) + " outside [0, " + std::to_string(spec.num_classes) + ")");
  const std::size_t pair = static_cast<std::size_t>(class_id) / 2;
  const bool reversed = class_id % 2 == 1;
  const Pattern& first = kPatterns[2 * pair + (reversed ? 1 : 0)];
  const Pattern& second = kPatterns[2 * pair + (reversed ? 0 : 1)];

  AVInstance inst;
  inst.class_id = class_id;
  inst.direction = static_cast<int>(rng.uniform_int(0, 3));
  const std::size_t x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.width) - 1));
  const std::size_t y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.height) - 1));
  const long band_shift = static_cast<long>(rng.uniform_int(-1, 1));
  const double tremolo_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  const std::size_t T = spec.frames, H = spec.height, W = spec.width;
  const long step = static_cast<long>(spec.speed);
  const long vx = inst.direction == 0 ? step : inst.direction == 2 ? -step : 0;
  const long vy = inst.direction == 1 ? step : inst.direction == 3 ? -step : 0;
  auto wrap = [](long v, std::size_t n) { return static_cast<std::size_t>(((v % static_cast<long>(n)) + static_cast<long>(n)) % static_cast<long>(n)); };

  std::vector<double> video(3 * T * H * W, kBackground);
  const long r = static_cast<long>(spec.blob_radius);
  for (std::size_t t = 0; t < T; ++t) {
    const Pattern& pat = t < T / 2 ? first : second;
    const std::size_t cx = wrap(static_cast<long>(x0) + vx * static_cast<long>(t), W);
    const std::size_t cy = wrap(static_cast<long>(y0) + vy * static_cast<long>(t), H);
    inst.center_x.push_back(cx);
    inst.center_y.push_back(cy);
    for (std::size_t y = 0; y < H; ++y) {
      const long dy = ring_offset(y, cy, H);
      if (std::abs(dy) > r) continue;
      for (std::size_t x = 0; x < W; ++x) {
        const long dx = ring_offset(x, cx, W);
        const bool inside = pat.square ? std::max(std::abs(dx), std::abs(dy)) <= r - 1 : dx * dx + dy * dy <= r * r;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) video[((c * T + t) * H + y) * W + x] = pat.color[c];
      }
    }
  }

  const std::size_t F = spec.freq_bins, Ta = spec.audio_frames;
  const double sigma = static_cast<double>(F) / 20.0;
  const double rate = inst.direction % 2 == 0 ? 2.0 : 3.0;  // horizontal vs vertical motion
  std::vector<double> audio(F * Ta);
  for (std::size_t tau = 0; tau < Ta; ++tau) {
    const Pattern& pat = tau < Ta / 2 ? first : second;
    const double centre = static_cast<double>(pat.band * F) / 8.0 + 0.5 * static_cast<double>(F) / 8.0 + static_cast<double>(band_shift);
    const double trem = 0.75 + 0.25 * std::cos(2.0 * std::numbers::pi * rate * static_cast<double>(tau) / static_cast<double>(Ta) + tremolo_phase);
    for (std::size_t f = 0; f < F; ++f) {
      const double d = static_cast<double>(f) - centre;
      audio[f * Ta + tau] = kAudioFloor + 0.9 * trem * std::exp(-0.5 * d * d / (sigma * sigma));
    }
  }

  if (spec.noise > 0.0) {
    for (double& v : video) v = std::clamp(v + spec.noise * rng.normal(), 0.0, 1.0);
    for (double& v : audio) v = std::clamp(v + spec.noise * rng.normal(), 0.0, 1.0);
  }
  inst.video = Tensor({3, T, H, W}, std::move(video));
  inst.audio = Tensor({1, F, Ta}, std::move(audio));
  return inst;
}

Rng instance_rng(const SyntheticDatasetSpec& spec, std::uint64_t instance_id) {
  return Rng(mix(spec.seed * 0x100000001b3ULL ^ mix(instance_id)));
}

Dataset build_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  const std::size_t per = spec.instances_per_class, total = spec.num_classes * per;
  std::vector<AVInstance> all(total);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t id = 0; id < total; ++id) {
    Rng rng = instance_rng(spec, id);
    all[id] = generate_instance(spec, static_cast<int>(id / per), rng);
    all[id].instance_id = id;
  }
  const auto n_train = static_cast<std::size_t>(std::lround(spec.train_fraction * static_cast<double>(per)));
  std::vector<bool> is_train(total, false);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::vector<std::uint64_t> ids(per);
    for (std::size_t k = 0; k < per; ++k) ids[k] = c * per + k;
    std::sort(ids.begin(), ids.end(), [&](auto a, auto b) {
      const auto ha = mix(spec.seed ^ mix(a + 0x51ed)), hb = mix(spec.seed ^ mix(b + 0x51ed));
      return ha != hb ? ha < hb : a < b;
    });
    for (std::size_t k = 0; k < n_train; ++k) is_train[ids[k]] = true;
  }
  Dataset ds;
  for (std::size_t id = 0; id < total; ++id) (is_train[id] ? ds.train : ds.test).push_back(std::move(all[id]));
  return ds;
}

std::vector<std::vector<std::size_t>> iterate_batches(std::size_t dataset_size, std::size_t n, Rng& rng) {
  if (n == 0) throw ConfigError("batch size must be positive");
  if (n > dataset_size)
    throw DataError("batch size " + std::to_string(n) + " exceeds dataset size " + std::to_string(dataset_size));
  std::vector<std::size_t> order(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
  // Fisher-Yates with the explicit integer sampler.
  for (std::size_t i = dataset_size - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b + n <= dataset_size; b += n)
    batches.emplace_back(order.begin() + static_cast<long>(b), order.begin() + static_cast<long>(b + n));
  return batches;
}

namespace {

Tensor stack(const std::vector<AVInstance>& items, std::span<const std::size_t> indices, bool video) {
  if (indices.empty()) throw DataError("cannot stack an empty batch");
  const Tensor& first = video ? items.at(indices[0]).video : items.at(indices[0]).audio;
  const std::size_t per = first.numel();
  std::vector<double> out;
  out.reserve(per * indices.size());
  for (auto i : indices) {
    const Tensor& t = video ? items.at(i).video : items.at(i).audio;
    if (t.shape() != first.shape()) throw DataError("instances in a batch differ in shape");
    out.insert(out.end(), t.values().begin(), t.values().end());
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace

Tensor stack_videos(const std::vector<AVInstance>& items, std::span<const std::size_t> indices) {
  return stack(items, indices, true);
}

Tensor stack_audio(const std::vector<AVInstance>& items, std::span<const std::size_t> indices) {
  return stack(items, indices, false);
}

void export_instances(const std::string& path, const std::vector<AVInstance>& items) {
  TensorFile file;
  for (const auto& inst : items) {
    const std::string id = std::to_string(inst.instance_id);
    file.tensors.emplace_back("video." + id, inst.video);
    file.tensors.emplace_back("audio." + id, inst.audio);
    file.tensors.emplace_back("label." + id, Tensor({1}, static_cast<double>(inst.class_id)));
  }
  write_tensor_file(path, file);
}

}  // namespace stica
