#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "stica/data.hpp"
#include "stica/tensor_io.hpp"

using namespace stica;

namespace {

SyntheticDatasetSpec clean_spec() {
  SyntheticDatasetSpec s;
  s.noise = 0.0;
  return s;
}

// Draws instances of `cls` until one moves in `direction`.
AVInstance instance_with_direction(const SyntheticDatasetSpec& spec, int cls, int direction, std::uint64_t& seed) {
  for (;; ++seed) {
    Rng rng(seed);
    auto inst = generate_instance(spec, cls, rng);
    if (inst.direction == direction) return inst;
  }
}

// b(t, y, x) == a(map(t), y - dy, x - dx) on the torus.
bool shifted_copy(const AVInstance& a, const AVInstance& b, bool reverse_time) {
  const auto& s = a.video.shape();
  const std::size_t T = s[1], H = s[2], W = s[3];
  const std::size_t ta = reverse_time ? T - 1 : 0;
  const std::size_t dx = (b.center_x[0] + W - a.center_x[ta]) % W, dy = (b.center_y[0] + H - a.center_y[ta]) % H;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t at = reverse_time ? T - 1 - t : t;
          if (b.video.at({c, t, y, x}) != a.video.at({c, at, (y + H - dy) % H, (x + W - dx) % W})) return false;
        }
  return true;
}

std::vector<double> frame_colour_profile(const AVInstance& inst) {
  const auto& s = inst.video.shape();
  const std::size_t T = s[1], plane = s[2] * s[3];
  std::vector<double> f(3 * T, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < plane; ++p) f[c * T + t] += inst.video.values()[(c * T + t) * plane + p] / static_cast<double>(plane);
  return f;
}

std::vector<double> audio_half_profile(const AVInstance& inst) {
  const std::size_t F = inst.audio.size(1), Ta = inst.audio.size(2);
  std::vector<double> f(2 * F, 0.0);
  for (std::size_t b = 0; b < F; ++b)
    for (std::size_t t = 0; t < Ta; ++t) f[(t < Ta / 2 ? 0 : F) + b] += inst.audio.values()[b * Ta + t];
  return f;
}

double nearest_centroid_accuracy(const std::vector<AVInstance>& train, const std::vector<AVInstance>& test,
                                 std::vector<double> (*features)(const AVInstance&), std::size_t classes) {
  std::vector<std::vector<double>> centroid(classes);
  std::vector<std::size_t> count(classes, 0);
  for (const auto& inst : train) {
    auto f = features(inst);
    auto& c = centroid[static_cast<std::size_t>(inst.class_id)];
    if (c.empty()) c.assign(f.size(), 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) c[i] += f[i];
    ++count[static_cast<std::size_t>(inst.class_id)];
  }
  for (std::size_t k = 0; k < classes; ++k)
    for (auto& v : centroid[k]) v /= static_cast<double>(count[k]);
  std::size_t correct = 0;
  for (const auto& inst : test) {
    auto f = features(inst);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < classes; ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) d += (f[i] - centroid[k][i]) * (f[i] - centroid[k][i]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    correct += best == static_cast<std::size_t>(inst.class_id);
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("instance generation is deterministic") {
  const SyntheticDatasetSpec spec;
  Rng r1(7), r2(7);
  auto a = generate_instance(spec, 2, r1), b = generate_instance(spec, 2, r2);
  CHECK(std::equal(a.video.values().begin(), a.video.values().end(), b.video.values().begin()));
  CHECK(std::equal(a.audio.values().begin(), a.audio.values().end(), b.audio.values().begin()));
  CHECK(a.video.shape() == Shape{3, 8, 56, 56});
  CHECK(a.audio.shape() == Shape{1, 32, 32});
  Rng r3(1);
  CHECK_THROWS_AS(generate_instance(spec, 4, r3), DataError);
}

TEST_CASE("noise-free instances of a class are shifted copies") {
  const auto spec = clean_spec();
  std::uint64_t seed = 100;
  for (int dir = 0; dir < 4; ++dir) {
    auto a = instance_with_direction(spec, 1, dir, seed);
    ++seed;
    auto b = instance_with_direction(spec, 1, dir, seed);
    ++seed;
    CHECK(shifted_copy(a, b, false));
  }
}

TEST_CASE("a time-reversed clip is a clip of the paired class moving the other way") {
  const auto spec = clean_spec();
  std::uint64_t seed = 500;
  for (int cls : {0, 1, 2, 3}) {
    for (int dir = 0; dir < 4; ++dir) {
      auto a = instance_with_direction(spec, cls, dir, seed);
      ++seed;
      auto b = instance_with_direction(spec, cls ^ 1, (dir + 2) % 4, seed);
      ++seed;
      CHECK(shifted_copy(a, b, true));
    }
  }
}

TEST_CASE("pixel values stay inside [0, 1]") {
  SyntheticDatasetSpec spec;
  spec.noise = 0.3;
  Rng rng(9);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 1000; ++i) {
    auto inst = generate_instance(spec, i % 4, rng);
    const auto [mn, mx] = std::minmax_element(inst.video.values().begin(), inst.video.values().end());
    lo = std::min(lo, *mn);
    hi = std::max(hi, *mx);
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
}

TEST_CASE("dataset split") {
  const SyntheticDatasetSpec spec;
  auto ds = build_dataset(spec);
  CHECK(ds.train.size() == 160);
  CHECK(ds.test.size() == 40);
  std::set<std::uint64_t> train_ids, test_ids;
  std::vector<int> per_class(4, 0);
  for (const auto& i : ds.train) {
    train_ids.insert(i.instance_id);
    ++per_class[static_cast<std::size_t>(i.class_id)];
  }
  for (const auto& i : ds.test) test_ids.insert(i.instance_id);
  for (auto id : test_ids) CHECK(train_ids.count(id) == 0);
  for (int c : per_class) CHECK(c == 40);

  auto again = build_dataset(spec);
  for (std::size_t k = 0; k < ds.train.size(); ++k) {
    CHECK(again.train[k].instance_id == ds.train[k].instance_id);
    CHECK(std::equal(again.train[k].video.values().begin(), again.train[k].video.values().end(),
                     ds.train[k].video.values().begin()));
  }
}

TEST_CASE("batch iteration") {
  Rng rng(10);
  auto e1 = iterate_batches(160, 8, rng);
  CHECK(e1.size() == 20);
  std::set<std::size_t> seen;
  for (const auto& b : e1)
    for (auto i : b) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 160);

  auto odd = iterate_batches(21, 8, rng);
  CHECK(odd.size() == 2);
  std::set<std::size_t> used;
  for (const auto& b : odd) used.insert(b.begin(), b.end());
  CHECK(used.size() == 16);

  auto e2 = iterate_batches(160, 8, rng);
  CHECK(e1 != e2);
  CHECK_THROWS_AS(iterate_batches(10, 0, rng), ConfigError);
  CHECK_THROWS_AS(iterate_batches(4, 8, rng), DataError);
}

TEST_CASE("classes are decodable from each modality at noise 0") {
  auto spec = clean_spec();
  auto ds = build_dataset(spec);
  CHECK(nearest_centroid_accuracy(ds.train, ds.test, frame_colour_profile, 4) >= 0.9);
  CHECK(nearest_centroid_accuracy(ds.train, ds.test, audio_half_profile, 4) >= 0.9);
}

TEST_CASE("export writes a readable tensor file") {
  SyntheticDatasetSpec spec;
  spec.instances_per_class = 2;
  auto ds = build_dataset(spec);
  const auto path = (std::filesystem::temp_directory_path() / "stica_export_test.bin").string();
  export_instances(path, ds.train);
  auto file = read_tensor_file(path);
  CHECK(file.tensors.size() == 3 * ds.train.size());
  const auto& v = file.find("video." + std::to_string(ds.train[0].instance_id));
  CHECK(v.shape() == ds.train[0].video.shape());
  CHECK(v.values()[17] == static_cast<double>(static_cast<float>(ds.train[0].video.values()[17])));
  std::filesystem::remove(path);
}
