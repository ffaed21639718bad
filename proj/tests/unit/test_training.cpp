#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "stica/grad_check.hpp"
#include "stica/ops.hpp"
#include "stica/tensor_io.hpp"
#include "stica/training.hpp"

using namespace stica;
using namespace stica::nn;
using stica::testing::random_tensor;

namespace {

SyntheticDatasetSpec micro_data(std::size_t per_class) {
  SyntheticDatasetSpec s;
  s.instances_per_class = per_class;
  s.frames = 4;
  s.height = 16;
  s.width = 16;
  s.freq_bins = 8;
  s.audio_frames = 8;
  s.blob_radius = 3;
  s.speed = 1;
  return s;
}

CropPlan micro_plan() {
  CropPlan p;
  p.medium_size = 2;
  p.small_size = 1;
  p.time = {{1, 1}, {2, 1}};
  p.grid = {2, 2, 2};
  return p;
}

TrainConfig micro_train(std::size_t per_class, std::size_t epochs) {
  TrainConfig cfg;
  cfg.data = micro_data(per_class);
  cfg.model = ModelConfig::micro();
  cfg.plan = micro_plan();
  cfg.batch_size = 4;
  cfg.epochs = epochs;
  cfg.warmup_epochs = 1;
  cfg.seed = 5;
  cfg.digest_text = "micro";
  return cfg;
}

double checksum(const ParamSet& ps) {
  double s = 0.0;
  std::size_t i = 0;
  for (const auto& [name, t] : ps.items())
    for (double v : t.values()) s += v * static_cast<double>(++i % 7 + 1);
  return s;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("stica_training_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("sgd without momentum or decay is plain gradient descent") {
  Tensor p({3}, {1.0, -2.0, 0.5}, true);
  (sum_all(p * Tensor({3}, {1.0, 2.0, 3.0}))).backward();
  OptimizerState st{0.0, 0.0, {}, 0};
  std::vector<Tensor> params{p};
  CHECK(sgd_step(params, st, 0.1));
  CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(p.values()[1] == doctest::Approx(-2.2).epsilon(1e-15));
  CHECK(p.values()[2] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(st.step == 1);
  CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("two momentum steps with a constant gradient move by lr*g*(2+mu)") {
  const double lr = 0.05, mu = 0.9, g = 1.5;
  Tensor p({1}, {2.0}, true);
  OptimizerState st{mu, 0.0, {}, 0};
  std::vector<Tensor> params{p};
  for (int i = 0; i < 2; ++i) {
    (p * Tensor::scalar(g)).backward();
    REQUIRE(sgd_step(params, st, lr));
  }
  CHECK(p.values()[0] == doctest::Approx(2.0 - lr * g * (2.0 + mu)).epsilon(1e-14));
}

TEST_CASE("weight decay alone shrinks geometrically") {
  const double lr = 0.1, wd = 0.01;
  Tensor p({2}, {1.0, -3.0}, true);
  OptimizerState st{0.0, wd, {}, 0};
  std::vector<Tensor> params{p};
  for (int i = 0; i < 5; ++i) REQUIRE(sgd_step(params, st, lr));
  CHECK(p.values()[0] == doctest::Approx(std::pow(1.0 - lr * wd, 5)).epsilon(1e-14));
  CHECK(p.values()[1] == doctest::Approx(-3.0 * std::pow(1.0 - lr * wd, 5)).epsilon(1e-14));
}

TEST_CASE("a non-finite gradient aborts the step") {
  Tensor p({2}, {1.0, 2.0}, true);
  (sum_all(p * Tensor({2}, {1.0, std::nan("")}))).backward();
  OptimizerState st{0.9, 0.0, {}, 0};
  std::vector<Tensor> params{p};
  CHECK_FALSE(sgd_step(params, st, 0.1));
  CHECK(p.values()[0] == 1.0);
  CHECK(p.values()[1] == 2.0);
  CHECK(st.step == 0);
}

TEST_CASE("warm-up reaches exactly the base rate") {
  ScheduleSpec s;
  s.base_lr = 0.64;
  s.warmup_epochs = 10;
  s.steps_per_epoch = 7;
  CHECK(lr_schedule(s, 0) == doctest::Approx(0.64 / 70).epsilon(1e-15));
  CHECK(lr_schedule(s, 69) == 0.64);
  CHECK(lr_schedule(s, 70) == 0.64);
  CHECK(lr_schedule(s, 5000) == 0.64);
  for (std::uint64_t i = 1; i < 70; ++i) CHECK(lr_schedule(s, i) > lr_schedule(s, i - 1));

  s.warmup_epochs = 0;
  CHECK(lr_schedule(s, 0) == 0.64);
  CHECK(lr_schedule(s, 3) == 0.64);
}

TEST_CASE("finetune schedule warms from 0.0025 to 0.02 and decays at epochs 6 and 10") {
  const auto s = ScheduleSpec::finetune(5);
  s.validate();
  CHECK(lr_schedule(s, 0) == 0.0025);
  CHECK(lr_schedule(s, 9) < 0.02);
  CHECK(lr_schedule(s, 10) == 0.02);
  CHECK(lr_schedule(s, 29) == 0.02);
  CHECK(lr_schedule(s, 30) == doctest::Approx(0.02 * 0.05).epsilon(1e-15));
  CHECK(lr_schedule(s, 49) == doctest::Approx(0.02 * 0.05).epsilon(1e-15));
  CHECK(lr_schedule(s, 50) == doctest::Approx(0.02 * 0.05 * 0.05).epsilon(1e-15));

  ScheduleSpec bad;
  bad.steps_per_epoch = 1;
  bad.factor = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("a seeded 4-instance step at init has finite losses and updates parameters") {
  const auto data = build_dataset(micro_data(2));
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  Rng rng(7);
  Model model(ModelConfig::micro(), rng);
  OptimizerState opt{0.9, 1e-5, {}, 0};
  const double before = checksum(model.params());
  const auto m = train_step(stack_videos(data.train, idx), stack_audio(data.train, idx), model, opt, LossWeights{},
                            micro_plan(), AugmentConfig{}, 0.05, rng);
  CHECK(m.applied);
  CHECK_FALSE(m.nonfinite);
  CHECK(std::isfinite(m.loss_total));
  CHECK(m.loss_vv > 0.0);
  CHECK(m.loss_va > 0.0);
  CHECK(m.vv_terms == 2 * ((1 + 2) * (1 + 2) - 2 * 2));
  CHECK(checksum(model.params()) != before);
}

TEST_CASE("zero loss weights leave parameters unchanged") {
  const auto data = build_dataset(micro_data(2));
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  Rng rng(8);
  Model model(ModelConfig::micro(), rng);
  OptimizerState opt{0.9, 1e-5, {}, 0};
  LossWeights w;
  w.lambda_vv = w.lambda_va = 0.0;
  const double before = checksum(model.params());
  const auto m = train_step(stack_videos(data.train, idx), stack_audio(data.train, idx), model, opt, w, micro_plan(),
                            AugmentConfig{}, 0.05, rng);
  CHECK_FALSE(m.applied);
  CHECK(m.loss_total == 0.0);
  CHECK(m.loss_vv == 0.0);
  CHECK(m.loss_va == 0.0);
  CHECK(checksum(model.params()) == before);
}

TEST_CASE("total loss passes the gradient check on a 2-instance micro config") {
  Rng rng(9);
  Model model(ModelConfig::micro(), rng);
  const auto l1 = random_tensor({2, 3, 4, 8, 8}, rng, 0.0, 1.0, false);
  const auto l2 = random_tensor({2, 3, 4, 8, 8}, rng, 0.0, 1.0, false);
  const auto a = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0, false);
  auto params = param_tensors(model.params());
  const auto r = grad_check(
      [&] {
        Rng crops(10);
        return compute_losses(l1, l2, a, model, LossWeights{}, micro_plan(), crops).total;
      },
      params);
  MESSAGE("total loss grad check: " << r.max_relative_error << " over " << r.entries << " entries");
  CHECK(r.nonfinite.empty());
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  const auto dir = scratch("roundtrip");
  Rng rng(11);
  Model model(ModelConfig::micro(), rng);
  TrainerState st{12, 3, Rng(77), OptimizerState{0.9, 1e-5, {}, 12}};
  st.rng.uniform(0.0, 1.0);
  const auto a = (dir / "a.bin").string(), b = (dir / "b.bin").string();
  save_checkpoint(a, model, st, "cfg");

  Rng other(99);
  Model restored(ModelConfig::micro(), other);
  TrainerState st2{0, 0, Rng(1), OptimizerState{0.9, 1e-5, {}, 0}};
  load_checkpoint(a, restored, st2, "cfg");
  CHECK(st2.step == 12);
  CHECK(st2.epoch == 3);
  save_checkpoint(b, restored, st2, "cfg");
  CHECK(slurp(a) == slurp(b));
  CHECK(st2.rng.uniform(0.0, 1.0) == st.rng.uniform(0.0, 1.0));

  CHECK_THROWS_AS(load_checkpoint(a, restored, st2, "other cfg"), IoError);
}

TEST_CASE("checkpoint parameters survive float32 storage") {
  const auto dir = scratch("f32");
  Rng rng(12);
  Model model(ModelConfig::micro(), rng);
  std::vector<std::vector<double>> original;
  for (const auto& [name, t] : model.params().items()) original.emplace_back(t.values().begin(), t.values().end());
  TrainerState st{0, 0, Rng(1), OptimizerState{}};
  const auto path = (dir / "c.bin").string();
  save_checkpoint(path, model, st, "cfg");
  Rng other(13);
  Model restored(ModelConfig::micro(), other);
  load_parameters(path, restored);
  std::size_t i = 0;
  for (const auto& [name, t] : restored.params().items()) {
    auto expect = original[i++];
    round_to_float32(expect);
    CHECK(std::equal(expect.begin(), expect.end(), t.values().begin()));
  }
}

TEST_CASE("a tampered checkpoint header is rejected") {
  const auto dir = scratch("tamper");
  Rng rng(14);
  Model model(ModelConfig::micro(), rng);
  TrainerState st{0, 0, Rng(1), OptimizerState{}};
  const auto path = (dir / "t.bin").string();
  save_checkpoint(path, model, st, "cfg");
  auto bytes = slurp(path);
  bytes[4] = static_cast<char>(bytes[4] + 1);  // version
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(load_parameters(path, model), IoError);
  bytes[4] = static_cast<char>(bytes[4] - 1);
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(load_parameters(path, model), IoError);
}

TEST_CASE("one epoch on 32 instances emits one metrics row per step") {
  const auto dir = scratch("smoke");
  const auto cfg = micro_train(10, 1);  // 4 classes x 10 → 32 train
  const auto data = build_dataset(cfg.data);
  REQUIRE(data.train.size() == 32);
  Rng rng(cfg.seed);
  Model model(cfg.model, rng);
  const auto result = run_pretraining(cfg, data, model, dir.string());
  CHECK(result.steps_per_epoch == 8);
  CHECK(result.history.size() == 8);
  const auto rows = lines(slurp((dir / "metrics.csv").string()));
  REQUIRE(rows.size() == 9);
  CHECK(rows[0] == "step,epoch,lr,loss_total,loss_vv,loss_va");
  CHECK(rows[1].rfind("1,1,", 0) == 0);
  CHECK(std::filesystem::exists(dir / "checkpoint_epoch1.bin"));
}

TEST_CASE("pretraining is deterministic and resumes bit-exactly") {
  auto cfg = micro_train(4, 3);
  cfg.checkpoint_every = 1;
  const auto data = build_dataset(cfg.data);
  auto run = [&](const std::string& name, const std::string& resume) {
    const auto dir = scratch(name);
    Rng rng(cfg.seed);
    Model model(cfg.model, rng);
    run_pretraining(cfg, data, model, dir.string(), resume);
    return dir;
  };
  const auto full = run("full", ""), again = run("again", "");
  const auto full_rows = lines(slurp((full / "metrics.csv").string()));
  CHECK(slurp((full / "metrics.csv").string()) == slurp((again / "metrics.csv").string()));

  const auto resumed = run("resumed", (full / "checkpoint_epoch1.bin").string());
  const auto resumed_rows = lines(slurp((resumed / "metrics.csv").string()));
  const std::size_t per_epoch = (full_rows.size() - 1) / 3;
  REQUIRE(resumed_rows.size() == 1 + 2 * per_epoch);
  for (std::size_t i = 1; i < resumed_rows.size(); ++i) CHECK(resumed_rows[i] == full_rows[per_epoch + i]);
  CHECK(slurp((full / "checkpoint_epoch3.bin").string()) == slurp((resumed / "checkpoint_epoch3.bin").string()));
}

TEST_CASE("two non-finite steps in a row abort pretraining") {
  const auto dir = scratch("diverge");
  auto cfg = micro_train(4, 2);
  cfg.base_lr = 1e300;
  cfg.warmup_epochs = 0;
  const auto data = build_dataset(cfg.data);
  Rng rng(cfg.seed);
  Model model(cfg.model, rng);
  CHECK_THROWS_AS(run_pretraining(cfg, data, model, dir.string()), NumericError);
}

TEST_CASE("training config rejects mismatched data and model shapes") {
  auto cfg = micro_train(4, 1);
  cfg.validate();
  cfg.data.freq_bins = 16;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = micro_train(4, 1);
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = micro_train(4, 1);
  cfg.plan.small_size = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
