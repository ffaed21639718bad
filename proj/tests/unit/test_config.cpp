#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "stica/config.hpp"

using namespace stica;

namespace {

std::string write_file(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / ("stica_config_" + name);
  std::ofstream(path) << text;
  return path.string();
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty file gives defaults and the echo lists every key") {
  const RunConfig cfg = parse_config(write_file("empty.cfg", ""), {});
  const RunConfig defaults;
  CHECK(format_config(cfg) == format_config(defaults));
  const std::string echo = format_config(cfg);
  for (const auto& key : config_keys()) CHECK(echo.find(key + " = ") != std::string::npos);
  CHECK(cfg.base_lr == 0.05);
  CHECK(cfg.plan.m == 1);
  CHECK(cfg.plan.n == 2);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("comments, blank lines and spacing are accepted") {
  const auto path = write_file("spacing.cfg", "# run\n\n  crop.m=2   # more crops\ntrain.base_lr =0.02\n");
  const RunConfig cfg = parse_config(path, {});
  CHECK(cfg.plan.m == 2);
  CHECK(cfg.base_lr == 0.02);
}

TEST_CASE("unknown keys and bad values are rejected with a line number") {
  const auto typo = write_file("typo.cfg", "seed = 1\ncrop.mm = 2\n");
  const std::string msg = error_of([&] { parse_config(typo, {}); });
  CHECK(msg.find(":2:") != std::string::npos);
  CHECK(msg.find("crop.mm") != std::string::npos);
  CHECK(error_of([&] { parse_config(write_file("bad.cfg", "train.epochs = many\n"), {}); }).find("train.epochs") !=
        std::string::npos);
  CHECK(error_of([&] { parse_config(write_file("noeq.cfg", "seed 3\n"), {}); }).find(":1:") != std::string::npos);
  CHECK(error_of([&] { parse_config("", {{"model.pooling", "max"}}); }).find("model.pooling") != std::string::npos);
  CHECK_THROWS_AS(parse_config("/nonexistent/stica.cfg", {}), ConfigError);
}

TEST_CASE("a crop larger than the feature grid names both fields") {
  const RunConfig cfg = parse_config(write_file("small.cfg", "crop.small_size = 9\n"), {});
  const std::string msg = error_of([&] { cfg.validate(); });
  CHECK(msg.find("crop.small_size") != std::string::npos);
  CHECK(msg.find("encoder.grid") != std::string::npos);
}

TEST_CASE("command-line overrides beat file values") {
  const auto path = write_file("seed.cfg", "seed = 3\ncrop.m = 2\n");
  const RunConfig cfg = parse_config(path, {{"seed", "7"}});
  CHECK(cfg.seed == 7);
  CHECK(cfg.plan.m == 2);
  CHECK(parse_config(path, {}).seed == 3);
}

TEST_CASE("the echoed config re-parses to the same config") {
  RunConfig cfg;
  set_config_key(cfg, "train.base_lr", "0.1");
  set_config_key(cfg, "loss.tau_within", "0.30000000000000004");
  set_config_key(cfg, "crop.time", "none");
  set_config_key(cfg, "model.pooling", "average");
  set_config_key(cfg, "transformer.aggregation", "summary");
  set_config_key(cfg, "retrieve.ks", "1,3");
  set_config_key(cfg, "probe.feature_crops", "true");
  set_config_key(cfg, "out", "some/dir");
  const std::string echo = format_config(cfg);
  const RunConfig again = parse_config(write_file("echo.cfg", echo), {});
  CHECK(format_config(again) == echo);
  CHECK(again.weights.tau_within == cfg.weights.tau_within);
  CHECK(again.plan.time.empty());
  CHECK(again.retrieve_ks == std::vector<std::size_t>{1, 3});
}

TEST_CASE("command requirements") {
  RunConfig cfg;
  cfg.command = Command::Retrieve;
  CHECK(error_of([&] { cfg.validate(); }).find("checkpoint") != std::string::npos);
  cfg.checkpoint = "model.bin";
  CHECK_NOTHROW(cfg.validate());
  cfg.retrieve_ks = {1, 1000};
  CHECK(error_of([&] { cfg.validate(); }).find("retrieve.ks") != std::string::npos);
  cfg.command = Command::Heatmap;
  cfg.checkpoint.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.command = Command::Bench;
  cfg.bench_ks = {2, 3};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_command("probe") == Command::Probe);
  CHECK_THROWS_AS(parse_command("train"), ConfigError);
}

TEST_CASE("training digest ignores run length and evaluation keys") {
  RunConfig a, b;
  b.epochs = 3;
  b.checkpoint_every = 1;
  b.resume = "x.bin";
  b.num_clips = 2;
  b.out = "elsewhere";
  CHECK(training_digest_text(a) == training_digest_text(b));
  b.base_lr = 0.01;
  CHECK(training_digest_text(a) != training_digest_text(b));
  CHECK(a.train_config().digest_text == training_digest_text(a));
}

TEST_CASE("output directory falls back to the environment") {
  RunConfig cfg;
  ::setenv("STICA_OUT", "/tmp/stica_env_out", 1);
  CHECK(cfg.out_dir() == "/tmp/stica_env_out");
  cfg.out = "explicit";
  CHECK(cfg.out_dir() == "explicit");
  ::unsetenv("STICA_OUT");
  cfg.out.clear();
  CHECK(cfg.out_dir() == "runs");
}
