#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stica/config.hpp"

using namespace stica;

namespace {

std::vector<std::pair<std::string, std::string>> generic_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2) throw ConfigError("unexpected argument '" + arg + "'");
    const std::string body = arg.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("--" + body + ": missing value");
      out.emplace_back(body, extras[++i]);
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + path);
}

std::unique_ptr<nn::Model> make_model(const RunConfig& cfg, bool need_checkpoint) {
  Rng rng(cfg.seed);
  auto model = std::make_unique<nn::Model>(cfg.model_config(), rng);
  if (!cfg.checkpoint.empty()) {
    load_parameters(cfg.checkpoint, *model);
  } else if (need_checkpoint) {
    throw ConfigError(to_string(cfg.command) + " needs a trained model: set `checkpoint`");
  }
  return model;
}

std::vector<int> labels(const std::vector<AVInstance>& items) {
  std::vector<int> out;
  for (const auto& i : items) out.push_back(i.class_id);
  return out;
}

void run_pretrain(const RunConfig& cfg, const std::string& out) {
  const Dataset data = build_dataset(cfg.data);
  auto model = make_model(cfg, false);
  const PretrainResult res = run_pretraining(cfg.train_config(), data, *model, out, cfg.resume);
  const std::size_t spe = res.steps_per_epoch;
  if (res.history.size() >= spe && spe > 0) {
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < spe; ++i) {
      first += res.history[i].loss_total;
      last += res.history[res.history.size() - 1 - i].loss_total;
    }
    std::printf("epoch 1 mean loss %.6f, final epoch mean loss %.6f\n", first / spe, last / spe);
  }
  std::printf("checkpoint %s\n", res.final_checkpoint.c_str());
}

void run_retrieve(const RunConfig& cfg, const std::string& out) {
  const Dataset data = build_dataset(cfg.data);
  auto model = make_model(cfg, true);
  const RetrievalIndex index{embed_videos(data.train, *model, cfg.num_clips), labels(data.train)};
  const Tensor queries = embed_videos(data.test, *model, cfg.num_clips);
  const auto recall = retrieval_recall(queries, labels(data.test), index, cfg.retrieve_ks);
  for (std::size_t i = 0; i < recall.size(); ++i) {
    append_result_csv(out + "/results.csv", "retrieval_recall", std::to_string(cfg.retrieve_ks[i]), recall[i]);
    std::printf("recall@%zu %.4f\n", cfg.retrieve_ks[i], recall[i]);
  }
}

void run_probe(const RunConfig& cfg, const std::string& out) {
  const Dataset data = build_dataset(cfg.data);
  auto model = make_model(cfg, false);
  const ProbeConfig pc = cfg.probe_config();
  const ProbeResult res = finetune_probe(data, *model, cfg.data.num_classes, pc);
  const std::string mode = std::string(pc.mode == ProbeMode::Linear ? "linear" : "full") + (pc.feature_crops ? "+crops" : "");
  append_result_csv(out + "/results.csv", "probe_train_accuracy", mode, res.train_accuracy);
  append_result_csv(out + "/results.csv", "probe_test_accuracy", mode, res.test_accuracy);
  std::printf("%s probe: train %.4f test %.4f\n", mode.c_str(), res.train_accuracy, res.test_accuracy);
}

void run_bench(const RunConfig& cfg, const std::string& out) {
  const auto rows = crop_cost_benchmark(cfg.bench_config());
  write_bench_csv(out + "/bench.csv", rows);
  for (const auto& r : rows)
    std::printf("%-12s k=%zu %9.2f ms (sd %.2f) peak %lld B\n", to_string(r.strategy).c_str(), r.k, r.mean_ms, r.std_ms,
                static_cast<long long>(r.peak_bytes));
}

void run_heatmap(const RunConfig& cfg, const std::string& out) {
  const Dataset data = build_dataset(cfg.data);
  auto model = make_model(cfg, true);
  const std::size_t count = std::min(cfg.heatmap_count, data.test.size());
  double hits = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const AVInstance& inst = data.test[i];
    const Tensor map = av_heatmap(inst.video, inst.audio, *model);
    char name[64];
    std::snprintf(name, sizeof name, "/heatmap_%03zu.pgm", i);
    write_pgm(out + name, map);
    hits += heatmap_hit_rate(map, inst, *model);
  }
  const double rate = count ? hits / static_cast<double>(count) : 0.0;
  append_result_csv(out + "/results.csv", "heatmap_hit_rate", std::to_string(count), rate);
  std::printf("%zu heatmaps, hit rate %.4f\n", count, rate);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-crop audio-visual contrastive pretraining on synthetic data"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  for (const char* name : {"pretrain", "probe", "retrieve", "bench", "heatmap"}) {
    auto* sub = app.add_subcommand(name);
    sub->allow_extras();
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--out", out_dir, "output directory (default $STICA_OUT, else runs)");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--threads", threads, "OpenMP threads");
    sub->footer("Any config key can be overridden with --key value, e.g. --crop.m 1");
  }
  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  try {
    auto overrides = generic_overrides(sub->remaining());
    if (!out_dir.empty()) overrides.emplace_back("out", out_dir);
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    if (threads) overrides.emplace_back("threads", std::to_string(*threads));
    RunConfig cfg = parse_config(config_path, overrides);
    cfg.command = parse_command(sub->get_name());
    cfg.validate();

    const std::string out = cfg.out_dir();
    std::filesystem::create_directories(out);
    write_text(out + "/config.resolved", format_config(cfg));
    omp_set_num_threads(cfg.threads);

    switch (cfg.command) {
      case Command::Pretrain: run_pretrain(cfg, out); break;
      case Command::Probe: run_probe(cfg, out); break;
      case Command::Retrieve: run_retrieve(cfg, out); break;
      case Command::Bench: run_bench(cfg, out); break;
      case Command::Heatmap: run_heatmap(cfg, out); break;
    }
    return 0;
  } catch (const Error& e) {
    static const char* kinds[] = {"config", "data", "numeric", "io"};
    std::fprintf(stderr, "%s error: %s\n", kinds[static_cast<int>(e.kind())], e.what());
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return exit_code(ErrorKind::Io);
  }
}
