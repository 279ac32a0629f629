// ssal: command-line driver for the two-phase pipeline and its experiments.
//
// Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssal/digest.hpp"
#include "ssal/harness/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssal;
using namespace ssal::harness;

namespace {

struct Options {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::string checkpoint;  // confusion, predict
  std::string confusion;   // cluster
};

class Outputs {
 public:
  Outputs(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void text(const std::string& name, const std::string& content) {
    fs::create_directories(path(name).parent_path());
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path(name).string());
    out << content;
    record(name, content);
  }

  void file(const std::string& name) {
    std::ifstream in(path(name), std::ios::binary);
    record(name, std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
  }

  // The manifest embeds the resolved config, so `--config manifest.json`
  // replays the run.
  void manifest(const ExperimentConfig& config) {
    json m;
    m["manifest_version"] = 1;
    m["command"] = command_;
    m["run_id"] = config.run_id;
    m["seed"] = config.seed;
    m["config"] = config.resolved;
    m["config_sha256"] = sha256_hex(config.resolved.dump());
    m["outputs"] = outputs_;
    std::ofstream out(path("manifest.json"), std::ios::binary);
    out << m.dump(2) << '\n';
  }

 private:
  void record(const std::string& name, const std::string& bytes) { outputs_[name] = sha256_hex(bytes); }

  fs::path dir_;
  std::string command_;
  json outputs_ = json::object();
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

ExperimentConfig load(const Options& o) {
  json j = load_config_json(o.config ? std::optional<fs::path>(*o.config) : std::nullopt, o.overrides);
  if (o.seed) j["seed"] = *o.seed;
  return parse_config(j);
}

std::string mapping_name(std::size_t branch) { return "mapping_b" + std::to_string(branch + 1) + ".txt"; }

void write_logs(Outputs& out, const std::string& prefix, const VariantSummary& v) {
  for (const auto& r : v.runs) {
    if (r.log) out.text("logs/" + prefix + v.name + "_s" + std::to_string(r.seed) + ".csv", r.log->to_csv());
  }
}

void cmd_gen_data(const ExperimentConfig& c, Outputs& out) {
  if (c.data.source == "dir") throw ConfigError("gen-data needs data.source synthetic or cifar");
  const auto data = prepare_data(c.data, c.seed);
  write_dataset_dir(out.path("data").string(), data);
  out.file("data/train.csv");
  out.file("data/test.csv");
  if (data.planted) out.file("data/planted_mapping.txt");
  std::printf("train %zu, test %zu samples in %s\n", data.train.size(), data.test.size(), out.path("data").c_str());
}

void cmd_train_baseline(const ExperimentConfig& c, Outputs& out) {
  ExperimentConfig base = c;
  base.branches.clear();
  auto run = run_pipeline(base, c.seed);
  auto& p = run.pipeline;
  write_checkpoint(out.path("baseline.ckpt"), p.baseline.state());
  out.file("baseline.ckpt");
  out.text("baseline_log.csv", p.baseline_log.to_csv());
  out.text("confusion.csv", grouping::confusion_to_csv(training::confusion_of(p.baseline, run.data.holdout)));
  std::printf("baseline acc_main %s\n", fmt(p.baseline_log.final().acc_main).c_str());
}

void cmd_confusion(const ExperimentConfig& c, const Options& o, Outputs& out) {
  const auto data = prepare_data(c.data, c.seed);
  auto net = model::build_network(baseline_spec(c.model, data.train), derive_seed(c.seed, SeedStream::init));
  net.load_state(read_checkpoint(o.checkpoint.empty() ? out.path("baseline.ckpt") : fs::path(o.checkpoint)));
  out.text("confusion.csv", grouping::confusion_to_csv(training::confusion_of(net, data.holdout)));
}

void cmd_cluster(const ExperimentConfig& c, const Options& o, Outputs& out) {
  const fs::path src = o.confusion.empty() ? out.path("confusion.csv") : fs::path(o.confusion);
  std::ifstream in(src);
  if (!in) throw std::runtime_error("cannot open " + src.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto gammas = training::derive_mappings(grouping::confusion_from_csv(text, false),
                                                branch_plans(c.branches, c.model.branch_width), c.seed);
  for (std::size_t b = 0; b < gammas.size(); ++b) {
    out.text(mapping_name(b), grouping::mapping_to_text(gammas[b]));
    std::printf("branch %zu: k=%zu\n", b + 1, gammas[b].k);
  }
}

void cmd_train_ssal(const ExperimentConfig& c, Outputs& out) {
  auto run = run_pipeline(c, c.seed);
  auto& p = run.pipeline;
  out.text("baseline_log.csv", p.baseline_log.to_csv());
  if (p.confusion) out.text("confusion.csv", grouping::confusion_to_csv(*p.confusion));
  for (std::size_t b = 0; b < p.gammas.size(); ++b) out.text(mapping_name(b), grouping::mapping_to_text(p.gammas[b]));
  write_checkpoint(out.path("baseline.ckpt"), p.baseline.state());
  out.file("baseline.ckpt");
  if (p.ssal) {
    write_checkpoint(out.path("ssal.ckpt"), p.ssal->state());
    out.file("ssal.ckpt");
    out.text("ssal_log.csv", p.ssal_log->to_csv());
    std::printf("ssal acc_main %s acc_joint %s\n", fmt(p.ssal_log->final().acc_main).c_str(),
                fmt(p.ssal_log->final().acc_joint).c_str());
  }
  out.text("report.json", p.report);
}

void cmd_predict(const ExperimentConfig& c, const Options& o, Outputs& out) {
  const auto data = prepare_data(c.data, c.seed);
  const auto plans = branch_plans(c.branches, c.model.branch_width);
  std::vector<grouping::GroupMapping> gammas;
  for (std::size_t b = 0; b < plans.size(); ++b) gammas.push_back(grouping::read_mapping(out.path(mapping_name(b))));
  auto net = model::build_network(training::with_branches(baseline_spec(c.model, data.train), plans, gammas),
                                  derive_seed(c.seed, SeedStream::init));
  net.load_state(read_checkpoint(o.checkpoint.empty() ? out.path("ssal.ckpt") : fs::path(o.checkpoint)));

  prediction::CombinerConfig cc = c.predict;
  cc.lc_seed = derive_seed(c.seed, SeedStream::combiner);
  std::optional<prediction::LinearCombiner> lc;
  if (cc.mode == prediction::CombinerMode::linear_combination) lc = prediction::fit_linear_combiner(net, data.fit, cc);
  const auto p = prediction::predict(net, data.test, cc, lc ? &*lc : nullptr);
  out.text("predictions.csv", prediction::prediction_dump_csv(p, data.test.labels, gammas));
  std::string metrics = "mode,accuracy\n";
  metrics += "main_only," + fmt(prediction::accuracy(p.main_label, data.test.labels)) + "\n";
  metrics += "joint_probability," + fmt(prediction::accuracy(p.joint_label, data.test.labels)) + "\n";
  if (lc) metrics += "linear_combination," + fmt(prediction::accuracy(p.lc_label, data.test.labels)) + "\n";
  out.text("prediction_metrics.csv", metrics);
  std::printf("%s", metrics.c_str());
}

void cmd_sweep(const ExperimentConfig& c, Outputs& out) {
  const auto r = run_sweep(c);
  out.text("sweep.csv", r.to_csv());
  std::printf("%s", r.to_csv().c_str());
}

void cmd_suite(const ExperimentConfig& c, Outputs& out) {
  const auto r = run_baseline_suite(c);
  out.text("suite.csv", r.to_csv());
  out.text("suite_runs.csv", r.runs_csv());
  for (const auto& v : r.variants) write_logs(out, "", v);
  std::printf("%s", r.to_csv().c_str());
}

void cmd_convergence(ExperimentConfig c, Outputs& out) {
  c.suite.variants = {"baseline", "ssal_x1"};
  const auto r = run_baseline_suite(c);
  for (const auto& v : r.variants) write_logs(out, "", v);
  const auto report = convergence_report(*r.find("baseline"), *r.find("ssal_x1"), c.convergence_threshold);
  out.text("convergence.csv", report.to_csv());
  std::printf("%sthreshold %s: ssal earlier in %zu/%zu seeds\n", report.to_csv().c_str(), fmt(report.threshold).c_str(),
              report.ssal_wins, report.seeds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised auxiliary branches: pipeline and experiment driver"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "JSON config file or run manifest");
  app.add_option("--seed", o.seed, "master seed");
  app.add_option("--out-dir", o.out_dir, "output directory");
  app.add_option("--override", o.overrides, "key.path=value (JSON value or bare string)");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "write the dataset and planted mapping"},
      {"train-baseline", "phase 1: train the branch-free network and its holdout confusion"},
      {"confusion", "holdout confusion of a baseline checkpoint"},
      {"cluster", "group mappings from a confusion matrix"},
      {"train-ssal", "both phases: baseline, mappings, SSAL network"},
      {"predict", "predict the test split with a trained SSAL checkpoint"},
      {"sweep", "meta-parameter sweep"},
      {"baseline-suite", "capacity and fusion controls against SSAL"},
      {"convergence", "epochs to reach an accuracy threshold"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    if (name == "confusion" || name == "predict") sub->add_option("--checkpoint", o.checkpoint, "checkpoint path");
    if (name == "cluster") sub->add_option("--confusion", o.confusion, "confusion CSV path");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  ExperimentConfig config;
  try {
    config = load(o);
  } catch (const std::exception& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 1;
  }

  try {
    Outputs out(o.out_dir, command);
    if (command == "gen-data") cmd_gen_data(config, out);
    else if (command == "train-baseline") cmd_train_baseline(config, out);
    else if (command == "confusion") cmd_confusion(config, o, out);
    else if (command == "cluster") cmd_cluster(config, o, out);
    else if (command == "train-ssal") cmd_train_ssal(config, out);
    else if (command == "predict") cmd_predict(config, o, out);
    else if (command == "sweep") cmd_sweep(config, out);
    else if (command == "baseline-suite") cmd_suite(config, out);
    else cmd_convergence(config, out);
    out.manifest(config);
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << command << " failed: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
