#include "ssal/harness/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "ssal/digest.hpp"

namespace ssal::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Runs task(i) for i in [0, n) on at most `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& task) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) task(i);
    });
  }
  for (auto& t : pool) t.join();
}

void write_dataset_csv(const fs::path& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# ssal-dataset shape=";
  for (std::size_t i = 0; i < d.sample_shape.size(); ++i) out << (i ? "x" : "") << d.sample_shape[i];
  out << " classes=" << d.class_count << " samples=" << d.size() << '\n';
  const std::size_t width = d.sample_size();
  char buf[40];
  for (std::size_t n = 0; n < d.size(); ++n) {
    out << d.labels[n];
    for (std::size_t j = 0; j < width; ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", d.features[n * width + j]);
      out << buf;
    }
    out << '\n';
  }
}

Dataset read_dataset_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream head(line);
  std::string tag, kind, shape_field, classes_field;
  head >> tag >> kind >> shape_field >> classes_field;
  if (tag != "#" || kind != "ssal-dataset" || !shape_field.starts_with("shape=") || !classes_field.starts_with("classes="))
    throw std::runtime_error(path.string() + ": missing ssal-dataset header");
  Dataset d;
  std::istringstream dims(shape_field.substr(6));
  for (std::string part; std::getline(dims, part, 'x');) d.sample_shape.push_back(std::stoul(part));
  d.class_count = std::stoul(classes_field.substr(8));
  const std::size_t width = d.sample_size();
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    d.labels.push_back(std::stoi(cell));
    std::size_t count = 0;
    while (std::getline(cells, cell, ',')) {
      d.features.push_back(std::stod(cell));
      ++count;
    }
    if (count != width) throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " has " +
                                                 std::to_string(count) + " features, expected " + std::to_string(width));
  }
  d.validate();
  return d;
}

void split_holdout(PreparedData& p, double fraction, std::uint64_t seed) {
  auto split = holdout_split(p.train, fraction, derive_seed(seed, SeedStream::holdout));
  p.fit = std::move(split.fit);
  p.holdout = std::move(split.holdout);
}

// Trunk block names, for cycling branch positions.
std::vector<std::string> block_names(const ModelConfig& m) {
  const auto trunk = m.trunk == "mlp" ? model::mlp_trunk(m.width, m.depth) : model::cnn_trunk(m.channels);
  std::vector<std::string> names;
  for (const auto& b : trunk.blocks) names.push_back(b.name);
  return names;
}

model::NetworkSpec scaled_spec(const ModelConfig& m, const Dataset& sample, std::size_t width_factor,
                               std::size_t extra_depth) {
  model::NetworkSpec spec;
  spec.input_shape = sample.sample_shape;
  spec.class_count = sample.class_count;
  if (m.trunk == "mlp") {
    if (spec.input_shape.size() != 1) throw ConfigError("model.trunk mlp needs flat samples; use cnn for images");
    spec.trunk = model::mlp_trunk(m.width * width_factor, m.depth + extra_depth);
    spec.main_head = model::mlp_main_head(spec.class_count);
  } else {
    if (spec.input_shape.size() != 3) throw ConfigError("model.trunk cnn needs [channels, height, width] samples");
    std::vector<std::size_t> channels = m.channels;
    for (auto& c : channels) c *= width_factor;
    spec.trunk = model::cnn_trunk(channels);
    for (std::size_t i = 0; i < extra_depth; ++i) {
      spec.trunk.blocks.push_back({"x" + std::to_string(i + 1),
                                   {LayerSpec::conv(channels.back(), 3, 1, 1), LayerSpec::batch_norm(),
                                    LayerSpec::relu_layer()}});
    }
    spec.main_head = model::cnn_main_head(spec.class_count);
  }
  return spec;
}

}  // namespace

PreparedData prepare_data(const DataConfig& config, std::uint64_t seed) {
  PreparedData p;
  if (config.source == "synthetic") {
    SyntheticSpec spec = config.synthetic;
    spec.seed = derive_seed(seed, SeedStream::data);
    auto s = generate_synthetic(spec);
    p.train = std::move(s.train);
    p.test = std::move(s.test);
    p.planted = std::move(s.planted);
  } else if (config.source == "cifar") {
    p.train = load_cifar_binary(config.cifar.train_files, config.cifar);
    p.test = load_cifar_binary(config.cifar.test_files, config.cifar);
  } else {
    return read_dataset_dir(config.dir, config.holdout_fraction, seed);
  }
  split_holdout(p, config.holdout_fraction, seed);
  return p;
}

void write_dataset_dir(const std::string& dir, const PreparedData& data) {
  fs::create_directories(dir);
  write_dataset_csv(fs::path(dir) / "train.csv", data.train);
  write_dataset_csv(fs::path(dir) / "test.csv", data.test);
  if (data.planted) grouping::write_mapping(fs::path(dir) / "planted_mapping.txt", *data.planted);
}

PreparedData read_dataset_dir(const std::string& dir, double holdout_fraction, std::uint64_t seed) {
  PreparedData p;
  p.train = read_dataset_csv(fs::path(dir) / "train.csv");
  p.test = read_dataset_csv(fs::path(dir) / "test.csv");
  if (p.train.sample_shape != p.test.sample_shape || p.train.class_count != p.test.class_count)
    throw std::runtime_error(dir + ": train and test disagree on shape or class count");
  const auto planted = fs::path(dir) / "planted_mapping.txt";
  if (fs::exists(planted)) p.planted = grouping::read_mapping(planted);
  split_holdout(p, holdout_fraction, seed);
  return p;
}

model::NetworkSpec baseline_spec(const ModelConfig& model, const Dataset& sample) {
  return scaled_spec(model, sample, 1, 0);
}

std::vector<training::BranchPlan> branch_plans(const std::vector<BranchConfig>& branches, std::size_t branch_width) {
  std::vector<training::BranchPlan> plans;
  for (const auto& b : branches) {
    training::BranchPlan plan;
    plan.attachment_point = b.attach;
    plan.grouping.k = b.k;
    plan.grouping.criterion = b.criterion;
    plan.grouping.linkage = b.linkage;
    plan.width = branch_width;
    plan.loss_weight = b.loss_weight;
    plans.push_back(plan);
  }
  return plans;
}

training::TrainConfig train_config(const ExperimentConfig& config, std::uint64_t seed, const std::string& run_id) {
  training::TrainConfig t = config.train;
  t.seed = seed;
  t.run_id = run_id;
  return t;
}

RunResult run_pipeline(const ExperimentConfig& config, std::uint64_t seed) {
  PreparedData data = prepare_data(config.data, seed);
  const auto spec = baseline_spec(config.model, data.train);
  auto pipeline = training::two_phase_pipeline(spec, branch_plans(config.branches, config.model.branch_width),
                                               {data.fit, data.holdout, data.test},
                                               train_config(config, seed, config.run_id + "/s" + std::to_string(seed)));
  return {std::move(data), std::move(pipeline)};
}

// ---- sweep ----

ExperimentConfig sweep_point(const ExperimentConfig& base, SweepAxis axis, const nlohmann::json& value) {
  ExperimentConfig c = base;
  switch (axis) {
    case SweepAxis::group_count:
      for (auto& b : c.branches) b.k = value.get<std::size_t>();
      break;
    case SweepAxis::criterion:
      for (auto& b : c.branches) b.criterion = grouping::criterion_from_string(value.get<std::string>());
      break;
    case SweepAxis::attachment_position:
      for (auto& b : c.branches) b.attach = value.get<std::string>();
      break;
    case SweepAxis::branch_count: {
      // Copies of the first branch on successive trunk blocks, starting at its own.
      const auto n = value.get<std::size_t>();
      const BranchConfig proto = c.branches.empty() ? BranchConfig{} : c.branches.front();
      const auto names = block_names(c.model);
      auto it = std::find(names.begin(), names.end(), proto.attach);
      const std::size_t start = it == names.end() ? 0 : static_cast<std::size_t>(it - names.begin());
      c.branches.clear();
      for (std::size_t i = 0; i < n; ++i) {
        BranchConfig b = proto;
        b.attach = names[(start + i) % names.size()];
        c.branches.push_back(b);
      }
      break;
    }
    case SweepAxis::eta:
      c.predict.eta = value.get<double>();
      c.train.eta = c.predict.eta;
      break;
  }
  return c;
}

std::string SweepResult::to_csv() const {
  std::string out = "axis,value,seed,status,branch_count,parameters,acc_main,acc_joint,acc_groups,error\n";
  const std::string ax = to_string(axis);
  auto groups = [](const std::vector<double>& g) {
    std::string s;
    for (std::size_t i = 0; i < g.size(); ++i) s += (i ? ";" : "") + fmt(g[i]);
    return s;
  };
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].value == rows[i].value) ++j;
    std::vector<const SweepRow*> ok;
    for (std::size_t r = i; r < j; ++r) {
      const auto& row = rows[r];
      std::string error = row.error;
      for (auto& ch : error) {
        if (ch == ',' || ch == '\n') ch = ' ';
      }
      out += ax + "," + row.value + "," + std::to_string(row.seed) + "," + (row.ok ? "ok" : "failed") + ",";
      if (row.ok) {
        out += std::to_string(row.branch_count) + "," + std::to_string(row.parameters) + "," + fmt(row.acc_main) + "," +
               fmt(row.acc_joint) + "," + groups(row.acc_groups) + ",\n";
        ok.push_back(&row);
      } else {
        out += ",,,,," + error + "\n";
      }
    }
    if (!ok.empty()) {
      auto stat = [&](auto field, bool sd) {
        double mean = 0.0;
        for (auto* r : ok) mean += field(*r);
        mean /= ok.size();
        if (!sd) return mean;
        if (ok.size() < 2) return 0.0;
        double ss = 0.0;
        for (auto* r : ok) ss += (field(*r) - mean) * (field(*r) - mean);
        return std::sqrt(ss / (ok.size() - 1));
      };
      for (bool sd : {false, true}) {
        std::vector<double> g(ok.front()->acc_groups.size());
        for (std::size_t b = 0; b < g.size(); ++b) g[b] = stat([b](const SweepRow& r) { return r.acc_groups[b]; }, sd);
        out += ax + "," + rows[i].value + "," + (sd ? "std" : "mean") + ",ok," + std::to_string(ok.front()->branch_count) +
               "," + std::to_string(ok.front()->parameters) + "," +
               fmt(stat([](const SweepRow& r) { return r.acc_main; }, sd)) + "," +
               fmt(stat([](const SweepRow& r) { return r.acc_joint; }, sd)) + "," + groups(g) + ",\n";
      }
    }
    i = j;
  }
  return out;
}

SweepResult run_sweep(const ExperimentConfig& config) {
  const auto& sw = config.sweep;
  SweepResult result{sw.axis, {}};
  const std::size_t seeds = sw.seeds.size();
  result.rows.resize(sw.values.size() * seeds);
  parallel_for(result.rows.size(), sw.max_parallel, [&](std::size_t idx) {
    const auto& value = sw.values[idx / seeds];
    SweepRow& row = result.rows[idx];
    row.value = value.is_string() ? value.get<std::string>() : value.dump();
    row.seed = sw.seeds[idx % seeds];
    try {
      ExperimentConfig point = sweep_point(config, sw.axis, value);
      point.run_id = config.run_id + "/" + to_string(sw.axis) + "=" + row.value;
      auto run = run_pipeline(point, row.seed);
      const auto& p = run.pipeline;
      if (p.ssal) {
        const auto& last = p.ssal_log->final();
        row.branch_count = p.ssal->output_branch_count();
        row.parameters = p.ssal->parameter_counts().total();
        row.acc_main = last.acc_main;
        row.acc_joint = last.acc_joint;
        row.acc_groups = last.acc_branches;
      } else {
        row.parameters = p.baseline.parameter_counts().total();
        row.acc_main = row.acc_joint = p.baseline_log.final().acc_main;
      }
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  for (std::size_t v = 0; v < sw.values.size(); ++v) {
    bool any = false;
    for (std::size_t s = 0; s < seeds; ++s) any = any || result.rows[v * seeds + s].ok;
    if (!any) {
      throw std::runtime_error("sweep value " + result.rows[v * seeds].value + " failed for every seed: " +
                               result.rows[v * seeds].error);
    }
  }
  return result;
}

// ---- baseline suite ----

std::size_t VariantSummary::successes() const {
  return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const VariantRun& r) { return r.ok; }));
}

double VariantSummary::mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (r.ok) sum += r.accuracy, ++n;
  }
  return n ? sum / n : std::nan("");
}

double VariantSummary::stddev() const {
  const std::size_t n = successes();
  if (n < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (const auto& r : runs) {
    if (r.ok) ss += (r.accuracy - m) * (r.accuracy - m);
  }
  return std::sqrt(ss / (n - 1));
}

std::size_t VariantSummary::parameters() const {
  for (const auto& r : runs) {
    if (r.ok) return r.parameters;
  }
  return 0;
}

const VariantSummary* SuiteResult::find(const std::string& name) const {
  for (const auto& v : variants) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

std::string SuiteResult::to_csv() const {
  std::string out = "variant,runs,mean_acc,std_acc,parameters,diff_vs_baseline,wins_vs_baseline,gamma_planted\n";
  const VariantSummary* base = find("baseline");
  for (const auto& v : variants) {
    const std::size_t n = v.successes();
    out += v.name + "," + std::to_string(n) + ",";
    if (n == 0) {
      out += ",,,,,\n";
      continue;
    }
    out += fmt(v.mean()) + "," + fmt(v.stddev()) + "," + std::to_string(v.parameters()) + ",";
    if (base && base->successes() > 0) {
      std::size_t wins = 0, paired = 0;
      for (std::size_t s = 0; s < v.runs.size(); ++s) {
        if (!v.runs[s].ok || !base->runs[s].ok) continue;
        ++paired;
        wins += v.runs[s].accuracy > base->runs[s].accuracy;
      }
      out += fmt(v.mean() - base->mean()) + "," + std::to_string(wins) + "/" + std::to_string(paired) + ",";
    } else {
      out += ",,";
    }
    std::size_t flagged = 0, matched = 0;
    for (const auto& r : v.runs) {
      if (r.gamma_matches_planted) ++flagged, matched += *r.gamma_matches_planted;
    }
    if (flagged) out += std::to_string(matched) + "/" + std::to_string(flagged);
    out += "\n";
  }
  return out;
}

std::string SuiteResult::runs_csv() const {
  std::string out = "variant,seed,status,accuracy,parameters,gamma_planted,error\n";
  for (const auto& v : variants) {
    for (const auto& r : v.runs) {
      std::string error = r.error;
      for (auto& ch : error) {
        if (ch == ',' || ch == '\n') ch = ' ';
      }
      out += v.name + "," + std::to_string(r.seed) + "," + (r.ok ? "ok" : "failed") + "," +
             (r.ok ? fmt(r.accuracy) : "") + "," + (r.ok ? std::to_string(r.parameters) : "") + "," +
             (r.gamma_matches_planted ? (*r.gamma_matches_planted ? "1" : "0") : "") + "," + error + "\n";
    }
  }
  return out;
}

namespace {

bool needs_ssal_x1(const std::string& v) {
  return v == "ssal_x1" || v == "gap_concat" || v == "concat_fc" || v == "linear_comb";
}

// All variants for one seed, in config.suite.variants order.
std::vector<VariantRun> run_suite_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const auto& variants = config.suite.variants;
  std::vector<VariantRun> out(variants.size());
  for (auto& r : out) r.seed = seed;
  auto fail_all = [&](const std::string& why) {
    for (auto& r : out) r.error = why;
    return out;
  };

  const std::string prefix = config.run_id + "/s" + std::to_string(seed) + "/";
  std::optional<PreparedData> data;
  try {
    data = prepare_data(config.data, seed);
  } catch (const std::exception& e) {
    return fail_all(std::string("data: ") + e.what());
  }
  const std::uint64_t init_seed = derive_seed(seed, SeedStream::init);
  auto plain = [&](std::size_t factor, std::size_t extra) { return scaled_spec(config.model, data->train, factor, extra); };

  // Phase 1 plus SSAL x1; the baseline's confusion also feeds SSAL x3.
  const bool want_x1 = std::any_of(variants.begin(), variants.end(), needs_ssal_x1);
  std::optional<training::PipelineResult> pipe;
  std::string pipe_error;
  try {
    pipe = training::two_phase_pipeline(
        plain(1, 0), want_x1 ? branch_plans(config.branches, config.model.branch_width) : std::vector<training::BranchPlan>{},
        {data->fit, data->holdout, data->test}, train_config(config, seed, prefix + "pipeline"));
    if (!pipe->confusion) pipe->confusion = training::confusion_of(pipe->baseline, data->holdout);
  } catch (const std::exception& e) {
    pipe_error = std::string("pipeline: ") + e.what();
  }

  auto planted_match = [&](const std::vector<grouping::GroupMapping>& gammas) -> std::optional<bool> {
    if (!data->planted) return std::nullopt;
    for (const auto& g : gammas) {
      if (!g.same_partition(*data->planted)) return false;
    }
    return true;
  };
  auto train_plain = [&](model::SsalNetwork net, const std::string& name, VariantRun& r) {
    r.parameters = net.parameter_counts().total();
    r.log = training::train(net, data->fit, data->test, train_config(config, seed, prefix + name));
    r.accuracy = r.log->final().acc_main;
  };

  for (std::size_t i = 0; i < variants.size(); ++i) {
    const std::string& name = variants[i];
    VariantRun& r = out[i];
    try {
      if (name == "wide") {
        train_plain(model::build_network(plain(config.suite.wide_factor, 0), init_seed), name, r);
      } else if (name == "deep") {
        train_plain(model::build_network(plain(1, config.suite.extra_depth), init_seed), name, r);
      } else if (name == "deepwide") {
        train_plain(model::build_network(plain(config.suite.wide_factor, config.suite.extra_depth), init_seed), name, r);
      } else if (!pipe) {
        throw std::runtime_error(pipe_error);
      } else if (name == "baseline") {
        r.parameters = pipe->baseline.parameter_counts().total();
        r.log = pipe->baseline_log;
        r.accuracy = r.log->final().acc_main;
      } else if (name == "ssal_x1") {
        r.parameters = pipe->ssal->parameter_counts().total();
        r.log = *pipe->ssal_log;
        r.accuracy = r.log->final().acc_joint;
        r.gamma_matches_planted = planted_match(pipe->gammas);
      } else if (name == "gap_concat" || name == "concat_fc") {
        train_plain(model::variant_no_ssal(*pipe->ssal, model::fusion_from_string(name), config.suite.concat_fc_hidden),
                    name, r);
      } else if (name == "linear_comb") {
        prediction::CombinerConfig cc = config.predict;
        cc.mode = prediction::CombinerMode::linear_combination;
        cc.lc_seed = derive_seed(seed, SeedStream::combiner);
        const auto lc = prediction::fit_linear_combiner(*pipe->ssal, data->fit, cc);
        const auto p = prediction::predict(*pipe->ssal, data->test, cc, &lc);
        r.parameters = pipe->ssal->parameter_counts().total() + lc.weight().numel() + lc.bias().numel();
        r.accuracy = prediction::accuracy(p.lc_label, data->test.labels);
      } else if (name == "ssal_x3") {
        const auto plans = branch_plans(config.suite.x3_branches, config.model.branch_width);
        const auto gammas = training::derive_mappings(*pipe->confusion, plans, seed);
        auto net = model::build_network(training::with_branches(plain(1, 0), plans, gammas), init_seed);
        r.parameters = net.parameter_counts().total();
        auto tc = train_config(config, seed, prefix + name);
        tc.eta = config.suite.x3_eta;
        r.log = training::train(net, data->fit, data->test, tc);
        r.accuracy = r.log->final().acc_joint;
        r.gamma_matches_planted = planted_match(gammas);
      } else {
        throw std::invalid_argument("unknown variant " + name);
      }
      r.ok = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  }
  return out;
}

}  // namespace

SuiteResult run_baseline_suite(const ExperimentConfig& config) {
  const auto& seeds = config.suite.seeds;
  std::vector<std::vector<VariantRun>> per_seed(seeds.size());
  parallel_for(seeds.size(), config.suite.max_parallel,
               [&](std::size_t s) { per_seed[s] = run_suite_seed(config, seeds[s]); });
  SuiteResult result{seeds, {}};
  for (std::size_t v = 0; v < config.suite.variants.size(); ++v) {
    VariantSummary summary{config.suite.variants[v], {}};
    for (auto& runs : per_seed) summary.runs.push_back(std::move(runs[v]));
    result.variants.push_back(std::move(summary));
  }
  return result;
}

// ---- convergence ----

std::optional<int> epochs_to_threshold(const training::TrainLog& log, double threshold, bool joint) {
  for (const auto& row : log.rows) {
    if ((joint ? row.acc_joint : row.acc_main) >= threshold) return row.epoch;
  }
  return std::nullopt;
}

ConvergenceReport convergence_report(const VariantSummary& baseline, const VariantSummary& ssal,
                                     std::optional<double> threshold) {
  ConvergenceReport report;
  report.threshold = threshold.value_or(baseline.mean());
  auto add = [&](const VariantSummary& v, bool joint) {
    for (const auto& r : v.runs) {
      if (!r.ok || !r.log) continue;
      report.rows.push_back({v.name, r.seed, epochs_to_threshold(*r.log, report.threshold, joint), r.accuracy});
    }
  };
  add(baseline, false);
  add(ssal, true);
  for (std::size_t s = 0; s < baseline.runs.size() && s < ssal.runs.size(); ++s) {
    const auto& b = baseline.runs[s];
    const auto& a = ssal.runs[s];
    if (!b.ok || !a.ok || !b.log || !a.log) continue;
    ++report.seeds;
    const auto eb = epochs_to_threshold(*b.log, report.threshold, false);
    const auto ea = epochs_to_threshold(*a.log, report.threshold, true);
    if (ea && (!eb || *ea < *eb)) ++report.ssal_wins;
  }
  return report;
}

std::string ConvergenceReport::to_csv() const {
  std::string out = "variant,seed,epochs_to_threshold,final_accuracy\n";
  for (const auto& r : rows) {
    out += r.variant + "," + std::to_string(r.seed) + "," + (r.epoch ? std::to_string(*r.epoch) : "never") + "," +
           fmt(r.final_accuracy) + "\n";
  }
  return out;
}

}  // namespace ssal::harness
