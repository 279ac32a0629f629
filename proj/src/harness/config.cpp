#include "ssal/harness/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ssal::harness {

using nlohmann::json;

namespace {

json branch_default() {
  return {{"attach", "b1"}, {"k", 4}, {"criterion", "join_similar"}, {"linkage", "mean"}, {"loss_weight", nullptr}};
}

void merge(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    json& slot = base[key];
    if (here == "branches" || here == "suite.x3_branches") {
      if (!value.is_array()) throw ConfigError(here + ": expected an array");
      json list = json::array();
      for (std::size_t i = 0; i < value.size(); ++i) {
        json b = branch_default();
        merge(b, value[i], here + "[" + std::to_string(i) + "]");
        list.push_back(b);
      }
      slot = list;
    } else if (slot.is_object()) {
      merge(slot, value, here);
    } else {
      slot = value;
    }
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

std::size_t get_count(const json& j, const char* key, const std::string& path) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(path + "." + key + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

std::vector<std::uint64_t> get_seeds(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty seed list");
  std::vector<std::uint64_t> out;
  for (const auto& s : j) {
    if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError(path + ": seeds must be non-negative integers");
    out.push_back(s.get<std::uint64_t>());
  }
  return out;
}

BranchConfig parse_branch(const json& j, const std::string& path) {
  BranchConfig b;
  b.attach = get<std::string>(j, "attach", path);
  b.k = get_count(j, "k", path);
  if (b.k < 2) throw ConfigError(path + ".k: need at least 2 groups");
  try {
    b.criterion = grouping::criterion_from_string(get<std::string>(j, "criterion", path));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ".criterion: " + e.what());
  }
  const auto linkage = get<std::string>(j, "linkage", path);
  if (linkage == "mean") b.linkage = grouping::Linkage::mean;
  else if (linkage == "minimum") b.linkage = grouping::Linkage::minimum;
  else throw ConfigError(path + ".linkage: expected mean or minimum");
  if (!j.at("loss_weight").is_null()) {
    b.loss_weight = get<double>(j, "loss_weight", path);
    if (!(*b.loss_weight >= 0.0)) throw ConfigError(path + ".loss_weight: must be >= 0");
  }
  return b;
}

std::vector<BranchConfig> parse_branches(const json& list, const std::string& path) {
  std::vector<BranchConfig> out;
  for (std::size_t i = 0; i < list.size(); ++i) out.push_back(parse_branch(list[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

// Parses "text" as JSON, falling back to the raw string.
json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::group_count: return "group_count";
    case SweepAxis::criterion: return "criterion";
    case SweepAxis::attachment_position: return "attachment_position";
    case SweepAxis::branch_count: return "branch_count";
    case SweepAxis::eta: return "eta";
  }
  return "?";
}

SweepAxis sweep_axis_from_string(const std::string& text) {
  for (auto a : {SweepAxis::group_count, SweepAxis::criterion, SweepAxis::attachment_position, SweepAxis::branch_count,
                 SweepAxis::eta}) {
    if (to_string(a) == text) return a;
  }
  throw ConfigError("unknown sweep axis '" + text + "'");
}

json default_config() {
  json synthetic = {{"class_count", 16},        {"supercluster_count", 4}, {"train_size", 2000},
                    {"test_size", 1000},        {"input_dim", 64},         {"supercluster_spread", 0.7},
                    {"class_spread", 0.25},     {"sample_spread", 1.2}};
  json cifar = {{"train_files", json::array()},
                {"test_files", json::array()},
                {"class_count", 10},
                {"label_bytes", 1},
                {"label_index", 0},
                {"channels", 3},
                {"height", 32},
                {"width", 32},
                {"limit", 0}};
  json x3 = json::array();
  for (const char* at : {"b1", "b2", "b3"}) {
    json b = branch_default();
    b["attach"] = at;
    x3.push_back(b);
  }
  return {
      {"run_id", "run"},
      {"seed", 1},
      {"data", {{"source", "synthetic"}, {"dir", ""}, {"holdout_fraction", 0.2}, {"synthetic", synthetic}, {"cifar", cifar}}},
      {"model",
       {{"trunk", "mlp"}, {"width", 64}, {"depth", 3}, {"channels", {8, 16, 16, 32}}, {"branch_width", 0}}},
      {"branches", json::array({branch_default()})},
      {"train",
       {{"epochs", 20},
        {"batch_size", 64},
        {"base_rate", 0.005},
        {"peak_rate", 0.05},
        {"peak_epoch", nullptr},
        {"momentum", 0.9},
        {"eval_cadence", 1},
        {"main_weight", 1.0}}},
      {"predict",
       {{"mode", "joint_probability"},
        {"eta", 1.0},
        {"renormalization", "sum_normalize"},
        {"lc_epochs", 5},
        {"lc_batch_size", 64},
        {"lc_base_rate", 0.01},
        {"lc_peak_rate", 0.1},
        {"lc_peak_epoch", 2},
        {"lc_momentum", 0.9}}},
      {"sweep", {{"axis", "group_count"}, {"values", {2, 4, 8}}, {"seeds", {1, 2, 3}}, {"max_parallel", 1}}},
      {"suite",
       {{"seeds", {1, 2, 3}},
        {"variants",
         {"baseline", "wide", "deep", "deepwide", "gap_concat", "concat_fc", "linear_comb", "ssal_x1", "ssal_x3"}},
        {"concat_fc_hidden", 2048},
        {"wide_factor", 2},
        {"extra_depth", 2},
        {"x3_branches", x3},
        {"x3_eta", 0.3},
        {"max_parallel", 1}}},
      {"convergence", {{"threshold", nullptr}}},
  };
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  json* node = &config;
  std::string path;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    path += (path.empty() ? "" : ".") + part;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(part);
      } catch (const std::exception&) {
        throw ConfigError("override path '" + path + "': expected an array index");
      }
      if (idx >= node->size()) throw ConfigError("override path '" + path + "': index out of range");
      node = &(*node)[idx];
    } else if (node->is_object() && node->contains(part)) {
      node = &(*node)[part];
    } else {
      throw ConfigError("unknown config key '" + path + "'");
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = parse_value(assignment.substr(eq + 1));
}

json load_config_json(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  json config = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config " + path->string());
    try {
      config = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(path->string() + ": " + e.what());
    }
    // A run manifest carries the resolved config it was produced with.
    if (config.is_object() && config.contains("manifest_version")) {
      if (!config.contains("config")) throw ConfigError(path->string() + ": manifest without a config");
      config = config["config"];
    }
  }
  // Overrides address the full key space, so resolve against the defaults.
  json full = default_config();
  merge(full, config, "");
  for (const auto& o : overrides) apply_override(full, o);
  return full;
}

ExperimentConfig parse_config(const json& user) {
  json j = default_config();
  merge(j, user, "");

  ExperimentConfig c;
  c.resolved = j;
  c.run_id = get<std::string>(j, "run_id", "config");
  if (c.run_id.empty()) throw ConfigError("run_id must not be empty");
  if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0) throw ConfigError("seed: expected a non-negative integer");
  c.seed = j["seed"].get<std::uint64_t>();

  const json& d = j["data"];
  c.data.source = get<std::string>(d, "source", "data");
  if (c.data.source != "synthetic" && c.data.source != "cifar" && c.data.source != "dir")
    throw ConfigError("data.source: expected synthetic, cifar or dir");
  c.data.dir = get<std::string>(d, "dir", "data");
  c.data.holdout_fraction = get<double>(d, "holdout_fraction", "data");
  if (!(c.data.holdout_fraction > 0.0 && c.data.holdout_fraction < 1.0))
    throw ConfigError("data.holdout_fraction must lie in (0, 1)");
  const json& s = d["synthetic"];
  auto& sp = c.data.synthetic;
  sp.class_count = get_count(s, "class_count", "data.synthetic");
  sp.supercluster_count = get_count(s, "supercluster_count", "data.synthetic");
  sp.train_size = get_count(s, "train_size", "data.synthetic");
  sp.test_size = get_count(s, "test_size", "data.synthetic");
  sp.input_dim = get_count(s, "input_dim", "data.synthetic");
  sp.supercluster_spread = get<double>(s, "supercluster_spread", "data.synthetic");
  sp.class_spread = get<double>(s, "class_spread", "data.synthetic");
  sp.sample_spread = get<double>(s, "sample_spread", "data.synthetic");
  try {
    sp.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("data.synthetic: ") + e.what());
  }
  const json& cf = d["cifar"];
  auto& cs = c.data.cifar;
  cs.train_files = get<std::vector<std::string>>(cf, "train_files", "data.cifar");
  cs.test_files = get<std::vector<std::string>>(cf, "test_files", "data.cifar");
  cs.class_count = get_count(cf, "class_count", "data.cifar");
  cs.label_bytes = get_count(cf, "label_bytes", "data.cifar");
  cs.label_index = get_count(cf, "label_index", "data.cifar");
  cs.channels = get_count(cf, "channels", "data.cifar");
  cs.height = get_count(cf, "height", "data.cifar");
  cs.width = get_count(cf, "width", "data.cifar");
  cs.limit = get_count(cf, "limit", "data.cifar");
  try {
    cs.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.data.source == "cifar" && (cs.train_files.empty() || cs.test_files.empty()))
    throw ConfigError("data.cifar: train_files and test_files are required");
  if (c.data.source == "dir" && c.data.dir.empty()) throw ConfigError("data.dir is required when data.source is dir");

  const json& m = j["model"];
  c.model.trunk = get<std::string>(m, "trunk", "model");
  if (c.model.trunk != "mlp" && c.model.trunk != "cnn") throw ConfigError("model.trunk: expected mlp or cnn");
  c.model.width = get_count(m, "width", "model");
  c.model.depth = get_count(m, "depth", "model");
  c.model.channels = get<std::vector<std::size_t>>(m, "channels", "model");
  c.model.branch_width = get_count(m, "branch_width", "model");
  if (c.model.width == 0 || c.model.depth == 0) throw ConfigError("model: width and depth must be positive");
  if (c.model.channels.size() != 4) throw ConfigError("model.channels: expected four stages");

  c.branches = parse_branches(j["branches"], "branches");

  const json& t = j["train"];
  c.train.epochs = get<int>(t, "epochs", "train");
  c.train.batch_size = get_count(t, "batch_size", "train");
  c.train.schedule.base_rate = get<double>(t, "base_rate", "train");
  c.train.schedule.peak_rate = get<double>(t, "peak_rate", "train");
  // Unset: the rate peaks 40% of the way through training (epoch 8 of 20).
  c.train.schedule.peak_epoch =
      t["peak_epoch"].is_null() ? std::max(1, static_cast<int>(std::lround(0.4 * c.train.epochs)))
                                : get<int>(t, "peak_epoch", "train");
  c.train.schedule.total_epochs = std::max(c.train.epochs, 1);
  c.train.momentum = get<double>(t, "momentum", "train");
  c.train.eval_cadence = get<int>(t, "eval_cadence", "train");
  const double main_weight = get<double>(t, "main_weight", "train");
  if (main_weight != 1.0) c.train.loss_weights = training::LossWeights{main_weight, {}};

  const json& p = j["predict"];
  try {
    c.predict.mode = prediction::combiner_mode_from_string(get<std::string>(p, "mode", "predict"));
    c.predict.renormalization = prediction::renormalization_from_string(get<std::string>(p, "renormalization", "predict"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("predict: ") + e.what());
  }
  c.predict.eta = get<double>(p, "eta", "predict");
  c.predict.lc_epochs = get<int>(p, "lc_epochs", "predict");
  c.predict.lc_batch_size = get_count(p, "lc_batch_size", "predict");
  c.predict.lc_schedule = {get<double>(p, "lc_base_rate", "predict"), get<double>(p, "lc_peak_rate", "predict"),
                           get<int>(p, "lc_peak_epoch", "predict"), std::max(c.predict.lc_epochs, 1)};
  c.predict.lc_momentum = get<double>(p, "lc_momentum", "predict");
  c.train.eta = c.predict.eta;
  c.train.renormalization = c.predict.renormalization;
  try {
    c.train.validate();
    c.predict.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  const json& sw = j["sweep"];
  c.sweep.axis = sweep_axis_from_string(get<std::string>(sw, "axis", "sweep"));
  if (!sw["values"].is_array() || sw["values"].empty()) throw ConfigError("sweep.values: expected a non-empty list");
  for (const auto& v : sw["values"]) {
    const bool ok = [&] {
      switch (c.sweep.axis) {
        case SweepAxis::group_count: return v.is_number_integer() && v.get<long long>() >= 2;
        case SweepAxis::branch_count: return v.is_number_integer() && v.get<long long>() >= 0;
        case SweepAxis::criterion:
          return v.is_string() && (v == "join_similar" || v == "split_similar");
        case SweepAxis::attachment_position: return v.is_string();
        case SweepAxis::eta: return v.is_number() && v.get<double>() > 0.0 && v.get<double>() <= 1.0;
      }
      return false;
    }();
    if (!ok) throw ConfigError("sweep.values: " + v.dump() + " is not valid for axis " + to_string(c.sweep.axis));
    c.sweep.values.push_back(v);
  }
  c.sweep.seeds = get_seeds(sw["seeds"], "sweep.seeds");
  c.sweep.max_parallel = get_count(sw, "max_parallel", "sweep");
  if (c.sweep.max_parallel == 0) throw ConfigError("sweep.max_parallel must be positive");

  const json& su = j["suite"];
  c.suite.seeds = get_seeds(su["seeds"], "suite.seeds");
  c.suite.variants = get<std::vector<std::string>>(su, "variants", "suite");
  static const std::vector<std::string> known{"baseline", "wide",        "deep",    "deepwide", "gap_concat",
                                              "concat_fc", "linear_comb", "ssal_x1", "ssal_x3"};
  for (const auto& v : c.suite.variants) {
    if (std::find(known.begin(), known.end(), v) == known.end()) throw ConfigError("suite.variants: unknown variant '" + v + "'");
  }
  c.suite.concat_fc_hidden = get_count(su, "concat_fc_hidden", "suite");
  c.suite.wide_factor = get_count(su, "wide_factor", "suite");
  c.suite.extra_depth = get_count(su, "extra_depth", "suite");
  c.suite.x3_branches = parse_branches(su["x3_branches"], "suite.x3_branches");
  c.suite.x3_eta = get<double>(su, "x3_eta", "suite");
  if (!(c.suite.x3_eta > 0.0 && c.suite.x3_eta <= 1.0)) throw ConfigError("suite.x3_eta must lie in (0, 1]");
  c.suite.max_parallel = get_count(su, "max_parallel", "suite");
  if (c.suite.wide_factor < 1 || c.suite.concat_fc_hidden == 0 || c.suite.max_parallel == 0)
    throw ConfigError("suite: wide_factor, concat_fc_hidden and max_parallel must be positive");

  const json& cv = j["convergence"];
  if (!cv["threshold"].is_null()) {
    if (!cv["threshold"].is_number()) throw ConfigError("convergence.threshold: expected a number");
    c.convergence_threshold = cv["threshold"].get<double>();
  }
  return c;
}

}  // namespace ssal::harness
