#include "ssal/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <json.hpp>

#include "ssal/digest.hpp"
#include "ssal/ops.hpp"

namespace ssal::training {

namespace {

std::vector<grouping::GroupMapping> output_mappings(const model::SsalNetwork& net) {
  std::vector<grouping::GroupMapping> out;
  for (std::size_t b = 0; b < net.output_branch_count(); ++b) out.push_back(net.branch_mapping(b));
  return out;
}

std::vector<std::vector<int>> map_labels(std::span<const int> labels, const std::vector<grouping::GroupMapping>& gammas) {
  std::vector<std::vector<int>> out;
  for (const auto& g : gammas) out.push_back(grouping::group_labels(labels, g));
  return out;
}

std::vector<std::size_t> iota_range(std::size_t start, std::size_t count) {
  std::vector<std::size_t> v(count);
  std::iota(v.begin(), v.end(), start);
  return v;
}

void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, ",%.6f", v);
  out += buf;
}

void check_compatible(const model::SsalNetwork& net, const Dataset& data, const char* role) {
  data.validate();
  if (data.class_count != net.class_count()) {
    throw std::invalid_argument(std::string(role) + " set has " + std::to_string(data.class_count) +
                                " classes, network has " + std::to_string(net.class_count()));
  }
  if (data.sample_shape != net.spec().input_shape) {
    throw std::invalid_argument(std::string(role) + " samples have shape " + shape_string(data.sample_shape) +
                                ", network expects " + shape_string(net.spec().input_shape));
  }
  for (std::size_t b = 0; b < net.spec().branches.size(); ++b) {
    if (net.branch_mapping(b).class_count() != data.class_count) {
      throw std::invalid_argument("branch " + std::to_string(b) + " mapping covers " +
                                  std::to_string(net.branch_mapping(b).class_count()) + " classes, " + role +
                                  " set has " + std::to_string(data.class_count));
    }
  }
}

}  // namespace

LossWeights LossWeights::defaults(const model::SsalNetwork& net) {
  LossWeights w;
  const std::size_t n = net.output_branch_count();
  for (std::size_t b = 0; b < n; ++b) {
    const auto& declared = net.spec().branches[b].loss_weight;
    w.branches.push_back(declared ? *declared : 1.0 / static_cast<double>(n));
  }
  return w;
}

void LossWeights::validate(std::size_t branch_count) const {
  if (branches.size() != branch_count) {
    throw std::invalid_argument(std::to_string(branches.size()) + " branch loss weights for " +
                                std::to_string(branch_count) + " branches");
  }
  bool any = main > 0.0;
  if (!(main >= 0.0)) throw std::invalid_argument("main loss weight must be >= 0");
  for (double w : branches) {
    if (!(w >= 0.0)) throw std::invalid_argument("branch loss weights must be >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw std::invalid_argument("all loss weights are zero");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (eval_cadence < 1) throw std::invalid_argument("eval_cadence must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in (0, 1]");
  schedule.validate();
  if (schedule.total_epochs < epochs - 1) {
    throw std::invalid_argument("schedule covers " + std::to_string(schedule.total_epochs) + " epochs, training runs " +
                                std::to_string(epochs));
  }
}

JointLoss joint_loss(const Tensor& main_logits, const std::vector<Tensor>& branch_logits, std::span<const int> labels,
                     const std::vector<std::vector<int>>& group_labels,
                     const std::vector<grouping::GroupMapping>& gammas, const LossWeights& weights) {
  const std::size_t n = branch_logits.size();
  if (group_labels.size() != n || gammas.size() != n) {
    throw std::invalid_argument("joint_loss: " + std::to_string(n) + " branches, " +
                                std::to_string(group_labels.size()) + " group-label vectors, " +
                                std::to_string(gammas.size()) + " mappings");
  }
  weights.validate(n);
  for (std::size_t b = 0; b < n; ++b) {
    if (group_labels[b].size() != labels.size()) throw std::invalid_argument("joint_loss: group label count mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (group_labels[b][i] != gammas[b].group_of(labels[i])) {
        throw std::invalid_argument("joint_loss: branch " + std::to_string(b) + " sample " + std::to_string(i) +
                                    " has group " + std::to_string(group_labels[b][i]) + " but gamma(" +
                                    std::to_string(labels[i]) + ") = " + std::to_string(gammas[b].group_of(labels[i])));
      }
    }
  }
  JointLoss out;
  out.main = ops::cross_entropy(main_logits, labels);
  Tensor total;
  if (weights.main > 0.0) total = weights.main == 1.0 ? out.main : ops::scale(out.main, weights.main);
  for (std::size_t b = 0; b < n; ++b) {
    out.branches.push_back(ops::cross_entropy(branch_logits[b], group_labels[b]));
    if (weights.branches[b] == 0.0) continue;
    Tensor term = weights.branches[b] == 1.0 ? out.branches[b] : ops::scale(out.branches[b], weights.branches[b]);
    total = total.defined() ? ops::add(total, term) : term;
  }
  out.total = total;
  return out;
}

std::string TrainLog::csv_header(std::size_t branch_count) {
  std::string h = "run_id,epoch,lr,loss_total,loss_main";
  for (std::size_t b = 1; b <= branch_count; ++b) h += ",loss_g" + std::to_string(b);
  h += ",acc_main";
  for (std::size_t b = 1; b <= branch_count; ++b) h += ",acc_g" + std::to_string(b);
  h += ",acc_joint";
  for (std::size_t b = 1; b <= branch_count; ++b) h += ",acc_mapped_g" + std::to_string(b);
  for (std::size_t b = 1; b <= branch_count; ++b) h += ",acc_best_g" + std::to_string(b);
  return h + '\n';
}

std::string TrainLog::csv_rows() const {
  std::string out;
  for (const auto& r : rows) {
    out += run_id + ',' + std::to_string(r.epoch);
    append_number(out, r.lr);
    append_number(out, r.loss_total);
    append_number(out, r.loss_main);
    for (double v : r.loss_branches) append_number(out, v);
    append_number(out, r.acc_main);
    for (double v : r.acc_branches) append_number(out, v);
    append_number(out, r.acc_joint);
    for (double v : r.acc_mapped_main) append_number(out, v);
    for (double v : r.acc_best_group) append_number(out, v);
    out += '\n';
  }
  return out;
}

EpochMetrics evaluate(model::SsalNetwork& net, const Dataset& data, double eta,
                      prediction::Renormalization renormalization) {
  prediction::CombinerConfig cc;
  cc.eta = eta;
  cc.renormalization = renormalization;
  const auto p = prediction::predict(net, data, cc);
  const auto gammas = output_mappings(net);
  EpochMetrics m;
  m.acc_main = prediction::accuracy(p.main_label, data.labels);
  m.acc_joint = prediction::accuracy(p.joint_label, data.labels);
  for (std::size_t b = 0; b < gammas.size(); ++b) {
    const auto truth = grouping::group_labels(data.labels, gammas[b]);
    const auto mapped = grouping::group_labels(p.main_label, gammas[b]);
    m.acc_branches.push_back(prediction::accuracy(p.group_label[b], truth));
    m.acc_mapped_main.push_back(prediction::accuracy(mapped, truth));
    m.acc_best_group.push_back(std::max(m.acc_branches.back(), m.acc_mapped_main.back()));
  }
  return m;
}

namespace {

struct LossSums {
  double total = 0.0, main = 0.0;
  std::vector<double> branches;
  std::size_t samples = 0;

  void add(const JointLoss& l, std::size_t n) {
    const double w = static_cast<double>(n);
    total += l.total.item() * w;
    main += l.main.item() * w;
    branches.resize(l.branches.size(), 0.0);
    for (std::size_t b = 0; b < l.branches.size(); ++b) branches[b] += l.branches[b].item() * w;
    samples += n;
  }

  void write(EpochMetrics& m) const {
    const double n = static_cast<double>(samples);
    m.loss_total = total / n;
    m.loss_main = main / n;
    for (double b : branches) m.loss_branches.push_back(b / n);
  }
};

}  // namespace

TrainLog train(model::SsalNetwork& net, const Dataset& train_set, const Dataset& eval_set, const TrainConfig& config) {
  config.validate();
  check_compatible(net, train_set, "training");
  check_compatible(net, eval_set, "evaluation");
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  if (eval_set.empty()) throw std::invalid_argument("evaluation set is empty");
  const auto gammas = output_mappings(net);
  const LossWeights weights = config.loss_weights ? *config.loss_weights : LossWeights::defaults(net);
  weights.validate(gammas.size());

  TrainLog log{config.run_id, gammas.size(), {}};
  auto record = [&](int epoch, double lr, const LossSums& sums) {
    EpochMetrics m = evaluate(net, eval_set, config.eta, config.renormalization);
    m.epoch = epoch;
    m.lr = lr;
    sums.write(m);
    log.rows.push_back(std::move(m));
  };

  {
    NoGradGuard guard;
    LossSums sums;
    for (std::size_t start = 0; start < train_set.size(); start += 256) {
      const auto idx = iota_range(start, std::min<std::size_t>(256, train_set.size() - start));
      const auto y = train_set.labels_of(idx);
      auto out = net.forward(train_set.batch(idx), Mode::eval);
      sums.add(joint_loss(out.main_logits, out.branch_logits, y, map_labels(y, gammas), gammas, weights), idx.size());
    }
    record(0, 0.0, sums);
  }

  Sgd sgd(net.parameter_tensors(), config.momentum);
  std::mt19937_64 shuffle(derive_seed(config.seed, SeedStream::shuffle));
  std::vector<std::size_t> order = iota_range(0, train_set.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    const double lr = config.schedule.rate_at(epoch - 1);
    LossSums sums;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(config.batch_size, order.size() - start));
      const auto y = train_set.labels_of(idx);
      try {
        auto out = net.forward(train_set.batch(idx), Mode::train);
        auto loss = joint_loss(out.main_logits, out.branch_logits, y, map_labels(y, gammas), gammas, weights);
        if (!std::isfinite(loss.total.item())) throw NumericError("loss is " + std::to_string(loss.total.item()));
        sgd.zero_grad();
        backward(loss.total);
        sgd.step(lr);
        sums.add(loss, idx.size());
      } catch (const NumericError& e) {
        throw TrainingError("run " + config.run_id + " epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch_index) + ": " + e.what());
      }
    }
    if (epoch % config.eval_cadence == 0 || epoch == config.epochs) record(epoch, lr, sums);
  }
  return log;
}

grouping::ConfusionMatrix confusion_of(model::SsalNetwork& net, const Dataset& data) {
  prediction::CombinerConfig cc;
  cc.mode = prediction::CombinerMode::main_only;
  const auto p = prediction::predict(net, data, cc);
  return grouping::confusion_from_predictions(p.main_label, data.labels, data.class_count);
}

model::NetworkSpec with_branches(model::NetworkSpec spec, const std::vector<BranchPlan>& plans,
                                 const std::vector<grouping::GroupMapping>& gammas) {
  if (plans.size() != gammas.size()) throw std::invalid_argument("one mapping per branch plan required");
  // Attachment shapes come from a throwaway branch-free instance.
  model::NetworkSpec probe = spec;
  probe.branches.clear();
  probe.fusion = model::Fusion::none;
  const model::SsalNetwork shapes(probe, 0);
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto& plan = plans[i];
    const Shape& at = shapes.attachment_shapes()[shapes.attachment_index(plan.attachment_point)];
    std::vector<LayerSpec> layers;
    if (plan.hidden) {
      layers = *plan.hidden;
      layers.push_back(LayerSpec::fc(gammas[i].k));
    } else {
      layers = model::default_branch(at, gammas[i].k, plan.width);
    }
    spec.branches.push_back({plan.attachment_point, std::move(layers), gammas[i], plan.loss_weight});
  }
  return spec;
}

std::vector<grouping::GroupMapping> derive_mappings(const grouping::ConfusionMatrix& confusion,
                                                   const std::vector<BranchPlan>& plans, std::uint64_t seed) {
  const auto normalized = confusion.is_normalized() ? confusion : confusion.normalized();
  std::vector<grouping::GroupMapping> gammas;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    grouping::GroupingConfig gc = plans[i].grouping;
    gc.tie_break_seed = derive_seed(seed, SeedStream::tie_break, i);
    gammas.push_back(grouping::balanced_greedy_cluster(grouping::distance_matrix(normalized, gc.criterion), gc));
  }
  return gammas;
}

PipelineResult two_phase_pipeline(const model::NetworkSpec& baseline, const std::vector<BranchPlan>& plans,
                                  const PipelineData& data, const TrainConfig& config) {
  if (!baseline.branches.empty()) throw std::invalid_argument("pipeline baseline must be branch-free");
  if (!plans.empty() && data.holdout.empty()) throw std::invalid_argument("pipeline needs a held-out split");
  const std::uint64_t init_seed = derive_seed(config.seed, SeedStream::init);

  PipelineResult r{{}, std::nullopt, model::build_network(baseline, init_seed), {}, std::nullopt, std::nullopt, {}, {}};
  TrainConfig base_cfg = config;
  base_cfg.run_id = config.run_id + "/baseline";
  base_cfg.loss_weights.reset();
  r.baseline_log = train(r.baseline, data.fit, data.test, base_cfg);
  r.baseline_digest = r.baseline.digest();

  nlohmann::json report;
  report["run_id"] = config.run_id;
  report["seed"] = config.seed;
  report["baseline"] = {{"checkpoint_sha256", r.baseline_digest},
                        {"parameters", r.baseline.parameter_counts().total()},
                        {"acc_main", r.baseline_log.final().acc_main}};

  if (!plans.empty()) {
    r.confusion = confusion_of(r.baseline, data.holdout);
    report["confusion_sha256"] = r.confusion->normalized().digest();
    report["holdout_samples"] = data.holdout.size();
    r.gammas = derive_mappings(*r.confusion, plans, config.seed);
    nlohmann::json mappings = nlohmann::json::array();
    for (std::size_t i = 0; i < plans.size(); ++i) {
      mappings.push_back({{"branch", i + 1},
                          {"attachment_point", plans[i].attachment_point},
                          {"k", r.gammas[i].k},
                          {"criterion", grouping::to_string(r.gammas[i].criterion)},
                          {"tie_break_seed", r.gammas[i].seed},
                          {"mapping_sha256", sha256_hex(grouping::mapping_to_text(r.gammas.back()))},
                          {"baseline_checkpoint_sha256", r.baseline_digest}});
    }
    report["mappings"] = mappings;

    r.ssal.emplace(model::build_network(with_branches(baseline, plans, r.gammas), init_seed));
    TrainConfig ssal_cfg = config;
    ssal_cfg.run_id = config.run_id + "/ssal";
    r.ssal_log = train(*r.ssal, data.fit, data.test, ssal_cfg);
    const auto& last = r.ssal_log->final();
    report["ssal"] = {{"checkpoint_sha256", r.ssal->digest()},
                      {"parameters", r.ssal->parameter_counts().total()},
                      {"acc_main", last.acc_main},
                      {"acc_joint", last.acc_joint},
                      {"acc_groups", last.acc_branches}};
  }
  r.report = report.dump(2) + "\n";
  return r;
}

}  // namespace ssal::training
