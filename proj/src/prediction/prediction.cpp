#include "ssal/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ssal/ops.hpp"

namespace ssal::prediction {

namespace {

void check_inputs(std::size_t classes, const std::vector<std::span<const double>>& branches,
                  const std::vector<grouping::GroupMapping>& gammas, double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in (0, 1], got " + std::to_string(eta));
  if (branches.size() != gammas.size()) {
    throw std::invalid_argument(std::to_string(branches.size()) + " branch outputs for " +
                                std::to_string(gammas.size()) + " mappings");
  }
  for (std::size_t b = 0; b < gammas.size(); ++b) {
    if (gammas[b].class_count() != classes || branches[b].size() != gammas[b].k) {
      throw std::invalid_argument("branch " + std::to_string(b) + ": output width " +
                                  std::to_string(branches[b].size()) + " / mapping (" +
                                  std::to_string(gammas[b].class_count()) + " classes, k=" +
                                  std::to_string(gammas[b].k) + ") mismatch with " + std::to_string(classes) +
                                  " classes");
    }
  }
}

// Row-wise log-softmax of [N, W] logits.
std::vector<double> log_softmax_rows(std::span<const double> logits, std::size_t width) {
  std::vector<double> out(logits.size());
  for (std::size_t r = 0; r * width < logits.size(); ++r) {
    const auto row = logits.subspan(r * width, width);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    const double lz = m + std::log(z);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = row[j] - lz;
  }
  return out;
}

std::vector<double> exp_all(std::vector<double> v) {
  for (double& x : v) x = std::exp(x);
  return v;
}

}  // namespace

std::string to_string(CombinerMode mode) {
  switch (mode) {
    case CombinerMode::main_only: return "main_only";
    case CombinerMode::joint_probability: return "joint_probability";
    case CombinerMode::linear_combination: return "linear_combination";
  }
  return "main_only";
}

CombinerMode combiner_mode_from_string(const std::string& text) {
  if (text == "main_only") return CombinerMode::main_only;
  if (text == "joint_probability") return CombinerMode::joint_probability;
  if (text == "linear_combination") return CombinerMode::linear_combination;
  throw std::invalid_argument("unknown combiner mode '" + text + "'");
}

std::string to_string(Renormalization r) { return r == Renormalization::softmax ? "softmax" : "sum_normalize"; }

Renormalization renormalization_from_string(const std::string& text) {
  if (text == "softmax") return Renormalization::softmax;
  if (text == "sum_normalize") return Renormalization::sum_normalize;
  throw std::invalid_argument("unknown renormalization '" + text + "'");
}

void CombinerConfig::validate() const {
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in (0, 1], got " + std::to_string(eta));
  if (lc_epochs < 1) throw std::invalid_argument("lc_epochs must be >= 1");
  if (lc_batch_size < 1) throw std::invalid_argument("lc_batch_size must be >= 1");
  lc_schedule.validate();
  if (lc_schedule.total_epochs < lc_epochs - 1) throw std::invalid_argument("lc schedule shorter than lc_epochs");
}

std::vector<double> joint_scores(std::span<const double> f, const std::vector<std::span<const double>>& branches,
                                 const std::vector<grouping::GroupMapping>& gammas, double eta) {
  check_inputs(f.size(), branches, gammas, eta);
  std::vector<double> scores(f.begin(), f.end());
  for (std::size_t b = 0; b < branches.size(); ++b) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double g = branches[b][static_cast<std::size_t>(gammas[b].gamma[i])];
      scores[i] *= eta == 1.0 ? g : std::pow(g, eta);
    }
  }
  return scores;
}

std::vector<double> renormalize(std::span<const double> scores, Renormalization rule) {
  if (scores.empty()) throw std::invalid_argument("renormalize: empty score vector");
  std::vector<double> out(scores.begin(), scores.end());
  if (rule == Renormalization::sum_normalize) {
    const double total = std::accumulate(out.begin(), out.end(), 0.0);
    if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("renormalize: scores sum to " + std::to_string(total));
    for (double& v : out) v /= total;
    return out;
  }
  const double m = *std::max_element(out.begin(), out.end());
  double z = 0.0;
  for (double& v : out) z += (v = std::exp(v - m));
  for (double& v : out) v /= z;
  return out;
}

std::vector<double> joint_probability(std::span<const double> f, const std::vector<std::span<const double>>& branches,
                                      const std::vector<grouping::GroupMapping>& gammas, double eta,
                                      Renormalization rule) {
  return renormalize(joint_scores(f, branches, gammas, eta), rule);
}

std::vector<double> joint_probability_from_log(std::span<const double> log_f,
                                               const std::vector<std::span<const double>>& log_branches,
                                               const std::vector<grouping::GroupMapping>& gammas, double eta,
                                               Renormalization rule) {
  check_inputs(log_f.size(), log_branches, gammas, eta);
  std::vector<double> ls(log_f.begin(), log_f.end());
  for (std::size_t b = 0; b < log_branches.size(); ++b)
    for (std::size_t i = 0; i < ls.size(); ++i) ls[i] += eta * log_branches[b][static_cast<std::size_t>(gammas[b].gamma[i])];
  if (rule == Renormalization::softmax) return renormalize(exp_all(std::move(ls)), Renormalization::softmax);
  const double m = *std::max_element(ls.begin(), ls.end());
  double z = 0.0;
  for (double& v : ls) z += (v = std::exp(v - m));
  for (double& v : ls) v /= z;
  return ls;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

LinearCombiner::LinearCombiner(std::size_t input_width, std::size_t class_count)
    : input_width_(input_width), class_count_(class_count) {
  if (input_width < class_count || class_count == 0) throw std::invalid_argument("combiner input narrower than class count");
  std::vector<double> w(class_count * input_width, 0.0);
  for (std::size_t c = 0; c < class_count; ++c) w[c * input_width + c] = 1.0;
  weight_ = Tensor({class_count, input_width}, std::move(w), true);
  bias_ = Tensor::zeros({class_count}, true);
}

Tensor LinearCombiner::logits(const Tensor& inputs) const { return ops::linear(inputs, weight_, bias_); }

Tensor combiner_inputs(model::SsalNetwork& net, const Tensor& batch) {
  NoGradGuard guard;
  auto out = net.forward(batch, Mode::eval);
  const std::size_t n = batch.dim(0);
  std::vector<std::vector<double>> heads;
  std::vector<std::size_t> widths;
  heads.push_back(log_softmax_rows(out.main_logits.data(), net.class_count()));
  widths.push_back(net.class_count());
  for (const auto& g : out.branch_logits) {
    heads.push_back(log_softmax_rows(g.data(), g.dim(1)));
    widths.push_back(g.dim(1));
  }
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  std::vector<double> values;
  values.reserve(n * total);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t h = 0; h < heads.size(); ++h)
      values.insert(values.end(), heads[h].begin() + static_cast<std::ptrdiff_t>(r * widths[h]),
                    heads[h].begin() + static_cast<std::ptrdiff_t>((r + 1) * widths[h]));
  return Tensor({n, total}, std::move(values));
}

namespace {

Tensor inputs_for(model::SsalNetwork& net, const Dataset& data, std::size_t batch_size) {
  std::vector<double> values;
  std::size_t width = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor part = combiner_inputs(net, data.batch(idx));
    width = part.dim(1);
    values.insert(values.end(), part.data().begin(), part.data().end());
  }
  return Tensor({data.size(), width}, std::move(values));
}

}  // namespace

LinearCombiner fit_linear_combiner(model::SsalNetwork& net, const Dataset& split, const CombinerConfig& config) {
  config.validate();
  if (split.empty()) throw std::invalid_argument("fit_linear_combiner: empty split");
  const Tensor inputs = inputs_for(net, split, 256);
  const std::size_t width = inputs.dim(1);
  LinearCombiner lc(width, net.class_count());
  Sgd sgd({lc.weight(), lc.bias()}, config.lc_momentum);
  std::mt19937_64 rng(config.lc_seed);
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.lc_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double rate = config.lc_schedule.rate_at(epoch - 1);
    for (std::size_t start = 0; start < order.size(); start += config.lc_batch_size) {
      const std::size_t n = std::min(config.lc_batch_size, order.size() - start);
      std::vector<double> rows(n * width);
      std::vector<int> targets(n);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t i = order[start + r];
        std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(i * width), width,
                    rows.begin() + static_cast<std::ptrdiff_t>(r * width));
        targets[r] = split.labels[i];
      }
      Tensor loss = ops::cross_entropy(lc.logits(Tensor({n, width}, std::move(rows))), targets);
      sgd.zero_grad();
      backward(loss);
      sgd.step(rate);
    }
  }
  lc.mark_fitted();
  return lc;
}

const std::vector<int>& Prediction::labels(CombinerMode mode) const {
  switch (mode) {
    case CombinerMode::main_only: return main_label;
    case CombinerMode::joint_probability: return joint_label;
    case CombinerMode::linear_combination:
      if (lc_label.size() != main_label.size()) throw std::invalid_argument("prediction has no combiner output");
      return lc_label;
  }
  return main_label;
}

std::span<const double> Prediction::probs(CombinerMode mode, std::size_t sample) const {
  const std::vector<double>& all = mode == CombinerMode::main_only           ? main_probs
                                   : mode == CombinerMode::joint_probability ? joint_probs
                                                                             : lc_probs;
  return std::span<const double>(all).subspan(sample * class_count, class_count);
}

Prediction predict(model::SsalNetwork& net, const Tensor& batch, const CombinerConfig& config,
                   const LinearCombiner* combiner) {
  if (!(config.eta > 0.0 && config.eta <= 1.0)) throw std::invalid_argument("eta must lie in (0, 1]");
  const bool use_lc = combiner != nullptr && combiner->fitted();
  if (config.mode == CombinerMode::linear_combination && !use_lc) {
    throw std::invalid_argument("linear_combination prediction needs a fitted combiner");
  }
  const std::size_t n = batch.dim(0), c = net.class_count();
  std::vector<grouping::GroupMapping> gammas;
  for (std::size_t b = 0; b < net.output_branch_count(); ++b) gammas.push_back(net.branch_mapping(b));

  Tensor inputs = combiner_inputs(net, batch);
  const std::size_t width = inputs.dim(1);
  const auto in = inputs.data();

  Prediction p;
  p.class_count = c;
  p.group_label.resize(gammas.size());
  p.branch_probs.resize(gammas.size());
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = in.subspan(r * width, width);
    const auto log_f = row.subspan(0, c);
    std::vector<std::span<const double>> log_g;
    std::size_t offset = c;
    for (std::size_t b = 0; b < gammas.size(); ++b) {
      log_g.push_back(row.subspan(offset, gammas[b].k));
      offset += gammas[b].k;
      const auto probs = exp_all({log_g.back().begin(), log_g.back().end()});
      p.group_label[b].push_back(static_cast<int>(argmax(probs)));
      p.branch_probs[b].insert(p.branch_probs[b].end(), probs.begin(), probs.end());
    }
    const auto f = exp_all({log_f.begin(), log_f.end()});
    p.main_label.push_back(static_cast<int>(argmax(f)));
    p.main_probs.insert(p.main_probs.end(), f.begin(), f.end());
    const auto joint = joint_probability_from_log(log_f, log_g, gammas, config.eta, config.renormalization);
    p.joint_label.push_back(static_cast<int>(argmax(joint)));
    p.joint_probs.insert(p.joint_probs.end(), joint.begin(), joint.end());
  }

  if (use_lc) {
    if (combiner->input_width() != width || combiner->class_count() != c) {
      throw std::invalid_argument("combiner width does not match the network's heads");
    }
    NoGradGuard guard;
    Tensor probs = ops::softmax(combiner->logits(inputs), 1);
    p.lc_probs.assign(probs.data().begin(), probs.data().end());
    for (std::size_t r = 0; r < n; ++r)
      p.lc_label.push_back(static_cast<int>(argmax(std::span<const double>(p.lc_probs).subspan(r * c, c))));
  }
  return p;
}

Prediction predict(model::SsalNetwork& net, const Dataset& data, const CombinerConfig& config,
                   const LinearCombiner* combiner, std::size_t batch_size) {
  Prediction all;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Prediction part = predict(net, data.batch(idx), config, combiner);
    if (start == 0) {
      all = std::move(part);
      continue;
    }
    auto append = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    append(all.main_label, part.main_label);
    append(all.joint_label, part.joint_label);
    append(all.lc_label, part.lc_label);
    append(all.main_probs, part.main_probs);
    append(all.joint_probs, part.joint_probs);
    append(all.lc_probs, part.lc_probs);
    for (std::size_t b = 0; b < part.group_label.size(); ++b) {
      append(all.group_label[b], part.group_label[b]);
      append(all.branch_probs[b], part.branch_probs[b]);
    }
  }
  return all;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::string prediction_dump_csv(const Prediction& p, std::span<const int> truth,
                                const std::vector<grouping::GroupMapping>& gammas) {
  if (truth.size() != p.main_label.size()) throw std::invalid_argument("prediction dump: label count mismatch");
  if (gammas.size() != p.group_label.size()) throw std::invalid_argument("prediction dump: mapping count mismatch");
  std::string out = "sample_id,true_label,main_pred,joint_pred,lc_pred";
  for (std::size_t b = 0; b < gammas.size(); ++b) out += ",group_pred_" + std::to_string(b + 1);
  for (std::size_t b = 0; b < gammas.size(); ++b) out += ",group_true_" + std::to_string(b + 1);
  out += '\n';
  for (std::size_t i = 0; i < truth.size(); ++i) {
    out += std::to_string(i) + ',' + std::to_string(truth[i]) + ',' + std::to_string(p.main_label[i]) + ',' +
           std::to_string(p.joint_label[i]) + ',';
    if (!p.lc_label.empty()) out += std::to_string(p.lc_label[i]);
    for (const auto& g : p.group_label) out += ',' + std::to_string(g[i]);
    for (const auto& m : gammas) out += ',' + std::to_string(m.group_of(truth[i]));
    out += '\n';
  }
  return out;
}

}  // namespace ssal::prediction
