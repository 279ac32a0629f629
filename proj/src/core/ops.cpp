#include "ssal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "ssal/kernels.hpp"

namespace ssal::ops {

namespace {

void check_input(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  require_finite(t.data(), std::string(op) + " input");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::vector<double>* grad_of(detail::Node& self, std::size_t parent) {
  auto& p = self.parents[parent];
  return p->requires_grad ? &p->grad : nullptr;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_input(a, "add");
  check_input(b, "add");
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  }, "add");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_input(a, "mul");
  check_input(b, "mul");
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  }, "mul");
}

Tensor scale(const Tensor& a, double factor) {
  check_input(a, "scale");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  }, "scale");
}

Tensor sum(const Tensor& a) {
  check_input(a, "sum");
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({1}, {total}, {a}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    for (double& gi : g) gi += self.grad[0];
  }, "sum");
}

Tensor relu(const Tensor& x) {
  check_input(x, "relu");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& xv = self.parents[0]->value;
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) g[i] += self.grad[i];
    }
  }, "relu");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_input(x, "softmax");
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  std::size_t outer = 1, inner = 1, len = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * len * inner + r;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        out[base + j * inner] = std::exp(in[base + j * inner] - mx);
        z += out[base + j * inner];
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  return make_result(s, std::move(out), {x}, [outer, inner, len](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < inner; ++r) {
        const std::size_t base = o * len * inner + r;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  }, "softmax");
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  check_input(logits, "cross_entropy");
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [batch, classes], got " + shape_string(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " + std::to_string(batch));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(z.size());
  double loss = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    const double* row = z.data() + n * classes;
    double mx = *std::max_element(row, row + classes);
    double sum_exp = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      double e = std::exp(row[c] - mx);
      (*probs)[n * classes + c] = e;
      sum_exp += e;
    }
    for (std::size_t c = 0; c < classes; ++c) (*probs)[n * classes + c] /= sum_exp;
    const double log_z = mx + std::log(sum_exp);
    loss += log_z - row[static_cast<std::size_t>(targets[n])];
  }
  loss /= static_cast<double>(batch);

  std::vector<int> saved(targets.begin(), targets.end());
  return make_result({1}, {loss}, {logits}, [probs, saved = std::move(saved), batch, classes](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    const double upstream = self.grad[0] / static_cast<double>(batch);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < classes; ++c) {
        double d = (*probs)[n * classes + c] - (static_cast<int>(c) == saved[n] ? 1.0 : 0.0);
        g[n * classes + c] += upstream * d;
      }
    }
  }, "cross_entropy");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_input(x, "fully_connected");
  check_input(weight, "fully_connected");
  if (x.rank() < 2 || weight.rank() != 2) {
    throw ShapeError("fully_connected: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t in = x.numel() / batch;
  const std::size_t out = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("fully_connected: input " + shape_string(x.shape()) + " has " + std::to_string(in) +
                     " features, weight " + shape_string(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out)) {
    throw ShapeError("fully_connected: bias " + shape_string(bias.shape()) + " does not match " + std::to_string(out) + " outputs");
  }
  std::vector<double> y(batch * out);
  kernels::parallel::gemm_nt(x.data(), weight.data(), y, batch, out, in);
  if (has_bias) {
    auto b = bias.data();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < out; ++o) y[n * out + o] += b[o];
  }
  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result({batch, out}, std::move(y), std::move(parents), [batch, in, out, has_bias](detail::Node& self) {
    std::vector<double> tmp;
    if (auto* gx = grad_of(self, 0)) {
      tmp.resize(batch * in);
      kernels::parallel::gemm_nn(self.grad, self.parents[1]->value, tmp, batch, in, out);
      for (std::size_t i = 0; i < tmp.size(); ++i) (*gx)[i] += tmp[i];
    }
    if (auto* gw = grad_of(self, 1)) {
      tmp.resize(out * in);
      kernels::parallel::gemm_tn(self.grad, self.parents[0]->value, tmp, out, in, batch);
      for (std::size_t i = 0; i < tmp.size(); ++i) (*gw)[i] += tmp[i];
    }
    if (has_bias) {
      if (auto* gb = grad_of(self, 2)) {
        for (std::size_t o = 0; o < out; ++o) {
          double acc = 0.0;
          for (std::size_t n = 0; n < batch; ++n) acc += self.grad[n * out + o];
          (*gb)[o] += acc;
        }
      }
    }
  }, "fully_connected");
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  check_input(x, "convolution2d");
  check_input(weight, "convolution2d");
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("convolution2d: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  if (stride == 0) throw ShapeError("convolution2d: stride must be positive");
  kernels::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), stride, padding};
  if (g.in_h + 2 * padding < g.kernel_h || g.in_w + 2 * padding < g.kernel_w) {
    throw ShapeError("convolution2d: kernel " + shape_string(weight.shape()) + " larger than padded input " +
                     shape_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    throw ShapeError("convolution2d: bias " + shape_string(bias.shape()) + " does not match weight " + shape_string(weight.shape()));
  }
  std::vector<double> y(g.batch * g.out_channels * g.out_h() * g.out_w());
  kernels::parallel::conv2d_forward(g, x.data(), weight.data(), has_bias ? bias.data() : std::span<const double>{}, y);
  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  Shape out_shape{g.batch, g.out_channels, g.out_h(), g.out_w()};
  return make_result(std::move(out_shape), std::move(y), std::move(parents), [g, has_bias](detail::Node& self) {
    std::vector<double> tmp;
    if (auto* gx = grad_of(self, 0)) {
      tmp.resize(gx->size());
      kernels::parallel::conv2d_backward_input(g, self.grad, self.parents[1]->value, tmp);
      for (std::size_t i = 0; i < tmp.size(); ++i) (*gx)[i] += tmp[i];
    }
    auto* gw = grad_of(self, 1);
    auto* gb = has_bias ? grad_of(self, 2) : nullptr;
    if (gw || gb) {
      std::vector<double> tw(self.parents[1]->value.size());
      std::vector<double> tb(gb ? g.out_channels : 0);
      kernels::parallel::conv2d_backward_weight(g, self.grad, self.parents[0]->value, tw, tb);
      if (gw) for (std::size_t i = 0; i < tw.size(); ++i) (*gw)[i] += tw[i];
      if (gb) for (std::size_t i = 0; i < tb.size(); ++i) (*gb)[i] += tb[i];
    }
  }, "convolution2d");
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  check_input(x, "max_pool2d");
  if (x.rank() != 4 || kernel == 0 || stride == 0 || x.dim(2) < kernel || x.dim(3) < kernel) {
    throw ShapeError("max_pool2d: input " + shape_string(x.shape()) + " incompatible with kernel " + std::to_string(kernel) +
                     " stride " + std::to_string(stride));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh_n = (h - kernel) / stride + 1, ow_n = (w - kernel) / stride + 1;
  std::vector<double> y(planes * oh_n * ow_n);
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
  auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        std::size_t best = p * h * w + (oh * stride) * w + ow * stride;
        for (std::size_t kh = 0; kh < kernel; ++kh) {
          for (std::size_t kw = 0; kw < kernel; ++kw) {
            std::size_t idx = p * h * w + (oh * stride + kh) * w + (ow * stride + kw);
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh_n + oh) * ow_n + ow;
        y[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  return make_result({x.dim(0), x.dim(1), oh_n, ow_n}, std::move(y), {x}, [argmax](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
  }, "max_pool2d");
}

Tensor global_avg_pool(const Tensor& x) {
  check_input(x, "global_avg_pool");
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected [N,C,H,W], got " + shape_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  std::vector<double> y(planes);
  auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
    y[p] = acc / static_cast<double>(area);
  }
  return make_result({x.dim(0), x.dim(1)}, std::move(y), {x}, [planes, area](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    const double inv = 1.0 / static_cast<double>(area);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < area; ++i) g[p * area + i] += self.grad[p] * inv;
  }, "global_avg_pool");
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState state, Mode mode) {
  check_input(x, "batch_norm2d");
  if (x.rank() != 4 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1) ||
      state.running_mean.size() != x.dim(1) || state.running_var.size() != x.dim(1)) {
    throw ShapeError("batch_norm2d: input " + shape_string(x.shape()) + " incompatible with " +
                     std::to_string(gamma.numel()) + " channels");
  }
  const std::size_t n_batch = x.dim(0), channels = x.dim(1), area = x.dim(2) * x.dim(3);
  const std::size_t count = n_batch * area;
  if (mode == Mode::train && count < 2) {
    throw ShapeError("batch_norm2d: training needs more than one value per channel, got " + shape_string(x.shape()));
  }
  auto in = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  auto x_hat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  std::vector<double> y(x.numel());

  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double acc = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t i = 0; i < area; ++i) acc += in[(n * channels + c) * area + i];
      mean = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t i = 0; i < area; ++i) {
          double d = in[(n * channels + c) * area + i] - mean;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.epsilon);
    (*inv_std)[c] = is;
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t idx = (n * channels + c) * area + i;
        (*x_hat)[idx] = (in[idx] - mean) * is;
        y[idx] = gm[c] * (*x_hat)[idx] + bt[c];
      }
  }

  const bool batch_stats = mode == Mode::train;
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [x_hat, inv_std, n_batch, channels, area, count, batch_stats](detail::Node& self) {
    const auto& gm = self.parents[1]->value;
    for (std::size_t c = 0; c < channels; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t i = 0; i < area; ++i) {
          const std::size_t idx = (n * channels + c) * area + i;
          sum_dy += self.grad[idx];
          sum_dy_xhat += self.grad[idx] * (*x_hat)[idx];
        }
      if (auto* gg = grad_of(self, 1)) (*gg)[c] += sum_dy_xhat;
      if (auto* gb = grad_of(self, 2)) (*gb)[c] += sum_dy;
      if (auto* gx = grad_of(self, 0)) {
        const double k = gm[c] * (*inv_std)[c];
        const double inv_count = 1.0 / static_cast<double>(count);
        for (std::size_t n = 0; n < n_batch; ++n)
          for (std::size_t i = 0; i < area; ++i) {
            const std::size_t idx = (n * channels + c) * area + i;
            if (batch_stats) {
              (*gx)[idx] += k * (self.grad[idx] - inv_count * sum_dy - (*x_hat)[idx] * inv_count * sum_dy_xhat);
            } else {
              (*gx)[idx] += k * self.grad[idx];
            }
          }
      }
    }
  }, "batch_norm2d");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  for (const auto& p : parts) check_input(p, "concat");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shape mismatch " + shape_string(first) + " vs " + shape_string(s));
    widths.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];

  std::vector<double> y(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    const std::size_t chunk = widths[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * chunk, chunk, y.begin() + (o * total + offset) * inner);
    offset += widths[k];
  }
  return make_result(std::move(out_shape), std::move(y), parts, [widths, outer, inner, total](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t chunk = widths[k] * inner;
      if (auto* g = grad_of(self, k)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) (*g)[o * chunk + i] += self.grad[(o * total + offset) * inner + i];
      }
      offset += widths[k];
    }
  }, "concat");
}

}  // namespace ssal::ops
