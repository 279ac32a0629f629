#include "ssal/layers.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "ssal/log.hpp"
#include "ssal/ops.hpp"

namespace ssal {

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::convolution2d: return "convolution2d";
    case LayerKind::batch_norm2d: return "batch_norm2d";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool2d: return "max_pool2d";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::softmax: return "softmax";
    case LayerKind::concat: return "concat";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::convolution2d;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::batch_norm(double momentum, double epsilon) {
  LayerSpec s;
  s.kind = LayerKind::batch_norm2d;
  s.momentum = momentum;
  s.epsilon = epsilon;
  return s;
}

LayerSpec LayerSpec::relu_layer() { return LayerSpec{}; }

LayerSpec LayerSpec::max_pool(std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::max_pool2d;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::gap() {
  LayerSpec s;
  s.kind = LayerKind::global_avg_pool;
  return s;
}

LayerSpec LayerSpec::fc(std::size_t out_features) {
  LayerSpec s;
  s.kind = LayerKind::fully_connected;
  s.out_features = out_features;
  return s;
}

LayerSpec LayerSpec::softmax_layer(std::size_t axis) {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  s.axis = axis;
  return s;
}

LayerSpec LayerSpec::inception(std::size_t channels_per_path, std::vector<std::size_t> kernels) {
  LayerSpec s;
  s.kind = LayerKind::concat;
  s.out_channels = channels_per_path;
  s.path_kernels = std::move(kernels);
  return s;
}

namespace {

[[noreturn]] void reject(const LayerSpec& spec, const Shape& in, const std::string& why) {
  throw ShapeError(std::string(kind_name(spec.kind)) + ": input shape " + shape_string(in) + " " + why);
}

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace

Shape infer_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::convolution2d: {
      if (in.size() != 3) reject(spec, in, "is not [C,H,W]");
      if (spec.out_channels == 0 || spec.kernel == 0 || spec.stride == 0) reject(spec, in, "with zero filters, kernel or stride");
      if (in[1] + 2 * spec.padding < spec.kernel || in[2] + 2 * spec.padding < spec.kernel) {
        reject(spec, in, "is smaller than kernel " + std::to_string(spec.kernel));
      }
      return {spec.out_channels, conv_extent(in[1], spec.kernel, spec.stride, spec.padding),
              conv_extent(in[2], spec.kernel, spec.stride, spec.padding)};
    }
    case LayerKind::batch_norm2d:
      if (in.size() != 3) reject(spec, in, "is not [C,H,W]");
      return in;
    case LayerKind::relu:
      return in;
    case LayerKind::max_pool2d:
      if (in.size() != 3) reject(spec, in, "is not [C,H,W]");
      if (spec.kernel == 0 || spec.stride == 0 || in[1] < spec.kernel || in[2] < spec.kernel) {
        reject(spec, in, "is incompatible with pool kernel " + std::to_string(spec.kernel));
      }
      return {in[0], (in[1] - spec.kernel) / spec.stride + 1, (in[2] - spec.kernel) / spec.stride + 1};
    case LayerKind::global_avg_pool:
      if (in.size() != 3) reject(spec, in, "is not [C,H,W]");
      return {in[0]};
    case LayerKind::fully_connected:
      if (in.empty()) reject(spec, in, "is empty");
      if (spec.out_features == 0) reject(spec, in, "with zero output neurons");
      return {spec.out_features};
    case LayerKind::softmax:
      if (spec.axis == 0 || spec.axis > in.size()) reject(spec, in, "has no axis " + std::to_string(spec.axis));
      return in;
    case LayerKind::concat: {
      if (in.size() != 3) reject(spec, in, "is not [C,H,W]");
      if (spec.path_kernels.empty() || spec.out_channels == 0) reject(spec, in, "with no convolution paths");
      for (std::size_t k : spec.path_kernels) {
        if (k % 2 == 0) reject(spec, in, "with even path kernel " + std::to_string(k));
      }
      return {spec.out_channels * spec.path_kernels.size(), in[1], in[2]};
    }
  }
  reject(spec, in, "has unknown layer kind");
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

Layer::Layer(LayerSpec spec, Shape sample_shape, std::mt19937_64& rng)
    : spec_(std::move(spec)), input_shape_(std::move(sample_shape)) {
  output_shape_ = infer_shape(spec_, input_shape_);
  // Fan-in scaled uniform weights (unit-variance preserving), zero bias.
  switch (spec_.kind) {
    case LayerKind::convolution2d: {
      const std::size_t fan_in = input_shape_[0] * spec_.kernel * spec_.kernel;
      const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      params_.push_back({"weight", uniform_tensor({spec_.out_channels, input_shape_[0], spec_.kernel, spec_.kernel}, bound, rng)});
      params_.push_back({"bias", Tensor::zeros({spec_.out_channels}, true)});
      break;
    }
    case LayerKind::concat: {
      for (std::size_t p = 0; p < spec_.path_kernels.size(); ++p) {
        const std::size_t k = spec_.path_kernels[p];
        const double bound = std::sqrt(3.0 / static_cast<double>(input_shape_[0] * k * k));
        const std::string prefix = "path" + std::to_string(p) + ".";
        params_.push_back({prefix + "weight", uniform_tensor({spec_.out_channels, input_shape_[0], k, k}, bound, rng)});
        params_.push_back({prefix + "bias", Tensor::zeros({spec_.out_channels}, true)});
      }
      break;
    }
    case LayerKind::fully_connected: {
      const std::size_t fan_in = shape_numel(input_shape_);
      const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      params_.push_back({"weight", uniform_tensor({spec_.out_features, fan_in}, bound, rng)});
      params_.push_back({"bias", Tensor::zeros({spec_.out_features}, true)});
      break;
    }
    case LayerKind::batch_norm2d: {
      const std::size_t c = input_shape_[0];
      params_.push_back({"gamma", Tensor::full({c}, 1.0, true)});
      params_.push_back({"beta", Tensor::zeros({c}, true)});
      running_mean_.assign(c, 0.0);
      running_var_.assign(c, 1.0);
      break;
    }
    default:
      break;
  }
}

std::vector<NamedTensor> Layer::parameters() const { return params_; }

std::vector<NamedBuffer> Layer::buffers() {
  if (spec_.kind != LayerKind::batch_norm2d) return {};
  return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

std::size_t Layer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Layer::zero_parameters() {
  for (auto& p : params_) {
    auto d = p.tensor.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
}

Tensor apply_layer(Layer& layer, const Tensor& input, Mode mode) {
  const LayerSpec& spec = layer.spec_;
  const Shape& s = input.shape();
  if (s.size() != layer.input_shape_.size() + 1 || !std::equal(s.begin() + 1, s.end(), layer.input_shape_.begin())) {
    throw ShapeError(std::string(kind_name(spec.kind)) + ": got input " + shape_string(s) + ", layer expects [N]" +
                     shape_string(layer.input_shape_));
  }
  require_finite(input.data(), std::string(kind_name(spec.kind)) + " input");
  auto& p = layer.params_;
  switch (spec.kind) {
    case LayerKind::convolution2d:
      return ops::conv2d(input, p[0].tensor, p[1].tensor, spec.stride, spec.padding);
    case LayerKind::batch_norm2d: {
      if (mode == Mode::train) {
        layer.has_batch_statistics_ = true;
      } else if (!layer.has_batch_statistics_ && !layer.warned_untrained_) {
        layer.warned_untrained_ = true;
        warn("batch_norm2d evaluated before any training step; running statistics are at their initial values");
      }
      return ops::batch_norm2d(input, p[0].tensor, p[1].tensor,
                               {layer.running_mean_, layer.running_var_, spec.momentum, spec.epsilon}, mode);
    }
    case LayerKind::relu:
      return ops::relu(input);
    case LayerKind::max_pool2d:
      return ops::max_pool2d(input, spec.kernel, spec.stride);
    case LayerKind::global_avg_pool:
      return ops::global_avg_pool(input);
    case LayerKind::fully_connected:
      return ops::linear(input, p[0].tensor, p[1].tensor);
    case LayerKind::softmax:
      return ops::softmax(input, spec.axis);
    case LayerKind::concat: {
      std::vector<Tensor> paths;
      for (std::size_t i = 0; i < spec.path_kernels.size(); ++i) {
        paths.push_back(ops::conv2d(input, p[2 * i].tensor, p[2 * i + 1].tensor, 1, spec.path_kernels[i] / 2));
      }
      return ops::concat(paths, 1);
    }
  }
  throw ShapeError("unknown layer kind");
}

std::vector<Layer> make_layers(const std::vector<LayerSpec>& specs, const Shape& sample_shape, std::mt19937_64& rng) {
  std::vector<Layer> layers;
  layers.reserve(specs.size());
  Shape shape = sample_shape;
  for (const auto& spec : specs) {
    layers.emplace_back(spec, shape, rng);
    shape = layers.back().output_shape();
  }
  return layers;
}

Tensor apply_layers(std::vector<Layer>& layers, const Tensor& input, Mode mode) {
  Tensor x = input;
  for (auto& layer : layers) x = apply_layer(layer, x, mode);
  return x;
}

}  // namespace ssal
