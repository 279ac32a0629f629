#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ssal/tensor.hpp"

namespace ssal {

enum class LayerKind {
  convolution2d,
  batch_norm2d,
  relu,
  max_pool2d,
  global_avg_pool,
  fully_connected,
  softmax,
  // Inception-like block: parallel same-padded convolutions with distinct
  // kernel sizes, joined along the channel axis.
  concat,
};

std::string_view kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out_channels = 0;  // convolution2d; per path for concat
  std::size_t kernel = 3;        // convolution2d, max_pool2d
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_features = 0;  // fully_connected
  double momentum = 0.1;         // batch_norm2d running-statistics rate
  double epsilon = 1e-5;
  std::size_t axis = 1;                   // softmax, in batch-shape coordinates
  std::vector<std::size_t> path_kernels;  // concat

  static LayerSpec conv(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec batch_norm(double momentum = 0.1, double epsilon = 1e-5);
  static LayerSpec relu_layer();
  static LayerSpec max_pool(std::size_t kernel = 2, std::size_t stride = 2);
  static LayerSpec gap();
  static LayerSpec fc(std::size_t out_features);
  static LayerSpec softmax_layer(std::size_t axis = 1);
  static LayerSpec inception(std::size_t channels_per_path, std::vector<std::size_t> kernels);

  bool operator==(const LayerSpec&) const = default;
};

// Per-sample output shape (no batch axis) of `spec` applied to a per-sample
// input shape. Throws ShapeError naming the layer kind and the shapes.
Shape infer_shape(const LayerSpec& spec, const Shape& sample_shape);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

// A LayerSpec bound to an input shape, holding its learnable parameters and,
// for batch_norm2d, the running statistics used in eval mode.
class Layer {
 public:
  Layer(LayerSpec spec, Shape sample_shape, std::mt19937_64& rng);

  const LayerSpec& spec() const { return spec_; }
  LayerKind kind() const { return spec_.kind; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedBuffer> buffers();
  std::size_t parameter_count() const;

  // Sets every parameter value to zero (used by ablation tests).
  void zero_parameters();
  // Marks batch-norm running statistics as meaningful (e.g. restored from a
  // checkpoint) so eval mode does not warn.
  void mark_statistics_loaded() { has_batch_statistics_ = true; }

  friend Tensor apply_layer(Layer& layer, const Tensor& input, Mode mode);

 private:
  LayerSpec spec_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<NamedTensor> params_;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
  bool has_batch_statistics_ = false;
  bool warned_untrained_ = false;
};

// Applies one layer to a batch [N, ...input_shape]. Records the operation so
// gradients reach the input and the layer's parameters.
Tensor apply_layer(Layer& layer, const Tensor& input, Mode mode);

// Instantiates layers in order, chaining shapes.
std::vector<Layer> make_layers(const std::vector<LayerSpec>& specs, const Shape& sample_shape, std::mt19937_64& rng);
Tensor apply_layers(std::vector<Layer>& layers, const Tensor& input, Mode mode);

}  // namespace ssal
