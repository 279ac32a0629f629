#pragma once

#include <cstddef>
#include <span>

// Dense inner loops behind the differentiable ops. Two builds of every
// kernel exist: `reference` is plain serial code kept as the test oracle and
// benchmark baseline; `parallel` splits the outermost output loop across
// OpenMP threads. Each output element is reduced in the same order in both,
// so results are bitwise identical for any thread count.
namespace ssal::kernels {

struct ConvGeometry {
  std::size_t batch, in_channels, in_h, in_w;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
};

#define SSAL_KERNEL_DECLS                                                                           \
  /* c[m,n] = sum_k a[m,k] * b[n,k] */                                                             \
  void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,          \
               std::size_t m, std::size_t n, std::size_t k);                                       \
  /* c[m,n] = sum_k a[m,k] * b[k,n] */                                                             \
  void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,          \
               std::size_t m, std::size_t n, std::size_t k);                                       \
  /* c[m,n] = sum_k a[k,m] * b[k,n] */                                                             \
  void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,          \
               std::size_t m, std::size_t n, std::size_t k);                                       \
  void conv2d_forward(const ConvGeometry& g, std::span<const double> input,                        \
                      std::span<const double> weight, std::span<const double> bias,                \
                      std::span<double> output);                                                   \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,           \
                             std::span<const double> weight, std::span<double> grad_input);        \
  void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> grad_output,          \
                              std::span<const double> input, std::span<double> grad_weight,        \
                              std::span<double> grad_bias);

namespace reference {
SSAL_KERNEL_DECLS
}

namespace parallel {
SSAL_KERNEL_DECLS
}

#undef SSAL_KERNEL_DECLS

// Number of OpenMP workers the parallel kernels use (1 without OpenMP).
int worker_count();
void set_worker_count(int workers);

}  // namespace ssal::kernels
