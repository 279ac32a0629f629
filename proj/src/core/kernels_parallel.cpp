#include "ssal/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ssal::kernels {

int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_worker_count(int workers) {
#ifdef _OPENMP
  if (workers > 0) omp_set_num_threads(workers);
#else
  (void)workers;
#endif
}

namespace parallel {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kMinParallelWork = 1 << 14;
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kMinParallelWork)
  for (long i = 0; i < rows; ++i) {
    const double* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] = acc;
    }
  }
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kMinParallelWork)
  for (long i = 0; i < rows; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kMinParallelWork)
  for (long i = 0; i < rows; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a[p * m + i];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  const long planes = static_cast<long>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static)
  for (long plane = 0; plane < planes; ++plane) {
    const std::size_t n = static_cast<std::size_t>(plane) / g.out_channels;
    const std::size_t oc = static_cast<std::size_t>(plane) % g.out_channels;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        double acc = bias.empty() ? 0.0 : bias[oc];
        for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
          const double* in_plane = input.data() + (n * g.in_channels + ic) * g.in_h * g.in_w;
          const double* w_plane = weight.data() + (oc * g.in_channels + ic) * g.kernel_h * g.kernel_w;
          for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
            long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.padding);
            if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
              long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.padding);
              if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
              acc += in_plane[ih * g.in_w + iw] * w_plane[kh * g.kernel_w + kw];
            }
          }
        }
        output[(static_cast<std::size_t>(plane) * oh_n + oh) * ow_n + ow] = acc;
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  const long planes = static_cast<long>(g.batch * g.in_channels);
  const long stride = static_cast<long>(g.stride);
#pragma omp parallel for schedule(static)
  for (long plane = 0; plane < planes; ++plane) {
    const std::size_t n = static_cast<std::size_t>(plane) / g.in_channels;
    const std::size_t ic = static_cast<std::size_t>(plane) % g.in_channels;
    for (std::size_t ih = 0; ih < g.in_h; ++ih) {
      for (std::size_t iw = 0; iw < g.in_w; ++iw) {
        double acc = 0.0;
        for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
          const double* go_plane = grad_output.data() + (n * g.out_channels + oc) * oh_n * ow_n;
          const double* w_plane = weight.data() + (oc * g.in_channels + ic) * g.kernel_h * g.kernel_w;
          for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
            long th = static_cast<long>(ih + g.padding) - static_cast<long>(kh);
            if (th < 0 || th % stride != 0) continue;
            std::size_t oh = static_cast<std::size_t>(th / stride);
            if (oh >= oh_n) continue;
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
              long tw = static_cast<long>(iw + g.padding) - static_cast<long>(kw);
              if (tw < 0 || tw % stride != 0) continue;
              std::size_t ow = static_cast<std::size_t>(tw / stride);
              if (ow >= ow_n) continue;
              acc += go_plane[oh * ow_n + ow] * w_plane[kh * g.kernel_w + kw];
            }
          }
        }
        grad_input[(static_cast<std::size_t>(plane) * g.in_h + ih) * g.in_w + iw] = acc;
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  const long channels = static_cast<long>(g.out_channels);
#pragma omp parallel for schedule(static)
  for (long oc_l = 0; oc_l < channels; ++oc_l) {
    const std::size_t oc = static_cast<std::size_t>(oc_l);
    if (!grad_bias.empty()) {
      double acc = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* go_plane = grad_output.data() + (n * g.out_channels + oc) * oh_n * ow_n;
        for (std::size_t p = 0; p < oh_n * ow_n; ++p) acc += go_plane[p];
      }
      grad_bias[oc] = acc;
    }
    for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
      for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
          double acc = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n) {
            const double* go_plane = grad_output.data() + (n * g.out_channels + oc) * oh_n * ow_n;
            const double* in_plane = input.data() + (n * g.in_channels + ic) * g.in_h * g.in_w;
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
              long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.padding);
              if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
              for (std::size_t ow = 0; ow < ow_n; ++ow) {
                long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.padding);
                if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
                acc += go_plane[oh * ow_n + ow] * in_plane[ih * g.in_w + iw];
              }
            }
          }
          grad_weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw] = acc;
        }
      }
    }
  }
}

}  // namespace parallel
}  // namespace ssal::kernels
