#include "ssal/kernels.hpp"

namespace ssal::kernels::reference {

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      double aip = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * b[p * n + j];
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      double api = a[p * m + i];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += api * b[p * n + j];
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      for (std::size_t oh = 0; oh < oh_n; ++oh) {
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
              long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.padding);
              if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.padding);
                if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
                acc += input[((n * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw] *
                       weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw];
              }
            }
          }
          output[((n * g.out_channels + oc) * oh_n + oh) * ow_n + ow] = acc;
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
      for (std::size_t ih = 0; ih < g.in_h; ++ih) {
        for (std::size_t iw = 0; iw < g.in_w; ++iw) {
          double acc = 0.0;
          for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
              long th = static_cast<long>(ih + g.padding) - static_cast<long>(kh);
              if (th < 0 || th % static_cast<long>(g.stride) != 0) continue;
              std::size_t oh = static_cast<std::size_t>(th) / g.stride;
              if (oh >= oh_n) continue;
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                long tw = static_cast<long>(iw + g.padding) - static_cast<long>(kw);
                if (tw < 0 || tw % static_cast<long>(g.stride) != 0) continue;
                std::size_t ow = static_cast<std::size_t>(tw) / g.stride;
                if (ow >= ow_n) continue;
                acc += grad_output[((n * g.out_channels + oc) * oh_n + oh) * ow_n + ow] *
                       weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw];
              }
            }
          }
          grad_input[((n * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw] = acc;
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    if (!grad_bias.empty()) {
      double acc = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t p = 0; p < oh_n * ow_n; ++p) acc += grad_output[(n * g.out_channels + oc) * oh_n * ow_n + p];
      grad_bias[oc] = acc;
    }
    for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
      for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
          double acc = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n) {
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
              long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.padding);
              if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
              for (std::size_t ow = 0; ow < ow_n; ++ow) {
                long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.padding);
                if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
                acc += grad_output[((n * g.out_channels + oc) * oh_n + oh) * ow_n + ow] *
                       input[((n * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw];
              }
            }
          }
          grad_weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw] = acc;
        }
      }
    }
  }
}

}  // namespace ssal::kernels::reference
