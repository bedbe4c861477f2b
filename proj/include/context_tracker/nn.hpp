#ifndef CONTEXT_TRACKER_NN_HPP
#define CONTEXT_TRACKER_NN_HPP

// Differentiable primitives used by the backbone, the domain-adaptation layer
// and the online head. Every forward op has a paired *_backward that returns
// gradients w.r.t. its inputs; nothing here keeps a graph.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "context_tracker/errors.hpp"
#include "context_tracker/tensor.hpp"

namespace context_tracker::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  static Conv2dOptions make(std::size_t stride, std::size_t dilation, std::size_t padding) {
    return {stride, dilation, padding, padding};
  }
};

/// Output extent of a strided, dilated, padded window. Returns 0 when no window fits.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t dilation, std::size_t pad) {
  const long long span = static_cast<long long>(dilation) * (static_cast<long long>(k) - 1) + 1;
  const long long avail = static_cast<long long>(in) + 2 * static_cast<long long>(pad) - span;
  if (avail < 0) return 0;
  return static_cast<std::size_t>(avail / static_cast<long long>(stride)) + 1;
}

namespace detail {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, oh, ow;
};

template <typename T>
ConvGeometry check_conv(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                        const Conv2dOptions& opt) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (opt.stride == 0 || opt.dilation == 0) throw ContractError("conv2d: stride and dilation must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  if (kernel.dim(1) != g.cin) {
    throw ContractError("conv2d: input channels (Cin) " + std::to_string(g.cin) + " != kernel Cin " +
                        std::to_string(kernel.dim(1)));
  }
  g.oh = conv_out_extent(g.h, g.kh, opt.stride, opt.dilation, opt.pad_h);
  g.ow = conv_out_extent(g.w, g.kw, opt.stride, opt.dilation, opt.pad_w);
  if (g.oh == 0) throw ContractError("conv2d: output height (H') < 1 for input height " + std::to_string(g.h));
  if (g.ow == 0) throw ContractError("conv2d: output width (W') < 1 for input width " + std::to_string(g.w));
  return g;
}

// Rows index (ci, ki, kj); columns index (n, oh, ow).
template <typename T>
RowMatrix<T> im2col(const BasicTensor<T>& input, const ConvGeometry& g, const Conv2dOptions& opt) {
  const std::size_t plane = g.oh * g.ow;
  RowMatrix<T> cols(g.cin * g.kh * g.kw, g.n * plane);
  const T* src = input.ptr();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols.data() + ((ci * g.kh + ki) * g.kw + kj) * cols.cols();
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* chan = src + (n * g.cin + ci) * g.h * g.w;
          T* dst = row + n * plane;
          for (std::size_t y = 0; y < g.oh; ++y) {
            const long long iy = static_cast<long long>(y * opt.stride + ki * opt.dilation) -
                                 static_cast<long long>(opt.pad_h);
            T* drow = dst + y * g.ow;
            if (iy < 0 || iy >= static_cast<long long>(g.h)) {
              std::fill(drow, drow + g.ow, T{0});
              continue;
            }
            const T* srow = chan + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t x = 0; x < g.ow; ++x) {
              const long long ix = static_cast<long long>(x * opt.stride + kj * opt.dilation) -
                                   static_cast<long long>(opt.pad_w);
              drow[x] = (ix < 0 || ix >= static_cast<long long>(g.w)) ? T{0} : srow[ix];
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im(const RowMatrix<T>& cols, const ConvGeometry& g, const Conv2dOptions& opt, BasicTensor<T>& grad_in) {
  const std::size_t plane = g.oh * g.ow;
  T* dst = grad_in.ptr();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols.data() + ((ci * g.kh + ki) * g.kw + kj) * cols.cols();
        for (std::size_t n = 0; n < g.n; ++n) {
          T* chan = dst + (n * g.cin + ci) * g.h * g.w;
          const T* srcp = row + n * plane;
          for (std::size_t y = 0; y < g.oh; ++y) {
            const long long iy = static_cast<long long>(y * opt.stride + ki * opt.dilation) -
                                 static_cast<long long>(opt.pad_h);
            if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
            T* drow = chan + static_cast<std::size_t>(iy) * g.w;
            const T* srow = srcp + y * g.ow;
            for (std::size_t x = 0; x < g.ow; ++x) {
              const long long ix = static_cast<long long>(x * opt.stride + kj * opt.dilation) -
                                   static_cast<long long>(opt.pad_w);
              if (ix >= 0 && ix < static_cast<long long>(g.w)) drow[ix] += srow[x];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of an N x Cin x H x W batch with a Cout x Cin x Kh x Kw kernel.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      const Conv2dOptions& opt) {
  const auto g = detail::check_conv(input, kernel, opt);
  if (bias.size() != g.cout) throw ContractError("conv2d: bias length != Cout");
  const RowMatrix<T> cols = detail::im2col(input, g, opt);
  const ConstMatrixMap<T> wmat(kernel.ptr(), g.cout, g.cin * g.kh * g.kw);
  const RowMatrix<T> out = wmat * cols;

  const std::size_t plane = g.oh * g.ow;
  BasicTensor<T> result({g.n, g.cout, g.oh, g.ow});
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* src = out.data() + co * out.cols() + n * plane;
      T* dst = result.ptr() + (n * g.cout + co) * plane;
      const T b = bias[co];
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t dilation, std::size_t padding) {
  return conv2d(input, kernel, bias, Conv2dOptions::make(stride, dilation, padding));
}

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernel;
  BasicTensor<T> bias;
};

/// Gradients of a conv2d given dL/d(output). Input gradient is skipped when
/// `want_input` is false (first layer, frozen inputs).
template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                               const BasicTensor<T>& grad_out, const Conv2dOptions& opt, bool want_input = true) {
  const auto g = detail::check_conv(input, kernel, opt);
  if (grad_out.shape() != Shape{g.n, g.cout, g.oh, g.ow}) {
    throw ContractError("conv2d_backward: grad_out shape " + shape_str(grad_out.shape()) + " != output shape");
  }
  const std::size_t plane = g.oh * g.ow;
  RowMatrix<T> gmat(g.cout, g.n * plane);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* src = grad_out.ptr() + (n * g.cout + co) * plane;
      std::copy(src, src + plane, gmat.data() + co * gmat.cols() + n * plane);
    }
  }
  const RowMatrix<T> cols = detail::im2col(input, g, opt);

  Conv2dGrads<T> grads;
  grads.kernel = BasicTensor<T>(kernel.shape());
  MatrixMap<T>(grads.kernel.ptr(), g.cout, g.cin * g.kh * g.kw).noalias() = gmat * cols.transpose();
  grads.bias = BasicTensor<T>({g.cout});
  for (std::size_t co = 0; co < g.cout; ++co) grads.bias[co] = gmat.row(co).sum();

  if (want_input) {
    const ConstMatrixMap<T> wmat(kernel.ptr(), g.cout, g.cin * g.kh * g.kw);
    const RowMatrix<T> dcols = wmat.transpose() * gmat;
    grads.input = BasicTensor<T>(input.shape());
    detail::col2im(dcols, g, opt, grads.input);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  BasicTensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(input[i] > T{0})) g[i] = T{0};
  }
  return g;
}

// ---------------------------------------------------------------------------
// Local response normalization across channels
// ---------------------------------------------------------------------------

struct LrnParams {
  int size = 5;
  double k = 2.0;
  double alpha = 1e-4;
  double beta = 0.75;
};

namespace detail {

template <typename T>
void check_lrn(const BasicTensor<T>& input, const LrnParams& p) {
  require_rank(input, 4, "lrn input");
  if (p.size <= 0) throw ContractError("lrn: window size must be positive");
  if (p.size % 2 == 0) throw ContractError("lrn: window size must be odd");
}

// scale[n,c,h,w] = k + alpha/size * sum of squares over the channel window.
template <typename T>
BasicTensor<T> lrn_scale(const BasicTensor<T>& input, const LrnParams& p) {
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  const long long half = p.size / 2;
  const T coeff = static_cast<T>(p.alpha / p.size);
  BasicTensor<T> scale(input.shape(), static_cast<T>(p.k));
  std::vector<T> sq(plane);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* x = input.ptr() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sq[i] = coeff * x[i] * x[i];
      const long long lo = std::max<long long>(0, static_cast<long long>(ch) - half);
      const long long hi = std::min<long long>(static_cast<long long>(c) - 1, static_cast<long long>(ch) + half);
      for (long long o = lo; o <= hi; ++o) {
        T* s = scale.ptr() + (b * c + static_cast<std::size_t>(o)) * plane;
        for (std::size_t i = 0; i < plane; ++i) s[i] += sq[i];
      }
    }
  }
  return scale;
}

}  // namespace detail

/// y = x / (k + alpha/size * sum_{window} x^2)^beta
template <typename T>
BasicTensor<T> lrn(const BasicTensor<T>& input, const LrnParams& p = {}) {
  detail::check_lrn(input, p);
  const BasicTensor<T> scale = detail::lrn_scale(input, p);
  BasicTensor<T> out(input.shape());
  const T beta = static_cast<T>(p.beta);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] * std::pow(scale[i], -beta);
  return out;
}

template <typename T>
BasicTensor<T> lrn(const BasicTensor<T>& input, int size, double k, double alpha, double beta) {
  return lrn(input, LrnParams{size, k, alpha, beta});
}

template <typename T>
BasicTensor<T> lrn_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out, const LrnParams& p = {}) {
  detail::check_lrn(input, p);
  require_same_shape(input, grad_out, "lrn_backward");
  const BasicTensor<T> scale = detail::lrn_scale(input, p);
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  const long long half = p.size / 2;
  const T beta = static_cast<T>(p.beta);
  const T coeff = static_cast<T>(2.0 * p.alpha * p.beta / p.size);

  // t[j] = dy_j * x_j * s_j^(-beta-1); dx_i = dy_i s_i^-beta - coeff * x_i * sum_{j: i in win(j)} t[j]
  BasicTensor<T> t(input.shape());
  BasicTensor<T> grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T sb = std::pow(scale[i], -beta);
    grad[i] = grad_out[i] * sb;
    t[i] = grad_out[i] * input[i] * sb / scale[i];
  }
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const long long lo = std::max<long long>(0, static_cast<long long>(ch) - half);
      const long long hi = std::min<long long>(static_cast<long long>(c) - 1, static_cast<long long>(ch) + half);
      const T* x = input.ptr() + (b * c + ch) * plane;
      T* g = grad.ptr() + (b * c + ch) * plane;
      for (long long o = lo; o <= hi; ++o) {
        const T* tj = t.ptr() + (b * c + static_cast<std::size_t>(o)) * plane;
        for (std::size_t i = 0; i < plane; ++i) g[i] -= coeff * x[i] * tj[i];
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolResult {
  BasicTensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Window maxima; ties resolve to the first element in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2d(const BasicTensor<T>& input, std::size_t kernel, std::size_t stride) {
  require_rank(input, 4, "maxpool2d input");
  if (kernel == 0 || stride == 0) throw ContractError("maxpool2d: kernel and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (kernel > h || kernel > w) {
    throw ContractError("maxpool2d: kernel " + std::to_string(kernel) + " larger than spatial extent " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  MaxPoolResult<T> r{BasicTensor<T>({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const std::size_t base = nc * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        std::size_t best = base + (y * stride) * w + x * stride;
        T best_v = input[best];
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t idx = base + (y * stride + ki) * w + x * stride + kj;
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        }
        r.output[o] = best_v;
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_out) {
  if (argmax.size() != grad_out.size()) throw ContractError("maxpool2d_backward: argmax/grad size mismatch");
  BasicTensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

// ---------------------------------------------------------------------------
// Two-class softmax over the last dimension
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax2(const BasicTensor<T>& logits) {
  if (logits.rank() == 0 || logits.shape().back() != 2) {
    throw ContractError("softmax2: last dimension must be 2, got " + shape_str(logits.shape()));
  }
  BasicTensor<T> out(logits.shape());
  for (std::size_t i = 0; i + 1 < logits.size(); i += 2) {
    const double a = logits[i], b = logits[i + 1];
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    out[i] = static_cast<T>(ea / (ea + eb));
    out[i + 1] = static_cast<T>(eb / (ea + eb));
  }
  return out;
}

/// dL/dlogits from the probabilities and dL/dprobs.
template <typename T>
BasicTensor<T> softmax2_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_probs) {
  require_same_shape(probs, grad_probs, "softmax2_backward");
  BasicTensor<T> g(probs.shape());
  for (std::size_t i = 0; i + 1 < probs.size(); i += 2) {
    const T dot = probs[i] * grad_probs[i] + probs[i + 1] * grad_probs[i + 1];
    g[i] = probs[i] * (grad_probs[i] - dot);
    g[i + 1] = probs[i + 1] * (grad_probs[i + 1] - dot);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Global average pooling over H x W
// ---------------------------------------------------------------------------

/// C x H x W -> C, or N x C x H x W -> N x C.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  if (input.rank() != 3 && input.rank() != 4) {
    throw ContractError("global_avg_pool: expected C x H x W or N x C x H x W, got " + shape_str(input.shape()));
  }
  const std::size_t plane = input.dim(input.rank() - 1) * input.dim(input.rank() - 2);
  const std::size_t groups = input.size() / plane;
  Shape out_shape(input.shape().begin(), input.shape().end() - 2);
  BasicTensor<T> out(out_shape);
  for (std::size_t g = 0; g < groups; ++g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += input[g * plane + i];
    out[g] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out) {
  BasicTensor<T> g(input_shape);
  const std::size_t plane = input_shape[input_shape.size() - 1] * input_shape[input_shape.size() - 2];
  if (grad_out.size() * plane != g.size()) throw ContractError("global_avg_pool_backward: size mismatch");
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i / plane] * inv;
  return g;
}

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay
// ---------------------------------------------------------------------------

struct SgdConfig {
  double learning_rate = 0.0015;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ContractError("sgd: learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("sgd: momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ContractError("sgd: weight_decay must be non-negative");
  }
};

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
/// An empty `velocity` is initialised to zeros of the parameter shape.
template <typename T>
void sgd_step(BasicTensor<T>& params, const BasicTensor<T>& grads, BasicTensor<T>& velocity, const SgdConfig& cfg) {
  cfg.validate();
  require_same_shape(params, grads, "sgd_step");
  if (velocity.empty()) velocity = BasicTensor<T>(params.shape());
  require_same_shape(params, velocity, "sgd_step momentum buffer");
  const T mu = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay),
          lr = static_cast<T>(cfg.learning_rate);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = mu * velocity[i] + grads[i] + wd * params[i];
    params[i] -= lr * velocity[i];
  }
}

// ---------------------------------------------------------------------------
// Central finite differences (test oracle)
// ---------------------------------------------------------------------------

/// (f(x + eps e_i) - f(x - eps e_i)) / (realised step). Dividing by the step
/// actually taken keeps float inputs honest when x +- eps rounds.
template <typename T>
BasicTensor<T> numeric_grad(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
                            double eps = 1e-3) {
  BasicTensor<T> probe = x;
  BasicTensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = x[i];
    const T hi = static_cast<T>(orig + eps);
    const T lo = static_cast<T>(orig - eps);
    probe[i] = hi;
    const double fp = f(probe);
    probe[i] = lo;
    const double fm = f(probe);
    probe[i] = orig;
    g[i] = static_cast<T>((fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo)));
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor); the norm-wise relative error used by all gradient checks.
template <typename T>
double relative_error(const BasicTensor<T>& a, const BasicTensor<T>& b, double floor = 1e-12) {
  require_same_shape(a, b, "relative_error");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    diff += (x - y) * (x - y);
    na += x * x;
    nb += y * y;
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace context_tracker::nn

#endif  // CONTEXT_TRACKER_NN_HPP
