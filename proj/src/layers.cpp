#include "dmcl/layers.hpp"

#include <cblas.h>

#include <cmath>
#include <limits>
#include <random>

#include "dmcl/errors.hpp"

namespace dmcl::nn {

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, const float* b, float beta, float* c) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              int(m), int(n), int(k), alpha, a, trans_a ? int(m) : int(k), b,
              trans_b ? int(k) : int(n), beta, c, int(n));
}

template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                  double alpha, const double* a, const double* b, double beta, double* c) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              int(m), int(n), int(k), alpha, a, trans_a ? int(m) : int(k), b,
              trans_b ? int(k) : int(n), beta, c, int(n));
}

namespace {

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* who) {
  if (x.rank() != rank)
    throw ShapeError(std::string(who) + ": expected rank-" + std::to_string(rank) + " input, got " +
                     shape_string(x.shape()));
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t padding, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding),
      has_bias_(bias), weight_({out_channels, in_channels, kernel, kernel}),
      bias_(bias ? Shape{out_channels} : Shape{0}) {}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const double fan_in = double(in_ * kernel_ * kernel_);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (auto& w : weight_.value.values()) w = static_cast<T>(normal(rng));
  bias_.value.fill(T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode) {
  require_rank(x, 4, "Conv2d");
  if (x.dim(1) != in_)
    throw ShapeError("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                     shape_string(x.shape()));
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (h + 2 * padding_ < kernel_ || w + 2 * padding_ < kernel_)
    throw ShapeError("Conv2d: input " + shape_string(x.shape()) + " smaller than the kernel");
  in_shape_ = x.shape();
  out_h_ = (h + 2 * padding_ - kernel_) / stride_ + 1;
  out_w_ = (w + 2 * padding_ - kernel_) / stride_ + 1;
  const std::size_t plane = out_h_ * out_w_;
  const std::size_t cols = n * plane;
  const std::size_t rows = in_ * kernel_ * kernel_;

  col_.assign(rows * cols, T(0));
  for (std::size_t ci = 0; ci < in_; ++ci)
    for (std::size_t ki = 0; ki < kernel_; ++ki)
      for (std::size_t kj = 0; kj < kernel_; ++kj) {
        T* row = col_.data() + ((ci * kernel_ + ki) * kernel_ + kj) * cols;
        for (std::size_t b = 0; b < n; ++b) {
          const T* src = x.data() + (b * in_ + ci) * h * w;
          T* dst = row + b * plane;
          for (std::size_t oh = 0; oh < out_h_; ++oh) {
            const long ih = long(oh * stride_ + ki) - long(padding_);
            if (ih < 0 || ih >= long(h)) continue;
            for (std::size_t ow = 0; ow < out_w_; ++ow) {
              const long iw = long(ow * stride_ + kj) - long(padding_);
              if (iw < 0 || iw >= long(w)) continue;
              dst[oh * out_w_ + ow] = src[std::size_t(ih) * w + std::size_t(iw)];
            }
          }
        }
      }

  std::vector<T> y(out_ * cols);
  gemm<T>(false, false, out_, cols, rows, T(1), weight_.value.data(), col_.data(), T(0), y.data());
  Tensor<T> out({n, out_, out_h_, out_w_});
  for (std::size_t co = 0; co < out_; ++co) {
    const T b = has_bias_ ? bias_.value[co] : T(0);
    for (std::size_t bi = 0; bi < n; ++bi) {
      const T* src = y.data() + co * cols + bi * plane;
      T* dst = out.data() + (bi * out_ + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  }
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  const std::size_t n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const std::size_t plane = out_h_ * out_w_;
  const std::size_t cols = n * plane;
  const std::size_t rows = in_ * kernel_ * kernel_;
  if (col_.size() != rows * cols) throw ShapeError("Conv2d: backward without matching forward");

  std::vector<T> dy(out_ * cols);
  for (std::size_t co = 0; co < out_; ++co)
    for (std::size_t bi = 0; bi < n; ++bi) {
      const T* src = grad_out.data() + (bi * out_ + co) * plane;
      std::copy(src, src + plane, dy.data() + co * cols + bi * plane);
    }
  if (has_bias_)
    for (std::size_t co = 0; co < out_; ++co) {
      double acc = 0.0;
      for (std::size_t i = 0; i < cols; ++i) acc += dy[co * cols + i];
      bias_.grad[co] += static_cast<T>(acc);
    }
  gemm<T>(false, true, out_, rows, cols, T(1), dy.data(), col_.data(), T(1), weight_.grad.data());
  if (!input_grad_) return {};

  std::vector<T> dcol(rows * cols);
  gemm<T>(true, false, rows, cols, out_, T(1), weight_.value.data(), dy.data(), T(0), dcol.data());
  Tensor<T> dx(in_shape_);
  for (std::size_t ci = 0; ci < in_; ++ci)
    for (std::size_t ki = 0; ki < kernel_; ++ki)
      for (std::size_t kj = 0; kj < kernel_; ++kj) {
        const T* row = dcol.data() + ((ci * kernel_ + ki) * kernel_ + kj) * cols;
        for (std::size_t b = 0; b < n; ++b) {
          T* dst = dx.data() + (b * in_ + ci) * h * w;
          const T* src = row + b * plane;
          for (std::size_t oh = 0; oh < out_h_; ++oh) {
            const long ih = long(oh * stride_ + ki) - long(padding_);
            if (ih < 0 || ih >= long(h)) continue;
            for (std::size_t ow = 0; ow < out_w_; ++ow) {
              const long iw = long(ow * stride_ + kj) - long(padding_);
              if (iw < 0 || iw >= long(w)) continue;
              dst[std::size_t(ih) * w + std::size_t(iw)] += src[oh * out_w_ + ow];
            }
          }
        }
      }
  return dx;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  out.push_back({prefix + "weight", &weight_});
  if (has_bias_) out.push_back({prefix + "bias", &bias_});
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps), gamma_({channels}), beta_({channels}),
      running_mean_({channels}, false), running_var_({channels}, false) {
  gamma_.value.fill(T(1));
  running_var_.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x, 4, "BatchNorm2d");
  if (x.dim(1) != channels_) throw ShapeError("BatchNorm2d: channel mismatch");
  const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
  const std::size_t m = n * plane;
  Tensor<T> y(x.shape());
  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(channels_, 0.0);
  last_train_ = mode == Mode::kTrain;
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean, var;
    if (last_train_) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / double(m);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / double(m);
      const double unbiased = m > 1 ? var * double(m) / double(m - 1) : var;
      running_mean_.value[c] =
          static_cast<T>((1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean);
      running_var_.value[c] =
          static_cast<T>((1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const double g = gamma_.value[c], bta = beta_.value[c];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - mean) * inv;
        xhat_[off + i] = static_cast<T>(xh);
        y[off + i] = static_cast<T>(g * xh + bta);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  const std::size_t n = xhat_.dim(0), plane = xhat_.dim(2) * xhat_.dim(3);
  const double m = double(n * plane);
  Tensor<T> dx(xhat_.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xhat += double(grad_out[off + i]) * xhat_[off + i];
      }
    }
    gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
    beta_.grad[c] += static_cast<T>(sum_dy);
    const double scale = gamma_.value[c] * inv_std_[c];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      if (last_train_) {
        const double mean_dy = sum_dy / m, mean_dy_xhat = sum_dy_xhat / m;
        for (std::size_t i = 0; i < plane; ++i)
          dx[off + i] = static_cast<T>(
              scale * (grad_out[off + i] - mean_dy - xhat_[off + i] * mean_dy_xhat));
      } else {
        for (std::size_t i = 0; i < plane; ++i)
          dx[off + i] = static_cast<T>(scale * grad_out[off + i]);
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  out.push_back({prefix + "weight", &gamma_});
  out.push_back({prefix + "bias", &beta_});
  out.push_back({prefix + "running_mean", &running_mean_});
  out.push_back({prefix + "running_var", &running_var_});
}

// ---------------------------------------------------------------- ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode) {
  Tensor<T> y(x.shape());
  mask_.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x[i] > T(0);
    mask_[i] = on;
    y[i] = on ? x[i] : T(0);
  }
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(grad_out.shape());
  const unsigned char* m = mask_.data();
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = m[i] ? grad_out[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, Mode) {
  require_rank(x, 4, "MaxPool2d");
  in_shape_ = x.shape();
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * padding_ < kernel_ || w + 2 * padding_ < kernel_)
    throw ShapeError("MaxPool2d: input " + shape_string(x.shape()) + " smaller than the window");
  const std::size_t oh = (h + 2 * padding_ - kernel_) / stride_ + 1;
  const std::size_t ow = (w + 2 * padding_ - kernel_) / stride_ + 1;
  Tensor<T> y({n, c, oh, ow});
  argmax_.assign(y.size(), 0);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = x.data() + plane * h * w;
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t ki = 0; ki < kernel_; ++ki) {
          const long ih = long(r * stride_ + ki) - long(padding_);
          if (ih < 0 || ih >= long(h)) continue;
          for (std::size_t kj = 0; kj < kernel_; ++kj) {
            const long iw = long(q * stride_ + kj) - long(padding_);
            if (iw < 0 || iw >= long(w)) continue;
            const std::size_t idx = std::size_t(ih) * w + std::size_t(iw);
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (plane * oh + r) * ow + q;
        y[o] = best;
        argmax_[o] = plane * h * w + best_idx;
      }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(in_shape_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode) {
  require_rank(x, 4, "GlobalAvgPool");
  in_shape_ = x.shape();
  const std::size_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1)});
  for (std::size_t i = 0; i < nc; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += x[i * plane + p];
    y[i] = static_cast<T>(acc / double(plane));
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(in_shape_);
  const std::size_t plane = in_shape_[2] * in_shape_[3];
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const T g = static_cast<T>(grad_out[i] / double(plane));
    for (std::size_t p = 0; p < plane; ++p) dx[i * plane + p] = g;
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features)
    : in_(in_features), out_(out_features), weight_({out_features, in_features}),
      bias_({out_features}) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(in_));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& w : weight_.value.values()) w = static_cast<T>(u(rng));
  for (auto& b : bias_.value.values()) b = static_cast<T>(u(rng));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode) {
  require_rank(x, 2, "Linear");
  if (x.dim(1) != in_)
    throw ShapeError("Linear: expected " + std::to_string(in_) + " features, got " +
                     shape_string(x.shape()));
  input_ = x;
  const std::size_t n = x.dim(0);
  Tensor<T> y({n, out_});
  for (std::size_t i = 0; i < n; ++i) std::copy(bias_.value.data(), bias_.value.data() + out_, y.data() + i * out_);
  gemm<T>(false, true, n, out_, in_, T(1), x.data(), weight_.value.data(), T(1), y.data());
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  const std::size_t n = input_.dim(0);
  gemm<T>(true, false, out_, in_, n, T(1), grad_out.data(), input_.data(), T(1), weight_.grad.data());
  for (std::size_t j = 0; j < out_; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += grad_out.at(i, j);
    bias_.grad[j] += static_cast<T>(acc);
  }
  Tensor<T> dx({n, in_});
  gemm<T>(false, false, n, in_, out_, T(1), grad_out.data(), weight_.value.data(), T(0), dx.data());
  return dx;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

// ---------------------------------------------------------------- Sequential

template <typename T>
Sequential<T>::Sequential(const Sequential& other) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Sequential<T>& Sequential<T>::operator=(const Sequential& other) {
  if (this != &other) {
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect(prefix + std::to_string(i) + ".", out);
}

template <typename T>
void Sequential<T>::release() {
  for (auto& l : layers_) l->release();
}

template <typename T>
std::size_t Sequential<T>::count(const std::string& kind) const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    if (l->kind() == kind) ++n;
    if (const auto* s = dynamic_cast<const Sequential<T>*>(l.get())) n += s->count(kind);
  }
  return n;
}

// ---------------------------------------------------------------- Bottleneck

template <typename T>
Bottleneck<T>::Bottleneck(std::size_t in_channels, std::size_t width, std::size_t stride, Rng& rng) {
  const std::size_t out_channels = 4 * width;
  main_.template add<Conv2d<T>>(in_channels, width, 1).init(rng);
  main_.template add<BatchNorm2d<T>>(width);
  main_.template add<ReLU<T>>();
  main_.template add<Conv2d<T>>(width, width, 3, stride, 1).init(rng);
  main_.template add<BatchNorm2d<T>>(width);
  main_.template add<ReLU<T>>();
  main_.template add<Conv2d<T>>(width, out_channels, 1).init(rng);
  main_.template add<BatchNorm2d<T>>(out_channels);
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.template add<Conv2d<T>>(in_channels, out_channels, 1, stride).init(rng);
    shortcut_.template add<BatchNorm2d<T>>(out_channels);
  }
}

template <typename T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> y = main_.forward(x, mode);
  const Tensor<T> s = shortcut_.size() ? shortcut_.forward(x, mode) : x;
  if (s.shape() != y.shape()) throw ShapeError("Bottleneck: shortcut shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s[i];
  return out_relu_.forward(y, mode);
}

template <typename T>
Tensor<T> Bottleneck<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T> g = out_relu_.backward(grad_out);
  Tensor<T> dx = main_.backward(g);
  const Tensor<T> ds = shortcut_.size() ? shortcut_.backward(g) : g;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
  return dx;
}

template <typename T>
void Bottleneck<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  main_.collect(prefix + "main.", out);
  shortcut_.collect(prefix + "shortcut.", out);
}

template <typename T>
void Bottleneck<T>::release() {
  main_.release();
  shortcut_.release();
  out_relu_.release();
}

#define DMCL_INSTANTIATE(T)        \
  template class Conv2d<T>;        \
  template class BatchNorm2d<T>;   \
  template class ReLU<T>;          \
  template class MaxPool2d<T>;     \
  template class GlobalAvgPool<T>; \
  template class Linear<T>;        \
  template class Sequential<T>;    \
  template class Bottleneck<T>;

DMCL_INSTANTIATE(float)
DMCL_INSTANTIATE(double)

}  // namespace dmcl::nn
