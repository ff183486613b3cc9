#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "pmi/nn/layer.hpp"

namespace pmi::nn {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ')';
  return out.str();
}

std::string join_name(const std::string& prefix, const std::string& name) {
  if (prefix.empty()) return name;
  if (name.empty()) return prefix;
  return prefix + "." + name;
}

template <typename T>
void Layer<T>::require_cache(bool cached) const {
  if (!cached) throw Error("backward() needs a preceding forward() in training mode");
}

namespace {

void expect_rank(const Shape& s, int rank, const char* layer) {
  if (static_cast<int>(s.size()) != rank)
    throw Error(std::string(layer) + " expects a rank-" + std::to_string(rank) + " input, got " + shape_string(s));
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double bound) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int sh, int sw, int ph, int pw, int Ho, int Wo,
            T* col) {
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * kh + ky) * kw + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          T* d = dst + static_cast<std::size_t>(oy) * Wo;
          const int iy = oy * sh - ph + ky;
          if (iy < 0 || iy >= H) {
            std::fill(d, d + Wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * sw - pw + kx;
            d[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int sh, int sw, int ph, int pw, int Ho, int Wo,
            T* dx) {
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + static_cast<std::size_t>((c * kh + ky) * kw + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * sh - ph + ky;
          if (iy < 0 || iy >= H) continue;
          const T* s = src + static_cast<std::size_t>(oy) * Wo;
          T* dst = dx + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * sw - pw + kx;
            if (ix >= 0 && ix < W) dst[ix] += s[ox];
          }
        }
      }
}

int pooled_size(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in, int out, int kh, int kw, int sh, int sw, int ph, int pw, bool bias)
    : in_(in), out_(out), kh_(kh), kw_(kw), sh_(sh), sw_(sw), ph_(ph), pw_(pw), has_bias_(bias) {
  if (in <= 0 || out <= 0 || kh <= 0 || kw <= 0 || sh <= 0 || sw <= 0 || ph < 0 || pw < 0)
    throw Error("invalid Conv2d geometry");
  weight_.value = Tensor<T>({out, in, kh, kw});
  if (bias) bias_.value = Tensor<T>({out});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  expect_rank(x.shape(), 4, "Conv2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C != in_)
    throw Error("Conv2d expects " + std::to_string(in_) + " input channels, got " + std::to_string(C));
  const int Ho = pooled_size(H, kh_, sh_, ph_), Wo = pooled_size(W, kw_, sw_, pw_);
  if (Ho <= 0 || Wo <= 0) throw Error("Conv2d input " + shape_string(x.shape()) + " is smaller than the kernel");
  const int K = C * kh_ * kw_, P = Ho * Wo;
  const bool pointwise = kh_ == 1 && kw_ == 1 && sh_ == 1 && sw_ == 1 && ph_ == 0 && pw_ == 0;

  Tensor<T> y({N, out_, Ho, Wo});
  AlignedVector<T> col(pointwise ? 0 : static_cast<std::size_t>(K) * P);
  CMapR<T> Wm(weight_.value.data(), out_, K);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.data() + static_cast<std::size_t>(n) * C * H * W;
    const T* colp = xn;
    if (!pointwise) {
      im2col(xn, C, H, W, kh_, kw_, sh_, sw_, ph_, pw_, Ho, Wo, col.data());
      colp = col.data();
    }
    MapR<T> yn(y.data() + static_cast<std::size_t>(n) * out_ * P, out_, P);
    yn.noalias() = Wm * CMapR<T>(colp, K, P);
    if (has_bias_)
      for (int o = 0; o < out_; ++o) yn.row(o).array() += bias_.value[o];
  }
  cached_x_ = this->training_ ? x : Tensor<T>();
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!cached_x_.empty());
  const Tensor<T>& x = cached_x_;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = grad.dim(2), Wo = grad.dim(3);
  const int K = C * kh_ * kw_, P = Ho * Wo;
  const bool pointwise = kh_ == 1 && kw_ == 1 && sh_ == 1 && sw_ == 1 && ph_ == 0 && pw_ == 0;

  Tensor<T> dx(x.shape());
  MapR<T> dW(weight_.ensure_grad().data(), out_, K);
  CMapR<T> Wm(weight_.value.data(), out_, K);
  AlignedVector<T> col(pointwise ? 0 : static_cast<std::size_t>(K) * P);
  MatR<T> dcol(K, P);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.data() + static_cast<std::size_t>(n) * C * H * W;
    const T* colp = xn;
    if (!pointwise) {
      im2col(xn, C, H, W, kh_, kw_, sh_, sw_, ph_, pw_, Ho, Wo, col.data());
      colp = col.data();
    }
    CMapR<T> gn(grad.data() + static_cast<std::size_t>(n) * out_ * P, out_, P);
    dW.noalias() += gn * CMapR<T>(colp, K, P).transpose();
    if (has_bias_) {
      auto& db = bias_.ensure_grad();
      for (int o = 0; o < out_; ++o) db[o] += gn.row(o).sum();
    }
    T* dxn = dx.data() + static_cast<std::size_t>(n) * C * H * W;
    if (pointwise) {
      MapR<T>(dxn, K, P).noalias() = Wm.transpose() * gn;
    } else {
      dcol.noalias() = Wm.transpose() * gn;
      col2im(dcol.data(), C, H, W, kh_, kw_, sh_, sw_, ph_, pw_, Ho, Wo, dxn);
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.params.push_back({join_name(prefix, "weight"), &weight_});
  if (has_bias_) out.params.push_back({join_name(prefix, "bias"), &bias_});
}

template <typename T>
void Conv2d<T>::reset_parameters(Rng& rng) {
  const double fan_in = static_cast<double>(in_) * kh_ * kw_;
  fill_normal(weight_.value, rng, std::sqrt(2.0 / fan_in));
  if (has_bias_) bias_.value.fill(T(0));
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  weight_.value = Tensor<T>({channels}, T(1));
  bias_.value = Tensor<T>({channels});
  running_mean_ = Tensor<T>({channels});
  running_var_ = Tensor<T>({channels}, T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x) {
  expect_rank(x.shape(), 4, "BatchNorm2d");
  const int N = x.dim(0), C = x.dim(1);
  if (C != channels_) throw Error("BatchNorm2d channel mismatch: " + shape_string(x.shape()));
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double M = static_cast<double>(N) * static_cast<double>(HW);
  Tensor<T> y(x.shape());

  if (!this->training_) {
    cached_xhat_ = Tensor<T>();
    for (int c = 0; c < C; ++c) {
      const T scale = static_cast<T>(weight_.value[c] / std::sqrt(static_cast<double>(running_var_[c]) + eps_));
      const T shift = bias_.value[c] - running_mean_[c] * scale;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) y[off + i] = x[off + i] * scale + shift;
      }
    }
    return y;
  }

  if (M < 2) throw Error("BatchNorm2d in training mode needs more than one value per channel");
  cached_xhat_ = Tensor<T>(x.shape());
  cached_inv_std_.assign(static_cast<std::size_t>(C), T(0));
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) sum += x[off + i];
    }
    const double mean = sum / M;
    double sq = 0.0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = x[off + i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / M;
    const double inv = 1.0 / std::sqrt(var + eps_);
    cached_inv_std_[c] = static_cast<T>(inv);
    const T g = weight_.value[c], b = bias_.value[c];
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = static_cast<T>((x[off + i] - mean) * inv);
        cached_xhat_[off + i] = xh;
        y[off + i] = g * xh + b;
      }
    }
    running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
    running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * var * M / (M - 1.0));
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!cached_xhat_.empty());
  const int N = grad.dim(0), C = grad.dim(1);
  const std::size_t HW = static_cast<std::size_t>(grad.dim(2)) * grad.dim(3);
  const double M = static_cast<double>(N) * static_cast<double>(HW);
  Tensor<T> dx(grad.shape());
  auto& dg = weight_.ensure_grad();
  auto& db = bias_.ensure_grad();
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += grad[off + i];
        sum_dy_xh += grad[off + i] * cached_xhat_[off + i];
      }
    }
    dg[c] += static_cast<T>(sum_dy_xh);
    db[c] += static_cast<T>(sum_dy);
    const double k = weight_.value[c] * cached_inv_std_[c] / M;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i)
        dx[off + i] = static_cast<T>(k * (M * grad[off + i] - sum_dy - cached_xhat_[off + i] * sum_dy_xh));
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.params.push_back({join_name(prefix, "weight"), &weight_});
  out.params.push_back({join_name(prefix, "bias"), &bias_});
  out.buffers.push_back({join_name(prefix, "running_mean"), &running_mean_});
  out.buffers.push_back({join_name(prefix, "running_var"), &running_var_});
}

template <typename T>
void BatchNorm2d<T>::reset_parameters(Rng&) {
  weight_.value.fill(T(1));
  bias_.value.fill(T(0));
  running_mean_.fill(T(0));
  running_var_.fill(T(1));
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(int in, int out, bool bias) : in_(in), out_(out), has_bias_(bias) {
  if (in <= 0 || out <= 0) throw Error("invalid Linear dimensions");
  weight_.value = Tensor<T>({out, in});
  if (bias) bias_.value = Tensor<T>({out});
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.rank() < 2 || x.dim(-1) != in_)
    throw Error("Linear expects last dimension " + std::to_string(in_) + ", got " + shape_string(x.shape()));
  const int M = static_cast<int>(x.size() / static_cast<std::size_t>(in_));
  Shape s = x.shape();
  s.back() = out_;
  Tensor<T> y(s);
  MapR<T> Y(y.data(), M, out_);
  Y.noalias() = CMapR<T>(x.data(), M, in_) * CMapR<T>(weight_.value.data(), out_, in_).transpose();
  if (has_bias_) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), out_);
  cached_x_ = this->training_ ? x : Tensor<T>();
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!cached_x_.empty());
  const int M = static_cast<int>(cached_x_.size() / static_cast<std::size_t>(in_));
  CMapR<T> G(grad.data(), M, out_);
  CMapR<T> X(cached_x_.data(), M, in_);
  MapR<T>(weight_.ensure_grad().data(), out_, in_).noalias() += G.transpose() * X;
  if (has_bias_) {
    auto& db = bias_.ensure_grad();
    for (int o = 0; o < out_; ++o) db[o] += G.col(o).sum();
  }
  Tensor<T> dx(cached_x_.shape());
  MapR<T>(dx.data(), M, in_).noalias() = G * CMapR<T>(weight_.value.data(), out_, in_);
  return dx;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.params.push_back({join_name(prefix, "weight"), &weight_});
  if (has_bias_) out.params.push_back({join_name(prefix, "bias"), &bias_});
}

template <typename T>
void Linear<T>::reset_parameters(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  fill_uniform(weight_.value, rng, bound);
  if (has_bias_) fill_uniform(bias_.value, rng, bound);
}

// ---------------------------------------------------------------------------
// Activations, pooling, reshaping

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  cached_y_ = this->training_ ? y : Tensor<T>();
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!cached_y_.empty());
  Tensor<T> dx(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) dx[i] = cached_y_[i] > T(0) ? grad[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> GELU<T>::forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
  }
  cached_x_ = this->training_ ? x : Tensor<T>();
  return y;
}

template <typename T>
Tensor<T> GELU<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!cached_x_.empty());
  Tensor<T> dx(grad.shape());
  const double inv_sqrt_2pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double v = cached_x_[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    dx[i] = static_cast<T>(grad[i] * (cdf + v * pdf));
  }
  return dx;
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  expect_rank(x.shape(), 4, "MaxPool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = pooled_size(H, k_, s_, p_), Wo = pooled_size(W, k_, s_, p_);
  if (Ho <= 0 || Wo <= 0) throw Error("MaxPool2d input " + shape_string(x.shape()) + " is too small");
  Tensor<T> y({N, C, Ho, Wo});
  const bool keep = this->training_;
  argmax_.assign(keep ? y.size() : 0, 0);
  in_shape_ = x.shape();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = x.data() + static_cast<std::size_t>(nc) * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        int best_i = -1;
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * s_ - p_ + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k_; ++kx) {
            const int ix = ox * s_ - p_ + kx;
            if (ix < 0 || ix >= W) continue;
            const T v = src[iy * W + ix];
            if (best_i < 0 || v > best) {
              best = v;
              best_i = iy * W + ix;
            }
          }
        }
        y[o] = best;
        if (keep) argmax_[o] = best_i;
      }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!argmax_.empty());
  Tensor<T> dx(in_shape_);
  const std::size_t HW = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  const std::size_t per = static_cast<std::size_t>(grad.dim(2)) * grad.dim(3);
  for (std::size_t o = 0; o < grad.size(); ++o) dx[(o / per) * HW + static_cast<std::size_t>(argmax_[o])] += grad[o];
  return dx;
}

template <typename T>
Tensor<T> AvgPool2d<T>::forward(const Tensor<T>& x) {
  expect_rank(x.shape(), 4, "AvgPool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = pooled_size(H, k_, s_, p_), Wo = pooled_size(W, k_, s_, p_);
  if (Ho <= 0 || Wo <= 0) throw Error("AvgPool2d input " + shape_string(x.shape()) + " is too small");
  Tensor<T> y({N, C, Ho, Wo});
  in_shape_ = x.shape();
  const T inv = T(1) / static_cast<T>(k_ * k_);
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = x.data() + static_cast<std::size_t>(nc) * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        T acc = 0;
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * s_ - p_ + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k_; ++kx) {
            const int ix = ox * s_ - p_ + kx;
            if (ix >= 0 && ix < W) acc += src[iy * W + ix];
          }
        }
        y[o] = acc * inv;
      }
  }
  return y;
}

template <typename T>
Tensor<T> AvgPool2d<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!in_shape_.empty());
  const int H = in_shape_[2], W = in_shape_[3];
  const int Ho = grad.dim(2), Wo = grad.dim(3);
  Tensor<T> dx(in_shape_);
  const T inv = T(1) / static_cast<T>(k_ * k_);
  std::size_t o = 0;
  for (int nc = 0; nc < in_shape_[0] * in_shape_[1]; ++nc) {
    T* dst = dx.data() + static_cast<std::size_t>(nc) * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        const T g = grad[o] * inv;
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * s_ - p_ + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k_; ++kx) {
            const int ix = ox * s_ - p_ + kx;
            if (ix >= 0 && ix < W) dst[iy * W + ix] += g;
          }
        }
      }
  }
  return dx;
}

template <typename T>
Tensor<T> AdaptiveAvgPool2d<T>::forward(const Tensor<T>& x) {
  expect_rank(x.shape(), 4, "AdaptiveAvgPool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> y({N, C, oh_, ow_});
  in_shape_ = x.shape();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = x.data() + static_cast<std::size_t>(nc) * H * W;
    for (int i = 0; i < oh_; ++i) {
      const int y0 = (i * H) / oh_, y1 = ((i + 1) * H + oh_ - 1) / oh_;
      for (int j = 0; j < ow_; ++j, ++o) {
        const int x0 = (j * W) / ow_, x1 = ((j + 1) * W + ow_ - 1) / ow_;
        T acc = 0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) acc += src[yy * W + xx];
        y[o] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> AdaptiveAvgPool2d<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!in_shape_.empty());
  const int H = in_shape_[2], W = in_shape_[3];
  Tensor<T> dx(in_shape_);
  std::size_t o = 0;
  for (int nc = 0; nc < in_shape_[0] * in_shape_[1]; ++nc) {
    T* dst = dx.data() + static_cast<std::size_t>(nc) * H * W;
    for (int i = 0; i < oh_; ++i) {
      const int y0 = (i * H) / oh_, y1 = ((i + 1) * H + oh_ - 1) / oh_;
      for (int j = 0; j < ow_; ++j, ++o) {
        const int x0 = (j * W) / ow_, x1 = ((j + 1) * W + ow_ - 1) / ow_;
        const T g = grad[o] / static_cast<T>((y1 - y0) * (x1 - x0));
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) dst[yy * W + xx] += g;
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape();
  const int n = x.dim(0);
  return x.reshaped({n, static_cast<int>(x.size() / static_cast<std::size_t>(n))});
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad) {
  return grad.reshaped(in_shape_);
}

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x) {
  masked_ = this->training_ && p_ > 0.0;
  if (!masked_) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - p_));
  mask_.resize(x.size());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = rng_.uniform() < p_ ? T(0) : scale;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& grad) {
  if (!masked_) return grad;
  Tensor<T> dx(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) dx[i] = grad[i] * mask_[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Containers

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) {
  if (children_.empty()) return x;
  Tensor<T> h = children_.front().second->forward(x);
  for (std::size_t i = 1; i < children_.size(); ++i) h = children_[i].second->forward(h);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad) {
  if (children_.empty()) return grad;
  Tensor<T> g = children_.back().second->backward(grad);
  for (std::size_t i = children_.size() - 1; i-- > 0;) g = children_[i].second->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  for (auto& [name, child] : children_) child->collect(join_name(prefix, name), out);
}

template <typename T>
void Sequential<T>::set_training(bool on) {
  this->training_ = on;
  for (auto& c : children_) c.second->set_training(on);
}

template <typename T>
void Sequential<T>::reset_parameters(Rng& rng) {
  for (auto& c : children_) c.second->reset_parameters(rng);
}

template <typename T>
void Sequential<T>::reseed(std::uint64_t seed) {
  for (std::size_t i = 0; i < children_.size(); ++i) children_[i].second->reseed(derive_seed(seed, "child", i));
}

template <typename T>
Tensor<T> Concat<T>::forward(const Tensor<T>& x) {
  std::vector<Tensor<T>> outs;
  outs.reserve(branches_.size());
  for (auto& b : branches_) outs.push_back(b.second->forward(x));
  if (outs.empty()) throw Error("Concat has no branches");
  Shape s = outs.front().shape();
  const int N = s[0];
  const std::size_t inner = outs.front().size() / (static_cast<std::size_t>(N) * s[1]);
  int total = 0;
  widths_.clear();
  for (auto& o : outs) {
    if (o.dim(0) != N || o.size() / (static_cast<std::size_t>(N) * o.dim(1)) != inner)
      throw Error("Concat branches disagree on shape");
    widths_.push_back(o.dim(1));
    total += o.dim(1);
  }
  s[1] = total;
  Tensor<T> y(s);
  for (int n = 0; n < N; ++n) {
    T* dst = y.data() + static_cast<std::size_t>(n) * total * inner;
    for (std::size_t b = 0; b < outs.size(); ++b) {
      const std::size_t len = static_cast<std::size_t>(widths_[b]) * inner;
      const T* src = outs[b].data() + static_cast<std::size_t>(n) * len;
      std::copy(src, src + len, dst);
      dst += len;
    }
  }
  return y;
}

template <typename T>
Tensor<T> Concat<T>::backward(const Tensor<T>& grad) {
  const int N = grad.dim(0);
  const int total = grad.dim(1);
  const std::size_t inner = grad.size() / (static_cast<std::size_t>(N) * total);
  Tensor<T> dx;
  std::size_t offset = 0;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Shape s = grad.shape();
    s[1] = widths_[b];
    Tensor<T> g(s);
    const std::size_t len = static_cast<std::size_t>(widths_[b]) * inner;
    for (int n = 0; n < N; ++n) {
      const T* src = grad.data() + static_cast<std::size_t>(n) * total * inner + offset;
      std::copy(src, src + len, g.data() + static_cast<std::size_t>(n) * len);
    }
    offset += len;
    Tensor<T> d = branches_[b].second->backward(g);
    if (dx.empty())
      dx = std::move(d);
    else
      dx += d;
  }
  return dx;
}

template <typename T>
void Concat<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  for (auto& [name, b] : branches_) b->collect(join_name(prefix, name), out);
}

template <typename T>
void Concat<T>::set_training(bool on) {
  this->training_ = on;
  for (auto& b : branches_) b.second->set_training(on);
}

template <typename T>
void Concat<T>::reset_parameters(Rng& rng) {
  for (auto& b : branches_) b.second->reset_parameters(rng);
}

template <typename T>
void Concat<T>::reseed(std::uint64_t seed) {
  for (std::size_t i = 0; i < branches_.size(); ++i) branches_[i].second->reseed(derive_seed(seed, "branch", i));
}

template <typename T>
Tensor<T> Residual<T>::forward(const Tensor<T>& x) {
  Tensor<T> y = main_->forward(x);
  if (shortcut_)
    y += shortcut_->forward(x);
  else
    y += x;
  if (post_relu_) {
    for (auto& v : y.values()) v = v > T(0) ? v : T(0);
    cached_y_ = this->training_ ? y : Tensor<T>();
  }
  return y;
}

template <typename T>
Tensor<T> Residual<T>::backward(const Tensor<T>& grad) {
  Tensor<T> g = grad;
  if (post_relu_) {
    this->require_cache(!cached_y_.empty());
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(cached_y_[i] > T(0))) g[i] = T(0);
  }
  Tensor<T> dx = main_->backward(g);
  if (shortcut_)
    dx += shortcut_->backward(g);
  else
    dx += g;
  return dx;
}

template <typename T>
void Residual<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  main_->collect(prefix, out);
  if (shortcut_) shortcut_->collect(join_name(prefix, shortcut_name_), out);
}

template <typename T>
void Residual<T>::set_training(bool on) {
  this->training_ = on;
  main_->set_training(on);
  if (shortcut_) shortcut_->set_training(on);
}

template <typename T>
void Residual<T>::reset_parameters(Rng& rng) {
  main_->reset_parameters(rng);
  if (shortcut_) shortcut_->reset_parameters(rng);
}

template <typename T>
void Residual<T>::reseed(std::uint64_t seed) {
  main_->reseed(derive_seed(seed, "main"));
  if (shortcut_) shortcut_->reseed(derive_seed(seed, "shortcut"));
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  if (!(opt_.learning_rate > 0.0)) throw Error("learning rate must be positive");
  if (opt_.weight_decay < 0.0) throw Error("weight decay must be non-negative");
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), T(0));
    v_.emplace_back(p->value.size(), T(0));
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const double step = opt_.learning_rate / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
  const T wd = static_cast<T>(opt_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto* p = params_[k];
    if (p->grad.empty()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    T* w = p->value.data();
    const T* g = p->grad.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const T gi = g[i] + wd * w[i];
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const double denom = std::sqrt(static_cast<double>(v[i])) / sqrt_bc2 + opt_.eps;
      w[i] = static_cast<T>(w[i] - step * m[i] / denom);
    }
  }
}

#define PMI_NN_INSTANTIATE(T)          \
  template class Layer<T>;             \
  template class Conv2d<T>;            \
  template class BatchNorm2d<T>;       \
  template class Linear<T>;            \
  template class ReLU<T>;              \
  template class GELU<T>;              \
  template class MaxPool2d<T>;         \
  template class AvgPool2d<T>;         \
  template class AdaptiveAvgPool2d<T>; \
  template class Flatten<T>;           \
  template class Dropout<T>;           \
  template class Sequential<T>;        \
  template class Concat<T>;            \
  template class Residual<T>;          \
  template class Adam<T>;

PMI_NN_INSTANTIATE(float)
PMI_NN_INSTANTIATE(double)

}  // namespace pmi::nn
