#include <cmath>

#include <Eigen/Dense>

#include "pmi/nn/layer.hpp"

namespace pmi::nn {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using StridedMap = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

void expect_tokens(const Shape& s, int dim, const char* layer) {
  if (s.size() != 3 || s[2] != dim)
    throw Error(std::string(layer) + " expects (N, T, " + std::to_string(dim) + ") tokens, got " + shape_string(s));
}

template <typename T>
void xavier_uniform(Tensor<T>& t, Rng& rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

// ---------------------------------------------------------------------------
// LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(int dim, double eps) : dim_(dim), eps_(eps) {
  weight_.value = Tensor<T>({dim}, T(1));
  bias_.value = Tensor<T>({dim});
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x) {
  if (x.rank() < 1 || x.dim(-1) != dim_) throw Error("LayerNorm dimension mismatch: " + shape_string(x.shape()));
  const std::size_t rows = x.size() / static_cast<std::size_t>(dim_);
  Tensor<T> y(x.shape());
  const bool keep = this->training_;
  cached_xhat_ = keep ? Tensor<T>(x.shape()) : Tensor<T>();
  cached_inv_std_.assign(keep ? rows : 0, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * dim_;
    double mean = 0.0;
    for (int i = 0; i < dim_; ++i) mean += xr[i];
    mean /= dim_;
    double var = 0.0;
    for (int i = 0; i < dim_; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= dim_;
    const double inv = 1.0 / std::sqrt(var + eps_);
    T* yr = y.data() + r * dim_;
    for (int i = 0; i < dim_; ++i) {
      const T xh = static_cast<T>((xr[i] - mean) * inv);
      if (keep) cached_xhat_[r * dim_ + i] = xh;
      yr[i] = weight_.value[i] * xh + bias_.value[i];
    }
    if (keep) cached_inv_std_[r] = static_cast<T>(inv);
  }
  return y;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!cached_xhat_.empty());
  const std::size_t rows = grad.size() / static_cast<std::size_t>(dim_);
  auto& dg = weight_.ensure_grad();
  auto& db = bias_.ensure_grad();
  Tensor<T> dx(grad.shape());
  std::vector<double> dxh(static_cast<std::size_t>(dim_));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* gr = grad.data() + r * dim_;
    const T* xh = cached_xhat_.data() + r * dim_;
    double sum = 0.0, sum_xh = 0.0;
    for (int i = 0; i < dim_; ++i) {
      dg[i] += gr[i] * xh[i];
      db[i] += gr[i];
      dxh[i] = static_cast<double>(gr[i]) * weight_.value[i];
      sum += dxh[i];
      sum_xh += dxh[i] * xh[i];
    }
    const double k = cached_inv_std_[r] / static_cast<double>(dim_);
    T* dr = dx.data() + r * dim_;
    for (int i = 0; i < dim_; ++i) dr[i] = static_cast<T>(k * (dim_ * dxh[i] - sum - xh[i] * sum_xh));
  }
  return dx;
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.params.push_back({join_name(prefix, "weight"), &weight_});
  out.params.push_back({join_name(prefix, "bias"), &bias_});
}

template <typename T>
void LayerNorm<T>::reset_parameters(Rng&) {
  weight_.value.fill(T(1));
  bias_.value.fill(T(0));
}

// ---------------------------------------------------------------------------
// MultiheadSelfAttention

template <typename T>
MultiheadSelfAttention<T>::MultiheadSelfAttention(int dim, int heads) : dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0) throw Error("attention dim must be divisible by the head count");
  in_w_.value = Tensor<T>({3 * dim, dim});
  in_b_.value = Tensor<T>({3 * dim});
  out_w_.value = Tensor<T>({dim, dim});
  out_b_.value = Tensor<T>({dim});
}

template <typename T>
Tensor<T> MultiheadSelfAttention<T>::forward(const Tensor<T>& x) {
  expect_tokens(x.shape(), dim_, "MultiheadSelfAttention");
  const int N = x.dim(0), L = x.dim(1), D = dim_, dh = D / heads_;
  const int M = N * L;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<T> qkv({N, L, 3 * D});
  MapR<T> QKV(qkv.data(), M, 3 * D);
  QKV.noalias() = CMapR<T>(x.data(), M, D) * CMapR<T>(in_w_.value.data(), 3 * D, D).transpose();
  QKV.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(in_b_.value.data(), 3 * D);

  Tensor<T> probs({N, heads_, L, L});
  Tensor<T> attn({N, L, D});
  for (int n = 0; n < N; ++n) {
    const T* base = qkv.data() + static_cast<std::size_t>(n) * L * 3 * D;
    for (int h = 0; h < heads_; ++h) {
      CStridedMap<T> Q(base + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      CStridedMap<T> K(base + D + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      CStridedMap<T> V(base + 2 * D + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      MapR<T> P(probs.data() + (static_cast<std::size_t>(n) * heads_ + h) * L * L, L, L);
      P.noalias() = (Q * K.transpose()) * scale;
      for (int r = 0; r < L; ++r) {
        const T mx = P.row(r).maxCoeff();
        P.row(r) = (P.row(r).array() - mx).exp();
        P.row(r) /= P.row(r).sum();
      }
      StridedMap<T> O(attn.data() + static_cast<std::size_t>(n) * L * D + h * dh, L, dh, Eigen::OuterStride<>(D));
      O.noalias() = P * V;
    }
  }

  Tensor<T> y({N, L, D});
  MapR<T> Y(y.data(), M, D);
  Y.noalias() = CMapR<T>(attn.data(), M, D) * CMapR<T>(out_w_.value.data(), D, D).transpose();
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(out_b_.value.data(), D);

  if (this->training_) {
    cached_x_ = x;
    cached_qkv_ = std::move(qkv);
    cached_probs_ = std::move(probs);
    cached_attn_ = std::move(attn);
  } else {
    cached_x_ = cached_qkv_ = cached_probs_ = cached_attn_ = Tensor<T>();
  }
  return y;
}

template <typename T>
Tensor<T> MultiheadSelfAttention<T>::backward(const Tensor<T>& grad) {
  this->require_cache(!cached_x_.empty());
  const int N = cached_x_.dim(0), L = cached_x_.dim(1), D = dim_, dh = D / heads_;
  const int M = N * L;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  CMapR<T> G(grad.data(), M, D);
  MapR<T>(out_w_.ensure_grad().data(), D, D).noalias() += G.transpose() * CMapR<T>(cached_attn_.data(), M, D);
  {
    auto& db = out_b_.ensure_grad();
    for (int i = 0; i < D; ++i) db[i] += G.col(i).sum();
  }
  Tensor<T> dattn({N, L, D});
  MapR<T>(dattn.data(), M, D).noalias() = G * CMapR<T>(out_w_.value.data(), D, D);

  Tensor<T> dqkv({N, L, 3 * D});
  MatR<T> dP(L, L), dS(L, L);
  for (int n = 0; n < N; ++n) {
    const T* base = cached_qkv_.data() + static_cast<std::size_t>(n) * L * 3 * D;
    T* dbase = dqkv.data() + static_cast<std::size_t>(n) * L * 3 * D;
    for (int h = 0; h < heads_; ++h) {
      const Eigen::OuterStride<> s3(3 * D);
      CStridedMap<T> Q(base + h * dh, L, dh, s3);
      CStridedMap<T> K(base + D + h * dh, L, dh, s3);
      CStridedMap<T> V(base + 2 * D + h * dh, L, dh, s3);
      StridedMap<T> dQ(dbase + h * dh, L, dh, s3);
      StridedMap<T> dK(dbase + D + h * dh, L, dh, s3);
      StridedMap<T> dV(dbase + 2 * D + h * dh, L, dh, s3);
      CMapR<T> P(cached_probs_.data() + (static_cast<std::size_t>(n) * heads_ + h) * L * L, L, L);
      CStridedMap<T> dO(dattn.data() + static_cast<std::size_t>(n) * L * D + h * dh, L, dh, Eigen::OuterStride<>(D));

      dP.noalias() = dO * V.transpose();
      dV.noalias() = P.transpose() * dO;
      for (int r = 0; r < L; ++r) {
        const T dot = (dP.row(r).array() * P.row(r).array()).sum();
        dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
      }
      dQ.noalias() = (dS * K) * scale;
      dK.noalias() = (dS.transpose() * Q) * scale;
    }
  }

  CMapR<T> dQKV(dqkv.data(), M, 3 * D);
  MapR<T>(in_w_.ensure_grad().data(), 3 * D, D).noalias() += dQKV.transpose() * CMapR<T>(cached_x_.data(), M, D);
  {
    auto& db = in_b_.ensure_grad();
    for (int i = 0; i < 3 * D; ++i) db[i] += dQKV.col(i).sum();
  }
  Tensor<T> dx(cached_x_.shape());
  MapR<T>(dx.data(), M, D).noalias() = dQKV * CMapR<T>(in_w_.value.data(), 3 * D, D);
  return dx;
}

template <typename T>
void MultiheadSelfAttention<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  out.params.push_back({join_name(prefix, "in_proj_weight"), &in_w_});
  out.params.push_back({join_name(prefix, "in_proj_bias"), &in_b_});
  out.params.push_back({join_name(prefix, "out_proj.weight"), &out_w_});
  out.params.push_back({join_name(prefix, "out_proj.bias"), &out_b_});
}

template <typename T>
void MultiheadSelfAttention<T>::reset_parameters(Rng& rng) {
  xavier_uniform(in_w_.value, rng, dim_, 3 * dim_);
  in_b_.value.fill(T(0));
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (auto& v : out_w_.value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  out_b_.value.fill(T(0));
}

// ---------------------------------------------------------------------------
// PatchEmbedding

template <typename T>
PatchEmbedding<T>::PatchEmbedding(int in_channels, int dim, int patch, int image_side)
    : dim_(dim), patch_(patch), grid_(image_side / patch), proj_(in_channels, dim, patch, patch, patch, patch) {
  if (image_side % patch != 0) throw Error("image side must be a multiple of the patch size");
  class_token_.value = Tensor<T>({1, 1, dim});
  pos_embedding_.value = Tensor<T>({1, grid_ * grid_ + 1, dim});
}

template <typename T>
Tensor<T> PatchEmbedding<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(2) != grid_ * patch_ || x.dim(3) != grid_ * patch_)
    throw Error("patch embedding expects " + std::to_string(grid_ * patch_) + "x" + std::to_string(grid_ * patch_) +
                " input, got " + shape_string(x.shape()));
  Tensor<T> c = proj_.forward(x);  // (N, D, g, g)
  const int N = x.dim(0), P = grid_ * grid_, L = P + 1;
  Tensor<T> tokens({N, L, dim_});
  for (int n = 0; n < N; ++n) {
    T* dst = tokens.data() + static_cast<std::size_t>(n) * L * dim_;
    for (int d = 0; d < dim_; ++d) dst[d] = class_token_.value[d] + pos_embedding_.value[d];
    const T* src = c.data() + static_cast<std::size_t>(n) * dim_ * P;
    for (int p = 0; p < P; ++p)
      for (int d = 0; d < dim_; ++d)
        dst[static_cast<std::size_t>(p + 1) * dim_ + d] =
            src[static_cast<std::size_t>(d) * P + p] + pos_embedding_.value[static_cast<std::size_t>(p + 1) * dim_ + d];
  }
  return tokens;
}

template <typename T>
Tensor<T> PatchEmbedding<T>::backward(const Tensor<T>& grad) {
  const int N = grad.dim(0), P = grid_ * grid_, L = P + 1;
  auto& dpos = pos_embedding_.ensure_grad();
  auto& dcls = class_token_.ensure_grad();
  Tensor<T> dc({N, dim_, grid_, grid_});
  for (int n = 0; n < N; ++n) {
    const T* g = grad.data() + static_cast<std::size_t>(n) * L * dim_;
    for (std::size_t i = 0; i < static_cast<std::size_t>(L) * dim_; ++i) dpos[i] += g[i];
    for (int d = 0; d < dim_; ++d) dcls[d] += g[d];
    T* dst = dc.data() + static_cast<std::size_t>(n) * dim_ * P;
    for (int p = 0; p < P; ++p)
      for (int d = 0; d < dim_; ++d)
        dst[static_cast<std::size_t>(d) * P + p] = g[static_cast<std::size_t>(p + 1) * dim_ + d];
  }
  return proj_.backward(dc);
}

template <typename T>
void PatchEmbedding<T>::collect(const std::string& prefix, StateRefs<T>& out) {
  proj_.collect(join_name(prefix, "conv_proj"), out);
  out.params.push_back({join_name(prefix, "class_token"), &class_token_});
  out.params.push_back({join_name(prefix, "encoder.pos_embedding"), &pos_embedding_});
}

template <typename T>
void PatchEmbedding<T>::set_training(bool on) {
  this->training_ = on;
  proj_.set_training(on);
}

template <typename T>
void PatchEmbedding<T>::reset_parameters(Rng& rng) {
  proj_.reset_parameters(rng);
  const double fan_in = static_cast<double>(proj_.in_channels()) * patch_ * patch_;
  for (auto& v : proj_.weight().value.values()) v = static_cast<T>(rng.normal() * std::sqrt(1.0 / fan_in));
  class_token_.value.fill(T(0));
  for (auto& v : pos_embedding_.value.values()) v = static_cast<T>(rng.normal() * 0.02);
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> ClassTokenSelect<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 3) throw Error("class token selection expects (N, T, D), got " + shape_string(x.shape()));
  in_shape_ = x.shape();
  const int N = x.dim(0), L = x.dim(1), D = x.dim(2);
  Tensor<T> y({N, D});
  for (int n = 0; n < N; ++n)
    std::copy_n(x.data() + static_cast<std::size_t>(n) * L * D, D, y.data() + static_cast<std::size_t>(n) * D);
  return y;
}

template <typename T>
Tensor<T> ClassTokenSelect<T>::backward(const Tensor<T>& grad) {
  Tensor<T> dx(in_shape_);
  const int N = in_shape_[0], L = in_shape_[1], D = in_shape_[2];
  for (int n = 0; n < N; ++n)
    std::copy_n(grad.data() + static_cast<std::size_t>(n) * D, D, dx.data() + static_cast<std::size_t>(n) * L * D);
  return dx;
}

template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiheadSelfAttention<float>;
template class MultiheadSelfAttention<double>;
template class PatchEmbedding<float>;
template class PatchEmbedding<double>;
template class ClassTokenSelect<float>;
template class ClassTokenSelect<double>;

}  // namespace pmi::nn
