#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pmi/nn/tensor.hpp"
#include "pmi/random.hpp"

namespace pmi::nn {

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first backward

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(T(0));
  }
};

template <typename T>
struct ParamRef {
  std::string name;
  Parameter<T>* param;
};

template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* tensor;
};

/// Named view of a layer tree's trainable parameters and persistent buffers.
/// Names follow the dotted state_dict convention ("layer1.0.conv1.weight").
template <typename T>
struct StateRefs {
  std::vector<ParamRef<T>> params;
  std::vector<BufferRef<T>> buffers;
};

/// "a" + "b" -> "a.b"; empty parts vanish so wrappers can stay anonymous.
std::string join_name(const std::string& prefix, const std::string& name);

/// Module with a hand-written backward pass. forward() caches what backward()
/// needs only in training mode; backward() after an eval-mode forward throws.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  /// Accumulates parameter gradients and returns dLoss/dx.
  virtual Tensor<T> backward(const Tensor<T>& grad) = 0;

  virtual void collect(const std::string& prefix, StateRefs<T>& out) {
    (void)prefix;
    (void)out;
  }
  virtual void set_training(bool on) { training_ = on; }
  virtual void reset_parameters(Rng& rng) { (void)rng; }
  /// Reseeds stochastic layers (dropout); containers derive per-child seeds.
  virtual void reseed(std::uint64_t seed) { (void)seed; }

  bool training() const { return training_; }

  StateRefs<T> state(const std::string& prefix = "") {
    StateRefs<T> s;
    collect(prefix, s);
    return s;
  }

 protected:
  bool training_ = false;
  void require_cache(bool cached) const;
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel_h, int kernel_w, int stride_h = 1, int stride_w = 1,
         int pad_h = 0, int pad_w = 0, bool bias = true);
  /// Square kernel shorthand.
  static std::unique_ptr<Conv2d> square(int in, int out, int kernel, int stride = 1, int pad = 0, bool bias = true) {
    return std::make_unique<Conv2d>(in, out, kernel, kernel, stride, stride, pad, pad, bias);
  }

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void reset_parameters(Rng& rng) override;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return has_bias_ ? &bias_ : nullptr; }

 private:
  int in_, out_, kh_, kw_, sh_, sw_, ph_, pw_;
  bool has_bias_;
  Parameter<T> weight_, bias_;
  Tensor<T> cached_x_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void reset_parameters(Rng& rng) override;

 private:
  int channels_;
  double eps_, momentum_;
  Parameter<T> weight_, bias_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> cached_xhat_;
  AlignedVector<T> cached_inv_std_;
};

/// y = x W^T + b over the last dimension.
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(int in_features, int out_features, bool bias = true);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void reset_parameters(Rng& rng) override;

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  int in_, out_;
  bool has_bias_;
  Parameter<T> weight_, bias_;
  Tensor<T> cached_x_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;

 private:
  Tensor<T> cached_y_;
};

/// Exact (erf) GELU.
template <typename T>
class GELU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;

 private:
  Tensor<T> cached_x_;
};

template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(int kernel, int stride, int pad = 0) : k_(kernel), s_(stride), p_(pad) {}
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;

 private:
  int k_, s_, p_;
  Shape in_shape_;
  std::vector<std::int32_t> argmax_;
};

/// Padding counts toward the divisor.
template <typename T>
class AvgPool2d final : public Layer<T> {
 public:
  AvgPool2d(int kernel, int stride, int pad = 0) : k_(kernel), s_(stride), p_(pad) {}
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;

 private:
  int k_, s_, p_;
  Shape in_shape_;
};

template <typename T>
class AdaptiveAvgPool2d final : public Layer<T> {
 public:
  AdaptiveAvgPool2d(int out_h, int out_w) : oh_(out_h), ow_(out_w) {}
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;

 private:
  int oh_, ow_;
  Shape in_shape_;
};

/// (N, ...) -> (N, prod(...)).
template <typename T>
class Flatten final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;

 private:
  Shape in_shape_;
};

template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double p) : p_(p), rng_(0) {}
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }

 private:
  double p_;
  Rng rng_;
  AlignedVector<T> mask_;
  bool masked_ = false;
};

template <typename T>
class Identity final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override { return x; }
  Tensor<T> backward(const Tensor<T>& grad) override { return grad; }
};

// ---------------------------------------------------------------------------

template <typename T>
class Sequential final : public Layer<T> {
 public:
  template <typename L>
  L& add(std::string name, std::unique_ptr<L> layer) {
    L& ref = *layer;
    children_.emplace_back(std::move(name), std::move(layer));
    return ref;
  }
  std::size_t size() const { return children_.size(); }
  Layer<T>& child(std::size_t i) { return *children_[i].second; }
  const std::string& child_name(std::size_t i) const { return children_[i].first; }

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void set_training(bool on) override;
  void reset_parameters(Rng& rng) override;
  void reseed(std::uint64_t seed) override;

 private:
  std::vector<std::pair<std::string, LayerPtr<T>>> children_;
};

/// Runs every branch on the same input and concatenates along dim 1.
template <typename T>
class Concat final : public Layer<T> {
 public:
  template <typename L>
  L& add(std::string name, std::unique_ptr<L> layer) {
    L& ref = *layer;
    branches_.emplace_back(std::move(name), std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void set_training(bool on) override;
  void reset_parameters(Rng& rng) override;
  void reseed(std::uint64_t seed) override;

 private:
  std::vector<std::pair<std::string, LayerPtr<T>>> branches_;
  std::vector<int> widths_;
};

/// y = main(x) + shortcut(x) (identity when no shortcut), optionally ReLU'd.
template <typename T>
class Residual final : public Layer<T> {
 public:
  Residual(LayerPtr<T> main, LayerPtr<T> shortcut = nullptr, std::string shortcut_name = "downsample",
           bool post_relu = false)
      : main_(std::move(main)), shortcut_(std::move(shortcut)), shortcut_name_(std::move(shortcut_name)),
        post_relu_(post_relu) {}

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void set_training(bool on) override;
  void reset_parameters(Rng& rng) override;
  void reseed(std::uint64_t seed) override;

 private:
  LayerPtr<T> main_, shortcut_;
  std::string shortcut_name_;
  bool post_relu_;
  Tensor<T> cached_y_;
};

// ---------------------------------------------------------------------------
// Transformer pieces. Token tensors are (N, T, D).

template <typename T>
class LayerNorm final : public Layer<T> {
 public:
  explicit LayerNorm(int dim, double eps = 1e-5);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void reset_parameters(Rng& rng) override;

 private:
  int dim_;
  double eps_;
  Parameter<T> weight_, bias_;
  Tensor<T> cached_xhat_;
  AlignedVector<T> cached_inv_std_;
};

/// Packed-projection multi-head self-attention (in_proj_weight/in_proj_bias,
/// out_proj.weight/out_proj.bias).
template <typename T>
class MultiheadSelfAttention final : public Layer<T> {
 public:
  MultiheadSelfAttention(int dim, int heads);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void reset_parameters(Rng& rng) override;

 private:
  int dim_, heads_;
  Parameter<T> in_w_, in_b_, out_w_, out_b_;
  Tensor<T> cached_x_, cached_qkv_, cached_probs_, cached_attn_;
};

/// Patchify conv, class token and learned position embedding.
template <typename T>
class PatchEmbedding final : public Layer<T> {
 public:
  PatchEmbedding(int in_channels, int dim, int patch, int image_side);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;
  void collect(const std::string& prefix, StateRefs<T>& out) override;
  void set_training(bool on) override;
  void reset_parameters(Rng& rng) override;

  Conv2d<T>& projection() { return proj_; }

 private:
  int dim_, patch_, grid_;
  Conv2d<T> proj_;
  Parameter<T> class_token_, pos_embedding_;
};

/// (N, T, D) -> (N, D): the first token.
template <typename T>
class ClassTokenSelect final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad) override;

 private:
  Shape in_shape_;
};

// ---------------------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;  // added to the gradient (L2), not decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamOptions options);
  void zero_grad();
  void step();
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamOptions opt_;
  std::vector<AlignedVector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace pmi::nn
