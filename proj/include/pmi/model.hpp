#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmi/common.hpp"
#include "pmi/image.hpp"
#include "pmi/nn/backbones.hpp"

namespace pmi {

using nn::BackboneName;

struct BackboneSpec {
  BackboneName name = BackboneName::toy_cnn;
  Band band = Band::nir;
  std::optional<std::filesystem::path> pretrained_weights;

  int embedding_dim() const { return nn::backbone_info(name).embedding_dim; }
  int input_side() const { return nn::backbone_info(name).input_side; }
  int channels() const { return band_channels(band); }
  /// ds_resnet152 needs a weights file; it is resnet152 otherwise.
  void validate() const;
};

/// Affine map between raw hours and the values the network regresses.
struct TargetScaler {
  double mean = 0.0;
  double std = 1.0;

  double to_model(double hours) const { return (hours - mean) / std; }
  double to_hours(double value) const { return value * std + mean; }
  bool operator==(const TargetScaler&) const = default;
};

/// A model that regresses PMI from one image per band.
class RegressionModel {
 public:
  virtual ~RegressionModel() = default;

  /// Bands consumed, in input order.
  virtual std::vector<Band> bands() const = 0;
  virtual BackboneName backbone() const = 0;
  /// "narrowband" or "multispectral".
  virtual std::string kind() const = 0;
  virtual int input_side() const { return nn::backbone_info(backbone()).input_side; }

  /// One (N, C, side, side) batch per band; returns (N, 1).
  virtual nn::Tensor<float> forward(std::span<const nn::Tensor<float>> inputs) = 0;
  /// Backpropagates dLoss/dy for the last training-mode forward.
  virtual void backward(const nn::Tensor<float>& grad) = 0;
  virtual void set_training(bool on) = 0;
  virtual void reseed(std::uint64_t seed) = 0;
  virtual nn::StateRefs<float> state() = 0;

  /// Canonical architecture string stored in checkpoints.
  std::string architecture() const;
  std::vector<nn::Parameter<float>*> parameters();

  TargetScaler scaler;
};

/// Backbone feature extractor followed by a single-output linear layer.
class NarrowbandModel final : public RegressionModel {
 public:
  NarrowbandModel(BackboneSpec spec, std::uint64_t init_seed);

  const BackboneSpec& spec() const { return spec_; }
  std::vector<Band> bands() const override { return {spec_.band}; }
  BackboneName backbone() const override { return spec_.name; }
  std::string kind() const override { return "narrowband"; }

  nn::Tensor<float> forward(std::span<const nn::Tensor<float>> inputs) override;
  nn::Tensor<float> forward(const nn::Tensor<float>& batch);
  void backward(const nn::Tensor<float>& grad) override;
  void set_training(bool on) override;
  void reseed(std::uint64_t seed) override { features_->reseed(seed); }
  nn::StateRefs<float> state() override;

  /// (N, embedding_dim) features of a batch.
  nn::Tensor<float> embed(const nn::Tensor<float>& batch);

  nn::Layer<float>& features() { return *features_; }
  nn::Linear<float>& head() { return *head_; }
  const std::string& head_name() const { return head_name_; }

 private:
  void check_input(const nn::Tensor<float>& batch) const;

  BackboneSpec spec_;
  std::unique_ptr<nn::Layer<float>> features_;
  std::unique_ptr<nn::Linear<float>> head_;
  std::string head_name_;
};

std::unique_ptr<NarrowbandModel> build_narrowband_model(const BackboneSpec& spec, std::uint64_t init_seed = 0);

/// Eval-mode embedding of a batch; deterministic.
nn::Tensor<float> extract_embedding(NarrowbandModel& model, const nn::Tensor<float>& batch);

// ---------------------------------------------------------------------------
// Fusion head: y = W2 . ReLU(W1 (e_nir ++ e_rgb) + b1) + b2

inline constexpr int kDefaultFusionHidden = 512;

struct FusionHeadParams {
  Eigen::MatrixXd W1;  // hidden x (d_nir + d_rgb)
  Eigen::VectorXd b1;  // hidden
  Eigen::VectorXd W2;  // hidden
  double b2 = 0.0;

  int hidden_dim() const { return static_cast<int>(W1.rows()); }
  int input_dim() const { return static_cast<int>(W1.cols()); }
  /// Throws on inconsistent shapes or an empty hidden layer.
  void validate() const;
};

double fuse_forward(const Eigen::VectorXd& e_nir, const Eigen::VectorXd& e_rgb, const FusionHeadParams& params);

struct FusionGradients {
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::VectorXd W2;
  double b2 = 0.0;
  Eigen::VectorXd e_nir;
  Eigen::VectorXd e_rgb;
};

/// d(dy * y)/d(everything) at the given point.
FusionGradients fuse_backward(const Eigen::VectorXd& e_nir, const Eigen::VectorXd& e_rgb,
                              const FusionHeadParams& params, double dy = 1.0);

/// NIR and RGB backbones trained jointly with the fusion head.
class MultispectralModel final : public RegressionModel {
 public:
  MultispectralModel(BackboneName backbone, std::uint64_t init_seed, int hidden_dim = kDefaultFusionHidden,
                     std::optional<std::filesystem::path> nir_weights = std::nullopt,
                     std::optional<std::filesystem::path> rgb_weights = std::nullopt);

  std::vector<Band> bands() const override { return {Band::nir, Band::rgb}; }
  BackboneName backbone() const override { return backbone_; }
  std::string kind() const override { return "multispectral"; }
  int hidden_dim() const { return hidden_; }

  nn::Tensor<float> forward(std::span<const nn::Tensor<float>> inputs) override;
  void backward(const nn::Tensor<float>& grad) override;
  void set_training(bool on) override;
  void reseed(std::uint64_t seed) override;
  nn::StateRefs<float> state() override;

  FusionHeadParams fusion_params() const;
  void set_fusion_params(const FusionHeadParams& params);

  NarrowbandModel& nir() { return *nir_; }
  NarrowbandModel& rgb() { return *rgb_; }

 private:
  BackboneName backbone_;
  int hidden_;
  std::unique_ptr<NarrowbandModel> nir_, rgb_;
  nn::Linear<float> fc1_, fc2_;
  nn::Tensor<float> cached_hidden_;
  int d_nir_ = 0;
};

// ---------------------------------------------------------------------------
// Inputs

/// Scales 8-bit images to [0, 1] and normalizes per channel for the backbone.
/// All images must share the band's channel count and the given side.
nn::Tensor<float> make_input_batch(std::span<const Raster* const> images, Band band, BackboneName backbone);

// ---------------------------------------------------------------------------
// Weights and checkpoints

/// Named float tensors with a JSON header.
struct TensorFile {
  std::string header_json;
  std::vector<std::pair<std::string, nn::Tensor<float>>> tensors;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

/// Loads backbone weights by parameter name. A 3-channel first convolution is
/// averaged over its channel axis for 1-channel models; a head of the wrong
/// shape (e.g. a 1000-class classifier) is skipped. Any other missing,
/// unexpected or mis-shaped tensor is an error.
void load_pretrained_weights(NarrowbandModel& model, const std::filesystem::path& path);

struct CheckpointInfo {
  std::string architecture;
  std::string kind;
  BackboneName backbone = BackboneName::toy_cnn;
  std::vector<Band> bands;
  int hidden_dim = 0;
  TargetScaler scaler;
  std::string config_json = "{}";  // training-config echo
};

void save_checkpoint(RegressionModel& model, const std::filesystem::path& path, const std::string& config_json = "{}");
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
/// Restores parameters, buffers and the target scaler; refuses a checkpoint
/// written for a different architecture or with any tensor mismatch.
void load_checkpoint(RegressionModel& model, const std::filesystem::path& path);
/// Builds the model a checkpoint describes and restores it.
std::unique_ptr<RegressionModel> load_model(const std::filesystem::path& path);

}  // namespace pmi
