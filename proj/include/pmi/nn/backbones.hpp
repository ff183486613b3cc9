#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "pmi/nn/layer.hpp"

namespace pmi::nn {

enum class BackboneName { vgg19, inception_v3, densenet121, resnet152, vit, ds_resnet152, toy_cnn };

struct BackboneInfo {
  BackboneName name;
  std::string_view id;          // registry key, e.g. "resnet152"
  int input_side;               // 299 for inception_v3, else 224
  int embedding_dim;            // width of the feature vector fed to the head
  std::string_view first_conv;  // parameter adapted for 1-channel input
  std::string_view head;        // scalar regression layer
  double input_mean;            // per-channel input normalization for a gray (NIR) image
  double input_std;
};

const BackboneInfo& backbone_info(BackboneName name);
BackboneName parse_backbone(std::string_view text);
std::span<const BackboneName> all_backbones();

/// RGB normalization for the given backbone (ImageNet statistics, or 0.5/0.5
/// for inception_v3, whose pretrained weights expect [-1, 1] input).
void rgb_normalization(BackboneName name, double mean[3], double std[3]);

/// features maps (N, C, side, side) to (N, embedding_dim); head maps that to (N, 1).
template <typename T>
struct Backbone {
  std::unique_ptr<Layer<T>> features;
  std::unique_ptr<Linear<T>> head;
};

/// Parameters are left at zero; call reset_parameters() on both parts.
template <typename T>
Backbone<T> build_backbone(BackboneName name, int in_channels);

/// Toy CNN layer indices inside `features` (for kink-aware gradient checks).
inline constexpr int kToyConvIndices[] = {0, 3, 6};

}  // namespace pmi::nn
