#include "pmi/nn/backbones.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace pmi::nn {
namespace {

constexpr double kImagenetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImagenetStd[3] = {0.229, 0.224, 0.225};

// Gray input uses the channel means of the RGB statistics.
constexpr std::array<BackboneInfo, 7> kRegistry{{
    {BackboneName::vgg19, "vgg19", 224, 4096, "features.0.weight", "classifier.6", 0.449, 0.226},
    {BackboneName::inception_v3, "inception_v3", 299, 2048, "Conv2d_1a_3x3.conv.weight", "fc", 0.5, 0.5},
    {BackboneName::densenet121, "densenet121", 224, 1024, "features.conv0.weight", "classifier", 0.449, 0.226},
    {BackboneName::resnet152, "resnet152", 224, 2048, "conv1.weight", "fc", 0.449, 0.226},
    {BackboneName::vit, "vit", 224, 768, "conv_proj.weight", "heads.head", 0.449, 0.226},
    {BackboneName::ds_resnet152, "ds_resnet152", 224, 2048, "conv1.weight", "fc", 0.449, 0.226},
    {BackboneName::toy_cnn, "toy_cnn", 224, 64, "features.0.weight", "head", 0.449, 0.226},
}};

constexpr std::array<BackboneName, 7> kAll{BackboneName::vgg19,       BackboneName::inception_v3,
                                           BackboneName::densenet121, BackboneName::resnet152,
                                           BackboneName::vit,         BackboneName::ds_resnet152,
                                           BackboneName::toy_cnn};

template <typename T>
std::unique_ptr<Sequential<T>> seq() {
  return std::make_unique<Sequential<T>>();
}

// --- VGG19 -----------------------------------------------------------------

template <typename T>
Backbone<T> vgg19(int in_channels) {
  auto net = seq<T>();
  auto feats = seq<T>();
  const int cfg[] = {64, 64, -1, 128, 128, -1, 256, 256, 256, 256, -1, 512, 512, 512, 512, -1, 512, 512, 512, 512, -1};
  int c = in_channels, idx = 0;
  for (int v : cfg) {
    if (v < 0) {
      feats->add(std::to_string(idx++), std::make_unique<MaxPool2d<T>>(2, 2));
    } else {
      feats->add(std::to_string(idx++), Conv2d<T>::square(c, v, 3, 1, 1));
      feats->add(std::to_string(idx++), std::make_unique<ReLU<T>>());
      c = v;
    }
  }
  net->add("features", std::move(feats));
  net->add("avgpool", std::make_unique<AdaptiveAvgPool2d<T>>(7, 7));
  net->add("", std::make_unique<Flatten<T>>());
  auto cls = seq<T>();
  cls->add("0", std::make_unique<Linear<T>>(512 * 7 * 7, 4096));
  cls->add("1", std::make_unique<ReLU<T>>());
  cls->add("2", std::make_unique<Dropout<T>>(0.5));
  cls->add("3", std::make_unique<Linear<T>>(4096, 4096));
  cls->add("4", std::make_unique<ReLU<T>>());
  cls->add("5", std::make_unique<Dropout<T>>(0.5));
  net->add("classifier", std::move(cls));
  return {std::move(net), std::make_unique<Linear<T>>(4096, 1)};
}

// --- ResNet152 -------------------------------------------------------------

template <typename T>
LayerPtr<T> bottleneck(int inplanes, int planes, int stride) {
  auto main = seq<T>();
  main->add("conv1", Conv2d<T>::square(inplanes, planes, 1, 1, 0, false));
  main->add("bn1", std::make_unique<BatchNorm2d<T>>(planes));
  main->add("", std::make_unique<ReLU<T>>());
  main->add("conv2", Conv2d<T>::square(planes, planes, 3, stride, 1, false));
  main->add("bn2", std::make_unique<BatchNorm2d<T>>(planes));
  main->add("", std::make_unique<ReLU<T>>());
  main->add("conv3", Conv2d<T>::square(planes, planes * 4, 1, 1, 0, false));
  main->add("bn3", std::make_unique<BatchNorm2d<T>>(planes * 4));
  LayerPtr<T> down;
  if (stride != 1 || inplanes != planes * 4) {
    auto d = seq<T>();
    d->add("0", Conv2d<T>::square(inplanes, planes * 4, 1, stride, 0, false));
    d->add("1", std::make_unique<BatchNorm2d<T>>(planes * 4));
    down = std::move(d);
  }
  return std::make_unique<Residual<T>>(std::move(main), std::move(down), "downsample", true);
}

template <typename T>
Backbone<T> resnet152(int in_channels) {
  auto net = seq<T>();
  net->add("conv1", Conv2d<T>::square(in_channels, 64, 7, 2, 3, false));
  net->add("bn1", std::make_unique<BatchNorm2d<T>>(64));
  net->add("", std::make_unique<ReLU<T>>());
  net->add("", std::make_unique<MaxPool2d<T>>(3, 2, 1));
  const int blocks[] = {3, 8, 36, 3};
  int inplanes = 64;
  for (int l = 0; l < 4; ++l) {
    const int planes = 64 << l;
    auto layer = seq<T>();
    for (int b = 0; b < blocks[l]; ++b) {
      layer->add(std::to_string(b), bottleneck<T>(inplanes, planes, (b == 0 && l > 0) ? 2 : 1));
      inplanes = planes * 4;
    }
    net->add("layer" + std::to_string(l + 1), std::move(layer));
  }
  net->add("avgpool", std::make_unique<AdaptiveAvgPool2d<T>>(1, 1));
  net->add("", std::make_unique<Flatten<T>>());
  return {std::move(net), std::make_unique<Linear<T>>(2048, 1)};
}

// --- DenseNet121 -----------------------------------------------------------

template <typename T>
Backbone<T> densenet121(int in_channels) {
  auto feats = seq<T>();
  feats->add("conv0", Conv2d<T>::square(in_channels, 64, 7, 2, 3, false));
  feats->add("norm0", std::make_unique<BatchNorm2d<T>>(64));
  feats->add("relu0", std::make_unique<ReLU<T>>());
  feats->add("pool0", std::make_unique<MaxPool2d<T>>(3, 2, 1));
  const int layers[] = {6, 12, 24, 16};
  const int growth = 32, bottleneck_width = 4 * growth;
  int c = 64;
  for (int b = 0; b < 4; ++b) {
    auto block = seq<T>();
    for (int i = 0; i < layers[b]; ++i) {
      auto branch = seq<T>();
      branch->add("norm1", std::make_unique<BatchNorm2d<T>>(c));
      branch->add("relu1", std::make_unique<ReLU<T>>());
      branch->add("conv1", Conv2d<T>::square(c, bottleneck_width, 1, 1, 0, false));
      branch->add("norm2", std::make_unique<BatchNorm2d<T>>(bottleneck_width));
      branch->add("relu2", std::make_unique<ReLU<T>>());
      branch->add("conv2", Conv2d<T>::square(bottleneck_width, growth, 3, 1, 1, false));
      auto dense = std::make_unique<Concat<T>>();
      dense->add("", std::make_unique<Identity<T>>());
      dense->add("", std::move(branch));
      block->add("denselayer" + std::to_string(i + 1), std::move(dense));
      c += growth;
    }
    feats->add("denseblock" + std::to_string(b + 1), std::move(block));
    if (b < 3) {
      auto trans = seq<T>();
      trans->add("norm", std::make_unique<BatchNorm2d<T>>(c));
      trans->add("relu", std::make_unique<ReLU<T>>());
      trans->add("conv", Conv2d<T>::square(c, c / 2, 1, 1, 0, false));
      trans->add("pool", std::make_unique<AvgPool2d<T>>(2, 2));
      feats->add("transition" + std::to_string(b + 1), std::move(trans));
      c /= 2;
    }
  }
  feats->add("norm5", std::make_unique<BatchNorm2d<T>>(c));
  auto net = seq<T>();
  net->add("features", std::move(feats));
  net->add("", std::make_unique<ReLU<T>>());
  net->add("", std::make_unique<AdaptiveAvgPool2d<T>>(1, 1));
  net->add("", std::make_unique<Flatten<T>>());
  return {std::move(net), std::make_unique<Linear<T>>(c, 1)};
}

// --- Inception v3 ----------------------------------------------------------

template <typename T>
LayerPtr<T> basic_conv(int in, int out, int kh, int kw, int stride = 1, int ph = 0, int pw = 0) {
  auto s = seq<T>();
  s->add("conv", std::make_unique<Conv2d<T>>(in, out, kh, kw, stride, stride, ph, pw, false));
  s->add("bn", std::make_unique<BatchNorm2d<T>>(out, 1e-3));
  s->add("", std::make_unique<ReLU<T>>());
  return s;
}

template <typename T>
LayerPtr<T> bc(int in, int out, int k, int stride = 1, int pad = 0) {
  return basic_conv<T>(in, out, k, k, stride, pad, pad);
}

template <typename T>
LayerPtr<T> chain(std::initializer_list<std::pair<std::string, LayerPtr<T>*>> parts) {
  auto s = seq<T>();
  for (auto& [name, layer] : parts) s->add(name, std::move(*layer));
  return s;
}

template <typename T>
LayerPtr<T> pool_branch(int in, int out) {
  auto s = seq<T>();
  s->add("", std::make_unique<AvgPool2d<T>>(3, 1, 1));
  s->add("branch_pool", bc<T>(in, out, 1));
  return s;
}

template <typename T>
LayerPtr<T> inception_a(int in, int pool_features) {
  auto cat = std::make_unique<Concat<T>>();
  cat->add("branch1x1", bc<T>(in, 64, 1));
  auto b5 = seq<T>();
  b5->add("branch5x5_1", bc<T>(in, 48, 1));
  b5->add("branch5x5_2", bc<T>(48, 64, 5, 1, 2));
  cat->add("", std::move(b5));
  auto b3 = seq<T>();
  b3->add("branch3x3dbl_1", bc<T>(in, 64, 1));
  b3->add("branch3x3dbl_2", bc<T>(64, 96, 3, 1, 1));
  b3->add("branch3x3dbl_3", bc<T>(96, 96, 3, 1, 1));
  cat->add("", std::move(b3));
  cat->add("", pool_branch<T>(in, pool_features));
  return cat;
}

template <typename T>
LayerPtr<T> inception_b(int in) {
  auto cat = std::make_unique<Concat<T>>();
  cat->add("branch3x3", bc<T>(in, 384, 3, 2));
  auto b3 = seq<T>();
  b3->add("branch3x3dbl_1", bc<T>(in, 64, 1));
  b3->add("branch3x3dbl_2", bc<T>(64, 96, 3, 1, 1));
  b3->add("branch3x3dbl_3", bc<T>(96, 96, 3, 2));
  cat->add("", std::move(b3));
  cat->add("", std::make_unique<MaxPool2d<T>>(3, 2));
  return cat;
}

template <typename T>
LayerPtr<T> inception_c(int in, int c7) {
  auto cat = std::make_unique<Concat<T>>();
  cat->add("branch1x1", bc<T>(in, 192, 1));
  auto b7 = seq<T>();
  b7->add("branch7x7_1", bc<T>(in, c7, 1));
  b7->add("branch7x7_2", basic_conv<T>(c7, c7, 1, 7, 1, 0, 3));
  b7->add("branch7x7_3", basic_conv<T>(c7, 192, 7, 1, 1, 3, 0));
  cat->add("", std::move(b7));
  auto bd = seq<T>();
  bd->add("branch7x7dbl_1", bc<T>(in, c7, 1));
  bd->add("branch7x7dbl_2", basic_conv<T>(c7, c7, 7, 1, 1, 3, 0));
  bd->add("branch7x7dbl_3", basic_conv<T>(c7, c7, 1, 7, 1, 0, 3));
  bd->add("branch7x7dbl_4", basic_conv<T>(c7, c7, 7, 1, 1, 3, 0));
  bd->add("branch7x7dbl_5", basic_conv<T>(c7, 192, 1, 7, 1, 0, 3));
  cat->add("", std::move(bd));
  cat->add("", pool_branch<T>(in, 192));
  return cat;
}

template <typename T>
LayerPtr<T> inception_d(int in) {
  auto cat = std::make_unique<Concat<T>>();
  auto b3 = seq<T>();
  b3->add("branch3x3_1", bc<T>(in, 192, 1));
  b3->add("branch3x3_2", bc<T>(192, 320, 3, 2));
  cat->add("", std::move(b3));
  auto b7 = seq<T>();
  b7->add("branch7x7x3_1", bc<T>(in, 192, 1));
  b7->add("branch7x7x3_2", basic_conv<T>(192, 192, 1, 7, 1, 0, 3));
  b7->add("branch7x7x3_3", basic_conv<T>(192, 192, 7, 1, 1, 3, 0));
  b7->add("branch7x7x3_4", bc<T>(192, 192, 3, 2));
  cat->add("", std::move(b7));
  cat->add("", std::make_unique<MaxPool2d<T>>(3, 2));
  return cat;
}

template <typename T>
LayerPtr<T> split_1x3_3x1(const std::string& a, const std::string& b, int c) {
  auto cat = std::make_unique<Concat<T>>();
  cat->add(a, basic_conv<T>(c, c, 1, 3, 1, 0, 1));
  cat->add(b, basic_conv<T>(c, c, 3, 1, 1, 1, 0));
  return cat;
}

template <typename T>
LayerPtr<T> inception_e(int in) {
  auto cat = std::make_unique<Concat<T>>();
  cat->add("branch1x1", bc<T>(in, 320, 1));
  auto b3 = seq<T>();
  b3->add("branch3x3_1", bc<T>(in, 384, 1));
  b3->add("", split_1x3_3x1<T>("branch3x3_2a", "branch3x3_2b", 384));
  cat->add("", std::move(b3));
  auto bd = seq<T>();
  bd->add("branch3x3dbl_1", bc<T>(in, 448, 1));
  bd->add("branch3x3dbl_2", bc<T>(448, 384, 3, 1, 1));
  bd->add("", split_1x3_3x1<T>("branch3x3dbl_3a", "branch3x3dbl_3b", 384));
  cat->add("", std::move(bd));
  cat->add("", pool_branch<T>(in, 192));
  return cat;
}

template <typename T>
Backbone<T> inception_v3(int in_channels) {
  auto net = seq<T>();
  net->add("Conv2d_1a_3x3", bc<T>(in_channels, 32, 3, 2));
  net->add("Conv2d_2a_3x3", bc<T>(32, 32, 3));
  net->add("Conv2d_2b_3x3", bc<T>(32, 64, 3, 1, 1));
  net->add("", std::make_unique<MaxPool2d<T>>(3, 2));
  net->add("Conv2d_3b_1x1", bc<T>(64, 80, 1));
  net->add("Conv2d_4a_3x3", bc<T>(80, 192, 3));
  net->add("", std::make_unique<MaxPool2d<T>>(3, 2));
  net->add("Mixed_5b", inception_a<T>(192, 32));
  net->add("Mixed_5c", inception_a<T>(256, 64));
  net->add("Mixed_5d", inception_a<T>(288, 64));
  net->add("Mixed_6a", inception_b<T>(288));
  net->add("Mixed_6b", inception_c<T>(768, 128));
  net->add("Mixed_6c", inception_c<T>(768, 160));
  net->add("Mixed_6d", inception_c<T>(768, 160));
  net->add("Mixed_6e", inception_c<T>(768, 192));
  net->add("Mixed_7a", inception_d<T>(768));
  net->add("Mixed_7b", inception_e<T>(1280));
  net->add("Mixed_7c", inception_e<T>(2048));
  net->add("avgpool", std::make_unique<AdaptiveAvgPool2d<T>>(1, 1));
  net->add("dropout", std::make_unique<Dropout<T>>(0.5));
  net->add("", std::make_unique<Flatten<T>>());
  return {std::move(net), std::make_unique<Linear<T>>(2048, 1)};
}

// --- ViT-B/16 --------------------------------------------------------------

template <typename T>
Backbone<T> vit_b_16(int in_channels) {
  constexpr int dim = 768, heads = 12, depth = 12, mlp = 3072;
  constexpr double eps = 1e-6;
  auto net = seq<T>();
  net->add("", std::make_unique<PatchEmbedding<T>>(in_channels, dim, 16, 224));
  auto layers = seq<T>();
  for (int i = 0; i < depth; ++i) {
    auto attn = seq<T>();
    attn->add("ln_1", std::make_unique<LayerNorm<T>>(dim, eps));
    attn->add("self_attention", std::make_unique<MultiheadSelfAttention<T>>(dim, heads));
    auto ff = seq<T>();
    ff->add("ln_2", std::make_unique<LayerNorm<T>>(dim, eps));
    auto m = seq<T>();
    m->add("0", std::make_unique<Linear<T>>(dim, mlp));
    m->add("1", std::make_unique<GELU<T>>());
    m->add("3", std::make_unique<Linear<T>>(mlp, dim));
    ff->add("mlp", std::move(m));
    auto block = seq<T>();
    block->add("", std::make_unique<Residual<T>>(std::move(attn)));
    block->add("", std::make_unique<Residual<T>>(std::move(ff)));
    layers->add("encoder_layer_" + std::to_string(i), std::move(block));
  }
  net->add("encoder.layers", std::move(layers));
  net->add("encoder.ln", std::make_unique<LayerNorm<T>>(dim, eps));
  net->add("", std::make_unique<ClassTokenSelect<T>>());
  return {std::move(net), std::make_unique<Linear<T>>(dim, 1)};
}

// --- Toy CNN ---------------------------------------------------------------

template <typename T>
Backbone<T> toy_cnn(int in_channels) {
  auto feats = seq<T>();
  feats->add("0", Conv2d<T>::square(in_channels, 16, 4, 4, 0));
  feats->add("1", std::make_unique<ReLU<T>>());
  feats->add("2", std::make_unique<MaxPool2d<T>>(2, 2));
  feats->add("3", Conv2d<T>::square(16, 32, 3, 1, 1));
  feats->add("4", std::make_unique<ReLU<T>>());
  feats->add("5", std::make_unique<MaxPool2d<T>>(2, 2));
  feats->add("6", Conv2d<T>::square(32, 64, 3, 1, 1));
  feats->add("7", std::make_unique<ReLU<T>>());
  feats->add("8", std::make_unique<AdaptiveAvgPool2d<T>>(1, 1));
  feats->add("9", std::make_unique<Flatten<T>>());
  auto net = seq<T>();
  net->add("features", std::move(feats));
  return {std::move(net), std::make_unique<Linear<T>>(64, 1)};
}

}  // namespace

const BackboneInfo& backbone_info(BackboneName name) {
  for (const auto& info : kRegistry)
    if (info.name == name) return info;
  throw Error("unknown backbone");
}

BackboneName parse_backbone(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "vit_b_16" || lower == "vit-b/16") lower = "vit";
  if (lower == "ds-resnet152") lower = "ds_resnet152";
  for (const auto& info : kRegistry)
    if (info.id == lower) return info.name;
  std::string known;
  for (const auto& info : kRegistry) known += (known.empty() ? "" : ", ") + std::string(info.id);
  throw Error("unknown backbone '" + std::string(text) + "' (known: " + known + ")");
}

std::span<const BackboneName> all_backbones() { return kAll; }

void rgb_normalization(BackboneName name, double mean[3], double std[3]) {
  for (int c = 0; c < 3; ++c) {
    if (name == BackboneName::inception_v3) {
      mean[c] = 0.5;
      std[c] = 0.5;
    } else {
      mean[c] = kImagenetMean[c];
      std[c] = kImagenetStd[c];
    }
  }
}

template <typename T>
Backbone<T> build_backbone(BackboneName name, int in_channels) {
  if (in_channels != 1 && in_channels != 3) throw Error("backbones take 1 (NIR) or 3 (RGB) input channels");
  switch (name) {
    case BackboneName::vgg19:
      return vgg19<T>(in_channels);
    case BackboneName::inception_v3:
      return inception_v3<T>(in_channels);
    case BackboneName::densenet121:
      return densenet121<T>(in_channels);
    case BackboneName::resnet152:
    case BackboneName::ds_resnet152:
      return resnet152<T>(in_channels);
    case BackboneName::vit:
      return vit_b_16<T>(in_channels);
    case BackboneName::toy_cnn:
      return toy_cnn<T>(in_channels);
  }
  throw Error("unknown backbone");
}

template Backbone<float> build_backbone<float>(BackboneName, int);
template Backbone<double> build_backbone<double>(BackboneName, int);

}  // namespace pmi::nn
