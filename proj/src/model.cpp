#include "pmi/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace pmi {
namespace {

using json = nlohmann::ordered_json;
using nn::Tensor;

constexpr char kMagic[8] = {'P', 'M', 'I', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "tensor files are little-endian");

std::string bands_string(const std::vector<Band>& bands) {
  std::string s;
  for (Band b : bands) s += (s.empty() ? "" : "+") + std::string(band_name(b));
  return s;
}

json shape_json(const nn::Shape& s) {
  json j = json::array();
  for (int d : s) j.push_back(d);
  return j;
}

}  // namespace

void BackboneSpec::validate() const {
  if (name == BackboneName::ds_resnet152 && !pretrained_weights)
    throw Error("ds_resnet152 needs a weights file (--weights); use resnet152 for ImageNet-style initialization");
}

std::string RegressionModel::architecture() const {
  std::string s = kind() + ":" + std::string(nn::backbone_info(backbone()).id) + ":" + bands_string(bands());
  if (auto* m = dynamic_cast<const MultispectralModel*>(this)) s += ":" + std::to_string(m->hidden_dim());
  return s;
}

std::vector<nn::Parameter<float>*> RegressionModel::parameters() {
  std::vector<nn::Parameter<float>*> out;
  for (auto& p : state().params) out.push_back(p.param);
  return out;
}

// ---------------------------------------------------------------------------

NarrowbandModel::NarrowbandModel(BackboneSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  auto parts = nn::build_backbone<float>(spec_.name, spec_.channels());
  features_ = std::move(parts.features);
  head_ = std::move(parts.head);
  head_name_ = std::string(nn::backbone_info(spec_.name).head);
  Rng rng(derive_seed(init_seed, "init", static_cast<std::uint64_t>(spec_.band)));
  features_->reset_parameters(rng);
  head_->reset_parameters(rng);
  features_->reseed(derive_seed(init_seed, "dropout"));
  if (spec_.pretrained_weights) load_pretrained_weights(*this, *spec_.pretrained_weights);
}

void NarrowbandModel::check_input(const Tensor<float>& batch) const {
  const int side = spec_.input_side();
  if (batch.rank() != 4 || batch.dim(1) != spec_.channels() || batch.dim(2) != side || batch.dim(3) != side)
    throw Error(std::string(nn::backbone_info(spec_.name).id) + " " + std::string(band_name(spec_.band)) +
                " expects (N, " + std::to_string(spec_.channels()) + ", " + std::to_string(side) + ", " +
                std::to_string(side) + ") input, got " + nn::shape_string(batch.shape()));
}

Tensor<float> NarrowbandModel::forward(std::span<const Tensor<float>> inputs) {
  if (inputs.size() != 1) throw Error("a narrow-band model takes exactly one input batch");
  return forward(inputs[0]);
}

Tensor<float> NarrowbandModel::forward(const Tensor<float>& batch) {
  return head_->forward(embed(batch));
}

Tensor<float> NarrowbandModel::embed(const Tensor<float>& batch) {
  check_input(batch);
  return features_->forward(batch);
}

void NarrowbandModel::backward(const Tensor<float>& grad) { features_->backward(head_->backward(grad)); }

void NarrowbandModel::set_training(bool on) {
  features_->set_training(on);
  head_->set_training(on);
}

nn::StateRefs<float> NarrowbandModel::state() {
  nn::StateRefs<float> s;
  features_->collect("", s);
  head_->collect(head_name_, s);
  return s;
}

std::unique_ptr<NarrowbandModel> build_narrowband_model(const BackboneSpec& spec, std::uint64_t init_seed) {
  return std::make_unique<NarrowbandModel>(spec, init_seed);
}

Tensor<float> extract_embedding(NarrowbandModel& model, const Tensor<float>& batch) {
  model.set_training(false);
  return model.embed(batch);
}

// ---------------------------------------------------------------------------

void FusionHeadParams::validate() const {
  if (W1.rows() <= 0) throw Error("fusion hidden_dim must be positive");
  if (b1.size() != W1.rows() || W2.size() != W1.rows())
    throw Error("fusion head shapes disagree: W1 is " + std::to_string(W1.rows()) + "x" + std::to_string(W1.cols()) +
                ", b1 has " + std::to_string(b1.size()) + ", W2 has " + std::to_string(W2.size()));
}

namespace {

Eigen::VectorXd concat(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const FusionHeadParams& p) {
  p.validate();
  if (a.size() + b.size() != p.W1.cols())
    throw Error("fusion input is " + std::to_string(a.size()) + "+" + std::to_string(b.size()) +
                " wide but W1 expects " + std::to_string(p.W1.cols()));
  Eigen::VectorXd e(a.size() + b.size());
  e << a, b;
  return e;
}

}  // namespace

double fuse_forward(const Eigen::VectorXd& e_nir, const Eigen::VectorXd& e_rgb, const FusionHeadParams& params) {
  const Eigen::VectorXd e = concat(e_nir, e_rgb, params);
  const Eigen::VectorXd h = (params.W1 * e + params.b1).cwiseMax(0.0);
  return params.W2.dot(h) + params.b2;
}

FusionGradients fuse_backward(const Eigen::VectorXd& e_nir, const Eigen::VectorXd& e_rgb,
                              const FusionHeadParams& params, double dy) {
  const Eigen::VectorXd e = concat(e_nir, e_rgb, params);
  const Eigen::VectorXd pre = params.W1 * e + params.b1;
  const Eigen::VectorXd h = pre.cwiseMax(0.0);
  FusionGradients g;
  g.b2 = dy;
  g.W2 = dy * h;
  const Eigen::VectorXd dpre = (dy * params.W2).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
  g.b1 = dpre;
  g.W1 = dpre * e.transpose();
  const Eigen::VectorXd de = params.W1.transpose() * dpre;
  g.e_nir = de.head(e_nir.size());
  g.e_rgb = de.tail(e_rgb.size());
  return g;
}

MultispectralModel::MultispectralModel(BackboneName backbone, std::uint64_t init_seed, int hidden_dim,
                                       std::optional<std::filesystem::path> nir_weights,
                                       std::optional<std::filesystem::path> rgb_weights)
    : backbone_(backbone),
      hidden_(hidden_dim),
      fc1_(2 * nn::backbone_info(backbone).embedding_dim, hidden_dim > 0 ? hidden_dim : 1),
      fc2_(hidden_dim > 0 ? hidden_dim : 1, 1) {
  if (hidden_dim <= 0) throw Error("fusion hidden_dim must be positive");
  nir_ = std::make_unique<NarrowbandModel>(BackboneSpec{backbone, Band::nir, std::move(nir_weights)}, init_seed);
  rgb_ = std::make_unique<NarrowbandModel>(BackboneSpec{backbone, Band::rgb, std::move(rgb_weights)}, init_seed);
  d_nir_ = nn::backbone_info(backbone).embedding_dim;
  Rng rng(derive_seed(init_seed, "fusion"));
  fc1_.reset_parameters(rng);
  fc2_.reset_parameters(rng);
}

Tensor<float> MultispectralModel::forward(std::span<const Tensor<float>> inputs) {
  if (inputs.size() != 2) throw Error("a multispectral model takes an NIR and an RGB batch");
  if (inputs[0].rank() < 1 || inputs[1].rank() < 1 || inputs[0].dim(0) != inputs[1].dim(0))
    throw Error("NIR and RGB batches must hold the same number of pairs");
  Tensor<float> en = nir_->embed(inputs[0]);
  Tensor<float> er = rgb_->embed(inputs[1]);
  const int N = en.dim(0), dn = en.dim(1), dr = er.dim(1);
  Tensor<float> e({N, dn + dr});
  for (int n = 0; n < N; ++n) {
    std::copy_n(en.data() + static_cast<std::size_t>(n) * dn, dn, e.data() + static_cast<std::size_t>(n) * (dn + dr));
    std::copy_n(er.data() + static_cast<std::size_t>(n) * dr, dr,
                e.data() + static_cast<std::size_t>(n) * (dn + dr) + dn);
  }
  Tensor<float> h = fc1_.forward(e);
  for (auto& v : h.values()) v = v > 0.0f ? v : 0.0f;
  cached_hidden_ = fc1_.training() ? h : Tensor<float>();
  return fc2_.forward(h);
}

void MultispectralModel::backward(const Tensor<float>& grad) {
  if (cached_hidden_.empty()) throw Error("backward() needs a preceding forward() in training mode");
  Tensor<float> dh = fc2_.backward(grad);
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (!(cached_hidden_[i] > 0.0f)) dh[i] = 0.0f;
  Tensor<float> de = fc1_.backward(dh);
  const int N = de.dim(0), d = de.dim(1), dr = d - d_nir_;
  Tensor<float> gn({N, d_nir_}), gr({N, dr});
  for (int n = 0; n < N; ++n) {
    std::copy_n(de.data() + static_cast<std::size_t>(n) * d, d_nir_, gn.data() + static_cast<std::size_t>(n) * d_nir_);
    std::copy_n(de.data() + static_cast<std::size_t>(n) * d + d_nir_, dr, gr.data() + static_cast<std::size_t>(n) * dr);
  }
  nir_->features().backward(gn);
  rgb_->features().backward(gr);
}

void MultispectralModel::set_training(bool on) {
  nir_->set_training(on);
  rgb_->set_training(on);
  fc1_.set_training(on);
  fc2_.set_training(on);
}

void MultispectralModel::reseed(std::uint64_t seed) {
  nir_->reseed(derive_seed(seed, "nir"));
  rgb_->reseed(derive_seed(seed, "rgb"));
}

nn::StateRefs<float> MultispectralModel::state() {
  nn::StateRefs<float> s;
  nir_->features().collect("nir", s);
  rgb_->features().collect("rgb", s);
  fc1_.collect("fusion.0", s);
  fc2_.collect("fusion.2", s);
  return s;
}

FusionHeadParams MultispectralModel::fusion_params() const {
  auto& fc1 = const_cast<nn::Linear<float>&>(fc1_);
  auto& fc2 = const_cast<nn::Linear<float>&>(fc2_);
  FusionHeadParams p;
  const int h = hidden_, d = fc1.in_features();
  p.W1.resize(h, d);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < d; ++j) p.W1(i, j) = fc1.weight().value[static_cast<std::size_t>(i) * d + j];
  p.b1.resize(h);
  p.W2.resize(h);
  for (int i = 0; i < h; ++i) {
    p.b1(i) = fc1.bias().value[i];
    p.W2(i) = fc2.weight().value[i];
  }
  p.b2 = fc2.bias().value[0];
  return p;
}

void MultispectralModel::set_fusion_params(const FusionHeadParams& p) {
  p.validate();
  if (p.hidden_dim() != hidden_ || p.input_dim() != fc1_.in_features())
    throw Error("fusion parameters do not match this model's head");
  const int d = fc1_.in_features();
  for (int i = 0; i < hidden_; ++i) {
    for (int j = 0; j < d; ++j) fc1_.weight().value[static_cast<std::size_t>(i) * d + j] = static_cast<float>(p.W1(i, j));
    fc1_.bias().value[i] = static_cast<float>(p.b1(i));
    fc2_.weight().value[i] = static_cast<float>(p.W2(i));
  }
  fc2_.bias().value[0] = static_cast<float>(p.b2);
}

// ---------------------------------------------------------------------------

Tensor<float> make_input_batch(std::span<const Raster* const> images, Band band, BackboneName backbone) {
  const auto& info = nn::backbone_info(backbone);
  const int side = info.input_side, C = band_channels(band);
  double mean[3], sd[3];
  if (band == Band::nir) {
    mean[0] = info.input_mean;
    sd[0] = info.input_std;
  } else {
    nn::rgb_normalization(backbone, mean, sd);
  }
  Tensor<float> batch({static_cast<int>(images.size()), C, side, side});
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Raster& img = *images[n];
    if (img.width != side || img.height != side || img.channels != C)
      throw Error(std::string(info.id) + " " + std::string(band_name(band)) + " input must be " + std::to_string(side) +
                  "x" + std::to_string(side) + "x" + std::to_string(C) + ", got " + std::to_string(img.width) + "x" +
                  std::to_string(img.height) + "x" + std::to_string(img.channels));
    float* dst = batch.data() + n * C * plane;
    for (int c = 0; c < C; ++c) {
      const float scale = static_cast<float>(1.0 / (255.0 * sd[c]));
      const float shift = static_cast<float>(mean[c] / sd[c]);
      for (std::size_t i = 0; i < plane; ++i)
        dst[c * plane + i] = static_cast<float>(img.pixels[i * C + c]) * scale - shift;
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  json header = json::parse(file.header_json.empty() ? "{}" : file.header_json);
  json list = json::array();
  for (const auto& [name, t] : file.tensors) list.push_back({{"name", name}, {"shape", shape_json(t.shape())}});
  header["tensors"] = std::move(list);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : file.tensors)
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read weights file '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error("'" + path.string() + "' is not a PMI tensor file");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw Error("truncated header in '" + path.string() + "'");
  TensorFile file;
  json header;
  try {
    header = json::parse(text);
    for (const auto& t : header.at("tensors")) {
      nn::Shape shape = t.at("shape").get<nn::Shape>();
      nn::Tensor<float> tensor(shape);
      in.read(reinterpret_cast<char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(float)));
      if (!in) throw Error("truncated tensor data in '" + path.string() + "'");
      file.tensors.emplace_back(t.at("name").get<std::string>(), std::move(tensor));
    }
  } catch (const json::exception& e) {
    throw Error("malformed header in '" + path.string() + "': " + e.what());
  }
  header.erase("tensors");
  file.header_json = header.dump();
  return file;
}

void load_pretrained_weights(NarrowbandModel& model, const std::filesystem::path& path) {
  TensorFile file = read_tensor_file(path);
  const auto& info = nn::backbone_info(model.spec().name);
  const std::string first_conv(info.first_conv);
  const std::string head_prefix = model.head_name() + ".";

  std::map<std::string, Tensor<float>*> targets;
  auto st = model.state();
  for (auto& p : st.params) targets[p.name] = &p.param->value;
  for (auto& b : st.buffers) targets[b.name] = b.tensor;

  std::set<std::string> loaded;
  std::vector<std::string> problems;
  for (auto& [name, src] : file.tensors) {
    if (name.ends_with("num_batches_tracked") || name.starts_with("AuxLogits.")) continue;
    auto it = targets.find(name);
    if (it == targets.end()) {
      problems.push_back("unexpected tensor " + name);
      continue;
    }
    Tensor<float>& dst = *it->second;
    const bool is_head = name.starts_with(head_prefix);
    if (src.shape() == dst.shape()) {
      dst = src;
    } else if (name == first_conv && src.rank() == 4 && src.dim(1) == 3 && dst.dim(1) == 1 &&
               src.dim(0) == dst.dim(0) && src.dim(2) == dst.dim(2) && src.dim(3) == dst.dim(3)) {
      const std::size_t k = static_cast<std::size_t>(src.dim(2)) * src.dim(3);
      for (int o = 0; o < src.dim(0); ++o)
        for (std::size_t i = 0; i < k; ++i) {
          double acc = 0.0;
          for (int c = 0; c < 3; ++c) acc += src[(static_cast<std::size_t>(o) * 3 + c) * k + i];
          dst[static_cast<std::size_t>(o) * k + i] = static_cast<float>(acc / 3.0);
        }
    } else if (is_head) {
      continue;
    } else {
      problems.push_back(name + " has shape " + nn::shape_string(src.shape()) + ", model expects " +
                         nn::shape_string(dst.shape()));
      continue;
    }
    loaded.insert(name);
  }
  for (const auto& [name, t] : targets)
    if (!loaded.contains(name) && !name.starts_with(head_prefix)) problems.push_back("missing tensor " + name);
  if (!problems.empty()) {
    std::string msg = "weights '" + path.string() + "' do not match " + std::string(info.id) + ":";
    for (std::size_t i = 0; i < problems.size() && i < 10; ++i) msg += "\n  " + problems[i];
    if (problems.size() > 10) msg += "\n  ... " + std::to_string(problems.size() - 10) + " more";
    throw Error(msg);
  }
}

void save_checkpoint(RegressionModel& model, const std::filesystem::path& path, const std::string& config_json) {
  json header;
  header["architecture"] = model.architecture();
  header["kind"] = model.kind();
  header["backbone"] = nn::backbone_info(model.backbone()).id;
  json bands = json::array();
  for (Band b : model.bands()) bands.push_back(band_name(b));
  header["bands"] = std::move(bands);
  if (auto* m = dynamic_cast<MultispectralModel*>(&model)) header["hidden_dim"] = m->hidden_dim();
  header["target_scaler"] = {{"mean", model.scaler.mean}, {"std", model.scaler.std}};
  header["config"] = json::parse(config_json.empty() ? "{}" : config_json);

  TensorFile file;
  file.header_json = header.dump();
  auto st = model.state();
  for (auto& p : st.params) file.tensors.emplace_back(p.name, p.param->value);
  for (auto& b : st.buffers) file.tensors.emplace_back(b.name, *b.tensor);
  write_tensor_file(path, file);
}

namespace {

CheckpointInfo parse_info(const std::string& header_json, const std::filesystem::path& path) {
  CheckpointInfo info;
  try {
    auto h = json::parse(header_json);
    info.architecture = h.at("architecture").get<std::string>();
    info.kind = h.at("kind").get<std::string>();
    info.backbone = nn::parse_backbone(h.at("backbone").get<std::string>());
    for (const auto& b : h.at("bands")) info.bands.push_back(parse_band(b.get<std::string>()));
    info.hidden_dim = h.value("hidden_dim", 0);
    info.scaler.mean = h.at("target_scaler").at("mean").get<double>();
    info.scaler.std = h.at("target_scaler").at("std").get<double>();
    info.config_json = h.value("config", json::object()).dump();
  } catch (const json::exception& e) {
    throw Error("'" + path.string() + "' is not a model checkpoint: " + e.what());
  }
  return info;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return parse_info(read_tensor_file(path).header_json, path);
}

void load_checkpoint(RegressionModel& model, const std::filesystem::path& path) {
  TensorFile file = read_tensor_file(path);
  CheckpointInfo info = parse_info(file.header_json, path);
  if (info.architecture != model.architecture())
    throw Error("checkpoint '" + path.string() + "' holds " + info.architecture + ", model is " + model.architecture());
  auto st = model.state();
  std::vector<std::pair<std::string, Tensor<float>*>> targets;
  for (auto& p : st.params) targets.emplace_back(p.name, &p.param->value);
  for (auto& b : st.buffers) targets.emplace_back(b.name, b.tensor);
  if (targets.size() != file.tensors.size())
    throw Error("checkpoint '" + path.string() + "' has " + std::to_string(file.tensors.size()) +
                " tensors, model has " + std::to_string(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& [name, src] = file.tensors[i];
    if (name != targets[i].first || src.shape() != targets[i].second->shape())
      throw Error("checkpoint '" + path.string() + "' tensor " + name + " " + nn::shape_string(src.shape()) +
                  " does not match model tensor " + targets[i].first + " " +
                  nn::shape_string(targets[i].second->shape()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) *targets[i].second = std::move(file.tensors[i].second);
  model.scaler = info.scaler;
}

std::unique_ptr<RegressionModel> load_model(const std::filesystem::path& path) {
  CheckpointInfo info = read_checkpoint_info(path);
  std::unique_ptr<RegressionModel> model;
  if (info.kind == "narrowband") {
    if (info.bands.size() != 1) throw Error("narrow-band checkpoint must name one band");
    // The checkpoint's own tensors satisfy ds_resnet152's weights requirement.
    BackboneSpec spec{info.backbone, info.bands[0], std::nullopt};
    if (info.backbone == BackboneName::ds_resnet152) spec.pretrained_weights = path;
    auto nb = std::make_unique<NarrowbandModel>(spec, 0);
    model = std::move(nb);
  } else if (info.kind == "multispectral") {
    model = std::make_unique<MultispectralModel>(info.backbone, 0, info.hidden_dim);
  } else {
    throw Error("unknown model kind '" + info.kind + "' in '" + path.string() + "'");
  }
  load_checkpoint(*model, path);
  return model;
}

}  // namespace pmi
