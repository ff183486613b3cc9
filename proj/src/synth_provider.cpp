#include "pmi/synth_provider.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pmi/csv.hpp"
#include "pmi/pmi_class.hpp"
#include "pmi/random.hpp"

namespace pmi {
namespace {

constexpr double kStubMargin = 1.1;

int parse_class(const std::string& text, std::size_t line) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value < 1 || value > kPmiClassCount)
    throw Error("synthetic sidecar line " + std::to_string(line) + ": pmi_class must be 1..18, got '" +
                text + "'");
  return value;
}

std::string band_dir(Band b) { return b == Band::nir ? "nir" : "rgb"; }

double smoothstep(double edge0, double edge1, double x) {
  double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// Separable [1 2 1] / 4 filter with replicated borders, applied in place.
void binomial_pass(std::vector<float>& plane, int w, int h) {
  std::vector<float> tmp(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float l = plane[y * w + std::max(x - 1, 0)];
      float r = plane[y * w + std::min(x + 1, w - 1)];
      tmp[y * w + x] = 0.25f * l + 0.5f * plane[y * w + x] + 0.25f * r;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float u = tmp[std::max(y - 1, 0) * w + x];
      float d = tmp[std::min(y + 1, h - 1) * w + x];
      plane[y * w + x] = 0.25f * u + 0.5f * tmp[y * w + x] + 0.25f * d;
    }
}

struct IrisTexture {
  struct Wave {
    double freq, phase, amp;
  };
  std::vector<Wave> fibers;
  std::vector<Wave> rings;
  struct Crypt {
    double rho, theta, size, depth;
  };
  std::vector<Crypt> crypts;
  double base = 110.0;
  double pupil = 0.38;
  double tint[3] = {1.0, 1.0, 1.0};

  explicit IrisTexture(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "stub-texture"));
    for (int i = 0; i < 6; ++i)
      fibers.push_back({std::floor(rng.uniform(20.0, 60.0)), rng.uniform(0.0, 2 * std::numbers::pi),
                        rng.uniform(4.0, 10.0)});
    for (int i = 0; i < 3; ++i)
      rings.push_back({rng.uniform(3.0, 9.0), rng.uniform(0.0, 2 * std::numbers::pi), rng.uniform(3.0, 8.0)});
    for (int i = 0; i < 8; ++i)
      crypts.push_back({rng.uniform(0.5, 0.9), rng.uniform(0.0, 2 * std::numbers::pi),
                        rng.uniform(0.03, 0.07), rng.uniform(20.0, 40.0)});
    base = rng.uniform(95.0, 130.0);
    pupil = rng.uniform(0.32, 0.42);
    static constexpr double kTints[3][3] = {{1.25, 0.85, 0.6}, {0.75, 0.95, 1.2}, {0.9, 1.1, 0.8}};
    auto pick = rng.index(3);
    for (int c = 0; c < 3; ++c) tint[c] = kTints[pick][c];
  }

  /// Gray level of the iris annulus at normalized radius rho and angle theta.
  double iris(double rho, double theta) const {
    double v = base;
    double radial = (rho - pupil) / (1.0 - pupil);
    for (const auto& f : fibers) v += f.amp * std::sin(f.freq * theta + f.phase) * (0.6 + 0.4 * radial);
    for (const auto& r : rings) v += r.amp * std::sin(2 * std::numbers::pi * r.freq * radial + r.phase);
    v += 15.0 * std::exp(-std::pow((rho - (pupil + 0.18)) / 0.04, 2.0));
    for (const auto& c : crypts) {
      double dt = std::remainder(theta - c.theta, 2 * std::numbers::pi) * rho;
      double dr = rho - c.rho;
      v -= c.depth * std::exp(-(dt * dt + dr * dr) / (c.size * c.size));
    }
    return v;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Inventory

std::size_t SyntheticInventory::size() const {
  std::size_t n = 0;
  for (const auto& [key, bucket] : index_) n += bucket.size();
  return n;
}

const std::vector<SyntheticDescriptor>& SyntheticInventory::bucket(Band band, int pmi_class) const {
  static const std::vector<SyntheticDescriptor> kEmpty;
  auto it = index_.find({band, pmi_class});
  return it == index_.end() ? kEmpty : it->second;
}

bool SyntheticInventory::serves(Band band, int pmi_class) const { return !bucket(band, pmi_class).empty(); }

std::vector<SyntheticDescriptor> SyntheticInventory::draw(Band band, int pmi_class, std::size_t n,
                                                          std::uint64_t seed) const {
  const auto& items = bucket(band, pmi_class);
  if (items.empty())
    throw Error("synthetic inventory has no " + std::string(band_name(band)) + " images for PMI class " +
                std::to_string(pmi_class));
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "inventory-draw", static_cast<std::uint64_t>(band), pmi_class));
  rng.shuffle(order.begin(), order.end());
  std::vector<SyntheticDescriptor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(i < order.size() ? items[order[i]] : items[rng.index(items.size())]);
  return out;
}

Raster SyntheticInventory::load(const SyntheticDescriptor& d) const {
  auto path = d.image_path.is_absolute() ? d.image_path : root_ / d.image_path;
  return read_image(path);
}

SyntheticInventory load_inventory(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::path sidecar = fs::is_directory(root) ? root / SyntheticInventory::kSidecarName : root;
  std::ifstream in(sidecar, std::ios::binary);
  if (!in) throw Error("cannot open synthetic sidecar '" + sidecar.string() + "'");
  auto rows = csv::read(in);
  const std::vector<std::string> expected{"synthetic_id", "band", "pmi_class", "image_path"};
  if (rows.empty() || rows.front().fields != expected)
    throw Error("synthetic sidecar '" + sidecar.string() +
                "' must start with header synthetic_id,band,pmi_class,image_path");

  SyntheticInventory inv;
  inv.root_ = sidecar.parent_path();
  std::vector<std::string> missing;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i].fields;
    if (f.size() != 4)
      throw Error("synthetic sidecar line " + std::to_string(rows[i].line) + ": expected 4 fields");
    SyntheticDescriptor d;
    d.synthetic_id = f[0];
    try {
      d.band = parse_band(f[1]);
    } catch (const Error&) {
      throw Error("synthetic sidecar line " + std::to_string(rows[i].line) + ": bad band '" + f[1] + "'");
    }
    d.pmi_class = parse_class(f[2], rows[i].line);
    d.image_path = f[3];
    if (d.synthetic_id.empty() || f[3].empty())
      throw Error("synthetic sidecar line " + std::to_string(rows[i].line) + ": empty id or path");
    auto full = d.image_path.is_absolute() ? d.image_path : inv.root_ / d.image_path;
    if (!fs::exists(full)) missing.push_back(full.string());
    inv.index_[{d.band, d.pmi_class}].push_back(std::move(d));
  }
  if (!missing.empty()) {
    std::string msg = "synthetic inventory references missing files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw Error(msg);
  }
  return inv;
}

std::vector<SyntheticDescriptor> draw(const SyntheticInventory& inventory, Band band, int pmi_class,
                                      std::size_t n, std::uint64_t seed) {
  return inventory.draw(band, pmi_class, n, seed);
}

// ---------------------------------------------------------------------------
// Stub rendering

double stub_degradation_for_pmi(double pmi_hours) {
  double t = std::log1p(std::max(pmi_hours, 0.0) / 24.0) / std::log1p(kDefaultClass18Cap / 24.0);
  return std::clamp(t, 0.0, 1.0);
}

double stub_degradation_for_class(int class_index) {
  auto c = pmi_class(class_index);
  double hi = c.hi.value_or(kDefaultClass18Cap);
  return stub_degradation_for_pmi(0.5 * (c.lo + hi));
}

IrisCircle stub_iris_circle(int side) {
  double centre = (side - 1) / 2.0;
  return {centre, centre, side / (2.0 * kStubMargin)};
}

Raster render_stub_iris(Band band, double degradation, std::uint64_t texture_seed,
                        std::uint64_t noise_seed, int side) {
  const double t = std::clamp(degradation, 0.0, 1.0);
  const IrisTexture tex(texture_seed);
  const auto circle = stub_iris_circle(side);
  const int channels = band_channels(band);
  const std::size_t n = static_cast<std::size_t>(side) * side;
  std::vector<float> planes(n * channels);

  Rng noise(derive_seed(noise_seed, "stub-noise"));
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double dx = x - circle.cx;
      double dy = y - circle.cy;
      double rho = std::hypot(dx, dy) / circle.r;
      double theta = std::atan2(dy, dx);
      double iris = tex.iris(rho, theta);
      double pupil_w = 1.0 - smoothstep(tex.pupil - 0.02, tex.pupil + 0.02, rho);
      double sclera_w = smoothstep(0.97, 1.03, rho);
      double limbal = 25.0 * std::exp(-std::pow((rho - 0.97) / 0.03, 2.0));
      for (int c = 0; c < channels; ++c) {
        double tint = channels == 3 ? tex.tint[c] : 1.0;
        double sclera = channels == 3 ? 215.0 + 8.0 * (1 - c) : 190.0;
        double pupil = 18.0;
        double v = (1 - sclera_w) * ((1 - pupil_w) * iris * tint + pupil_w * pupil) + sclera_w * sclera;
        v -= limbal;
        v += 3.0 * noise.normal();
        planes[c * n + static_cast<std::size_t>(y) * side + x] = static_cast<float>(v);
      }
    }

  const int passes = static_cast<int>(std::lround(36.0 * t));
  for (int c = 0; c < channels; ++c) {
    std::vector<float> plane(planes.begin() + c * n, planes.begin() + (c + 1) * n);
    for (int p = 0; p < passes; ++p) binomial_pass(plane, side, side);
    std::copy(plane.begin(), plane.end(), planes.begin() + c * n);
  }

  double mean = 0.0;
  for (float v : planes) mean += v;
  mean /= static_cast<double>(planes.size());
  const double keep = 1.0 - 0.75 * t;
  Raster out(side, side, channels);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < channels; ++c) {
      double v = mean + (planes[c * n + i] - mean) * keep;
      out.pixels[i * channels + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  return out;
}

StubImage stub_generate(Band band, int class_index, std::uint64_t seed) {
  double degradation = stub_degradation_for_class(class_index);
  StubImage out;
  out.image = render_stub_iris(band, degradation, seed, seed);
  out.descriptor.synthetic_id = "stub-" + band_dir(band) + "-c" + std::to_string(class_index) + "-" +
                                std::to_string(seed);
  out.descriptor.band = band;
  out.descriptor.pmi_class = class_index;
  out.descriptor.image_path =
      "stub://" + band_dir(band) + "/" + std::to_string(class_index) + "/" + std::to_string(seed);
  return out;
}

double radial_edge_contrast(const Raster& image) {
  const int w = image.width;
  const int h = image.height;
  std::vector<double> lum(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = image.channels == 3 ? 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) +
                                           0.114 * image.at(x, y, 2)
                                     : image.at(x, y, 0);
      lum[static_cast<std::size_t>(y) * w + x] = v;
    }
  double cx = (w - 1) / 2.0;
  double cy = (h - 1) / 2.0;
  double radius = std::min(w, h) / (2.0 * kStubMargin);
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      if (std::hypot(x - cx, y - cy) > 1.05 * radius) continue;
      double gx = 0.5 * (lum[y * w + x + 1] - lum[y * w + x - 1]);
      double gy = 0.5 * (lum[(y + 1) * w + x] - lum[(y - 1) * w + x]);
      sum += std::hypot(gx, gy);
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

bool StubSynthesizer::serves(Band, int pmi_class) const {
  return pmi_class >= 1 && pmi_class <= kPmiClassCount;
}

std::vector<SyntheticDescriptor> StubSynthesizer::draw(Band band, int pmi_class, std::size_t n,
                                                       std::uint64_t seed) const {
  if (!serves(band, pmi_class)) throw Error("stub synthesizer: invalid PMI class " + std::to_string(pmi_class));
  std::vector<SyntheticDescriptor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto item_seed = derive_seed(seed, "stub-draw", static_cast<std::uint64_t>(band) * 100 + pmi_class, i);
    SyntheticDescriptor d;
    d.band = band;
    d.pmi_class = pmi_class;
    d.synthetic_id = "stub-" + band_dir(band) + "-c" + std::to_string(pmi_class) + "-" + std::to_string(item_seed);
    d.image_path = "stub://" + band_dir(band) + "/" + std::to_string(pmi_class) + "/" + std::to_string(item_seed);
    out.push_back(std::move(d));
  }
  return out;
}

Raster StubSynthesizer::load(const SyntheticDescriptor& d) const {
  // generic_string() folds the "//" after the scheme, so accept either form.
  const std::string path = d.image_path.string();
  const std::string prefix = "stub:";
  const auto body = path.find_first_not_of('/', prefix.size());
  if (path.rfind(prefix, 0) != 0 || body == std::string::npos) throw Error("not a stub descriptor: '" + path + "'");
  std::stringstream ss(path.substr(body));
  std::string band, cls, seed;
  std::getline(ss, band, '/');
  std::getline(ss, cls, '/');
  std::getline(ss, seed, '/');
  try {
    return stub_generate(parse_band(band), std::stoi(cls), std::stoull(seed)).image;
  } catch (const std::logic_error&) {
    throw Error("malformed stub descriptor: '" + path + "'");
  }
}

SyntheticInventory write_stub_inventory(const std::filesystem::path& root, std::span<const Band> bands,
                                        int per_class, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream sidecar(root / SyntheticInventory::kSidecarName, std::ios::binary);
  if (!sidecar) throw Error("cannot write synthetic sidecar under '" + root.string() + "'");
  csv::write_row(sidecar, {"synthetic_id", "band", "pmi_class", "image_path"});
  for (Band band : bands) {
    fs::create_directories(root / band_dir(band));
    for (int c = 1; c <= kPmiClassCount; ++c)
      for (int i = 0; i < per_class; ++i) {
        auto item_seed = derive_seed(seed, "stub-inventory", static_cast<std::uint64_t>(band) * 100 + c, i);
        auto stub = stub_generate(band, c, item_seed);
        std::string rel = band_dir(band) + "/c" + std::to_string(c) + "_" + std::to_string(i) + ".png";
        write_image(stub.image, root / rel);
        csv::write_row(sidecar, {stub.descriptor.synthetic_id, std::string(band_name(band)),
                                 std::to_string(c), rel});
      }
  }
  sidecar.close();
  return load_inventory(root);
}

std::vector<StubSampleSpec> stub_corpus_layout(const StubCorpusOptions& o) {
  if (o.subjects_per_dataset < 1 || o.sessions_per_subject < 1) throw Error("stub corpus needs subjects and sessions");
  std::vector<StubSampleSpec> specs;
  for (std::size_t d = 0; d < o.datasets.size(); ++d) {
    for (int s = 0; s < o.subjects_per_dataset; ++s) {
      std::string subject = o.datasets[d] + "_s" + std::to_string(s);
      for (int j = 0; j < o.sessions_per_subject; ++j) {
        int cls = 1 + (s * o.sessions_per_subject + j) % kPmiClassCount;
        Rng rng(derive_seed(o.seed, "stub-corpus-pmi:" + subject, static_cast<std::uint64_t>(j)));
        double pmi = sample_pmi_within_class(cls, rng);
        for (Band b : o.bands)
          specs.push_back({o.datasets[d], subject, Eye::left, "t" + std::to_string(j), b, pmi});
      }
    }
  }
  return specs;
}

Manifest write_stub_corpus(const std::filesystem::path& dir, std::span<const StubSampleSpec> specs,
                           std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  Manifest m;
  const auto circle = stub_iris_circle();
  for (const auto& s : specs) {
    SampleRecord r;
    r.sample_id = s.subject_id + "-" + std::string(eye_code(s.eye)) + "-" + s.session_id + "-" +
                  std::string(band_name(s.band));
    r.dataset_id = s.dataset_id;
    r.subject_id = s.subject_id;
    r.eye = s.eye;
    r.session_id = s.session_id;
    r.band = s.band;
    r.pmi_hours = s.pmi_hours;
    r.image_path = fs::path("images") / (r.sample_id + ".png");
    r.iris_circle = circle;
    auto texture = derive_seed(seed, "stub-subject:" + s.subject_id + std::string(eye_code(s.eye)));
    auto noise = derive_seed(seed, "stub-sample:" + r.sample_id);
    write_image(render_stub_iris(s.band, stub_degradation_for_pmi(s.pmi_hours), texture, noise), dir / r.image_path);
    m.records.push_back(std::move(r));
  }
  m.source_path = dir / "manifest.csv";
  save_manifest(m, m.source_path);
  return m;
}

}  // namespace pmi
