#include "pmi/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace pmi {
namespace {

using json = nlohmann::ordered_json;

void check_pair(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size())
    throw Error("prediction and target counts differ (" + std::to_string(preds.size()) + " vs " +
                std::to_string(targets.size()) + ")");
  if (preds.empty()) throw Error("metrics need at least one prediction");
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (!std::isfinite(preds[i]) || !std::isfinite(targets[i]))
      throw Error("non-finite value at index " + std::to_string(i));
}

MeanStd mean_std(const std::vector<double>& v) { return {stats::mean(v), stats::sample_stddev(v)}; }

struct Rgb {
  int r, g, b;
};

/// Draws the same primitives into a raster and an SVG document.
class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), img_(h, w, CV_8UC3, cv::Scalar(255, 255, 255)) {
    svg_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
         << w << ' ' << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  void line(double x0, double y0, double x1, double y1, Rgb c, int width = 1, bool dashed = false) {
    if (dashed) {
      const double len = std::hypot(x1 - x0, y1 - y0);
      const int segs = std::max(1, static_cast<int>(len / 8.0));
      for (int i = 0; i < segs; i += 2) {
        const double a = static_cast<double>(i) / segs, b = std::min(1.0, static_cast<double>(i + 1) / segs);
        cv::line(img_, pt(x0 + a * (x1 - x0), y0 + a * (y1 - y0)), pt(x0 + b * (x1 - x0), y0 + b * (y1 - y0)),
                 bgr(c), width, cv::LINE_AA);
      }
    } else {
      cv::line(img_, pt(x0, y0), pt(x1, y1), bgr(c), width, cv::LINE_AA);
    }
    svg_ << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y1 << "\" stroke=\""
         << hex(c) << "\" stroke-width=\"" << width << '"' << (dashed ? " stroke-dasharray=\"4,4\"" : "") << "/>\n";
  }

  void circle(double x, double y, double r, Rgb c) {
    cv::circle(img_, pt(x, y), static_cast<int>(std::lround(r)), bgr(c), cv::FILLED, cv::LINE_AA);
    svg_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << hex(c)
         << "\" fill-opacity=\"0.7\"/>\n";
  }

  void rect(double x0, double y0, double x1, double y1, Rgb stroke, Rgb fill) {
    cv::rectangle(img_, pt(x0, y0), pt(x1, y1), bgr(fill), cv::FILLED);
    cv::rectangle(img_, pt(x0, y0), pt(x1, y1), bgr(stroke), 1);
    svg_ << "<rect x=\"" << std::min(x0, x1) << "\" y=\"" << std::min(y0, y1) << "\" width=\"" << std::abs(x1 - x0)
         << "\" height=\"" << std::abs(y1 - y0) << "\" fill=\"" << hex(fill) << "\" stroke=\"" << hex(stroke)
         << "\"/>\n";
  }

  /// anchor: 0 left, 1 centre, 2 right.
  void text(double x, double y, const std::string& s, int anchor = 0, double scale = 0.45) {
    int base = 0;
    const auto size = cv::getTextSize(s, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &base);
    const double dx = anchor == 1 ? size.width / 2.0 : (anchor == 2 ? size.width : 0.0);
    cv::putText(img_, s, pt(x - dx, y), cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    const char* a = anchor == 1 ? "middle" : (anchor == 2 ? "end" : "start");
    svg_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-family=\"sans-serif\" font-size=\""
         << static_cast<int>(std::lround(scale * 28)) << "\" text-anchor=\"" << a << "\">" << escape(s) << "</text>\n";
  }

  void save(const PlotFiles& files) {
    if (!cv::imwrite(files.png.string(), img_)) throw Error("cannot write '" + files.png.string() + "'");
    std::ofstream out(files.svg, std::ios::binary);
    if (!out) throw Error("cannot write '" + files.svg.string() + "'");
    out << svg_.str() << "</svg>\n";
  }

  int width() const { return w_; }
  int height() const { return h_; }

 private:
  static cv::Point pt(double x, double y) {
    return {static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y))};
  }
  static cv::Scalar bgr(Rgb c) { return {static_cast<double>(c.b), static_cast<double>(c.g), static_cast<double>(c.r)}; }
  static std::string hex(Rgb c) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c.r, c.g, c.b);
    return buf;
  }
  static std::string escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
      if (ch == '<')
        out += "&lt;";
      else if (ch == '>')
        out += "&gt;";
      else if (ch == '&')
        out += "&amp;";
      else
        out += ch;
    }
    return out;
  }

  int w_, h_;
  cv::Mat img_;
  std::ostringstream svg_;
};

/// Rounded axis step giving about `ticks` intervals.
double nice_step(double span, int ticks) {
  if (!(span > 0.0)) return 1.0;
  const double raw = span / ticks;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) return m * mag;
  return 10.0 * mag;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

void write_json(const json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << doc.dump(2) << "\n";
}

constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kGrey{160, 160, 160};
constexpr Rgb kBlue{31, 119, 180};
constexpr Rgb kRed{214, 39, 40};
constexpr Rgb kFill{174, 199, 232};

}  // namespace

double rmse(std::span<const double> preds, std::span<const double> targets) {
  check_pair(preds, targets);
  double se = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) se += (preds[i] - targets[i]) * (preds[i] - targets[i]);
  return std::sqrt(se / static_cast<double>(preds.size()));
}

double mae(std::span<const double> preds, std::span<const double> targets) {
  check_pair(preds, targets);
  double ae = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) ae += std::abs(preds[i] - targets[i]);
  return ae / static_cast<double>(preds.size());
}

FoldMetrics fold_metrics(std::span<const Prediction> predictions) {
  std::vector<double> p, t;
  for (const auto& x : predictions) {
    p.push_back(x.y_pred);
    t.push_back(x.y_true);
  }
  return {rmse(p, t), mae(p, t), predictions.size()};
}

CrossFoldSummary cross_fold_summary(std::span<const FoldMetrics> folds) {
  if (folds.empty()) throw Error("cross-fold summary needs at least one fold");
  std::vector<double> r, m;
  for (const auto& f : folds) {
    r.push_back(f.rmse);
    m.push_back(f.mae);
  }
  return {mean_std(r), mean_std(m)};
}

std::string MetricsReport::to_json() const {
  json j;
  j["scenario"] = scenario;
  j["band"] = band;
  j["backbone"] = backbone;
  j["balancing"] = balancing;
  json fs = json::array();
  for (const auto& f : folds) fs.push_back({{"rmse", f.rmse}, {"mae", f.mae}, {"n", f.n}});
  j["folds"] = std::move(fs);
  j["mean_rmse"] = summary.rmse.mean;
  j["std_rmse"] = summary.rmse.stdev;
  j["mean_mae"] = summary.mae.mean;
  j["std_mae"] = summary.mae.stdev;
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport r;
  try {
    auto j = json::parse(text);
    r.scenario = j.at("scenario").get<std::string>();
    r.band = j.at("band").get<std::string>();
    r.backbone = j.at("backbone").get<std::string>();
    r.balancing = j.at("balancing").get<std::string>();
    for (const auto& f : j.at("folds"))
      r.folds.push_back({f.at("rmse").get<double>(), f.at("mae").get<double>(), f.at("n").get<std::size_t>()});
    r.summary.rmse = {j.at("mean_rmse").get<double>(), j.at("std_rmse").get<double>()};
    r.summary.mae = {j.at("mean_mae").get<double>(), j.at("std_mae").get<double>()};
  } catch (const json::exception& e) {
    throw Error(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

MetricsReport make_metrics_report(std::string scenario, std::string band, std::string backbone,
                                  std::string balancing, std::vector<FoldMetrics> folds) {
  MetricsReport r{std::move(scenario), std::move(band), std::move(backbone), std::move(balancing), std::move(folds), {}};
  r.summary = cross_fold_summary(r.folds);
  return r;
}

void save_metrics_report(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write metrics report '" + path.string() + "'");
  out << report.to_json();
}

MetricsReport load_metrics_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read metrics report '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return MetricsReport::from_json(ss.str());
}

PlotFiles plot_files(const std::filesystem::path& stem) {
  auto with = [&](const char* ext) {
    auto p = stem;
    p += ext;
    return p;
  };
  return {with(".png"), with(".svg"), with(".json")};
}

PlotFiles scatter_report(std::span<const Prediction> predictions, const std::filesystem::path& stem,
                         const std::string& title) {
  if (predictions.empty()) throw Error("scatter report needs at least one prediction");
  const auto files = plot_files(stem);

  json side;
  side["kind"] = "scatter";
  side["title"] = title;
  side["count"] = predictions.size();
  json pts = json::array();
  for (const auto& p : predictions) pts.push_back({{"id", p.id}, {"y_true", p.y_true}, {"y_pred", p.y_pred}});
  side["points"] = std::move(pts);
  write_json(side, files.sidecar);

  double lo = 0.0, hi = 0.0;
  for (const auto& p : predictions) {
    lo = std::min({lo, p.y_true, p.y_pred});
    hi = std::max({hi, p.y_true, p.y_pred});
  }
  if (hi <= lo) hi = lo + 1.0;
  const double step = nice_step(hi - lo, 6);
  lo = std::floor(lo / step) * step;
  hi = std::ceil(hi / step) * step;

  Canvas c(640, 640);
  const double L = 80, R = 610, T = 50, B = 570;
  auto sx = [&](double v) { return L + (v - lo) / (hi - lo) * (R - L); };
  auto sy = [&](double v) { return B - (v - lo) / (hi - lo) * (B - T); };
  for (double v = lo; v <= hi + 1e-9 * step; v += step) {
    c.line(sx(v), B, sx(v), B + 5, kBlack);
    c.text(sx(v), B + 20, fmt(v), 1);
    c.line(L - 5, sy(v), L, sy(v), kBlack);
    c.text(L - 8, sy(v) + 4, fmt(v), 2);
  }
  c.line(L, B, R, B, kBlack);
  c.line(L, B, L, T, kBlack);
  c.line(sx(lo), sy(lo), sx(hi), sy(hi), kRed, 1, true);
  for (const auto& p : predictions) c.circle(sx(p.y_true), sy(p.y_pred), 3, kBlue);
  c.text((L + R) / 2, 30, title, 1, 0.6);
  c.text((L + R) / 2, 615, "Actual PMI (hours)", 1, 0.5);
  c.text(10, T - 12, "Predicted PMI (hours)", 0, 0.5);
  c.save(files);
  return files;
}

PlotFiles distribution_boxplot(std::span<const BoxGroup> groups, const std::filesystem::path& stem,
                               const std::string& title) {
  if (groups.empty()) throw Error("box plot needs at least one group");
  std::vector<stats::BoxStats> boxes;
  for (const auto& g : groups) {
    if (g.values.empty()) throw Error("box plot group '" + g.name + "' is empty");
    boxes.push_back(stats::box_stats(g.values));
  }
  const auto files = plot_files(stem);

  json side;
  side["kind"] = "boxplot";
  side["title"] = title;
  json gs = json::array();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& b = boxes[i];
    gs.push_back({{"name", groups[i].name},
                  {"count", b.count},
                  {"min", b.min},
                  {"q1", b.q1},
                  {"median", b.median},
                  {"q3", b.q3},
                  {"max", b.max}});
  }
  side["groups"] = std::move(gs);
  write_json(side, files.sidecar);

  double lo = 0.0, hi = 0.0;
  for (const auto& b : boxes) hi = std::max(hi, b.max);
  if (hi <= lo) hi = lo + 1.0;
  const double step = nice_step(hi - lo, 6);
  hi = std::ceil(hi / step) * step;

  const int n = static_cast<int>(groups.size());
  Canvas c(std::max(360, 120 + 90 * n), 480);
  const double L = 80, R = c.width() - 30.0, T = 50, B = 400;
  auto sy = [&](double v) { return B - (v - lo) / (hi - lo) * (B - T); };
  for (double v = lo; v <= hi + 1e-9 * step; v += step) {
    c.line(L, sy(v), R, sy(v), kGrey);
    c.text(L - 8, sy(v) + 4, fmt(v), 2);
  }
  c.line(L, B, R, B, kBlack);
  c.line(L, B, L, T, kBlack);
  const double slot = (R - L) / n;
  for (int i = 0; i < n; ++i) {
    const auto& b = boxes[static_cast<std::size_t>(i)];
    const double cx = L + slot * (i + 0.5), half = std::min(30.0, slot * 0.3);
    c.line(cx, sy(b.min), cx, sy(b.q1), kBlack);
    c.line(cx, sy(b.q3), cx, sy(b.max), kBlack);
    c.line(cx - half / 2, sy(b.min), cx + half / 2, sy(b.min), kBlack);
    c.line(cx - half / 2, sy(b.max), cx + half / 2, sy(b.max), kBlack);
    c.rect(cx - half, sy(b.q3), cx + half, sy(b.q1), kBlack, kFill);
    c.line(cx - half, sy(b.median), cx + half, sy(b.median), kRed, 2);
    c.text(cx, B + 20, groups[static_cast<std::size_t>(i)].name, 1, 0.4);
  }
  c.text((L + R) / 2, 30, title, 1, 0.6);
  c.text(10, T - 12, "PMI (hours)", 0, 0.5);
  c.save(files);
  return files;
}

}  // namespace pmi
