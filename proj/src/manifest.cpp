#include "pmi/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "pmi/csv.hpp"

namespace pmi {
namespace {

using json = nlohmann::ordered_json;

constexpr const char* kRequired[] = {"sample_id", "dataset_id", "subject_id", "eye",
                                     "session_id", "band",       "pmi_hours",  "image_path"};
constexpr const char* kOptional[] = {"iris_cx", "iris_cy", "iris_r", "is_synthetic"};

bool is_schema_column(std::string_view name) {
  for (auto c : kRequired)
    if (name == c) return true;
  for (auto c : kOptional)
    if (name == c) return true;
  return false;
}

double parse_number(std::string_view text, std::size_t row, const std::string& column) {
  double value = 0.0;
  auto first = text.data();
  auto last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last || !std::isfinite(value)) {
    throw ManifestError("'" + std::string(text) + "' is not a finite number", row, column);
  }
  return value;
}

Eye parse_eye(std::string_view text, std::size_t row) {
  if (text == "L" || text == "l") return Eye::left;
  if (text == "R" || text == "r") return Eye::right;
  throw ManifestError("eye must be L or R, got '" + std::string(text) + "'", row, "eye");
}

bool parse_flag(std::string_view text, std::size_t row) {
  if (text.empty() || text == "0") return false;
  if (text == "1") return true;
  throw ManifestError("is_synthetic must be 0 or 1, got '" + std::string(text) + "'", row,
                      "is_synthetic");
}

/// Builds a record from named string fields; shared by the CSV and JSON readers.
SampleRecord build_record(const std::map<std::string, std::string, std::less<>>& fields,
                          std::vector<std::pair<std::string, std::string>> extra, std::size_t row) {
  auto get = [&](const char* name) -> const std::string& {
    static const std::string kEmpty;
    auto it = fields.find(name);
    return it == fields.end() ? kEmpty : it->second;
  };
  SampleRecord r;
  for (auto name : {"sample_id", "dataset_id", "subject_id", "session_id", "image_path"}) {
    if (get(name).empty()) throw ManifestError("required value is empty", row, name);
  }
  r.sample_id = get("sample_id");
  r.dataset_id = get("dataset_id");
  r.subject_id = get("subject_id");
  r.eye = parse_eye(get("eye"), row);
  r.session_id = get("session_id");
  try {
    r.band = parse_band(get("band"));
  } catch (const Error&) {
    throw ManifestError("band must be NIR or RGB, got '" + get("band") + "'", row, "band");
  }
  r.pmi_hours = parse_number(get("pmi_hours"), row, "pmi_hours");
  if (r.pmi_hours < 0.0) {
    throw ManifestError("pmi_hours must be >= 0, got " + get("pmi_hours"), row, "pmi_hours");
  }
  r.image_path = get("image_path");

  const auto& cx = get("iris_cx");
  const auto& cy = get("iris_cy");
  const auto& cr = get("iris_r");
  int present = !cx.empty() + !cy.empty() + !cr.empty();
  if (present == 3) {
    IrisCircle c{parse_number(cx, row, "iris_cx"), parse_number(cy, row, "iris_cy"),
                 parse_number(cr, row, "iris_r")};
    if (c.r <= 0.0) throw ManifestError("iris_r must be > 0", row, "iris_r");
    if (c.cx < 0.0) throw ManifestError("iris circle center lies outside the image", row, "iris_cx");
    if (c.cy < 0.0) throw ManifestError("iris circle center lies outside the image", row, "iris_cy");
    r.iris_circle = c;
  } else if (present != 0) {
    throw ManifestError("iris_cx, iris_cy and iris_r must be given together", row,
                        cx.empty() ? "iris_cx" : (cy.empty() ? "iris_cy" : "iris_r"));
  }
  r.is_synthetic = parse_flag(get("is_synthetic"), row);
  r.extra = std::move(extra);
  return r;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void check_unique_ids(const Manifest& m) {
  std::map<std::string_view, std::size_t> seen;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    auto [it, inserted] = seen.emplace(m.records[i].sample_id, i + 1);
    if (!inserted) {
      throw ManifestError("duplicate sample_id '" + m.records[i].sample_id +
                              "' (first seen in row " + std::to_string(it->second) + ")",
                          i + 1, "sample_id");
    }
  }
}

}  // namespace

ManifestError::ManifestError(const std::string& message, std::size_t row, std::string column)
    : Error([&] {
        std::string where;
        if (row) where += "row " + std::to_string(row);
        if (!column.empty()) where += (where.empty() ? "column " : ", column ") + column;
        return where.empty() ? "manifest: " + message : "manifest " + where + ": " + message;
      }()),
      row_(row),
      column_(std::move(column)) {}

std::string_view eye_code(Eye eye) { return eye == Eye::left ? "L" : "R"; }

Manifest parse_manifest_csv(std::istream& in, const std::filesystem::path& source_path) {
  auto rows = csv::read(in);
  if (rows.empty()) throw ManifestError("file is empty; a header row is required");
  const auto& header = rows.front().fields;
  std::set<std::string> seen;
  for (const auto& name : header) {
    if (!seen.insert(name).second) throw ManifestError("duplicate header column '" + name + "'");
  }
  for (auto name : kRequired) {
    if (!seen.count(name)) throw ManifestError(std::string("missing required column '") + name + "'");
  }

  Manifest m;
  m.source_path = source_path;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i].fields;
    if (f.size() != header.size()) {
      throw ManifestError("expected " + std::to_string(header.size()) + " fields, found " +
                              std::to_string(f.size()) + " (line " + std::to_string(rows[i].line) + ")",
                          i);
    }
    std::map<std::string, std::string, std::less<>> named;
    std::vector<std::pair<std::string, std::string>> extra;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (is_schema_column(header[c]))
        named.emplace(header[c], f[c]);
      else
        extra.emplace_back(header[c], f[c]);
    }
    m.records.push_back(build_record(named, std::move(extra), i));
  }
  if (m.records.empty()) throw ManifestError("manifest has no records");
  check_unique_ids(m);
  return m;
}

Manifest parse_manifest_json(std::istream& in, const std::filesystem::path& source_path) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ManifestError("JSON manifest must be an array of objects");
  Manifest m;
  m.source_path = source_path;
  std::size_t row = 0;
  for (const auto& obj : doc) {
    ++row;
    if (!obj.is_object()) throw ManifestError("entry is not an object", row);
    std::map<std::string, std::string, std::less<>> named;
    std::vector<std::pair<std::string, std::string>> extra;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      std::string text;
      if (it->is_string())
        text = it->get<std::string>();
      else if (it->is_null())
        text.clear();
      else if (it->is_boolean())
        text = it->get<bool>() ? "1" : "0";
      else if (it->is_number())
        text = it->is_number_float() ? format_number(it->get<double>()) : it->dump();
      else
        text = it->dump();
      if (is_schema_column(it.key()))
        named.emplace(it.key(), std::move(text));
      else
        extra.emplace_back(it.key(), std::move(text));
    }
    for (auto name : kRequired) {
      if (!named.count(name)) throw ManifestError("missing key", row, name);
    }
    m.records.push_back(build_record(named, std::move(extra), row));
  }
  if (m.records.empty()) throw ManifestError("manifest has no records");
  check_unique_ids(m);
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot open manifest file '" + path.string() + "'");
  Manifest m = path.extension() == ".json" ? parse_manifest_json(in, path)
                                           : parse_manifest_csv(in, path);
  m.source_path = path;
  return m;
}

void validate_manifest(const Manifest& m) {
  if (m.records.empty()) throw ManifestError("manifest has no records");
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (r.sample_id.empty()) throw ManifestError("required value is empty", i + 1, "sample_id");
    if (!(r.pmi_hours >= 0.0) || !std::isfinite(r.pmi_hours))
      throw ManifestError("pmi_hours must be >= 0", i + 1, "pmi_hours");
    if (r.iris_circle && r.iris_circle->r <= 0.0)
      throw ManifestError("iris_r must be > 0", i + 1, "iris_r");
  }
  check_unique_ids(m);
}

void write_manifest_csv(const Manifest& m, std::ostream& out) {
  std::vector<std::string> header(std::begin(kRequired), std::end(kRequired));
  header.insert(header.end(), std::begin(kOptional), std::end(kOptional));
  std::vector<std::string> extra_columns;
  for (const auto& r : m.records)
    for (const auto& [k, v] : r.extra)
      if (std::find(extra_columns.begin(), extra_columns.end(), k) == extra_columns.end())
        extra_columns.push_back(k);
  header.insert(header.end(), extra_columns.begin(), extra_columns.end());
  csv::write_row(out, header);
  for (const auto& r : m.records) {
    std::vector<std::string> f{r.sample_id,
                               r.dataset_id,
                               r.subject_id,
                               std::string(eye_code(r.eye)),
                               r.session_id,
                               std::string(band_name(r.band)),
                               format_number(r.pmi_hours),
                               r.image_path.generic_string()};
    if (r.iris_circle) {
      f.push_back(format_number(r.iris_circle->cx));
      f.push_back(format_number(r.iris_circle->cy));
      f.push_back(format_number(r.iris_circle->r));
    } else {
      f.insert(f.end(), 3, std::string());
    }
    f.push_back(r.is_synthetic ? "1" : "0");
    for (const auto& col : extra_columns) {
      auto it = std::find_if(r.extra.begin(), r.extra.end(),
                             [&](const auto& kv) { return kv.first == col; });
      f.push_back(it == r.extra.end() ? std::string() : it->second);
    }
    csv::write_row(out, f);
  }
}

void write_manifest_json(const Manifest& m, std::ostream& out) {
  json doc = json::array();
  for (const auto& r : m.records) {
    json o = json::object();
    o["sample_id"] = r.sample_id;
    o["dataset_id"] = r.dataset_id;
    o["subject_id"] = r.subject_id;
    o["eye"] = eye_code(r.eye);
    o["session_id"] = r.session_id;
    o["band"] = band_name(r.band);
    o["pmi_hours"] = r.pmi_hours;
    o["image_path"] = r.image_path.generic_string();
    if (r.iris_circle) {
      o["iris_cx"] = r.iris_circle->cx;
      o["iris_cy"] = r.iris_circle->cy;
      o["iris_r"] = r.iris_circle->r;
    } else {
      o["iris_cx"] = nullptr;
      o["iris_cy"] = nullptr;
      o["iris_r"] = nullptr;
    }
    o["is_synthetic"] = r.is_synthetic ? 1 : 0;
    for (const auto& [k, v] : r.extra) o[k] = v;
    doc.push_back(std::move(o));
  }
  out << doc.dump(2) << '\n';
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest '" + path.string() + "'");
  if (path.extension() == ".json")
    write_manifest_json(m, out);
  else
    write_manifest_csv(m, out);
}

std::filesystem::path resolve_image_path(const Manifest& m, const SampleRecord& r) {
  if (r.image_path.is_absolute() || m.source_path.empty()) return r.image_path;
  return m.source_path.parent_path() / r.image_path;
}

PairingResult pair_multispectral(const Manifest& m, double pmi_tolerance) {
  if (!(pmi_tolerance >= 0.0)) throw Error("pmi_tolerance must be >= 0");
  using Key = std::tuple<std::string, Eye, std::string>;
  std::map<Key, std::pair<std::vector<const SampleRecord*>, std::vector<const SampleRecord*>>> groups;
  for (const auto& r : m.records) {
    auto& g = groups[Key{r.subject_id, r.eye, r.session_id}];
    (r.band == Band::nir ? g.first : g.second).push_back(&r);
  }

  PairingResult result;
  for (auto& [key, g] : groups) {
    auto& [nirs, rgbs] = g;
    struct Candidate {
      double gap;
      const SampleRecord* nir;
      const SampleRecord* rgb;
    };
    std::vector<Candidate> cands;
    for (auto* n : nirs)
      for (auto* c : rgbs) {
        double gap = std::abs(n->pmi_hours - c->pmi_hours);
        if (gap <= pmi_tolerance) cands.push_back({gap, n, c});
      }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return std::tie(a.gap, a.nir->sample_id, a.rgb->sample_id) <
             std::tie(b.gap, b.nir->sample_id, b.rgb->sample_id);
    });
    std::set<const SampleRecord*> used;
    for (const auto& c : cands) {
      if (used.count(c.nir) || used.count(c.rgb)) continue;
      used.insert(c.nir);
      used.insert(c.rgb);
      result.pairs.push_back({*c.nir, *c.rgb, c.nir->pmi_hours});
    }
    auto report = [&](const std::vector<const SampleRecord*>& members, const char* other) {
      for (auto* r : members) {
        if (used.count(r)) continue;
        std::string reason;
        if ((r->band == Band::nir ? rgbs : nirs).empty())
          reason = std::string("no ") + other + " capture of the same subject/eye/session";
        else
          reason = std::string("no unmatched ") + other + " capture within the PMI tolerance";
        result.unpaired.push_back({r->sample_id, std::move(reason)});
      }
    };
    report(nirs, "RGB");
    report(rgbs, "NIR");
  }
  std::sort(result.pairs.begin(), result.pairs.end(),
            [](const auto& a, const auto& b) { return a.nir.sample_id < b.nir.sample_id; });
  std::sort(result.unpaired.begin(), result.unpaired.end(),
            [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  return result;
}

std::vector<std::string> DatasetSummary::dataset_ids() const {
  std::vector<std::string> ids;
  for (const auto& g : groups)
    if (ids.empty() || ids.back() != g.dataset_id) ids.push_back(g.dataset_id);
  return ids;
}

DatasetSummary summarize(const Manifest& m) {
  std::map<std::pair<std::string, int>, std::vector<double>> by_group;
  for (const auto& r : m.records)
    by_group[{r.dataset_id, static_cast<int>(r.band)}].push_back(r.pmi_hours);
  DatasetSummary s;
  for (const auto& [key, values] : by_group) {
    s.groups.push_back({key.first, static_cast<Band>(key.second), stats::box_stats(values)});
  }
  return s;
}

}  // namespace pmi
