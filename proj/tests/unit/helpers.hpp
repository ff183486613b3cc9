#pragma once

#include <filesystem>
#include <string>

#include "pmi/manifest.hpp"

namespace testing {

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pmi_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline pmi::SampleRecord record(std::string id, std::string dataset, std::string subject, double pmi,
                                pmi::Band band = pmi::Band::nir, std::string session = "s1",
                                pmi::Eye eye = pmi::Eye::left) {
  pmi::SampleRecord r;
  r.sample_id = std::move(id);
  r.dataset_id = std::move(dataset);
  r.subject_id = std::move(subject);
  r.session_id = std::move(session);
  r.eye = eye;
  r.band = band;
  r.pmi_hours = pmi;
  r.image_path = r.sample_id + ".png";
  return r;
}

}  // namespace testing
