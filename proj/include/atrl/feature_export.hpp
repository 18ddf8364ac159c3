#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>

#include <atrl/eval.hpp>
#include <atrl/pca.hpp>

namespace atrl {

struct ExportPaths {
  std::string features_csv;
  std::string pca_csv;
};

// Writes one row per sample, in manifest record order:
//   features.csv: feature_0..feature_{D-1},class_id,attribute_id
//   pca.csv:      x,y,class_id,attribute_id
// Attribute ids come from the class map, so attribute-free test records
// export the same rows as fully labeled ones.
inline ExportPaths export_features(ParameterSet& params, const ModelConfig& mc,
                                   Loader& loader, Split split,
                                   const std::string& out_dir,
                                   std::size_t batch_size = 100) {
  const detail::SplitForward sf =
      detail::split_forward(params, mc, loader, split, batch_size);
  const std::size_t n = sf.features.dim(0);
  const std::size_t d = sf.features.dim(1);
  const Pca2 pca = pca_top2(sf.features);

  std::filesystem::create_directories(out_dir);
  ExportPaths paths;
  paths.features_csv =
      (std::filesystem::path(out_dir) / "features.csv").string();
  paths.pca_csv = (std::filesystem::path(out_dir) / "pca.csv").string();

  const auto& map = loader.manifest().class_to_attribute;
  const auto attr_of = [&](std::int64_t cls) {
    const auto it = map.find(cls);
    if (it == map.end())
      throw Error("no attribute mapping for class " + std::to_string(cls));
    return it->second;
  };

  {
    std::ofstream out(paths.features_csv, std::ios::trunc);
    if (!out) throw Error("cannot write " + paths.features_csv);
    out << std::setprecision(17);
    for (std::size_t j = 0; j < d; ++j) out << "feature_" << j << ",";
    out << "class_id,attribute_id\n";
    const double* f = sf.features.values().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) out << f[i * d + j] << ",";
      out << sf.labels[i] << "," << attr_of(sf.labels[i]) << "\n";
    }
    if (!out) throw Error("failed writing " + paths.features_csv);
  }
  {
    std::ofstream out(paths.pca_csv, std::ios::trunc);
    if (!out) throw Error("cannot write " + paths.pca_csv);
    out << std::setprecision(17);
    out << "x,y,class_id,attribute_id\n";
    const double* p = pca.projection.values().data();
    for (std::size_t i = 0; i < n; ++i) {
      out << p[i * 2] << "," << p[i * 2 + 1] << "," << sf.labels[i] << ","
          << attr_of(sf.labels[i]) << "\n";
    }
    if (!out) throw Error("failed writing " + paths.pca_csv);
  }
  return paths;
}

}  // namespace atrl
