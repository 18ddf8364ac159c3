#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include <atrl/image_io.hpp>
#include <atrl/rng.hpp>
#include <atrl/tensor.hpp>

namespace atrl {

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  throw Error("split_name: bad split value");
}

namespace detail {

inline std::size_t split_index(Split s) {
  switch (s) {
    case Split::Train: return 0;
    case Split::Val: return 1;
    case Split::Test: return 2;
  }
  throw Error("split_index: bad split value");
}

}  // namespace detail

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error("unknown split tag '" + s + "' (expected train/val/test)");
}

struct SampleRecord {
  std::string path;  // relative to the manifest directory
  std::int64_t class_id = -1;
  std::int64_t attribute_id = -1;
  Split split = Split::Train;
};

// Validated dataset listing. Attribute ids are class-level: the train split
// defines a class → attribute map, and every record's attribute is the map
// applied to its class (non-train records may omit theirs as -1 on disk).
struct DatasetManifest {
  std::string directory;
  std::vector<SampleRecord> records;
  std::map<std::int64_t, std::int64_t> class_to_attribute;

  std::size_t size() const { return records.size(); }

  std::string resolve(const SampleRecord& rec) const {
    return (std::filesystem::path(directory) / rec.path).string();
  }

  std::vector<std::size_t> split_indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) out.push_back(i);
    return out;
  }

  std::vector<std::int64_t> classes() const {
    std::set<std::int64_t> seen;
    for (const auto& r : records) seen.insert(r.class_id);
    return {seen.begin(), seen.end()};
  }

  std::vector<std::int64_t> attributes() const {
    std::set<std::int64_t> seen;
    for (const auto& [cls, attr] : class_to_attribute) seen.insert(attr);
    return {seen.begin(), seen.end()};
  }
};

// Builds the class → attribute map and enforces the manifest invariants:
// every class trains, attributes are consistent within a class, and no path
// repeats.
inline DatasetManifest make_manifest(std::string directory,
                                     std::vector<SampleRecord> records) {
  if (records.empty()) throw Error("manifest: no records");
  DatasetManifest m;
  m.directory = std::move(directory);
  m.records = std::move(records);

  std::set<std::string> paths;
  for (const auto& rec : m.records) {
    if (rec.path.empty()) throw Error("manifest: record with empty path");
    if (rec.class_id < 0)
      throw Error("manifest: negative class id for path " + rec.path);
    if (!paths.insert(rec.path).second)
      throw Error("manifest: duplicate path " + rec.path);
    if (rec.split == Split::Train) {
      if (rec.attribute_id < 0)
        throw Error("manifest: train record " + rec.path +
                    " has no attribute id");
      auto [it, fresh] =
          m.class_to_attribute.emplace(rec.class_id, rec.attribute_id);
      if (!fresh && it->second != rec.attribute_id)
        throw Error("manifest: class " + std::to_string(rec.class_id) +
                    " has conflicting attribute ids " +
                    std::to_string(it->second) + " and " +
                    std::to_string(rec.attribute_id));
    }
  }
  for (auto& rec : m.records) {
    auto it = m.class_to_attribute.find(rec.class_id);
    if (it == m.class_to_attribute.end())
      throw Error("manifest: class " + std::to_string(rec.class_id) +
                  " has no training samples");
    if (rec.attribute_id < 0)
      rec.attribute_id = it->second;
    else if (rec.attribute_id != it->second)
      throw Error("manifest: record " + rec.path + " labels class " +
                  std::to_string(rec.class_id) + " with attribute " +
                  std::to_string(rec.attribute_id) + ", but train says " +
                  std::to_string(it->second));
  }
  return m;
}

inline const std::string kManifestHeader = "path,class_id,attribute_id,split";

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("manifest is empty: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw Error(path + ":1: bad header (expected '" + kManifestHeader + "')");

  auto parse_id = [&](const std::string& field, std::size_t lineno,
                      const char* what) {
    std::int64_t v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
      throw Error(path + ":" + std::to_string(lineno) + ": bad " + what +
                  " '" + field + "'");
    return v;
  };

  std::vector<SampleRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 4)
      throw Error(path + ":" + std::to_string(lineno) + ": expected 4 fields, got " +
                  std::to_string(fields.size()));
    SampleRecord rec;
    rec.path = fields[0];
    rec.class_id = parse_id(fields[1], lineno, "class id");
    rec.attribute_id = parse_id(fields[2], lineno, "attribute id");
    try {
      rec.split = parse_split(fields[3]);
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  std::string dir = std::filesystem::path(path).parent_path().string();
  if (dir.empty()) dir = ".";
  return make_manifest(std::move(dir), std::move(records));
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest: " + path);
  out << kManifestHeader << "\n";
  for (const auto& rec : m.records)
    out << rec.path << ',' << rec.class_id << ',' << rec.attribute_id << ','
        << split_name(rec.split) << "\n";
  if (!out) throw Error("failed writing manifest: " + path);
}

// Stratified split: per class, a seeded shuffle sends ~train_frac of the
// samples to the train pool, one member of that pool becomes the val
// sample, and the remainder is the test set. Deterministic given the seed.
inline DatasetManifest split_dataset(std::string directory,
                                     std::vector<SampleRecord> records,
                                     double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw Error("split_dataset: train fraction must lie in (0, 1)");
  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].class_id < 0)
      throw Error("split_dataset: negative class id for path " + records[i].path);
    if (records[i].attribute_id < 0)
      throw Error("split_dataset: record " + records[i].path +
                  " has no attribute id");
    by_class[records[i].class_id].push_back(i);
  }
  for (auto& [cls, idx] : by_class) {
    const std::size_t n = idx.size();
    if (n < 3)
      throw Error("split_dataset: class " + std::to_string(cls) + " has only " +
                  std::to_string(n) + " samples (need at least 3)");
    Rng rng = keyed_rng(seed, "split", static_cast<std::uint64_t>(cls));
    rng.shuffle(idx);
    std::size_t train_n = static_cast<std::size_t>(
        std::llround(train_frac * static_cast<double>(n)));
    train_n = std::clamp(train_n, std::size_t{2}, n - 1);
    // First of the shuffled train pool is held out as the val sample.
    records[idx[0]].split = Split::Val;
    for (std::size_t k = 1; k < train_n; ++k)
      records[idx[k]].split = Split::Train;
    for (std::size_t k = train_n; k < n; ++k)
      records[idx[k]].split = Split::Test;
  }
  return make_manifest(std::move(directory), std::move(records));
}

// Per-channel standardization statistics from the train split at native
// resolution.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

inline NormStats compute_norm_stats(const DatasetManifest& m) {
  const auto train = m.split_indices(Split::Train);
  if (train.empty()) throw Error("norm stats: train split is empty");
  std::vector<double> sum(3, 0.0), sumsq(3, 0.0);
  std::size_t per_channel = 0;
  for (std::size_t i : train) {
    const Image img = read_png(m.resolve(m.records[i]));
    per_channel += img.height * img.width;
    for (std::size_t p = 0; p < img.height * img.width; ++p)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = img.data[p * 3 + c];
        sum[c] += v;
        sumsq[c] += v * v;
      }
  }
  NormStats stats;
  stats.mean.resize(3);
  stats.stdev.resize(3);
  const double inv = 1.0 / static_cast<double>(per_channel);
  for (std::size_t c = 0; c < 3; ++c) {
    stats.mean[c] = sum[c] * inv;
    const double var = sumsq[c] * inv - stats.mean[c] * stats.mean[c];
    stats.stdev[c] = std::sqrt(std::max(var, 0.0));
    if (!(stats.stdev[c] > 1e-12))
      throw Error("norm stats: channel " + std::to_string(c) +
                  " has zero variance");
  }
  return stats;
}

inline std::string norm_stats_path(const std::string& manifest_path) {
  return std::filesystem::path(manifest_path)
      .replace_extension(".stats.json")
      .string();
}

inline void save_norm_stats(const std::string& path, const NormStats& stats) {
  nlohmann::json j;
  j["mean"] = stats.mean;
  j["std"] = stats.stdev;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write stats file: " + path);
  out << j.dump(2) << "\n";
}

inline NormStats load_norm_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stats file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed stats file " + path + ": " + e.what());
  }
  NormStats stats;
  if (!j.contains("mean") || !j.contains("std"))
    throw Error("stats file " + path + " is missing mean/std");
  stats.mean = j["mean"].get<std::vector<double>>();
  stats.stdev = j["std"].get<std::vector<double>>();
  if (stats.mean.size() != 3 || stats.stdev.size() != 3)
    throw Error("stats file " + path + " must hold 3 channels");
  for (double s : stats.stdev)
    if (!(s > 0.0)) throw Error("stats file " + path + " has nonpositive std");
  return stats;
}

}  // namespace atrl
