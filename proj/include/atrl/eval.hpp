#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <atrl/loader.hpp>
#include <atrl/model.hpp>
#include <atrl/tensor.hpp>

namespace atrl {

enum class EvalMode { TrainedHead, EuclideanCentroid };

inline std::string eval_mode_name(EvalMode m) {
  return m == EvalMode::TrainedHead ? "trained-head" : "euclidean-centroid";
}

inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "trained-head") return EvalMode::TrainedHead;
  if (s == "euclidean-centroid") return EvalMode::EuclideanCentroid;
  throw Error("mode must be 'trained-head' or 'euclidean-centroid', got '" +
              s + "'");
}

struct EvalReport {
  std::string mode;
  std::string split;
  std::size_t resolution = 0;
  std::size_t n_test = 0;
  std::map<std::size_t, double> top_k;       // k -> percentage
  std::map<std::int64_t, double> per_class;  // class -> top-1 percentage
  double attribute_confusion_rate = 0.0;
  double cohesion_ratio = 0.0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["mode"] = mode;
    j["split"] = split;
    j["resolution"] = resolution;
    j["n_test"] = n_test;
    nlohmann::ordered_json ks;
    for (const auto& [k, v] : top_k) ks[std::to_string(k)] = v;
    j["top_k"] = std::move(ks);
    nlohmann::ordered_json pc;
    for (const auto& [c, v] : per_class) pc[std::to_string(c)] = v;
    j["per_class"] = std::move(pc);
    j["attribute_confusion_rate"] = attribute_confusion_rate;
    j["cohesion_ratio"] = cohesion_ratio;
    return j;
  }
};

// Table-style percentage, two decimals: 53.24.
inline std::string format_percent(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << v;
  return out.str();
}

// A sample counts at k when its true class is among the k highest scores;
// equal scores rank by lower class index.
inline double top_k_accuracy(const Tensor& scores,
                             std::span<const std::int64_t> labels,
                             std::size_t k) {
  if (scores.rank() != 2)
    throw Error("top_k_accuracy wants [n,c] scores, got " +
                shape_str(scores.shape()));
  const std::size_t n = scores.dim(0);
  const std::size_t c = scores.dim(1);
  if (k < 1 || k > c)
    throw Error("top_k_accuracy: k must be in [1," + std::to_string(c) +
                "], got " + std::to_string(k));
  if (labels.size() != n)
    throw Error("top_k_accuracy: " + std::to_string(n) + " rows but " +
                std::to_string(labels.size()) + " labels");
  if (n == 0) throw Error("top_k_accuracy on an empty batch");

  const double* s = scores.values().data();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw Error("top_k_accuracy: label " + std::to_string(y) +
                  " outside [0," + std::to_string(c) + ")");
    const double* row = s + i * c;
    const double own = row[static_cast<std::size_t>(y)];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (row[j] > own ||
          (row[j] == own && j < static_cast<std::size_t>(y)))
        ++rank;
    }
    if (rank < k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

namespace detail {

inline std::size_t top1_prediction(const double* row, std::size_t c) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

inline double pair_distance(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace detail

// Mean intra-attribute pairwise feature distance over mean inter-attribute
// pairwise distance; 0 when either side has no pairs or the inter mean
// vanishes.
inline double cohesion_ratio(const Tensor& features,
                             std::span<const std::int64_t> attrs) {
  if (features.rank() != 2)
    throw Error("cohesion_ratio wants [n,d] features, got " +
                shape_str(features.shape()));
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  if (attrs.size() != n)
    throw Error("cohesion_ratio: " + std::to_string(n) + " rows but " +
                std::to_string(attrs.size()) + " attributes");
  const double* f = features.values().data();
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dist = detail::pair_distance(f + i * d, f + j * d, d);
      if (attrs[i] == attrs[j]) {
        intra += dist;
        ++n_intra;
      } else {
        inter += dist;
        ++n_inter;
      }
    }
  }
  if (n_intra == 0 || n_inter == 0) return 0.0;
  const double inter_mean = inter / static_cast<double>(n_inter);
  if (inter_mean == 0.0) return 0.0;
  return (intra / static_cast<double>(n_intra)) / inter_mean;
}

// Everything downstream of the scores: top-k at 1/3/5 (clipped to the class
// count), per-class top-1, the fraction of errors that cross attribute
// groups, and feature cohesion. Attribute identity comes from the class map
// alone, so sample-level attribute fields are never consulted.
inline EvalReport score_report(
    const Tensor& scores, std::span<const std::int64_t> labels,
    const Tensor& features,
    const std::map<std::int64_t, std::int64_t>& class_to_attribute) {
  const std::size_t n = scores.dim(0);
  const std::size_t c = scores.dim(1);

  EvalReport rep;
  rep.n_test = n;
  for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{5}})
    if (k <= c) rep.top_k[k] = top_k_accuracy(scores, labels, k);

  const double* s = scores.values().data();
  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> by_class;
  std::size_t errors = 0, crossing = 0;
  std::vector<std::int64_t> attrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t y = labels[i];
    const auto it = class_to_attribute.find(y);
    if (it == class_to_attribute.end())
      throw Error("no attribute mapping for class " + std::to_string(y));
    attrs[i] = it->second;
    const std::int64_t pred =
        static_cast<std::int64_t>(detail::top1_prediction(s + i * c, c));
    auto& [hit, total] = by_class[y];
    ++total;
    if (pred == y) {
      ++hit;
    } else {
      ++errors;
      const auto pt = class_to_attribute.find(pred);
      if (pt == class_to_attribute.end())
        throw Error("no attribute mapping for class " + std::to_string(pred));
      if (pt->second != it->second) ++crossing;
    }
  }
  for (const auto& [cls, counts] : by_class)
    rep.per_class[cls] = 100.0 * static_cast<double>(counts.first) /
                         static_cast<double>(counts.second);
  rep.attribute_confusion_rate =
      errors == 0 ? 0.0
                  : static_cast<double>(crossing) / static_cast<double>(errors);
  rep.cohesion_ratio = cohesion_ratio(features, attrs);
  return rep;
}

// Per-class mean feature vectors; every class in the map must appear.
inline std::map<std::int64_t, std::vector<double>> class_centroids(
    const Tensor& features, std::span<const std::int64_t> labels,
    const std::vector<std::int64_t>& classes) {
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  if (labels.size() != n)
    throw Error("class_centroids: row/label count mismatch");
  std::map<std::int64_t, std::pair<std::vector<double>, std::size_t>> acc;
  for (std::int64_t cls : classes) acc[cls] = {std::vector<double>(d, 0.0), 0};
  const double* f = features.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    auto it = acc.find(labels[i]);
    if (it == acc.end())
      throw Error("class_centroids: unmapped class " +
                  std::to_string(labels[i]));
    for (std::size_t j = 0; j < d; ++j) it->second.first[j] += f[i * d + j];
    ++it->second.second;
  }
  std::map<std::int64_t, std::vector<double>> out;
  for (auto& [cls, sums] : acc) {
    if (sums.second == 0)
      throw Error("class " + std::to_string(cls) +
                  " has no samples to build a centroid from");
    for (auto& v : sums.first) v /= static_cast<double>(sums.second);
    out[cls] = std::move(sums.first);
  }
  return out;
}

// Negated Euclidean distances to each class centroid, so higher = closer and
// the scores slot straight into top-k.
inline Tensor centroid_scores(
    const Tensor& features,
    const std::map<std::int64_t, std::vector<double>>& centroids) {
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  const std::size_t c = centroids.size();
  std::size_t expect = 0;
  for (const auto& [cls, center] : centroids) {
    if (cls != static_cast<std::int64_t>(expect++))
      throw Error("centroid_scores needs class ids 0..K-1");
    if (center.size() != d)
      throw Error("centroid for class " + std::to_string(cls) +
                  " has dim " + std::to_string(center.size()) + ", features " +
                  std::to_string(d));
  }
  Tensor out = Tensor::zeros({n, c});
  double* o = out.values().data();
  const double* f = features.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (const auto& [cls, center] : centroids)
      o[i * c + k++] =
          -detail::pair_distance(f + i * d, center.data(), d);
  }
  return out;
}

namespace detail {

struct SplitForward {
  Tensor features;               // [n,d], rows in record-index order
  Tensor logits;                 // [n,c]
  std::vector<std::int64_t> labels;
};

// Eval-phase forward over a whole split with rows reassembled in manifest
// record order, which makes the result independent of shuffle order and
// batch size.
inline SplitForward split_forward(ParameterSet& params, const ModelConfig& mc,
                                  Loader& loader, Split split,
                                  std::size_t batch_size) {
  const auto order = loader.manifest().split_indices(split);
  if (order.empty())
    throw Error("split '" + std::string(split_name(split)) +
                "' has no samples");
  std::map<std::size_t, std::size_t> slot;  // record index -> output row
  {
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) slot[sorted[i]] = i;
  }
  const std::size_t n = order.size();
  const std::size_t d = mc.feature_dim;

  SplitForward out;
  out.features = Tensor::zeros({n, d});
  out.labels.assign(n, 0);
  double* fo = out.features.values().data();
  double* lo = nullptr;
  std::size_t c = 0;
  loader.for_each_batch(
      split, batch_size, mc.input_resolution, /*augment=*/false, /*seed=*/0,
      /*epoch=*/0, [&](Batch&& b) {
        ModelOutput mo = forward(params, mc, b.x, Phase::Eval, nullptr);
        if (lo == nullptr) {
          c = mo.logits.dim(1);
          out.logits = Tensor::zeros({n, c});
          lo = out.logits.values().data();
        }
        const double* bf = mo.features.values().data();
        const double* bl = mo.logits.values().data();
        for (std::size_t i = 0; i < b.indices.size(); ++i) {
          const std::size_t row = slot.at(b.indices[i]);
          std::copy(bf + i * d, bf + (i + 1) * d, fo + row * d);
          std::copy(bl + i * c, bl + (i + 1) * c, lo + row * c);
          out.labels[row] = b.y[i];
        }
      });
  return out;
}

}  // namespace detail

// Scores a split with either the trained classifier head or nearest train-set
// class centroid in feature space. Pure in (params, manifest, split,
// resolution, mode): repeated calls give bit-identical reports.
inline EvalReport evaluate(ParameterSet& params, const ModelConfig& mc,
                           Loader& loader, Split split, EvalMode mode,
                           std::size_t batch_size = 100) {
  if (batch_size == 0) throw Error("evaluate: batch size must be positive");
  const detail::SplitForward sf =
      detail::split_forward(params, mc, loader, split, batch_size);

  Tensor scores = sf.logits;
  if (mode == EvalMode::EuclideanCentroid) {
    const detail::SplitForward train =
        detail::split_forward(params, mc, loader, Split::Train, batch_size);
    const auto centroids = class_centroids(train.features, train.labels,
                                           loader.manifest().classes());
    scores = centroid_scores(sf.features, centroids);
  }
  EvalReport rep = score_report(scores, sf.labels, sf.features,
                                loader.manifest().class_to_attribute);
  rep.mode = eval_mode_name(mode);
  rep.split = split_name(split);
  rep.resolution = mc.input_resolution;
  return rep;
}

}  // namespace atrl
