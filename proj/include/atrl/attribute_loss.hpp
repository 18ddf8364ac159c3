#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <atrl/ops.hpp>
#include <atrl/tape.hpp>
#include <atrl/tensor.hpp>

namespace atrl {

enum class CenterInit { Zeros, FirstEpochMean };
enum class AttrReduction { Mean, Sum };

// Per-attribute feature centers. Centers are plain buffers: the attribute
// term treats them as constants, so no gradient ever reaches them. With
// CenterInit::FirstEpochMean the bank starts inactive — the training loop
// skips the attribute term and EMA updates until the first recompute fills
// the centers with real means.
class AttributeCenterBank {
 public:
  AttributeCenterBank() = default;

  AttributeCenterBank(const std::vector<std::int64_t>& ids,
                      std::size_t feature_dim, double alpha,
                      CenterInit init = CenterInit::Zeros)
      : feature_dim_(feature_dim), alpha_(alpha),
        active_(init == CenterInit::Zeros) {
    if (feature_dim == 0) throw Error("center bank: feature_dim must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw Error("center bank: alpha must lie in [0, 1], got " +
                  std::to_string(alpha));
    if (ids.empty()) throw Error("center bank: no attribute ids");
    for (std::int64_t id : ids) {
      if (id < 0)
        throw Error("center bank: negative attribute id " + std::to_string(id));
      if (!centers_.emplace(id, std::vector<double>(feature_dim, 0.0)).second)
        throw Error("center bank: duplicate attribute id " + std::to_string(id));
      counts_.emplace(id, 0);
    }
  }

  std::size_t feature_dim() const { return feature_dim_; }
  double alpha() const { return alpha_; }
  bool active() const { return active_; }
  void set_active(bool on) { active_ = on; }
  std::size_t size() const { return centers_.size(); }

  bool has(std::int64_t id) const { return centers_.count(id) != 0; }

  const std::vector<double>& center(std::int64_t id) const {
    auto it = centers_.find(id);
    if (it == centers_.end())
      throw Error("center bank: unknown attribute id " + std::to_string(id));
    return it->second;
  }

  std::uint64_t count(std::int64_t id) const {
    auto it = counts_.find(id);
    if (it == counts_.end())
      throw Error("center bank: unknown attribute id " + std::to_string(id));
    return it->second;
  }

  std::vector<std::int64_t> ids() const {  // sorted
    std::vector<std::int64_t> out;
    out.reserve(centers_.size());
    for (const auto& [id, c] : centers_) out.push_back(id);
    return out;
  }

  // Checkpoint restore path; also activates the bank.
  void restore(std::int64_t id, std::vector<double> center, std::uint64_t count) {
    auto it = centers_.find(id);
    if (it == centers_.end())
      throw Error("center bank: unknown attribute id " + std::to_string(id));
    if (center.size() != feature_dim_)
      throw Error("center bank: restored center for id " + std::to_string(id) +
                  " has length " + std::to_string(center.size()) +
                  ", expected " + std::to_string(feature_dim_));
    it->second = std::move(center);
    counts_[id] = count;
  }

 private:
  friend void update_centers_ema(AttributeCenterBank&, const Tensor&,
                                 std::span<const std::int64_t>);
  friend class CenterAccumulator;

  std::size_t feature_dim_ = 0;
  double alpha_ = 0.0;
  bool active_ = false;
  std::map<std::int64_t, std::vector<double>> centers_;
  std::map<std::int64_t, std::uint64_t> counts_;
};

namespace detail {

inline void check_attr_batch(const Tensor& features,
                             std::span<const std::int64_t> attr_labels,
                             const AttributeCenterBank& bank,
                             const char* what) {
  if (features.rank() != 2)
    throw Error(std::string(what) + ": features must be [n, d], got " +
                shape_str(features.shape()));
  if (features.dim(1) != bank.feature_dim())
    throw Error(std::string(what) + ": feature width " +
                std::to_string(features.dim(1)) + " does not match bank dim " +
                std::to_string(bank.feature_dim()));
  if (attr_labels.size() != features.dim(0))
    throw Error(std::string(what) + ": " + std::to_string(attr_labels.size()) +
                " labels for " + std::to_string(features.dim(0)) + " rows");
  for (std::int64_t id : attr_labels)
    if (!bank.has(id))
      throw Error(std::string(what) + ": unknown attribute id " +
                  std::to_string(id));
}

}  // namespace detail

// ½·Σᵢ‖fᵢ − r(aᵢ)‖², divided by n under mean reduction. Gradient flows into
// features only; the centers are constants.
inline Tensor attribute_term(const Tensor& features,
                             std::span<const std::int64_t> attr_labels,
                             const AttributeCenterBank& bank,
                             AttrReduction reduction, Tape* tape) {
  detail::check_attr_batch(features, attr_labels, bank, "attribute_term");
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  if (n == 0) throw Error("attribute_term: empty batch");

  const double* f = features.values().data();
  std::vector<double> diffs(n * d);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double>& r = bank.center(attr_labels[i]);
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = f[i * d + j] - r[j];
      diffs[i * d + j] = diff;
      acc += diff * diff;
    }
  }
  const double inv = reduction == AttrReduction::Mean
                         ? 1.0 / static_cast<double>(n)
                         : 1.0;
  Tensor out = Tensor::scalar(0.5 * acc * inv);
  if (detail::recording(tape, {features.tracked()})) {
    out.set_tracked();
    Tensor fc = features, oc = out;
    tape->record(out, [fc, oc, diffs = std::move(diffs), inv]() mutable {
      const double g = oc.grad()[0] * inv;
      double* fg = fc.grad().data();
      for (std::size_t k = 0; k < diffs.size(); ++k) fg[k] += g * diffs[k];
    });
  }
  return out;
}

struct LossBreakdown {
  double total = 0.0;
  double ce_term = 0.0;
  double attr_term = 0.0;
  double lambda = 0.0;
};

struct CombinedLoss {
  Tensor total;  // ce + λ·attr, differentiable
  LossBreakdown breakdown;
};

inline CombinedLoss combined_loss(const Tensor& ce_term, const Tensor& attr_term,
                                  double lambda, Tape* tape) {
  if (lambda < 0.0)
    throw Error("combined_loss: lambda must be nonnegative, got " +
                std::to_string(lambda));
  if (ce_term.numel() != 1 || attr_term.numel() != 1)
    throw Error("combined_loss: both terms must be scalars");
  CombinedLoss out;
  out.total = add(ce_term, scale(attr_term, lambda, tape), tape);
  out.breakdown.total = out.total.item();
  out.breakdown.ce_term = ce_term.item();
  out.breakdown.attr_term = attr_term.item();
  out.breakdown.lambda = lambda;
  return out;
}

// r(a) ← r(a) − α·( Σ_{i: aᵢ=a} (r(a) − fᵢ) / (1 + n_a) ), applied once per
// attribute present in the batch, in ascending id order from pre-update
// centers. Attributes absent from the batch are untouched.
inline void update_centers_ema(AttributeCenterBank& bank, const Tensor& features,
                               std::span<const std::int64_t> attr_labels) {
  detail::check_attr_batch(features, attr_labels, bank, "update_centers_ema");
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  const double* f = features.values().data();

  std::map<std::int64_t, std::pair<std::vector<double>, std::uint64_t>> batch;
  for (std::size_t i = 0; i < n; ++i) {
    auto& [delta, hits] = batch.try_emplace(attr_labels[i],
                                            std::vector<double>(d, 0.0), 0)
                              .first->second;
    const std::vector<double>& r = bank.centers_.at(attr_labels[i]);
    for (std::size_t j = 0; j < d; ++j) delta[j] += r[j] - f[i * d + j];
    ++hits;
  }
  for (const auto& [id, acc] : batch) {
    const auto& [delta, hits] = acc;
    const double step = bank.alpha_ / (1.0 + static_cast<double>(hits));
    std::vector<double>& r = bank.centers_[id];
    for (std::size_t j = 0; j < d; ++j) r[j] -= step * delta[j];
    bank.counts_[id] += hits;
  }
}

// Streaming exact recompute: feed every training batch's eval-mode features,
// then finalize() replaces each center with the arithmetic group mean.
class CenterAccumulator {
 public:
  explicit CenterAccumulator(std::size_t feature_dim) : feature_dim_(feature_dim) {
    if (feature_dim == 0)
      throw Error("center accumulator: feature_dim must be positive");
  }

  void add(const Tensor& features, std::span<const std::int64_t> attr_labels) {
    if (features.rank() != 2 || features.dim(1) != feature_dim_)
      throw Error("center accumulator: features must be [n, " +
                  std::to_string(feature_dim_) + "], got " +
                  shape_str(features.shape()));
    if (attr_labels.size() != features.dim(0))
      throw Error("center accumulator: " + std::to_string(attr_labels.size()) +
                  " labels for " + std::to_string(features.dim(0)) + " rows");
    const std::size_t d = feature_dim_;
    const double* f = features.values().data();
    for (std::size_t i = 0; i < features.dim(0); ++i) {
      const std::int64_t id = attr_labels[i];
      if (id < 0)
        throw Error("center accumulator: negative attribute id " +
                    std::to_string(id));
      auto& [sum, hits] =
          sums_.try_emplace(id, std::vector<double>(d, 0.0), 0).first->second;
      for (std::size_t j = 0; j < d; ++j) sum[j] += f[i * d + j];
      ++hits;
    }
  }

  void finalize(AttributeCenterBank& bank) const {
    if (bank.feature_dim() != feature_dim_)
      throw Error("center accumulator: bank dim " +
                  std::to_string(bank.feature_dim()) + " does not match " +
                  std::to_string(feature_dim_));
    for (const auto& [id, acc] : sums_)
      if (!bank.has(id))
        throw Error("center accumulator: attribute id " + std::to_string(id) +
                    " is not in the bank");
    for (auto& [id, r] : bank.centers_) {
      auto it = sums_.find(id);
      if (it == sums_.end() || it->second.second == 0)
        throw Error("recompute_centers: attribute " + std::to_string(id) +
                    " has no samples");
      const auto& [sum, hits] = it->second;
      const double inv = 1.0 / static_cast<double>(hits);
      for (std::size_t j = 0; j < feature_dim_; ++j) r[j] = sum[j] * inv;
      bank.counts_[id] = hits;
    }
    bank.set_active(true);
  }

 private:
  std::size_t feature_dim_;
  std::map<std::int64_t, std::pair<std::vector<double>, std::uint64_t>> sums_;
};

}  // namespace atrl
