#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "atrl/nn.hpp"
#include "atrl/ops.hpp"
#include "atrl/rng.hpp"
#include "atrl/tape.hpp"
#include "atrl/tensor.hpp"

namespace atrl {

struct ModelConfig {
  std::size_t input_resolution = 32;
  std::size_t in_channels = 3;
  std::vector<std::size_t> channels = {16, 32, 64};
  std::vector<std::size_t> blocks_per_stage = {2, 2, 2};
  std::size_t feature_dim = 64;
  std::size_t num_classes = 2;
  bool use_residual = true;
  bool use_batchnorm = true;
  // 0 = auto: 2 when the input is 64px or larger, else 1
  std::size_t stem_stride = 0;

  std::size_t resolved_stem_stride() const {
    if (stem_stride != 0) return stem_stride;
    return input_resolution >= 64 ? 2 : 1;
  }

  void validate() const {
    if (channels.empty() || channels.size() != blocks_per_stage.size()) {
      throw Error("model config: channels and blocks_per_stage must be "
                  "non-empty and the same length");
    }
    for (std::size_t c : channels) {
      if (c == 0) throw Error("model config: zero-width stage");
    }
    for (std::size_t b : blocks_per_stage) {
      if (b == 0) throw Error("model config: stage with zero blocks");
    }
    if (feature_dim == 0) throw Error("model config: feature_dim must be >= 1");
    if (num_classes < 2) throw Error("model config: need at least 2 classes");
    if (in_channels == 0) throw Error("model config: in_channels must be >= 1");
    const std::size_t ss = resolved_stem_stride();
    if (ss != 1 && ss != 2) {
      throw Error("model config: stem_stride must be 1 or 2");
    }
    std::size_t res = input_resolution / ss;
    for (std::size_t i = 1; i < channels.size(); ++i) res /= 2;
    if (res == 0) {
      throw Error("model config: input_resolution " +
                  std::to_string(input_resolution) +
                  " collapses below 1px before global pooling");
    }
  }
};

// Named tensor store. Iteration order is creation order; lookups are by
// name. `trainable` separates parameters from running-stat buffers;
// `decay` marks tensors weight decay applies to.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
    bool decay = true;
  };

  Tensor& add(const std::string& name, Tensor t, bool trainable, bool decay) {
    if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(t), trainable, decay});
    Tensor& ref = entries_.back().tensor;
    if (trainable) ref.set_tracked();
    return ref;
  }

  bool contains(const std::string& name) const { return index_.count(name); }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named '" + name + "'");
    return entries_[it->second].tensor;
  }

  const Tensor& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }

  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named '" + name + "'");
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grads() {
    for (auto& e : entries_) {
      if (e.trainable) e.tensor.zero_grad();
    }
  }

  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& e : entries_) {
      out.add(e.name, e.tensor.clone(), e.trainable, e.decay);
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ModelOutput {
  Tensor features;  // [n, feature_dim], post global pool (and projection)
  Tensor logits;    // [n, num_classes]
};

namespace detail {

inline Tensor he_normal(Shape shape, std::size_t fan_in, std::uint64_t seed,
                        const std::string& name) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng = keyed_rng(seed, name);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

inline void add_conv(ParameterSet& ps, const std::string& prefix,
                     std::size_t cin, std::size_t cout, std::size_t ksize,
                     std::uint64_t seed, bool with_bias) {
  ps.add(prefix + ".weight",
         he_normal({cout, cin, ksize, ksize}, cin * ksize * ksize, seed,
                   prefix + ".weight"),
         true, true);
  // under batchnorm a conv bias is a dead parameter (the mean subtraction
  // cancels it exactly), so it only exists in norm-free models
  if (with_bias) ps.add(prefix + ".bias", Tensor::zeros({cout}), true, false);
}

inline void add_bn(ParameterSet& ps, const std::string& prefix,
                   std::size_t c) {
  ps.add(prefix + ".gamma", Tensor::full({c}, 1.0), true, false);
  ps.add(prefix + ".beta", Tensor::zeros({c}), true, false);
  ps.add(prefix + ".running_mean", Tensor::zeros({c}), false, false);
  ps.add(prefix + ".running_var", Tensor::full({c}, 1.0), false, false);
}

inline bool block_has_projection(const ModelConfig& cfg, std::size_t stage,
                                 std::size_t block) {
  const std::size_t cin =
      block > 0 ? cfg.channels[stage]
                : (stage == 0 ? cfg.channels[0] : cfg.channels[stage - 1]);
  const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
  return stride != 1 || cin != cfg.channels[stage];
}

}  // namespace detail

// He-initialized parameters for the residual stack described by `cfg`.
// Identical (seed, cfg) always produce identical tensors; every tensor's
// stream is keyed by its name, not by creation order.
inline ParameterSet build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterSet ps;
  const bool conv_bias = !cfg.use_batchnorm;
  detail::add_conv(ps, "stem.conv", cfg.in_channels, cfg.channels[0], 3, seed,
                   conv_bias);
  if (cfg.use_batchnorm) detail::add_bn(ps, "stem.bn", cfg.channels[0]);

  std::size_t cin = cfg.channels[0];
  for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
    const std::size_t cout = cfg.channels[s];
    for (std::size_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const std::string p =
          "s" + std::to_string(s) + ".b" + std::to_string(b);
      detail::add_conv(ps, p + ".conv1", cin, cout, 3, seed, conv_bias);
      if (cfg.use_batchnorm) detail::add_bn(ps, p + ".bn1", cout);
      detail::add_conv(ps, p + ".conv2", cout, cout, 3, seed, conv_bias);
      if (cfg.use_batchnorm) detail::add_bn(ps, p + ".bn2", cout);
      if (cfg.use_residual && detail::block_has_projection(cfg, s, b)) {
        detail::add_conv(ps, p + ".proj", cin, cout, 1, seed, conv_bias);
        if (cfg.use_batchnorm) detail::add_bn(ps, p + ".projbn", cout);
      }
      cin = cout;
    }
  }

  if (cfg.feature_dim != cin) {
    ps.add("feat.weight",
           detail::he_normal({cin, cfg.feature_dim}, cin, seed, "feat.weight"),
           true, true);
    ps.add("feat.bias", Tensor::zeros({cfg.feature_dim}), true, false);
  }
  ps.add("head.weight",
         detail::he_normal({cfg.feature_dim, cfg.num_classes}, cfg.feature_dim,
                           seed, "head.weight"),
         true, true);
  ps.add("head.bias", Tensor::zeros({cfg.num_classes}), true, false);
  return ps;
}

namespace detail {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

inline Tensor apply_conv(ParameterSet& ps, const std::string& prefix,
                         const Tensor& x, std::size_t stride,
                         std::size_t padding, bool with_bias, Tape* tape) {
  if (with_bias) {
    return conv2d(x, ps.at(prefix + ".weight"), ps.at(prefix + ".bias"),
                  stride, padding, tape);
  }
  return conv2d(x, ps.at(prefix + ".weight"), stride, padding, tape);
}

inline Tensor apply_bn(ParameterSet& ps, const std::string& prefix, Tensor x,
                       Phase phase, Tape* tape) {
  return batchnorm2d(x, ps.at(prefix + ".gamma"), ps.at(prefix + ".beta"),
                     ps.at(prefix + ".running_mean"),
                     ps.at(prefix + ".running_var"), phase, kBnEps,
                     kBnMomentum, tape);
}

}  // namespace detail

inline ModelOutput forward(ParameterSet& params, const ModelConfig& cfg,
                           const Tensor& batch, Phase phase,
                           Tape* tape = nullptr) {
  cfg.validate();
  if (batch.rank() != 4 || batch.dim(1) != cfg.in_channels ||
      batch.dim(2) != cfg.input_resolution ||
      batch.dim(3) != cfg.input_resolution) {
    throw Error("forward wants [n," + std::to_string(cfg.in_channels) + "," +
                std::to_string(cfg.input_resolution) + "," +
                std::to_string(cfg.input_resolution) + "] input, got " +
                shape_str(batch.shape()));
  }
  if (batch.dim(0) == 0) throw Error("forward on an empty batch");

  const bool conv_bias = !cfg.use_batchnorm;
  Tensor x = detail::apply_conv(params, "stem.conv", batch,
                                cfg.resolved_stem_stride(), 1, conv_bias, tape);
  if (cfg.use_batchnorm) x = detail::apply_bn(params, "stem.bn", x, phase, tape);
  x = relu(x, tape);

  std::size_t cin = cfg.channels[0];
  for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
    const std::size_t cout = cfg.channels[s];
    for (std::size_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const std::string p =
          "s" + std::to_string(s) + ".b" + std::to_string(b);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;

      Tensor br = detail::apply_conv(params, p + ".conv1", x, stride, 1,
                                     conv_bias, tape);
      if (cfg.use_batchnorm) {
        br = detail::apply_bn(params, p + ".bn1", br, phase, tape);
      }
      br = relu(br, tape);
      br = detail::apply_conv(params, p + ".conv2", br, 1, 1, conv_bias, tape);
      if (cfg.use_batchnorm) {
        br = detail::apply_bn(params, p + ".bn2", br, phase, tape);
      }

      if (cfg.use_residual) {
        Tensor skip = x;
        if (detail::block_has_projection(cfg, s, b)) {
          skip = detail::apply_conv(params, p + ".proj", x, stride, 0,
                                    conv_bias, tape);
          if (cfg.use_batchnorm) {
            skip = detail::apply_bn(params, p + ".projbn", skip, phase, tape);
          }
        }
        br = add(br, skip, tape);
      }
      x = relu(br, tape);
      cin = cout;
    }
  }

  Tensor pooled = pool2d(PoolKind::GlobalAvg, x, 0, 0, tape);
  Tensor features = reshape(pooled, {batch.dim(0), cin}, tape);
  if (params.contains("feat.weight")) {
    features = add_bias_rows(matmul(features, params.at("feat.weight"), tape),
                             params.at("feat.bias"), tape);
  }
  Tensor logits = add_bias_rows(matmul(features, params.at("head.weight"), tape),
                                params.at("head.bias"), tape);
  return ModelOutput{features, logits};
}

}  // namespace atrl
