#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <atrl/attribute_loss.hpp>
#include <atrl/checkpoint.hpp>
#include <atrl/config.hpp>
#include <atrl/loader.hpp>
#include <atrl/model.hpp>
#include <atrl/ops.hpp>
#include <atrl/tape.hpp>

namespace atrl {

constexpr const char* kMetricsFile = "metrics.jsonl";
constexpr const char* kCheckpointFile = "checkpoint.atrl";

// Step schedule: the rate drops by 10x every lr_step epochs and never
// recovers.
inline double lr_at(std::size_t epoch, double lr0, std::size_t lr_step) {
  if (lr_step == 0) throw Error("lr_at: lr_step must be positive");
  double lr = lr0;
  for (std::size_t k = 0; k < epoch / lr_step; ++k) lr *= 0.1;
  return lr;
}

struct TrainConfig {
  double lambda = 0.01;
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.01;
  std::size_t epochs = 100;
  std::size_t lr_step = 20;
  std::size_t batch_size = 0;  // 0 = resolution default
  std::size_t resolution = 32;
  std::uint64_t seed = 1;
  bool augment = true;
  double center_alpha = 0.5;
  std::size_t center_recompute_every = 1;  // 0 = EMA only
  AttrReduction attr_reduction = AttrReduction::Mean;
  CenterInit center_init = CenterInit::Zeros;
  bool attr_enabled = true;
  bool log_seconds = true;
  ModelConfig model;

  std::size_t resolved_batch_size() const {
    if (batch_size != 0) return batch_size;
    if (resolution <= 48) return 400;
    if (resolution <= 64) return 100;
    return 50;
  }

  void validate() const {
    if (lambda < 0.0) throw Error("train config: lambda must be nonnegative");
    if (!(lr0 > 0.0)) throw Error("train config: lr0 must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
      throw Error("train config: momentum must be in [0,1)");
    if (weight_decay < 0.0)
      throw Error("train config: weight_decay must be nonnegative");
    if (epochs == 0) throw Error("train config: epochs must be positive");
    if (lr_step == 0) throw Error("train config: lr_step must be positive");
    if (resolution == 0) throw Error("train config: resolution must be positive");
    if (center_alpha < 0.0 || center_alpha > 1.0)
      throw Error("train config: center_alpha must be in [0,1]");
    ModelConfig mc = model;
    mc.input_resolution = resolution;
    mc.num_classes = std::max<std::size_t>(mc.num_classes, 2);
    mc.validate();
  }

  static TrainConfig from_config(const KVConfig& kv) {
    TrainConfig c;
    c.lambda = kv.get_double("lambda", c.lambda);
    c.lr0 = kv.get_double("lr0", c.lr0);
    c.momentum = kv.get_double("momentum", c.momentum);
    c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
    c.epochs = kv.get_size("epochs", c.epochs);
    c.lr_step = kv.get_size("lr_step", c.lr_step);
    c.batch_size = kv.get_size("batch_size", c.batch_size);
    c.resolution = kv.get_size("resolution", c.resolution);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    c.augment = kv.get_bool("augment", c.augment);
    c.center_alpha = kv.get_double("center_alpha", c.center_alpha);
    c.center_recompute_every =
        kv.get_size("center_recompute_every", c.center_recompute_every);
    c.attr_reduction =
        parse_attr_reduction(kv.get_string("attr_reduction", "mean"));
    c.center_init = parse_center_init(kv.get_string("center_init", "zeros"));
    c.attr_enabled = kv.get_bool("attr_enabled", c.attr_enabled);
    c.log_seconds = kv.get_bool("log_seconds", c.log_seconds);
    c.model.channels =
        parse_size_list(kv.get_string("model_channels", "16,32,64"));
    c.model.blocks_per_stage =
        parse_size_list(kv.get_string("model_blocks", "2,2,2"));
    c.model.feature_dim = kv.get_size("model_feature_dim", c.model.feature_dim);
    c.model.use_residual = kv.get_bool("model_use_residual", true);
    c.model.use_batchnorm = kv.get_bool("model_use_batchnorm", true);
    c.model.stem_stride = kv.get_size("model_stem_stride", 0);
    return c;
  }

  std::string to_config_text() const {
    std::ostringstream out;
    out << "lambda = " << fmt(lambda) << "\n"
        << "lr0 = " << fmt(lr0) << "\n"
        << "momentum = " << fmt(momentum) << "\n"
        << "weight_decay = " << fmt(weight_decay) << "\n"
        << "epochs = " << epochs << "\n"
        << "lr_step = " << lr_step << "\n"
        << "batch_size = " << batch_size << "\n"
        << "resolution = " << resolution << "\n"
        << "seed = " << seed << "\n"
        << "augment = " << (augment ? "true" : "false") << "\n"
        << "center_alpha = " << fmt(center_alpha) << "\n"
        << "center_recompute_every = " << center_recompute_every << "\n"
        << "attr_reduction = "
        << (attr_reduction == AttrReduction::Mean ? "mean" : "sum") << "\n"
        << "center_init = "
        << (center_init == CenterInit::Zeros ? "zeros" : "first-epoch-mean")
        << "\n"
        << "attr_enabled = " << (attr_enabled ? "true" : "false") << "\n"
        << "log_seconds = " << (log_seconds ? "true" : "false") << "\n"
        << "model_channels = " << join_sizes(model.channels) << "\n"
        << "model_blocks = " << join_sizes(model.blocks_per_stage) << "\n"
        << "model_feature_dim = " << model.feature_dim << "\n"
        << "model_use_residual = " << (model.use_residual ? "true" : "false")
        << "\n"
        << "model_use_batchnorm = " << (model.use_batchnorm ? "true" : "false")
        << "\n"
        << "model_stem_stride = " << model.stem_stride << "\n";
    return out.str();
  }

  static AttrReduction parse_attr_reduction(const std::string& s) {
    if (s == "mean") return AttrReduction::Mean;
    if (s == "sum") return AttrReduction::Sum;
    throw Error("attr_reduction must be 'mean' or 'sum', got '" + s + "'");
  }

  static CenterInit parse_center_init(const std::string& s) {
    if (s == "zeros") return CenterInit::Zeros;
    if (s == "first-epoch-mean") return CenterInit::FirstEpochMean;
    throw Error("center_init must be 'zeros' or 'first-epoch-mean', got '" +
                s + "'");
  }

  static std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
      std::size_t comma = s.find(',', pos);
      if (comma == std::string::npos) comma = s.size();
      const std::string item = s.substr(pos, comma - pos);
      std::size_t v = 0;
      const auto [p, ec] =
          std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc{} || p != item.data() + item.size())
        throw Error("bad size list entry '" + item + "' in '" + s + "'");
      out.push_back(v);
      pos = comma + 1;
    }
    return out;
  }

  static std::string join_sizes(const std::vector<std::size_t>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out << ",";
      out << v[i];
    }
    return out.str();
  }

 private:
  static std::string fmt(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
  }
};

// One SGD step with momentum and coupled weight decay: g' = g + wd·w for
// entries that decay, v ← m·v + g', w ← w − lr·v. Buffers are untouched.
// Velocity slots are created on first use.
inline void sgd_step(ParameterSet& params,
                     std::map<std::string, std::vector<double>>& velocity,
                     double lr, double momentum, double weight_decay) {
  for (auto& entry : params.entries()) {
    if (!entry.trainable) continue;
    Tensor& t = entry.tensor;
    const std::size_t n = t.numel();
    auto [it, inserted] = velocity.try_emplace(entry.name);
    std::vector<double>& v = it->second;
    if (inserted) v.assign(n, 0.0);
    if (v.size() != n)
      throw Error("velocity for " + entry.name + " has wrong length");
    double* w = t.values().data();
    const double* g = t.grad().data();
    const double wd = entry.decay ? weight_decay : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i]))
        throw Error("non-finite gradient in " + entry.name);
      const double adj = g[i] + wd * w[i];
      v[i] = momentum * v[i] + adj;
      w[i] -= lr * v[i];
    }
  }
}

struct TrainResult {
  ModelConfig model;
  ParameterSet params;
  AttributeCenterBank bank;
  RunState state;
};

inline std::string metrics_line(const EpochStats& h) {
  nlohmann::ordered_json j;
  j["epoch"] = h.epoch;
  j["lr"] = h.lr;
  j["ce"] = h.ce;
  j["attr"] = h.attr;
  j["total"] = h.total;
  j["val_top1"] = h.val_top1;
  j["seconds"] = h.seconds;
  return j.dump();
}

namespace detail {

inline std::size_t argmax_row(const double* row, std::size_t c) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k)
    if (row[k] > row[best]) best = k;  // ties keep the lower index
  return best;
}

inline void recompute_centers(AttributeCenterBank& bank, ParameterSet& params,
                              const ModelConfig& mc, Loader& loader,
                              const TrainConfig& cfg, std::uint64_t epoch) {
  CenterAccumulator acc(bank.feature_dim());
  loader.for_each_batch(Split::Train, cfg.resolved_batch_size(), cfg.resolution,
                        /*augment=*/false, cfg.seed, epoch, [&](Batch&& b) {
                          ModelOutput out =
                              forward(params, mc, b.x, Phase::Eval, nullptr);
                          acc.add(out.features, b.a);
                        });
  acc.finalize(bank);
}

inline double eval_top1(ParameterSet& params, const ModelConfig& mc,
                        Loader& loader, Split split, const TrainConfig& cfg,
                        std::uint64_t epoch) {
  std::size_t correct = 0, total = 0;
  loader.for_each_batch(split, cfg.resolved_batch_size(), cfg.resolution,
                        /*augment=*/false, cfg.seed, epoch, [&](Batch&& b) {
                          ModelOutput out =
                              forward(params, mc, b.x, Phase::Eval, nullptr);
                          const std::size_t n = out.logits.dim(0);
                          const std::size_t c = out.logits.dim(1);
                          const double* l = out.logits.values().data();
                          for (std::size_t i = 0; i < n; ++i) {
                            if (argmax_row(l + i * c, c) ==
                                static_cast<std::size_t>(b.y[i]))
                              ++correct;
                            ++total;
                          }
                        });
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

}  // namespace detail

// Runs the full loop: shuffled batches, forward, cross-entropy plus the
// center-pull term when enabled, backward, SGD, per-batch center EMA and
// per-epoch exact recomputes, validation top-1, a metrics line and a
// checkpoint per epoch. `out_dir` empty keeps everything in memory.
// `resume` picks up from out_dir's checkpoint when one exists; the stored
// config must match everywhere but the epoch budget.
inline TrainResult train_model(const TrainConfig& cfg, Loader& loader,
                               const std::string& out_dir = "",
                               bool resume = false) {
  cfg.validate();
  const DatasetManifest& man = loader.manifest();

  const auto classes = man.classes();
  if (classes.size() < 2) throw Error("training needs at least 2 classes");
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] != static_cast<std::int64_t>(i))
      throw Error("training needs class ids 0..K-1, found id " +
                  std::to_string(classes[i]));
  if (man.split_indices(Split::Train).empty())
    throw Error("training split is empty");

  ModelConfig mc = cfg.model;
  mc.in_channels = 3;
  mc.input_resolution = cfg.resolution;
  mc.num_classes = classes.size();
  mc.validate();

  TrainResult r{mc, build_model(mc, cfg.seed),
                AttributeCenterBank(man.attributes(), mc.feature_dim,
                                    cfg.center_alpha, cfg.center_init),
                RunState{}};

  const bool attr_on = cfg.attr_enabled && cfg.lambda > 0.0;
  const std::string config_text = cfg.to_config_text();
  std::filesystem::path metrics_path, ckpt_path;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_path = std::filesystem::path(out_dir) / kMetricsFile;
    ckpt_path = std::filesystem::path(out_dir) / kCheckpointFile;
  }

  if (resume && !out_dir.empty() && std::filesystem::exists(ckpt_path)) {
    const CheckpointInfo info =
        load_checkpoint(ckpt_path.string(), r.params, r.bank, r.state);
    if (info.seed != cfg.seed)
      throw Error("checkpoint was trained with seed " +
                  std::to_string(info.seed) + ", config says " +
                  std::to_string(cfg.seed));
    TrainConfig stored =
        TrainConfig::from_config(KVConfig::parse_string(info.config_text,
                                                        "checkpoint"));
    stored.epochs = cfg.epochs;
    if (stored.to_config_text() != config_text)
      throw Error("checkpoint config does not match the requested run");
    if (r.state.epoch > cfg.epochs)
      throw Error("checkpoint is already past epoch " +
                  std::to_string(cfg.epochs));
  }

  // The metrics file is rebuilt from checkpoint history on resume so a crash
  // between the metrics write and the checkpoint write cannot leave an
  // orphan line.
  if (!out_dir.empty()) {
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw Error("cannot write " + metrics_path.string());
    for (const EpochStats& h : r.state.history)
      metrics << metrics_line(h) << "\n";
  }

  const std::size_t bs = cfg.resolved_batch_size();
  for (std::size_t epoch = r.state.epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg.lr0, cfg.lr_step);
    double ce_sum = 0.0, attr_sum = 0.0, total_sum = 0.0;
    std::size_t seen = 0;

    loader.for_each_batch(
        Split::Train, bs, cfg.resolution, cfg.augment, cfg.seed, epoch,
        [&](Batch&& b) {
          Tape tape;
          ModelOutput out = forward(r.params, mc, b.x, Phase::Train, &tape);
          Tensor ce = softmax_cross_entropy(out.logits, b.y, &tape);

          Tensor loss = ce;
          double ce_v = ce.item(), attr_v = 0.0;
          const bool attr_now = attr_on && r.bank.active();
          if (attr_now) {
            Tensor at =
                attribute_term(out.features, b.a, r.bank, cfg.attr_reduction,
                               &tape);
            CombinedLoss cl = combined_loss(ce, at, cfg.lambda, &tape);
            loss = cl.total;
            attr_v = cl.breakdown.attr_term;
          }
          const double total_v = loss.item();
          if (!std::isfinite(total_v))
            throw Error("non-finite loss at epoch " + std::to_string(epoch) +
                        " step " + std::to_string(r.state.step));

          r.params.zero_grads();
          tape.backward(loss);
          sgd_step(r.params, r.state.velocity, lr, cfg.momentum,
                   cfg.weight_decay);
          if (attr_now) update_centers_ema(r.bank, out.features, b.a);

          const double n = static_cast<double>(b.y.size());
          ce_sum += ce_v * n;
          attr_sum += attr_v * n;
          total_sum += total_v * n;
          seen += b.y.size();
          ++r.state.step;
        });
    if (seen == 0) throw Error("training split is empty");

    const bool periodic = cfg.center_recompute_every != 0 &&
                          (epoch + 1) % cfg.center_recompute_every == 0;
    if (attr_on && (periodic || !r.bank.active()))
      detail::recompute_centers(r.bank, r.params, mc, loader, cfg, epoch);

    EpochStats h;
    h.epoch = epoch;
    h.lr = lr;
    h.ce = ce_sum / seen;
    h.attr = attr_sum / seen;
    h.total = total_sum / seen;
    h.val_top1 = detail::eval_top1(r.params, mc, loader, Split::Val, cfg, epoch);
    const std::chrono::duration<double> dt =
        std::chrono::steady_clock::now() - t0;
    h.seconds = cfg.log_seconds ? dt.count() : 0.0;
    r.state.history.push_back(h);
    r.state.epoch = epoch + 1;

    if (!out_dir.empty()) {
      std::ofstream metrics(metrics_path, std::ios::app);
      if (!metrics) throw Error("cannot write " + metrics_path.string());
      metrics << metrics_line(h) << "\n";
      save_checkpoint(ckpt_path.string(), r.params, r.bank, r.state, cfg.seed,
                      config_text);
    }
  }
  return r;
}

}  // namespace atrl
