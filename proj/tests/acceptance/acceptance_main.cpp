// Acceptance harness. Each numbered check prints one [PASS]/[FAIL] line
// (indented lines are supporting detail); the exit code is the number of
// failed checks. Checks 5-7 share one pool of training runs; a run is
// trained at most once and reused wherever its cell is needed.
//
//   atrl_acceptance [--cli <path-to-atrl>] [--work <dir>] [--only 1,5,7]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <atrl/attribute_loss.hpp>
#include <atrl/dataset.hpp>
#include <atrl/eval.hpp>
#include <atrl/gradcheck.hpp>
#include <atrl/image.hpp>
#include <atrl/loader.hpp>
#include <atrl/model.hpp>
#include <atrl/nn.hpp>
#include <atrl/ops.hpp>
#include <atrl/rng.hpp>
#include <atrl/synthetic.hpp>
#include <atrl/tape.hpp>
#include <atrl/tensor.hpp>
#include <atrl/trainer.hpp>

namespace {

using namespace atrl;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

std::string fmt_sci(double v) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(1);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// shared fixtures

// Dataset for the trend checks: 8 classes in 2 attribute groups, 200 train +
// 50 test per class, 6px fine cues on a 128px canvas. The group-cue strength
// sits where 32x32 inputs strain plain cross-entropy: weak enough that the
// attribute term has structure left to recover, strong enough that 64x64
// stays close to solved for both variants.
SyntheticSpec trend_spec() {
  SyntheticSpec s;
  s.num_classes = 8;
  s.classes_per_group = 4;
  s.canvas = 128;
  s.fine_scale = 6;
  s.strength = 0.35;
  s.noise_sigma = 0.02;
  s.train_per_class = 200;
  s.val_per_class = 25;
  s.test_per_class = 50;
  s.seed = 7;
  return s;
}

// lr0 stays gentle on purpose: at 0.05 some seeds never leave the
// group-level plateau (cross-entropy exactly ln 4, within-group accuracy at
// chance) because the few-pixel class cues generate gradients small enough
// for an aggressive step plus weight decay to erase.
TrainConfig trend_config() {
  TrainConfig cfg;
  cfg.lambda = 0.01;
  cfg.lr0 = 0.02;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0005;
  cfg.epochs = 30;
  cfg.lr_step = 20;
  cfg.batch_size = 64;
  cfg.resolution = 32;
  cfg.augment = true;
  cfg.log_seconds = false;
  cfg.model.channels = {4, 8, 16};
  cfg.model.blocks_per_stage = {1, 1, 1};
  cfg.model.feature_dim = 16;
  return cfg;
}

// Small dataset for the equivalence/determinism/contract checks.
SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.num_classes = 4;
  s.classes_per_group = 2;
  s.canvas = 32;
  s.fine_scale = 3;
  s.strength = 0.6;
  s.noise_sigma = 0.02;
  s.train_per_class = 16;
  s.val_per_class = 4;
  s.test_per_class = 4;
  s.seed = 11;
  return s;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.lambda = 0.01;
  cfg.lr0 = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0005;
  cfg.epochs = 5;
  cfg.lr_step = 20;
  cfg.batch_size = 16;
  cfg.resolution = 32;
  cfg.seed = 3;
  cfg.log_seconds = false;
  cfg.model.channels = {6};
  cfg.model.blocks_per_stage = {1};
  cfg.model.feature_dim = 8;
  return cfg;
}

struct Harness {
  std::string cli;
  std::filesystem::path work = "acceptance_work";
  std::set<int> only;
  int failures = 0;

  std::string small_manifest;  // filled on first use
  std::string trend_manifest;

  bool wants(int id) const { return only.empty() || only.count(id) != 0; }

  void verdict(int id, const std::string& name, bool pass,
               const std::string& note) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << " " << name;
    if (!note.empty()) std::cout << " (" << note << ")";
    std::cout << "\n" << std::flush;
    if (!pass) ++failures;
  }

  void detail(const std::string& line) {
    std::cout << "  " << line << "\n" << std::flush;
  }

  const std::string& ensure_small_data() {
    if (small_manifest.empty())
      small_manifest =
          generate_synthetic(small_spec(), (work / "small_data").string());
    return small_manifest;
  }

  const std::string& ensure_trend_data() {
    if (trend_manifest.empty())
      trend_manifest =
          generate_synthetic(trend_spec(), (work / "trend_data").string());
    return trend_manifest;
  }
};

// ---------------------------------------------------------------------------
// 1. gradient oracles

// Tracks the largest relative error across all finite-difference checks of
// one op family.
struct OpErr {
  double max_rel = 0.0;
  void fold(const GradCheckReport& r) {
    max_rel = std::max(max_rel, r.max_rel_err);
  }
};

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Uniform away from zero on both sides, so relu kinks stay out of reach of
// the ±eps probes.
Tensor random_signed_gap(Rng& rng, Shape shape, double gap, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) {
    const double mag = rng.uniform(gap, hi);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Distinct multiples of `step`, shuffled: every pairwise gap is at least
// `step`, so ±eps probes cannot flip a max-pool argmax.
Tensor lattice_tensor(Rng& rng, Shape shape, double step) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::vector<std::size_t> perm(t.numel());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  for (std::size_t i = 0; i < perm.size(); ++i)
    t.values()[i] = step * static_cast<double>(perm[i]);
  return t;
}

// Weighted sum against fixed coefficients: the upstream gradient then varies
// per coordinate instead of being uniform like sum/mean alone.
Tensor weighted_sum(const Tensor& x, const Tensor& coeff, Tape* tape) {
  return sum_all(mul(x, coeff, tape), tape);
}

bool check_1_gradients(Harness& h) {
  const auto t0 = Clock::now();
  std::map<std::string, OpErr> errs;

  for (std::uint64_t inst = 0; inst < 12; ++inst) {
    // elementwise: add, sub, mul, relu, scale, add_bias_rows, reshape,
    // sum_all, mean_all in one expression
    {
      Rng rng = keyed_rng(901, "elementwise", inst);
      Tensor a = random_signed_gap(rng, {3, 4}, 0.05, 1.0).set_tracked();
      Tensor b = random_tensor(rng, {3, 4}, 0.2, 1.2).set_tracked();
      Tensor bias = random_tensor(rng, {4}, -0.5, 0.5).set_tracked();
      auto net = [&](Tape* tape) {
        Tensor e = add(mul(relu(a, tape), b, tape),
                       scale(sub(a, b, tape), 0.7, tape), tape);
        Tensor rows = add_bias_rows(e, bias, tape);
        Tensor flat = reshape(rows, {12}, tape);
        return add(mean_all(flat, tape), scale(sum_all(rows, tape), 0.25, tape),
                   tape);
      };
      Tape tape;
      tape.backward(net(&tape));
      auto f = [&]() { return net(nullptr).item(); };
      Tensor params[] = {a, b, bias};
      errs["elementwise"].fold(finite_diff_check(params, f, 1e-3, 64, inst));
    }

    // matmul
    {
      Rng rng = keyed_rng(902, "matmul", inst);
      Tensor a = random_tensor(rng, {3, 4}, -1.0, 1.0).set_tracked();
      Tensor b = random_tensor(rng, {4, 5}, -1.0, 1.0).set_tracked();
      Tensor coeff = random_tensor(rng, {3, 5}, -1.0, 1.0);
      auto net = [&](Tape* tape) {
        return weighted_sum(matmul(a, b, tape), coeff, tape);
      };
      Tape tape;
      tape.backward(net(&tape));
      auto f = [&]() { return net(nullptr).item(); };
      Tensor params[] = {a, b};
      errs["matmul"].fold(finite_diff_check(params, f, 1e-3, 64, inst));
    }

    // conv2d, with bias, varying stride and padding
    {
      Rng rng = keyed_rng(903, "conv", inst);
      const std::size_t stride = 1 + inst % 2;
      const std::size_t padding = inst % 3 == 0 ? 0 : 1;
      Tensor x = random_tensor(rng, {2, 3, 6, 6}, -1.0, 1.0).set_tracked();
      Tensor w = random_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5).set_tracked();
      Tensor bias = random_tensor(rng, {4}, -0.3, 0.3).set_tracked();
      const std::size_t side = (6 + 2 * padding - 3) / stride + 1;
      Tensor coeff = random_tensor(rng, {2, 4, side, side}, -1.0, 1.0);
      auto net = [&](Tape* tape) {
        return weighted_sum(conv2d(x, w, bias, stride, padding, tape), coeff,
                            tape);
      };
      Tape tape;
      tape.backward(net(&tape));
      auto f = [&]() { return net(nullptr).item(); };
      Tensor params[] = {x, w, bias};
      errs["conv2d"].fold(finite_diff_check(params, f, 1e-3, 40, inst));
    }

    // pool2d: max on a gapped lattice, avg and global-avg on plain noise
    {
      Rng rng = keyed_rng(904, "pool", inst);
      Tensor xm = lattice_tensor(rng, {1, 2, 6, 6}, 0.05).set_tracked();
      Tensor cm = random_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
      auto net_max = [&](Tape* tape) {
        return weighted_sum(pool2d(PoolKind::Max, xm, 2, 2, tape), cm, tape);
      };
      Tape tape_max;
      tape_max.backward(net_max(&tape_max));
      auto fm = [&]() { return net_max(nullptr).item(); };
      Tensor pm[] = {xm};
      errs["pool2d"].fold(finite_diff_check(pm, fm, 1e-3, 64, inst));

      Tensor xa = random_tensor(rng, {2, 2, 4, 4}, -1.0, 1.0).set_tracked();
      Tensor ca = random_tensor(rng, {2, 2, 2, 2}, -1.0, 1.0);
      Tensor cg = random_tensor(rng, {2, 2, 1, 1}, -1.0, 1.0);
      auto net_avg = [&](Tape* tape) {
        Tensor avg =
            weighted_sum(pool2d(PoolKind::Avg, xa, 2, 2, tape), ca, tape);
        Tensor glob = weighted_sum(pool2d(PoolKind::GlobalAvg, xa, 0, 0, tape),
                                   cg, tape);
        return add(avg, glob, tape);
      };
      Tape tape_avg;
      tape_avg.backward(net_avg(&tape_avg));
      auto fa = [&]() { return net_avg(nullptr).item(); };
      Tensor pa[] = {xa};
      errs["pool2d"].fold(finite_diff_check(pa, fa, 1e-3, 64, inst));
    }

    // batchnorm2d, train phase (batch statistics backward)
    {
      Rng rng = keyed_rng(905, "bn", inst);
      Tensor x = random_tensor(rng, {3, 2, 4, 4}, -1.0, 1.0).set_tracked();
      Tensor gamma = random_tensor(rng, {2}, 0.5, 1.5).set_tracked();
      Tensor beta = random_tensor(rng, {2}, -0.5, 0.5).set_tracked();
      Tensor coeff = random_tensor(rng, {3, 2, 4, 4}, -1.0, 1.0);
      auto net = [&](Tape* tape) {
        Tensor rm = Tensor::zeros({2});
        Tensor rv = Tensor::full({2}, 1.0);
        return weighted_sum(
            batchnorm2d(x, gamma, beta, rm, rv, Phase::Train, 1e-5, 0.1, tape),
            coeff, tape);
      };
      Tape tape;
      tape.backward(net(&tape));
      auto f = [&]() { return net(nullptr).item(); };
      Tensor params[] = {x, gamma, beta};
      errs["batchnorm2d"].fold(finite_diff_check(params, f, 1e-3, 48, inst));
    }

    // softmax cross-entropy
    {
      Rng rng = keyed_rng(906, "ce", inst);
      Tensor logits = random_tensor(rng, {5, 7}, -2.0, 2.0).set_tracked();
      std::vector<std::int64_t> labels(5);
      for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(7));
      auto net = [&](Tape* tape) {
        return softmax_cross_entropy(logits, labels, tape);
      };
      Tape tape;
      tape.backward(net(&tape));
      auto f = [&]() { return net(nullptr).item(); };
      Tensor params[] = {logits};
      errs["softmax_cross_entropy"].fold(
          finite_diff_check(params, f, 1e-3, 64, inst));
    }

    // attribute term, alternating reduction
    {
      Rng rng = keyed_rng(907, "attr", inst);
      Tensor feats = random_tensor(rng, {6, 4}, -1.0, 1.0).set_tracked();
      AttributeCenterBank bank({0, 1, 2}, 4, 0.5);
      for (std::int64_t id : bank.ids()) {
        std::vector<double> c(4);
        for (auto& v : c) v = rng.uniform(-1.0, 1.0);
        bank.restore(id, std::move(c), 1);
      }
      std::vector<std::int64_t> attrs(6);
      for (auto& a : attrs) a = static_cast<std::int64_t>(rng.below(3));
      const AttrReduction red =
          inst % 2 == 0 ? AttrReduction::Mean : AttrReduction::Sum;
      auto net = [&](Tape* tape) {
        return attribute_term(feats, attrs, bank, red, tape);
      };
      Tape tape;
      tape.backward(net(&tape));
      auto f = [&]() { return net(nullptr).item(); };
      Tensor params[] = {feats};
      errs["attribute_term"].fold(finite_diff_check(params, f, 1e-3, 64, inst));
    }
  }

  // full-model composite: conv stages + (eval-phase) batchnorm + pooling +
  // head, cross-entropy plus the attribute term. The batch-statistics
  // normalization backward is covered by the dedicated check above; running
  // the stack on the running buffers keeps finite-difference truncation,
  // which compounds along deep batch-coupled graphs, below the 1e-4 bound so
  // the probe measures backward defects rather than probe error.
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    ModelConfig mc;
    mc.input_resolution = 8;
    mc.channels = {4, 6};
    mc.blocks_per_stage = {1, 1};
    mc.feature_dim = 5;
    mc.num_classes = 3;
    mc.use_residual = inst % 2 == 0;
    mc.use_batchnorm = inst % 3 != 0;
    ParameterSet ps = build_model(mc, 7600 + inst);
    for (auto& e : ps.entries()) {
      const auto ends_with = [&](const char* suffix) {
        const std::string s(suffix);
        return e.name.size() >= s.size() &&
               e.name.compare(e.name.size() - s.size(), s.size(), s) == 0;
      };
      // keep every pre-activation away from relu kinks
      if (mc.use_batchnorm) {
        if (ends_with(".gamma"))
          for (auto& v : e.tensor.values()) v *= 0.2;
        if (ends_with(".beta"))
          for (auto& v : e.tensor.values()) v += 0.85;
      } else {
        if (ends_with(".weight"))
          for (auto& v : e.tensor.values()) v *= 0.12;
        if (ends_with(".bias"))
          for (auto& v : e.tensor.values()) v += 0.7;
      }
    }
    Rng rng = keyed_rng(908, "composite", inst);
    Tensor batch = random_tensor(rng, {2, 3, 8, 8}, -1.0, 1.0);
    std::vector<std::int64_t> labels{static_cast<std::int64_t>(inst % 3),
                                     static_cast<std::int64_t>((inst + 1) % 3)};
    std::vector<std::int64_t> attrs{0, 1};
    AttributeCenterBank bank({0, 1}, mc.feature_dim, 0.5);
    for (std::int64_t id : bank.ids()) {
      std::vector<double> c(mc.feature_dim);
      for (auto& v : c) v = rng.uniform(-0.5, 0.5);
      bank.restore(id, std::move(c), 1);
    }

    auto net = [&](Tape* tape) {
      ModelOutput out = forward(ps, mc, batch, Phase::Eval, tape);
      Tensor ce = softmax_cross_entropy(out.logits, labels, tape);
      Tensor at =
          attribute_term(out.features, attrs, bank, AttrReduction::Mean, tape);
      return combined_loss(ce, at, 0.01, tape).total;
    };
    Tape tape;
    tape.backward(net(&tape));
    auto f = [&]() { return net(nullptr).item(); };
    std::vector<Tensor> trainables;
    for (auto& e : ps.entries())
      if (e.trainable) trainables.push_back(e.tensor);
    errs["composite"].fold(finite_diff_check(trainables, f, 1e-3, 6, inst));
  }

  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  for (const auto& [name, e] : errs) {
    h.detail(name + ": max rel err " + fmt_sci(e.max_rel));
    worst = std::max(worst, e.max_rel);
  }
  const bool pass = worst < 1e-4 && elapsed < 120.0;
  h.verdict(1, "gradient oracles", pass,
            "max rel err " + fmt_sci(worst) + ", " + fmt(elapsed, 1) + "s");
  return pass;
}

// ---------------------------------------------------------------------------
// 2. lambda = 0 matches disabled attribute machinery bit for bit

bool check_2_lambda_zero(Harness& h) {
  const auto t0 = Clock::now();
  Loader loader(load_manifest(h.ensure_small_data()),
                load_norm_stats(norm_stats_path(h.ensure_small_data())));
  TrainConfig cfg = small_config();
  cfg.lambda = 0.0;
  cfg.attr_enabled = true;
  const TrainResult zero = train_model(cfg, loader);
  cfg.lambda = 0.01;
  cfg.attr_enabled = false;
  const TrainResult off = train_model(cfg, loader);

  bool identical = zero.state.history.size() == off.state.history.size();
  for (std::size_t i = 0; identical && i < zero.state.history.size(); ++i) {
    const EpochStats& a = zero.state.history[i];
    const EpochStats& b = off.state.history[i];
    identical = a.total == b.total && a.ce == b.ce && a.attr == b.attr &&
                a.val_top1 == b.val_top1;
  }
  const double elapsed = seconds_since(t0);
  const bool pass =
      identical && zero.state.history.size() == 5 && elapsed < 120.0;
  h.verdict(2, "lambda=0 equals disabled machinery", pass,
            std::string(identical ? "5-epoch loss sequences bit-identical"
                                  : "sequences differ") +
                ", " + fmt(elapsed, 1) + "s");
  return pass;
}

// ---------------------------------------------------------------------------
// 3. center recompute against a brute-force oracle; EMA hand value

bool check_3_centers(Harness& h) {
  Rng rng = keyed_rng(930, "centers");
  const std::size_t n = 50, d = 8;
  Tensor feats = random_tensor(rng, {n, d}, -2.0, 2.0);
  std::vector<std::int64_t> attrs(n);
  for (auto& a : attrs) a = static_cast<std::int64_t>(rng.below(3));

  AttributeCenterBank bank({0, 1, 2}, d, 0.5);
  CenterAccumulator acc(d);
  // feed in uneven batches, like an epoch would
  for (std::size_t start = 0; start < n; start += 7) {
    const std::size_t len = std::min<std::size_t>(7, n - start);
    Tensor part = Tensor::zeros({len, d});
    std::copy_n(feats.values().begin() + start * d, len * d,
                part.values().begin());
    acc.add(part, std::span<const std::int64_t>(attrs).subspan(start, len));
  }
  acc.finalize(bank);

  // independent oracle: plain per-group mean in sample order
  double worst = 0.0;
  for (std::int64_t id = 0; id < 3; ++id) {
    std::vector<double> mean(d, 0.0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (attrs[i] != id) continue;
      ++hits;
      for (std::size_t j = 0; j < d; ++j) mean[j] += feats.values()[i * d + j];
    }
    for (auto& v : mean) v /= static_cast<double>(hits);
    const std::vector<double>& got = bank.center(id);
    for (std::size_t j = 0; j < d; ++j)
      worst = std::max(worst, std::fabs(got[j] - mean[j]));
    if (bank.count(id) != hits) worst = 1.0;
  }
  const bool recompute_ok = worst <= 1e-12;
  h.detail("recompute vs group-mean oracle: max abs diff " + fmt_sci(worst));

  // hand-checked EMA step: r=[0,0], features {[2,0],[0,2]}, alpha=0.5
  AttributeCenterBank ema({0}, 2, 0.5);
  ema.restore(0, {0.0, 0.0}, 0);
  Tensor batch = Tensor::from({2, 2}, {2.0, 0.0, 0.0, 2.0});
  std::vector<std::int64_t> both{0, 0};
  update_centers_ema(ema, batch, both);
  const std::vector<double>& r = ema.center(0);
  const bool ema_ok = r[0] == 1.0 / 3.0 && r[1] == 1.0 / 3.0;
  h.detail("EMA hand value: got [" + fmt(r[0], 17) + ", " + fmt(r[1], 17) +
           "], want [1/3, 1/3] exactly " + (ema_ok ? "(exact)" : "(MISMATCH)"));

  const bool pass = recompute_ok && ema_ok;
  h.verdict(3, "attribute centers", pass,
            "oracle diff " + fmt_sci(worst) +
                (ema_ok ? ", EMA exact" : ", EMA mismatch"));
  return pass;
}

// ---------------------------------------------------------------------------
// 4. bicubic resampler against direct evaluation

// Direct (non-separable) evaluation with clamped source coordinates.
Image naive_bicubic(const Image& img, std::size_t out_h, std::size_t out_w) {
  Image out(out_h, out_w, img.channels);
  const double sy =
      static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double src_y = (static_cast<double>(oy) + 0.5) * sy - 0.5;
      const double src_x = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      const long by = static_cast<long>(std::floor(src_y));
      const long bx = static_cast<long>(std::floor(src_x));
      for (std::size_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (long ky = -1; ky <= 2; ++ky)
          for (long kx = -1; kx <= 2; ++kx) {
            const double w =
                bicubic_weight(src_y - static_cast<double>(by + ky)) *
                bicubic_weight(src_x - static_cast<double>(bx + kx));
            const std::size_t yy = static_cast<std::size_t>(std::clamp(
                by + ky, 0L, static_cast<long>(img.height) - 1));
            const std::size_t xx = static_cast<std::size_t>(std::clamp(
                bx + kx, 0L, static_cast<long>(img.width) - 1));
            acc += w * img.at(yy, xx, c);
          }
        out.at(oy, ox, c) = std::clamp(acc, 0.0, 1.0);
      }
    }
  return out;
}

bool check_4_resampler(Harness& h) {
  Rng rng = keyed_rng(940, "resample");
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t ih = 4 + rng.below(21), iw = 4 + rng.below(21);
    const std::size_t oh = 4 + rng.below(21), ow = 4 + rng.below(21);
    Image img(ih, iw, 3);
    for (auto& v : img.data) v = rng.uniform();
    const Image fast = bicubic_resize(img, oh, ow);
    const Image slow = naive_bicubic(img, oh, ow);
    for (std::size_t i = 0; i < fast.data.size(); ++i)
      worst = std::max(worst, std::fabs(fast.data[i] - slow.data[i]));
  }
  const bool oracle_ok = worst <= 1e-10;
  h.detail("separable vs direct: max abs diff " + fmt_sci(worst) +
           " over 100 images");

  Image flat(17, 13, 3);
  for (auto& v : flat.data) v = 0.37;
  const Image flat_small = bicubic_resize(flat, 7, 9);
  bool const_ok = true;
  for (double v : flat_small.data) const_ok = const_ok && v == 0.37;

  Image any(9, 11, 3);
  for (auto& v : any.data) v = rng.uniform();
  const Image same = bicubic_resize(any, 9, 11);
  const bool identity_ok = same.data == any.data;

  const bool pass = oracle_ok && const_ok && identity_ok;
  h.verdict(4, "bicubic resampler", pass,
            "max diff " + fmt_sci(worst) + ", constant " +
                (const_ok ? "exact" : "DRIFTS") + ", identity " +
                (identity_ok ? "exact" : "DRIFTS"));
  return pass;
}

// ---------------------------------------------------------------------------
// 5-7. shared training runs over (resolution, lambda, seed)

struct Cell {
  double top1 = 0.0;
  double cohesion = 0.0;
};

struct RunPool {
  Harness* h = nullptr;
  Loader* loader = nullptr;
  std::map<std::tuple<std::size_t, double, std::uint64_t>, Cell> cells;

  Cell& cell(std::size_t resolution, double lambda, std::uint64_t seed) {
    const auto key = std::make_tuple(resolution, lambda, seed);
    auto it = cells.find(key);
    if (it != cells.end()) return it->second;
    const auto t0 = Clock::now();
    TrainConfig cfg = trend_config();
    cfg.resolution = resolution;
    cfg.model.input_resolution = resolution;
    cfg.lambda = lambda;
    cfg.seed = seed;
    TrainResult r = train_model(cfg, *loader);
    const EvalReport rep = evaluate(r.params, r.model, *loader, Split::Test,
                                    EvalMode::TrainedHead);
    Cell c{rep.top_k.at(1), rep.cohesion_ratio};
    h->detail("run res=" + std::to_string(resolution) +
              " lambda=" + fmt(lambda, 3) + " seed=" + std::to_string(seed) +
              ": top1 " + fmt(c.top1) + "%, cohesion " + fmt(c.cohesion, 4) +
              " (" + fmt(seconds_since(t0), 1) + "s)");
    return cells.emplace(key, c).first->second;
  }
};

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

bool check_5_low_res_trend(Harness& h, RunPool& pool) {
  const auto t0 = Clock::now();
  std::vector<double> d32, d64;
  for (std::uint64_t seed : kSeeds) {
    d32.push_back(pool.cell(32, 0.01, seed).top1 -
                  pool.cell(32, 0.0, seed).top1);
    d64.push_back(pool.cell(64, 0.01, seed).top1 -
                  pool.cell(64, 0.0, seed).top1);
  }
  double mean32 = 0.0;
  for (double v : d32) mean32 += v;
  mean32 /= static_cast<double>(d32.size());
  std::size_t ordered = 0;
  for (std::size_t s = 0; s < kSeeds.size(); ++s)
    if (d32[s] >= d64[s]) ++ordered;

  for (std::size_t s = 0; s < kSeeds.size(); ++s)
    h.detail("seed " + std::to_string(kSeeds[s]) + ": delta32 " +
             fmt(d32[s]) + ", delta64 " + fmt(d64[s]));
  const double elapsed = seconds_since(t0);
  const bool pass = mean32 >= 3.0 && ordered >= 2 && elapsed <= 2700.0;
  h.verdict(5, "low-resolution improvement trend", pass,
            "mean delta at 32px " + fmt(mean32) + " (need >= 3.0), " +
                std::to_string(ordered) +
                "/3 seeds with delta32 >= delta64, " + fmt(elapsed, 1) + "s");
  return pass;
}

bool check_6_lambda_sweep(Harness& h, RunPool& pool) {
  const auto t0 = Clock::now();
  const std::vector<double> lambdas{0.0, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> means;
  for (double lam : lambdas) {
    double m = 0.0;
    for (std::uint64_t seed : kSeeds) m += pool.cell(32, lam, seed).top1;
    means.push_back(m / static_cast<double>(kSeeds.size()));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < means.size(); ++i)
    if (means[i] > means[best]) best = i;

  for (std::size_t i = 0; i < lambdas.size(); ++i)
    h.detail("lambda " + fmt(lambdas[i], 3) + ": mean top1 " + fmt(means[i]) +
             "%");
  const bool interior = best != 0 && best + 1 != lambdas.size();
  const bool edge_below = means.back() < means[best];
  const double elapsed = seconds_since(t0);
  const bool pass = interior && edge_below && elapsed <= 5400.0;
  h.verdict(6, "lambda sweep peaks in the interior", pass,
            "peak at lambda=" + fmt(lambdas[best], 3) + " (" +
                fmt(means[best]) + "%), lambda=1 at " + fmt(means.back()) +
                "%, " + fmt(elapsed, 1) + "s");
  return pass;
}

bool check_7_cohesion(Harness& h, RunPool& pool) {
  std::size_t lower = 0;
  for (std::uint64_t seed : kSeeds) {
    const double with = pool.cell(32, 0.01, seed).cohesion;
    const double without = pool.cell(32, 0.0, seed).cohesion;
    h.detail("seed " + std::to_string(seed) + ": cohesion " + fmt(with, 4) +
             " (proposed) vs " + fmt(without, 4) + " (ce-only)");
    if (with < without) ++lower;
  }
  const bool pass = lower >= 2;
  h.verdict(7, "attribute cohesion improves", pass,
            std::to_string(lower) + "/3 seeds with lower cohesion ratio");
  return pass;
}

// ---------------------------------------------------------------------------
// 8. determinism through the command line tool

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool check_8_determinism(Harness& h) {
  if (h.cli.empty()) {
    h.verdict(8, "train determinism", false,
              "no --cli path given, cannot invoke the tool");
    return false;
  }
  const std::string manifest = h.ensure_small_data();
  const std::filesystem::path dir = h.work / "determinism";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  TrainConfig cfg = small_config();
  cfg.epochs = 4;
  std::ofstream(dir / "e4.cfg") << cfg.to_config_text();
  cfg.epochs = 2;
  std::ofstream(dir / "e2.cfg") << cfg.to_config_text();

  const auto train = [&](const std::string& config, const std::string& out,
                         bool resume) {
    std::string cmd = "\"" + h.cli + "\" train --config \"" +
                      (dir / config).string() + "\" --data \"" + manifest +
                      "\" --out \"" + (dir / out).string() + "\"";
    if (resume) cmd += " --resume";
    cmd += " >> \"" + (dir / "cli.log").string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc == 0;
  };

  bool ran = train("e4.cfg", "a", false) && train("e4.cfg", "b", false);
  const std::string ma = slurp(dir / "a" / kMetricsFile);
  const bool repeat_ok =
      ran && !ma.empty() && ma == slurp(dir / "b" / kMetricsFile);
  h.detail(std::string("repeat run: metrics.jsonl ") +
           (repeat_ok ? "byte-identical" : "DIFFERS"));

  ran = ran && train("e2.cfg", "c", false) && train("e4.cfg", "c", true);
  const bool resume_ok = ran && ma == slurp(dir / "c" / kMetricsFile);
  h.detail(std::string("save then resume: metrics.jsonl ") +
           (resume_ok ? "matches the uninterrupted run" : "DIFFERS"));

  const bool pass = repeat_ok && resume_ok;
  h.verdict(8, "train determinism", pass,
            pass ? "repeat and resume both byte-identical"
                 : "see lines above; tool log in determinism/cli.log");
  return pass;
}

// ---------------------------------------------------------------------------
// 9. evaluation contracts

bool check_9_contracts(Harness& h) {
  // top-k accuracy never decreases in k
  Rng rng = keyed_rng(990, "topk");
  bool monotone = true;
  for (int set = 0; set < 1000 && monotone; ++set) {
    const std::size_t n = 1 + rng.below(6);
    const std::size_t classes = 2 + rng.below(9);
    Tensor scores = Tensor::zeros({n, classes});
    for (auto& v : scores.values())
      v = rng.below(4) == 0 ? 0.5 : rng.uniform(-1.0, 1.0);  // induce ties
    std::vector<std::int64_t> labels(n);
    for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(classes));
    double prev = -1.0;
    for (std::size_t k = 1; k <= classes; ++k) {
      const double acc = top_k_accuracy(scores, labels, k);
      monotone = monotone && acc >= prev;
      prev = acc;
    }
    monotone = monotone && prev == 100.0;
  }
  h.detail(std::string("top-k monotone on 1000 random logit sets: ") +
           (monotone ? "yes" : "NO"));

  // evaluate must not read test attribute labels: stripping them from every
  // non-train record changes nothing
  DatasetManifest full = load_manifest(h.ensure_small_data());
  std::vector<SampleRecord> stripped = full.records;
  for (auto& r : stripped)
    if (r.split != Split::Train) r.attribute_id = -1;
  NormStats stats = load_norm_stats(norm_stats_path(h.ensure_small_data()));
  Loader with(full, stats);
  Loader without(make_manifest(full.directory, std::move(stripped)), stats);

  TrainConfig cfg = small_config();
  const TrainResult run = train_model(cfg, with);
  bool same = true;
  for (EvalMode mode : {EvalMode::TrainedHead, EvalMode::EuclideanCentroid}) {
    ParameterSet params = run.params.clone();
    const std::string a =
        evaluate(params, run.model, with, Split::Test, mode).to_json().dump();
    const std::string b = evaluate(params, run.model, without, Split::Test,
                                   mode).to_json().dump();
    same = same && a == b;
  }
  h.detail(std::string("attribute-free test records: reports ") +
           (same ? "identical" : "DIFFER"));

  const bool pass = monotone && same;
  h.verdict(9, "evaluation contracts", pass,
            std::string(monotone ? "monotone" : "NOT monotone") +
                ", attribute-free records " + (same ? "identical" : "differ"));
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  Harness h;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    const auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::cerr << "error: " << arg << " needs a value\n";
        std::exit(2);
      }
      return argv[++i];
    };
    if (arg == "--cli") {
      h.cli = next();
    } else if (arg == "--work") {
      h.work = next();
    } else if (arg == "--only") {
      std::stringstream ss(next());
      std::string item;
      while (std::getline(ss, item, ',')) h.only.insert(std::stoi(item));
    } else {
      std::cerr << "error: unknown argument " << arg << "\n";
      return 2;
    }
  }
  std::filesystem::create_directories(h.work);

  try {
    if (h.wants(1)) check_1_gradients(h);
    if (h.wants(2)) check_2_lambda_zero(h);
    if (h.wants(3)) check_3_centers(h);
    if (h.wants(4)) check_4_resampler(h);
    if (h.wants(5) || h.wants(6) || h.wants(7)) {
      Loader loader(load_manifest(h.ensure_trend_data()),
                    load_norm_stats(norm_stats_path(h.ensure_trend_data())));
      RunPool pool;
      pool.h = &h;
      pool.loader = &loader;
      if (h.wants(5)) check_5_low_res_trend(h, pool);
      if (h.wants(6)) check_6_lambda_sweep(h, pool);
      if (h.wants(7)) check_7_cohesion(h, pool);
    }
    if (h.wants(8)) check_8_determinism(h);
    if (h.wants(9)) check_9_contracts(h);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 70;
  }

  std::cout << (h.failures == 0 ? "all checks passed"
                                : std::to_string(h.failures) + " check(s) failed")
            << "\n";
  return h.failures;
}
