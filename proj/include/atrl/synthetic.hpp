#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <atrl/config.hpp>
#include <atrl/dataset.hpp>
#include <atrl/image.hpp>
#include <atrl/image_io.hpp>
#include <atrl/rng.hpp>

namespace atrl {

// Procedural fine-grained dataset. Classes inside an attribute group share
// one base glyph and differ only by a small cue of fine_scale pixels whose
// shape and vertical position code the class; groups differ by a background
// stripe texture scaled by `strength`. The texture has two parts: a strong
// pitch-4 sine that the 4-tap half-pixel bicubic keeps at 88% amplitude
// under a 2x reduction and cancels exactly under 4x, and a weak pitch-8
// sine with a random per-sample phase whose amplitude sits below the pixel
// noise. Group identity is therefore trivial at 64px while at 32px only
// marginal per-sample evidence remains: the random phase blocks coherent
// pooling across samples, exactly the regime where attribute structure has
// something real to add. Geometry and noise are keyed by (seed, split,
// index) alone, so same-index renders of two classes differ exactly where
// their cues differ.
struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t classes_per_group = 4;
  std::size_t canvas = 128;
  std::size_t fine_scale = 6;
  double strength = 0.6;
  double noise_sigma = 0.02;
  std::size_t train_per_class = 200;
  std::size_t val_per_class = 25;
  std::size_t test_per_class = 50;
  std::uint64_t seed = 1;

  std::size_t groups() const { return num_classes / classes_per_group; }

  void validate() const {
    if (num_classes == 0) throw Error("synthetic: num_classes must be positive");
    if (classes_per_group == 0 || num_classes % classes_per_group != 0)
      throw Error("synthetic: num_classes (" + std::to_string(num_classes) +
                  ") must be divisible by classes_per_attribute_group (" +
                  std::to_string(classes_per_group) + ")");
    if (canvas < 32) throw Error("synthetic: canvas must be at least 32");
    if (fine_scale == 0 || fine_scale >= canvas / 8)
      throw Error("synthetic: fine_scale must lie in [1, canvas/8)");
    if (!(strength >= 0.0 && strength <= 1.0))
      throw Error("synthetic: strength must lie in [0, 1]");
    if (!(noise_sigma >= 0.0))
      throw Error("synthetic: noise_sigma must be nonnegative");
    if (train_per_class == 0)
      throw Error("synthetic: train_per_class must be positive");
    if (classes_per_group > 40)
      throw Error("synthetic: at most 40 classes per group");
  }

  static SyntheticSpec from_config(const KVConfig& cfg) {
    SyntheticSpec s;
    s.num_classes = cfg.get_size("num_classes", s.num_classes);
    s.classes_per_group =
        cfg.get_size("classes_per_attribute_group", s.classes_per_group);
    s.canvas = cfg.get_size("canvas", s.canvas);
    s.fine_scale = cfg.get_size("fine_scale", s.fine_scale);
    s.strength = cfg.get_double("strength", s.strength);
    s.noise_sigma = cfg.get_double("noise_sigma", s.noise_sigma);
    s.train_per_class = cfg.get_size("train_per_class", s.train_per_class);
    s.val_per_class = cfg.get_size("val_per_class", s.val_per_class);
    s.test_per_class = cfg.get_size("test_per_class", s.test_per_class);
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed",
                                                    static_cast<std::int64_t>(s.seed)));
    s.validate();
    return s;
  }
};

namespace detail {

// Cubic smoothstep over a signed distance (px, positive inside): exactly 0
// beyond `soft` outside, exactly 1 beyond `soft` inside. Finite support
// keeps class-dependent pixels confined to the cue's neighborhood.
inline double coverage(double d, double soft) {
  double u = (d / soft + 1.0) * 0.5;
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// Signed distance (px) to the class cue. Every shape is mirror-symmetric
// about its vertical axis so horizontal flips stay label-preserving. The
// first four differ along coarse axes (isotropy, orientation, spread) that
// survive heavy downsampling in degraded form, so small groups stay
// gradually learnable at low resolution; the last four differ by topology
// and inner structure, which only resolve at finer scales.
inline double cue_distance(std::size_t shape, double s, double dx, double dy) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case 0:  // disk
      return s / 2.0 - std::hypot(dx, dy);
    case 1:  // horizontal bar
      return std::min(s / 2.0 - ax, s / 6.0 - ay);
    case 2:  // vertical bar
      return std::min(s / 6.0 - ax, s / 2.0 - ay);
    case 3: {  // dot pair
      const double r = s / 5.0;
      return std::max(r - std::hypot(dx - s / 3.0, dy),
                      r - std::hypot(dx + s / 3.0, dy));
    }
    case 4: {  // ring
      const double rho = std::hypot(dx, dy);
      return std::min(s / 2.0 - rho, rho - s / 4.0);
    }
    case 5:  // plus
      return std::max(std::min(s / 6.0 - ax, s / 2.0 - ay),
                      std::min(s / 2.0 - ax, s / 6.0 - ay));
    case 6:  // diamond
      return (s / 2.0 - (ax + ay)) / std::numbers::sqrt2;
    case 7: {  // square outline
      const double m = std::max(ax, ay);
      return std::min(s / 2.0 - m, m - s / 4.0);
    }
  }
  throw Error("cue_distance: bad shape index");
}

struct Geometry {
  double bg, glyph_gray, cx, cy, radius, aspect, rot, phase;
};

inline Geometry sample_geometry(const SyntheticSpec& spec, Split split,
                                std::size_t index) {
  Rng rng = keyed_rng(spec.seed, "geom", split_index(split), index);
  const double canvas = static_cast<double>(spec.canvas);
  Geometry g;
  g.bg = rng.uniform(0.35, 0.65);
  g.glyph_gray = rng.uniform(0.18, 0.30);
  const double jitter = 0.047 * canvas;
  g.cx = canvas / 2.0 + rng.uniform(-jitter, jitter);
  g.cy = canvas / 2.0 + rng.uniform(-jitter, jitter);
  g.radius = rng.uniform(0.30, 0.38) * canvas;
  g.aspect = rng.uniform(0.8, 1.25);
  g.rot = rng.uniform(0.0, std::numbers::pi);
  g.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return g;
}

}  // namespace detail

inline Image render_sample(const SyntheticSpec& spec, std::int64_t class_id,
                           Split split, std::size_t index) {
  spec.validate();
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= spec.num_classes)
    throw Error("render_sample: class id " + std::to_string(class_id) +
                " out of range");
  const std::size_t group = static_cast<std::size_t>(class_id) / spec.classes_per_group;
  const std::size_t within = static_cast<std::size_t>(class_id) % spec.classes_per_group;
  const std::size_t shape = within % 8;
  const std::size_t tier = within / 8;
  const double s = static_cast<double>(spec.fine_scale);
  // Each class in a group carries its cue at a distinct vertical offset, so
  // class identity also lives in a coarse position code that degrades
  // gradually under downsampling instead of vanishing with the shape's
  // inner detail. The step is snapped to 4px so offsets stay multiples of
  // the sampling pitch down to a 4x reduction: every class's cue then lands
  // on the same sub-lattice phase and low-resolution renders differ by
  // genuine displacement, not by phase patterns the 4-tap resampler would
  // otherwise fold in. Tiers (blocks of eight) shift further out; the clamp
  // keeps crowded specs inside the glyph body, where extreme tiers stay
  // distinct by shape alone.
  const auto ladder = [](std::size_t k) {
    return static_cast<double>((k + 1) / 2) * (k % 2 == 1 ? -1.0 : 1.0);
  };
  const double step = 4.0 * std::max(1.0, std::round(0.6 * s / 4.0));
  const double tier_off = std::clamp(
      step * (ladder(shape) + ladder(tier)),
      -0.2 * static_cast<double>(spec.canvas), 0.2 * static_cast<double>(spec.canvas));

  const detail::Geometry geo = detail::sample_geometry(spec, split, index);
  double bg_col[3];
  for (int c = 0; c < 3; ++c) bg_col[c] = geo.bg;

  // Group-coded background texture, vertical stripes for odd group bits and
  // horizontal for the second bit. Two sine components: a strong pitch-4
  // part that the 4-tap half-pixel bicubic keeps at 88% amplitude under 2x
  // reduction and cancels exactly under 4x (the taps of every output pixel
  // land symmetric about a node), and a weak pitch-8 part with a random
  // per-sample phase, below the pixel noise, that survives any reduction.
  // Group identity is therefore trivial down to half resolution; at quarter
  // resolution only the weak part remains, and its random phase blocks
  // coherent pooling across samples, so each image carries just marginal
  // group evidence.
  const double strong_amp = 0.14 * spec.strength;
  const double weak_amp = 0.018 * spec.strength;
  const bool stripes_v = (group & 1u) != 0u;
  const bool stripes_h = (group & 2u) != 0u;
  const double half_w = static_cast<double>(spec.canvas) / 2.0;
  Rng tex_rng = keyed_rng(spec.seed, "texphase", detail::split_index(split), index);
  const double weak_phase = tex_rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto texture = [&](double u) {
    return strong_amp * std::sin(std::numbers::pi / 2.0 * u) +
           weak_amp * std::sin(std::numbers::pi / 4.0 * u + weak_phase);
  };

  // Boundary waviness is a shared nuisance: same amplitude and wave count
  // for every group, so it perturbs the glyph outline without carrying any
  // label information.
  const double amp = 2.8 * spec.strength;
  const double waves = 8.0;
  const double cue_col = geo.glyph_gray + 0.42;
  const double soft = 0.75;
  // The cue edge softens with its size so its spectrum stays below the
  // frequencies the 4-tap resampler folds back: a sharp small cue would
  // alias into the low-resolution lattice and survive as scrambled energy,
  // a soft one genuinely fades.
  const double cue_soft = std::max(soft, s / 3.0);
  const double a = geo.radius * std::sqrt(geo.aspect);
  const double b = geo.radius / std::sqrt(geo.aspect);
  const double cr = std::cos(geo.rot), sr = std::sin(geo.rot);

  Image img(spec.canvas, spec.canvas, 3);
  for (std::size_t y = 0; y < spec.canvas; ++y)
    for (std::size_t x = 0; x < spec.canvas; ++x) {
      const double px = static_cast<double>(x) + 0.5 - geo.cx;
      const double py = static_cast<double>(y) + 0.5 - geo.cy;
      const double xr = cr * px + sr * py;
      const double yr = -sr * px + cr * py;
      const double nx = xr / a, ny = yr / b;
      const double rho = std::hypot(nx, ny);
      double bound = 1.0;
      if (amp != 0.0) {
        const double theta = std::atan2(ny, nx);
        bound += (amp / geo.radius) * std::sin(waves * theta + geo.phase);
      }
      const double alpha = detail::coverage((bound - rho) * geo.radius, soft);
      const double beta = detail::coverage(
          detail::cue_distance(shape, s, px, py - tier_off), cue_soft);
      double stripe = 0.0;
      if (stripes_v) stripe += texture(static_cast<double>(x) + 0.5 - half_w);
      if (stripes_h) stripe += texture(static_cast<double>(y) + 0.5 - half_w);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = bg_col[c] + stripe;
        v += (geo.glyph_gray - v) * alpha;
        v += (cue_col - v) * beta;
        img.at(y, x, c) = v;
      }
    }

  if (spec.noise_sigma > 0.0) {
    Rng noise = keyed_rng(spec.seed, "noise", detail::split_index(split), index);
    for (double& v : img.data) v += spec.noise_sigma * noise.normal();
  }
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

// Renders every split to out_dir/images, writes the manifest and the train
// normalization stats beside it, and returns the manifest path.
inline std::string generate_synthetic(const SyntheticSpec& spec,
                                      const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");

  auto pad = [](std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (s.size() < static_cast<std::size_t>(width)) s.insert(s.begin(), '0');
    return s;
  };

  std::vector<SampleRecord> records;
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    std::size_t per = 0;
    switch (split) {
      case Split::Train: per = spec.train_per_class; break;
      case Split::Val: per = spec.val_per_class; break;
      case Split::Test: per = spec.test_per_class; break;
    }
    for (std::size_t cls = 0; cls < spec.num_classes; ++cls)
      for (std::size_t i = 0; i < per; ++i) {
        const Image img =
            render_sample(spec, static_cast<std::int64_t>(cls), split, i);
        const std::string name = std::string("images/") + split_name(split) +
                                 "_c" + pad(cls, 3) + "_" + pad(i, 4) + ".png";
        write_png((fs::path(out_dir) / name).string(), img);
        SampleRecord rec;
        rec.path = name;
        rec.class_id = static_cast<std::int64_t>(cls);
        rec.attribute_id = static_cast<std::int64_t>(cls / spec.classes_per_group);
        rec.split = split;
        records.push_back(std::move(rec));
      }
  }

  DatasetManifest manifest = make_manifest(out_dir, std::move(records));
  const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  save_manifest(manifest_path, manifest);
  save_norm_stats(norm_stats_path(manifest_path), compute_norm_stats(manifest));
  return manifest_path;
}

}  // namespace atrl
