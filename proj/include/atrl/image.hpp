#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include <atrl/tensor.hpp>

namespace atrl {

// Row-major H×W×C with values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), data(h * w * c, 0.0) {}

  bool empty() const { return height == 0 || width == 0 || channels == 0; }

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
};

// Keys cubic convolution kernel with a = −0.5. Interpolating: w(0)=1,
// w(±1)=w(±2)=0, and the four taps covering any position sum to 1.
inline double bicubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((((t - 5.0) * t) + 8.0) * t - 4.0) * a;
  return 0.0;
}

namespace detail {

// Per-axis resampling plan: four clamped source taps and their weights for
// each output coordinate, under half-pixel-centered mapping.
struct ResampleAxis {
  std::vector<std::array<std::size_t, 4>> idx;
  std::vector<std::array<double, 4>> w;
};

inline ResampleAxis plan_axis(std::size_t in, std::size_t out) {
  ResampleAxis ax;
  ax.idx.resize(out);
  ax.w.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const long last = static_cast<long>(in) - 1;
  for (std::size_t i = 0; i < out; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int k = 0; k < 4; ++k) {
      const long tap = static_cast<long>(base) - 1 + k;
      ax.idx[i][k] = static_cast<std::size_t>(std::clamp(tap, 0L, last));
    }
    ax.w[i] = {bicubic_weight(t + 1.0), bicubic_weight(t),
               bicubic_weight(1.0 - t), bicubic_weight(2.0 - t)};
  }
  return ax;
}

}  // namespace detail

// Separable bicubic resampling with clamp-to-edge borders. Intermediate
// values may ring outside [0, 1]; only the final output is clamped. Each
// tap row is accumulated relative to its center tap — the weights sum to 1,
// so the formulations agree, but taken this way a constant input reproduces
// the constant bit for bit instead of picking up the rounding of the weight
// sum.
inline Image bicubic_resize(const Image& img, std::size_t out_h,
                            std::size_t out_w) {
  if (img.empty()) throw Error("bicubic_resize: empty image");
  if (out_h == 0 || out_w == 0)
    throw Error("bicubic_resize: target must be at least 1x1");
  const std::size_t c = img.channels;
  const detail::ResampleAxis xs = detail::plan_axis(img.width, out_w);
  const detail::ResampleAxis ys = detail::plan_axis(img.height, out_h);

  Image mid(img.height, out_w, c);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double center = img.at(y, xs.idx[x][1], ch);
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          acc += xs.w[x][k] * (img.at(y, xs.idx[x][k], ch) - center);
        mid.at(y, x, ch) = center + acc;
      }

  Image out(out_h, out_w, c);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double center = mid.at(ys.idx[y][1], x, ch);
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          acc += ys.w[y][k] * (mid.at(ys.idx[y][k], x, ch) - center);
        out.at(y, x, ch) = std::clamp(center + acc, 0.0, 1.0);
      }
  return out;
}

inline Image hflip(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

}  // namespace atrl
