#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "atrl/gemm.hpp"
#include "atrl/ops.hpp"
#include "atrl/tape.hpp"
#include "atrl/tensor.hpp"

namespace atrl {

enum class Phase { Train, Eval };

namespace detail {

// scratch usable as plain memory; one per thread, reused across calls
inline std::vector<double>& scratch(int slot, std::size_t n) {
  thread_local std::vector<double> bufs[6];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b;
}

// padded copy of one [C,H,W] sample -> [C,H+2p,W+2p]
inline void pad_sample(const double* x, std::size_t c, std::size_t h,
                       std::size_t w, std::size_t p, double* out) {
  const std::size_t hp = h + 2 * p, wp = w + 2 * p;
  std::memset(out, 0, c * hp * wp * sizeof(double));
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      std::memcpy(out + (ch * hp + y + p) * wp + p, x + (ch * h + y) * w,
                  w * sizeof(double));
    }
  }
}

// cols[k, ho*wo] from a padded sample, k = c*kh*kw
inline void im2col(const double* pad, std::size_t c, std::size_t hp,
                   std::size_t wp, std::size_t kh, std::size_t kw,
                   std::size_t stride, std::size_t ho, std::size_t wo,
                   double* cols) {
  const std::size_t area = ho * wo;
  std::size_t r = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx, ++r) {
        double* dst = cols + r * area;
        for (std::size_t y = 0; y < ho; ++y) {
          const double* src = pad + (ch * hp + y * stride + ky) * wp + kx;
          if (stride == 1) {
            std::memcpy(dst + y * wo, src, wo * sizeof(double));
          } else {
            for (std::size_t x = 0; x < wo; ++x) dst[y * wo + x] = src[x * stride];
          }
        }
      }
    }
  }
}

}  // namespace detail

namespace detail {

inline Tensor conv2d_core(const Tensor& input, const Tensor& kernels,
                          const Tensor* bias, std::size_t stride,
                          std::size_t padding, Tape* tape) {
  if (input.rank() != 4 || kernels.rank() != 4) {
    throw Error("conv2d wants [n,c,h,w] input and [f,c,kh,kw] kernels, got " +
                shape_str(input.shape()) + " and " +
                shape_str(kernels.shape()));
  }
  if (stride == 0) throw Error("conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t f = kernels.dim(0), kh = kernels.dim(2),
                    kw = kernels.dim(3);
  if (kernels.dim(1) != c) {
    throw Error("conv2d: input has " + std::to_string(c) +
                " channels, kernels expect " + std::to_string(kernels.dim(1)));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != f)) {
    throw Error("conv2d: bias shape " + shape_str(bias->shape()) +
                " does not match " + std::to_string(f) + " filters");
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw Error("conv2d: kernel " + std::to_string(kh) + "x" +
                std::to_string(kw) + " larger than padded input");
  }
  const std::size_t hp = h + 2 * padding, wp = w + 2 * padding;
  const std::size_t ho = (hp - kh) / stride + 1, wo = (wp - kw) / stride + 1;
  const std::size_t k = c * kh * kw, area = ho * wo;

  Tensor out = Tensor::zeros({n, f, ho, wo});
  {
    auto& pad = detail::scratch(0, c * hp * wp);
    auto& cols = detail::scratch(1, k * area);
    for (std::size_t i = 0; i < n; ++i) {
      detail::pad_sample(input.values().data() + i * c * h * w, c, h, w,
                         padding, pad.data());
      detail::im2col(pad.data(), c, hp, wp, kh, kw, stride, ho, wo,
                     cols.data());
      double* oi = out.values().data() + i * f * area;
      gemm_acc(f, k, area, kernels.values().data(), cols.data(), oi);
      if (bias) {
        for (std::size_t ff = 0; ff < f; ++ff) {
          const double b = bias->values()[ff];
          for (std::size_t p = 0; p < area; ++p) oi[ff * area + p] += b;
        }
      }
    }
  }

  if (detail::recording(tape, {input.tracked(), kernels.tracked(),
                               bias && bias->tracked()})) {
    out.set_tracked();
    const bool has_bias = bias != nullptr;
    Tensor xc = input, kc = kernels, oc = out;
    Tensor bc = has_bias ? *bias : Tensor();
    tape->record(out, [xc, kc, bc, oc, has_bias, n, c, h, w, f, kh, kw,
                       stride, padding, hp, wp, ho, wo, k, area]() mutable {
      const auto& g = oc.grad();
      auto& pad = detail::scratch(0, c * hp * wp);
      auto& cols = detail::scratch(1, k * area);
      auto& wt = detail::scratch(2, k * f);
      auto& dcols = detail::scratch(3, k * area);
      auto& dwt = detail::scratch(4, k * f);
      if (xc.tracked()) {
        // W^T once, reused per sample
        for (std::size_t ff = 0; ff < f; ++ff) {
          for (std::size_t r = 0; r < k; ++r) {
            wt[r * f + ff] = kc.values()[ff * k + r];
          }
        }
      }
      if (kc.tracked()) std::fill(dwt.begin(), dwt.begin() + k * f, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double* gi = g.data() + i * f * area;
        if (kc.tracked() || xc.tracked()) {
          detail::pad_sample(xc.values().data() + i * c * h * w, c, h, w,
                             padding, pad.data());
          detail::im2col(pad.data(), c, hp, wp, kh, kw, stride, ho, wo,
                         cols.data());
        }
        if (kc.tracked()) {
          // dW^T[k,f] += cols[k,area] * gi^T
          gemm_acc_nt(k, area, f, cols.data(), gi, dwt.data());
        }
        if (has_bias && bc.tracked()) {
          auto& gb = bc.grad();
          for (std::size_t ff = 0; ff < f; ++ff) {
            double acc = 0.0;
            for (std::size_t p = 0; p < area; ++p) acc += gi[ff * area + p];
            gb[ff] += acc;
          }
        }
        if (xc.tracked()) {
          std::fill(dcols.begin(), dcols.begin() + k * area, 0.0);
          gemm_acc(k, f, area, wt.data(), gi, dcols.data());
          // col2im: scatter into the padded frame, then crop
          std::fill(pad.begin(), pad.begin() + c * hp * wp, 0.0);
          std::size_t r = 0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx, ++r) {
                const double* src = dcols.data() + r * area;
                for (std::size_t y = 0; y < ho; ++y) {
                  double* dst = pad.data() + (ch * hp + y * stride + ky) * wp + kx;
                  for (std::size_t x = 0; x < wo; ++x) {
                    dst[x * stride] += src[y * wo + x];
                  }
                }
              }
            }
          }
          auto& gx = xc.grad();
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < h; ++y) {
              const double* src = pad.data() + (ch * hp + y + padding) * wp + padding;
              double* dst = gx.data() + (i * c + ch) * h * w + y * w;
              for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
            }
          }
        }
      }
      if (kc.tracked()) {
        auto& gk = kc.grad();
        for (std::size_t ff = 0; ff < f; ++ff) {
          for (std::size_t r = 0; r < k; ++r) {
            gk[ff * k + r] += dwt[r * f + ff];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

// input [N,C,H,W], kernels [F,C,kh,kw], bias [F] -> [N,F,H',W'] with
// H' = (H + 2*padding - kh) / stride + 1
inline Tensor conv2d(const Tensor& input, const Tensor& kernels,
                     const Tensor& bias, std::size_t stride,
                     std::size_t padding, Tape* tape = nullptr) {
  return detail::conv2d_core(input, kernels, &bias, stride, padding, tape);
}

// bias-free variant, for convolutions normalization follows anyway
inline Tensor conv2d(const Tensor& input, const Tensor& kernels,
                     std::size_t stride, std::size_t padding,
                     Tape* tape = nullptr) {
  return detail::conv2d_core(input, kernels, nullptr, stride, padding, tape);
}

enum class PoolKind { Max, Avg, GlobalAvg };

// max/avg: window and stride, no padding, H' = (H-window)/stride + 1;
// global-avg ignores window/stride and reduces to [N,C,1,1]. Max ties break
// to the first element in row-major window order.
inline Tensor pool2d(PoolKind kind, const Tensor& input, std::size_t window,
                     std::size_t stride, Tape* tape = nullptr) {
  if (input.rank() != 4) {
    throw Error("pool2d wants [n,c,h,w], got " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  if (kind == PoolKind::GlobalAvg) {
    Tensor out = Tensor::zeros({n, c, 1, 1});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t i = 0; i < n * c; ++i) {
      const double* xi = input.values().data() + i * h * w;
      double acc = 0.0;
      for (std::size_t p = 0; p < h * w; ++p) acc += xi[p];
      out.values()[i] = acc * inv;
    }
    if (detail::recording(tape, {input.tracked()})) {
      out.set_tracked();
      Tensor xc = input, oc = out;
      tape->record(out, [xc, oc, n, c, h, w, inv]() mutable {
        const auto& g = oc.grad();
        auto& gx = xc.grad();
        for (std::size_t i = 0; i < n * c; ++i) {
          const double gi = g[i] * inv;
          for (std::size_t p = 0; p < h * w; ++p) gx[i * h * w + p] += gi;
        }
      });
    }
    return out;
  }

  if (window == 0 || stride == 0) {
    throw Error("pool2d: window and stride must be >= 1");
  }
  if (window > h || window > w) {
    throw Error("pool2d: window " + std::to_string(window) +
                " larger than input " + std::to_string(h) + "x" +
                std::to_string(w));
  }
  const std::size_t ho = (h - window) / stride + 1,
                    wo = (w - window) / stride + 1;
  Tensor out = Tensor::zeros({n, c, ho, wo});

  if (kind == PoolKind::Max) {
    std::vector<std::size_t> argmax(n * c * ho * wo);
    for (std::size_t i = 0; i < n * c; ++i) {
      const double* xi = input.values().data() + i * h * w;
      double* oi = out.values().data() + i * ho * wo;
      std::size_t* ai = argmax.data() + i * ho * wo;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double best = xi[oy * stride * w + ox * stride];
          std::size_t besti = oy * stride * w + ox * stride;
          for (std::size_t ky = 0; ky < window; ++ky) {
            for (std::size_t kx = 0; kx < window; ++kx) {
              const std::size_t idx = (oy * stride + ky) * w + ox * stride + kx;
              if (xi[idx] > best) {
                best = xi[idx];
                besti = idx;
              }
            }
          }
          oi[oy * wo + ox] = best;
          ai[oy * wo + ox] = besti;
        }
      }
    }
    if (detail::recording(tape, {input.tracked()})) {
      out.set_tracked();
      Tensor xc = input, oc = out;
      tape->record(out, [xc, oc, argmax = std::move(argmax), n, c, h, w, ho,
                         wo]() mutable {
        const auto& g = oc.grad();
        auto& gx = xc.grad();
        for (std::size_t i = 0; i < n * c; ++i) {
          for (std::size_t p = 0; p < ho * wo; ++p) {
            gx[i * h * w + argmax[i * ho * wo + p]] += g[i * ho * wo + p];
          }
        }
      });
    }
    return out;
  }

  // average
  const double inv = 1.0 / static_cast<double>(window * window);
  for (std::size_t i = 0; i < n * c; ++i) {
    const double* xi = input.values().data() + i * h * w;
    double* oi = out.values().data() + i * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            acc += xi[(oy * stride + ky) * w + ox * stride + kx];
          }
        }
        oi[oy * wo + ox] = acc * inv;
      }
    }
  }
  if (detail::recording(tape, {input.tracked()})) {
    out.set_tracked();
    Tensor xc = input, oc = out;
    tape->record(out, [xc, oc, n, c, h, w, ho, wo, window, stride,
                       inv]() mutable {
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < n * c; ++i) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double gi = g[(i * ho + oy) * wo + ox] * inv;
            for (std::size_t ky = 0; ky < window; ++ky) {
              for (std::size_t kx = 0; kx < window; ++kx) {
                gx[i * h * w + (oy * stride + ky) * w + ox * stride + kx] += gi;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Per-channel batch normalization over [N,C,H,W]. Train phase normalizes
// with biased batch variance and updates the running buffers in place with
// running = (1-momentum)*running + momentum*batch (variance stored unbiased
// when N*H*W > 1). Eval phase normalizes with the running buffers. The
// running buffers are state, not differentiable parameters.
inline Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                          const Tensor& beta, Tensor& running_mean,
                          Tensor& running_var, Phase phase, double eps,
                          double momentum, Tape* tape = nullptr) {
  if (input.rank() != 4) {
    throw Error("batchnorm2d wants [n,c,h,w], got " +
                shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  auto check1d = [&](const char* what, const Tensor& t) {
    if (t.rank() != 1 || t.dim(0) != c) {
      throw Error(std::string("batchnorm2d: ") + what + " shape " +
                  shape_str(t.shape()) + " does not match " +
                  std::to_string(c) + " channels");
    }
  };
  check1d("gamma", gamma);
  check1d("beta", beta);
  check1d("running_mean", running_mean);
  check1d("running_var", running_var);
  if (eps <= 0.0) throw Error("batchnorm2d: eps must be positive");
  const std::size_t m = n * h * w;
  if (m == 0) throw Error("batchnorm2d on an empty batch");

  Tensor out = Tensor::zeros({n, c, h, w});
  std::vector<double> mean(c), invstd(c);
  const std::size_t plane = h * w;

  if (phase == Phase::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* xi = input.values().data() + (i * c + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += xi[p];
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* xi = input.values().data() + (i * c + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = xi[p] - mu;
          vacc += d * d;
        }
      }
      const double var = vacc / static_cast<double>(m);
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + eps);
      const double var_running =
          m > 1 ? vacc / static_cast<double>(m - 1) : var;
      running_mean.values()[ch] =
          (1.0 - momentum) * running_mean.values()[ch] + momentum * mu;
      running_var.values()[ch] =
          (1.0 - momentum) * running_var.values()[ch] + momentum * var_running;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.values()[ch];
      invstd[ch] = 1.0 / std::sqrt(running_var.values()[ch] + eps);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* xi = input.values().data() + (i * c + ch) * plane;
      double* oi = out.values().data() + (i * c + ch) * plane;
      const double mu = mean[ch], is = invstd[ch];
      const double gm = gamma.values()[ch], bt = beta.values()[ch];
      for (std::size_t p = 0; p < plane; ++p) {
        oi[p] = (xi[p] - mu) * is * gm + bt;
      }
    }
  }

  if (detail::recording(tape, {input.tracked(), gamma.tracked(),
                               beta.tracked()})) {
    out.set_tracked();
    Tensor xc = input, gc = gamma, bc = beta, oc = out;
    const bool train = phase == Phase::Train;
    tape->record(out, [xc, gc, bc, oc, mean = std::move(mean),
                       invstd = std::move(invstd), n, c, plane, m,
                       train]() mutable {
      const auto& g = oc.grad();
      const double invm = 1.0 / static_cast<double>(m);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double mu = mean[ch], is = invstd[ch];
        const double gm = gc.values()[ch];
        // channel-wise sums in fixed sample order
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double* gi = g.data() + (i * c + ch) * plane;
          const double* xi = xc.values().data() + (i * c + ch) * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            sum_g += gi[p];
            sum_gx += gi[p] * (xi[p] - mu) * is;
          }
        }
        if (gc.tracked()) gc.grad()[ch] += sum_gx;
        if (bc.tracked()) bc.grad()[ch] += sum_g;
        if (xc.tracked()) {
          auto& gx = xc.grad();
          if (train) {
            for (std::size_t i = 0; i < n; ++i) {
              const double* gi = g.data() + (i * c + ch) * plane;
              const double* xi = xc.values().data() + (i * c + ch) * plane;
              double* gxi = gx.data() + (i * c + ch) * plane;
              for (std::size_t p = 0; p < plane; ++p) {
                const double xhat = (xi[p] - mu) * is;
                gxi[p] += gm * is *
                          (gi[p] - invm * sum_g - xhat * invm * sum_gx);
              }
            }
          } else {
            for (std::size_t i = 0; i < n; ++i) {
              const double* gi = g.data() + (i * c + ch) * plane;
              double* gxi = gx.data() + (i * c + ch) * plane;
              for (std::size_t p = 0; p < plane; ++p) {
                gxi[p] += gm * is * gi[p];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace atrl
