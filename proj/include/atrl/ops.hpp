#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atrl/gemm.hpp"
#include "atrl/tape.hpp"
#include "atrl/tensor.hpp"

namespace atrl {

// Op conventions: every op validates shapes up front and throws atrl::Error
// on a bad call. An op records a backward step iff a tape is given and at
// least one input is tracked; the output is marked tracked in exactly that
// case. Backward steps accumulate (+=) into input gradients and skip inputs
// that are not tracked.

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a,
                             const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  }
}

inline bool recording(const Tape* tape, std::initializer_list<bool> tracked) {
  if (!tape) return false;
  for (bool t : tracked) {
    if (t) return true;
  }
  return false;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) {
    out.values()[i] = a.values()[i] + b.values()[i];
  }
  if (detail::recording(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked();
    Tensor ac = a, bc = b, oc = out;
    tape->record(out, [ac, bc, oc]() mutable {
      const auto& g = oc.grad();
      if (ac.tracked()) {
        auto& ga = ac.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bc.tracked()) {
        auto& gb = bc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) {
    out.values()[i] = a.values()[i] - b.values()[i];
  }
  if (detail::recording(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked();
    Tensor ac = a, bc = b, oc = out;
    tape->record(out, [ac, bc, oc]() mutable {
      const auto& g = oc.grad();
      if (ac.tracked()) {
        auto& ga = ac.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bc.tracked()) {
        auto& gb = bc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

// elementwise (Hadamard) product
inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) {
    out.values()[i] = a.values()[i] * b.values()[i];
  }
  if (detail::recording(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked();
    Tensor ac = a, bc = b, oc = out;
    tape->record(out, [ac, bc, oc]() mutable {
      const auto& g = oc.grad();
      if (ac.tracked()) {
        auto& ga = ac.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * bc.values()[i];
        }
      }
      if (bc.tracked()) {
        auto& gb = bc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i] += g[i] * ac.values()[i];
        }
      }
    });
  }
  return out;
}

// max(x, 0); the subgradient at exactly 0 is taken as 0
inline Tensor relu(const Tensor& a, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = a.values()[i];
    out.values()[i] = v > 0.0 ? v : 0.0;
  }
  if (detail::recording(tape, {a.tracked()})) {
    out.set_tracked();
    Tensor ac = a, oc = out;
    tape->record(out, [ac, oc]() mutable {
      const auto& g = oc.grad();
      auto& ga = ac.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (ac.values()[i] > 0.0) ga[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double s, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * s;
  if (detail::recording(tape, {a.tracked()})) {
    out.set_tracked();
    Tensor ac = a, oc = out;
    tape->record(out, [ac, oc, s]() mutable {
      const auto& g = oc.grad();
      auto& ga = ac.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw Error("matmul wants rank-2 inputs, got " + shape_str(a.shape()) +
                " and " + shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw Error("matmul: inner dims disagree, " + shape_str(a.shape()) +
                " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm_acc(m, k, n, a.values().data(), b.values().data(), out.values().data());
  if (detail::recording(tape, {a.tracked(), b.tracked()})) {
    out.set_tracked();
    Tensor ac = a, bc = b, oc = out;
    tape->record(out, [ac, bc, oc, m, k, n]() mutable {
      const auto& g = oc.grad();
      if (ac.tracked()) {
        // dA += G * B^T
        gemm_acc_nt(m, n, k, g.data(), bc.values().data(), ac.grad().data());
      }
      if (bc.tracked()) {
        // dB += A^T * G
        gemm_acc_tn(m, k, n, ac.values().data(), g.data(), bc.grad().data());
      }
    });
  }
  return out;
}

// out[i,j] = mat[i,j] + bias[j]
inline Tensor add_bias_rows(const Tensor& mat, const Tensor& bias,
                            Tape* tape = nullptr) {
  if (mat.rank() != 2 || bias.rank() != 1 || bias.dim(0) != mat.dim(1)) {
    throw Error("add_bias_rows: want [n,d] + [d], got " +
                shape_str(mat.shape()) + " + " + shape_str(bias.shape()));
  }
  const std::size_t n = mat.dim(0), d = mat.dim(1);
  Tensor out = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.values()[i * d + j] = mat.values()[i * d + j] + bias.values()[j];
    }
  }
  if (detail::recording(tape, {mat.tracked(), bias.tracked()})) {
    out.set_tracked();
    Tensor mc = mat, bc = bias, oc = out;
    tape->record(out, [mc, bc, oc, n, d]() mutable {
      const auto& g = oc.grad();
      if (mc.tracked()) {
        auto& gm = mc.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
      }
      if (bc.tracked()) {
        auto& gb = bc.grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
      }
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape, Tape* tape = nullptr) {
  if (shape_numel(shape) != a.numel()) {
    throw Error("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                " changes element count");
  }
  Tensor out = Tensor::from(std::move(shape), a.values());
  if (detail::recording(tape, {a.tracked()})) {
    out.set_tracked();
    Tensor ac = a, oc = out;
    tape->record(out, [ac, oc]() mutable {
      const auto& g = oc.grad();
      auto& ga = ac.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& a, Tape* tape = nullptr) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (detail::recording(tape, {a.tracked()})) {
    out.set_tracked();
    Tensor ac = a, oc = out;
    tape->record(out, [ac, oc]() mutable {
      const double g = oc.grad()[0];
      auto& ga = ac.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& a, Tape* tape = nullptr) {
  if (a.numel() == 0) throw Error("mean_all of an empty tensor");
  return scale(sum_all(a, tape), 1.0 / static_cast<double>(a.numel()), tape);
}

// row-wise softmax of [n, c] logits; not differentiable (inference helper)
inline Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw Error("softmax wants [n,c] logits, got " +
                shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out = Tensor::zeros({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.values().data() + i * c;
    double* prow = out.values().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) {
      if (row[j] > mx) mx = row[j];
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - mx);
      z += prow[j];
    }
    for (std::size_t j = 0; j < c; ++j) prow[j] /= z;
  }
  return out;
}

// mean over the batch of -log softmax(logits)[label]; max-subtraction inside
inline Tensor softmax_cross_entropy(const Tensor& logits,
                                    std::span<const std::int64_t> labels,
                                    Tape* tape = nullptr) {
  if (logits.rank() != 2) {
    throw Error("softmax_cross_entropy wants [n,c] logits, got " +
                shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw Error("softmax_cross_entropy: " + std::to_string(n) +
                " rows vs " + std::to_string(labels.size()) + " labels");
  }
  if (n == 0) throw Error("softmax_cross_entropy on an empty batch");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw Error("label " + std::to_string(labels[i]) + " at row " +
                  std::to_string(i) + " outside [0," + std::to_string(c) +
                  ")");
    }
  }
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.values().data() + i * c;
    double* prow = probs.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) {
      if (row[j] > mx) mx = row[j];
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - mx);
      z += prow[j];
    }
    for (std::size_t j = 0; j < c; ++j) prow[j] /= z;
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    loss -= row[y] - mx - std::log(z);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  if (detail::recording(tape, {logits.tracked()})) {
    out.set_tracked();
    Tensor lc = logits, oc = out;
    std::vector<std::int64_t> ls(labels.begin(), labels.end());
    tape->record(out, [lc, oc, probs = std::move(probs),
                       ls = std::move(ls), n, c]() mutable {
      const double g = oc.grad()[0] / static_cast<double>(n);
      auto& gl = lc.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = static_cast<std::size_t>(ls[i]);
        for (std::size_t j = 0; j < c; ++j) {
          gl[i * c + j] += g * (probs[i * c + j] - (j == y ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

}  // namespace atrl
