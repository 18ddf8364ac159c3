#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <atrl/tensor.hpp>

namespace atrl {

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix held row-major.
// Rotations sweep (p,q) pairs in a fixed order until the largest
// off-diagonal entry is negligible against the diagonal scale, so the
// result is deterministic for identical input bits.
inline void jacobi_eigen(std::vector<double>& a, std::size_t d,
                         std::vector<double>& eigvec) {
  eigvec.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eigvec[i * d + i] = 1.0;
  if (d < 2) return;

  double scale = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    scale = std::max(scale, std::abs(a[i * d + i]));
  const double tol = std::max(scale, 1.0) * 1e-14;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q)
        off = std::max(off, std::abs(a[p * d + q]));
    if (off <= tol) break;

    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (std::abs(apq) <= tol * 1e-3) continue;
        const double tau = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a[k * d + p];
          const double akq = a[k * d + q];
          a[k * d + p] = c * akp - s * akq;
          a[k * d + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a[p * d + k];
          const double aqk = a[q * d + k];
          a[p * d + k] = c * apk - s * aqk;
          a[q * d + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = eigvec[k * d + p];
          const double vkq = eigvec[k * d + q];
          eigvec[k * d + p] = c * vkp - s * vkq;
          eigvec[k * d + q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

}  // namespace detail

struct Pca2 {
  std::vector<double> mean;         // D
  std::vector<double> components;   // 2 rows of D, orthonormal
  std::vector<double> eigenvalues;  // 2, descending
  Tensor projection;                // [N,2]
};

// Top-two principal directions of [n,d] features via the population
// covariance and a full Jacobi eigendecomposition. Component sign is fixed
// by making the largest-magnitude coordinate positive.
inline Pca2 pca_top2(const Tensor& features) {
  if (features.rank() != 2)
    throw Error("pca_top2 wants [n,d] features, got " +
                shape_str(features.shape()));
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  if (n < 2) throw Error("pca_top2 needs at least 2 samples");
  if (d < 2) throw Error("pca_top2 needs at least 2 feature dimensions");

  const double* f = features.values().data();
  Pca2 out;
  out.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += f[i * d + j];
  for (auto& m : out.mean) m /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      centered[i * d + j] = f[i * d + j] - out.mean[j];

  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p; q < d; ++q)
        cov[p * d + q] += centered[i * d + p] * centered[i * d + q];
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = p; q < d; ++q) {
      cov[p * d + q] /= static_cast<double>(n);
      cov[q * d + p] = cov[p * d + q];
    }

  std::vector<double> eigvec;
  detail::jacobi_eigen(cov, d, eigvec);

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cov[a * d + a] > cov[b * d + b];
  });

  out.components.assign(2 * d, 0.0);
  out.eigenvalues.assign(2, 0.0);
  for (std::size_t r = 0; r < 2; ++r) {
    const std::size_t col = order[r];
    out.eigenvalues[r] = cov[col * d + col];
    double* comp = out.components.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) comp[j] = eigvec[j * d + col];
    std::size_t peak = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(comp[j]) > std::abs(comp[peak])) peak = j;
    if (comp[peak] < 0.0)
      for (std::size_t j = 0; j < d; ++j) comp[j] = -comp[j];
  }

  out.projection = Tensor::zeros({n, 2});
  double* proj = out.projection.values().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < 2; ++r) {
      double acc = 0.0;
      const double* comp = out.components.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) acc += centered[i * d + j] * comp[j];
      proj[i * 2 + r] = acc;
    }
  return out;
}

}  // namespace atrl
