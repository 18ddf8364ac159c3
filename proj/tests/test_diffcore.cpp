#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "atrl/gemm.hpp"
#include "atrl/gradcheck.hpp"
#include "atrl/nn.hpp"
#include "atrl/ops.hpp"
#include "atrl/rng.hpp"
#include "atrl/tape.hpp"
#include "atrl/tensor.hpp"

using namespace atrl;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// keeps every coordinate at least `margin` away from 0 so relu kinks cannot
// straddle the finite-difference probe
Tensor random_tensor_off_zero(Shape shape, std::uint64_t seed,
                              double margin = 0.05) {
  Tensor t = random_tensor(std::move(shape), seed);
  for (auto& v : t.values()) {
    if (std::fabs(v) < margin) v = v < 0.0 ? v - margin : v + margin;
  }
  return t;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), Error);
  CHECK_THROWS_AS(t.item(), Error);
  CHECK(Tensor::scalar(4.25).item() == 4.25);

  Tensor alias = t;
  alias.values()[0] = 9.0;
  CHECK(t.values()[0] == 9.0);
  Tensor deep = t.clone();
  deep.values()[0] = -1.0;
  CHECK(t.values()[0] == 9.0);
  CHECK(t.same_storage(alias));
  CHECK_FALSE(t.same_storage(deep));
}

TEST_CASE("gradients accumulate until zeroed") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}).set_tracked();
  Tape tape;
  Tensor y = sum_all(x, &tape);
  tape.backward(y);
  CHECK(x.grad()[0] == 1.0);
  tape.backward(y);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
  x.zero_grad();
  tape.backward(y);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("backward wants a scalar root") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}).set_tracked();
  Tape tape;
  Tensor y = scale(x, 2.0, &tape);
  CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("ops without a tape record nothing") {
  Tensor x = Tensor::from({2}, {1.0, -2.0}).set_tracked();
  Tensor y = relu(x);
  CHECK_FALSE(y.tracked());
  Tape tape;
  Tensor z = relu(Tensor::from({2}, {1.0, 2.0}), &tape);
  CHECK_FALSE(z.tracked());
  CHECK(tape.empty());
}

TEST_CASE("elementwise forward values") {
  Tensor a = Tensor::from({4}, {1, -2, 3, 0});
  Tensor b = Tensor::from({4}, {5, 6, -7, 8});
  CHECK(add(a, b).values() == std::vector<double>{6, 4, -4, 8});
  CHECK(sub(a, b).values() == std::vector<double>{-4, -8, 10, -8});
  CHECK(mul(a, b).values() == std::vector<double>{5, -12, -21, 0});
  CHECK(relu(a).values() == std::vector<double>{1, 0, 3, 0});
  CHECK(scale(a, -2.0).values() == std::vector<double>{-2, 4, -6, -0.0});
  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), Error);
}

TEST_CASE("matmul forward oracle") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.values() == std::vector<double>{3, 7});
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), Error);

  // against a plain triple loop
  Tensor x = random_tensor({5, 7}, 11);
  Tensor y = random_tensor({7, 4}, 12);
  Tensor z = matmul(x, y);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        acc += x.values()[i * 7 + k] * y.values()[k * 4 + j];
      }
      CHECK(z.values()[i * 4 + j] == Catch::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("gemm variants agree with naive loops") {
  const std::size_t m = 9, k = 13, n = 17;
  Tensor a = random_tensor({m, k}, 21);
  Tensor b = random_tensor({k, n}, 22);
  Tensor g = random_tensor({m, n}, 23);

  std::vector<double> c(m * n, 0.5);
  gemm_acc(m, k, n, a.values().data(), b.values().data(), c.data());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.5;
      for (std::size_t kk = 0; kk < k; ++kk) {
        acc += a.values()[i * k + kk] * b.values()[kk * n + j];
      }
      CHECK(c[i * n + j] == Catch::Approx(acc).epsilon(1e-12));
    }
  }

  // dA += G * B^T
  std::vector<double> da(m * k, 0.0);
  gemm_acc_nt(m, n, k, g.values().data(), b.values().data(), da.data());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        acc += g.values()[i * n + j] * b.values()[kk * n + j];
      }
      CHECK(da[i * k + kk] == Catch::Approx(acc).epsilon(1e-12));
    }
  }

  // dB += A^T * G
  std::vector<double> db(k * n, 0.0);
  gemm_acc_tn(m, k, n, a.values().data(), g.values().data(), db.data());
  for (std::size_t kk = 0; kk < k; ++kk) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        acc += a.values()[i * k + kk] * g.values()[i * n + j];
      }
      CHECK(db[kk * n + j] == Catch::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("gemm is bit-identical across repeated runs") {
  const std::size_t m = 33, k = 65, n = 129;
  Tensor a = random_tensor({m, k}, 31);
  Tensor b = random_tensor({k, n}, 32);
  std::vector<double> c1(m * n, 0.0), c2(m * n, 0.0);
  gemm_acc(m, k, n, a.values().data(), b.values().data(), c1.data());
  gemm_acc(m, k, n, a.values().data(), b.values().data(), c2.data());
  CHECK(c1 == c2);
}

TEST_CASE("softmax rows sum to one") {
  Tensor logits = random_tensor({16, 9}, 41, -30.0, 30.0);
  Tensor p = softmax(logits);
  for (std::size_t i = 0; i < 16; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += p.values()[i * 9 + j];
    CHECK(std::fabs(s - 1.0) < 1e-12);
    for (std::size_t j = 0; j < 9; ++j) CHECK(p.values()[i * 9 + j] >= 0.0);
  }
}

TEST_CASE("softmax survives large logits") {
  Tensor logits = Tensor::from({1, 3}, {1000.0, 1000.0, -1000.0});
  Tensor p = softmax(logits);
  CHECK(p.values()[0] == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(p.values()[1] == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(p.values()[2] == 0.0);
}

TEST_CASE("cross entropy frozen values") {
  // uniform over 4 classes
  std::vector<std::int64_t> y0{2};
  Tensor z = Tensor::zeros({1, 4});
  CHECK(softmax_cross_entropy(z, y0).item() ==
        Catch::Approx(1.3862943611198906).epsilon(1e-15));

  // peaked on the right class: log1p(2*exp(-10))
  Tensor zp = Tensor::from({1, 3}, {10, 0, 0});
  std::vector<std::int64_t> yp{0};
  CHECK(softmax_cross_entropy(zp, yp).item() ==
        Catch::Approx(9.079573746724446e-05).margin(1e-18));

  Tensor z123 = Tensor::from({1, 3}, {1, 2, 3});
  std::vector<std::int64_t> y1{1};
  CHECK(softmax_cross_entropy(z123, y1).item() ==
        Catch::Approx(1.4076059644443804).epsilon(1e-15));

  // duplicated rows keep the mean unchanged
  Tensor two = Tensor::from({2, 3}, {1, 2, 3, 1, 2, 3});
  std::vector<std::int64_t> y2{1, 1};
  CHECK(softmax_cross_entropy(two, y2).item() ==
        softmax_cross_entropy(z123, y1).item());

  std::vector<std::int64_t> bad{3};
  CHECK_THROWS_AS(softmax_cross_entropy(z123, bad), Error);
  std::vector<std::int64_t> neg{-1};
  CHECK_THROWS_AS(softmax_cross_entropy(z123, neg), Error);
}

TEST_CASE("cross entropy backward matches (p - onehot)/n") {
  Tensor logits = random_tensor({4, 5}, 51).set_tracked();
  std::vector<std::int64_t> labels{0, 3, 2, 2};
  Tape tape;
  Tensor loss = softmax_cross_entropy(logits, labels, &tape);
  tape.backward(loss);
  Tensor p = softmax(logits);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const double want =
          (p.values()[i * 5 + j] -
           (j == static_cast<std::size_t>(labels[i]) ? 1.0 : 0.0)) /
          4.0;
      CHECK(logits.grad()[i * 5 + j] ==
            Catch::Approx(want).margin(1e-14));
    }
  }
}

TEST_CASE("rng streams are stable and independent") {
  Rng a = keyed_rng(7, "x", 1);
  Rng b = keyed_rng(7, "x", 1);
  Rng c = keyed_rng(7, "x", 2);
  bool same = true, differ = false;
  for (int i = 0; i < 16; ++i) {
    auto va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
    same = same && va == vb;
    differ = differ || va != vc;
  }
  CHECK(same);
  CHECK(differ);

  Rng u(123);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  // normals: sane bulk statistics on a fixed stream
  Rng g(7);
  double mean = 0.0, var = 0.0;
  const int n = 20000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = g.normal();
  for (double x : xs) mean += x;
  mean /= n;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1.0) < 0.03);
}

TEST_CASE("gradcheck: elementwise ops") {
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    Tensor a = random_tensor_off_zero({3, 4}, 100 + inst).set_tracked();
    Tensor b = random_tensor_off_zero({3, 4}, 200 + inst).set_tracked();
    Tensor w = random_tensor({3, 4}, 300 + inst);  // mixes the output coords

    Tape tape;
    Tensor expr = add(mul(relu(a, &tape), b, &tape),
                      scale(sub(a, b, &tape), 0.7, &tape), &tape);
    Tensor loss = sum_all(mul(expr, w, &tape), &tape);
    tape.backward(loss);

    auto f = [&]() {
      Tensor e = add(mul(relu(a), b), scale(sub(a, b), 0.7));
      return sum_all(mul(e, w)).item();
    };
    Tensor params[] = {a, b};
    auto rep = finite_diff_check(params, f, 1e-3, 64, inst);
    CHECK(rep.coords_checked == 24);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("gradcheck: matmul and bias") {
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    Tensor a = random_tensor({4, 6}, 400 + inst).set_tracked();
    Tensor b = random_tensor({6, 3}, 500 + inst).set_tracked();
    Tensor bias = random_tensor({3}, 600 + inst).set_tracked();
    Tensor w = random_tensor({4, 3}, 700 + inst);

    Tape tape;
    Tensor out = add_bias_rows(matmul(a, b, &tape), bias, &tape);
    Tensor loss = sum_all(mul(out, w, &tape), &tape);
    tape.backward(loss);

    auto f = [&]() {
      return sum_all(mul(add_bias_rows(matmul(a, b), bias), w)).item();
    };
    Tensor params[] = {a, b, bias};
    auto rep = finite_diff_check(params, f, 1e-3, 64, inst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("gradcheck: softmax cross entropy") {
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    Tensor logits = random_tensor({5, 7}, 800 + inst, -2.0, 2.0).set_tracked();
    std::vector<std::int64_t> labels;
    Rng rng(900 + inst);
    for (int i = 0; i < 5; ++i) {
      labels.push_back(static_cast<std::int64_t>(rng.below(7)));
    }
    Tape tape;
    Tensor loss = softmax_cross_entropy(logits, labels, &tape);
    tape.backward(loss);
    auto f = [&]() { return softmax_cross_entropy(logits, labels).item(); };
    Tensor params[] = {logits};
    auto rep = finite_diff_check(params, f, 1e-3, 64, inst);
    CHECK(rep.coords_checked == 35);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("backward accumulates into shared inputs") {
  // z = sum(x*x) + sum(x*x): both paths accumulate, dz/dx = 4x
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}).set_tracked();
  Tape tape;
  Tensor sq = mul(x, x, &tape);
  Tensor z = add(sum_all(sq, &tape), sum_all(sq, &tape), &tape);
  tape.backward(z);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(x.grad()[i] == Catch::Approx(4.0 * x.values()[i]).margin(1e-14));
  }
}
