#include <doctest.h>

#include <cmath>
#include <set>

#include "claimlm/autodiff.hpp"
#include "claimlm/error.hpp"
#include "claimlm/matrix.hpp"
#include "claimlm/rng.hpp"

using namespace claimlm;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  CounterRng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal(0.0, sd);
  return m;
}

// Reference triple loop.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul matches the triple loop and rejects bad shapes") {
  const Matrix a = random_matrix(5, 7, 1), b = random_matrix(7, 3, 2);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  Matrix acc(7, 3);
  gemm_tn_acc(a, random_matrix(5, 3, 4), acc);
  CHECK(max_abs_diff(acc, naive_matmul(a.transposed(), random_matrix(5, 3, 4))) < 1e-12);
  Matrix nt(5, 7);
  gemm_nt_acc(random_matrix(5, 3, 5), random_matrix(7, 3, 6), nt);
  CHECK(max_abs_diff(nt, naive_matmul(random_matrix(5, 3, 5), random_matrix(7, 3, 6).transposed())) < 1e-12);
}

TEST_CASE("row softmax") {
  SUBCASE("matches exp / sum and sums to one") {
    const Matrix x{{1.0, 2.0, 3.0}, {-1000.0, 0.0, 1000.0}};
    const Matrix p = softmax_rows(x);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(p(0, 0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
    CHECK(p(1, 2) == 1.0);
    for (std::size_t r = 0; r < 2; ++r) CHECK(p(r, 0) + p(r, 1) + p(r, 2) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("masked entries are exactly zero") {
    const Matrix p = softmax_rows(Matrix{{0.5, kNegInf, 0.25}});
    CHECK(p(0, 1) == 0.0);
  }
  SUBCASE("fully masked row and bad temperature") {
    CHECK_THROWS_AS(softmax_rows(Matrix{{kNegInf, kNegInf}}), DegenerateRowError);
    CHECK_THROWS_AS(softmax_rows(Matrix{{1.0}}, 0.0), ParameterError);
  }
  SUBCASE("temperature divides logits") {
    const Matrix p = softmax_rows(Matrix{{0.0, 1.0}}, 2.0);
    CHECK(p(0, 1) == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))).epsilon(1e-14));
  }
}

TEST_CASE("counter rng is deterministic and well spread") {
  CounterRng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(CounterRng(42).next_u64() != c.next_u64());
  CounterRng u(9);
  double mean = 0.0;
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const double x = u.uniform();
    CHECK((x >= 0.0 && x < 1.0));
    mean += x;
  }
  CHECK(mean / 20000 == doctest::Approx(0.5).epsilon(0.02));
  CounterRng n(10);
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = n.normal(1.0, 2.0);
    s += x;
    s2 += x * x;
  }
  const double m = s / 20000;
  CHECK(m == doctest::Approx(1.0).epsilon(0.05));
  CHECK(std::sqrt(s2 / 20000 - m * m) == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("tape ops agree with central differences") {
  const Matrix x = random_matrix(3, 4, 11, 0.7);
  const Matrix w = random_matrix(4, 4, 12, 0.7);
  const Matrix g = random_matrix(1, 4, 13, 0.7);

  // Reduce to a scalar through a fixed random weighting so every output
  // entry contributes a distinct gradient.
  auto weighted = [](Tape& t, Var y) {
    return ad::sum(ad::mul(y, t.constant(random_matrix(y.value().rows(), y.value().cols(), 15))));
  };

  SUBCASE("matmul / matmul_nt") {
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::matmul(v, t.constant(w))); }, x, 1e-6) < 1e-7);
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::matmul_nt(v, t.constant(w))); }, x, 1e-6) < 1e-7);
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::matmul(t.constant(x), v)); }, w, 1e-6) < 1e-7);
  }
  SUBCASE("elementwise") {
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::silu(v)); }, x, 1e-6) < 1e-7);
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::mul(v, v)); }, x, 1e-6) < 1e-7);
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::scale(ad::add(v, v), 0.3)); }, x, 1e-6) < 1e-7);
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::add_row_vector(t.constant(x), v)); }, g, 1e-6) <
          1e-7);
  }
  SUBCASE("rmsnorm in both arguments") {
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::rmsnorm_rows(v, t.constant(g), 1e-6)); }, x, 1e-6) <
          1e-6);
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::rmsnorm_rows(t.constant(x), v, 1e-6)); }, g, 1e-6) <
          1e-6);
  }
  SUBCASE("causal softmax with temperature") {
    const Matrix sq = random_matrix(4, 4, 16);
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::softmax_rows(ad::causal_mask(v), 0.7)); }, sq,
                     1e-6) < 1e-7);
  }
  SUBCASE("slicing, concatenation, gather") {
    CHECK(grad_check(
              [&](Tape& t, Var v) {
                Var parts[] = {ad::slice_cols(v, 2, 2), ad::slice_cols(v, 0, 2)};
                return weighted(t, ad::concat_cols(parts));
              },
              x, 1e-6) < 1e-7);
    const int ids[] = {2, 0, 2};
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::gather_rows(v, ids)); }, x, 1e-6) < 1e-7);
  }
  SUBCASE("rope") {
    CHECK(grad_check([&](Tape& t, Var v) { return weighted(t, ad::rope(v, 2, 3, 10000.0)); }, x, 1e-6) < 1e-7);
  }
}

TEST_CASE("backward accumulates over shared parents and needs a scalar root") {
  Tape t;
  Var a = t.leaf(Matrix{{2.0}}, true);
  Var y = ad::add(ad::mul(a, a), a);  // a^2 + a
  t.backward(y);
  CHECK(a.grad()(0, 0) == 5.0);
  Tape t2;
  Var b = t2.leaf(Matrix(2, 2, 1.0), true);
  CHECK_THROWS_AS(t2.backward(b), ShapeError);
}

TEST_CASE("non-recording tape keeps no gradients") {
  Tape t(false);
  Var a = t.leaf(Matrix{{1.0, 2.0}}, true);
  Var s = ad::sum(ad::mul(a, a));
  CHECK(s.value()(0, 0) == 5.0);
}

TEST_CASE("grad_check reports non-finite values") {
  const Matrix p{{1.0}};
  CHECK_THROWS_AS(grad_check([](const Matrix&) { return std::nan(""); }, Matrix{{0.0}}, p, 1e-6), NumericError);
}
