#include <doctest.h>

#include <cmath>
#include <random>

#include "dmr/error.hpp"
#include "dmr/objective.hpp"

using namespace dmr;

namespace {

DenseVector random_vec(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  DenseVector v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

double cosine(const DenseVector& a, const DenseVector& b) { return a.dot(b) / (a.norm() * b.norm()); }

// Direct transcription of the in-batch loss, no shared code with the library.
double inbatch_oracle(const MiniBatch& b, double tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < b.queries.size(); ++i) {
    double denom = 0.0;
    for (const auto& p : b.positives) denom += std::exp(cosine(b.queries[i], p) / tau);
    total += -std::log(std::exp(cosine(b.queries[i], b.positives[i]) / tau) / denom);
  }
  return total / static_cast<double>(b.queries.size());
}

double hardneg_oracle(const DenseVector& q, const DenseVector& p, const std::vector<DenseVector>& negs,
                      double tau) {
  const double pos = std::exp(cosine(q, p) / tau);
  double denom = pos;
  for (const auto& n : negs) denom += std::exp(cosine(q, n) / tau);
  return -std::log(pos / denom);
}

}  // namespace

TEST_CASE("in-batch loss of orthonormal pairs has a closed form") {
  // q_i = p_i = e_i: cos(q_i,p_j) = δ_ij, so loss = −log(e^{1/τ} / (e^{1/τ} + (B−1)))
  const double tau = 0.5;
  MiniBatch b;
  for (int i = 0; i < 3; ++i) {
    b.queries.push_back(DenseVector::Unit(3, i));
    b.positives.push_back(DenseVector::Unit(3, i) * (i + 1.0));
  }
  const double want = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  CHECK(infonce_inbatch(b, {tau}).loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("losses agree with a direct transcription at the default temperature") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 25; ++t) {
    MiniBatch b;
    const int d = 8, n = 2 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) {
      b.queries.push_back(random_vec(rng, d));
      b.positives.push_back(random_vec(rng, d));
    }
    // τ = 0.1 keeps exp() in range for the naive oracle
    CHECK(infonce_inbatch(b, {0.1}).loss == doctest::Approx(inbatch_oracle(b, 0.1)).epsilon(1e-10));

    std::vector<DenseVector> negs;
    for (int k = 0; k < 4; ++k) negs.push_back(random_vec(rng, d));
    const auto r = infonce_hardneg(b.queries[0], b.positives[0], negs, {0.1});
    CHECK(r.loss == doctest::Approx(hardneg_oracle(b.queries[0], b.positives[0], negs, 0.1)).epsilon(1e-10));
  }
}

TEST_CASE("hard-negative batch with in-batch flag adds other positives to the denominator") {
  std::mt19937_64 rng(2);
  MiniBatch b;
  for (int i = 0; i < 3; ++i) {
    b.queries.push_back(random_vec(rng, 5));
    b.positives.push_back(random_vec(rng, 5));
    b.negatives.push_back({random_vec(rng, 5), random_vec(rng, 5)});
  }
  double want = 0.0;
  for (int i = 0; i < 3; ++i) {
    auto negs = b.negatives[i];
    for (int j = 0; j < 3; ++j)
      if (j != i) negs.push_back(b.positives[j]);
    want += hardneg_oracle(b.queries[i], b.positives[i], negs, 0.2);
  }
  CHECK(infonce_hardneg_batch(b, {0.2}, true).loss == doctest::Approx(want / 3).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central differences at τ = 0.01") {
  std::mt19937_64 rng(3);
  const double tau = 0.01, h = 1e-6;
  MiniBatch b;
  for (int i = 0; i < 4; ++i) {
    b.queries.push_back(random_vec(rng, 6));
    b.positives.push_back(random_vec(rng, 6));
  }
  const auto r = infonce_inbatch(b, {tau});
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 6; ++c) {
      auto up = b, down = b;
      up.positives[i][c] += h;
      down.positives[i][c] -= h;
      const double fd = (infonce_inbatch(up, {tau}).loss - infonce_inbatch(down, {tau}).loss) / (2 * h);
      CHECK(r.grad_positives[i][c] == doctest::Approx(fd).epsilon(1e-4).scale(1e-6));
    }
  }
}

TEST_CASE("gradients are scale invariant along the input direction") {
  // loss depends only on directions, so ∇ ⟂ v for every input v
  std::mt19937_64 rng(4);
  MiniBatch b;
  for (int i = 0; i < 3; ++i) {
    b.queries.push_back(random_vec(rng, 7));
    b.positives.push_back(random_vec(rng, 7));
  }
  const auto r = infonce_inbatch(b, {0.05});
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(r.grad_queries[i].dot(b.queries[i])) < 1e-10);
    CHECK(std::abs(r.grad_positives[i].dot(b.positives[i])) < 1e-10);
  }
}

TEST_CASE("built-in gradient checker passes on every op") {
  for (auto op : {GradCheckOp::inbatch, GradCheckOp::hardneg, GradCheckOp::mlm})
    for (std::uint64_t s = 0; s < 3; ++s) CHECK(grad_check(op, s, {20, 1e-4, false}) < 1e-4);
}

TEST_CASE("invalid batches raise typed errors") {
  MiniBatch one;
  one.queries.push_back(DenseVector::Ones(3));
  one.positives.push_back(DenseVector::Ones(3));
  CHECK_THROWS_AS(infonce_inbatch(one, {}), Error);
  CHECK_THROWS_AS(infonce_hardneg(DenseVector::Ones(3), DenseVector::Ones(3), {}, {}), Error);
  CHECK_THROWS_AS(infonce_inbatch(one, {0.0}), Error);
  one.queries.push_back(DenseVector::Zero(3));
  one.positives.push_back(DenseVector::Ones(3));
  try {
    infonce_inbatch(one, {});
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }
  CHECK(parse_grad_check_op("mlm") == GradCheckOp::mlm);
  CHECK_THROWS_AS(parse_grad_check_op("nope"), Error);
}
