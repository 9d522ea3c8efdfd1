#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfm/datasets.hpp"
#include "cfm/metrics.hpp"
#include "cfm/theorem_lab.hpp"

using namespace cfm;

namespace {

NumArray random_points(Rng& rng, std::size_t n, std::size_t d, double shift = 0.0) {
  NumArray x = NumArray::matrix(n, d);
  for (auto& v : x.data) v = rng.normal() + shift;
  return x;
}

double brute_force_w2(const NumArray& a, const NumArray& b) {
  std::vector<std::size_t> perm(a.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += squared_distance(a.row(i), b.row(perm[i]));
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(a.rows()));
}

// One-row trajectory sampled from a parametric curve on a uniform grid.
template <class Curve>
Trajectory curve_trajectory(Curve c, std::size_t points) {
  Trajectory tr;
  tr.times = uniform_grid(points);
  for (double t : tr.times) {
    const auto p = c(t);
    tr.states.push_back(NumArray::matrix({{p[0], p[1]}}));
  }
  return tr;
}

}  // namespace

TEST(Wasserstein, IdenticalSetsAreZero) {
  Rng rng(1, Stream::kVerify);
  const NumArray a = random_points(rng, 50, 2);
  EXPECT_EQ(wasserstein2_exact(a, a), 0.0);
}

TEST(Wasserstein, TranslationDistance) {
  Rng rng(2, Stream::kVerify);
  const NumArray a = random_points(rng, 40, 2);
  NumArray b = a;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    b(r, 0) += 3.0;
    b(r, 1) -= 4.0;
  }
  EXPECT_NEAR(wasserstein2_exact(a, b), 5.0, 1e-12);
}

TEST(Wasserstein, SmallExamples) {
  EXPECT_NEAR(wasserstein2_exact(NumArray::matrix({{0.0}, {1.0}}), NumArray::matrix({{1.0}, {0.0}})), 0.0, 1e-15);
  EXPECT_NEAR(wasserstein2_exact(NumArray::matrix({{0.0}, {2.0}}), NumArray::matrix({{1.0}, {3.0}})), 1.0, 1e-15);
}

TEST(Wasserstein, MatchesBruteForceOnSmallSets) {
  Rng rng(3, Stream::kVerify);
  for (std::size_t n = 1; n <= 6; ++n) {
    for (int trial = 0; trial < 10; ++trial) {
      const NumArray a = random_points(rng, n, 2), b = random_points(rng, n, 2, 0.5);
      EXPECT_NEAR(wasserstein2_exact(a, b), brute_force_w2(a, b), 1e-12);
    }
  }
}

TEST(Wasserstein, SymmetricAndTriangle) {
  Rng rng(4, Stream::kVerify);
  for (int trial = 0; trial < 5; ++trial) {
    const NumArray a = random_points(rng, 30, 2), b = random_points(rng, 30, 2, 1.0),
                   c = random_points(rng, 30, 2, -0.5);
    const double ab = wasserstein2_exact(a, b), ba = wasserstein2_exact(b, a);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(wasserstein2_exact(a, c), ab + wasserstein2_exact(b, c) + 1e-12);
  }
}

TEST(Wasserstein, InvariantToRowOrder) {
  Rng rng(5, Stream::kVerify);
  const NumArray a = random_points(rng, 25, 2), b = random_points(rng, 25, 2, 1.0);
  NumArray shuffled = NumArray::matrix(25, 2);
  for (std::size_t r = 0; r < 25; ++r) {
    shuffled(r, 0) = b((r * 7) % 25, 0);
    shuffled(r, 1) = b((r * 7) % 25, 1);
  }
  EXPECT_NEAR(wasserstein2_exact(a, b), wasserstein2_exact(a, shuffled), 1e-12);
}

TEST(Wasserstein, InputValidation) {
  EXPECT_THROW(wasserstein2_exact(NumArray::matrix(2, 2), NumArray::matrix(3, 2)), ShapeError);
  EXPECT_THROW(wasserstein2_exact(NumArray::matrix(0, 2), NumArray::matrix(0, 2)), DomainError);
  EXPECT_THROW(wasserstein2_exact(NumArray::matrix(1025, 1), NumArray::matrix(1025, 1)), DomainError);
}

TEST(Assignment, PermutationIsRecovered) {
  NumArray cost = NumArray::matrix(4, 4);
  const std::size_t target[] = {2, 0, 3, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) cost(i, j) = j == target[i] ? 0.0 : 1.0 + static_cast<double>(i + j);
  }
  const auto m = solve_assignment(cost);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m[i], target[i]);
}

TEST(Energy, IdenticalSetsVanishInVStatistic) {
  Rng rng(6, Stream::kVerify);
  const NumArray a = random_points(rng, 30, 2);
  EXPECT_NEAR(energy_distance(a, a, EnergyEstimator::kVStatistic), 0.0, 1e-12);
}

TEST(Energy, TwoPointExample) {
  // Single points at distance 3: 2*3 - 0 - 0.
  EXPECT_NEAR(energy_distance(NumArray::matrix({{0.0, 0.0}}), NumArray::matrix({{3.0, 0.0}}),
                              EnergyEstimator::kVStatistic),
              6.0, 1e-15);
  // Unbiased: within-set terms skip the diagonal.
  const NumArray a = NumArray::matrix({{0.0}, {2.0}}), b = NumArray::matrix({{1.0}, {1.0}});
  EXPECT_NEAR(energy_distance(a, b), 2.0 * 1.0 - 2.0 - 0.0, 1e-15);
  EXPECT_NEAR(energy_distance(a, b, EnergyEstimator::kVStatistic), 2.0 - 1.0 - 0.0, 1e-15);
}

TEST(Energy, RanksShiftsLikeWasserstein) {
  Rng rng(7, Stream::kVerify);
  const NumArray base = random_points(rng, 200, 2);
  double prev_e = -1.0, prev_w = -1.0;
  for (double shift : {0.5, 1.0, 2.0}) {
    const NumArray moved = random_points(rng, 200, 2, shift);
    const double e = energy_distance(base, moved), w = wasserstein2_exact(base, moved);
    EXPECT_GT(e, prev_e);
    EXPECT_GT(w, prev_w);
    prev_e = e;
    prev_w = w;
  }
}

TEST(Straightness, LineIsZero) {
  const auto tr = curve_trajectory([](double t) { return std::array<double, 2>{1.0 + 2.0 * t, -t}; }, 65);
  EXPECT_NEAR(straightness(tr), 0.0, 1e-28);
}

// Half sine bump of height 1/2 over a unit chord. On the 65-point grid the
// interior sum of sin^2(pi j / 64) is exactly 32, giving 8/63; the
// continuous average is 1/8.
TEST(Straightness, HalfSineBump) {
  const auto tr =
      curve_trajectory([](double t) { return std::array<double, 2>{t, 0.5 * std::sin(M_PI * t)}; }, 65);
  EXPECT_NEAR(straightness(tr), 8.0 / 63.0, 1e-14);
  const auto fine =
      curve_trajectory([](double t) { return std::array<double, 2>{t, 0.5 * std::sin(M_PI * t)}; }, 100001);
  EXPECT_NEAR(straightness(fine), 0.125, 1e-5);
}

// Unit semicircle between (-1, 0) and (1, 0). The continuous value is
// 1/3 - 2/pi^2; the integrand vanishes at both ends, so dropping the
// endpoints only rescales the trapezoid sum by (N - 1)/(N - 2).
TEST(Straightness, Semicircle) {
  const std::size_t n = 2001;
  const auto tr =
      curve_trajectory([](double t) { return std::array<double, 2>{-std::cos(M_PI * t), std::sin(M_PI * t)}; }, n);
  const double limit = 1.0 / 3.0 - 2.0 / (M_PI * M_PI);
  EXPECT_NEAR(straightness(tr), limit * (n - 1.0) / (n - 2.0), 1e-6);
}

TEST(Straightness, ScaleAndRowAverage) {
  Trajectory tr = curve_trajectory([](double t) { return std::array<double, 2>{t, 0.5 * std::sin(M_PI * t)}; }, 65);
  Trajectory scaled = tr;
  for (auto& s : scaled.states) {
    for (auto& v : s.data) v *= 10.0;
  }
  EXPECT_NEAR(straightness(scaled), straightness(tr), 1e-14);
  Trajectory two;
  two.times = tr.times;
  for (std::size_t j = 0; j < tr.size(); ++j) {
    const double t = tr.times[j];
    two.states.push_back(NumArray::matrix({{t, 0.5 * std::sin(M_PI * t)}, {t, 0.0}}));
  }
  EXPECT_NEAR(straightness(two), 0.5 * 8.0 / 63.0, 1e-14);
}

TEST(Straightness, DegenerateInputs) {
  Trajectory still;
  still.times = {0.0, 0.5, 1.0};
  still.states = {NumArray::matrix({{1.0, 1.0}}), NumArray::matrix({{1.0, 1.0}}), NumArray::matrix({{1.0, 1.0}})};
  EXPECT_EQ(straightness(still), 0.0);
  Trajectory loop = still;
  loop.states[1] = NumArray::matrix({{2.0, 1.0}});
  EXPECT_THROW(straightness(loop), DomainError);
  Trajectory short_one = still;
  short_one.times = {0.0, 1.0};
  short_one.states.pop_back();
  EXPECT_THROW(straightness(short_one), DomainError);
}

TEST(Residual, ConstantAndOracleFieldsVanish) {
  Rng rng(8, Stream::kVerify);
  const NumArray x = random_points(rng, 32, 2);
  std::vector<double> t(32);
  for (auto& s : t) s = 0.9 * rng.uniform();
  EXPECT_EQ(consistency_residual(AnalyticField::constant({1.0, 2.0}), t, x, 1e-4), 0.0);
  const AffineOracle o(NumArray::matrix({{1.5, 0.3}, {-0.2, 0.8}}), {1.0, -0.5});
  EXPECT_LT(consistency_residual(o.field(), t, x, 1e-4), 1e-6);
}

TEST(Residual, TimeFieldHasUnitResidual) {
  const AnalyticField v(1, [](double t, std::span<const double>, std::span<double> out) { out[0] = t; });
  Rng rng(9, Stream::kVerify);
  const NumArray x = random_points(rng, 16, 1);
  std::vector<double> t(16);
  for (auto& s : t) s = 0.9 * rng.uniform();
  EXPECT_NEAR(consistency_residual(v, t, x, 1e-4), 1.0, 1e-6);
}

TEST(Residual, InputValidation) {
  const auto f = AnalyticField::constant({0.0});
  const NumArray x = NumArray::matrix({{0.0}});
  const std::vector<double> t = {0.5}, late = {1.0};
  EXPECT_THROW(consistency_residual(f, t, x, 0.0), DomainError);
  EXPECT_THROW(consistency_residual(f, late, x, 1e-4), DomainError);
  EXPECT_THROW(consistency_residual(f, std::vector<double>{0.1, 0.2}, x, 1e-4), ShapeError);
}
