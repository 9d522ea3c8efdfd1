#include <gtest/gtest.h>

#include <cmath>

#include "cfm/sampler.hpp"
#include "cfm/theorem_lab.hpp"

using namespace cfm;

namespace {

NumArray gaussian_points(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(seed, Stream::kSample);
  NumArray x = NumArray::matrix(n, d);
  for (auto& v : x.data) v = rng.normal();
  return x;
}

// dx/dt = x, so x(1) = e x(0).
AnalyticField growth() {
  return AnalyticField(1, [](double, std::span<const double> x, std::span<double> out) { out[0] = x[0]; }, "growth");
}

}  // namespace

TEST(Sampler, ConstantFieldTranslates) {
  const auto field = AnalyticField::constant({1.0, -2.0});
  const NumArray x0 = gaussian_points(1, 8, 2);
  for (std::size_t k : {1u, 3u, 8u}) {
    const SampleResult r = sample_euler(field, x0, k, 1);
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(r.x1(i, 0), x0(i, 0) + 1.0, 1e-14);
      EXPECT_NEAR(r.x1(i, 1), x0(i, 1) - 2.0, 1e-14);
    }
  }
}

// Consistent fields have straight trajectories, so every step count lands
// on the exact endpoint.
TEST(Sampler, AffineOracleIsExactForAnyStepCount) {
  const AffineOracle o(NumArray::matrix({{1.5, 0.3}, {-0.2, 0.8}}), {1.0, -0.5});
  const NumArray x0 = gaussian_points(2, 16, 2);
  const NumArray exact = o.flow(0.0, 1.0, x0);
  for (std::size_t k : {1u, 2u, 5u, 17u}) {
    const SampleResult r = sample_euler(o.field(), x0, k, 1);
    for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_NEAR(r.x1.data[i], exact.data[i], 1e-12) << "K=" << k;
  }
}

TEST(Sampler, GrowthOdeApproachesExponential) {
  const NumArray x0 = NumArray::matrix({{1.0}});
  const double x1 = sample_euler(growth(), x0, 100, 1).x1(0, 0);
  EXPECT_NEAR(x1, std::pow(1.01, 100), 1e-12);
  EXPECT_LT(std::abs(x1 - M_E) / M_E, 0.02);
}

TEST(Sampler, FirstOrderConvergence) {
  const NumArray x0 = NumArray::matrix({{1.0}});
  double prev = 0.0;
  for (std::size_t n : {10u, 20u, 40u, 80u}) {
    const double err = std::abs(sample_euler(growth(), x0, n, 1).x1(0, 0) - M_E);
    if (prev > 0.0) {
      EXPECT_NEAR(prev / err, 2.0, 0.1);
    }
    prev = err;
  }
}

TEST(Sampler, SegmentJumpsEqualSingleStepEuler) {
  const AnalyticField swirl(2, [](double t, std::span<const double> x, std::span<double> out) {
    out[0] = -x[1] + t;
    out[1] = x[0] * std::cos(t);
  });
  const NumArray x0 = gaussian_points(3, 10, 2);
  for (std::size_t k : {1u, 2u, 4u, 7u}) {
    Trajectory a, b;
    const SampleResult jumps = sample_segment_jumps(swirl, x0, k, &a);
    const SampleResult euler = sample_euler(swirl, x0, k, 1, &b);
    EXPECT_EQ(jumps.x1, euler.x1);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(jumps.nfe, k);
  }
}

TEST(Sampler, NfeIsSegmentsTimesSteps) {
  const auto base = AnalyticField::constant({0.5});
  const CountingField counted(base);
  const NumArray x0 = gaussian_points(4, 3, 1);
  const SampleResult r = sample_euler(counted, x0, 3, 4);
  EXPECT_EQ(r.nfe, 12u);
  EXPECT_EQ(counted.calls(), 12u);
}

TEST(Sampler, EmptyBatchAndInvalidArguments) {
  const auto field = AnalyticField::constant({0.5, 0.5});
  const SampleResult r = sample_euler(field, NumArray::matrix(0, 2), 2, 1);
  EXPECT_EQ(r.x1.rows(), 0u);
  EXPECT_THROW(sample_euler(field, NumArray::matrix(1, 2), 0, 1), DomainError);
  EXPECT_THROW(sample_euler(field, NumArray::matrix(1, 2), 1, 0), DomainError);
  EXPECT_THROW(sample_euler(field, NumArray::matrix(1, 3), 1, 1), ShapeError);
}

TEST(Sampler, DivergentFieldSurfacesNonFinite) {
  const AnalyticField blowup(1, [](double, std::span<const double> x, std::span<double> out) { out[0] = 1e200 * x[0]; });
  EXPECT_THROW(sample_euler(blowup, NumArray::matrix({{1e100}}), 4, 1), NonFiniteError);
}

TEST(RecordTrajectory, GridAndEndpoints) {
  const AffineOracle o(NumArray::matrix({{2.0}}), {0.5});
  const NumArray x0 = gaussian_points(5, 6, 1);
  const Trajectory tr = record_trajectory(o.field(), x0, uniform_grid(65));
  ASSERT_EQ(tr.size(), 65u);
  EXPECT_EQ(tr.nfe, 64u);
  EXPECT_EQ(tr.states.front(), x0);
  const NumArray exact = o.flow(0.0, 1.0, x0);
  for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_NEAR(tr.states.back().data[i], exact.data[i], 1e-12);
  EXPECT_EQ(tr.path_of(2).size(), 65u);
}

TEST(RecordTrajectory, MatchesEulerOnUniformGrid) {
  const NumArray x0 = NumArray::matrix({{1.0}});
  const Trajectory tr = record_trajectory(growth(), x0, uniform_grid(11));
  EXPECT_EQ(tr.states.back(), sample_euler(growth(), x0, 10, 1).x1);
}

TEST(RecordTrajectory, GridValidation) {
  const auto field = AnalyticField::constant({1.0});
  const NumArray x0 = NumArray::matrix({{0.0}});
  EXPECT_THROW(record_trajectory(field, x0, {0.0}), DomainError);
  EXPECT_THROW(record_trajectory(field, x0, {0.0, 0.5}), DomainError);
  EXPECT_THROW(record_trajectory(field, x0, {0.0, 0.6, 0.6, 1.0}), DomainError);
  EXPECT_THROW(uniform_grid(1), DomainError);
}
