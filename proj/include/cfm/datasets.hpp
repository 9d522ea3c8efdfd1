#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cfm/error.hpp"
#include "cfm/nd.hpp"
#include "cfm/rng.hpp"

namespace cfm {

enum class DistributionKind { kStandardGaussian, kGaussian, kEightGaussians, kTwoMoons, kCheckerboard };

struct DistributionSpec {
  DistributionKind kind = DistributionKind::kStandardGaussian;
  std::size_t dim = 2;
  std::vector<double> mean;  // gaussian only; empty means zero
  double sigma = 1.0;        // gaussian, eight-gaussians
  double radius = 4.0;       // eight-gaussians
  double noise = 0.0;        // two-moons
  std::size_t cells = 4;     // checkerboard
  double extent = 2.0;       // checkerboard half-width

  static DistributionSpec standard_gaussian(std::size_t d) {
    DistributionSpec s;
    s.dim = d;
    return s;
  }
  static DistributionSpec gaussian(std::vector<double> mu, double sigma) {
    DistributionSpec s;
    s.kind = DistributionKind::kGaussian;
    s.dim = mu.size();
    s.mean = std::move(mu);
    s.sigma = sigma;
    return s;
  }
  static DistributionSpec eight_gaussians(double radius = 4.0, double sigma = 0.1) {
    DistributionSpec s;
    s.kind = DistributionKind::kEightGaussians;
    s.radius = radius;
    s.sigma = sigma;
    return s;
  }
  static DistributionSpec two_moons(double noise) {
    DistributionSpec s;
    s.kind = DistributionKind::kTwoMoons;
    s.noise = noise;
    return s;
  }
  static DistributionSpec checkerboard(std::size_t cells = 4, double extent = 2.0) {
    DistributionSpec s;
    s.kind = DistributionKind::kCheckerboard;
    s.cells = cells;
    s.extent = extent;
    return s;
  }

  void validate() const {
    switch (kind) {
      case DistributionKind::kStandardGaussian:
        if (dim < 1) throw DomainError("standard-gaussian: dimension must be >= 1");
        break;
      case DistributionKind::kGaussian:
        if (dim < 1 || mean.size() != dim) throw DomainError("gaussian: mean length must equal dimension >= 1");
        if (!(sigma > 0.0)) throw DomainError("gaussian: sigma must be positive");
        break;
      case DistributionKind::kEightGaussians:
        if (dim != 2) throw DomainError("eight-gaussians is two-dimensional");
        if (!(sigma > 0.0)) throw DomainError("eight-gaussians: sigma must be positive");
        if (!(radius > 0.0)) throw DomainError("eight-gaussians: radius must be positive");
        break;
      case DistributionKind::kTwoMoons:
        if (dim != 2) throw DomainError("two-moons is two-dimensional");
        if (!(noise >= 0.0)) throw DomainError("two-moons: noise must be non-negative");
        break;
      case DistributionKind::kCheckerboard:
        if (dim != 2) throw DomainError("checkerboard is two-dimensional");
        if (cells < 2) throw DomainError("checkerboard: cells must be >= 2");
        if (!(extent > 0.0)) throw DomainError("checkerboard: extent must be positive");
        break;
    }
  }
};

inline const char* kind_name(DistributionKind k) {
  switch (k) {
    case DistributionKind::kStandardGaussian: return "standard-gaussian";
    case DistributionKind::kGaussian: return "gaussian";
    case DistributionKind::kEightGaussians: return "eight-gaussians";
    case DistributionKind::kTwoMoons: return "two-moons";
    case DistributionKind::kCheckerboard: return "checkerboard";
  }
  return "?";
}

inline DistributionKind parse_kind(const std::string& name) {
  for (auto k : {DistributionKind::kStandardGaussian, DistributionKind::kGaussian, DistributionKind::kEightGaussians,
                 DistributionKind::kTwoMoons, DistributionKind::kCheckerboard}) {
    if (name == kind_name(k)) return k;
  }
  throw DomainError("unknown distribution kind '" + name + "'");
}

/// The eight mode centres, at angles k*pi/4 on a circle of the given radius.
inline std::vector<std::array<double, 2>> eight_gaussian_centers(double radius) {
  std::vector<std::array<double, 2>> c;
  for (int k = 0; k < 8; ++k) {
    const double a = k * std::numbers::pi / 4.0;
    c.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return c;
}

inline NumArray sample(const DistributionSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  NumArray out = NumArray::matrix(n, spec.dim);
  switch (spec.kind) {
    case DistributionKind::kStandardGaussian:
      for (auto& v : out.data) v = rng.normal();
      break;
    case DistributionKind::kGaussian:
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < spec.dim; ++c) out(r, c) = spec.mean[c] + spec.sigma * rng.normal();
      }
      break;
    case DistributionKind::kEightGaussians: {
      const auto centers = eight_gaussian_centers(spec.radius);
      for (std::size_t r = 0; r < n; ++r) {
        const auto& c = centers[rng.below(8)];
        out(r, 0) = c[0] + spec.sigma * rng.normal();
        out(r, 1) = c[1] + spec.sigma * rng.normal();
      }
      break;
    }
    case DistributionKind::kTwoMoons:
      for (std::size_t r = 0; r < n; ++r) {
        const bool upper = rng.below(2) == 0;
        const double a = std::numbers::pi * rng.uniform();
        double px = upper ? std::cos(a) : 1.0 - std::cos(a);
        double py = upper ? std::sin(a) : 0.5 - std::sin(a);
        if (spec.noise > 0.0) {
          px += spec.noise * rng.normal();
          py += spec.noise * rng.normal();
        }
        out(r, 0) = px;
        out(r, 1) = py;
      }
      break;
    case DistributionKind::kCheckerboard: {
      // Dark cells are those with (i + j) even; pick one uniformly, then a
      // uniform point inside it.
      const std::size_t m = spec.cells;
      const double width = 2.0 * spec.extent / static_cast<double>(m);
      const std::size_t dark = (m * m + 1) / 2;
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t pick = rng.below(dark);
        std::size_t seen = 0, ci = 0, cj = 0;
        for (std::size_t k = 0; k < m * m; ++k) {
          const std::size_t i = k / m, j = k % m;
          if ((i + j) % 2 != 0) continue;
          if (seen++ == pick) {
            ci = i;
            cj = j;
            break;
          }
        }
        out(r, 0) = -spec.extent + (static_cast<double>(cj) + rng.uniform()) * width;
        out(r, 1) = -spec.extent + (static_cast<double>(ci) + rng.uniform()) * width;
      }
      break;
    }
  }
  return out;
}

}  // namespace cfm
