#pragma once

// Diagonal-Gaussian latent experts and their Product-of-Experts fusion.
//
// Each modality encoder parameterizes one expert directly; the prior enters
// the product exactly once as an additional expert, so fusing M experts is
// a precision-weighted average over M + 1 Gaussians.

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "vmloc/ops.hpp"

namespace vmloc {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

struct DiagonalGaussian {
  std::vector<double> mu;
  std::vector<double> sigma;

  DiagonalGaussian() = default;
  DiagonalGaussian(std::vector<double> m, std::vector<double> s) : mu(std::move(m)), sigma(std::move(s)) {
    VMLOC_EXPECTS(mu.size() == sigma.size(), "gaussian mean and sigma lengths differ");
    for (std::size_t i = 0; i < mu.size(); ++i) {
      VMLOC_EXPECTS(std::isfinite(mu[i]) && std::isfinite(sigma[i]), "gaussian parameters must be finite");
      VMLOC_EXPECTS(sigma[i] > 0.0, "gaussian sigma must be positive at index " + std::to_string(i));
    }
  }
  static DiagonalGaussian standard(std::size_t dim) {
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  }

  std::size_t dim() const noexcept { return mu.size(); }
  bool operator==(const DiagonalGaussian&) const = default;
};

struct LatentSample {
  std::vector<double> z;
  std::vector<double> epsilon;
};

inline DiagonalGaussian poe_fuse(std::span<const DiagonalGaussian> experts, const DiagonalGaussian& prior) {
  VMLOC_EXPECTS(!experts.empty(), "poe_fuse needs at least one expert");
  const std::size_t d = prior.dim();
  for (const auto& e : experts)
    VMLOC_EXPECTS(e.dim() == d, "poe_fuse dimension mismatch: expert " + std::to_string(e.dim()) + " vs prior " +
                                    std::to_string(d));
  std::vector<double> mu(d), sigma(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double t0 = 1.0 / (prior.sigma[i] * prior.sigma[i]);
    double precision = t0;
    double weighted = prior.mu[i] * t0;
    for (const auto& e : experts) {
      const double t = 1.0 / (e.sigma[i] * e.sigma[i]);
      precision += t;
      weighted += e.mu[i] * t;
    }
    mu[i] = weighted / precision;
    sigma[i] = 1.0 / std::sqrt(precision);
  }
  return {std::move(mu), std::move(sigma)};
}

inline DiagonalGaussian poe_fuse(std::initializer_list<DiagonalGaussian> experts, const DiagonalGaussian& prior) {
  return poe_fuse(std::span<const DiagonalGaussian>(experts.begin(), experts.size()), prior);
}

// k reparameterized draws z = mu + sigma * eps.
template <class Rng>
std::vector<LatentSample> sample_k(const DiagonalGaussian& g, std::size_t k, Rng& rng) {
  VMLOC_EXPECTS(k >= 1, "sample_k needs k >= 1");
  std::normal_distribution<double> normal;
  std::vector<LatentSample> out(k);
  for (auto& s : out) {
    s.z.resize(g.dim());
    s.epsilon.resize(g.dim());
    for (std::size_t i = 0; i < g.dim(); ++i) {
      s.epsilon[i] = normal(rng);
      s.z[i] = g.mu[i] + g.sigma[i] * s.epsilon[i];
    }
  }
  return out;
}

inline double log_density(const DiagonalGaussian& g, std::span<const double> z) {
  VMLOC_EXPECTS(z.size() == g.dim(), "log_density dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double r = (z[i] - g.mu[i]) / g.sigma[i];
    s += -kHalfLog2Pi - std::log(g.sigma[i]) - 0.5 * r * r;
  }
  return s;
}

// KL(g || N(0, I)) in closed form.
inline double kl_to_prior(const DiagonalGaussian& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i)
    s += g.mu[i] * g.mu[i] + g.sigma[i] * g.sigma[i] - 1.0 - 2.0 * std::log(g.sigma[i]);
  return 0.5 * s;
}

namespace ops {

// One expert per row batch: mean and log-sigma [n x D], plus a presence mask
// [n x D] of 0/1 so absent modalities drop out of the product row by row.
struct ExpertVars {
  Var mu;
  Var log_sigma;
  Tensor mask;
};

struct GaussianVars {
  Var mu;
  Var log_sigma;
  Var sigma;
};

// Product of the experts with a standard-normal prior expert.
inline GaussianVars poe_fuse_rows(std::span<const ExpertVars> experts) {
  VMLOC_EXPECTS(!experts.empty(), "poe_fuse_rows needs at least one expert");
  Var precision, weighted;
  for (const auto& e : experts) {
    if (e.mu.shape() != experts.front().mu.shape() || e.log_sigma.shape() != e.mu.shape())
      throw DimensionError("poe_fuse_rows: expert shapes disagree");
    const Var t = mul_const(exp(scale(e.log_sigma, -2.0)), e.mask);
    const Var wm = mul(e.mu, t);
    precision = precision.valid() ? add(precision, t) : t;
    weighted = weighted.valid() ? add(weighted, wm) : wm;
  }
  precision = add_scalar(precision, 1.0);  // prior precision
  GaussianVars out;
  out.mu = div(weighted, precision);
  out.log_sigma = scale(log(precision), -0.5);
  out.sigma = exp(out.log_sigma);
  return out;
}

// z = mu + sigma * eps with eps held constant.
inline Var reparameterize(const Var& mu, const Var& sigma, const Tensor& eps) {
  return add(mu, mul_const(sigma, eps));
}

// Row log-density of N(mu, diag(exp(log_sigma))^2), [n x D] -> [n x 1].
inline Var log_normal_rows(const Var& z, const Var& mu, const Var& log_sigma) {
  const double d = static_cast<double>(z.cols());
  const Var r = mul(sub(z, mu), exp(negate(log_sigma)));
  const Var quad = scale(row_sum(square(r)), -0.5);
  return add_scalar(sub(quad, row_sum(log_sigma)), -kHalfLog2Pi * d);
}

inline Var log_std_normal_rows(const Var& z) {
  const double d = static_cast<double>(z.cols());
  return add_scalar(scale(row_sum(square(z)), -0.5), -kHalfLog2Pi * d);
}

// Closed-form KL to N(0, I) per row.
inline Var kl_to_prior_rows(const Var& mu, const Var& log_sigma) {
  const Var terms = sub(add(square(mu), exp(scale(log_sigma, 2.0))), add_scalar(scale(log_sigma, 2.0), 1.0));
  return scale(row_sum(terms), 0.5);
}

}  // namespace ops

}  // namespace vmloc
