#pragma once

// Factorized Gaussians and the softplus reparameterization of their scale.

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsbnn/math.hpp"

namespace jsbnn {

using Vector = std::vector<double>;

/// Diagonal Gaussian N(mu, diag(sigma^2)). Parameterized by standard
/// deviation; use from_variance when a variance is the natural input.
class DiagonalGaussian {
public:
  DiagonalGaussian(Vector mu, Vector sigma) : mu_(std::move(mu)), sigma_(std::move(sigma)) {
    if (mu_.empty()) throw std::invalid_argument("DiagonalGaussian: dimension must be >= 1");
    if (mu_.size() != sigma_.size()) {
      throw std::invalid_argument("DiagonalGaussian: mu and sigma lengths differ");
    }
    for (std::size_t i = 0; i < sigma_.size(); ++i) {
      if (!(sigma_[i] > 0.0) || !std::isfinite(sigma_[i]) || !std::isfinite(mu_[i])) {
        throw std::invalid_argument("DiagonalGaussian: sigma[" + std::to_string(i) +
                                    "] must be finite and > 0");
      }
    }
  }

  static DiagonalGaussian univariate(double mu, double sigma) { return {{mu}, {sigma}}; }

  static DiagonalGaussian from_variance(Vector mu, const Vector& variance) {
    Vector sigma(variance.size());
    for (std::size_t i = 0; i < variance.size(); ++i) sigma[i] = std::sqrt(variance[i]);
    return {std::move(mu), std::move(sigma)};
  }

  static DiagonalGaussian isotropic(std::size_t n, double mu, double sigma) {
    return {Vector(n, mu), Vector(n, sigma)};
  }

  [[nodiscard]] std::size_t size() const { return mu_.size(); }
  [[nodiscard]] std::span<const double> mu() const { return mu_; }
  [[nodiscard]] std::span<const double> sigma() const { return sigma_; }
  [[nodiscard]] double mean(std::size_t i) const { return mu_[i]; }
  [[nodiscard]] double stddev(std::size_t i) const { return sigma_[i]; }
  [[nodiscard]] double variance(std::size_t i) const { return sigma_[i] * sigma_[i]; }

  /// Draws x = mu + sigma * eps with eps ~ N(0, 1).
  template <class Rng>
  Vector sample(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x(size());
    for (std::size_t i = 0; i < size(); ++i) x[i] = mu_[i] + sigma_[i] * normal(rng);
    return x;
  }

  friend bool operator==(const DiagonalGaussian&, const DiagonalGaussian&) = default;

private:
  Vector mu_;
  Vector sigma_;
};

/// Trainable variational parameters theta = (mu, rho); sigma = softplus(rho).
struct VariationalParams {
  Vector mu;
  Vector rho;

  [[nodiscard]] std::size_t size() const { return mu.size(); }
  [[nodiscard]] Vector sigma() const;
  [[nodiscard]] DiagonalGaussian posterior() const { return {mu, sigma()}; }

  friend bool operator==(const VariationalParams&, const VariationalParams&) = default;
};

inline Vector softplus_sigma(std::span<const double> rho) {
  Vector out(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (!std::isfinite(rho[i])) {
      throw std::invalid_argument("softplus_sigma: rho[" + std::to_string(i) + "] is not finite");
    }
    out[i] = softplus(rho[i]);
  }
  return out;
}

inline Vector VariationalParams::sigma() const {
  if (mu.size() != rho.size()) throw std::invalid_argument("VariationalParams: mu/rho length mismatch");
  return softplus_sigma(rho);
}

/// Reparameterized draw w = mu + softplus(rho) * eps.
inline Vector sample_weights(const VariationalParams& params, std::span<const double> epsilon) {
  if (epsilon.size() != params.mu.size() || params.rho.size() != params.mu.size()) {
    throw std::invalid_argument("sample_weights: epsilon length does not match parameters");
  }
  const Vector sigma = softplus_sigma(params.rho);
  Vector w(epsilon.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = params.mu[i] + sigma[i] * epsilon[i];
  return w;
}

inline double log_density(std::span<const double> x, const DiagonalGaussian& g) {
  if (x.size() != g.size()) throw std::invalid_argument("log_density: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += log_normal(x[i], g.mean(i), g.stddev(i));
  return acc;
}

}  // namespace jsbnn
