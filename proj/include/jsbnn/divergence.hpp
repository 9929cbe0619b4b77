#pragma once

// Divergences between diagonal Gaussians: closed-form KL and geometric
// Jensen-Shannon (JS-G), Monte-Carlo estimators for KL, JS-G and the
// modified arithmetic-mixture Jensen-Shannon divergence (JS-A), the JS-A
// upper bound, and the regularization-dominance checks relating the JS-G
// loss to the KL loss.
//
// Argument convention: the first distribution is the variational posterior
// q, the second is the prior p. Skew duality swaps the two with
// alpha <-> 1 - alpha.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsbnn/errors.hpp"
#include "jsbnn/gaussian.hpp"
#include "jsbnn/math.hpp"

namespace jsbnn {

struct DivergenceConfig {
  double alpha = 0.0;
  double lambda = 1.0;
  int mc_samples = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be >= 0");
    if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  }
};

/// Per-dimension parameters of the normalized weighted geometric mean
/// q^alpha p^(1-alpha).
struct GeometricMeanParams {
  Vector mu_prime;
  Vector sigma_prime_sq;
};

/// Monte-Carlo estimate with its standard error.
struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

namespace kernel {

// Per-dimension kernels, parameterized by variances, generic over the scalar.

template <class T>
T kl(const T& mu_q, const T& var_q, const T& mu_p, const T& var_p) {
  using std::log;
  const T d = mu_p - mu_q;
  return T(0.5) * (var_q / var_p + (log(var_p) - log(var_q)) + d * d / var_p - T(1.0));
}

template <class T>
T geometric_variance(const T& var_1, const T& var_2, double alpha) {
  return var_1 * var_2 / (T(1.0 - alpha) * var_1 + T(alpha) * var_2);
}

template <class T>
T geometric_mean(const T& mu_1, const T& var_1, const T& mu_2, const T& var_2, const T& var_prime,
                 double alpha) {
  return var_prime * (T(alpha) * mu_1 / var_1 + T(1.0 - alpha) * mu_2 / var_2);
}

template <class T>
T jsg(const T& mu_1, const T& var_1, const T& mu_2, const T& var_2, double alpha) {
  using std::log;
  const T mixed = T(1.0 - alpha) * var_1 + T(alpha) * var_2;
  const T var_prime = var_1 * var_2 / mixed;
  const T mu_prime = geometric_mean(mu_1, var_1, mu_2, var_2, var_prime, alpha);
  const T d1 = mu_prime - mu_1;
  const T d2 = mu_prime - mu_2;
  const T log_ratio = log(var_prime) - T(1.0 - alpha) * log(var_1) - T(alpha) * log(var_2);
  return T(0.5) * (mixed / var_prime + log_ratio + T(1.0 - alpha) * d1 * d1 / var_prime +
                   T(alpha) * d2 * d2 / var_prime - T(1.0));
}

/// log of the mixture alpha * exp(log_q) + (1 - alpha) * exp(log_p).
template <class T>
T log_mixture(const T& log_q, const T& log_p, double alpha) {
  if (alpha <= 0.0) return log_p;
  if (alpha >= 1.0) return log_q;
  return log_sum_exp(T(std::log(alpha)) + log_q, T(std::log1p(-alpha)) + log_p);
}

}  // namespace kernel

namespace detail {

inline void require_same_size(const DiagonalGaussian& q, const DiagonalGaussian& p, const char* what) {
  if (q.size() != p.size()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                std::to_string(q.size()) + " vs " + std::to_string(p.size()) + ")");
  }
}

inline void require_alpha(double alpha, const char* what) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument(std::string(what) + ": alpha must lie in [0, 1]");
  }
}

inline void require_samples(int n, const char* what) {
  if (n < 1) throw std::invalid_argument(std::string(what) + ": sample count must be >= 1");
}

/// n x dim standard-normal draws, row-major, from a dedicated stream.
inline Vector standard_normal_draws(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n * dim);
  for (double& v : z) v = normal(rng);
  return z;
}

inline McEstimate mean_and_se(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double var = xs.size() > 1 ? ss / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

inline void require_finite(double v, std::size_t sample, const char* what) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(what) + ": non-finite log-density at sample " +
                       std::to_string(sample));
  }
}

}  // namespace detail

inline double kl_gaussian(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  detail::require_same_size(q, p, "kl_gaussian");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    acc += kernel::kl(q.mean(i), q.variance(i), p.mean(i), p.variance(i));
  }
  return acc;
}

inline GeometricMeanParams geometric_mean_params(const DiagonalGaussian& q, const DiagonalGaussian& p,
                                                 double alpha) {
  detail::require_same_size(q, p, "geometric_mean_params");
  detail::require_alpha(alpha, "geometric_mean_params");
  GeometricMeanParams g{Vector(q.size()), Vector(q.size())};
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double v = kernel::geometric_variance(q.variance(i), p.variance(i), alpha);
    g.sigma_prime_sq[i] = v;
    g.mu_prime[i] = kernel::geometric_mean(q.mean(i), q.variance(i), p.mean(i), p.variance(i), v, alpha);
  }
  return g;
}

/// Closed-form JS-G divergence (1-a) KL(q || G) + a KL(p || G), G the
/// normalized geometric mean q^a p^(1-a).
inline double jsg_gaussian_closed(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha) {
  detail::require_same_size(q, p, "jsg_gaussian_closed");
  detail::require_alpha(alpha, "jsg_gaussian_closed");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q.mean(i) == p.mean(i) && q.stddev(i) == p.stddev(i)) continue;
    // Each dimension is non-negative; clamp rounding residue near equality.
    acc += std::max(0.0, kernel::jsg(q.mean(i), q.variance(i), p.mean(i), p.variance(i), alpha));
  }
  return acc;
}

/// Upper bound on the JS-A divergence; +inf at alpha in {0, 1}.
inline double jsa_bound(double alpha) {
  detail::require_alpha(alpha, "jsa_bound");
  if (alpha == 0.0 || alpha == 1.0) return std::numeric_limits<double>::infinity();
  return -(1.0 - alpha) * std::log(alpha) - alpha * std::log1p(-alpha);
}

/// Generic MC estimator of KL(q || p) = E_q[log q - log p].
/// `q_sampler(rng)` returns a draw from q; the log-densities take that draw.
template <class Sampler, class LogQ, class LogP>
McEstimate mc_kl_estimate(Sampler&& q_sampler, LogQ&& q_logpdf, LogP&& p_logpdf, int n,
                          std::uint64_t seed) {
  detail::require_samples(n, "mc_kl");
  std::mt19937_64 rng(seed);
  Vector terms(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto x = q_sampler(rng);
    const double lq = q_logpdf(x);
    const double lp = p_logpdf(x);
    detail::require_finite(lq, i, "mc_kl");
    detail::require_finite(lp, i, "mc_kl");
    terms[i] = lq - lp;
  }
  return detail::mean_and_se(terms);
}

template <class Sampler, class LogQ, class LogP>
double mc_kl(Sampler&& q_sampler, LogQ&& q_logpdf, LogP&& p_logpdf, int n, std::uint64_t seed) {
  return mc_kl_estimate(q_sampler, q_logpdf, p_logpdf, n, seed).value;
}

inline McEstimate mc_kl_estimate(const DiagonalGaussian& q, const DiagonalGaussian& p, int n,
                                 std::uint64_t seed) {
  detail::require_same_size(q, p, "mc_kl");
  return mc_kl_estimate([&](std::mt19937_64& rng) { return q.sample(rng); },
                        [&](const Vector& x) { return log_density(x, q); },
                        [&](const Vector& x) { return log_density(x, p); }, n, seed);
}

namespace detail {

// Two-expectation estimators share this shape:
//   w_first  * E_{x~q}[f(x)] + w_second * E_{x~p}[g(x)]
// with draws x = mu + sigma * z from caller-supplied standard normals.
template <class FirstTerm, class SecondTerm>
McEstimate two_sided_estimate(const DiagonalGaussian& q, const DiagonalGaussian& p,
                              std::span<const double> z_first, std::span<const double> z_second,
                              double w_first, double w_second, FirstTerm&& f, SecondTerm&& g,
                              const char* what) {
  const std::size_t dim = q.size();
  if (z_first.size() % dim != 0 || z_second.size() % dim != 0 || z_first.empty() ||
      z_second.empty()) {
    throw std::invalid_argument(std::string(what) + ": draw buffers must hold whole samples");
  }
  const std::size_t n1 = z_first.size() / dim;
  const std::size_t n2 = z_second.size() / dim;
  Vector a(n1), b(n2);
  for (std::size_t s = 0; s < n1; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = q.mean(i) + q.stddev(i) * z_first[s * dim + i];
      acc += f(x, i);
    }
    require_finite(acc, s, what);
    a[s] = acc;
  }
  for (std::size_t s = 0; s < n2; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = p.mean(i) + p.stddev(i) * z_second[s * dim + i];
      acc += g(x, i);
    }
    require_finite(acc, s, what);
    b[s] = acc;
  }
  const McEstimate ea = mean_and_se(a);
  const McEstimate eb = mean_and_se(b);
  return {w_first * ea.value + w_second * eb.value,
          std::sqrt(w_first * w_first * ea.std_error * ea.std_error +
                    w_second * w_second * eb.std_error * eb.std_error)};
}

}  // namespace detail

/// MC estimate of the JS-G divergence from explicit standard-normal draws
/// (n x dim, row-major) for the q-side and p-side expectations.
inline McEstimate jsg_mc_from_draws(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha,
                                    std::span<const double> z_q, std::span<const double> z_p) {
  detail::require_same_size(q, p, "jsg_mc");
  detail::require_alpha(alpha, "jsg_mc");
  const GeometricMeanParams g = geometric_mean_params(q, p, alpha);
  auto log_g = [&](double x, std::size_t i) {
    return log_normal(x, g.mu_prime[i], std::sqrt(g.sigma_prime_sq[i]));
  };
  return detail::two_sided_estimate(
      q, p, z_q, z_p, 1.0 - alpha, alpha,
      [&](double x, std::size_t i) { return log_normal(x, q.mean(i), q.stddev(i)) - log_g(x, i); },
      [&](double x, std::size_t i) { return log_normal(x, p.mean(i), p.stddev(i)) - log_g(x, i); },
      "jsg_mc");
}

inline McEstimate jsg_mc_estimate(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha,
                                  int n, std::uint64_t seed) {
  detail::require_samples(n, "jsg_mc");
  const auto un = static_cast<std::size_t>(n);
  const Vector zq = detail::standard_normal_draws(un, q.size(), derive_seed(seed, 0));
  const Vector zp = detail::standard_normal_draws(un, p.size(), derive_seed(seed, 1));
  return jsg_mc_from_draws(q, p, alpha, zq, zp);
}

/// Monte-Carlo JS-G divergence; converges to jsg_gaussian_closed.
inline double jsg_mc(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha, int n,
                     std::uint64_t seed) {
  return jsg_mc_estimate(q, p, alpha, n, seed).value;
}

/// MC estimate of (1-a)^2 KL(q||p) + a^2 KL(p||q), the divergence part of the
/// sampled JS-G loss.
inline McEstimate weighted_kl_mc_estimate(const DiagonalGaussian& q, const DiagonalGaussian& p,
                                          double alpha, int n, std::uint64_t seed) {
  detail::require_same_size(q, p, "weighted_kl_mc");
  detail::require_alpha(alpha, "weighted_kl_mc");
  detail::require_samples(n, "weighted_kl_mc");
  const auto un = static_cast<std::size_t>(n);
  const Vector zq = detail::standard_normal_draws(un, q.size(), derive_seed(seed, 0));
  const Vector zp = detail::standard_normal_draws(un, p.size(), derive_seed(seed, 1));
  auto log_ratio = [&](double x, std::size_t i) {
    return log_normal(x, q.mean(i), q.stddev(i)) - log_normal(x, p.mean(i), p.stddev(i));
  };
  return detail::two_sided_estimate(
      q, p, zq, zp, (1.0 - alpha) * (1.0 - alpha), alpha * alpha, log_ratio,
      [&](double x, std::size_t i) { return -log_ratio(x, i); }, "weighted_kl_mc");
}

inline double weighted_kl_mc(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha, int n,
                             std::uint64_t seed) {
  return weighted_kl_mc_estimate(q, p, alpha, n, seed).value;
}

/// MC estimate of JS-A(q || p) = (1-a) KL(q || A) + a KL(p || A) with
/// A = a q + (1-a) p, applied per dimension and summed.
inline McEstimate jsa_mc_from_draws(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha,
                                    std::span<const double> z_q, std::span<const double> z_p) {
  detail::require_same_size(q, p, "jsa_mc");
  detail::require_alpha(alpha, "jsa_mc");
  auto log_ratios = [&](double x, std::size_t i, bool from_q) {
    const double lq = log_normal(x, q.mean(i), q.stddev(i));
    const double lp = log_normal(x, p.mean(i), p.stddev(i));
    return (from_q ? lq : lp) - kernel::log_mixture(lq, lp, alpha);
  };
  return detail::two_sided_estimate(
      q, p, z_q, z_p, 1.0 - alpha, alpha,
      [&](double x, std::size_t i) { return log_ratios(x, i, true); },
      [&](double x, std::size_t i) { return log_ratios(x, i, false); }, "jsa_mc");
}

inline McEstimate jsa_mc_estimate(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha,
                                  int n, std::uint64_t seed) {
  detail::require_samples(n, "jsa_mc");
  const auto un = static_cast<std::size_t>(n);
  const Vector zq = detail::standard_normal_draws(un, q.size(), derive_seed(seed, 0));
  const Vector zp = detail::standard_normal_draws(un, p.size(), derive_seed(seed, 1));
  return jsa_mc_from_draws(q, p, alpha, zq, zp);
}

inline double jsa_mc(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha, int n,
                     std::uint64_t seed) {
  return jsa_mc_estimate(q, p, alpha, n, seed).value;
}

/// Smallest alpha (exclusive) at which the lambda = 1 JS-G loss penalizes
/// more than the KL loss: 2 KL(q||p) / (KL(q||p) + KL(p||q)).
inline double alpha_threshold(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  detail::require_same_size(q, p, "alpha_threshold");
  const double forward = kl_gaussian(q, p);
  const double reverse = kl_gaussian(p, q);
  const double denom = forward + reverse;
  if (!(denom > 0.0)) {
    throw std::domain_error("alpha_threshold: undefined for identical distributions");
  }
  return 2.0 * forward / denom;
}

inline void require_univariate(const DiagonalGaussian& q, const DiagonalGaussian& p, const char* what) {
  if (q.size() != 1 || p.size() != 1) {
    throw std::invalid_argument(std::string(what) + ": univariate Gaussians required");
  }
}

/// sigma_p^2 > sigma_q^2: some alpha in [0, 1] makes the JS-G loss's
/// divergence exceed the KL loss's.
inline bool variance_condition_holds(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  require_univariate(q, p, "variance_condition_holds");
  return p.variance(0) > q.variance(0);
}

/// ln[(1/g^2) exp(g - 1/g)] + (dmu^2 / var_q)(1 - 1/g) with g = var_p / var_q;
/// equals 2 (KL(p||q) - KL(q||p)). The logarithm is expanded so large g
/// does not overflow exp.
inline double kl_asymmetry_expression(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  require_univariate(q, p, "kl_asymmetry_expression");
  const double gamma = p.variance(0) / q.variance(0);
  const double dmu = q.mean(0) - p.mean(0);
  return (gamma - 1.0 / gamma) - 2.0 * std::log(gamma) + dmu * dmu / q.variance(0) * (1.0 - 1.0 / gamma);
}

/// lambda [(1-a)^2 KL(q||p) + a^2 KL(p||q)] > KL(q||p).
inline bool jsg_dominates_kl(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha,
                             double lambda) {
  const double forward = kl_gaussian(q, p);
  const double reverse = kl_gaussian(p, q);
  const double jsg_part = lambda * ((1.0 - alpha) * (1.0 - alpha) * forward + alpha * alpha * reverse);
  return jsg_part > forward;
}

}  // namespace jsbnn
