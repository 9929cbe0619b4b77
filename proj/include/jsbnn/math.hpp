#pragma once

// Scalar kernels shared by the double and autodiff code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

#include "jsbnn/autodiff.hpp"

namespace jsbnn {

/// Above this rho, softplus switches to rho + log1p(exp(-rho)).
inline constexpr double kSoftplusThreshold = 30.0;

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

inline double softplus(double rho) {
  if (rho > kSoftplusThreshold) return rho + std::log1p(std::exp(-rho));
  return std::log1p(std::exp(rho));
}

/// Logistic sigmoid, the derivative of softplus.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline ad::Var softplus(const ad::Var& rho) {
  const double v = softplus(rho.value());
  if (rho.is_constant()) return ad::Var(v);
  return rho.tape()->record(v, rho, sigmoid(rho.value()));
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline ad::Var relu(const ad::Var& x) { return x.value() > 0.0 ? x : ad::Var(0.0); }

/// log(exp(a) + exp(b)) without overflow; either argument may be -inf.
inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline ad::Var log_sum_exp(const ad::Var& a, const ad::Var& b) {
  const double v = log_sum_exp(a.value(), b.value());
  ad::Tape* t = a.tape() ? a.tape() : b.tape();
  if (!t) return ad::Var(v);
  const double wa = std::isinf(a.value()) ? 0.0 : std::exp(a.value() - v);
  const double wb = std::isinf(b.value()) ? 0.0 : std::exp(b.value() - v);
  return t->record(v, a, wa, b, wb);
}

/// Univariate normal log-density parameterized by standard deviation.
template <class T>
T log_normal(const T& x, const T& mu, const T& sigma) {
  using std::log;
  const T z = (x - mu) / sigma;
  return T(-kHalfLog2Pi) - log(sigma) - T(0.5) * z * z;
}

/// splitmix64 finalizer; used to derive independent RNG streams from a seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

}  // namespace jsbnn
