#pragma once

// Independent oracles for the test suite. Nothing here calls the divergence
// or metrics code it is used to check: densities, mixtures and integrals are
// evaluated from scratch.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstddef>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsbnn/errors.hpp"
#include "jsbnn/gaussian.hpp"

namespace jsbnn::fixtures {

namespace detail {

inline double log_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct SimpsonState {
  int evaluations = 0;
  int max_evaluations = 2'000'000;
};

inline double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                          double fb, double whole, double tol, int depth, SimpsonState& st) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  st.evaluations += 2;
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  if (depth <= 0 || st.evaluations > st.max_evaluations) {
    throw NumericError("quadrature: adaptive Simpson did not converge on [" + std::to_string(a) + ", " +
                       std::to_string(b) + "]");
  }
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, st) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, st);
}

}  // namespace detail

/// Adaptive Simpson on [a, b] to absolute tolerance `tol`.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                               int max_depth = 50) {
  if (!(b > a)) return 0.0;
  detail::SimpsonState st;
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth, st);
}

/// Integral of f over [mu - 10 sigma, mu + 10 sigma], one panel per sigma.
inline double integrate_around(const std::function<double(double)>& f, double mu, double sigma, double tol) {
  constexpr int panels = 20;
  double total = 0.0;
  for (int k = 0; k < panels; ++k) {
    const double a = mu + sigma * (-10.0 + k);
    total += adaptive_simpson(f, a, a + sigma, tol / panels);
  }
  if (!std::isfinite(total)) throw NumericError("quadrature: non-finite integral");
  return total;
}

inline void require_univariate(const DiagonalGaussian& a, const DiagonalGaussian& b) {
  if (a.size() != 1 || b.size() != 1) throw std::invalid_argument("quadrature oracle: univariate inputs required");
}

/// KL(q || p) by quadrature of q log(q/p).
inline double quadrature_kl(const DiagonalGaussian& q, const DiagonalGaussian& p, double tol = 1e-10) {
  require_univariate(q, p);
  const double mq = q.mean(0), sq = q.stddev(0), mp = p.mean(0), sp = p.stddev(0);
  auto f = [&](double x) {
    const double lq = detail::log_pdf(x, mq, sq);
    return std::exp(lq) * (lq - detail::log_pdf(x, mp, sp));
  };
  return integrate_around(f, mq, sq, tol);
}

/// (1-a) KL(q || A) + a KL(p || A) with A = a q + (1-a) p, both integrals by
/// quadrature over the support of their own sampling distribution.
inline double quadrature_jsa(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha,
                             double tol = 1e-10) {
  require_univariate(q, p);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("quadrature_jsa: alpha outside [0, 1]");
  const double mq = q.mean(0), sq = q.stddev(0), mp = p.mean(0), sp = p.stddev(0);
  const double la = alpha > 0.0 ? std::log(alpha) : -std::numeric_limits<double>::infinity();
  const double lb = alpha < 1.0 ? std::log1p(-alpha) : -std::numeric_limits<double>::infinity();
  auto log_mix = [&](double lq, double lp) { return detail::log_add(la + lq, lb + lp); };
  double total = 0.0;
  if (alpha < 1.0) {
    auto f = [&](double x) {
      const double lq = detail::log_pdf(x, mq, sq);
      return std::exp(lq) * (lq - log_mix(lq, detail::log_pdf(x, mp, sp)));
    };
    total += (1.0 - alpha) * integrate_around(f, mq, sq, tol / 2.0);
  }
  if (alpha > 0.0) {
    auto f = [&](double x) {
      const double lp = detail::log_pdf(x, mp, sp);
      return std::exp(lp) * (lp - log_mix(detail::log_pdf(x, mq, sq), lp));
    };
    total += alpha * integrate_around(f, mp, sp, tol / 2.0);
  }
  return total;
}

/// (1-a) KL(q || G) + a KL(p || G) where G is q^a p^(1-a) normalized
/// numerically; no closed-form parameters of G are used.
inline double quadrature_jsg(const DiagonalGaussian& q, const DiagonalGaussian& p, double alpha,
                             double tol = 1e-11) {
  require_univariate(q, p);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("quadrature_jsg: alpha outside [0, 1]");
  const double mq = q.mean(0), sq = q.stddev(0), mp = p.mean(0), sp = p.stddev(0);
  auto log_g_unnorm = [&](double x) {
    return alpha * detail::log_pdf(x, mq, sq) + (1.0 - alpha) * detail::log_pdf(x, mp, sp);
  };
  // Locate the bulk of G by its unnormalized mode, found by golden section on
  // the concave log density, then integrate over a generous window.
  const double lo0 = std::min(mq - 12.0 * sq, mp - 12.0 * sp);
  const double hi0 = std::max(mq + 12.0 * sq, mp + 12.0 * sp);
  double lo = lo0, hi = hi0;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 300; ++it) {
    const double c = hi - phi * (hi - lo);
    const double d = lo + phi * (hi - lo);
    if (log_g_unnorm(c) > log_g_unnorm(d)) {
      hi = d;
    } else {
      lo = c;
    }
  }
  const double mode = 0.5 * (lo + hi);
  const double ref = log_g_unnorm(mode);
  const double width = std::min(sq, sp);
  // G's curvature is a convex combination of the two precisions, so its
  // spread never exceeds the wider of the two.
  const double spread = std::max(sq, sp);
  const double z = [&] {
    double total = 0.0;
    const int panels = static_cast<int>(std::ceil(24.0 * spread / width));
    const double a0 = mode - 12.0 * spread;
    const double step = 24.0 * spread / panels;
    for (int k = 0; k < panels; ++k) {
      total += adaptive_simpson([&](double x) { return std::exp(log_g_unnorm(x) - ref); }, a0 + k * step,
                                a0 + (k + 1) * step, tol / panels);
    }
    return total;
  }();
  const double log_z = ref + std::log(z);
  auto log_g = [&](double x) { return log_g_unnorm(x) - log_z; };
  double total = 0.0;
  if (alpha < 1.0) {
    auto f = [&](double x) {
      const double lq = detail::log_pdf(x, mq, sq);
      return std::exp(lq) * (lq - log_g(x));
    };
    total += (1.0 - alpha) * integrate_around(f, mq, sq, tol / 2.0);
  }
  if (alpha > 0.0) {
    auto f = [&](double x) {
      const double lp = detail::log_pdf(x, mp, sp);
      return std::exp(lp) * (lp - log_g(x));
    };
    total += alpha * integrate_around(f, mp, sp, tol / 2.0);
  }
  return total;
}

/// Central differences; `f` must be deterministic in its argument (fixed
/// noise on both sides of the stencil).
inline Vector finite_diff(const std::function<double(std::span<const double>)>& f, std::span<const double> params,
                          double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff: h must be > 0");
  Vector x(params.begin(), params.end());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps coordinates whose true
/// derivative is ~0 from dominating the comparison.
inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw std::invalid_argument("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half, by enumerating every pair.
inline double brute_force_auc(std::span<const double> scores, std::span<const std::size_t> labels) {
  double concordant = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        concordant += 1.0;
      } else if (scores[i] == scores[j]) {
        concordant += 0.5;
      }
    }
  }
  if (pairs == 0.0) throw std::domain_error("brute_force_auc: both classes must be present");
  return concordant / pairs;
}

enum class CaseSource { published, trivial, derived };

inline CaseSource case_source_from_string(const std::string& s) {
  if (s == "published") return CaseSource::published;
  if (s == "trivial") return CaseSource::trivial;
  if (s == "derived") return CaseSource::derived;
  throw DataError("golden case: unknown source '" + s + "'");
}

struct GoldenCase {
  std::string id;
  nlohmann::json inputs;
  nlohmann::json expected;
  CaseSource source = CaseSource::trivial;
  std::string oracle;     // required for derived cases
  std::string reference;  // required for published cases
};

inline GoldenCase golden_case_from_json(const nlohmann::json& j) {
  GoldenCase c;
  try {
    c.id = j.at("id").get<std::string>();
    c.inputs = j.at("inputs");
    c.expected = j.at("expected");
    c.source = case_source_from_string(j.at("source").get<std::string>());
    c.oracle = j.value("oracle", "");
    c.reference = j.value("reference", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("golden case: ") + e.what());
  }
  if (c.source == CaseSource::derived && c.oracle.empty()) {
    throw DataError("golden case '" + c.id + "': derived case must name its oracle");
  }
  if (c.source == CaseSource::published && c.reference.empty()) {
    throw DataError("golden case '" + c.id + "': published case must name its reference");
  }
  return c;
}

inline std::vector<GoldenCase> load_golden(const std::string& path) {
  std::ifstream in(path);
  if (!in || std::filesystem::is_directory(path)) throw DataError("golden file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("golden file " + path + ": " + e.what());
  }
  std::vector<GoldenCase> out;
  for (const auto& c : j.at("cases")) out.push_back(golden_case_from_json(c));
  return out;
}

}  // namespace jsbnn::fixtures
