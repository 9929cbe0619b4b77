#pragma once

// Divergence-regularized losses for Bayesian networks:
//
//   KL loss       scale * KL(q || P)                         + NLL
//   JS-G closed   scale * lambda * JS-G(q || P)              + NLL
//   JS-G sampled  scale * lambda * [(1-a)^2 E_q log q/P + a^2 E_P log P/q] + NLL
//   JS-A sampled  scale * lambda * [(1-a) E_q log q/A + a E_P log P/A]     + NLL
//
// with A = a q + (1-a) P evaluated per parameter, NLL the Monte-Carlo
// negative log-likelihood of the batch, and scale the minibatch factor.
// Every loss is a deterministic function of (mu, rho, noise); the noise is
// drawn once per call from the call seed, so the same expression serves the
// double path, the autodiff path and finite-difference checks.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jsbnn/divergence.hpp"
#include "jsbnn/gaussian.hpp"
#include "jsbnn/math.hpp"
#include "jsbnn/network.hpp"

namespace jsbnn {

enum class LossKind { kl, jsg_closed, jsg_mc, jsa_mc };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kl: return "kl";
    case LossKind::jsg_closed: return "jsg_closed";
    case LossKind::jsg_mc: return "jsg_mc";
    case LossKind::jsa_mc: return "jsa_mc";
  }
  return "kl";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "kl") return LossKind::kl;
  if (s == "jsg_closed") return LossKind::jsg_closed;
  if (s == "jsg_mc") return LossKind::jsg_mc;
  if (s == "jsa_mc") return LossKind::jsa_mc;
  throw std::invalid_argument("unknown loss kind '" + s + "' (expected kl, jsg_closed, jsg_mc, jsa_mc)");
}

inline bool samples_prior(LossKind k) { return k == LossKind::jsg_mc || k == LossKind::jsa_mc; }

struct Batch {
  std::vector<Vector> inputs;
  std::vector<std::size_t> labels;

  [[nodiscard]] std::size_t size() const { return inputs.size(); }
};

struct LossBreakdown {
  double divergence_term = 0.0;  // includes lambda, excludes minibatch_scale
  double nll_term = 0.0;
  double total = 0.0;            // minibatch_scale * divergence_term + nll_term
  double minibatch_scale = 1.0;
};

/// Standard-normal draws for one loss evaluation: `samples` rows of
/// reparameterization noise and, for the sampled divergences, `samples` rows
/// of prior draws (stored standardized; w = mu_P + sigma_P * z).
struct LossNoise {
  std::size_t samples = 0;
  std::size_t dim = 0;
  Vector eps;
  Vector prior_z;

  [[nodiscard]] std::span<const double> eps_row(std::size_t s) const { return {eps.data() + s * dim, dim}; }
  [[nodiscard]] std::span<const double> prior_row(std::size_t s) const {
    return {prior_z.data() + s * dim, dim};
  }
};

inline LossNoise draw_loss_noise(std::size_t dim, int samples, bool with_prior, std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("loss: mc_samples must be >= 1");
  LossNoise n;
  n.samples = static_cast<std::size_t>(samples);
  n.dim = dim;
  n.eps = detail::standard_normal_draws(n.samples, dim, derive_seed(seed, 0));
  if (with_prior) n.prior_z = detail::standard_normal_draws(n.samples, dim, derive_seed(seed, 1));
  return n;
}

template <class T>
struct LossValue {
  T divergence;  // lambda-weighted
  T nll;
};

namespace detail {

inline void check_batch(const BayesianNetwork& net, const Batch& batch) {
  if (batch.inputs.empty()) throw std::invalid_argument("loss: batch must be non-empty");
  if (batch.inputs.size() != batch.labels.size()) {
    throw std::invalid_argument("loss: inputs and labels differ in length");
  }
  for (std::size_t r = 0; r < batch.size(); ++r) {
    if (batch.labels[r] >= net.output_size()) {
      throw std::invalid_argument("loss: label " + std::to_string(batch.labels[r]) + " at row " +
                                  std::to_string(r) + " is out of range");
    }
    if (batch.inputs[r].size() != net.input_size()) {
      throw std::invalid_argument("loss: input dimension mismatch at row " + std::to_string(r));
    }
  }
}

}  // namespace detail

/// The loss as a function of flat (mu, rho) for fixed noise.
template <class T>
LossValue<T> evaluate_loss(LossKind kind, const BayesianNetwork& net, const Batch& batch,
                           const DivergenceConfig& cfg, std::span<const T> mu, std::span<const T> rho,
                           const LossNoise& noise) {
  using std::log;
  const std::size_t n = net.parameter_count();
  if (mu.size() != n || rho.size() != n || noise.dim != n) {
    throw std::invalid_argument("loss: parameter/noise length mismatch");
  }
  if (samples_prior(kind) && noise.prior_z.size() != noise.samples * n) {
    throw std::invalid_argument("loss: prior draws missing for a sampled divergence");
  }
  const double alpha = cfg.alpha;
  const auto shapes = net.shapes();

  std::vector<T> sigma(n);
  for (std::size_t k = 0; k < n; ++k) sigma[k] = softplus(rho[k]);

  T nll = T(0.0);
  T q_side = T(0.0);   // sum over q-draws of the first expectation's integrand
  T p_side = T(0.0);   // sum over prior draws of the second expectation's integrand
  std::vector<T> w(n);
  for (std::size_t s = 0; s < noise.samples; ++s) {
    const auto eps = noise.eps_row(s);
    for (std::size_t k = 0; k < n; ++k) w[k] = mu[k] + sigma[k] * T(eps[k]);

    for (std::size_t r = 0; r < batch.size(); ++r) {
      const std::vector<T> logits = forward_with_weights<T>(shapes, w, batch.inputs[r]);
      nll -= log_softmax_at<T>(logits, batch.labels[r]);
    }

    if (kind == LossKind::jsg_mc || kind == LossKind::jsa_mc) {
      for (std::size_t k = 0; k < n; ++k) {
        const T lq = log_normal(w[k], mu[k], sigma[k]);
        const T lp = log_normal(w[k], T(net.prior_mean(k)), T(net.prior_stddev(k)));
        q_side += kind == LossKind::jsg_mc ? lq - lp : lq - kernel::log_mixture(lq, lp, alpha);
      }
    }
    if (samples_prior(kind) && alpha > 0.0) {
      const auto z = noise.prior_row(s);
      for (std::size_t k = 0; k < n; ++k) {
        const double wp = net.prior_mean(k) + net.prior_stddev(k) * z[k];
        const T lq = log_normal(T(wp), mu[k], sigma[k]);
        const double lp = log_normal(wp, net.prior_mean(k), net.prior_stddev(k));
        p_side += kind == LossKind::jsg_mc ? T(lp) - lq : T(lp) - kernel::log_mixture(lq, T(lp), alpha);
      }
    }
  }
  const double inv_s = 1.0 / static_cast<double>(noise.samples);
  nll = nll * T(inv_s);

  T divergence = T(0.0);
  switch (kind) {
    case LossKind::kl:
      for (std::size_t k = 0; k < n; ++k) {
        const double vp = net.prior_stddev(k) * net.prior_stddev(k);
        divergence += kernel::kl(mu[k], sigma[k] * sigma[k], T(net.prior_mean(k)), T(vp));
      }
      break;
    case LossKind::jsg_closed:
      for (std::size_t k = 0; k < n; ++k) {
        const double vp = net.prior_stddev(k) * net.prior_stddev(k);
        divergence += kernel::jsg(mu[k], sigma[k] * sigma[k], T(net.prior_mean(k)), T(vp), alpha);
      }
      divergence = divergence * T(cfg.lambda);
      break;
    case LossKind::jsg_mc: {
      const double c1 = cfg.lambda * (1.0 - alpha) * (1.0 - alpha);
      const double c2 = cfg.lambda * alpha * alpha;
      divergence = T(c1 * inv_s) * q_side + T(c2 * inv_s) * p_side;
      break;
    }
    case LossKind::jsa_mc: {
      const double c1 = cfg.lambda * (1.0 - alpha);
      const double c2 = cfg.lambda * alpha;
      divergence = T(c1 * inv_s) * q_side + T(c2 * inv_s) * p_side;
      break;
    }
  }
  return {divergence, nll};
}

inline LossBreakdown make_breakdown(double divergence, double nll, double minibatch_scale) {
  return {divergence, nll, minibatch_scale * divergence + nll, minibatch_scale};
}

inline void check_scale(double minibatch_scale) {
  if (!(minibatch_scale > 0.0 && minibatch_scale <= 1.0)) {
    throw std::invalid_argument("loss: minibatch_scale must lie in (0, 1]");
  }
}

/// Loss for explicit noise; the double-valued entry point used by the
/// finite-difference oracle.
inline LossBreakdown loss_with_noise(LossKind kind, const BayesianNetwork& net, const Batch& batch,
                                     const DivergenceConfig& cfg, const LossNoise& noise,
                                     double minibatch_scale = 1.0) {
  cfg.validate();
  check_scale(minibatch_scale);
  detail::check_batch(net, batch);
  const Vector mu = net.flat_mu();
  const Vector rho = net.flat_rho();
  const auto v = evaluate_loss<double>(kind, net, batch, cfg, mu, rho, noise);
  return make_breakdown(v.divergence, v.nll, minibatch_scale);
}

inline LossBreakdown compute_loss(LossKind kind, const BayesianNetwork& net, const Batch& batch,
                                  const DivergenceConfig& cfg, double minibatch_scale = 1.0) {
  cfg.validate();
  const LossNoise noise = draw_loss_noise(net.parameter_count(), cfg.mc_samples, samples_prior(kind), cfg.seed);
  return loss_with_noise(kind, net, batch, cfg, noise, minibatch_scale);
}

/// -(1/n) sum_i sum_(x,y) log softmax(f(x; w_i))[y].
inline double nll_mc(const BayesianNetwork& net, const Batch& batch, int n_samples, std::uint64_t seed) {
  DivergenceConfig cfg;
  cfg.mc_samples = n_samples;
  cfg.seed = seed;
  return compute_loss(LossKind::kl, net, batch, cfg).nll_term;
}

inline LossBreakdown kl_loss(const BayesianNetwork& net, const Batch& batch, const DivergenceConfig& cfg,
                             double minibatch_scale = 1.0) {
  return compute_loss(LossKind::kl, net, batch, cfg, minibatch_scale);
}

inline LossBreakdown jsg_loss_closed(const BayesianNetwork& net, const Batch& batch,
                                     const DivergenceConfig& cfg, double minibatch_scale = 1.0) {
  return compute_loss(LossKind::jsg_closed, net, batch, cfg, minibatch_scale);
}

inline LossBreakdown jsg_loss_mc(const BayesianNetwork& net, const Batch& batch, const DivergenceConfig& cfg,
                                 double minibatch_scale = 1.0) {
  return compute_loss(LossKind::jsg_mc, net, batch, cfg, minibatch_scale);
}

inline LossBreakdown jsa_loss_mc(const BayesianNetwork& net, const Batch& batch, const DivergenceConfig& cfg,
                                 double minibatch_scale = 1.0) {
  return compute_loss(LossKind::jsa_mc, net, batch, cfg, minibatch_scale);
}

}  // namespace jsbnn
