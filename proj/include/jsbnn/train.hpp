#pragma once

// Gradients of the reparameterized losses, SGD updates with a step-wise
// learning-rate schedule, the training loop and seeded random search.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "jsbnn/autodiff.hpp"
#include "jsbnn/data.hpp"
#include "jsbnn/errors.hpp"
#include "jsbnn/loss.hpp"
#include "jsbnn/metrics.hpp"
#include "jsbnn/network.hpp"

namespace jsbnn {

struct ScheduleEntry {
  int epoch = 0;
  double multiplier = 1.0;

  friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

struct OptimizerState {
  double learning_rate = 1e-3;
  std::vector<ScheduleEntry> schedule;
  long step_count = 0;
  double momentum = 0.0;  // 0 gives the plain update mu <- mu - lr * dF/dmu
  Vector velocity_mu;
  Vector velocity_rho;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw std::invalid_argument("optimizer: learning rate must be finite and >= 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("optimizer: momentum must lie in [0, 1)");
    for (const auto& e : schedule) {
      if (!(e.multiplier > 0.0)) throw std::invalid_argument("optimizer: schedule multipliers must be > 0");
    }
  }
};

/// Scales the learning rate by every multiplier registered for `epoch`.
inline OptimizerState apply_schedule(OptimizerState opt, int epoch) {
  for (const auto& e : opt.schedule) {
    if (e.epoch == epoch) opt.learning_rate *= e.multiplier;
  }
  return opt;
}

struct GradientResult {
  Vector d_mu;
  Vector d_rho;
  LossBreakdown loss;
};

namespace detail {

inline std::string tensor_name(const BayesianNetwork& net, std::size_t flat_index, bool rho) {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& s = net.layers()[l].shape;
    if (flat_index < offset + s.param_count()) {
      const bool bias = flat_index >= offset + s.weight_count();
      return "layer " + std::to_string(l) + (bias ? " bias " : " weight ") + (rho ? "rho" : "mu");
    }
    offset += s.param_count();
  }
  return "unknown tensor";
}

}  // namespace detail

/// Exact reverse-mode gradients of the scalar loss for fixed noise.
inline GradientResult gradients_with_noise(const BayesianNetwork& net, const Batch& batch, LossKind kind,
                                           const DivergenceConfig& cfg, const LossNoise& noise,
                                           double minibatch_scale = 1.0) {
  cfg.validate();
  check_scale(minibatch_scale);
  detail::check_batch(net, batch);
  ad::Tape tape;
  const std::vector<ad::Var> mu = ad::variables(tape, net.flat_mu());
  const std::vector<ad::Var> rho = ad::variables(tape, net.flat_rho());
  const auto v = evaluate_loss<ad::Var>(kind, net, batch, cfg, mu, rho, noise);
  const ad::Var total = ad::Var(minibatch_scale) * v.divergence + v.nll;
  const std::vector<double> adj = tape.gradient(total);

  GradientResult g;
  g.loss = make_breakdown(v.divergence.value(), v.nll.value(), minibatch_scale);
  g.d_mu.resize(mu.size());
  g.d_rho.resize(rho.size());
  for (std::size_t k = 0; k < mu.size(); ++k) {
    g.d_mu[k] = adj[static_cast<std::size_t>(mu[k].index())];
    g.d_rho[k] = adj[static_cast<std::size_t>(rho[k].index())];
    if (!std::isfinite(g.d_mu[k])) throw NumericError("non-finite gradient in " + detail::tensor_name(net, k, false));
    if (!std::isfinite(g.d_rho[k])) throw NumericError("non-finite gradient in " + detail::tensor_name(net, k, true));
  }
  if (!std::isfinite(g.loss.total)) throw NumericError("non-finite loss value");
  return g;
}

inline GradientResult gradients(const BayesianNetwork& net, const Batch& batch, LossKind kind,
                                const DivergenceConfig& cfg, double minibatch_scale = 1.0) {
  cfg.validate();
  const LossNoise noise = draw_loss_noise(net.parameter_count(), cfg.mc_samples, samples_prior(kind), cfg.seed);
  return gradients_with_noise(net, batch, kind, cfg, noise, minibatch_scale);
}

/// One SGD (optionally momentum) step on (mu, rho).
inline void sgd_step(BayesianNetwork& net, const GradientResult& g, OptimizerState& opt) {
  Vector mu = net.flat_mu();
  Vector rho = net.flat_rho();
  if (opt.momentum > 0.0) {
    if (opt.velocity_mu.size() != mu.size()) {
      opt.velocity_mu.assign(mu.size(), 0.0);
      opt.velocity_rho.assign(rho.size(), 0.0);
    }
    for (std::size_t k = 0; k < mu.size(); ++k) {
      opt.velocity_mu[k] = opt.momentum * opt.velocity_mu[k] + g.d_mu[k];
      opt.velocity_rho[k] = opt.momentum * opt.velocity_rho[k] + g.d_rho[k];
      mu[k] -= opt.learning_rate * opt.velocity_mu[k];
      rho[k] -= opt.learning_rate * opt.velocity_rho[k];
    }
  } else {
    for (std::size_t k = 0; k < mu.size(); ++k) {
      mu[k] -= opt.learning_rate * g.d_mu[k];
      rho[k] -= opt.learning_rate * g.d_rho[k];
    }
  }
  for (std::size_t k = 0; k < mu.size(); ++k) {
    if (!std::isfinite(mu[k]) || !std::isfinite(rho[k])) {
      throw NumericError("parameter update produced a non-finite value in " +
                         detail::tensor_name(net, k, !std::isfinite(rho[k])));
    }
  }
  net.set_flat(mu, rho);
  ++opt.step_count;
}

struct TrainOptions {
  int epochs = 1;
  std::size_t batch_size = 32;
  bool minibatch_scaling = true;  // divergence weighted by 1 / minibatches per epoch
  int eval_samples = 100;
  int patience = 0;               // stop after this many epochs without a new best; 0 disables
};

struct StepRecord {
  long step = 0;
  LossBreakdown loss;
};

struct EpochRecord {
  int epoch = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double divergence_term = 0.0;  // sum over the epoch's steps of minibatch_scale * divergence
  double nll_term = 0.0;         // sum over the epoch's steps
  double total = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  explicit TrainResult(const BayesianNetwork& initial) : network(initial), best_network(initial) {}

  std::vector<EpochRecord> trace;
  std::vector<StepRecord> steps;
  BayesianNetwork network;       // last good parameters
  BayesianNetwork best_network;  // epoch with the highest validation accuracy
  int best_epoch = 0;
  double best_val_acc = -1.0;
  bool early_stopped = false;
  bool aborted = false;
  std::string abort_reason;
};

inline double predictive_accuracy(const BayesianNetwork& net, const Dataset& ds, int n_samples,
                                  std::uint64_t seed) {
  const auto probs = predictive_batch(net, ds.features, n_samples, seed);
  return accuracy(std::span<const Vector>(probs), ds.labels);
}

/// Minibatch training on the train split; validation accuracy drives the
/// best-epoch snapshot and early stopping. Deterministic for fixed seeds.
inline TrainResult train(BayesianNetwork net, const Dataset& dataset, LossKind kind, const DivergenceConfig& cfg,
                         OptimizerState opt, const TrainOptions& options) {
  cfg.validate();
  opt.validate();
  if (options.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (options.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  const Dataset train_set = dataset.subset(Split::train);
  Dataset val_set = dataset.subset(Split::validation);
  if (train_set.size() == 0) throw std::invalid_argument("train: dataset has no training rows");
  const bool has_val = val_set.size() > 0;

  const std::size_t n = train_set.size();
  const std::size_t minibatches = (n + options.batch_size - 1) / options.batch_size;
  const double scale = options.minibatch_scaling ? 1.0 / static_cast<double>(minibatches) : 1.0;

  TrainResult result(net);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  int since_best = 0;

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    opt = apply_schedule(std::move(opt), epoch);
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5348u, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.learning_rate;
    for (std::size_t b = 0; b < minibatches; ++b) {
      Batch batch;
      for (std::size_t i = b * options.batch_size; i < std::min(n, (b + 1) * options.batch_size); ++i) {
        batch.inputs.push_back(train_set.features[order[i]]);
        batch.labels.push_back(train_set.labels[order[i]]);
      }
      DivergenceConfig step_cfg = cfg;
      step_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(opt.step_count));
      try {
        const GradientResult g = gradients(net, batch, kind, step_cfg, scale);
        BayesianNetwork next = net;
        OptimizerState next_opt = opt;
        sgd_step(next, g, next_opt);
        net = std::move(next);
        opt = std::move(next_opt);
        result.steps.push_back({opt.step_count, g.loss});
        rec.divergence_term += scale * g.loss.divergence_term;
        rec.nll_term += g.loss.nll_term;
      } catch (const NumericError& e) {
        result.network = net;
        result.aborted = true;
        result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
        return result;
      }
    }
    rec.total = rec.divergence_term + rec.nll_term;
    const std::uint64_t eval_seed = derive_seed(cfg.seed, 0xE7A1u, static_cast<std::uint64_t>(epoch));
    rec.train_acc = predictive_accuracy(net, train_set, options.eval_samples, eval_seed);
    rec.val_acc = has_val ? predictive_accuracy(net, val_set, options.eval_samples, eval_seed) : rec.train_acc;
    result.trace.push_back(rec);
    result.network = net;

    if (rec.val_acc > result.best_val_acc) {
      result.best_val_acc = rec.val_acc;
      result.best_epoch = epoch;
      result.best_network = net;
      since_best = 0;
    } else if (options.patience > 0 && ++since_best >= options.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

struct SearchSpace {
  std::pair<double, double> alpha_range{0.0, 1.0};
  std::vector<double> lambda_choices{1.0};
  std::vector<double> lr_choices{1e-3};
  int trials = 1;

  void validate() const {
    if (trials < 1) throw std::invalid_argument("search: trials must be >= 1");
    if (!(alpha_range.first >= 0.0 && alpha_range.second <= 1.0 && alpha_range.first <= alpha_range.second)) {
      throw std::invalid_argument("search: alpha_range must be a sub-interval of [0, 1]");
    }
    if (lambda_choices.empty() || lr_choices.empty()) throw std::invalid_argument("search: empty choice list");
    for (double l : lambda_choices) {
      if (!(l > 0.0)) throw std::invalid_argument("search: lambda choices must be > 0");
    }
    for (double l : lr_choices) {
      if (!(l > 0.0)) throw std::invalid_argument("search: learning-rate choices must be > 0");
    }
  }
};

struct TrialConfig {
  double alpha = 0.0;
  double lambda = 1.0;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  friend bool operator==(const TrialConfig&, const TrialConfig&) = default;
};

struct TrialResult {
  int index = 0;
  TrialConfig config;
  std::optional<double> val_acc;  // empty when the trial diverged
};

struct SearchResult {
  std::vector<TrialResult> trials;
  std::optional<TrialResult> best;  // empty when every trial diverged

  [[nodiscard]] bool success() const { return best.has_value(); }
};

inline std::vector<TrialConfig> draw_trials(const SearchSpace& space, std::uint64_t seed) {
  space.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> alpha(space.alpha_range.first, space.alpha_range.second);
  std::uniform_int_distribution<std::size_t> lam(0, space.lambda_choices.size() - 1);
  std::uniform_int_distribution<std::size_t> lr(0, space.lr_choices.size() - 1);
  std::vector<TrialConfig> out;
  for (int t = 0; t < space.trials; ++t) {
    TrialConfig c;
    c.alpha = space.alpha_range.first == space.alpha_range.second ? space.alpha_range.first : alpha(rng);
    c.lambda = space.lambda_choices[lam(rng)];
    c.learning_rate = space.lr_choices[lr(rng)];
    c.seed = derive_seed(seed, static_cast<std::uint64_t>(t));
    out.push_back(c);
  }
  return out;
}

/// Evaluates `space.trials` seeded draws with `experiment(TrialConfig) ->
/// optional<double>` (validation accuracy, empty on divergence) and keeps the
/// best; ties go to lower lambda, then lower alpha, then the earlier trial.
/// Trials may run on up to `threads` threads; the result does not depend on it.
template <class Experiment>
SearchResult random_search(const SearchSpace& space, Experiment&& experiment, std::uint64_t seed,
                           unsigned threads = 1) {
  const std::vector<TrialConfig> configs = draw_trials(space, seed);
  SearchResult result;
  result.trials.resize(configs.size());
  auto run = [&](std::size_t t) {
    TrialResult r;
    r.index = static_cast<int>(t);
    r.config = configs[t];
    try {
      r.val_acc = experiment(configs[t]);
      if (r.val_acc && !std::isfinite(*r.val_acc)) r.val_acc.reset();
    } catch (const NumericError&) {
      r.val_acc.reset();
    }
    return r;
  };
  if (threads <= 1) {
    for (std::size_t t = 0; t < configs.size(); ++t) result.trials[t] = run(t);
  } else {
    for (std::size_t start = 0; start < configs.size(); start += threads) {
      std::vector<std::future<TrialResult>> jobs;
      for (std::size_t t = start; t < std::min(configs.size(), start + threads); ++t) {
        jobs.push_back(std::async(std::launch::async, run, t));
      }
      for (std::size_t j = 0; j < jobs.size(); ++j) result.trials[start + j] = jobs[j].get();
    }
  }
  for (const auto& r : result.trials) {
    if (!r.val_acc) continue;
    if (!result.best) {
      result.best = r;
      continue;
    }
    const auto& b = *result.best;
    const bool better =
        *r.val_acc > *b.val_acc ||
        (*r.val_acc == *b.val_acc &&
         (r.config.lambda < b.config.lambda ||
          (r.config.lambda == b.config.lambda && r.config.alpha < b.config.alpha)));
    if (better) result.best = r;
  }
  return result;
}

}  // namespace jsbnn
