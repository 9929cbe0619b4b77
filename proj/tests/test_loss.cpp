#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "jsbnn/divergence.hpp"
#include "jsbnn/loss.hpp"
#include "test_support.hpp"

using namespace jsbnn;
using namespace jsbnn::testkit;

namespace {

const double kRhoForUnitSigma = std::log(std::numbers::e - 1.0);

/// 1 -> 1 identity net whose weight is N(w_mu, w_sigma^2) and whose bias sits
/// exactly on the prior N(0, prior_sigma^2).
BayesianNetwork one_weight_net(double w_mu, double w_rho, double prior_sigma, double bias_rho) {
  VariationalDenseLayer layer;
  layer.shape = {1, 1, Activation::identity};
  layer.weights = {{w_mu}, {w_rho}};
  layer.biases = {{0.0}, {bias_rho}};
  return BayesianNetwork({layer}, DiagonalGaussian::univariate(0.0, prior_sigma));
}

BayesianNetwork shifted_mean_net() { return one_weight_net(5.0, kRhoForUnitSigma, 1.0, kRhoForUnitSigma); }

Batch one_row_batch() { return {{{0.5}}, {0}}; }

DivergenceConfig config(double alpha, double lambda, int samples, std::uint64_t seed) {
  DivergenceConfig c;
  c.alpha = alpha;
  c.lambda = lambda;
  c.mc_samples = samples;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(LossGolden, MatchesIndependentEvaluation) {
  const auto net = golden_network();
  const auto doc = read_json(fixture_path("network.json"));
  int checked = 0;
  for (const auto& c : doc.at("cases")) {
    if (!c.at("id").get<std::string>().starts_with("loss_terms")) continue;
    const auto& in = c.at("inputs");
    Batch batch{in.at("inputs").get<std::vector<Vector>>(), in.at("labels").get<std::vector<std::size_t>>()};
    const auto noise =
        noise_from_rows(in.at("eps").get<std::vector<Vector>>(), in.at("prior_z").get<std::vector<Vector>>());
    const auto cfg = config(in.at("alpha").get<double>(), in.at("lambda").get<double>(), 2, 0);
    for (LossKind kind : kAllLosses) {
      const auto& e = c.at("expected").at(to_string(kind));
      const auto b = loss_with_noise(kind, net, batch, cfg, noise);
      EXPECT_LT(rel_diff(b.divergence_term, e.at("divergence").get<double>()), 1e-12) << c.at("id") << ' ' << to_string(kind);
      EXPECT_LT(rel_diff(b.nll_term, e.at("nll").get<double>()), 1e-12) << c.at("id") << ' ' << to_string(kind);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 12);
}

TEST(LossKind, StringRoundTrip) {
  for (LossKind k : kAllLosses) EXPECT_EQ(loss_kind_from_string(to_string(k)), k);
  EXPECT_THROW(loss_kind_from_string("elbo"), std::invalid_argument);
}

TEST(Nll, UniformTwoClassBatch) {
  VariationalDenseLayer layer;
  layer.shape = {2, 2, Activation::softmax};
  layer.weights = {Vector(4, 0.0), Vector(4, -80.0)};
  layer.biases = {Vector(2, 0.0), Vector(2, -80.0)};
  const BayesianNetwork net({layer}, DiagonalGaussian::univariate(0.0, 1.0));
  const Batch batch{{{1.0, 2.0}, {-1.0, 0.0}, {3.0, 3.0}, {0.1, -0.2}}, {0, 1, 1, 0}};
  EXPECT_NEAR(nll_mc(net, batch, 5, 3), 2.7725887222397812, 1e-12);
}

TEST(Nll, ConfidentNetworkIsNearZero) {
  VariationalDenseLayer layer;
  layer.shape = {1, 2, Activation::softmax};
  layer.weights = {{0.0, 0.0}, {-80.0, -80.0}};
  layer.biases = {{-60.0, 60.0}, {-80.0, -80.0}};
  const BayesianNetwork net({layer}, DiagonalGaussian::univariate(0.0, 1.0));
  EXPECT_LT(nll_mc(net, {{{1.0}}, {1}}, 3, 1), 1e-50);
}

TEST(Nll, LabelOutOfRange) {
  const auto net = golden_network();
  EXPECT_THROW(nll_mc(net, {{{0.0, 0.0}}, {2}}, 1, 1), std::invalid_argument);
  EXPECT_THROW(nll_mc(net, {{}, {}}, 1, 1), std::invalid_argument);
  EXPECT_THROW(nll_mc(net, {{{0.0, 0.0}}, {0}}, 0, 1), std::invalid_argument);
  EXPECT_THROW(nll_mc(net, {{{0.0}}, {0}}, 1, 1), std::invalid_argument);
}

TEST(KlLoss, PosteriorEqualToPriorHasNoDivergence) {
  const auto net = one_weight_net(0.0, kRhoForUnitSigma, 1.0, kRhoForUnitSigma);
  const auto b = kl_loss(net, one_row_batch(), config(0.0, 1.0, 1, 4));
  EXPECT_NEAR(b.divergence_term, 0.0, 1e-15);
  EXPECT_NEAR(b.total, b.nll_term, 1e-15);
}

TEST(KlLoss, OneWeightExample) {
  EXPECT_NEAR(kl_loss(shifted_mean_net(), one_row_batch(), config(0.0, 1.0, 1, 4)).divergence_term, 12.5, 1e-12);
}

TEST(KlLoss, IgnoresLambda) {
  const auto a = kl_loss(shifted_mean_net(), one_row_batch(), config(0.0, 1.0, 1, 4));
  const auto b = kl_loss(shifted_mean_net(), one_row_batch(), config(0.7, 3.0, 1, 4));
  EXPECT_EQ(a.total, b.total);
}

TEST(JsgLossClosed, OneWeightExample) {
  EXPECT_NEAR(jsg_loss_closed(shifted_mean_net(), one_row_batch(), config(0.5, 1.0, 1, 4)).divergence_term, 3.125,
              1e-12);
}

TEST(JsgLossClosed, AlphaZeroEqualsKlLoss) {
  const auto net = golden_network();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto a = jsg_loss_closed(net, small_batch(), config(0.0, 1.0, 3, seed));
    const auto b = kl_loss(net, small_batch(), config(0.0, 1.0, 3, seed));
    EXPECT_EQ(a.total, b.total);
  }
}

TEST(LossTerms, LambdaZeroLeavesOnlyNll) {
  const auto net = golden_network();
  for (LossKind kind : {LossKind::jsg_closed, LossKind::jsg_mc, LossKind::jsa_mc}) {
    const auto b = compute_loss(kind, net, small_batch(), config(0.4, 0.0, 4, 8));
    EXPECT_EQ(b.divergence_term, 0.0) << to_string(kind);
    EXPECT_EQ(b.total, b.nll_term);
    EXPECT_EQ(b.nll_term, nll_mc(net, small_batch(), 4, 8));
  }
}

TEST(LossTerms, TotalFollowsMinibatchScale) {
  const auto net = golden_network();
  for (LossKind kind : kAllLosses) {
    const auto b = compute_loss(kind, net, small_batch(), config(0.3, 1.5, 2, 11), 0.125);
    EXPECT_EQ(b.minibatch_scale, 0.125);
    EXPECT_NEAR(b.total, 0.125 * b.divergence_term + b.nll_term, 1e-12);
  }
  EXPECT_THROW(compute_loss(LossKind::kl, net, small_batch(), config(0.0, 1.0, 1, 1), 0.0), std::invalid_argument);
  EXPECT_THROW(compute_loss(LossKind::kl, net, small_batch(), config(0.0, 1.0, 1, 1), 1.5), std::invalid_argument);
}

TEST(LossTerms, RejectsBadConfig) {
  const auto net = golden_network();
  EXPECT_THROW(jsg_loss_closed(net, small_batch(), config(1.2, 1.0, 1, 1)), std::invalid_argument);
  EXPECT_THROW(jsg_loss_closed(net, small_batch(), config(0.5, -1.0, 1, 1)), std::invalid_argument);
  EXPECT_THROW(jsa_loss_mc(net, small_batch(), config(0.5, 1.0, 0, 1)), std::invalid_argument);
}

TEST(LossTerms, SampledFormsShareTheNllDraws) {
  const auto net = golden_network();
  const double nll = nll_mc(net, small_batch(), 5, 21);
  EXPECT_EQ(jsg_loss_mc(net, small_batch(), config(0.6, 1.0, 5, 21)).nll_term, nll);
  EXPECT_EQ(jsa_loss_mc(net, small_batch(), config(0.6, 1.0, 5, 21)).nll_term, nll);
}

TEST(LossTerms, SampledFormsRecoverKlAtAlphaZero) {
  const auto net = golden_network();
  const double kl = kl_loss(net, small_batch(), config(0.0, 1.0, 1, 0)).divergence_term;
  for (LossKind kind : {LossKind::jsg_mc, LossKind::jsa_mc}) {
    std::vector<double> vals;
    for (std::uint64_t s = 0; s < 20; ++s) {
      vals.push_back(compute_loss(kind, net, small_batch(), config(0.0, 1.0, 50, derive_seed(500, s))).divergence_term);
    }
    const auto est = detail::mean_and_se(vals);
    EXPECT_LT(std::abs(est.value - kl), 3.0 * est.std_error) << to_string(kind);
  }
}

TEST(JsgLossMc, MatchesClosedFormAtAlphaZeroOnShiftedMeanNet) {
  // At alpha = 0 both reduce to KL(q || p); the sampled form needs ~600 draws
  // to land within 5%.
  const double closed = jsg_loss_closed(shifted_mean_net(), one_row_batch(), config(0.0, 1.0, 1, 0)).divergence_term;
  int within = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const double mc =
        jsg_loss_mc(shifted_mean_net(), one_row_batch(), config(0.0, 1.0, 600, derive_seed(600, s))).divergence_term;
    within += std::abs(mc - closed) < 0.05 * closed;
  }
  EXPECT_EQ(within, 20);
}

TEST(JsaLossMc, BelowPerParameterBound) {
  const auto net = golden_network();
  for (double alpha : {0.1, 0.5, 0.9}) {
    std::vector<double> vals;
    for (std::uint64_t s = 0; s < 20; ++s) {
      vals.push_back(jsa_loss_mc(net, small_batch(), config(alpha, 2.0, 20, derive_seed(77, s))).divergence_term);
    }
    const auto est = detail::mean_and_se(vals);
    const double bound = 2.0 * jsa_bound(alpha) * static_cast<double>(net.parameter_count());
    EXPECT_LE(est.value, bound + 3.0 * est.std_error) << alpha;
  }
}

TEST(JsgLossClosed, MonotoneInLambdaAndFiniteOverSigmaRange) {
  for (double rho : {-14.0, -5.0, 0.0, 5.0, 1000.0}) {
    const auto net = one_weight_net(0.4, rho, 0.3, rho);
    double prev = -1.0;
    for (double lambda : {0.0, 0.5, 1.0, 2.0, 10.0}) {
      const double d = jsg_loss_closed(net, one_row_batch(), config(0.5, lambda, 1, 1)).divergence_term;
      EXPECT_TRUE(std::isfinite(d)) << rho;
      EXPECT_GE(d, prev);
      prev = d;
    }
    // Continuity: refining the alpha grid tenfold shrinks the largest jump
    // roughly tenfold.
    auto max_jump = [&](int points) {
      double jump = 0.0;
      double last = jsg_loss_closed(net, one_row_batch(), config(0.0, 1.0, 1, 1)).divergence_term;
      for (int i = 1; i <= points; ++i) {
        const double d =
            jsg_loss_closed(net, one_row_batch(), config(static_cast<double>(i) / points, 1.0, 1, 1)).divergence_term;
        EXPECT_TRUE(std::isfinite(d)) << rho << ' ' << i;
        jump = std::max(jump, std::abs(d - last));
        last = d;
      }
      return jump;
    };
    const double coarse = max_jump(1000);
    const double fine = max_jump(10000);
    EXPECT_LT(fine, 0.2 * coarse) << rho;
  }
}

TEST(JsgLossClosed, ExceedsKlAboveThresholdWhenVarianceConditionHolds) {
  // Weight and bias both N(0.3, 0.01) against the prior N(0, 0.1).
  const double rho = std::log(std::expm1(0.1));
  VariationalDenseLayer layer;
  layer.shape = {1, 1, Activation::identity};
  layer.weights = {{0.3}, {rho}};
  layer.biases = {{0.3}, {rho}};
  const BayesianNetwork net({layer}, DiagonalGaussian::univariate(0.0, std::sqrt(0.1)));
  const auto q = DiagonalGaussian::univariate(0.3, 0.1);
  const auto p = DiagonalGaussian::univariate(0.0, std::sqrt(0.1));
  ASSERT_TRUE(variance_condition_holds(q, p));
  const double threshold = alpha_threshold(q, p);
  ASSERT_LT(threshold, 1.0);
  const double kl = kl_loss(net, one_row_batch(), config(0.0, 1.0, 1, 1)).divergence_term;
  bool found = false;
  for (int i = 1; i <= 100; ++i) {
    const double alpha = i / 100.0;
    if (alpha <= threshold) continue;
    found |= jsg_loss_closed(net, one_row_batch(), config(alpha, 1.0, 1, 1)).divergence_term > kl;
  }
  EXPECT_TRUE(found);
}
