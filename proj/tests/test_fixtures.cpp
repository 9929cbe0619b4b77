#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "jsbnn/divergence.hpp"
#include "jsbnn/errors.hpp"
#include "jsbnn/fixtures.hpp"
#include "jsbnn/loss.hpp"
#include "test_support.hpp"

using namespace jsbnn;
using namespace jsbnn::fixtures;

namespace {

std::pair<DiagonalGaussian, DiagonalGaussian> random_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mean(-3.0, 3.0), log_sd(std::log(0.1), std::log(3.0));
  return {DiagonalGaussian::univariate(mean(rng), std::exp(log_sd(rng))),
          DiagonalGaussian::univariate(mean(rng), std::exp(log_sd(rng)))};
}

}  // namespace

TEST(AdaptiveSimpson, KnownIntegrals) {
  EXPECT_NEAR(adaptive_simpson([](double x) { return std::sin(x); }, 0.0, std::numbers::pi, 1e-12), 2.0, 1e-11);
  EXPECT_NEAR(adaptive_simpson([](double x) { return std::exp(-x * x); }, -8.0, 8.0, 1e-13),
              std::sqrt(std::numbers::pi), 1e-12);
  EXPECT_EQ(adaptive_simpson([](double) { return 1.0; }, 2.0, 2.0, 1e-12), 0.0);
}

TEST(AdaptiveSimpson, NonConvergenceIsAnOracleError) {
  EXPECT_THROW(adaptive_simpson([](double x) { return std::sin(1.0 / x); }, 1e-9, 1.0, 1e-14, 6), NumericError);
}

TEST(QuadratureJsa, IdenticalDistributionsGiveZero) {
  for (double alpha : {0.0, 0.3, 0.5, 1.0}) {
    const auto g = DiagonalGaussian::univariate(0.7, 1.9);
    EXPECT_NEAR(quadrature_jsa(g, g, alpha), 0.0, 1e-10) << alpha;
  }
}

TEST(QuadratureJsa, BelowBoundOnRandomPairs) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 100; ++t) {
    const auto [q, p] = random_pair(rng);
    for (double alpha : {0.1, 0.5, 0.9}) EXPECT_LE(quadrature_jsa(q, p, alpha), jsa_bound(alpha) + 1e-9);
  }
}

TEST(QuadratureJsa, AlphaZeroIsKl) {
  std::mt19937_64 rng(32);
  for (int t = 0; t < 20; ++t) {
    const auto [q, p] = random_pair(rng);
    EXPECT_NEAR(quadrature_jsa(q, p, 0.0), kl_gaussian(q, p), 1e-8);
    EXPECT_NEAR(quadrature_kl(q, p), kl_gaussian(q, p), 1e-8);
  }
}

TEST(QuadratureJsa, RejectsMultivariateAndBadAlpha) {
  const auto g = DiagonalGaussian::isotropic(2, 0.0, 1.0);
  const auto u = DiagonalGaussian::univariate(0.0, 1.0);
  EXPECT_THROW(quadrature_jsa(g, g, 0.5), std::invalid_argument);
  EXPECT_THROW(quadrature_jsa(u, u, 1.5), std::invalid_argument);
}

TEST(QuadratureJsg, AgreesWithTheKlLimits) {
  const auto q = DiagonalGaussian::univariate(-1.2, 0.4);
  const auto p = DiagonalGaussian::univariate(0.7, 2.1);
  EXPECT_NEAR(quadrature_jsg(q, p, 0.0), kl_gaussian(q, p), 1e-8);
  EXPECT_NEAR(quadrature_jsg(q, p, 1.0), kl_gaussian(p, q), 1e-8);
}

TEST(FiniteDiff, QuadraticIsExact) {
  auto f = [](std::span<const double> x) { return 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1] + x[1]; };
  const Vector g = finite_diff(f, Vector{1.5, -2.0}, 1e-3);
  EXPECT_NEAR(g[0], 6.0 * 1.5 + 4.0, 1e-9);
  EXPECT_NEAR(g[1], -3.0 - 2.0 + 1.0, 1e-9);
  EXPECT_THROW(finite_diff(f, Vector{1.0, 1.0}, 0.0), std::invalid_argument);
}

TEST(FiniteDiff, SecondOrderConvergence) {
  auto f = [](std::span<const double> x) { return std::exp(std::sin(x[0])); };
  const double x0 = 0.8;
  const double exact = std::cos(x0) * std::exp(std::sin(x0));
  for (double h : {1e-1, 5e-2, 2.5e-2}) {
    const double e1 = std::abs(finite_diff(f, Vector{x0}, h)[0] - exact);
    const double e2 = std::abs(finite_diff(f, Vector{x0}, h / 2)[0] - exact);
    EXPECT_NEAR(e1 / e2, 4.0, 0.1) << h;
  }
}

TEST(FiniteDiff, OneWeightKlLossMeanDerivative) {
  VariationalDenseLayer layer;
  layer.shape = {1, 1, Activation::identity};
  const double rho = std::log(std::numbers::e - 1.0);
  layer.weights = {{5.0}, {rho}};
  layer.biases = {{0.0}, {rho}};
  const BayesianNetwork net({layer}, DiagonalGaussian::univariate(0.0, 1.0));
  const Batch batch{{{0.3}}, {0}};
  DivergenceConfig cfg;
  const LossNoise noise = draw_loss_noise(2, 1, false, 3);
  auto f = [&](std::span<const double> mu) {
    BayesianNetwork moved = net;
    moved.set_flat(mu, net.flat_rho());
    return loss_with_noise(LossKind::kl, moved, batch, cfg, noise).divergence_term;
  };
  EXPECT_NEAR(finite_diff(f, net.flat_mu(), 1e-4)[0], 5.0, 1e-6);
}

TEST(RelativeError, UsesTheFloor) {
  EXPECT_NEAR(relative_error(1.0, 1.1, 1e-6), 1.0 / 11.0, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 2e-12, 1e-6), 1e-6);
  EXPECT_THROW(max_relative_error(Vector{1.0}, Vector{1.0, 2.0}, 1e-6), std::invalid_argument);
}

TEST(BruteForceAuc, SmallCase) {
  EXPECT_NEAR(brute_force_auc(Vector{0.9, 0.8, 0.7, 0.4, 0.3, 0.1}, std::vector<std::size_t>{1, 1, 0, 1, 0, 0}),
              8.0 / 9.0, 1e-15);
  EXPECT_EQ(brute_force_auc(Vector{0.5, 0.5}, std::vector<std::size_t>{1, 0}), 0.5);
  EXPECT_THROW(brute_force_auc(Vector{0.5}, std::vector<std::size_t>{1}), std::domain_error);
}

TEST(GoldenCases, ShippedFilesLoad) {
  const auto net = load_golden(testkit::fixture_path("network.json"));
  EXPECT_EQ(net.size(), 4u);
  const auto div = load_golden(testkit::fixture_path("divergence.json"));
  EXPECT_EQ(div.size(), 50u);
  for (const auto& c : div) {
    EXPECT_EQ(c.source, CaseSource::derived);
    EXPECT_FALSE(c.oracle.empty());
  }
}

TEST(GoldenCases, ProvenanceRulesAreEnforced) {
  nlohmann::json c = {{"id", "x"}, {"inputs", {}}, {"expected", {}}, {"source", "derived"}};
  EXPECT_THROW(golden_case_from_json(c), DataError);
  c["oracle"] = "scipy";
  EXPECT_NO_THROW(golden_case_from_json(c));
  c["source"] = "published";
  EXPECT_THROW(golden_case_from_json(c), DataError);
  c["reference"] = "Table 2";
  EXPECT_EQ(golden_case_from_json(c).source, CaseSource::published);
  c["source"] = "guess";
  EXPECT_THROW(golden_case_from_json(c), DataError);
  c["source"] = "trivial";
  c.erase("id");
  EXPECT_THROW(golden_case_from_json(c), DataError);
  EXPECT_THROW(load_golden("/nonexistent/golden.json"), DataError);
}
