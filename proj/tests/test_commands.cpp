#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "jsbnn/commands.hpp"
#include "test_support.hpp"

using namespace jsbnn;
using namespace jsbnn::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "jsbnn_commands" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

std::string config_error(const std::string& text) {
  try {
    (void)parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

const char* kSmallConfig = R"({
  "loss": "jsg_closed",
  "network": {"hidden": [8]},
  "dataset": {"n_per_class": 60, "centers": [[0, 0], [3, 3]], "spread": 0.4},
  "divergence": {"alpha": 0.5, "lambda": 1.0},
  "optimizer": {"learning_rate": 0.005},
  "training": {"epochs": 2, "batch_size": 16, "eval_samples": 10, "patience": 0}
})";

ExperimentConfig small_config(const fs::path& out, std::uint64_t seed = 3) {
  auto c = parse_config_text(kSmallConfig);
  c.output_dir = out.string();
  c.seed = seed;
  return c;
}

/// Least-squares fit of a + b x + c x^2; returns c.
double quadratic_coefficient(const std::vector<double>& x, const std::vector<double>& y) {
  double s[5] = {0, 0, 0, 0, 0}, t[3] = {0, 0, 0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    double p = 1.0;
    for (int k = 0; k < 5; ++k, p *= x[i]) s[k] += p;
    t[0] += y[i];
    t[1] += y[i] * x[i];
    t[2] += y[i] * x[i] * x[i];
  }
  // Cramer's rule on the 3x3 normal equations.
  auto det = [](double a, double b, double c, double d, double e, double f, double g, double h, double i) {
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
  };
  const double d = det(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4]);
  return det(s[0], s[1], t[0], s[1], s[2], t[1], s[2], s[3], t[2]) / d;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(JSBNN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// 2 -> 2 softmax net scoring class 1 by x0 - x1 with tiny posterior noise.
BayesianNetwork separating_net(double rho) {
  VariationalDenseLayer layer;
  layer.shape = {2, 2, Activation::softmax};
  layer.weights = {{-4.0, 4.0, 4.0, -4.0}, Vector(4, rho)};
  layer.biases = {{0.0, 0.0}, Vector(2, rho)};
  return BayesianNetwork({layer}, DiagonalGaussian::univariate(0.0, 1.0));
}

void write_dataset(const fs::path& p, const std::vector<Vector>& x, const std::vector<std::size_t>& y) {
  Dataset ds;
  ds.features = x;
  ds.labels = y;
  ds.split_tags.assign(y.size(), Split::test);
  save_csv(ds, p.string());
}

}  // namespace

TEST(Provenance, HashAndHeader) {
  EXPECT_EQ(hex64(fnv1a("")), "cbf29ce484222325");
  EXPECT_EQ(hex64(fnv1a("a")), "af63dc4c8601ec8c");
  const auto p = provenance("train", {{"x", 1}}, 42);
  EXPECT_EQ(p.csv_header().rfind("# jsbnn 0.1.0 command=train config_hash=", 0), 0u);
  EXPECT_NE(p.csv_header().find(" seed=42\n"), std::string::npos);
  EXPECT_NE(provenance("train", {{"x", 2}}, 42).config_hash, p.config_hash);
}

TEST(Config, DefaultsAndRoundTrip) {
  const auto d = parse_config_text("{}");
  EXPECT_EQ(d.loss, LossKind::jsg_closed);
  EXPECT_EQ(d.training.patience, 5);
  EXPECT_EQ(d.network.hidden, (std::vector<std::size_t>{16}));

  const auto c = parse_config_text(R"({
    "seed": 9, "output_dir": "x", "loss": "jsa_mc",
    "network": {"hidden": [4, 5], "prior_mu": 0.1, "prior_sigma": 0.3, "init_mu_std": 0.2, "init_rho": -3},
    "dataset": {"n_per_class": 10, "centers": [[0, 1], [2, 3], [4, 5]], "spread": 0.2, "bias_ratio": 2.52,
                "normalize": false, "fractions": [0.5, 0.25, 0.25], "noise_mean": 0.1, "noise_sigma": 0.6},
    "divergence": {"alpha": 0.25, "lambda": 2, "mc_samples": 3},
    "optimizer": {"learning_rate": 0.01, "momentum": 0.9, "schedule": [[3, 0.1], [5, 0.5]]},
    "training": {"epochs": 7, "batch_size": 8, "minibatch_scaling": false, "eval_samples": 11, "patience": 2},
    "search": {"alpha_range": [0.1, 0.9], "lambda_choices": [0.5, 1], "lr_choices": [0.001], "trials": 6,
               "threads": 2}
  })");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.dataset.centers.size(), 3u);
  EXPECT_EQ(c.optimizer.schedule, (std::vector<ScheduleEntry>{{3, 0.1}, {5, 0.5}}));
  EXPECT_EQ(c.search_threads, 2u);
  const auto j = to_json(c);
  EXPECT_EQ(to_json(parse_config(j)), j);
  EXPECT_EQ(to_json(parse_config(to_json(d))), to_json(d));
}

TEST(Config, ErrorsCarryFieldPaths) {
  EXPECT_EQ(config_error(R"({"divergence": {"alpha": 2}})").rfind("divergence.alpha:", 0), 0u);
  EXPECT_EQ(config_error(R"({"training": {"epoch": 2}})"), "training.epoch: unknown field");
  EXPECT_EQ(config_error(R"({"training": {"epochs": 1.5}})").rfind("training.epochs:", 0), 0u);
  EXPECT_EQ(config_error(R"({"lossy": "kl"})"), "lossy: unknown field");
  EXPECT_EQ(config_error(R"({"loss": "elbo"})").rfind("loss:", 0), 0u);
  EXPECT_EQ(config_error(R"({"dataset": {"kind": "csv", "path": "/nonexistent.csv"}})").rfind("dataset.path:", 0),
            0u);
  EXPECT_EQ(config_error(R"({"dataset": {"centers": [[0, 0], [1]]}})").rfind("dataset.centers[1]:", 0), 0u);
  EXPECT_EQ(config_error(R"({"optimizer": {"schedule": [[1, -1]]}})").rfind("optimizer.schedule[0]:", 0), 0u);
  EXPECT_EQ(config_error(R"({"network": {"hidden": [0]}})").rfind("network.hidden:", 0), 0u);
  EXPECT_FALSE(config_error("{not json").empty());
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(CmdTrain, TwoEpochsWriteEveryArtifactDeterministically) {
  const auto a = scratch("train_a");
  const auto b = scratch("train_b");
  std::ostringstream log;
  ASSERT_EQ(cmd_train(small_config(a), log), kOk) << log.str();
  ASSERT_EQ(cmd_train(small_config(b), log), kOk);
  const auto trace = lines(slurp(a / "trace.csv"));
  ASSERT_EQ(trace.size(), 4u);
  EXPECT_EQ(trace[0].rfind("# jsbnn", 0), 0u);
  EXPECT_EQ(trace[1], kTraceColumns);
  EXPECT_EQ(lines(slurp(a / "steps.csv"))[1], kStepColumns);
  for (const char* name : {"trace.csv", "steps.csv", "checkpoint.json", "last_checkpoint.json", "test.csv",
                           "dataset_manifest.json", "summary.json"}) {
    ASSERT_TRUE(fs::exists(a / name)) << name;
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
  }
  const auto manifest = testkit::read_json((a / "dataset_manifest.json").string());
  EXPECT_EQ(manifest.at("split_sizes").at("train"), 72);
  EXPECT_NO_THROW(load_checkpoint((a / "checkpoint.json").string()));

  const auto c = scratch("train_c");
  ASSERT_EQ(cmd_train(small_config(c, 4), log), kOk);
  EXPECT_NE(slurp(a / "steps.csv"), slurp(c / "steps.csv"));
}

TEST(CmdTrain, ZeroLearningRateGivesFlatTrace) {
  const auto dir = scratch("train_flat");
  auto c = small_config(dir);
  c.optimizer.learning_rate = 0.0;
  c.training.epochs = 3;
  std::ostringstream log;
  ASSERT_EQ(cmd_train(c, log), kOk);
  const auto before = load_checkpoint((dir / "last_checkpoint.json").string());
  EXPECT_EQ(before.flat_mu(), build_network(c, 2, 2).flat_mu());
  const auto rows = lines(slurp(dir / "trace.csv"));
  ASSERT_EQ(rows.size(), 5u);
  auto div = [](const std::string& row) {
    std::stringstream ss(row);
    std::string cell;
    for (int i = 0; i < 4; ++i) std::getline(ss, cell, ',');
    return cell;
  };
  EXPECT_EQ(div(rows[2]), div(rows[3]));
  EXPECT_EQ(div(rows[3]), div(rows[4]));
}

TEST(CmdTrain, NumericAbortExitCode) {
  const auto dir = scratch("train_abort");
  auto c = small_config(dir);
  c.loss = LossKind::kl;
  c.optimizer.learning_rate = 1e6;
  c.training.epochs = 20;
  std::ostringstream log;
  EXPECT_EQ(cmd_train(c, log), kNumericAbort);
  EXPECT_NE(log.str().find("numeric abort"), std::string::npos);
  EXPECT_TRUE(testkit::read_json((dir / "summary.json").string()).at("aborted").get<bool>());
  EXPECT_NO_THROW(load_checkpoint((dir / "last_checkpoint.json").string()));
}

TEST(CmdEval, PerfectSeparation) {
  const auto dir = scratch("eval_perfect");
  save_checkpoint(separating_net(-30.0), (dir / "net.json").string());
  write_dataset(dir / "data.csv", {{1.0, 0.0}, {0.9, 0.2}, {0.0, 1.0}, {0.1, 0.8}}, {1, 1, 0, 0});
  std::ostringstream out;
  ASSERT_EQ(cmd_eval((dir / "net.json").string(), (dir / "data.csv").string(), 10, 1, (dir / "out").string(), out),
            kOk);
  const auto m = testkit::read_json((dir / "out" / "metrics.json").string());
  EXPECT_EQ(m.at("accuracy"), 1.0);
  EXPECT_EQ(m.at("auc"), 1.0);
  const auto roc = lines(slurp(dir / "out" / "roc.csv"));
  EXPECT_EQ(roc[0].rfind("# jsbnn", 0), 0u);
  EXPECT_EQ(roc[1], "threshold,fpr,tpr");
}

TEST(CmdEval, MoreSamplesReduceAccuracySpread) {
  const auto dir = scratch("eval_spread");
  save_checkpoint(separating_net(1.0), (dir / "net.json").string());
  std::vector<Vector> x;
  std::vector<std::size_t> y;
  for (int i = 0; i < 40; ++i) {
    const double d = (i - 19.5) / 40.0;
    x.push_back({0.5 + d, 0.5 - d});
    y.push_back(d > 0.0);
  }
  write_dataset(dir / "data.csv", x, y);
  auto spread = [&](int n) {
    std::vector<double> acc;
    for (std::uint64_t s = 0; s < 20; ++s) {
      std::ostringstream out;
      cmd_eval((dir / "net.json").string(), (dir / "data.csv").string(), n, s, "", out);
      acc.push_back(nlohmann::json::parse(out.str()).at("accuracy").get<double>());
    }
    double mean = 0.0, var = 0.0;
    for (double a : acc) mean += a / 20.0;
    for (double a : acc) var += (a - mean) * (a - mean) / 19.0;
    return var;
  };
  EXPECT_LT(spread(100), spread(1));
}

TEST(CmdEval, InputErrors) {
  const auto dir = scratch("eval_errors");
  std::ostringstream out;
  write_dataset(dir / "data.csv", {{1.0, 0.0}, {0.0, 1.0}}, {1, 0});
  EXPECT_THROW(cmd_eval((dir / "missing.json").string(), (dir / "data.csv").string(), 10, 1, "", out), DataError);
  EXPECT_THROW(cmd_eval(dir.string(), (dir / "data.csv").string(), 10, 1, "", out), DataError);
  EXPECT_THROW(load_csv(dir.string()), DataError);
  EXPECT_THROW(load_config(dir.string()), ConfigError);
  auto net = BayesianNetwork::create({3, 2}, DiagonalGaussian::univariate(0.0, 1.0), 1);
  save_checkpoint(net, (dir / "net3.json").string());
  try {
    cmd_eval((dir / "net3.json").string(), (dir / "data.csv").string(), 10, 1, "", out);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
  }
  EXPECT_THROW(cmd_eval((dir / "net3.json").string(), (dir / "data.csv").string(), 0, 1, "", out), ConfigError);
}

TEST(DivergenceCurve, GrowthAgainstTheKlBaseline) {
  const Vector mus = linspace(-1.0, 1.0, 41);
  const auto rows = divergence_curve(0.01, 0.0, 0.1, 0.5, 1.0, mus, 2000, 5);
  ASSERT_EQ(rows.size(), 41u);
  EXPECT_NEAR(rows[20].mu, 0.0, 1e-15);
  EXPECT_NEAR(rows[20].kl, 0.7012925464970229, 1e-7);
  std::vector<double> x, kl, jsg;
  for (const auto& r : rows) {
    x.push_back(r.mu);
    kl.push_back(r.kl);
    jsg.push_back(r.jsg_closed);
    if (std::abs(r.mu) >= 0.2 - 1e-12) {
      EXPECT_GE(r.jsg_closed, r.kl) << r.mu;
    }
    EXPECT_TRUE(std::isfinite(r.jsa_mc_scaled));
  }
  EXPECT_NEAR(quadratic_coefficient(x, kl), 5.0, 0.05);
  EXPECT_NEAR(quadratic_coefficient(x, jsg), 11.4772727, 0.115);
  EXPECT_EQ(divergence_curve(0.01, 0.0, 0.1, 0.5, 1.0, mus, 50, 5)[3].jsa_mc_scaled,
            divergence_curve(0.01, 0.0, 0.1, 0.5, 1.0, mus, 50, 5)[3].jsa_mc_scaled);
  EXPECT_THROW(divergence_curve(0.0, 0.0, 0.1, 0.5, 1.0, mus, 10, 5), std::invalid_argument);
}

TEST(Linspace, Endpoints) {
  EXPECT_EQ(linspace(-1.0, 1.0, 5), (Vector{-1.0, -0.5, 0.0, 0.5, 1.0}));
  EXPECT_EQ(linspace(2.0, 3.0, 1), Vector{2.0});
  EXPECT_THROW(linspace(0.0, 1.0, 0), std::invalid_argument);
}

TEST(McConvergence, ErrorShrinksWithSamples) {
  const auto q = DiagonalGaussian::univariate(5.0, 1.0);
  const auto p = DiagonalGaussian::univariate(0.0, 1.0);
  const std::vector<int> grid{1, 10, 600, 1'000'000};
  const auto rows = mc_convergence(q, p, 0.5, grid, 5, 13);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) EXPECT_EQ(r.closed_form, 3.125);
  EXPECT_TRUE(std::isfinite(rows[0].mean_relative_error));
  EXPECT_LE(rows[2].mean_relative_error, 0.05);
  EXPECT_LT(rows[3].mean_relative_error, 0.005);
  EXPECT_THROW(mc_convergence(q, p, 0.5, std::vector<int>{10, 5}, 5, 1), std::invalid_argument);
  EXPECT_THROW(mc_convergence(q, p, 0.5, grid, 0, 1), std::invalid_argument);
}

TEST(VerifyTheorems, PassesOnRandomPairs) {
  TheoremOptions opt;
  opt.trials = 100;
  opt.seed = 3;
  const auto r = verify_theorems(opt);
  EXPECT_TRUE(r.passed());
  ASSERT_EQ(r.checks.size(), 5u);
  EXPECT_EQ(r.checks[0].checks, 900);
  EXPECT_EQ(r.checks[2].checks, 100);
}

TEST(VerifyTheorems, InjectedBugIsReportedWithThePair) {
  TheoremOptions opt;
  opt.trials = 5;
  opt.inject_bug = true;
  const auto r = verify_theorems(opt);
  EXPECT_FALSE(r.passed());
  ASSERT_FALSE(r.checks[2].violations.empty());
  EXPECT_NE(r.checks[2].violations[0].find("q=N("), std::string::npos);
  std::ostringstream out;
  write_theorem_report(r, out);
  EXPECT_NE(out.str().find("FAIL threshold_variance_equivalence"), std::string::npos);
}

TEST(VerifyTheorems, SingleTrial) {
  TheoremOptions opt;
  opt.trials = 1;
  const auto r = verify_theorems(opt);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.checks[1].checks, 1);
  opt.trials = 0;
  EXPECT_THROW(verify_theorems(opt), std::invalid_argument);
}

TEST(CmdSearch, WritesOneRowPerTrial) {
  const auto dir = scratch("search");
  auto c = small_config(dir);
  c.training.epochs = 1;
  c.search.trials = 3;
  c.search.lr_choices = {1e-3, 5e-3};
  std::ostringstream log;
  ASSERT_EQ(cmd_search(c, log), kOk) << log.str();
  const auto rows = lines(slurp(dir / "search.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[1], kSearchColumns);
  EXPECT_NE(log.str().find("best trial"), std::string::npos);

  c.search.lr_choices = {1e6};
  c.loss = LossKind::kl;
  c.training.epochs = 20;
  EXPECT_EQ(cmd_search(c, log), kNumericAbort);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const auto log = dir / "log.txt";
  EXPECT_EQ(run_cli("--help", log), 0);
  EXPECT_NE(slurp(log).find("Exit codes"), std::string::npos);

  std::ofstream(dir / "small.json") << kSmallConfig;
  EXPECT_EQ(run_cli("train --config " + (dir / "small.json").string(), log), 2);  // --seed is mandatory
  EXPECT_EQ(run_cli("train --config " + (dir / "small.json").string() + " --seed 1 --output-dir " +
                        (dir / "run").string(),
                    log),
            0)
      << slurp(log);
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.json"));
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "run" / "checkpoint.json").string() + " --data " +
                        (dir / "run" / "test.csv").string() + " --seed 2",
                    log),
            0)
      << slurp(log);

  std::ofstream(dir / "bad.json") << R"({"training": {"epochz": 1}})";
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string() + " --seed 1", log), 2);
  EXPECT_NE(slurp(log).find("training.epochz"), std::string::npos);
  EXPECT_EQ(run_cli("train --config " + (dir / "small.json").string() + " --seed 1 --loss kl --lr 1e6 --epochs 20 "
                        "--output-dir " + (dir / "abort").string(),
                    log),
            3);
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "nope.json").string() + " --data " +
                        (dir / "run" / "test.csv").string() + " --seed 2",
                    log),
            2);
  EXPECT_EQ(run_cli("verify-theorems --trials 3 --inject-bug", log), 4);
  EXPECT_EQ(run_cli("verify-theorems --trials 3", log), 0);
  EXPECT_EQ(run_cli("mc-convergence --grid 10,5", log), 2);

  EXPECT_EQ(run_cli("divergence-curve --points 5 --mc-samples 100 --seed 1 --out " + (dir / "curve.csv").string(),
                    log),
            0);
  const auto curve = lines(slurp(dir / "curve.csv"));
  ASSERT_EQ(curve.size(), 7u);
  EXPECT_EQ(curve[0].rfind("# jsbnn 0.1.0 command=divergence-curve", 0), 0u);
  EXPECT_EQ(curve[1], kCurveColumns);
}
