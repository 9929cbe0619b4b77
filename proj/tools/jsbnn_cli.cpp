#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jsbnn/commands.hpp"

namespace {

using namespace jsbnn;
using namespace jsbnn::cli;

const char* kFooter = R"(Exit codes: 0 success, 2 config/input error, 3 numeric abort, 4 verification failure.

Every CSV starts with one '# jsbnn <version> command=... config_hash=... seed=...' line,
followed by a header row with these fixed columns:
  trace.csv          epoch,train_acc,val_acc,divergence_term,nll_term,total,lr
  steps.csv          step,divergence_term,nll_term,total,minibatch_scale
  roc.csv            threshold,fpr,tpr
  divergence-curve   mu,kl,jsg_closed,jsa_mc_scaled
  mc-convergence     n,closed_form,mean_estimate,mean_relative_error
  search.csv         trial,alpha,lambda,learning_rate,seed,val_acc
Dataset CSVs use f0,...,fk,label.)";

struct Overrides {
  std::optional<std::string> output_dir;
  std::optional<int> epochs;
  std::optional<std::string> loss;
  std::optional<double> alpha;
  std::optional<double> lambda;
  std::optional<double> lr;
  std::optional<int> mc_samples;
  std::optional<int> patience;
  std::optional<int> trials;
  std::optional<unsigned> threads;

  void add_to(CLI::App* app) {
    app->add_option("--output-dir", output_dir, "Directory for artifacts");
    app->add_option("--epochs", epochs, "Epoch budget")->check(CLI::PositiveNumber);
    app->add_option("--loss", loss, "kl, jsg_closed, jsg_mc or jsa_mc");
    app->add_option("--alpha", alpha, "Skew parameter in [0, 1]")->check(CLI::Range(0.0, 1.0));
    app->add_option("--lambda", lambda, "Divergence weight")->check(CLI::NonNegativeNumber);
    app->add_option("--lr", lr, "Learning rate")->check(CLI::NonNegativeNumber);
    app->add_option("--mc-samples", mc_samples, "Monte-Carlo samples per step")->check(CLI::PositiveNumber);
    app->add_option("--patience", patience, "Early-stopping patience in epochs, 0 disables")
        ->check(CLI::NonNegativeNumber);
  }

  void apply(ExperimentConfig& c) const {
    if (output_dir) c.output_dir = *output_dir;
    if (epochs) c.training.epochs = *epochs;
    if (loss) {
      try {
        c.loss = loss_kind_from_string(*loss);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("--loss", e.what());
      }
    }
    if (alpha) c.divergence.alpha = *alpha;
    if (lambda) c.divergence.lambda = *lambda;
    if (lr) c.optimizer.learning_rate = *lr;
    if (mc_samples) c.divergence.mc_samples = *mc_samples;
    if (patience) c.training.patience = *patience;
    if (trials) c.search.trials = *trials;
    if (threads) c.search_threads = *threads;
  }
};

std::ostream& output_stream(const std::string& path, std::ofstream& file) {
  if (path.empty()) return std::cout;
  file.open(path);
  if (!file) throw DataError("cannot write '" + path + "'");
  return file;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericAbort;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::domain_error& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational Bayesian neural networks with KL, JS-G and JS-A regularization"};
  app.footer(kFooter);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config_path;
  std::uint64_t seed = 0;
  Overrides train_over;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a JSON experiment config");
  train_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seed, "Experiment seed (overrides the config)")->required();
  train_over.add_to(train_cmd);

  std::string checkpoint, data_path, eval_out;
  int eval_samples = 100;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a labelled CSV");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  eval_cmd->add_option("--data", data_path, "Dataset CSV (f0..fk,label)")->required();
  eval_cmd->add_option("--samples", eval_samples, "Predictive Monte-Carlo samples")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed, "Sampling seed")->required();
  eval_cmd->add_option("--out", eval_out, "Directory for metrics.json and roc.csv (default: print JSON)");

  double q_var = 0.01, p_mu = 0.0, p_var = 0.1, curve_alpha = 0.5, curve_lambda = 1.0, mu_min = -1.0, mu_max = 1.0;
  int points = 41, curve_samples = 10000;
  std::uint64_t curve_seed = 0;
  std::string curve_out;
  auto* curve_cmd = app.add_subcommand("divergence-curve", "KL, JS-G and lambda*JS-A of N(mu, q_var) from p");
  curve_cmd->add_option("--q-var", q_var, "Variance of q")->check(CLI::PositiveNumber);
  curve_cmd->add_option("--p-mu", p_mu, "Mean of p");
  curve_cmd->add_option("--p-var", p_var, "Variance of p")->check(CLI::PositiveNumber);
  curve_cmd->add_option("--alpha", curve_alpha, "Skew parameter")->check(CLI::Range(0.0, 1.0));
  curve_cmd->add_option("--lambda", curve_lambda, "Scale of the JS-A column")->check(CLI::NonNegativeNumber);
  curve_cmd->add_option("--mu-min", mu_min, "Grid start");
  curve_cmd->add_option("--mu-max", mu_max, "Grid end");
  curve_cmd->add_option("--points", points, "Grid points")->check(CLI::PositiveNumber);
  curve_cmd->add_option("--mc-samples", curve_samples, "Samples per JS-A estimate")->check(CLI::PositiveNumber);
  curve_cmd->add_option("--seed", curve_seed, "Sampling seed");
  curve_cmd->add_option("--out", curve_out, "Output CSV (default: stdout)");

  double cq_mu = 5.0, cq_var = 1.0, cp_mu = 0.0, cp_var = 1.0, conv_alpha = 0.5;
  std::vector<int> grid{10, 50, 100, 300, 600, 1000, 10000};
  int conv_seeds = 20;
  std::uint64_t conv_seed = 0;
  std::string conv_out;
  auto* conv_cmd = app.add_subcommand("mc-convergence", "Seed-averaged error of sampled JS-G versus closed form");
  conv_cmd->add_option("--q-mu", cq_mu, "Mean of q");
  conv_cmd->add_option("--q-var", cq_var, "Variance of q")->check(CLI::PositiveNumber);
  conv_cmd->add_option("--p-mu", cp_mu, "Mean of p");
  conv_cmd->add_option("--p-var", cp_var, "Variance of p")->check(CLI::PositiveNumber);
  conv_cmd->add_option("--alpha", conv_alpha, "Skew parameter")->check(CLI::Range(0.0, 1.0));
  conv_cmd->add_option("--grid", grid, "Ascending sample sizes")->delimiter(',')->check(CLI::PositiveNumber);
  conv_cmd->add_option("--seeds", conv_seeds, "Seeds per sample size")->check(CLI::PositiveNumber);
  conv_cmd->add_option("--seed", conv_seed, "Base seed");
  conv_cmd->add_option("--out", conv_out, "Output CSV (default: stdout)");

  TheoremOptions theorem_opt;
  auto* verify_cmd = app.add_subcommand("verify-theorems", "Randomized checks of the divergence theorems");
  verify_cmd->add_option("--trials", theorem_opt.trials, "Random Gaussian pairs")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--seed", theorem_opt.seed, "Seed");
  verify_cmd->add_flag("--inject-bug", theorem_opt.inject_bug, "Negate the variance condition (harness self-test)");

  std::string search_config;
  std::uint64_t search_seed = 0;
  Overrides search_over;
  std::optional<int> search_trials;
  std::optional<unsigned> search_threads;
  auto* search_cmd = app.add_subcommand("search", "Seeded random search over alpha, lambda and learning rate");
  search_cmd->add_option("--config", search_config, "Experiment config (JSON) with a search section")
      ->required()
      ->check(CLI::ExistingFile);
  search_cmd->add_option("--seed", search_seed, "Search seed")->required();
  search_cmd->add_option("--trials", search_trials, "Number of trials")->check(CLI::PositiveNumber);
  search_cmd->add_option("--threads", search_threads, "Parallel trials")->check(CLI::PositiveNumber);
  search_cmd->add_option("--output-dir", search_over.output_dir, "Directory for search.csv");
  search_cmd->add_option("--epochs", search_over.epochs, "Epoch budget per trial")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*train_cmd) {
    return guarded([&] {
      ExperimentConfig c = load_config(config_path);
      c.seed = seed;
      train_over.apply(c);
      return cmd_train(c, std::cout);
    });
  }
  if (*eval_cmd) {
    return guarded([&] { return cmd_eval(checkpoint, data_path, eval_samples, eval_seed, eval_out, std::cout); });
  }
  if (*curve_cmd) {
    return guarded([&] {
      const Vector mus = linspace(mu_min, mu_max, points);
      const auto rows = divergence_curve(q_var, p_mu, p_var, curve_alpha, curve_lambda, mus, curve_samples,
                                         curve_seed);
      std::ofstream file;
      std::ostream& out = output_stream(curve_out, file);
      const nlohmann::json params = {{"q_var", q_var}, {"p_mu", p_mu}, {"p_var", p_var},
                                     {"alpha", curve_alpha}, {"lambda", curve_lambda}, {"mu", mus},
                                     {"mc_samples", curve_samples}};
      out << provenance("divergence-curve", params, curve_seed).csv_header() << kCurveColumns << '\n'
          << std::setprecision(17);
      for (const auto& r : rows) out << r.mu << ',' << r.kl << ',' << r.jsg_closed << ',' << r.jsa_mc_scaled << '\n';
      return static_cast<int>(kOk);
    });
  }
  if (*conv_cmd) {
    return guarded([&] {
      const auto q = DiagonalGaussian::from_variance({cq_mu}, {cq_var});
      const auto p = DiagonalGaussian::from_variance({cp_mu}, {cp_var});
      const auto rows = mc_convergence(q, p, conv_alpha, grid, conv_seeds, conv_seed);
      std::ofstream file;
      std::ostream& out = output_stream(conv_out, file);
      const nlohmann::json params = {{"q", {cq_mu, cq_var}}, {"p", {cp_mu, cp_var}}, {"alpha", conv_alpha},
                                     {"grid", grid}, {"seeds", conv_seeds}};
      out << provenance("mc-convergence", params, conv_seed).csv_header() << kConvergenceColumns << '\n'
          << std::setprecision(17);
      for (const auto& r : rows) {
        out << r.n << ',' << r.closed_form << ',' << r.mean_estimate << ',' << r.mean_relative_error << '\n';
      }
      return static_cast<int>(kOk);
    });
  }
  if (*verify_cmd) {
    return guarded([&] {
      const TheoremReport report = verify_theorems(theorem_opt);
      const nlohmann::json params = {{"trials", theorem_opt.trials}, {"inject_bug", theorem_opt.inject_bug}};
      std::cout << provenance("verify-theorems", params, theorem_opt.seed).csv_header();
      write_theorem_report(report, std::cout);
      return static_cast<int>(report.passed() ? kOk : kVerificationFailure);
    });
  }
  if (*search_cmd) {
    return guarded([&] {
      ExperimentConfig c = load_config(search_config);
      c.seed = search_seed;
      search_over.trials = search_trials;
      search_over.threads = search_threads;
      search_over.apply(c);
      return cmd_search(c, std::cout);
    });
  }
  return kOk;
}
