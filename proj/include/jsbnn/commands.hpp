#pragma once

// Experiment configuration and the command implementations behind the
// `jsbnn` executable. Commands write plot-ready CSV/JSON artifacts and
// return process exit codes; they never call std::exit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsbnn/data.hpp"
#include "jsbnn/divergence.hpp"
#include "jsbnn/errors.hpp"
#include "jsbnn/fixtures.hpp"
#include "jsbnn/loss.hpp"
#include "jsbnn/metrics.hpp"
#include "jsbnn/network.hpp"
#include "jsbnn/train.hpp"

namespace jsbnn::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericAbort = 3, kVerificationFailure = 4 };

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct Provenance {
  std::string command;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

  [[nodiscard]] std::string csv_header() const {
    return "# jsbnn " + std::string(kVersion) + " command=" + command + " config_hash=" + hex64(config_hash) +
           " seed=" + std::to_string(seed) + "\n";
  }
  [[nodiscard]] nlohmann::json json() const {
    return {{"version", kVersion}, {"command", command}, {"config_hash", hex64(config_hash)}, {"seed", seed}};
  }
};

inline Provenance provenance(const std::string& command, const nlohmann::json& params, std::uint64_t seed) {
  return {command, fnv1a(params.dump()), seed};
}

/// The experiment config minus where its artifacts go.
inline nlohmann::json hashed_config(nlohmann::json j) {
  j.erase("output_dir");
  return j;
}

struct NetworkSpec {
  std::vector<std::size_t> hidden{16};
  double prior_mu = 0.0;
  double prior_sigma = 1.0;
  InitSpec init;
};

struct DatasetSpec {
  std::string kind = "synthetic";  // "synthetic" or "csv"
  std::size_t n_per_class = 200;
  std::vector<Vector> centers{{0.0, 0.0}, {1.0, 1.0}};
  double spread = 0.5;
  double bias_ratio = 1.0;
  std::string path;
  std::size_t n_classes = 0;
  bool normalize = true;
  SplitFractions fractions{0.6, 0.2, 0.2};
  double noise_mean = 0.0;
  double noise_sigma = 0.0;
};

struct ExperimentConfig {
  NetworkSpec network;
  DatasetSpec dataset;
  LossKind loss = LossKind::jsg_closed;
  DivergenceConfig divergence{0.5, 1.0, 1, 0};
  OptimizerState optimizer;
  TrainOptions training{20, 32, true, 100, 5};
  SearchSpace search;
  unsigned search_threads = 1;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
};

namespace detail {

/// Typed access to one JSON object with dotted field paths in errors and a
/// check that every key present is known.
class Fields {
public:
  Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  [[nodiscard]] std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  [[nodiscard]] bool has(const std::string& key) const {
    known_.insert(key);
    return j_.contains(key);
  }

  double number(const std::string& key, double def, double lo = -std::numeric_limits<double>::infinity(),
                double hi = std::numeric_limits<double>::infinity()) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    const double x = v.get<double>();
    if (!(x >= lo && x <= hi)) {
      throw ConfigError(at(key), "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                                     std::to_string(hi) + "]");
    }
    return x;
  }

  std::int64_t integer(const std::string& key, std::int64_t def, std::int64_t lo, std::int64_t hi) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < lo || x > hi) {
      throw ConfigError(at(key), "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                                     std::to_string(hi) + "]");
    }
    return x;
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(at(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_boolean()) throw ConfigError(at(key), "expected true or false");
    return j_.at(key).get<bool>();
  }

  std::string string(const std::string& key, std::string def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_string()) throw ConfigError(at(key), "expected a string");
    return j_.at(key).get<std::string>();
  }

  Vector numbers(const std::string& key, Vector def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of numbers");
    Vector out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  [[nodiscard]] const nlohmann::json* child(const std::string& key) const {
    return has(key) ? &j_.at(key) : nullptr;
  }

  void reject_unknown() const {
    for (const auto& [k, _] : j_.items()) {
      if (!known_.count(k)) throw ConfigError(at(k), "unknown field");
    }
  }

private:
  const nlohmann::json& j_;
  std::string path_;
  mutable std::set<std::string> known_;
};

inline SplitFractions parse_fractions(const Fields& f, const std::string& key, const SplitFractions& def) {
  const Vector v = f.numbers(key, Vector(def.begin(), def.end()));
  if (v.size() != 3) throw ConfigError(f.at(key), "expected [train, validation, test]");
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) throw ConfigError(f.at(key), "fractions must be >= 0");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(f.at(key), "fractions must sum to 1");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& root) {
  using detail::Fields;
  ExperimentConfig c;
  Fields top(root, "");
  c.seed = top.unsigned_integer("seed", 0);
  c.output_dir = top.string("output_dir", c.output_dir);

  const std::string loss = top.string("loss", to_string(c.loss));
  try {
    c.loss = loss_kind_from_string(loss);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("loss", e.what());
  }

  if (const auto* n = top.child("network")) {
    Fields f(*n, "network");
    c.network.hidden.clear();
    for (double h : f.numbers("hidden", {16.0})) {
      if (!(h >= 1.0) || h != std::floor(h)) throw ConfigError("network.hidden", "layer widths must be integers >= 1");
      c.network.hidden.push_back(static_cast<std::size_t>(h));
    }
    c.network.prior_mu = f.number("prior_mu", c.network.prior_mu);
    c.network.prior_sigma = f.number("prior_sigma", c.network.prior_sigma, 1e-12);
    c.network.init.mu_std = f.number("init_mu_std", c.network.init.mu_std, 0.0);
    c.network.init.rho = f.number("init_rho", c.network.init.rho, -50.0, 50.0);
    f.reject_unknown();
  }

  if (const auto* d = top.child("dataset")) {
    Fields f(*d, "dataset");
    auto& ds = c.dataset;
    ds.kind = f.string("kind", ds.kind);
    if (ds.kind != "synthetic" && ds.kind != "csv") {
      throw ConfigError("dataset.kind", "expected \"synthetic\" or \"csv\"");
    }
    ds.n_per_class = static_cast<std::size_t>(f.integer("n_per_class", static_cast<std::int64_t>(ds.n_per_class), 1,
                                                        10'000'000));
    if (const auto* centers = f.child("centers")) {
      if (!centers->is_array() || centers->size() < 2) {
        throw ConfigError("dataset.centers", "expected at least two center coordinates");
      }
      ds.centers.clear();
      for (std::size_t i = 0; i < centers->size(); ++i) {
        const std::string p = "dataset.centers[" + std::to_string(i) + "]";
        if (!(*centers)[i].is_array()) throw ConfigError(p, "expected an array of numbers");
        Vector v;
        for (const auto& x : (*centers)[i]) {
          if (!x.is_number()) throw ConfigError(p, "expected an array of numbers");
          v.push_back(x.get<double>());
        }
        if (v.empty() || v.size() != ((*centers)[0]).size()) throw ConfigError(p, "centers must share a dimension");
        ds.centers.push_back(std::move(v));
      }
    }
    ds.spread = f.number("spread", ds.spread, 0.0);
    ds.bias_ratio = f.number("bias_ratio", ds.bias_ratio, 1e-9);
    ds.path = f.string("path", ds.path);
    ds.n_classes = static_cast<std::size_t>(f.integer("n_classes", 0, 0, 1'000'000));
    ds.normalize = f.boolean("normalize", ds.normalize);
    ds.fractions = detail::parse_fractions(f, "fractions", ds.fractions);
    ds.noise_mean = f.number("noise_mean", ds.noise_mean);
    ds.noise_sigma = f.number("noise_sigma", ds.noise_sigma, 0.0);
    f.reject_unknown();
    if (ds.kind == "csv") {
      if (ds.path.empty()) throw ConfigError("dataset.path", "required when kind is \"csv\"");
      if (!std::filesystem::exists(ds.path)) throw ConfigError("dataset.path", "file not found: " + ds.path);
    }
  }

  if (const auto* d = top.child("divergence")) {
    Fields f(*d, "divergence");
    c.divergence.alpha = f.number("alpha", c.divergence.alpha, 0.0, 1.0);
    c.divergence.lambda = f.number("lambda", c.divergence.lambda, 0.0, 1e12);
    c.divergence.mc_samples = static_cast<int>(f.integer("mc_samples", c.divergence.mc_samples, 1, 1'000'000));
    f.reject_unknown();
  }

  if (const auto* o = top.child("optimizer")) {
    Fields f(*o, "optimizer");
    c.optimizer.learning_rate = f.number("learning_rate", c.optimizer.learning_rate, 0.0, 1e12);
    c.optimizer.momentum = f.number("momentum", c.optimizer.momentum, 0.0, 0.999999);
    if (const auto* s = f.child("schedule")) {
      if (!s->is_array()) throw ConfigError("optimizer.schedule", "expected an array of [epoch, multiplier]");
      for (std::size_t i = 0; i < s->size(); ++i) {
        const std::string p = "optimizer.schedule[" + std::to_string(i) + "]";
        const auto& e = (*s)[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number()) {
          throw ConfigError(p, "expected [epoch, multiplier]");
        }
        const double m = e[1].get<double>();
        if (!(m > 0.0)) throw ConfigError(p, "multiplier must be > 0");
        c.optimizer.schedule.push_back({e[0].get<int>(), m});
      }
    }
    f.reject_unknown();
  }

  if (const auto* t = top.child("training")) {
    Fields f(*t, "training");
    auto& tr = c.training;
    tr.epochs = static_cast<int>(f.integer("epochs", tr.epochs, 1, 1'000'000));
    tr.batch_size = static_cast<std::size_t>(f.integer("batch_size", static_cast<std::int64_t>(tr.batch_size), 1,
                                                       100'000'000));
    tr.minibatch_scaling = f.boolean("minibatch_scaling", tr.minibatch_scaling);
    tr.eval_samples = static_cast<int>(f.integer("eval_samples", tr.eval_samples, 1, 1'000'000));
    tr.patience = static_cast<int>(f.integer("patience", tr.patience, 0, 1'000'000));
    f.reject_unknown();
  }

  if (const auto* s = top.child("search")) {
    Fields f(*s, "search");
    auto& sp = c.search;
    const Vector ar = f.numbers("alpha_range", {sp.alpha_range.first, sp.alpha_range.second});
    if (ar.size() != 2 || !(ar[0] >= 0.0 && ar[0] <= ar[1] && ar[1] <= 1.0)) {
      throw ConfigError("search.alpha_range", "expected [lo, hi] with 0 <= lo <= hi <= 1");
    }
    sp.alpha_range = {ar[0], ar[1]};
    sp.lambda_choices = f.numbers("lambda_choices", sp.lambda_choices);
    sp.lr_choices = f.numbers("lr_choices", sp.lr_choices);
    sp.trials = static_cast<int>(f.integer("trials", sp.trials, 1, 1'000'000));
    c.search_threads = static_cast<unsigned>(f.integer("threads", c.search_threads, 1, 1024));
    f.reject_unknown();
    try {
      sp.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("search", e.what());
    }
  }
  top.reject_unknown();
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in || std::filesystem::is_directory(path)) throw ConfigError("<file>", "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& e : c.optimizer.schedule) sched.push_back({e.epoch, e.multiplier});
  const auto& ds = c.dataset;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"loss", to_string(c.loss)},
      {"network",
       {{"hidden", c.network.hidden},
        {"prior_mu", c.network.prior_mu},
        {"prior_sigma", c.network.prior_sigma},
        {"init_mu_std", c.network.init.mu_std},
        {"init_rho", c.network.init.rho}}},
      {"dataset",
       {{"kind", ds.kind},
        {"n_per_class", ds.n_per_class},
        {"centers", ds.centers},
        {"spread", ds.spread},
        {"bias_ratio", ds.bias_ratio},
        {"path", ds.path},
        {"n_classes", ds.n_classes},
        {"normalize", ds.normalize},
        {"fractions", ds.fractions},
        {"noise_mean", ds.noise_mean},
        {"noise_sigma", ds.noise_sigma}}},
      {"divergence",
       {{"alpha", c.divergence.alpha}, {"lambda", c.divergence.lambda}, {"mc_samples", c.divergence.mc_samples}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate}, {"momentum", c.optimizer.momentum}, {"schedule", sched}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"minibatch_scaling", c.training.minibatch_scaling},
        {"eval_samples", c.training.eval_samples},
        {"patience", c.training.patience}}},
      {"search",
       {{"alpha_range", {c.search.alpha_range.first, c.search.alpha_range.second}},
        {"lambda_choices", c.search.lambda_choices},
        {"lr_choices", c.search.lr_choices},
        {"trials", c.search.trials},
        {"threads", c.search_threads}}},
  };
}

// Seed streams derived from the experiment seed.
enum class SeedStream : std::uint64_t { data = 1, split = 2, noise = 3, init = 4, train = 5, eval = 6 };

inline std::uint64_t stream_seed(const ExperimentConfig& c, SeedStream s) {
  return derive_seed(c.seed, static_cast<std::uint64_t>(s));
}

struct PreparedData {
  Dataset dataset;
  NoiseSpec noise;
  std::vector<std::string> warnings;
};

/// Generate or load, normalize, split, then add noise to every split.
inline PreparedData prepare_dataset(const ExperimentConfig& c) {
  PreparedData out;
  const auto& spec = c.dataset;
  Dataset ds;
  if (spec.kind == "csv") {
    ds = load_csv(spec.path, CsvSchema{spec.n_classes});
  } else {
    ds = synth_clusters(spec.n_per_class, spec.centers, spec.spread, spec.bias_ratio,
                        stream_seed(c, SeedStream::data), &out.warnings);
  }
  if (spec.normalize) ds = minmax_normalize(std::move(ds));
  ds = split(std::move(ds), spec.fractions, stream_seed(c, SeedStream::split));
  out.noise = {spec.noise_mean, spec.noise_sigma, stream_seed(c, SeedStream::noise)};
  out.dataset = add_noise(std::move(ds), out.noise);
  return out;
}

inline BayesianNetwork build_network(const ExperimentConfig& c, std::size_t input_dim, std::size_t n_classes) {
  std::vector<std::size_t> sizes{input_dim};
  sizes.insert(sizes.end(), c.network.hidden.begin(), c.network.hidden.end());
  sizes.push_back(n_classes);
  return BayesianNetwork::create(sizes, DiagonalGaussian::univariate(c.network.prior_mu, c.network.prior_sigma),
                                 stream_seed(c, SeedStream::init), c.network.init);
}

struct ExperimentOutcome {
  PreparedData data;
  TrainResult training;
  std::optional<MetricsReport> test;  // best-validation network on the test split
};

inline ExperimentOutcome run_experiment(const ExperimentConfig& c) {
  PreparedData data = prepare_dataset(c);
  BayesianNetwork net = build_network(c, data.dataset.feature_dim(), data.dataset.n_classes);
  DivergenceConfig cfg = c.divergence;
  cfg.seed = stream_seed(c, SeedStream::train);
  TrainResult tr = train(std::move(net), data.dataset, c.loss, cfg, c.optimizer, c.training);
  ExperimentOutcome out{std::move(data), std::move(tr), std::nullopt};
  const Dataset test = out.data.dataset.subset(Split::test);
  if (!out.training.aborted && test.size() > 0) {
    const auto probs =
        predictive_batch(out.training.best_network, test.features, c.training.eval_samples,
                         stream_seed(c, SeedStream::eval));
    out.test = evaluate_predictions(probs, test.labels, test.n_classes);
  }
  return out;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << std::setprecision(17);
  return out;
}

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in || std::filesystem::is_directory(path)) throw DataError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

}  // namespace detail

inline constexpr const char* kTraceColumns = "epoch,train_acc,val_acc,divergence_term,nll_term,total,lr";
inline constexpr const char* kStepColumns = "step,divergence_term,nll_term,total,minibatch_scale";

inline void write_trace_csv(const TrainResult& r, const Provenance& prov, std::ostream& out) {
  out << prov.csv_header() << kTraceColumns << '\n';
  for (const auto& e : r.trace) {
    out << e.epoch << ',' << e.train_acc << ',' << e.val_acc << ',' << e.divergence_term << ',' << e.nll_term << ','
        << e.total << ',' << e.lr << '\n';
  }
}

inline void write_steps_csv(const TrainResult& r, const Provenance& prov, std::ostream& out) {
  out << prov.csv_header() << kStepColumns << '\n';
  for (const auto& s : r.steps) {
    out << s.step << ',' << s.loss.divergence_term << ',' << s.loss.nll_term << ',' << s.loss.total << ','
        << s.loss.minibatch_scale << '\n';
  }
}

/// Trains per the config and writes trace.csv, steps.csv, checkpoint.json
/// (best validation epoch), last_checkpoint.json, test.csv,
/// dataset_manifest.json and summary.json into the output directory.
inline int cmd_train(const ExperimentConfig& c, std::ostream& log) {
  const Provenance prov = provenance("train", hashed_config(to_json(c)), c.seed);
  const std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);

  ExperimentOutcome out = run_experiment(c);
  for (const auto& w : out.data.warnings) log << "warning: " << w << '\n';
  const auto& tr = out.training;

  {
    auto f = detail::open_output(dir / "trace.csv");
    write_trace_csv(tr, prov, f);
  }
  {
    auto f = detail::open_output(dir / "steps.csv");
    write_steps_csv(tr, prov, f);
  }
  auto write_net = [&](const BayesianNetwork& net, const char* name) {
    nlohmann::json j = to_json(net);
    j["provenance"] = prov.json();
    auto f = detail::open_output(dir / name);
    f << j.dump(2) << '\n';
  };
  write_net(tr.best_network, "checkpoint.json");
  write_net(tr.network, "last_checkpoint.json");
  save_csv(out.data.dataset.subset(Split::test), (dir / "test.csv").string());
  {
    nlohmann::json m = dataset_manifest(c.seed, out.data.noise, c.dataset.bias_ratio, c.dataset.fractions,
                                        out.data.dataset);
    m["provenance"] = prov.json();
    auto f = detail::open_output(dir / "dataset_manifest.json");
    f << m.dump(2) << '\n';
  }
  nlohmann::json summary = {{"provenance", prov.json()},
                            {"epochs_run", tr.trace.size()},
                            {"best_epoch", tr.best_epoch},
                            {"best_val_acc", tr.best_val_acc},
                            {"early_stopped", tr.early_stopped},
                            {"aborted", tr.aborted},
                            {"abort_reason", tr.abort_reason}};
  if (out.test) {
    summary["test_accuracy"] = out.test->accuracy;
    summary["test_confusion"] = out.test->confusion.counts;
  }
  {
    auto f = detail::open_output(dir / "summary.json");
    f << summary.dump(2) << '\n';
  }
  if (tr.aborted) {
    log << "numeric abort: " << tr.abort_reason << " (last good parameters in " << (dir / "last_checkpoint.json")
        << ")\n";
    return kNumericAbort;
  }
  log << "trained " << tr.trace.size() << " epochs; best validation accuracy " << tr.best_val_acc << " at epoch "
      << tr.best_epoch << '\n';
  return kOk;
}

/// Predictive metrics of a checkpoint on a labelled CSV. Writes
/// metrics.json and, for binary tasks, roc.csv into `out_dir` when given;
/// otherwise prints the JSON report.
inline int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path, int n_samples,
                    std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
  if (n_samples < 1) throw ConfigError("n_samples", "must be >= 1");
  const BayesianNetwork net = load_checkpoint(checkpoint_path);
  const Dataset ds = load_csv(dataset_path, CsvSchema{net.output_size()});
  if (ds.size() == 0) throw DataError("eval: dataset '" + dataset_path + "' has no rows");
  if (ds.feature_dim() != net.input_size()) {
    throw DataError("eval: shape mismatch, dataset has " + std::to_string(ds.feature_dim()) +
                    " features but the network expects " + std::to_string(net.input_size()));
  }
  const Provenance prov =
      provenance("eval",
                 {{"checkpoint", detail::file_digest(checkpoint_path)},
                  {"dataset", detail::file_digest(dataset_path)},
                  {"n_samples", n_samples}},
                 seed);
  const auto probs = predictive_batch(net, ds.features, n_samples, seed);
  const MetricsReport report = evaluate_predictions(probs, ds.labels, net.output_size());
  nlohmann::json j = to_json(report);
  j["n_samples"] = n_samples;
  j["provenance"] = prov.json();
  if (out_dir.empty()) {
    out << j.dump(2) << '\n';
    return kOk;
  }
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  {
    auto f = detail::open_output(dir / "metrics.json");
    f << j.dump(2) << '\n';
  }
  if (report.roc) {
    auto f = detail::open_output(dir / "roc.csv");
    f << prov.csv_header();
    write_roc_csv(*report.roc, f);
  }
  out << "accuracy " << report.accuracy << '\n';
  return kOk;
}

struct CurveRow {
  double mu;
  double kl;
  double jsg_closed;
  double jsa_mc_scaled;  // lambda * JS-A Monte-Carlo estimate
};

inline constexpr const char* kCurveColumns = "mu,kl,jsg_closed,jsa_mc_scaled";

/// Divergences of q = N(mu, q_var) from p = N(p_mu, p_var) over a grid of mu.
inline std::vector<CurveRow> divergence_curve(double q_var, double p_mu, double p_var, double alpha,
                                              double lambda, std::span<const double> mu_grid, int mc_samples,
                                              std::uint64_t seed) {
  if (!(q_var > 0.0) || !(p_var > 0.0)) throw std::invalid_argument("divergence-curve: variances must be > 0");
  const auto p = DiagonalGaussian::from_variance({p_mu}, {p_var});
  std::vector<CurveRow> rows;
  for (std::size_t i = 0; i < mu_grid.size(); ++i) {
    const auto q = DiagonalGaussian::from_variance({mu_grid[i]}, {q_var});
    rows.push_back({mu_grid[i], kl_gaussian(q, p), jsg_gaussian_closed(q, p, alpha),
                    lambda * jsa_mc(q, p, alpha, mc_samples, derive_seed(seed, i))});
  }
  return rows;
}

inline Vector linspace(double lo, double hi, int n) {
  if (n < 1) throw std::invalid_argument("linspace: need at least one point");
  Vector v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return v;
}

struct ConvergenceRow {
  int n;
  double closed_form;
  double mean_estimate;
  double mean_relative_error;
};

inline constexpr const char* kConvergenceColumns = "n,closed_form,mean_estimate,mean_relative_error";

/// Seed-averaged relative error of the sampled JS-G estimator against the
/// closed form; seed s uses derive_seed(seed, s) for every n.
inline std::vector<ConvergenceRow> mc_convergence(const DiagonalGaussian& q, const DiagonalGaussian& p,
                                                  double alpha, std::span<const int> sample_grid, int seeds,
                                                  std::uint64_t seed) {
  if (seeds < 1) throw std::invalid_argument("mc-convergence: seeds must be >= 1");
  if (!std::is_sorted(sample_grid.begin(), sample_grid.end())) {
    throw std::invalid_argument("mc-convergence: sample grid must be ascending");
  }
  const double exact = jsg_gaussian_closed(q, p, alpha);
  std::vector<ConvergenceRow> rows;
  for (int n : sample_grid) {
    double sum = 0.0, err = 0.0;
    for (int s = 0; s < seeds; ++s) {
      const double est = jsg_mc(q, p, alpha, n, derive_seed(seed, static_cast<std::uint64_t>(s)));
      sum += est;
      err += std::abs(est - exact) / exact;
    }
    rows.push_back({n, exact, sum / seeds, err / seeds});
  }
  return rows;
}

struct TheoremCheck {
  std::string name;
  long checks = 0;
  std::vector<std::string> violations;

  [[nodiscard]] bool passed() const { return violations.empty(); }
};

struct TheoremReport {
  std::vector<TheoremCheck> checks;

  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed(); });
  }
};

inline std::string describe_pair(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  std::ostringstream os;
  os << std::setprecision(17) << "q=N(" << q.mean(0) << ", var " << q.variance(0) << "), p=N(" << p.mean(0)
     << ", var " << p.variance(0) << ")";
  return os.str();
}

/// Random univariate pair: means in [-3, 3], standard deviations log-uniform
/// in [0.1, 3].
inline std::pair<DiagonalGaussian, DiagonalGaussian> random_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mean(-3.0, 3.0);
  std::uniform_real_distribution<double> log_sd(std::log(0.1), std::log(3.0));
  const double mq = mean(rng), sq = std::exp(log_sd(rng)), mp = mean(rng), sp = std::exp(log_sd(rng));
  return {DiagonalGaussian::univariate(mq, sq), DiagonalGaussian::univariate(mp, sp)};
}

struct TheoremOptions {
  int trials = 1000;
  std::uint64_t seed = 0;
  bool inject_bug = false;  // negates the variance condition as a harness self-test
  double bound_slack = 1e-9;
};

/// Randomized checks of the JS-A bound, non-negativity of the dominance
/// threshold, the threshold/variance equivalence and the KL asymmetry sign.
inline TheoremReport verify_theorems(const TheoremOptions& opt) {
  if (opt.trials < 1) throw std::invalid_argument("verify-theorems: trials must be >= 1");
  std::mt19937_64 rng(opt.seed);
  TheoremCheck bound{"jsa_bound", 0, {}};
  TheoremCheck threshold{"alpha_threshold_nonnegative", 0, {}};
  TheoremCheck variance{"threshold_variance_equivalence", 0, {}};
  TheoremCheck asym{"kl_asymmetry_sign", 0, {}};
  TheoremCheck dominance{"dominance_above_threshold", 0, {}};
  auto record = [](TheoremCheck& c, bool ok, const std::string& detail) {
    ++c.checks;
    if (!ok && c.violations.size() < 20) c.violations.push_back(detail);
    if (!ok && c.violations.size() == 20) c.violations.push_back("... further violations suppressed");
  };
  for (int t = 0; t < opt.trials; ++t) {
    const auto [q, p] = random_pair(rng);
    const std::string pair = describe_pair(q, p);
    for (int a = 1; a <= 9; ++a) {
      const double alpha = a / 10.0;
      const double v = fixtures::quadrature_jsa(q, p, alpha);
      const double b = jsa_bound(alpha);
      std::ostringstream os;
      os << std::setprecision(17) << pair << ", alpha " << alpha << ": JS-A " << v << " > bound " << b;
      record(bound, v <= b + opt.bound_slack, os.str());
    }
    const double th = alpha_threshold(q, p);
    record(threshold, th >= 0.0, pair + ": threshold " + std::to_string(th));
    bool cond = variance_condition_holds(q, p);
    if (opt.inject_bug) cond = !cond;
    record(variance, (th < 1.0) == cond,
           pair + ": threshold " + std::to_string(th) + " but variance condition " + (cond ? "true" : "false"));
    const bool reverse_larger = kl_gaussian(p, q) > kl_gaussian(q, p);
    const double expr = kl_asymmetry_expression(q, p);
    record(asym, (expr > 0.0) == reverse_larger, pair + ": expression " + std::to_string(expr));
    if (th < 1.0) {
      const double alpha = th + 0.5 * (1.0 - th);
      record(dominance, jsg_dominates_kl(q, p, alpha, 1.0) && !jsg_dominates_kl(q, p, 0.5 * th, 1.0),
             pair + ": dominance does not switch at threshold " + std::to_string(th));
    }
  }
  return {{bound, threshold, variance, asym, dominance}};
}

inline void write_theorem_report(const TheoremReport& r, std::ostream& out) {
  for (const auto& c : r.checks) {
    out << (c.passed() ? "PASS " : "FAIL ") << c.name << " (" << c.checks << " checks, " << c.violations.size()
        << " violations)\n";
    for (const auto& v : c.violations) out << "  violation: " << v << '\n';
  }
  out << (r.passed() ? "all theorem checks passed\n" : "theorem verification FAILED\n");
}

inline constexpr const char* kSearchColumns = "trial,alpha,lambda,learning_rate,seed,val_acc";

/// Seeded random search over (alpha, lambda, lr) using the config's training
/// setup; each trial trains with its own seed stream. Writes search.csv.
inline int cmd_search(const ExperimentConfig& base, std::ostream& log) {
  const Provenance prov = provenance("search", hashed_config(to_json(base)), base.seed);
  auto experiment = [&](const TrialConfig& t) -> std::optional<double> {
    ExperimentConfig c = base;
    c.divergence.alpha = t.alpha;
    c.divergence.lambda = t.lambda;
    c.optimizer.learning_rate = t.learning_rate;
    c.seed = t.seed;
    // Keep the data fixed across trials; only training noise varies.
    PreparedData data = prepare_dataset(base);
    BayesianNetwork net = build_network(c, data.dataset.feature_dim(), data.dataset.n_classes);
    DivergenceConfig cfg = c.divergence;
    cfg.seed = stream_seed(c, SeedStream::train);
    const TrainResult tr = train(std::move(net), data.dataset, c.loss, cfg, c.optimizer, c.training);
    if (tr.aborted) return std::nullopt;
    return tr.best_val_acc;
  };
  const SearchResult result = random_search(base.search, experiment, base.seed, base.search_threads);
  const std::filesystem::path dir(base.output_dir);
  std::filesystem::create_directories(dir);
  {
    auto f = detail::open_output(dir / "search.csv");
    f << prov.csv_header() << kSearchColumns << '\n';
    for (const auto& t : result.trials) {
      f << t.index << ',' << t.config.alpha << ',' << t.config.lambda << ',' << t.config.learning_rate << ','
        << t.config.seed << ',';
      if (t.val_acc) {
        f << *t.val_acc;
      } else {
        f << "nan";
      }
      f << '\n';
    }
  }
  if (!result.success()) {
    log << "search failed: all " << result.trials.size() << " trials diverged\n";
    return kNumericAbort;
  }
  const auto& b = *result.best;
  log << "best trial " << b.index << ": alpha " << b.config.alpha << ", lambda " << b.config.lambda << ", lr "
      << b.config.learning_rate << ", validation accuracy " << *b.val_acc << '\n';
  return kOk;
}

}  // namespace jsbnn::cli
