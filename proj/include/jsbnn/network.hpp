#pragma once

// Variational fully-connected networks with factorized Gaussian weights.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsbnn/errors.hpp"
#include "jsbnn/gaussian.hpp"
#include "jsbnn/math.hpp"

namespace jsbnn {

enum class Activation { relu, identity, softmax };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::softmax: return "softmax";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  if (s == "softmax") return Activation::softmax;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

struct LayerShape {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  // A softmax head emits logits from forward(); softmax is applied by the
  // likelihood and the predictive distribution.
  Activation activation = Activation::identity;

  [[nodiscard]] std::size_t weight_count() const { return fan_in * fan_out; }
  [[nodiscard]] std::size_t param_count() const { return fan_in * fan_out + fan_out; }
};

struct VariationalDenseLayer {
  LayerShape shape;
  VariationalParams weights;  // fan_in x fan_out, row-major by input unit
  VariationalParams biases;   // fan_out

  void validate() const {
    if (weights.mu.size() != shape.weight_count() || weights.rho.size() != shape.weight_count() ||
        biases.mu.size() != shape.fan_out || biases.rho.size() != shape.fan_out) {
      throw std::invalid_argument("VariationalDenseLayer: parameter lengths do not match fan_in/fan_out");
    }
  }
};

struct InitSpec {
  double mu_std = 0.05;
  double rho = -4.0;
};

class BayesianNetwork {
public:
  BayesianNetwork(std::vector<VariationalDenseLayer> layers, DiagonalGaussian prior)
      : layers_(std::move(layers)), prior_(std::move(prior)) {
    if (layers_.empty()) throw std::invalid_argument("BayesianNetwork: at least one layer required");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].validate();
      if (l > 0 && layers_[l].shape.fan_in != layers_[l - 1].shape.fan_out) {
        throw std::invalid_argument("BayesianNetwork: layer " + std::to_string(l) +
                                    " fan_in does not match previous fan_out");
      }
    }
    if (prior_.size() != 1 && prior_.size() != parameter_count()) {
      throw std::invalid_argument("BayesianNetwork: prior must have dimension 1 or parameter_count()");
    }
  }

  /// Builds an MLP with relu hidden layers and a softmax head. Means are drawn
  /// from N(0, init.mu_std^2); every rho starts at init.rho.
  static BayesianNetwork create(const std::vector<std::size_t>& sizes, DiagonalGaussian prior,
                                std::uint64_t seed, InitSpec init = {}) {
    if (sizes.size() < 2) throw std::invalid_argument("BayesianNetwork: need at least input and output sizes");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, init.mu_std);
    std::vector<VariationalDenseLayer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      if (sizes[l] == 0 || sizes[l + 1] == 0) throw std::invalid_argument("BayesianNetwork: zero-width layer");
      VariationalDenseLayer layer;
      layer.shape = {sizes[l], sizes[l + 1], l + 2 == sizes.size() ? Activation::softmax : Activation::relu};
      layer.weights.mu.resize(layer.shape.weight_count());
      layer.weights.rho.assign(layer.shape.weight_count(), init.rho);
      layer.biases.mu.resize(layer.shape.fan_out);
      layer.biases.rho.assign(layer.shape.fan_out, init.rho);
      for (double& m : layer.weights.mu) m = normal(rng);
      for (double& m : layer.biases.mu) m = normal(rng);
      layers.push_back(std::move(layer));
    }
    BayesianNetwork net(std::move(layers), std::move(prior));
    net.seed_lineage_.push_back(seed);
    return net;
  }

  [[nodiscard]] const std::vector<VariationalDenseLayer>& layers() const { return layers_; }
  [[nodiscard]] std::vector<LayerShape> shapes() const {
    std::vector<LayerShape> s;
    for (const auto& l : layers_) s.push_back(l.shape);
    return s;
  }
  [[nodiscard]] std::size_t input_size() const { return layers_.front().shape.fan_in; }
  [[nodiscard]] std::size_t output_size() const { return layers_.back().shape.fan_out; }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.shape.param_count();
    return n;
  }

  [[nodiscard]] const DiagonalGaussian& prior() const { return prior_; }
  [[nodiscard]] double prior_mean(std::size_t i) const { return prior_.mean(prior_.size() == 1 ? 0 : i); }
  [[nodiscard]] double prior_stddev(std::size_t i) const {
    return prior_.stddev(prior_.size() == 1 ? 0 : i);
  }
  /// The prior broadcast to every parameter.
  [[nodiscard]] DiagonalGaussian full_prior() const {
    const std::size_t n = parameter_count();
    Vector mu(n), sigma(n);
    for (std::size_t i = 0; i < n; ++i) {
      mu[i] = prior_mean(i);
      sigma[i] = prior_stddev(i);
    }
    return {std::move(mu), std::move(sigma)};
  }

  /// Flat parameter layout: per layer, weights then biases.
  [[nodiscard]] Vector flat_mu() const { return flatten(&VariationalParams::mu); }
  [[nodiscard]] Vector flat_rho() const { return flatten(&VariationalParams::rho); }

  void set_flat(std::span<const double> mu, std::span<const double> rho) {
    if (mu.size() != parameter_count() || rho.size() != parameter_count()) {
      throw std::invalid_argument("set_flat: length does not match parameter_count()");
    }
    std::size_t k = 0;
    for (auto& l : layers_) {
      for (auto* p : {&l.weights, &l.biases}) {
        for (std::size_t i = 0; i < p->mu.size(); ++i, ++k) {
          p->mu[i] = mu[k];
          p->rho[i] = rho[k];
        }
      }
    }
  }

  [[nodiscard]] DiagonalGaussian posterior() const { return {flat_mu(), softplus_sigma(flat_rho())}; }

  [[nodiscard]] const std::vector<std::uint64_t>& seed_lineage() const { return seed_lineage_; }
  void append_seed(std::uint64_t s) { seed_lineage_.push_back(s); }

  friend bool operator==(const BayesianNetwork& a, const BayesianNetwork& b) {
    return a.flat_mu() == b.flat_mu() && a.flat_rho() == b.flat_rho() && a.prior_ == b.prior_ &&
           a.seed_lineage_ == b.seed_lineage_ && a.same_shape(b);
  }

  [[nodiscard]] bool same_shape(const BayesianNetwork& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& a = layers_[l].shape;
      const auto& b = other.layers_[l].shape;
      if (a.fan_in != b.fan_in || a.fan_out != b.fan_out || a.activation != b.activation) return false;
    }
    return true;
  }

private:
  Vector flatten(Vector VariationalParams::*member) const {
    Vector out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
      out.insert(out.end(), (l.weights.*member).begin(), (l.weights.*member).end());
      out.insert(out.end(), (l.biases.*member).begin(), (l.biases.*member).end());
    }
    return out;
  }

  std::vector<VariationalDenseLayer> layers_;
  DiagonalGaussian prior_;
  std::vector<std::uint64_t> seed_lineage_;
};

/// Forward pass for one concrete weight vector (flat layout), generic over
/// the scalar type. Returns head outputs (logits for a softmax head).
template <class T>
std::vector<T> forward_with_weights(std::span<const LayerShape> shapes, std::span<const T> weights,
                                    std::span<const double> input) {
  if (shapes.empty() || input.size() != shapes.front().fan_in) {
    throw std::invalid_argument("forward: input dimension does not match first layer fan_in");
  }
  std::vector<T> act(input.begin(), input.end());
  std::size_t offset = 0;
  for (const LayerShape& s : shapes) {
    if (offset + s.param_count() > weights.size()) throw std::invalid_argument("forward: weight vector too short");
    const std::size_t bias_offset = offset + s.weight_count();
    std::vector<T> out(s.fan_out);
    for (std::size_t j = 0; j < s.fan_out; ++j) {
      T z = weights[bias_offset + j];
      for (std::size_t i = 0; i < s.fan_in; ++i) z += act[i] * weights[offset + i * s.fan_out + j];
      if (s.activation == Activation::relu) z = relu(z);
      out[j] = z;
    }
    act = std::move(out);
    offset += s.param_count();
  }
  if (offset != weights.size()) throw std::invalid_argument("forward: weight vector length mismatch");
  return act;
}

/// log softmax(logits)[label], generic over the scalar type.
template <class T>
T log_softmax_at(std::span<const T> logits, std::size_t label) {
  using std::exp;
  using std::log;
  double m = value_of(logits[0]);
  for (const T& l : logits) m = std::max(m, value_of(l));
  T sum = T(0.0);
  for (const T& l : logits) sum += exp(l - T(m));
  return logits[label] - T(m) - log(sum);
}

inline Vector softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) sum += (p[k] = std::exp(logits[k] - m));
  for (double& v : p) v /= sum;
  return p;
}

/// Flat epsilon from per-layer noise vectors (weights then biases per layer).
inline Vector flatten_epsilons(const BayesianNetwork& net, std::span<const Vector> epsilons) {
  if (epsilons.size() != net.layers().size()) {
    throw std::invalid_argument("forward: need one epsilon vector per layer");
  }
  Vector flat;
  flat.reserve(net.parameter_count());
  for (std::size_t l = 0; l < epsilons.size(); ++l) {
    if (epsilons[l].size() != net.layers()[l].shape.param_count()) {
      throw std::invalid_argument("forward: epsilon for layer " + std::to_string(l) + " has wrong length");
    }
    flat.insert(flat.end(), epsilons[l].begin(), epsilons[l].end());
  }
  return flat;
}

inline Vector sampled_weights(const BayesianNetwork& net, std::span<const double> flat_epsilon) {
  return sample_weights(VariationalParams{net.flat_mu(), net.flat_rho()}, flat_epsilon);
}

/// Logits for one input under weights mu + softplus(rho) * eps.
inline Vector forward(const BayesianNetwork& net, std::span<const double> input,
                      std::span<const Vector> epsilons) {
  const Vector w = sampled_weights(net, flatten_epsilons(net, epsilons));
  const auto shapes = net.shapes();
  return forward_with_weights<double>(shapes, w, input);
}

/// Monte-Carlo predictive class probabilities for a set of inputs. Each of
/// the n_samples weight draws is shared across inputs.
inline std::vector<Vector> predictive_batch(const BayesianNetwork& net, std::span<const Vector> inputs,
                                            int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("predictive: n_samples must be >= 1");
  const std::size_t k = net.output_size();
  std::vector<Vector> probs(inputs.size(), Vector(k, 0.0));
  const auto shapes = net.shapes();
  const Vector mu = net.flat_mu();
  const Vector sigma = softplus_sigma(net.flat_rho());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector w(mu.size());
  for (int s = 0; s < n_samples; ++s) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = mu[i] + sigma[i] * normal(rng);
    for (std::size_t r = 0; r < inputs.size(); ++r) {
      const Vector p = softmax(forward_with_weights<double>(shapes, w, inputs[r]));
      for (std::size_t c = 0; c < k; ++c) probs[r][c] += p[c];
    }
  }
  for (auto& p : probs) {
    for (double& v : p) v /= static_cast<double>(n_samples);
  }
  return probs;
}

inline Vector predictive(const BayesianNetwork& net, std::span<const double> input, int n_samples,
                         std::uint64_t seed) {
  const std::vector<Vector> one{Vector(input.begin(), input.end())};
  return predictive_batch(net, one, n_samples, seed).front();
}

// Checkpoint format: flat JSON with layer sizes, activations, per-layer mu and
// rho arrays, the prior and the seed lineage.

inline nlohmann::json to_json(const BayesianNetwork& net) {
  nlohmann::json j;
  j["format"] = "jsbnn-checkpoint";
  j["version"] = 1;
  std::vector<std::size_t> sizes{net.input_size()};
  std::vector<std::string> acts;
  nlohmann::json wmu = nlohmann::json::array(), wrho = nlohmann::json::array();
  nlohmann::json bmu = nlohmann::json::array(), brho = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    sizes.push_back(l.shape.fan_out);
    acts.push_back(to_string(l.shape.activation));
    wmu.push_back(l.weights.mu);
    wrho.push_back(l.weights.rho);
    bmu.push_back(l.biases.mu);
    brho.push_back(l.biases.rho);
  }
  j["layer_sizes"] = sizes;
  j["activations"] = acts;
  j["weight_mu"] = wmu;
  j["weight_rho"] = wrho;
  j["bias_mu"] = bmu;
  j["bias_rho"] = brho;
  j["prior"] = {{"mu", Vector(net.prior().mu().begin(), net.prior().mu().end())},
                {"sigma", Vector(net.prior().sigma().begin(), net.prior().sigma().end())}};
  j["seed_lineage"] = net.seed_lineage();
  return j;
}

inline BayesianNetwork network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "jsbnn-checkpoint") {
      throw DataError("checkpoint: unexpected format tag");
    }
    const auto sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    const auto acts = j.at("activations").get<std::vector<std::string>>();
    if (sizes.size() != acts.size() + 1) throw DataError("checkpoint: layer_sizes/activations mismatch");
    std::vector<VariationalDenseLayer> layers;
    for (std::size_t l = 0; l < acts.size(); ++l) {
      VariationalDenseLayer layer;
      layer.shape = {sizes[l], sizes[l + 1], activation_from_string(acts[l])};
      layer.weights.mu = j.at("weight_mu").at(l).get<Vector>();
      layer.weights.rho = j.at("weight_rho").at(l).get<Vector>();
      layer.biases.mu = j.at("bias_mu").at(l).get<Vector>();
      layer.biases.rho = j.at("bias_rho").at(l).get<Vector>();
      layers.push_back(std::move(layer));
    }
    DiagonalGaussian prior(j.at("prior").at("mu").get<Vector>(), j.at("prior").at("sigma").get<Vector>());
    BayesianNetwork net(std::move(layers), std::move(prior));
    for (auto s : j.value("seed_lineage", std::vector<std::uint64_t>{})) net.append_seed(s);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const BayesianNetwork& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out << to_json(net).dump(2) << '\n';
}

inline BayesianNetwork load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in || std::filesystem::is_directory(path)) throw DataError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path + "': " + e.what());
  }
  return network_from_json(j);
}

}  // namespace jsbnn
