#pragma once

// Classification metrics: accuracy, confusion matrices, ROC/AUC.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsbnn/gaussian.hpp"

namespace jsbnn {

/// Argmax with ties resolved toward the lower class index.
inline std::size_t argmax(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("argmax: empty probability vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (probs[k] > probs[best]) best = k;
  }
  return best;
}

inline std::vector<std::size_t> predicted_classes(std::span<const Vector> probs) {
  std::vector<std::size_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = argmax(probs[i]);
  return out;
}

inline double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  if (predicted.empty()) throw std::invalid_argument("accuracy: empty input");
  if (predicted.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double accuracy(std::span<const Vector> probs, std::span<const std::size_t> labels) {
  const auto pred = predicted_classes(probs);
  return accuracy(std::span<const std::size_t>(pred), labels);
}

/// counts[true][predicted].
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  [[nodiscard]] std::size_t classes() const { return counts.size(); }
  [[nodiscard]] std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
    return t;
  }
  [[nodiscard]] std::size_t trace() const {
    std::size_t t = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) t += counts[k][k];
    return t;
  }

  // Binary views with class 1 as positive.
  [[nodiscard]] std::size_t true_positives() const { return binary().counts[1][1]; }
  [[nodiscard]] std::size_t false_negatives() const { return binary().counts[1][0]; }
  [[nodiscard]] std::size_t false_positives() const { return binary().counts[0][1]; }
  [[nodiscard]] std::size_t true_negatives() const { return binary().counts[0][0]; }
  [[nodiscard]] double false_negative_rate() const {
    const double pos = static_cast<double>(false_negatives() + true_positives());
    if (pos == 0.0) throw std::domain_error("false_negative_rate: no positive samples");
    return static_cast<double>(false_negatives()) / pos;
  }

private:
  [[nodiscard]] const ConfusionMatrix& binary() const {
    if (counts.size() != 2) throw std::invalid_argument("confusion: binary matrix required");
    return *this;
  }
};

inline ConfusionMatrix confusion(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                                 std::size_t k) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("confusion: length mismatch");
  ConfusionMatrix cm{std::vector<std::vector<std::size_t>>(k, std::vector<std::size_t>(k, 0))};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k || predicted[i] >= k) {
      throw std::invalid_argument("confusion: class index " + std::to_string(std::max(labels[i], predicted[i])) +
                                  " >= k at sample " + std::to_string(i));
    }
    ++cm.counts[labels[i]][predicted[i]];
  }
  return cm;
}

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // thresholds descending, from +inf to -inf
  double auc = 0.0;
};

/// ROC for positive-class scores; a sample is called positive when
/// score >= threshold. Equal scores share one threshold step, so ties
/// contribute half credit to the trapezoidal AUC.
inline RocCurve roc_auc(std::span<const double> scores, std::span<const std::size_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: length mismatch");
  std::size_t pos = 0, neg = 0;
  for (std::size_t y : labels) {
    if (y > 1) throw std::invalid_argument("roc_auc: binary labels required");
    (y == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw std::domain_error("roc_auc: undefined AUC, both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double inf = std::numeric_limits<double>::infinity();
  RocCurve roc;
  roc.points.push_back({inf, 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    roc.points.push_back({s, static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
  }
  roc.points.push_back({-inf, 1.0, 1.0});

  double area = 0.0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  roc.auc = area;
  return roc;
}

/// Relative reduction in false negatives of `b` versus baseline `a`.
inline double fn_reduction(double fn_a, double fn_b) {
  if (fn_a == 0.0) throw std::domain_error("fn_reduction: baseline has no false negatives");
  return (fn_a - fn_b) / fn_a;
}

inline double fn_reduction(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  return fn_reduction(static_cast<double>(a.false_negatives()), static_cast<double>(b.false_negatives()));
}

struct MetricsReport {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::optional<RocCurve> roc;  // binary tasks with both classes present
};

inline MetricsReport evaluate_predictions(std::span<const Vector> probs, std::span<const std::size_t> labels,
                                          std::size_t k) {
  MetricsReport r;
  const auto pred = predicted_classes(probs);
  r.accuracy = accuracy(std::span<const std::size_t>(pred), labels);
  r.confusion = confusion(pred, labels, k);
  if (k == 2) {
    const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                      std::find(labels.begin(), labels.end(), 1) != labels.end();
    if (both) {
      Vector scores(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) scores[i] = probs[i][1];
      r.roc = roc_auc(scores, labels);
    }
  }
  return r;
}

namespace detail {
inline nlohmann::json finite_or_string(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}
}  // namespace detail

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["accuracy"] = r.accuracy;
  j["confusion"] = r.confusion.counts;
  if (r.roc) {
    j["auc"] = r.roc->auc;
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : r.roc->points) {
      pts.push_back({{"threshold", detail::finite_or_string(p.threshold)}, {"fpr", p.fpr}, {"tpr", p.tpr}});
    }
    j["roc"] = pts;
  } else {
    j["auc"] = nullptr;
  }
  return j;
}

inline void write_roc_csv(const RocCurve& roc, std::ostream& out) {
  out << "threshold,fpr,tpr\n" << std::setprecision(17);
  for (const auto& p : roc.points) out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
}

}  // namespace jsbnn
