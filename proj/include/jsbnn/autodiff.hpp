#pragma once

// Minimal tape-based reverse-mode automatic differentiation.
//
// A Var is either a constant (no tape) or a handle to a node recorded on a
// Tape. Every node has at most two parents, so the tape is a flat array of
// (parent, local partial) pairs and the backward sweep is a single reverse
// loop. Numerical code in this library is written as templates over the
// scalar type so the same expression evaluates with double or with Var.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace jsbnn::ad {

class Tape;

class Var {
public:
  Var() = default;
  Var(double value) : value_(value) {}  // NOLINT: implicit constants are the point

  [[nodiscard]] double value() const { return value_; }
  [[nodiscard]] bool is_constant() const { return tape_ == nullptr; }
  [[nodiscard]] std::int32_t index() const { return index_; }
  [[nodiscard]] Tape* tape() const { return tape_; }

private:
  friend class Tape;
  Var(Tape* tape, std::int32_t index, double value)
      : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
  double value_ = 0.0;
};

class Tape {
public:
  Tape() { nodes_.reserve(1 << 14); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers an independent variable.
  Var variable(double value) { return push(value, -1, 0.0, -1, 0.0); }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  /// Records a node with up to two differentiable parents. Constant parents
  /// are dropped.
  Var record(double value, const Var& a, double da, const Var& b, double db) {
    return push(value, a.is_constant() ? -1 : a.index(), da,
                b.is_constant() ? -1 : b.index(), db);
  }
  Var record(double value, const Var& a, double da) {
    return push(value, a.is_constant() ? -1 : a.index(), da, -1, 0.0);
  }

  /// Adjoints of every node with respect to `output`.
  [[nodiscard]] std::vector<double> gradient(const Var& output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output.is_constant()) return adj;
    if (output.tape() != this) {
      throw std::invalid_argument("gradient: output recorded on another tape");
    }
    adj[static_cast<std::size_t>(output.index())] = 1.0;
    for (std::size_t k = static_cast<std::size_t>(output.index()) + 1; k-- > 0;) {
      const Node& n = nodes_[k];
      const double a = adj[k];
      if (a == 0.0) continue;
      if (n.lhs >= 0) adj[static_cast<std::size_t>(n.lhs)] += a * n.dlhs;
      if (n.rhs >= 0) adj[static_cast<std::size_t>(n.rhs)] += a * n.drhs;
    }
    return adj;
  }

private:
  struct Node {
    std::int32_t lhs;
    std::int32_t rhs;
    double dlhs;
    double drhs;
  };

  Var push(double value, std::int32_t lhs, double dlhs, std::int32_t rhs, double drhs) {
    if (nodes_.size() >= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
      throw std::length_error("autodiff tape overflow");
    }
    nodes_.push_back(Node{lhs, rhs, dlhs, drhs});
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1), value);
  }

  std::vector<Node> nodes_;
};

namespace detail {
inline Tape* tape_of(const Var& a, const Var& b) { return a.tape() ? a.tape() : b.tape(); }
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() + b.value());
  return t->record(a.value() + b.value(), a, 1.0, b, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() - b.value());
  return t->record(a.value() - b.value(), a, 1.0, b, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() * b.value());
  return t->record(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator/(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const double q = a.value() / b.value();
  if (!t) return Var(q);
  return t->record(q, a, 1.0 / b.value(), b, -q / b.value());
}
inline Var operator-(const Var& a) {
  if (a.is_constant()) return Var(-a.value());
  return a.tape()->record(-a.value(), a, -1.0);
}

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }

namespace detail {
inline Var unary(const Var& a, double value, double partial) {
  if (a.is_constant()) return Var(value);
  return a.tape()->record(value, a, partial);
}
}  // namespace detail

inline Var exp(const Var& a) {
  const double e = std::exp(a.value());
  return detail::unary(a, e, e);
}
inline Var log(const Var& a) { return detail::unary(a, std::log(a.value()), 1.0 / a.value()); }
inline Var log1p(const Var& a) {
  return detail::unary(a, std::log1p(a.value()), 1.0 / (1.0 + a.value()));
}
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.value());
  return detail::unary(a, s, 0.5 / s);
}

/// Seeds a vector of independent variables on `tape`.
inline std::vector<Var> variables(Tape& tape, std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(tape.variable(v));
  return out;
}

}  // namespace jsbnn::ad

namespace jsbnn {

inline double value_of(double x) { return x; }
inline double value_of(const ad::Var& x) { return x.value(); }

}  // namespace jsbnn
