#include "aph/tape.hpp"

#include <cmath>

#include "aph/error.hpp"

namespace aph::nn {

double Var::value() const { return tape_->value(*this); }

Var Tape::variable(double value) {
  nodes_.push_back({value, {kNone, kNone}, {0.0, 0.0}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(double value, const Var& a, double da, const Var& b, double db) {
  nodes_.push_back({value, {a.index(), b.index()}, {da, db}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(double value, const Var& a, double da) {
  nodes_.push_back({value, {a.index(), kNone}, {da, 0.0}});
  return Var(this, nodes_.size() - 1);
}

std::vector<double> Tape::gradient(const Var& out) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  adj[out.index()] = 1.0;
  for (std::size_t i = out.index() + 1; i-- > 0;) {
    if (adj[i] == 0.0) continue;
    const Node& n = nodes_[i];
    for (int p = 0; p < 2; ++p) {
      if (n.parent[p] != kNone) adj[n.parent[p]] += n.partial[p] * adj[i];
    }
  }
  return adj;
}

Var operator+(const Var& a, const Var& b) {
  return a.tape()->record(a.value() + b.value(), a, 1.0, b, 1.0);
}
Var operator-(const Var& a, const Var& b) {
  return a.tape()->record(a.value() - b.value(), a, 1.0, b, -1.0);
}
Var operator*(const Var& a, const Var& b) {
  return a.tape()->record(a.value() * b.value(), a, b.value(), b, a.value());
}
Var operator/(const Var& a, const Var& b) {
  const double q = a.value() / b.value();
  return a.tape()->record(q, a, 1.0 / b.value(), b, -q / b.value());
}
Var operator-(const Var& a) { return a.tape()->record(-a.value(), a, -1.0); }
Var operator+(const Var& a, double b) { return a.tape()->record(a.value() + b, a, 1.0); }
Var operator-(const Var& a, double b) { return a.tape()->record(a.value() - b, a, 1.0); }
Var operator*(double a, const Var& b) { return b.tape()->record(a * b.value(), b, a); }

Var tanh(const Var& a) {
  const double t = std::tanh(a.value());
  return a.tape()->record(t, a, 1.0 - t * t);
}

Var square(const Var& a) {
  return a.tape()->record(a.value() * a.value(), a, 2.0 * a.value());
}

std::vector<double> loss_gradient(const ScalarLoss& loss, std::span<const double> w) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(w.size());
  for (double v : w) vars.push_back(tape.variable(v));
  const Var out = loss(tape, vars);
  if (!std::isfinite(out.value())) throw NumericalError("loss is not finite");
  const auto adj = tape.gradient(out);
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) g[i] = adj[vars[i].index()];
  return g;
}

}  // namespace aph::nn
