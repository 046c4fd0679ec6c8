#pragma once

#include <functional>
#include <span>
#include <vector>

namespace aph::nn {

class Tape;

/// Scalar handle recorded on a Tape. Cheap to copy; only valid while its
/// tape is alive.
class Var {
 public:
  Var() = default;
  double value() const;
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t i) : tape_(t), index_(i) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Reverse-mode tape over scalars. Each node stores up to two parents with
/// their local partials.
class Tape {
 public:
  Var variable(double value);
  Var constant(double value) { return variable(value); }

  /// Node with parents a, b and local partials da, db.
  Var record(double value, const Var& a, double da, const Var& b, double db);
  Var record(double value, const Var& a, double da);

  double value(const Var& v) const { return nodes_[v.index()].value; }

  /// Adjoints of every node with respect to `out`.
  std::vector<double> gradient(const Var& out) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    double value;
    std::size_t parent[2];
    double partial[2];
  };
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<Node> nodes_;
};

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator-(const Var& a, double b);
Var tanh(const Var& a);
Var square(const Var& a);

using ScalarLoss = std::function<Var(Tape&, std::span<const Var>)>;

/// Exact gradient of `loss` at w by one reverse sweep.
/// Throws NumericalError when the loss is not finite.
std::vector<double> loss_gradient(const ScalarLoss& loss, std::span<const double> w);

}  // namespace aph::nn
