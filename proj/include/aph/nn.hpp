#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace aph::nn {

enum class Activation { tanh, linear };

/// Fully connected network: layer_sizes = {inputs, hidden..., outputs}.
struct MlpSpec {
  std::vector<int> layer_sizes;
  Activation hidden_activation = Activation::tanh;
  Activation output_activation = Activation::linear;

  void validate() const;
  int inputs() const { return layer_sizes.front(); }
  int outputs() const { return layer_sizes.back(); }
  int layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
  bool operator==(const MlpSpec&) const = default;
};

/// Flat parameters: for each layer, weights row-major [out x in] then biases.
using WeightVector = std::vector<double>;

std::size_t param_count(const MlpSpec& spec);

std::vector<double> forward(const MlpSpec& spec, std::span<const double> w,
                            std::span<const double> x);

struct InputDerivatives {
  std::vector<double> outputs;
  /// first[i][o] = d out_o / d x_i
  std::vector<std::vector<double>> first;
  /// second[o] = d^2 out_o / d x_s^2 for the chosen input s
  std::vector<double> second;
};

/// Exact input derivatives by forward-mode propagation. `second_input`
/// selects the coordinate of the second derivative (default: last input).
InputDerivatives input_derivatives(const MlpSpec& spec, std::span<const double> w,
                                   std::span<const double> x, int second_input = -1);

/// Value-only batched evaluation (points are columns), blocked for cache
/// reuse. Matches the value channel of BatchMlp.
void evaluate(const MlpSpec& spec, std::span<const double> w, const Eigen::MatrixXd& x,
              Eigen::MatrixXd& y);

/// Batched evaluation with optional derivative channels and a matching
/// reverse pass. Points are columns. Channel 0 is the value; channels
/// 1..inputs are first input derivatives; the last channel is the second
/// derivative with respect to `second_input`.
class BatchMlp {
 public:
  using Matrix = Eigen::MatrixXd;

  BatchMlp(MlpSpec spec, int second_input = -1);

  const MlpSpec& spec() const { return spec_; }
  int channels() const { return derivatives_ ? spec_.inputs() + 2 : 1; }
  int second_input() const { return second_input_; }

  void forward(std::span<const double> w, const Matrix& x, bool derivatives);

  /// Output of channel c, [outputs x points].
  const Matrix& output(int c = 0) const { return act_.back()[c]; }

  /// Accumulates dL/dw into grad given dL/d(output channel c) in adjoint[c].
  /// Channels absent from `adjoint` (fewer entries) are taken as zero.
  void backward(std::span<const double> w, std::span<const Matrix> adjoint,
                std::span<double> grad);

 private:
  MlpSpec spec_;
  int second_input_;
  bool derivatives_ = false;
  // pre_[l][c], act_[l][c]; act_[0] is the input layer.
  std::vector<std::vector<Matrix>> pre_, act_;
  std::vector<Matrix> slope_;  // 1 - tanh^2 per hidden layer
  std::vector<Matrix> zbar_, abar_;
  Eigen::ArrayXXd s1_, s2_;
  // Gradient blocks are formed in aligned storage, then added to the caller's
  // buffer, so results do not depend on where that buffer lives.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gw_;
  Eigen::VectorXd gb_;
};

/// Glorot-uniform weights, zero biases, deterministic in (spec, seed).
WeightVector init_weights(const MlpSpec& spec, std::uint64_t seed);

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(std::size_t n, double lr) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.lr = lr;
    return s;
  }
};

/// One bias-corrected Adam update, in place.
void adam_step(AdamState& state, std::span<const double> grad, std::span<double> w);

/// Process-wide number of adam_step calls; lets callers assert that an
/// inference path performs no optimization.
std::uint64_t adam_step_count();

enum class WeightFormat { text, binary };

/// Self-describing weight file. Text: "aph-weights 1 text" line, "layers"
/// line, "count" line, one %.17g value per line. Binary: "APHW", u32 version,
/// u32 layer count, u32 sizes, u64 count, little-endian f64 values.
void write_weights(const std::string& path, const MlpSpec& spec,
                   std::span<const double> w, WeightFormat format);
std::pair<MlpSpec, WeightVector> read_weights(const std::string& path);

}  // namespace aph::nn
