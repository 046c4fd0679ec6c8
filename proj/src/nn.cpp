#include "aph/nn.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "aph/error.hpp"

namespace aph::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Layer {
  int in, out;
  std::size_t weights, biases;  // offsets into the flat vector
};

std::vector<Layer> layout(const MlpSpec& spec) {
  std::vector<Layer> out;
  std::size_t off = 0;
  for (int l = 0; l < spec.layers(); ++l) {
    Layer layer{spec.layer_sizes[l], spec.layer_sizes[l + 1], off, 0};
    off += static_cast<std::size_t>(layer.in) * layer.out;
    layer.biases = off;
    off += layer.out;
    out.push_back(layer);
  }
  return out;
}

void check_weights(const MlpSpec& spec, std::span<const double> w) {
  if (w.size() != param_count(spec)) {
    throw ShapeError("weight vector has " + std::to_string(w.size()) + " entries, spec needs " +
                     std::to_string(param_count(spec)));
  }
}

double activate(Activation a, double x) { return a == Activation::tanh ? std::tanh(x) : x; }

std::atomic<std::uint64_t> g_adam_steps{0};

/// tanh through the vectorized exponential: 1 - 2 / (e^{2x} + 1). Absolute
/// error stays near machine epsilon; saturates cleanly at +-1.
void fast_tanh(const Eigen::MatrixXd& z, Eigen::MatrixXd& out) {
  out = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ValidationError("MLP needs at least two layers");
  for (int n : layer_sizes) {
    if (n < 1) throw ValidationError("MLP layer sizes must be >= 1");
  }
}

std::size_t param_count(const MlpSpec& spec) {
  spec.validate();
  std::size_t n = 0;
  for (int l = 0; l < spec.layers(); ++l) {
    n += static_cast<std::size_t>(spec.layer_sizes[l]) * spec.layer_sizes[l + 1] +
         spec.layer_sizes[l + 1];
  }
  return n;
}

std::vector<double> forward(const MlpSpec& spec, std::span<const double> w,
                            std::span<const double> x) {
  check_weights(spec, w);
  if (static_cast<int>(x.size()) != spec.inputs())
    throw ShapeError("input has wrong dimension");
  std::vector<double> a(x.begin(), x.end());
  const auto layers = layout(spec);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const bool last = l + 1 == layers.size();
    std::vector<double> z(L.out);
    for (int o = 0; o < L.out; ++o) {
      double s = w[L.biases + o];
      for (int i = 0; i < L.in; ++i) s += w[L.weights + o * L.in + i] * a[i];
      z[o] = activate(last ? spec.output_activation : spec.hidden_activation, s);
    }
    a = std::move(z);
  }
  return a;
}

InputDerivatives input_derivatives(const MlpSpec& spec, std::span<const double> w,
                                   std::span<const double> x, int second_input) {
  check_weights(spec, w);
  const int d = spec.inputs();
  if (static_cast<int>(x.size()) != d) throw ShapeError("input has wrong dimension");
  if (second_input < 0) second_input = d - 1;
  if (second_input >= d) throw ShapeError("second_input out of range");

  // a: values, da[i]: d/dx_i, dda: d^2/dx_s^2
  std::vector<double> a(x.begin(), x.end());
  std::vector<std::vector<double>> da(d, std::vector<double>(d, 0.0));
  for (int i = 0; i < d; ++i) da[i][i] = 1.0;
  std::vector<double> dda(d, 0.0);

  const auto layers = layout(spec);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const Activation act =
        l + 1 == layers.size() ? spec.output_activation : spec.hidden_activation;
    std::vector<double> z(L.out), zz(L.out);
    std::vector<std::vector<double>> dz(d, std::vector<double>(L.out));
    for (int o = 0; o < L.out; ++o) {
      const double* row = &w[L.weights + o * L.in];
      double s = w[L.biases + o], ss = 0.0;
      for (int i = 0; i < L.in; ++i) {
        s += row[i] * a[i];
        ss += row[i] * dda[i];
      }
      z[o] = s;
      zz[o] = ss;
      for (int c = 0; c < d; ++c) {
        double t = 0.0;
        for (int i = 0; i < L.in; ++i) t += row[i] * da[c][i];
        dz[c][o] = t;
      }
    }
    if (act == Activation::tanh) {
      for (int o = 0; o < L.out; ++o) {
        const double t = std::tanh(z[o]);
        const double slope = 1.0 - t * t;
        const double zs = dz[second_input][o];
        zz[o] = slope * zz[o] - 2.0 * t * slope * zs * zs;
        for (int c = 0; c < d; ++c) dz[c][o] *= slope;
        z[o] = t;
      }
    }
    a = std::move(z);
    da = std::move(dz);
    dda = std::move(zz);
  }
  return {std::move(a), std::move(da), std::move(dda)};
}

void evaluate(const MlpSpec& spec, std::span<const double> w, const Eigen::MatrixXd& x,
              Eigen::MatrixXd& y) {
  spec.validate();
  check_weights(spec, w);
  if (x.rows() != spec.inputs()) throw ShapeError("input rows do not match the network");
  constexpr Eigen::Index kBlock = 512;
  const auto layers = layout(spec);
  const Eigen::Index n = x.cols();
  y.resize(spec.outputs(), n);
  Eigen::MatrixXd a, z;
  for (Eigen::Index b0 = 0; b0 < n; b0 += kBlock) {
    const Eigen::Index m = std::min(kBlock, n - b0);
    a = x.middleCols(b0, m);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& ly = layers[l];
      Eigen::Map<const RowMat> W(w.data() + ly.weights, ly.out, ly.in);
      Eigen::Map<const Eigen::VectorXd> b(w.data() + ly.biases, ly.out);
      z.noalias() = W * a;
      z.colwise() += b;
      const bool hidden = l + 1 < layers.size();
      const Activation act = hidden ? spec.hidden_activation : spec.output_activation;
      if (act == Activation::tanh) {
        fast_tanh(z, a);
      } else {
        a.swap(z);
      }
    }
    y.middleCols(b0, m) = a;
  }
}

BatchMlp::BatchMlp(MlpSpec spec, int second_input)
    : spec_(std::move(spec)), second_input_(second_input) {
  spec_.validate();
  if (second_input_ < 0) second_input_ = spec_.inputs() - 1;
  if (second_input_ >= spec_.inputs()) throw ShapeError("second_input out of range");
}

void BatchMlp::forward(std::span<const double> w, const Matrix& x, bool derivatives) {
  check_weights(spec_, w);
  if (x.rows() != spec_.inputs()) throw ShapeError("batch input has wrong row count");
  derivatives_ = derivatives;
  const int d = spec_.inputs();
  const int C = channels();
  const int dd = C - 1;
  const int s = 1 + second_input_;
  const auto n = x.cols();
  const auto layers = layout(spec_);
  const int L = static_cast<int>(layers.size());

  pre_.resize(L + 1);
  act_.resize(L + 1);
  slope_.resize(L + 1);
  for (auto& v : pre_) v.resize(C);
  for (auto& v : act_) v.resize(C);

  act_[0][0] = x;
  if (derivatives) {
    for (int i = 0; i < d; ++i) {
      act_[0][1 + i].setZero(d, n);
      act_[0][1 + i].row(i).setOnes();
    }
    act_[0][dd].setZero(d, n);
  }

  for (int l = 1; l <= L; ++l) {
    const auto& ly = layers[l - 1];
    Eigen::Map<const RowMat> W(w.data() + ly.weights, ly.out, ly.in);
    Eigen::Map<const Eigen::VectorXd> b(w.data() + ly.biases, ly.out);
    const bool hidden = l < L;
    const Activation act = hidden ? spec_.hidden_activation : spec_.output_activation;
    auto& Z = pre_[l];
    auto& A = act_[l];
    Z[0].noalias() = W * act_[l - 1][0];
    Z[0].colwise() += b;
    for (int c = 1; c < C; ++c) Z[c].noalias() = W * act_[l - 1][c];

    if (act == Activation::linear) {
      for (int c = 0; c < C; ++c) A[c] = Z[c];
      continue;
    }
    fast_tanh(Z[0], A[0]);
    slope_[l] = (1.0 - A[0].array().square()).matrix();
    const auto S = slope_[l].array();
    if (derivatives) {
      A[dd] = (S * Z[dd].array() - 2.0 * A[0].array() * S * Z[s].array().square()).matrix();
      for (int c = 1; c <= d; ++c) A[c] = (S * Z[c].array()).matrix();
    }
  }
}

void BatchMlp::backward(std::span<const double> w, std::span<const Matrix> adjoint,
                        std::span<double> grad) {
  check_weights(spec_, w);
  if (grad.size() != w.size()) throw ShapeError("gradient buffer has wrong size");
  if (spec_.output_activation == Activation::tanh) {
    throw ValidationError("backward supports linear output layers only");
  }
  // Without derivative channels only the value channel exists.
  const int d = derivatives_ ? spec_.inputs() : 0;
  const int C = channels();
  const int dd = derivatives_ ? C - 1 : -1;
  const int s = 1 + second_input_;
  const auto layers = layout(spec_);
  const int L = static_cast<int>(layers.size());

  // zbar_[c]: adjoint of the current layer's pre-activation channel c.
  zbar_.resize(C);
  abar_.resize(C);
  std::vector<bool> live(C, false);
  for (int c = 0; c < C; ++c) {
    if (c < static_cast<int>(adjoint.size()) && adjoint[c].size() > 0) {
      zbar_[c] = adjoint[c];
      live[c] = true;
    }
  }

  for (int l = L; l >= 1; --l) {
    const auto& ly = layers[l - 1];
    Eigen::Map<const RowMat> W(w.data() + ly.weights, ly.out, ly.in);
    Eigen::Map<RowMat> gW(grad.data() + ly.weights, ly.out, ly.in);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + ly.biases, ly.out);
    gw_.setZero(ly.out, ly.in);
    for (int c = 0; c < C; ++c) {
      if (live[c]) gw_.noalias() += zbar_[c] * act_[l - 1][c].transpose();
    }
    gW += gw_;
    if (live[0]) {
      gb_ = zbar_[0].rowwise().sum();
      gb += gb_;
    }
    if (l == 1) break;

    for (int c = 0; c < C; ++c) {
      if (live[c]) abar_[c].noalias() = W.transpose() * zbar_[c];
    }
    // Pull the adjoints back through the tanh of layer l-1:
    // a' = S z', a'' = S z'' + S1 z_s'^2 with S1 = dS/dz, S2 = d^2S/dz^2.
    const int h = l - 1;
    const auto A0 = act_[h][0].array();
    const auto S = slope_[h].array();
    s1_ = -2.0 * A0 * S;
    bool any_first = false;
    for (int c = 1; c <= d; ++c) any_first = any_first || live[c];
    const bool live_dd = dd >= 0 && live[dd];
    const bool live0 = live[0] || any_first || live_dd;

    auto& z0 = zbar_[0];
    if (live[0]) {
      z0 = (abar_[0].array() * S).matrix();
    } else if (live0) {
      z0.setZero(ly.in, act_[h][0].cols());
    }
    for (int c = 1; c <= d; ++c) {
      if (live[c]) z0.array() += abar_[c].array() * s1_ * pre_[h][c].array();
    }
    if (live_dd) {
      s2_ = -2.0 * S.square() + 4.0 * A0.square() * S;
      z0.array() += abar_[dd].array() *
                    (s2_ * pre_[h][s].array().square() + s1_ * pre_[h][dd].array());
    }

    std::vector<bool> next(C, false);
    next[0] = live0;
    for (int c = 1; c <= d; ++c) {
      const bool from_dd = (c == s) && live_dd;
      if (live[c] && from_dd) {
        zbar_[c] = (abar_[c].array() * S +
                    2.0 * abar_[dd].array() * s1_ * pre_[h][s].array())
                       .matrix();
      } else if (live[c]) {
        zbar_[c] = (abar_[c].array() * S).matrix();
      } else if (from_dd) {
        zbar_[c] = (2.0 * abar_[dd].array() * s1_ * pre_[h][s].array()).matrix();
      }
      next[c] = live[c] || from_dd;
    }
    if (live_dd) {
      zbar_[dd] = (abar_[dd].array() * S).matrix();
      next[dd] = true;
    }
    live = std::move(next);
  }
}

WeightVector init_weights(const MlpSpec& spec, std::uint64_t seed) {
  WeightVector w(param_count(spec), 0.0);
  std::mt19937_64 rng(seed);
  for (const auto& L : layout(spec)) {
    const double limit = std::sqrt(6.0 / (L.in + L.out));
    for (std::size_t i = 0; i < static_cast<std::size_t>(L.in) * L.out; ++i) {
      // 53 random bits -> [0, 1)
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      w[L.weights + i] = (2.0 * u - 1.0) * limit;
    }
  }
  return w;
}

void adam_step(AdamState& st, std::span<const double> grad, std::span<double> w) {
  if (grad.size() != w.size() || st.m.size() != w.size() || st.v.size() != w.size())
    throw ShapeError("adam_step: gradient, weights and moments differ in length");
  ++st.step;
  g_adam_steps.fetch_add(1, std::memory_order_relaxed);
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    w[i] -= st.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.eps);
  }
}

std::uint64_t adam_step_count() { return g_adam_steps.load(std::memory_order_relaxed); }

namespace {

template <class T>
void put_le(std::ostream& out, T value) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& in, const std::string& path) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) throw IoError("truncated weight file " + path);
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

void write_weights(const std::string& path, const MlpSpec& spec, std::span<const double> w,
                   WeightFormat format) {
  check_weights(spec, w);
  if (format == WeightFormat::text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "aph-weights 1 text\nlayers";
    for (int n : spec.layer_sizes) out << ' ' << n;
    out << "\ncount " << w.size() << '\n';
    char buf[40];
    for (double v : w) {
      std::snprintf(buf, sizeof buf, "%.17g\n", v);
      out << buf;
    }
    if (!out) throw IoError("write failed for " + path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write("APHW", 4);
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.layer_sizes.size()));
  for (int n : spec.layer_sizes) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  put_le<std::uint64_t>(out, w.size());
  for (double v : w) put_le<double>(out, v);
  if (!out) throw IoError("write failed for " + path);
}

std::pair<MlpSpec, WeightVector> read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  MlpSpec spec;
  WeightVector w;
  if (in && std::memcmp(magic, "APHW", 4) == 0) {
    if (get_le<std::uint32_t>(in, path) != 1) throw IoError("unsupported weight file version");
    const auto layers = get_le<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < layers; ++i)
      spec.layer_sizes.push_back(static_cast<int>(get_le<std::uint32_t>(in, path)));
    const auto count = get_le<std::uint64_t>(in, path);
    if (count != param_count(spec)) throw IoError("weight count does not match shape header");
    w.resize(count);
    for (auto& v : w) v = get_le<double>(in, path);
    return {spec, w};
  }

  in.clear();
  in.seekg(0);
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw ParseError("unexpected end of " + path, lineno + 1);
    ++lineno;
    return std::istringstream(line);
  };
  {
    auto ls = next_line();
    std::string tag, kind;
    int version = 0;
    ls >> tag >> version >> kind;
    if (tag != "aph-weights" || version != 1 || kind != "text")
      throw ParseError("not an aph weight file: " + path, lineno);
  }
  {
    auto ls = next_line();
    std::string key;
    ls >> key;
    if (key != "layers") throw ParseError("expected 'layers'", lineno);
    for (int n; ls >> n;) spec.layer_sizes.push_back(n);
  }
  std::size_t count = 0;
  {
    auto ls = next_line();
    std::string key;
    ls >> key >> count;
    if (key != "count") throw ParseError("expected 'count'", lineno);
  }
  if (count != param_count(spec)) throw ParseError("count does not match layers", lineno);
  w.resize(count);
  for (auto& v : w) {
    next_line();
    char* end = nullptr;
    v = std::strtod(line.c_str(), &end);
    if (end == line.c_str()) throw ParseError("bad number '" + line + "'", lineno);
  }
  return {spec, w};
}

}  // namespace aph::nn
