#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "aph/error.hpp"
#include "aph/nn.hpp"
#include "aph/tape.hpp"
#include "doctest.h"
#include "unit/oracle.hpp"

using namespace aph;
using namespace aph::nn;

namespace {

const MlpSpec kBase{{2, 16, 16, 2}};

double output_at(const MlpSpec& spec, std::span<const double> w, std::span<const double> x,
                 int o) {
  return forward(spec, w, x)[o];
}

}  // namespace

TEST_CASE("param_count") {
  CHECK(param_count(kBase) == 354);
  CHECK(param_count(MlpSpec{{2, 2}}) == 6);
  // Hypernetwork: 4 -> 256 -> 256 trunk plus three 354-wide linear heads.
  const std::size_t trunk = param_count(MlpSpec{{4, 256, 256}});
  const std::size_t head = param_count(MlpSpec{{256, 354}});
  CHECK(trunk == 1280 + 65792);
  CHECK(trunk + 3 * head == 340006);
  CHECK_THROWS_AS(param_count(MlpSpec{{3}}), ValidationError);
  CHECK_THROWS_AS(param_count(MlpSpec{{2, 0, 1}}), ValidationError);
}

TEST_CASE("forward basics") {
  const WeightVector zero(354, 0.0);
  const double x[] = {0.3, 0.7};
  for (double v : forward(kBase, zero, x)) CHECK(v == 0.0);

  const MlpSpec linear{{2, 2}, Activation::tanh, Activation::linear};
  const WeightVector w = {2, 0, 0, 3, 0, 0};
  const double ones[] = {1.0, 1.0};
  const auto y = forward(linear, w, ones);
  CHECK(y[0] == 2.0);
  CHECK(y[1] == 3.0);
}

TEST_CASE("forward rejects mismatched inputs") {
  const WeightVector zero(354, 0.0);
  const double x3[] = {0.1, 0.2, 0.3};
  CHECK_THROWS_AS(forward(kBase, zero, x3), ShapeError);
  const WeightVector short_w(353, 0.0);
  const double x2[] = {0.1, 0.2};
  CHECK_THROWS_AS(forward(kBase, short_w, x2), ShapeError);
}

TEST_CASE("tanh hidden saturation bounds the output") {
  // 2 -> 1 -> 1 network; hidden pre-activation 10 vs 1e7.
  const MlpSpec spec{{2, 1, 1}};
  WeightVector w = {1.0, 0.0, 9.0, /*out*/ 2.0, 0.5};
  const double x[] = {1.0, 0.0};
  const double y1 = forward(spec, w, x)[0];
  w[0] *= 1e6;
  w[2] *= 1e6;
  const double y2 = forward(spec, w, x)[0];
  CHECK(std::abs(y2 - y1) / std::abs(y1) < 1e-6);
}

TEST_CASE("input derivatives of simple networks") {
  const WeightVector zero(354, 0.0);
  const double x[] = {0.4, 0.6};
  const auto d0 = input_derivatives(kBase, zero, x);
  for (const auto& row : d0.first)
    for (double v : row) CHECK(v == 0.0);
  for (double v : d0.second) CHECK(v == 0.0);

  // out = 3 phi + 5 z through a single linear layer.
  const MlpSpec lin{{2, 1}};
  const WeightVector w = {3.0, 5.0, 0.0};
  const auto d = input_derivatives(lin, w, x);
  CHECK(d.first[0][0] == doctest::Approx(3.0));
  CHECK(d.first[1][0] == doctest::Approx(5.0));
  CHECK(d.second[0] == 0.0);
}

TEST_CASE("input derivatives match central differences on random networks") {
  const double h = 1e-4;
  double worst1 = 0.0, worst2 = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto w = init_weights(kBase, seed);
    auto wb = w;
    // Non-zero biases exercise the offset path.
    for (std::size_t i = 0; i < wb.size(); ++i) wb[i] += 0.1 * std::sin(double(i) + seed);
    const std::vector<double> x = {0.1 + 0.04 * seed, 0.9 - 0.035 * seed};
    const auto d = input_derivatives(kBase, wb, x);
    for (int o = 0; o < 2; ++o) {
      auto f = [&](std::span<const double> xx) { return output_at(kBase, wb, xx, o); };
      for (int i = 0; i < 2; ++i) {
        worst1 = std::max(worst1, oracle::rel_err(d.first[i][o], oracle::central_diff(f, x, i, h)));
      }
      worst2 = std::max(worst2, oracle::rel_err(d.second[o], oracle::central_diff2(f, x, 1, h)));
    }
  }
  CHECK(worst1 < 1e-5);
  CHECK(worst2 < 1e-3);
}

TEST_CASE("batched evaluation agrees with the pointwise routines") {
  auto w = init_weights(kBase, 7);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += 0.05 * std::cos(double(i));
  Eigen::MatrixXd X(2, 5);
  X << 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 0.1, 0.33, 0.5, 0.0;
  BatchMlp batch(kBase);
  batch.forward(w, X, true);
  for (int p = 0; p < 5; ++p) {
    const double x[] = {X(0, p), X(1, p)};
    const auto d = input_derivatives(kBase, w, x);
    for (int o = 0; o < 2; ++o) {
      CHECK(batch.output(0)(o, p) == doctest::Approx(d.outputs[o]).epsilon(1e-13));
      CHECK(batch.output(1)(o, p) == doctest::Approx(d.first[0][o]).epsilon(1e-12));
      CHECK(batch.output(2)(o, p) == doctest::Approx(d.first[1][o]).epsilon(1e-12));
      CHECK(batch.output(3)(o, p) == doctest::Approx(d.second[o]).epsilon(1e-12));
    }
  }
}

namespace {

// Scalar loss mixing every channel, evaluated through the batch engine.
double mixed_loss(const MlpSpec& spec, std::span<const double> w, const Eigen::MatrixXd& X) {
  BatchMlp b(spec);
  b.forward(w, X, true);
  const auto& u = b.output(0);
  const auto& up = b.output(1);
  const auto& uz = b.output(2);
  const auto& uzz = b.output(3);
  return 0.5 * u.squaredNorm() + (up.array() * uz.array()).sum() +
         0.25 * uzz.squaredNorm() + up.row(0).sum();
}

void mixed_adjoints(const BatchMlp& b, std::vector<Eigen::MatrixXd>& adj) {
  adj.resize(4);
  adj[0] = b.output(0);
  adj[1] = b.output(2);
  adj[1].row(0).array() += 1.0;
  adj[2] = b.output(1);
  adj[3] = 0.5 * b.output(3);
}

}  // namespace

TEST_CASE("batched reverse pass matches finite differences of the weights") {
  const MlpSpec spec{{2, 5, 4, 2}};
  auto w = init_weights(spec, 3);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += 0.2 * std::sin(3.0 * i);
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(2, 7).array() * 0.5 + 0.5;

  BatchMlp b(spec);
  b.forward(w, X, true);
  std::vector<Eigen::MatrixXd> adj;
  mixed_adjoints(b, adj);
  std::vector<double> grad(w.size(), 0.0);
  b.backward(w, adj, grad);

  auto f = [&](std::span<const double> ww) { return mixed_loss(spec, ww, X); };
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    worst = std::max(worst, oracle::rel_err(grad[i], oracle::central_diff(f, w, i, 1e-5)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("value-only reverse pass matches finite differences") {
  const MlpSpec spec{{4, 6, 5, 3}};
  auto w = init_weights(spec, 21);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Random(4, 6);
  const Eigen::MatrixXd T = Eigen::MatrixXd::Random(3, 6);
  auto loss = [&](std::span<const double> ww) {
    Eigen::MatrixXd y;
    evaluate(spec, ww, X, y);
    return 0.5 * (y - T).squaredNorm();
  };

  BatchMlp b(spec);
  b.forward(w, X, false);
  CHECK(b.channels() == 1);
  Eigen::MatrixXd y;
  evaluate(spec, w, X, y);
  CHECK((b.output(0) - y).cwiseAbs().maxCoeff() < 1e-15);

  const std::vector<Eigen::MatrixXd> adj = {b.output(0) - T};
  std::vector<double> grad(w.size(), 0.0);
  b.backward(w, adj, grad);
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    worst = std::max(worst, oracle::rel_err(grad[i], oracle::central_diff(loss, w, i, 1e-6)));
  }
  CHECK(worst < 1e-7);
}

TEST_CASE("blocked evaluation matches pointwise forward") {
  const MlpSpec spec{{3, 7, 2}};
  const auto w = init_weights(spec, 4);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 1100);
  Eigen::MatrixXd y;
  evaluate(spec, w, X, y);
  REQUIRE(y.cols() == 1100);
  double worst = 0.0;
  for (Eigen::Index p = 0; p < X.cols(); p += 37) {
    const double x[] = {X(0, p), X(1, p), X(2, p)};
    const auto f = forward(spec, w, x);
    for (int o = 0; o < 2; ++o) worst = std::max(worst, std::abs(f[o] - y(o, p)));
  }
  CHECK(worst < 1e-14);
  CHECK_THROWS_AS(evaluate(spec, w, Eigen::MatrixXd::Zero(2, 4), y), ShapeError);
}

namespace {

// The same mixed loss recorded on the scalar tape, with forward-mode
// channels expressed as tape arithmetic.
Var tape_mixed_loss(Tape& t, std::span<const Var> w, const MlpSpec& spec,
                    const Eigen::MatrixXd& X) {
  Var total = t.constant(0.0);
  for (Eigen::Index p = 0; p < X.cols(); ++p) {
    std::vector<Var> a = {t.constant(X(0, p)), t.constant(X(1, p))};
    std::vector<Var> ap = {t.constant(1.0), t.constant(0.0)};
    std::vector<Var> az = {t.constant(0.0), t.constant(1.0)};
    std::vector<Var> azz = {t.constant(0.0), t.constant(0.0)};
    std::size_t off = 0;
    for (int l = 0; l < spec.layers(); ++l) {
      const int in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
      const std::size_t boff = off + static_cast<std::size_t>(in) * out;
      std::vector<Var> z, zp, zz, zzz;
      for (int o = 0; o < out; ++o) {
        Var s = w[boff + o], sp = t.constant(0), sz = t.constant(0), szz = t.constant(0);
        for (int i = 0; i < in; ++i) {
          const Var& wi = w[off + o * in + i];
          s = s + wi * a[i];
          sp = sp + wi * ap[i];
          sz = sz + wi * az[i];
          szz = szz + wi * azz[i];
        }
        z.push_back(s);
        zp.push_back(sp);
        zz.push_back(sz);
        zzz.push_back(szz);
      }
      if (l + 1 < spec.layers()) {
        for (int o = 0; o < out; ++o) {
          const Var th = tanh(z[o]);
          const Var slope = t.constant(1.0) - square(th);
          zzz[o] = slope * zzz[o] - 2.0 * (th * slope * square(zz[o]));
          zp[o] = slope * zp[o];
          zz[o] = slope * zz[o];
          z[o] = th;
        }
      }
      a = z;
      ap = zp;
      az = zz;
      azz = zzz;
      off = boff + out;
    }
    for (int o = 0; o < 2; ++o) {
      total = total + 0.5 * square(a[o]) + ap[o] * az[o] + 0.25 * square(azz[o]);
    }
    total = total + ap[0];
  }
  return total;
}

}  // namespace

TEST_CASE("batched reverse pass agrees with the scalar tape") {
  const MlpSpec spec{{2, 3, 3, 2}};
  auto w = init_weights(spec, 11);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += 0.1 * std::cos(1.7 * i);
  Eigen::MatrixXd X(2, 3);
  X << 0.1, 0.5, 0.9, 0.8, 0.2, 0.6;

  BatchMlp b(spec);
  b.forward(w, X, true);
  std::vector<Eigen::MatrixXd> adj;
  mixed_adjoints(b, adj);
  std::vector<double> grad(w.size(), 0.0);
  b.backward(w, adj, grad);

  const auto tape_grad = loss_gradient(
      [&](Tape& t, std::span<const Var> vars) { return tape_mixed_loss(t, vars, spec, X); }, w);
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(grad[i] == doctest::Approx(tape_grad[i]).epsilon(1e-10));
  }
}

TEST_CASE("loss_gradient on simple losses") {
  const std::vector<double> w = {0.5, -1.5, 2.0, 0.25};
  const auto g = loss_gradient(
      [](Tape& t, std::span<const Var> v) {
        Var s = t.constant(0.0);
        for (const auto& x : v) s = s + square(x);
        return 0.5 * s;
      },
      w);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(g[i] == doctest::Approx(w[i]));

  const auto g2 = loss_gradient(
      [](Tape&, std::span<const Var> v) { return v[0] * v[1] + tanh(v[3]); }, w);
  CHECK(g2[2] == 0.0);
  CHECK(g2[0] == doctest::Approx(w[1]));

  CHECK_THROWS_AS(loss_gradient([](Tape&, std::span<const Var> v) { return v[0] / (v[1] - v[1]); },
                                w),
                  NumericalError);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves weights unchanged") {
    std::vector<double> w = {1.0, -2.0};
    const std::vector<double> g = {0.0, 0.0};
    auto st = AdamState::for_size(2, 1e-3);
    adam_step(st, g, w);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == -2.0);
    CHECK(st.step == 1);
  }
  SUBCASE("first step is lr * g / (|g| + eps)") {
    std::vector<double> w = {0.0, 0.0};
    const std::vector<double> g = {0.3, -4.0};
    auto st = AdamState::for_size(2, 1e-2);
    adam_step(st, g, w);
    CHECK(w[0] == doctest::Approx(-1e-2 * 0.3 / (0.3 + 1e-8)));
    CHECK(w[1] == doctest::Approx(1e-2 * 4.0 / (4.0 + 1e-8)));
  }
  SUBCASE("quadratic bowl converges") {
    // Adam moves each coordinate by about lr per step, so the start must be
    // reachable within the 1000 steps.
    std::vector<double> w = {0.3, -0.18, 0.12};
    const double start = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    auto st = AdamState::for_size(3, 1e-3);
    for (int i = 0; i < 1000; ++i) adam_step(st, std::vector<double>(w), w);
    const double end = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    CHECK(end < 1e-2 * start);
  }
  SUBCASE("step counter is global") {
    const auto before = adam_step_count();
    std::vector<double> w = {1.0};
    auto st = AdamState::for_size(1, 1e-3);
    adam_step(st, std::vector<double>{1.0}, w);
    CHECK(adam_step_count() == before + 1);
  }
}

TEST_CASE("init_weights") {
  const auto a = init_weights(kBase, 42);
  const auto b = init_weights(kBase, 42);
  CHECK(a.size() == 354);
  CHECK(a == b);
  CHECK(init_weights(kBase, 43) != a);
  // biases of layer 1 sit after the 32 weights
  for (int i = 32; i < 48; ++i) CHECK(a[i] == 0.0);

  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = init_weights(kBase, seed);
    for (int i = 0; i < 32; ++i) {
      sum += w[i];
      sq += w[i] * w[i];
      ++n;
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  const double target = std::sqrt(2.0 / (2 + 16));
  CHECK(std::abs(sd - target) < 0.2 * target);
}

TEST_CASE("weight files round-trip in both formats") {
  const auto dir = std::filesystem::temp_directory_path() / "aph_test_nn";
  std::filesystem::create_directories(dir);
  auto w = init_weights(kBase, 9);
  w[40] = 1.0 / 3.0;
  w[41] = -0.0;
  w[42] = 1e-300;
  for (auto fmt : {WeightFormat::text, WeightFormat::binary}) {
    const auto path = (dir / (fmt == WeightFormat::text ? "w.txt" : "w.bin")).string();
    write_weights(path, kBase, w, fmt);
    const auto [spec, back] = read_weights(path);
    CHECK(spec == kBase);
    CHECK(back == w);
  }
  {
    std::ofstream bad((dir / "bad.txt").string());
    bad << "aph-weights 1 text\nlayers 2 2\ncount 6\n1\n2\nxyz\n";
  }
  try {
    read_weights((dir / "bad.txt").string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 6);
  }
  CHECK_THROWS_AS(read_weights((dir / "missing.bin").string()), IoError);
}

TEST_CASE("gradient does not depend on buffer placement") {
  const MlpSpec spec{{2, 16, 16, 2}, Activation::tanh, Activation::linear};
  const auto w = init_weights(spec, 4);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 150);
  for (bool derivatives : {false, true}) {
    std::vector<double> ref;
    for (std::size_t off = 0; off < 8; ++off) {
      std::vector<double> wbuf(w.size() + 8), gbuf(w.size() + 8, 0.0);
      std::copy(w.begin(), w.end(), wbuf.begin() + off);
      const std::span<const double> ws(wbuf.data() + off, w.size());
      const std::span<double> gs(gbuf.data() + off, w.size());
      BatchMlp net(spec, derivatives ? 1 : -1);
      net.forward(ws, x, derivatives);
      std::vector<Eigen::MatrixXd> adj(net.channels(), Eigen::MatrixXd::Constant(2, 150, 0.3));
      net.backward(ws, adj, gs);
      const std::vector<double> g(gs.begin(), gs.end());
      if (off == 0) {
        ref = g;
      } else {
        CHECK(g == ref);
      }
    }
  }
}
