#include "aph/pinn.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <type_traits>

namespace aph::pinn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double radical_inverse(std::uint64_t n, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (n > 0) {
    r += f * static_cast<double>(n % base);
    n /= base;
    f *= inv;
  }
  return r;
}

double unit_from(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

std::vector<double> uniform_nodes(int n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = 0.5;
    return v;
  }
  for (int i = 0; i < n; ++i) v[i] = static_cast<double>(i) / (n - 1);
  return v;
}

}  // namespace

const nn::MlpSpec& base_spec() {
  static const nn::MlpSpec spec{{2, 16, 16, 2}, nn::Activation::tanh, nn::Activation::linear};
  return spec;
}

void LossWeights::validate() const {
  for (double w : {pde, bc, interface, neumann}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("loss weights must be >= 0");
  }
  if (pde + bc + interface + neumann == 0.0)
    throw ValidationError("loss weights must not all be zero");
}

void TaskPinn::validate() const {
  for (const auto& w : weights) {
    if (w.size() != kBaseParams)
      throw ShapeError("sub-network weight vector must have 354 entries");
    for (double v : w) {
      if (!std::isfinite(v)) throw ValidationError("non-finite PINN weight");
    }
  }
}

std::vector<double> TaskPinn::flat() const {
  std::vector<double> out;
  out.reserve(kSectors * kBaseParams);
  for (const auto& w : weights) out.insert(out.end(), w.begin(), w.end());
  return out;
}

TaskPinn TaskPinn::from_flat(std::span<const double> flat) {
  if (flat.size() != kSectors * kBaseParams) throw ShapeError("flat PINN must have 3 x 354 values");
  TaskPinn t;
  for (int j = 0; j < kSectors; ++j) {
    const auto part = flat.subspan(j * kBaseParams, kBaseParams);
    t.weights[j].assign(part.begin(), part.end());
  }
  return t;
}

void CollocationCounts::validate() const {
  if (interior < 1 || inlet < 1 || interface < 1 || neumann < 1)
    throw ValidationError("collocation counts must be >= 1");
}

CollocationSet make_collocation(const CollocationCounts& counts, std::uint64_t seed) {
  counts.validate();
  CollocationSet c;
  c.seed = seed;
  for (int j = 0; j < kSectors; ++j) {
    // Cranley-Patterson rotation of the Halton(2, 3) sequence per sector.
    const double s0 = unit_from(splitmix64(seed * 7 + 2 * j));
    const double s1 = unit_from(splitmix64(seed * 7 + 2 * j + 1));
    auto& pts = c.interior[j];
    pts.reserve(counts.interior);
    for (int n = 1; n <= counts.interior; ++n) {
      pts.push_back({std::fmod(radical_inverse(n, 2) + s0, 1.0),
                     std::fmod(radical_inverse(n, 3) + s1, 1.0)});
    }
    c.inlet_phi[j] = uniform_nodes(counts.inlet);
    c.neumann_phi[j] = uniform_nodes(counts.neumann);
  }
  const auto zs = uniform_nodes(counts.interface);
  auto pairs = [&](int a, double phi_a, int b, double phi_b, bool flip) {
    InterfacePairs ip;
    ip.a = a;
    ip.b = b;
    for (double z : zs) {
      ip.points_a.push_back({phi_a, z});
      ip.points_b.push_back({phi_b, flip ? 1.0 - z : z});
    }
    return ip;
  };
  c.interfaces[0] = pairs(0, 0.0, 2, 1.0, true);   // gas inlet <- secondary-air exit
  c.interfaces[1] = pairs(0, 1.0, 1, 0.0, true);   // gas exit -> primary-air inlet
  c.interfaces[2] = pairs(1, 1.0, 2, 0.0, false);  // primary-air exit -> secondary-air inlet
  return c;
}

double residual_conduction(Point x, const WeightVector& net, int j, const NondimParams& p) {
  const double in[] = {x.phi, x.z};
  const auto d = nn::input_derivatives(base_spec(), net, in, 1);
  const double t = d.outputs[kFluid], tm = d.outputs[kMetal];
  return d.first[0][kMetal] - p.ntu[j] * (t - tm) - d.second[kMetal] / p.pe[j];
}

double residual_convection(Point x, const WeightVector& net, int j, const NondimParams& p) {
  const double in[] = {x.phi, x.z};
  const auto d = nn::input_derivatives(base_spec(), net, in, 1);
  const double t = d.outputs[kFluid], tm = d.outputs[kMetal];
  return d.first[1][kFluid] - p.ntu[j] * (tm - t);
}

PinnLoss::PinnLoss(const CollocationSet& c, const NondimParams& p, const LossWeights& lw)
    : p_(p), lw_(lw) {
  p.validate();
  lw.validate();
  for (int j = 0; j < kSectors; ++j) {
    std::vector<Point> pts = c.interior[j];
    auto& b = batches_[j];
    b.interior = static_cast<int>(c.interior[j].size());
    for (double phi : c.inlet_phi[j]) pts.push_back({phi, 0.0});
    b.inlet = static_cast<int>(c.inlet_phi[j].size());
    for (double phi : c.neumann_phi[j]) pts.push_back({phi, 0.0});
    for (double phi : c.neumann_phi[j]) pts.push_back({phi, 1.0});
    b.neumann = 2 * static_cast<int>(c.neumann_phi[j].size());
    b.iface_begin = static_cast<int>(pts.size());
    for (int k = 0; k < kSectors; ++k) {
      const auto& ip = c.interfaces[k];
      if (ip.points_a.size() != ip.points_b.size() || ip.points_a.empty())
        throw ShapeError("interface point lists must pair up");
      for (int side = 0; side < 2; ++side) {
        if ((side == 0 ? ip.a : ip.b) != j) continue;
        const auto& src = side == 0 ? ip.points_a : ip.points_b;
        b.slots.push_back({k, side, static_cast<int>(pts.size()), static_cast<int>(src.size())});
        pts.insert(pts.end(), src.begin(), src.end());
      }
      iface_count_[k] = static_cast<int>(ip.points_a.size());
    }
    b.x.resize(2, static_cast<Eigen::Index>(pts.size()));
    for (std::size_t n = 0; n < pts.size(); ++n) {
      b.x(0, n) = pts[n].phi;
      b.x(1, n) = pts[n].z;
    }
    mlps_.emplace_back(base_spec(), 1);
  }
}

LossBreakdown PinnLoss::evaluate(const std::array<WeightVector, kSectors>& nets) {
  return run(nets, {});
}

LossBreakdown PinnLoss::evaluate(const std::array<WeightVector, kSectors>& nets,
                                 std::span<double> grad) {
  if (grad.size() != kSectors * kBaseParams) throw ShapeError("gradient must have 3 x 354 entries");
  return run(nets, grad);
}

LossBreakdown PinnLoss::run(const std::array<WeightVector, kSectors>& nets,
                            std::span<double> grad) {
  const bool want_grad = !grad.empty();
  for (int j = 0; j < kSectors; ++j) mlps_[j].forward(nets[j], batches_[j].x, true);

  auto& adj = adjoints_;
  if (want_grad) {
    for (int j = 0; j < kSectors; ++j) {
      adj[j].resize(4);
      for (auto& m : adj[j]) m.setZero(2, batches_[j].x.cols());
    }
  }

  LossBreakdown out;
  const double third = 1.0 / kSectors;
  for (int j = 0; j < kSectors; ++j) {
    const auto& b = batches_[j];
    const auto& U = mlps_[j].output(0);
    const auto& Up = mlps_[j].output(1);
    const auto& Uz = mlps_[j].output(2);
    const auto& Uzz = mlps_[j].output(3);
    const double ntu = p_.ntu[j], inv_pe = 1.0 / p_.pe[j];

    // Conduction and convection residuals on interior points.
    const double cp = lw_.pde * third / b.interior;
    double sum = 0.0;
    for (int i = 0; i < b.interior; ++i) {
      const double t = U(kFluid, i), tm = U(kMetal, i);
      const double rc = Up(kMetal, i) - ntu * (t - tm) - inv_pe * Uzz(kMetal, i);
      const double rv = Uz(kFluid, i) - ntu * (tm - t);
      sum += rc * rc + rv * rv;
      if (want_grad) {
        const double gc = 2.0 * cp * rc, gv = 2.0 * cp * rv;
        adj[j][1](kMetal, i) += gc;
        adj[j][3](kMetal, i) -= gc * inv_pe;
        adj[j][2](kFluid, i) += gv;
        adj[j][0](kFluid, i) += -ntu * gc + ntu * gv;
        adj[j][0](kMetal, i) += ntu * gc - ntu * gv;
      }
    }
    out.pde += cp * sum;

    // Fluid inlet condition.
    const double cb = lw_.bc * third / b.inlet;
    sum = 0.0;
    for (int i = b.interior; i < b.interior + b.inlet; ++i) {
      const double r = U(kFluid, i) - p_.theta_in[j];
      sum += r * r;
      if (want_grad) adj[j][0](kFluid, i) += 2.0 * cb * r;
    }
    out.bc += cb * sum;

    // Zero axial metal gradient at both ends.
    const double cn = lw_.neumann * third / b.neumann;
    sum = 0.0;
    const int nb = b.interior + b.inlet;
    for (int i = nb; i < nb + b.neumann; ++i) {
      const double r = Uz(kMetal, i);
      sum += r * r;
      if (want_grad) adj[j][2](kMetal, i) += 2.0 * cn * r;
    }
    out.neumann += cn * sum;
  }

  // Metal continuity across the three sector boundaries.
  for (int k = 0; k < kSectors; ++k) {
    int sec[2] = {-1, -1}, off[2] = {0, 0};
    for (int j = 0; j < kSectors; ++j) {
      for (const auto& s : batches_[j].slots) {
        if (s.iface == k) {
          sec[s.side] = j;
          off[s.side] = s.offset;
        }
      }
    }
    const int n = iface_count_[k];
    const double ci = lw_.interface * third / n;
    const auto& Ua = mlps_[sec[0]].output(0);
    const auto& Ub = mlps_[sec[1]].output(0);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = Ua(kMetal, off[0] + i) - Ub(kMetal, off[1] + i);
      sum += r * r;
      if (want_grad) {
        adj[sec[0]][0](kMetal, off[0] + i) += 2.0 * ci * r;
        adj[sec[1]][0](kMetal, off[1] + i) -= 2.0 * ci * r;
      }
    }
    out.interface += ci * sum;
  }

  const std::pair<const char*, double> terms[] = {
      {"pde", out.pde}, {"bc", out.bc}, {"interface", out.interface}, {"neumann", out.neumann}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite PINN loss term: ") + name);
  }

  if (want_grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int j = 0; j < kSectors; ++j) {
      mlps_[j].backward(nets[j], adj[j], grad.subspan(j * kBaseParams, kBaseParams));
    }
  }
  return out;
}

LossBreakdown loss_total(const std::array<WeightVector, kSectors>& nets,
                         const CollocationSet& c, const NondimParams& p,
                         const LossWeights& lw) {
  PinnLoss loss(c, p, lw);
  return loss.evaluate(nets);
}

void TrainConfig::validate() const {
  counts.validate();
  weights.validate();
  if (!(lr > 0.0)) throw ValidationError("lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ValidationError("lr_decay must lie in (0, 1]");
  if (decay_every < 1) throw ValidationError("decay_every must be >= 1");
  if (max_steps < 1) throw ValidationError("max_steps must be >= 1");
  if (plateau_window < 1) throw ValidationError("plateau_window must be >= 1");
}

TrainResult train_base_pinn(const NondimParams& p, const TrainConfig& cfg, std::uint64_t seed,
                            const TaskPinn* warm_start) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  PinnLoss loss(make_collocation(cfg.counts, seed), p, cfg.weights);

  TaskPinn current;
  current.seed = seed;
  if (warm_start) {
    warm_start->validate();
    current.weights = warm_start->weights;
  } else {
    for (int j = 0; j < kSectors; ++j)
      current.weights[j] = nn::init_weights(base_spec(), splitmix64(seed * 3 + j));
  }

  std::vector<double> w = current.flat();
  std::vector<double> grad(w.size());
  auto st = nn::AdamState::for_size(w.size(), cfg.lr);

  TaskPinn best = current;
  double best_loss = INFINITY;
  std::vector<double> best_history;
  TrainReport report;
  report.stop_reason = "max_steps";

  auto unpack = [&](std::array<WeightVector, kSectors>& nets) {
    for (int j = 0; j < kSectors; ++j)
      std::copy_n(w.begin() + j * kBaseParams, kBaseParams, nets[j].begin());
  };

  for (int step = 0; step < cfg.max_steps; ++step) {
    unpack(current.weights);
    LossBreakdown l;
    try {
      l = loss.evaluate(current.weights, grad);
    } catch (const NumericalError& e) {
      throw PinnTrainingError(std::string("PINN training diverged: ") + e.what(), best);
    }
    const double total = l.total();
    report.loss_history.push_back(total);
    report.steps = step + 1;
    if (total < best_loss) {
      best_loss = total;
      best.weights = current.weights;
      best.final_losses = l;
    }
    best_history.push_back(best_loss);
    if (best_loss < cfg.target_loss) {
      report.stop_reason = "target_loss";
      break;
    }
    if (step >= cfg.plateau_window &&
        best_history[step - cfg.plateau_window] - best_loss < cfg.plateau_delta) {
      report.stop_reason = "plateau";
      break;
    }
    st.lr = cfg.lr * std::pow(cfg.lr_decay, step / cfg.decay_every);
    nn::adam_step(st, grad, w);
  }

  report.best_loss = best_loss;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  best.seed = seed;
  return {std::move(best), std::move(report)};
}

TrainResult train_task(const OperatingCondition& c, const model::ModelConfig& mc,
                       const TrainConfig& cfg, std::uint64_t seed, const TaskPinn* warm_start) {
  auto result = train_base_pinn(model::to_nondim(c, mc), cfg, seed, warm_start);
  result.pinn.condition = c;
  return result;
}

namespace {

constexpr int kHidden = 16;
constexpr int kBlock = 128;

template <class T>
using Block = Eigen::Matrix<T, kHidden, kBlock, Eigen::RowMajor>;

template <class T>
void hidden_tanh(Block<T>& z) {
  if constexpr (std::is_same_v<T, float>) {
    z = z.array().tanh().matrix();
  } else {
    // Same formula as the training path, so both agree to rounding.
    z = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
  }
}

// Sub-network on padded input columns, fixed-size blocks of kBlock points.
template <class T>
void evaluate_base(const WeightVector& w, const Eigen::Matrix<T, 2, Eigen::Dynamic>& x,
                   Eigen::Matrix<T, 2, Eigen::Dynamic>& y) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Matrix<T, kHidden, 2> W1 = Eigen::Map<const RowMat>(w.data(), 16, 2).cast<T>();
  const Eigen::Matrix<T, kHidden, 1> b1 = Eigen::Map<const Eigen::VectorXd>(w.data() + 32, 16).cast<T>();
  const Eigen::Matrix<T, kHidden, kHidden> W2 =
      Eigen::Map<const RowMat>(w.data() + 48, 16, 16).cast<T>();
  const Eigen::Matrix<T, kHidden, 1> b2 = Eigen::Map<const Eigen::VectorXd>(w.data() + 304, 16).cast<T>();
  const Eigen::Matrix<T, 2, kHidden> W3 = Eigen::Map<const RowMat>(w.data() + 320, 2, 16).cast<T>();
  const Eigen::Matrix<T, 2, 1> b3 = Eigen::Map<const Eigen::VectorXd>(w.data() + 352, 2).cast<T>();
  y.resize(2, x.cols());
  Block<T> z, a;
  for (Eigen::Index b0 = 0; b0 < x.cols(); b0 += kBlock) {
    z.noalias() = W1.lazyProduct(x.template middleCols<kBlock>(b0));
    z.colwise() += b1;
    hidden_tanh(z);
    a.noalias() = W2.lazyProduct(z);
    a.colwise() += b2;
    hidden_tanh(a);
    y.template middleCols<kBlock>(b0).noalias() = W3.lazyProduct(a);
    y.template middleCols<kBlock>(b0).colwise() += b3;
  }
}

template <class T>
void evaluate_sectors(const TaskPinn& t, const fd::Grid& g, fd::FieldSolution& f) {
  const Eigen::Index n = static_cast<Eigen::Index>(g.nodes());
  const Eigen::Index padded = (n + kBlock - 1) / kBlock * kBlock;
  Eigen::Matrix<T, 2, Eigen::Dynamic> x = Eigen::Matrix<T, 2, Eigen::Dynamic>::Zero(2, padded);
  for (int i = 0; i < g.n_phi; ++i) {
    for (int k = 0; k < g.n_z; ++k) {
      const auto c = static_cast<Eigen::Index>(f.idx(i, k));
      x(0, c) = static_cast<T>(g.phi(i));
      x(1, c) = static_cast<T>(g.z(k));
    }
  }
  Eigen::Matrix<T, 2, Eigen::Dynamic> u;
  for (int j = 0; j < kSectors; ++j) {
    evaluate_base<T>(t.weights[j], x, u);
    auto& s = f.sectors[j];
    for (Eigen::Index c = 0; c < n; ++c) {
      s.fluid[c] = static_cast<double>(u(kFluid, c));
      s.metal[c] = static_cast<double>(u(kMetal, c));
    }
  }
}

}  // namespace

fd::FieldSolution evaluate_field(const TaskPinn& t, const fd::Grid& g, const NondimParams* p,
                                 Precision precision) {
  t.validate();
  g.validate();
  auto f = fd::FieldSolution::filled(g, p ? *p : NondimParams{}, 0.0);
  if (precision == Precision::single) {
    evaluate_sectors<float>(t, g, f);
  } else {
    evaluate_sectors<double>(t, g, f);
  }
  return f;
}

}  // namespace aph::pinn
