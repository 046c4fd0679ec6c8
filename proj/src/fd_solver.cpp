#include "aph/fd_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "aph/error.hpp"

namespace aph::fd {

void Grid::validate() const {
  if (n_phi < 2) throw ValidationError("grid needs n_phi >= 2");
  if (n_z < 3) throw ValidationError("grid needs n_z >= 3");
}

void SolverSettings::validate() const {
  if (!(outer_tol > 0.0)) throw ValidationError("outer_tol must be > 0");
  if (max_outer_iters < 1) throw ValidationError("max_outer_iters must be >= 1");
  if (!(relaxation > 0.0 && relaxation <= 1.0))
    throw ValidationError("relaxation must lie in (0, 1]");
  if (!(inner_tol > 0.0)) throw ValidationError("inner_tol must be > 0");
  if (max_inner_iters < 1) throw ValidationError("max_inner_iters must be >= 1");
}

FieldSolution FieldSolution::filled(const Grid& g, const NondimParams& p, double value) {
  FieldSolution f;
  f.grid = g;
  f.params = p;
  for (auto& s : f.sectors) {
    s.fluid.assign(g.nodes(), value);
    s.metal.assign(g.nodes(), value);
  }
  return f;
}

namespace {

/// Factorized tridiagonal operator of one backward-Euler metal step:
/// (1 + c + 2r) m_k - r m_{k-1} - r m_{k+1}, ghost-node Neumann rows at the ends.
class MetalStep {
 public:
  MetalStep(int n, double ntu_dphi, double r) : cp_(n), inv_(n), lower_(n), n_(n) {
    const double diag = 1.0 + ntu_dphi + 2.0 * r;
    for (int k = 0; k < n; ++k) lower_[k] = (k == n - 1) ? -2.0 * r : -r;
    auto upper = [&](int k) { return k == 0 ? -2.0 * r : -r; };
    inv_[0] = 1.0 / diag;
    cp_[0] = upper(0) * inv_[0];
    for (int k = 1; k < n; ++k) {
      const double m = diag - lower_[k] * cp_[k - 1];
      inv_[k] = 1.0 / m;
      cp_[k] = k < n - 1 ? upper(k) * inv_[k] : 0.0;
    }
  }

  /// Solves in place: rhs becomes the solution.
  void solve(std::span<double> x) const {
    x[0] *= inv_[0];
    for (int k = 1; k < n_; ++k) x[k] = (x[k] - lower_[k] * x[k - 1]) * inv_[k];
    for (int k = n_ - 2; k >= 0; --k) x[k] -= cp_[k] * x[k + 1];
  }

 private:
  std::vector<double> cp_, inv_, lower_;
  int n_;
};

/// Marches the fluid along z for one φ column given the metal column.
void march_fluid(std::span<const double> metal, std::span<double> fluid, double theta_in,
                 double a, FluidScheme scheme) {
  const std::size_t n = metal.size();
  fluid[0] = theta_in;
  if (scheme == FluidScheme::backward_euler) {
    const double inv = 1.0 / (1.0 + a);
    for (std::size_t k = 1; k < n; ++k) fluid[k] = (fluid[k - 1] + a * metal[k]) * inv;
  } else {
    const double h = 0.5 * a;
    const double inv = 1.0 / (1.0 + h);
    for (std::size_t k = 1; k < n; ++k)
      fluid[k] = ((1.0 - h) * fluid[k - 1] + h * (metal[k] + metal[k - 1])) * inv;
  }
}

std::span<double> column(std::vector<double>& v, int i, int n_z) {
  return {v.data() + static_cast<std::size_t>(i) * n_z, static_cast<std::size_t>(n_z)};
}
std::span<const double> column(const std::vector<double>& v, int i, int n_z) {
  return {v.data() + static_cast<std::size_t>(i) * n_z, static_cast<std::size_t>(n_z)};
}

/// Marches sector j from the given inlet profile; returns the largest metal
/// change relative to what the field held before.
double march_sector(FieldSolution& f, int j, std::span<const double> inlet,
                    const SolverSettings& s) {
  const Grid& g = f.grid;
  const int nz = g.n_z;
  const double dphi = 1.0 / (g.n_phi - 1);
  const double dz = 1.0 / (nz - 1);
  const double ntu = f.params.ntu[j];
  const double c = ntu * dphi;
  const double r = dphi / (f.params.pe[j] * dz * dz);
  const double a = ntu * dz;
  const double theta = f.params.theta_in[j];
  MetalStep step(nz, c, r);

  auto& metal = f.sectors[j].metal;
  auto& fluid = f.sectors[j].fluid;
  double change = 0.0;

  auto m0 = column(metal, 0, nz);
  for (int k = 0; k < nz; ++k) {
    change = std::max(change, std::abs(inlet[k] - m0[k]));
    m0[k] = inlet[k];
  }
  march_fluid(m0, column(fluid, 0, nz), theta, a, s.fluid_scheme);

  std::vector<double> m(nz), t_new(nz);
  for (int i = 1; i < g.n_phi; ++i) {
    auto prev = column(metal, i - 1, nz);
    auto mcol = column(metal, i, nz);
    auto fcol = column(fluid, i, nz);
    // Picard on the column: metal solve with lagged fluid, then fluid march.
    double last = INFINITY;
    for (int it = 0; it < s.max_inner_iters; ++it) {
      for (int k = 0; k < nz; ++k) m[k] = prev[k] + c * fcol[k];
      step.solve(m);
      march_fluid(m, t_new, theta, a, s.fluid_scheme);
      double d = 0.0;
      for (int k = 0; k < nz; ++k) {
        d = std::max(d, std::abs(t_new[k] - fcol[k]));
        fcol[k] = t_new[k];
      }
      if (d <= s.inner_tol || !(d < last)) break;
      last = d;
    }
    for (int k = 0; k < nz; ++k) {
      change = std::max(change, std::abs(m[k] - mcol[k]));
      mcol[k] = m[k];
    }
  }
  return change;
}

std::vector<double> exit_profile(const FieldSolution& f, int j) {
  auto col = column(f.sectors[j].metal, f.grid.n_phi - 1, f.grid.n_z);
  return {col.begin(), col.end()};
}

std::vector<double> reversed(std::vector<double> v) {
  std::reverse(v.begin(), v.end());
  return v;
}

double sweep(FieldSolution& f, const SolverSettings& s) {
  const int nz = f.grid.n_z;
  auto inlet1 = reversed(exit_profile(f, 2));
  auto current = column(f.sectors[0].metal, 0, nz);
  for (int k = 0; k < nz; ++k)
    inlet1[k] = (1.0 - s.relaxation) * current[k] + s.relaxation * inlet1[k];

  double change = march_sector(f, 0, inlet1, s);
  change = std::max(change, march_sector(f, 1, reversed(exit_profile(f, 0)), s));
  change = std::max(change, march_sector(f, 2, exit_profile(f, 1), s));
  return change;
}

}  // namespace

std::array<std::vector<double>, kSectors> apply_interfaces(
    const std::array<std::vector<double>, kSectors>& exits) {
  const auto n = exits[0].size();
  for (const auto& e : exits) {
    if (e.size() != n) throw ShapeError("sector edge profiles differ in length");
  }
  return {reversed(exits[2]), reversed(exits[0]), exits[1]};
}

double iterate(FieldSolution& f, const SolverSettings& s, int sweeps) {
  s.validate();
  double change = 0.0;
  for (int it = 0; it < sweeps; ++it) {
    change = sweep(f, s);
    if (std::isnan(change)) throw NumericalError("NaN in finite-difference fields");
  }
  return change;
}

FieldSolution solve(const NondimParams& p, const Grid& g, const SolverSettings& s) {
  p.validate();
  g.validate();
  s.validate();

  const double mean_theta = (p.theta_in[0] + p.theta_in[1] + p.theta_in[2]) / 3.0;
  FieldSolution f = FieldSolution::filled(g, p, mean_theta);

  double change = INFINITY;
  for (int it = 1; it <= s.max_outer_iters; ++it) {
    change = sweep(f, s);
    if (std::isnan(change)) throw NumericalError("NaN in finite-difference fields");
    f.outer_iterations = it;
    f.last_change = change;
    if (change <= s.outer_tol && interface_mismatch(f) <= s.outer_tol) return f;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "no convergence after %d sweeps (last change %.3e)",
                s.max_outer_iters, change);
  throw DivergenceError(buf, change);
}

Vec3 outlet_means(const FieldSolution& f) {
  Vec3 out{};
  const int top = f.grid.n_z - 1;
  for (int j = 0; j < kSectors; ++j) {
    double sum = 0.0;
    for (int i = 0; i < f.grid.n_phi; ++i) sum += f.fluid(j, i, top);
    out[j] = sum / f.grid.n_phi;
  }
  return out;
}

double interface_mismatch(const FieldSolution& f) {
  const int nz = f.grid.n_z;
  const int last = f.grid.n_phi - 1;
  double worst = 0.0;
  for (int k = 0; k < nz; ++k) {
    const int flip = nz - 1 - k;
    worst = std::max(worst, std::abs(f.metal(0, 0, k) - f.metal(2, last, flip)));
    worst = std::max(worst, std::abs(f.metal(0, last, k) - f.metal(1, 0, flip)));
    worst = std::max(worst, std::abs(f.metal(1, last, k) - f.metal(2, 0, k)));
  }
  return worst;
}

double energy_balance_residual(const FieldSolution& f, const Vec3& weights) {
  const int top = f.grid.n_z - 1;
  double total = 0.0;
  for (int j = 0; j < kSectors; ++j) {
    double sum = 0.0;
    for (int i = 1; i < f.grid.n_phi; ++i) sum += f.fluid(j, i, top);
    const double outlet = sum / (f.grid.n_phi - 1);
    total += weights[j] * (f.params.theta_in[j] - outlet);
  }
  return total;
}

Vec3 balance_weights(const NondimParams&) { return {1.0, 1.0, 1.0}; }

std::vector<GridStudyRow> grid_independence_study(const NondimParams& p,
                                                  std::span<const Grid> grids,
                                                  const SolverSettings& s) {
  if (grids.size() < 2) throw ValidationError("grid study needs at least two grids");
  for (std::size_t i = 1; i < grids.size(); ++i) {
    if (grids[i].n_phi < grids[i - 1].n_phi || grids[i].n_z < grids[i - 1].n_z)
      throw ValidationError("grid study grids must not decrease in resolution");
  }
  std::vector<GridStudyRow> rows;
  for (const auto& g : grids) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto f = solve(p, g, s);
    GridStudyRow row;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.grid = g;
    row.outlet = outlet_means(f);
    if (!rows.empty()) {
      for (int j = 0; j < kSectors; ++j)
        row.diff[j] = std::abs(row.outlet[j] - rows.back().outlet[j]);
    }
    rows.push_back(row);
  }
  return rows;
}

FieldSolution resample(const FieldSolution& f, const Grid& target) {
  target.validate();
  FieldSolution out = FieldSolution::filled(target, f.params, 0.0);
  out.outer_iterations = f.outer_iterations;
  out.last_change = f.last_change;
  const Grid& g = f.grid;
  for (int i = 0; i < target.n_phi; ++i) {
    const double x = target.phi(i) * (g.n_phi - 1);
    const int i0 = std::min(static_cast<int>(x), g.n_phi - 2);
    const double tx = x - i0;
    for (int k = 0; k < target.n_z; ++k) {
      const double y = target.z(k) * (g.n_z - 1);
      const int k0 = std::min(static_cast<int>(y), g.n_z - 2);
      const double ty = y - k0;
      for (int j = 0; j < kSectors; ++j) {
        auto lerp = [&](const std::vector<double>& v) {
          const double a = v[f.idx(i0, k0)], b = v[f.idx(i0 + 1, k0)];
          const double c = v[f.idx(i0, k0 + 1)], d = v[f.idx(i0 + 1, k0 + 1)];
          return (1 - tx) * (1 - ty) * a + tx * (1 - ty) * b + (1 - tx) * ty * c +
                 tx * ty * d;
        };
        out.sectors[j].fluid[out.idx(i, k)] = lerp(f.sectors[j].fluid);
        out.sectors[j].metal[out.idx(i, k)] = lerp(f.sectors[j].metal);
      }
    }
  }
  return out;
}

std::pair<double, double> field_range(const FieldSolution& f) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : f.sectors) {
    for (const auto* v : {&s.fluid, &s.metal}) {
      const auto [mn, mx] = std::minmax_element(v->begin(), v->end());
      lo = std::min(lo, *mn);
      hi = std::max(hi, *mx);
    }
  }
  return {lo, hi};
}

FieldError field_error(const FieldSolution& a, const FieldSolution& b, FieldSelection sel) {
  if (!(a.grid == b.grid)) throw ShapeError("field grids differ");
  const bool fluid = sel != FieldSelection::metal;
  const bool metal = sel != FieldSelection::fluid;
  FieldError e;
  double sum = 0.0;
  std::size_t n = 0;
  auto add = [&](const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("field sizes differ");
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = std::abs(x[i] - y[i]);
      sum += d;
      e.max = std::max(e.max, d);
    }
    n += x.size();
  };
  for (int j = 0; j < kSectors; ++j) {
    if (fluid) add(a.sectors[j].fluid, b.sectors[j].fluid);
    if (metal) add(a.sectors[j].metal, b.sectors[j].metal);
  }
  e.mae = n ? sum / static_cast<double>(n) : 0.0;
  return e;
}

std::string to_string(FieldSelection s) {
  switch (s) {
    case FieldSelection::fluid: return "fluid";
    case FieldSelection::metal: return "metal";
    default: return "fluid+metal";
  }
}

FieldSelection field_selection_from_string(const std::string& s) {
  if (s == "fluid+metal" || s == "both") return FieldSelection::fluid_and_metal;
  if (s == "fluid") return FieldSelection::fluid;
  if (s == "metal") return FieldSelection::metal;
  throw ValidationError("unknown field selection '" + s + "'");
}

void write_field_csv(const std::string& path, const FieldSolution& f,
                     const model::TemperatureScale& scale) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "sector,phi,z,theta_fluid,theta_metal,T_fluid_C,T_metal_C\n";
  char buf[256];
  for (int j = 0; j < kSectors; ++j) {
    for (int i = 0; i < f.grid.n_phi; ++i) {
      for (int k = 0; k < f.grid.n_z; ++k) {
        const double tf = f.fluid(j, i, k), tm = f.metal(j, i, k);
        std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.12g,%.12g,%.10g,%.10g\n", j + 1,
                      f.grid.phi(i), f.grid.z(k), tf, tm,
                      model::from_nondim_temperature(tf, scale),
                      model::from_nondim_temperature(tm, scale));
        out << buf;
      }
    }
  }
  if (!out) throw IoError("write failed for " + path);
}

std::string to_string(FluidScheme s) {
  return s == FluidScheme::trapezoidal ? "trapezoidal" : "backward_euler";
}

FluidScheme fluid_scheme_from_string(const std::string& s) {
  if (s == "trapezoidal") return FluidScheme::trapezoidal;
  if (s == "backward_euler") return FluidScheme::backward_euler;
  throw ValidationError("unknown fluid scheme '" + s + "'");
}

}  // namespace aph::fd
