#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "aph/model.hpp"

namespace aph::fd {

using model::kSectors;
using model::NondimParams;
using model::Vec3;

/// Uniform node grid on the unit square of each sector.
struct Grid {
  int n_phi = 240;
  int n_z = 240;

  void validate() const;
  double phi(int i) const { return static_cast<double>(i) / (n_phi - 1); }
  double z(int k) const { return static_cast<double>(k) / (n_z - 1); }
  std::size_t nodes() const { return static_cast<std::size_t>(n_phi) * n_z; }
  bool operator==(const Grid&) const = default;
};

enum class FluidScheme { backward_euler, trapezoidal };

struct SolverSettings {
  double outer_tol = 1e-8;
  int max_outer_iters = 10000;
  double relaxation = 1.0;
  /// Trapezoidal marching keeps the discrete energy balance exact; backward
  /// Euler is kept for comparison.
  FluidScheme fluid_scheme = FluidScheme::trapezoidal;
  /// Per-column fluid/metal coupling tolerance.
  double inner_tol = 1e-14;
  int max_inner_iters = 200;

  void validate() const;
  bool operator==(const SolverSettings&) const = default;
};

/// Fluid and metal temperatures of one sector, stored z-fastest:
/// value(i_phi, k_z) = data[i_phi * n_z + k_z].
struct SectorField {
  std::vector<double> fluid;
  std::vector<double> metal;
};

struct FieldSolution {
  Grid grid;
  NondimParams params;
  std::array<SectorField, kSectors> sectors;
  int outer_iterations = 0;
  double last_change = 0.0;

  static FieldSolution filled(const Grid& g, const NondimParams& p, double value);

  double fluid(int j, int i, int k) const { return sectors[j].fluid[idx(i, k)]; }
  double metal(int j, int i, int k) const { return sectors[j].metal[idx(i, k)]; }
  std::size_t idx(int i, int k) const {
    return static_cast<std::size_t>(i) * grid.n_z + k;
  }
};

/// Runs the rotational fixed point: each sweep marches sectors 1, 2, 3 in
/// turn, feeding each sector's metal exit profile to the next sector's inlet.
FieldSolution solve(const NondimParams& p, const Grid& g, const SolverSettings& s = {});

/// Continues iterating from an existing solution (same grid and params).
/// Returns the largest metal change of the last sweep.
double iterate(FieldSolution& f, const SolverSettings& s, int sweeps);

/// Maps metal exit profiles (φ = 1) of sectors 1..3 to the inlet profiles
/// (φ = 0) they feed. Gas↔air crossings reverse z; air→air does not.
std::array<std::vector<double>, kSectors> apply_interfaces(
    const std::array<std::vector<double>, kSectors>& exits);

Vec3 outlet_means(const FieldSolution& f);

/// Largest |lhs - rhs| over the three metal continuity constraints.
double interface_mismatch(const FieldSolution& f);

/// Σ_j w_j (inlet mean - outlet mean)_j. The outlet mean uses the φ
/// quadrature of the marching scheme (columns 1..n_phi-1), under which the
/// discrete system conserves energy exactly at the fixed point.
double energy_balance_residual(const FieldSolution& f, const Vec3& weights);

/// Capacity-rate weights for the energy balance. Both equations of a sector
/// share one NTU, which fixes each sector's fluid/metal capacity ratio at
/// one, so every weight is 1.
Vec3 balance_weights(const NondimParams& p);

struct GridStudyRow {
  Grid grid;
  Vec3 outlet = {0, 0, 0};
  /// |outlet - previous row outlet| per sector; zeros on the first row.
  Vec3 diff = {0, 0, 0};
  double seconds = 0.0;
};

std::vector<GridStudyRow> grid_independence_study(const NondimParams& p,
                                                  std::span<const Grid> grids,
                                                  const SolverSettings& s = {});

/// Bilinear resampling of both fields onto another grid.
FieldSolution resample(const FieldSolution& f, const Grid& target);

/// (min, max) over every fluid and metal value.
std::pair<double, double> field_range(const FieldSolution& f);

enum class FieldSelection { fluid_and_metal, fluid, metal };

struct FieldError {
  double mae = 0.0;
  double max = 0.0;
};

/// Elementwise absolute differences over the selected fields of all three
/// sectors, in θ units. Grids must match.
FieldError field_error(const FieldSolution& a, const FieldSolution& b,
                       FieldSelection sel = FieldSelection::fluid_and_metal);

std::string to_string(FieldSelection s);
FieldSelection field_selection_from_string(const std::string& s);

void write_field_csv(const std::string& path, const FieldSolution& f,
                     const model::TemperatureScale& scale);

std::string to_string(FluidScheme s);
FluidScheme fluid_scheme_from_string(const std::string& s);

}  // namespace aph::fd
