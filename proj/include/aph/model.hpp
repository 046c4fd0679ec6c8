#pragma once

#include <array>
#include <string>

namespace aph::model {

inline constexpr int kSectors = 3;
inline constexpr int kConditionDims = 4;

using Vec3 = std::array<double, kSectors>;
using Unit4 = std::array<double, kConditionDims>;

/// Operating condition: the three stream inlet temperatures (°C) and the gas
/// mass flow (kg/s). Sector order is gas, primary air, secondary air.
struct OperatingCondition {
  double t_in_gas = 0.0;
  double t_in_primary_air = 0.0;
  double t_in_secondary_air = 0.0;
  double gas_flow = 0.0;

  Unit4 as_array() const {
    return {t_in_gas, t_in_primary_air, t_in_secondary_air, gas_flow};
  }
  static OperatingCondition from_array(const Unit4& a) {
    return {a[0], a[1], a[2], a[3]};
  }
  bool operator==(const OperatingCondition&) const = default;
};

/// Component names in array order, used in error messages and CSV headers.
inline constexpr std::array<const char*, kConditionDims> kConditionNames = {
    "t_in_gas", "t_in_primary_air", "t_in_secondary_air", "gas_flow"};

struct Interval {
  double min = 0.0;
  double max = 1.0;
  double span() const { return max - min; }
  bool operator==(const Interval&) const = default;
};

/// Per-variable design ranges. Defaults are the operating box used for task
/// designs: gas 200-400 °C, both air streams 10-80 °C, gas flow 600-800 kg/s.
struct PhysicalRanges {
  std::array<Interval, kConditionDims> bounds = {
      Interval{200.0, 400.0}, Interval{10.0, 80.0}, Interval{10.0, 80.0},
      Interval{600.0, 800.0}};

  void validate() const;
  /// Box widened by `margin` times each span on both sides.
  PhysicalRanges widened(double margin) const;
  bool contains(const OperatingCondition& c) const;
  bool operator==(const PhysicalRanges&) const = default;
};

struct TemperatureScale {
  double t_ref = 0.0;    // °C mapped to θ = 0
  double t_span = 500.0; // °C per unit θ

  void validate() const;
  double to_theta(double celsius) const { return (celsius - t_ref) / t_span; }
  bool operator==(const TemperatureScale&) const = default;
};

/// Reference NTU / Pe per sector and the power law through which gas flow
/// scales the gas-side NTU.
struct CoefficientMap {
  Vec3 ntu_ref = {3.0, 2.5, 2.5};
  Vec3 pe_ref = {50.0, 50.0, 50.0};
  double flow_ref = 700.0;
  double flow_exponent = -0.2;

  void validate() const;
  bool operator==(const CoefficientMap&) const = default;
};

/// PDE coefficients for one task.
struct NondimParams {
  Vec3 ntu = {0.0, 0.0, 0.0};
  Vec3 pe = {1.0, 1.0, 1.0};
  Vec3 theta_in = {0.0, 0.0, 0.0};

  void validate() const;
  bool operator==(const NondimParams&) const = default;
};

/// Everything needed to go from an operating condition to PDE coefficients.
struct ModelConfig {
  PhysicalRanges ranges;
  /// Fraction of each span by which the validity envelope extends the box.
  double envelope_margin = 0.1;
  TemperatureScale scale;
  CoefficientMap cmap;

  PhysicalRanges envelope() const { return ranges.widened(envelope_margin); }
  bool operator==(const ModelConfig&) const = default;
};

/// Throws ValidationError naming the first non-finite or out-of-envelope
/// component.
void validate_condition(const OperatingCondition& c, const PhysicalRanges& envelope);

/// Maps each component affinely so the range minimum goes to 0 and the
/// maximum to 1. Conditions inside the envelope but outside the box map
/// slightly outside [0, 1].
Unit4 normalize_condition(const OperatingCondition& c, const PhysicalRanges& r,
                          double envelope_margin = 0.1);

OperatingCondition denormalize_condition(const Unit4& u, const PhysicalRanges& r);

NondimParams to_nondim(const OperatingCondition& c, const TemperatureScale& scale,
                       const CoefficientMap& cmap);

inline NondimParams to_nondim(const OperatingCondition& c, const ModelConfig& cfg) {
  validate_condition(c, cfg.envelope());
  return to_nondim(c, cfg.scale, cfg.cmap);
}

inline double from_nondim_temperature(double theta, const TemperatureScale& scale) {
  return scale.t_ref + theta * scale.t_span;
}

std::string to_string(const OperatingCondition& c);

}  // namespace aph::model
