#include "aph/model.hpp"

#include <cmath>
#include <cstdio>

#include "aph/error.hpp"

namespace aph::model {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void PhysicalRanges::validate() const {
  for (int i = 0; i < kConditionDims; ++i) {
    const auto& b = bounds[i];
    if (!std::isfinite(b.min) || !std::isfinite(b.max) || !(b.min < b.max)) {
      throw ValidationError(std::string("range for ") + kConditionNames[i] +
                            " must satisfy min < max");
    }
  }
}

PhysicalRanges PhysicalRanges::widened(double margin) const {
  PhysicalRanges out = *this;
  for (auto& b : out.bounds) {
    const double pad = margin * b.span();
    b.min -= pad;
    b.max += pad;
  }
  return out;
}

bool PhysicalRanges::contains(const OperatingCondition& c) const {
  const auto a = c.as_array();
  for (int i = 0; i < kConditionDims; ++i) {
    if (a[i] < bounds[i].min || a[i] > bounds[i].max) return false;
  }
  return true;
}

void TemperatureScale::validate() const {
  if (!std::isfinite(t_ref) || !std::isfinite(t_span) || !(t_span > 0.0)) {
    throw ValidationError("temperature scale needs finite t_ref and t_span > 0");
  }
}

void CoefficientMap::validate() const {
  for (int j = 0; j < kSectors; ++j) {
    if (!(ntu_ref[j] >= 0.0) || !std::isfinite(ntu_ref[j]))
      throw ValidationError("ntu_ref must be finite and >= 0");
    if (!(pe_ref[j] > 0.0) || !std::isfinite(pe_ref[j]))
      throw ValidationError("pe_ref must be finite and > 0");
  }
  if (!(flow_ref > 0.0)) throw ValidationError("flow_ref must be > 0");
  if (!std::isfinite(flow_exponent)) throw ValidationError("flow_exponent must be finite");
}

void NondimParams::validate() const {
  for (int j = 0; j < kSectors; ++j) {
    if (!(ntu[j] >= 0.0) || !std::isfinite(ntu[j]))
      throw ValidationError("ntu must be finite and >= 0");
    if (!(pe[j] > 0.0) || !std::isfinite(pe[j]))
      throw ValidationError("pe must be finite and > 0");
    if (!(theta_in[j] >= 0.0 && theta_in[j] <= 1.0))
      throw ScaleError("theta_in must lie in [0, 1]");
  }
}

void validate_condition(const OperatingCondition& c, const PhysicalRanges& envelope) {
  const auto a = c.as_array();
  for (int i = 0; i < kConditionDims; ++i) {
    if (!std::isfinite(a[i])) {
      throw ValidationError(std::string(kConditionNames[i]) + " is not finite");
    }
  }
  if (!(c.gas_flow > 0.0)) throw ValidationError("gas_flow must be > 0");
  for (int i = 0; i < kConditionDims; ++i) {
    const auto& b = envelope.bounds[i];
    if (a[i] < b.min || a[i] > b.max) {
      throw ValidationError(std::string(kConditionNames[i]) + " = " + fmt_double(a[i]) +
                            " outside validity envelope [" + fmt_double(b.min) + ", " +
                            fmt_double(b.max) + "]");
    }
  }
}

Unit4 normalize_condition(const OperatingCondition& c, const PhysicalRanges& r,
                          double envelope_margin) {
  r.validate();
  validate_condition(c, r.widened(envelope_margin));
  const auto a = c.as_array();
  Unit4 u{};
  for (int i = 0; i < kConditionDims; ++i) {
    u[i] = (a[i] - r.bounds[i].min) / r.bounds[i].span();
  }
  return u;
}

OperatingCondition denormalize_condition(const Unit4& u, const PhysicalRanges& r) {
  r.validate();
  Unit4 a{};
  for (int i = 0; i < kConditionDims; ++i) {
    if (!(u[i] >= 0.0 && u[i] <= 1.0)) {
      throw ValidationError(std::string("normalized ") + kConditionNames[i] + " = " +
                            fmt_double(u[i]) + " outside [0, 1]");
    }
    a[i] = r.bounds[i].min + u[i] * r.bounds[i].span();
  }
  return OperatingCondition::from_array(a);
}

NondimParams to_nondim(const OperatingCondition& c, const TemperatureScale& scale,
                       const CoefficientMap& cmap) {
  scale.validate();
  cmap.validate();
  if (!(c.gas_flow > 0.0)) throw ValidationError("gas_flow must be > 0");

  NondimParams p;
  const Vec3 temps = {c.t_in_gas, c.t_in_primary_air, c.t_in_secondary_air};
  // Only the gas stream's flow varies; air flows sit at the reference.
  const Vec3 flows = {c.gas_flow, cmap.flow_ref, cmap.flow_ref};
  for (int j = 0; j < kSectors; ++j) {
    p.theta_in[j] = scale.to_theta(temps[j]);
    if (!(p.theta_in[j] >= 0.0 && p.theta_in[j] <= 1.0)) {
      throw ScaleError(std::string(kConditionNames[j]) + " = " + fmt_double(temps[j]) +
                       " °C maps to theta " + fmt_double(p.theta_in[j]) +
                       " outside [0, 1]");
    }
    const double ratio = flows[j] / cmap.flow_ref;
    p.ntu[j] = ratio == 1.0 ? cmap.ntu_ref[j]
                            : cmap.ntu_ref[j] * std::pow(ratio, cmap.flow_exponent);
    p.pe[j] = cmap.pe_ref[j];
  }
  return p;
}

std::string to_string(const OperatingCondition& c) {
  return "(" + fmt_double(c.t_in_gas) + ", " + fmt_double(c.t_in_primary_air) + ", " +
         fmt_double(c.t_in_secondary_air) + ", " + fmt_double(c.gas_flow) + ")";
}

}  // namespace aph::model
