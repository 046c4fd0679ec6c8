#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "aph/fd_solver.hpp"
#include "aph/hypernet.hpp"
#include "aph/model.hpp"
#include "aph/pinn.hpp"

namespace aph::config {

/// Which design `train-bank` builds when no task table is given.
struct DesignSettings {
  std::string kind = "orthogonal";  // "orthogonal" or "factorial"
  int size = 25;
  int levels = 5;
  std::array<int, 4> factorial_levels = {7, 5, 3, 3};
  std::size_t factorial_cap = 100000;

  void validate() const;
  bool operator==(const DesignSettings&) const = default;
};

struct AppConfig {
  std::uint64_t seed = 1;
  int workers = 1;
  model::ModelConfig model;
  fd::SolverSettings solver;
  fd::Grid oracle_grid{240, 240};
  fd::Grid eval_grid{60, 60};
  pinn::TrainConfig pinn;
  hypernet::HypernetConfig hypernet;
  DesignSettings design;

  void validate() const;
  bool operator==(const AppConfig&) const = default;
};

/// Overlays the keys present in `text` on the defaults. Unknown keys and
/// wrongly typed values are validation errors; malformed JSON is a ParseError
/// with the offending line.
AppConfig parse_config(const std::string& text);
AppConfig load_config(const std::string& path);

/// Canonical JSON with every key present.
std::string to_json(const AppConfig& cfg);
void save_config(const std::string& path, const AppConfig& cfg);

/// 64-bit FNV-1a of the canonical JSON, as 16 hex digits.
std::string config_hash(const AppConfig& cfg);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace aph::config
