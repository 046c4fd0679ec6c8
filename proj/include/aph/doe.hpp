#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "aph/error.hpp"
#include "aph/model.hpp"

namespace aph::doe {

using model::kConditionDims;
using model::OperatingCondition;
using model::PhysicalRanges;

/// Level counts and values per variable.
struct LevelSpec {
  std::array<int, kConditionDims> counts = {0, 0, 0, 0};
  std::array<std::vector<double>, kConditionDims> values;
};

struct TaskDesign {
  std::string name;
  std::vector<OperatingCondition> tasks;
  LevelSpec levels;
  /// Set when no orthogonal array exists for the request and a balanced
  /// maximin Latin hypercube was used instead.
  bool oa_approximate = false;

  /// Throws ValidationError for out-of-range or duplicated tasks.
  void validate(const PhysicalRanges& r) const;
};

inline constexpr std::size_t kDefaultFactorialCap = 100000;

/// `count` equally spaced values over the interval, endpoints included; a
/// single level sits at the midpoint.
std::vector<double> level_values(const model::Interval& iv, int count);

/// Cartesian product of per-variable levels, first variable slowest.
TaskDesign full_factorial(const PhysicalRanges& r, const std::array<int, kConditionDims>& levels,
                          std::size_t cap = kDefaultFactorialCap);

/// True when a Rao-Hamming array covers (size, 4 factors, levels): prime
/// `levels`, size = levels^k with 2 <= k <= 4 and at least four columns.
bool has_orthogonal_array(int size, int levels);

/// Orthogonal array when one exists, else a balanced maximin Latin hypercube
/// on the same level grid. Deterministic in `seed`.
TaskDesign orthogonal_design(const PhysicalRanges& r, int size, int levels_per_var,
                             std::uint64_t seed);

struct LevelOccupancy {
  std::vector<double> values;
  std::vector<int> counts;
};

struct BalanceReport {
  std::array<LevelOccupancy, kConditionDims> occupancy;
  /// Smallest Euclidean distance between two tasks in box-normalized units.
  double min_distance = 0.0;
  /// Fraction of level-grid cells holding at least one task.
  double coverage = 0.0;
  bool balanced = true;
  bool has_duplicates = false;
  bool out_of_range = false;
};

BalanceReport validate_design(const TaskDesign& d, const PhysicalRanges& r);
std::string to_string(const BalanceReport& b);

/// CSV with header `task,Tin1,Tin2,Tin3,m1`. Empty input gives an empty
/// list. Malformed rows raise ParseError carrying the 1-based line number.
std::vector<OperatingCondition> parse_task_table(std::istream& in);
std::vector<OperatingCondition> load_task_table(const std::string& path);
void save_task_table(const std::string& path, const std::vector<OperatingCondition>& tasks);

/// Path of a file shipped in the data directory (validation_tasks.csv,
/// test_tasks.csv).
std::string bundled_data_path(const std::string& name);

}  // namespace aph::doe
