#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aph/fd_solver.hpp"
#include "aph/hypernet.hpp"
#include "aph/model.hpp"
#include "aph/pinn.hpp"

namespace aph::bench {

using model::OperatingCondition;

enum class Method { hypernet, base_pinn, nearest_neighbor };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct ErrorMetrics {
  double mae_c = 0.0;  // °C
  double max_c = 0.0;
  double mae = 0.0;    // nondimensional
  double max = 0.0;
  bool operator==(const ErrorMetrics&) const = default;
};

/// Elementwise |a - b| over the selected fields, reported in °C via the
/// scale span and in θ units. Throws ShapeError on a grid mismatch.
ErrorMetrics mae_max_error(const fd::FieldSolution& a, const fd::FieldSolution& b,
                           const model::TemperatureScale& scale,
                           fd::FieldSelection sel = fd::FieldSelection::fluid_and_metal);

struct TaskRow {
  int task = 0;  // 1-based position in the task list
  OperatingCondition condition;
  Method method = Method::hypernet;
  bool failed = false;
  std::string error;  // reason when failed
  ErrorMetrics metrics;
  double seconds = 0.0;
  bool operator==(const TaskRow&) const = default;
};

struct Timing {
  double median = 0.0;
  double variance = 0.0;
  std::vector<double> runs;
};

struct TimingRow {
  std::string operation;
  double median = 0.0;
  double variance = 0.0;
  int runs = 0;
  bool operator==(const TimingRow&) const = default;
};

struct BenchmarkReport {
  std::vector<TaskRow> rows;
  std::vector<TimingRow> timings;
  std::string design_name;
  std::string config_hash;

  /// Mean over the non-failed rows of one method; NaN when there are none.
  double mean_mae(Method m) const;
  double mean_mae_c(Method m) const;
  double mean_max_c(Method m) const;
  int failures(Method m) const;
  const TimingRow* timing(const std::string& operation) const;
  bool operator==(const BenchmarkReport&) const = default;
};

struct BenchmarkSettings {
  model::ModelConfig model;
  fd::SolverSettings solver;
  fd::Grid oracle_grid{240, 240};
  fd::Grid eval_grid{60, 60};
  fd::FieldSelection fields = fd::FieldSelection::fluid_and_metal;
  pinn::TrainConfig train;  // for base-pinn rows
  std::uint64_t seed = 1;
  std::vector<Method> methods = {Method::hypernet, Method::nearest_neighbor};
  int workers = 1;
  /// Median-of-3 timings of FD, inference and (with base-pinn) training on
  /// the first task at the oracle grid.
  bool time_operations = true;
  pinn::Precision precision = pinn::Precision::single;
};

/// For every task: FD oracle on the oracle grid, resampled to the evaluation
/// grid, then each method's field on the evaluation grid. Failures of one
/// task/method are recorded in its row and the run continues. The hypernet
/// and nearest-neighbour methods need the model and bank respectively.
BenchmarkReport run_benchmark(const hypernet::HypernetModel* model,
                              const hypernet::WeightBank* bank,
                              const std::vector<OperatingCondition>& tasks,
                              const BenchmarkSettings& settings,
                              const std::function<void(const TaskRow&)>& progress = {});

/// Wall time of one call on the monotonic clock.
double time_once(const std::function<void()>& fn);
/// Median and population variance over `runs` calls.
Timing time_operation(const std::function<void()>& fn, int runs = 3);

/// Writes `path` (per-task CSV), `<stem>_timings.csv` and `<stem>_summary.txt`
/// next to it. The summary carries the design name and config hash.
void export_report(const std::string& path, const BenchmarkReport& r);
BenchmarkReport import_report(const std::string& path);
std::string summary(const BenchmarkReport& r);

/// Field CSVs for one task: `<prefix>_oracle.csv` and one per supplied
/// method field. Returns the written paths.
std::vector<std::string> export_fields(const std::string& prefix, const fd::FieldSolution& oracle,
                                       const fd::FieldSolution* base_pinn,
                                       const fd::FieldSolution* hypernet,
                                       const model::TemperatureScale& scale);

}  // namespace aph::bench
