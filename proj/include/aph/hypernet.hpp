#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aph/doe.hpp"
#include "aph/error.hpp"
#include "aph/fd_solver.hpp"
#include "aph/model.hpp"
#include "aph/nn.hpp"
#include "aph/pinn.hpp"

namespace aph::hypernet {

using model::OperatingCondition;
using model::PhysicalRanges;
using pinn::TaskPinn;

/// Regression target width: three sub-networks of 354 weights.
inline constexpr std::size_t kTargetDims = 3 * pinn::kBaseParams;

/// 4 -> 256 -> 256 tanh trunk. The three 354-wide linear heads are stored as
/// one 1062-row output layer; rows [354 j, 354 (j + 1)) form head j.
const nn::MlpSpec& hypernet_spec();
inline constexpr std::size_t kHypernetParams = 340006;

// ---------------------------------------------------------------- bank

struct WeightBank {
  std::vector<TaskPinn> entries;
  PhysicalRanges ranges;
  std::string design_name;
  std::uint64_t seed = 0;
  std::string config_hash;
  /// Warm-start source per entry (-1 for a cold start) and training order.
  std::vector<int> parents;
  std::vector<int> order;

  /// Equal spec sizes, finite weights, pairwise distinct conditions.
  void validate() const;
};

/// Training order and warm-start sources for a set of tasks: chain through
/// nearest neighbours (box-normalized λ) starting at the task closest to the
/// centroid; each task warm-starts from its nearest earlier task. Ties go to
/// the lowest task index.
struct Curriculum {
  std::vector<int> order;
  std::vector<int> parents;
};
Curriculum plan_curriculum(const std::vector<OperatingCondition>& tasks, const PhysicalRanges& r);

struct BankConfig {
  pinn::TrainConfig train;
  std::uint64_t seed = 1;
  int workers = 1;
  bool operator==(const BankConfig&) const = default;
};

struct BankProgress {
  int index = 0;     // design index
  int finished = 0;  // entries done so far, this one included
  int total = 0;
  int parent = -1;
  pinn::TrainReport report;
};

/// Some entries failed; partial() holds the entries that did train (failed
/// slots removed) and failed() their conditions with reasons.
class BankBuildError : public TrainingError {
 public:
  BankBuildError(const std::string& what, WeightBank partial,
                 std::vector<std::pair<OperatingCondition, std::string>> failed)
      : TrainingError(what), partial_(std::move(partial)), failed_(std::move(failed)) {}
  const WeightBank& partial() const { return partial_; }
  const std::vector<std::pair<OperatingCondition, std::string>>& failed() const {
    return failed_;
  }

 private:
  WeightBank partial_;
  std::vector<std::pair<OperatingCondition, std::string>> failed_;
};

/// Trains one base PINN per design task along the curriculum. The result
/// does not depend on `workers`.
WeightBank build_bank(const doe::TaskDesign& design, const model::ModelConfig& mc,
                      const BankConfig& cfg,
                      const std::function<void(const BankProgress&)>& progress = {});

/// Directory layout: manifest.json plus entry_NNN.json per entry.
void save_bank(const std::string& dir, const WeightBank& bank);
WeightBank load_bank(const std::string& dir);

// ---------------------------------------------------------- hypernetwork

struct StandardizationStats {
  static constexpr double kStdFloor = 1e-8;
  std::vector<double> mean;
  std::vector<double> stddev;

  static StandardizationStats from_bank(const WeightBank& bank);
  std::vector<double> standardize(std::span<const double> theta) const;
  std::vector<double> destandardize(std::span<const double> z) const;
  bool operator==(const StandardizationStats&) const = default;
};

struct HypernetModel {
  nn::MlpSpec spec = hypernet_spec();
  nn::WeightVector weights;
  StandardizationStats stats;
  PhysicalRanges ranges;
  double envelope_margin = 0.1;

  void validate() const;
  bool operator==(const HypernetModel&) const = default;
};

struct HypernetConfig {
  double lr = 1e-4;
  int max_epochs = 20000;
  /// Early stopping: stop when the monitored loss has not improved by at
  /// least min_delta for `patience` consecutive checks.
  double min_delta = 1e-6;
  int patience = 200;
  int validate_every = 10;
  /// Return the weights of the best check instead of the last epoch.
  bool restore_best = false;
  std::uint64_t seed = 1;
  /// Start the heads at zero so the initial prediction is the bank mean.
  bool zero_heads = true;
  fd::FieldSelection fields = fd::FieldSelection::fluid_and_metal;
  bool operator==(const HypernetConfig&) const = default;
};

/// A task whose oracle field is known, used to monitor training.
struct ValidationTask {
  OperatingCondition condition;
  fd::FieldSolution oracle;
};

struct HypernetReport {
  std::vector<double> train_loss;       // per epoch, standardized MSE
  std::vector<double> validation_mae;   // per check
  int epochs = 0;
  int best_epoch = 0;
  double best_monitor = 0.0;
  std::string stop_reason;
  double seconds = 0.0;
};

struct HypernetResult {
  HypernetModel model;
  HypernetReport report;
};

/// Full-batch Adam on the standardized-weight MSE. With validation tasks the
/// monitored quantity is the mean field MAE of predicted PINNs against their
/// oracles; otherwise the training loss. Returns the best-monitored weights.
HypernetResult train_hypernet(const WeightBank& bank, const std::vector<ValidationTask>& validation,
                              const HypernetConfig& cfg);

/// Hypernetwork with Glorot trunk and (optionally) zero heads.
HypernetModel init_model(const WeightBank& bank, const HypernetConfig& cfg);

/// Standardized-space RMSE between predictions and bank entries.
double reconstruction_rmse(const HypernetModel& m, const WeightBank& bank);

/// Throws ValidationError beyond the envelope; appends a warning when λ is
/// outside the box but inside the envelope.
TaskPinn predict_weights(const HypernetModel& m, const OperatingCondition& c,
                         std::vector<std::string>* warnings = nullptr);

/// predict_weights followed by evaluate_field; never trains.
fd::FieldSolution infer_field(const HypernetModel& m, const OperatingCondition& c,
                              const fd::Grid& g,
                              pinn::Precision precision = pinn::Precision::single,
                              std::vector<std::string>* warnings = nullptr);

/// Bank entry closest in box-normalized λ; ties go to the lowest index.
const TaskPinn& nearest_neighbor_weights(const WeightBank& bank, const OperatingCondition& c);

/// JSON model file with format name and version.
void save_model(const std::string& path, const HypernetModel& m);
HypernetModel load_model(const std::string& path);

}  // namespace aph::hypernet
