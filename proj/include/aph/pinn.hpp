#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aph/error.hpp"
#include "aph/fd_solver.hpp"
#include "aph/model.hpp"
#include "aph/nn.hpp"

namespace aph::pinn {

using model::kSectors;
using model::NondimParams;
using model::OperatingCondition;
using nn::WeightVector;

/// Sub-network shape shared by all three sectors: (φ, z) -> (fluid, metal).
const nn::MlpSpec& base_spec();
inline constexpr std::size_t kBaseParams = 354;

inline constexpr int kFluid = 0;
inline constexpr int kMetal = 1;

struct LossWeights {
  double pde = 1.0;
  double bc = 10.0;
  double interface = 10.0;
  double neumann = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Weighted loss terms; total() is their sum.
struct LossBreakdown {
  double pde = 0.0;
  double bc = 0.0;
  double interface = 0.0;
  double neumann = 0.0;
  double total() const { return pde + bc + interface + neumann; }
  bool operator==(const LossBreakdown&) const = default;
};

/// One trained domain-decomposed PINN.
struct TaskPinn {
  OperatingCondition condition;
  std::array<WeightVector, kSectors> weights;
  LossBreakdown final_losses;
  std::uint64_t seed = 0;

  void validate() const;
  /// The three sub-network vectors back to back (3 x 354).
  std::vector<double> flat() const;
  static TaskPinn from_flat(std::span<const double> flat);
  bool operator==(const TaskPinn&) const = default;
};

struct Point {
  double phi;
  double z;
};

/// One metal continuity constraint: metal of sector `a` at points_a must
/// equal metal of sector `b` at points_b, pairwise.
struct InterfacePairs {
  int a = 0, b = 0;
  std::vector<Point> points_a, points_b;
};

struct CollocationCounts {
  int interior = 1024;
  int inlet = 128;
  int interface = 128;
  int neumann = 64;

  void validate() const;
  bool operator==(const CollocationCounts&) const = default;
};

struct CollocationSet {
  std::array<std::vector<Point>, kSectors> interior;
  std::array<std::vector<double>, kSectors> inlet_phi;   // points (φ, 0)
  std::array<InterfacePairs, kSectors> interfaces;
  std::array<std::vector<double>, kSectors> neumann_phi; // points (φ, 0) and (φ, 1)
  std::uint64_t seed = 0;
};

/// Scrambled Halton interior points and stratified boundary points.
CollocationSet make_collocation(const CollocationCounts& counts, std::uint64_t seed);

/// Metal-equation residual of sector j's sub-network at one point.
double residual_conduction(Point x, const WeightVector& net, int j, const NondimParams& p);
/// Fluid-equation residual of sector j's sub-network at one point.
double residual_convection(Point x, const WeightVector& net, int j, const NondimParams& p);

/// Composite loss over the three sub-networks, with optional exact gradient
/// (3 x 354, sector-major).
class PinnLoss {
 public:
  PinnLoss(const CollocationSet& c, const NondimParams& p, const LossWeights& lw);

  LossBreakdown evaluate(const std::array<WeightVector, kSectors>& nets);
  LossBreakdown evaluate(const std::array<WeightVector, kSectors>& nets,
                         std::span<double> grad);

 private:
  LossBreakdown run(const std::array<WeightVector, kSectors>& nets, std::span<double> grad);

  NondimParams p_;
  LossWeights lw_;
  struct SectorBatch {
    Eigen::MatrixXd x;
    int interior = 0, inlet = 0, neumann = 0;  // neumann counts both ends
    int iface_begin = 0;
    // interface slots: (interface index, side, offset, count)
    struct Slot {
      int iface, side, offset, count;
    };
    std::vector<Slot> slots;
  };
  std::array<SectorBatch, kSectors> batches_;
  std::array<int, kSectors> iface_count_{};
  std::vector<nn::BatchMlp> mlps_;
  std::array<std::vector<Eigen::MatrixXd>, kSectors> adjoints_;
};

LossBreakdown loss_total(const std::array<WeightVector, kSectors>& nets,
                         const CollocationSet& c, const NondimParams& p,
                         const LossWeights& lw);

struct TrainConfig {
  CollocationCounts counts;
  LossWeights weights;
  double lr = 1e-3;
  double lr_decay = 0.5;
  int decay_every = 2000;
  int max_steps = 10000;
  /// Stop once the total loss falls below this.
  double target_loss = 1e-6;
  /// Stop when the best loss improved by less than plateau_delta over the
  /// last plateau_window steps.
  double plateau_delta = 1e-8;
  int plateau_window = 500;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainReport {
  std::vector<double> loss_history;  // total loss per step
  int steps = 0;
  std::string stop_reason;
  double seconds = 0.0;
  double best_loss = 0.0;
};

struct TrainResult {
  TaskPinn pinn;
  TrainReport report;
};

/// Carries the best weights seen before the loss went non-finite.
class PinnTrainingError : public TrainingError {
 public:
  PinnTrainingError(const std::string& what, TaskPinn last_good)
      : TrainingError(what), last_good_(std::move(last_good)) {}
  const TaskPinn& last_good() const { return last_good_; }

 private:
  TaskPinn last_good_;
};

/// Joint Adam over all three sub-networks. Returns the lowest-loss weights
/// seen. `warm_start` replaces the seeded initialization.
TrainResult train_base_pinn(const NondimParams& p, const TrainConfig& cfg, std::uint64_t seed,
                            const TaskPinn* warm_start = nullptr);

/// train_base_pinn for an operating condition; fills TaskPinn::condition.
TrainResult train_task(const OperatingCondition& c, const model::ModelConfig& mc,
                       const TrainConfig& cfg, std::uint64_t seed,
                       const TaskPinn* warm_start = nullptr);

enum class Precision { exact, single };

/// Evaluates sub-network j on sector j's nodes only. `p` is recorded in the
/// returned solution when given. Precision::single runs the network in
/// float, about three times faster, with errors near 1e-6.
fd::FieldSolution evaluate_field(const TaskPinn& t, const fd::Grid& g,
                                 const NondimParams* p = nullptr,
                                 Precision precision = Precision::exact);

}  // namespace aph::pinn
