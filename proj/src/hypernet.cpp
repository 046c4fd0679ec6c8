#include "aph/hypernet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"

namespace aph::hypernet {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kBankVersion = 1;
constexpr int kModelVersion = 1;

model::Unit4 unit_coords(const OperatingCondition& c, const PhysicalRanges& r) {
  const auto a = c.as_array();
  model::Unit4 u{};
  for (int i = 0; i < model::kConditionDims; ++i) {
    u[i] = (a[i] - r.bounds[i].min) / r.bounds[i].span();
  }
  return u;
}

double dist2(const model::Unit4& a, const model::Unit4& b) {
  double s = 0.0;
  for (int i = 0; i < model::kConditionDims; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

json ranges_to_json(const PhysicalRanges& r) {
  json j = json::array();
  for (const auto& iv : r.bounds) j.push_back({{"min", iv.min}, {"max", iv.max}});
  return j;
}

PhysicalRanges ranges_from_json(const json& j) {
  PhysicalRanges r;
  if (!j.is_array() || j.size() != model::kConditionDims)
    throw IoError("ranges must list four intervals");
  for (int i = 0; i < model::kConditionDims; ++i) {
    r.bounds[i] = {j[i].at("min").get<double>(), j[i].at("max").get<double>()};
  }
  r.validate();
  return r;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void check_format(const json& j, const char* format, int version, const std::string& where) {
  if (j.value("format", std::string()) != format)
    throw IoError(where + ": not an " + std::string(format) + " file");
  if (j.value("version", 0) != version)
    throw IoError(where + ": unsupported version " + std::to_string(j.value("version", 0)));
}

json entry_to_json(const TaskPinn& t) {
  json w = json::array();
  for (const auto& v : t.weights) w.push_back(v);
  const auto& l = t.final_losses;
  return {{"format", "aph-bank-entry"},
          {"version", kBankVersion},
          {"condition", t.condition.as_array()},
          {"weights", w},
          {"final_losses",
           {{"pde", l.pde}, {"bc", l.bc}, {"interface", l.interface}, {"neumann", l.neumann}}},
          {"seed", t.seed}};
}

TaskPinn entry_from_json(const json& j, const std::string& where) {
  check_format(j, "aph-bank-entry", kBankVersion, where);
  TaskPinn t;
  t.condition = OperatingCondition::from_array(j.at("condition").get<model::Unit4>());
  const auto& w = j.at("weights");
  if (!w.is_array() || w.size() != model::kSectors)
    throw IoError(where + ": weights must hold three vectors");
  for (int s = 0; s < model::kSectors; ++s) t.weights[s] = w[s].get<std::vector<double>>();
  const auto& l = j.at("final_losses");
  t.final_losses = {l.at("pde").get<double>(), l.at("bc").get<double>(),
                    l.at("interface").get<double>(), l.at("neumann").get<double>()};
  t.seed = j.at("seed").get<std::uint64_t>();
  t.validate();
  return t;
}

std::size_t head_offset(const nn::MlpSpec& spec) {
  nn::MlpSpec trunk = spec;
  trunk.layer_sizes.pop_back();
  return nn::param_count(trunk);
}

Eigen::MatrixXd unit_matrix(const std::vector<OperatingCondition>& cs, const PhysicalRanges& r) {
  Eigen::MatrixXd x(model::kConditionDims, static_cast<Eigen::Index>(cs.size()));
  for (std::size_t n = 0; n < cs.size(); ++n) {
    const auto u = unit_coords(cs[n], r);
    for (int i = 0; i < model::kConditionDims; ++i) x(i, static_cast<Eigen::Index>(n)) = u[i];
  }
  return x;
}

TaskPinn assemble(const HypernetModel& m, const OperatingCondition& c,
                  std::span<const double> standardized) {
  auto t = TaskPinn::from_flat(m.stats.destandardize(standardized));
  t.condition = c;
  return t;
}

}  // namespace

const nn::MlpSpec& hypernet_spec() {
  static const nn::MlpSpec spec{{4, 256, 256, static_cast<int>(kTargetDims)},
                                nn::Activation::tanh, nn::Activation::linear};
  return spec;
}

void WeightBank::validate() const {
  ranges.validate();
  std::set<model::Unit4> seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    entries[i].validate();
    if (!seen.insert(entries[i].condition.as_array()).second) {
      throw ValidationError("bank entry " + std::to_string(i) + " repeats an earlier condition");
    }
  }
  if (!parents.empty() && parents.size() != entries.size())
    throw ShapeError("bank parent list does not match the entries");
  if (!order.empty() && order.size() != entries.size())
    throw ShapeError("bank order does not match the entries");
}

Curriculum plan_curriculum(const std::vector<OperatingCondition>& tasks, const PhysicalRanges& r) {
  Curriculum cur;
  const int n = static_cast<int>(tasks.size());
  if (n == 0) return cur;
  std::vector<model::Unit4> u(n);
  model::Unit4 centre{};
  for (int i = 0; i < n; ++i) {
    u[i] = unit_coords(tasks[i], r);
    for (int d = 0; d < model::kConditionDims; ++d) centre[d] += u[i][d] / n;
  }
  auto argmin = [&](const model::Unit4& from, const std::vector<bool>& allowed) {
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!allowed[i]) continue;
      const double d = dist2(u[i], from);
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return best;
  };

  std::vector<bool> open(n, true), done(n, false);
  cur.parents.assign(n, -1);
  int last = argmin(centre, open);
  open[last] = false;
  cur.order.push_back(last);
  while (static_cast<int>(cur.order.size()) < n) {
    done[last] = true;
    const int next = argmin(u[last], open);
    cur.parents[next] = argmin(u[next], done);
    open[next] = false;
    cur.order.push_back(next);
    last = next;
  }
  return cur;
}

WeightBank build_bank(const doe::TaskDesign& design, const model::ModelConfig& mc,
                      const BankConfig& cfg,
                      const std::function<void(const BankProgress&)>& progress) {
  cfg.train.validate();
  if (cfg.workers < 1) throw ValidationError("workers must be >= 1");
  if (design.tasks.empty()) throw ValidationError("design has no tasks");
  design.validate(mc.ranges);

  const int n = static_cast<int>(design.tasks.size());
  const auto cur = plan_curriculum(design.tasks, mc.ranges);

  std::vector<TaskPinn> results(n);
  std::vector<std::string> errors(n);
  // 0 waiting, 1 running, 2 done, 3 failed
  std::vector<int> state(n, 0);
  int finished = 0;
  std::mutex mu;
  std::condition_variable cv;

  auto next_ready = [&]() -> int {
    for (int i : cur.order) {
      if (state[i] != 0) continue;
      const int p = cur.parents[i];
      if (p < 0 || state[p] == 2) return i;
      if (state[p] == 3) {
        state[i] = 3;
        errors[i] = "warm-start source failed";
        ++finished;
        cv.notify_all();
        return -2;  // rescan
      }
    }
    return -1;
  };

  auto worker = [&]() {
    std::unique_lock<std::mutex> lock(mu);
    while (true) {
      int i;
      while ((i = next_ready()) == -1 && finished < n) cv.wait(lock);
      if (i == -2) continue;
      if (finished >= n && i < 0) return;
      state[i] = 1;
      const int p = cur.parents[i];
      const TaskPinn* warm = p >= 0 ? &results[p] : nullptr;
      lock.unlock();
      pinn::TrainResult r;
      std::string err;
      try {
        r = pinn::train_task(design.tasks[i], mc, cfg.train, cfg.seed, warm);
      } catch (const Error& e) {
        err = e.what();
      }
      lock.lock();
      if (err.empty()) {
        results[i] = std::move(r.pinn);
        state[i] = 2;
      } else {
        errors[i] = err;
        state[i] = 3;
      }
      ++finished;
      if (progress) {
        BankProgress bp;
        bp.index = i;
        bp.finished = finished;
        bp.total = n;
        bp.parent = p;
        bp.report = std::move(r.report);
        progress(bp);
      }
      cv.notify_all();
    }
  };

  const int workers = std::min(cfg.workers, n);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  WeightBank bank;
  bank.ranges = mc.ranges;
  bank.design_name = design.name;
  bank.seed = cfg.seed;
  std::vector<std::pair<OperatingCondition, std::string>> failed;
  std::vector<int> remap(n, -1);
  for (int i = 0; i < n; ++i) {
    if (state[i] == 2) {
      remap[i] = static_cast<int>(bank.entries.size());
      bank.entries.push_back(results[i]);
    } else {
      failed.emplace_back(design.tasks[i], errors[i]);
    }
  }
  for (int i = 0; i < n; ++i) {
    if (remap[i] >= 0) bank.parents.push_back(cur.parents[i] >= 0 ? remap[cur.parents[i]] : -1);
  }
  for (int i : cur.order) {
    if (remap[i] >= 0) bank.order.push_back(remap[i]);
  }
  if (!failed.empty()) {
    std::string msg = "bank build failed for " + std::to_string(failed.size()) + " task(s):";
    for (const auto& [c, why] : failed) msg += "\n  " + model::to_string(c) + ": " + why;
    throw BankBuildError(msg, std::move(bank), std::move(failed));
  }
  return bank;
}

void save_bank(const std::string& dir, const WeightBank& bank) {
  bank.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create bank directory " + dir + ": " + ec.message());
  json files = json::array();
  for (std::size_t i = 0; i < bank.entries.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "entry_%03zu.json", i);
    write_json(fs::path(dir) / name, entry_to_json(bank.entries[i]));
    files.push_back(name);
  }
  json manifest = {{"format", "aph-bank"},
                   {"version", kBankVersion},
                   {"design_name", bank.design_name},
                   {"ranges", ranges_to_json(bank.ranges)},
                   {"spec", pinn::base_spec().layer_sizes},
                   {"seed", bank.seed},
                   {"config_hash", bank.config_hash},
                   {"parents", bank.parents},
                   {"order", bank.order},
                   {"entries", files}};
  write_json(fs::path(dir) / "manifest.json", manifest);
}

WeightBank load_bank(const std::string& dir) {
  const auto mpath = fs::path(dir) / "manifest.json";
  const json m = read_json(mpath);
  WeightBank bank;
  try {
    check_format(m, "aph-bank", kBankVersion, mpath.string());
    if (m.at("spec").get<std::vector<int>>() != pinn::base_spec().layer_sizes)
      throw IoError(mpath.string() + ": bank was built for a different network shape");
    bank.design_name = m.at("design_name").get<std::string>();
    bank.ranges = ranges_from_json(m.at("ranges"));
    bank.seed = m.at("seed").get<std::uint64_t>();
    bank.config_hash = m.value("config_hash", std::string());
    bank.parents = m.value("parents", std::vector<int>{});
    bank.order = m.value("order", std::vector<int>{});
    for (const auto& f : m.at("entries")) {
      const auto p = fs::path(dir) / f.get<std::string>();
      bank.entries.push_back(entry_from_json(read_json(p), p.string()));
    }
  } catch (const json::exception& e) {
    throw IoError(mpath.string() + ": " + e.what());
  }
  bank.validate();
  return bank;
}

StandardizationStats StandardizationStats::from_bank(const WeightBank& bank) {
  if (bank.entries.empty()) throw ValidationError("bank is empty");
  const double n = static_cast<double>(bank.entries.size());
  StandardizationStats s;
  s.mean.assign(kTargetDims, 0.0);
  s.stddev.assign(kTargetDims, 0.0);
  // Shifted by the first entry so that a constant component has an exact mean.
  const auto f0 = bank.entries.front().flat();
  for (const auto& e : bank.entries) {
    const auto f = e.flat();
    for (std::size_t i = 0; i < kTargetDims; ++i) s.mean[i] += (f[i] - f0[i]) / n;
  }
  for (std::size_t i = 0; i < kTargetDims; ++i) s.mean[i] += f0[i];
  for (const auto& e : bank.entries) {
    const auto f = e.flat();
    for (std::size_t i = 0; i < kTargetDims; ++i) {
      const double d = f[i] - s.mean[i];
      s.stddev[i] += d * d / n;
    }
  }
  for (double& v : s.stddev) v = std::max(std::sqrt(v), kStdFloor);
  return s;
}

std::vector<double> StandardizationStats::standardize(std::span<const double> theta) const {
  if (theta.size() != mean.size()) throw ShapeError("weight vector does not match the statistics");
  std::vector<double> z(theta.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (theta[i] - mean[i]) / stddev[i];
  return z;
}

std::vector<double> StandardizationStats::destandardize(std::span<const double> z) const {
  if (z.size() != mean.size()) throw ShapeError("weight vector does not match the statistics");
  std::vector<double> theta(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) theta[i] = mean[i] + z[i] * stddev[i];
  return theta;
}

void HypernetModel::validate() const {
  spec.validate();
  if (spec.inputs() != model::kConditionDims || spec.outputs() != static_cast<int>(kTargetDims))
    throw ShapeError("hypernetwork must map 4 inputs to 3 x 354 outputs");
  if (weights.size() != nn::param_count(spec)) throw ShapeError("hypernetwork weight count mismatch");
  if (stats.mean.size() != kTargetDims || stats.stddev.size() != kTargetDims)
    throw ShapeError("standardization statistics missing");
  ranges.validate();
  if (!(envelope_margin >= 0.0)) throw ValidationError("envelope margin must be >= 0");
}

HypernetModel init_model(const WeightBank& bank, const HypernetConfig& cfg) {
  HypernetModel m;
  m.stats = StandardizationStats::from_bank(bank);
  m.ranges = bank.ranges;
  m.weights = nn::init_weights(m.spec, cfg.seed);
  if (cfg.zero_heads) {
    std::fill(m.weights.begin() + static_cast<std::ptrdiff_t>(head_offset(m.spec)),
              m.weights.end(), 0.0);
  }
  return m;
}

HypernetResult train_hypernet(const WeightBank& bank, const std::vector<ValidationTask>& validation,
                              const HypernetConfig& cfg) {
  if (bank.entries.size() < 2) throw ValidationError("hypernetwork training needs at least two bank entries");
  if (!(cfg.lr > 0.0)) throw ValidationError("lr must be > 0");
  if (cfg.max_epochs < 1 || cfg.patience < 1 || cfg.validate_every < 1)
    throw ValidationError("epoch, patience and check counts must be >= 1");
  if (!(cfg.min_delta >= 0.0)) throw ValidationError("min_delta must be >= 0");
  bank.validate();
  const auto t0 = std::chrono::steady_clock::now();

  HypernetResult res;
  auto& m = res.model;
  m = init_model(bank, cfg);
  auto& rep = res.report;

  std::vector<OperatingCondition> conds;
  for (const auto& e : bank.entries) conds.push_back(e.condition);
  const Eigen::MatrixXd X = unit_matrix(conds, bank.ranges);
  const auto N = X.cols();
  const auto D = static_cast<Eigen::Index>(kTargetDims);
  Eigen::MatrixXd Y(D, N);
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto z = m.stats.standardize(bank.entries[n].flat());
    Y.col(n) = Eigen::Map<const Eigen::VectorXd>(z.data(), D);
  }

  std::vector<OperatingCondition> vconds;
  for (const auto& v : validation) {
    model::validate_condition(v.condition, bank.ranges.widened(m.envelope_margin));
    vconds.push_back(v.condition);
  }
  const Eigen::MatrixXd Xv = unit_matrix(vconds, bank.ranges);
  auto validation_mae = [&]() {
    Eigen::MatrixXd zv;
    nn::evaluate(m.spec, m.weights, Xv, zv);
    double sum = 0.0;
    for (std::size_t v = 0; v < validation.size(); ++v) {
      const auto col = zv.col(static_cast<Eigen::Index>(v));
      const auto t = assemble(m, validation[v].condition, std::span<const double>(col.data(), D));
      const auto f = pinn::evaluate_field(t, validation[v].oracle.grid);
      sum += fd::field_error(f, validation[v].oracle, cfg.fields).mae;
    }
    return sum / static_cast<double>(validation.size());
  };

  nn::BatchMlp net(m.spec);
  auto adam = nn::AdamState::for_size(m.weights.size(), cfg.lr);
  std::vector<double> grad(m.weights.size());
  std::vector<Eigen::MatrixXd> adj(1);
  nn::WeightVector best = m.weights;
  double best_monitor = std::numeric_limits<double>::infinity();
  int bad_checks = 0;
  rep.stop_reason = "max_epochs";

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    net.forward(m.weights, X, false);
    adj[0] = net.output(0) - Y;
    const double loss = adj[0].squaredNorm() / static_cast<double>(N * D);
    if (!std::isfinite(loss)) throw TrainingError("hypernetwork loss became non-finite");
    rep.train_loss.push_back(loss);
    rep.epochs = epoch + 1;

    if (epoch % cfg.validate_every == 0) {
      double monitor = loss;
      if (!validation.empty()) {
        monitor = validation_mae();
        rep.validation_mae.push_back(monitor);
      }
      if (monitor < best_monitor - cfg.min_delta) {
        best_monitor = monitor;
        best = m.weights;
        rep.best_epoch = epoch;
        bad_checks = 0;
      } else if (++bad_checks >= cfg.patience) {
        rep.stop_reason = "early_stopping";
        break;
      }
      if (loss == 0.0) {
        rep.stop_reason = "zero_loss";
        break;
      }
    }

    adj[0] *= 2.0 / static_cast<double>(N * D);
    std::fill(grad.begin(), grad.end(), 0.0);
    net.backward(m.weights, adj, grad);
    nn::adam_step(adam, grad, m.weights);
  }

  if (cfg.restore_best) m.weights = std::move(best);
  rep.best_monitor = best_monitor;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

double reconstruction_rmse(const HypernetModel& m, const WeightBank& bank) {
  m.validate();
  if (bank.entries.empty()) throw ValidationError("bank is empty");
  std::vector<OperatingCondition> conds;
  for (const auto& e : bank.entries) conds.push_back(e.condition);
  Eigen::MatrixXd z;
  nn::evaluate(m.spec, m.weights, unit_matrix(conds, m.ranges), z);
  double sum = 0.0;
  for (std::size_t n = 0; n < bank.entries.size(); ++n) {
    const auto y = m.stats.standardize(bank.entries[n].flat());
    for (std::size_t i = 0; i < kTargetDims; ++i) {
      const double d = z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) - y[i];
      sum += d * d;
    }
  }
  return std::sqrt(sum / static_cast<double>(bank.entries.size() * kTargetDims));
}

TaskPinn predict_weights(const HypernetModel& m, const OperatingCondition& c,
                         std::vector<std::string>* warnings) {
  m.validate();
  model::validate_condition(c, m.ranges.widened(m.envelope_margin));
  if (!m.ranges.contains(c) && warnings) {
    warnings->push_back("extrapolating outside the design ranges: " + model::to_string(c));
  }
  Eigen::MatrixXd z;
  nn::evaluate(m.spec, m.weights, unit_matrix({c}, m.ranges), z);
  return assemble(m, c, std::span<const double>(z.data(), kTargetDims));
}

fd::FieldSolution infer_field(const HypernetModel& m, const OperatingCondition& c,
                              const fd::Grid& g, pinn::Precision precision,
                              std::vector<std::string>* warnings) {
  return pinn::evaluate_field(predict_weights(m, c, warnings), g, nullptr, precision);
}

const TaskPinn& nearest_neighbor_weights(const WeightBank& bank, const OperatingCondition& c) {
  if (bank.entries.empty()) throw ValidationError("bank is empty");
  const auto u = unit_coords(c, bank.ranges);
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < bank.entries.size(); ++i) {
    const double d = dist2(u, unit_coords(bank.entries[i].condition, bank.ranges));
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return bank.entries[best];
}

void save_model(const std::string& path, const HypernetModel& m) {
  m.validate();
  json j = {{"format", "aph-hypernet"},
            {"version", kModelVersion},
            {"layer_sizes", m.spec.layer_sizes},
            {"heads", model::kSectors},
            {"head_size", pinn::kBaseParams},
            {"ranges", ranges_to_json(m.ranges)},
            {"envelope_margin", m.envelope_margin},
            {"mean", m.stats.mean},
            {"std", m.stats.stddev},
            {"weights", m.weights}};
  write_json(path, j);
}

HypernetModel load_model(const std::string& path) {
  const json j = read_json(path);
  HypernetModel m;
  try {
    check_format(j, "aph-hypernet", kModelVersion, path);
    m.spec.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    m.ranges = ranges_from_json(j.at("ranges"));
    m.envelope_margin = j.at("envelope_margin").get<double>();
    m.stats.mean = j.at("mean").get<std::vector<double>>();
    m.stats.stddev = j.at("std").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw IoError(path + ": " + e.what());
  }
  return m;
}

}  // namespace aph::hypernet
