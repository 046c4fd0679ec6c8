// aphctl: command-line front end for the air-preheater solver, PINN banks,
// hypernetwork training, inference and benchmarks.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "aph/bench.hpp"
#include "aph/config.hpp"
#include "aph/doe.hpp"
#include "aph/fd_solver.hpp"
#include "aph/hypernet.hpp"
#include "aph/pinn.hpp"
#include "json.hpp"

namespace {

using namespace aph;
using json = nlohmann::json;
using model::OperatingCondition;

enum Exit { kOk = 0, kOther = 1, kValidation = 2, kTraining = 3, kNumerical = 4, kIo = 5 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  bool json = false;
};

config::AppConfig load(const Globals& g) {
  auto c = g.config_path.empty() ? config::AppConfig{} : config::load_config(g.config_path);
  if (g.seed) c.seed = c.hypernet.seed = *g.seed;
  if (g.workers) c.workers = *g.workers;
  c.validate();
  return c;
}

OperatingCondition parse_condition(const std::string& s) {
  std::vector<double> v;
  std::stringstream in(s);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ValidationError("condition \"" + s + "\" is not four comma-separated numbers");
    }
  }
  if (v.size() != 4) throw ValidationError("condition needs Tin1,Tin2,Tin3,m1; got \"" + s + "\"");
  return {v[0], v[1], v[2], v[3]};
}

fd::Grid parse_grid(const std::string& s, const fd::Grid& fallback) {
  if (s.empty()) return fallback;
  int a = 0, b = 0;
  char x = 0;
  std::istringstream in(s);
  if (in >> a) {
    if (in >> x) {
      if ((x != 'x' && x != ',') || !(in >> b)) throw ValidationError("grid must look like 240x240");
    } else {
      b = a;
    }
  } else {
    throw ValidationError("grid must look like 240x240");
  }
  fd::Grid g{a, b};
  g.validate();
  return g;
}

json condition_json(const OperatingCondition& c) {
  const auto a = c.as_array();
  json j = json::object();
  for (int i = 0; i < model::kConditionDims; ++i) j[model::kConditionNames[i]] = a[i];
  return j;
}

json outlets_json(const fd::FieldSolution& f, const model::TemperatureScale& s) {
  const auto o = fd::outlet_means(f);
  json j = json::array();
  for (double th : o) j.push_back({{"theta", th}, {"celsius", s.t_ref + th * s.t_span}});
  return j;
}

void print_outlets(const fd::FieldSolution& f, const model::TemperatureScale& s) {
  static const char* names[] = {"gas", "primary air", "secondary air"};
  const auto o = fd::outlet_means(f);
  for (int j = 0; j < 3; ++j) {
    std::printf("  %-14s outlet %8.3f C  (theta %.6f)\n", names[j], s.t_ref + o[j] * s.t_span, o[j]);
  }
}

void emit(const Globals& g, const json& j) {
  if (g.json) std::cout << j.dump(2) << std::endl;
}

std::vector<OperatingCondition> tasks_or_bundled(const std::string& path, const char* bundled) {
  return doe::load_task_table(path.empty() ? doe::bundled_data_path(bundled) : path);
}

fd::FieldSolution oracle_field(const config::AppConfig& c, const OperatingCondition& cond,
                               const fd::Grid& eval) {
  const auto f = fd::solve(model::to_nondim(cond, c.model), c.oracle_grid, c.solver);
  return eval == c.oracle_grid ? f : fd::resample(f, eval);
}

// ------------------------------------------------------------------ commands

int cmd_solve(const Globals& g, const std::string& cond_s, const std::string& grid_s, bool study) {
  const auto c = load(g);
  const auto cond = parse_condition(cond_s);
  model::validate_condition(cond, c.model.envelope());
  const auto p = model::to_nondim(cond, c.model);
  json out = {{"command", "solve"}, {"condition", condition_json(cond)}};

  if (study) {
    std::vector<fd::Grid> grids = {{30, 30}, {60, 60}, {120, 120}, {240, 240}, {480, 480}};
    const auto rows = fd::grid_independence_study(p, grids, c.solver);
    json jr = json::array();
    if (!g.json) std::printf("%10s %12s %12s %12s %12s %10s\n", "grid", "gas C", "air1 C", "air2 C", "max diff C", "seconds");
    for (const auto& r : rows) {
      double dmax = 0.0;
      for (double d : r.diff) dmax = std::max(dmax, std::abs(d));
      const auto& s = c.model.scale;
      jr.push_back({{"grid", {r.grid.n_phi, r.grid.n_z}}, {"outlet_theta", r.outlet}, {"diff_theta", r.diff},
                    {"seconds", r.seconds}});
      if (!g.json) {
        std::printf("%4dx%-5d %12.4f %12.4f %12.4f %12.4f %10.3f\n", r.grid.n_phi, r.grid.n_z,
                    s.t_ref + r.outlet[0] * s.t_span, s.t_ref + r.outlet[1] * s.t_span,
                    s.t_ref + r.outlet[2] * s.t_span, dmax * s.t_span, r.seconds);
      }
    }
    out["study"] = jr;
    emit(g, out);
    return kOk;
  }

  const auto grid = parse_grid(grid_s, c.oracle_grid);
  fd::FieldSolution f;
  const double sec = bench::time_once([&] { f = fd::solve(p, grid, c.solver); });
  out["grid"] = {grid.n_phi, grid.n_z};
  out["outer_iterations"] = f.outer_iterations;
  out["last_change"] = f.last_change;
  out["seconds"] = sec;
  out["outlets"] = outlets_json(f, c.model.scale);
  out["energy_balance_residual"] = fd::energy_balance_residual(f, fd::balance_weights(p));
  if (!g.out.empty()) {
    fd::write_field_csv(g.out, f, c.model.scale);
    out["field_csv"] = g.out;
  }
  if (g.json) {
    emit(g, out);
  } else {
    std::printf("solved %s on %dx%d in %.3f s, %d sweeps\n", model::to_string(cond).c_str(), grid.n_phi,
                grid.n_z, sec, f.outer_iterations);
    print_outlets(f, c.model.scale);
    if (!g.out.empty()) std::printf("field written to %s\n", g.out.c_str());
  }
  return kOk;
}

doe::TaskDesign make_design(const config::AppConfig& c) {
  const auto& d = c.design;
  if (d.kind == "factorial") return doe::full_factorial(c.model.ranges, d.factorial_levels, d.factorial_cap);
  return doe::orthogonal_design(c.model.ranges, d.size, d.levels, c.seed);
}

int cmd_design(const Globals& g, const std::string& kind, int size, int levels,
               const std::vector<int>& factorial) {
  auto c = load(g);
  if (!kind.empty()) c.design.kind = kind;
  if (size > 0) c.design.size = size;
  if (levels > 0) c.design.levels = levels;
  if (!factorial.empty()) {
    if (factorial.size() != 4) throw ValidationError("--factorial-levels needs four counts");
    std::copy(factorial.begin(), factorial.end(), c.design.factorial_levels.begin());
  }
  c.design.validate();
  const auto d = make_design(c);
  const auto rep = doe::validate_design(d, c.model.ranges);
  if (!g.out.empty()) doe::save_task_table(g.out, d.tasks);
  if (g.json) {
    json tasks = json::array();
    for (const auto& t : d.tasks) tasks.push_back(condition_json(t));
    emit(g, {{"command", "design"},
             {"name", d.name},
             {"tasks", tasks},
             {"oa_approximate", d.oa_approximate},
             {"balanced", rep.balanced},
             {"has_duplicates", rep.has_duplicates},
             {"min_distance", rep.min_distance},
             {"coverage", rep.coverage}});
    return kOk;
  }
  std::printf("design %s: %zu tasks%s\n", d.name.c_str(), d.tasks.size(),
              d.oa_approximate ? " (OA-approximate: maximin Latin hypercube)" : "");
  std::printf("%s", doe::to_string(rep).c_str());
  if (g.out.empty()) {
    std::printf("task,Tin1,Tin2,Tin3,m1\n");
    int i = 1;
    for (const auto& t : d.tasks) {
      std::printf("%d,%g,%g,%g,%g\n", i++, t.t_in_gas, t.t_in_primary_air, t.t_in_secondary_air, t.gas_flow);
    }
  } else {
    std::printf("tasks written to %s\n", g.out.c_str());
  }
  return kOk;
}

int cmd_train_bank(const Globals& g, const std::string& tasks_path) {
  const auto c = load(g);
  if (g.out.empty()) throw ValidationError("train-bank needs --out DIR");
  doe::TaskDesign d;
  if (tasks_path.empty()) {
    d = make_design(c);
  } else {
    d.name = std::filesystem::path(tasks_path).stem().string();
    d.tasks = doe::load_task_table(tasks_path);
  }
  hypernet::BankConfig bc{c.pinn, c.seed, c.workers};
  if (!g.json) std::printf("training %zu base PINNs for design %s\n", d.tasks.size(), d.name.c_str());
  hypernet::WeightBank bank;
  const double sec = bench::time_once([&] {
    bank = hypernet::build_bank(d, c.model, bc, [&](const hypernet::BankProgress& p) {
      if (!g.json) {
        std::printf("  [%d/%d] task %d%s: %d steps, best loss %.3e, %.1f s (%s)\n", p.finished, p.total,
                    p.index + 1, p.parent >= 0 ? (" from " + std::to_string(p.parent + 1)).c_str() : " cold",
                    p.report.steps, p.report.best_loss, p.report.seconds, p.report.stop_reason.c_str());
        std::fflush(stdout);
      }
    });
  });
  bank.config_hash = config::config_hash(c);
  hypernet::save_bank(g.out, bank);
  emit(g, {{"command", "train-bank"}, {"design", d.name}, {"entries", bank.entries.size()},
           {"seconds", sec}, {"bank", g.out}, {"config_hash", bank.config_hash}});
  if (!g.json) std::printf("bank of %zu entries written to %s in %.1f s\n", bank.entries.size(), g.out.c_str(), sec);
  return kOk;
}

int cmd_train_hypernet(const Globals& g, const std::string& bank_dir, const std::string& val_path,
                       bool no_validation) {
  const auto c = load(g);
  if (g.out.empty()) throw ValidationError("train-hypernet needs --out FILE");
  const auto bank = hypernet::load_bank(bank_dir);
  std::vector<hypernet::ValidationTask> val;
  if (!no_validation) {
    for (const auto& t : tasks_or_bundled(val_path, "validation_tasks.csv")) {
      val.push_back({t, oracle_field(c, t, c.eval_grid)});
    }
  }
  auto hc = c.hypernet;
  hc.seed = c.seed;
  const auto res = hypernet::train_hypernet(bank, val, hc);
  hypernet::save_model(g.out, res.model);
  const double rmse = hypernet::reconstruction_rmse(res.model, bank);
  const auto& r = res.report;
  emit(g, {{"command", "train-hypernet"},
           {"epochs", r.epochs},
           {"best_epoch", r.best_epoch},
           {"best_monitor", r.best_monitor},
           {"stop_reason", r.stop_reason},
           {"final_train_loss", r.train_loss.back()},
           {"reconstruction_rmse", rmse},
           {"seconds", r.seconds},
           {"model", g.out}});
  if (!g.json) {
    std::printf("hypernetwork trained on %zu entries: %d epochs (%s), best epoch %d\n", bank.entries.size(),
                r.epochs, r.stop_reason.c_str(), r.best_epoch);
    std::printf("  %s %.6f, reconstruction RMSE %.4f (standardized), %.1f s\n",
                val.empty() ? "best training loss" : "best validation MAE (theta)", r.best_monitor, rmse,
                r.seconds);
    std::printf("model written to %s\n", g.out.c_str());
  }
  return kOk;
}

int cmd_infer(const Globals& g, const std::string& model_path, const std::string& cond_s,
              const std::string& grid_s, bool exact) {
  const auto c = load(g);
  const auto m = hypernet::load_model(model_path);
  const auto cond = parse_condition(cond_s);
  const auto grid = parse_grid(grid_s, c.oracle_grid);
  std::vector<std::string> warnings;
  fd::FieldSolution f;
  const double sec = bench::time_once([&] {
    f = hypernet::infer_field(m, cond, grid, exact ? pinn::Precision::exact : pinn::Precision::single, &warnings);
  });
  if (!g.out.empty()) fd::write_field_csv(g.out, f, c.model.scale);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  emit(g, {{"command", "infer"}, {"condition", condition_json(cond)}, {"grid", {grid.n_phi, grid.n_z}},
           {"seconds", sec}, {"outlets", outlets_json(f, c.model.scale)}, {"warnings", warnings}});
  if (!g.json) {
    std::printf("inferred %s on %dx%d in %.4f s\n", model::to_string(cond).c_str(), grid.n_phi, grid.n_z, sec);
    print_outlets(f, c.model.scale);
    if (!g.out.empty()) std::printf("field written to %s\n", g.out.c_str());
  }
  return kOk;
}

int cmd_benchmark(const Globals& g, const std::string& model_path, const std::string& bank_dir,
                  const std::string& tasks_path, const std::vector<std::string>& methods, bool no_timing) {
  const auto c = load(g);
  std::optional<hypernet::HypernetModel> m;
  std::optional<hypernet::WeightBank> bank;
  if (!model_path.empty()) m = hypernet::load_model(model_path);
  if (!bank_dir.empty()) bank = hypernet::load_bank(bank_dir);
  bench::BenchmarkSettings s;
  s.model = c.model;
  s.solver = c.solver;
  s.oracle_grid = c.oracle_grid;
  s.eval_grid = c.eval_grid;
  s.fields = c.hypernet.fields;
  s.train = c.pinn;
  s.seed = c.seed;
  s.workers = c.workers;
  s.time_operations = !no_timing;
  s.methods.clear();
  if (methods.empty()) {
    if (m) s.methods.push_back(bench::Method::hypernet);
    if (bank) s.methods.push_back(bench::Method::nearest_neighbor);
  }
  for (const auto& name : methods) s.methods.push_back(bench::method_from_string(name));
  const auto tasks = tasks_or_bundled(tasks_path, "test_tasks.csv");
  auto rep = bench::run_benchmark(m ? &*m : nullptr, bank ? &*bank : nullptr, tasks, s);
  rep.config_hash = config::config_hash(c);
  if (!g.out.empty()) bench::export_report(g.out, rep);
  if (g.json) {
    json rows = json::array();
    for (const auto& r : rep.rows) {
      rows.push_back({{"task", r.task}, {"method", bench::to_string(r.method)}, {"failed", r.failed},
                      {"error", r.error}, {"mae_c", r.metrics.mae_c}, {"max_c", r.metrics.max_c},
                      {"mae", r.metrics.mae}, {"max", r.metrics.max}, {"seconds", r.seconds}});
    }
    json timings = json::array();
    for (const auto& t : rep.timings) {
      timings.push_back({{"operation", t.operation}, {"median", t.median}, {"variance", t.variance}, {"runs", t.runs}});
    }
    emit(g, {{"command", "benchmark"}, {"design", rep.design_name}, {"config_hash", rep.config_hash},
             {"rows", rows}, {"timings", timings}});
  } else {
    std::printf("%s", bench::summary(rep).c_str());
    if (!g.out.empty()) std::printf("report written to %s\n", g.out.c_str());
  }
  for (bench::Method meth : s.methods) {
    if (rep.failures(meth) > 0) return kNumerical;
  }
  return kOk;
}

int cmd_export_field(const Globals& g, const std::string& model_path, const std::string& cond_s,
                     bool base_pinn) {
  const auto c = load(g);
  if (g.out.empty()) throw ValidationError("export-field needs --out PREFIX");
  const auto cond = parse_condition(cond_s);
  model::validate_condition(cond, c.model.envelope());
  const auto oracle = oracle_field(c, cond, c.eval_grid);
  std::optional<fd::FieldSolution> fb, fh;
  if (base_pinn) {
    const auto r = pinn::train_task(cond, c.model, c.pinn, c.seed);
    fb = pinn::evaluate_field(r.pinn, c.eval_grid);
  }
  if (!model_path.empty()) {
    fh = hypernet::infer_field(hypernet::load_model(model_path), cond, c.eval_grid, pinn::Precision::exact);
  }
  const auto files = bench::export_fields(g.out, oracle, fb ? &*fb : nullptr, fh ? &*fh : nullptr, c.model.scale);
  json errors = json::object();
  if (fb) errors["base-pinn"] = bench::mae_max_error(*fb, oracle, c.model.scale, c.hypernet.fields).mae_c;
  if (fh) errors["hypernet"] = bench::mae_max_error(*fh, oracle, c.model.scale, c.hypernet.fields).mae_c;
  emit(g, {{"command", "export-field"}, {"files", files}, {"mae_c", errors}});
  if (!g.json) {
    for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    for (auto it = errors.begin(); it != errors.end(); ++it) {
      std::printf("  %s MAE %.3f C\n", it.key().c_str(), it.value().get<double>());
    }
  }
  return kOk;
}

int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::validation: return kValidation;
    case ErrorCategory::training: return kTraining;
    case ErrorCategory::numerical: return kNumerical;
    case ErrorCategory::io: return kIo;
  }
  return kOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotary air-preheater thermal fields: FD oracle, PINN banks and hypernetwork inference"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for designs, collocation, initialization");
  app.add_option("--workers", g.workers, "Worker threads");
  app.add_option("--out", g.out, "Output file, directory or prefix (per command)");
  app.add_flag("--json", g.json, "Machine-readable output on stdout");

  std::string cond = "300,45,45,700", grid, model_path, bank_dir, tasks_path, kind;
  bool study = false, exact = false, base_pinn = false, no_validation = false, no_timing = false;
  int size = 0, levels = 0;
  std::vector<int> factorial;
  std::vector<std::string> methods;
  std::string dump_path;

  auto* solve = app.add_subcommand("solve", "Run the finite-difference oracle for one condition");
  solve->add_option("--condition", cond, "Tin1,Tin2,Tin3,m1 in C, C, C, kg/s")->capture_default_str();
  solve->add_option("--grid", grid, "Grid per sector, e.g. 240x240");
  solve->add_flag("--study", study, "Grid-independence study 30^2 ... 480^2");

  auto* design = app.add_subcommand("design", "Generate a task design");
  design->add_option("--kind", kind, "orthogonal or factorial");
  design->add_option("--size", size, "Number of tasks (orthogonal)");
  design->add_option("--levels", levels, "Levels per variable (orthogonal)");
  design->add_option("--factorial-levels", factorial, "Four level counts (factorial)")->delimiter(',');

  auto* train_bank = app.add_subcommand("train-bank", "Train one base PINN per design task");
  train_bank->add_option("--tasks", tasks_path, "Task table CSV (default: design from config)");

  auto* train_hn = app.add_subcommand("train-hypernet", "Train the hypernetwork on a bank");
  train_hn->add_option("--bank", bank_dir, "Bank directory")->required();
  train_hn->add_option("--validation", tasks_path, "Validation task table (default: bundled)");
  train_hn->add_flag("--no-validation", no_validation, "Monitor the training loss instead");

  auto* infer = app.add_subcommand("infer", "Predict a field with the hypernetwork");
  infer->add_option("--model", model_path, "Hypernetwork model file")->required();
  infer->add_option("--condition", cond, "Tin1,Tin2,Tin3,m1")->capture_default_str();
  infer->add_option("--grid", grid, "Grid per sector, e.g. 240x240");
  infer->add_flag("--exact", exact, "Evaluate in double precision");

  auto* benchmark = app.add_subcommand("benchmark", "Compare methods against the FD oracle");
  benchmark->add_option("--model", model_path, "Hypernetwork model file");
  benchmark->add_option("--bank", bank_dir, "Bank directory (nearest-neighbor baseline)");
  benchmark->add_option("--tasks", tasks_path, "Task table (default: bundled test tasks)");
  benchmark->add_option("--methods", methods, "hypernet, base-pinn, nearest-neighbor")->delimiter(',');
  benchmark->add_flag("--no-timing", no_timing, "Skip the timing rows");

  auto* export_field = app.add_subcommand("export-field", "Write oracle and predicted field CSVs");
  export_field->add_option("--condition", cond, "Tin1,Tin2,Tin3,m1")->capture_default_str();
  export_field->add_option("--model", model_path, "Hypernetwork model file");
  export_field->add_flag("--base-pinn", base_pinn, "Also train and export a base PINN");

  auto* dump = app.add_subcommand("config", "Print the effective configuration");
  dump->add_option("--write", dump_path, "Also write it to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    if (*solve) return cmd_solve(g, cond, grid, study);
    if (*design) return cmd_design(g, kind, size, levels, factorial);
    if (*train_bank) return cmd_train_bank(g, tasks_path);
    if (*train_hn) return cmd_train_hypernet(g, bank_dir, tasks_path, no_validation);
    if (*infer) return cmd_infer(g, model_path, cond, grid, exact);
    if (*benchmark) return cmd_benchmark(g, model_path, bank_dir, tasks_path, methods, no_timing);
    if (*export_field) return cmd_export_field(g, model_path, cond, base_pinn);
    if (*dump) {
      const auto c = load(g);
      if (!dump_path.empty()) config::save_config(dump_path, c);
      std::cout << config::to_json(c);
      return kOk;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOther;
}
