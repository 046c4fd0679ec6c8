#include "aph/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace aph::bench {

namespace {

namespace fs = std::filesystem;

constexpr const char* kRowHeader =
    "task,Tin1,Tin2,Tin3,m1,method,status,mae_c,max_c,mae,max,seconds,error";
constexpr const char* kTimingHeader = "operation,median,variance,runs";

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_num(const std::string& s, std::size_t line) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ParseError("bad number \"" + s + "\"", line);
  }
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string clean(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

template <class F>
void parallel_for(int n, int workers, F&& body) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < n;) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::hypernet: return "hypernet";
    case Method::base_pinn: return "base-pinn";
    case Method::nearest_neighbor: return "nearest-neighbor";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::hypernet, Method::base_pinn, Method::nearest_neighbor}) {
    if (s == to_string(m)) return m;
  }
  throw ValidationError("unknown method \"" + s + "\" (hypernet, base-pinn, nearest-neighbor)");
}

ErrorMetrics mae_max_error(const fd::FieldSolution& a, const fd::FieldSolution& b,
                           const model::TemperatureScale& scale, fd::FieldSelection sel) {
  const auto e = fd::field_error(a, b, sel);
  return {e.mae * scale.t_span, e.max * scale.t_span, e.mae, e.max};
}

double BenchmarkReport::mean_mae(Method m) const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.method == m && !r.failed) {
      s += r.metrics.mae;
      ++n;
    }
  }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

double BenchmarkReport::mean_mae_c(Method m) const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.method == m && !r.failed) {
      s += r.metrics.mae_c;
      ++n;
    }
  }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

double BenchmarkReport::mean_max_c(Method m) const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.method == m && !r.failed) {
      s += r.metrics.max_c;
      ++n;
    }
  }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

int BenchmarkReport::failures(Method m) const {
  return static_cast<int>(
      std::count_if(rows.begin(), rows.end(), [&](const TaskRow& r) { return r.method == m && r.failed; }));
}

const TimingRow* BenchmarkReport::timing(const std::string& operation) const {
  for (const auto& t : timings) {
    if (t.operation == operation) return &t;
  }
  return nullptr;
}

double time_once(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Timing time_operation(const std::function<void()>& fn, int runs) {
  if (runs < 1) throw ValidationError("timing needs at least one run");
  Timing t;
  for (int i = 0; i < runs; ++i) t.runs.push_back(time_once(fn));
  auto sorted = t.runs;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  t.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double mean = 0.0;
  for (double v : t.runs) mean += v / n;
  for (double v : t.runs) t.variance += (v - mean) * (v - mean) / n;
  return t;
}

BenchmarkReport run_benchmark(const hypernet::HypernetModel* model,
                              const hypernet::WeightBank* bank,
                              const std::vector<OperatingCondition>& tasks,
                              const BenchmarkSettings& settings,
                              const std::function<void(const TaskRow&)>& progress) {
  const auto& methods = settings.methods;
  if (methods.empty()) throw ValidationError("no benchmark methods selected");
  for (Method m : methods) {
    if (m == Method::hypernet && !model) throw ValidationError("hypernet method needs a model");
    if (m == Method::nearest_neighbor && !bank) throw ValidationError("nearest-neighbor method needs a bank");
  }
  settings.oracle_grid.validate();
  settings.eval_grid.validate();
  settings.solver.validate();
  if (settings.workers < 1) throw ValidationError("workers must be >= 1");
  const auto envelope = settings.model.envelope();
  const auto& mc = settings.model;
  const auto& g = settings.eval_grid;

  BenchmarkReport rep;
  if (bank) rep.design_name = bank->design_name;
  const int n = static_cast<int>(tasks.size());
  const int k = static_cast<int>(methods.size());
  rep.rows.resize(static_cast<std::size_t>(n) * k);

  parallel_for(n, settings.workers, [&](int t) {
    const auto& c = tasks[t];
    for (int m = 0; m < k; ++m) {
      auto& row = rep.rows[static_cast<std::size_t>(t) * k + m];
      row.task = t + 1;
      row.condition = c;
      row.method = methods[m];
    }
    auto fail_all = [&](const std::string& why) {
      for (int m = 0; m < k; ++m) {
        auto& row = rep.rows[static_cast<std::size_t>(t) * k + m];
        row.failed = true;
        row.error = why;
      }
    };
    fd::FieldSolution oracle;
    try {
      model::validate_condition(c, envelope);
      const auto p = model::to_nondim(c, mc);
      oracle = fd::resample(fd::solve(p, settings.oracle_grid, settings.solver), g);
    } catch (const Error& e) {
      fail_all(std::string("oracle: ") + e.what());
      return;
    }
    for (int m = 0; m < k; ++m) {
      auto& row = rep.rows[static_cast<std::size_t>(t) * k + m];
      try {
        fd::FieldSolution f;
        switch (row.method) {
          case Method::hypernet:
            row.seconds = time_once([&] { f = hypernet::infer_field(*model, c, g, settings.precision); });
            break;
          case Method::nearest_neighbor:
            row.seconds = time_once([&] {
              f = pinn::evaluate_field(hypernet::nearest_neighbor_weights(*bank, c), g, nullptr,
                                       settings.precision);
            });
            break;
          case Method::base_pinn:
            row.seconds = time_once([&] {
              const auto r = pinn::train_task(c, mc, settings.train, settings.seed);
              f = pinn::evaluate_field(r.pinn, g);
            });
            break;
        }
        row.metrics = mae_max_error(f, oracle, mc.scale, settings.fields);
      } catch (const Error& e) {
        row.failed = true;
        row.error = e.what();
      }
    }
  });
  if (progress) {
    for (const auto& r : rep.rows) progress(r);
  }

  if (settings.time_operations && n > 0) {
    const auto& c = tasks.front();
    const auto& og = settings.oracle_grid;
    auto add = [&](const std::string& name, const Timing& t) {
      rep.timings.push_back({name, t.median, t.variance, static_cast<int>(t.runs.size())});
    };
    try {
      const auto p = model::to_nondim(c, mc);
      add("fd-solve", time_operation([&] { fd::solve(p, og, settings.solver); }));
      if (model) {
        add("hypernet-infer",
            time_operation([&] { hypernet::infer_field(*model, c, og, settings.precision); }));
      }
      if (bank) {
        add("nearest-neighbor-infer", time_operation([&] {
              pinn::evaluate_field(hypernet::nearest_neighbor_weights(*bank, c), og, nullptr,
                                   settings.precision);
            }));
      }
    } catch (const Error&) {
      // Timing rows are optional; the task rows already record the failure.
    }
    std::vector<double> train;
    for (const auto& r : rep.rows) {
      if (r.method == Method::base_pinn && !r.failed) train.push_back(r.seconds);
    }
    if (!train.empty()) {
      std::sort(train.begin(), train.end());
      const std::size_t m = train.size();
      TimingRow row{"base-pinn-train", m % 2 ? train[m / 2] : 0.5 * (train[m / 2 - 1] + train[m / 2]), 0.0,
                    static_cast<int>(m)};
      double mean = 0.0;
      for (double v : train) mean += v / m;
      for (double v : train) row.variance += (v - mean) * (v - mean) / m;
      rep.timings.push_back(row);
    }
  }
  return rep;
}

std::string summary(const BenchmarkReport& r) {
  std::ostringstream out;
  out << "design: " << r.design_name << "\n";
  out << "config_hash: " << r.config_hash << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %6s %7s %12s %12s %12s\n", "method", "tasks", "failed",
                "MAE [C]", "max [C]", "MAE [theta]");
  out << line;
  for (Method m : {Method::hypernet, Method::base_pinn, Method::nearest_neighbor}) {
    const auto count = std::count_if(r.rows.begin(), r.rows.end(),
                                     [&](const TaskRow& row) { return row.method == m; });
    if (count == 0) continue;
    std::snprintf(line, sizeof line, "%-18s %6ld %7d %12.4f %12.4f %12.6f\n", to_string(m).c_str(),
                  static_cast<long>(count), r.failures(m), r.mean_mae_c(m), r.mean_max_c(m), r.mean_mae(m));
    out << line;
  }
  if (!r.timings.empty()) {
    out << "timings (median of runs, seconds):\n";
    for (const auto& t : r.timings) {
      std::snprintf(line, sizeof line, "  %-24s %12.6f  var %.3g  runs %d\n", t.operation.c_str(), t.median,
                    t.variance, t.runs);
      out << line;
    }
    const auto* inf = r.timing("hypernet-infer");
    if (inf && inf->median > 0.0) {
      for (const char* op : {"fd-solve", "base-pinn-train"}) {
        if (const auto* t = r.timing(op)) {
          std::snprintf(line, sizeof line, "  speedup of hypernet-infer over %s: %.1fx\n", op,
                        t->median / inf->median);
          out << line;
        }
      }
    }
  }
  return out.str();
}

void export_report(const std::string& path, const BenchmarkReport& r) {
  {
    auto out = open_out(path);
    out << kRowHeader << "\n";
    for (const auto& row : r.rows) {
      const auto a = row.condition.as_array();
      out << row.task;
      for (double v : a) out << ',' << num(v);
      out << ',' << to_string(row.method) << ',' << (row.failed ? "failed" : "ok");
      if (row.failed) {
        out << ",,,,,";
      } else {
        out << ',' << num(row.metrics.mae_c) << ',' << num(row.metrics.max_c) << ','
            << num(row.metrics.mae) << ',' << num(row.metrics.max);
        out << ',';
      }
      out << num(row.seconds) << ',' << clean(row.error) << "\n";
    }
    if (!out) throw IoError("failed writing " + path);
  }
  {
    const auto tp = sibling(path, "_timings.csv");
    auto out = open_out(tp);
    out << kTimingHeader << "\n";
    for (const auto& t : r.timings) {
      out << clean(t.operation) << ',' << num(t.median) << ',' << num(t.variance) << ',' << t.runs << "\n";
    }
    if (!out) throw IoError("failed writing " + tp);
  }
  {
    const auto sp = sibling(path, "_summary.txt");
    auto out = open_out(sp);
    out << summary(r);
    if (!out) throw IoError("failed writing " + sp);
  }
}

BenchmarkReport import_report(const std::string& path) {
  BenchmarkReport r;
  try {
    auto in = open_in(path);
    std::string line;
    std::size_t ln = 1;
    if (!std::getline(in, line)) throw ParseError(path + ": missing header", 1);
    strip_cr(line);
    if (line != kRowHeader) throw ParseError(path + ": unexpected header", 1);
    while (std::getline(in, line)) {
      ++ln;
      strip_cr(line);
      if (line.empty()) continue;
      const auto f = split(line);
      if (f.size() != 13) throw ParseError(path + ": expected 13 fields", ln);
      TaskRow row;
      row.task = static_cast<int>(parse_num(f[0], ln));
      model::Unit4 a{};
      for (int i = 0; i < 4; ++i) a[i] = parse_num(f[1 + i], ln);
      row.condition = OperatingCondition::from_array(a);
      row.method = method_from_string(f[5]);
      if (f[6] != "ok" && f[6] != "failed") throw ParseError(path + ": bad status " + f[6], ln);
      row.failed = f[6] == "failed";
      if (!row.failed) {
        row.metrics = {parse_num(f[7], ln), parse_num(f[8], ln), parse_num(f[9], ln), parse_num(f[10], ln)};
      }
      row.seconds = parse_num(f[11], ln);
      row.error = f[12];
      r.rows.push_back(row);
    }
  } catch (const ValidationError& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }

  const auto tp = sibling(path, "_timings.csv");
  if (fs::exists(tp)) {
    auto in = open_in(tp);
    std::string line;
    std::size_t ln = 1;
    std::getline(in, line);
    while (std::getline(in, line)) {
      ++ln;
      strip_cr(line);
      if (line.empty()) continue;
      const auto f = split(line);
      if (f.size() != 4) throw ParseError(tp + ": expected 4 fields", ln);
      r.timings.push_back({f[0], parse_num(f[1], ln), parse_num(f[2], ln), static_cast<int>(parse_num(f[3], ln))});
    }
  }
  const auto sp = sibling(path, "_summary.txt");
  if (fs::exists(sp)) {
    auto in = open_in(sp);
    std::string line;
    while (std::getline(in, line)) {
      strip_cr(line);
      if (line.rfind("design: ", 0) == 0) r.design_name = line.substr(8);
      if (line.rfind("config_hash: ", 0) == 0) r.config_hash = line.substr(13);
    }
  }
  return r;
}

std::vector<std::string> export_fields(const std::string& prefix, const fd::FieldSolution& oracle,
                                       const fd::FieldSolution* base_pinn,
                                       const fd::FieldSolution* hypernet,
                                       const model::TemperatureScale& scale) {
  std::vector<std::string> written;
  auto put = [&](const char* name, const fd::FieldSolution& f) {
    const auto path = prefix + "_" + name + ".csv";
    fd::write_field_csv(path, f, scale);
    written.push_back(path);
  };
  put("oracle", oracle);
  if (base_pinn) put("base_pinn", *base_pinn);
  if (hypernet) put("hypernet", *hypernet);
  return written;
}

}  // namespace aph::bench
