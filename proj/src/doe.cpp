#include "aph/doe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#ifndef APH_DATA_DIR
#define APH_DATA_DIR "data"
#endif

namespace aph::doe {

namespace {

constexpr const char* kHeader = "task,Tin1,Tin2,Tin3,m1";

// Uniform integer in [0, n) by rejection, so results do not depend on the
// standard library's distribution implementation.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

template <class T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[bounded(rng, i)]);
  }
}

bool is_prime(int q) {
  if (q < 2) return false;
  for (int d = 2; d * d <= q; ++d) {
    if (q % d == 0) return false;
  }
  return true;
}

// Exponent k with q^k == size, or 0.
int power_of(int size, int q) {
  int k = 0;
  long long v = 1;
  while (v < size) {
    v *= q;
    ++k;
  }
  return v == size ? k : 0;
}

using Row = std::array<int, kConditionDims>;

// Level-index rows of the Rao-Hamming array OA(q^k, 4, q, 2): the unit
// vectors first, then further normalized generator vectors.
std::vector<Row> rao_hamming(int q, int k) {
  std::vector<std::vector<int>> gens;
  for (int i = 0; i < k && gens.size() < kConditionDims; ++i) {
    std::vector<int> g(k, 0);
    g[i] = 1;
    gens.push_back(g);
  }
  long long total = 1;
  for (int i = 0; i < k; ++i) total *= q;
  for (long long n = 1; n < total && gens.size() < kConditionDims; ++n) {
    std::vector<int> g(k);
    long long m = n;
    for (int i = k - 1; i >= 0; --i) {
      g[i] = static_cast<int>(m % q);
      m /= q;
    }
    const auto first = std::find_if(g.begin(), g.end(), [](int v) { return v != 0; });
    if (*first != 1) continue;
    if (std::count(g.begin(), g.end(), 0) == k - 1) continue;  // unit vector
    gens.push_back(g);
  }
  std::vector<Row> rows;
  rows.reserve(static_cast<std::size_t>(total));
  for (long long n = 0; n < total; ++n) {
    std::vector<int> x(k);
    long long m = n;
    for (int i = k - 1; i >= 0; --i) {
      x[i] = static_cast<int>(m % q);
      m /= q;
    }
    Row r{};
    for (int c = 0; c < kConditionDims; ++c) {
      int s = 0;
      for (int i = 0; i < k; ++i) s += gens[c][i] * x[i];
      r[c] = s % q;
    }
    rows.push_back(r);
  }
  return rows;
}

// Squared pairwise distances in level units; exact integers.
struct Spread {
  long long duplicates = 0;
  long long min_d2 = std::numeric_limits<long long>::max();
  long long at_min = 0;
  std::size_t min_a = 0, min_b = 0;

  // Fewer duplicates, then larger minimum distance, then fewer pairs at it.
  bool better_or_equal(const Spread& o) const {
    if (duplicates != o.duplicates) return duplicates < o.duplicates;
    if (min_d2 != o.min_d2) return min_d2 > o.min_d2;
    return at_min <= o.at_min;
  }
};

Spread spread(const std::vector<Row>& rows) {
  Spread s;
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      long long d2 = 0;
      for (int c = 0; c < kConditionDims; ++c) {
        const long long d = rows[a][c] - rows[b][c];
        d2 += d * d;
      }
      if (d2 == 0) ++s.duplicates;
      if (d2 < s.min_d2) {
        s.min_d2 = d2;
        s.at_min = 1;
        s.min_a = a;
        s.min_b = b;
      } else if (d2 == s.min_d2) {
        ++s.at_min;
      }
    }
  }
  return s;
}

// Balanced Latin hypercube on the level grid: each column holds every level
// floor(n/L) or ceil(n/L) times. Each candidate is improved by in-column
// swaps that move a closest pair apart; swaps keep the balance.
std::vector<Row> maximin_lhs(int size, int levels, std::uint64_t seed) {
  constexpr int kCandidates = 8;
  constexpr int kSwaps = 400;
  std::mt19937_64 rng(seed);
  std::vector<Row> best;
  Spread best_s;
  for (int cand = 0; cand < kCandidates; ++cand) {
    std::vector<Row> rows(size);
    for (int c = 0; c < kConditionDims; ++c) {
      std::vector<int> col(size);
      for (int i = 0; i < size; ++i) col[i] = i % levels;
      fisher_yates(col, rng);
      for (int i = 0; i < size; ++i) rows[i][c] = col[i];
    }
    Spread cur = spread(rows);
    for (int it = 0; it < kSwaps && size > 1; ++it) {
      const std::size_t i = bounded(rng, 2) ? cur.min_a : cur.min_b;
      const std::size_t j = bounded(rng, size);
      const int c = static_cast<int>(bounded(rng, kConditionDims));
      if (i == j || rows[i][c] == rows[j][c]) continue;
      std::swap(rows[i][c], rows[j][c]);
      const Spread next = spread(rows);
      if (next.better_or_equal(cur)) {
        cur = next;
      } else {
        std::swap(rows[i][c], rows[j][c]);
      }
    }
    if (cur.duplicates == 0 && (best.empty() || !best_s.better_or_equal(cur))) {
      best_s = cur;
      best = std::move(rows);
    }
  }
  if (best.empty()) {
    throw ValidationError("could not build a duplicate-free design of " + std::to_string(size) +
                          " tasks on " + std::to_string(levels) + " levels");
  }
  return best;
}

TaskDesign from_rows(const PhysicalRanges& r, const std::vector<Row>& rows, int levels) {
  TaskDesign d;
  for (int c = 0; c < kConditionDims; ++c) {
    d.levels.counts[c] = levels;
    d.levels.values[c] = level_values(r.bounds[c], levels);
  }
  d.tasks.reserve(rows.size());
  for (const auto& row : rows) {
    model::Unit4 a{};
    for (int c = 0; c < kConditionDims; ++c) a[c] = d.levels.values[c][row[c]];
    d.tasks.push_back(OperatingCondition::from_array(a));
  }
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& field, std::size_t line, const char* what) {
  const std::string f = trim(field);
  T v{};
  const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size()) {
    throw ParseError("line " + std::to_string(line) + ": bad " + what + " value '" + f + "'",
                     line);
  }
  return v;
}

}  // namespace

void TaskDesign::validate(const PhysicalRanges& r) const {
  std::set<model::Unit4> seen;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!r.contains(tasks[i])) {
      throw ValidationError("design task " + std::to_string(i + 1) + " lies outside the ranges");
    }
    if (!seen.insert(tasks[i].as_array()).second) {
      throw ValidationError("design task " + std::to_string(i + 1) + " is a duplicate");
    }
  }
}

std::vector<double> level_values(const model::Interval& iv, int count) {
  if (count < 1) throw ValidationError("level count must be >= 1");
  if (count == 1) return {0.5 * (iv.min + iv.max)};
  std::vector<double> v(count);
  for (int i = 0; i < count; ++i) {
    v[i] = i == count - 1 ? iv.max : iv.min + iv.span() * i / (count - 1);
  }
  return v;
}

TaskDesign full_factorial(const PhysicalRanges& r, const std::array<int, kConditionDims>& levels,
                          std::size_t cap) {
  r.validate();
  std::size_t size = 1;
  for (int c = 0; c < kConditionDims; ++c) {
    if (levels[c] < 1) {
      throw ValidationError(std::string("level count for ") + model::kConditionNames[c] +
                            " must be >= 1");
    }
    size *= static_cast<std::size_t>(levels[c]);
  }
  if (size > cap) {
    throw SizeError("full factorial of " + std::to_string(size) + " tasks exceeds the cap of " +
                    std::to_string(cap));
  }
  TaskDesign d;
  d.name = "FF" + std::to_string(size);
  for (int c = 0; c < kConditionDims; ++c) {
    d.levels.counts[c] = levels[c];
    d.levels.values[c] = level_values(r.bounds[c], levels[c]);
  }
  d.tasks.reserve(size);
  const auto& v = d.levels.values;
  for (double a : v[0]) {
    for (double b : v[1]) {
      for (double c : v[2]) {
        for (double m : v[3]) d.tasks.push_back({a, b, c, m});
      }
    }
  }
  return d;
}

bool has_orthogonal_array(int size, int levels) {
  if (!is_prime(levels)) return false;
  const int k = power_of(size, levels);
  if (k < 2 || k > 4) return false;
  long long cols = 0, p = 1;
  for (int i = 0; i < k; ++i) {
    cols += p;
    p *= levels;
  }
  return cols >= kConditionDims;
}

TaskDesign orthogonal_design(const PhysicalRanges& r, int size, int levels_per_var,
                             std::uint64_t seed) {
  r.validate();
  if (levels_per_var < 1) throw ValidationError("levels per variable must be >= 1");
  if (size < levels_per_var) {
    throw ValidationError("design size " + std::to_string(size) + " is smaller than the " +
                          std::to_string(levels_per_var) + " levels per variable");
  }
  double grid = 1.0;
  for (int c = 0; c < kConditionDims; ++c) grid *= levels_per_var;
  if (size > grid) {
    throw ValidationError("design size " + std::to_string(size) +
                          " exceeds the number of distinct level combinations");
  }
  TaskDesign d;
  if (has_orthogonal_array(size, levels_per_var)) {
    d = from_rows(r, rao_hamming(levels_per_var, power_of(size, levels_per_var)), levels_per_var);
  } else {
    d = from_rows(r, maximin_lhs(size, levels_per_var, seed), levels_per_var);
    d.oa_approximate = true;
  }
  d.name = "L" + std::to_string(size);
  return d;
}

BalanceReport validate_design(const TaskDesign& d, const PhysicalRanges& r) {
  BalanceReport b;
  const std::size_t n = d.tasks.size();
  std::vector<model::Unit4> unit(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = d.tasks[i].as_array();
    for (int c = 0; c < kConditionDims; ++c) {
      unit[i][c] = (a[c] - r.bounds[c].min) / r.bounds[c].span();
    }
    if (!r.contains(d.tasks[i])) b.out_of_range = true;
  }

  std::set<std::array<int, kConditionDims>> cells;
  std::vector<std::array<int, kConditionDims>> idx(n);
  double total_cells = 1.0;
  for (int c = 0; c < kConditionDims; ++c) {
    std::map<double, int> occ;
    for (const auto& t : d.tasks) ++occ[t.as_array()[c]];
    auto& o = b.occupancy[c];
    for (const auto& [v, k] : occ) {
      o.values.push_back(v);
      o.counts.push_back(k);
    }
    if (!o.counts.empty()) {
      const auto [lo, hi] = std::minmax_element(o.counts.begin(), o.counts.end());
      if (*hi - *lo > 1) b.balanced = false;
    }
    total_cells *= std::max<std::size_t>(o.values.size(), 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = d.tasks[i].as_array()[c];
      idx[i][c] = static_cast<int>(std::lower_bound(o.values.begin(), o.values.end(), v) -
                                   o.values.begin());
    }
  }
  for (const auto& i : idx) cells.insert(i);
  b.coverage = n == 0 ? 0.0 : static_cast<double>(cells.size()) / total_cells;

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (int c = 0; c < kConditionDims; ++c) {
        const double dd = unit[i][c] - unit[j][c];
        s += dd * dd;
      }
      best = std::min(best, s);
      if (s == 0.0) b.has_duplicates = true;
    }
  }
  b.min_distance = std::sqrt(best);
  return b;
}

std::string to_string(const BalanceReport& b) {
  std::ostringstream os;
  os << "balanced: " << (b.balanced ? "yes" : "no")
     << "\nduplicates: " << (b.has_duplicates ? "yes" : "no")
     << "\nout of range: " << (b.out_of_range ? "yes" : "no")
     << "\nmin distance: " << b.min_distance << "\ncoverage: " << b.coverage << '\n';
  for (int c = 0; c < kConditionDims; ++c) {
    os << model::kConditionNames[c] << ':';
    for (std::size_t i = 0; i < b.occupancy[c].values.size(); ++i) {
      os << ' ' << b.occupancy[c].values[i] << 'x' << b.occupancy[c].counts[i];
    }
    os << '\n';
  }
  return os.str();
}

std::vector<OperatingCondition> parse_task_table(std::istream& in) {
  std::vector<OperatingCondition> out;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (!header) {
      std::string h;
      for (char ch : t) {
        if (ch != ' ' && ch != '\t') h += ch;
      }
      if (h != kHeader) {
        throw ParseError("line " + std::to_string(lineno) + ": expected header '" + kHeader + "'",
                         lineno);
      }
      header = true;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(t);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!t.empty() && t.back() == ',') fields.emplace_back();
    if (fields.size() != 5) {
      throw ParseError("line " + std::to_string(lineno) + ": expected 5 fields, got " +
                           std::to_string(fields.size()),
                       lineno);
    }
    parse_number<long>(fields[0], lineno, "task");
    OperatingCondition c{parse_number<double>(fields[1], lineno, "Tin1"),
                         parse_number<double>(fields[2], lineno, "Tin2"),
                         parse_number<double>(fields[3], lineno, "Tin3"),
                         parse_number<double>(fields[4], lineno, "m1")};
    for (double v : c.as_array()) {
      if (!std::isfinite(v)) {
        throw ParseError("line " + std::to_string(lineno) + ": non-finite value", lineno);
      }
    }
    out.push_back(c);
  }
  return out;
}

std::vector<OperatingCondition> load_task_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task table " + path);
  return parse_task_table(in);
}

void save_task_table(const std::string& path, const std::vector<OperatingCondition>& tasks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write task table " + path);
  out << kHeader << '\n';
  char buf[64];
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out << i + 1;
    for (double v : tasks[i].as_array()) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string(buf, res.ptr);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing task table " + path);
}

std::string bundled_data_path(const std::string& name) {
  return std::string(APH_DATA_DIR) + "/" + name;
}

}  // namespace aph::doe
