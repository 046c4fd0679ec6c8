#include "aph/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace aph::config {

namespace {

using json = nlohmann::json;

// Reads fields out of one JSON object, rejecting keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ValidationError(where(key) + " has the wrong type");
    }
  }

  void grid(const char* key, fd::Grid& g) {
    std::array<int, 2> v{g.n_phi, g.n_z};
    get(key, v);
    g = {v[0], v[1]};
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.push_back(key);
    static const json empty = json::object();
    auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, where(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ValidationError("unknown configuration key " + where(it.key().c_str()));
      }
    }
  }

 private:
  std::string where(const char* key = nullptr) const {
    std::string w = path_.empty() ? std::string(key ? key : "configuration")
                                  : path_ + (key ? std::string(".") + key : "");
    return w;
  }

  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

json grid_json(const fd::Grid& g) { return json::array({g.n_phi, g.n_z}); }

json build(const AppConfig& c) {
  json ranges = json::object();
  for (int i = 0; i < model::kConditionDims; ++i) {
    const auto& b = c.model.ranges.bounds[i];
    ranges[model::kConditionNames[i]] = {b.min, b.max};
  }
  const auto& t = c.pinn;
  const auto& h = c.hypernet;
  const auto& s = c.solver;
  const auto& cm = c.model.cmap;
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"model",
       {{"ranges", ranges},
        {"envelope_margin", c.model.envelope_margin},
        {"scale", {{"t_ref", c.model.scale.t_ref}, {"t_span", c.model.scale.t_span}}},
        {"coefficients",
         {{"ntu_ref", cm.ntu_ref},
          {"pe_ref", cm.pe_ref},
          {"flow_ref", cm.flow_ref},
          {"flow_exponent", cm.flow_exponent}}}}},
      {"solver",
       {{"outer_tol", s.outer_tol},
        {"max_outer_iters", s.max_outer_iters},
        {"relaxation", s.relaxation},
        {"fluid_scheme", fd::to_string(s.fluid_scheme)},
        {"inner_tol", s.inner_tol},
        {"max_inner_iters", s.max_inner_iters},
        {"oracle_grid", grid_json(c.oracle_grid)},
        {"eval_grid", grid_json(c.eval_grid)}}},
      {"pinn",
       {{"lr", t.lr},
        {"lr_decay", t.lr_decay},
        {"decay_every", t.decay_every},
        {"max_steps", t.max_steps},
        {"target_loss", t.target_loss},
        {"plateau_delta", t.plateau_delta},
        {"plateau_window", t.plateau_window},
        {"collocation",
         {{"interior", t.counts.interior},
          {"inlet", t.counts.inlet},
          {"interface", t.counts.interface},
          {"neumann", t.counts.neumann}}},
        {"loss_weights",
         {{"pde", t.weights.pde},
          {"bc", t.weights.bc},
          {"interface", t.weights.interface},
          {"neumann", t.weights.neumann}}}}},
      {"hypernet",
       {{"lr", h.lr},
        {"max_epochs", h.max_epochs},
        {"min_delta", h.min_delta},
        {"patience", h.patience},
        {"validate_every", h.validate_every},
        {"restore_best", h.restore_best},
        {"zero_heads", h.zero_heads},
        {"fields", fd::to_string(h.fields)}}},
      {"design",
       {{"kind", c.design.kind},
        {"size", c.design.size},
        {"levels", c.design.levels},
        {"factorial_levels", c.design.factorial_levels},
        {"factorial_cap", c.design.factorial_cap}}}};
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

}  // namespace

void DesignSettings::validate() const {
  if (kind == "orthogonal") {
    if (size < 1 || levels < 1) throw ValidationError("design size and levels must be >= 1");
  } else if (kind == "factorial") {
    for (int n : factorial_levels) {
      if (n < 1) throw ValidationError("factorial level counts must be >= 1");
    }
  } else {
    throw ValidationError("design kind must be \"orthogonal\" or \"factorial\", got \"" + kind + "\"");
  }
}

void AppConfig::validate() const {
  if (workers < 1) throw ValidationError("workers must be >= 1");
  model.ranges.validate();
  model.scale.validate();
  model.cmap.validate();
  if (!(model.envelope_margin >= 0.0)) throw ValidationError("envelope_margin must be >= 0");
  solver.validate();
  oracle_grid.validate();
  eval_grid.validate();
  pinn.validate();
  if (!(hypernet.lr > 0.0)) throw ValidationError("hypernet.lr must be > 0");
  if (hypernet.max_epochs < 1 || hypernet.patience < 1 || hypernet.validate_every < 1)
    throw ValidationError("hypernet epoch, patience and check counts must be >= 1");
  if (!(hypernet.min_delta >= 0.0)) throw ValidationError("hypernet.min_delta must be >= 0");
  design.validate();
}

AppConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid configuration JSON: ") + e.what(), line_of(text, e.byte));
  }
  AppConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("workers", c.workers);

  auto m = root.sub("model");
  {
    auto r = m.sub("ranges");
    for (int i = 0; i < model::kConditionDims; ++i) {
      auto& b = c.model.ranges.bounds[i];
      std::array<double, 2> v{b.min, b.max};
      r.get(model::kConditionNames[i], v);
      b = {v[0], v[1]};
    }
    r.finish();
    m.get("envelope_margin", c.model.envelope_margin);
    auto sc = m.sub("scale");
    sc.get("t_ref", c.model.scale.t_ref);
    sc.get("t_span", c.model.scale.t_span);
    sc.finish();
    auto cm = m.sub("coefficients");
    cm.get("ntu_ref", c.model.cmap.ntu_ref);
    cm.get("pe_ref", c.model.cmap.pe_ref);
    cm.get("flow_ref", c.model.cmap.flow_ref);
    cm.get("flow_exponent", c.model.cmap.flow_exponent);
    cm.finish();
  }
  m.finish();

  auto s = root.sub("solver");
  s.get("outer_tol", c.solver.outer_tol);
  s.get("max_outer_iters", c.solver.max_outer_iters);
  s.get("relaxation", c.solver.relaxation);
  std::string scheme = fd::to_string(c.solver.fluid_scheme);
  s.get("fluid_scheme", scheme);
  c.solver.fluid_scheme = fd::fluid_scheme_from_string(scheme);
  s.get("inner_tol", c.solver.inner_tol);
  s.get("max_inner_iters", c.solver.max_inner_iters);
  s.grid("oracle_grid", c.oracle_grid);
  s.grid("eval_grid", c.eval_grid);
  s.finish();

  auto p = root.sub("pinn");
  p.get("lr", c.pinn.lr);
  p.get("lr_decay", c.pinn.lr_decay);
  p.get("decay_every", c.pinn.decay_every);
  p.get("max_steps", c.pinn.max_steps);
  p.get("target_loss", c.pinn.target_loss);
  p.get("plateau_delta", c.pinn.plateau_delta);
  p.get("plateau_window", c.pinn.plateau_window);
  {
    auto cc = p.sub("collocation");
    cc.get("interior", c.pinn.counts.interior);
    cc.get("inlet", c.pinn.counts.inlet);
    cc.get("interface", c.pinn.counts.interface);
    cc.get("neumann", c.pinn.counts.neumann);
    cc.finish();
    auto lw = p.sub("loss_weights");
    lw.get("pde", c.pinn.weights.pde);
    lw.get("bc", c.pinn.weights.bc);
    lw.get("interface", c.pinn.weights.interface);
    lw.get("neumann", c.pinn.weights.neumann);
    lw.finish();
  }
  p.finish();

  auto h = root.sub("hypernet");
  h.get("lr", c.hypernet.lr);
  h.get("max_epochs", c.hypernet.max_epochs);
  h.get("min_delta", c.hypernet.min_delta);
  h.get("patience", c.hypernet.patience);
  h.get("validate_every", c.hypernet.validate_every);
  h.get("restore_best", c.hypernet.restore_best);
  h.get("zero_heads", c.hypernet.zero_heads);
  std::string fields = fd::to_string(c.hypernet.fields);
  h.get("fields", fields);
  c.hypernet.fields = fd::field_selection_from_string(fields);
  h.finish();

  auto d = root.sub("design");
  d.get("kind", c.design.kind);
  d.get("size", c.design.size);
  d.get("levels", c.design.levels);
  d.get("factorial_levels", c.design.factorial_levels);
  d.get("factorial_cap", c.design.factorial_cap);
  d.finish();
  root.finish();

  c.hypernet.seed = c.seed;
  c.validate();
  return c;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open configuration " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line());
  }
}

std::string to_json(const AppConfig& cfg) { return build(cfg).dump(2) + "\n"; }

void save_config(const std::string& path, const AppConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write configuration " + path);
  out << to_json(cfg);
  if (!out) throw IoError("failed writing configuration " + path);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const AppConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(build(cfg).dump())));
  return buf;
}

}  // namespace aph::config
