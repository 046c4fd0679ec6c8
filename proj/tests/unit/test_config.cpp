#include <filesystem>

#include "aph/config.hpp"
#include "doctest.h"

using namespace aph;
using namespace aph::config;

namespace {

std::size_t parse_error_line(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_CASE("defaults survive a round trip") {
  const AppConfig d;
  CHECK(parse_config(to_json(d)) == d);
  CHECK(parse_config("{}") == d);
  CHECK(d.oracle_grid == fd::Grid{240, 240});
  CHECK(d.eval_grid == fd::Grid{60, 60});
  CHECK(d.design.factorial_levels == std::array<int, 4>{7, 5, 3, 3});
}

TEST_CASE("partial overrides") {
  const auto c = parse_config(R"({
    "seed": 9,
    "model": {"ranges": {"t_in_gas": [250, 350]}, "scale": {"t_span": 400}},
    "solver": {"fluid_scheme": "backward_euler", "oracle_grid": [120, 100]},
    "pinn": {"max_steps": 500, "collocation": {"interior": 256}},
    "hypernet": {"patience": 7, "fields": "fluid"},
    "design": {"kind": "factorial", "factorial_levels": [2, 2, 2, 2]}
  })");
  CHECK(c.seed == 9);
  CHECK(c.hypernet.seed == 9);
  CHECK(c.model.ranges.bounds[0].min == 250);
  CHECK(c.model.ranges.bounds[1].max == 80);
  CHECK(c.model.scale.t_span == 400);
  CHECK(c.solver.fluid_scheme == fd::FluidScheme::backward_euler);
  CHECK(c.oracle_grid == fd::Grid{120, 100});
  CHECK(c.pinn.max_steps == 500);
  CHECK(c.pinn.counts.interior == 256);
  CHECK(c.pinn.counts.inlet == 128);
  CHECK(c.hypernet.patience == 7);
  CHECK(c.hypernet.fields == fd::FieldSelection::fluid);
  CHECK(c.design.kind == "factorial");
  CHECK(parse_config(to_json(c)) == c);
}

TEST_CASE("rejected configurations") {
  CHECK_THROWS_AS(parse_config(R"({"sede": 1})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"pinn": {"collocation": {"interiour": 5}}})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"workers": "many"})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"workers": 0})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"solver": {"fluid_scheme": "rk4"}})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"ranges": {"gas_flow": [800, 600]}}})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"design": {"kind": "taguchi"}})"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"model": 3})"), ValidationError);
  CHECK(parse_error_line("{\n  \"seed\": 1,\n  \"workers\": ,\n}") == 3);
  CHECK_THROWS_AS(load_config("/nonexistent/aph.json"), IoError);
}

TEST_CASE("config hash") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);

  AppConfig a, b;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.pinn.lr = 2e-3;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.model.cmap.ntu_ref[2] = 2.6;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.seed = 2;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("config files") {
  const auto path = (std::filesystem::temp_directory_path() / "aph_config_test.json").string();
  AppConfig c;
  c.workers = 3;
  c.hypernet.lr = 3e-4;
  save_config(path, c);
  CHECK(load_config(path) == c);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(save_config("/nonexistent/dir/c.json", c), IoError);
}
