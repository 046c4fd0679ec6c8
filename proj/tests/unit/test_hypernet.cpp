#include <filesystem>
#include <fstream>
#include <random>

#include "aph/hypernet.hpp"
#include "doctest.h"

using namespace aph;
using namespace aph::hypernet;

namespace {

// Bank whose weights vary smoothly (linearly) with the box-normalized condition.
WeightBank synthetic_bank(const std::vector<OperatingCondition>& conds, double slope,
                          std::uint64_t seed = 7) {
  WeightBank bank;
  bank.design_name = "synthetic";
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> base(kTargetDims);
  std::vector<std::array<double, 4>> dir(kTargetDims);
  for (std::size_t i = 0; i < kTargetDims; ++i) {
    base[i] = nd(rng);
    for (auto& d : dir[i]) d = nd(rng);
  }
  for (const auto& c : conds) {
    const auto u = model::normalize_condition(c, bank.ranges);
    std::vector<double> flat(kTargetDims);
    for (std::size_t i = 0; i < kTargetDims; ++i) {
      flat[i] = base[i];
      for (int d = 0; d < 4; ++d) flat[i] += slope * dir[i][d] * u[d];
    }
    auto t = TaskPinn::from_flat(flat);
    t.condition = c;
    bank.entries.push_back(t);
  }
  return bank;
}

std::vector<OperatingCondition> l9() {
  return doe::orthogonal_design(PhysicalRanges{}, 9, 3, 1).tasks;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("hypernetwork shape") {
  const auto& s = hypernet_spec();
  CHECK(s.layer_sizes == std::vector<int>{4, 256, 256, 1062});
  CHECK(nn::param_count(s) == kHypernetParams);
  CHECK(kTargetDims == 1062);
  const auto m = init_model(synthetic_bank(l9(), 0.1), {});
  CHECK(m.weights.size() == kHypernetParams);
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("curriculum") {
  const PhysicalRanges r;
  // Unit coordinates along the first axis only: 0, 0.25, 0.5, 0.75, 1.
  std::vector<OperatingCondition> tasks;
  for (double u : {0.0, 1.0, 0.5, 0.25, 0.75}) tasks.push_back({200 + 200 * u, 45, 45, 700});
  const auto cur = plan_curriculum(tasks, r);
  CHECK(cur.order == std::vector<int>{2, 3, 0, 4, 1});
  CHECK(cur.parents == std::vector<int>{3, 4, -1, 2, 2});

  // Two tasks equidistant from the centroid: the lower index goes first.
  const auto two = plan_curriculum({{250, 45, 45, 700}, {350, 45, 45, 700}}, r);
  CHECK(two.order == std::vector<int>{0, 1});
  CHECK(two.parents == std::vector<int>{-1, 0});

  const auto design = doe::orthogonal_design(r, 25, 5, 1).tasks;
  const auto a = plan_curriculum(design, r);
  CHECK(a.order == plan_curriculum(design, r).order);
  std::vector<int> pos(design.size());
  for (std::size_t k = 0; k < a.order.size(); ++k) pos[a.order[k]] = static_cast<int>(k);
  int roots = 0;
  for (std::size_t i = 0; i < design.size(); ++i) {
    if (a.parents[i] < 0) {
      ++roots;
    } else {
      CHECK(pos[a.parents[i]] < pos[i]);
    }
  }
  CHECK(roots == 1);
  CHECK(plan_curriculum({}, r).order.empty());
}

TEST_CASE("standardization") {
  auto bank = synthetic_bank(l9(), 0.3);
  // One weight shared by every entry.
  for (auto& e : bank.entries) e.weights[1][5] = 0.25;
  const auto s = StandardizationStats::from_bank(bank);
  CHECK(s.stddev[pinn::kBaseParams + 5] == StandardizationStats::kStdFloor);
  for (const auto& e : bank.entries) {
    const auto f = e.flat();
    const auto back = s.destandardize(s.standardize(f));
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(back[i] == doctest::Approx(f[i]).epsilon(1e-12));
  }
  std::vector<double> col(bank.entries.size());
  for (std::size_t n = 0; n < col.size(); ++n) col[n] = s.standardize(bank.entries[n].flat())[17];
  double mean = 0, var = 0;
  for (double v : col) mean += v / col.size();
  for (double v : col) var += (v - mean) * (v - mean) / col.size();
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(var == doctest::Approx(1.0));
  CHECK_THROWS_AS(s.standardize(std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(StandardizationStats::from_bank(WeightBank{}), ValidationError);
}

TEST_CASE("zero heads predict the bank mean") {
  const auto bank = synthetic_bank(l9(), 0.5);
  const auto m = init_model(bank, {});
  for (const auto& c : {OperatingCondition{300, 45, 45, 700}, OperatingCondition{210, 70, 20, 610}}) {
    const auto flat = predict_weights(m, c).flat();
    for (std::size_t i = 0; i < kTargetDims; ++i) CHECK(flat[i] == doctest::Approx(m.stats.mean[i]).epsilon(1e-12));
  }
  HypernetConfig random_heads;
  random_heads.zero_heads = false;
  const auto r = init_model(bank, random_heads);
  CHECK(predict_weights(r, {300, 45, 45, 700}).flat() != m.stats.mean);
}

TEST_CASE("bank of identical weights") {
  auto bank = synthetic_bank(l9(), 0.0);
  HypernetConfig cfg;
  cfg.max_epochs = 50;
  const auto res = train_hypernet(bank, {}, cfg);
  CHECK(res.report.train_loss.front() == 0.0);
  CHECK(res.report.stop_reason == "zero_loss");
  const auto want = bank.entries[0].flat();
  const auto got = predict_weights(res.model, {260, 30, 60, 650}).flat();
  for (std::size_t i = 0; i < kTargetDims; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
}

TEST_CASE("reconstruction of a smooth bank") {
  const auto bank = synthetic_bank(doe::orthogonal_design(PhysicalRanges{}, 25, 5, 3).tasks, 0.2);
  HypernetConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_epochs = 400;
  const auto before = reconstruction_rmse(init_model(bank, cfg), bank);
  CHECK(before == doctest::Approx(1.0));
  const auto res = train_hypernet(bank, {}, cfg);
  const auto after = reconstruction_rmse(res.model, bank);
  MESSAGE("rmse " << after << " after " << res.report.epochs << " epochs");
  CHECK(after < 0.05);
  CHECK(res.report.train_loss.back() < 1e-2 * res.report.train_loss.front());
  CHECK(res.report.best_monitor == res.report.train_loss[res.report.best_epoch]);

  const auto again = train_hypernet(bank, {}, cfg);
  CHECK(again.model == res.model);
  cfg.seed = 2;
  CHECK_FALSE(train_hypernet(bank, {}, cfg).model == res.model);
}

TEST_CASE("early stopping on validation field error") {
  const model::ModelConfig mc;
  const auto bank = synthetic_bank(l9(), 0.05);
  const fd::Grid g{12, 12};
  // Oracles equal to the bank's own field for two entries: the zero-head start
  // is not optimal, training can improve and the monitor must be recorded.
  std::vector<ValidationTask> val;
  for (int i : {0, 4}) val.push_back({bank.entries[i].condition, pinn::evaluate_field(bank.entries[i], g)});
  HypernetConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_epochs = 60;
  cfg.validate_every = 5;
  cfg.patience = 3;
  cfg.restore_best = true;
  const auto res = train_hypernet(bank, val, cfg);
  const auto& rep = res.report;
  CHECK(rep.validation_mae.size() == static_cast<std::size_t>((rep.epochs + 4) / 5));
  CHECK(rep.best_monitor == *std::min_element(rep.validation_mae.begin(), rep.validation_mae.end()));
  CHECK(rep.best_epoch % 5 == 0);
  if (rep.stop_reason == "early_stopping") CHECK(rep.epochs < cfg.max_epochs);

  // The restored weights reproduce the best monitored value.
  double sum = 0;
  for (const auto& v : val) {
    sum += fd::field_error(pinn::evaluate_field(predict_weights(res.model, v.condition), g), v.oracle).mae;
  }
  CHECK(sum / val.size() == doctest::Approx(rep.best_monitor).epsilon(1e-9));

  // Without restoring, the model is the one from the last epoch.
  cfg.restore_best = false;
  const auto last = train_hypernet(bank, val, cfg);
  CHECK(last.report.epochs == rep.epochs);
  if (rep.best_epoch + 1 < rep.epochs) CHECK(last.model.weights != res.model.weights);

  cfg.patience = 0;
  CHECK_THROWS_AS(train_hypernet(bank, val, cfg), ValidationError);
  CHECK_THROWS_AS(train_hypernet(synthetic_bank({{300, 45, 45, 700}}, 0.1), {}, HypernetConfig{}),
                  ValidationError);
  (void)mc;
}

TEST_CASE("inference") {
  const auto bank = synthetic_bank(l9(), 0.1);
  auto m = init_model(bank, {});
  const std::uint64_t steps = nn::adam_step_count();
  std::vector<std::string> warnings;
  const OperatingCondition inside{300, 45, 45, 700};
  const auto f = infer_field(m, inside, {20, 20}, pinn::Precision::exact, &warnings);
  CHECK(nn::adam_step_count() == steps);
  CHECK(warnings.empty());
  const auto direct = pinn::evaluate_field(predict_weights(m, inside), {20, 20});
  CHECK(fd::field_error(f, direct).max == 0.0);
  const auto single = infer_field(m, inside, {20, 20});
  CHECK(fd::field_error(single, direct).max < 1e-5);

  // Just outside the box: allowed with a warning. Outside the envelope: rejected.
  CHECK_NOTHROW(predict_weights(m, {410, 45, 45, 700}, &warnings));
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("extrapolat") != std::string::npos);
  CHECK_THROWS_AS(predict_weights(m, {430, 45, 45, 700}), ValidationError);
  CHECK_THROWS_AS(predict_weights(m, {300, 45, 45, 900}), ValidationError);

  m.weights.pop_back();
  CHECK_THROWS_AS(predict_weights(m, inside), ShapeError);
}

TEST_CASE("nearest neighbour") {
  const auto bank = synthetic_bank(l9(), 0.3);
  for (const auto& e : bank.entries) CHECK(&nearest_neighbor_weights(bank, e.condition) == &e);

  WeightBank pair = synthetic_bank({{250, 45, 45, 700}, {350, 45, 45, 700}}, 0.3);
  CHECK(&nearest_neighbor_weights(pair, {300, 45, 45, 700}) == &pair.entries[0]);
  CHECK(&nearest_neighbor_weights(pair, {301, 45, 45, 700}) == &pair.entries[1]);
  // Distances are measured in box-normalized units: 20 K of gas temperature
  // (0.1) is farther than 5 K of air temperature (0.071).
  WeightBank scaled = synthetic_bank({{320, 45, 45, 700}, {300, 50, 45, 700}}, 0.3);
  CHECK(&nearest_neighbor_weights(scaled, {300, 45, 45, 700}) == &scaled.entries[1]);
  CHECK_THROWS_AS(nearest_neighbor_weights(WeightBank{}, {300, 45, 45, 700}), ValidationError);
}

TEST_CASE("bank and model files") {
  auto bank = synthetic_bank(l9(), 0.2);
  bank.seed = 5;
  bank.config_hash = "abc";
  bank.parents = plan_curriculum(l9(), bank.ranges).parents;
  bank.order = plan_curriculum(l9(), bank.ranges).order;
  bank.entries[3].final_losses = {1e-5, 2e-6, 3e-7, 4e-8};
  bank.entries[3].seed = 9;
  const auto dir = scratch_dir("aph_bank_io");
  save_bank(dir.string(), bank);
  const auto loaded = load_bank(dir.string());
  CHECK(loaded.entries == bank.entries);
  CHECK(loaded.parents == bank.parents);
  CHECK(loaded.order == bank.order);
  CHECK(loaded.design_name == "synthetic");
  CHECK(loaded.seed == 5);
  CHECK(loaded.config_hash == "abc");
  CHECK(loaded.ranges == bank.ranges);

  const auto m = init_model(bank, {});
  const auto path = (dir / "model.json").string();
  save_model(path, m);
  CHECK(load_model(path) == m);

  {
    std::ofstream out(dir / "manifest.json");
    out << "{\"format\": \"aph-bank\", \"version\": 99}";
  }
  CHECK_THROWS_AS(load_bank(dir.string()), IoError);
  {
    std::ofstream out(path);
    out << "{\"format\": \"aph-hypernet\", \"version\": 1, \"layer_sizes\": [4, 8, 1062]";
  }
  CHECK_THROWS_AS(load_model(path), IoError);
  CHECK_THROWS_AS(load_model((dir / "missing.json").string()), IoError);
  CHECK_THROWS_AS(load_bank((dir / "missing").string()), IoError);

  auto dup = bank;
  dup.entries[1].condition = dup.entries[0].condition;
  CHECK_THROWS_AS(save_bank(dir.string(), dup), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bank build") {
  model::ModelConfig mc;
  const doe::TaskDesign design{"mini",
                               {{300, 45, 45, 700}, {320, 45, 45, 700}, {300, 60, 30, 650}, {250, 20, 70, 780}},
                               {},
                               false};
  BankConfig cfg;
  cfg.train.max_steps = 30;
  cfg.train.counts = {64, 16, 16, 8};
  int calls = 0;
  const auto a = build_bank(design, mc, cfg, [&](const BankProgress& p) {
    ++calls;
    CHECK(p.total == 4);
    CHECK(p.report.steps > 0);
  });
  CHECK(calls == 4);
  REQUIRE(a.entries.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.entries[i].condition == design.tasks[i]);
  CHECK(a.parents == plan_curriculum(design.tasks, mc.ranges).parents);
  CHECK(a.design_name == "mini");

  cfg.workers = 3;
  const auto b = build_bank(design, mc, cfg);
  CHECK(b.entries == a.entries);

  cfg.workers = 0;
  CHECK_THROWS_AS(build_bank(design, mc, cfg), ValidationError);
  cfg.workers = 1;
  const doe::TaskDesign outside{"bad", {{500, 45, 45, 700}}, {}, false};
  CHECK_THROWS_AS(build_bank(outside, mc, cfg), ValidationError);
}
