#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <json.hpp>

#include "pcd/report.hpp"
#include "pcd/trainer.hpp"
#include "support.hpp"

using namespace pcd;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny(std::uint64_t seed, std::size_t steps = 30) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.steps = steps;
  cfg.z_dim = 4;
  cfg.generator_hidden = {16, 16};
  cfg.critic_hidden = {16, 16};
  cfg.batch_size = 16;
  cfg.eval_every = 10;
  cfg.eval_samples = 128;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pcd_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("dataset examples") {
  DatasetSpec ring;
  ring.noise_std = 0.0;
  ring.scale = 1.0;
  const auto centers = dataset_centers(ring);
  REQUIRE(centers.size() == 8);
  for (const auto& c : centers) CHECK(norm2(c) == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng(81);
  const Matrix pts = sample_points(ring, 200, rng);
  for (std::size_t r = 0; r < pts.rows; ++r) {
    double best = INFINITY;
    for (const auto& c : centers) best = std::min(best, distance(pts.row(r), c));
    CHECK(best <= 1e-15);
  }

  DatasetSpec grid;
  grid.kind = "grid25";
  const auto gc = dataset_centers(grid);
  REQUIRE(gc.size() == 25);
  const Matrix g = sample_points(grid, 2500, rng);
  std::vector<int> counts(25, 0);
  for (std::size_t r = 0; r < g.rows; ++r) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < 25; ++k) {
      if (distance(g.row(r), gc[k]) < distance(g.row(r), gc[arg])) arg = k;
    }
    ++counts[arg];
  }
  for (int c : counts) CHECK(std::abs(c - 100) <= 50);

  DatasetSpec bad;
  bad.kind = "spiral";
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("mode coverage") {
  DatasetSpec ring;
  const auto centers = dataset_centers(ring);
  const auto on = mode_coverage(make_empirical(centers), centers, 0.15);
  CHECK(on.covered == 8);
  CHECK(on.hq_fraction == 1.0);
  const auto off = mode_coverage(make_empirical(std::vector<Vector>{{0.0, 0.0}, centers[3]}), centers, 0.15);
  CHECK(off.covered == 1);
  CHECK(off.hq_fraction == 0.5);
}

TEST_CASE("config JSON roundtrip and strictness") {
  TrainConfig cfg = tiny(9);
  cfg.p = 2.0;
  cfg.n = 16;
  cfg.srvt = true;
  cfg.dataset.kind = "grid25";
  const std::string text = train_config_json(cfg);
  CHECK(train_config_json(parse_train_config(text)) == text);

  CHECK_THROWS_AS(parse_train_config(R"({"unknown": 1})"), Error);
  CHECK_THROWS_AS(parse_train_config(R"({"steps": -3})"), Error);
  CHECK_THROWS_AS(parse_train_config(R"({"srvt": 1})"), Error);
  CHECK_THROWS_AS(parse_train_config(R"({"critic": {"hidden": [0]}})"), Error);
  CHECK_THROWS_AS(parse_train_config("not json"), Error);
  CHECK(parse_train_config("{}").steps == TrainConfig{}.steps);
}

TEST_CASE("training is deterministic and writes its artifacts") {
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  const auto ra = train(tiny(5), a.string());
  const auto rb = train(tiny(5), b.string());
  REQUIRE(ra.records.size() == 3);  // steps 10, 20, 30
  for (std::size_t i = 0; i < ra.records.size(); ++i) {
    CHECK(ra.records[i].step == 10 * (i + 1));
    CHECK(ra.records[i].objective == rb.records[i].objective);
    CHECK(ra.records[i].w1 == rb.records[i].w1);
    CHECK(std::isfinite(ra.records[i].w1));
    CHECK(ra.records[i].seconds == 0.0);
  }
  for (const char* f : {"config.json", "metrics.csv", "checkpoint.bin", "samples_30.csv"}) {
    CHECK(fs::exists(a / f));
  }
  const auto back = read_metrics_csv((a / "metrics.csv").string());
  REQUIRE(back.size() == ra.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].objective == ra.records[i].objective);
    CHECK(back[i].hq_frac == ra.records[i].hq_frac);
  }
  const auto other = train(tiny(6));
  CHECK(other.records.back().objective != ra.records.back().objective);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("generator loss and objective share the fake term") {
  TrainState s = init_training(tiny(7));
  const auto batches = evaluation_batches(s.cfg, s.generator, 0);
  const double loss = generator_loss(s.critic, ad::exact_spectral_estimates(s.critic.body), s.generator,
                                     sample_noise(4, 4, s.noise_rng), 1.0);
  CHECK(loss <= 0.0);
  const auto r = evaluate(s, 0, batches);
  CHECK(std::isfinite(r.objective));
  CHECK(r.modes <= 8);
}

TEST_CASE("report merges runs and takes medians") {
  const fs::path root = scratch("report");
  CHECK_THROWS_AS(build_report(root.string()), Error);
  fs::create_directories(root);
  CHECK_THROWS_AS(build_report(root.string()), Error);

  std::vector<double> finals;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = train(tiny(seed, 20), (root / ("s" + std::to_string(seed))).string());
    finals.push_back(r.records.back().w1);
  }
  TrainConfig other = tiny(1, 20);
  other.n = 4;
  const auto single = train(other, (root / "n4").string());

  const RunReport report = build_report(root.string());
  REQUIRE(report.groups.size() == 2);
  REQUIRE(report.runs.size() == 6);
  const auto& g1 = report.groups[0];
  CHECK(g1.runs == 5);
  std::sort(finals.begin(), finals.end());
  CHECK(g1.w1 == finals[2]);
  const auto& g4 = report.groups[1];
  CHECK(g4.runs == 1);
  CHECK(g4.w1 == single.records.back().w1);
  CHECK(g4.objective == single.records.back().objective);

  write_report_csv((root / "report.csv").string(), report);
  CHECK(fs::file_size(root / "report.csv") > 0);
  CHECK(render_report(report).find("p=1 n=4 K=1 srvt=off") != std::string::npos);
  fs::remove_all(root);

  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median({}), Error);
}
