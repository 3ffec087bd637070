#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "scan_io/synthetic_world.hpp"
#include "support/helpers.hpp"
#include "training/mining.hpp"
#include "training/overlap.hpp"
#include "training/trainer.hpp"
#include "training/triplet.hpp"

using namespace cvtnet;
using namespace cvtnet::train;

namespace {

// Dense sphere of radius `r`: every pixel of the overlap image receives a return.
scan::PointCloud sphere(double r, std::size_t n, const scan::SensorBounds& b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> az(-M_PI, M_PI);
  std::uniform_real_distribution<double> el(-b.fov_down_deg * M_PI / 180.0, b.fov_up_deg * M_PI / 180.0);
  scan::PointCloud c;
  c.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = az(rng), e = el(rng);
    c.points.push_back({r * std::cos(e) * std::cos(a), r * std::cos(e) * std::sin(a), r * std::sin(e), 0.0});
  }
  return c;
}

struct Fixture {
  scan::TrajectoryDataset dataset;
  OverlapTable table;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    scan::WorldConfig wc;
    wc.num_scans = 100;
    wc.num_revisits = 20;
    Fixture out;
    out.dataset = scan::generate_synthetic_world(21, wc);
    out.table = OverlapTable::compute(out.dataset, OverlapConfig{});
    return out;
  }();
  return f;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("overlap of a scan with itself is one") {
  const auto& f = fixture();
  const auto proj = overlap_projection(f.dataset.bounds, OverlapConfig{});
  CHECK(compute_overlap(f.dataset.scans[5], f.dataset.poses[5], f.dataset.scans[5], f.dataset.poses[5], proj) == 1.0);
  CHECK(f.table.get(5, 5) == 1.0);
}

TEST_CASE("scans far apart do not overlap") {
  const auto& f = fixture();
  const auto proj = overlap_projection(f.dataset.bounds, OverlapConfig{});
  const auto far = scan::Pose::from_yaw(0.0, f.dataset.poses[5].translation + Eigen::Vector3d(200.0, 0.0, 0.0));
  CHECK(compute_overlap(f.dataset.scans[5], f.dataset.poses[5], f.dataset.scans[5], far, proj) == 0.0);
}

TEST_CASE("half of a scan covers half of it") {
  scan::SensorBounds b{15.0, 25.0, 30.0};
  const auto proj = overlap_projection(b, OverlapConfig{});
  const auto full = sphere(10.0, 200000, b, 1);
  scan::PointCloud half;
  for (const auto& p : full.points)
    if (p.y > 0) half.points.push_back(p);
  const scan::Pose id;
  const double o = compute_overlap(full, id, half, id, proj);
  CHECK(o == doctest::Approx(0.5).epsilon(0.2));
  CHECK(std::abs(o - 0.5) <= 0.1);
  CHECK(compute_overlap(half, id, full, id, proj) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("overlap shrinks as the second scan moves away") {
  scan::SensorBounds b{15.0, 25.0, 30.0};
  const auto proj = overlap_projection(b, OverlapConfig{});
  const auto s = sphere(10.0, 200000, b, 2);
  const scan::Pose id;
  double prev = 1.0 + 1e-12;
  for (double t : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double o = compute_overlap(s, id, s, scan::Pose::from_yaw(0.0, {t, 0.0, 0.0}), proj);
    CHECK(o <= prev);
    prev = o;
  }
  CHECK(prev < 0.2);
}

TEST_CASE("overlap table is symmetric with a unit diagonal") {
  const auto& f = fixture();
  CHECK(f.table.size() == 100);
  CHECK(f.table.stored_pairs() > 0);
  for (std::size_t i = 0; i < 100; i += 7)
    for (std::size_t j = 0; j < 100; j += 3) CHECK(f.table.get(i, j) == f.table.get(j, i));
  const auto& rv = f.dataset.revisits.front();
  CHECK(f.table.get(rv.query, rv.source) > 0.3);
}

TEST_CASE("triplet loss cases") {
  const std::vector<double> q{1, 0};
  CHECK(triplet_loss<double>(q, {{1, 0}}, {{1, 0}}, 0.5) == doctest::Approx(0.5));
  CHECK(triplet_loss<double>(q, {{0, 1}, {1, 1}}, {{1, 0}}, 0.5) == doctest::Approx(5.0));
  CHECK(triplet_loss<double>(q, {{1, 0}}, {{-9, 0}}, 0.5) == 0.0);
  CHECK_CVT_ERROR(triplet_loss<double>(q, {}, {{1, 0}}, 0.5), ErrorCode::InvalidArgument);
  CHECK_CVT_ERROR(triplet_loss<double>(q, {{1, 0, 0}}, {{1, 0}}, 0.5), ErrorCode::Shape);

  const std::vector<std::vector<double>> pos{{0.3, 0.2}, {1.0, -0.5}, {0.1, 0.9}};
  const std::vector<std::vector<double>> neg{{2, 2}, {-1, 3}};
  const double base = triplet_loss<double>(q, pos, neg, 1.5);
  CHECK(triplet_loss<double>(q, {pos[2], pos[0], pos[1]}, {neg[1], neg[0]}, 1.5) == doctest::Approx(base));
}

TEST_CASE("mining") {
  const auto& f = fixture();
  const auto cfg = quick_config();
  MiningStats stats;
  const auto tuples = mine_tuples(f.table, cfg, 5, &stats);
  REQUIRE(!tuples.empty());
  CHECK(stats.emitted == tuples.size());
  CHECK(stats.candidates == 100);
  for (const auto& t : tuples) {
    CHECK(t.positives.size() == cfg.k_pos);
    CHECK(t.negatives.size() == cfg.k_neg);
    CHECK(std::set<std::size_t>(t.positives.begin(), t.positives.end()).size() == cfg.k_pos);
    for (auto p : t.positives) CHECK(f.table.get(t.query, p) > cfg.overlap_threshold);
    for (auto n : t.negatives) CHECK(f.table.get(t.query, n) <= cfg.overlap_threshold);
  }
  const auto again = mine_tuples(f.table, cfg, 5);
  REQUIRE(again.size() == tuples.size());
  bool same = true;
  for (std::size_t i = 0; i < again.size(); ++i)
    same &= again[i].query == tuples[i].query && again[i].positives == tuples[i].positives;
  CHECK(same);

  OverlapTable all(10);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = i + 1; j < 10; ++j) all.set(i, j, 1.0);
  CHECK_CVT_ERROR(mine_tuples(all, cfg, 1), ErrorCode::Training);
}

TEST_CASE("trajectory split holds out the tail") {
  const auto s = trajectory_split(100, 0.2);
  CHECK(s.train.size() == 80);
  CHECK(s.validation.front() == 80);
  CHECK(s.validation.back() == 99);
}

TEST_CASE("trainer with zero learning rate leaves the model unchanged") {
  const auto& f = fixture();
  mvf::CvtNet<float> model(mvf::ModelConfig::preset("tiny"), 4);
  const auto before = nn::hash_params(model.params());
  auto cfg = quick_config();
  cfg.learning_rate = 0.0;
  Trainer trainer(model, f.dataset, f.table, cfg);
  const auto report = trainer.run();
  CHECK(nn::hash_params(model.params()) == before);
  REQUIRE(!report.step_losses.empty());
  CHECK(std::isfinite(report.step_losses.front()));
  CHECK(report.step_losses.front() > 0.0);
  CHECK(report.epochs.size() == 2);
  CHECK(report.epochs[1].validation.ar1 == report.epochs[0].validation.ar1);
}

TEST_CASE("training loss falls over the first 200 steps") {
  const auto& f = fixture();
  mvf::CvtNet<float> model(mvf::ModelConfig::preset("tiny"), 4);
  auto cfg = quick_config();
  // Every epoch mines one tuple per eligible training query, so the count is fixed.
  const auto tuples = mine_tuples(f.table, trajectory_split(100, cfg.validation_fraction).train, cfg, 1);
  cfg.epochs = (200 + tuples.size() - 1) / tuples.size();
  Trainer trainer(model, f.dataset, f.table, cfg);
  const auto report = trainer.run();
  REQUIRE(report.step_losses.size() >= 200);
  auto window = [&](std::size_t at) {
    double s = 0.0;
    for (std::size_t i = at; i < at + 5; ++i) s += report.step_losses[i];
    return s / 5.0;
  };
  const double first = window(0), last = window(195);
  CHECK(last < first);
}

TEST_CASE("best checkpoint and sidecar are written") {
  const auto& f = fixture();
  testing::TempDir dir("train");
  mvf::CvtNet<float> model(mvf::ModelConfig::preset("tiny"), 4);
  TrainOutputs out{dir.file("log.csv"), dir.file("best.cvtp"), "abc"};
  Trainer trainer(model, f.dataset, f.table, quick_config(), out);
  const auto report = trainer.run();
  const auto back = nn::load_checkpoint(dir.file("best.cvtp"));
  CHECK(nn::hash_params(back) == nn::hash_params(report.best_params));
  CHECK(std::filesystem::exists(dir.file("best.cvtp.json")));
  CHECK(std::filesystem::exists(dir.file("log.csv")));
}
