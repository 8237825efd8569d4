#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <map>

#include "fedvid/synthetic_data.hpp"

using namespace fedvid;

namespace {

DatasetConfig tiny_config() {
  DatasetConfig cfg;
  cfg.n_direction_bins = 4;
  cfg.n_size_bins = 2;
  cfg.videos_per_class_train = 6;
  cfg.videos_per_class_test = 3;
  cfg.t_raw = 32;
  cfg.height = 8;
  cfg.width = 8;
  cfg.noise_sigma = 0.05;
  cfg.seed = 7;
  return cfg;
}

bool frames_equal(const Tensor& frames, int t_a, int t_b) {
  const std::size_t px = frames.shape[1] * frames.shape[2];
  for (std::size_t i = 0; i < px; ++i) {
    if (frames.data[t_a * px + i] != frames.data[t_b * px + i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("zero motion and zero noise give identical frames") {
  DatasetConfig cfg = tiny_config();
  cfg.noise_sigma = 0.0;
  GenParams p;
  p.x0 = 3.0;
  p.y0 = 2.0;
  p.vx = 0.0;
  p.vy = 0.0;
  p.patch_side = 2;
  p.intensity = 0.75;
  Rng rng(1);
  const Video v = generate_video(p, cfg, rng);
  for (int t = 1; t < cfg.t_raw; ++t) REQUIRE(frames_equal(v.frames, 0, t));
}

TEST_CASE("unit patch with unit velocity walks one column per frame") {
  DatasetConfig cfg = tiny_config();
  cfg.noise_sigma = 0.0;
  cfg.n_size_bins = 1;
  cfg.min_side = 1;  // allows a single-pixel patch
  GenParams p;
  p.x0 = 0.0;
  p.y0 = 4.0;
  p.vx = 1.0;
  p.vy = 0.0;
  p.patch_side = 1;
  p.intensity = 1.0;
  Rng rng(1);
  const Video v = generate_video(p, cfg, rng);
  const std::size_t px = static_cast<std::size_t>(cfg.height) * cfg.width;
  for (int t = 0; t < cfg.t_raw; ++t) {
    int lit = 0;
    for (std::size_t i = 0; i < px; ++i) {
      if (v.frames.data[t * px + i] > 0.0) ++lit;
    }
    REQUIRE(lit == 1);
    const int expected_col = t % cfg.width;
    REQUIRE(v.frames.data[t * px + 4 * cfg.width + expected_col] == 1.0);
  }
}

TEST_CASE("patch mass is side^2 * intensity on every noise-free frame") {
  DatasetConfig cfg = tiny_config();
  cfg.noise_sigma = 0.0;
  Rng param_rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    GenParams p;
    p.x0 = param_rng.uniform(0.0, cfg.width);
    p.y0 = param_rng.uniform(0.0, cfg.height);
    const double angle = param_rng.uniform(0.0, 6.28);
    const double speed = param_rng.uniform(cfg.speed_min, cfg.speed_max);
    p.vx = speed * std::cos(angle);
    p.vy = speed * std::sin(angle);
    p.patch_side = cfg.min_patch_side() + static_cast<int>(param_rng.next_below(cfg.n_size_bins));
    p.intensity = param_rng.uniform(0.5, 1.0);
    Rng rng(trial);
    const Video v = generate_video(p, cfg, rng);
    const std::size_t px = static_cast<std::size_t>(cfg.height) * cfg.width;
    for (int t = 0; t < cfg.t_raw; ++t) {
      double sum = 0.0;
      for (std::size_t i = 0; i < px; ++i) sum += v.frames.data[t * px + i];
      REQUIRE(sum == Catch::Approx(p.patch_side * p.patch_side * p.intensity).margin(1e-12));
    }
  }
}

TEST_CASE("patch anchor follows the floored linear trajectory") {
  DatasetConfig cfg = tiny_config();
  cfg.noise_sigma = 0.0;
  GenParams p;
  p.x0 = 1.25;
  p.y0 = 6.5;
  p.vx = 1.6;
  p.vy = -0.9;
  p.patch_side = 2;
  p.intensity = 1.0;
  Rng rng(3);
  const Video v = generate_video(p, cfg, rng);
  const std::size_t px = static_cast<std::size_t>(cfg.height) * cfg.width;
  auto wrap = [](int a, int m) { return ((a % m) + m) % m; };
  for (int t = 0; t < cfg.t_raw; ++t) {
    const int ax = wrap(static_cast<int>(std::floor(p.x0 + t * p.vx)), cfg.width);
    const int ay = wrap(static_cast<int>(std::floor(p.y0 + t * p.vy)), cfg.height);
    int lit = 0;
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const double value = v.frames.data[t * px + y * cfg.width + x];
        const bool inside = (wrap(x - ax, cfg.width) < p.patch_side) &&
                            (wrap(y - ay, cfg.height) < p.patch_side);
        REQUIRE(value == (inside ? p.intensity : 0.0));
        if (value > 0.0) ++lit;
      }
    }
    REQUIRE(lit == p.patch_side * p.patch_side);
  }
}

TEST_CASE("out of range parameters are rejected") {
  const DatasetConfig cfg = tiny_config();
  Rng rng(1);
  GenParams p;
  p.x0 = -1.0;
  REQUIRE_THROWS_AS(generate_video(p, cfg, rng), Error);
  p.x0 = 0.0;
  p.patch_side = 99;
  REQUIRE_THROWS_AS(generate_video(p, cfg, rng), Error);
  p.patch_side = 2;
  p.intensity = 0.1;
  REQUIRE_THROWS_AS(generate_video(p, cfg, rng), Error);
  p.intensity = 1.0;
  p.vx = 100.0;
  REQUIRE_THROWS_AS(generate_video(p, cfg, rng), Error);
}

TEST_CASE("make_dataset produces an exactly flat class histogram") {
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  REQUIRE(ds.train.size() == static_cast<std::size_t>(cfg.n_classes() * cfg.videos_per_class_train));
  REQUIRE(ds.test.size() == static_cast<std::size_t>(cfg.n_classes() * cfg.videos_per_class_test));
  std::map<int, int> histogram;
  for (const auto& v : ds.train) histogram[v.label] += 1;
  REQUIRE(static_cast<int>(histogram.size()) == cfg.n_classes());
  for (const auto& [label, count] : histogram) {
    REQUIRE(label >= 0);
    REQUIRE(label < cfg.n_classes());
    REQUIRE(count == cfg.videos_per_class_train);
  }
}

TEST_CASE("dataset generation is a pure function of the config") {
  const DatasetConfig cfg = tiny_config();
  const Dataset a = make_dataset(cfg);
  const Dataset b = make_dataset(cfg);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    REQUIRE(a.train[i].label == b.train[i].label);
    REQUIRE(a.train[i].frames.data == b.train[i].frames.data);
  }
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    REQUIRE(a.test[i].frames.data == b.test[i].frames.data);
  }
}

TEST_CASE("dataset generation is independent of worker count") {
  const DatasetConfig cfg = tiny_config();
  setenv("FEDVID_THREADS", "1", 1);
  const Dataset serial = make_dataset(cfg);
  setenv("FEDVID_THREADS", "4", 1);
  const Dataset parallel = make_dataset(cfg);
  unsetenv("FEDVID_THREADS");
  for (std::size_t i = 0; i < serial.train.size(); ++i) {
    REQUIRE(serial.train[i].frames.data == parallel.train[i].frames.data);
  }
}

TEST_CASE("labels recompute from stored generation parameters") {
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  for (const auto& v : ds.train) REQUIRE(class_label(v.gen_params, cfg) == v.label);
  for (const auto& v : ds.test) REQUIRE(class_label(v.gen_params, cfg) == v.label);
}

TEST_CASE("config invariants are enforced") {
  DatasetConfig cfg = tiny_config();
  cfg.n_direction_bins = 1;
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.t_raw = 8;
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.height = 4;
  REQUIRE_THROWS_AS(cfg.validate(), Error);
}
