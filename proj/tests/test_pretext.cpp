#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <set>

#include "fedvid/pretext.hpp"

using namespace fedvid;

namespace {

DatasetConfig tiny_config() {
  DatasetConfig cfg;
  cfg.n_direction_bins = 4;
  cfg.n_size_bins = 2;
  cfg.videos_per_class_train = 4;
  cfg.videos_per_class_test = 2;
  cfg.t_raw = 32;
  cfg.height = 8;
  cfg.width = 8;
  cfg.seed = 21;
  return cfg;
}

std::vector<ClipSource> pointers(const std::vector<Video>& videos) {
  return clip_sources(videos);
}

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

TEST_CASE("ctp target boundary mapping") {
  DatasetConfig cfg = tiny_config();
  cfg.noise_sigma = 0.0;
  GenParams p;
  p.x0 = 0.0;
  p.y0 = 0.0;
  p.vx = 0.0;
  p.vy = 0.0;
  p.patch_side = cfg.min_patch_side();
  p.intensity = 1.0;
  Rng gen_rng(1);
  std::vector<Video> videos = {generate_video(p, cfg, gen_rng)};
  Rng rng(2);
  const PretextBatch batch = make_ctp_batch(pointers(videos), {0}, cfg, rng);
  const auto& target = batch.regression_targets.at(0);
  REQUIRE(target[0] == 0.0);
  REQUIRE(target[1] == 0.0);
  REQUIRE(target[2] == 0.5);
  REQUIRE(target[3] == 0.5);
  REQUIRE(target[4] == 0.0);
  REQUIRE(batch.clips.at(0).shape[0] == kClipLen);
}

TEST_CASE("ctp targets stay in the unit interval over a whole dataset") {
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  Rng rng(3);
  const PretextBatch batch =
      make_ctp_batch(pointers(ds.train), iota_ids(ds.train.size()), cfg, rng);
  for (const auto& target : batch.regression_targets) {
    for (double v : target) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
}

TEST_CASE("identical generation parameters give identical ctp targets") {
  DatasetConfig cfg = tiny_config();
  GenParams p;
  p.x0 = 2.5;
  p.y0 = 1.0;
  p.vx = 1.5;
  p.vy = 0.5;
  p.patch_side = 3;
  p.intensity = 0.9;
  Rng r1(10), r2(20);
  std::vector<Video> videos = {generate_video(p, cfg, r1), generate_video(p, cfg, r2)};
  Rng rng(4);
  const PretextBatch batch = make_ctp_batch(pointers(videos), {0, 1}, cfg, rng);
  REQUIRE(batch.regression_targets[0] == batch.regression_targets[1]);
}

TEST_CASE("speed stride one reproduces the first eight raw frames") {
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  // Find a deterministic draw of k = 1 by scanning seeds.
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    Rng probe(seed);
    if (probe.next_below(kSpeedClasses) != 0) continue;
    Rng rng(seed);
    std::vector<Video> one = {ds.train[0]};
    const PretextBatch batch = make_speed_batch(pointers(one), {0}, cfg, rng);
    REQUIRE(batch.class_targets.at(0) == 0);
    const std::size_t px = static_cast<std::size_t>(cfg.height) * cfg.width;
    for (std::size_t i = 0; i < kClipLen * px; ++i) {
      REQUIRE(batch.clips[0].data[i] == ds.train[0].frames.data[i]);
    }
    return;
  }
  FAIL("no seed with stride 1 found in 64 tries");
}

TEST_CASE("speed labels are uniform within multinomial bounds") {
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  std::vector<Video> one = {ds.train[0]};
  Rng rng(77);
  const int draws = 10000;
  int counts[kSpeedClasses] = {0};
  for (int i = 0; i < draws; ++i) {
    const PretextBatch batch = make_speed_batch(pointers(one), {0}, cfg, rng);
    counts[batch.class_targets[0]] += 1;
  }
  const double expected = draws / static_cast<double>(kSpeedClasses);
  const double bound = 3.0 * std::sqrt(draws * 0.25 * 0.75);
  for (int c : counts) REQUIRE(std::fabs(c - expected) <= bound);
}

TEST_CASE("speed batches are reproducible from the rng seed") {
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  Rng a(5), b(5);
  const PretextBatch ba = make_speed_batch(pointers(ds.train), iota_ids(ds.train.size()), cfg, a);
  const PretextBatch bb = make_speed_batch(pointers(ds.train), iota_ids(ds.train.size()), cfg, b);
  REQUIRE(ba.class_targets == bb.class_targets);
}

TEST_CASE("speed rejects clips that are too short") {
  DatasetConfig cfg = tiny_config();
  cfg.t_raw = 16;  // valid dataset, too short for stride 4
  const Dataset ds = make_dataset(cfg);
  std::vector<Video> one = {ds.train[0]};
  Rng rng(6);
  REQUIRE_THROWS_AS(make_speed_batch(pointers(one), {0}, cfg, rng), Error);
}

TEST_CASE("vcop identity permutation has label zero") {
  REQUIRE(vcop_permutations()[0] == std::array<int, 3>{0, 1, 2});
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  std::vector<Video> one = {ds.train[0]};
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    Rng probe(seed);
    if (probe.next_below(kVcopClasses) != 0) continue;
    Rng rng(seed);
    const PretextBatch batch = make_vcop_batch(pointers(one), {0}, cfg, rng);
    REQUIRE(batch.class_targets.at(0) == 0);
    // Identity order: sub-clip j starts at frame 4j.
    const std::size_t px = static_cast<std::size_t>(cfg.height) * cfg.width;
    for (int j = 0; j < kVcopSubClips; ++j) {
      for (std::size_t i = 0; i < kVcopSubLen * px; ++i) {
        REQUIRE(batch.clip_triples[0][j].data[i] ==
                ds.train[0].frames.data[j * kVcopSubLen * px + i]);
      }
    }
    return;
  }
  FAIL("no seed with the identity permutation found");
}

TEST_CASE("inverting the labelled permutation restores the original order") {
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  std::vector<Video> one = {ds.train[1]};
  Rng rng(99);
  for (int trial = 0; trial < 24; ++trial) {
    const PretextBatch batch = make_vcop_batch(pointers(one), {0}, cfg, rng);
    const auto& perm = vcop_permutations()[static_cast<std::size_t>(batch.class_targets[0])];
    // shuffled[i] = original[perm[i]], so original[j] = shuffled[inverse[j]].
    std::array<int, 3> inverse{};
    for (int i = 0; i < 3; ++i) inverse[perm[i]] = i;
    const std::size_t px = static_cast<std::size_t>(cfg.height) * cfg.width;
    for (int j = 0; j < kVcopSubClips; ++j) {
      const Tensor& recovered = batch.clip_triples[0][static_cast<std::size_t>(inverse[j])];
      for (std::size_t i = 0; i < kVcopSubLen * px; ++i) {
        REQUIRE(recovered.data[i] == one[0].frames.data[j * kVcopSubLen * px + i]);
      }
    }
  }
}

TEST_CASE("all six vcop labels occur over many draws") {
  const DatasetConfig cfg = tiny_config();
  const Dataset ds = make_dataset(cfg);
  std::vector<Video> one = {ds.train[0]};
  Rng rng(123);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    const PretextBatch batch = make_vcop_batch(pointers(one), {0}, cfg, rng);
    seen.insert(batch.class_targets[0]);
  }
  REQUIRE(seen == std::set<int>{0, 1, 2, 3, 4, 5});
}
