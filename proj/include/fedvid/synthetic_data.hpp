#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "fedvid/error.hpp"
#include "fedvid/parallel.hpp"
#include "fedvid/rng.hpp"
#include "fedvid/tensor.hpp"

// Synthetic "moving patch" corpus: each clip is a bright square drifting at
// constant velocity across a dark noisy canvas with toroidal wraparound. The
// class of a clip is (direction bin, size bin), both recoverable from its
// generation parameters, which is what makes label-based non-IID splits and
// retrieval probes meaningful on this data.

namespace fedvid {

struct GenParams {
  double x0 = 0.0;  // start position, pixels (x = column, y = row)
  double y0 = 0.0;
  double vx = 0.0;  // pixels per frame
  double vy = 0.0;
  int patch_side = 2;
  double intensity = 1.0;
};

struct Video {
  Tensor frames;  // [T, H, W], values in [0, 1]
  int label = 0;
  GenParams gen_params;
};

struct DatasetConfig {
  int n_direction_bins = 8;
  int n_size_bins = 4;  // patch sides min_side .. min_side + n_size_bins - 1
  int min_side = 2;
  int videos_per_class_train = 100;
  int videos_per_class_test = 20;
  int t_raw = 32;
  int height = 16;
  int width = 16;
  double speed_min = 1.0;
  double speed_max = 4.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  int n_classes() const { return n_direction_bins * n_size_bins; }
  int min_patch_side() const { return min_side; }
  int max_patch_side() const { return min_side + n_size_bins - 1; }
  int patch_side_for_bin(int size_bin) const { return min_side + size_bin; }

  void validate() const {
    if (n_direction_bins < 2) throw Error(ErrorKind::config, "dataset.n_direction_bins must be >= 2");
    if (n_size_bins < 1) throw Error(ErrorKind::config, "dataset.n_size_bins must be >= 1");
    if (min_side < 1) throw Error(ErrorKind::config, "dataset.min_side must be >= 1");
    if (t_raw < 16) throw Error(ErrorKind::config, "dataset.t_raw must be >= 16");
    if (height < 8 || width < 8) throw Error(ErrorKind::config, "dataset.height and width must be >= 8");
    if (videos_per_class_train < 1) throw Error(ErrorKind::config, "dataset.videos_per_class_train must be >= 1");
    if (videos_per_class_test < 0) throw Error(ErrorKind::config, "dataset.videos_per_class_test must be >= 0");
    if (!(speed_min > 0.0) || !(speed_max >= speed_min)) {
      throw Error(ErrorKind::config, "dataset speed range must satisfy 0 < speed_min <= speed_max");
    }
    if (noise_sigma < 0.0) throw Error(ErrorKind::config, "dataset.noise_sigma must be >= 0");
    if (max_patch_side() >= std::min(height, width)) {
      throw Error(ErrorKind::config, "largest patch must be smaller than the frame");
    }
  }
};

// Direction bin d covers angles [d, d+1) * 2*pi / n_bins, with atan2 output
// normalized into [0, 2*pi).
inline int direction_bin(double vx, double vy, int n_bins) {
  double angle = std::atan2(vy, vx);
  if (angle < 0.0) angle += 2.0 * std::numbers::pi_v<double>;
  int bin = static_cast<int>(angle / (2.0 * std::numbers::pi_v<double>) * n_bins);
  return std::clamp(bin, 0, n_bins - 1);
}

inline int class_label(const GenParams& p, const DatasetConfig& cfg) {
  const int dir = direction_bin(p.vx, p.vy, cfg.n_direction_bins);
  const int size = p.patch_side - cfg.min_patch_side();
  return dir * cfg.n_size_bins + size;
}

namespace detail {

inline int wrap_index(int value, int extent) {
  const int m = value % extent;
  return m < 0 ? m + extent : m;
}

}  // namespace detail

// Renders the clip: frame t holds the patch anchored at
// floor(x0 + t*vx) mod W, floor(y0 + t*vy) mod H, then per-pixel gaussian
// noise, clipped to [0, 1]. Uses `rng` only for the noise.
inline Video generate_video(const GenParams& p, const DatasetConfig& cfg, Rng& rng) {
  const double speed = std::hypot(p.vx, p.vy);
  if (p.patch_side < cfg.min_patch_side() || p.patch_side > cfg.max_patch_side()) {
    throw Error(ErrorKind::config, "gen_params.patch_side out of range");
  }
  if (p.x0 < 0.0 || p.x0 >= cfg.width || p.y0 < 0.0 || p.y0 >= cfg.height) {
    throw Error(ErrorKind::config, "gen_params start position out of range");
  }
  if (p.intensity < 0.5 || p.intensity > 1.0) {
    throw Error(ErrorKind::config, "gen_params.intensity out of range");
  }
  const double tol = 1e-9;
  if (speed != 0.0 && (speed < cfg.speed_min - tol || speed > cfg.speed_max + tol)) {
    throw Error(ErrorKind::config, "gen_params speed out of range");
  }

  const int T = cfg.t_raw, H = cfg.height, W = cfg.width;
  Video video;
  video.gen_params = p;
  video.label = class_label(p, cfg);
  video.frames = Tensor::zeros({static_cast<std::size_t>(T), static_cast<std::size_t>(H),
                                static_cast<std::size_t>(W)});
  auto& px = video.frames.data;
  for (int t = 0; t < T; ++t) {
    const int ax = detail::wrap_index(static_cast<int>(std::floor(p.x0 + t * p.vx)), W);
    const int ay = detail::wrap_index(static_cast<int>(std::floor(p.y0 + t * p.vy)), H);
    for (int dy = 0; dy < p.patch_side; ++dy) {
      const int row = (ay + dy) % H;
      for (int dx = 0; dx < p.patch_side; ++dx) {
        const int col = (ax + dx) % W;
        px[(static_cast<std::size_t>(t) * H + row) * W + col] = p.intensity;
      }
    }
  }
  if (cfg.noise_sigma > 0.0) {
    for (double& v : px) {
      v = std::clamp(v + cfg.noise_sigma * rng.next_gaussian(), 0.0, 1.0);
    }
  }
  return video;
}

struct Dataset {
  std::vector<Video> train;
  std::vector<Video> test;
};

namespace detail {

// Samples one video for (class, index). Index spaces of train and test are
// disjoint: test video j of a class uses index videos_per_class_train + j.
inline Video sample_video(const DatasetConfig& cfg, int class_id, int index) {
  Rng rng(mix(cfg.seed, static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(index)));
  const int dir_bin = class_id / cfg.n_size_bins;
  const int size_bin = class_id % cfg.n_size_bins;
  const double bin_width = 2.0 * std::numbers::pi_v<double> / cfg.n_direction_bins;
  // Uniform in the bin interior; the 0.1% inset keeps atan2 round-trips from
  // ever flipping the bin at its edges.
  const double u = 0.001 + 0.998 * rng.next_double();
  const double angle = (dir_bin + u) * bin_width;
  const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
  GenParams p;
  p.vx = speed * std::cos(angle);
  p.vy = speed * std::sin(angle);
  p.patch_side = cfg.patch_side_for_bin(size_bin);
  p.x0 = rng.uniform(0.0, static_cast<double>(cfg.width));
  p.y0 = rng.uniform(0.0, static_cast<double>(cfg.height));
  p.intensity = rng.uniform(0.5, 1.0);
  return generate_video(p, cfg, rng);
}

}  // namespace detail

// Builds the full corpus: exactly videos_per_class_{train,test} clips per
// class, pure function of the config. Videos are laid out class-major.
inline Dataset make_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  const int classes = cfg.n_classes();
  ds.train.resize(static_cast<std::size_t>(classes) * cfg.videos_per_class_train);
  ds.test.resize(static_cast<std::size_t>(classes) * cfg.videos_per_class_test);
  const std::size_t per_class = static_cast<std::size_t>(cfg.videos_per_class_train + cfg.videos_per_class_test);
  parallel_for(static_cast<std::size_t>(classes) * per_class, [&](std::size_t slot) {
    const int class_id = static_cast<int>(slot / per_class);
    const int index = static_cast<int>(slot % per_class);
    Video v = detail::sample_video(cfg, class_id, index);
    if (index < cfg.videos_per_class_train) {
      ds.train[static_cast<std::size_t>(class_id) * cfg.videos_per_class_train + index] = std::move(v);
    } else {
      const int j = index - cfg.videos_per_class_train;
      ds.test[static_cast<std::size_t>(class_id) * cfg.videos_per_class_test + j] = std::move(v);
    }
  });
  return ds;
}

inline std::vector<int> labels_of(const std::vector<Video>& videos) {
  std::vector<int> labels;
  labels.reserve(videos.size());
  for (const auto& v : videos) labels.push_back(v.label);
  return labels;
}

// Train labels without generating any pixels (class-major layout).
inline std::vector<int> train_label_layout(const DatasetConfig& cfg) {
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(cfg.n_classes()) * cfg.videos_per_class_train);
  for (int c = 0; c < cfg.n_classes(); ++c) {
    for (int i = 0; i < cfg.videos_per_class_train; ++i) labels.push_back(c);
  }
  return labels;
}

}  // namespace fedvid
