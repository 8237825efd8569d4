#pragma once

#include <array>
#include <string>
#include <vector>

#include "fedvid/error.hpp"
#include "fedvid/rng.hpp"
#include "fedvid/synthetic_data.hpp"

// Pretext batch construction. Pseudo-labels come from generation parameters
// or from the construction itself (strides, permutations) - never from the
// class label, which is not even passed in.

namespace fedvid {

enum class PretextTask { ctp, speed, vcop };

inline const char* task_name(PretextTask t) {
  switch (t) {
    case PretextTask::ctp: return "ctp";
    case PretextTask::speed: return "speed";
    case PretextTask::vcop: return "vcop";
  }
  return "?";
}

inline PretextTask task_from_string(const std::string& s) {
  if (s == "ctp") return PretextTask::ctp;
  if (s == "speed") return PretextTask::speed;
  if (s == "vcop") return PretextTask::vcop;
  throw Error(ErrorKind::config, "unknown task: " + s + " (expected ctp, speed or vcop)");
}

inline constexpr int kClipLen = 8;        // frames per ctp/speed input clip
inline constexpr int kSpeedClasses = 4;   // strides 1..4
inline constexpr int kVcopSubClips = 3;
inline constexpr int kVcopSubLen = 4;
inline constexpr int kVcopClasses = 6;
inline constexpr int kCtpTargetDim = 5;

// What batch construction is allowed to see: frames and generation
// parameters. The class label is deliberately absent, so no pseudo-label can
// depend on it.
struct ClipSource {
  const Tensor* frames = nullptr;
  GenParams gen_params;
};

inline ClipSource clip_source(const Video& v) { return ClipSource{&v.frames, v.gen_params}; }

inline std::vector<ClipSource> clip_sources(const std::vector<Video>& videos) {
  std::vector<ClipSource> out;
  out.reserve(videos.size());
  for (const auto& v : videos) out.push_back(clip_source(v));
  return out;
}

inline std::vector<ClipSource> clip_sources(const std::vector<const Video*>& videos) {
  std::vector<ClipSource> out;
  out.reserve(videos.size());
  for (const Video* v : videos) out.push_back(clip_source(*v));
  return out;
}

// The six permutations of three sub-clips in lexicographic order; the
// pseudo-label of a shuffled sample is the index of its permutation here.
inline const std::array<std::array<int, 3>, 6>& vcop_permutations() {
  static const std::array<std::array<int, 3>, 6> perms = {{
      {{0, 1, 2}}, {{0, 2, 1}}, {{1, 0, 2}}, {{1, 2, 0}}, {{2, 0, 1}}, {{2, 1, 0}},
  }};
  return perms;
}

struct PretextBatch {
  PretextTask task = PretextTask::ctp;
  std::vector<Tensor> clips;                            // ctp, speed
  std::vector<std::array<Tensor, 3>> clip_triples;      // vcop, in shuffled order
  std::vector<std::array<double, kCtpTargetDim>> regression_targets;  // ctp
  std::vector<int> class_targets;                       // speed / vcop
  std::vector<int> source_indices;

  std::size_t size() const {
    return task == PretextTask::vcop ? clip_triples.size() : clips.size();
  }
};

namespace detail {

inline Tensor extract_clip(const Tensor& frames, int start, int stride, int len) {
  const auto& shape = frames.shape;
  const int T = static_cast<int>(shape[0]);
  const std::size_t frame_px = shape[1] * shape[2];
  const int last = start + stride * (len - 1);
  if (last >= T) {
    throw Error(ErrorKind::config,
                "clip too short: need frame " + std::to_string(last) + " but t_raw = " + std::to_string(T));
  }
  Tensor out = Tensor::zeros({static_cast<std::size_t>(len), shape[1], shape[2]});
  for (int i = 0; i < len; ++i) {
    const std::size_t src = static_cast<std::size_t>(start + i * stride) * frame_px;
    std::copy(frames.data.begin() + src, frames.data.begin() + src + frame_px,
              out.data.begin() + static_cast<std::size_t>(i) * frame_px);
  }
  return out;
}

}  // namespace detail

// Input: first kClipLen raw frames. Target: the trajectory code
// (x0/W, y0/H, (vx+vmax)/2vmax, (vy+vmax)/2vmax, (s-smin)/(smax-smin)),
// every component in [0, 1]. Deterministic, so `rng` is unused.
inline PretextBatch make_ctp_batch(const std::vector<ClipSource>& sources,
                                   const std::vector<int>& ids, const DatasetConfig& cfg,
                                   Rng& rng) {
  (void)rng;
  PretextBatch batch;
  batch.task = PretextTask::ctp;
  const double vmax = cfg.speed_max;
  const double size_span = static_cast<double>(cfg.max_patch_side() - cfg.min_patch_side());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    batch.clips.push_back(detail::extract_clip(*sources[i].frames, 0, 1, kClipLen));
    const GenParams& p = sources[i].gen_params;
    std::array<double, kCtpTargetDim> target = {
        p.x0 / cfg.width,
        p.y0 / cfg.height,
        (p.vx + vmax) / (2.0 * vmax),
        (p.vy + vmax) / (2.0 * vmax),
        size_span > 0.0 ? (p.patch_side - cfg.min_patch_side()) / size_span : 0.0,
    };
    batch.regression_targets.push_back(target);
    batch.source_indices.push_back(i < ids.size() ? ids[i] : static_cast<int>(i));
  }
  return batch;
}

// Per sample: stride k drawn uniformly from {1..4}; input frames
// [0, k, 2k, ..., 7k]; pseudo-label k-1.
inline PretextBatch make_speed_batch(const std::vector<ClipSource>& sources,
                                     const std::vector<int>& ids, const DatasetConfig& cfg,
                                     Rng& rng) {
  if (cfg.t_raw < kClipLen * kSpeedClasses) {
    throw Error(ErrorKind::config, "speed task needs t_raw >= " + std::to_string(kClipLen * kSpeedClasses));
  }
  PretextBatch batch;
  batch.task = PretextTask::speed;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const int k = 1 + static_cast<int>(rng.next_below(kSpeedClasses));
    batch.clips.push_back(detail::extract_clip(*sources[i].frames, 0, k, kClipLen));
    batch.class_targets.push_back(k - 1);
    batch.source_indices.push_back(i < ids.size() ? ids[i] : static_cast<int>(i));
  }
  return batch;
}

// Per sample: frames [0, 12) split into three 4-frame sub-clips, presented in
// a uniformly drawn permuted order; pseudo-label is the permutation index.
// shuffled[i] = original[perm[i]].
inline PretextBatch make_vcop_batch(const std::vector<ClipSource>& sources,
                                    const std::vector<int>& ids, const DatasetConfig& cfg,
                                    Rng& rng) {
  if (cfg.t_raw < kVcopSubClips * kVcopSubLen) {
    throw Error(ErrorKind::config, "vcop task needs t_raw >= " + std::to_string(kVcopSubClips * kVcopSubLen));
  }
  PretextBatch batch;
  batch.task = PretextTask::vcop;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const int perm_index = static_cast<int>(rng.next_below(kVcopClasses));
    const auto& perm = vcop_permutations()[perm_index];
    std::array<Tensor, 3> triple;
    for (int j = 0; j < kVcopSubClips; ++j) {
      triple[j] = detail::extract_clip(*sources[i].frames, perm[j] * kVcopSubLen, 1, kVcopSubLen);
    }
    batch.clip_triples.push_back(std::move(triple));
    batch.class_targets.push_back(perm_index);
    batch.source_indices.push_back(i < ids.size() ? ids[i] : static_cast<int>(i));
  }
  return batch;
}

inline PretextBatch make_batch(PretextTask task, const std::vector<ClipSource>& sources,
                               const std::vector<int>& ids, const DatasetConfig& cfg, Rng& rng) {
  switch (task) {
    case PretextTask::ctp: return make_ctp_batch(sources, ids, cfg, rng);
    case PretextTask::speed: return make_speed_batch(sources, ids, cfg, rng);
    case PretextTask::vcop: return make_vcop_batch(sources, ids, cfg, rng);
  }
  throw Error(ErrorKind::config, "unknown task");
}

}  // namespace fedvid
