#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedvid/error.hpp"
#include "fedvid/model.hpp"
#include "fedvid/parallel.hpp"
#include "fedvid/pretext.hpp"
#include "fedvid/rng.hpp"
#include "fedvid/synthetic_data.hpp"
#include "fedvid/weight_set.hpp"

// Representation-quality probes over frozen checkpoints: KNN clip retrieval,
// a linear probe, weight-perturbation stability curves, and filter-normalized
// loss landscapes. Read-only over weights and data; every reduction has a
// fixed order so results do not depend on evaluation scheduling.

namespace fedvid {

struct EmbeddingMatrix {
  int rows = 0;
  int dim = 0;
  std::vector<double> values;  // row-major

  const double* row(int i) const { return values.data() + static_cast<std::size_t>(i) * dim; }
};

// Row i = backbone embedding of the first kClipLen frames of video i.
inline EmbeddingMatrix embed_all(const WeightSet& backbone, const std::vector<Video>& videos) {
  const auto refs = detail::backbone_refs(backbone);
  EmbeddingMatrix m;
  m.rows = static_cast<int>(videos.size());
  m.dim = refs.embed_dim;
  m.values.assign(static_cast<std::size_t>(m.rows) * m.dim, 0.0);
  parallel_for(videos.size(), [&](std::size_t i) {
    detail::BackboneCache cache;
    detail::forward_backbone_cached(refs, detail::extract_clip(videos[i].frames, 0, 1, kClipLen),
                                    cache);
    std::copy(cache.embed.begin(), cache.embed.end(),
              m.values.begin() + i * static_cast<std::size_t>(m.dim));
  });
  return m;
}

struct RetrievalReport {
  std::vector<int> k_values;
  std::map<int, double> recall_at_k;
  int n_test = 0;
  int n_train = 0;
  std::string distance_metric = "euclidean";
};

// R@k: the fraction of test clips whose k nearest training clips (ascending
// Euclidean distance, ties broken by ascending train index) contain at least
// one clip of the same class.
inline RetrievalReport knn_retrieval(const EmbeddingMatrix& train_emb,
                                     const std::vector<int>& train_labels,
                                     const EmbeddingMatrix& test_emb,
                                     const std::vector<int>& test_labels,
                                     std::vector<int> ks) {
  if (train_emb.rows == 0) throw Error(ErrorKind::config, "knn_retrieval: empty train set");
  if (test_emb.rows == 0) throw Error(ErrorKind::config, "knn_retrieval: empty test set");
  if (train_emb.dim != test_emb.dim) {
    throw Error(ErrorKind::shape_mismatch, "embedding dims differ between train and test");
  }
  if (static_cast<int>(train_labels.size()) != train_emb.rows ||
      static_cast<int>(test_labels.size()) != test_emb.rows) {
    throw Error(ErrorKind::shape_mismatch, "label count does not match embedding count");
  }
  std::sort(ks.begin(), ks.end());
  for (int k : ks) {
    if (k < 1) throw Error(ErrorKind::config, "retrieval k must be >= 1");
  }
  const int max_k = std::min(ks.back(), train_emb.rows);

  std::vector<std::vector<char>> hits(ks.size(),
                                      std::vector<char>(static_cast<std::size_t>(test_emb.rows), 0));
  parallel_for(static_cast<std::size_t>(test_emb.rows), [&](std::size_t t) {
    const double* q = test_emb.row(static_cast<int>(t));
    std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(train_emb.rows));
    for (int i = 0; i < train_emb.rows; ++i) {
      const double* p = train_emb.row(i);
      double d2 = 0.0;
      for (int j = 0; j < train_emb.dim; ++j) {
        const double diff = q[j] - p[j];
        d2 += diff * diff;
      }
      dist[static_cast<std::size_t>(i)] = {d2, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + max_k, dist.end());
    const int label = test_labels[t];
    int matched_upto = -1;  // first rank (0-based) with a class match
    for (int r = 0; r < max_k; ++r) {
      if (train_labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(r)].second)] == label) {
        matched_upto = r;
        break;
      }
    }
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const int k = std::min(ks[ki], train_emb.rows);
      hits[ki][t] = (matched_upto >= 0 && matched_upto < k) ? 1 : 0;
    }
  });

  RetrievalReport report;
  report.k_values = ks;
  report.n_test = test_emb.rows;
  report.n_train = train_emb.rows;
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    std::int64_t correct = 0;
    for (char h : hits[ki]) correct += h;
    report.recall_at_k[ks[ki]] = static_cast<double>(correct) / test_emb.rows;
  }
  return report;
}

struct ProbeConfig {
  int epochs = 20;
  double lr = 0.1;
  int batch_size = 16;
  std::uint64_t seed = 1;
};

// Trains a single linear layer on frozen embeddings with cross-entropy and
// plain SGD; returns top-1 test accuracy. The backbone is untouched (only its
// embeddings are read).
inline double linear_probe(const WeightSet& backbone, const std::vector<Video>& train,
                           const std::vector<Video>& test, int n_classes, const ProbeConfig& cfg) {
  if (train.empty() || test.empty()) throw Error(ErrorKind::config, "linear_probe: empty split");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) {
    throw Error(ErrorKind::config, "linear_probe: bad probe configuration");
  }
  const EmbeddingMatrix train_emb = embed_all(backbone, train);
  const EmbeddingMatrix test_emb = embed_all(backbone, test);
  const int dim = train_emb.dim;

  std::vector<double> weight(static_cast<std::size_t>(n_classes) * dim, 0.0);
  std::vector<double> bias(static_cast<std::size_t>(n_classes), 0.0);
  {
    Rng rng(mix(cfg.seed, stream::probe));
    const double bound = std::sqrt(6.0 / (dim + n_classes));
    for (double& v : weight) v = rng.uniform(-bound, bound);
  }

  std::vector<double> logits(static_cast<std::size_t>(n_classes));
  std::vector<double> d_logits;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix(cfg.seed, stream::probe, static_cast<std::uint64_t>(epoch) + 1));
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<double> g_w(weight.size(), 0.0);
      std::vector<double> g_b(bias.size(), 0.0);
      for (std::size_t s = start; s < end; ++s) {
        const int i = order[s];
        const double* x = train_emb.row(i);
        for (int c = 0; c < n_classes; ++c) {
          const double* row = weight.data() + static_cast<std::size_t>(c) * dim;
          double acc = bias[static_cast<std::size_t>(c)];
          for (int j = 0; j < dim; ++j) acc += row[j] * x[j];
          logits[static_cast<std::size_t>(c)] = acc;
        }
        detail::softmax_cross_entropy(logits, train[static_cast<std::size_t>(i)].label, d_logits);
        for (int c = 0; c < n_classes; ++c) {
          const double dz = d_logits[static_cast<std::size_t>(c)];
          if (dz == 0.0) continue;
          g_b[static_cast<std::size_t>(c)] += dz;
          double* grow = g_w.data() + static_cast<std::size_t>(c) * dim;
          for (int j = 0; j < dim; ++j) grow[j] += dz * x[j];
        }
      }
      const double step = cfg.lr / static_cast<double>(end - start);
      for (std::size_t i = 0; i < weight.size(); ++i) weight[i] -= step * g_w[i];
      for (std::size_t i = 0; i < bias.size(); ++i) bias[i] -= step * g_b[i];
    }
  }

  std::int64_t correct = 0;
  for (int i = 0; i < test_emb.rows; ++i) {
    const double* x = test_emb.row(i);
    int best = 0;
    double best_logit = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < n_classes; ++c) {
      const double* row = weight.data() + static_cast<std::size_t>(c) * dim;
      double acc = bias[static_cast<std::size_t>(c)];
      for (int j = 0; j < dim; ++j) acc += row[j] * x[j];
      if (acc > best_logit) {
        best_logit = acc;
        best = c;
      }
    }
    if (best == test[static_cast<std::size_t>(i)].label) ++correct;
  }
  return static_cast<double>(correct) / test_emb.rows;
}

struct PerturbationCurve {
  std::vector<double> levels;
  std::vector<double> recall_at_1;
  std::uint64_t seed = 0;
};

// Adds level * N(0,1) noise to every backbone weight (one noise draw per
// level, sub-seeded by the level index) and re-evaluates R@1. Level 0 is a
// bitwise no-op on the weights.
inline PerturbationCurve perturb_and_eval(const WeightSet& backbone,
                                          const std::vector<double>& levels, std::uint64_t seed,
                                          const std::vector<Video>& train,
                                          const std::vector<int>& train_labels,
                                          const std::vector<Video>& test,
                                          const std::vector<int>& test_labels) {
  if (std::find(levels.begin(), levels.end(), 0.0) == levels.end()) {
    throw Error(ErrorKind::config, "perturbation levels must include 0.0 (the reference point)");
  }
  PerturbationCurve curve;
  curve.seed = seed;
  curve.levels = levels;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const double level = levels[li];
    WeightSet perturbed;
    if (level == 0.0) {
      perturbed = backbone;
    } else {
      Rng rng(mix(seed, static_cast<std::uint64_t>(li)));
      WeightSet noisy;
      for (const auto& [name, entry] : backbone.entries()) {
        Tensor t = entry.tensor;
        for (double& v : t.data) v += level * rng.next_gaussian();
        noisy.insert(name, entry.role, std::move(t));
      }
      perturbed = std::move(noisy);
    }
    const EmbeddingMatrix train_emb = embed_all(perturbed, train);
    const EmbeddingMatrix test_emb = embed_all(perturbed, test);
    const RetrievalReport report = knn_retrieval(train_emb, train_labels, test_emb, test_labels, {1});
    curve.recall_at_1.push_back(report.recall_at_k.at(1));
  }
  return curve;
}

// Rescales each filter of `direction` to the norm of the matching filter of
// `reference`. A filter is one output row of a 2-D weight matrix; every
// element of a 1-D tensor (a bias) is its own filter. Zero-norm reference
// rows produce zero direction rows.
inline WeightSet filter_normalize(const WeightSet& direction, const WeightSet& reference) {
  check_shape_compatible(direction, reference);
  WeightSet out;
  auto ri = reference.entries().begin();
  for (const auto& [name, entry] : direction.entries()) {
    const Tensor& ref = ri->second.tensor;
    Tensor t = entry.tensor;
    std::size_t row_len = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) row_len *= t.shape[d];
    const std::size_t rows = t.shape.empty() ? t.size() : t.shape[0];
    for (std::size_t r = 0; r < rows; ++r) {
      double ref_sq = 0.0, dir_sq = 0.0;
      for (std::size_t j = 0; j < row_len; ++j) {
        const double rv = ref.data[r * row_len + j];
        const double dv = t.data[r * row_len + j];
        ref_sq += rv * rv;
        dir_sq += dv * dv;
      }
      double factor = 0.0;
      if (ref_sq > 0.0 && dir_sq > 0.0) factor = std::sqrt(ref_sq) / std::sqrt(dir_sq);
      for (std::size_t j = 0; j < row_len; ++j) t.data[r * row_len + j] *= factor;
    }
    out.insert(name, entry.role, std::move(t));
    ++ri;
  }
  return out;
}

struct LandscapeConfig {
  int grid = 41;               // odd, so (0,0) is a grid point
  double range_min = -1.0;
  double range_max = 1.0;
  bool one_d = false;
  std::uint64_t seed = 0;
  bool filter_normalized = true;
};

struct LandscapeGrid {
  std::vector<double> a_coeffs;
  std::vector<double> b_coeffs;      // {0} in 1-D mode
  std::vector<double> loss;          // row-major over (a, b)
  std::uint64_t seed = 0;
  bool filter_normalized = true;

  double at(std::size_t ai, std::size_t bi) const { return loss[ai * b_coeffs.size() + bi]; }
};

// Gaussian direction over the backbone entries of `reference`.
inline WeightSet gaussian_direction(const WeightSet& reference, std::uint64_t seed) {
  Rng rng(seed);
  WeightSet out;
  for (const auto& [name, entry] : reference.entries()) {
    if (entry.role != Role::backbone) continue;
    Tensor t = Tensor::zeros(entry.tensor.shape);
    for (double& v : t.data) v = rng.next_gaussian();
    out.insert(name, entry.role, std::move(t));
  }
  return out;
}

// Core landscape evaluation around `center` (backbone + task head) along two
// fixed backbone directions; head entries stay at their center values. The
// batches are fixed up front so every cell sees identical pseudo-labels.
inline LandscapeGrid landscape_from_directions(const WeightSet& center, const WeightSet& d1,
                                               const WeightSet& d2,
                                               const std::vector<PretextBatch>& batches,
                                               const LandscapeConfig& cfg) {
  if (cfg.grid < 1 || cfg.grid % 2 == 0) {
    throw Error(ErrorKind::config, "landscape grid size must be odd (so the center is a grid point)");
  }
  if (batches.empty()) throw Error(ErrorKind::config, "landscape: no evaluation batches");
  LandscapeGrid grid;
  grid.seed = cfg.seed;
  grid.filter_normalized = cfg.filter_normalized;
  const int n = cfg.grid;
  const double span = cfg.range_max - cfg.range_min;
  for (int i = 0; i < n; ++i) {
    grid.a_coeffs.push_back(n == 1 ? 0.0 : cfg.range_min + span * i / (n - 1));
  }
  if (cfg.one_d) {
    grid.b_coeffs = {0.0};
  } else {
    grid.b_coeffs = grid.a_coeffs;
  }

  const WeightSet center_backbone = filter_role(center, Role::backbone);
  std::int64_t total_samples = 0;
  for (const auto& b : batches) total_samples += static_cast<std::int64_t>(b.size());

  grid.loss.assign(grid.a_coeffs.size() * grid.b_coeffs.size(), 0.0);
  parallel_for(grid.loss.size(), [&](std::size_t cell) {
    const std::size_t ai = cell / grid.b_coeffs.size();
    const std::size_t bi = cell % grid.b_coeffs.size();
    const double a = grid.a_coeffs[ai];
    const double b = grid.b_coeffs[bi];
    // Skip zero-coefficient terms so the center cell evaluates the exact
    // center weights.
    WeightSet backbone = center_backbone;
    if (a != 0.0) backbone = axpy(a, d1, backbone);
    if (b != 0.0) backbone = axpy(b, d2, backbone);
    const WeightSet full = merge(backbone, filter_role(center, Role::head));
    double weighted = 0.0;
    for (const auto& batch : batches) {
      weighted += task_loss(full, batch, 0.0) * static_cast<double>(batch.size());
    }
    grid.loss[cell] = weighted / static_cast<double>(total_samples);
  });
  return grid;
}

// Fixed evaluation batches for probes; one seeded stream, batch size 32.
inline std::vector<PretextBatch> build_eval_batches(PretextTask task,
                                                    const std::vector<Video>& videos,
                                                    const DatasetConfig& dcfg, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PretextBatch> batches;
  constexpr std::size_t kEvalBatch = 32;
  for (std::size_t start = 0; start < videos.size(); start += kEvalBatch) {
    const std::size_t end = std::min(videos.size(), start + kEvalBatch);
    std::vector<ClipSource> sources;
    std::vector<int> ids;
    for (std::size_t i = start; i < end; ++i) {
      sources.push_back(clip_source(videos[i]));
      ids.push_back(static_cast<int>(i));
    }
    batches.push_back(make_batch(task, sources, ids, dcfg, rng));
  }
  return batches;
}

// Landscape around a checkpoint: two seeded gaussian directions over the
// backbone, filter-normalized against it. If the checkpoint has no head for
// the task (a backbone-only run), a deterministic fresh head derived from the
// landscape seed is used at every cell.
inline LandscapeGrid loss_landscape(const WeightSet& checkpoint, const ModelSpec& spec,
                                    PretextTask task, const std::vector<Video>& eval_set,
                                    const DatasetConfig& dcfg, const LandscapeConfig& cfg) {
  WeightSet center = checkpoint;
  if (!center.has(spec.head_weight_name(task))) {
    center = merge(filter_role(center, Role::backbone),
                   init_head(spec, task, mix(cfg.seed, stream::landscape_head)));
  }
  WeightSet d1 = gaussian_direction(center, mix(cfg.seed, 1));
  WeightSet d2 = gaussian_direction(center, mix(cfg.seed, 2));
  if (cfg.filter_normalized) {
    const WeightSet reference = filter_role(center, Role::backbone);
    d1 = filter_normalize(d1, reference);
    d2 = filter_normalize(d2, reference);
  }
  const auto batches = build_eval_batches(task, eval_set, dcfg, mix(cfg.seed, 3));
  return landscape_from_directions(center, d1, d2, batches, cfg);
}

inline nlohmann::json retrieval_report_to_json(const RetrievalReport& r) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : r.recall_at_k) recall[std::to_string(k)] = v;
  return {{"k_values", r.k_values},
          {"recall_at_k", recall},
          {"n_test", r.n_test},
          {"n_train", r.n_train},
          {"distance_metric", r.distance_metric}};
}

inline nlohmann::json perturbation_curve_to_json(const PerturbationCurve& c) {
  return {{"levels", c.levels}, {"recall_at_1", c.recall_at_1}, {"seed", c.seed}};
}

}  // namespace fedvid
