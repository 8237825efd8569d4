#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedvid/error.hpp"
#include "fedvid/pretext.hpp"
#include "fedvid/rng.hpp"
#include "fedvid/weight_set.hpp"

// The client-side learner: a small frame-encoder MLP shared across tasks
// (per-frame ReLU layer, temporal mean pool, ReLU embedding layer) plus one
// linear head per pretext task. Backpropagation is exact, the optimizer is
// plain SGD, and weight decay enters the loss explicitly so gradient checks
// cover it.

namespace fedvid {

namespace names {
inline const std::string frame_weight = "backbone.frame.weight";
inline const std::string frame_bias = "backbone.frame.bias";
inline const std::string embed_weight = "backbone.embed.weight";
inline const std::string embed_bias = "backbone.embed.bias";
}  // namespace names

struct ModelSpec {
  int frame_dim = 256;  // H * W
  int hidden1 = 64;
  int embed_dim = 32;

  void validate() const {
    if (frame_dim < 1 || hidden1 < 1 || embed_dim < 1) {
      throw Error(ErrorKind::config, "model dimensions must be >= 1");
    }
  }

  int head_output_dim(PretextTask task) const {
    switch (task) {
      case PretextTask::ctp: return kCtpTargetDim;
      case PretextTask::speed: return kSpeedClasses;
      case PretextTask::vcop: return kVcopClasses;
    }
    return 0;
  }

  // vcop concatenates the three sub-clip embeddings before its head.
  int head_input_dim(PretextTask task) const {
    return task == PretextTask::vcop ? kVcopSubClips * embed_dim : embed_dim;
  }

  std::string head_weight_name(PretextTask task) const {
    return std::string("head.") + task_name(task) + ".weight";
  }
  std::string head_bias_name(PretextTask task) const {
    return std::string("head.") + task_name(task) + ".bias";
  }
};

struct TrainingConfig {
  double client_lr = 0.01;
  int batch_size = 4;
  int local_epochs = 1;
  double weight_decay = 1e-4;

  void validate() const {
    if (!(client_lr >= 0.0)) throw Error(ErrorKind::config, "training.client_lr must be >= 0");
    if (batch_size < 1) throw Error(ErrorKind::config, "training.batch_size must be >= 1");
    if (local_epochs < 1) throw Error(ErrorKind::config, "training.local_epochs must be >= 1");
    if (weight_decay < 0.0) throw Error(ErrorKind::config, "training.weight_decay must be >= 0");
  }
};

inline double default_client_lr(PretextTask task) {
  return task == PretextTask::vcop ? 0.001 : 0.01;
}

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Xavier-uniform matrix [out, in]; each tensor draws from its own stream so
// initialization is independent of which heads exist.
inline Tensor init_linear_weight(const std::string& name, int out, int in, std::uint64_t seed) {
  Rng rng(mix(seed, fnv1a64(name)));
  const double bound = std::sqrt(6.0 / (in + out));
  Tensor t = Tensor::zeros({static_cast<std::size_t>(out), static_cast<std::size_t>(in)});
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace detail

inline WeightSet init_backbone(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  WeightSet w;
  w.insert(names::frame_weight, Role::backbone,
           detail::init_linear_weight(names::frame_weight, spec.hidden1, spec.frame_dim, seed));
  w.insert(names::frame_bias, Role::backbone,
           Tensor::zeros({static_cast<std::size_t>(spec.hidden1)}));
  w.insert(names::embed_weight, Role::backbone,
           detail::init_linear_weight(names::embed_weight, spec.embed_dim, spec.hidden1, seed));
  w.insert(names::embed_bias, Role::backbone,
           Tensor::zeros({static_cast<std::size_t>(spec.embed_dim)}));
  return w;
}

inline WeightSet init_head(const ModelSpec& spec, PretextTask task, std::uint64_t seed) {
  WeightSet w;
  const int out = spec.head_output_dim(task);
  const int in = spec.head_input_dim(task);
  w.insert(spec.head_weight_name(task), Role::head,
           detail::init_linear_weight(spec.head_weight_name(task), out, in, seed));
  w.insert(spec.head_bias_name(task), Role::head, Tensor::zeros({static_cast<std::size_t>(out)}));
  return w;
}

// Backbone plus the head of `task`, both derived from `seed`.
inline WeightSet init_weights(const ModelSpec& spec, PretextTask task, std::uint64_t seed) {
  return merge(init_backbone(spec, seed), init_head(spec, task, seed));
}

namespace detail {

struct BackboneRefs {
  const Tensor* w1;
  const Tensor* b1;
  const Tensor* w2;
  const Tensor* b2;
  int frame_dim, hidden1, embed_dim;
};

inline BackboneRefs backbone_refs(const WeightSet& w) {
  for (const auto* name : {&names::frame_weight, &names::frame_bias, &names::embed_weight,
                           &names::embed_bias}) {
    if (!w.has(*name)) {
      throw Error(ErrorKind::shape_mismatch, "missing backbone parameter: " + *name);
    }
  }
  BackboneRefs refs{&w.tensor(names::frame_weight), &w.tensor(names::frame_bias),
                    &w.tensor(names::embed_weight), &w.tensor(names::embed_bias), 0, 0, 0};
  refs.hidden1 = static_cast<int>(refs.w1->shape[0]);
  refs.frame_dim = static_cast<int>(refs.w1->shape[1]);
  refs.embed_dim = static_cast<int>(refs.w2->shape[0]);
  if (static_cast<int>(refs.w2->shape[1]) != refs.hidden1 ||
      static_cast<int>(refs.b1->size()) != refs.hidden1 ||
      static_cast<int>(refs.b2->size()) != refs.embed_dim) {
    throw Error(ErrorKind::shape_mismatch, "inconsistent backbone parameter shapes");
  }
  return refs;
}

// Per-clip forward cache for backprop.
struct BackboneCache {
  int frames = 0;
  std::vector<double> z1;      // [T, hidden1] pre-activations
  std::vector<double> pooled;  // [hidden1] temporal mean of relu(z1)
  std::vector<double> z2;      // [embed_dim]
  std::vector<double> embed;   // [embed_dim] relu(z2)
};

inline void forward_backbone_cached(const BackboneRefs& r, const Tensor& clip,
                                    BackboneCache& cache) {
  if (clip.shape.size() != 3 ||
      static_cast<int>(clip.shape[1] * clip.shape[2]) != r.frame_dim) {
    throw Error(ErrorKind::shape_mismatch,
                "clip shape " + shape_to_string(clip.shape) + " does not match frame_dim " +
                    std::to_string(r.frame_dim));
  }
  const int T = static_cast<int>(clip.shape[0]);
  cache.frames = T;
  cache.z1.assign(static_cast<std::size_t>(T) * r.hidden1, 0.0);
  cache.pooled.assign(r.hidden1, 0.0);
  const double* px = clip.data.data();
  for (int t = 0; t < T; ++t) {
    const double* x = px + static_cast<std::size_t>(t) * r.frame_dim;
    double* z = cache.z1.data() + static_cast<std::size_t>(t) * r.hidden1;
    for (int j = 0; j < r.hidden1; ++j) {
      const double* row = r.w1->data.data() + static_cast<std::size_t>(j) * r.frame_dim;
      double acc = r.b1->data[j];
      for (int k = 0; k < r.frame_dim; ++k) acc += row[k] * x[k];
      z[j] = acc;
      if (acc > 0.0) cache.pooled[j] += acc;
    }
  }
  const double inv_t = 1.0 / T;
  for (double& v : cache.pooled) v *= inv_t;
  cache.z2.assign(r.embed_dim, 0.0);
  cache.embed.assign(r.embed_dim, 0.0);
  for (int j = 0; j < r.embed_dim; ++j) {
    const double* row = r.w2->data.data() + static_cast<std::size_t>(j) * r.hidden1;
    double acc = r.b2->data[j];
    for (int k = 0; k < r.hidden1; ++k) acc += row[k] * cache.pooled[k];
    cache.z2[j] = acc;
    cache.embed[j] = acc > 0.0 ? acc : 0.0;
  }
}

// Accumulates backbone gradients for one clip given d(loss)/d(embedding).
inline void backward_backbone(const BackboneRefs& r, const Tensor& clip,
                              const BackboneCache& cache, const double* d_embed,
                              double* g_w1, double* g_b1, double* g_w2, double* g_b2) {
  std::vector<double> d_pooled(r.hidden1, 0.0);
  for (int j = 0; j < r.embed_dim; ++j) {
    if (cache.z2[j] <= 0.0) continue;
    const double dz = d_embed[j];
    if (dz == 0.0) continue;
    g_b2[j] += dz;
    double* grow = g_w2 + static_cast<std::size_t>(j) * r.hidden1;
    const double* wrow = r.w2->data.data() + static_cast<std::size_t>(j) * r.hidden1;
    for (int k = 0; k < r.hidden1; ++k) {
      grow[k] += dz * cache.pooled[k];
      d_pooled[k] += dz * wrow[k];
    }
  }
  const double inv_t = 1.0 / cache.frames;
  const double* px = clip.data.data();
  for (int t = 0; t < cache.frames; ++t) {
    const double* z = cache.z1.data() + static_cast<std::size_t>(t) * r.hidden1;
    const double* x = px + static_cast<std::size_t>(t) * r.frame_dim;
    for (int j = 0; j < r.hidden1; ++j) {
      if (z[j] <= 0.0) continue;
      const double dz = d_pooled[j] * inv_t;
      if (dz == 0.0) continue;
      g_b1[j] += dz;
      double* grow = g_w1 + static_cast<std::size_t>(j) * r.frame_dim;
      for (int k = 0; k < r.frame_dim; ++k) grow[k] += dz * x[k];
    }
  }
}

}  // namespace detail

// Pure embedding of one clip: per-frame ReLU(W1 x + b1), temporal mean,
// ReLU(W2 . + b2). Invariant to frame order by construction.
inline Tensor forward_backbone(const WeightSet& w, const Tensor& clip) {
  const auto refs = detail::backbone_refs(w);
  detail::BackboneCache cache;
  detail::forward_backbone_cached(refs, clip, cache);
  return Tensor({static_cast<std::size_t>(refs.embed_dim)}, std::move(cache.embed));
}

struct LossGrads {
  double loss = 0.0;
  WeightSet grads;
};

namespace detail {

inline double softmax_cross_entropy(const std::vector<double>& logits, int target,
                                    std::vector<double>& d_logits) {
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  double sum = 0.0;
  d_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d_logits[i] = std::exp(logits[i] - max_logit);
    sum += d_logits[i];
  }
  const double loss = std::log(sum) - (logits[static_cast<std::size_t>(target)] - max_logit);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d_logits[i] = d_logits[i] / sum - (static_cast<int>(i) == target ? 1.0 : 0.0);
  }
  return loss;
}

}  // namespace detail

// Mean task loss over the batch (MSE for ctp, cross-entropy for speed/vcop)
// plus (weight_decay / 2) * ||w||^2, with exact gradients for every entry of w.
inline LossGrads task_loss_and_grads(const WeightSet& w, const PretextBatch& batch,
                                     double weight_decay) {
  const ModelSpec probe_spec;  // names only
  const std::string head_w_name = probe_spec.head_weight_name(batch.task);
  const std::string head_b_name = probe_spec.head_bias_name(batch.task);
  if (!w.has(head_w_name) || !w.has(head_b_name)) {
    throw Error(ErrorKind::shape_mismatch,
                std::string("task/head mismatch: weight set lacks a ") + task_name(batch.task) + " head");
  }
  const auto refs = detail::backbone_refs(w);
  const Tensor& head_w = w.tensor(head_w_name);
  const Tensor& head_b = w.tensor(head_b_name);
  const int out_dim = static_cast<int>(head_w.shape[0]);
  const int in_dim = static_cast<int>(head_w.shape[1]);
  const int clips_per_sample = batch.task == PretextTask::vcop ? kVcopSubClips : 1;
  if (in_dim != clips_per_sample * refs.embed_dim) {
    throw Error(ErrorKind::shape_mismatch, "task/head mismatch: head input dim " +
                                               std::to_string(in_dim) + " vs embedding dim " +
                                               std::to_string(clips_per_sample * refs.embed_dim));
  }
  const std::size_t n = batch.size();
  if (n == 0) throw Error(ErrorKind::config, "empty batch");

  WeightSet grads = zeros_like(w);
  auto grad_data = [&grads](const std::string& name) {
    return grads.tensor_mut(name).data.data();
  };
  double* g_w1 = grad_data(names::frame_weight);
  double* g_b1 = grad_data(names::frame_bias);
  double* g_w2 = grad_data(names::embed_weight);
  double* g_b2 = grad_data(names::embed_bias);
  double* g_hw = grad_data(head_w_name);
  double* g_hb = grad_data(head_b_name);

  double loss_sum = 0.0;
  std::vector<detail::BackboneCache> caches(clips_per_sample);
  std::vector<double> head_in(static_cast<std::size_t>(in_dim));
  std::vector<double> logits(static_cast<std::size_t>(out_dim));
  std::vector<double> d_logits;
  std::vector<double> d_head_in(static_cast<std::size_t>(in_dim));

  for (std::size_t s = 0; s < n; ++s) {
    const Tensor* sample_clips[kVcopSubClips] = {nullptr, nullptr, nullptr};
    if (batch.task == PretextTask::vcop) {
      for (int c = 0; c < clips_per_sample; ++c) sample_clips[c] = &batch.clip_triples[s][c];
    } else {
      sample_clips[0] = &batch.clips[s];
    }
    for (int c = 0; c < clips_per_sample; ++c) {
      detail::forward_backbone_cached(refs, *sample_clips[c], caches[c]);
      std::copy(caches[c].embed.begin(), caches[c].embed.end(),
                head_in.begin() + static_cast<std::size_t>(c) * refs.embed_dim);
    }
    for (int j = 0; j < out_dim; ++j) {
      const double* row = head_w.data.data() + static_cast<std::size_t>(j) * in_dim;
      double acc = head_b.data[j];
      for (int k = 0; k < in_dim; ++k) acc += row[k] * head_in[k];
      logits[static_cast<std::size_t>(j)] = acc;
    }

    if (batch.task == PretextTask::ctp) {
      const auto& target = batch.regression_targets[s];
      d_logits.resize(logits.size());
      double sample_loss = 0.0;
      for (int j = 0; j < out_dim; ++j) {
        const double diff = logits[static_cast<std::size_t>(j)] - target[static_cast<std::size_t>(j)];
        sample_loss += diff * diff;
        d_logits[static_cast<std::size_t>(j)] = 2.0 * diff / out_dim;
      }
      loss_sum += sample_loss / out_dim;
    } else {
      loss_sum += detail::softmax_cross_entropy(logits, batch.class_targets[s], d_logits);
    }

    std::fill(d_head_in.begin(), d_head_in.end(), 0.0);
    for (int j = 0; j < out_dim; ++j) {
      const double dz = d_logits[static_cast<std::size_t>(j)];
      if (dz == 0.0) continue;
      g_hb[j] += dz;
      double* grow = g_hw + static_cast<std::size_t>(j) * in_dim;
      const double* wrow = head_w.data.data() + static_cast<std::size_t>(j) * in_dim;
      for (int k = 0; k < in_dim; ++k) {
        grow[k] += dz * head_in[k];
        d_head_in[k] += dz * wrow[k];
      }
    }
    for (int c = 0; c < clips_per_sample; ++c) {
      detail::backward_backbone(refs, *sample_clips[c], caches[c],
                                d_head_in.data() + static_cast<std::size_t>(c) * refs.embed_dim,
                                g_w1, g_b1, g_w2, g_b2);
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  for (const auto& [name, entry] : w.entries()) {
    double* g = grads.tensor_mut(name).data.data();
    for (std::size_t i = 0; i < entry.tensor.size(); ++i) {
      g[i] *= inv_n;
      if (weight_decay > 0.0) g[i] += weight_decay * entry.tensor.data[i];
    }
  }
  double loss = loss_sum * inv_n;
  if (weight_decay > 0.0) loss += 0.5 * weight_decay * squared_l2_norm(w);
  return LossGrads{loss, std::move(grads)};
}

// Forward-only counterpart of task_loss_and_grads; same value, no gradients.
inline double task_loss(const WeightSet& w, const PretextBatch& batch, double weight_decay) {
  const ModelSpec spec_names;
  const std::string head_w_name = spec_names.head_weight_name(batch.task);
  const std::string head_b_name = spec_names.head_bias_name(batch.task);
  if (!w.has(head_w_name) || !w.has(head_b_name)) {
    throw Error(ErrorKind::shape_mismatch,
                std::string("task/head mismatch: weight set lacks a ") + task_name(batch.task) + " head");
  }
  const auto refs = detail::backbone_refs(w);
  const Tensor& head_w = w.tensor(head_w_name);
  const Tensor& head_b = w.tensor(head_b_name);
  const int out_dim = static_cast<int>(head_w.shape[0]);
  const int in_dim = static_cast<int>(head_w.shape[1]);
  const int clips_per_sample = batch.task == PretextTask::vcop ? kVcopSubClips : 1;
  const std::size_t n = batch.size();
  if (n == 0) throw Error(ErrorKind::config, "empty batch");

  double loss_sum = 0.0;
  detail::BackboneCache cache;
  std::vector<double> head_in(static_cast<std::size_t>(in_dim));
  std::vector<double> logits(static_cast<std::size_t>(out_dim));
  std::vector<double> scratch;
  for (std::size_t s = 0; s < n; ++s) {
    for (int c = 0; c < clips_per_sample; ++c) {
      const Tensor& clip =
          batch.task == PretextTask::vcop ? batch.clip_triples[s][c] : batch.clips[s];
      detail::forward_backbone_cached(refs, clip, cache);
      std::copy(cache.embed.begin(), cache.embed.end(),
                head_in.begin() + static_cast<std::size_t>(c) * refs.embed_dim);
    }
    for (int j = 0; j < out_dim; ++j) {
      const double* row = head_w.data.data() + static_cast<std::size_t>(j) * in_dim;
      double acc = head_b.data[j];
      for (int k = 0; k < in_dim; ++k) acc += row[k] * head_in[k];
      logits[static_cast<std::size_t>(j)] = acc;
    }
    if (batch.task == PretextTask::ctp) {
      const auto& target = batch.regression_targets[s];
      double sample_loss = 0.0;
      for (int j = 0; j < out_dim; ++j) {
        const double diff = logits[static_cast<std::size_t>(j)] - target[static_cast<std::size_t>(j)];
        sample_loss += diff * diff;
      }
      loss_sum += sample_loss / out_dim;
    } else {
      loss_sum += detail::softmax_cross_entropy(logits, batch.class_targets[s], scratch);
    }
  }
  double loss = loss_sum / static_cast<double>(n);
  if (weight_decay > 0.0) loss += 0.5 * weight_decay * squared_l2_norm(w);
  return loss;
}

// One plain SGD step: w - lr * grads.
inline WeightSet sgd_step(const WeightSet& w, const WeightSet& grads, double lr) {
  return axpy(-lr, grads, w);
}

}  // namespace fedvid
