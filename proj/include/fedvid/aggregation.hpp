#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedvid/error.hpp"
#include "fedvid/weight_set.hpp"

// Server-side aggregation. The fedvssl strategy forms per-client
// pseudo-gradients g_m = theta_global - theta_m, blends a sample-count
// weighting with a loss-based softmax weighting through alpha, applies a
// server step with learning rate eta_s, and then averages the stepped model
// with the beta most recent final global models (stochastic weight
// averaging). With partial updates on, all of this touches backbone entries
// only and the server holds no head parameters at all.

namespace fedvid {

struct ClientUpdate {
  int client_id = 0;
  WeightSet weights;
  std::int64_t sample_count = 0;
  double mean_loss = 0.0;
};

enum class AggregationStrategy { fedavg_baseline, fedvssl };

inline const char* strategy_name(AggregationStrategy s) {
  return s == AggregationStrategy::fedvssl ? "fedvssl" : "fedavg_baseline";
}

inline AggregationStrategy strategy_from_string(const std::string& s) {
  if (s == "fedvssl") return AggregationStrategy::fedvssl;
  if (s == "fedavg_baseline" || s == "fedavg") return AggregationStrategy::fedavg_baseline;
  throw Error(ErrorKind::config, "unknown aggregation strategy: " + s);
}

struct AggregationConfig {
  AggregationStrategy strategy = AggregationStrategy::fedvssl;
  double alpha = 0.0;     // 0 = sample-count weighting only, 1 = loss weighting only
  int beta = 0;           // how many past global models enter the average
  double server_lr = 1.0;
  bool partial_update = true;  // true = backbone only crosses the wire

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw Error(ErrorKind::config, "aggregation.alpha must be in [0, 1]");
    }
    if (beta < 0) throw Error(ErrorKind::config, "aggregation.beta must be >= 0");
    if (!(server_lr > 0.0)) throw Error(ErrorKind::config, "aggregation.server_lr must be > 0");
  }
};

struct GlobalState {
  std::int64_t round = 0;
  WeightSet global_weights;
  // Most-recent-first final global models (role-filtered like the wire),
  // holding at most beta entries.
  std::deque<WeightSet> swa_history;
};

struct AggregateDelta {
  WeightSet delta;                          // blended pseudo-gradient
  std::map<int, double> per_client_weights; // blended simplex coefficients
};

enum class RoleFilter { backbone_only, all };

inline WeightSet select_roles(const WeightSet& w, RoleFilter filter) {
  if (filter == RoleFilter::all) return w;
  return filter_role(w, Role::backbone);
}

// theta_global(r-1) - theta_client(r), restricted to the selected roles.
inline WeightSet pseudo_gradient(const WeightSet& prev_global, const WeightSet& client_weights,
                                 RoleFilter roles = RoleFilter::all) {
  const WeightSet g = select_roles(prev_global, roles);
  const WeightSet c = select_roles(client_weights, roles);
  check_shape_compatible(g, c);
  WeightSet out;
  auto ci = c.entries().begin();
  for (const auto& [name, entry] : g.entries()) {
    Tensor t = entry.tensor;
    const auto& cs = ci->second.tensor.data;
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] -= cs[i];
    out.insert(name, entry.role, std::move(t));
    ++ci;
  }
  return out;
}

// n_m / sum(n); a point on the simplex.
inline std::vector<double> fedavg_weights(const std::vector<std::int64_t>& counts) {
  if (counts.empty()) throw Error(ErrorKind::config, "fedavg_weights: empty count list");
  double total = 0.0;
  for (std::int64_t n : counts) {
    if (n < 1) throw Error(ErrorKind::config, "fedavg_weights: sample counts must be >= 1");
    total += static_cast<double>(n);
  }
  std::vector<double> weights;
  weights.reserve(counts.size());
  for (std::int64_t n : counts) weights.push_back(static_cast<double>(n) / total);
  return weights;
}

// softmax(-loss) with max-shift; lower loss => strictly larger weight.
inline std::vector<double> loss_weights(const std::vector<double>& losses) {
  if (losses.empty()) throw Error(ErrorKind::config, "loss_weights: empty loss list");
  double best = losses[0];
  for (double l : losses) {
    if (!std::isfinite(l)) throw Error(ErrorKind::config, "loss_weights: losses must be finite");
    best = std::min(best, l);
  }
  std::vector<double> weights;
  weights.reserve(losses.size());
  double total = 0.0;
  for (double l : losses) {
    const double e = std::exp(best - l);  // exp(-(l - min)), max term is 1
    weights.push_back(e);
    total += e;
  }
  for (double& w : weights) w /= total;
  return weights;
}

// alpha * loss_delta + (1 - alpha) * fedavg_delta, exact at the boundaries.
inline WeightSet blend_deltas(double alpha, const WeightSet& loss_delta,
                              const WeightSet& fedavg_delta) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorKind::config, "blend_deltas: alpha must be in [0, 1]");
  }
  if (alpha == 0.0) {
    check_shape_compatible(loss_delta, fedavg_delta);
    return fedavg_delta;
  }
  if (alpha == 1.0) {
    check_shape_compatible(loss_delta, fedavg_delta);
    return loss_delta;
  }
  return axpy(alpha, loss_delta, scale(1.0 - alpha, fedavg_delta));
}

// Mean of the candidate and the min(beta, |history|) most recent history
// entries; beta = 0 returns the candidate unchanged. Before beta entries
// exist the average runs over what is there, so early rounds are not biased
// toward the initialization. Evaluated as candidate + sum(h_i - candidate) /
// (k + 1): identical history is then a fixed point to the bit, and the
// summands are small exactly when the averaged models are close.
inline WeightSet swa_update(const WeightSet& candidate, const std::deque<WeightSet>& history,
                            int beta) {
  if (beta < 0) throw Error(ErrorKind::config, "swa_update: beta must be >= 0");
  const int used = std::min<int>(beta, static_cast<int>(history.size()));
  if (used == 0) return candidate;
  WeightSet offset = zeros_like(candidate);
  for (int i = 0; i < used; ++i) {
    const WeightSet& h = history[static_cast<std::size_t>(i)];
    check_shape_compatible(candidate, h);
    offset = axpy(1.0, axpy(-1.0, candidate, h), offset);
  }
  return axpy(1.0 / (used + 1), offset, candidate);
}

// One server round. Updates are sorted by client id before any arithmetic,
// so the result is independent of arrival order.
inline std::pair<GlobalState, AggregateDelta> aggregate_round(const GlobalState& state,
                                                              std::vector<ClientUpdate> updates,
                                                              const AggregationConfig& cfg) {
  cfg.validate();
  if (updates.empty()) throw Error(ErrorKind::config, "aggregate_round: no client updates");
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  for (std::size_t i = 1; i < updates.size(); ++i) {
    if (updates[i].client_id == updates[i - 1].client_id) {
      throw Error(ErrorKind::config,
                  "aggregate_round: duplicate client id " + std::to_string(updates[i].client_id));
    }
  }
  const RoleFilter roles =
      cfg.partial_update ? RoleFilter::backbone_only : RoleFilter::all;
  const WeightSet prev = select_roles(state.global_weights, roles);
  std::vector<const WeightSet*> transmitted;
  transmitted.reserve(updates.size());
  for (const auto& u : updates) {
    if (u.sample_count < 1) {
      throw Error(ErrorKind::config, "aggregate_round: sample_count must be >= 1");
    }
    WeightSet filtered = select_roles(u.weights, roles);
    check_shape_compatible(prev, filtered);
    // Client updates are expected to already carry exactly the transmitted
    // roles; re-filtering would silently hide protocol violations.
    if (filtered.size() != u.weights.size()) {
      throw Error(ErrorKind::config,
                  "aggregate_round: client " + std::to_string(u.client_id) +
                      " transmitted roles outside the aggregation scope");
    }
    transmitted.push_back(&u.weights);
  }

  std::vector<std::int64_t> counts;
  std::vector<double> losses;
  for (const auto& u : updates) {
    counts.push_back(u.sample_count);
    losses.push_back(u.mean_loss);
  }
  const std::vector<double> avg_w = fedavg_weights(counts);

  GlobalState next;
  next.round = state.round + 1;
  AggregateDelta delta_out;

  if (cfg.strategy == AggregationStrategy::fedavg_baseline) {
    // Plain weighted average of the transmitted client weights.
    WeightSet mean = scale(avg_w[0], *transmitted[0]);
    for (std::size_t m = 1; m < transmitted.size(); ++m) {
      mean = axpy(avg_w[m], *transmitted[m], mean);
    }
    delta_out.delta = axpy(-1.0, mean, prev);  // prev - mean, informational
    for (std::size_t m = 0; m < updates.size(); ++m) {
      delta_out.per_client_weights[updates[m].client_id] = avg_w[m];
    }
    if (cfg.partial_update) {
      next.global_weights = merge(mean, filter_role(state.global_weights, Role::head));
    } else {
      next.global_weights = std::move(mean);
    }
    next.swa_history = state.swa_history;
    return {std::move(next), std::move(delta_out)};
  }

  const std::vector<double> loss_w = loss_weights(losses);
  std::vector<double> blended(updates.size());
  double coeff_sum = 0.0;
  for (std::size_t m = 0; m < updates.size(); ++m) {
    blended[m] = cfg.alpha * loss_w[m] + (1.0 - cfg.alpha) * avg_w[m];
    coeff_sum += blended[m];
    delta_out.per_client_weights[updates[m].client_id] = blended[m];
  }

  // Server step. theta_prev - eta_s * sum_m c_m (theta_prev - theta_m) is
  // evaluated in its expanded form (1 - eta_s * C) * theta_prev +
  // eta_s * sum_m c_m theta_m, which keeps the single-client eta_s = 1 case
  // exact to the bit instead of losing low bits to the subtract-then-add.
  WeightSet weighted_mean = scale(blended[0], *transmitted[0]);
  for (std::size_t m = 1; m < transmitted.size(); ++m) {
    weighted_mean = axpy(blended[m], *transmitted[m], weighted_mean);
  }
  const double keep = 1.0 - cfg.server_lr * coeff_sum;
  WeightSet candidate = axpy(keep, prev, scale(cfg.server_lr, weighted_mean));

  // Blended pseudo-gradient, for telemetry and the returned delta.
  WeightSet delta = zeros_like(prev);
  for (std::size_t m = 0; m < updates.size(); ++m) {
    delta = axpy(blended[m], pseudo_gradient(prev, *transmitted[m], roles), delta);
  }
  delta_out.delta = std::move(delta);

  WeightSet averaged = swa_update(candidate, state.swa_history, cfg.beta);
  if (cfg.partial_update) {
    // No head entries exist on the server in partial mode; the merge is a
    // no-op on heads by construction.
    next.global_weights = merge(averaged, filter_role(state.global_weights, Role::head));
  } else {
    next.global_weights = averaged;
  }
  next.swa_history = state.swa_history;
  if (cfg.beta > 0) {
    next.swa_history.push_front(select_roles(next.global_weights, roles));
    while (static_cast<int>(next.swa_history.size()) > cfg.beta) next.swa_history.pop_back();
  }
  return {std::move(next), std::move(delta_out)};
}

}  // namespace fedvid
