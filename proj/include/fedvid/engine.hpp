#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedvid/aggregation.hpp"
#include "fedvid/checkpoint.hpp"
#include "fedvid/error.hpp"
#include "fedvid/model.hpp"
#include "fedvid/parallel.hpp"
#include "fedvid/partition.hpp"
#include "fedvid/pretext.hpp"
#include "fedvid/rng.hpp"
#include "fedvid/synthetic_data.hpp"

// Round orchestration: sample clients, train them locally (in parallel, with
// schedule-independent results), aggregate on the server, record telemetry
// and checkpoints. Also the pooled-data baseline trainer. Entire runs are
// pure functions of (config, seeds); only wall_ms is exempt.

namespace fedvid {

struct EngineConfig {
  int rounds = 540;
  int clients_per_round = 5;
  int n_clients = 100;
  PretextTask task = PretextTask::ctp;
  TrainingConfig training;
  AggregationConfig aggregation;
  std::uint64_t master_seed = 0;
  int checkpoint_every = 0;  // 0 = only the final checkpoint
  std::filesystem::path output_dir;  // empty = keep everything in memory

  void validate() const {
    if (rounds < 0) throw Error(ErrorKind::config, "federation.rounds must be >= 0");
    if (clients_per_round < 1 || clients_per_round > n_clients) {
      throw Error(ErrorKind::config, "need 1 <= clients_per_round <= n_clients");
    }
    if (checkpoint_every < 0) throw Error(ErrorKind::config, "federation.checkpoint_every must be >= 0");
    training.validate();
    aggregation.validate();
  }
};

struct ClientState {
  int client_id = 0;
  WeightSet head_weights;  // persisted across participations (partial mode only)
  int participation_count = 0;
};

struct RoundRecord {
  int round = 0;
  std::vector<int> selected_clients;
  std::vector<std::int64_t> sample_counts;
  std::vector<double> losses;
  double mean_loss = 0.0;
  double weighted_loss = 0.0;
  double div_backbone_mean = 0.0;
  double div_backbone_std = 0.0;
  double div_head_mean = 0.0;  // zero in partial mode: the server never sees heads
  double div_head_std = 0.0;
  std::int64_t bytes_up = 0;
  std::int64_t bytes_down = 0;
  std::int64_t wall_ms = 0;
};

// Uniform sample without replacement, sorted ascending; one stream per round.
inline std::vector<int> sample_clients(int n_clients, int m, int round, std::uint64_t master_seed) {
  if (m > n_clients) throw Error(ErrorKind::config, "cannot sample more clients than exist");
  Rng rng(mix(master_seed, stream::client_sample, static_cast<std::uint64_t>(round)));
  return rng.sample_without_replacement(n_clients, m);
}

namespace detail {

// Sample-weighted mean of the per-batch losses of one epoch.
struct EpochLossAccumulator {
  double weighted = 0.0;
  std::int64_t samples = 0;
  void add(double batch_loss, std::size_t batch_n) {
    weighted += batch_loss * static_cast<double>(batch_n);
    samples += static_cast<std::int64_t>(batch_n);
  }
  double mean() const { return samples > 0 ? weighted / static_cast<double>(samples) : 0.0; }
};

}  // namespace detail

// Local training of one client: assemble the full model from the transmitted
// global weights plus (in partial mode) the client's persisted head, run
// local_epochs of seeded mini-batch SGD, and return the transmitted roles
// with the mean loss of the final epoch.
inline std::pair<ClientUpdate, ClientState> train_locally(
    const ClientState& state, const WeightSet& global_weights,
    const std::vector<const Video*>& data, const std::vector<int>& data_ids,
    const TrainingConfig& tcfg, PretextTask task, const ModelSpec& spec,
    const DatasetConfig& dcfg, bool partial, std::uint64_t head_init_seed,
    std::uint64_t local_seed) {
  if (data.empty()) {
    throw Error(ErrorKind::config, "client " + std::to_string(state.client_id) + " has no data");
  }
  tcfg.validate();

  WeightSet model;
  if (partial) {
    const WeightSet head = state.head_weights.empty()
                               ? init_head(spec, task, head_init_seed)
                               : state.head_weights;
    model = merge(global_weights, head);
  } else {
    model = global_weights;
  }

  detail::EpochLossAccumulator final_epoch;
  for (int epoch = 0; epoch < tcfg.local_epochs; ++epoch) {
    Rng rng(mix(local_seed, stream::epoch_shuffle, static_cast<std::uint64_t>(epoch)));
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const bool last_epoch = epoch == tcfg.local_epochs - 1;
    if (last_epoch) final_epoch = {};
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
      std::vector<ClipSource> batch_sources;
      std::vector<int> batch_ids;
      for (std::size_t i = start; i < end; ++i) {
        batch_sources.push_back(clip_source(*data[static_cast<std::size_t>(order[i])]));
        batch_ids.push_back(data_ids[static_cast<std::size_t>(order[i])]);
      }
      const PretextBatch batch = make_batch(task, batch_sources, batch_ids, dcfg, rng);
      LossGrads lg = task_loss_and_grads(model, batch, tcfg.weight_decay);
      if (last_epoch) final_epoch.add(lg.loss, batch.size());
      model = sgd_step(model, lg.grads, tcfg.client_lr);
    }
  }

  ClientUpdate update;
  update.client_id = state.client_id;
  update.weights = partial ? filter_role(model, Role::backbone) : model;
  update.sample_count = static_cast<std::int64_t>(data.size());
  update.mean_loss = final_epoch.mean();

  ClientState next = state;
  if (partial) next.head_weights = filter_role(model, Role::head);
  next.participation_count += 1;
  return {std::move(update), std::move(next)};
}

inline std::string metrics_csv_header() {
  return "round,n_selected,client_ids,mean_loss,weighted_loss,div_backbone_mean,"
         "div_backbone_std,div_head_mean,div_head_std,bytes_up,bytes_down,wall_ms";
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string metrics_csv_row(const RoundRecord& r) {
  std::string ids;
  for (std::size_t i = 0; i < r.selected_clients.size(); ++i) {
    if (i > 0) ids += "|";
    ids += std::to_string(r.selected_clients[i]);
  }
  std::string row = std::to_string(r.round) + "," + std::to_string(r.selected_clients.size()) +
                    "," + ids + "," + format_double(r.mean_loss) + "," +
                    format_double(r.weighted_loss) + "," + format_double(r.div_backbone_mean) +
                    "," + format_double(r.div_backbone_std) + "," + format_double(r.div_head_mean) +
                    "," + format_double(r.div_head_std) + "," + std::to_string(r.bytes_up) + "," +
                    std::to_string(r.bytes_down) + "," + std::to_string(r.wall_ms);
  return row;
}

struct ParsedMetrics {
  std::vector<RoundRecord> records;
};

inline ParsedMetrics read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open metrics file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::io, "empty metrics file: " + path.string());
  if (line != metrics_csv_header()) {
    throw Error(ErrorKind::config, "unexpected metrics header in " + path.string());
  }
  ParsedMetrics out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 12) throw Error(ErrorKind::config, "bad metrics row: " + line);
    RoundRecord r;
    r.round = std::stoi(cells[0]);
    std::stringstream ids(cells[2]);
    std::string id;
    while (std::getline(ids, id, '|')) {
      if (!id.empty()) r.selected_clients.push_back(std::stoi(id));
    }
    r.mean_loss = std::stod(cells[3]);
    r.weighted_loss = std::stod(cells[4]);
    r.div_backbone_mean = std::stod(cells[5]);
    r.div_backbone_std = std::stod(cells[6]);
    r.div_head_mean = std::stod(cells[7]);
    r.div_head_std = std::stod(cells[8]);
    r.bytes_up = std::stoll(cells[9]);
    r.bytes_down = std::stoll(cells[10]);
    r.wall_ms = std::stoll(cells[11]);
    out.records.push_back(std::move(r));
  }
  return out;
}

struct PretrainResult {
  GlobalState state;
  std::vector<RoundRecord> records;
  std::map<int, ClientState> client_states;  // partial mode only
  WeightSet initial_weights;
};

namespace detail {

inline std::int64_t now_unix_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline void population_stats(const std::vector<double>& xs, double& mean, double& stddev) {
  mean = 0.0;
  stddev = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  stddev = var > 0.0 ? std::sqrt(var) : 0.0;
}

}  // namespace detail

// Federated pretraining. `config_snapshot`, when non-null, is persisted as
// config.json so a run directory is self-describing.
inline PretrainResult run_pretraining(const EngineConfig& cfg, const DatasetConfig& dcfg,
                                      const ModelSpec& spec, const Dataset& dataset,
                                      const PartitionSpec& partition,
                                      const std::string& config_digest,
                                      const nlohmann::json* config_snapshot = nullptr) {
  cfg.validate();
  if (static_cast<int>(partition.assignments.size()) != cfg.n_clients) {
    throw Error(ErrorKind::config, "partition has " + std::to_string(partition.assignments.size()) +
                                       " clients but federation expects " +
                                       std::to_string(cfg.n_clients));
  }
  if (cfg.task == PretextTask::speed && dcfg.t_raw < kClipLen * kSpeedClasses) {
    throw Error(ErrorKind::config, "speed task needs dataset.t_raw >= 32");
  }

  const bool partial = cfg.aggregation.partial_update;
  const std::filesystem::path& dir = cfg.output_dir;
  const bool persist = !dir.empty();
  std::ofstream metrics;
  if (persist) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create run directory " + dir.string() + ": " + ec.message());
    if (config_snapshot != nullptr) {
      std::ofstream cj(dir / "config.json");
      if (!cj) throw Error(ErrorKind::io, "cannot write config.json");
      cj << config_snapshot->dump(1) << "\n";
    }
    save_partition(partition, dir / "partition.json");
    metrics.open(dir / "metrics.csv");
    if (!metrics) throw Error(ErrorKind::io, "cannot write metrics.csv");
    metrics << metrics_csv_header() << "\n";
  }

  // Per-client index views into the shared training set.
  std::vector<std::vector<const Video*>> views(static_cast<std::size_t>(cfg.n_clients));
  std::vector<std::vector<int>> view_ids(static_cast<std::size_t>(cfg.n_clients));
  for (const auto& [client, indices] : partition.assignments) {
    if (client < 0 || client >= cfg.n_clients) {
      throw Error(ErrorKind::config, "partition client id " + std::to_string(client) + " out of range");
    }
    auto& v = views[static_cast<std::size_t>(client)];
    auto& ids = view_ids[static_cast<std::size_t>(client)];
    for (int idx : indices) {
      v.push_back(&dataset.train.at(static_cast<std::size_t>(idx)));
      ids.push_back(idx);
    }
  }

  PretrainResult result;
  GlobalState state;
  state.round = 0;
  const std::uint64_t init_seed = mix(cfg.master_seed, stream::global_init);
  state.global_weights =
      partial ? init_backbone(spec, init_seed) : init_weights(spec, cfg.task, init_seed);
  result.initial_weights = state.global_weights;

  auto checkpoint_meta = [&](int round) {
    CheckpointMeta meta;
    meta.round = round;
    meta.master_seed = cfg.master_seed;
    meta.config_sha256 = config_digest;
    meta.created_unix_ms = detail::now_unix_ms();
    return meta;
  };
  if (persist && cfg.checkpoint_every > 0) {
    save_checkpoint(state.global_weights, checkpoint_meta(0), dir / "ckpt_round_0.ckpt.json");
  }

  const std::int64_t transmitted_values = static_cast<std::int64_t>(
      partial ? state.global_weights.value_count(Role::backbone) : state.global_weights.value_count());

  for (int round = 1; round <= cfg.rounds; ++round) {
    const auto started = std::chrono::steady_clock::now();
    const std::vector<int> selected = sample_clients(cfg.n_clients, cfg.clients_per_round, round, cfg.master_seed);

    std::vector<ClientUpdate> updates(selected.size());
    std::vector<ClientState> new_states(selected.size());
    const WeightSet& global_ref = state.global_weights;
    parallel_for(selected.size(), [&](std::size_t slot) {
      const int client = selected[slot];
      ClientState st;
      if (auto it = result.client_states.find(client); it != result.client_states.end()) {
        st = it->second;
      } else {
        st.client_id = client;
      }
      auto [update, next_state] = train_locally(
          st, global_ref, views[static_cast<std::size_t>(client)],
          view_ids[static_cast<std::size_t>(client)], cfg.training, cfg.task, spec, dcfg, partial,
          mix(cfg.master_seed, stream::head_init, static_cast<std::uint64_t>(client)),
          mix(cfg.master_seed, stream::local_train, static_cast<std::uint64_t>(round),
              static_cast<std::uint64_t>(client)));
      updates[slot] = std::move(update);
      new_states[slot] = std::move(next_state);
    });
    if (partial) {
      for (auto& st : new_states) result.client_states[st.client_id] = st;
    }

    RoundRecord record;
    record.round = round;
    record.selected_clients = selected;
    std::vector<double> div_backbone, div_head;
    double loss_sum = 0.0, weighted_loss = 0.0;
    std::int64_t total_samples = 0;
    for (const auto& u : updates) {
      record.sample_counts.push_back(u.sample_count);
      record.losses.push_back(u.mean_loss);
      loss_sum += u.mean_loss;
      weighted_loss += u.mean_loss * static_cast<double>(u.sample_count);
      total_samples += u.sample_count;
      div_backbone.push_back(l2_distance(state.global_weights, u.weights, Role::backbone));
      if (!partial) div_head.push_back(l2_distance(state.global_weights, u.weights, Role::head));
    }
    record.mean_loss = loss_sum / static_cast<double>(updates.size());
    record.weighted_loss = weighted_loss / static_cast<double>(total_samples);
    detail::population_stats(div_backbone, record.div_backbone_mean, record.div_backbone_std);
    detail::population_stats(div_head, record.div_head_mean, record.div_head_std);
    record.bytes_up = static_cast<std::int64_t>(selected.size()) * transmitted_values * 8;
    record.bytes_down = record.bytes_up;

    auto [next_state, delta] = aggregate_round(state, std::move(updates), cfg.aggregation);
    (void)delta;
    state = std::move(next_state);

    record.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    if (persist) {
      metrics << metrics_csv_row(record) << "\n";
      if (cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0) {
        save_checkpoint(state.global_weights, checkpoint_meta(round),
                        dir / ("ckpt_round_" + std::to_string(round) + ".ckpt.json"));
      }
    }
    result.records.push_back(std::move(record));
  }

  if (persist) {
    save_checkpoint(state.global_weights, checkpoint_meta(cfg.rounds), dir / "final.ckpt.json");
    metrics.close();
    if (!metrics) throw Error(ErrorKind::io, "failed writing metrics.csv");
  }
  result.state = std::move(state);
  return result;
}

// Pooled-data baseline: one model, the same learner, a plain epoch loop.
struct CentralizedResult {
  WeightSet weights;
  std::vector<double> epoch_losses;  // final-epoch-style mean per epoch
  WeightSet initial_weights;
};

inline CentralizedResult run_centralized(int epochs, const EngineConfig& cfg,
                                         const DatasetConfig& dcfg, const ModelSpec& spec,
                                         const Dataset& dataset, const std::string& config_digest,
                                         const nlohmann::json* config_snapshot = nullptr) {
  if (epochs < 0) throw Error(ErrorKind::config, "centralized epochs must be >= 0");
  cfg.training.validate();
  std::vector<const Video*> pool;
  std::vector<int> pool_ids;
  for (std::size_t i = 0; i < dataset.train.size(); ++i) {
    pool.push_back(&dataset.train[i]);
    pool_ids.push_back(static_cast<int>(i));
  }
  if (pool.empty()) throw Error(ErrorKind::config, "empty training set");

  CentralizedResult result;
  WeightSet model = init_weights(spec, cfg.task, mix(cfg.master_seed, stream::global_init));
  result.initial_weights = model;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(mix(cfg.master_seed, stream::centralized, static_cast<std::uint64_t>(epoch)));
    std::vector<int> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    detail::EpochLossAccumulator acc;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.training.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.training.batch_size));
      std::vector<ClipSource> batch_sources;
      std::vector<int> batch_ids;
      for (std::size_t i = start; i < end; ++i) {
        batch_sources.push_back(clip_source(*pool[static_cast<std::size_t>(order[i])]));
        batch_ids.push_back(pool_ids[static_cast<std::size_t>(order[i])]);
      }
      const PretextBatch batch = make_batch(cfg.task, batch_sources, batch_ids, dcfg, rng);
      LossGrads lg = task_loss_and_grads(model, batch, cfg.training.weight_decay);
      acc.add(lg.loss, batch.size());
      model = sgd_step(model, lg.grads, cfg.training.client_lr);
    }
    result.epoch_losses.push_back(acc.mean());
  }

  if (!cfg.output_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create output directory: " + ec.message());
    if (config_snapshot != nullptr) {
      std::ofstream cj(cfg.output_dir / "config.json");
      if (!cj) throw Error(ErrorKind::io, "cannot write config.json");
      cj << config_snapshot->dump(1) << "\n";
    }
    std::ofstream metrics(cfg.output_dir / "metrics.csv");
    if (!metrics) throw Error(ErrorKind::io, "cannot write metrics.csv");
    metrics << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
      metrics << e << "," << format_double(result.epoch_losses[e]) << "\n";
    }
    CheckpointMeta meta;
    meta.round = epochs;
    meta.master_seed = cfg.master_seed;
    meta.config_sha256 = config_digest;
    meta.created_unix_ms = detail::now_unix_ms();
    save_checkpoint(model, meta, cfg.output_dir / "final.ckpt.json");
  }
  result.weights = std::move(model);
  return result;
}

// R rounds of M clients at E local epochs touch R*M*E*mean_client_size
// samples; divided by the dataset size that is the equivalent number of
// centralized epochs.
inline double equivalent_centralized_epochs(int rounds, int clients_per_round, int local_epochs,
                                            double mean_client_size, double dataset_size) {
  if (dataset_size <= 0.0) throw Error(ErrorKind::config, "dataset_size must be positive");
  return static_cast<double>(rounds) * clients_per_round * local_epochs * mean_client_size /
         dataset_size;
}

}  // namespace fedvid
