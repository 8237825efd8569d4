#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "fedvid/engine.hpp"
#include "fedvid/error.hpp"
#include "fedvid/run_config.hpp"

// Per-round divergence summaries for a recorded run: mean and population
// standard deviation of the L2 distance between the previous global weights
// and each participant's returned weights, backbone and head separately.

namespace fedvid {

struct DivergenceRow {
  int round = 0;
  double backbone_mean = 0.0;
  double backbone_std = 0.0;
  double head_mean = 0.0;
  double head_std = 0.0;
};

struct DivergenceSummary {
  std::vector<DivergenceRow> rows;
};

// Reads the stats the engine recorded in metrics.csv.
inline DivergenceSummary divergence_summary(const std::filesystem::path& run_dir) {
  const ParsedMetrics metrics = read_metrics_csv(run_dir / "metrics.csv");
  if (metrics.records.empty()) {
    throw Error(ErrorKind::config, "no telemetry rows in " + (run_dir / "metrics.csv").string());
  }
  DivergenceSummary out;
  for (const auto& r : metrics.records) {
    out.rows.push_back({r.round, r.div_backbone_mean, r.div_backbone_std, r.div_head_mean,
                        r.div_head_std});
  }
  return out;
}

// Recomputes the divergence stats offline by replaying each round's local
// training from the per-round checkpoints. Requires a full-aggregation run
// (both roles transmitted, so a round is self-contained) recorded with
// checkpoint_every=1.
inline DivergenceSummary divergence_recompute(const std::filesystem::path& run_dir) {
  const RunConfig cfg = load_run_config(run_dir / "config.json");
  if (cfg.aggregation.partial_update) {
    throw Error(ErrorKind::config,
                "divergence recompute needs a full-aggregation run (partial_update=false): "
                "client heads are not reconstructible from server checkpoints otherwise");
  }
  if (cfg.checkpoint_every != 1) {
    throw Error(ErrorKind::config, "divergence recompute needs checkpoint_every=1");
  }
  const Dataset dataset = make_dataset(cfg.dataset);
  const PartitionSpec partition = load_partition(run_dir / "partition.json");

  std::vector<std::vector<const Video*>> views(static_cast<std::size_t>(cfg.partition.n_clients));
  std::vector<std::vector<int>> view_ids(static_cast<std::size_t>(cfg.partition.n_clients));
  for (const auto& [client, indices] : partition.assignments) {
    for (int idx : indices) {
      views[static_cast<std::size_t>(client)].push_back(&dataset.train.at(static_cast<std::size_t>(idx)));
      view_ids[static_cast<std::size_t>(client)].push_back(idx);
    }
  }

  DivergenceSummary out;
  for (int round = 1; round <= cfg.rounds; ++round) {
    const auto [prev_global, prev_meta] = load_checkpoint(
        run_dir / ("ckpt_round_" + std::to_string(round - 1) + ".ckpt.json"));
    (void)prev_meta;
    const std::vector<int> selected =
        sample_clients(cfg.partition.n_clients, cfg.clients_per_round, round, cfg.seeds.master);
    std::vector<double> div_backbone, div_head;
    for (int client : selected) {
      ClientState st;
      st.client_id = client;
      auto [update, next] = train_locally(
          st, prev_global, views[static_cast<std::size_t>(client)],
          view_ids[static_cast<std::size_t>(client)], cfg.training, cfg.task, cfg.model,
          cfg.dataset, /*partial=*/false,
          mix(cfg.seeds.master, stream::head_init, static_cast<std::uint64_t>(client)),
          mix(cfg.seeds.master, stream::local_train, static_cast<std::uint64_t>(round),
              static_cast<std::uint64_t>(client)));
      (void)next;
      div_backbone.push_back(l2_distance(prev_global, update.weights, Role::backbone));
      div_head.push_back(l2_distance(prev_global, update.weights, Role::head));
    }
    DivergenceRow row;
    row.round = round;
    detail::population_stats(div_backbone, row.backbone_mean, row.backbone_std);
    detail::population_stats(div_head, row.head_mean, row.head_std);
    out.rows.push_back(row);
  }
  return out;
}

inline nlohmann::json divergence_to_json(const DivergenceSummary& summary) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : summary.rows) {
    rows.push_back({{"round", r.round},
                    {"backbone_mean", r.backbone_mean},
                    {"backbone_std", r.backbone_std},
                    {"head_mean", r.head_mean},
                    {"head_std", r.head_std}});
  }
  return {{"rounds", rows}};
}

}  // namespace fedvid
