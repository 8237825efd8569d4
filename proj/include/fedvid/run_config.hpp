#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedvid/engine.hpp"
#include "fedvid/error.hpp"
#include "fedvid/evaluation.hpp"
#include "fedvid/partition.hpp"
#include "fedvid/sha256.hpp"

// Run configuration: one JSON document with sections dataset, model, task,
// partition, federation, aggregation, evaluation, seeds, output_dir. The
// schema is strict (unknown keys are rejected), defaults are filled in, and
// the SHA-256 of the resolved canonical form is stamped into every artifact.

namespace fedvid {

struct PartitionSettings {
  PartitionMode mode = PartitionMode::class_noniid;
  int n_clients = 20;
  int classes_per_client = 2;
};

struct EvalSettings {
  std::vector<int> retrieval_ks = {1, 5};
  ProbeConfig probe;
};

struct SeedSettings {
  std::uint64_t master = 1234567;
  std::optional<std::uint64_t> dataset;    // defaults to mix(master, ...)
  std::optional<std::uint64_t> partition;  // defaults to mix(master, ...)

  std::uint64_t dataset_seed() const {
    return dataset ? *dataset : mix(master, stream::dataset_seed);
  }
  std::uint64_t partition_seed() const {
    return partition ? *partition : mix(master, stream::partition_seed);
  }
};

struct RunConfig {
  DatasetConfig dataset;
  ModelSpec model;
  PretextTask task = PretextTask::ctp;
  PartitionSettings partition;
  int rounds = 200;
  int clients_per_round = 5;
  int checkpoint_every = 0;
  int centralized_epochs = 0;  // 0 = use the round-equivalent budget
  TrainingConfig training;
  AggregationConfig aggregation;
  EvalSettings evaluation;
  SeedSettings seeds;
  std::string output_dir = "runs/out";

  EngineConfig engine_config() const {
    EngineConfig e;
    e.rounds = rounds;
    e.clients_per_round = clients_per_round;
    e.n_clients = partition.n_clients;
    e.task = task;
    e.training = training;
    e.aggregation = aggregation;
    e.master_seed = seeds.master;
    e.checkpoint_every = checkpoint_every;
    e.output_dir = output_dir;
    return e;
  }

  int resolved_centralized_epochs() const {
    if (centralized_epochs > 0) return centralized_epochs;
    const double equivalent = equivalent_centralized_epochs(
        rounds, clients_per_round, training.local_epochs,
        static_cast<double>(dataset.n_classes()) * dataset.videos_per_class_train /
            partition.n_clients,
        static_cast<double>(dataset.n_classes()) * dataset.videos_per_class_train);
    return std::max(1, static_cast<int>(equivalent + 0.5));
  }

  void validate() const {
    dataset.validate();
    model.validate();
    training.validate();
    aggregation.validate();
    if (model.frame_dim != dataset.height * dataset.width) {
      throw Error(ErrorKind::config, "model.frame_dim must equal dataset height*width");
    }
    if (rounds < 0) throw Error(ErrorKind::config, "federation.rounds must be >= 0");
    if (partition.n_clients < 1) throw Error(ErrorKind::config, "partition.n_clients must be >= 1");
    if (clients_per_round < 1 || clients_per_round > partition.n_clients) {
      throw Error(ErrorKind::config, "need 1 <= clients_per_round <= n_clients");
    }
    if (checkpoint_every < 0) throw Error(ErrorKind::config, "checkpoint_every must be >= 0");
    if (centralized_epochs < 0) throw Error(ErrorKind::config, "centralized_epochs must be >= 0");
    if (task == PretextTask::speed && dataset.t_raw < kClipLen * kSpeedClasses) {
      throw Error(ErrorKind::config, "speed task needs dataset.t_raw >= 32");
    }
    if (dataset.t_raw < kClipLen) throw Error(ErrorKind::config, "dataset.t_raw too short for clips");
    for (int k : evaluation.retrieval_ks) {
      if (k < 1) throw Error(ErrorKind::config, "evaluation.retrieval_ks entries must be >= 1");
    }
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::config, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw Error(ErrorKind::config, "unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "bad value for '" + key + "': " + e.what());
  }
}

}  // namespace detail

// The desk-scale default profile: 32 classes, 20 clients, label shards of 2
// classes each, 5 clients per round, 200 rounds of the ctp task.
inline RunConfig default_run_config() {
  RunConfig cfg;
  cfg.dataset = DatasetConfig{};
  cfg.dataset.seed = cfg.seeds.dataset_seed();
  cfg.model.frame_dim = cfg.dataset.height * cfg.dataset.width;
  cfg.task = PretextTask::ctp;
  cfg.training.client_lr = default_client_lr(cfg.task);
  cfg.aggregation.strategy = AggregationStrategy::fedvssl;
  cfg.aggregation.alpha = 0.9;
  cfg.aggregation.beta = 0;
  cfg.aggregation.partial_update = true;
  return cfg;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"dataset", "model", "task", "partition", "federation",
                                  "aggregation", "evaluation", "seeds", "output_dir"},
                              "config");
  RunConfig cfg = default_run_config();

  if (j.contains("task")) cfg.task = task_from_string(j.at("task").get<std::string>());
  cfg.training.client_lr = default_client_lr(cfg.task);

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown_keys(d, {"n_direction_bins", "n_size_bins", "min_side",
                                    "videos_per_class_train", "videos_per_class_test", "t_raw",
                                    "height", "width", "speed_min", "speed_max", "noise_sigma"},
                                "config.dataset");
    cfg.dataset.n_direction_bins = detail::get_or(d, "n_direction_bins", cfg.dataset.n_direction_bins);
    cfg.dataset.n_size_bins = detail::get_or(d, "n_size_bins", cfg.dataset.n_size_bins);
    cfg.dataset.min_side = detail::get_or(d, "min_side", cfg.dataset.min_side);
    cfg.dataset.videos_per_class_train =
        detail::get_or(d, "videos_per_class_train", cfg.dataset.videos_per_class_train);
    cfg.dataset.videos_per_class_test =
        detail::get_or(d, "videos_per_class_test", cfg.dataset.videos_per_class_test);
    cfg.dataset.t_raw = detail::get_or(d, "t_raw", cfg.dataset.t_raw);
    cfg.dataset.height = detail::get_or(d, "height", cfg.dataset.height);
    cfg.dataset.width = detail::get_or(d, "width", cfg.dataset.width);
    cfg.dataset.speed_min = detail::get_or(d, "speed_min", cfg.dataset.speed_min);
    cfg.dataset.speed_max = detail::get_or(d, "speed_max", cfg.dataset.speed_max);
    cfg.dataset.noise_sigma = detail::get_or(d, "noise_sigma", cfg.dataset.noise_sigma);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown_keys(m, {"hidden1", "embed_dim"}, "config.model");
    cfg.model.hidden1 = detail::get_or(m, "hidden1", cfg.model.hidden1);
    cfg.model.embed_dim = detail::get_or(m, "embed_dim", cfg.model.embed_dim);
  }
  cfg.model.frame_dim = cfg.dataset.height * cfg.dataset.width;

  if (j.contains("partition")) {
    const auto& p = j.at("partition");
    detail::reject_unknown_keys(p, {"mode", "n_clients", "classes_per_client"}, "config.partition");
    if (p.contains("mode")) cfg.partition.mode = partition_mode_from_string(p.at("mode").get<std::string>());
    cfg.partition.n_clients = detail::get_or(p, "n_clients", cfg.partition.n_clients);
    cfg.partition.classes_per_client =
        detail::get_or(p, "classes_per_client", cfg.partition.classes_per_client);
  }
  if (j.contains("federation")) {
    const auto& f = j.at("federation");
    detail::reject_unknown_keys(f, {"rounds", "clients_per_round", "checkpoint_every",
                                    "centralized_epochs", "training"},
                                "config.federation");
    cfg.rounds = detail::get_or(f, "rounds", cfg.rounds);
    cfg.clients_per_round = detail::get_or(f, "clients_per_round", cfg.clients_per_round);
    cfg.checkpoint_every = detail::get_or(f, "checkpoint_every", cfg.checkpoint_every);
    cfg.centralized_epochs = detail::get_or(f, "centralized_epochs", cfg.centralized_epochs);
    if (f.contains("training")) {
      const auto& t = f.at("training");
      detail::reject_unknown_keys(t, {"client_lr", "batch_size", "local_epochs", "weight_decay"},
                                  "config.federation.training");
      if (t.contains("client_lr")) cfg.training.client_lr = t.at("client_lr").get<double>();
      cfg.training.batch_size = detail::get_or(t, "batch_size", cfg.training.batch_size);
      cfg.training.local_epochs = detail::get_or(t, "local_epochs", cfg.training.local_epochs);
      cfg.training.weight_decay = detail::get_or(t, "weight_decay", cfg.training.weight_decay);
    }
  }
  if (j.contains("aggregation")) {
    const auto& a = j.at("aggregation");
    detail::reject_unknown_keys(a, {"strategy", "alpha", "beta", "server_lr", "partial_update"},
                                "config.aggregation");
    if (a.contains("strategy")) {
      cfg.aggregation.strategy = strategy_from_string(a.at("strategy").get<std::string>());
    }
    cfg.aggregation.alpha = detail::get_or(a, "alpha", cfg.aggregation.alpha);
    cfg.aggregation.beta = detail::get_or(a, "beta", cfg.aggregation.beta);
    cfg.aggregation.server_lr = detail::get_or(a, "server_lr", cfg.aggregation.server_lr);
    cfg.aggregation.partial_update = detail::get_or(a, "partial_update", cfg.aggregation.partial_update);
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    detail::reject_unknown_keys(e, {"retrieval_ks", "probe_epochs", "probe_lr",
                                    "probe_batch_size", "probe_seed"},
                                "config.evaluation");
    cfg.evaluation.retrieval_ks = detail::get_or(e, "retrieval_ks", cfg.evaluation.retrieval_ks);
    cfg.evaluation.probe.epochs = detail::get_or(e, "probe_epochs", cfg.evaluation.probe.epochs);
    cfg.evaluation.probe.lr = detail::get_or(e, "probe_lr", cfg.evaluation.probe.lr);
    cfg.evaluation.probe.batch_size = detail::get_or(e, "probe_batch_size", cfg.evaluation.probe.batch_size);
    cfg.evaluation.probe.seed = detail::get_or(e, "probe_seed", cfg.evaluation.probe.seed);
  }
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    detail::reject_unknown_keys(s, {"master", "dataset", "partition"}, "config.seeds");
    cfg.seeds.master = detail::get_or(s, "master", cfg.seeds.master);
    if (s.contains("dataset")) cfg.seeds.dataset = s.at("dataset").get<std::uint64_t>();
    if (s.contains("partition")) cfg.seeds.partition = s.at("partition").get<std::uint64_t>();
  }
  cfg.output_dir = detail::get_or<std::string>(j, "output_dir", cfg.output_dir);

  cfg.dataset.seed = cfg.seeds.dataset_seed();
  cfg.validate();
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return {
      {"dataset",
       {{"n_direction_bins", cfg.dataset.n_direction_bins},
        {"n_size_bins", cfg.dataset.n_size_bins},
        {"min_side", cfg.dataset.min_side},
        {"videos_per_class_train", cfg.dataset.videos_per_class_train},
        {"videos_per_class_test", cfg.dataset.videos_per_class_test},
        {"t_raw", cfg.dataset.t_raw},
        {"height", cfg.dataset.height},
        {"width", cfg.dataset.width},
        {"speed_min", cfg.dataset.speed_min},
        {"speed_max", cfg.dataset.speed_max},
        {"noise_sigma", cfg.dataset.noise_sigma}}},
      {"model", {{"hidden1", cfg.model.hidden1}, {"embed_dim", cfg.model.embed_dim}}},
      {"task", task_name(cfg.task)},
      {"partition",
       {{"mode", partition_mode_name(cfg.partition.mode)},
        {"n_clients", cfg.partition.n_clients},
        {"classes_per_client", cfg.partition.classes_per_client}}},
      {"federation",
       {{"rounds", cfg.rounds},
        {"clients_per_round", cfg.clients_per_round},
        {"checkpoint_every", cfg.checkpoint_every},
        {"centralized_epochs", cfg.centralized_epochs},
        {"training",
         {{"client_lr", cfg.training.client_lr},
          {"batch_size", cfg.training.batch_size},
          {"local_epochs", cfg.training.local_epochs},
          {"weight_decay", cfg.training.weight_decay}}}}},
      {"aggregation",
       {{"strategy", strategy_name(cfg.aggregation.strategy)},
        {"alpha", cfg.aggregation.alpha},
        {"beta", cfg.aggregation.beta},
        {"server_lr", cfg.aggregation.server_lr},
        {"partial_update", cfg.aggregation.partial_update}}},
      {"evaluation",
       {{"retrieval_ks", cfg.evaluation.retrieval_ks},
        {"probe_epochs", cfg.evaluation.probe.epochs},
        {"probe_lr", cfg.evaluation.probe.lr},
        {"probe_batch_size", cfg.evaluation.probe.batch_size},
        {"probe_seed", cfg.evaluation.probe.seed}}},
      {"seeds",
       {{"master", cfg.seeds.master},
        {"dataset", cfg.seeds.dataset_seed()},
        {"partition", cfg.seeds.partition_seed()}}},
      {"output_dir", cfg.output_dir}};
}

// Digest of the resolved config in canonical form (sorted keys, no spaces).
inline std::string config_digest(const RunConfig& cfg) {
  return sha256_hex(run_config_to_json(cfg).dump());
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "malformed config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

// Builds the partition prescribed by a config from the deterministic label
// layout, without generating any video pixels.
inline PartitionSpec build_partition(const RunConfig& cfg) {
  const std::uint64_t seed = cfg.seeds.partition_seed();
  if (cfg.partition.mode == PartitionMode::iid) {
    const int n = cfg.dataset.n_classes() * cfg.dataset.videos_per_class_train;
    return partition_iid(n, cfg.partition.n_clients, seed);
  }
  return partition_by_class(train_label_layout(cfg.dataset), cfg.partition.n_clients,
                            cfg.partition.classes_per_client, seed);
}

}  // namespace fedvid
