#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedvid/error.hpp"
#include "fedvid/rng.hpp"
#include "fedvid/synthetic_data.hpp"

// IID and label-shard non-IID client partitions. Both modes produce pairwise
// disjoint assignments that cover every training index exactly once.

namespace fedvid {

enum class PartitionMode { iid, class_noniid };

inline const char* partition_mode_name(PartitionMode m) {
  return m == PartitionMode::iid ? "iid" : "class_noniid";
}

inline PartitionMode partition_mode_from_string(const std::string& s) {
  if (s == "iid") return PartitionMode::iid;
  if (s == "class_noniid") return PartitionMode::class_noniid;
  throw Error(ErrorKind::config, "unknown partition mode: " + s);
}

struct PartitionSpec {
  PartitionMode mode = PartitionMode::iid;
  std::uint64_t seed = 0;
  int n_clients = 0;
  int classes_per_client = 0;  // 0 in iid mode
  std::map<int, std::vector<int>> assignments;      // client -> sorted indices
  std::map<int, std::set<int>> classes_per_client_map;  // observed label sets
};

// Seeded global shuffle, then a contiguous split into parts whose sizes
// differ by at most one (the first n_samples % n_clients parts get the extra).
inline PartitionSpec partition_iid(int n_samples, int n_clients, std::uint64_t seed) {
  if (n_clients < 1) throw Error(ErrorKind::infeasible_partition, "n_clients must be >= 1");
  if (n_samples < n_clients) {
    throw Error(ErrorKind::infeasible_partition, "need at least one sample per client");
  }
  std::vector<int> order(static_cast<std::size_t>(n_samples));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  PartitionSpec spec;
  spec.mode = PartitionMode::iid;
  spec.seed = seed;
  spec.n_clients = n_clients;
  const int base = n_samples / n_clients;
  const int extra = n_samples % n_clients;
  std::size_t cursor = 0;
  for (int c = 0; c < n_clients; ++c) {
    const int take = base + (c < extra ? 1 : 0);
    std::vector<int> part(order.begin() + cursor, order.begin() + cursor + take);
    cursor += static_cast<std::size_t>(take);
    std::sort(part.begin(), part.end());
    spec.assignments[c] = std::move(part);
  }
  return spec;
}

// Label-shard non-IID split: sort indices by label, cut each class into
// shards, then deal shards so every client ends up with classes_per_client
// shards of distinct classes. Shard counts per class are n_clients*cpc /
// n_classes, with any remainder distributed one extra shard to a seeded
// choice of classes (the divisible case reduces to equal shards per class).
inline PartitionSpec partition_by_class(const std::vector<int>& labels, int n_clients,
                                        int classes_per_client, std::uint64_t seed) {
  if (n_clients < 1) throw Error(ErrorKind::infeasible_partition, "n_clients must be >= 1");
  if (classes_per_client < 1) {
    throw Error(ErrorKind::infeasible_partition, "classes_per_client must be >= 1");
  }
  int n_classes = 0;
  for (int label : labels) {
    if (label < 0) throw Error(ErrorKind::infeasible_partition, "labels must be non-negative");
    n_classes = std::max(n_classes, label + 1);
  }
  if (n_classes == 0) throw Error(ErrorKind::infeasible_partition, "empty label list");
  if (classes_per_client > n_classes) {
    throw Error(ErrorKind::infeasible_partition,
                "classes_per_client = " + std::to_string(classes_per_client) + " exceeds n_classes = " +
                    std::to_string(n_classes));
  }
  const long long total_shards = static_cast<long long>(n_clients) * classes_per_client;
  if (total_shards < n_classes) {
    throw Error(ErrorKind::infeasible_partition,
                "infeasible sharding: n_clients * classes_per_client = " + std::to_string(total_shards) +
                    " < n_classes = " + std::to_string(n_classes) + ", some class would go unassigned");
  }

  // Indices per class, ascending (equivalent to a stable sort by label).
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  }

  Rng rng(seed);
  const int base_shards = static_cast<int>(total_shards / n_classes);
  const int remainder = static_cast<int>(total_shards % n_classes);
  std::vector<int> extra_order(static_cast<std::size_t>(n_classes));
  std::iota(extra_order.begin(), extra_order.end(), 0);
  rng.shuffle(extra_order);
  std::vector<int> shards_per_class(static_cast<std::size_t>(n_classes), base_shards);
  for (int i = 0; i < remainder; ++i) shards_per_class[static_cast<std::size_t>(extra_order[i])] += 1;

  for (int c = 0; c < n_classes; ++c) {
    const int need = shards_per_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(by_class[static_cast<std::size_t>(c)].size()) < need) {
      throw Error(ErrorKind::infeasible_partition,
                  "class " + std::to_string(c) + " has " +
                      std::to_string(by_class[static_cast<std::size_t>(c)].size()) + " samples but needs " +
                      std::to_string(need) + " shards");
    }
  }

  // Cut each class into near-equal shards; leftovers go one each to the
  // lowest-indexed shards of that class.
  struct Shard {
    int class_id;
    std::vector<int> indices;
  };
  std::vector<Shard> shards;
  shards.reserve(static_cast<std::size_t>(total_shards));
  std::vector<int> class_order(static_cast<std::size_t>(n_classes));
  std::iota(class_order.begin(), class_order.end(), 0);
  rng.shuffle(class_order);
  for (int c : class_order) {
    const auto& idx = by_class[static_cast<std::size_t>(c)];
    const int k = shards_per_class[static_cast<std::size_t>(c)];
    const int small = static_cast<int>(idx.size()) / k;
    const int big_count = static_cast<int>(idx.size()) % k;
    std::size_t cursor = 0;
    std::vector<Shard> class_shards;
    for (int s = 0; s < k; ++s) {
      const int take = small + (s < big_count ? 1 : 0);
      Shard shard{c, std::vector<int>(idx.begin() + cursor, idx.begin() + cursor + take)};
      cursor += static_cast<std::size_t>(take);
      class_shards.push_back(std::move(shard));
    }
    rng.shuffle(class_shards);  // decouple shard content from client position
    for (auto& s : class_shards) shards.push_back(std::move(s));
  }

  // Deal the class-major shard list round-robin over a seeded client order.
  // Consecutive positions of one class land on distinct clients, and a client
  // sees one class at most once because no class has more shards than
  // clients, so each client gets exactly classes_per_client distinct classes.
  std::vector<int> client_order(static_cast<std::size_t>(n_clients));
  std::iota(client_order.begin(), client_order.end(), 0);
  rng.shuffle(client_order);

  PartitionSpec spec;
  spec.mode = PartitionMode::class_noniid;
  spec.seed = seed;
  spec.n_clients = n_clients;
  spec.classes_per_client = classes_per_client;
  for (int c = 0; c < n_clients; ++c) spec.assignments[c];
  for (std::size_t pos = 0; pos < shards.size(); ++pos) {
    const int client = client_order[pos % static_cast<std::size_t>(n_clients)];
    auto& dest = spec.assignments[client];
    dest.insert(dest.end(), shards[pos].indices.begin(), shards[pos].indices.end());
    spec.classes_per_client_map[client].insert(shards[pos].class_id);
  }
  for (auto& [client, indices] : spec.assignments) std::sort(indices.begin(), indices.end());
  for (const auto& [client, classes] : spec.classes_per_client_map) {
    if (static_cast<int>(classes.size()) != classes_per_client) {
      throw Error(ErrorKind::infeasible_partition,
                  "internal: client " + std::to_string(client) + " received " +
                      std::to_string(classes.size()) + " classes, expected " +
                      std::to_string(classes_per_client));
    }
  }
  return spec;
}

// Materialized view of one client's samples, in stored index order.
inline std::vector<Video> client_dataset(const PartitionSpec& spec, int client_id,
                                         const std::vector<Video>& train) {
  auto it = spec.assignments.find(client_id);
  if (it == spec.assignments.end()) {
    throw Error(ErrorKind::config, "unknown client: " + std::to_string(client_id));
  }
  std::vector<Video> out;
  out.reserve(it->second.size());
  for (int idx : it->second) out.push_back(train.at(static_cast<std::size_t>(idx)));
  return out;
}

inline nlohmann::json partition_to_json(const PartitionSpec& spec) {
  nlohmann::json assignments = nlohmann::json::object();
  for (const auto& [client, indices] : spec.assignments) {
    assignments[std::to_string(client)] = indices;
  }
  return {{"mode", partition_mode_name(spec.mode)},
          {"seed", spec.seed},
          {"n_clients", spec.n_clients},
          {"classes_per_client", spec.classes_per_client},
          {"assignments", assignments}};
}

inline PartitionSpec partition_from_json(const nlohmann::json& j) {
  PartitionSpec spec;
  spec.mode = partition_mode_from_string(j.at("mode").get<std::string>());
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.n_clients = j.at("n_clients").get<int>();
  spec.classes_per_client = j.at("classes_per_client").get<int>();
  for (const auto& [key, value] : j.at("assignments").items()) {
    spec.assignments[std::stoi(key)] = value.get<std::vector<int>>();
  }
  return spec;
}

inline void save_partition(const PartitionSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot open for writing: " + path.string());
  out << partition_to_json(spec).dump(1) << "\n";
  if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

inline PartitionSpec load_partition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open partition file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    return partition_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "malformed partition file " + path.string() + ": " + e.what());
  }
}

}  // namespace fedvid
