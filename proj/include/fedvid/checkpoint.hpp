#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "fedvid/error.hpp"
#include "fedvid/weight_set.hpp"

// Checkpoint files: a JSON manifest
//   {format_version, meta, params: name -> {role, shape, data}}
// with doubles serialized via shortest round-trip decimals, so
// load(save(w)) reproduces w bit for bit. Extension: .ckpt.json

namespace fedvid {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
  std::int64_t round = 0;
  std::uint64_t master_seed = 0;
  std::string config_sha256;
  std::int64_t created_unix_ms = 0;
};

inline void save_checkpoint(const WeightSet& weights, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
  if (!all_finite(weights)) {
    throw Error(ErrorKind::config, "refusing to save checkpoint with non-finite values");
  }
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, entry] : weights.entries()) {
    params[name] = {{"role", role_name(entry.role)},
                    {"shape", entry.tensor.shape},
                    {"data", entry.tensor.data}};
  }
  const nlohmann::json doc = {
      {"format_version", kCheckpointFormatVersion},
      {"meta",
       {{"round", meta.round},
        {"master_seed", std::to_string(meta.master_seed)},
        {"config_sha256", meta.config_sha256},
        {"created_unix_ms", meta.created_unix_ms}}},
      {"params", params}};
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorKind::io, "cannot open for writing: " + path.string());
  }
  out << doc.dump(1) << "\n";
  if (!out) {
    throw Error(ErrorKind::io, "write failed: " + path.string());
  }
}

inline std::pair<WeightSet, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::io, "cannot open checkpoint: " + path.string());
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::malformed_checkpoint,
                "malformed checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("format_version") || !doc.contains("meta") ||
        !doc.contains("params")) {
      throw Error(ErrorKind::malformed_checkpoint,
                  "malformed checkpoint " + path.string() + ": missing required fields");
    }
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw Error(ErrorKind::malformed_checkpoint,
                  "checkpoint format_version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointFormatVersion) + ")");
    }
    CheckpointMeta meta;
    const auto& jm = doc.at("meta");
    meta.round = jm.at("round").get<std::int64_t>();
    meta.master_seed = std::stoull(jm.at("master_seed").get<std::string>());
    meta.config_sha256 = jm.at("config_sha256").get<std::string>();
    meta.created_unix_ms = jm.at("created_unix_ms").get<std::int64_t>();

    WeightSet weights;
    for (const auto& [name, jp] : doc.at("params").items()) {
      Tensor t;
      t.shape = jp.at("shape").get<std::vector<std::size_t>>();
      t.data = jp.at("data").get<std::vector<double>>();
      if (!tensor_consistent(t)) {
        throw Error(ErrorKind::malformed_checkpoint,
                    "malformed checkpoint: parameter '" + name + "' has shape " +
                        shape_to_string(t.shape) + " but " + std::to_string(t.data.size()) +
                        " values");
      }
      if (!all_finite(t)) {
        throw Error(ErrorKind::malformed_checkpoint,
                    "malformed checkpoint: parameter '" + name + "' contains non-finite values");
      }
      weights.insert(name, role_from_string(jp.at("role").get<std::string>()), std::move(t));
    }
    return {std::move(weights), std::move(meta)};
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::malformed_checkpoint,
                "malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace fedvid
