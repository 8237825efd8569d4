#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fedvid/checkpoint.hpp"
#include "fedvid/rng.hpp"

using namespace fedvid;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fedvid_test_" + name);
}

WeightSet awkward_values() {
  WeightSet w;
  // Values chosen to stress shortest round-trip serialization.
  w.insert("a", Role::backbone,
           Tensor({6}, {0.1, -1.0 / 3.0, 1e-300, -1e300, 5e-324, 0.0}));
  w.insert("b", Role::head,
           Tensor({2, 2}, {std::numeric_limits<double>::min(), 1.0 + 1e-15, -0.0, 123456789.123456789}));
  return w;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bitwise lossless") {
  const auto path = temp_file("roundtrip.ckpt.json");
  CheckpointMeta meta;
  meta.round = 17;
  meta.master_seed = 18446744073709551615ull;  // u64 max survives the string encoding
  meta.config_sha256 = "deadbeef";
  meta.created_unix_ms = 1700000000000;

  SECTION("hand-picked awkward values") {
    const WeightSet w = awkward_values();
    save_checkpoint(w, meta, path);
    const auto [loaded, loaded_meta] = load_checkpoint(path);
    REQUIRE(bitwise_equal(loaded, w));
    REQUIRE(loaded_meta.round == meta.round);
    REQUIRE(loaded_meta.master_seed == meta.master_seed);
    REQUIRE(loaded_meta.config_sha256 == meta.config_sha256);
    REQUIRE(loaded_meta.created_unix_ms == meta.created_unix_ms);
  }

  SECTION("random finite doubles, wide exponent range") {
    Rng rng(404);
    WeightSet w;
    Tensor t = Tensor::zeros({64});
    for (double& v : t.data) {
      const double mantissa = rng.uniform(-1.0, 1.0);
      const int exponent = static_cast<int>(rng.next_below(600)) - 300;
      v = std::ldexp(mantissa, exponent);
    }
    w.insert("wide", Role::backbone, std::move(t));
    save_checkpoint(w, meta, path);
    const auto [loaded, loaded_meta] = load_checkpoint(path);
    REQUIRE(bitwise_equal(loaded, w));
  }
  std::filesystem::remove(path);
}

TEST_CASE("truncated data array is a malformed checkpoint") {
  const auto path = temp_file("truncated.ckpt.json");
  {
    std::ofstream out(path);
    out << R"({"format_version":1,
         "meta":{"round":0,"master_seed":"1","config_sha256":"x","created_unix_ms":0},
         "params":{"p":{"role":"backbone","shape":[4],"data":[1.0,2.0]}}})";
  }
  try {
    load_checkpoint(path);
    FAIL("expected malformed checkpoint");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::malformed_checkpoint);
    REQUIRE(std::string(e.what()).find("malformed") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("format version mismatch is rejected") {
  const auto path = temp_file("version.ckpt.json");
  {
    std::ofstream out(path);
    out << R"({"format_version":2,
         "meta":{"round":0,"master_seed":"1","config_sha256":"x","created_unix_ms":0},
         "params":{}})";
  }
  REQUIRE_THROWS_AS(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("non-finite values are refused on save") {
  WeightSet w;
  w.insert("p", Role::backbone, Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}));
  REQUIRE_THROWS_AS(save_checkpoint(w, CheckpointMeta{}, temp_file("nan.ckpt.json")), Error);
}

TEST_CASE("missing file maps to an io error") {
  try {
    load_checkpoint(temp_file("does_not_exist.ckpt.json"));
    FAIL("expected io error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::io);
  }
}

TEST_CASE("backbone-only checkpoint has zero head entries") {
  const auto path = temp_file("partial.ckpt.json");
  const WeightSet full = awkward_values();
  save_checkpoint(filter_role(full, Role::backbone), CheckpointMeta{}, path);
  const auto [loaded, meta] = load_checkpoint(path);
  REQUIRE(loaded.value_count(Role::head) == 0);
  REQUIRE(loaded.size() == 1);
  std::filesystem::remove(path);
}
