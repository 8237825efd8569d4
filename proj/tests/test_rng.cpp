#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "fedvid/rng.hpp"
#include "fedvid/sha256.hpp"

using namespace fedvid;

// Reference outputs computed independently from the published splitmix64 /
// xoshiro256++ algorithms; they pin the streams across builds.
TEST_CASE("splitmix64 matches reference vectors") {
  std::uint64_t s = 0;
  REQUIRE(splitmix64_next(s) == 16294208416658607535ull);
  REQUIRE(splitmix64_next(s) == 7960286522194355700ull);
  REQUIRE(splitmix64_next(s) == 487617019471545679ull);
  s = 42;
  REQUIRE(splitmix64_next(s) == 13679457532755275413ull);
  REQUIRE(splitmix64_next(s) == 2949826092126892291ull);
}

TEST_CASE("xoshiro256++ matches reference vectors") {
  Rng rng(7);
  REQUIRE(rng.next_u64() == 1021219803524665661ull);
  REQUIRE(rng.next_u64() == 3174977118032272916ull);
  REQUIRE(rng.next_u64() == 13236943193235544178ull);
  REQUIRE(rng.next_u64() == 7880630202246103356ull);
}

TEST_CASE("mix is deterministic and order sensitive") {
  REQUIRE(mix(1, 2, 3) == mix(1, 2, 3));
  REQUIRE(mix(1, 2, 3) != mix(1, 3, 2));
  REQUIRE(mix(5) != mix(6));
  REQUIRE(mix(5, stream::client_sample, 9) != mix(5, stream::local_train, 9));
}

TEST_CASE("next_double stays in [0,1)") {
  Rng rng(123);
  for (int i = 0; i < 10000; ++i) {
    const double v = rng.next_double();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
  }
}

TEST_CASE("next_below is in range and roughly uniform") {
  Rng rng(99);
  int counts[7] = {0};
  for (int i = 0; i < 70000; ++i) counts[rng.next_below(7)] += 1;
  for (int c : counts) {
    REQUIRE(c > 9000);
    REQUIRE(c < 11000);
  }
}

TEST_CASE("box-muller gaussian has the right first two moments") {
  Rng rng(2024);
  const int n = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.next_gaussian();
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  REQUIRE(std::fabs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
  REQUIRE(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("sample_without_replacement returns sorted distinct ids") {
  Rng rng(31);
  const auto picked = rng.sample_without_replacement(50, 12);
  REQUIRE(picked.size() == 12);
  REQUIRE(std::is_sorted(picked.begin(), picked.end()));
  REQUIRE(std::set<int>(picked.begin(), picked.end()).size() == 12);
  for (int v : picked) {
    REQUIRE(v >= 0);
    REQUIRE(v < 50);
  }
  Rng rng2(31);
  REQUIRE(rng2.sample_without_replacement(50, 12) == picked);
}

TEST_CASE("sha256 matches FIPS vectors") {
  REQUIRE(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  REQUIRE(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  REQUIRE(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  // Long input exercises multi-block hashing.
  REQUIRE(sha256_hex(std::string(1000000, 'a')) ==
          "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}
