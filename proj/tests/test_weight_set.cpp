#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedvid/rng.hpp"
#include "fedvid/weight_set.hpp"

using namespace fedvid;

namespace {

WeightSet two_role_set() {
  WeightSet w;
  w.insert("b1", Role::backbone, Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  w.insert("h1", Role::head, Tensor({3}, {5.0, 6.0, 7.0}));
  return w;
}

WeightSet random_set(std::uint64_t seed) {
  Rng rng(seed);
  WeightSet w;
  const int n_params = 2 + static_cast<int>(rng.next_below(3));
  for (int p = 0; p < n_params; ++p) {
    const std::size_t rows = 1 + rng.next_below(4);
    const std::size_t cols = 1 + rng.next_below(5);
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = rng.uniform(-2.0, 2.0);
    w.insert("p" + std::to_string(p), p % 2 == 0 ? Role::backbone : Role::head, std::move(t));
  }
  return w;
}

}  // namespace

TEST_CASE("filter_role selects the tagged entries") {
  const WeightSet w = two_role_set();
  const WeightSet backbone = filter_role(w, Role::backbone);
  REQUIRE(backbone.size() == 1);
  REQUIRE(backbone.has("b1"));
  REQUIRE(backbone.tensor("b1").data == w.tensor("b1").data);

  WeightSet heads_only;
  heads_only.insert("h2", Role::head, Tensor({1}, {1.0}));
  REQUIRE(filter_role(heads_only, Role::backbone).empty());
}

TEST_CASE("filter_role partitions the entry set exactly") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    const WeightSet w = random_set(seed);
    const WeightSet rebuilt = merge(filter_role(w, Role::backbone), filter_role(w, Role::head));
    REQUIRE(bitwise_equal(rebuilt, w));
  }
}

TEST_CASE("axpy basics") {
  const WeightSet w = two_role_set();
  SECTION("a = 0 returns y exactly") {
    const WeightSet x = axpy(1.0, w, w);  // same signature, different values
    REQUIRE(bitwise_equal(axpy(0.0, x, w), w));
  }
  SECTION("a = 1 with x = y doubles") {
    const WeightSet doubled = axpy(1.0, w, w);
    REQUIRE(doubled.tensor("b1").data == std::vector<double>{2.0, 4.0, 6.0, 8.0});
    REQUIRE(doubled.at("h1").role == Role::head);
  }
  SECTION("a = -1 with x = y zeroes") {
    const WeightSet zero = axpy(-1.0, w, w);
    for (const auto& [name, entry] : zero.entries()) {
      for (double v : entry.tensor.data) REQUIRE(v == 0.0);
    }
  }
  SECTION("shape mismatch names the offending parameter") {
    WeightSet other;
    other.insert("b1", Role::backbone, Tensor({2, 2}, {0, 0, 0, 0}));
    other.insert("hX", Role::head, Tensor({3}, {0, 0, 0}));
    try {
      axpy(1.0, w, other);
      FAIL("expected shape mismatch");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::shape_mismatch);
      REQUIRE(std::string(e.what()).find("h") != std::string::npos);
    }
  }
}

TEST_CASE("axpy composes additively") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    const WeightSet x = random_set(seed);
    WeightSet y = random_set(seed);  // same signature, different values below
    Rng rng(seed + 100);
    const double a = rng.uniform(-1.5, 1.5);
    const double b = rng.uniform(-1.5, 1.5);
    const WeightSet nested = axpy(a, x, axpy(b, x, y));
    const WeightSet flat = axpy(a + b, x, y);
    REQUIRE(max_abs_diff(nested, flat) <= 1e-12);
  }
}

TEST_CASE("l2_distance examples") {
  SECTION("identical sets give zero") {
    const WeightSet w = two_role_set();
    REQUIRE(l2_distance(w, w, Role::backbone) == 0.0);
    REQUIRE(l2_distance(w, w, Role::head) == 0.0);
  }
  SECTION("single parameter differing by one in one slot") {
    WeightSet x, y;
    x.insert("p", Role::backbone, Tensor({2}, {3.0, 4.0}));
    y.insert("p", Role::backbone, Tensor({2}, {4.0, 4.0}));
    REQUIRE(l2_distance(x, y, Role::backbone) == 1.0);
  }
  SECTION("two parameters each differing by one in two slots") {
    WeightSet x, y;
    x.insert("a", Role::backbone, Tensor({3}, {0.0, 1.0, 2.0}));
    y.insert("a", Role::backbone, Tensor({3}, {1.0, 1.0, 3.0}));
    x.insert("b", Role::backbone, Tensor({2}, {5.0, 5.0}));
    y.insert("b", Role::backbone, Tensor({2}, {4.0, 6.0}));
    REQUIRE(l2_distance(x, y, Role::backbone) == 2.0);
  }
  SECTION("symmetry on random sets") {
    const WeightSet x = random_set(21);
    WeightSet y = axpy(0.25, random_set(21), x);
    REQUIRE(l2_distance(x, y, Role::backbone) == l2_distance(y, x, Role::backbone));
  }
  SECTION("role-restricted mismatch throws") {
    WeightSet x, y;
    x.insert("p", Role::backbone, Tensor({2}, {0.0, 0.0}));
    y.insert("p", Role::backbone, Tensor({3}, {0.0, 0.0, 0.0}));
    REQUIRE_THROWS_AS(l2_distance(x, y, Role::backbone), Error);
  }
}

TEST_CASE("weight set rejects duplicates and inconsistent tensors") {
  WeightSet w;
  w.insert("p", Role::backbone, Tensor({2}, {1.0, 2.0}));
  REQUIRE_THROWS_AS(w.insert("p", Role::head, Tensor({1}, {0.0})), Error);
  REQUIRE_THROWS_AS(w.insert("q", Role::head, Tensor({3}, {0.0})), Error);
}

TEST_CASE("iteration order is lexicographic regardless of insertion order") {
  WeightSet w;
  w.insert("zz", Role::head, Tensor({1}, {1.0}));
  w.insert("aa", Role::backbone, Tensor({1}, {2.0}));
  w.insert("mm", Role::backbone, Tensor({1}, {3.0}));
  std::vector<std::string> names;
  for (const auto& [name, entry] : w.entries()) names.push_back(name);
  REQUIRE(names == std::vector<std::string>{"aa", "mm", "zz"});
}
