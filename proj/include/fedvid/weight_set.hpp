#pragma once

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <utility>

#include "fedvid/error.hpp"
#include "fedvid/tensor.hpp"

// Named, role-tagged tensor collections plus the elementwise algebra every
// other module is built on. Entries iterate in lexicographic name order, so
// all reductions are independent of construction order. Values are treated as
// immutable once built; the free functions below are pure.

namespace fedvid {

enum class Role { backbone, head };

inline const char* role_name(Role role) {
  return role == Role::backbone ? "backbone" : "head";
}

inline Role role_from_string(const std::string& s) {
  if (s == "backbone") return Role::backbone;
  if (s == "head") return Role::head;
  throw Error(ErrorKind::config, "unknown role: " + s);
}

struct ParamEntry {
  Role role;
  Tensor tensor;
};

class WeightSet {
public:
  using Map = std::map<std::string, ParamEntry>;

  WeightSet() = default;

  void insert(const std::string& name, Role role, Tensor tensor) {
    if (!tensor_consistent(tensor)) {
      throw Error(ErrorKind::shape_mismatch,
                  "parameter '" + name + "': shape " + shape_to_string(tensor.shape) +
                      " does not match data length " + std::to_string(tensor.data.size()));
    }
    auto [it, inserted] = entries_.emplace(name, ParamEntry{role, std::move(tensor)});
    if (!inserted) {
      throw Error(ErrorKind::config, "duplicate parameter name: " + name);
    }
    (void)it;
  }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  const ParamEntry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw Error(ErrorKind::config, "unknown parameter: " + name);
    }
    return it->second;
  }

  const Tensor& tensor(const std::string& name) const { return at(name).tensor; }

  // For filling a freshly built set (e.g. gradient accumulation); shared
  // values are otherwise treated as immutable.
  Tensor& tensor_mut(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw Error(ErrorKind::config, "unknown parameter: " + name);
    }
    return it->second.tensor;
  }

  const Map& entries() const { return entries_; }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& [name, entry] : entries_) n += entry.tensor.size();
    return n;
  }

  std::size_t value_count(Role role) const {
    std::size_t n = 0;
    for (const auto& [name, entry] : entries_) {
      if (entry.role == role) n += entry.tensor.size();
    }
    return n;
  }

private:
  Map entries_;
};

// Throws unless x and y have identical name -> (role, shape) signatures; the
// message names the first offending parameter.
inline void check_shape_compatible(const WeightSet& x, const WeightSet& y) {
  auto xi = x.entries().begin();
  auto yi = y.entries().begin();
  while (xi != x.entries().end() && yi != y.entries().end()) {
    if (xi->first != yi->first) {
      const std::string& missing = (xi->first < yi->first) ? xi->first : yi->first;
      throw Error(ErrorKind::shape_mismatch, "parameter '" + missing + "' present in only one weight set");
    }
    if (xi->second.role != yi->second.role) {
      throw Error(ErrorKind::shape_mismatch, "parameter '" + xi->first + "': role mismatch");
    }
    if (!(xi->second.tensor.shape == yi->second.tensor.shape)) {
      throw Error(ErrorKind::shape_mismatch,
                  "parameter '" + xi->first + "': shape " + shape_to_string(xi->second.tensor.shape) +
                      " vs " + shape_to_string(yi->second.tensor.shape));
    }
    ++xi;
    ++yi;
  }
  if (xi != x.entries().end()) {
    throw Error(ErrorKind::shape_mismatch, "parameter '" + xi->first + "' present in only one weight set");
  }
  if (yi != y.entries().end()) {
    throw Error(ErrorKind::shape_mismatch, "parameter '" + yi->first + "' present in only one weight set");
  }
}

inline WeightSet filter_role(const WeightSet& w, Role role) {
  WeightSet out;
  for (const auto& [name, entry] : w.entries()) {
    if (entry.role == role) out.insert(name, entry.role, entry.tensor);
  }
  return out;
}

// Union of two weight sets with disjoint names.
inline WeightSet merge(const WeightSet& a, const WeightSet& b) {
  WeightSet out;
  for (const auto& [name, entry] : a.entries()) out.insert(name, entry.role, entry.tensor);
  for (const auto& [name, entry] : b.entries()) out.insert(name, entry.role, entry.tensor);
  return out;
}

// a*x + y over matching names; roles preserved. a == 0 returns y verbatim.
inline WeightSet axpy(double a, const WeightSet& x, const WeightSet& y) {
  check_shape_compatible(x, y);
  if (a == 0.0) return y;
  WeightSet out;
  auto yi = y.entries().begin();
  for (const auto& [name, entry] : x.entries()) {
    Tensor t = yi->second.tensor;
    const auto& xs = entry.tensor.data;
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += a * xs[i];
    out.insert(name, entry.role, std::move(t));
    ++yi;
  }
  return out;
}

inline WeightSet scale(double a, const WeightSet& x) {
  WeightSet out;
  for (const auto& [name, entry] : x.entries()) {
    Tensor t = entry.tensor;
    for (double& v : t.data) v *= a;
    out.insert(name, entry.role, std::move(t));
  }
  return out;
}

inline WeightSet zeros_like(const WeightSet& x) {
  WeightSet out;
  for (const auto& [name, entry] : x.entries()) {
    out.insert(name, entry.role, Tensor::zeros(entry.tensor.shape));
  }
  return out;
}

// Euclidean norm of the concatenated difference over entries of `role`.
inline double l2_distance(const WeightSet& x, const WeightSet& y, Role role) {
  const WeightSet fx = filter_role(x, role);
  const WeightSet fy = filter_role(y, role);
  check_shape_compatible(fx, fy);
  double sum_sq = 0.0;
  auto yi = fy.entries().begin();
  for (const auto& [name, entry] : fx.entries()) {
    const auto& xs = entry.tensor.data;
    const auto& ys = yi->second.tensor.data;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double d = xs[i] - ys[i];
      sum_sq += d * d;
    }
    ++yi;
  }
  return std::sqrt(sum_sq);
}

inline double squared_l2_norm(const WeightSet& w) {
  double sum = 0.0;
  for (const auto& [name, entry] : w.entries()) {
    for (double v : entry.tensor.data) sum += v * v;
  }
  return sum;
}

inline bool all_finite(const WeightSet& w) {
  for (const auto& [name, entry] : w.entries()) {
    if (!all_finite(entry.tensor)) return false;
  }
  return true;
}

// Exact bit equality (the representation of every element, not tolerance).
inline bool bitwise_equal(const WeightSet& x, const WeightSet& y) {
  if (x.size() != y.size()) return false;
  auto yi = y.entries().begin();
  for (const auto& [name, entry] : x.entries()) {
    if (name != yi->first || entry.role != yi->second.role ||
        entry.tensor.shape != yi->second.tensor.shape) {
      return false;
    }
    const auto& xs = entry.tensor.data;
    const auto& ys = yi->second.tensor.data;
    if (xs.size() != ys.size()) return false;
    if (!xs.empty() &&
        std::memcmp(xs.data(), ys.data(), xs.size() * sizeof(double)) != 0) {
      return false;
    }
    ++yi;
  }
  return true;
}

inline double max_abs_diff(const WeightSet& x, const WeightSet& y) {
  check_shape_compatible(x, y);
  double worst = 0.0;
  auto yi = y.entries().begin();
  for (const auto& [name, entry] : x.entries()) {
    const auto& xs = entry.tensor.data;
    const auto& ys = yi->second.tensor.data;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      worst = std::max(worst, std::fabs(xs[i] - ys[i]));
    }
    ++yi;
  }
  return worst;
}

}  // namespace fedvid
