// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gslim/error.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

enum class ParamRole { kKernel, kBias, kGamma, kBeta, kRunningMean, kRunningVar };

inline std::string_view role_name(ParamRole r) {
  switch (r) {
    case ParamRole::kKernel: return "kernel";
    case ParamRole::kBias: return "bias";
    case ParamRole::kGamma: return "gamma";
    case ParamRole::kBeta: return "beta";
    case ParamRole::kRunningMean: return "running_mean";
    case ParamRole::kRunningVar: return "running_var";
  }
  return "?";
}

inline ParamRole role_from_name(std::string_view s) {
  for (auto r : {ParamRole::kKernel, ParamRole::kBias, ParamRole::kGamma, ParamRole::kBeta,
                 ParamRole::kRunningMean, ParamRole::kRunningVar})
    if (role_name(r) == s) return r;
  throw ConfigError("unknown parameter role '" + std::string(s) + "'");
}

/// Running statistics are buffers, not trainables.
inline bool is_trainable(ParamRole r) {
  return r != ParamRole::kRunningMean && r != ParamRole::kRunningVar;
}

template <class T>
struct Param {
  std::string name;
  ParamRole role = ParamRole::kKernel;
  int layer = -1;  // index into the owning ArchSpec
  Tensor<T> value;
};

/// Ordered collection of named tensors belonging to one network.
template <class T>
class ParamSet {
 public:
  std::size_t size() const noexcept { return items_.size(); }
  Param<T>& operator[](std::size_t i) { return items_[i]; }
  const Param<T>& operator[](std::size_t i) const { return items_[i]; }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::size_t add(std::string name, ParamRole role, int layer, Tensor<T> value) {
    items_.push_back({std::move(name), role, layer, std::move(value)});
    return items_.size() - 1;
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].name == name) return i;
    return std::nullopt;
  }

  const Param<T>& get(std::string_view name) const {
    auto i = find(name);
    if (!i) throw ConfigError("no parameter named '" + std::string(name) + "'");
    return items_[*i];
  }
  Param<T>& get(std::string_view name) {
    auto i = find(name);
    if (!i) throw ConfigError("no parameter named '" + std::string(name) + "'");
    return items_[*i];
  }

  /// Same names and shapes, all values zero. Used for gradient and moment buffers.
  ParamSet zeros_like() const {
    ParamSet out = *this;
    for (auto& p : out.items_) p.value.fill(T(0));
    return out;
  }

  void set_zero() {
    for (auto& p : items_) p.value.fill(T(0));
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (auto& p : items_) n += p.value.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (auto& p : items_) out.add(p.name, p.role, p.layer, p.value.template cast<U>());
    return out;
  }

  bool operator==(const ParamSet& o) const {
    if (items_.size() != o.items_.size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const auto& a = items_[i];
      const auto& b = o.items_[i];
      if (a.name != b.name || a.role != b.role || a.layer != b.layer || !(a.value == b.value))
        return false;
    }
    return true;
  }

 private:
  std::vector<Param<T>> items_;
};

}  // namespace gslim
