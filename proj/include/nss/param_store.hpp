// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nss/error.hpp"
#include "nss/types.hpp"

namespace nss {

/// Named dense parameter arrays kept in insertion order.
///
/// The insertion order defines the flat layout used by flatten()/unflatten()
/// and by the optimizer, so two stores built by the same sequence of add()
/// calls are layout-compatible.
template <typename Scalar>
class ParamStore {
 public:
  using MatrixType = Matrix<Scalar>;
  using VectorType = Vector<Scalar>;

  struct Entry {
    std::string name;
    MatrixType value;
  };

  void add(std::string name, MatrixType value) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value)});
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t position(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  const MatrixType& operator[](std::string_view name) const { return entries_[position(name)].value; }
  MatrixType& operator[](std::string_view name) { return entries_[position(name)].value; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Total number of scalars over all entries.
  Index num_values() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Offset of each entry in the flat layout.
  std::vector<Index> offsets() const {
    std::vector<Index> out;
    out.reserve(entries_.size());
    Index n = 0;
    for (const auto& e : entries_) {
      out.push_back(n);
      n += e.value.size();
    }
    return out;
  }

  VectorType flatten() const {
    VectorType flat(num_values());
    Index n = 0;
    for (const auto& e : entries_) {
      flat.segment(n, e.value.size()) = e.value.reshaped();
      n += e.value.size();
    }
    return flat;
  }

  void unflatten(const Eigen::Ref<const VectorType>& flat) {
    if (flat.size() != num_values()) {
      throw DimensionError("unflatten: expected " + std::to_string(num_values()) + " values, got " +
                           std::to_string(flat.size()));
    }
    Index n = 0;
    for (auto& e : entries_) {
      e.value.reshaped() = flat.segment(n, e.value.size());
      n += e.value.size();
    }
  }

  /// Same names and shapes, all values zero.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& e : entries_) out.add(e.name, MatrixType::Zero(e.value.rows(), e.value.cols()));
    return out;
  }

  /// Entries whose name starts with prefix, in order.
  ParamStore with_prefix(std::string_view prefix) const {
    ParamStore out;
    for (const auto& e : entries_) {
      if (std::string_view(e.name).starts_with(prefix)) out.add(e.name, e.value);
    }
    return out;
  }

  /// Copies values of same-named entries from other; entries absent in other are left alone.
  void assign_from(const ParamStore& other) {
    for (const auto& e : other.entries()) {
      auto& dst = (*this)[e.name];
      if (dst.rows() != e.value.rows() || dst.cols() != e.value.cols()) {
        throw DimensionError("assign_from: shape mismatch for '" + e.name + "'");
      }
      dst = e.value;
    }
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
      if (!(x.value.array() == y.value.array()).all()) return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Concatenates two stores; names must not collide.
template <typename Scalar>
ParamStore<Scalar> merge(const ParamStore<Scalar>& a, const ParamStore<Scalar>& b) {
  ParamStore<Scalar> out = a;
  for (const auto& e : b.entries()) out.add(e.name, e.value);
  return out;
}

}  // namespace nss
