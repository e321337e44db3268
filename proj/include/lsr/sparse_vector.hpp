#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lsr/error.hpp"

namespace lsr {

using TermId = std::uint32_t;

/// A |V|-dimensional non-negative term-weight vector stored as (term, weight)
/// pairs sorted by term id. Zero weights are never stored.
template <typename Scalar>
class BasicSparseVector {
 public:
  using Entry = std::pair<TermId, Scalar>;

  BasicSparseVector() = default;

  /// Entries may come in any order. Zeros are dropped; duplicate ids,
  /// negative or non-finite weights throw ValidationError.
  static BasicSparseVector from_entries(std::vector<Entry> entries) {
    std::erase_if(entries, [](const Entry& e) { return e.second == Scalar(0); });
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!std::isfinite(static_cast<double>(entries[i].second)) || entries[i].second < Scalar(0)) {
        throw ValidationError("sparse vector weight must be finite and non-negative (term " +
                              std::to_string(entries[i].first) + ")");
      }
      if (i > 0 && entries[i - 1].first == entries[i].first) {
        throw ValidationError("duplicate term id " + std::to_string(entries[i].first) +
                              " in sparse vector");
      }
    }
    BasicSparseVector v;
    v.entries_ = std::move(entries);
    return v;
  }

  template <typename Derived>
  static BasicSparseVector from_dense(const Eigen::DenseBase<Derived>& dense) {
    std::vector<Entry> entries;
    for (Eigen::Index i = 0; i < dense.size(); ++i) {
      if (dense(i) != Scalar(0)) entries.emplace_back(static_cast<TermId>(i), dense(i));
    }
    return from_entries(std::move(entries));
  }

  std::span<const Entry> entries() const { return entries_; }
  std::size_t nnz() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Scalar weight(TermId term) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), term,
                               [](const Entry& e, TermId t) { return e.first < t; });
    return (it != entries_.end() && it->first == term) ? it->second : Scalar(0);
  }

  bool contains(TermId term) const { return weight(term) != Scalar(0); }

  /// One past the largest stored term id (0 for the zero vector).
  std::size_t extent() const { return entries_.empty() ? 0 : entries_.back().first + std::size_t{1}; }

  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> to_dense(Eigen::Index dim) const {
    if (static_cast<Eigen::Index>(extent()) > dim) {
      throw ValidationError("sparse vector term id exceeds dense dimension");
    }
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(dim);
    for (const auto& [t, w] : entries_) out(t) = w;
    return out;
  }

  bool operator==(const BasicSparseVector&) const = default;

 private:
  std::vector<Entry> entries_;
};

using SparseVector = BasicSparseVector<double>;

/// Signed per-term values, sorted by term id. Used for gradients with respect
/// to sparse-vector weights, which may be negative.
template <typename Scalar>
using BasicTermGradient = std::vector<std::pair<TermId, Scalar>>;
using TermGradient = BasicTermGradient<double>;

/// Sum over shared terms of the products of weights. Accumulates in ascending
/// term-id order.
template <typename Scalar>
Scalar dot(const BasicSparseVector<Scalar>& a, const BasicSparseVector<Scalar>& b) {
  auto ea = a.entries();
  auto eb = b.entries();
  Scalar acc(0);
  std::size_t i = 0, j = 0;
  while (i < ea.size() && j < eb.size()) {
    if (ea[i].first < eb[j].first) {
      ++i;
    } else if (eb[j].first < ea[i].first) {
      ++j;
    } else {
      acc += ea[i].second * eb[j].second;
      ++i;
      ++j;
    }
  }
  return acc;
}

template <typename Scalar>
BasicSparseVector<Scalar> operator+(const BasicSparseVector<Scalar>& a, const BasicSparseVector<Scalar>& b) {
  std::vector<typename BasicSparseVector<Scalar>::Entry> out;
  out.reserve(a.nnz() + b.nnz());
  auto ea = a.entries();
  auto eb = b.entries();
  std::size_t i = 0, j = 0;
  while (i < ea.size() || j < eb.size()) {
    if (j == eb.size() || (i < ea.size() && ea[i].first < eb[j].first)) {
      out.push_back(ea[i++]);
    } else if (i == ea.size() || eb[j].first < ea[i].first) {
      out.push_back(eb[j++]);
    } else {
      out.emplace_back(ea[i].first, ea[i].second + eb[j].second);
      ++i;
      ++j;
    }
  }
  return BasicSparseVector<Scalar>::from_entries(std::move(out));
}

template <typename Scalar>
BasicSparseVector<Scalar> operator*(Scalar factor, const BasicSparseVector<Scalar>& v) {
  std::vector<typename BasicSparseVector<Scalar>::Entry> out(v.entries().begin(), v.entries().end());
  for (auto& e : out) e.second *= factor;
  return BasicSparseVector<Scalar>::from_entries(std::move(out));
}

template <typename Scalar>
Scalar sum(const BasicSparseVector<Scalar>& v) {
  Scalar acc(0);
  for (const auto& e : v.entries()) acc += e.second;
  return acc;
}

}  // namespace lsr
