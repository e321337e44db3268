#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "lsr/sparse_vector.hpp"

namespace lsr {

enum class RegularizerKind { none, flops, l1, l2, topk };

std::string_view to_string(RegularizerKind kind);
RegularizerKind parse_regularizer_kind(std::string_view name);

/// Linear decay of the retained-term count during training.
struct TopkSchedule {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t steps = 0;

  bool enabled() const { return steps > 0; }
  bool operator==(const TopkSchedule&) const = default;
  std::size_t k_at(std::size_t step) const;
};

struct RegularizerConfig {
  RegularizerKind kind = RegularizerKind::none;
  double weight = 0.0;  // lambda for flops / l1 / l2
  std::size_t k = 0;  // for topk
  TopkSchedule schedule;  // optional training-time topk

  void validate() const;
  bool operator==(const RegularizerConfig&) const = default;
};

enum class FlopsGradientMode { sparse, dense };

struct FlopsResult {
  double value = 0.0;
  /// d value / d w_j^i for each batch vector j, at its stored positions.
  std::vector<TermGradient> gradient;
  /// N x |V|, filled only in dense mode. Every row equals 2 * a_bar / N.
  Eigen::MatrixXd dense_gradient;
};

/// Sum over vocabulary of the squared mean batch activation. The true gradient
/// is dense in a_bar; sparse mode reports it only where each vector is nonzero.
FlopsResult flops_penalty(std::span<const SparseVector> batch, std::size_t vocab_size,
                          FlopsGradientMode mode = FlopsGradientMode::sparse);

struct LpResult {
  double value = 0.0;
  TermGradient gradient;
};

/// p = 1: sum of weights, gradient 1. p = 2: Euclidean norm, gradient w / norm
/// (zero at the zero vector).
LpResult lp_penalty(const SparseVector& v, int p);

/// Keeps the k largest weights, ties to the smaller term id.
SparseVector topk_prune(const SparseVector& v, std::size_t k);

}  // namespace lsr
