#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lsr/core_types.hpp"
#include "lsr/encoders.hpp"
#include "lsr/method_config.hpp"

namespace lsr {

struct TeacherScores {
  double positive = 0.0;
  std::vector<double> negatives;
};

struct TrainingTriple {
  TokenizedText query;
  TokenizedText positive;
  std::vector<TokenizedText> negatives;
  std::optional<TeacherScores> teacher;
};

using TermLabels = std::map<TermId, double>;

struct TermRecallLabels {
  std::map<std::string, TermLabels> per_doc;
  std::vector<std::string> warnings;
};

/// For each doc: fraction of its relevant queries that contain each term.
TermRecallLabels compute_term_recall(const std::map<std::string, std::vector<TokenizedText>>& relevant_queries);

struct TermMseResult {
  double value = 0.0;
  TermGradient gradient;  // at every labeled term
};

/// Mean squared error over labeled terms; unlabeled predictions are ignored.
TermMseResult term_mse_loss(const SparseVector& pred, const TermLabels& labels);

template <typename Scalar>
struct ContrastiveResult {
  Scalar value{};
  Scalar grad_positive{};
  std::vector<Scalar> grad_negatives;
};

/// -log softmax of the positive score among positive and negatives,
/// max-shifted for stability.
template <typename Scalar>
ContrastiveResult<Scalar> contrastive_nll(Scalar positive, std::span<const Scalar> negatives) {
  if (negatives.empty()) throw ValidationError("contrastive loss needs at least one negative");
  Scalar shift = positive;
  for (Scalar s : negatives) shift = std::max(shift, s);
  Scalar z = std::exp(positive - shift);
  for (Scalar s : negatives) z += std::exp(s - shift);
  ContrastiveResult<Scalar> out;
  const Scalar log_z = std::log(z) + shift;
  out.value = log_z - positive;
  out.grad_positive = std::exp(positive - log_z) - Scalar(1);
  out.grad_negatives.reserve(negatives.size());
  for (Scalar s : negatives) out.grad_negatives.push_back(std::exp(s - log_z));
  return out;
}

template <typename Scalar>
struct MarginMseResult {
  Scalar value{};
  std::vector<Scalar> grad_margins;  // d value / d student margin
};

/// Mean over pairs of (student margin - teacher margin)^2, where a margin is
/// s(q, positive) - s(q, negative).
template <typename Scalar>
MarginMseResult<Scalar> margin_mse_loss(std::span<const Scalar> student, std::span<const Scalar> teacher) {
  if (student.size() != teacher.size()) {
    throw ValidationError("margin MSE: " + std::to_string(student.size()) + " student margins vs " +
                          std::to_string(teacher.size()) + " teacher margins");
  }
  if (student.empty()) throw ValidationError("margin MSE needs at least one margin");
  const Scalar n = static_cast<Scalar>(student.size());
  MarginMseResult<Scalar> out;
  out.grad_margins.reserve(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    const Scalar diff = student[i] - teacher[i];
    out.value += diff * diff / n;
    out.grad_margins.push_back(Scalar(2) * diff / n);
  }
  return out;
}

/// Doc text with term labels for term-level supervision.
struct TermTarget {
  TokenizedText doc;
  TermLabels labels;
};

struct TrainingData {
  std::vector<TrainingTriple> triples;
  std::vector<TermTarget> term_targets;
  /// Needed only when a fixed side uses a bm25 encoder.
  std::optional<CorpusStats> stats;
};

struct TrainOptions {
  std::size_t steps = 100;
  double learning_rate = 0.05;
  std::uint64_t seed = 42;
  /// Overrides both sides' regularizer weight when set (flops / l1 / l2).
  std::optional<double> regularizer_weight;
  /// A side given here keeps these parameters: it is encoded once and not
  /// updated. Not allowed with shared heads.
  std::optional<HeadParameters> frozen_query_head;
  std::optional<HeadParameters> frozen_doc_head;
};

/// Query and document heads. With shared heads both members hold the same
/// parameters. A side whose encoder has no head keeps std::nullopt.
struct HeadPair {
  std::optional<HeadParameters> query;
  std::optional<HeadParameters> doc;
  bool shared = false;
};

/// Fresh heads for a config, seeded from `seed`.
HeadPair initial_heads(const MethodConfig& config, Eigen::Index dim, Eigen::Index vocab_size, std::uint64_t seed);

struct TrainResult {
  HeadPair heads;
  std::vector<double> loss_history;  // total objective before each update
  std::vector<double> supervision_history;
};

/// Full-batch Adam on the head parameters with the backbone
/// frozen. Regularizer weights ramp up quadratically over the first third of
/// the steps. Throws ValidationError when no side is left to update.
TrainResult train_heads(const MethodConfig& config, const TrainingData& data, const EmbeddingSource& embeddings,
                        const TrainOptions& options);

}  // namespace lsr
