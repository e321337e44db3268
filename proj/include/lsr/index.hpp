#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lsr/sparse_vector.hpp"

namespace lsr {

using DocOrdinal = std::uint32_t;

struct Posting {
  DocOrdinal doc = 0;
  /// Integer-valued in quantized mode, the raw weight in exact mode.
  double impact = 0.0;

  bool operator==(const Posting&) const = default;
};

struct Quantization {
  bool exact = true;
  int bits = 8;

  static Quantization exact_mode() { return {true, 8}; }
  static Quantization with_bits(int bits) { return {false, bits}; }
  bool operator==(const Quantization&) const = default;
};

struct DocVector {
  std::string id;
  SparseVector vector;
};

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;

  bool operator==(const ScoredDoc&) const = default;
};

/// Descending score, then ascending doc id.
bool ranks_before(const ScoredDoc& a, const ScoredDoc& b);

/// Term-partitioned impact index. Posting lists are sorted by doc ordinal.
class ImpactIndex {
 public:
  ImpactIndex() = default;

  std::size_t vocab_size() const { return postings_.size(); }
  std::size_t num_docs() const { return doc_table_.size(); }
  const Quantization& quantization() const { return quantization_; }
  /// Largest raw weight seen at build time (0 for an empty index).
  double max_weight() const { return max_weight_; }
  /// Multiplier mapping quantized scores back to the raw weight scale.
  double dequantize_factor() const;

  std::span<const Posting> postings(TermId term) const;
  const std::string& doc_id(DocOrdinal ord) const { return doc_table_.at(ord); }
  std::span<const std::string> doc_table() const { return doc_table_; }
  std::size_t total_postings() const;
  /// Approximate in-memory size of postings and doc table.
  std::size_t bytes_estimate() const;

  void save(const std::filesystem::path& dir) const;
  static ImpactIndex load(const std::filesystem::path& dir);

  bool operator==(const ImpactIndex&) const = default;

 private:
  friend ImpactIndex build_index(std::span<const DocVector>, std::size_t, Quantization);

  std::vector<std::vector<Posting>> postings_;
  std::vector<std::string> doc_table_;
  Quantization quantization_;
  double max_weight_ = 0.0;
};

/// Quantized impact = round_half_up(w * (2^bits - 1) / max_w); zero impacts are
/// dropped. Throws ValidationError for duplicate doc ids or out-of-vocabulary terms.
ImpactIndex build_index(std::span<const DocVector> docs, std::size_t vocab_size, Quantization quantization);

std::uint32_t quantize_impact(double weight, double max_weight, int bits);

struct SearchResult {
  std::vector<ScoredDoc> ranking;
  std::uint64_t ops_count = 0;  // multiply-accumulates over postings
};

/// Term-at-a-time over a dense accumulator. Query terms are processed in
/// ascending term id, so exact-mode scores match `dot` bit for bit.
SearchResult index_search(const ImpactIndex& index, const SparseVector& query, std::size_t k);

/// Top-k by exact dot product over every document. Zero scores are excluded.
std::vector<ScoredDoc> exhaustive_search(const SparseVector& query, std::span<const DocVector> docs, std::size_t k);

}  // namespace lsr
