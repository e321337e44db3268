#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lsr/sparse_vector.hpp"

namespace lsr {

/// Dense bijection between term strings and ids in [0, |V|).
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Adds `term` if unseen and returns its id.
  TermId add(std::string_view term);

  std::optional<TermId> find(std::string_view term) const;
  /// Throws ValidationError for unknown terms.
  TermId id(std::string_view term) const;
  const std::string& term(TermId id) const { return terms_.at(id); }

  std::size_t size() const { return terms_.size(); }
  std::span<const std::string> terms() const { return terms_; }

  bool operator==(const Vocabulary& other) const { return terms_ == other.terms_; }

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, TermId> term_to_id_;
};

/// Each distinct token once, ids in first-seen order.
Vocabulary build_vocabulary(std::span<const std::string> tokens);

struct TokenizedText {
  std::string doc_id;
  std::vector<TermId> token_ids;

  std::size_t length() const { return token_ids.size(); }
  bool operator==(const TokenizedText&) const = default;
};

struct CorpusStats {
  std::size_t num_docs = 0;
  std::vector<std::uint32_t> doc_freq;  // indexed by term id; terms past the end have df 0
  double avg_doc_len = 0.0;
  bool degenerate = true;  // set when avg_doc_len is unusable (no docs, or all empty)

  std::uint32_t df(TermId t) const { return t < doc_freq.size() ? doc_freq[t] : 0u; }
  bool operator==(const CorpusStats&) const = default;
};

CorpusStats compute_corpus_stats(std::span<const TokenizedText> docs);

/// Checks every token id against the vocabulary size.
void validate_text(const TokenizedText& text, std::size_t vocab_size);
void validate_vector(const SparseVector& v, std::size_t vocab_size);

// Text formats -------------------------------------------------------------

/// `id<TAB>tok tok tok` record with raw token strings.
struct RawRecord {
  std::string id;
  std::vector<std::string> tokens;
};

std::vector<RawRecord> read_tsv_records(const std::filesystem::path& path);
void write_tsv_records(const std::filesystem::path& path, std::span<const RawRecord> records);

/// Maps raw tokens through the vocabulary; unknown tokens throw ValidationError.
TokenizedText tokenize(const RawRecord& record, const Vocabulary& vocab);
std::vector<TokenizedText> read_collection(const std::filesystem::path& path, const Vocabulary& vocab);

/// One term per line; line number is the id.
Vocabulary read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace lsr
