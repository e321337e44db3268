#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsr/core_types.hpp"
#include "lsr/encoders.hpp"
#include "lsr/index.hpp"
#include "lsr/supervision.hpp"

namespace lsr {

// Encoded vectors: one JSON object per line,
//   {"id": "...", "vector": {"term": weight, ...}}
// Keys are vocabulary terms. On read, a key that is not a term but parses as
// an integer is taken as a term id.
std::string format_vector_record(const std::string& id, const SparseVector& v, const Vocabulary& vocab);
void write_vectors(const std::filesystem::path& path, std::span<const DocVector> vectors, const Vocabulary& vocab);
std::vector<DocVector> read_vectors(const std::filesystem::path& path, const Vocabulary& vocab);

// Expansion terms: `doc_id<TAB>term term term`.
ExpansionMap read_expansions(const std::filesystem::path& path, const Vocabulary& vocab);

// Triples: one JSON object per line,
//   {"q": id, "pos": id, "negs": [ids], "teacher": {"pos": s, "negs": [s...]}}
struct TripleRecord {
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;
  std::optional<TeacherScores> teacher;
};
std::vector<TripleRecord> read_triples(const std::filesystem::path& path);
void write_triples(const std::filesystem::path& path, std::span<const TripleRecord> triples);

/// Resolves triple ids against query and document texts; unknown ids throw.
std::vector<TrainingTriple> resolve_triples(std::span<const TripleRecord> records,
                                            const std::unordered_map<std::string, const TokenizedText*>& queries,
                                            const std::unordered_map<std::string, const TokenizedText*>& docs);

// Head parameters: JSON record of named tensors with declared shapes; see
// docs/formats.md.
std::string format_heads(const HeadPair& heads);
HeadPair parse_heads(std::string_view json_text);
void write_heads(const std::filesystem::path& path, const HeadPair& heads);
HeadPair read_heads(const std::filesystem::path& path);

// Backbone dumps for external encoders.
//   contextual file, one JSON object per line:
//     {"id": "...", "L": L, "d": d, "h": [L*d row-major], "h0": [d]}   (h0 optional)
//   input embedding file, one JSON object:
//     {"vocab_size": V, "d": d, "e": [V*d row-major]}
void write_contextual_embeddings(const std::filesystem::path& path, std::span<const TokenizedText> texts,
                                 const EmbeddingSource& source, TextSide side);
void write_input_embeddings(const std::filesystem::path& path, const Eigen::MatrixXd& input);

/// Embedding source backed by dump files. h0 defaults to the mean of h when a
/// record omits it.
class FileEmbeddings final : public EmbeddingSource {
 public:
  FileEmbeddings(const std::filesystem::path& doc_file, const std::filesystem::path& query_file,
                 const std::filesystem::path& input_file);

  EmbeddingBundle embed(const TokenizedText& text, TextSide side) const override;
  Eigen::Index dim() const override { return dim_; }
  Eigen::Index vocab_size() const override { return input_ ? input_->rows() : 0; }

 private:
  struct Record {
    Eigen::MatrixXd h;
    Eigen::VectorXd h0;
  };
  std::unordered_map<std::string, Record> docs_;
  std::unordered_map<std::string, Record> queries_;
  std::shared_ptr<const Eigen::MatrixXd> input_;
  Eigen::Index dim_ = 0;
};

}  // namespace lsr
