#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lsr/encoders.hpp"
#include "lsr/regularization.hpp"

namespace lsr {

struct EncoderConfig {
  EncoderKind kind = EncoderKind::binary;
  HeadSettings head;

  bool operator==(const EncoderConfig&) const = default;
};

enum class LossKind { none, contrastive, margin_mse, term_mse };
enum class LabelLevel { none, passage, term };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LabelLevel level);
LabelLevel parse_label_level(std::string_view name);

struct SupervisionConfig {
  LossKind loss = LossKind::none;
  LabelLevel level = LabelLevel::none;
  std::string negatives = "none";  // none | random | bm25 | bm25_multi | hard
  std::string label_type = "none";  // none | human | teacher
  std::size_t num_negatives = 1;
  /// Contrastive only: positives of this many following triples join each
  /// triple's negatives.
  std::size_t in_batch_negatives = 0;
  std::filesystem::path triples;
  std::filesystem::path train_queries;
  std::filesystem::path train_qrels;
  std::size_t steps = 0;
  double learning_rate = 0.0;

  bool operator==(const SupervisionConfig&) const = default;
};

struct QuantizationConfig {
  bool exact = false;
  int bits = 8;

  bool operator==(const QuantizationConfig&) const = default;
};

struct BackboneConfig {
  std::string kind = "toy";  // toy | file
  Eigen::Index dim = 32;
  Eigen::Index topic_block = 0;
  double topic_mix = 0.4;
  double context_mix = 0.5;
  std::filesystem::path doc_embeddings;
  std::filesystem::path query_embeddings;
  std::filesystem::path input_embeddings;

  bool operator==(const BackboneConfig&) const = default;
};

struct PathsConfig {
  std::filesystem::path vocab;
  std::filesystem::path collection;
  std::filesystem::path queries;
  std::filesystem::path qrels;
  std::filesystem::path expansions;
  std::filesystem::path heads;  // optional trained heads

  bool operator==(const PathsConfig&) const = default;
};

/// One learned-sparse-retrieval method: encoders on both sides, regularizer
/// per side, supervision, and the artifacts it runs over.
struct MethodConfig {
  std::string name;
  std::string description;
  EncoderConfig query_encoder;
  EncoderConfig doc_encoder;
  bool shared_heads = false;
  RegularizerConfig query_regularizer;
  RegularizerConfig doc_regularizer;
  SupervisionConfig supervision;
  QuantizationConfig quantization;
  Bm25Params bm25;
  std::size_t retrieval_depth = 1000;
  BackboneConfig backbone;
  PathsConfig paths;
  std::uint64_t seed = 42;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  bool operator==(const MethodConfig&) const = default;
};

/// Relative paths inside the document are resolved against `base_dir`.
MethodConfig parse_method_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
MethodConfig load_method_config(const std::filesystem::path& path);
std::string dump_method_config(const MethodConfig& config);

}  // namespace lsr
