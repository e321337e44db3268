#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "lsr/core_types.hpp"
#include "lsr/sparse_vector.hpp"

namespace lsr {

enum class Activation { relu, softplus };

template <typename Scalar>
Scalar softplus(Scalar x) {
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar activate(Activation act, Scalar x) {
  return act == Activation::relu ? std::max(x, Scalar(0)) : softplus(x);
}

/// ReLU'(0) is taken as 0.
template <typename Scalar>
Scalar activate_derivative(Activation act, Scalar x) {
  return act == Activation::relu ? (x > Scalar(0) ? Scalar(1) : Scalar(0)) : sigmoid(x);
}

enum class EncoderKind { binary, mlp, exp_mlp, mlm, cls_mlm, bm25_query, bm25_doc };

std::string_view to_string(EncoderKind kind);
std::string_view to_string(Activation act);
EncoderKind parse_encoder_kind(std::string_view name);
Activation parse_activation(std::string_view name);

/// True for kinds whose output depends on trainable head parameters.
bool is_trainable(EncoderKind kind);
/// True for kinds that may emit weight on terms absent from the input.
bool may_expand(EncoderKind kind);

/// Backbone outputs consumed by the neural heads. The vocabulary input
/// embedding table is shared between bundles.
struct EmbeddingBundle {
  Eigen::MatrixXd ctx;  // L x d, one row per input position
  Eigen::VectorXd cls;  // d
  std::shared_ptr<const Eigen::MatrixXd> input;  // |V| x d, may be null for MLP-only use

  Eigen::Index dim() const { return cls.size(); }
};

struct HeadSettings {
  Activation activation = Activation::relu;
  bool mlp_log_normalize = true;
  bool use_quality_heads = false;

  bool operator==(const HeadSettings&) const = default;
};

/// Trainable head tensors plus the fixed settings that select the formula
/// variant. A gradient is represented with the same type (see HeadGradient).
struct HeadParameters {
  Eigen::VectorXd mlp_weight;  // d
  double mlp_bias = 0.0;
  Eigen::VectorXd mlm_bias;  // |V|
  Eigen::VectorXd quality_weight;  // d, q(t) head over the CLS embedding
  double quality_bias = 0.0;
  Eigen::VectorXd importance_weight;  // d, g(t_j) head over token embeddings
  double importance_bias = 0.0;
  HeadSettings settings;

  Eigen::Index dim() const { return mlp_weight.size(); }
  Eigen::Index vocab_size() const { return mlm_bias.size(); }

  /// Deterministic initialization. MLP weights are small normals with a unit
  /// bias; MLM biases start at zero; quality heads start at output 1.
  static HeadParameters initial(Eigen::Index dim, Eigen::Index vocab_size, HeadSettings settings,
                                std::uint64_t seed);

  HeadParameters zeros_like() const;
  /// this += scale * other (tensors only; settings untouched).
  void add_scaled(const HeadParameters& other, double scale);
  void validate(Eigen::Index dim, Eigen::Index vocab_size) const;

  bool operator==(const HeadParameters& o) const;
};

using HeadGradient = HeadParameters;

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;

  void validate() const;
  bool operator==(const Bm25Params&) const = default;
};

// Encoders ---------------------------------------------------------------

SparseVector encode_binary(const TokenizedText& text);

/// Sum over positions of log(act(h_j W + b) + 1) per input term, or of the
/// raw activation when log normalization is off.
SparseVector encode_mlp(const TokenizedText& text, const EmbeddingBundle& emb, const HeadParameters& head);

using ExpansionMap = std::unordered_map<std::string, std::vector<TermId>>;

/// Appends expansion terms not already present. A missing doc id leaves the
/// text unchanged and appends a message to `warnings` when given.
TokenizedText expand_text(const TokenizedText& text, const ExpansionMap& expansions,
                          std::vector<std::string>* warnings = nullptr);

/// q(t) * log(1 + max_j act(h_j . e_i + b_i) g(t_j)) for every vocabulary term.
SparseVector encode_mlm(const TokenizedText& text, const EmbeddingBundle& emb, const HeadParameters& head);

/// act(h_0 . e_i + b_i) for every vocabulary term.
SparseVector encode_cls_mlm(const TokenizedText& text, const EmbeddingBundle& emb, const HeadParameters& head);

/// Robertson/Sparck-Jones IDF with +1 inside the log; never negative.
double bm25_idf(std::size_t num_docs, std::uint32_t df);

SparseVector encode_bm25_query(const TokenizedText& text, const CorpusStats& stats);
SparseVector encode_bm25_doc(const TokenizedText& text, const CorpusStats& stats, const Bm25Params& params);

inline double score(const SparseVector& q, const SparseVector& d) { return dot(q, d); }

// Trainable forward/backward ---------------------------------------------

/// Per-text quantities that do not depend on head parameters, computed once
/// so repeated forward/backward passes only touch the head math.
struct PreparedMlp {
  std::vector<TermId> tokens;
  Eigen::MatrixXd ctx;
};
/// MLM without quality heads: since b_i is shared by all positions,
/// max_j act(x_ji + b_i) = act(max_j x_ji + b_i). Keeps only the column max.
struct PreparedMlmMax {
  Eigen::VectorXd column_max;  // |V|
};
struct PreparedMlmFull {
  Eigen::MatrixXd projection;  // L x |V|, h_j . e_i
  Eigen::MatrixXd ctx;
  Eigen::VectorXd cls;
};
struct PreparedClsMlm {
  Eigen::VectorXd projection;  // |V|, h_0 . e_i
};
using PreparedText = std::variant<PreparedMlp, PreparedMlmMax, PreparedMlmFull, PreparedClsMlm>;

/// `kind` must be trainable (exp_mlp texts are expected to be expanded already).
PreparedText prepare_text(EncoderKind kind, const TokenizedText& text, const EmbeddingBundle& emb,
                          const HeadSettings& settings);

SparseVector forward(const PreparedText& prepared, const HeadParameters& head);

/// Accumulates into `grad` the gradient of sum_i upstream_i * w_i with respect
/// to the head tensors. `upstream` is indexed by output term.
void backward(const PreparedText& prepared, const HeadParameters& head, const TermGradient& upstream,
              HeadGradient& grad);

// Backbones --------------------------------------------------------------

enum class TextSide { query, doc };

class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  virtual EmbeddingBundle embed(const TokenizedText& text, TextSide side) const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual Eigen::Index vocab_size() const = 0;
};

struct ToyBackboneOptions {
  Eigen::Index vocab_size = 0;
  Eigen::Index dim = 32;
  std::uint64_t seed = 0;
  /// When > 0, consecutive blocks of this many term ids share a latent topic
  /// direction, so their input embeddings are correlated.
  Eigen::Index topic_block = 0;
  double topic_mix = 0.4;
  double context_mix = 0.5;
};

/// Deterministic stand-in for a transformer encoder. e_i depends on (i, seed);
/// h_j = e_{t_j} + context_mix * n_j where n_j depends on
/// (t_{j-1}, t_j, t_{j+1}, j mod 2, seed); h_0 is the mean of the h_j.
class ToyBackbone final : public EmbeddingSource {
 public:
  explicit ToyBackbone(ToyBackboneOptions options);

  EmbeddingBundle embed(const TokenizedText& text) const;
  EmbeddingBundle embed(const TokenizedText& text, TextSide) const override { return embed(text); }
  Eigen::Index dim() const override { return options_.dim; }
  Eigen::Index vocab_size() const override { return options_.vocab_size; }
  const std::shared_ptr<const Eigen::MatrixXd>& input_embeddings() const { return input_; }

 private:
  ToyBackboneOptions options_;
  std::shared_ptr<const Eigen::MatrixXd> input_;
};

EmbeddingBundle toy_backbone(const TokenizedText& text, Eigen::Index vocab_size, Eigen::Index dim,
                             std::uint64_t seed);

}  // namespace lsr
