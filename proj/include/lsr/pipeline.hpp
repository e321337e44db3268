#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lsr/core_types.hpp"
#include "lsr/encoders.hpp"
#include "lsr/eval.hpp"
#include "lsr/index.hpp"
#include "lsr/method_config.hpp"
#include "lsr/supervision.hpp"

namespace lsr {

/// Worker count: LSR_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads. The first
/// exception thrown by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Backbone for a config: the toy backbone seeded from `seed`, or embedding
/// dump files.
std::unique_ptr<EmbeddingSource> make_embedding_source(const MethodConfig& config, std::size_t vocab_size,
                                                       std::uint64_t seed);

/// Artifacts named by a config, loaded once and shared by every stage.
struct Workspace {
  MethodConfig config;
  std::uint64_t seed = 42;
  Vocabulary vocab;
  std::vector<TokenizedText> docs;
  std::vector<TokenizedText> queries;
  std::optional<Qrels> qrels;
  ExpansionMap expansions;
  CorpusStats stats;  // over the unexpanded collection
  std::shared_ptr<const EmbeddingSource> embeddings;
  std::vector<std::string> warnings;

  /// Loads every path the config names. Collection, queries and qrels are
  /// optional so single-stage commands can run on partial configs.
  static Workspace load(const MethodConfig& config, std::uint64_t seed);

  /// Doc text as its encoder sees it (expanded for exp_mlp).
  TokenizedText doc_input(const TokenizedText& doc, std::vector<std::string>* warnings = nullptr) const;
};

/// Triples or term targets for the config's supervision section.
TrainingData load_training_data(const Workspace& ws);

struct PipelineOptions {
  std::optional<double> regularizer_weight;
  /// Overrides supervision.steps when set.
  std::optional<std::size_t> steps;
  /// Sides held at these parameters while the other side trains.
  std::optional<HeadParameters> frozen_query_head;
  std::optional<HeadParameters> frozen_doc_head;
};

/// Heads from `paths.heads` when set, else trained when the config has a loss
/// and steps, else the initial heads.
struct HeadSource {
  HeadPair heads;
  std::string origin;  // "file", "trained", "initial", or "none" when neither side has a head
  std::optional<TrainResult> training;
};
HeadSource obtain_heads(const Workspace& ws, const PipelineOptions& options = {});

struct EncodeResult {
  std::vector<DocVector> vectors;
  std::vector<std::string> warnings;
};

/// Encodes texts on one side, applying inference-time top-k pruning. For doc
/// encoders that may not expand, every output term is checked against the
/// (expanded) input; a violation throws.
EncodeResult encode_texts(const Workspace& ws, const HeadPair& heads, TextSide side,
                          std::span<const TokenizedText> texts);

struct RunStats {
  std::uint64_t ops_count = 0;
  double mean_query_nnz = 0.0;
  double mean_doc_nnz = 0.0;
  double doc_weight_variance = 0.0;  // population variance over all stored doc weights
  std::size_t postings = 0;
};

struct SearchOutput {
  RunFile run;
  std::uint64_t ops_count = 0;
  std::vector<std::size_t> query_nnz;
};

SearchOutput search_all(const ImpactIndex& index, std::span<const DocVector> queries, std::size_t k,
                        const std::string& tag);

/// The headline metrics: mrr@10, ndcg@10, recall@100, recall@1000.
std::map<std::string, double> standard_metrics(const RunFile& run, const Qrels& qrels);

double weight_variance(std::span<const DocVector> docs);

struct PipelineReport {
  std::string name;
  std::map<std::string, double> metrics;
  RunStats stats;
  std::string head_origin;
  std::optional<double> final_loss;
  HeadPair heads;
  RunFile run;
  std::vector<std::string> warnings;
};

/// encode -> index -> search -> eval for one config on an already-loaded workspace.
PipelineReport run_pipeline(const Workspace& ws, const PipelineOptions& options = {});
PipelineReport run_method(const MethodConfig& config, std::uint64_t seed, const PipelineOptions& options = {});

// Ablation --------------------------------------------------------------

/// `component=value` with component one of query_encoder, doc_encoder,
/// regularizer, query_regularizer, doc_regularizer, shared_heads.
///   encoder values:     binary | mlp | exp_mlp | mlm | cls_mlm | bm25_query | bm25_doc
///   regularizer values: none | flops:W | l1:W | l2:W | topk:K
///   shared_heads:       true | false
struct Toggle {
  std::string component;
  std::string value;

  std::string label() const { return component + "=" + value; }
};

Toggle parse_toggle(std::string_view text);

/// Applies one toggle. Throws ValidationError when the toggle is a no-op or
/// would leave an invalid config.
///
/// A toggle that touches only one side (query_encoder, query_regularizer,
/// doc_encoder, doc_regularizer) runs with the other side's trained head from
/// the base run frozen; that side's vectors match the base row.
MethodConfig apply_toggle(const MethodConfig& base, const Toggle& toggle);

struct AblationReport {
  PipelineReport base;
  std::vector<std::pair<Toggle, PipelineReport>> variants;
};

AblationReport run_ablation(const MethodConfig& base, std::span<const Toggle> toggles, std::uint64_t seed,
                            const PipelineOptions& options = {});

/// Plain-text table with one row per report.
std::string format_reports_text(std::span<const PipelineReport> reports);
std::string format_ablation_text(const AblationReport& report);
std::string format_ablation_json(const AblationReport& report);
std::string format_report_json(const PipelineReport& report);

}  // namespace lsr
