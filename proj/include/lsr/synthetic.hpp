#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lsr/core_types.hpp"
#include "lsr/eval.hpp"
#include "lsr/io.hpp"

namespace lsr {

/// Generator for the bundled desk-scale task. Terms are grouped in topic
/// blocks of `topic_size` consecutive ids (matching ToyBackboneOptions::topic_block);
/// the first `background_topics` blocks act as function words.
struct SyntheticOptions {
  std::uint64_t seed = 7;
  std::size_t num_topics = 50;
  std::size_t topic_size = 20;
  std::size_t background_topics = 2;
  std::size_t num_docs = 600;
  std::size_t num_queries = 100;
  std::size_t num_train_queries = 500;
  std::size_t min_doc_len = 20;
  std::size_t max_doc_len = 50;
  std::size_t negatives_per_triple = 4;
};

struct SyntheticTask {
  Vocabulary vocab;
  std::vector<RawRecord> docs;
  std::vector<RawRecord> queries;
  std::vector<RawRecord> train_queries;
  Qrels qrels;
  Qrels train_qrels;
  std::vector<TripleRecord> bm25_triples;  // BM25-mined negatives, no teacher
  std::vector<TripleRecord> hard_triples;  // teacher-mined negatives with teacher scores
  std::vector<RawRecord> expansions_dt5q;  // a few in-topic terms per doc
  std::vector<RawRecord> expansions_tilde;  // more terms, including the secondary topic
};

SyntheticTask make_synthetic_task(const SyntheticOptions& options = {});

/// Writes vocab.txt, collection.tsv, queries.tsv, qrels.txt, train_queries.tsv,
/// train_qrels.txt, triples.bm25.jsonl, triples.hard.jsonl,
/// expansions.dt5q.tsv and expansions.tilde.tsv into `dir`.
void write_synthetic_task(const SyntheticTask& task, const std::filesystem::path& dir);

}  // namespace lsr
