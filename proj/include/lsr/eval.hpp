#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lsr/index.hpp"

namespace lsr {

/// query id -> doc id -> relevance grade (>= 0).
struct Qrels {
  std::map<std::string, std::map<std::string, int>> judgments;

  int grade(const std::string& qid, const std::string& doc_id) const;
  bool operator==(const Qrels&) const = default;
};

/// query id -> ranking, best first. Rank is the position + 1.
struct RunFile {
  std::map<std::string, std::vector<ScoredDoc>> rankings;
  std::string tag = "lsr";

  bool operator==(const RunFile&) const = default;
};

/// Reciprocal rank of the first doc with grade >= 1 within the top k, averaged
/// over queries that have at least one relevant judgment.
double mrr_at_k(const RunFile& run, const Qrels& qrels, std::size_t k);

/// Gain 2^g - 1, discount log2(rank + 1); queries with zero ideal DCG excluded.
double ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k);

double recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k);

/// `qid Q0 docid rank score tag`. Rejects rank gaps and increasing scores.
RunFile read_run(const std::filesystem::path& path);
void write_run(const std::filesystem::path& path, const RunFile& run);
std::string format_run(const RunFile& run);

/// `qid 0 docid grade`.
Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(const std::filesystem::path& path, const Qrels& qrels);

}  // namespace lsr
