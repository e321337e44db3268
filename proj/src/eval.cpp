#include "lsr/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "lsr/core_types.hpp"
#include "lsr/error.hpp"

namespace lsr {

int Qrels::grade(const std::string& qid, const std::string& doc_id) const {
  auto q = judgments.find(qid);
  if (q == judgments.end()) return 0;
  auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

namespace {

void check_k(std::size_t k) {
  if (k < 1) throw ValidationError("metric cutoff k must be >= 1");
}

/// Averages `per_query` over queries in qrels with at least one doc of grade >= 1.
double mean_over_judged(const RunFile& run, const Qrels& qrels,
                        const std::function<double(const std::vector<ScoredDoc>&, const std::map<std::string, int>&)>& per_query) {
  static const std::vector<ScoredDoc> kEmpty;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [qid, judged] : qrels.judgments) {
    const bool any_relevant = std::any_of(judged.begin(), judged.end(), [](const auto& e) { return e.second >= 1; });
    if (!any_relevant) continue;
    auto it = run.rankings.find(qid);
    total += per_query(it == run.rankings.end() ? kEmpty : it->second, judged);
    ++n;
  }
  if (n == 0) throw ValidationError("no query has a relevant judgment; metric undefined");
  return total / static_cast<double>(n);
}

int grade_in(const std::map<std::string, int>& judged, const std::string& doc) {
  auto it = judged.find(doc);
  return it == judged.end() ? 0 : it->second;
}

}  // namespace

double mrr_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  check_k(k);
  return mean_over_judged(run, qrels, [k](const auto& ranking, const auto& judged) {
    for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
      if (grade_in(judged, ranking[r].doc_id) >= 1) return 1.0 / static_cast<double>(r + 1);
    }
    return 0.0;
  });
}

double ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  check_k(k);
  auto gain = [](int g) { return g > 0 ? std::exp2(static_cast<double>(g)) - 1.0 : 0.0; };
  auto discount = [](std::size_t r) { return std::log2(static_cast<double>(r) + 2.0); };
  return mean_over_judged(run, qrels, [&](const auto& ranking, const auto& judged) {
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) dcg += gain(grade_in(judged, ranking[r].doc_id)) / discount(r);
    std::vector<int> ideal;
    for (const auto& [doc, g] : judged) ideal.push_back(g);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ideal.size()); ++r) idcg += gain(ideal[r]) / discount(r);
    return idcg > 0.0 ? dcg / idcg : 0.0;
  });
}

double recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  check_k(k);
  return mean_over_judged(run, qrels, [k](const auto& ranking, const auto& judged) {
    std::size_t relevant = 0;
    for (const auto& [doc, g] : judged) relevant += g >= 1 ? 1 : 0;
    std::size_t found = 0;
    for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) found += grade_in(judged, ranking[r].doc_id) >= 1 ? 1 : 0;
    return static_cast<double>(found) / static_cast<double>(relevant);
  });
}

// TREC text formats -----------------------------------------------------------

namespace {

std::vector<std::string> fields(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string f;
  while (ss >> f) out.push_back(f);
  return out;
}

template <typename T>
T parse_number(const std::string& s, const std::string& where) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ValidationError(where + ": bad number '" + s + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

RunFile read_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  RunFile run;
  std::string line;
  std::size_t line_no = 0;
  bool tag_set = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto f = fields(line);
    if (f.empty()) continue;
    if (f.size() != 6) throw ValidationError(where + ": expected 'qid Q0 docid rank score tag'");
    const auto rank = parse_number<std::size_t>(f[3], where);
    const auto score = parse_number<double>(f[4], where);
    auto& ranking = run.rankings[f[0]];
    if (rank != ranking.size() + 1) {
      throw ValidationError(where + ": rank " + f[3] + " breaks contiguous ranking (expected " +
                            std::to_string(ranking.size() + 1) + ")");
    }
    if (!ranking.empty() && score > ranking.back().score) {
      throw ValidationError(where + ": score increases down the ranking");
    }
    ranking.push_back({f[2], score});
    if (!tag_set) {
      run.tag = f[5];
      tag_set = true;
    }
  }
  return run;
}

std::string format_run(const RunFile& run) {
  std::string out;
  for (const auto& [qid, ranking] : run.rankings) {
    for (std::size_t r = 0; r < ranking.size(); ++r) {
      out += qid;
      out += " Q0 ";
      out += ranking[r].doc_id;
      out += ' ';
      out += std::to_string(r + 1);
      out += ' ';
      out += format_double(ranking[r].score);
      out += ' ';
      out += run.tag;
      out += '\n';
    }
  }
  return out;
}

void write_run(const std::filesystem::path& path, const RunFile& run) { write_file_atomic(path, format_run(run)); }

Qrels read_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto f = fields(line);
    if (f.empty()) continue;
    if (f.size() != 4) throw ValidationError(where + ": expected 'qid 0 docid grade'");
    const int grade = parse_number<int>(f[3], where);
    if (grade < 0) throw ValidationError(where + ": negative relevance grade");
    qrels.judgments[f[0]][f[2]] = grade;
  }
  return qrels;
}

void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
  std::string out;
  for (const auto& [qid, docs] : qrels.judgments) {
    for (const auto& [doc, g] : docs) out += qid + " 0 " + doc + " " + std::to_string(g) + "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace lsr
