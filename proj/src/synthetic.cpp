#include "lsr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <set>

#include "lsr/encoders.hpp"
#include "lsr/error.hpp"
#include "lsr/index.hpp"
#include "lsr/random.hpp"

namespace lsr {

namespace {

struct DocPlan {
  std::size_t topic = 0;
  std::optional<std::size_t> secondary;
  std::vector<TermId> tokens;
};

std::string term_name(std::size_t topic, std::size_t word) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%02zuw%02zu", topic, word);
  return buf;
}

/// Index drawn with probability proportional to 1 / (rank + 1).
std::size_t zipf(CounterRng& rng, std::size_t n) {
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) total += 1.0 / static_cast<double>(r + 1);
  double u = rng.uniform() * total;
  for (std::size_t r = 0; r < n; ++r) {
    u -= 1.0 / static_cast<double>(r + 1);
    if (u <= 0.0) return r;
  }
  return n - 1;
}

class Generator {
 public:
  explicit Generator(const SyntheticOptions& o) : o_(o) {
    if (o.background_topics >= o.num_topics) throw ValidationError("synthetic: background_topics must be < num_topics");
    if (o.topic_size < 4) throw ValidationError("synthetic: topic_size must be >= 4");
    if (o.min_doc_len == 0 || o.min_doc_len > o.max_doc_len) throw ValidationError("synthetic: bad doc length range");
    if (o.num_docs == 0) throw ValidationError("synthetic: num_docs must be > 0");
  }

  SyntheticTask run() {
    SyntheticTask task;
    for (std::size_t t = 0; t < o_.num_topics; ++t)
      for (std::size_t w = 0; w < o_.topic_size; ++w) task.vocab.add(term_name(t, w));

    plans_.reserve(o_.num_docs);
    for (std::size_t d = 0; d < o_.num_docs; ++d) plans_.push_back(make_doc(d));
    for (std::size_t d = 0; d < plans_.size(); ++d) {
      task.docs.push_back(to_record(doc_id(d), plans_[d].tokens, task.vocab));
      docs_.push_back({doc_id(d), plans_[d].tokens});
    }
    stats_ = compute_corpus_stats(docs_);
    for (const auto& d : docs_) bm25_docs_.push_back({d.doc_id, encode_bm25_doc(d, stats_, Bm25Params{})});

    make_queries("q", o_.num_queries, 0x51, task.queries, task.qrels, task.vocab, nullptr);
    std::vector<QueryPlan> train_plans;
    make_queries("tq", o_.num_train_queries, 0x52, task.train_queries, task.train_qrels, task.vocab, &train_plans);

    for (const auto& p : train_plans) {
      task.bm25_triples.push_back(bm25_triple(p, task.train_qrels));
      task.hard_triples.push_back(hard_triple(p, task.train_qrels));
    }
    for (std::size_t d = 0; d < plans_.size(); ++d) {
      task.expansions_dt5q.push_back(to_record(doc_id(d), expansion(d, 4, false, 0x61), task.vocab));
      task.expansions_tilde.push_back(to_record(doc_id(d), expansion(d, 8, true, 0x62), task.vocab));
    }
    return task;
  }

 private:
  struct QueryPlan {
    std::string id;
    TokenizedText text;
    std::size_t target = 0;
  };

  TermId term(std::size_t topic, std::size_t word) const { return static_cast<TermId>(topic * o_.topic_size + word); }
  std::size_t topic_of(TermId t) const { return t / o_.topic_size; }
  bool is_background(TermId t) const { return topic_of(t) < o_.background_topics; }
  static std::string doc_id(std::size_t d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "d%04zu", d);
    return buf;
  }

  static RawRecord to_record(const std::string& id, const std::vector<TermId>& tokens, const Vocabulary& vocab) {
    RawRecord r{id, {}};
    for (TermId t : tokens) r.tokens.push_back(vocab.term(t));
    return r;
  }

  std::size_t content_topic(CounterRng& rng) const {
    return o_.background_topics + rng.below(o_.num_topics - o_.background_topics);
  }

  /// Topic words in a doc-specific preference order, so docs on one topic
  /// stress different words.
  std::vector<std::size_t> word_order(CounterRng& rng) const {
    std::vector<std::size_t> order(o_.topic_size);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    lsr::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  DocPlan make_doc(std::size_t d) const {
    CounterRng rng(hash_words({o_.seed, 0x44, d}));
    DocPlan plan;
    plan.topic = content_topic(rng);
    if (rng.uniform() < 0.5) {
      std::size_t s = content_topic(rng);
      if (s != plan.topic) plan.secondary = s;
    }
    const auto main_order = word_order(rng);
    const auto second_order = word_order(rng);
    const std::size_t len = o_.min_doc_len + rng.below(o_.max_doc_len - o_.min_doc_len + 1);
    const std::size_t bg_terms = o_.background_topics * o_.topic_size;
    for (std::size_t j = 0; j < len; ++j) {
      const double u = rng.uniform();
      if (u < 0.3) {
        plan.tokens.push_back(static_cast<TermId>(zipf(rng, bg_terms)));
      } else if (u < 0.8 || (!plan.secondary && u < 0.95)) {
        plan.tokens.push_back(term(plan.topic, main_order[zipf(rng, o_.topic_size)]));
      } else if (u < 0.95) {
        plan.tokens.push_back(term(*plan.secondary, second_order[zipf(rng, o_.topic_size)]));
      } else {
        plan.tokens.push_back(term(content_topic(rng), rng.below(o_.topic_size)));
      }
    }
    return plan;
  }

  /// 2-4 content terms drawn from the target's main-topic tokens; some are
  /// swapped for unseen topic-mates, and a background word may be added.
  QueryPlan make_query(const std::string& id, std::uint64_t salt, std::size_t index) const {
    CounterRng rng(hash_words({o_.seed, salt, index}));
    QueryPlan q;
    q.id = id;
    q.text.doc_id = id;
    q.target = rng.below(plans_.size());
    const DocPlan& doc = plans_[q.target];
    std::vector<TermId> pool;
    for (TermId t : doc.tokens)
      if (topic_of(t) == doc.topic) pool.push_back(t);
    if (pool.empty())
      for (std::size_t w = 0; w < o_.topic_size; ++w) pool.push_back(term(doc.topic, w));
    const std::set<TermId> in_doc(doc.tokens.begin(), doc.tokens.end());
    const std::size_t want = 2 + rng.below(3);
    std::set<TermId> chosen;
    for (std::size_t attempt = 0; chosen.size() < want && attempt < 64; ++attempt) {
      TermId t = pool[rng.below(pool.size())];
      if (rng.uniform() < 0.25) {
        std::vector<TermId> mates;
        for (std::size_t w = 0; w < o_.topic_size; ++w)
          if (!in_doc.count(term(doc.topic, w))) mates.push_back(term(doc.topic, w));
        if (!mates.empty()) t = mates[rng.below(mates.size())];
      }
      chosen.insert(t);
    }
    for (TermId t : chosen) q.text.token_ids.push_back(t);
    lsr::shuffle(q.text.token_ids.begin(), q.text.token_ids.end(), rng);
    if (rng.uniform() < 0.3) {
      q.text.token_ids.insert(q.text.token_ids.begin(),
                              static_cast<TermId>(rng.below(o_.background_topics * o_.topic_size)));
    }
    return q;
  }

  std::size_t overlap(const TokenizedText& q, std::size_t d) const {
    const std::set<TermId> in_doc(plans_[d].tokens.begin(), plans_[d].tokens.end());
    std::size_t n = 0;
    for (TermId t : std::set<TermId>(q.token_ids.begin(), q.token_ids.end()))
      if (!is_background(t) && in_doc.count(t)) ++n;
    return n;
  }

  void make_queries(const std::string& prefix, std::size_t count, std::uint64_t salt, std::vector<RawRecord>& out,
                    Qrels& qrels, const Vocabulary& vocab, std::vector<QueryPlan>* plans) const {
    for (std::size_t i = 0; i < count; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s%03zu", prefix.c_str(), i);
      QueryPlan q = make_query(buf, salt, i);
      out.push_back(to_record(q.id, q.text.token_ids, vocab));
      auto& judged = qrels.judgments[q.id];
      judged[doc_id(q.target)] = 2;
      // Up to three same-topic docs sharing at least two content terms.
      std::vector<std::pair<std::size_t, std::size_t>> partial;
      for (std::size_t d = 0; d < plans_.size(); ++d) {
        if (d == q.target || plans_[d].topic != plans_[q.target].topic) continue;
        const std::size_t n = overlap(q.text, d);
        if (n >= 2) partial.push_back({n, d});
      }
      std::stable_sort(partial.begin(), partial.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t i2 = 0; i2 < std::min<std::size_t>(3, partial.size()); ++i2) judged[doc_id(partial[i2].second)] = 1;
      if (plans) plans->push_back(std::move(q));
    }
  }

  /// Graded relevance plus a soft lexical match that credits topic-mates,
  /// on a scale the toy students can reach.
  double teacher(const QueryPlan& q, std::size_t d, const Qrels& qrels) const {
    const std::set<TermId> in_doc(plans_[d].tokens.begin(), plans_[d].tokens.end());
    std::set<std::size_t> topics;
    for (TermId t : in_doc) topics.insert(topic_of(t));
    double s = qrels.grade(q.id, doc_id(d));
    for (TermId t : std::set<TermId>(q.text.token_ids.begin(), q.text.token_ids.end())) {
      if (is_background(t)) continue;
      if (in_doc.count(t)) s += 0.25;
      else if (topics.count(topic_of(t))) s += 0.075;
    }
    if (plans_[d].topic == topic_of(q.text.token_ids.back())) s += 0.1;
    return std::round(s * 1000.0) / 1000.0;
  }

  std::vector<std::size_t> bm25_candidates(const QueryPlan& q, const Qrels& qrels, std::size_t depth) const {
    const auto ranking = exhaustive_search(encode_bm25_query(q.text, stats_), bm25_docs_, depth);
    std::vector<std::size_t> out;
    for (const auto& r : ranking) {
      if (qrels.grade(q.id, r.doc_id) > 0) continue;
      out.push_back(static_cast<std::size_t>(std::stoul(r.doc_id.substr(1))));
    }
    return out;
  }

  /// Fills up with random non-relevant docs when BM25 finds too few.
  void pad_negatives(const QueryPlan& q, const Qrels& qrels, std::vector<std::size_t>& negs, std::uint64_t salt) const {
    CounterRng rng(hash_words({o_.seed, salt, q.target, negs.size()}));
    for (std::size_t attempt = 0; negs.size() < o_.negatives_per_triple && attempt < 1000; ++attempt) {
      const std::size_t d = rng.below(plans_.size());
      if (qrels.grade(q.id, doc_id(d)) > 0 || std::find(negs.begin(), negs.end(), d) != negs.end()) continue;
      negs.push_back(d);
    }
  }

  TripleRecord bm25_triple(const QueryPlan& q, const Qrels& qrels) const {
    auto cands = bm25_candidates(q, qrels, 3 * o_.negatives_per_triple + 8);
    if (cands.size() > o_.negatives_per_triple) cands.resize(o_.negatives_per_triple);
    pad_negatives(q, qrels, cands, 0x71);
    TripleRecord r{q.id, doc_id(q.target), {}, std::nullopt};
    for (std::size_t d : cands) r.negatives.push_back(doc_id(d));
    return r;
  }

  TripleRecord hard_triple(const QueryPlan& q, const Qrels& qrels) const {
    auto cands = bm25_candidates(q, qrels, 50);
    std::stable_sort(cands.begin(), cands.end(),
                     [&](std::size_t a, std::size_t b) { return teacher(q, a, qrels) > teacher(q, b, qrels); });
    if (cands.size() > o_.negatives_per_triple) cands.resize(o_.negatives_per_triple);
    pad_negatives(q, qrels, cands, 0x72);
    TripleRecord r{q.id, doc_id(q.target), {}, TeacherScores{teacher(q, q.target, qrels), {}}};
    for (std::size_t d : cands) {
      r.negatives.push_back(doc_id(d));
      r.teacher->negatives.push_back(teacher(q, d, qrels));
    }
    return r;
  }

  /// Terms a query generator would plausibly predict but the doc lacks.
  std::vector<TermId> expansion(std::size_t d, std::size_t count, bool with_secondary, std::uint64_t salt) const {
    CounterRng rng(hash_words({o_.seed, salt, d}));
    const DocPlan& plan = plans_[d];
    const std::set<TermId> in_doc(plan.tokens.begin(), plan.tokens.end());
    std::vector<TermId> pool;
    for (std::size_t w = 0; w < o_.topic_size; ++w)
      if (!in_doc.count(term(plan.topic, w))) pool.push_back(term(plan.topic, w));
    lsr::shuffle(pool.begin(), pool.end(), rng);
    if (with_secondary && plan.secondary) {
      std::vector<TermId> extra;
      for (std::size_t w = 0; w < o_.topic_size; ++w)
        if (!in_doc.count(term(*plan.secondary, w))) extra.push_back(term(*plan.secondary, w));
      lsr::shuffle(extra.begin(), extra.end(), rng);
      const std::size_t main_share = count - count / 4;
      if (pool.size() > main_share) pool.resize(main_share);
      pool.insert(pool.end(), extra.begin(), extra.end());
    }
    if (pool.size() > count) pool.resize(count);
    return pool;
  }

  SyntheticOptions o_;
  std::vector<DocPlan> plans_;
  std::vector<TokenizedText> docs_;
  std::vector<DocVector> bm25_docs_;
  CorpusStats stats_;
};

}  // namespace

SyntheticTask make_synthetic_task(const SyntheticOptions& options) { return Generator(options).run(); }

void write_synthetic_task(const SyntheticTask& task, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_vocabulary(dir / "vocab.txt", task.vocab);
  write_tsv_records(dir / "collection.tsv", task.docs);
  write_tsv_records(dir / "queries.tsv", task.queries);
  write_tsv_records(dir / "train_queries.tsv", task.train_queries);
  write_qrels(dir / "qrels.txt", task.qrels);
  write_qrels(dir / "train_qrels.txt", task.train_qrels);
  write_triples(dir / "triples.bm25.jsonl", task.bm25_triples);
  write_triples(dir / "triples.hard.jsonl", task.hard_triples);
  write_tsv_records(dir / "expansions.dt5q.tsv", task.expansions_dt5q);
  write_tsv_records(dir / "expansions.tilde.tsv", task.expansions_tilde);
}

}  // namespace lsr
