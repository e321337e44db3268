#include "lsr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "lsr/error.hpp"
#include "lsr/io.hpp"
#include "lsr/random.hpp"

namespace lsr {

std::size_t worker_threads() {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("LSR_THREADS");
  if (!env || !*env) return hw;
  std::size_t n = 0;
  const std::string_view s(env);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc() || ptr != s.data() + s.size() || n == 0) {
    throw ValidationError("LSR_THREADS must be a positive integer, got '" + std::string(s) + "'");
  }
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::unique_ptr<EmbeddingSource> make_embedding_source(const MethodConfig& config, std::size_t vocab_size,
                                                       std::uint64_t seed) {
  const auto& b = config.backbone;
  if (b.kind == "file") {
    auto src = std::make_unique<FileEmbeddings>(b.doc_embeddings, b.query_embeddings, b.input_embeddings);
    if (static_cast<std::size_t>(src->vocab_size()) != vocab_size) {
      throw ValidationError("backbone.input_embeddings has " + std::to_string(src->vocab_size()) +
                            " rows but the vocabulary has " + std::to_string(vocab_size) + " terms");
    }
    return src;
  }
  ToyBackboneOptions o;
  o.vocab_size = static_cast<Eigen::Index>(vocab_size);
  o.dim = b.dim;
  o.seed = hash_words({seed, 0xbb});
  o.topic_block = b.topic_block;
  o.topic_mix = b.topic_mix;
  o.context_mix = b.context_mix;
  return std::make_unique<ToyBackbone>(o);
}

Workspace Workspace::load(const MethodConfig& config, std::uint64_t seed) {
  config.validate();
  Workspace ws;
  ws.config = config;
  ws.seed = seed;
  const auto& p = config.paths;
  ws.vocab = read_vocabulary(p.vocab);
  if (!p.collection.empty()) ws.docs = read_collection(p.collection, ws.vocab);
  if (!p.queries.empty()) ws.queries = read_collection(p.queries, ws.vocab);
  if (!p.qrels.empty()) ws.qrels = read_qrels(p.qrels);
  if (!p.expansions.empty()) ws.expansions = read_expansions(p.expansions, ws.vocab);
  ws.stats = compute_corpus_stats(ws.docs);
  if (is_trainable(config.query_encoder.kind) || is_trainable(config.doc_encoder.kind)) {
    ws.embeddings = make_embedding_source(config, ws.vocab.size(), seed);
  }
  return ws;
}

TokenizedText Workspace::doc_input(const TokenizedText& doc, std::vector<std::string>* warn) const {
  if (config.doc_encoder.kind != EncoderKind::exp_mlp) return doc;
  return expand_text(doc, expansions, warn);
}

namespace {

std::unordered_map<std::string, const TokenizedText*> by_id(const std::vector<TokenizedText>& texts) {
  std::unordered_map<std::string, const TokenizedText*> out;
  for (const auto& t : texts) out.emplace(t.doc_id, &t);
  return out;
}

}  // namespace

TrainingData load_training_data(const Workspace& ws) {
  const auto& sup = ws.config.supervision;
  TrainingData data;
  data.stats = ws.stats;
  if (sup.train_queries.empty()) throw ValidationError("supervision.train_queries is required for training");
  const auto train_queries = read_collection(sup.train_queries, ws.vocab);

  std::vector<TokenizedText> docs;
  docs.reserve(ws.docs.size());
  for (const auto& d : ws.docs) docs.push_back(ws.doc_input(d));

  if (sup.loss == LossKind::term_mse) {
    if (sup.train_qrels.empty()) throw ValidationError("supervision.train_qrels is required for term-level labels");
    const Qrels qrels = read_qrels(sup.train_qrels);
    const auto queries = by_id(train_queries);
    std::map<std::string, std::vector<TokenizedText>> relevant;
    for (const auto& [qid, judged] : qrels.judgments) {
      auto q = queries.find(qid);
      if (q == queries.end()) continue;
      for (const auto& [doc, grade] : judged)
        if (grade >= 1) relevant[doc].push_back(*q->second);
    }
    const auto labels = compute_term_recall(relevant);
    for (const auto& doc : docs) {
      auto it = labels.per_doc.find(doc.doc_id);
      if (it == labels.per_doc.end()) continue;
      TermTarget target{doc, it->second};
      for (TermId t : doc.token_ids) target.labels.emplace(t, 0.0);
      data.term_targets.push_back(std::move(target));
    }
    return data;
  }

  if (sup.triples.empty()) throw ValidationError("supervision.triples is required for passage-level losses");
  const auto records = read_triples(sup.triples);
  data.triples = resolve_triples(records, by_id(train_queries), by_id(docs));
  return data;
}

HeadSource obtain_heads(const Workspace& ws, const PipelineOptions& options) {
  const auto& config = ws.config;
  HeadSource out;
  const bool trainable = is_trainable(config.query_encoder.kind) || is_trainable(config.doc_encoder.kind);
  if (!trainable) {
    out.origin = "none";
    return out;
  }
  const Eigen::Index dim = ws.embeddings->dim();
  const auto vocab = static_cast<Eigen::Index>(ws.vocab.size());
  if (!config.paths.heads.empty()) {
    out.heads = read_heads(config.paths.heads);
    auto check = [&](const std::optional<HeadParameters>& h, const EncoderConfig& enc, const char* field) {
      if (!is_trainable(enc.kind)) return;
      if (!h) throw ValidationError(std::string("paths.heads has no ") + field + " head");
      h->validate(dim, vocab);
      if (!(h->settings == enc.head)) {
        throw ValidationError(std::string("paths.heads ") + field + " head settings differ from " + field + "_encoder");
      }
    };
    check(out.heads.query, config.query_encoder, "query");
    check(out.heads.doc, config.doc_encoder, "doc");
    out.origin = "file";
    return out;
  }
  const std::size_t steps = options.steps.value_or(config.supervision.steps);
  const bool q_free = is_trainable(config.query_encoder.kind) && !options.frozen_query_head;
  const bool d_free = is_trainable(config.doc_encoder.kind) && !options.frozen_doc_head;
  if (config.supervision.loss == LossKind::none || steps == 0 || !(q_free || d_free)) {
    out.heads = initial_heads(config, dim, vocab, ws.seed);
    if (options.frozen_query_head) out.heads.query = options.frozen_query_head;
    if (options.frozen_doc_head) out.heads.doc = options.frozen_doc_head;
    out.origin = "initial";
    return out;
  }
  TrainOptions topts;
  topts.steps = steps;
  topts.learning_rate = config.supervision.learning_rate;
  topts.seed = ws.seed;
  topts.regularizer_weight = options.regularizer_weight;
  topts.frozen_query_head = options.frozen_query_head;
  topts.frozen_doc_head = options.frozen_doc_head;
  out.training = train_heads(config, load_training_data(ws), *ws.embeddings, topts);
  out.heads = out.training->heads;
  out.origin = "trained";
  return out;
}

EncodeResult encode_texts(const Workspace& ws, const HeadPair& heads, TextSide side,
                          std::span<const TokenizedText> texts) {
  const bool is_doc = side == TextSide::doc;
  const EncoderConfig& enc = is_doc ? ws.config.doc_encoder : ws.config.query_encoder;
  const RegularizerConfig& reg = is_doc ? ws.config.doc_regularizer : ws.config.query_regularizer;
  const auto& head = is_doc ? heads.doc : heads.query;
  const char* field = is_doc ? "doc_encoder" : "query_encoder";
  if (is_trainable(enc.kind) && !head) throw ValidationError(std::string(field) + " needs head parameters");

  EncodeResult out;
  out.vectors.resize(texts.size());
  std::vector<std::vector<std::string>> warnings(texts.size());
  parallel_for(texts.size(), [&](std::size_t i) {
    validate_text(texts[i], ws.vocab.size());
    const TokenizedText input = is_doc ? ws.doc_input(texts[i], &warnings[i]) : texts[i];
    SparseVector v;
    switch (enc.kind) {
      case EncoderKind::binary:
        v = encode_binary(input);
        break;
      case EncoderKind::bm25_query:
        v = encode_bm25_query(input, ws.stats);
        break;
      case EncoderKind::bm25_doc:
        v = encode_bm25_doc(input, ws.stats, ws.config.bm25);
        break;
      default:
        if (!input.token_ids.empty()) {
          const auto emb = ws.embeddings->embed(input, side);
          v = forward(prepare_text(enc.kind, input, emb, enc.head), *head);
        }
    }
    if (reg.kind == RegularizerKind::topk) v = topk_prune(v, reg.k);
    if (!may_expand(enc.kind)) {
      const std::set<TermId> support(input.token_ids.begin(), input.token_ids.end());
      for (const auto& [t, w] : v.entries()) {
        if (!support.count(t)) {
          throw ValidationError(std::string(field) + " (" + std::string(to_string(enc.kind)) + ") emitted term '" +
                                ws.vocab.term(t) + "' absent from input '" + input.doc_id + "'");
        }
      }
    }
    out.vectors[i] = {texts[i].doc_id, std::move(v)};
  });
  for (auto& w : warnings) out.warnings.insert(out.warnings.end(), w.begin(), w.end());
  return out;
}

SearchOutput search_all(const ImpactIndex& index, std::span<const DocVector> queries, std::size_t k,
                        const std::string& tag) {
  std::vector<SearchResult> results(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) { results[i] = index_search(index, queries[i].vector, k); });
  SearchOutput out;
  out.run.tag = tag;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out.run.rankings[queries[i].id] = std::move(results[i].ranking);
    out.ops_count += results[i].ops_count;
    out.query_nnz.push_back(queries[i].vector.nnz());
  }
  return out;
}

std::map<std::string, double> standard_metrics(const RunFile& run, const Qrels& qrels) {
  return {{"mrr@10", mrr_at_k(run, qrels, 10)},
          {"ndcg@10", ndcg_at_k(run, qrels, 10)},
          {"recall@100", recall_at_k(run, qrels, 100)},
          {"recall@1000", recall_at_k(run, qrels, 1000)}};
}

double weight_variance(std::span<const DocVector> docs) {
  double n = 0.0, mean = 0.0, m2 = 0.0;
  for (const auto& d : docs) {
    for (const auto& [t, w] : d.vector.entries()) {
      n += 1.0;
      const double delta = w - mean;
      mean += delta / n;
      m2 += delta * (w - mean);
    }
  }
  return n > 0.0 ? m2 / n : 0.0;
}

namespace {

double mean_nnz(std::span<const DocVector> vectors) {
  if (vectors.empty()) return 0.0;
  double total = 0.0;
  for (const auto& v : vectors) total += static_cast<double>(v.vector.nnz());
  return total / static_cast<double>(vectors.size());
}

}  // namespace

PipelineReport run_pipeline(const Workspace& ws, const PipelineOptions& options) {
  PipelineReport report;
  report.name = ws.config.name;
  auto heads = obtain_heads(ws, options);
  report.head_origin = heads.origin;
  report.heads = heads.heads;
  if (heads.training && !heads.training->loss_history.empty()) report.final_loss = heads.training->loss_history.back();

  auto docs = encode_texts(ws, heads.heads, TextSide::doc, ws.docs);
  auto queries = encode_texts(ws, heads.heads, TextSide::query, ws.queries);
  report.warnings = std::move(docs.warnings);

  const auto& qc = ws.config.quantization;
  const ImpactIndex index =
      build_index(docs.vectors, ws.vocab.size(), qc.exact ? Quantization::exact_mode() : Quantization::with_bits(qc.bits));
  auto search = search_all(index, queries.vectors, ws.config.retrieval_depth, ws.config.name);

  report.stats.ops_count = search.ops_count;
  report.stats.mean_query_nnz = mean_nnz(queries.vectors);
  report.stats.mean_doc_nnz = mean_nnz(docs.vectors);
  report.stats.doc_weight_variance = weight_variance(docs.vectors);
  report.stats.postings = index.total_postings();
  if (ws.qrels) report.metrics = standard_metrics(search.run, *ws.qrels);
  report.run = std::move(search.run);
  return report;
}

PipelineReport run_method(const MethodConfig& config, std::uint64_t seed, const PipelineOptions& options) {
  return run_pipeline(Workspace::load(config, seed), options);
}

// Ablation --------------------------------------------------------------

Toggle parse_toggle(std::string_view text) {
  if (text.find(',') != std::string_view::npos || text.find(';') != std::string_view::npos) {
    throw ValidationError("toggle '" + std::string(text) + "' changes more than one component");
  }
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == text.size()) {
    throw ValidationError("toggle '" + std::string(text) + "' must look like component=value");
  }
  if (text.find('=', eq + 1) != std::string_view::npos) {
    throw ValidationError("toggle '" + std::string(text) + "' changes more than one component");
  }
  return {std::string(text.substr(0, eq)), std::string(text.substr(eq + 1))};
}

namespace {

RegularizerConfig parse_regularizer_value(const std::string& value) {
  RegularizerConfig r;
  const auto colon = value.find(':');
  r.kind = parse_regularizer_kind(value.substr(0, colon));
  const bool needs_arg = r.kind != RegularizerKind::none;
  if (needs_arg != (colon != std::string::npos)) {
    throw ValidationError("regularizer toggle '" + value + "' must be none, flops:W, l1:W, l2:W or topk:K");
  }
  if (needs_arg) {
    const std::string arg = value.substr(colon + 1);
    const char* end = arg.data() + arg.size();
    std::from_chars_result res{};
    if (r.kind == RegularizerKind::topk) res = std::from_chars(arg.data(), end, r.k);
    else res = std::from_chars(arg.data(), end, r.weight);
    if (res.ec != std::errc() || res.ptr != end) throw ValidationError("regularizer toggle '" + value + "': bad number");
  }
  r.validate();
  return r;
}

}  // namespace

MethodConfig apply_toggle(const MethodConfig& base, const Toggle& toggle) {
  MethodConfig out = base;
  const auto& c = toggle.component;
  if (c == "query_encoder") {
    out.query_encoder.kind = parse_encoder_kind(toggle.value);
  } else if (c == "doc_encoder") {
    out.doc_encoder.kind = parse_encoder_kind(toggle.value);
  } else if (c == "regularizer") {
    out.query_regularizer = out.doc_regularizer = parse_regularizer_value(toggle.value);
  } else if (c == "query_regularizer") {
    out.query_regularizer = parse_regularizer_value(toggle.value);
  } else if (c == "doc_regularizer") {
    out.doc_regularizer = parse_regularizer_value(toggle.value);
  } else if (c == "shared_heads") {
    if (toggle.value != "true" && toggle.value != "false") throw ValidationError("shared_heads toggle must be true or false");
    out.shared_heads = toggle.value == "true";
  } else {
    throw ValidationError("unknown toggle component '" + c +
                          "' (expected query_encoder, doc_encoder, regularizer, query_regularizer, doc_regularizer "
                          "or shared_heads)");
  }
  if (out == base) throw ValidationError("toggle '" + toggle.label() + "' does not change " + base.name);
  try {
    out.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("toggle '" + toggle.label() + "' needs a second change to stay valid: " + e.what());
  }
  out.name = base.name + "[" + toggle.label() + "]";
  return out;
}

AblationReport run_ablation(const MethodConfig& base, std::span<const Toggle> toggles, std::uint64_t seed,
                            const PipelineOptions& options) {
  std::vector<MethodConfig> variants;
  for (const auto& t : toggles) variants.push_back(apply_toggle(base, t));
  AblationReport report;
  report.base = run_method(base, seed, options);
  for (std::size_t i = 0; i < toggles.size(); ++i) {
    PipelineOptions vopts = options;
    MethodConfig& variant = variants[i];
    const auto& c = toggles[i].component;
    const bool query_only = c == "query_encoder" || c == "query_regularizer";
    const bool doc_only = c == "doc_encoder" || c == "doc_regularizer";
    if (!variant.shared_heads) {
      if (query_only && report.base.heads.doc && is_trainable(variant.doc_encoder.kind)) {
        vopts.frozen_doc_head = report.base.heads.doc;
        variant.paths.heads.clear();
      }
      if (doc_only && report.base.heads.query && is_trainable(variant.query_encoder.kind)) {
        vopts.frozen_query_head = report.base.heads.query;
        variant.paths.heads.clear();
      }
    }
    report.variants.emplace_back(toggles[i], run_method(variant, seed, vopts));
  }
  return report;
}

namespace {

const std::vector<std::pair<std::string, std::string>> kMetricColumns = {
    {"mrr@10", "MRR@10"}, {"ndcg@10", "NDCG@10"}, {"recall@100", "R@100"}, {"recall@1000", "R@1000"}};

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string signed_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.*f", decimals, v);
  return buf;
}

std::string metric_cell(const PipelineReport& r, const std::string& key) {
  auto it = r.metrics.find(key);
  return it == r.metrics.end() ? "-" : fixed(it->second, 4);
}

std::string pad(const std::string& s, std::size_t width, bool left) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c) line += "  ";
      line += pad(rows[r][c], width[c], c == 0);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

std::vector<std::string> header(const std::string& first) {
  std::vector<std::string> h{first};
  for (const auto& [key, label] : kMetricColumns) h.push_back(label);
  for (const char* s : {"q-nnz", "d-nnz", "ops"}) h.push_back(s);
  return h;
}

std::vector<std::string> absolute_row(const std::string& label, const PipelineReport& r) {
  std::vector<std::string> row{label};
  for (const auto& [key, name] : kMetricColumns) row.push_back(metric_cell(r, key));
  row.push_back(fixed(r.stats.mean_query_nnz, 1));
  row.push_back(fixed(r.stats.mean_doc_nnz, 1));
  row.push_back(std::to_string(r.stats.ops_count));
  return row;
}

nlohmann::ordered_json report_json(const PipelineReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["heads"] = r.head_origin;
  j["final_loss"] = r.final_loss ? nlohmann::ordered_json(*r.final_loss) : nlohmann::ordered_json(nullptr);
  j["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.metrics) j["metrics"][k] = v;
  j["ops_count"] = r.stats.ops_count;
  j["mean_query_nnz"] = r.stats.mean_query_nnz;
  j["mean_doc_nnz"] = r.stats.mean_doc_nnz;
  j["doc_weight_variance"] = r.stats.doc_weight_variance;
  j["postings"] = r.stats.postings;
  return j;
}

}  // namespace

std::string format_reports_text(std::span<const PipelineReport> reports) {
  std::vector<std::vector<std::string>> rows{header("method")};
  for (const auto& r : reports) rows.push_back(absolute_row(r.name, r));
  return render(rows);
}

std::string format_ablation_text(const AblationReport& report) {
  std::vector<std::vector<std::string>> rows{header("change")};
  rows.push_back(absolute_row(report.base.name, report.base));
  const auto& b = report.base;
  for (const auto& [toggle, r] : report.variants) {
    std::vector<std::string> row{toggle.label()};
    for (const auto& [key, name] : kMetricColumns) {
      auto before = b.metrics.find(key);
      auto after = r.metrics.find(key);
      if (before == b.metrics.end() || after == r.metrics.end()) row.push_back("-");
      else row.push_back(fixed(after->second, 4) + " (" + signed_fixed(after->second - before->second, 4) + ")");
    }
    row.push_back(fixed(r.stats.mean_query_nnz, 1) + " (" + signed_fixed(r.stats.mean_query_nnz - b.stats.mean_query_nnz, 1) + ")");
    row.push_back(fixed(r.stats.mean_doc_nnz, 1) + " (" + signed_fixed(r.stats.mean_doc_nnz - b.stats.mean_doc_nnz, 1) + ")");
    const double ratio = b.stats.ops_count ? static_cast<double>(r.stats.ops_count) / static_cast<double>(b.stats.ops_count) : 0.0;
    row.push_back(std::to_string(r.stats.ops_count) + " (x" + fixed(ratio, 2) + ")");
    rows.push_back(std::move(row));
  }
  return render(rows);
}

std::string format_report_json(const PipelineReport& report) { return report_json(report).dump(2) + "\n"; }

std::string format_ablation_json(const AblationReport& report) {
  nlohmann::ordered_json j;
  j["base"] = report_json(report.base);
  j["variants"] = nlohmann::ordered_json::array();
  for (const auto& [toggle, r] : report.variants) {
    nlohmann::ordered_json v;
    v["toggle"] = toggle.label();
    v["report"] = report_json(r);
    nlohmann::ordered_json delta = nlohmann::ordered_json::object();
    for (const auto& [k, after] : r.metrics) {
      auto before = report.base.metrics.find(k);
      if (before != report.base.metrics.end()) delta[k] = after - before->second;
    }
    delta["mean_query_nnz"] = r.stats.mean_query_nnz - report.base.stats.mean_query_nnz;
    delta["mean_doc_nnz"] = r.stats.mean_doc_nnz - report.base.stats.mean_doc_nnz;
    delta["ops_count"] = static_cast<std::int64_t>(r.stats.ops_count) - static_cast<std::int64_t>(report.base.stats.ops_count);
    v["delta"] = delta;
    j["variants"].push_back(v);
  }
  return j.dump(2) + "\n";
}

}  // namespace lsr
