#include "lsr/io.hpp"

#include <charconv>
#include <fstream>

#include <json.hpp>

namespace lsr {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      fn(json::parse(line), where);
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
}

std::optional<TermId> parse_term_id(const std::string& key) {
  TermId v{};
  auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), v);
  if (ec != std::errc() || ptr != key.data() + key.size()) return std::nullopt;
  return v;
}

}  // namespace

std::string format_vector_record(const std::string& id, const SparseVector& v, const Vocabulary& vocab) {
  ordered_json j;
  j["id"] = id;
  j["vector"] = ordered_json::object();
  for (const auto& [t, w] : v.entries()) {
    if (t >= vocab.size()) throw ValidationError("vector for '" + id + "' has a term outside the vocabulary");
    j["vector"][vocab.term(t)] = w;
  }
  return j.dump();
}

void write_vectors(const std::filesystem::path& path, std::span<const DocVector> vectors, const Vocabulary& vocab) {
  std::string out;
  for (const auto& dv : vectors) {
    out += format_vector_record(dv.id, dv.vector, vocab);
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<DocVector> read_vectors(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::vector<DocVector> out;
  for_each_json_line(path, [&](const json& j, const std::string& where) {
    std::vector<SparseVector::Entry> entries;
    for (const auto& [key, value] : j.at("vector").items()) {
      std::optional<TermId> t = vocab.find(key);
      if (!t) t = parse_term_id(key);
      if (!t || *t >= vocab.size()) throw ValidationError(where + ": term '" + key + "' is not in the vocabulary");
      entries.emplace_back(*t, value.get<double>());
    }
    try {
      out.push_back({j.at("id").get<std::string>(), SparseVector::from_entries(std::move(entries))});
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  });
  return out;
}

ExpansionMap read_expansions(const std::filesystem::path& path, const Vocabulary& vocab) {
  ExpansionMap out;
  for (const auto& rec : read_tsv_records(path)) {
    auto& terms = out[rec.id];
    for (const auto& tok : rec.tokens) terms.push_back(vocab.id(tok));
  }
  return out;
}

std::vector<TripleRecord> read_triples(const std::filesystem::path& path) {
  std::vector<TripleRecord> out;
  for_each_json_line(path, [&](const json& j, const std::string& where) {
    TripleRecord r;
    r.query = j.at("q").get<std::string>();
    r.positive = j.at("pos").get<std::string>();
    r.negatives = j.at("negs").get<std::vector<std::string>>();
    if (j.contains("teacher") && !j.at("teacher").is_null()) {
      TeacherScores t;
      t.positive = j.at("teacher").at("pos").get<double>();
      t.negatives = j.at("teacher").at("negs").get<std::vector<double>>();
      if (t.negatives.size() != r.negatives.size()) {
        throw ValidationError(where + ": teacher scores do not match the number of negatives");
      }
      r.teacher = std::move(t);
    }
    out.push_back(std::move(r));
  });
  return out;
}

void write_triples(const std::filesystem::path& path, std::span<const TripleRecord> triples) {
  std::string out;
  for (const auto& t : triples) {
    ordered_json j;
    j["q"] = t.query;
    j["pos"] = t.positive;
    j["negs"] = t.negatives;
    if (t.teacher) j["teacher"] = {{"pos", t.teacher->positive}, {"negs", t.teacher->negatives}};
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<TrainingTriple> resolve_triples(std::span<const TripleRecord> records,
                                            const std::unordered_map<std::string, const TokenizedText*>& queries,
                                            const std::unordered_map<std::string, const TokenizedText*>& docs) {
  auto lookup = [](const auto& m, const std::string& id, const char* what) -> const TokenizedText& {
    auto it = m.find(id);
    if (it == m.end()) throw ValidationError(std::string("triples reference unknown ") + what + " '" + id + "'");
    return *it->second;
  };
  std::vector<TrainingTriple> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TrainingTriple t;
    t.query = lookup(queries, r.query, "query");
    t.positive = lookup(docs, r.positive, "document");
    for (const auto& n : r.negatives) t.negatives.push_back(lookup(docs, n, "document"));
    t.teacher = r.teacher;
    out.push_back(std::move(t));
  }
  return out;
}

// Heads ------------------------------------------------------------------------

namespace {

ordered_json tensor_json(const Eigen::VectorXd& v) {
  return ordered_json{{"shape", {v.size()}}, {"data", std::vector<double>(v.data(), v.data() + v.size())}};
}

ordered_json scalar_json(double v) { return ordered_json{{"shape", ordered_json::array()}, {"data", {v}}}; }

ordered_json head_json(const HeadParameters& h) {
  ordered_json j;
  j["activation"] = to_string(h.settings.activation);
  j["mlp_log_normalize"] = h.settings.mlp_log_normalize;
  j["use_quality_heads"] = h.settings.use_quality_heads;
  j["dim"] = h.dim();
  j["vocab_size"] = h.vocab_size();
  auto& t = j["tensors"];
  t["mlp_weight"] = tensor_json(h.mlp_weight);
  t["mlp_bias"] = scalar_json(h.mlp_bias);
  t["mlm_bias"] = tensor_json(h.mlm_bias);
  t["quality_weight"] = tensor_json(h.quality_weight);
  t["quality_bias"] = scalar_json(h.quality_bias);
  t["importance_weight"] = tensor_json(h.importance_weight);
  t["importance_bias"] = scalar_json(h.importance_bias);
  return j;
}

Eigen::VectorXd read_tensor(const json& tensors, const char* name, Eigen::Index expected) {
  const auto& t = tensors.at(name);
  const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = t.at("data").get<std::vector<double>>();
  if (shape.size() != 1 || shape[0] != expected || static_cast<Eigen::Index>(data.size()) != expected) {
    throw ValidationError(std::string("head tensor '") + name + "' has wrong shape (expected [" +
                          std::to_string(expected) + "])");
  }
  return Eigen::Map<const Eigen::VectorXd>(data.data(), expected);
}

double read_scalar(const json& tensors, const char* name) {
  const auto& t = tensors.at(name);
  const auto data = t.at("data").get<std::vector<double>>();
  if (!t.at("shape").empty() || data.size() != 1) {
    throw ValidationError(std::string("head tensor '") + name + "' must be a scalar");
  }
  return data[0];
}

HeadParameters parse_head(const json& j) {
  HeadParameters h;
  h.settings.activation = parse_activation(j.at("activation").get<std::string>());
  h.settings.mlp_log_normalize = j.at("mlp_log_normalize").get<bool>();
  h.settings.use_quality_heads = j.at("use_quality_heads").get<bool>();
  const auto d = j.at("dim").get<Eigen::Index>();
  const auto v = j.at("vocab_size").get<Eigen::Index>();
  const auto& t = j.at("tensors");
  h.mlp_weight = read_tensor(t, "mlp_weight", d);
  h.mlp_bias = read_scalar(t, "mlp_bias");
  h.mlm_bias = read_tensor(t, "mlm_bias", v);
  h.quality_weight = read_tensor(t, "quality_weight", d);
  h.quality_bias = read_scalar(t, "quality_bias");
  h.importance_weight = read_tensor(t, "importance_weight", d);
  h.importance_bias = read_scalar(t, "importance_bias");
  return h;
}

}  // namespace

std::string format_heads(const HeadPair& heads) {
  ordered_json j;
  j["format"] = "lsr-heads";
  j["version"] = 1;
  j["shared"] = heads.shared;
  j["query"] = heads.query ? head_json(*heads.query) : ordered_json();
  j["doc"] = (heads.doc && !heads.shared) ? head_json(*heads.doc) : ordered_json();
  return j.dump(1) + "\n";
}

HeadPair parse_heads(std::string_view json_text) {
  HeadPair heads;
  try {
    const json j = json::parse(json_text);
    if (j.at("format") != "lsr-heads" || j.at("version") != 1) throw ValidationError("heads: unsupported format");
    heads.shared = j.at("shared").get<bool>();
    if (!j.at("query").is_null()) heads.query = parse_head(j.at("query"));
    if (heads.shared) {
      if (!heads.query) throw ValidationError("heads: shared heads need a query head");
      heads.doc = heads.query;
    } else if (!j.at("doc").is_null()) {
      heads.doc = parse_head(j.at("doc"));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("heads: ") + e.what());
  }
  return heads;
}

void write_heads(const std::filesystem::path& path, const HeadPair& heads) {
  write_file_atomic(path, format_heads(heads));
}

HeadPair read_heads(const std::filesystem::path& path) { return parse_heads(read_file(path)); }

// Embedding dumps ----------------------------------------------------------------

void write_contextual_embeddings(const std::filesystem::path& path, std::span<const TokenizedText> texts,
                                 const EmbeddingSource& source, TextSide side) {
  std::string out;
  for (const auto& text : texts) {
    const EmbeddingBundle b = source.embed(text, side);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = b.ctx;
    ordered_json j;
    j["id"] = text.doc_id;
    j["L"] = b.ctx.rows();
    j["d"] = b.dim();
    j["h"] = std::vector<double>(rm.data(), rm.data() + rm.size());
    j["h0"] = std::vector<double>(b.cls.data(), b.cls.data() + b.cls.size());
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_input_embeddings(const std::filesystem::path& path, const Eigen::MatrixXd& input) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = input;
  ordered_json j;
  j["vocab_size"] = input.rows();
  j["d"] = input.cols();
  j["e"] = std::vector<double>(rm.data(), rm.data() + rm.size());
  write_file_atomic(path, j.dump() + "\n");
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Records>
void load_contextual(const std::filesystem::path& path, Eigen::Index dim, Records& records) {
  if (path.empty()) return;
  for_each_json_line(path, [&](const json& j, const std::string& where) {
    const auto len = j.at("L").get<Eigen::Index>();
    const auto d = j.at("d").get<Eigen::Index>();
    if (d != dim) throw ValidationError(where + ": embedding dimension " + std::to_string(d) + " != " + std::to_string(dim));
    const auto h = j.at("h").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(h.size()) != len * d) throw ValidationError(where + ": h has wrong length");
    auto& rec = records[j.at("id").get<std::string>()];
    rec.h = Eigen::Map<const RowMajor>(h.data(), len, d);
    if (j.contains("h0")) {
      const auto h0 = j.at("h0").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(h0.size()) != d) throw ValidationError(where + ": h0 has wrong length");
      rec.h0 = Eigen::Map<const Eigen::VectorXd>(h0.data(), d);
    } else {
      rec.h0 = len > 0 ? Eigen::VectorXd(rec.h.colwise().mean().transpose()) : Eigen::VectorXd::Zero(d);
    }
  });
}

}  // namespace

FileEmbeddings::FileEmbeddings(const std::filesystem::path& doc_file, const std::filesystem::path& query_file,
                               const std::filesystem::path& input_file) {
  try {
    const json j = json::parse(read_file(input_file));
    const auto v = j.at("vocab_size").get<Eigen::Index>();
    dim_ = j.at("d").get<Eigen::Index>();
    const auto e = j.at("e").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(e.size()) != v * dim_) throw ValidationError("input embeddings: e has wrong length");
    input_ = std::make_shared<const Eigen::MatrixXd>(Eigen::Map<const RowMajor>(e.data(), v, dim_));
  } catch (const json::exception& e) {
    throw ValidationError(input_file.string() + ": " + e.what());
  }
  load_contextual(doc_file, dim_, docs_);
  load_contextual(query_file, dim_, queries_);
}

EmbeddingBundle FileEmbeddings::embed(const TokenizedText& text, TextSide side) const {
  const auto& records = side == TextSide::doc ? docs_ : queries_;
  auto it = records.find(text.doc_id);
  if (it == records.end()) {
    throw ValidationError("no embeddings for " + std::string(side == TextSide::doc ? "document" : "query") + " '" +
                          text.doc_id + "'");
  }
  if (it->second.h.rows() != static_cast<Eigen::Index>(text.length())) {
    throw ValidationError("embedding record for '" + text.doc_id + "' has " + std::to_string(it->second.h.rows()) +
                          " rows, text has " + std::to_string(text.length()) + " tokens");
  }
  return EmbeddingBundle{it->second.h, it->second.h0, input_};
}

}  // namespace lsr
