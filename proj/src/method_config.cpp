#include "lsr/method_config.hpp"

#include <json.hpp>

#include "lsr/core_types.hpp"

namespace lsr {

using nlohmann::json;

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::none: return "none";
    case LossKind::contrastive: return "contrastive";
    case LossKind::margin_mse: return "margin_mse";
    case LossKind::term_mse: return "term_mse";
  }
  return "none";
}

LossKind parse_loss_kind(std::string_view name) {
  for (auto k : {LossKind::none, LossKind::contrastive, LossKind::margin_mse, LossKind::term_mse}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("supervision.loss: unknown loss '" + std::string(name) + "'");
}

std::string_view to_string(LabelLevel level) {
  switch (level) {
    case LabelLevel::none: return "none";
    case LabelLevel::passage: return "passage";
    case LabelLevel::term: return "term";
  }
  return "none";
}

LabelLevel parse_label_level(std::string_view name) {
  for (auto l : {LabelLevel::none, LabelLevel::passage, LabelLevel::term}) {
    if (to_string(l) == name) return l;
  }
  throw ValidationError("supervision.level: unknown level '" + std::string(name) + "'");
}

void MethodConfig::validate() const {
  auto fail = [&](const std::string& msg) { throw ValidationError("config '" + name + "': " + msg); };
  if (name.empty()) throw ValidationError("config: name must be set");
  if (query_encoder.kind == EncoderKind::bm25_doc || query_encoder.kind == EncoderKind::exp_mlp) {
    fail("query_encoder.kind: '" + std::string(to_string(query_encoder.kind)) + "' is document-side only");
  }
  if (doc_encoder.kind == EncoderKind::bm25_query) fail("doc_encoder.kind: 'bm25_query' is query-side only");
  if (doc_encoder.kind == EncoderKind::exp_mlp && paths.expansions.empty()) {
    fail("doc_encoder.kind: exp_mlp requires paths.expansions");
  }
  if (shared_heads && !(query_encoder == doc_encoder)) {
    fail("shared_heads: requires identical query_encoder and doc_encoder settings");
  }
  if (shared_heads && !is_trainable(query_encoder.kind)) {
    fail("shared_heads: encoder kind '" + std::string(to_string(query_encoder.kind)) + "' has no head to share");
  }
  try {
    query_regularizer.validate();
  } catch (const ValidationError& e) {
    fail(std::string("regularizer.query: ") + e.what());
  }
  try {
    doc_regularizer.validate();
  } catch (const ValidationError& e) {
    fail(std::string("regularizer.doc: ") + e.what());
  }
  if (!quantization.exact && (quantization.bits < 1 || quantization.bits > 16)) {
    fail("quantization.bits: must be in [1, 16]");
  }
  try {
    bm25.validate();
  } catch (const ValidationError& e) {
    fail(std::string("bm25: ") + e.what());
  }
  if (backbone.kind != "toy" && backbone.kind != "file") fail("backbone.kind: must be 'toy' or 'file'");
  if (backbone.kind == "toy" && backbone.dim <= 0) fail("backbone.dim: must be positive");
  const auto& sup = supervision;
  if (sup.loss == LossKind::term_mse && sup.level != LabelLevel::term) {
    fail("supervision.level: term_mse needs level 'term'");
  }
  if ((sup.loss == LossKind::contrastive || sup.loss == LossKind::margin_mse) && sup.level != LabelLevel::passage) {
    fail("supervision.level: passage losses need level 'passage'");
  }
  if (sup.loss == LossKind::margin_mse && sup.label_type != "teacher") {
    fail("supervision.label_type: margin_mse needs teacher labels");
  }
  if ((sup.loss == LossKind::contrastive || sup.loss == LossKind::margin_mse) && sup.num_negatives == 0) {
    fail("supervision.num_negatives: passage losses need at least one negative");
  }
  if (!(sup.learning_rate >= 0.0)) fail("supervision.learning_rate: must be >= 0");
  if (paths.vocab.empty()) fail("paths.vocab: required");
}

namespace {

std::filesystem::path resolve(const json& j, const char* key, const std::filesystem::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  std::filesystem::path p = j.at(key).get<std::string>();
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

EncoderConfig parse_encoder(const json& j) {
  EncoderConfig e;
  if (j.is_string()) {
    e.kind = parse_encoder_kind(j.get<std::string>());
    return e;
  }
  e.kind = parse_encoder_kind(j.at("kind").get<std::string>());
  e.head.activation = parse_activation(j.value("activation", std::string("relu")));
  e.head.mlp_log_normalize = j.value("log_normalize", true);
  e.head.use_quality_heads = j.value("quality_heads", false);
  return e;
}

json encoder_json(const EncoderConfig& e) {
  return json{{"kind", to_string(e.kind)},
              {"activation", to_string(e.head.activation)},
              {"log_normalize", e.head.mlp_log_normalize},
              {"quality_heads", e.head.use_quality_heads}};
}

RegularizerConfig parse_regularizer(const json& j) {
  RegularizerConfig r;
  if (j.is_null()) return r;
  r.kind = parse_regularizer_kind(j.value("kind", std::string("none")));
  r.weight = j.value("weight", 0.0);
  r.k = j.value("k", std::size_t{0});
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    r.schedule.start = s.value("start", std::size_t{0});
    r.schedule.end = s.value("end", std::size_t{0});
    r.schedule.steps = s.value("steps", std::size_t{0});
  }
  return r;
}

json regularizer_json(const RegularizerConfig& r) {
  json j{{"kind", to_string(r.kind)}, {"weight", r.weight}, {"k", r.k}};
  if (r.schedule.enabled()) {
    j["schedule"] = {{"start", r.schedule.start}, {"end", r.schedule.end}, {"steps", r.schedule.steps}};
  }
  return j;
}

}  // namespace

MethodConfig parse_method_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  MethodConfig c;
  try {
    c.name = j.at("name").get<std::string>();
    c.description = j.value("description", std::string());
    c.query_encoder = parse_encoder(j.at("query_encoder"));
    c.doc_encoder = parse_encoder(j.at("doc_encoder"));
    c.shared_heads = j.value("shared_heads", false);
    if (j.contains("regularizer")) {
      const auto& r = j.at("regularizer");
      c.query_regularizer = parse_regularizer(r.value("query", json()));
      c.doc_regularizer = parse_regularizer(r.value("doc", json()));
    }
    if (j.contains("supervision")) {
      const auto& s = j.at("supervision");
      c.supervision.loss = parse_loss_kind(s.value("loss", std::string("none")));
      c.supervision.level = parse_label_level(s.value("level", std::string("none")));
      c.supervision.negatives = s.value("negatives", std::string("none"));
      c.supervision.label_type = s.value("label_type", std::string("none"));
      c.supervision.num_negatives = s.value("num_negatives", std::size_t{1});
      c.supervision.in_batch_negatives = s.value("in_batch_negatives", std::size_t{0});
      c.supervision.triples = resolve(s, "triples", base_dir);
      c.supervision.train_queries = resolve(s, "train_queries", base_dir);
      c.supervision.train_qrels = resolve(s, "train_qrels", base_dir);
      c.supervision.steps = s.value("steps", std::size_t{0});
      c.supervision.learning_rate = s.value("learning_rate", 0.0);
    }
    if (j.contains("quantization")) {
      const auto& q = j.at("quantization");
      c.quantization.exact = q.value("mode", std::string("bits")) == "exact";
      c.quantization.bits = q.value("bits", 8);
    }
    if (j.contains("bm25")) {
      c.bm25.k1 = j.at("bm25").value("k1", 0.9);
      c.bm25.b = j.at("bm25").value("b", 0.4);
    }
    c.retrieval_depth = j.value("retrieval_depth", std::size_t{1000});
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      c.backbone.kind = b.value("kind", std::string("toy"));
      c.backbone.dim = b.value("dim", Eigen::Index{32});
      c.backbone.topic_block = b.value("topic_block", Eigen::Index{0});
      c.backbone.topic_mix = b.value("topic_mix", 0.4);
      c.backbone.context_mix = b.value("context_mix", 0.5);
      c.backbone.doc_embeddings = resolve(b, "doc_embeddings", base_dir);
      c.backbone.query_embeddings = resolve(b, "query_embeddings", base_dir);
      c.backbone.input_embeddings = resolve(b, "input_embeddings", base_dir);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.paths.vocab = resolve(p, "vocab", base_dir);
      c.paths.collection = resolve(p, "collection", base_dir);
      c.paths.queries = resolve(p, "queries", base_dir);
      c.paths.qrels = resolve(p, "qrels", base_dir);
      c.paths.expansions = resolve(p, "expansions", base_dir);
      c.paths.heads = resolve(p, "heads", base_dir);
    }
    c.seed = j.value("seed", std::uint64_t{42});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config field error: ") + e.what());
  }
  return c;
}

MethodConfig load_method_config(const std::filesystem::path& path) {
  return parse_method_config(read_file(path), path.parent_path());
}

std::string dump_method_config(const MethodConfig& c) {
  json j;
  j["name"] = c.name;
  j["description"] = c.description;
  j["query_encoder"] = encoder_json(c.query_encoder);
  j["doc_encoder"] = encoder_json(c.doc_encoder);
  j["shared_heads"] = c.shared_heads;
  j["regularizer"] = {{"query", regularizer_json(c.query_regularizer)}, {"doc", regularizer_json(c.doc_regularizer)}};
  j["supervision"] = {{"loss", to_string(c.supervision.loss)},
                      {"level", to_string(c.supervision.level)},
                      {"negatives", c.supervision.negatives},
                      {"label_type", c.supervision.label_type},
                      {"num_negatives", c.supervision.num_negatives},
                      {"in_batch_negatives", c.supervision.in_batch_negatives},
                      {"triples", c.supervision.triples.string()},
                      {"train_queries", c.supervision.train_queries.string()},
                      {"train_qrels", c.supervision.train_qrels.string()},
                      {"steps", c.supervision.steps},
                      {"learning_rate", c.supervision.learning_rate}};
  j["quantization"] = {{"mode", c.quantization.exact ? "exact" : "bits"}, {"bits", c.quantization.bits}};
  j["bm25"] = {{"k1", c.bm25.k1}, {"b", c.bm25.b}};
  j["retrieval_depth"] = c.retrieval_depth;
  j["backbone"] = {{"kind", c.backbone.kind},
                   {"dim", c.backbone.dim},
                   {"topic_block", c.backbone.topic_block},
                   {"topic_mix", c.backbone.topic_mix},
                   {"context_mix", c.backbone.context_mix},
                   {"doc_embeddings", c.backbone.doc_embeddings.string()},
                   {"query_embeddings", c.backbone.query_embeddings.string()},
                   {"input_embeddings", c.backbone.input_embeddings.string()}};
  j["paths"] = {{"vocab", c.paths.vocab.string()},         {"collection", c.paths.collection.string()},
                {"queries", c.paths.queries.string()},     {"qrels", c.paths.qrels.string()},
                {"expansions", c.paths.expansions.string()}, {"heads", c.paths.heads.string()}};
  j["seed"] = c.seed;
  return j.dump(2);
}

}  // namespace lsr
