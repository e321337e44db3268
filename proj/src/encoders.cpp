#include "lsr/encoders.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "lsr/random.hpp"

namespace lsr {

namespace {

constexpr std::array<std::pair<EncoderKind, std::string_view>, 7> kKindNames{{
    {EncoderKind::binary, "binary"},
    {EncoderKind::mlp, "mlp"},
    {EncoderKind::exp_mlp, "exp_mlp"},
    {EncoderKind::mlm, "mlm"},
    {EncoderKind::cls_mlm, "cls_mlm"},
    {EncoderKind::bm25_query, "bm25_query"},
    {EncoderKind::bm25_doc, "bm25_doc"},
}};

// softplus^{-1}(1): quality heads start out as the identity factor.
const double kUnitSoftplusBias = std::log(std::exp(1.0) - 1.0);

void check_ctx(const TokenizedText& text, const EmbeddingBundle& emb) {
  if (emb.ctx.rows() != static_cast<Eigen::Index>(text.length())) {
    throw ValidationError("embedding rows (" + std::to_string(emb.ctx.rows()) + ") do not match length of '" +
                          text.doc_id + "' (" + std::to_string(text.length()) + ")");
  }
  if (emb.ctx.rows() > 0 && emb.ctx.cols() != emb.dim()) {
    throw ValidationError("contextual and CLS embeddings disagree on dimension");
  }
}

void check_vocab_head(const EmbeddingBundle& emb, const HeadParameters& head) {
  if (!emb.input) throw ValidationError("MLM-style encoders need vocabulary input embeddings");
  if (emb.input->cols() != emb.dim()) throw ValidationError("input embedding dimension mismatch");
  if (emb.input->rows() != head.vocab_size()) {
    throw ValidationError("head vocabulary size (" + std::to_string(head.vocab_size()) +
                          ") does not match input embeddings (" + std::to_string(emb.input->rows()) + ")");
  }
}

double upstream_at(const TermGradient& upstream, TermId t) {
  auto it = std::lower_bound(upstream.begin(), upstream.end(), t,
                             [](const auto& e, TermId id) { return e.first < id; });
  return (it != upstream.end() && it->first == t) ? it->second : 0.0;
}

}  // namespace

std::string_view to_string(EncoderKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::string_view to_string(Activation act) { return act == Activation::relu ? "relu" : "softplus"; }

EncoderKind parse_encoder_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw ValidationError("unknown encoder kind '" + std::string(name) + "'");
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

bool is_trainable(EncoderKind kind) {
  return kind == EncoderKind::mlp || kind == EncoderKind::exp_mlp || kind == EncoderKind::mlm ||
         kind == EncoderKind::cls_mlm;
}

bool may_expand(EncoderKind kind) { return kind == EncoderKind::mlm || kind == EncoderKind::cls_mlm; }

// HeadParameters -----------------------------------------------------------

HeadParameters HeadParameters::initial(Eigen::Index dim, Eigen::Index vocab_size, HeadSettings settings,
                                       std::uint64_t seed) {
  HeadParameters h;
  CounterRng rng(hash_words({seed, 0x4845414455ULL}));
  h.mlp_weight.resize(dim);
  const double scale = 0.1 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(dim, 1)));
  for (Eigen::Index k = 0; k < dim; ++k) h.mlp_weight(k) = scale * rng.normal();
  h.mlp_bias = 1.0;
  h.mlm_bias = Eigen::VectorXd::Zero(vocab_size);
  h.quality_weight = Eigen::VectorXd::Zero(dim);
  h.quality_bias = kUnitSoftplusBias;
  h.importance_weight = Eigen::VectorXd::Zero(dim);
  h.importance_bias = kUnitSoftplusBias;
  h.settings = settings;
  return h;
}

HeadParameters HeadParameters::zeros_like() const {
  HeadParameters z;
  z.mlp_weight = Eigen::VectorXd::Zero(mlp_weight.size());
  z.mlm_bias = Eigen::VectorXd::Zero(mlm_bias.size());
  z.quality_weight = Eigen::VectorXd::Zero(quality_weight.size());
  z.importance_weight = Eigen::VectorXd::Zero(importance_weight.size());
  z.settings = settings;
  return z;
}

void HeadParameters::add_scaled(const HeadParameters& other, double scale) {
  mlp_weight += scale * other.mlp_weight;
  mlp_bias += scale * other.mlp_bias;
  mlm_bias += scale * other.mlm_bias;
  quality_weight += scale * other.quality_weight;
  quality_bias += scale * other.quality_bias;
  importance_weight += scale * other.importance_weight;
  importance_bias += scale * other.importance_bias;
}

void HeadParameters::validate(Eigen::Index d, Eigen::Index v) const {
  if (mlp_weight.size() != d || quality_weight.size() != d || importance_weight.size() != d) {
    throw ValidationError("head tensors expect embedding dimension " + std::to_string(mlp_weight.size()) +
                          ", backbone provides " + std::to_string(d));
  }
  if (mlm_bias.size() != v) {
    throw ValidationError("head MLM bias has " + std::to_string(mlm_bias.size()) + " entries, vocabulary has " +
                          std::to_string(v));
  }
}

bool HeadParameters::operator==(const HeadParameters& o) const {
  return settings == o.settings && mlp_weight == o.mlp_weight && mlp_bias == o.mlp_bias &&
         mlm_bias == o.mlm_bias && quality_weight == o.quality_weight && quality_bias == o.quality_bias &&
         importance_weight == o.importance_weight && importance_bias == o.importance_bias;
}

void Bm25Params::validate() const {
  if (!(k1 >= 0.0)) throw ValidationError("bm25 k1 must be >= 0");
  if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("bm25 b must be in [0, 1]");
}

// Encoders -------------------------------------------------------------------

SparseVector encode_binary(const TokenizedText& text) {
  std::vector<SparseVector::Entry> entries;
  std::vector<TermId> ids = text.token_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  entries.reserve(ids.size());
  for (TermId t : ids) entries.emplace_back(t, 1.0);
  return SparseVector::from_entries(std::move(entries));
}

SparseVector encode_mlp(const TokenizedText& text, const EmbeddingBundle& emb, const HeadParameters& head) {
  return forward(prepare_text(EncoderKind::mlp, text, emb, head.settings), head);
}

TokenizedText expand_text(const TokenizedText& text, const ExpansionMap& expansions,
                          std::vector<std::string>* warnings) {
  auto it = expansions.find(text.doc_id);
  if (it == expansions.end()) {
    if (warnings) warnings->push_back("no expansion terms for '" + text.doc_id + "'");
    return text;
  }
  TokenizedText out = text;
  std::vector<TermId> present = text.token_ids;
  std::sort(present.begin(), present.end());
  for (TermId t : it->second) {
    auto pos = std::lower_bound(present.begin(), present.end(), t);
    if (pos != present.end() && *pos == t) continue;
    present.insert(pos, t);
    out.token_ids.push_back(t);
  }
  return out;
}

SparseVector encode_mlm(const TokenizedText& text, const EmbeddingBundle& emb, const HeadParameters& head) {
  return forward(prepare_text(EncoderKind::mlm, text, emb, head.settings), head);
}

SparseVector encode_cls_mlm(const TokenizedText& text, const EmbeddingBundle& emb, const HeadParameters& head) {
  check_vocab_head(emb, head);
  return forward(prepare_text(EncoderKind::cls_mlm, text, emb, head.settings), head);
}

double bm25_idf(std::size_t num_docs, std::uint32_t df) {
  const double n = static_cast<double>(num_docs);
  const double f = static_cast<double>(df);
  return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

SparseVector encode_bm25_query(const TokenizedText& text, const CorpusStats& stats) {
  std::vector<SparseVector::Entry> entries;
  const SparseVector present = encode_binary(text);
  for (const auto& [t, one] : present.entries()) {
    entries.emplace_back(t, bm25_idf(stats.num_docs, stats.df(t)));
  }
  return SparseVector::from_entries(std::move(entries));
}

SparseVector encode_bm25_doc(const TokenizedText& text, const CorpusStats& stats, const Bm25Params& params) {
  params.validate();
  if (stats.degenerate) throw ValidationError("bm25 document encoder needs corpus stats with avg_doc_len > 0");
  std::map<TermId, double> tf;
  for (TermId t : text.token_ids) tf[t] += 1.0;
  const double norm =
      params.k1 * (1.0 - params.b + params.b * static_cast<double>(text.length()) / stats.avg_doc_len);
  std::vector<SparseVector::Entry> entries;
  entries.reserve(tf.size());
  for (const auto& [t, f] : tf) entries.emplace_back(t, f * (params.k1 + 1.0) / (f + norm));
  return SparseVector::from_entries(std::move(entries));
}

// Prepared forward / backward ------------------------------------------------

PreparedText prepare_text(EncoderKind kind, const TokenizedText& text, const EmbeddingBundle& emb,
                          const HeadSettings& settings) {
  check_ctx(text, emb);
  switch (kind) {
    case EncoderKind::mlp:
    case EncoderKind::exp_mlp:
      return PreparedMlp{text.token_ids, emb.ctx};
    case EncoderKind::mlm: {
      if (!emb.input) throw ValidationError("MLM encoder needs vocabulary input embeddings");
      if (emb.input->cols() != emb.dim()) throw ValidationError("input embedding dimension mismatch");
      if (text.length() == 0) {
        if (settings.use_quality_heads) return PreparedMlmFull{};
        return PreparedMlmMax{};
      }
      Eigen::MatrixXd projection = emb.ctx * emb.input->transpose();
      if (settings.use_quality_heads) return PreparedMlmFull{std::move(projection), emb.ctx, emb.cls};
      return PreparedMlmMax{projection.colwise().maxCoeff().transpose()};
    }
    case EncoderKind::cls_mlm: {
      if (!emb.input) throw ValidationError("clsMLM encoder needs vocabulary input embeddings");
      if (emb.input->cols() != emb.dim()) throw ValidationError("input embedding dimension mismatch");
      if (text.length() == 0) return PreparedClsMlm{};
      return PreparedClsMlm{*emb.input * emb.cls};
    }
    default:
      throw ValidationError("encoder kind '" + std::string(to_string(kind)) + "' has no trainable head");
  }
}

namespace {

struct ColumnMax {
  Eigen::Index pos = 0;
  double value = 0.0;
};

double inverse_activation(Activation act, double y) {
  return act == Activation::relu ? y : std::log(std::expm1(y));
}

/// max_j act(x_ji + b) * g_j for one vocabulary column, ties to the lowest j.
/// Positions whose projection cannot reach the value at the column's largest
/// projection, even with the largest g, are skipped without evaluation.
ColumnMax mlm_column_max(const Eigen::MatrixXd& projection, Eigen::Index i, double bias, const Eigen::VectorXd& g,
                         double g_max, Activation act) {
  const auto col = projection.col(i);
  Eigen::Index top = 0;
  col.maxCoeff(&top);
  const double bound = activate(act, col(top) + bias) * g(top);
  ColumnMax best;
  if (!(bound > 0.0)) return best;  // every term is 0
  double threshold = inverse_activation(act, bound / g_max) - bias;
  threshold -= 1e-9 * (1.0 + std::abs(threshold));
  best.value = -1.0;
  for (Eigen::Index j = 0; j < col.size(); ++j) {
    if (col(j) < threshold) continue;
    const double v = activate(act, col(j) + bias) * g(j);
    if (v > best.value) {
      best.value = v;
      best.pos = j;
    }
  }
  return best;
}

struct ForwardVisitor {
  const HeadParameters& head;

  SparseVector operator()(const PreparedMlp& p) const {
    if (p.ctx.rows() > 0 && p.ctx.cols() != head.dim()) throw ValidationError("MLP head dimension mismatch");
    std::map<TermId, double> acc;
    const Activation act = head.settings.activation;
    for (Eigen::Index j = 0; j < p.ctx.rows(); ++j) {
      const double a = activate(act, p.ctx.row(j).dot(head.mlp_weight) + head.mlp_bias);
      acc[p.tokens[static_cast<std::size_t>(j)]] += head.settings.mlp_log_normalize ? std::log1p(a) : a;
    }
    return SparseVector::from_entries({acc.begin(), acc.end()});
  }

  SparseVector operator()(const PreparedMlmMax& p) const {
    if (p.column_max.size() == 0) return {};
    if (p.column_max.size() != head.vocab_size()) throw ValidationError("MLM head vocabulary mismatch");
    std::vector<SparseVector::Entry> entries;
    const Activation act = head.settings.activation;
    for (Eigen::Index i = 0; i < p.column_max.size(); ++i) {
      const double w = std::log1p(activate(act, p.column_max(i) + head.mlm_bias(i)));
      if (w > 0.0) entries.emplace_back(static_cast<TermId>(i), w);
    }
    return SparseVector::from_entries(std::move(entries));
  }

  SparseVector operator()(const PreparedMlmFull& p) const {
    if (p.projection.rows() == 0) return {};
    if (p.projection.cols() != head.vocab_size()) throw ValidationError("MLM head vocabulary mismatch");
    const Activation act = head.settings.activation;
    const double q = softplus(p.cls.dot(head.quality_weight) + head.quality_bias);
    Eigen::VectorXd g(p.ctx.rows());
    for (Eigen::Index j = 0; j < p.ctx.rows(); ++j) {
      g(j) = softplus(p.ctx.row(j).dot(head.importance_weight) + head.importance_bias);
    }
    const double g_max = g.maxCoeff();
    std::vector<SparseVector::Entry> entries;
    for (Eigen::Index i = 0; i < p.projection.cols(); ++i) {
      const double m = mlm_column_max(p.projection, i, head.mlm_bias(i), g, g_max, act).value;
      const double w = q * std::log1p(m);
      if (w > 0.0) entries.emplace_back(static_cast<TermId>(i), w);
    }
    return SparseVector::from_entries(std::move(entries));
  }

  SparseVector operator()(const PreparedClsMlm& p) const {
    if (p.projection.size() == 0) return {};
    if (p.projection.size() != head.vocab_size()) throw ValidationError("clsMLM head vocabulary mismatch");
    std::vector<SparseVector::Entry> entries;
    for (Eigen::Index i = 0; i < p.projection.size(); ++i) {
      const double w = activate(head.settings.activation, p.projection(i) + head.mlm_bias(i));
      if (w > 0.0) entries.emplace_back(static_cast<TermId>(i), w);
    }
    return SparseVector::from_entries(std::move(entries));
  }
};

struct BackwardVisitor {
  const HeadParameters& head;
  const TermGradient& upstream;
  HeadGradient& grad;

  void operator()(const PreparedMlp& p) const {
    const Activation act = head.settings.activation;
    for (Eigen::Index j = 0; j < p.ctx.rows(); ++j) {
      const double u = upstream_at(upstream, p.tokens[static_cast<std::size_t>(j)]);
      if (u == 0.0) continue;
      const double z = p.ctx.row(j).dot(head.mlp_weight) + head.mlp_bias;
      const double a = activate(act, z);
      const double outer = head.settings.mlp_log_normalize ? 1.0 / (1.0 + a) : 1.0;
      const double gz = u * outer * activate_derivative(act, z);
      grad.mlp_weight += gz * p.ctx.row(j).transpose();
      grad.mlp_bias += gz;
    }
  }

  void operator()(const PreparedMlmMax& p) const {
    if (p.column_max.size() == 0) return;
    const Activation act = head.settings.activation;
    for (const auto& [t, u] : upstream) {
      const auto i = static_cast<Eigen::Index>(t);
      const double x = p.column_max(i) + head.mlm_bias(i);
      const double a = activate(act, x);
      grad.mlm_bias(i) += u * activate_derivative(act, x) / (1.0 + a);
    }
  }

  void operator()(const PreparedMlmFull& p) const {
    if (p.projection.rows() == 0) return;
    const Activation act = head.settings.activation;
    const double zq = p.cls.dot(head.quality_weight) + head.quality_bias;
    const double q = softplus(zq);
    Eigen::VectorXd zg(p.ctx.rows());
    Eigen::VectorXd g(p.ctx.rows());
    for (Eigen::Index j = 0; j < p.ctx.rows(); ++j) {
      zg(j) = p.ctx.row(j).dot(head.importance_weight) + head.importance_bias;
      g(j) = softplus(zg(j));
    }
    const double g_max = g.maxCoeff();
    for (const auto& [t, u] : upstream) {
      const auto i = static_cast<Eigen::Index>(t);
      const auto [best, m] = mlm_column_max(p.projection, i, head.mlm_bias(i), g, g_max, act);
      if (m <= 0.0) continue;
      const double x = p.projection(best, i) + head.mlm_bias(i);
      const double a = activate(act, x);
      const double dlog = q / (1.0 + m);
      grad.mlm_bias(i) += u * dlog * g(best) * activate_derivative(act, x);
      const double dq = u * std::log1p(m) * sigmoid(zq);
      grad.quality_weight += dq * p.cls;
      grad.quality_bias += dq;
      const double dg = u * dlog * a * sigmoid(zg(best));
      grad.importance_weight += dg * p.ctx.row(best).transpose();
      grad.importance_bias += dg;
    }
  }

  void operator()(const PreparedClsMlm& p) const {
    if (p.projection.size() == 0) return;
    for (const auto& [t, u] : upstream) {
      const auto i = static_cast<Eigen::Index>(t);
      grad.mlm_bias(i) += u * activate_derivative(head.settings.activation, p.projection(i) + head.mlm_bias(i));
    }
  }
};

}  // namespace

SparseVector forward(const PreparedText& prepared, const HeadParameters& head) {
  return std::visit(ForwardVisitor{head}, prepared);
}

void backward(const PreparedText& prepared, const HeadParameters& head, const TermGradient& upstream,
              HeadGradient& grad) {
  std::visit(BackwardVisitor{head, upstream, grad}, prepared);
}

// Toy backbone ---------------------------------------------------------------

ToyBackbone::ToyBackbone(ToyBackboneOptions options) : options_(options) {
  if (options_.dim <= 0) throw ValidationError("toy backbone dimension must be positive");
  const Eigen::Index d = options_.dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double topic_w = options_.topic_block > 0 ? std::sqrt(options_.topic_mix) : 0.0;
  const double own_w = options_.topic_block > 0 ? std::sqrt(1.0 - options_.topic_mix) : 1.0;
  auto table = std::make_shared<Eigen::MatrixXd>(options_.vocab_size, d);
  Eigen::VectorXd topic(d);
  Eigen::Index current_topic = -1;
  for (Eigen::Index i = 0; i < options_.vocab_size; ++i) {
    if (options_.topic_block > 0 && i / options_.topic_block != current_topic) {
      current_topic = i / options_.topic_block;
      CounterRng trng(hash_words({options_.seed, 0x22, static_cast<std::uint64_t>(current_topic)}));
      for (Eigen::Index k = 0; k < d; ++k) topic(k) = trng.normal() * inv_sqrt_d;
    }
    CounterRng rng(hash_words({options_.seed, 0x11, static_cast<std::uint64_t>(i)}));
    for (Eigen::Index k = 0; k < d; ++k) {
      const double own = rng.normal() * inv_sqrt_d;
      (*table)(i, k) = own_w * own + (topic_w > 0.0 ? topic_w * topic(k) : 0.0);
    }
  }
  input_ = std::move(table);
}

EmbeddingBundle ToyBackbone::embed(const TokenizedText& text) const {
  validate_text(text, static_cast<std::size_t>(options_.vocab_size));
  const Eigen::Index d = options_.dim;
  const auto len = static_cast<Eigen::Index>(text.length());
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  EmbeddingBundle out;
  out.input = input_;
  out.ctx.resize(len, d);
  const auto& toks = text.token_ids;
  for (Eigen::Index j = 0; j < len; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const std::uint64_t prev = uj > 0 ? toks[uj - 1] + 1ULL : 0ULL;
    const std::uint64_t next = uj + 1 < toks.size() ? toks[uj + 1] + 1ULL : 0ULL;
    CounterRng rng(hash_words({options_.seed, 0x33, prev, toks[uj], next, uj % 2}));
    for (Eigen::Index k = 0; k < d; ++k) {
      out.ctx(j, k) = (*input_)(toks[uj], k) + options_.context_mix * rng.normal() * inv_sqrt_d;
    }
  }
  out.cls = len > 0 ? Eigen::VectorXd(out.ctx.colwise().mean().transpose()) : Eigen::VectorXd::Zero(d);
  return out;
}

EmbeddingBundle toy_backbone(const TokenizedText& text, Eigen::Index vocab_size, Eigen::Index dim,
                             std::uint64_t seed) {
  ToyBackboneOptions opts;
  opts.vocab_size = vocab_size;
  opts.dim = dim;
  opts.seed = seed;
  return ToyBackbone(opts).embed(text);
}

}  // namespace lsr
