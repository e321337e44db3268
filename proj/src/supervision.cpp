#include "lsr/supervision.hpp"

#include <set>
#include <unordered_map>

#include "lsr/random.hpp"
#include "lsr/regularization.hpp"

namespace lsr {

TermRecallLabels compute_term_recall(const std::map<std::string, std::vector<TokenizedText>>& relevant_queries) {
  TermRecallLabels out;
  for (const auto& [doc_id, queries] : relevant_queries) {
    if (queries.empty()) {
      out.warnings.push_back("doc '" + doc_id + "' has no relevant queries; skipped");
      continue;
    }
    std::map<TermId, std::size_t> containing;
    for (const auto& q : queries) {
      std::set<TermId> distinct(q.token_ids.begin(), q.token_ids.end());
      for (TermId t : distinct) ++containing[t];
    }
    auto& labels = out.per_doc[doc_id];
    for (const auto& [t, c] : containing) {
      labels[t] = static_cast<double>(c) / static_cast<double>(queries.size());
    }
  }
  return out;
}

TermMseResult term_mse_loss(const SparseVector& pred, const TermLabels& labels) {
  if (labels.empty()) throw ValidationError("term MSE needs at least one labeled term");
  const double n = static_cast<double>(labels.size());
  TermMseResult out;
  out.gradient.reserve(labels.size());
  for (const auto& [t, label] : labels) {
    const double diff = pred.weight(t) - label;
    out.value += diff * diff / n;
    out.gradient.emplace_back(t, 2.0 * diff / n);
  }
  return out;
}

HeadPair initial_heads(const MethodConfig& config, Eigen::Index dim, Eigen::Index vocab_size, std::uint64_t seed) {
  HeadPair heads;
  heads.shared = config.shared_heads;
  if (config.shared_heads) {
    auto h = HeadParameters::initial(dim, vocab_size, config.query_encoder.head, hash_words({seed, 0x5348}));
    heads.query = h;
    heads.doc = h;
    return heads;
  }
  if (is_trainable(config.query_encoder.kind)) {
    heads.query = HeadParameters::initial(dim, vocab_size, config.query_encoder.head, hash_words({seed, 0x51}));
  }
  if (is_trainable(config.doc_encoder.kind)) {
    heads.doc = HeadParameters::initial(dim, vocab_size, config.doc_encoder.head, hash_words({seed, 0x44}));
  }
  return heads;
}

namespace {

/// The distinct texts of one side of the training data.
struct Side {
  EncoderKind kind{};
  const RegularizerConfig* regularizer = nullptr;
  TextSide text_side{};
  std::vector<TokenizedText> texts;
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<PreparedText> prepared;
  std::vector<SparseVector> vectors;
  Eigen::MatrixXd upstream;  // |V| x texts

  std::size_t add(const TokenizedText& text) {
    auto [it, inserted] = slot.emplace(text.doc_id, texts.size());
    if (inserted) texts.push_back(text);
    return it->second;
  }
};

struct TripleSlots {
  std::size_t query;
  std::size_t positive;
  std::vector<std::size_t> negatives;
};

SparseVector encode_fixed(EncoderKind kind, const TokenizedText& text, const std::optional<CorpusStats>& stats,
                          const Bm25Params& bm25) {
  switch (kind) {
    case EncoderKind::binary:
      return encode_binary(text);
    case EncoderKind::bm25_query:
    case EncoderKind::bm25_doc:
      if (!stats) throw ValidationError("training with a bm25 encoder side needs corpus stats");
      return kind == EncoderKind::bm25_query ? encode_bm25_query(text, *stats) : encode_bm25_doc(text, *stats, bm25);
    default:
      throw ValidationError("unexpected fixed encoder kind");
  }
}

TermGradient column_gradient(const Eigen::MatrixXd& upstream, Eigen::Index col) {
  TermGradient g;
  for (Eigen::Index i = 0; i < upstream.rows(); ++i) {
    const double v = upstream(i, col);
    if (v != 0.0) g.emplace_back(static_cast<TermId>(i), v);
  }
  return g;
}

void add_vector(Eigen::MatrixXd& upstream, std::size_t col, const SparseVector& v, double scale) {
  if (scale == 0.0) return;
  for (const auto& [t, w] : v.entries()) upstream(t, static_cast<Eigen::Index>(col)) += scale * w;
}

double regularize_side(Side& side, double lambda, std::size_t vocab_size) {
  if (!side.regularizer || lambda <= 0.0 || side.vectors.empty()) return 0.0;
  const auto kind = side.regularizer->kind;
  const double n = static_cast<double>(side.vectors.size());
  double value = 0.0;
  if (kind == RegularizerKind::flops) {
    auto res = flops_penalty(side.vectors, vocab_size);
    value = res.value;
    for (std::size_t k = 0; k < side.vectors.size(); ++k) {
      for (const auto& [t, g] : res.gradient[k]) side.upstream(t, static_cast<Eigen::Index>(k)) += lambda * g;
    }
  } else if (kind == RegularizerKind::l1 || kind == RegularizerKind::l2) {
    const int p = kind == RegularizerKind::l1 ? 1 : 2;
    for (std::size_t k = 0; k < side.vectors.size(); ++k) {
      auto res = lp_penalty(side.vectors[k], p);
      value += res.value / n;
      for (const auto& [t, g] : res.gradient) side.upstream(t, static_cast<Eigen::Index>(k)) += lambda * g / n;
    }
  }
  return lambda * value;
}

/// Adam moments for one head, stored in the head layout.
struct AdamState {
  HeadParameters m;
  HeadParameters v;
  std::size_t t = 0;
};

void adam_step(HeadParameters& p, const HeadGradient& g, AdamState& s, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (s.t == 0) {
    s.m = p.zeros_like();
    s.v = p.zeros_like();
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
  auto vec = [&](Eigen::VectorXd& x, const Eigen::VectorXd& gx, Eigen::VectorXd& m, Eigen::VectorXd& v) {
    m = b1 * m + (1.0 - b1) * gx;
    v = b2 * v + (1.0 - b2) * gx.cwiseAbs2();
    x.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  auto scalar = [&](double& x, double gx, double& m, double& v) {
    m = b1 * m + (1.0 - b1) * gx;
    v = b2 * v + (1.0 - b2) * gx * gx;
    x -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
  };
  vec(p.mlp_weight, g.mlp_weight, s.m.mlp_weight, s.v.mlp_weight);
  scalar(p.mlp_bias, g.mlp_bias, s.m.mlp_bias, s.v.mlp_bias);
  vec(p.mlm_bias, g.mlm_bias, s.m.mlm_bias, s.v.mlm_bias);
  vec(p.quality_weight, g.quality_weight, s.m.quality_weight, s.v.quality_weight);
  scalar(p.quality_bias, g.quality_bias, s.m.quality_bias, s.v.quality_bias);
  vec(p.importance_weight, g.importance_weight, s.m.importance_weight, s.v.importance_weight);
  scalar(p.importance_bias, g.importance_bias, s.m.importance_bias, s.v.importance_bias);
}

}  // namespace

TrainResult train_heads(const MethodConfig& config, const TrainingData& data, const EmbeddingSource& embeddings,
                        const TrainOptions& options) {
  if (config.shared_heads && (options.frozen_query_head || options.frozen_doc_head)) {
    throw ValidationError("train-head: a frozen side cannot be combined with shared_heads");
  }
  const bool q_trainable = is_trainable(config.query_encoder.kind) && !options.frozen_query_head;
  const bool d_trainable = is_trainable(config.doc_encoder.kind) && !options.frozen_doc_head;
  if (!q_trainable && !d_trainable) {
    throw ValidationError("train-head: config '" + config.name + "' has no trainable encoder left to update (query: " +
                          std::string(to_string(config.query_encoder.kind)) +
                          ", doc: " + std::string(to_string(config.doc_encoder.kind)) + ")");
  }
  const LossKind loss = config.supervision.loss;
  if (loss == LossKind::none) throw ValidationError("train-head: config '" + config.name + "' has no loss");
  if (loss == LossKind::term_mse ? data.term_targets.empty() : data.triples.empty()) {
    throw ValidationError("train-head: no training examples for loss '" + std::string(to_string(loss)) + "'");
  }

  const Eigen::Index dim = embeddings.dim();
  const Eigen::Index vocab = embeddings.vocab_size();
  const auto vocab_size = static_cast<std::size_t>(vocab);
  auto check_frozen = [&](const std::optional<HeadParameters>& h, const EncoderConfig& enc, const char* side) {
    if (!h) return;
    h->validate(dim, vocab);
    if (!(h->settings == enc.head)) {
      throw ValidationError(std::string("train-head: frozen ") + side + " head settings differ from " + side + "_encoder");
    }
  };
  check_frozen(options.frozen_query_head, config.query_encoder, "query");
  check_frozen(options.frozen_doc_head, config.doc_encoder, "doc");

  TrainResult result;
  result.heads = initial_heads(config, dim, vocab, options.seed);
  HeadPair& heads = result.heads;
  if (options.frozen_query_head) heads.query = options.frozen_query_head;
  if (options.frozen_doc_head) heads.doc = options.frozen_doc_head;

  RegularizerConfig q_reg = config.query_regularizer;
  RegularizerConfig d_reg = config.doc_regularizer;
  if (options.regularizer_weight) {
    q_reg.weight = *options.regularizer_weight;
    d_reg.weight = *options.regularizer_weight;
  }

  Side qside{config.query_encoder.kind, &q_reg, TextSide::query, {}, {}, {}, {}, {}};
  Side dside{config.doc_encoder.kind, &d_reg, TextSide::doc, {}, {}, {}, {}, {}};
  std::vector<TripleSlots> slots;
  std::vector<std::size_t> target_slots;
  if (loss == LossKind::term_mse) {
    for (const auto& t : data.term_targets) target_slots.push_back(dside.add(t.doc));
  } else {
    const std::size_t max_negs = std::max<std::size_t>(config.supervision.num_negatives, 1);
    for (const auto& tr : data.triples) {
      if (tr.negatives.empty()) throw ValidationError("training triple for '" + tr.query.doc_id + "' has no negatives");
      TripleSlots s{qside.add(tr.query), dside.add(tr.positive), {}};
      for (std::size_t k = 0; k < std::min(max_negs, tr.negatives.size()); ++k) s.negatives.push_back(dside.add(tr.negatives[k]));
      if (loss == LossKind::margin_mse) {
        if (!tr.teacher || tr.teacher->negatives.size() < s.negatives.size()) {
          throw ValidationError("margin_mse needs teacher scores for every negative of '" + tr.query.doc_id + "'");
        }
      }
      slots.push_back(std::move(s));
    }
    if (loss == LossKind::contrastive) {
      const std::size_t n = slots.size();
      const std::size_t extra = std::min(config.supervision.in_batch_negatives, n - 1);
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t k = 1; k <= extra; ++k) {
          const std::size_t other = slots[(t + k) % n].positive;
          auto& negs = slots[t].negatives;
          if (other != slots[t].positive && std::find(negs.begin(), negs.end(), other) == negs.end()) negs.push_back(other);
        }
      }
    }
  }

  for (Side* side : {&qside, &dside}) {
    const bool is_query = side == &qside;
    const HeadSettings& settings = is_query ? config.query_encoder.head : config.doc_encoder.head;
    const bool updated = is_query ? q_trainable : d_trainable;
    const auto& head = is_query ? heads.query : heads.doc;
    for (const auto& text : side->texts) {
      if (updated) {
        side->prepared.push_back(prepare_text(side->kind, text, embeddings.embed(text, side->text_side), settings));
      } else if (is_trainable(side->kind)) {
        SparseVector v;
        if (!text.token_ids.empty()) {
          v = forward(prepare_text(side->kind, text, embeddings.embed(text, side->text_side), settings), *head);
        }
        if (side->regularizer->kind == RegularizerKind::topk) v = topk_prune(v, side->regularizer->k);
        side->vectors.push_back(std::move(v));
      } else {
        side->vectors.push_back(encode_fixed(side->kind, text, data.stats, config.bm25));
      }
    }
    side->upstream = Eigen::MatrixXd::Zero(vocab, static_cast<Eigen::Index>(side->texts.size()));
  }

  const std::size_t steps = options.steps;
  const double ramp_len = static_cast<double>(steps) / 3.0;
  std::vector<double> pos_scores, neg_scores, student, teacher;
  AdamState q_adam, d_adam;
  for (std::size_t step = 0; step < steps; ++step) {
    const double ramp = ramp_len > 0.0 ? std::min(1.0, std::pow(static_cast<double>(step) / ramp_len, 2.0)) : 1.0;

    // forward
    for (Side* side : {&qside, &dside}) {
      const auto& head = side == &qside ? heads.query : heads.doc;
      if (!(side == &qside ? q_trainable : d_trainable)) continue;
      side->vectors.clear();
      for (const auto& p : side->prepared) {
        SparseVector v = forward(p, *head);
        const auto& reg = *side->regularizer;
        if (reg.kind == RegularizerKind::topk && reg.schedule.enabled()) v = topk_prune(v, reg.schedule.k_at(step));
        side->vectors.push_back(std::move(v));
      }
      side->upstream.setZero();
    }

    // supervision
    double sup = 0.0;
    if (loss == LossKind::term_mse) {
      const double n = static_cast<double>(target_slots.size());
      for (std::size_t k = 0; k < target_slots.size(); ++k) {
        const std::size_t d = target_slots[k];
        auto res = term_mse_loss(dside.vectors[d], data.term_targets[k].labels);
        sup += res.value / n;
        for (const auto& [t, g] : res.gradient) dside.upstream(t, static_cast<Eigen::Index>(d)) += g / n;
      }
    } else if (loss == LossKind::contrastive) {
      const double n = static_cast<double>(slots.size());
      for (const auto& s : slots) {
        const auto& q = qside.vectors[s.query];
        neg_scores.clear();
        for (std::size_t d : s.negatives) neg_scores.push_back(dot(q, dside.vectors[d]));
        auto res = contrastive_nll<double>(dot(q, dside.vectors[s.positive]), neg_scores);
        sup += res.value / n;
        add_vector(qside.upstream, s.query, dside.vectors[s.positive], res.grad_positive / n);
        add_vector(dside.upstream, s.positive, q, res.grad_positive / n);
        for (std::size_t k = 0; k < s.negatives.size(); ++k) {
          add_vector(qside.upstream, s.query, dside.vectors[s.negatives[k]], res.grad_negatives[k] / n);
          add_vector(dside.upstream, s.negatives[k], q, res.grad_negatives[k] / n);
        }
      }
    } else {
      student.clear();
      teacher.clear();
      for (std::size_t t = 0; t < slots.size(); ++t) {
        const auto& s = slots[t];
        const auto& q = qside.vectors[s.query];
        const double pos = dot(q, dside.vectors[s.positive]);
        const auto& ts = *data.triples[t].teacher;
        for (std::size_t k = 0; k < s.negatives.size(); ++k) {
          student.push_back(pos - dot(q, dside.vectors[s.negatives[k]]));
          teacher.push_back(ts.positive - ts.negatives[k]);
        }
      }
      auto res = margin_mse_loss<double>(student, teacher);
      sup = res.value;
      std::size_t m = 0;
      for (const auto& s : slots) {
        const auto& q = qside.vectors[s.query];
        for (std::size_t d : s.negatives) {
          const double g = res.grad_margins[m++];
          add_vector(qside.upstream, s.query, dside.vectors[s.positive], g);
          add_vector(qside.upstream, s.query, dside.vectors[d], -g);
          add_vector(dside.upstream, s.positive, q, g);
          add_vector(dside.upstream, d, q, -g);
        }
      }
    }

    double total = sup;
    if (q_trainable) total += regularize_side(qside, ramp * q_reg.weight, vocab_size);
    if (d_trainable) total += regularize_side(dside, ramp * d_reg.weight, vocab_size);
    result.supervision_history.push_back(sup);
    result.loss_history.push_back(total);

    // backward + update
    HeadGradient qgrad = heads.query ? heads.query->zeros_like() : HeadGradient{};
    HeadGradient dgrad = heads.doc ? heads.doc->zeros_like() : HeadGradient{};
    HeadGradient& dgrad_ref = heads.shared ? qgrad : dgrad;
    for (Side* side : {&qside, &dside}) {
      if (!(side == &qside ? q_trainable : d_trainable)) continue;
      const HeadParameters& head = side == &qside ? *heads.query : *heads.doc;
      HeadGradient& grad = side == &qside ? qgrad : dgrad_ref;
      for (std::size_t k = 0; k < side->prepared.size(); ++k) {
        auto up = column_gradient(side->upstream, static_cast<Eigen::Index>(k));
        if (!up.empty()) backward(side->prepared[k], head, up, grad);
      }
    }
    if (heads.shared) {
      adam_step(*heads.query, qgrad, q_adam, options.learning_rate);
      heads.doc = heads.query;
    } else {
      if (q_trainable) adam_step(*heads.query, qgrad, q_adam, options.learning_rate);
      if (d_trainable) adam_step(*heads.doc, dgrad, d_adam, options.learning_rate);
    }
  }
  return result;
}

}  // namespace lsr
