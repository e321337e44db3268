#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gradient_checks.hpp"
#include "lsr/supervision.hpp"
#include "oracles.hpp"

using namespace lsr;

namespace {

// Eight docs, each holding one key term (id = doc index) plus filler terms
// 8..23; query i is the single key term i.
struct KeyTask {
  std::vector<TokenizedText> docs, queries;
  TrainingData data;
  ToyBackbone backbone{{24, 16, 5}};

  KeyTask() {
    oracle::Gen g(12);
    for (TermId i = 0; i < 8; ++i) {
      TokenizedText d{"d" + std::to_string(i), {i}};
      for (int k = 0; k < 6; ++k) d.token_ids.push_back(static_cast<TermId>(8 + g.index(16)));
      docs.push_back(d);
      queries.push_back({"q" + std::to_string(i), {i}});
    }
    for (std::size_t i = 0; i < 8; ++i) {
      TrainingTriple t{queries[i], docs[i], {docs[(i + 1) % 8], docs[(i + 3) % 8]}, std::nullopt};
      t.teacher = TeacherScores{3.0, {0.5, 0.0}};
      data.triples.push_back(t);
    }
  }
};

MethodConfig config(EncoderKind q, EncoderKind d, LossKind loss) {
  MethodConfig c;
  c.name = "unit";
  c.query_encoder.kind = q;
  c.doc_encoder.kind = d;
  c.supervision.loss = loss;
  c.supervision.level = LabelLevel::passage;
  c.supervision.num_negatives = 2;
  c.supervision.label_type = loss == LossKind::margin_mse ? "teacher" : "human";
  c.paths.vocab = "unused";
  return c;
}

}  // namespace

TEST_SUITE("supervision") {

TEST_CASE("term recall by hand") {
  std::map<std::string, std::vector<TokenizedText>> rel{
      {"d", {{"q1", {0, 1}}, {"q2", {0, 2}}}}, {"e", {{"q3", {0}}}}, {"f", {}}};
  auto labels = compute_term_recall(rel);
  CHECK(labels.per_doc.at("d") == TermLabels{{0, 1.0}, {1, 0.5}, {2, 0.5}});
  CHECK(labels.per_doc.at("e") == TermLabels{{0, 1.0}});
  CHECK(labels.per_doc.at("d").count(3) == 0);
  CHECK(labels.per_doc.count("f") == 0);
  CHECK(labels.warnings.size() == 1);

  std::map<std::string, std::vector<TokenizedText>> repeat{{"d", {{"q", {0, 0}}}}};
  CHECK(compute_term_recall(repeat).per_doc.at("d").at(0) == 1.0);
}

TEST_CASE("term recall values stay in [0, 1]") {
  oracle::Gen g(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<std::string, std::vector<TokenizedText>> rel;
    for (int d = 0; d < 5; ++d) {
      auto& qs = rel["d" + std::to_string(d)];
      for (std::size_t k = 0, n = 1 + g.index(5); k < n; ++k) qs.push_back(oracle::random_text(g, 10, 1, 5));
    }
    for (const auto& [doc, labels] : compute_term_recall(rel).per_doc) {
      for (const auto& [t, v] : labels) {
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("term mse worked examples") {
  CHECK(term_mse_loss(SparseVector::from_entries({{0, 1.0}}), {{0, 1.0}}).value == 0.0);
  CHECK(term_mse_loss(SparseVector{}, {{0, 1.0}}).value == doctest::Approx(1.0));
  auto r = term_mse_loss(SparseVector::from_entries({{0, 0.5}, {1, 0.5}}), {{0, 1.0}, {1, 0.0}});
  CHECK(r.value == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(gradcheck::grad_at(r.gradient, 0) == doctest::Approx(-0.5));
  CHECK(gradcheck::grad_at(r.gradient, 1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(term_mse_loss(SparseVector{}, {}), ValidationError);
}

TEST_CASE("contrastive worked examples") {
  for (std::size_t n = 2; n <= 6; ++n) {
    std::vector<double> negs(n - 1, 0.7);
    CHECK(contrastive_nll<double>(0.7, negs).value == doctest::Approx(std::log(static_cast<double>(n))));
  }
  std::vector<double> far{0.0, -1.0};
  CHECK(contrastive_nll<double>(40.0, far).value < 1e-6);
  std::vector<double> one{0.0};
  CHECK(contrastive_nll<double>(1.0, one).value == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-15));
  CHECK_THROWS_AS(contrastive_nll<double>(1.0, std::vector<double>{}), ValidationError);

  std::vector<double> huge{1000.0, 999.0};
  CHECK(std::isfinite(contrastive_nll<double>(1001.0, huge).value));
  std::vector<float> fneg{0.0f};
  CHECK(contrastive_nll<float>(1.0f, fneg).value == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-6));
}

TEST_CASE("contrastive ignores a shared score offset") {
  oracle::Gen g(21);
  for (int trial = 0; trial < 200; ++trial) {
    const double pos = 4.0 * g.normal(), c = g.uniform(-50.0, 50.0);
    std::vector<double> negs(1 + g.index(6)), shifted;
    for (auto& x : negs) {
      x = 4.0 * g.normal();
      shifted.push_back(x + c);
    }
    CHECK(std::abs(contrastive_nll<double>(pos, negs).value - contrastive_nll<double>(pos + c, shifted).value) <= 1e-9);
  }
}

TEST_CASE("margin mse worked examples") {
  std::vector<double> a{1.0, 2.0}, zero{0.0, 0.0};
  CHECK(margin_mse_loss<double>(a, a).value == 0.0);
  CHECK(margin_mse_loss<double>(std::vector<double>{1.0}, std::vector<double>{3.0}).value == doctest::Approx(4.0));
  CHECK(margin_mse_loss<double>(a, zero).value == doctest::Approx(2.5).epsilon(1e-15));
  CHECK_THROWS_AS(margin_mse_loss<double>(a, std::vector<double>{1.0}), ValidationError);
  CHECK_THROWS_AS(margin_mse_loss<double>(std::vector<double>{}, std::vector<double>{}), ValidationError);
}

TEST_CASE("margin mse ignores an offset shared by both scores of a pair") {
  oracle::Gen g(22);
  for (int trial = 0; trial < 200; ++trial) {
    const double pos = g.normal(), neg = g.normal(), c = g.uniform(-20.0, 20.0);
    std::vector<double> teacher{g.normal()};
    const double a = margin_mse_loss<double>(std::vector<double>{pos - neg}, teacher).value;
    const double b = margin_mse_loss<double>(std::vector<double>{(pos + c) - (neg + c)}, teacher).value;
    CHECK(a == doctest::Approx(b).epsilon(1e-9));
  }
}

TEST_CASE("loss gradients match central differences") {
  for (const auto& o : {gradcheck::term_mse(100, 31), gradcheck::contrastive(100, 32), gradcheck::margin_mse(100, 33)}) {
    CAPTURE(o.name);
    CHECK(o.instances == 100);
    CHECK(o.max_rel_error <= 1e-4);
  }
}

TEST_CASE("zero learning rate leaves heads at initialization") {
  KeyTask task;
  auto c = config(EncoderKind::mlm, EncoderKind::mlm, LossKind::contrastive);
  c.shared_heads = true;
  c.query_regularizer = c.doc_regularizer = {RegularizerKind::flops, 0.1};
  TrainOptions o;
  o.steps = 10;
  o.learning_rate = 0.0;
  auto r = train_heads(c, task.data, task.backbone, o);
  auto init = initial_heads(c, task.backbone.dim(), task.backbone.vocab_size(), o.seed);
  CHECK(*r.heads.query == *init.query);
  CHECK(*r.heads.doc == *init.doc);
  CHECK(r.loss_history.size() == 10);
}

TEST_CASE("non-differentiable configs are rejected") {
  KeyTask task;
  TrainOptions o;
  CHECK_THROWS_AS(train_heads(config(EncoderKind::binary, EncoderKind::binary, LossKind::contrastive), task.data,
                              task.backbone, o),
                  ValidationError);
  CHECK_THROWS_AS(
      train_heads(config(EncoderKind::bm25_query, EncoderKind::bm25_doc, LossKind::contrastive), task.data,
                  task.backbone, o),
      ValidationError);
  CHECK_THROWS_AS(train_heads(config(EncoderKind::binary, EncoderKind::mlp, LossKind::none), task.data, task.backbone, o),
                  ValidationError);
}

TEST_CASE("separable task: contrastive loss never rises over 50 steps") {
  KeyTask task;
  auto c = config(EncoderKind::binary, EncoderKind::mlp, LossKind::contrastive);
  TrainOptions o;
  o.steps = 50;
  o.learning_rate = 0.01;
  auto r = train_heads(c, task.data, task.backbone, o);
  REQUIRE(r.loss_history.size() == 50);
  for (std::size_t s = 1; s < r.loss_history.size(); ++s) CHECK(r.loss_history[s] <= r.loss_history[s - 1] + 1e-9);
  CHECK(r.loss_history.back() < r.loss_history.front());
}

TEST_CASE("a large flops weight leaves sparser queries than none") {
  KeyTask task;
  auto c = config(EncoderKind::mlm, EncoderKind::mlm, LossKind::contrastive);
  c.shared_heads = true;
  c.query_regularizer = c.doc_regularizer = {RegularizerKind::flops, 1.0};
  TrainOptions o;
  o.steps = 200;
  o.learning_rate = 0.05;
  auto mean_query_nnz = [&](double lambda) {
    o.regularizer_weight = lambda;
    auto heads = train_heads(c, task.data, task.backbone, o).heads;
    double total = 0.0;
    for (const auto& q : task.queries) total += static_cast<double>(encode_mlm(q, task.backbone.embed(q), *heads.query).nnz());
    return total / static_cast<double>(task.queries.size());
  };
  const double dense = mean_query_nnz(0.0), sparse = mean_query_nnz(10.0);
  CAPTURE(dense);
  CAPTURE(sparse);
  CHECK(dense > sparse);
}

TEST_CASE("frozen side keeps its parameters") {
  KeyTask task;
  auto c = config(EncoderKind::mlp, EncoderKind::mlp, LossKind::margin_mse);
  TrainOptions o;
  o.steps = 20;
  o.learning_rate = 0.01;
  auto frozen = HeadParameters::initial(task.backbone.dim(), task.backbone.vocab_size(), {}, 99);
  o.frozen_doc_head = frozen;
  auto r = train_heads(c, task.data, task.backbone, o);
  CHECK(*r.heads.doc == frozen);
  auto init = initial_heads(c, task.backbone.dim(), task.backbone.vocab_size(), o.seed);
  CHECK_FALSE(*r.heads.query == *init.query);

  c.shared_heads = true;
  CHECK_THROWS_AS(train_heads(c, task.data, task.backbone, o), ValidationError);
}

TEST_CASE("training is deterministic") {
  KeyTask task;
  auto c = config(EncoderKind::mlp, EncoderKind::mlm, LossKind::contrastive);
  c.doc_regularizer = {RegularizerKind::flops, 0.5};
  c.supervision.in_batch_negatives = 3;
  TrainOptions o;
  o.steps = 15;
  auto a = train_heads(c, task.data, task.backbone, o);
  auto b = train_heads(c, task.data, task.backbone, o);
  CHECK(a.loss_history == b.loss_history);
  CHECK(*a.heads.query == *b.heads.query);
  CHECK(*a.heads.doc == *b.heads.doc);
}

}  // TEST_SUITE
