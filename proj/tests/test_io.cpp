#include <doctest.h>

#include <string>
#include <vector>

#include "lsr/io.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace lsr;

namespace {

Vocabulary small_vocab(std::size_t n) {
  std::vector<std::string> terms;
  for (std::size_t i = 0; i < n; ++i) terms.push_back("w" + std::to_string(i));
  return build_vocabulary(terms);
}

}  // namespace

TEST_SUITE("core-types") {

TEST_CASE("vector files round trip exactly") {
  testing::TempDir dir("vectors");
  oracle::Gen g(61);
  const auto vocab = small_vocab(40);
  std::vector<DocVector> docs;
  for (int i = 0; i < 50; ++i) docs.push_back({"d" + std::to_string(i), oracle::sparse(oracle::random_dense(g, 40, 0.3))});
  docs.push_back({"empty", {}});
  write_vectors(dir / "v.jsonl", docs, vocab);
  const auto back = read_vectors(dir / "v.jsonl", vocab);
  REQUIRE(back.size() == docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    CHECK(back[i].id == docs[i].id);
    CHECK(back[i].vector == docs[i].vector);
  }

  write_file_atomic(dir / "ids.jsonl", "{\"id\": \"x\", \"vector\": {\"3\": 0.5, \"w1\": 2}}\n");
  const auto ids = read_vectors(dir / "ids.jsonl", vocab);
  CHECK(ids[0].vector == SparseVector::from_entries({{1, 2.0}, {3, 0.5}}));
  write_file_atomic(dir / "neg.jsonl", "{\"id\": \"x\", \"vector\": {\"w1\": -1}}\n");
  CHECK_THROWS_AS(read_vectors(dir / "neg.jsonl", vocab), ValidationError);
  write_file_atomic(dir / "oov.jsonl", "{\"id\": \"x\", \"vector\": {\"nope\": 1}}\n");
  CHECK_THROWS_AS(read_vectors(dir / "oov.jsonl", vocab), ValidationError);
  CHECK_THROWS_AS(read_vectors(dir / "missing.jsonl", vocab), IoError);
}

TEST_CASE("triples round trip with and without teacher scores") {
  testing::TempDir dir("triples");
  std::vector<TripleRecord> t{{"q1", "d1", {"d2", "d3"}, TeacherScores{2.5, {1.0, -0.25}}}, {"q2", "d4", {"d5"}, std::nullopt}};
  write_triples(dir / "t.jsonl", t);
  const auto back = read_triples(dir / "t.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].query == "q1");
  CHECK(back[0].negatives == t[0].negatives);
  REQUIRE(back[0].teacher);
  CHECK(back[0].teacher->positive == 2.5);
  CHECK(back[0].teacher->negatives == t[0].teacher->negatives);
  CHECK_FALSE(back[1].teacher);

  TokenizedText q{"q1", {0}}, d1{"d1", {1}}, d2{"d2", {2}};
  std::unordered_map<std::string, const TokenizedText*> qs{{"q1", &q}}, ds{{"d1", &d1}, {"d2", &d2}};
  CHECK_THROWS_AS(resolve_triples(back, qs, ds), ValidationError);
}

TEST_CASE("heads round trip bit for bit") {
  testing::TempDir dir("heads");
  oracle::Gen g(62);
  HeadPair pair;
  pair.query = HeadParameters::initial(5, 12, {Activation::softplus, true, true}, 3);
  pair.doc = HeadParameters::initial(5, 12, {}, 4);
  for (Eigen::Index i = 0; i < 12; ++i) pair.doc->mlm_bias(i) = g.normal() * 1e-7;
  write_heads(dir / "h.json", pair);
  const auto back = read_heads(dir / "h.json");
  REQUIRE(back.query);
  REQUIRE(back.doc);
  CHECK(*back.query == *pair.query);
  CHECK(*back.doc == *pair.doc);
  CHECK(back.shared == pair.shared);
  CHECK_THROWS_AS(parse_heads("{\"query\": 3}"), ValidationError);
}

TEST_CASE("embedding dumps reproduce the backbone") {
  testing::TempDir dir("emb");
  ToyBackbone backbone{{20, 6, 9}};
  oracle::Gen g(63);
  std::vector<TokenizedText> docs, queries;
  for (int i = 0; i < 5; ++i) {
    docs.push_back(oracle::random_text(g, 20, 1, 8, "d" + std::to_string(i)));
    queries.push_back(oracle::random_text(g, 20, 1, 4, "q" + std::to_string(i)));
  }
  write_contextual_embeddings(dir / "d.jsonl", docs, backbone, TextSide::doc);
  write_contextual_embeddings(dir / "q.jsonl", queries, backbone, TextSide::query);
  write_input_embeddings(dir / "e.json", *backbone.input_embeddings());
  FileEmbeddings file(dir / "d.jsonl", dir / "q.jsonl", dir / "e.json");
  CHECK(file.dim() == 6);
  CHECK(file.vocab_size() == 20);
  for (const auto& d : docs) {
    const auto a = backbone.embed(d), b = file.embed(d, TextSide::doc);
    CHECK((a.ctx - b.ctx).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a.cls - b.cls).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS_AS(file.embed({"unknown", {1}}, TextSide::doc), ValidationError);
}

TEST_CASE("expansion files map doc ids to term ids") {
  testing::TempDir dir("exp");
  const auto vocab = small_vocab(5);
  write_file_atomic(dir / "x.tsv", "d1\tw1 w3\nd2\t\n");
  const auto m = read_expansions(dir / "x.tsv", vocab);
  CHECK(m.at("d1") == std::vector<TermId>{1, 3});
  write_file_atomic(dir / "bad.tsv", "d1\tw9\n");
  CHECK_THROWS_AS(read_expansions(dir / "bad.tsv", vocab), ValidationError);
}

}  // TEST_SUITE
