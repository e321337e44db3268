#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "lsr/pipeline.hpp"
#include "lsr/synthetic.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace lsr;
namespace fs = std::filesystem;

namespace {

fs::path config_dir() { return fs::path(LSR_SOURCE_DIR) / "configs"; }

MethodConfig shipped(const std::string& name) { return load_method_config(config_dir() / (name + ".json")); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("every shipped config loads, validates and round-trips") {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(config_dir())) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    const auto c = load_method_config(entry.path());
    CHECK_NOTHROW(c.validate());
    CHECK(c.name == entry.path().stem().string());
    CHECK(parse_method_config(dump_method_config(c)) == c);
    CHECK(fs::exists(c.paths.vocab));
    ++n;
  }
  CHECK(n >= 10);
}

TEST_CASE("config validation names the bad field") {
  auto c = shipped("distilsplade_max");
  c.supervision.label_type = "human";
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = shipped("distilsplade_max");
  c.supervision.num_negatives = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = shipped("bm25");
  c.paths.vocab.clear();
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS(parse_method_config("{not json"), ValidationError);
  CHECK_THROWS_AS(load_method_config(config_dir() / "missing.json"), IoError);
}

TEST_CASE("toggles parse one component at a time") {
  CHECK(parse_toggle("query_encoder=mlp").label() == "query_encoder=mlp");
  CHECK_THROWS_AS(parse_toggle("query_encoder=mlp,doc_encoder=mlp"), ValidationError);
  CHECK_THROWS_AS(parse_toggle("query_encoder=mlp=x"), ValidationError);
  CHECK_THROWS_AS(parse_toggle("query_encoder"), ValidationError);
  CHECK_THROWS_AS(parse_toggle("=mlp"), ValidationError);

  const auto base = shipped("distilsplade_sep");
  const auto v = apply_toggle(base, parse_toggle("query_encoder=mlp"));
  CHECK(v.query_encoder.kind == EncoderKind::mlp);
  CHECK(v.doc_encoder == base.doc_encoder);
  CHECK(v.doc_regularizer == base.doc_regularizer);
  CHECK(apply_toggle(base, parse_toggle("regularizer=topk:10")).doc_regularizer.k == 10);
  CHECK_THROWS_AS(apply_toggle(base, parse_toggle("query_encoder=mlm")), ValidationError);
  CHECK_THROWS_AS(apply_toggle(base, parse_toggle("backbone=bert")), ValidationError);
  CHECK_THROWS_AS(apply_toggle(base, parse_toggle("regularizer=flops")), ValidationError);
  CHECK_THROWS_AS(apply_toggle(base, parse_toggle("shared_heads=maybe")), ValidationError);
}

TEST_CASE("bm25 pipeline is deterministic and sees every query") {
  const auto c = shipped("bm25");
  const auto a = run_method(c, 42), b = run_method(c, 42);
  CHECK(format_report_json(a) == format_report_json(b));
  CHECK(a.head_origin == "none");
  CHECK(a.metrics.at("mrr@10") > 0.5);
  CHECK(a.run.rankings.size() == Workspace::load(c, 42).queries.size());
  for (const auto& [name, value] : a.metrics) {
    CHECK(value >= 0.0);
    CHECK(value <= 1.0);
  }
}

TEST_CASE("empty toggle list runs the base only") {
  const auto c = shipped("bm25");
  const auto r = run_ablation(c, {}, 42);
  CHECK(r.variants.empty());
  CHECK(r.base.name == "bm25");
  CHECK(format_ablation_text(r).find("bm25") != std::string::npos);
}

TEST_CASE("doc encoder binary to mlp keeps the support and spreads the weights") {
  auto base = shipped("unicoil");
  base.shared_heads = false;
  base.doc_encoder.kind = EncoderKind::binary;
  PipelineOptions o;
  o.steps = 5;
  const std::vector<Toggle> toggles{parse_toggle("doc_encoder=mlp")};
  const auto r = run_ablation(base, toggles, 42, o);
  REQUIRE(r.variants.size() == 1);
  const auto& variant = r.variants[0].second;
  CHECK(r.base.stats.doc_weight_variance == 0.0);
  CHECK(variant.stats.doc_weight_variance > 0.0);
  CHECK(variant.stats.mean_doc_nnz == r.base.stats.mean_doc_nnz);
  CHECK(*variant.heads.query == *r.base.heads.query);
}

TEST_CASE("query encoder mlm to mlp cuts ops and leaves docs alone") {
  const auto base = shipped("distilsplade_sep");
  PipelineOptions o;
  o.steps = 10;
  const std::vector<Toggle> toggles{parse_toggle("query_encoder=mlp")};
  const auto r = run_ablation(base, toggles, 42, o);
  REQUIRE(r.variants.size() == 1);
  const auto& variant = r.variants[0].second;
  CAPTURE(r.base.stats.ops_count);
  CAPTURE(variant.stats.ops_count);
  CHECK(variant.stats.ops_count < r.base.stats.ops_count);
  CHECK(variant.stats.mean_doc_nnz == r.base.stats.mean_doc_nnz);
  CHECK(*variant.heads.doc == *r.base.heads.doc);
  CHECK(format_ablation_text(r).find("query_encoder=mlp") != std::string::npos);
}

TEST_CASE("bm25 config matches a standalone bm25 pipeline on 100 docs") {
  testing::TempDir dir("bm25_oracle");
  const fs::path toy = fs::path(LSR_SOURCE_DIR) / "data" / "toy";
  auto docs = read_tsv_records(toy / "collection.tsv");
  docs.resize(100);
  std::set<std::string> kept;
  for (const auto& d : docs) kept.insert(d.id);
  const auto all_qrels = read_qrels(toy / "qrels.txt");
  Qrels qrels;
  for (const auto& [q, judged] : all_qrels.judgments) {
    for (const auto& [d, grade] : judged) {
      if (kept.count(d)) qrels.judgments[q][d] = grade;
    }
  }
  REQUIRE(qrels.judgments.size() >= 5);
  write_tsv_records(dir / "c.tsv", docs);
  write_qrels(dir / "q.txt", qrels);

  auto c = shipped("bm25");
  c.quantization.exact = true;
  c.paths.collection = dir / "c.tsv";
  c.paths.qrels = dir / "q.txt";
  const auto report = run_method(c, 42);

  std::vector<std::vector<std::string>> texts;
  for (const auto& d : docs) texts.push_back(d.tokens);
  oracle::TextbookBm25 bm25(texts);
  RunFile run;
  for (const auto& q : read_tsv_records(c.paths.queries)) {
    std::vector<std::pair<double, std::string>> hits;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const double s = bm25.score(q.tokens, i);
      if (s > 0.0) hits.emplace_back(-s, docs[i].id);
    }
    std::sort(hits.begin(), hits.end());
    for (const auto& [s, id] : hits) run.rankings[q.id].push_back({id, -s});
  }
  CHECK(std::abs(report.metrics.at("mrr@10") - oracle::metrics(run, qrels, 10).mrr) <= 1e-12);
  CHECK(std::abs(report.metrics.at("ndcg@10") - oracle::metrics(run, qrels, 10).ndcg) <= 1e-12);
  CHECK(std::abs(report.metrics.at("recall@100") - oracle::metrics(run, qrels, 100).recall) <= 1e-12);
  CHECK(std::abs(report.metrics.at("recall@1000") - oracle::metrics(run, qrels, 1000).recall) <= 1e-12);
}

TEST_CASE("encode_texts refuses expansion from non-expanding doc encoders") {
  auto c = shipped("unicoil");
  auto ws = Workspace::load(c, 42);
  PipelineOptions o;
  o.steps = 2;
  const auto heads = obtain_heads(ws, o).heads;
  const std::vector<TokenizedText> few(ws.docs.begin(), ws.docs.begin() + 5);
  const auto res = encode_texts(ws, heads, TextSide::doc, few);
  REQUIRE(res.vectors.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    for (const auto& [t, w] : res.vectors[i].vector.entries()) {
      CHECK(std::find(few[i].token_ids.begin(), few[i].token_ids.end(), t) != few[i].token_ids.end());
    }
  }
}

TEST_CASE("worker threads honour LSR_THREADS") {
  ::setenv("LSR_THREADS", "1", 1);
  CHECK(worker_threads() == 1);
  std::vector<int> seen(100, 0);
  parallel_for(seen.size(), [&](std::size_t i) { seen[i] += 1; });
  CHECK(std::count(seen.begin(), seen.end(), 1) == 100);
  ::setenv("LSR_THREADS", "3", 1);
  CHECK(worker_threads() == 3);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw ValidationError("boom");
                  }),
                  ValidationError);
  ::unsetenv("LSR_THREADS");
  CHECK(worker_threads() >= 1);
}

TEST_CASE("synthetic task regenerates identically") {
  SyntheticOptions o;
  o.num_docs = 40;
  o.num_queries = 5;
  o.num_train_queries = 10;
  testing::TempDir a("synth_a"), b("synth_b");
  write_synthetic_task(make_synthetic_task(o), a.path());
  write_synthetic_task(make_synthetic_task(o), b.path());
  for (const auto& entry : fs::directory_iterator(a.path())) {
    CAPTURE(entry.path().filename().string());
    CHECK(read_file(entry.path()) == read_file(b / entry.path().filename().string()));
  }
}

}  // TEST_SUITE
