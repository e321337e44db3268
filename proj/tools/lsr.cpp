#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lsr/error.hpp"
#include "lsr/io.hpp"
#include "lsr/pipeline.hpp"
#include "lsr/synthetic.hpp"

namespace fs = std::filesystem;
using namespace lsr;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config, "method config JSON");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "seed for the toy backbone and trainer (default: config seed)");
  cmd->add_option("--output", c.output, "output path")->required();
}

MethodConfig load_config(const Common& c) { return load_method_config(c.config); }

std::uint64_t seed_for(const Common& c, const MethodConfig& config) { return c.seed.value_or(config.seed); }

TextSide parse_side(const std::string& s) {
  if (s == "query") return TextSide::query;
  if (s == "doc") return TextSide::doc;
  throw ValidationError("--side must be query or doc, got '" + s + "'");
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

HeadPair heads_for(Workspace& ws, const std::string& heads_path) {
  if (!heads_path.empty()) ws.config.paths.heads = heads_path;
  return obtain_heads(ws).heads;
}

std::vector<DocVector> encode_side(Workspace& ws, const std::string& heads_path, TextSide side,
                                   const std::string& input) {
  std::vector<TokenizedText> texts;
  if (!input.empty()) texts = read_collection(input, ws.vocab);
  else texts = side == TextSide::doc ? ws.docs : ws.queries;
  auto res = encode_texts(ws, heads_for(ws, heads_path), side, texts);
  print_warnings(res.warnings);
  return std::move(res.vectors);
}

Quantization quantization_for(const MethodConfig& config, std::optional<int> bits, bool exact) {
  if (exact) return Quantization::exact_mode();
  if (bits) {
    if (*bits < 1 || *bits > 16) throw ValidationError("--bits must be in [1, 16]");
    return Quantization::with_bits(*bits);
  }
  return config.quantization.exact ? Quantization::exact_mode() : Quantization::with_bits(config.quantization.bits);
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") std::cout << text;
  else write_file_atomic(path, text);
}

int run(int argc, char** argv) {
  CLI::App app{"Learned sparse retrieval toolkit"};
  app.require_subcommand(1);

  // encode
  Common enc;
  std::string enc_side = "doc", enc_input, enc_heads;
  auto* encode = app.add_subcommand("encode", "encode queries or documents into sparse vectors (JSONL)");
  add_common(encode, enc);
  encode->add_option("--side", enc_side, "query or doc")->capture_default_str();
  encode->add_option("--input", enc_input, "TSV texts (default: the config's collection or queries)");
  encode->add_option("--heads", enc_heads, "trained head parameters (default: paths.heads, else trained per config)");

  // index
  Common idx;
  std::string idx_input, idx_heads;
  std::optional<int> idx_bits;
  bool idx_exact = false;
  auto* index = app.add_subcommand("index", "build an impact index directory");
  add_common(index, idx);
  index->add_option("--input", idx_input, "encoded doc vectors (default: encode the collection)");
  index->add_option("--heads", idx_heads, "trained head parameters");
  index->add_option("--bits", idx_bits, "quantization bits (overrides config)");
  index->add_flag("--exact", idx_exact, "store raw weights");

  // search
  Common srch;
  std::string srch_index, srch_queries, srch_heads, srch_stats;
  std::optional<std::size_t> srch_k;
  auto* search = app.add_subcommand("search", "run queries against an index and write a TREC run");
  add_common(search, srch);
  search->add_option("--index", srch_index, "index directory")->required();
  search->add_option("--queries", srch_queries, "encoded query vectors (default: encode the config's queries)");
  search->add_option("--heads", srch_heads, "trained head parameters");
  search->add_option("--k", srch_k, "retrieval depth (default: config retrieval_depth)");
  search->add_option("--stats", srch_stats, "also write search statistics JSON here");

  // eval
  Common ev;
  std::string ev_run, ev_qrels;
  auto* eval = app.add_subcommand("eval", "score a run file against qrels");
  add_common(eval, ev, false);
  eval->add_option("--run", ev_run, "TREC run file")->required();
  eval->add_option("--qrels", ev_qrels, "qrels (default: the config's qrels)");

  // train-head
  Common tr;
  std::optional<std::size_t> tr_steps;
  std::optional<double> tr_weight;
  auto* train = app.add_subcommand("train-head", "train head parameters with the backbone frozen");
  add_common(train, tr);
  train->add_option("--steps", tr_steps, "override supervision.steps");
  train->add_option("--reg-weight", tr_weight, "override the flops/l1/l2 weight on both sides");

  // ablate
  Common ab;
  std::vector<std::string> ab_toggles;
  std::string ab_text;
  std::optional<std::size_t> ab_steps;
  auto* ablate = app.add_subcommand("ablate", "controlled single-component changes against a base config");
  add_common(ablate, ab);
  ablate->add_option("--toggle", ab_toggles, "component=value, repeatable");
  ablate->add_option("--text", ab_text, "also write the plain-text table here ('-' for stdout)");
  ablate->add_option("--steps", ab_steps, "override supervision.steps");

  // run
  std::vector<std::string> run_configs;
  std::optional<std::uint64_t> run_seed;
  std::string run_output, run_text;
  auto* runall = app.add_subcommand("run", "full pipeline for one or more configs with a summary table");
  runall->add_option("--config", run_configs, "method config JSON, repeatable")->required();
  runall->add_option("--seed", run_seed, "seed (default: each config's seed)");
  runall->add_option("--output", run_output, "JSON report")->required();
  runall->add_option("--text", run_text, "also write the plain-text table here ('-' for stdout)");

  // synth
  std::string syn_output;
  std::uint64_t syn_seed = SyntheticOptions{}.seed;
  auto* synth = app.add_subcommand("synth", "generate the synthetic retrieval task");
  synth->add_option("--seed", syn_seed, "generator seed")->capture_default_str();
  synth->add_option("--output", syn_output, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (encode->parsed()) {
    auto config = load_config(enc);
    auto ws = Workspace::load(config, seed_for(enc, config));
    auto vectors = encode_side(ws, enc_heads, parse_side(enc_side), enc_input);
    write_vectors(enc.output, vectors, ws.vocab);
  } else if (index->parsed()) {
    auto config = load_config(idx);
    auto ws = Workspace::load(config, seed_for(idx, config));
    auto docs = idx_input.empty() ? encode_side(ws, idx_heads, TextSide::doc, {}) : read_vectors(idx_input, ws.vocab);
    const auto built = build_index(docs, ws.vocab.size(), quantization_for(config, idx_bits, idx_exact));
    built.save(idx.output);
    std::cout << "indexed " << built.num_docs() << " docs, " << built.total_postings() << " postings\n";
  } else if (search->parsed()) {
    auto config = load_config(srch);
    auto ws = Workspace::load(config, seed_for(srch, config));
    const auto loaded = ImpactIndex::load(srch_index);
    if (loaded.vocab_size() != ws.vocab.size()) {
      throw ValidationError("index vocab_size " + std::to_string(loaded.vocab_size()) +
                            " does not match paths.vocab size " + std::to_string(ws.vocab.size()));
    }
    auto queries = srch_queries.empty() ? encode_side(ws, srch_heads, TextSide::query, {})
                                        : read_vectors(srch_queries, ws.vocab);
    auto out = search_all(loaded, queries, srch_k.value_or(config.retrieval_depth), config.name);
    write_run(srch.output, out.run);
    nlohmann::ordered_json stats;
    stats["queries"] = queries.size();
    stats["ops_count"] = out.ops_count;
    double mean = 0.0;
    std::size_t lo = 0, hi = 0;
    for (std::size_t i = 0; i < out.query_nnz.size(); ++i) {
      mean += static_cast<double>(out.query_nnz[i]);
      lo = i ? std::min(lo, out.query_nnz[i]) : out.query_nnz[i];
      hi = std::max(hi, out.query_nnz[i]);
    }
    stats["query_nnz"] = {{"mean", queries.empty() ? 0.0 : mean / static_cast<double>(queries.size())},
                          {"min", lo},
                          {"max", hi}};
    const std::string text = stats.dump(2) + "\n";
    std::cout << text;
    if (!srch_stats.empty()) write_file_atomic(srch_stats, text);
  } else if (eval->parsed()) {
    fs::path qrels_path = ev_qrels;
    if (qrels_path.empty()) {
      if (ev.config.empty()) throw ValidationError("eval needs --qrels or a --config with paths.qrels");
      qrels_path = load_config(ev).paths.qrels;
      if (qrels_path.empty()) throw ValidationError("paths.qrels is not set in " + ev.config);
    }
    const auto run_file = read_run(ev_run);
    const auto qrels = read_qrels(qrels_path);
    nlohmann::ordered_json metrics;
    metrics["mrr@10"] = mrr_at_k(run_file, qrels, 10);
    metrics["ndcg@10"] = ndcg_at_k(run_file, qrels, 10);
    metrics["recall@1000"] = recall_at_k(run_file, qrels, 1000);
    const std::string text = metrics.dump(2) + "\n";
    write_text(ev.output, text);
    if (ev.output != "-") std::cout << text;
  } else if (train->parsed()) {
    auto config = load_config(tr);
    auto ws = Workspace::load(config, seed_for(tr, config));
    ws.config.paths.heads.clear();
    PipelineOptions opts{tr_weight, tr_steps};
    if (config.supervision.loss == LossKind::none) throw ValidationError("supervision.loss is none; nothing to train");
    auto heads = obtain_heads(ws, opts);
    write_heads(tr.output, heads.heads);
    if (heads.training && !heads.training->loss_history.empty()) {
      const auto& h = heads.training->loss_history;
      std::cout << "steps " << h.size() << ", objective " << h.front() << " -> " << h.back() << "\n";
    }
  } else if (ablate->parsed()) {
    auto config = load_config(ab);
    std::vector<Toggle> toggles;
    for (const auto& t : ab_toggles) toggles.push_back(parse_toggle(t));
    PipelineOptions opts;
    opts.steps = ab_steps;
    auto report = run_ablation(config, toggles, seed_for(ab, config), opts);
    write_text(ab.output, format_ablation_json(report));
    const auto text = format_ablation_text(report);
    if (!ab_text.empty()) write_text(ab_text, text);
    if (ab_text != "-") std::cout << text;
  } else if (runall->parsed()) {
    std::vector<PipelineReport> reports;
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& path : run_configs) {
      auto config = load_method_config(path);
      reports.push_back(run_method(config, run_seed.value_or(config.seed)));
      print_warnings(reports.back().warnings);
      j.push_back(nlohmann::ordered_json::parse(format_report_json(reports.back())));
    }
    write_text(run_output, j.dump(2) + "\n");
    const auto text = format_reports_text(reports);
    if (!run_text.empty()) write_text(run_text, text);
    if (run_text != "-") std::cout << text;
  } else if (synth->parsed()) {
    SyntheticOptions o;
    o.seed = syn_seed;
    write_synthetic_task(make_synthetic_task(o), syn_output);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
