#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "lsr/core_types.hpp"
#include "lsr/eval.hpp"
#include "temp_dir.hpp"

using namespace lsr;
namespace fs = std::filesystem;

namespace {

int lsr_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + LSR_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config(const std::string& name) {
  return "--config \"" + (fs::path(LSR_SOURCE_DIR) / "configs" / (name + ".json")).string() + "\"";
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("bm25 end to end is byte-identical across runs") {
  testing::TempDir dir("cli_e2e");
  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    REQUIRE(lsr_cli("encode " + config("bm25") + " --side doc --seed 1 --output " + quoted(dir / ("docs" + t))) == 0);
    REQUIRE(lsr_cli("index " + config("bm25") + " --seed 1 --input " + quoted(dir / ("docs" + t)) + " --output " +
                    quoted(dir / ("ix" + t))) == 0);
    REQUIRE(lsr_cli("search " + config("bm25") + " --seed 1 --index " + quoted(dir / ("ix" + t)) + " --output " +
                    quoted(dir / ("run" + t))) == 0);
    REQUIRE(lsr_cli("eval " + config("bm25") + " --run " + quoted(dir / ("run" + t)) + " --output " +
                    quoted(dir / ("eval" + t))) == 0);
  }
  CHECK(read_file(dir / "docsa") == read_file(dir / "docsb"));
  CHECK(read_file(dir / "ixa" / "postings.bin") == read_file(dir / "ixb" / "postings.bin"));
  CHECK(read_file(dir / "runa") == read_file(dir / "runb"));
  CHECK(read_file(dir / "evala") == read_file(dir / "evalb"));
  const auto metrics = nlohmann::json::parse(read_file(dir / "evala"));
  CHECK(metrics.at("mrr@10").get<double>() > 0.5);

  REQUIRE(lsr_cli("search " + config("bm25") + " --k 0 --index " + quoted(dir / "ixa") + " --output " +
                  quoted(dir / "empty")) == 0);
  CHECK(read_file(dir / "empty").empty());
}

TEST_CASE("eval of the ideal run is perfect") {
  testing::TempDir dir("cli_ideal");
  const fs::path qrels_path = fs::path(LSR_SOURCE_DIR) / "data" / "toy" / "qrels.txt";
  const auto qrels = read_qrels(qrels_path);
  RunFile ideal;
  for (const auto& [q, docs] : qrels.judgments) {
    std::vector<std::pair<int, std::string>> graded;
    for (const auto& [d, grade] : docs) graded.emplace_back(-grade, d);
    std::sort(graded.begin(), graded.end());
    double s = static_cast<double>(graded.size());
    for (const auto& [g, d] : graded) ideal.rankings[q].push_back({d, s--});
  }
  write_run(dir / "ideal", ideal);
  REQUIRE(lsr_cli("eval --qrels " + quoted(qrels_path) + " --run " + quoted(dir / "ideal") + " --output " +
                  quoted(dir / "m.json")) == 0);
  const auto m = nlohmann::json::parse(read_file(dir / "m.json"));
  for (const auto& [name, value] : m.items()) {
    CAPTURE(name);
    CHECK(value.get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("exit codes separate validation from io failures") {
  testing::TempDir dir("cli_codes");
  CHECK(lsr_cli("encode --config " + quoted(dir / "missing.json") + " --output " + quoted(dir / "o")) == 2);
  write_file_atomic(dir / "bad.json", "{\"name\": \"x\"}");
  CHECK(lsr_cli("encode --config " + quoted(dir / "bad.json") + " --output " + quoted(dir / "o")) == 1);
  CHECK(lsr_cli("encode " + config("bm25") + " --side sideways --output " + quoted(dir / "o")) == 1);
  CHECK(lsr_cli("frobnicate") == 1);
  CHECK(lsr_cli("encode " + config("bm25")) == 1);
  CHECK(lsr_cli("ablate " + config("bm25") + " --toggle nonsense --output " + quoted(dir / "o")) == 1);
  CHECK(lsr_cli("search " + config("bm25") + " --index " + quoted(dir / "noindex") + " --output " +
                quoted(dir / "o")) == 2);
  CHECK(lsr_cli("train-head " + config("bm25") + " --output " + quoted(dir / "o")) == 1);
  CHECK_FALSE(fs::exists(dir / "o"));
}

TEST_CASE("train-head writes heads that encode reuses") {
  testing::TempDir dir("cli_train");
  REQUIRE(lsr_cli("train-head " + config("unicoil") + " --steps 3 --seed 5 --output " + quoted(dir / "h.json")) == 0);
  REQUIRE(lsr_cli("train-head " + config("unicoil") + " --steps 3 --seed 5 --output " + quoted(dir / "h2.json")) == 0);
  CHECK(read_file(dir / "h.json") == read_file(dir / "h2.json"));
  REQUIRE(lsr_cli("encode " + config("unicoil") + " --side query --heads " + quoted(dir / "h.json") + " --output " +
                  quoted(dir / "q.jsonl")) == 0);
  CHECK_FALSE(read_file(dir / "q.jsonl").empty());
}

TEST_CASE("thread count does not change results") {
  testing::TempDir dir("cli_threads");
  for (const char* n : {"1", "3"}) {
    const std::string out = (dir / (std::string("r") + n + ".json")).string();
    REQUIRE(std::system(("LSR_THREADS=" + std::string(n) + " \"" + LSR_CLI + "\" run " + config("unicoil") + " " +
                         config("splade_max") + " --output \"" + out + "\" >/dev/null 2>&1")
                            .c_str()) == 0);
  }
  CHECK(read_file(dir / "r1.json") == read_file(dir / "r3.json"));
}

}  // TEST_SUITE
