#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bap/checkpoint.hpp"
#include "bap/localize.hpp"
#include "bap/repstore.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace bap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = 0;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// One scratch directory per test binary run, with a small dataset and a
// trained checkpoint shared by the cases below.
const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "bap_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const auto out = workdir() / "stdout.txt";
  const auto err = workdir() / "stderr.txt";
  const std::string cmd = std::string("\"") + BAP_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

const fs::path& trained() {
  static const fs::path data = [] {
    const auto d = workdir() / "data";
    REQUIRE(cli("synth --out " + d.string() + " --seed 9 --n-train 80 --n-test 20 --dim 8").status == 0);
    REQUIRE(cli("train --manifest " + (d / "train.jsonl").string() + " --out " + (d / "p.bapm").string() +
                " --epochs 2 --heads 2 --kv-heads 1 --head-dim 4 --ff-dim 8 --quiet")
                .status == 0);
    return d;
  }();
  return data;
}

}  // namespace

TEST_CASE("missing manifest exits 1 and names the path") {
  const auto r = cli("train --manifest /nonexistent/m.jsonl --out " + (workdir() / "x.bapm").string());
  CHECK(r.status == 1);
  CHECK(r.err.find("/nonexistent/m.jsonl") != std::string::npos);
  CHECK(cli("bogus-command").status != 0);
  CHECK(cli("--help").status == 0);
}

TEST_CASE("train writes a checkpoint and a report") {
  const auto& d = trained();
  CHECK(fs::exists(d / "p.bapm"));
  const auto report = nlohmann::json::parse(slurp(d / "p.bapm.report.json"));
  CHECK(report["epochs"].size() == 2);
  CHECK_FALSE(report.contains("wall_seconds"));
}

TEST_CASE("rank output matches the library") {
  const auto& d = trained();
  const auto out = d / "ranks.jsonl";
  REQUIRE(cli("rank --checkpoint " + (d / "p.bapm").string() + " --manifest " + (d / "test.jsonl").string() +
              " --out " + out.string())
              .status == 0);
  const auto model = load_probe(d / "p.bapm");
  const auto records = load_all(load_manifest(d / "test.jsonl"));
  std::istringstream lines(slurp(out));
  std::string line;
  std::size_t i = 0;
  while (std::getline(lines, line)) {
    REQUIRE(i < records.size());
    const auto got = ranking_from_json(line);
    const auto want = localize_record(model, records[i]);
    CHECK(got.sample_id == records[i].sample_id);
    CHECK(got.ranking.order == want.order);
    CHECK(got.ranking.line_scores == want.line_scores);
    REQUIRE(got.probability.has_value());
    CHECK(*got.probability == doctest::Approx(detect(model, records[i].data)).epsilon(1e-12));
    ++i;
  }
  CHECK(i == records.size());

  const auto top1 = cli("rank --checkpoint " + (d / "p.bapm").string() + " --manifest " + (d / "test.jsonl").string() +
                        " --top-k 1");
  REQUIRE(top1.status == 0);
  std::istringstream first(top1.out);
  while (std::getline(first, line)) CHECK(ranking_from_json(line).ranking.order.size() == 1);
}

TEST_CASE("eval scores rankings and reports unknown ids") {
  const auto& d = trained();
  const auto preds = d / "perfect.jsonl";
  {
    std::ofstream out(preds);
    for (const auto& c : load_corpus(d / "test_truth.jsonl")) {
      LineRanking r;
      r.order = c.buggy_lines;
      r.line_scores.assign(split_lines(c.code).size(), 0.0);
      out << ranking_to_json(c.sample_id, r) << "\n";
    }
  }
  const auto r = cli("eval --predictions " + preds.string() + " --truth " + (d / "test_truth.jsonl").string() +
                     " --format json");
  REQUIRE(r.status == 0);
  const auto report = nlohmann::json::parse(r.out);
  CHECK(report["top_k_accuracy"]["1"] == 1.0);
  CHECK(report["precision_at_k"]["5"] == 1.0);

  const auto stray = d / "stray.jsonl";
  {
    std::ofstream out(stray);
    LineRanking lr;
    lr.order = {0};
    lr.line_scores = {1.0};
    out << ranking_to_json("no-such-sample", lr) << "\n";
  }
  const auto bad = cli("eval --predictions " + stray.string() + " --truth " + (d / "test_truth.jsonl").string());
  CHECK(bad.status == 1);
  CHECK(bad.err.find("no-such-sample") != std::string::npos);
}

TEST_CASE("report renders html for one sample") {
  const auto& d = trained();
  REQUIRE(cli("rank --checkpoint " + (d / "p.bapm").string() + " --manifest " + (d / "test.jsonl").string() +
              " --out " + (d / "r.jsonl").string())
              .status == 0);
  const auto r = cli("report --rankings " + (d / "r.jsonl").string() + " --corpus " +
                     (d / "test_truth.jsonl").string() + " --sample test-00003 --format html");
  REQUIRE(r.status == 0);
  CHECK(r.out.find("<h2>test-00003</h2>") != std::string::npos);
  CHECK(r.out.find("<h2>test-00004</h2>") == std::string::npos);
}

TEST_CASE("inspect recognizes records, checkpoints and manifests") {
  const auto& d = trained();
  const auto rec = cli("inspect " + (d / "test" / "test-00000.bapr").string());
  REQUIRE(rec.status == 0);
  CHECK(nlohmann::json::parse(rec.out)["sample_id"] == "test-00000");
  const auto ck = cli("inspect " + (d / "p.bapm").string());
  REQUIRE(ck.status == 0);
  CHECK(nlohmann::json::parse(ck.out)["kind"] == "attention");
  const auto man = cli("inspect " + (d / "test.jsonl").string());
  REQUIRE(man.status == 0);
  CHECK(cli("inspect " + (d / "nothing-here").string()).status == 1);
}
