// Acceptance suite: one PASS/FAIL line per headline criterion.
//
// Usage: bap_acceptance [--cli PATH] [--work DIR]
// Exit status is 0 only when every criterion passes.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "bap/evalkit.hpp"
#include "bap/external.hpp"
#include "bap/io_util.hpp"
#include "bap/linear_probe.hpp"
#include "bap/localize.hpp"
#include "bap/probe.hpp"
#include "bap/random.hpp"
#include "bap/synth.hpp"
#include "bap/trainer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s  %-28s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  bap::Rng rng(20240101);
  const std::size_t heads[] = {1, 2, 4};
  double worst = 0.0;
  std::size_t configs = 0, scalars = 0;
  double elapsed = 0.0;
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 24; ++i) {
    bap::ProbeConfig c;
    c.num_heads = heads[i % 3];
    std::vector<std::size_t> divisors;
    for (std::size_t g = 1; g <= c.num_heads; ++g) {
      if (c.num_heads % g == 0) divisors.push_back(g);
    }
    c.num_kv_heads = divisors[rng.below(divisors.size())];
    c.d_in = static_cast<std::size_t>(rng.between(1, 8));
    c.head_dim = static_cast<std::size_t>(rng.between(1, 4));
    c.ff_dim = static_cast<std::size_t>(rng.between(1, 6));
    c.use_block_residual_ln = (i / 3) % 2 == 0;
    c.seed = rng.next();
    const auto T = static_cast<std::size_t>(rng.between(1, 5));
    const auto params = oracle::random_params(c, rng.next());
    const auto z = oracle::random_input(T, c.d_in, rng);
    const auto g = oracle::check_gradients(c, params, z, static_cast<int>(rng.below(2)));
    worst = std::max(worst, g.max_rel_error);
    scalars += g.checked;
    ++configs;
  }
  elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= 1e-5 && elapsed < 60.0,
          std::to_string(configs) + " configs, " + std::to_string(scalars) + " parameters, max rel err " +
              fmt("%.2e", worst)};
}

bap::RepRecord random_record(bap::Rng& rng, std::size_t d) {
  bap::RepRecord r;
  r.sample_id = "r";
  const auto T = static_cast<std::size_t>(rng.between(1, 48));
  r.data = bap::Matrix(T, d, 0.0f);
  for (auto& v : r.data.values) v = static_cast<float>(rng.normal() * 2.0);
  std::int32_t line = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto u = rng.uniform();
    if (u < 0.15) {
      r.token_line.push_back(-1);
    } else {
      if (u > 0.7) ++line;
      r.token_line.push_back(line);
    }
  }
  return r;
}

Outcome attention_conservation() {
  bap::Rng rng(77);
  bap::ProbeConfig c;
  c.d_in = 16;
  double worst_bar = 0.0, worst_lines = 0.0;
  bap::ProbeModel model;
  for (int i = 0; i < 1000; ++i) {
    // A fresh random probe every 100 records, alternating the two variants.
    if (i % 100 == 0) {
      c.seed = rng.next();
      c.use_block_residual_ln = (i / 100) % 2 == 0;
      model = bap::init_probe(c);
    }
    const auto r = random_record(rng, c.d_in);
    const auto out = bap::forward(model, r.data);
    double s = 0.0, special = 0.0;
    for (std::size_t t = 0; t < out.a_bar.size(); ++t) {
      s += out.a_bar[t];
      if (r.token_line[t] < 0) special += out.a_bar[t];
    }
    const auto ranking = bap::aggregate(out.a_bar, r.token_line);
    double lines = 0.0;
    for (double l : ranking.line_scores) lines += l;
    worst_bar = std::max(worst_bar, std::abs(s - 1.0));
    worst_lines = std::max(worst_lines, std::abs(lines + special - 1.0));
  }
  return {worst_bar <= 1e-6 && worst_lines <= 1e-6,
          "1000 records, max |sum a_bar - 1| " + fmt("%.1e", worst_bar) + ", max |sum l + special - 1| " +
              fmt("%.1e", worst_lines)};
}

Outcome aggregation_oracle() {
  bap::Rng rng(4242);
  std::size_t mismatches = 0, ties = 0, all_special = 0, all_tie = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto T = static_cast<std::size_t>(rng.between(1, 40));
    std::vector<double> a(T);
    std::vector<std::int32_t> tl(T);
    const int mode = i % 10;
    std::int32_t line = 0;
    for (std::size_t t = 0; t < T; ++t) {
      if (mode == 0) {
        tl[t] = -1;
      } else if (mode == 2) {
        tl[t] = static_cast<std::int32_t>(t);
      } else {
        if (rng.uniform() < 0.1) {
          tl[t] = -1;
        } else {
          if (rng.uniform() < 0.4) line += static_cast<std::int32_t>(rng.between(1, 2));
          tl[t] = line;
        }
      }
      // Coarse values so equal line sums occur often.
      a[t] = mode == 1 ? 0.25 : mode == 2 ? 1.0 / static_cast<double>(T) : static_cast<double>(rng.between(0, 4)) / 8.0;
    }
    if (mode == 0) ++all_special;
    if (mode == 2) ++all_tie;
    const auto got = bap::aggregate(a, tl);
    const auto want_scores = oracle::line_sums(a, tl);
    const auto want_order = oracle::rank_desc(want_scores);
    double want_cov = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (tl[t] >= 0) want_cov += a[t];
    }
    std::set<double> distinct(want_scores.begin(), want_scores.end());
    if (distinct.size() < want_scores.size()) ++ties;
    if (got.line_scores != want_scores || got.order != want_order || got.coverage_mass != want_cov) ++mismatches;
  }
  return {mismatches == 0, "10000 instances (" + std::to_string(ties) + " with tied lines, " +
                               std::to_string(all_tie) + " all-tie, " + std::to_string(all_special) + " all-special), " + std::to_string(mismatches) +
                               " mismatches"};
}

Outcome metrics_oracle() {
  std::size_t cases = 0, mismatches = 0;
  const std::size_t ks[] = {1, 2, 3, 5};
  for (std::size_t L = 1; L <= 6; ++L) {
    std::vector<std::int32_t> perm(L);
    for (std::size_t i = 0; i < L; ++i) perm[i] = static_cast<std::int32_t>(i);
    do {
      for (unsigned mask = 1; mask < (1u << L); ++mask) {
        if (std::popcount(mask) > 3) continue;
        std::set<std::int32_t> truth;
        for (std::size_t i = 0; i < L; ++i) {
          if (mask & (1u << i)) truth.insert(static_cast<std::int32_t>(i));
        }
        const std::vector<std::int32_t> buggy(truth.begin(), truth.end());
        for (auto k : ks) {
          ++cases;
          const double got = bap::precision_at_k(perm, buggy, k);
          if (got != oracle::precision_brute(perm, truth, k)) ++mismatches;
        }
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  // Two buggy lines, both inside the top five.
  const std::vector<std::int32_t> order = {4, 0, 6, 2, 1, 3, 5};
  const std::vector<std::int32_t> two = {2, 6};
  const double worked = bap::precision_at_k(order, two, 5);
  return {mismatches == 0 && worked == 1.0, std::to_string(cases) + " exhaustive cases, " +
                                                std::to_string(mismatches) + " mismatches, worked case P@5 = " +
                                                fmt("%.3f", worked)};
}

Outcome random_calibration() {
  bap::Rng rng(99);
  int outside = 0;
  double worst_sigma = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto L = static_cast<std::size_t>(rng.between(1, 40));
    const auto b = static_cast<std::size_t>(rng.between(1, static_cast<long long>(std::min<std::size_t>(L, 5))));
    const auto k = static_cast<std::size_t>(rng.between(1, 6));
    std::vector<std::int32_t> pool(L);
    for (std::size_t j = 0; j < L; ++j) pool[j] = static_cast<std::int32_t>(j);
    rng.shuffle(std::span<std::int32_t>(pool));
    const std::vector<std::int32_t> buggy(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(b));
    const auto est = bap::random_baseline(L, buggy, k, rng.next(), 20000);
    const double exact = oracle::random_hit(L, b, k);
    const double sigma = std::sqrt(exact * (1 - exact) / 20000.0);
    const double dev = std::abs(est.monte_carlo - exact);
    if (sigma == 0.0) {
      if (dev != 0.0) ++outside;
      continue;
    }
    worst_sigma = std::max(worst_sigma, dev / sigma);
    if (dev > 3 * sigma) ++outside;
  }
  return {outside == 0, "50 (L,|b|,k) triples, worst deviation " + fmt("%.2f", worst_sigma) + " sigma"};
}

Outcome planted_signal() {
  bap::SynthConfig sc;
  sc.seed = 2024;
  const auto data = bap::generate(sc);

  double oracle_hits = 0.0;
  std::vector<bap::SampleTruth> truth;
  std::vector<bap::SamplePrediction> random_preds;
  double random_expect = 0.0;
  for (const auto& r : data.test.records) {
    truth.push_back(bap::truth_from(r));
    if (r.label != 1) continue;
    oracle_hits += bap::top_k_hit(bap::oracle_order(r, data.mu), r.buggy_lines, 1);
    random_preds.push_back({r.sample_id, bap::random_order(r.line_count(), bap::splitmix64(truth.size())), std::nullopt});
    random_expect += oracle::random_hit(r.line_count(), r.buggy_lines.size(), 1);
  }
  const double n_buggy = static_cast<double>(random_preds.size());
  const double oracle_top1 = oracle_hits / n_buggy;
  random_expect /= n_buggy;
  const double random_top1 = bap::evaluate(random_preds, truth).top_k_accuracy.at(1);

  bap::ProbeConfig pc;
  pc.d_in = sc.d;
  pc.seed = 7;
  bap::TrainConfig tc;
  tc.seed = 7;
  tc.threads = bap::thread_count_from_env();
  const auto trained = bap::train_probe(pc, tc, bap::to_detection_set(data.train.records));

  std::vector<bap::SamplePrediction> preds;
  for (const auto& r : data.test.records) {
    const auto out = bap::forward(trained.model, r.data);
    preds.push_back({r.sample_id, bap::aggregate(out.a_bar, r.token_line).order, bap::ad::sigmoid(out.logit)});
  }
  const auto rep = bap::evaluate(preds, truth);
  const double det = *rep.detection_accuracy, top1 = rep.top_k_accuracy.at(1);

  const bool pass = det >= 0.95 && top1 >= 0.80 && oracle_top1 >= 0.95 && std::abs(random_top1 - random_expect) <= 0.05;
  return {pass, "detection " + fmt("%.4f", det) + " (>=0.95), top-1 " + fmt("%.4f", top1) + " (>=0.80), oracle top-1 " +
                    fmt("%.4f", oracle_top1) + " (>=0.95), random " + fmt("%.4f", random_top1) + " vs " +
                    fmt("%.4f", random_expect) + " (+-0.05)"};
}

Outcome hard_separation() {
  bap::SynthConfig sc;
  sc.seed = 2025;
  const auto data = bap::hard_variant(sc);
  const auto train_set = bap::to_detection_set(data.train.records);
  const auto test_set = bap::to_detection_set(data.test.records);
  std::vector<std::size_t> all(test_set.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  bap::ProbeConfig pc;
  pc.d_in = sc.d;
  pc.seed = 11;
  bap::TrainConfig tc;
  tc.seed = 11;
  tc.threads = bap::thread_count_from_env();
  const auto probe = bap::train_probe(pc, tc, train_set);
  const double probe_acc = bap::detection_accuracy(probe.model, test_set.samples, all, tc.threads);

  auto lc = bap::linear_train_config();
  lc.seed = 11;
  const auto linear = bap::train_linear_probe(lc, train_set);
  const double linear_acc = bap::linear_detection_accuracy(linear.model, test_set.samples, all);

  return {probe_acc >= 0.85 && linear_acc <= 0.60,
          "attention probe detection " + fmt("%.4f", probe_acc) + " (>=0.85), linear probe " +
              fmt("%.4f", linear_acc) + " (<=0.60)"};
}

int sh(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

Outcome cli_determinism(const std::string& cli, const fs::path& work) {
  const auto dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string();
  if (sh(cli + " synth --out " + d + "/data --seed 5 --n-train 300 --n-test 60") != 0) return {false, "synth failed"};
  for (int run : {1, 2}) {
    const std::string tag = std::to_string(run);
    if (sh(cli + " train --manifest " + d + "/data/train.jsonl --out " + d + "/ckpt" + tag + ".bapm --seed 3 --epochs 4 --quiet") != 0) {
      return {false, "train run " + tag + " failed"};
    }
    if (sh(cli + " rank --checkpoint " + d + "/ckpt" + tag + ".bapm --manifest " + d + "/data/test.jsonl --out " + d +
           "/rank" + tag + ".jsonl") != 0) {
      return {false, "rank run " + tag + " failed"};
    }
  }
  const bool same_ckpt = bap::read_file(dir / "ckpt1.bapm") == bap::read_file(dir / "ckpt2.bapm");
  const auto r1 = bap::read_file(dir / "rank1.jsonl");
  const bool same_rank = r1 == bap::read_file(dir / "rank2.jsonl");
  const auto lines = static_cast<std::size_t>(std::count(r1.begin(), r1.end(), '\n'));
  return {same_ckpt && same_rank && lines == 60,
          std::string("checkpoints ") + (same_ckpt ? "identical" : "DIFFER") + ", rankings " +
              (same_rank ? "identical" : "DIFFER") + " (" + std::to_string(lines) + " lines)"};
}

Outcome external_ingestion() {
  // Four programs; lines are 1-based in the responses.
  const std::vector<bap::CodeRecord> corpus = {
      {"a", "int f(int x) {\n  int y = x;\n  y = y + 1;\n  return y;\n}\n", 1, {2}},
      {"b", "void g() {\n  a = 1;\n  b = 2;\n  c = a / b;\n  print(c);\n}\n", 1, {3, 4}},
      {"c", "x = 0\nfor i in range(n):\n    x += i\nreturn x\n", 1, {1}},
      {"d", "s = read()\nt = s.strip()\nu = t.lower()\n", 1, {0}},
  };
  // a: line 3 -> index 2, a direct hit.
  // b: lineNumber 99 falls back to the text "c = a / b;" (index 3); then line 5 (index 4).
  // c: fenced response; line 4 (index 3) first, then line 2 (index 1).
  // d: malformed JSON, scored as a miss.
  const std::string predictions =
      R"({"sample_id":"a","response":"{\"faultLocalization\":[{\"codeContent\":\"y = y + 1;\",\"lineNumber\":3}]}"})"
      "\n"
      R"({"sample_id":"b","faultLocalization":[{"codeContent":"c = a / b;","lineNumber":99},{"codeContent":"print(c);","lineNumber":5}]})"
      "\n"
      R"({"sample_id":"c","response":"```json\n{\"faultLocalization\":[{\"codeContent\":\"return x\",\"lineNumber\":4},{\"codeContent\":\"for i in range(n):\",\"lineNumber\":2}]}\n```"})"
      "\n"
      R"({"sample_id":"d","response":"{\"faultLocalization\": [ {\"codeContent\": \"t = s.strip()\", "})"
      "\n";
  const auto batch = bap::ingest_external_file(predictions, corpus);
  std::vector<bap::SampleTruth> truth;
  for (const auto& c : corpus) truth.push_back(bap::truth_from(c));
  const auto rep = bap::evaluate(batch.predictions, truth);

  const std::vector<std::int32_t> want_a = {2}, want_b = {3, 4}, want_c = {3, 1};
  const bool orders = batch.predictions.size() == 4 && batch.predictions[0].order == want_a &&
                      batch.predictions[1].order == want_b && batch.predictions[2].order == want_c &&
                      !batch.predictions[3].order.has_value();
  // Hand-computed: top-1 hits a, b -> 2/4; top-3 adds c -> 3/4; top-5 3/4.
  // P@2: a 1/1, b 2/2, c 1/1 (index 1 at rank 2), d 0 -> 3/4.
  const bool metrics = rep.top_k_accuracy.at(1) == 0.5 && rep.top_k_accuracy.at(3) == 0.75 &&
                       rep.top_k_accuracy.at(5) == 0.75 && rep.precision_at_k.at(2) == 0.75 &&
                       rep.precision_at_k.at(3) == 0.75 && rep.precision_at_k.at(5) == 0.75 &&
                       batch.parse_failures == 1;
  return {orders && metrics, std::string("orders ") + (orders ? "match" : "DIFFER") + ", top-1/3/5 " +
                                 fmt("%.2f", rep.top_k_accuracy.at(1)) + "/" + fmt("%.2f", rep.top_k_accuracy.at(3)) +
                                 "/" + fmt("%.2f", rep.top_k_accuracy.at(5)) + ", P@2 " +
                                 fmt("%.2f", rep.precision_at_k.at(2)) + ", parse failures " +
                                 std::to_string(batch.parse_failures)};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli = BAP_CLI_PATH;
  fs::path work = fs::temp_directory_path() / "bap_acceptance";
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") cli = argv[i + 1];
    if (flag == "--work") work = argv[i + 1];
  }
  fs::create_directories(work);

  report("gradient-oracle", gradient_oracle);
  report("attention-conservation", attention_conservation);
  report("aggregation-oracle", aggregation_oracle);
  report("metrics-oracle", metrics_oracle);
  report("random-baseline-calibration", random_calibration);
  report("planted-signal", planted_signal);
  report("hard-variant-separation", hard_separation);
  report("cli-determinism", [&] { return cli_determinism(cli, work); });
  report("external-ingestion", external_ingestion);

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
