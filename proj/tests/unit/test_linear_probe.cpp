#include <cmath>

#include "bap/linear_probe.hpp"
#include "bap/random.hpp"
#include "bap/synth.hpp"
#include "doctest.h"

using namespace bap;

namespace {

// Label-1 samples carry the signal on their last token, where a linear
// last-token probe can see it.
DetectionSet last_token_set(std::size_t n, double signal, std::uint64_t seed) {
  DetectionSet out;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    DetectionSample s;
    s.sample_id = "lin-" + std::to_string(i);
    s.label = static_cast<int>(i % 2);
    const std::size_t T = 2 + rng.below(6);
    s.z = Matrix(T, 8);
    for (auto& v : s.z.values) v = static_cast<float>(rng.normal());
    if (s.label == 1) {
      for (std::size_t j = 0; j < 8; ++j) s.z(T - 1, j) += static_cast<float>(signal / std::sqrt(8.0));
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("linear probe learns a planted last-token signal") {
  auto tc = linear_train_config();
  CHECK(tc.weight_decay == 0.1);
  tc.learning_rate = 1e-2;
  tc.epochs = 20;
  const auto result = train_linear_probe(tc, last_token_set(600, 4.0, 1));
  CHECK(result.report.best_val_accuracy >= 0.9);

  const auto test = last_token_set(400, 4.0, 2);
  std::vector<std::size_t> all(test.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  CHECK(linear_detection_accuracy(result.model, test.samples, all) >= 0.9);
}

TEST_CASE("zero weights rank lines by token count") {
  LinearProbe zero;
  zero.weight.assign(4, 0.0f);
  RepRecord r;
  r.sample_id = "z";
  r.data = Matrix(7, 4, 1.0f);
  r.token_line = {0, 1, 1, 1, 2, 2, -1};
  for (double s : linear_token_scores(zero, r.data)) CHECK(s == 0.5);
  const auto ranking = linear_localize(zero, r);
  CHECK(ranking.order == std::vector<std::int32_t>{1, 2, 0});
  CHECK(ranking.line_scores[1] == doctest::Approx(3.0 / 7));
  CHECK(linear_detect(zero, r.data) == 0.5);
}

TEST_CASE("linear probe is deterministic") {
  auto tc = linear_train_config();
  tc.epochs = 3;
  const auto data = last_token_set(100, 2.0, 3);
  const auto a = train_linear_probe(tc, data);
  const auto b = train_linear_probe(tc, data);
  CHECK(a.model == b.model);

  RepRecord r;
  r.sample_id = "r";
  r.data = data.samples[0].z;
  r.token_line.assign(r.data.rows, 0);
  r.token_line.back() = 1;
  const auto first = linear_localize(a.model, r);
  const auto second = linear_localize(a.model, r);
  CHECK(first.line_scores == second.line_scores);
  CHECK(first.order == second.order);
}

TEST_CASE("linear probe stays at chance on the hard variant") {
  SynthConfig c;
  c.n_train = 400;
  c.n_test = 100;
  c.seed = 4;
  const auto data = hard_variant(c);
  auto records = data.train.records;
  const auto set = to_detection_set(std::move(records));
  auto tc = linear_train_config();
  tc.epochs = 5;
  const auto result = train_linear_probe(tc, set);
  // The last token is the same constant vector in every sample.
  CHECK(result.report.best_val_accuracy <= 0.6);
}

TEST_CASE("linear probe input errors") {
  LinearProbe p;
  p.weight.assign(3, 0.0f);
  CHECK_THROWS(linear_detect(p, Matrix(2, 4)));
  CHECK_THROWS(linear_detect(p, Matrix(0, 3)));
  CHECK_THROWS_AS(train_linear_probe(linear_train_config(), DetectionSet{}), TrainingError);
}
