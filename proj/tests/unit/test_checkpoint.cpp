#include <cstring>
#include <filesystem>

#include "bap/checkpoint.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bap;

namespace {

ProbeModel sample_model(bool block) {
  ProbeConfig c;
  c.d_in = 6;
  c.num_heads = 4;
  c.num_kv_heads = 2;
  c.head_dim = 3;
  c.ff_dim = 5;
  c.use_block_residual_ln = block;
  c.seed = 17;
  auto m = init_probe(c);
  m.params = oracle::random_params(c, 18).cast<float>();
  return m;
}

std::string_view view(const std::vector<char>& bytes) { return {bytes.data(), bytes.size()}; }

}  // namespace

TEST_CASE("attention checkpoints round-trip exactly") {
  for (bool block : {true, false}) {
    const auto m = sample_model(block);
    const auto bytes = encode_checkpoint(m);
    CHECK(std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0);
    const auto back = decode_checkpoint(view(bytes));
    REQUIRE(std::holds_alternative<ProbeModel>(back));
    CHECK(std::get<ProbeModel>(back) == m);
    CHECK(encode_checkpoint(std::get<ProbeModel>(back)) == bytes);
  }
}

TEST_CASE("linear checkpoints round-trip exactly") {
  LinearProbe p;
  p.weight = {0.5f, -1.25f, 3.0f};
  p.bias = 0.125f;
  const auto back = decode_checkpoint(view(encode_checkpoint(p)));
  REQUIRE(std::holds_alternative<LinearProbe>(back));
  CHECK(std::get<LinearProbe>(back) == p);
}

TEST_CASE("files") {
  const auto dir = std::filesystem::temp_directory_path() / "bap_ckpt_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto m = sample_model(true);
  save_checkpoint(m, dir / "m.bapm");
  CHECK(load_probe(dir / "m.bapm") == m);

  LinearProbe p;
  p.weight = {1.0f};
  save_checkpoint(p, dir / "l.bapm");
  CHECK(std::holds_alternative<LinearProbe>(load_checkpoint(dir / "l.bapm")));
  CHECK_THROWS_AS(load_probe(dir / "l.bapm"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bapm"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed checkpoints") {
  const auto bytes = encode_checkpoint(sample_model(true));
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(view(b)), CheckpointError);
  }
  SUBCASE("version") {
    auto b = bytes;
    b[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(view(b)), CheckpointError);
  }
  SUBCASE("truncated") {
    for (std::size_t n : {std::size_t{0}, std::size_t{7}, std::size_t{20}, bytes.size() - 1}) {
      CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes.data(), n)), CheckpointError);
    }
  }
  SUBCASE("trailing bytes") {
    auto b = bytes;
    b.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(view(b)), CheckpointError);
  }
  SUBCASE("non-finite value") {
    auto b = bytes;
    const float nan = std::nanf("");
    std::memcpy(b.data() + b.size() - 4, &nan, 4);
    CHECK_THROWS_AS(decode_checkpoint(view(b)), CheckpointError);
  }
  SUBCASE("random corruption never crashes") {
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
      auto b = bytes;
      b[rng.below(b.size())] = static_cast<char>(rng.below(256));
      try {
        (void)decode_checkpoint(view(b));
      } catch (const CheckpointError&) {
      }
    }
  }
}
