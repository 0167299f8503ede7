#include "bap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "bap/io_util.hpp"
#include "bap/localize.hpp"
#include "bap/random.hpp"

namespace bap {

namespace {

constexpr std::uint64_t kMuStream = 0x6d75;
constexpr std::uint64_t kNuStream = 0x6e75;
constexpr std::uint64_t kEndStream = 0x656f73;
constexpr std::uint64_t kLabelStream = 0xffffffffULL;

std::vector<double> gaussian_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<float> normalized(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

std::string code_line(std::size_t line, std::size_t tokens) {
  std::string s = "x" + std::to_string(line) + " = f(";
  for (std::size_t j = 0; j + 1 < tokens; ++j) {
    if (j > 0) s += ", ";
    s += "a" + std::to_string(j);
  }
  return s + ");";
}

struct Directions {
  std::vector<float> mu, nu, end;
};

void plant(RepRecord& r, std::int32_t line, std::span<const float> direction, double strength) {
  for (std::size_t t = 0; t < r.tokens(); ++t) {
    if (r.token_line[t] != line) continue;
    auto row = r.data.row(t);
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = static_cast<float>(static_cast<double>(row[j]) + strength * direction[j]);
    }
  }
}

// k distinct values from [0, n), in draw order.
std::vector<std::int32_t> choose_distinct(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::int32_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

void make_sample(const SynthConfig& c, const Directions& dirs, Rng& rng, int label, const std::string& id,
                 RepRecord& rec, CodeRecord& code) {
  const auto lines = static_cast<std::size_t>(rng.between(static_cast<long long>(c.lines_min), static_cast<long long>(c.lines_max)));
  std::vector<std::size_t> per_line(lines);
  for (auto& n : per_line) {
    n = static_cast<std::size_t>(
        rng.between(static_cast<long long>(c.tokens_per_line_min), static_cast<long long>(c.tokens_per_line_max)));
  }
  const std::size_t body = std::accumulate(per_line.begin(), per_line.end(), std::size_t{0});
  const std::size_t tokens = body + (c.end_token ? 1 : 0);

  rec.sample_id = id;
  rec.layer_k = c.layer_k;
  rec.label = label;
  rec.data = Matrix{tokens, c.d, std::vector<float>(tokens * c.d)};
  rec.token_line.clear();
  rec.token_line.reserve(tokens);
  for (std::size_t i = 0; i < lines; ++i) rec.token_line.insert(rec.token_line.end(), per_line[i], static_cast<std::int32_t>(i));
  for (std::size_t t = 0; t < body; ++t) {
    for (auto& x : rec.data.row(t)) x = static_cast<float>(c.noise * rng.normal());
  }
  if (c.end_token) {
    rec.token_line.push_back(-1);
    std::copy(dirs.end.begin(), dirs.end.end(), rec.data.row(body).begin());
  }

  rec.buggy_lines.clear();
  if (!c.hard) {
    if (label == 1) {
      const auto n_bug = std::min<std::size_t>(
          lines, static_cast<std::size_t>(rng.between(static_cast<long long>(c.buggy_lines_min),
                                                       static_cast<long long>(c.buggy_lines_max))));
      rec.buggy_lines = choose_distinct(rng, lines, n_bug);
      for (auto line : rec.buggy_lines) plant(rec, line, dirs.mu, c.signal);
    }
  } else {
    const std::size_t candidates = lines - 1;
    if (label == 1) {
      const auto pair = choose_distinct(rng, candidates, 2);
      plant(rec, pair[0], dirs.mu, c.signal);
      plant(rec, pair[1], dirs.nu, c.signal);
      rec.buggy_lines = pair;
    } else {
      const auto line = static_cast<std::int32_t>(rng.below(candidates));
      const bool first = rng.uniform() < 0.5;
      plant(rec, line, first ? dirs.mu : dirs.nu, c.signal);
    }
  }
  std::sort(rec.buggy_lines.begin(), rec.buggy_lines.end());

  code.sample_id = id;
  code.label = label;
  code.buggy_lines = rec.buggy_lines;
  code.code.clear();
  for (std::size_t i = 0; i < lines; ++i) code.code += code_line(i, per_line[i]) + "\n";

  rec.provenance = "synth seed=" + std::to_string(c.seed) + " d=" + std::to_string(c.d) +
                   (c.hard ? " hard" : "") + " signal=" + std::to_string(c.signal);
}

SynthSplit make_split(const SynthConfig& c, const Directions& dirs, std::uint64_t tag, std::size_t n,
                      const std::string& prefix) {
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n / 2), 1);
  Rng label_rng = Rng::derived(c.seed, (tag << 32) | kLabelStream);
  label_rng.shuffle(std::span<int>(labels));

  SynthSplit split;
  split.records.resize(n);
  split.code.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::derived(c.seed, (tag << 32) | i);
    char id[32];
    std::snprintf(id, sizeof id, "%s-%05zu", prefix.c_str(), i);
    make_sample(c, dirs, rng, labels[i], id, split.records[i], split.code[i]);
  }
  return split;
}

}  // namespace

void SynthConfig::validate() const {
  if (d < 1) throw std::invalid_argument("synth: d must be >= 1");
  if (lines_min < 1 || lines_min > lines_max) throw std::invalid_argument("synth: bad line-count range");
  if (tokens_per_line_min < 1 || tokens_per_line_min > tokens_per_line_max) {
    throw std::invalid_argument("synth: bad tokens-per-line range");
  }
  if (buggy_lines_min < 1 || buggy_lines_min > buggy_lines_max) throw std::invalid_argument("synth: bad buggy-line range");
  if (!(signal >= 0.0) || !std::isfinite(signal)) throw std::invalid_argument("synth: signal must be finite and >= 0");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("synth: noise must be finite and >= 0");
  if (hard) {
    if (lines_min < 3) throw std::invalid_argument("synth: the hard variant needs at least 3 lines per sample");
    if (d < 2) throw std::invalid_argument("synth: the hard variant needs d >= 2");
  }
}

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  SynthDataset out;
  out.config = config;

  Rng mu_rng = Rng::derived(config.seed, kMuStream);
  out.mu = normalized(gaussian_vector(mu_rng, config.d));
  if (config.d >= 2) {
    Rng nu_rng = Rng::derived(config.seed, kNuStream);
    auto nu = gaussian_vector(nu_rng, config.d);
    double dot = 0.0;
    for (std::size_t j = 0; j < config.d; ++j) dot += nu[j] * out.mu[j];
    for (std::size_t j = 0; j < config.d; ++j) nu[j] -= dot * out.mu[j];
    out.nu = normalized(std::move(nu));
  }
  Directions dirs{out.mu, out.nu, {}};
  Rng end_rng = Rng::derived(config.seed, kEndStream);
  for (double x : gaussian_vector(end_rng, config.d)) dirs.end.push_back(static_cast<float>(config.noise * x));

  out.train = make_split(config, dirs, 1, config.n_train, "train");
  out.test = make_split(config, dirs, 2, config.n_test, "test");
  return out;
}

SynthDataset hard_variant(SynthConfig config) {
  config.hard = true;
  return generate(config);
}

void write_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto write_split = [&](const SynthSplit& split, Split which) {
    const std::string name(to_string(which));
    std::filesystem::create_directories(dir / name);
    Manifest manifest;
    manifest.split = which;
    manifest.provenance = split.records.empty() ? "synth" : split.records.front().provenance;
    for (const auto& r : split.records) {
      const std::string rel = name + "/" + r.sample_id + ".bapr";
      save_record(r, dir / rel);
      manifest.entries.push_back(ManifestEntry{r.sample_id, rel, r.tokens(), r.label});
    }
    save_manifest(manifest, dir / (name + ".jsonl"));
    write_file_atomic(dir / (name + "_truth.jsonl"), format_corpus(split.code));
  };
  write_split(data.train, Split::Train);
  write_split(data.test, Split::Test);
}

std::vector<std::int32_t> oracle_order(const RepRecord& record, std::span<const float> mu) {
  if (mu.size() != record.dim()) throw std::invalid_argument("oracle: direction has the wrong dimension");
  std::vector<double> lines(record.line_count(), 0.0);
  for (std::size_t t = 0; t < record.tokens(); ++t) {
    if (record.token_line[t] < 0) continue;
    double s = 0.0;
    const auto row = record.data.row(t);
    for (std::size_t j = 0; j < mu.size(); ++j) s += static_cast<double>(mu[j]) * row[j];
    lines[static_cast<std::size_t>(record.token_line[t])] += s;
  }
  return rank_lines(lines);
}

}  // namespace bap
