#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "bap/checkpoint.hpp"
#include "bap/evalkit.hpp"
#include "bap/external.hpp"
#include "bap/io_util.hpp"
#include "bap/linear_probe.hpp"
#include "bap/localize.hpp"
#include "bap/parallel.hpp"
#include "bap/render.hpp"
#include "bap/repstore.hpp"
#include "bap/synth.hpp"
#include "bap/trainer.hpp"
#include "json.hpp"

namespace bap::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    std::cout.flush();
  } else {
    write_file_atomic(out_path, text);
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthConfig config;
  bool no_end_token = false;
};

void cmd_synth(const SynthArgs& a) {
  SynthConfig c = a.config;
  c.end_token = !a.no_end_token;
  const auto data = generate(c);
  write_dataset(data, a.out);
  std::cerr << "wrote " << data.train.records.size() << " train and " << data.test.records.size()
            << " test records to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, out, report;
  std::string probe = "attention";
  std::string optimizer = "adamw";
  std::optional<int> epochs;
  std::optional<double> weight_decay;
  double lr = 1e-4;
  std::size_t batch = 16;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  bool short_schedule = false;
  ProbeConfig probe_config;
  bool bare = false;
  bool quiet = false;
};

void cmd_train(const TrainArgs& a) {
  const auto manifest = load_manifest(a.manifest);
  const auto data = load_detection_set(manifest);
  if (data.samples.empty()) throw UsageError("manifest " + a.manifest + " has no records");

  TrainConfig tc = a.probe == "linear" ? linear_train_config() : TrainConfig{};
  if (a.short_schedule) tc.epochs = TrainConfig::short_schedule().epochs;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.weight_decay) tc.weight_decay = *a.weight_decay;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.val_fraction = a.val_fraction;
  tc.seed = a.seed;
  tc.optimizer = a.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::AdamW;
  tc.threads = thread_count_from_env();

  TrainReport report;
  AnyProbe model;
  if (a.probe == "linear") {
    auto r = train_linear_probe(tc, data);
    model = std::move(r.model);
    report = std::move(r.report);
  } else {
    ProbeConfig pc = a.probe_config;
    pc.d_in = data.samples.front().z.cols;
    pc.use_block_residual_ln = !a.bare;
    pc.seed = a.seed;
    auto r = train_probe(pc, tc, data);
    model = std::move(r.model);
    report = std::move(r.report);
  }
  save_checkpoint(model, a.out);
  const std::string report_path = a.report.empty() ? a.out + ".report.json" : a.report;
  // Wall-clock time is the only nondeterministic field, so it stays out of the file.
  auto j = json::parse(report.to_json());
  j.erase("wall_seconds");
  write_file_atomic(report_path, j.dump(2) + "\n");
  if (!a.quiet) {
    for (const auto& e : report.epochs) {
      std::fprintf(stderr, "epoch %3d  loss %.5f  val acc %.4f\n", e.epoch, e.train_loss, e.val_accuracy);
    }
    std::fprintf(stderr, "selected epoch %d (val acc %.4f), %.1fs\n", report.selected_epoch,
                 report.best_val_accuracy, report.wall_seconds);
  }
}

// ---------------------------------------------------------------------------

struct RankArgs {
  std::string checkpoint, manifest, out;
  std::optional<std::size_t> top_k;
};

void cmd_rank(const RankArgs& a) {
  if (a.top_k && *a.top_k == 0) throw UsageError("--top-k must be >= 1");
  const auto model = load_checkpoint(a.checkpoint);
  const auto manifest = load_manifest(a.manifest);
  const std::size_t expected_d =
      std::visit([](const auto& m) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, ProbeModel>) {
          return m.config.d_in;
        } else {
          return m.dim();
        }
      }, model);

  const unsigned threads = thread_count_from_env();
  const std::size_t chunk = std::max<std::size_t>(64, 8 * threads);
  RecordCursor cursor(manifest);
  std::string out;
  std::vector<RepRecord> batch;
  for (bool done = false; !done;) {
    batch.clear();
    while (batch.size() < chunk) {
      auto r = cursor.next();
      if (!r) {
        done = true;
        break;
      }
      if (r->dim() != expected_d) {
        throw UsageError("record '" + r->sample_id + "' has d=" + std::to_string(r->dim()) + " but the checkpoint expects d=" +
                         std::to_string(expected_d));
      }
      batch.push_back(std::move(*r));
    }
    std::vector<std::string> lines(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
      const auto& r = batch[i];
      if (const auto* probe = std::get_if<ProbeModel>(&model)) {
        const auto fwd = forward(*probe, r.data);
        const auto ranking = aggregate(fwd.a_bar, r.token_line);
        const double p = 1.0 / (1.0 + std::exp(-fwd.logit));
        lines[i] = ranking_to_json(r.sample_id, ranking, a.top_k, p);
      } else {
        const auto& lin = std::get<LinearProbe>(model);
        lines[i] = ranking_to_json(r.sample_id, linear_localize(lin, r), a.top_k, linear_detect(lin, r.data));
      }
    });
    for (const auto& l : lines) out += l + "\n";
  }
  emit(out, a.out);
}

// ---------------------------------------------------------------------------

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  }
  return out;
}

struct EvalArgs {
  std::string predictions, external, truth, manifest, out;
  std::string format = "table";
};

void cmd_eval(const EvalArgs& a) {
  if (a.predictions.empty() == a.external.empty()) throw UsageError("give exactly one of --predictions or --external");
  if (a.truth.empty() == a.manifest.empty()) throw UsageError("give exactly one of --truth or --manifest");

  std::vector<SampleTruth> truth;
  std::vector<CodeRecord> corpus;
  if (!a.truth.empty()) {
    if (!fs::exists(a.truth)) throw UsageError("truth file not found: " + a.truth);
    corpus = load_corpus(a.truth);
    for (const auto& c : corpus) truth.push_back(truth_from(c));
  } else {
    const auto manifest = load_manifest(a.manifest);
    RecordCursor cursor(manifest);
    while (auto r = cursor.next()) truth.push_back(truth_from(*r));
  }

  std::vector<SamplePrediction> predictions;
  if (!a.predictions.empty()) {
    std::size_t lineno = 0;
    for (const auto& line : read_lines(a.predictions)) {
      ++lineno;
      RankedSample s;
      try {
        s = ranking_from_json(line);
      } catch (const std::exception& e) {
        throw UsageError(a.predictions + ":" + std::to_string(lineno) + ": " + e.what());
      }
      predictions.push_back(SamplePrediction{s.sample_id, s.ranking.order, s.probability});
    }
  } else {
    if (a.truth.empty()) throw UsageError("--external needs --truth (the code corpus) for text matching");
    std::string text;
    try {
      text = read_file(a.external);
    } catch (const std::exception&) {
      throw UsageError("cannot open " + a.external);
    }
    auto batch = ingest_external_file(text, corpus);
    if (batch.parse_failures || batch.dropped_entries) {
      std::fprintf(stderr, "warning: %zu unparseable responses scored as misses, %zu entries matched no line\n",
                   batch.parse_failures, batch.dropped_entries);
    }
    predictions = std::move(batch.predictions);
  }

  const auto report = evaluate(predictions, truth);
  if (!a.out.empty()) write_file_atomic(a.out, report.to_json() + "\n");
  if (a.format == "json") {
    std::cout << report.to_json() << "\n";
  } else {
    std::cout << report.to_table();
  }
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string rankings, corpus, out, sample;
  std::string format = "ansi";
};

void cmd_report(const ReportArgs& a) {
  if (!fs::exists(a.corpus)) throw UsageError("corpus not found: " + a.corpus);
  const auto corpus = load_corpus(a.corpus);
  std::unordered_map<std::string, const CodeRecord*> by_id;
  for (const auto& c : corpus) by_id.emplace(c.sample_id, &c);

  std::vector<HeatmapInput> inputs;
  for (const auto& line : read_lines(a.rankings)) {
    const auto s = ranking_from_json(line);
    if (!a.sample.empty() && s.sample_id != a.sample) continue;
    const auto it = by_id.find(s.sample_id);
    if (it == by_id.end()) throw UsageError("sample '" + s.sample_id + "' is not in the corpus");
    inputs.push_back(HeatmapInput{s.sample_id, split_lines(it->second->code), s.ranking.line_scores});
  }
  if (!a.sample.empty() && inputs.empty()) throw UsageError("sample '" + a.sample + "' not found in " + a.rankings);

  std::string out;
  if (a.format == "html") {
    out = render_html(inputs);
  } else {
    for (const auto& in : inputs) out += render_ansi(in);
  }
  emit(out, a.out);
}

// ---------------------------------------------------------------------------

void cmd_inspect(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("no such file: " + path);
  std::string head;
  {
    std::ifstream in(path, std::ios::binary);
    char buf[4] = {};
    in.read(buf, 4);
    head.assign(buf, static_cast<std::size_t>(in.gcount()));
  }
  json j;
  if (head == std::string(kRecordMagic, 4)) {
    const auto r = load_record(path);
    j = {{"type", "record"},        {"sample_id", r.sample_id}, {"layer_k", r.layer_k},
         {"T", r.tokens()},         {"d", r.dim()},             {"lines", r.line_count()},
         {"label", r.label},        {"buggy_lines", r.buggy_lines}, {"provenance", r.provenance}};
    std::size_t special = 0;
    for (auto v : r.token_line) special += v < 0 ? 1 : 0;
    j["special_tokens"] = special;
  } else if (head == std::string(kCheckpointMagic, 4)) {
    const auto model = load_checkpoint(path);
    if (const auto* p = std::get_if<ProbeModel>(&model)) {
      const auto& c = p->config;
      j = {{"type", "checkpoint"}, {"kind", "attention"},        {"d_in", c.d_in},
           {"num_heads", c.num_heads}, {"num_kv_heads", c.num_kv_heads}, {"head_dim", c.head_dim},
           {"ff_dim", c.ff_dim},   {"use_block_residual_ln", c.use_block_residual_ln},
           {"seed", c.seed},       {"parameters", p->params.scalar_count()}};
    } else {
      const auto& l = std::get<LinearProbe>(model);
      j = {{"type", "checkpoint"}, {"kind", "linear"}, {"d_in", l.dim()}, {"parameters", l.dim() + 1}};
    }
  } else {
    const auto m = load_manifest(path);
    std::size_t buggy = 0, tokens = 0;
    for (const auto& e : m.entries) {
      buggy += static_cast<std::size_t>(e.label);
      tokens += e.tokens;
    }
    j = {{"type", "manifest"},
         {"split", std::string(to_string(m.split))},
         {"provenance", m.provenance},
         {"entries", m.entries.size()},
         {"buggy", buggy},
         {"clean", m.entries.size() - buggy},
         {"tokens", tokens}};
  }
  std::cout << j.dump(2) << "\n";
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Line-level fault localization with attention probes trained on bug-detection labels"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset with planted line-level signal");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.config.seed, "Generator seed");
  s->add_option("--n-train", synth.config.n_train, "Training samples")->capture_default_str();
  s->add_option("--n-test", synth.config.n_test, "Test samples")->capture_default_str();
  s->add_option("--dim", synth.config.d, "Hidden dimension d")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--signal", synth.config.signal, "Planted signal strength")->capture_default_str();
  s->add_option("--noise", synth.config.noise, "Token noise standard deviation")->capture_default_str();
  s->add_option("--layer", synth.config.layer_k, "Layer index written into the records");
  s->add_flag("--hard", synth.config.hard, "Conjunctive two-direction variant");
  s->add_flag("--no-end-token", synth.no_end_token, "Do not append the end-of-sequence token");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a probe on a manifest");
  t->add_option("--manifest", train.manifest, "Training manifest")->required();
  t->add_option("--out,--checkpoint", train.out, "Checkpoint to write")->required();
  t->add_option("--report", train.report, "Training report path (default: <checkpoint>.report.json)");
  t->add_option("--probe", train.probe, "Probe type")->check(CLI::IsMember({"attention", "linear"}))->capture_default_str();
  t->add_option("--seed", train.seed, "Seed for initialization, split and shuffling");
  t->add_option("--epochs", train.epochs, "Epochs (default 30)")->check(CLI::PositiveNumber);
  t->add_flag("--short", train.short_schedule, "5-epoch schedule for quickly overfitting data");
  t->add_option("--lr", train.lr, "Learning rate")->capture_default_str();
  t->add_option("--weight-decay", train.weight_decay, "Decoupled weight decay (default 1.0; 0.1 for the linear probe)");
  t->add_option("--batch-size", train.batch, "Samples per optimizer step")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--val-fraction", train.val_fraction, "Validation share")->capture_default_str();
  t->add_option("--optimizer", train.optimizer, "adamw or sgd")->check(CLI::IsMember({"adamw", "sgd"}))->capture_default_str();
  t->add_option("--heads", train.probe_config.num_heads, "Query heads M")->capture_default_str();
  t->add_option("--kv-heads", train.probe_config.num_kv_heads, "Key/value heads G")->capture_default_str();
  t->add_option("--head-dim", train.probe_config.head_dim, "Per-head dimension")->capture_default_str();
  t->add_option("--ff-dim", train.probe_config.ff_dim, "Classifier hidden width")->capture_default_str();
  t->add_flag("--bare", train.bare, "Attention + MLP without residual and layer norm");
  t->add_flag("--quiet", train.quiet, "No per-epoch log");

  RankArgs rank;
  auto* r = app.add_subcommand("rank", "Rank source lines of every record in a manifest");
  r->add_option("--checkpoint", rank.checkpoint, "Trained probe")->required();
  r->add_option("--manifest", rank.manifest, "Records to rank")->required();
  r->add_option("--out", rank.out, "Output JSON-lines (default: stdout)");
  r->add_option("--top-k", rank.top_k, "Truncate each order to k lines");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score rankings or external predictions against ground truth");
  e->add_option("--predictions", eval.predictions, "Rankings JSON-lines from `rank`");
  e->add_option("--external", eval.external, "Prompting-style predictions (JSON-lines keyed by sample_id)");
  e->add_option("--truth", eval.truth, "Code corpus JSON-lines with ground truth");
  e->add_option("--manifest", eval.manifest, "Take ground truth from the records of a manifest");
  e->add_option("--out", eval.out, "Write the report as JSON");
  e->add_option("--format", eval.format, "Stdout format")->check(CLI::IsMember({"table", "json"}))->capture_default_str();

  ReportArgs report;
  auto* p = app.add_subcommand("report", "Render line weights as a heatmap");
  p->add_option("--rankings", report.rankings, "Rankings JSON-lines from `rank`")->required();
  p->add_option("--corpus", report.corpus, "Code corpus JSON-lines")->required();
  p->add_option("--sample", report.sample, "Only this sample_id");
  p->add_option("--format", report.format, "ansi or html")->check(CLI::IsMember({"ansi", "html"}))->capture_default_str();
  p->add_option("--out", report.out, "Output file (default: stdout)");

  std::string inspect_path;
  auto* i = app.add_subcommand("inspect", "Summarize a record, checkpoint or manifest");
  i->add_option("path", inspect_path, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*s) cmd_synth(synth);
    if (*t) cmd_train(train);
    if (*r) cmd_rank(rank);
    if (*e) cmd_eval(eval);
    if (*p) cmd_report(report);
    if (*i) cmd_inspect(inspect_path);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace bap::cli
