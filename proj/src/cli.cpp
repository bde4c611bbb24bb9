// SPDX-License-Identifier: Apache-2.0

#include "hiertag/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "hiertag/checkpoint.hpp"
#include "hiertag/data.hpp"
#include "hiertag/eval.hpp"
#include "hiertag/projection.hpp"
#include "hiertag/synthetic.hpp"
#include "hiertag/training.hpp"

namespace hiertag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for bad flag combinations detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Corpus read_conll_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return parse_conll(in);
  } catch (const ParseError& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

Corpus read_unlabeled_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load_unlabeled(in);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
}

json input_record(const fs::path& path) {
  return {{"path", path.string()}, {"bytes", fs::file_size(path)}, {"fnv1a64", file_digest(path)}};
}

json report_json(const EvalReport& r) {
  json j = {{"sentences", r.sentences}, {"tokens", r.tokens}};
  if (r.pos_accuracy) j["pos_accuracy"] = *r.pos_accuracy;
  if (r.chunk) {
    j["chunk_precision"] = r.chunk->overall.precision;
    j["chunk_recall"] = r.chunk->overall.recall;
    j["chunk_f1"] = r.chunk->overall.f1;
  }
  return j;
}

// Maps an exception escaping a command to an exit code.
int fail(std::ostream& err, const char* command, const std::exception& e, int code) {
  err << "hiertag " << command << ": " << e.what() << '\n';
  return code;
}

template <typename F>
int guarded(std::ostream& err, const char* command, F&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    return fail(err, command, e, kExitUsage);
  } catch (const std::logic_error& e) {
    return fail(err, command, e, kExitUsage);
  } catch (const std::exception& e) {
    return fail(err, command, e, kExitFailure);
  }
}

// CLI11 reads config files for the top-level app only, so subcommand files
// are merged here: each key fills the option of the same long name unless
// the command line already set it. Underscores in keys read as hyphens.
void apply_config_file(CLI::App& command, const std::string& path) {
  if (!fs::is_regular_file(path)) throw std::runtime_error("cannot open config " + path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::Error& e) {
    throw UsageError(path + ": " + e.what());
  }
  for (const CLI::ConfigItem& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    std::string flag = "--" + item.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    CLI::Option* opt = command.get_option_no_throw(flag);
    const bool top = item.parents.empty() ||
                     (item.parents.size() == 1 && item.parents[0] == command.get_name());
    if (!opt || !top || item.name == "config") {
      throw UsageError(path + ": unknown key '" + item.name + "'");
    }
    if (opt->count() > 0) continue;
    try {
      for (const std::string& v : item.inputs) opt->add_result(v);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError(path + ": " + item.name + ": " + e.what());
    }
  }
}

struct TrainArgs {
  TrainConfig config;
  std::string arch = "eth";
  std::string train, dev, test, unlabeled, embeddings, out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.config.semi_supervised && a.unlabeled.empty()) {
    throw UsageError("--semi-supervised requires --unlabeled");
  }
  TrainConfig config = a.config;
  config.arch = parse_architecture(a.arch);
  if (!a.embeddings.empty()) config.embeddings = fs::path(a.embeddings);
  config.validate();

  const auto started = std::chrono::steady_clock::now();
  const std::string started_utc = utc_now();
  TrainingData data;
  json inputs = json::object();
  data.train = read_conll_file(a.train);
  inputs["train"] = input_record(a.train);
  if (!a.dev.empty()) {
    data.dev = read_conll_file(a.dev);
    inputs["dev"] = input_record(a.dev);
  }
  if (!a.test.empty()) {
    data.test = read_conll_file(a.test);
    inputs["test"] = input_record(a.test);
  }
  if (config.semi_supervised) {
    data.unlabeled = read_unlabeled_file(a.unlabeled);
    inputs["unlabeled"] = input_record(a.unlabeled);
  }
  if (config.embeddings) inputs["embeddings"] = input_record(*config.embeddings);

  const fs::path dir = fresh_directory(a.out);
  fs::create_directories(dir);
  const TrainingOutputs artifacts = outputs_in(dir);
  const ConfigEcho echo = config_echo(config);

  json manifest;
  json cfg = json::object();
  for (const auto& [k, v] : echo) cfg[k] = v;
  cfg["train"] = a.train;
  cfg["dev"] = a.dev;
  cfg["test"] = a.test;
  cfg["unlabeled"] = a.unlabeled;
  manifest["command"] = "train";
  manifest["config"] = cfg;
  manifest["inputs"] = inputs;
  manifest["run_id"] =
      hex64(fnv1a(cfg.dump() + inputs.dump() + started_utc + dir.string())).substr(0, 12);
  manifest["artifacts"] = {{"metrics", artifacts.metrics.string()},
                           {"timing", artifacts.timing.string()},
                           {"checkpoint", artifacts.checkpoint.string()},
                           {"config", (dir / "config.txt").string()},
                           {"test_report", (dir / "test_report.jsonl").string()}};
  manifest["status"] = "running";
  manifest["timing"] = {{"started_utc", started_utc}};
  const fs::path manifest_path = dir / "manifest.json";
  write_text(manifest_path, manifest.dump(2) + "\n");

  std::string config_text;
  for (const auto& [k, v] : cfg.items()) config_text += k + "=" + v.get<std::string>() + "\n";
  write_text(dir / "config.txt", config_text);

  out << "run directory " << dir.string() << '\n';
  auto finish = [&](const std::string& status) {
    manifest["status"] = status;
    manifest["timing"]["finished_utc"] = utc_now();
    manifest["timing"]["seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_text(manifest_path, manifest.dump(2) + "\n");
  };
  try {
    const TrainingResult res = run_training(config, data, artifacts, [&](const EpochMetrics& m) {
      out << "epoch " << m.epoch << " loss " << std::fixed << std::setprecision(4) << m.loss;
      if (m.dev_pos_accuracy) out << " dev_pos " << *m.dev_pos_accuracy;
      if (m.dev_chunk_f1) out << " dev_chunk_f1 " << *m.dev_chunk_f1;
      out << " labeled " << m.labeled_batches << " unlabeled " << m.unlabeled_batches << '\n';
      out.unsetf(std::ios::floatfield);
    });
    {
      std::ofstream rep(dir / "test_report.jsonl", std::ios::trunc);
      write_report_jsonl(rep, res.test_report);
    }
    manifest["counts"] = {{"train_sentences", data.train.size()},
                          {"labeled_sentences", res.labeled_sentences},
                          {"labeled_fraction", config.labeled_fraction},
                          {"dev_sentences", data.dev.size()},
                          {"test_sentences", data.test.size()},
                          {"unlabeled_sentences", data.unlabeled.size()},
                          {"vocabulary", res.vocab.size()},
                          {"lm_vocabulary", res.vocab.lm_size()}};
    json results = {{"best_epoch", res.best_epoch}, {"best_dev_chunk_f1", res.best_dev_chunk_f1}};
    if (!data.test.empty()) results["test"] = report_json(res.test_report);
    if (res.embeddings) results["embedding_coverage"] = res.embeddings->coverage;
    manifest["results"] = results;
    finish("completed");
    if (!data.test.empty()) write_report_text(out, res.test_report);
  } catch (const std::exception& e) {
    manifest["error"] = e.what();
    finish("failed");
    throw;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, predictions, data, task = "both", report;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.predictions.empty()) {
    throw UsageError("exactly one of --checkpoint or --predictions is required");
  }
  const Corpus gold = read_conll_file(a.data);
  Corpus pred;
  fs::path beside;
  if (!a.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(fs::path(a.checkpoint));
    const BatchGeometry geometry;
    pred = predict(ck.model, gold, ck.vocab, ck.pos_labels, ck.chunk_labels, geometry);
    beside = a.checkpoint;
  } else {
    pred = read_conll_file(a.predictions);
    beside = a.predictions;
  }
  EvalReport r = evaluate_predictions(gold, pred);
  const bool want_pos = a.task != "chunk";
  const bool want_chunk = a.task != "pos";
  if (want_pos && !r.pos_accuracy) throw UsageError(a.data + " carries no POS tags");
  if (want_chunk && !r.chunk) throw UsageError(a.data + " carries no chunk tags");
  if (!want_pos) r.pos_accuracy.reset();
  if (!want_chunk) r.chunk.reset();
  write_report_text(out, r);
  const fs::path report =
      a.report.empty() ? beside.parent_path() / (beside.stem().string() + "." +
                                                 fs::path(a.data).stem().string() + ".eval.jsonl")
                       : fs::path(a.report);
  std::ofstream rep(report, std::ios::trunc);
  if (!rep) throw std::runtime_error("cannot write " + report.string());
  write_report_jsonl(rep, r);
  out << "report " << report.string() << '\n';
  return kExitOk;
}

struct ProjectArgs {
  std::string checkpoint, task, method = "tsne", out;
  double perplexity = 5.0;
  std::uint64_t seed = 0;
  std::size_t iterations = 1000;
};

int cmd_project(const ProjectArgs& a, std::ostream& out) {
  Checkpoint ck = load_checkpoint(fs::path(a.checkpoint));
  const Task task = a.task == "pos" ? Task::pos : Task::chunk;
  const Parameter* table = ck.model.label_embeddings(task);
  if (!table) {
    throw UsageError("the " + std::string(architecture_name(ck.model.architecture())) +
                     " architecture has no label embeddings");
  }
  const LabelSet& labels = task == Task::pos ? ck.pos_labels : ck.chunk_labels;
  const LabeledPoints points = points_from_table(labels, table->value);
  LabeledPoints projected;
  if (a.method == "pca") {
    projected = pca_2d(points);
  } else {
    TsneOptions o;
    o.perplexity = a.perplexity;
    o.iterations = a.iterations;
    o.seed = a.seed;
    const TsneResult r = tsne(points, o);
    if (!r.kl.empty()) out << "final KL " << r.kl.back() << '\n';
    projected = r.points;
  }
  export_projection(fs::path(a.out), projected);
  out << "wrote " << projected.size() << " points to " << a.out << '\n';
  if (task == Task::chunk) {
    const auto sep = begin_inside_separation(projected);
    out << "b/i separation ";
    if (sep) {
      out << *sep << '\n';
    } else {
      out << "n/a\n";
    }
  }
  return kExitOk;
}

struct SynthArgs {
  std::uint64_t seed = 1;
  std::size_t sentences = 2000;
  std::size_t unlabeled = 20000;
  std::string out;
};

int cmd_gen_synthetic(const SynthArgs& a, std::ostream& out) {
  const SyntheticSplits s = split_synthetic(gen_synthetic(a.seed, a.sentences, a.unlabeled));
  const fs::path dir(a.out);
  fs::create_directories(dir);
  auto conll = [](const Corpus& c) {
    std::ostringstream os;
    write_conll(os, c);
    return os.str();
  };
  std::ostringstream unl;
  write_unlabeled(unl, s.unlabeled);
  write_text(dir / "train.conll", conll(s.train));
  write_text(dir / "dev.conll", conll(s.dev));
  write_text(dir / "test.conll", conll(s.test));
  write_text(dir / "unlabeled.txt", unl.str());
  out << "wrote " << s.train.size() << "/" << s.dev.size() << "/" << s.test.size()
      << " train/dev/test and " << s.unlabeled.size() << " unlabeled sentences to "
      << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

fs::path fresh_directory(const fs::path& base) {
  if (!fs::exists(base)) return base;
  for (std::size_t n = 1;; ++n) {
    fs::path candidate = base;
    candidate += "-" + std::to_string(n);
    if (!fs::exists(candidate)) return candidate;
  }
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return hex64(h);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical semi-supervised sequence labeling"};
  app.name("hiertag");
  app.require_subcommand(1);

  TrainArgs ta;
  TrainConfig& tc = ta.config;
  auto* train = app.add_subcommand("train", "Train a baseline or hierarchical tagger");
  std::string train_config;
  train->add_option("--config", train_config, "key=value file; flags take precedence");
  train->add_option("--arch", ta.arch, "Architecture")
      ->check(CLI::IsMember({"baseline", "eth"}))
      ->capture_default_str();
  train->add_flag("--semi-supervised", tc.semi_supervised, "Interleave LM-only batches");
  train->add_option("--gamma", tc.gamma, "Unlabeled batch probability")->capture_default_str();
  train->add_option("--labeled-fraction", tc.labeled_fraction, "Fraction of labeled sentences")
      ->capture_default_str();
  train->add_option("--train", ta.train, "Training CoNLL file (required)");
  train->add_option("--dev", ta.dev, "Held-out CoNLL file for model selection");
  train->add_option("--test", ta.test, "Test CoNLL file");
  train->add_option("--unlabeled", ta.unlabeled, "Unlabeled text, one sentence per line");
  train->add_option("--embeddings", ta.embeddings, "Pretrained word vectors (text format)");
  train->add_option("--epochs", tc.epochs, "Passes over the labeled data")->capture_default_str();
  train->add_option("--seed", tc.seed, "Random seed")->capture_default_str();
  train->add_option("--out", ta.out, "Run directory (suffixed if it exists, required)");
  train->add_option("--batch-size", tc.geometry.batch_size)->capture_default_str();
  train->add_option("--max-len", tc.geometry.max_len)->capture_default_str();
  train->add_option("--learning-rate", tc.adam.learning_rate)->capture_default_str();
  train->add_option("--clip-norm", tc.clip_norm)->capture_default_str();
  train->add_option("--word-dim", tc.word_dim)->capture_default_str();
  train->add_option("--hidden", tc.hidden)->capture_default_str();
  train->add_option("--label-dim", tc.label_dim)->capture_default_str();
  train->add_option("--lm-cap", tc.lm_cap, "LM output vocabulary size")->capture_default_str();
  train->add_option("--lm-on-labeled", tc.lm_on_labeled, "Add the LM term to labeled batches")
      ->capture_default_str();

  EvalArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint or a prediction file");
  evaluate->add_option("--checkpoint", ea.checkpoint, "Checkpoint to tag --data with");
  evaluate->add_option("--predictions", ea.predictions, "CoNLL file of predicted tags");
  evaluate->add_option("--data", ea.data, "Gold CoNLL file")->required();
  evaluate->add_option("--task", ea.task)
      ->check(CLI::IsMember({"pos", "chunk", "both"}))
      ->capture_default_str();
  evaluate->add_option("--report", ea.report, "Report path (default: beside the input)");

  ProjectArgs pa;
  auto* project = app.add_subcommand("project-labels", "Project label embeddings to 2D");
  project->add_option("--checkpoint", pa.checkpoint)->required();
  project->add_option("--task", pa.task)->required()->check(CLI::IsMember({"pos", "chunk"}));
  project->add_option("--method", pa.method)
      ->check(CLI::IsMember({"pca", "tsne"}))
      ->capture_default_str();
  project->add_option("--perplexity", pa.perplexity)->capture_default_str();
  project->add_option("--iterations", pa.iterations)->capture_default_str();
  project->add_option("--seed", pa.seed)->capture_default_str();
  project->add_option("--out", pa.out, "CSV destination")->required();

  SynthArgs sa;
  auto* synth = app.add_subcommand("gen-synthetic", "Write a synthetic tagged corpus");
  synth->add_option("--seed", sa.seed)->capture_default_str();
  synth->add_option("--sentences", sa.sentences, "Labeled sentences")->capture_default_str();
  synth->add_option("--unlabeled", sa.unlabeled, "Unlabeled sentences")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  if (train->parsed()) {
    return guarded(err, "train", [&] {
      if (!train_config.empty()) apply_config_file(*train, train_config);
      if (ta.train.empty()) throw UsageError("--train is required");
      if (ta.out.empty()) throw UsageError("--out is required");
      return cmd_train(ta, out);
    });
  }
  if (evaluate->parsed()) return guarded(err, "evaluate", [&] { return cmd_evaluate(ea, out); });
  if (project->parsed()) {
    return guarded(err, "project-labels", [&] { return cmd_project(pa, out); });
  }
  return guarded(err, "gen-synthetic", [&] { return cmd_gen_synthetic(sa, out); });
}

}  // namespace hiertag
