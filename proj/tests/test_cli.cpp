// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "hiertag/checkpoint.hpp"
#include "hiertag/cli.hpp"
#include "hiertag/data.hpp"
#include "hiertag/projection.hpp"

using namespace hiertag;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// One synthetic corpus and one smoke run shared by every case.
struct World {
  fs::path root, data, eth, baseline;

  World() {
    root = fs::temp_directory_path() / ("hiertag_cli_" + std::to_string(getpid()));
    fs::remove_all(root);
    data = root / "data";
    REQUIRE(cli({"gen-synthetic", "--seed", "4", "--sentences", "80", "--unlabeled", "100",
                 "--out", data.string()})
                .code == kExitOk);
    eth = root / "eth";
    const Run r = cli(train_args("eth", eth));
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    baseline = root / "baseline";
    REQUIRE(cli(train_args("baseline", baseline)).code == kExitOk);
  }

  ~World() { fs::remove_all(root); }

  std::vector<std::string> train_args(const std::string& arch, const fs::path& out) const {
    return {"train",       "--arch",   arch,
            "--train",     (data / "train.conll").string(),
            "--dev",       (data / "dev.conll").string(),
            "--test",      (data / "test.conll").string(),
            "--epochs",    "2",        "--seed", "3",
            "--word-dim",  "8",        "--hidden", "8", "--label-dim", "4",
            "--out",       out.string()};
  }

  fs::path checkpoint(const fs::path& dir) const { return dir / "checkpoint.bin"; }
};

// Sets `flag` to `value`, replacing an existing occurrence.
std::vector<std::string> with(std::vector<std::string> args, const std::string& flag,
                              const std::string& value) {
  auto it = std::find(args.begin(), args.end(), flag);
  if (it == args.end()) {
    args.insert(args.end(), {flag, value});
  } else {
    *(it + 1) = value;
  }
  return args;
}

World& world() {
  static World w;
  return w;
}

}  // namespace

TEST_SUITE("gen-synthetic") {
  TEST_CASE("writes four parseable files deterministically") {
    const World& w = world();
    for (const char* name : {"train.conll", "dev.conll", "test.conll", "unlabeled.txt"}) {
      CHECK(fs::exists(w.data / name));
    }
    std::ifstream train(w.data / "train.conll"), dev(w.data / "dev.conll");
    std::ifstream test(w.data / "test.conll"), unl(w.data / "unlabeled.txt");
    CHECK(parse_conll(train).size() == 64);
    CHECK(parse_conll(dev).size() == 8);
    CHECK(parse_conll(test).size() == 8);
    CHECK(load_unlabeled(unl).size() == 100);

    const fs::path again = w.root / "data-again";
    REQUIRE(cli({"gen-synthetic", "--seed", "4", "--sentences", "80", "--unlabeled", "100",
                 "--out", again.string()})
                .code == kExitOk);
    CHECK(slurp(again / "train.conll") == slurp(w.data / "train.conll"));
    CHECK(slurp(again / "unlabeled.txt") == slurp(w.data / "unlabeled.txt"));
    const fs::path other = w.root / "data-other";
    REQUIRE(cli({"gen-synthetic", "--seed", "5", "--sentences", "80", "--unlabeled", "100",
                 "--out", other.string()})
                .code == kExitOk);
    CHECK(slurp(other / "train.conll") != slurp(w.data / "train.conll"));
  }
}

TEST_SUITE("train") {
  TEST_CASE("smoke run leaves a complete run directory") {
    const World& w = world();
    for (const char* name :
         {"manifest.json", "metrics.jsonl", "timing.jsonl", "checkpoint.bin", "config.txt",
          "test_report.jsonl"}) {
      CHECK(fs::exists(w.eth / name));
    }
    const json m = json::parse(slurp(w.eth / "manifest.json"));
    CHECK(m.at("status") == "completed");
    CHECK(m.at("config").at("arch") == "eth");
    CHECK(m.at("counts").at("labeled_sentences") == 64);
    CHECK(m.at("inputs").at("train").at("fnv1a64") == file_digest(w.data / "train.conll"));
    CHECK(m.at("results").contains("test"));
    std::istringstream metrics(slurp(w.eth / "metrics.jsonl"));
    std::string line;
    std::size_t epochs = 0;
    while (std::getline(metrics, line)) ++epochs;
    CHECK(epochs == 2);
  }

  TEST_CASE("labeled fraction is recorded") {
    const World& w = world();
    const auto args =
        with(with(w.train_args("eth", w.root / "quarter"), "--labeled-fraction", "0.25"),
             "--epochs", "1");
    const Run r = cli(args);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const json m = json::parse(slurp(w.root / "quarter" / "manifest.json"));
    CHECK(m.at("counts").at("labeled_sentences") == 16);
    CHECK(m.at("counts").at("labeled_fraction") == 0.25);
  }

  TEST_CASE("identical flags give bit-identical artifacts in fresh directories") {
    const World& w = world();
    const Run r = cli(w.train_args("eth", w.eth));
    REQUIRE(r.code == kExitOk);
    const fs::path second = w.root / "eth-1";
    CHECK(r.out.find(second.string()) != std::string::npos);
    CHECK(slurp(second / "metrics.jsonl") == slurp(w.eth / "metrics.jsonl"));
    CHECK(slurp(second / "checkpoint.bin") == slurp(w.eth / "checkpoint.bin"));
    CHECK(slurp(second / "config.txt") == slurp(w.eth / "config.txt"));
    CHECK(fresh_directory(w.eth) == w.root / "eth-2");
  }

  TEST_CASE("config file sits between defaults and flags") {
    const World& w = world();
    const fs::path cfg = w.root / "run.ini";
    std::ofstream(cfg) << "epochs=1\nseed=11\n[train]\ngamma=0.25\nlabeled_fraction=0.5\n";
    auto args = w.train_args("eth", w.root / "configured");
    // Drop the flag-level --epochs so the file's value applies; keep --seed 3.
    auto it = std::find(args.begin(), args.end(), "--epochs");
    args.erase(it, it + 2);
    args.insert(args.end(), {"--config", cfg.string()});
    const Run r = cli(args);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const json m = json::parse(slurp(w.root / "configured" / "manifest.json"));
    CHECK(m.at("config").at("epochs") == "1");
    CHECK(m.at("config").at("seed") == "3");
    CHECK(m.at("config").at("gamma") == "0.25");
    CHECK(m.at("config").at("labeled_fraction") == "0.5");

    const fs::path typo = w.root / "typo.ini";
    std::ofstream(typo) << "epoch=1\n";
    const Run bad = cli(with(args, "--config", typo.string()));
    CHECK(bad.code == kExitUsage);
    CHECK(bad.err.find("'epoch'") != std::string::npos);
  }

  TEST_CASE("usage errors exit 2") {
    const World& w = world();
    auto semi = w.train_args("eth", w.root / "semi");
    semi.push_back("--semi-supervised");
    const Run r = cli(semi);
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("--unlabeled") != std::string::npos);
    CHECK_FALSE(fs::exists(w.root / "semi"));
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"train", "--out", "x"}).code == kExitUsage);
    auto arch = w.train_args("lstm", w.root / "bad");
    CHECK(cli(arch).code == kExitUsage);
    auto frac = w.train_args("eth", w.root / "bad");
    frac.insert(frac.end(), {"--labeled-fraction", "0"});
    CHECK(cli(frac).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
  }

  TEST_CASE("runtime failures exit 1") {
    const World& w = world();
    auto args = w.train_args("eth", w.root / "missing");
    args[4] = (w.root / "nope.conll").string();
    CHECK(cli(args).code == kExitFailure);
    const fs::path broken = w.root / "broken.conll";
    std::ofstream(broken) << "word NN\n";
    args[4] = broken.string();
    const Run r = cli(args);
    CHECK(r.code == kExitFailure);
    CHECK(r.err.find("line 1") != std::string::npos);
  }

  TEST_CASE("semi-supervised run reads the unlabeled corpus") {
    const World& w = world();
    auto args = w.train_args("eth", w.root / "semi-ok");
    args = with(args, "--epochs", "1");
    args.insert(args.end(), {"--semi-supervised", "--unlabeled",
                             (w.data / "unlabeled.txt").string()});
    const Run r = cli(args);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const json m = json::parse(slurp(w.root / "semi-ok" / "manifest.json"));
    CHECK(m.at("counts").at("unlabeled_sentences") == 100);
    CHECK(m.at("inputs").contains("unlabeled"));
  }
}

TEST_SUITE("evaluate") {
  TEST_CASE("checkpoint on its own training set") {
    const World& w = world();
    const fs::path report = w.root / "train_report.jsonl";
    const Run r = cli({"evaluate", "--checkpoint", w.checkpoint(w.eth).string(), "--data",
                       (w.data / "train.conll").string(), "--report", report.string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    std::istringstream lines(slurp(report));
    std::string first;
    std::getline(lines, first);
    const json s = json::parse(first);
    CHECK(s.at("pos_accuracy").get<double>() >= 0.0);
    CHECK(s.at("pos_accuracy").get<double>() <= 1.0);
    CHECK(s.at("chunk_f1").get<double>() >= 0.0);
    CHECK(s.at("chunk_f1").get<double>() <= 1.0);
  }

  TEST_CASE("gold as predictions scores perfectly; report lands beside the input") {
    const World& w = world();
    const Run r = cli({"evaluate", "--predictions", (w.data / "dev.conll").string(), "--data",
                       (w.data / "dev.conll").string(), "--task", "chunk"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const fs::path report = w.data / "dev.dev.eval.jsonl";
    REQUIRE(fs::exists(report));
    std::istringstream lines(slurp(report));
    std::string first;
    std::getline(lines, first);
    const json s = json::parse(first);
    CHECK(s.at("chunk_f1").get<double>() == 1.0);
    CHECK_FALSE(s.contains("pos_accuracy"));
  }

  TEST_CASE("bad checkpoints exit 1 and name the problem") {
    const World& w = world();
    const std::string bytes = slurp(w.checkpoint(w.eth));
    const fs::path corrupt = w.root / "corrupt.bin";
    std::string bad = bytes;
    bad[1] = '?';
    std::ofstream(corrupt, std::ios::binary) << bad;
    const std::string dev = (w.data / "dev.conll").string();
    Run r = cli({"evaluate", "--checkpoint", corrupt.string(), "--data", dev});
    CHECK(r.code == kExitFailure);
    CHECK(r.err.find("magic") != std::string::npos);

    std::string resized = bytes;
    const auto at = resized.find("hidden=8\n");
    REQUIRE(at != std::string::npos);
    resized.replace(at, 9, "hidden=6\n");
    const fs::path mismatch = w.root / "mismatch.bin";
    std::ofstream(mismatch, std::ios::binary) << resized;
    r = cli({"evaluate", "--checkpoint", mismatch.string(), "--data", dev});
    CHECK(r.code == kExitFailure);
    CHECK(r.err.find("'shared.fwd.w_z'") != std::string::npos);
  }

  TEST_CASE("exactly one prediction source") {
    const World& w = world();
    const std::string dev = (w.data / "dev.conll").string();
    CHECK(cli({"evaluate", "--data", dev}).code == kExitUsage);
    CHECK(cli({"evaluate", "--data", dev, "--predictions", dev, "--checkpoint",
               w.checkpoint(w.eth).string()})
              .code == kExitUsage);
  }
}

TEST_SUITE("project-labels") {
  TEST_CASE("pca writes one row per label and reports separation for chunks") {
    const World& w = world();
    const Checkpoint ck = load_checkpoint(w.checkpoint(w.eth));
    const fs::path out = w.root / "chunk_pca.csv";
    Run r = cli({"project-labels", "--checkpoint", w.checkpoint(w.eth).string(), "--task",
                 "chunk", "--method", "pca", "--out", out.string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    std::ifstream in(out);
    const LabeledPoints pts = read_projection(in);
    CHECK(pts.size() == ck.chunk_labels.size());
    CHECK(r.out.find("b/i separation") != std::string::npos);

    r = cli({"project-labels", "--checkpoint", w.checkpoint(w.eth).string(), "--task", "pos",
             "--method", "pca", "--out", (w.root / "pos_pca.csv").string()});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("separation") == std::string::npos);
  }

  TEST_CASE("tsne is deterministic by seed") {
    const World& w = world();
    const Checkpoint ck = load_checkpoint(w.checkpoint(w.eth));
    const double perplexity = std::min(2.0, 0.9 * max_perplexity(ck.pos_labels.size()));
    auto run = [&](const std::string& name, const std::string& seed) {
      const fs::path out = w.root / name;
      const Run r = cli({"project-labels", "--checkpoint", w.checkpoint(w.eth).string(),
                         "--task", "pos", "--method", "tsne", "--perplexity",
                         std::to_string(perplexity), "--seed", seed, "--iterations", "200",
                         "--out", out.string()});
      REQUIRE_MESSAGE(r.code == kExitOk, r.err);
      return slurp(out);
    };
    CHECK(run("a.csv", "1") == run("b.csv", "1"));
    CHECK(run("a.csv", "1") != run("c.csv", "2"));
  }

  TEST_CASE("infeasible perplexity and label-free architectures exit 2") {
    const World& w = world();
    Run r = cli({"project-labels", "--checkpoint", w.checkpoint(w.eth).string(), "--task",
                 "chunk", "--perplexity", "100", "--out", (w.root / "x.csv").string()});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("(n - 1) / 3") != std::string::npos);
    r = cli({"project-labels", "--checkpoint", w.checkpoint(w.baseline).string(), "--task",
             "chunk", "--method", "pca", "--out", (w.root / "y.csv").string()});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("baseline") != std::string::npos);
  }
}
