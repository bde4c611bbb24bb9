// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <bit>
#include <cstring>
#include <sstream>

#include "hiertag/checkpoint.hpp"
#include "test_util.hpp"

using namespace hiertag;
using namespace hiertag::testing;

namespace {

// Independent reader/writer for the on-disk layout.
struct RawBlock {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint64_t> bits;
};

struct RawCheckpoint {
  std::string magic;
  std::uint32_t version = 0;
  std::string config, vocab, pos, chunk;
  std::vector<RawBlock> blocks;
};

template <typename U>
U take(const std::string& s, std::size_t& at) {
  REQUIRE(at + sizeof(U) <= s.size());
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  }
  at += sizeof(U);
  return v;
}

std::string take_str(const std::string& s, std::size_t& at) {
  const auto n = take<std::uint64_t>(s, at);
  std::string out = s.substr(at, n);
  at += n;
  return out;
}

RawCheckpoint parse_raw(const std::string& s) {
  RawCheckpoint r;
  r.magic = s.substr(0, 8);
  std::size_t at = 8;
  r.version = take<std::uint32_t>(s, at);
  r.config = take_str(s, at);
  r.vocab = take_str(s, at);
  r.pos = take_str(s, at);
  r.chunk = take_str(s, at);
  const auto count = take<std::uint64_t>(s, at);
  for (std::uint64_t k = 0; k < count; ++k) {
    RawBlock b;
    b.name = take_str(s, at);
    const auto rank = take<std::uint32_t>(s, at);
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      b.dims.push_back(take<std::uint64_t>(s, at));
      numel *= b.dims.back();
    }
    for (std::uint64_t i = 0; i < numel; ++i) b.bits.push_back(take<std::uint64_t>(s, at));
    r.blocks.push_back(std::move(b));
  }
  CHECK(at == s.size());
  return r;
}

template <typename U>
void give(std::string& s, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) s += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void give_str(std::string& s, const std::string& v) {
  give<std::uint64_t>(s, v.size());
  s += v;
}

std::string write_raw(const RawCheckpoint& r) {
  std::string s = r.magic;
  give(s, r.version);
  give_str(s, r.config);
  give_str(s, r.vocab);
  give_str(s, r.pos);
  give_str(s, r.chunk);
  give<std::uint64_t>(s, r.blocks.size());
  for (const RawBlock& b : r.blocks) {
    give_str(s, b.name);
    give<std::uint32_t>(s, static_cast<std::uint32_t>(b.dims.size()));
    for (auto d : b.dims) give(s, d);
    for (auto v : b.bits) give(s, v);
  }
  return s;
}

struct Fixture {
  Vocabulary vocab;
  LabelSet pos{Task::pos, {"DT", "NN", "VB", "JJ", "IN"}};
  LabelSet chunk{Task::chunk, {"B-NP", "B-PP", "B-VP", "I-NP", "I-PP", "I-VP", "O"}};
  Model model;

  explicit Fixture(Architecture arch, std::uint64_t seed = 3) {
    std::vector<std::string> words{"<pad>", "<unk>"};
    for (int i = 0; i < 18; ++i) words.push_back("w" + std::string(1, char('a' + i)));
    vocab = Vocabulary::from_words(words, 100);
    model = Model::init(arch, tiny_dims(), seed);
  }

  std::string bytes(ConfigEcho config = {}) const {
    std::ostringstream out;
    save_checkpoint(out, model, vocab, pos, chunk, std::move(config));
    return out.str();
  }
};

Checkpoint load_bytes(const std::string& s) {
  std::istringstream in(s);
  return load_checkpoint(in);
}

std::string load_error(const std::string& s) {
  try {
    load_bytes(s);
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("layout matches the documented format") {
    for (Architecture arch : {Architecture::eth, Architecture::baseline}) {
      const Fixture f(arch);
      const RawCheckpoint r = parse_raw(f.bytes({{"seed", "3"}}));
      CHECK(r.magic == "HTAGCKPT");
      CHECK(r.version == kCheckpointVersion);
      CHECK(r.config.find("seed=3\n") != std::string::npos);
      CHECK(r.config.find("architecture=" + std::string(architecture_name(arch)) + "\n") !=
            std::string::npos);
      CHECK(r.pos == "DT\nNN\nVB\nJJ\nIN\n");
      const auto params = f.model.parameters();
      REQUIRE(r.blocks.size() == params.size());
      for (std::size_t k = 0; k < params.size(); ++k) {
        CHECK(r.blocks[k].name == params[k]->name);
        CHECK(r.blocks[k].dims == std::vector<std::uint64_t>(params[k]->value.shape().begin(),
                                                             params[k]->value.shape().end()));
        for (std::size_t i = 0; i < r.blocks[k].bits.size(); ++i) {
          CHECK(r.blocks[k].bits[i] == std::bit_cast<std::uint64_t>(params[k]->value[i]));
        }
      }
    }
  }

  TEST_CASE("round trip is bit exact") {
    for (Architecture arch : {Architecture::eth, Architecture::baseline}) {
      Fixture f(arch);
      // Special values survive too.
      f.model.parameters()[0]->value[0] = -0.0;
      f.model.parameters()[0]->value[1] = 5e-324;
      const std::string bytes = f.bytes({{"note", "x"}});
      Checkpoint ck = load_bytes(bytes);
      CHECK(ck.model.architecture() == arch);
      CHECK(ck.model.dims() == f.model.dims());
      CHECK(ck.vocab.words() == f.vocab.words());
      CHECK(ck.vocab.lm_cap() == f.vocab.lm_cap());
      CHECK(ck.pos_labels.labels() == f.pos.labels());
      CHECK(ck.chunk_labels.labels() == f.chunk.labels());
      CHECK(ck.config.at("note") == "x");
      const auto a = f.model.parameters();
      const auto b = ck.model.parameters();
      for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t i = 0; i < a[k]->value.size(); ++i) {
          CHECK(std::bit_cast<std::uint64_t>(a[k]->value[i]) ==
                std::bit_cast<std::uint64_t>(b[k]->value[i]));
        }
      }
      std::ostringstream again;
      save_checkpoint(again, ck.model, ck.vocab, ck.pos_labels, ck.chunk_labels, ck.config);
      CHECK(again.str() == bytes);
    }
  }

  TEST_CASE("file round trip") {
    const Fixture f(Architecture::eth);
    const auto path = std::filesystem::temp_directory_path() / "hiertag_ckpt_test.bin";
    save_checkpoint(path, f.model, f.vocab, f.pos, f.chunk);
    CHECK(load_checkpoint(path).model.parameters().size() == f.model.parameters().size());
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }

  TEST_CASE("corruption is reported") {
    const Fixture f(Architecture::eth);
    std::string bytes = f.bytes();
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(load_error(bad).find("magic") != std::string::npos);
    RawCheckpoint r = parse_raw(bytes);
    r.version = 99;
    CHECK(load_error(write_raw(r)).find("version") != std::string::npos);
    for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
      CHECK_FALSE(load_error(bytes.substr(0, cut)).empty());
    }
  }

  TEST_CASE("shape disagreement names the first mismatched parameter") {
    const Fixture f(Architecture::eth);
    RawCheckpoint r = parse_raw(f.bytes());
    const auto at = r.config.find("hidden=8\n");
    REQUIRE(at != std::string::npos);
    r.config.replace(at, 9, "hidden=6\n");
    const std::string msg = load_error(write_raw(r));
    CHECK(msg.find("'shared.fwd.w_z'") != std::string::npos);
  }

  TEST_CASE("renamed, extra and missing blocks") {
    const Fixture f(Architecture::eth);
    const RawCheckpoint base = parse_raw(f.bytes());

    RawCheckpoint renamed = base;
    renamed.blocks[3].name = "bogus";
    CHECK(load_error(write_raw(renamed)).find("'bogus'") != std::string::npos);

    RawCheckpoint extra = base;
    extra.blocks.push_back({"spare", {1}, {0}});
    CHECK(load_error(write_raw(extra)).find("'spare'") != std::string::npos);

    RawCheckpoint missing = base;
    missing.blocks.pop_back();
    CHECK(load_error(write_raw(missing)).find("'lm_prev.b'") != std::string::npos);
  }

  TEST_CASE("header inconsistencies") {
    const Fixture f(Architecture::baseline);
    const RawCheckpoint base = parse_raw(f.bytes());

    RawCheckpoint labels = base;
    labels.pos = "DT\nNN\n";
    CHECK_FALSE(load_error(write_raw(labels)).empty());

    RawCheckpoint arch = base;
    const auto at = arch.config.find("architecture=baseline");
    arch.config.replace(at, 21, "architecture=eth");
    // The ETH graph registers chunk_gru blocks the baseline file lacks.
    CHECK_FALSE(load_error(write_raw(arch)).empty());

    RawCheckpoint no_key = base;
    const auto v = no_key.config.find("\nvocab=") + 1;
    no_key.config.erase(v, no_key.config.find('\n', v) - v + 1);
    CHECK(load_error(write_raw(no_key)).find("'vocab'") != std::string::npos);
  }
}
