// SPDX-License-Identifier: Apache-2.0

#include "hiertag/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hiertag {

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

template <typename U>
void put_le(std::ostream& out, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

void put_str(std::ostream& out, const std::string& s) {
  put_le<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in, const char* what) {
  const auto n = get_le<std::uint64_t>(in, what);
  if (n > (std::uint64_t{1} << 32)) throw CheckpointError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  return s;
}

std::string join_lines(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    out += s;
    out += '\n';
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::string encode_config(const ConfigEcho& c) {
  std::string out;
  for (const auto& [k, v] : c) out += k + "=" + v + "\n";
  return out;
}

ConfigEcho decode_config(const std::string& text) {
  ConfigEcho c;
  for (const auto& line : split_lines(text)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed config line '" + line + "'");
    c[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return c;
}

std::size_t config_size(const ConfigEcho& c, const std::string& key) {
  auto it = c.find(key);
  if (it == c.end()) throw CheckpointError("checkpoint config is missing '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint config '" + key + "' is not an integer");
  }
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model, const Vocabulary& vocab,
                     const LabelSet& pos_labels, const LabelSet& chunk_labels,
                     ConfigEcho config) {
  const ModelDims& d = model.dims();
  config["architecture"] = std::string(architecture_name(model.architecture()));
  config["vocab"] = std::to_string(d.vocab);
  config["word_dim"] = std::to_string(d.word_dim);
  config["hidden"] = std::to_string(d.hidden);
  config["label_dim"] = std::to_string(d.label_dim);
  config["n_pos"] = std::to_string(d.n_pos);
  config["n_chunk"] = std::to_string(d.n_chunk);
  config["lm_vocab"] = std::to_string(d.lm_vocab);
  config["lm_cap"] = std::to_string(vocab.lm_cap());

  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_str(out, encode_config(config));
  put_str(out, join_lines(vocab.words()));
  put_str(out, join_lines(pos_labels.labels()));
  put_str(out, join_lines(chunk_labels.labels()));
  const auto params = model.parameters();
  put_le<std::uint64_t>(out, params.size());
  for (const Parameter* p : params) {
    put_str(out, p->name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t e : p->value.shape()) put_le<std::uint64_t>(out, e);
    for (double v : p->value.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const Vocabulary& vocab, const LabelSet& pos_labels,
                     const LabelSet& chunk_labels, ConfigEcho config) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  save_checkpoint(out, model, vocab, pos_labels, chunk_labels, std::move(config));
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  ConfigEcho config = decode_config(get_str(in, "config"));
  auto words = split_lines(get_str(in, "vocabulary"));
  auto pos = split_lines(get_str(in, "pos labels"));
  auto chunk = split_lines(get_str(in, "chunk labels"));

  ModelDims dims;
  dims.vocab = config_size(config, "vocab");
  dims.word_dim = config_size(config, "word_dim");
  dims.hidden = config_size(config, "hidden");
  dims.label_dim = config_size(config, "label_dim");
  dims.n_pos = config_size(config, "n_pos");
  dims.n_chunk = config_size(config, "n_chunk");
  dims.lm_vocab = config_size(config, "lm_vocab");
  const Architecture arch = [&] {
    try {
      return parse_architecture(config.at("architecture"));
    } catch (const std::exception&) {
      throw CheckpointError("checkpoint config has no valid architecture");
    }
  }();

  Checkpoint ck{config, {}, {}, {}, {}};
  try {
    ck.vocab = Vocabulary::from_words(std::move(words), config_size(config, "lm_cap"));
    ck.pos_labels = LabelSet(Task::pos, std::move(pos));
    ck.chunk_labels = LabelSet(Task::chunk, std::move(chunk));
    ck.model = Model::init(arch, dims, 0);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("inconsistent checkpoint header: ") + e.what());
  }
  if (ck.vocab.size() != dims.vocab || ck.vocab.lm_size() != dims.lm_vocab ||
      ck.pos_labels.size() != dims.n_pos || ck.chunk_labels.size() != dims.n_chunk) {
    throw CheckpointError("checkpoint vocabulary/label sizes disagree with its config");
  }

  auto params = ck.model.parameters();
  const auto count = get_le<std::uint64_t>(in, "parameter count");
  for (std::size_t k = 0; k < count; ++k) {
    const std::string name = get_str(in, "parameter name");
    const auto rank = get_le<std::uint32_t>(in, "parameter rank");
    if (rank > 8) throw CheckpointError("parameter '" + name + "': implausible rank");
    Shape shape(rank);
    for (auto& e : shape) e = get_le<std::uint64_t>(in, "parameter shape");
    if (k >= params.size()) {
      throw CheckpointError("parameter '" + name + "' is not part of the configured model");
    }
    Parameter& p = *params[k];
    if (p.name != name || p.value.shape() != shape) {
      throw CheckpointError("parameter '" + name + "' " + shape_str(shape) +
                            " does not match configured '" + p.name + "' " +
                            shape_str(p.value.shape()));
    }
    for (double& v : p.value.values()) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(in, "parameter values"));
    }
  }
  if (count != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                          std::to_string(params.size()) + "; first missing is '" +
                          params[count]->name + "'");
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace hiertag
