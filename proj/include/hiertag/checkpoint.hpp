// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint:
//
//   magic      8 bytes  "HTAGCKPT"
//   version    u32
//   config     str      key=value lines (architecture and dimensions included)
//   vocab      str      id-ordered words, newline separated
//   pos        str      id-ordered POS labels
//   chunk      str      id-ordered chunk labels
//   count      u64      number of parameter blocks
//   blocks     { name: str, rank: u32, dims: u64[rank], values: f64[numel] }
//
// str is a u64 byte length followed by the bytes. All integers and doubles
// are little-endian.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>

#include "hiertag/data.hpp"
#include "hiertag/model.hpp"

namespace hiertag {

inline constexpr char kCheckpointMagic[8] = {'H', 'T', 'A', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ConfigEcho = std::map<std::string, std::string>;

struct Checkpoint {
  ConfigEcho config;
  Vocabulary vocab;
  LabelSet pos_labels;
  LabelSet chunk_labels;
  Model model;
};

// Adds architecture and dims to `config` before writing.
void save_checkpoint(std::ostream& out, const Model& model, const Vocabulary& vocab,
                     const LabelSet& pos_labels, const LabelSet& chunk_labels,
                     ConfigEcho config = {});
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const Vocabulary& vocab, const LabelSet& pos_labels,
                     const LabelSet& chunk_labels, ConfigEcho config = {});

// Rebuilds the model from the config echo and checks every block against it;
// the first block whose name or shape disagrees is named in the error.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hiertag
