// SPDX-License-Identifier: Apache-2.0
//
// Corpora, vocabularies, label sets and padded batches.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hiertag/tensor.hpp"

namespace hiertag {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Sentence {
  std::vector<std::string> tokens;
  std::optional<std::vector<std::string>> pos;
  std::optional<std::vector<std::string>> chunk;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const Sentence&) const = default;
};

using Corpus = std::vector<Sentence>;

// Which whitespace-separated column holds what. A negative index means the
// column is not present in the file.
struct ColumnSpec {
  std::size_t columns = 3;
  int token = 0;
  int pos = 1;
  int chunk = 2;
};

Corpus parse_conll(std::istream& in, const ColumnSpec& spec = {});
// Writes token / pos / chunk columns; absent tag columns are skipped.
void write_conll(std::ostream& out, std::span<const Sentence> sentences);

Corpus load_unlabeled(std::istream& in);
void write_unlabeled(std::ostream& out, std::span<const Sentence> sentences);

// Lowercase and map every ASCII digit to '0'.
std::string normalize_word(std::string_view word);

std::size_t token_count(std::span<const Sentence> sentences);

// Chunk tags must be O, B-X or I-X with a nonempty type.
bool is_well_formed_chunk_tag(std::string_view tag);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kDefaultLmCap = 10000;

  Vocabulary();
  // Rebuild from an id-ordered word list starting with the reserved entries.
  static Vocabulary from_words(std::vector<std::string> words, std::size_t lm_cap);

  std::size_t size() const { return words_.size(); }
  std::size_t id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }
  std::size_t count(std::size_t id) const { return counts_.at(id); }

  // LM targets are restricted to the lm_cap most frequent words; everything
  // else collapses to UNK. Ids are frequency-ordered, so this is a prefix.
  std::size_t lm_size() const { return lm_size_; }
  std::size_t lm_cap() const { return lm_cap_; }
  std::size_t lm_id(std::size_t id) const { return id < lm_size_ ? id : kUnk; }

 private:
  friend Vocabulary build_vocab(std::span<const std::span<const Sentence>>, std::size_t,
                                std::size_t);
  void set_lm_cap(std::size_t cap);

  std::vector<std::string> words_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t lm_cap_ = kDefaultLmCap;
  std::size_t lm_size_ = 2;
};

// Ids ordered by (count descending, word ascending) after normalization.
Vocabulary build_vocab(std::span<const std::span<const Sentence>> corpora,
                       std::size_t min_frequency = 1,
                       std::size_t lm_cap = Vocabulary::kDefaultLmCap);

enum class Task { pos, chunk };
std::string_view task_name(Task task);

class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(Task task, std::vector<std::string> labels);

  // Sorted union of all tags present for `task` across the corpus.
  static LabelSet from_corpus(Task task, std::span<const Sentence> sentences);

  Task task() const { return task_; }
  std::size_t size() const { return labels_.size(); }
  const std::string& label(std::size_t id) const { return labels_.at(id); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::optional<std::size_t> find(std::string_view label) const;
  std::size_t id(std::string_view label) const;

 private:
  Task task_ = Task::pos;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct PretrainedEmbeddings {
  std::size_t dim = 0;
  Tensor rows;                 // [V×dim]; rows for uncovered words are zero
  std::vector<bool> covered;   // per vocabulary id
  std::size_t covered_count = 0;
  double coverage = 0.0;       // covered / non-reserved vocabulary size
};

// Text format, one "word v1 ... vd" per line with constant d.
PretrainedEmbeddings load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab);
// Overwrites covered rows of `table` [V×d].
void apply_pretrained(const PretrainedEmbeddings& emb, Tensor& table);

struct BatchGeometry {
  std::size_t batch_size = 32;
  std::size_t max_len = 32;
};

struct SegmentRef {
  std::size_t sentence = 0;
  std::size_t offset = 0;
  std::size_t length = 0;
};

inline constexpr int kNoTarget = -1;

// Row-major [rows × width] matrices. width is the longest segment in the
// batch (never above BatchGeometry::max_len).
struct Batch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<std::size_t> tokens;
  std::vector<double> mask;
  bool has_pos = false;
  bool has_chunk = false;
  std::vector<int> pos;
  std::vector<int> chunk;
  // LM vocabulary ids; kNoTarget marks an invalid position.
  std::vector<int> lm_next;
  std::vector<int> lm_prev;
  std::vector<SegmentRef> origin;

  std::size_t index(std::size_t b, std::size_t t) const { return b * width + t; }
  std::size_t real_tokens() const;
  std::size_t valid_next() const;
  std::size_t valid_prev() const;
  bool has_lm() const { return valid_next() + valid_prev() > 0; }
};

// Splits sentences longer than max_len into consecutive segments, shuffles
// sentence order when a seed is given, and groups segments so that every
// batch is homogeneous in tag presence. Tags missing from a label set map to
// kNoTarget.
std::vector<Batch> make_batches(std::span<const Sentence> sentences, const Vocabulary& vocab,
                                const LabelSet* pos_labels, const LabelSet* chunk_labels,
                                const BatchGeometry& geometry,
                                std::optional<std::uint64_t> shuffle_seed);

}  // namespace hiertag
