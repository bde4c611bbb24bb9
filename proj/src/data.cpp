// SPDX-License-Identifier: Apache-2.0

#include "hiertag/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "hiertag/random.hpp"

namespace hiertag {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

}  // namespace

Corpus parse_conll(std::istream& in, const ColumnSpec& spec) {
  auto check_col = [&](int c, const char* what) {
    if (c >= static_cast<int>(spec.columns)) {
      throw std::invalid_argument(std::string("column spec: ") + what + " column " +
                                  std::to_string(c) + " outside " +
                                  std::to_string(spec.columns) + " columns");
    }
  };
  if (spec.token < 0) throw std::invalid_argument("column spec: token column required");
  check_col(spec.token, "token");
  check_col(spec.pos, "pos");
  check_col(spec.chunk, "chunk");

  Corpus corpus;
  Sentence current;
  auto flush = [&] {
    if (current.tokens.empty()) return;
    corpus.push_back(std::move(current));
    current = Sentence{};
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cols = split_ws(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols.front() == "-DOCSTART-") continue;
    if (cols.size() != spec.columns) {
      throw ParseError(line_no, "expected " + std::to_string(spec.columns) +
                                    " columns, found " + std::to_string(cols.size()));
    }
    if (current.tokens.empty()) {
      if (spec.pos >= 0) current.pos.emplace();
      if (spec.chunk >= 0) current.chunk.emplace();
    }
    current.tokens.emplace_back(cols[spec.token]);
    if (spec.pos >= 0) current.pos->emplace_back(cols[spec.pos]);
    if (spec.chunk >= 0) {
      const std::string_view tag = cols[spec.chunk];
      if (!is_well_formed_chunk_tag(tag)) {
        throw ParseError(line_no, "malformed chunk tag '" + std::string(tag) + "'");
      }
      current.chunk->emplace_back(tag);
    }
  }
  flush();
  return corpus;
}

void write_conll(std::ostream& out, std::span<const Sentence> sentences) {
  for (const Sentence& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << s.tokens[i];
      if (s.pos) out << ' ' << (*s.pos)[i];
      if (s.chunk) out << ' ' << (*s.chunk)[i];
      out << '\n';
    }
    out << '\n';
  }
}

Corpus load_unlabeled(std::istream& in) {
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    Sentence s;
    s.tokens.assign(toks.begin(), toks.end());
    corpus.push_back(std::move(s));
  }
  return corpus;
}

void write_unlabeled(std::ostream& out, std::span<const Sentence> sentences) {
  for (const Sentence& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ' ';
      out << s.tokens[i];
    }
    out << '\n';
  }
}

std::string normalize_word(std::string_view word) {
  std::string out(word);
  for (char& c : out) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isdigit(u)) {
      c = '0';
    } else {
      c = static_cast<char>(std::tolower(u));
    }
  }
  return out;
}

std::size_t token_count(std::span<const Sentence> sentences) {
  std::size_t n = 0;
  for (const Sentence& s : sentences) n += s.size();
  return n;
}

bool is_well_formed_chunk_tag(std::string_view tag) {
  if (tag == "O") return true;
  return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

// Vocabulary

Vocabulary::Vocabulary() : words_{"<pad>", "<unk>"}, counts_{0, 0} {
  index_.emplace(words_[kPad], kPad);
  index_.emplace(words_[kUnk], kUnk);
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words, std::size_t lm_cap) {
  if (words.size() < 2 || words[kPad] != "<pad>" || words[kUnk] != "<unk>") {
    throw std::invalid_argument("vocabulary must start with <pad>, <unk>");
  }
  Vocabulary v;
  v.words_ = std::move(words);
  v.counts_.assign(v.words_.size(), 0);
  v.index_.clear();
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (!v.index_.emplace(v.words_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary entry '" + v.words_[i] + "'");
    }
  }
  v.set_lm_cap(lm_cap);
  return v;
}

std::size_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(normalize_word(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.count(normalize_word(word)) > 0;
}

void Vocabulary::set_lm_cap(std::size_t cap) {
  lm_cap_ = cap;
  lm_size_ = std::min(words_.size(), cap + 2);
}

Vocabulary build_vocab(std::span<const std::span<const Sentence>> corpora,
                       std::size_t min_frequency, std::size_t lm_cap) {
  if (corpora.empty()) throw ContractError("build_vocab: at least one corpus required");
  std::map<std::string, std::size_t> freq;
  for (const auto& corpus : corpora) {
    for (const Sentence& s : corpus) {
      for (const std::string& w : s.tokens) ++freq[normalize_word(w)];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  std::size_t unk = 0;
  for (auto& [w, c] : freq) {
    if (w == "<pad>" || w == "<unk>") {
      unk += c;
      continue;
    }
    if (c >= std::max<std::size_t>(min_frequency, 1)) {
      kept.emplace_back(w, c);
    } else {
      unk += c;
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  v.counts_[Vocabulary::kUnk] = unk;
  for (auto& [w, c] : kept) {
    v.index_.emplace(w, v.words_.size());
    v.words_.push_back(w);
    v.counts_.push_back(c);
  }
  v.set_lm_cap(lm_cap);
  return v;
}

// LabelSet

std::string_view task_name(Task task) { return task == Task::pos ? "pos" : "chunk"; }

LabelSet::LabelSet(Task task, std::vector<std::string> labels)
    : task_(task), labels_(std::move(labels)) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!index_.emplace(labels_[i], i).second) {
      throw std::invalid_argument("duplicate label '" + labels_[i] + "'");
    }
  }
}

LabelSet LabelSet::from_corpus(Task task, std::span<const Sentence> sentences) {
  std::vector<std::string> labels;
  for (const Sentence& s : sentences) {
    const auto& tags = task == Task::pos ? s.pos : s.chunk;
    if (tags) labels.insert(labels.end(), tags->begin(), tags->end());
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return LabelSet(task, std::move(labels));
}

std::optional<std::size_t> LabelSet::find(std::string_view label) const {
  auto it = index_.find(std::string(label));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t LabelSet::id(std::string_view label) const {
  if (auto i = find(label)) return *i;
  throw IndexError("unknown " + std::string(task_name(task_)) + " label '" +
                   std::string(label) + "'");
}

// Embeddings

PretrainedEmbeddings load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab) {
  PretrainedEmbeddings emb;
  emb.covered.assign(vocab.size(), false);
  std::vector<std::vector<double>> found(vocab.size());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cols = split_ws(line);
    if (cols.empty()) continue;
    const std::size_t d = cols.size() - 1;
    if (d == 0) throw ParseError(line_no, "embedding row has no values");
    if (emb.dim == 0) {
      emb.dim = d;
    } else if (d != emb.dim) {
      throw ParseError(line_no, "embedding dimension " + std::to_string(d) +
                                    " differs from " + std::to_string(emb.dim));
    }
    std::vector<double> vals(d);
    for (std::size_t j = 0; j < d; ++j) {
      const std::string_view tok = cols[j + 1];
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), vals[j]);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw ParseError(line_no, "bad embedding value '" + std::string(tok) + "'");
      }
    }
    const std::string w = normalize_word(cols[0]);
    if (!vocab.contains(w)) continue;
    const std::size_t id = vocab.id(w);
    if (id == Vocabulary::kPad || id == Vocabulary::kUnk || emb.covered[id]) continue;
    emb.covered[id] = true;
    found[id] = std::move(vals);
    ++emb.covered_count;
  }
  emb.rows = Tensor({vocab.size(), emb.dim});
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (!emb.covered[id]) continue;
    std::copy(found[id].begin(), found[id].end(), emb.rows.data() + id * emb.dim);
  }
  const std::size_t non_reserved = vocab.size() - 2;
  emb.coverage = non_reserved ? static_cast<double>(emb.covered_count) /
                                    static_cast<double>(non_reserved)
                              : 0.0;
  return emb;
}

void apply_pretrained(const PretrainedEmbeddings& emb, Tensor& table) {
  if (table.rank() != 2 || table.rows() != emb.covered.size() || table.cols() != emb.dim) {
    throw DimensionError("apply_pretrained: table " + shape_str(table.shape()) +
                         " does not match embeddings [" + std::to_string(emb.covered.size()) +
                         "x" + std::to_string(emb.dim) + "]");
  }
  for (std::size_t id = 0; id < emb.covered.size(); ++id) {
    if (!emb.covered[id]) continue;
    std::copy(emb.rows.data() + id * emb.dim, emb.rows.data() + (id + 1) * emb.dim,
              table.data() + id * emb.dim);
  }
}

// Batching

std::size_t Batch::real_tokens() const {
  std::size_t n = 0;
  for (double m : mask) n += m != 0.0;
  return n;
}

std::size_t Batch::valid_next() const {
  return static_cast<std::size_t>(std::count_if(lm_next.begin(), lm_next.end(),
                                                [](int y) { return y >= 0; }));
}

std::size_t Batch::valid_prev() const {
  return static_cast<std::size_t>(std::count_if(lm_prev.begin(), lm_prev.end(),
                                                [](int y) { return y >= 0; }));
}

namespace {

Batch assemble(std::span<const SegmentRef> segs, std::span<const Sentence> sentences,
               const Vocabulary& vocab, const LabelSet* pos_labels,
               const LabelSet* chunk_labels, bool has_pos, bool has_chunk) {
  Batch b;
  b.rows = segs.size();
  for (const SegmentRef& s : segs) b.width = std::max(b.width, s.length);
  const std::size_t n = b.rows * b.width;
  b.tokens.assign(n, Vocabulary::kPad);
  b.mask.assign(n, 0.0);
  b.pos.assign(n, kNoTarget);
  b.chunk.assign(n, kNoTarget);
  b.lm_next.assign(n, kNoTarget);
  b.lm_prev.assign(n, kNoTarget);
  b.has_pos = has_pos && pos_labels != nullptr;
  b.has_chunk = has_chunk && chunk_labels != nullptr;
  for (std::size_t r = 0; r < segs.size(); ++r) {
    const SegmentRef& seg = segs[r];
    const Sentence& s = sentences[seg.sentence];
    for (std::size_t t = 0; t < seg.length; ++t) {
      const std::size_t k = b.index(r, t);
      const std::size_t w = seg.offset + t;
      b.tokens[k] = vocab.id(s.tokens[w]);
      b.mask[k] = 1.0;
      if (b.has_pos) {
        if (auto id = pos_labels->find((*s.pos)[w])) b.pos[k] = static_cast<int>(*id);
      }
      if (b.has_chunk) {
        if (auto id = chunk_labels->find((*s.chunk)[w])) b.chunk[k] = static_cast<int>(*id);
      }
    }
    for (std::size_t t = 0; t < seg.length; ++t) {
      const std::size_t k = b.index(r, t);
      if (t + 1 < seg.length) {
        b.lm_next[k] = static_cast<int>(vocab.lm_id(b.tokens[b.index(r, t + 1)]));
      }
      if (t > 0) b.lm_prev[k] = static_cast<int>(vocab.lm_id(b.tokens[b.index(r, t - 1)]));
    }
  }
  b.origin.assign(segs.begin(), segs.end());
  return b;
}

}  // namespace

std::vector<Batch> make_batches(std::span<const Sentence> sentences, const Vocabulary& vocab,
                                const LabelSet* pos_labels, const LabelSet* chunk_labels,
                                const BatchGeometry& geometry,
                                std::optional<std::uint64_t> shuffle_seed) {
  if (geometry.batch_size == 0 || geometry.max_len == 0) {
    throw ContractError("make_batches: batch size and max length must be >= 1");
  }
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    shuffle(order, rng);
  }
  // Presence key: bit 0 = pos tags, bit 1 = chunk tags.
  std::map<int, std::vector<SegmentRef>> groups;
  std::vector<int> key_order;
  for (std::size_t si : order) {
    const Sentence& s = sentences[si];
    if (s.tokens.empty()) continue;
    const int key = (s.pos ? 1 : 0) | (s.chunk ? 2 : 0);
    if (!groups.count(key)) key_order.push_back(key);
    auto& segs = groups[key];
    for (std::size_t off = 0; off < s.size(); off += geometry.max_len) {
      segs.push_back({si, off, std::min(geometry.max_len, s.size() - off)});
    }
  }
  std::vector<Batch> batches;
  for (int key : key_order) {
    const auto& segs = groups[key];
    for (std::size_t i = 0; i < segs.size(); i += geometry.batch_size) {
      const std::size_t n = std::min(geometry.batch_size, segs.size() - i);
      batches.push_back(assemble(std::span(segs).subspan(i, n), sentences, vocab, pos_labels,
                                 chunk_labels, key & 1, key & 2));
    }
  }
  return batches;
}

}  // namespace hiertag
