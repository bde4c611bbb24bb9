// SPDX-License-Identifier: Apache-2.0
//
// POS accuracy and conlleval-style chunk F1.

#pragma once

#include <compare>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hiertag {

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::string type;

  auto operator<=>(const Span&) const = default;
};

using SpanSet = std::vector<Span>;

// conlleval chunk boundaries over B-X / I-X / O tags. An I-X that does not
// continue an X chunk opens a new one.
SpanSet extract_spans(std::span<const std::string> tags);

struct PrfScore {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PrfScore prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
double f1_score(double precision, double recall);

struct ChunkScore {
  PrfScore overall;  // micro-averaged
  std::map<std::string, PrfScore> per_type;
};

ChunkScore chunk_f1(std::span<const SpanSet> gold, std::span<const SpanSet> pred);

// Fraction of positions with mask != 0 where gold == pred.
double pos_accuracy(std::span<const std::string> gold, std::span<const std::string> pred,
                    std::span<const double> mask);
double pos_accuracy(std::span<const std::string> gold, std::span<const std::string> pred);

struct TaggedSequence {
  std::vector<std::string> gold;
  std::vector<std::string> pred;
};

struct EvalReport {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::optional<double> pos_accuracy;
  std::optional<ChunkScore> chunk;
};

// Either task may be empty (no sequences) and is then left unset.
EvalReport evaluate_sequences(std::span<const TaggedSequence> pos,
                              std::span<const TaggedSequence> chunk);

void write_report_text(std::ostream& out, const EvalReport& report);
// One JSON object per line: a summary record, then one record per chunk type.
void write_report_jsonl(std::ostream& out, const EvalReport& report);

}  // namespace hiertag
