// SPDX-License-Identifier: Apache-2.0

#include "hiertag/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <string_view>

#include "hiertag/tensor.hpp"

namespace hiertag {

namespace {

struct Tag {
  char kind = 'O';  // 'B', 'I' or 'O'
  std::string_view type;
};

Tag split_tag(std::string_view t) {
  if (t.size() >= 2 && (t[0] == 'B' || t[0] == 'I') && t[1] == '-') return {t[0], t.substr(2)};
  return {};
}

bool chunk_ends(Tag prev, Tag cur) {
  if (prev.kind == 'O') return false;
  if (cur.kind == 'O' || cur.kind == 'B') return true;
  return prev.type != cur.type;
}

bool chunk_starts(Tag prev, Tag cur) {
  if (cur.kind == 'O') return false;
  if (cur.kind == 'B') return true;
  return prev.kind == 'O' || prev.type != cur.type;
}

}  // namespace

SpanSet extract_spans(std::span<const std::string> tags) {
  SpanSet spans;
  Tag prev;
  std::size_t start = 0;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const Tag cur = split_tag(tags[i]);
    if (open && chunk_ends(prev, cur)) {
      spans.push_back({start, i, std::string(prev.type)});
      open = false;
    }
    if (chunk_starts(prev, cur)) {
      start = i;
      open = true;
    }
    prev = cur;
  }
  if (open) spans.push_back({start, tags.size(), std::string(prev.type)});
  return spans;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

PrfScore prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PrfScore s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

ChunkScore chunk_f1(std::span<const SpanSet> gold, std::span<const SpanSet> pred) {
  if (gold.size() != pred.size()) {
    throw ContractError("chunk_f1: " + std::to_string(gold.size()) + " gold vs " +
                        std::to_string(pred.size()) + " predicted sentences");
  }
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string, Counts> by_type;
  Counts total;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    SpanSet g = gold[s];
    SpanSet p = pred[s];
    std::sort(g.begin(), g.end());
    std::sort(p.begin(), p.end());
    for (const Span& sp : p) {
      const bool hit = std::binary_search(g.begin(), g.end(), sp);
      auto& c = by_type[sp.type];
      (hit ? c.tp : c.fp)++;
      (hit ? total.tp : total.fp)++;
    }
    for (const Span& sp : g) {
      if (!std::binary_search(p.begin(), p.end(), sp)) {
        by_type[sp.type].fn++;
        total.fn++;
      }
    }
  }
  ChunkScore score;
  score.overall = prf_from_counts(total.tp, total.fp, total.fn);
  for (const auto& [type, c] : by_type) score.per_type[type] = prf_from_counts(c.tp, c.fp, c.fn);
  return score;
}

double pos_accuracy(std::span<const std::string> gold, std::span<const std::string> pred,
                    std::span<const double> mask) {
  if (gold.size() != pred.size() || gold.size() != mask.size()) {
    throw ContractError("pos_accuracy: length mismatch (" + std::to_string(gold.size()) + ", " +
                        std::to_string(pred.size()) + ", " + std::to_string(mask.size()) + ")");
  }
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (mask[i] == 0.0) continue;
    ++n;
    hit += gold[i] == pred[i];
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

double pos_accuracy(std::span<const std::string> gold, std::span<const std::string> pred) {
  std::vector<double> ones(gold.size(), 1.0);
  return pos_accuracy(gold, pred, ones);
}

EvalReport evaluate_sequences(std::span<const TaggedSequence> pos,
                              std::span<const TaggedSequence> chunk) {
  EvalReport r;
  r.sentences = std::max(pos.size(), chunk.size());
  const auto& any = pos.empty() ? chunk : pos;
  for (const auto& s : any) r.tokens += s.gold.size();
  if (!pos.empty()) {
    std::vector<std::string> g, p;
    for (const auto& s : pos) {
      if (s.gold.size() != s.pred.size()) throw ContractError("pos_accuracy: length mismatch");
      g.insert(g.end(), s.gold.begin(), s.gold.end());
      p.insert(p.end(), s.pred.begin(), s.pred.end());
    }
    r.pos_accuracy = pos_accuracy(g, p);
  }
  if (!chunk.empty()) {
    std::vector<SpanSet> g, p;
    for (const auto& s : chunk) {
      g.push_back(extract_spans(s.gold));
      p.push_back(extract_spans(s.pred));
    }
    r.chunk = chunk_f1(g, p);
  }
  return r;
}

void write_report_text(std::ostream& out, const EvalReport& r) {
  const auto flags = out.flags();
  out << "processed " << r.tokens << " tokens in " << r.sentences << " sentences\n";
  out << std::fixed << std::setprecision(2);
  if (r.pos_accuracy) out << "pos accuracy: " << 100.0 * *r.pos_accuracy << "%\n";
  if (r.chunk) {
    const PrfScore& o = r.chunk->overall;
    out << "chunks: found " << o.tp + o.fp << ", correct " << o.tp << "; precision "
        << 100.0 * o.precision << "%; recall " << 100.0 * o.recall << "%; FB1 " << 100.0 * o.f1
        << '\n';
    for (const auto& [type, s] : r.chunk->per_type) {
      out << std::setw(10) << type << ": precision " << std::setw(6) << 100.0 * s.precision
          << "%; recall " << std::setw(6) << 100.0 * s.recall << "%; FB1 " << std::setw(6)
          << 100.0 * s.f1 << "  " << s.tp + s.fp << '\n';
    }
  }
  out.flags(flags);
}

void write_report_jsonl(std::ostream& out, const EvalReport& r) {
  using nlohmann::json;
  json summary = {{"record", "summary"}, {"sentences", r.sentences}, {"tokens", r.tokens}};
  if (r.pos_accuracy) summary["pos_accuracy"] = *r.pos_accuracy;
  if (r.chunk) {
    const PrfScore& o = r.chunk->overall;
    summary["chunk_precision"] = o.precision;
    summary["chunk_recall"] = o.recall;
    summary["chunk_f1"] = o.f1;
    summary["chunk_tp"] = o.tp;
    summary["chunk_fp"] = o.fp;
    summary["chunk_fn"] = o.fn;
  }
  out << summary.dump() << '\n';
  if (r.chunk) {
    for (const auto& [type, s] : r.chunk->per_type) {
      out << json{{"record", "chunk_type"}, {"type", type},       {"precision", s.precision},
                  {"recall", s.recall},     {"f1", s.f1},         {"tp", s.tp},
                  {"fp", s.fp},             {"fn", s.fn}}
                 .dump()
          << '\n';
    }
  }
}

}  // namespace hiertag
