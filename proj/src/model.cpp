// SPDX-License-Identifier: Apache-2.0

#include "hiertag/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hiertag/random.hpp"

namespace hiertag {

std::string_view architecture_name(Architecture arch) {
  return arch == Architecture::eth ? "eth" : "baseline";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "eth") return Architecture::eth;
  if (name == "baseline") return Architecture::baseline;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

void GruParams::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&w_z, &w_r, &w_h, &u_z, &u_r, &u_h, &b_z, &b_r, &b_h}) out.push_back(p);
}

void BiGruParams::collect(std::vector<Parameter*>& out) {
  forward.collect(out);
  backward.collect(out);
}

void HierModelParams::collect(std::vector<Parameter*>& out) {
  out.push_back(&word_emb);
  shared.collect(out);
  out.push_back(&pos_w);
  out.push_back(&pos_b);
  out.push_back(&pos_label_emb);
  chunk_gru.collect(out);
  out.push_back(&chunk_w);
  out.push_back(&chunk_b);
  out.push_back(&chunk_label_emb);
  lm_gru.collect(out);
  for (Parameter* p : {&lm_next_w, &lm_next_b, &lm_prev_w, &lm_prev_b}) out.push_back(p);
}

void BaselineModelParams::collect(std::vector<Parameter*>& out) {
  out.push_back(&word_emb);
  shared.collect(out);
  for (Parameter* p : {&pos_w, &pos_b, &chunk_w, &chunk_b, &lm_next_w, &lm_next_b, &lm_prev_w,
                       &lm_prev_b}) {
    out.push_back(p);
  }
}

GruVars GruVars::bind(Tape& tape, GruParams& p) {
  return {tape.param(p.w_z), tape.param(p.w_r), tape.param(p.w_h),
          tape.param(p.u_z), tape.param(p.u_r), tape.param(p.u_h),
          tape.param(p.b_z), tape.param(p.b_r), tape.param(p.b_h)};
}

Var gru_cell(Var x, Var h_prev, const GruVars& p) {
  if (x.value().cols() != p.w_z.value().rows() || h_prev.value().cols() != p.u_z.value().rows() ||
      x.value().rows() != h_prev.value().rows()) {
    throw DimensionError("gru_cell: input " + shape_str(x.shape()) + " / state " +
                         shape_str(h_prev.shape()) + " do not match W " +
                         shape_str(p.w_z.shape()) + ", U " + shape_str(p.u_z.shape()));
  }
  const Var z = sigmoid(add(add_row(matmul(x, p.w_z), p.b_z), matmul(h_prev, p.u_z)));
  const Var r = sigmoid(add(add_row(matmul(x, p.w_r), p.b_r), matmul(h_prev, p.u_r)));
  const Var cand = tanh(add(add_row(matmul(x, p.w_h), p.b_h), matmul(mul(r, h_prev), p.u_h)));
  return add(h_prev, mul(z, sub(cand, h_prev)));
}

namespace {

// One direction over all time steps. Input projections are computed for
// every position at once, then sliced per step.
Var run_direction(Var inputs, std::span<const double> mask, std::size_t rows,
                  const GruVars& p, bool reverse) {
  Tape& tape = *inputs.tape;
  const std::size_t total = inputs.value().rows();
  const std::size_t width = rows ? total / rows : 0;
  const std::size_t d_h = p.u_z.value().rows();
  if (inputs.value().cols() != p.w_z.value().rows()) {
    throw DimensionError("bigru_forward: input " + shape_str(inputs.shape()) +
                         " does not match W " + shape_str(p.w_z.shape()));
  }
  if (mask.size() != total || (rows && total % rows)) {
    throw DimensionError("bigru_forward: mask/rows do not tile inputs " +
                         shape_str(inputs.shape()));
  }
  const Var xz = add_row(matmul(inputs, p.w_z), p.b_z);
  const Var xr = add_row(matmul(inputs, p.w_r), p.b_r);
  const Var xh = add_row(matmul(inputs, p.w_h), p.b_h);
  Var h = tape.constant(Tensor({rows, d_h}));
  std::vector<Var> outputs(width);
  for (std::size_t step = 0; step < width; ++step) {
    const std::size_t t = reverse ? width - 1 - step : step;
    const std::size_t begin = t * rows;
    const auto m = mask.subspan(begin, rows);
    const Var z = sigmoid(add(slice_rows(xz, begin, rows), matmul(h, p.u_z)));
    const Var r = sigmoid(add(slice_rows(xr, begin, rows), matmul(h, p.u_r)));
    const Var cand = tanh(add(slice_rows(xh, begin, rows), matmul(mul(r, h), p.u_h)));
    const Var next = add(h, mul(z, sub(cand, h)));
    h = where_rows(m, next, h);
    outputs[t] = scale_rows(h, m);
  }
  if (outputs.empty()) return tape.constant(Tensor({0, d_h}));
  return concat(std::span<const Var>(outputs), 0);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError("model dims: " + what);
}

Parameter uniform_matrix(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (double& v : t.values()) v = uniform(rng, -s, s);
  return Parameter(std::move(name), std::move(t));
}

Parameter zeros(std::string name, std::size_t n, double fill = 0.0) {
  return Parameter(std::move(name), Tensor({n}, fill));
}

GruParams make_gru(const std::string& prefix, std::size_t d_in, std::size_t d_h, Rng& rng) {
  GruParams g;
  g.w_z = uniform_matrix(prefix + ".w_z", d_in, d_h, rng);
  g.w_r = uniform_matrix(prefix + ".w_r", d_in, d_h, rng);
  g.w_h = uniform_matrix(prefix + ".w_h", d_in, d_h, rng);
  g.u_z = uniform_matrix(prefix + ".u_z", d_h, d_h, rng);
  g.u_r = uniform_matrix(prefix + ".u_r", d_h, d_h, rng);
  g.u_h = uniform_matrix(prefix + ".u_h", d_h, d_h, rng);
  g.b_z = zeros(prefix + ".b_z", d_h, 1.0);
  g.b_r = zeros(prefix + ".b_r", d_h);
  g.b_h = zeros(prefix + ".b_h", d_h);
  return g;
}

BiGruParams make_bigru(const std::string& prefix, std::size_t d_in, std::size_t d_h, Rng& rng) {
  BiGruParams b;
  b.forward = make_gru(prefix + ".fwd", d_in, d_h, rng);
  b.backward = make_gru(prefix + ".bwd", d_in, d_h, rng);
  return b;
}

struct LmHead {
  std::optional<Var> logits;
  std::vector<std::size_t> rows;
  std::vector<int> targets;
};

LmHead lm_head(Var states, Var w, Var b, const std::vector<int>& targets, bool all_positions) {
  LmHead head;
  if (all_positions) {
    head.rows.resize(targets.size());
    std::iota(head.rows.begin(), head.rows.end(), std::size_t{0});
    head.targets = targets;
    head.logits = add_row(matmul(states, w), b);
    return head;
  }
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    head.rows.push_back(r);
    head.targets.push_back(targets[r]);
  }
  if (head.rows.empty()) return head;
  head.logits = add_row(matmul(embedding_lookup(states, head.rows), w), b);
  return head;
}

void attach_lm(ForwardOutputs& out, const Batch& batch, Var fwd_states, Var bwd_states,
               Var next_w, Var next_b, Var prev_w, Var prev_b, bool all_positions) {
  LmHead next = lm_head(fwd_states, next_w, next_b, time_major_targets(batch, batch.lm_next),
                        all_positions);
  LmHead prev = lm_head(bwd_states, prev_w, prev_b, time_major_targets(batch, batch.lm_prev),
                        all_positions);
  if (!next.rows.empty()) out.lm_next_logits = next.logits;
  out.lm_next_rows = std::move(next.rows);
  out.lm_next_targets = std::move(next.targets);
  if (!prev.rows.empty()) out.lm_prev_logits = prev.logits;
  out.lm_prev_rows = std::move(prev.rows);
  out.lm_prev_targets = std::move(prev.targets);
}

}  // namespace

BiGruStates bigru_forward(Var inputs, std::span<const double> mask, std::size_t rows,
                          const GruVars& forward, const GruVars& backward) {
  return {run_direction(inputs, mask, rows, forward, false),
          run_direction(inputs, mask, rows, backward, true)};
}

Var label_mixture(Var distribution, Var table) {
  if (distribution.value().cols() != table.value().rows()) {
    throw DimensionError("label_mixture: distribution " + shape_str(distribution.shape()) +
                         " does not match label table " + shape_str(table.shape()));
  }
  return matmul(distribution, table);
}

std::vector<std::size_t> time_major_tokens(const Batch& batch) {
  std::vector<std::size_t> out(batch.rows * batch.width);
  for (std::size_t b = 0; b < batch.rows; ++b) {
    for (std::size_t t = 0; t < batch.width; ++t) {
      out[t * batch.rows + b] = batch.tokens[batch.index(b, t)];
    }
  }
  return out;
}

std::vector<double> time_major_mask(const Batch& batch) {
  std::vector<double> out(batch.rows * batch.width);
  for (std::size_t b = 0; b < batch.rows; ++b) {
    for (std::size_t t = 0; t < batch.width; ++t) {
      out[t * batch.rows + b] = batch.mask[batch.index(b, t)];
    }
  }
  return out;
}

std::vector<int> time_major_targets(const Batch& batch, std::span<const int> values) {
  std::vector<int> out(batch.rows * batch.width, kNoTarget);
  for (std::size_t b = 0; b < batch.rows; ++b) {
    for (std::size_t t = 0; t < batch.width; ++t) {
      out[t * batch.rows + b] = values[batch.index(b, t)];
    }
  }
  return out;
}

Model Model::init(Architecture arch, const ModelDims& d, std::uint64_t seed) {
  require(d.vocab >= 2, "vocab must include PAD and UNK");
  require(d.word_dim > 0 && d.hidden > 0 && d.label_dim > 0, "dimensions must be positive");
  require(d.n_pos > 0 && d.n_chunk > 0, "label sets must be nonempty");
  require(d.lm_vocab >= 2 && d.lm_vocab <= d.vocab, "lm_vocab must lie in [2, vocab]");
  Rng rng(seed);
  Model m;
  m.dims_ = d;
  const std::size_t two_h = 2 * d.hidden;
  if (arch == Architecture::eth) {
    HierModelParams p;
    p.word_emb = uniform_matrix("word_emb", d.vocab, d.word_dim, rng);
    p.shared = make_bigru("shared", d.word_dim, d.hidden, rng);
    p.pos_w = uniform_matrix("pos.w", two_h, d.n_pos, rng);
    p.pos_b = zeros("pos.b", d.n_pos);
    p.pos_label_emb = uniform_matrix("pos.label_emb", d.n_pos, d.label_dim, rng);
    p.chunk_gru = make_bigru("chunk_gru", d.label_dim + two_h, d.hidden, rng);
    p.chunk_w = uniform_matrix("chunk.w", two_h, d.n_chunk, rng);
    p.chunk_b = zeros("chunk.b", d.n_chunk);
    p.chunk_label_emb = uniform_matrix("chunk.label_emb", d.n_chunk, d.label_dim, rng);
    p.lm_gru = make_bigru("lm_gru", d.label_dim + two_h, d.hidden, rng);
    p.lm_next_w = uniform_matrix("lm_next.w", d.hidden, d.lm_vocab, rng);
    p.lm_next_b = zeros("lm_next.b", d.lm_vocab);
    p.lm_prev_w = uniform_matrix("lm_prev.w", d.hidden, d.lm_vocab, rng);
    p.lm_prev_b = zeros("lm_prev.b", d.lm_vocab);
    m.params_ = std::move(p);
  } else {
    BaselineModelParams p;
    p.word_emb = uniform_matrix("word_emb", d.vocab, d.word_dim, rng);
    p.shared = make_bigru("shared", d.word_dim, d.hidden, rng);
    p.pos_w = uniform_matrix("pos.w", two_h, d.n_pos, rng);
    p.pos_b = zeros("pos.b", d.n_pos);
    p.chunk_w = uniform_matrix("chunk.w", two_h, d.n_chunk, rng);
    p.chunk_b = zeros("chunk.b", d.n_chunk);
    p.lm_next_w = uniform_matrix("lm_next.w", d.hidden, d.lm_vocab, rng);
    p.lm_next_b = zeros("lm_next.b", d.lm_vocab);
    p.lm_prev_w = uniform_matrix("lm_prev.w", d.hidden, d.lm_vocab, rng);
    p.lm_prev_b = zeros("lm_prev.b", d.lm_vocab);
    m.params_ = std::move(p);
  }
  return m;
}

Architecture Model::architecture() const {
  return std::holds_alternative<HierModelParams>(params_) ? Architecture::eth
                                                          : Architecture::baseline;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  std::visit([&](auto& p) { p.collect(out); }, params_);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto ps = const_cast<Model*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Parameter* Model::find(std::string_view name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

Parameter& Model::word_embeddings() {
  return std::visit([](auto& p) -> Parameter& { return p.word_emb; }, params_);
}

const Parameter* Model::label_embeddings(Task task) const {
  const HierModelParams* p = hier();
  if (!p) return nullptr;
  return task == Task::pos ? &p->pos_label_emb : &p->chunk_label_emb;
}

ForwardOutputs Model::forward(Tape& tape, const Batch& batch, const ForwardOptions& options) {
  ForwardOutputs out;
  out.rows = batch.rows;
  out.width = batch.width;
  const auto ids = time_major_tokens(batch);
  const auto mask = time_major_mask(batch);
  const std::size_t rows = batch.rows;

  auto shared_pass = [&](Parameter& emb, BiGruParams& shared) {
    const Var x = embedding_lookup(tape.param(emb), ids);
    return bigru_forward(x, mask, rows, GruVars::bind(tape, shared.forward),
                         GruVars::bind(tape, shared.backward));
  };
  auto head = [&](Var in, Parameter& w, Parameter& b) {
    return add_row(matmul(in, tape.param(w)), tape.param(b));
  };

  if (HierModelParams* p = hier()) {
    const BiGruStates shared = shared_pass(p->word_emb, p->shared);
    out.hidden = shared.combined();
    out.pos_logits = head(out.hidden, p->pos_w, p->pos_b);
    out.pos_probs = softmax(out.pos_logits);
    const Var pos_mix = label_mixture(out.pos_probs, tape.param(p->pos_label_emb));
    const BiGruStates chunk =
        bigru_forward(concat({pos_mix, out.hidden}, 1), mask, rows,
                      GruVars::bind(tape, p->chunk_gru.forward),
                      GruVars::bind(tape, p->chunk_gru.backward));
    out.chunk_logits = head(chunk.combined(), p->chunk_w, p->chunk_b);
    out.chunk_probs = softmax(out.chunk_logits);
    if (options.lm) {
      const Var chunk_mix = label_mixture(out.chunk_probs, tape.param(p->chunk_label_emb));
      const BiGruStates lm =
          bigru_forward(concat({chunk_mix, out.hidden}, 1), mask, rows,
                        GruVars::bind(tape, p->lm_gru.forward),
                        GruVars::bind(tape, p->lm_gru.backward));
      attach_lm(out, batch, lm.forward, lm.backward, tape.param(p->lm_next_w),
                tape.param(p->lm_next_b), tape.param(p->lm_prev_w), tape.param(p->lm_prev_b),
                options.lm_all_positions);
    }
  } else {
    BaselineModelParams& b = *baseline();
    const BiGruStates shared = shared_pass(b.word_emb, b.shared);
    out.hidden = shared.combined();
    out.pos_logits = head(out.hidden, b.pos_w, b.pos_b);
    out.pos_probs = softmax(out.pos_logits);
    out.chunk_logits = head(out.hidden, b.chunk_w, b.chunk_b);
    out.chunk_probs = softmax(out.chunk_logits);
    if (options.lm) {
      attach_lm(out, batch, shared.forward, shared.backward, tape.param(b.lm_next_w),
                tape.param(b.lm_next_b), tape.param(b.lm_prev_w), tape.param(b.lm_prev_b),
                options.lm_all_positions);
    }
  }
  return out;
}

}  // namespace hiertag
