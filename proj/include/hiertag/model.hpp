// SPDX-License-Identifier: Apache-2.0
//
// The two sequence-labeling graphs.
//
// Explicit task hierarchy (eth):
//
//   H       = shared BiGRU(word embeddings)
//   pos     = softmax(H W_pos)
//   chunk   = softmax(BiGRU_chunk([pos · E_pos, H]) W_chunk)
//   lm      = BiGRU_lm([chunk · E_chunk, H])
//
//   The [mixture, H] concatenations are the skip connections. LM forward
//   states predict the next word, backward states the previous word.
//
// Baseline: the shared BiGRU feeds independent POS, chunk and LM heads.
//
// Activations are time-major: row t * B + b holds position t of batch row b.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hiertag/autodiff.hpp"
#include "hiertag/data.hpp"

namespace hiertag {

enum class Architecture { baseline, eth };
std::string_view architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t word_dim = 50;
  std::size_t hidden = 100;
  std::size_t label_dim = 16;
  std::size_t n_pos = 0;
  std::size_t n_chunk = 0;
  std::size_t lm_vocab = 0;

  bool operator==(const ModelDims&) const = default;
};

// h = (1 - z) * h_prev + z * tanh(W_h x + U_h (r * h_prev) + b_h)
struct GruParams {
  Parameter w_z, w_r, w_h;  // [d_in × d_h]
  Parameter u_z, u_r, u_h;  // [d_h × d_h]
  Parameter b_z, b_r, b_h;  // [d_h]

  std::size_t input_dim() const { return w_z.value.rows(); }
  std::size_t hidden_dim() const { return u_z.value.rows(); }
  void collect(std::vector<Parameter*>& out);
};

struct BiGruParams {
  GruParams forward;
  GruParams backward;
  void collect(std::vector<Parameter*>& out);
};

struct HierModelParams {
  Parameter word_emb;         // [V × d_w]
  BiGruParams shared;         // d_w -> d_h
  Parameter pos_w, pos_b;     // [2d_h × n_pos], [n_pos]
  Parameter pos_label_emb;    // [n_pos × d_lab]
  BiGruParams chunk_gru;      // d_lab + 2d_h -> d_h
  Parameter chunk_w, chunk_b; // [2d_h × n_chunk]
  Parameter chunk_label_emb;  // [n_chunk × d_lab]
  BiGruParams lm_gru;         // d_lab + 2d_h -> d_h
  Parameter lm_next_w, lm_next_b;  // [d_h × V_lm]
  Parameter lm_prev_w, lm_prev_b;
  void collect(std::vector<Parameter*>& out);
};

struct BaselineModelParams {
  Parameter word_emb;
  BiGruParams shared;
  Parameter pos_w, pos_b;
  Parameter chunk_w, chunk_b;
  Parameter lm_next_w, lm_next_b;  // reads the shared forward states
  Parameter lm_prev_w, lm_prev_b;  // reads the shared backward states
  void collect(std::vector<Parameter*>& out);
};

// Per-pass handles to a GRU's parameters on a tape.
struct GruVars {
  Var w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h;
  static GruVars bind(Tape& tape, GruParams& p);
};

Var gru_cell(Var x, Var h_prev, const GruVars& p);

struct BiGruStates {
  Var forward;   // [T·B × d_h]
  Var backward;  // [T·B × d_h]
  Var combined() const { return concat({forward, backward}, 1); }
};

// inputs: [T·B × d_in] time-major; mask: T·B entries in the same order.
// Padded positions carry the previous state and emit zeros.
BiGruStates bigru_forward(Var inputs, std::span<const double> mask, std::size_t rows,
                          const GruVars& forward, const GruVars& backward);

// Expected label embedding: distribution [N × n] · table [n × d_lab].
Var label_mixture(Var distribution, Var table);

struct ForwardOptions {
  bool lm = true;
  // When false only rows with a valid LM target get LM logits.
  bool lm_all_positions = false;
};

struct ForwardOutputs {
  std::size_t rows = 0;   // B
  std::size_t width = 0;  // T
  Var hidden;             // [T·B × 2d_h]
  Var pos_logits, pos_probs;
  Var chunk_logits, chunk_probs;
  // LM logits over lm_*_rows (time-major row indices) with matching targets.
  std::optional<Var> lm_next_logits, lm_prev_logits;
  std::vector<std::size_t> lm_next_rows, lm_prev_rows;
  std::vector<int> lm_next_targets, lm_prev_targets;

  std::size_t row(std::size_t b, std::size_t t) const { return t * rows + b; }
};

// Batch [B×T] row-major → time-major flat vectors.
std::vector<std::size_t> time_major_tokens(const Batch& batch);
std::vector<double> time_major_mask(const Batch& batch);
std::vector<int> time_major_targets(const Batch& batch, std::span<const int> values);

class Model {
 public:
  // Uniform(-s, s), s = sqrt(6 / (fan_in + fan_out)) for every matrix; zero
  // biases except the GRU update-gate bias, which starts at +1.
  static Model init(Architecture arch, const ModelDims& dims, std::uint64_t seed);

  Architecture architecture() const;
  const ModelDims& dims() const { return dims_; }

  // Fixed registration order; every parameter appears exactly once.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(std::string_view name);

  void zero_grad();

  ForwardOutputs forward(Tape& tape, const Batch& batch, const ForwardOptions& options = {});

  HierModelParams* hier() { return std::get_if<HierModelParams>(&params_); }
  const HierModelParams* hier() const { return std::get_if<HierModelParams>(&params_); }
  BaselineModelParams* baseline() { return std::get_if<BaselineModelParams>(&params_); }
  const BaselineModelParams* baseline() const {
    return std::get_if<BaselineModelParams>(&params_);
  }

  Parameter& word_embeddings();
  // Label-embedding table for a task; null for the baseline.
  const Parameter* label_embeddings(Task task) const;

 private:
  ModelDims dims_;
  std::variant<HierModelParams, BaselineModelParams> params_;
};

}  // namespace hiertag
