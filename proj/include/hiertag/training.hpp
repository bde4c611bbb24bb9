// SPDX-License-Identifier: Apache-2.0
//
// Masked multi-task loss, the gamma-mixed batch schedule and the training
// driver.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiertag/adam.hpp"
#include "hiertag/checkpoint.hpp"
#include "hiertag/data.hpp"
#include "hiertag/eval.hpp"
#include "hiertag/model.hpp"
#include "hiertag/random.hpp"

namespace hiertag {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Architecture arch = Architecture::eth;
  bool semi_supervised = false;
  double gamma = 0.5;
  std::size_t epochs = 100;
  BatchGeometry geometry;
  AdamOptions adam;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  double labeled_fraction = 1.0;
  std::size_t word_dim = 50;
  std::size_t hidden = 100;
  std::size_t label_dim = 16;
  std::size_t lm_cap = Vocabulary::kDefaultLmCap;
  // Labeled batches also carry the LM term.
  bool lm_on_labeled = true;
  std::optional<std::filesystem::path> embeddings;

  // Throws ContractError on out-of-range values.
  void validate() const;
};

// Key/value echo of every field (used for checkpoints and manifests).
ConfigEcho config_echo(const TrainConfig& config);

// Per-task cross-entropies for one batch; absent tasks stay empty.
struct TaskLosses {
  std::optional<Var> pos;
  std::optional<Var> chunk;
  std::optional<Var> lm;

  std::size_t count() const { return pos.has_value() + chunk.has_value() + lm.has_value(); }
};

// POS and chunk terms are present when the batch carries those tags; the LM
// term is present when LM logits were computed and is the mean of the
// next-word and previous-word cross-entropies. A present tag task with no
// valid position throws ContractError.
TaskLosses task_loss(const ForwardOutputs& outputs, const Batch& batch);

// Arithmetic mean of the present terms; throws ContractError if none.
Var combined_loss(const TaskLosses& losses);
double combined_loss(std::span<const double> losses);

struct ScheduleStep {
  bool unlabeled = false;
  std::size_t labeled_index = 0;  // meaningful when !unlabeled
};

// Before each labeled batch draw Bernoulli(gamma); on success an unlabeled
// step precedes it. gamma is ignored (no draws) when semi_supervised is off.
std::vector<ScheduleStep> plan_epoch(std::size_t labeled_batches, double gamma,
                                     bool semi_supervised, Rng& rng);

// Endless supply of LM-only batches. Reshuffles and rebatches every pass.
class UnlabeledStream {
 public:
  UnlabeledStream(std::span<const Sentence> sentences, const Vocabulary& vocab,
                  BatchGeometry geometry, std::uint64_t seed);
  const Batch& next();
  bool empty() const { return sentences_.empty(); }
  std::size_t passes() const { return passes_; }

 private:
  void refill();

  std::span<const Sentence> sentences_;
  const Vocabulary* vocab_;
  BatchGeometry geometry_;
  std::uint64_t seed_;
  std::size_t passes_ = 0;
  std::vector<Batch> batches_;
  std::size_t cursor_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::optional<double> pos_loss;
  std::optional<double> chunk_loss;
  std::optional<double> lm_loss;
  double loss = 0.0;  // mean combined loss over labeled steps
  std::optional<double> unlabeled_loss;
  std::optional<double> dev_pos_accuracy;
  std::optional<double> dev_chunk_f1;
  double seconds = 0.0;
  std::size_t labeled_batches = 0;
  std::size_t unlabeled_batches = 0;
  // Mean gradient norm reaching pos.w/pos.b on LM-only steps.
  std::optional<double> unlabeled_pos_grad_norm;
};

// One labeled pass in the given order with gamma interleaving. Each step is
// forward, combined loss, backward, clip, ADAM. Throws TrainingError naming
// the step if a loss is not finite.
EpochMetrics train_epoch(Model& model, AdamState& adam, std::span<const Batch> labeled,
                         UnlabeledStream* unlabeled, const TrainConfig& config, Rng& schedule);

// Tags every sentence (segments longer than max_len are stitched back).
// Returned sentences carry the input tokens and predicted pos/chunk tags.
Corpus predict(Model& model, std::span<const Sentence> sentences, const Vocabulary& vocab,
               const LabelSet& pos_labels, const LabelSet& chunk_labels,
               const BatchGeometry& geometry);

// Scores predictions against whichever gold tags the sentences carry.
EvalReport evaluate_predictions(std::span<const Sentence> gold, std::span<const Sentence> pred);
EvalReport evaluate_model(Model& model, std::span<const Sentence> gold, const Vocabulary& vocab,
                          const LabelSet& pos_labels, const LabelSet& chunk_labels,
                          const BatchGeometry& geometry);

// ceil(fraction * N) sentences in original order. For one seed the samples
// are nested across fractions.
Corpus subsample_labeled(std::span<const Sentence> corpus, double fraction, std::uint64_t seed);

struct TrainingData {
  Corpus train;
  Corpus dev;
  Corpus test;
  Corpus unlabeled;
};

struct TrainingResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_dev_chunk_f1 = 0.0;
  EvalReport test_report;
  std::size_t labeled_sentences = 0;
  Vocabulary vocab;
  LabelSet pos_labels;
  LabelSet chunk_labels;
  Model model;  // parameters at the best epoch
  std::optional<PretrainedEmbeddings> embeddings;
};

struct TrainingOutputs {
  std::filesystem::path metrics;     // one JSON record per epoch, appended
  std::filesystem::path timing;      // wall-clock seconds per epoch
  std::filesystem::path checkpoint;  // best-by-dev-chunk-F1 parameters
};

// Standard artifact names inside a run directory.
TrainingOutputs outputs_in(const std::filesystem::path& dir);

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Vocabulary from the labeled sample (plus unlabeled text when
// semi-supervised), label sets from the full training split, per-epoch dev
// evaluation, best-by-dev chunk F1 selection, test evaluation at the best
// epoch. Artifacts are written when `outputs` is set.
TrainingResult run_training(const TrainConfig& config, const TrainingData& data,
                            const std::optional<TrainingOutputs>& outputs = std::nullopt,
                            const EpochCallback& on_epoch = {});

std::string metrics_record(const EpochMetrics& m);

}  // namespace hiertag
