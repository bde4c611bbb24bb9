// SPDX-License-Identifier: Apache-2.0

#include "hiertag/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace hiertag {

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct RunningMean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::optional<double> mean() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

std::size_t argmax_row(const Tensor& t, std::size_t r) {
  const std::size_t n = t.cols();
  const double* row = t.data() + r * n;
  return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}

Sentence strip_tags(const Sentence& s) { return Sentence{s.tokens, std::nullopt, std::nullopt}; }

}  // namespace

void TrainConfig::validate() const {
  if (semi_supervised && !(gamma > 0.0 && gamma < 1.0)) {
    throw ContractError("gamma must lie in (0, 1) when semi-supervised, got " +
                        fmt_double(gamma));
  }
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw ContractError("labeled fraction must lie in (0, 1], got " +
                        fmt_double(labeled_fraction));
  }
  if (geometry.batch_size == 0 || geometry.max_len == 0) {
    throw ContractError("batch geometry must be positive");
  }
  if (word_dim == 0 || hidden == 0 || label_dim == 0) {
    throw ContractError("model dimensions must be positive");
  }
  if (!(adam.learning_rate > 0.0)) throw ContractError("learning rate must be positive");
  if (!(clip_norm > 0.0)) throw ContractError("clip norm must be positive");
}

ConfigEcho config_echo(const TrainConfig& c) {
  ConfigEcho e;
  e["arch"] = std::string(architecture_name(c.arch));
  e["semi_supervised"] = c.semi_supervised ? "true" : "false";
  e["gamma"] = fmt_double(c.gamma);
  e["epochs"] = std::to_string(c.epochs);
  e["batch_size"] = std::to_string(c.geometry.batch_size);
  e["max_len"] = std::to_string(c.geometry.max_len);
  e["learning_rate"] = fmt_double(c.adam.learning_rate);
  e["beta1"] = fmt_double(c.adam.beta1);
  e["beta2"] = fmt_double(c.adam.beta2);
  e["epsilon"] = fmt_double(c.adam.epsilon);
  e["clip_norm"] = fmt_double(c.clip_norm);
  e["seed"] = std::to_string(c.seed);
  e["labeled_fraction"] = fmt_double(c.labeled_fraction);
  e["word_dim"] = std::to_string(c.word_dim);
  e["hidden"] = std::to_string(c.hidden);
  e["label_dim"] = std::to_string(c.label_dim);
  e["lm_cap"] = std::to_string(c.lm_cap);
  e["lm_on_labeled"] = c.lm_on_labeled ? "true" : "false";
  e["embeddings"] = c.embeddings ? c.embeddings->string() : "";
  return e;
}

TaskLosses task_loss(const ForwardOutputs& out, const Batch& batch) {
  TaskLosses l;
  if (batch.has_pos) {
    l.pos = softmax_cross_entropy(out.pos_logits, time_major_targets(batch, batch.pos));
  }
  if (batch.has_chunk) {
    l.chunk = softmax_cross_entropy(out.chunk_logits, time_major_targets(batch, batch.chunk));
  }
  std::vector<Var> lm;
  if (out.lm_next_logits) {
    lm.push_back(softmax_cross_entropy(*out.lm_next_logits, out.lm_next_targets));
  }
  if (out.lm_prev_logits) {
    lm.push_back(softmax_cross_entropy(*out.lm_prev_logits, out.lm_prev_targets));
  }
  if (lm.size() == 1) l.lm = lm[0];
  if (lm.size() == 2) l.lm = scale(add(lm[0], lm[1]), 0.5);
  return l;
}

Var combined_loss(const TaskLosses& l) {
  std::vector<Var> terms;
  for (const auto& t : {l.pos, l.chunk, l.lm}) {
    if (t) terms.push_back(*t);
  }
  if (terms.empty()) throw ContractError("combined_loss: no task is present");
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return terms.size() == 1 ? total : scale(total, 1.0 / static_cast<double>(terms.size()));
}

double combined_loss(std::span<const double> losses) {
  if (losses.empty()) throw ContractError("combined_loss: no task is present");
  double s = 0.0;
  for (double v : losses) s += v;
  return s / static_cast<double>(losses.size());
}

std::vector<ScheduleStep> plan_epoch(std::size_t labeled_batches, double gamma,
                                     bool semi_supervised, Rng& rng) {
  std::vector<ScheduleStep> plan;
  plan.reserve(labeled_batches * (semi_supervised ? 2 : 1));
  for (std::size_t i = 0; i < labeled_batches; ++i) {
    if (semi_supervised && bernoulli(rng, gamma)) plan.push_back({true, 0});
    plan.push_back({false, i});
  }
  return plan;
}

UnlabeledStream::UnlabeledStream(std::span<const Sentence> sentences, const Vocabulary& vocab,
                                 BatchGeometry geometry, std::uint64_t seed)
    : sentences_(sentences), vocab_(&vocab), geometry_(geometry), seed_(seed) {}

void UnlabeledStream::refill() {
  batches_ = make_batches(sentences_, *vocab_, nullptr, nullptr, geometry_,
                          mix_seed(seed_, passes_));
  // Batches without any LM target (all one-token segments) cannot form a step.
  std::erase_if(batches_, [](const Batch& b) { return !b.has_lm(); });
  if (batches_.empty()) throw ContractError("unlabeled stream has no LM targets");
  ++passes_;
  cursor_ = 0;
}

const Batch& UnlabeledStream::next() {
  if (sentences_.empty()) throw ContractError("unlabeled stream is empty");
  if (cursor_ >= batches_.size()) refill();
  return batches_[cursor_++];
}

EpochMetrics train_epoch(Model& model, AdamState& adam, std::span<const Batch> labeled,
                         UnlabeledStream* unlabeled, const TrainConfig& config, Rng& schedule) {
  if (config.semi_supervised && (unlabeled == nullptr || unlabeled->empty())) {
    throw ContractError("semi-supervised training needs unlabeled batches");
  }
  const auto start = std::chrono::steady_clock::now();
  auto params = model.parameters();
  std::vector<Parameter*> pos_head;
  if (Parameter* p = model.find("pos.w")) pos_head.push_back(p);
  if (Parameter* p = model.find("pos.b")) pos_head.push_back(p);

  EpochMetrics m;
  RunningMean pos_loss, chunk_loss, lm_loss, loss, unl_loss, unl_grad;
  const auto plan = plan_epoch(labeled.size(), config.gamma, config.semi_supervised, schedule);
  for (std::size_t step = 0; step < plan.size(); ++step) {
    const bool is_unlabeled = plan[step].unlabeled;
    const Batch& batch = is_unlabeled ? unlabeled->next() : labeled[plan[step].labeled_index];
    Tape tape;
    ForwardOptions opts;
    opts.lm = is_unlabeled || config.lm_on_labeled;
    const ForwardOutputs out = model.forward(tape, batch, opts);
    const TaskLosses terms = task_loss(out, batch);
    const Var total = combined_loss(terms);
    const double value = total.value()[0];
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " (" +
                          (is_unlabeled ? "unlabeled" : "labeled batch " +
                                          std::to_string(plan[step].labeled_index)) +
                          ")");
    }
    model.zero_grad();
    tape.backward(total);
    if (is_unlabeled) {
      ++m.unlabeled_batches;
      unl_loss.add(value);
      unl_grad.add(grad_norm(pos_head));
    } else {
      ++m.labeled_batches;
      loss.add(value);
      if (terms.pos) pos_loss.add(terms.pos->value()[0]);
      if (terms.chunk) chunk_loss.add(terms.chunk->value()[0]);
    }
    if (terms.lm) lm_loss.add(terms.lm->value()[0]);
    clip_grad_norm(params, config.clip_norm);
    adam_step(params, adam);
  }
  m.pos_loss = pos_loss.mean();
  m.chunk_loss = chunk_loss.mean();
  m.lm_loss = lm_loss.mean();
  m.loss = loss.mean().value_or(0.0);
  m.unlabeled_loss = unl_loss.mean();
  m.unlabeled_pos_grad_norm = unl_grad.mean();
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

Corpus predict(Model& model, std::span<const Sentence> sentences, const Vocabulary& vocab,
               const LabelSet& pos_labels, const LabelSet& chunk_labels,
               const BatchGeometry& geometry) {
  Corpus bare;
  bare.reserve(sentences.size());
  for (const Sentence& s : sentences) bare.push_back(strip_tags(s));
  Corpus pred = bare;
  for (Sentence& s : pred) {
    s.pos = std::vector<std::string>(s.size());
    s.chunk = std::vector<std::string>(s.size());
  }
  const auto batches = make_batches(bare, vocab, nullptr, nullptr, geometry, std::nullopt);
  ForwardOptions opts;
  opts.lm = false;
  for (const Batch& batch : batches) {
    Tape tape;
    const ForwardOutputs out = model.forward(tape, batch, opts);
    const Tensor& pos = out.pos_probs.value();
    const Tensor& chunk = out.chunk_probs.value();
    for (std::size_t b = 0; b < batch.rows; ++b) {
      const SegmentRef& seg = batch.origin[b];
      Sentence& s = pred[seg.sentence];
      for (std::size_t t = 0; t < seg.length; ++t) {
        const std::size_t r = out.row(b, t);
        (*s.pos)[seg.offset + t] = pos_labels.label(argmax_row(pos, r));
        (*s.chunk)[seg.offset + t] = chunk_labels.label(argmax_row(chunk, r));
      }
    }
  }
  return pred;
}

EvalReport evaluate_predictions(std::span<const Sentence> gold, std::span<const Sentence> pred) {
  if (gold.size() != pred.size()) {
    throw ContractError("evaluate: " + std::to_string(gold.size()) + " gold vs " +
                        std::to_string(pred.size()) + " predicted sentences");
  }
  std::vector<TaggedSequence> pos, chunk;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].tokens.size() != pred[i].tokens.size()) {
      throw ContractError("evaluate: sentence " + std::to_string(i) + " length mismatch");
    }
    if (gold[i].pos) {
      if (!pred[i].pos) throw ContractError("evaluate: missing predicted POS tags");
      pos.push_back({*gold[i].pos, *pred[i].pos});
    }
    if (gold[i].chunk) {
      if (!pred[i].chunk) throw ContractError("evaluate: missing predicted chunk tags");
      chunk.push_back({*gold[i].chunk, *pred[i].chunk});
    }
  }
  EvalReport r = evaluate_sequences(pos, chunk);
  r.sentences = gold.size();
  r.tokens = token_count(gold);
  return r;
}

EvalReport evaluate_model(Model& model, std::span<const Sentence> gold, const Vocabulary& vocab,
                          const LabelSet& pos_labels, const LabelSet& chunk_labels,
                          const BatchGeometry& geometry) {
  const Corpus pred = predict(model, gold, vocab, pos_labels, chunk_labels, geometry);
  return evaluate_predictions(gold, pred);
}

Corpus subsample_labeled(std::span<const Sentence> corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ContractError("labeled fraction must lie in (0, 1], got " + fmt_double(fraction));
  }
  const std::size_t n = corpus.size();
  // Guard against 0.25 * 100 evaluating to 25.000000000000004.
  const double exact = fraction * static_cast<double>(n);
  std::size_t k = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  k = std::min(k, n);
  Rng rng(seed);
  auto order = shuffled_indices(n, rng);
  order.resize(k);
  std::sort(order.begin(), order.end());
  Corpus out;
  out.reserve(k);
  for (std::size_t i : order) out.push_back(corpus[i]);
  return out;
}

TrainingOutputs outputs_in(const std::filesystem::path& dir) {
  return {dir / "metrics.jsonl", dir / "timing.jsonl", dir / "checkpoint.bin"};
}

std::string metrics_record(const EpochMetrics& m) {
  nlohmann::json j;
  j["epoch"] = m.epoch;
  auto opt = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  j["loss"] = m.loss;
  opt("pos_loss", m.pos_loss);
  opt("chunk_loss", m.chunk_loss);
  opt("lm_loss", m.lm_loss);
  opt("unlabeled_loss", m.unlabeled_loss);
  opt("dev_pos_accuracy", m.dev_pos_accuracy);
  opt("dev_chunk_f1", m.dev_chunk_f1);
  j["labeled_batches"] = m.labeled_batches;
  j["unlabeled_batches"] = m.unlabeled_batches;
  opt("unlabeled_pos_grad_norm", m.unlabeled_pos_grad_norm);
  return j.dump();
}

TrainingResult run_training(const TrainConfig& config, const TrainingData& data,
                            const std::optional<TrainingOutputs>& outputs,
                            const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.empty()) throw ContractError("training split is empty");
  if (config.semi_supervised && data.unlabeled.empty()) {
    throw ContractError("semi-supervised training needs unlabeled sentences");
  }
  TrainingResult res;
  const Corpus labeled =
      subsample_labeled(data.train, config.labeled_fraction, mix_seed(config.seed, 10));
  res.labeled_sentences = labeled.size();

  std::vector<std::span<const Sentence>> vocab_sources{labeled};
  if (config.semi_supervised) vocab_sources.emplace_back(data.unlabeled);
  res.vocab = build_vocab(vocab_sources, 1, config.lm_cap);
  res.pos_labels = LabelSet::from_corpus(Task::pos, data.train);
  res.chunk_labels = LabelSet::from_corpus(Task::chunk, data.train);
  if (res.pos_labels.size() == 0 || res.chunk_labels.size() == 0) {
    throw ContractError("training split must carry POS and chunk tags");
  }

  ModelDims dims;
  dims.vocab = res.vocab.size();
  dims.word_dim = config.word_dim;
  dims.hidden = config.hidden;
  dims.label_dim = config.label_dim;
  dims.n_pos = res.pos_labels.size();
  dims.n_chunk = res.chunk_labels.size();
  dims.lm_vocab = res.vocab.lm_size();
  Model model = Model::init(config.arch, dims, mix_seed(config.seed, 20));
  if (config.embeddings) {
    std::ifstream in(*config.embeddings);
    if (!in) throw std::runtime_error("cannot open embeddings " + config.embeddings->string());
    PretrainedEmbeddings emb = load_pretrained_embeddings(in, res.vocab);
    if (emb.dim != config.word_dim) {
      throw ContractError("embedding dimension " + std::to_string(emb.dim) +
                          " does not match word_dim " + std::to_string(config.word_dim));
    }
    apply_pretrained(emb, model.word_embeddings().value);
    res.embeddings = std::move(emb);
  }

  auto params = model.parameters();
  AdamState adam = make_adam_state(params, config.adam);
  std::optional<UnlabeledStream> stream;
  if (config.semi_supervised) {
    stream.emplace(data.unlabeled, res.vocab, config.geometry, mix_seed(config.seed, 40));
  }
  Rng schedule(mix_seed(config.seed, 30));

  std::ofstream metrics_out, timing_out;
  if (outputs) {
    metrics_out.open(outputs->metrics, std::ios::trunc);
    timing_out.open(outputs->timing, std::ios::trunc);
    if (!metrics_out || !timing_out) {
      throw std::runtime_error("cannot write metrics under " +
                               outputs->metrics.parent_path().string());
    }
  }
  ConfigEcho echo = config_echo(config);

  res.model = model;
  bool have_best = false;
  for (std::size_t e = 1; e <= config.epochs; ++e) {
    const auto batches = make_batches(labeled, res.vocab, &res.pos_labels, &res.chunk_labels,
                                      config.geometry, mix_seed(config.seed, 100 + e));
    EpochMetrics m =
        train_epoch(model, adam, batches, stream ? &*stream : nullptr, config, schedule);
    m.epoch = e;
    if (!data.dev.empty()) {
      const EvalReport dev = evaluate_model(model, data.dev, res.vocab, res.pos_labels,
                                            res.chunk_labels, config.geometry);
      m.dev_pos_accuracy = dev.pos_accuracy;
      if (dev.chunk) m.dev_chunk_f1 = dev.chunk->overall.f1;
    }
    // Without dev chunk tags the last epoch wins.
    const bool improved =
        !have_best || !m.dev_chunk_f1 || *m.dev_chunk_f1 > res.best_dev_chunk_f1;
    if (improved) {
      have_best = true;
      res.best_epoch = e;
      res.best_dev_chunk_f1 = m.dev_chunk_f1.value_or(0.0);
      res.model = model;
      if (outputs) {
        save_checkpoint(outputs->checkpoint, model, res.vocab, res.pos_labels, res.chunk_labels,
                        echo);
      }
    }
    if (outputs) {
      metrics_out << metrics_record(m) << '\n' << std::flush;
      timing_out << nlohmann::json{{"epoch", e}, {"seconds", m.seconds}}.dump() << '\n'
                 << std::flush;
    }
    if (on_epoch) on_epoch(m);
    res.history.push_back(std::move(m));
  }
  if (config.epochs == 0 && outputs) {
    save_checkpoint(outputs->checkpoint, model, res.vocab, res.pos_labels, res.chunk_labels,
                    echo);
  }
  if (!data.test.empty()) {
    res.test_report = evaluate_model(res.model, data.test, res.vocab, res.pos_labels,
                                     res.chunk_labels, config.geometry);
  }
  return res;
}

}  // namespace hiertag
