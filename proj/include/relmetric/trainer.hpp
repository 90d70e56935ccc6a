#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <thread>
#include <vector>

#include <json.hpp>

#include "relmetric/checkpoint.hpp"
#include "relmetric/config.hpp"
#include "relmetric/corpus.hpp"
#include "relmetric/error.hpp"
#include "relmetric/log.hpp"
#include "relmetric/model.hpp"
#include "relmetric/scoring.hpp"

namespace relmetric {

// r_k = r_b * 2^(-k / h): halves every h epochs; h == 0 keeps the base rate.
inline double lr_schedule(std::size_t epoch, double base, double halving_epochs = 10.0) {
  if (halving_epochs == 0.0) return base;
  return base * std::exp2(-static_cast<double>(epoch) / halving_epochs);
}

// Copies of the inputs with the model's entities and relations.
inline SentenceExample predict_example(const RelationMetricModel& model, const SentenceExample& ex) {
  SentenceExample out;
  out.id = ex.id;
  out.text = ex.text;
  out.tokens = ex.tokens;
  out.dep_edges = ex.dep_edges;
  if (ex.size() == 0) return out;
  Prediction p = model.predict(ex);
  out.entities = std::move(p.entities);
  out.relations = std::move(p.relations);
  return out;
}

// Predictions for a corpus. Shards across threads; the model is only read.
inline std::vector<SentenceExample> predict_corpus(const RelationMetricModel& model,
                                                   const std::vector<SentenceExample>& examples,
                                                   unsigned threads = 1) {
  std::vector<SentenceExample> out(examples.size());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(examples.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < examples.size(); ++i) out[i] = predict_example(model, examples[i]);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < examples.size(); i += threads) out[i] = predict_example(model, examples[i]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double learning_rate = 0;
  double train_loss = 0;  // mean per-sentence loss
  std::optional<double> dev_ner_f1, dev_re_f1;
  double train_seconds = 0, eval_seconds = 0;

  nlohmann::json to_json(bool timing = true) const {
    nlohmann::json j{{"kind", "epoch"}, {"epoch", epoch}, {"lr", learning_rate}, {"train_loss", train_loss}};
    j["dev_ner_f1"] = dev_ner_f1 ? nlohmann::json(*dev_ner_f1) : nlohmann::json();
    j["dev_re_f1"] = dev_re_f1 ? nlohmann::json(*dev_re_f1) : nlohmann::json();
    if (timing) j["train_seconds"] = train_seconds, j["eval_seconds"] = eval_seconds;
    return j;
  }
};

struct TrainResult {
  TrainingState best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

class Trainer {
 public:
  Trainer(TrainingState state, std::vector<SentenceExample> train, std::vector<SentenceExample> dev = {})
      : state_(std::move(state)), train_(std::move(train)), dev_(std::move(dev)) {
    if (train_.empty()) throw ContractError("train: empty training set");
    state_.model.config().validate();
    for (const auto& ex : train_) {
      if (ex.size() == 0) throw ContractError("train: sentence '" + ex.id + "' has no tokens");
      inputs_.push_back(state_.model.encode(ex));
      targets_.push_back(state_.model.target(ex));
    }
  }

  TrainingState& state() noexcept { return state_; }
  const TrainingState& state() const noexcept { return state_; }

  // One optimizer update on the mean loss of a batch (indices into the
  // training set). Returns that mean loss.
  double train_step(const std::vector<std::size_t>& batch, double learning_rate) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    RelationMetricModel& model = state_.model;
    model.zero_grad();
    const Real weight = Real{1} / static_cast<Real>(batch.size());
    double total = 0;
    for (std::size_t idx : batch) {
      Tape tape;
      const auto out = model.forward(tape, inputs_.at(idx), ops::Mode::train, state_.rng);
      Var loss = table_loss(out.pool.probs, targets_[idx]);
      const double value = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(state_.epoch) + ", step " +
                           std::to_string(state_.optimizer.state().step) + " (sentence '" + train_[idx].id + "')");
      }
      total += value;
      tape.backward(ops::scale(loss, weight));
    }
    const double scale = model.config().word_embedding_grad_scale;
    if (scale != 1.0) model.encoder.word_embeddings.grad *= static_cast<Real>(scale);
    state_.optimizer.set_learning_rate(static_cast<Real>(learning_rate));
    state_.optimizer.step(model.parameters());
    return total / static_cast<double>(batch.size());
  }

  // Shuffled batches for one epoch. Bucketed mode groups sentences of similar
  // length before shuffling batch order.
  std::vector<std::vector<std::size_t>> make_batches() {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order);
    const std::size_t b = state_.model.config().batch_size;
    if (state_.model.config().bucketed_batching) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return train_[x].size() < train_[y].size(); });
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += b)
      batches.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + b));
    if (state_.model.config().bucketed_batching) shuffle(batches);
    return batches;
  }

  EpochRecord run_epoch() {
    EpochRecord rec;
    rec.epoch = state_.epoch;
    const TrainConfig& c = state_.model.config();
    rec.learning_rate = lr_schedule(state_.epoch, c.learning_rate, c.lr_halving_epochs);
    const auto t0 = std::chrono::steady_clock::now();
    double total = 0;
    for (const auto& batch : make_batches()) total += train_step(batch, rec.learning_rate) * static_cast<double>(batch.size());
    rec.train_loss = total / static_cast<double>(train_.size());
    const auto t1 = std::chrono::steady_clock::now();
    if (!dev_.empty()) {
      const ScoreReport r = evaluate(predict_corpus(state_.model, dev_), dev_);
      rec.dev_ner_f1 = r.ner.f1();
      rec.dev_re_f1 = r.re.f1();
    }
    const auto t2 = std::chrono::steady_clock::now();
    rec.train_seconds = std::chrono::duration<double>(t1 - t0).count();
    rec.eval_seconds = std::chrono::duration<double>(t2 - t1).count();
    ++state_.epoch;
    return rec;
  }

  // Trains until config.epochs epochs are complete. Keeps the state with the
  // best dev RE-F1 (lowest training loss when there is no dev set).
  TrainResult run(std::ostream* metrics = nullptr) {
    TrainResult result;
    const TrainConfig& c = state_.model.config();
    if (metrics) {
      *metrics << nlohmann::json{{"kind", "config"}, {"config", config_to_json(c)}, {"train_sentences", train_.size()},
                                 {"dev_sentences", dev_.size()}, {"tags", state_.model.labels().size()}}
                      .dump()
               << '\n';
    }
    bool have_best = false;
    double best_score = 0;
    while (state_.epoch < c.epochs) {
      EpochRecord rec = run_epoch();
      log::info("epoch ", rec.epoch, " lr=", rec.learning_rate, " loss=", rec.train_loss,
                rec.dev_re_f1 ? " dev_re_f1=" + std::to_string(*rec.dev_re_f1) : std::string());
      if (metrics) *metrics << rec.to_json().dump() << '\n' << std::flush;
      const double score = rec.dev_re_f1 ? *rec.dev_re_f1 : -rec.train_loss;
      if (!have_best || score > best_score) {
        have_best = true;
        best_score = score;
        result.best = state_;
        result.best_epoch = rec.epoch;
      }
      result.history.push_back(std::move(rec));
    }
    if (!have_best) result.best = state_;
    if (metrics) {
      *metrics << nlohmann::json{{"kind", "best"}, {"epoch", result.best_epoch},
                                 {"selected_by", dev_.empty() ? "train_loss" : "dev_re_f1"}}
                      .dump()
               << '\n';
    }
    return result;
  }

 private:
  // Fisher-Yates with plain modulo draws so the order depends only on the
  // engine, not on the standard library's distributions.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[state_.rng() % i]);
  }

  TrainingState state_;
  std::vector<SentenceExample> train_;
  std::vector<SentenceExample> dev_;
  std::vector<EncodedSentence> inputs_;
  std::vector<Tensor> targets_;
};

// Convenience: fresh model from the training data, then a full run.
inline TrainResult train_model(const TrainConfig& config, const LabelSpace& labels,
                               const std::vector<SentenceExample>& train, const std::vector<SentenceExample>& dev = {},
                               std::ostream* metrics = nullptr, const std::vector<std::string>& extra_words = {}) {
  Trainer trainer(make_training_state(build_schema(config, labels, train, extra_words)), train, dev);
  return trainer.run(metrics);
}

struct Interval {
  double mean = 0, half_width = 0;
  std::size_t runs = 0;
};

// mean +- 1.96 * sd / sqrt(N), sample standard deviation.
inline Interval confidence_interval(const std::vector<double>& values) {
  Interval ci;
  ci.runs = values.size();
  if (values.empty()) return ci;
  ci.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() < 2) return ci;
  double ss = 0;
  for (double v : values) ss += (v - ci.mean) * (v - ci.mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  ci.half_width = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  return ci;
}

}  // namespace relmetric
