#pragma once

#include <algorithm>
#include <cstddef>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "relmetric/config.hpp"
#include "relmetric/context_encoder.hpp"
#include "relmetric/corpus.hpp"
#include "relmetric/log.hpp"
#include "relmetric/relmetric_net.hpp"
#include "relmetric/table_codec.hpp"
#include "relmetric/vocabulary.hpp"

namespace relmetric {

// Everything needed to rebuild a model's parameter shapes: configuration,
// label space, vocabularies and the longest training sentence.
struct ModelSchema {
  TrainConfig config;
  LabelSpace labels;
  Vocabulary words;
  Vocabulary chars;
  Vocabulary dep_tags;
  std::size_t max_length = 1;

  friend bool operator==(const ModelSchema&, const ModelSchema&) = default;
};

// Label space covering every type seen in a corpus, in first-seen order.
inline LabelSpace infer_label_space(const std::vector<SentenceExample>& examples) {
  std::vector<std::string> ents, rels;
  for (const auto& ex : examples) {
    for (const auto& e : ex.entities)
      if (std::find(ents.begin(), ents.end(), e.type) == ents.end()) ents.push_back(e.type);
    for (const auto& r : ex.relations)
      if (std::find(rels.begin(), rels.end(), r.predicate) == rels.end()) rels.push_back(r.predicate);
  }
  return LabelSpace(ents, rels);
}

// Word and character vocabularies come from the training set. Extra words
// (e.g. dev/test tokens covered by pretrained vectors) may be supplied.
inline ModelSchema build_schema(const TrainConfig& config, LabelSpace labels, const std::vector<SentenceExample>& train,
                                const std::vector<std::string>& extra_words = {}) {
  if (train.empty()) throw ContractError("build_schema: empty training set");
  ModelSchema s{config, std::move(labels), {}, {}, {}, 1};
  for (const auto& ex : train) {
    s.max_length = std::max(s.max_length, ex.size());
    for (const auto& tok : ex.tokens) {
      s.words.add(tok.text);
      for (const auto& c : characters_of(tok.text)) s.chars.add(c);
    }
    for (const auto& arc : ex.dep_edges) s.dep_tags.add(arc.tag);
  }
  for (const auto& w : extra_words) s.words.add(w);
  return s;
}

struct EncodedSentence {
  EncodedTokens tokens;
  std::vector<ops::DepEdge> edges;

  std::size_t size() const noexcept { return tokens.size(); }
};

struct Prediction {
  std::vector<Entity> entities;
  std::vector<RelationTriple> relations;
  Tensor probs;  // Q
};

class RelationMetricModel {
 public:
  ModelSchema schema;
  EncoderParams encoder;
  NetParams net;

  RelationMetricModel() = default;

  // Fresh parameters drawn from N(0, init_stddev). Word rows are overwritten by
  // pretrained vectors when the config names an embedding file, unless
  // `load_pretrained` is off (restoring from a checkpoint).
  RelationMetricModel(ModelSchema schema_, std::mt19937_64& rng, bool load_pretrained = true)
      : schema(std::move(schema_)) {
    const TrainConfig& c = schema.config;
    c.validate();
    const Real stddev = static_cast<Real>(c.init_stddev);
    EncoderDims ed{schema.words.size(), schema.chars.size(), c.word_embedding_size, c.char_embedding_size,
                   c.char_representation_size, c.char_window, c.context_size};
    encoder = EncoderParams(ed, rng, stddev);
    NetDims nd{c.context_size,  c.channels,           c.layers,          schema.dep_tags.size(),
               c.dependency_embedding_size, schema.max_length, c.position_embedding_size, schema.labels.size(),
               c.conv_window,   c.batch_norm};
    net = NetParams(nd, rng, stddev);
    if (!load_pretrained) return;
    log::info("position table covers offsets +-", schema.max_length, "; the two extreme rows are unreachable in training");
    if (!c.word_embeddings.empty()) {
      EmbeddingMatrix loaded = load_embeddings(c.word_embeddings, schema.words, c.word_embedding_size, rng, stddev);
      log::info("loaded ", loaded.pretrained_rows, " of ", schema.words.size(), " word vectors from ", c.word_embeddings);
      encoder.word_embeddings.value = std::move(loaded.table.value);
    }
  }

  const TrainConfig& config() const noexcept { return schema.config; }
  const LabelSpace& labels() const noexcept { return schema.labels; }

  // Fixed order: encoder parameters, then network parameters and buffers.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    encoder.for_each([&](Parameter& p) { out.push_back(&p); });
    net.for_each([&](Parameter& p) { out.push_back(&p); });
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<RelationMetricModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  EncodedSentence encode(const SentenceExample& ex) const {
    EncodedSentence out;
    out.tokens = index_tokens(ex.words(), schema.words, schema.chars);
    for (const auto& arc : ex.dep_edges) out.edges.push_back({arc.head, arc.dependent, schema.dep_tags.lookup(arc.tag)});
    return out;
  }

  Tensor target(const SentenceExample& ex) const {
    return one_hot(encode_table(ex.entities, ex.relations, ex.size(), schema.labels), schema.labels);
  }

  struct Output {
    Var hidden;     // H
    Var metric;     // G before normalization
    Var deps;       // D
    Var positions;  // P
    PoolTrace pool;
  };

  // Training-capable forward pass; in train mode it updates running
  // normalization statistics.
  Output forward(Tape& tape, const EncodedSentence& s, ops::Mode mode, std::mt19937_64& rng) {
    return forward_impl(*this, tape, s, mode, rng);
  }

  // Inference on a frozen model; never mutates parameters.
  Output forward(Tape& tape, const EncodedSentence& s) const {
    std::mt19937_64 unused;
    return forward_impl(*this, tape, s, ops::Mode::infer, unused);
  }

  Prediction predict(const SentenceExample& ex) const {
    Tape tape;
    const Output out = forward(tape, encode(ex));
    Prediction p;
    p.probs = tape.value(out.pool.probs);
    p.entities = decode_entities(argmax_diagonal(p.probs), schema.labels);
    p.relations = decode_relations(p.probs, p.entities, schema.labels);
    return p;
  }

 private:
  template <typename Self>
  static Output forward_impl(Self& self, Tape& tape, const EncodedSentence& s, ops::Mode mode, std::mt19937_64& rng) {
    const TrainConfig& c = self.schema.config;
    const std::size_t n = s.size();
    if (n == 0) throw ContractError("forward: empty sentence");
    Output out;
    const EncoderVars ev = EncoderVars::bind(tape, self.encoder);
    out.hidden = encode_sentence(ev, s.tokens, mode, static_cast<Real>(c.dropout), rng);
    out.metric = metric_tables(out.hidden, tape.parameter(self.net.metrics));
    out.deps = relmetric::dependency_table(tape.parameter(self.net.dep_tags), tape.parameter(self.net.dep_null), s.edges, n);
    out.positions = relmetric::position_table(tape.parameter(self.net.positions), n);
    out.pool = pool_forward(tape, self.net, out.metric, out.deps, out.positions, mode,
                            static_cast<Real>(c.batch_norm_momentum));
    return out;
  }
};

}  // namespace relmetric
