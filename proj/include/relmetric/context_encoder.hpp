#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "relmetric/ops.hpp"
#include "relmetric/tape.hpp"
#include "relmetric/vocabulary.hpp"

namespace relmetric {

struct EncoderDims {
  std::size_t word_vocab = 2;
  std::size_t char_vocab = 2;
  std::size_t word_dim = 200;  // delta
  std::size_t char_dim = 25;   // pi
  std::size_t char_maps = 50;  // eta
  std::size_t char_window = 3;
  std::size_t context = 200;   // rho
};

// Trainable state of the word/character embedding layer and the Bi-LSTM.
struct EncoderParams {
  Parameter word_embeddings;
  Parameter char_embeddings;
  Parameter char_filters;  // [window * pi x eta]
  Parameter char_bias;     // [eta]
  Parameter fwd_input, fwd_recurrent, fwd_bias;
  Parameter bwd_input, bwd_recurrent, bwd_bias;

  std::size_t char_window = 3;

  EncoderParams() = default;

  EncoderParams(const EncoderDims& d, std::mt19937_64& rng, Real stddev) : char_window(d.char_window) {
    const std::size_t h = d.context / 2;
    const std::size_t in = d.word_dim + d.char_maps;
    auto normal = [&](std::string name, Shape shape) {
      Tensor t(std::move(shape));
      std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
      for (Real& v : t.values()) v = static_cast<Real>(dist(rng));
      return Parameter(std::move(name), std::move(t));
    };
    word_embeddings = normal("encoder.word_embeddings", {d.word_vocab, d.word_dim});
    char_embeddings = normal("encoder.char_embeddings", {d.char_vocab, d.char_dim});
    char_filters = normal("encoder.char_filters", {d.char_window * d.char_dim, d.char_maps});
    char_bias = normal("encoder.char_bias", {d.char_maps});
    fwd_input = normal("encoder.lstm_fwd.input", {in, 4 * h});
    fwd_recurrent = normal("encoder.lstm_fwd.recurrent", {h, 4 * h});
    fwd_bias = normal("encoder.lstm_fwd.bias", {4 * h});
    bwd_input = normal("encoder.lstm_bwd.input", {in, 4 * h});
    bwd_recurrent = normal("encoder.lstm_bwd.recurrent", {h, 4 * h});
    bwd_bias = normal("encoder.lstm_bwd.bias", {4 * h});
    // forget gate starts open
    for (std::size_t j = h; j < 2 * h; ++j) fwd_bias.value[j] = bwd_bias.value[j] = Real{1};
  }

  std::size_t context_size() const { return 2 * fwd_recurrent.value.dim(0); }
  std::size_t char_maps() const { return char_filters.value.dim(1); }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (Parameter* p : {&word_embeddings, &char_embeddings, &char_filters, &char_bias, &fwd_input, &fwd_recurrent,
                         &fwd_bias, &bwd_input, &bwd_recurrent, &bwd_bias})
      fn(*p);
  }
};

// Parameters of an encoder placed on one tape.
struct EncoderVars {
  Var words, chars, char_filters, char_bias;
  Var fwd_input, fwd_recurrent, fwd_bias;
  Var bwd_input, bwd_recurrent, bwd_bias;
  std::size_t char_window = 3;

  // Binding a const encoder yields constants (inference on a shared snapshot).
  template <typename Params>
  static EncoderVars bind(Tape& tape, Params& p) {
    return {tape.parameter(p.word_embeddings), tape.parameter(p.char_embeddings), tape.parameter(p.char_filters),
            tape.parameter(p.char_bias),       tape.parameter(p.fwd_input),       tape.parameter(p.fwd_recurrent),
            tape.parameter(p.fwd_bias),        tape.parameter(p.bwd_input),       tape.parameter(p.bwd_recurrent),
            tape.parameter(p.bwd_bias),        p.char_window};
  }
};

// Token indices of one sentence.
struct EncodedTokens {
  std::vector<std::size_t> words;
  std::vector<std::vector<std::size_t>> chars;

  std::size_t size() const noexcept { return words.size(); }
};

inline EncodedTokens index_tokens(const std::vector<std::string>& tokens, const Vocabulary& words,
                                  const Vocabulary& chars) {
  EncodedTokens out;
  for (const std::string& tok : tokens) {
    out.words.push_back(words.lookup(tok));
    std::vector<std::size_t> ids;
    for (const std::string& c : characters_of(tok)) ids.push_back(chars.lookup(c));
    out.chars.push_back(std::move(ids));
  }
  return out;
}

// Character CNN for one word: embed, convolve with the window, max-pool over
// positions. Words shorter than the window are PAD-extended on the right.
inline Var char_encode(const EncoderVars& vars, std::vector<std::size_t> char_ids) {
  while (char_ids.size() < vars.char_window) char_ids.push_back(Vocabulary::pad);
  Var embedded = ops::gather_rows(vars.chars, std::move(char_ids));
  Var responses = ops::conv1d_valid(embedded, vars.char_filters, vars.char_bias, vars.char_window);
  return ops::max_rows(responses);
}

// Context matrix H [n x rho]: rows are forward || backward LSTM states over
// S = word embedding || char representation. Dropout applies to H in training.
inline Var encode_sentence(const EncoderVars& vars, const EncodedTokens& tokens, ops::Mode mode, Real dropout_rate,
                           std::mt19937_64& rng) {
  if (tokens.size() == 0) throw ContractError("encode_sentence: empty sentence");
  Var word_rows = ops::gather_rows(vars.words, tokens.words);
  std::vector<Var> char_rows;
  char_rows.reserve(tokens.size());
  for (const auto& ids : tokens.chars) char_rows.push_back(char_encode(vars, ids));
  Var char_matrix = ops::concat_rows(char_rows);
  Var sentence = ops::concat_last({word_rows, char_matrix});
  Var forward = ops::lstm(sentence, vars.fwd_input, vars.fwd_recurrent, vars.fwd_bias, false);
  Var backward = ops::lstm(sentence, vars.bwd_input, vars.bwd_recurrent, vars.bwd_bias, true);
  Var hidden = ops::concat_last({forward, backward});
  return ops::dropout(hidden, dropout_rate, mode, rng);
}

}  // namespace relmetric
