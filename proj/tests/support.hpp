#pragma once

// Shared fixtures: a small synthetic corpus with two entity and two relation
// types, and a central-difference gradient checker.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "relmetric/relmetric.hpp"

namespace relmetric::testing {

// Builds an example from a template like "{P} works for {O} ." by substituting
// names, tokenizing, and locating the substituted spans.
inline SentenceExample instantiate(const std::string& id, const std::string& pattern,
                                   const std::vector<std::pair<std::string, std::string>>& fills,  // slot -> surface
                                   const std::vector<std::string>& types,
                                   const std::vector<std::tuple<std::size_t, std::size_t, std::string>>& rels) {
  std::string text;
  std::vector<std::pair<std::size_t, std::size_t>> spans(fills.size());
  std::size_t pos = 0;
  while (pos < pattern.size()) {
    bool hit = false;
    for (std::size_t f = 0; f < fills.size(); ++f) {
      const auto& [slot, surface] = fills[f];
      if (pattern.compare(pos, slot.size(), slot) == 0) {
        spans[f] = {text.size(), text.size() + surface.size()};
        text += surface;
        pos += slot.size();
        hit = true;
        break;
      }
    }
    if (!hit) text += pattern[pos++];
  }
  std::ostringstream rec;
  nlohmann::json j{{"id", id}, {"text", text}};
  j["entities"] = nlohmann::json::array();
  for (std::size_t f = 0; f < fills.size(); ++f)
    j["entities"].push_back({{"type", types[f]}, {"start", spans[f].first}, {"end", spans[f].second}});
  j["relations"] = nlohmann::json::array();
  for (const auto& [s, o, p] : rels) j["relations"].push_back({{"subject", s}, {"object", o}, {"type", p}});
  std::istringstream in(j.dump());
  IngestOptions strict;
  strict.alignment = AlignmentPolicy::abort;
  auto out = parse_canonical(in, strict);
  SentenceExample ex = out.at(0);
  for (std::size_t i = 1; i < ex.size(); ++i) ex.dep_edges.push_back({i - 1, i, i % 2 ? "left" : "right"});
  return ex;
}

// Deterministic corpus: people (Per) and organisations (Org); relations
// Works_For and Founded, both Per -> Org.
inline std::vector<SentenceExample> synthetic_corpus(std::size_t count, std::uint64_t seed = 7) {
  static const std::vector<std::string> people = {"Anna Berg", "Tom",         "Lisa Marie Holt", "Omar",
                                                  "Yuki Tanaka", "Carl Jensen", "Mia",           "Pedro Alves"};
  static const std::vector<std::string> orgs = {"Acme", "Globex Corp", "Initech", "Umbrella Labs", "Stark Industries",
                                                "Hooli"};
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  std::vector<SentenceExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = "syn-" + std::to_string(i);
    std::string p = pick(people), p2 = pick(people), o = pick(orgs), o2 = pick(orgs);
    while (p2 == p) p2 = pick(people);
    while (o2 == o) o2 = pick(orgs);
    switch (i % 6) {
      case 0:
        out.push_back(instantiate(id, "{P} works for {O} .", {{"{P}", p}, {"{O}", o}}, {"Per", "Org"},
                                  {{0, 1, "Works_For"}}));
        break;
      case 1:
        out.push_back(instantiate(id, "{P} founded {O} in 1999 .", {{"{P}", p}, {"{O}", o}}, {"Per", "Org"},
                                  {{0, 1, "Founded"}}));
        break;
      case 2:
        out.push_back(instantiate(id, "Yesterday , {P} said that {Q} works for {O} .",
                                  {{"{P}", p}, {"{Q}", p2}, {"{O}", o}}, {"Per", "Per", "Org"},
                                  {{1, 2, "Works_For"}}));
        break;
      case 3:
        out.push_back(instantiate(id, "{O} was founded by {P} .", {{"{O}", o}, {"{P}", p}}, {"Org", "Per"},
                                  {{1, 0, "Founded"}}));
        break;
      case 4:
        out.push_back(instantiate(id, "{P} and {Q} visited {O} .", {{"{P}", p}, {"{Q}", p2}, {"{O}", o}},
                                  {"Per", "Per", "Org"}, {}));
        break;
      default:
        out.push_back(instantiate(id, "{P} , who founded {O} , works for {R} .",
                                  {{"{P}", p}, {"{O}", o}, {"{R}", o2}}, {"Per", "Org", "Org"},
                                  {{0, 1, "Founded"}, {0, 2, "Works_For"}}));
        break;
    }
  }
  return out;
}

inline LabelSpace synthetic_labels() { return LabelSpace({"Per", "Org"}, {"Works_For", "Founded"}); }

// Small configuration for fast model-level tests.
inline TrainConfig tiny_config() {
  TrainConfig c;
  c.channels = 3;
  c.layers = 2;
  c.char_embedding_size = 3;
  c.char_representation_size = 4;
  c.position_embedding_size = 2;
  c.dependency_embedding_size = 2;
  c.word_embedding_size = 4;
  c.context_size = 6;
  c.epochs = 2;
  return c;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (Real& v : t.values()) v = d(rng);
  return t;
}

// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0 ? 0.0 : std::sqrt(diff) / scale;
}

// Central differences of a scalar function of `x`.
inline Tensor numeric_gradient(const std::function<double()>& f, Tensor& x, double step = 1e-3,
                               const std::vector<std::size_t>* coords = nullptr) {
  Tensor g = Tensor::zeros_like(x);
  auto probe = [&](std::size_t i) {
    const Real saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * step);
  };
  if (coords) {
    for (std::size_t i : *coords) probe(i);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) probe(i);
  }
  return g;
}

// Random linear functional of an op's output, so every output element
// contributes to the checked scalar.
inline Var project(Tape& tape, Var out, const Tensor& weights) {
  const Tensor& v = tape.value(out);
  if (v.size() != weights.size()) throw ShapeError("project: size mismatch");
  Tensor w = weights;
  return tape.record(Tensor::scalar([&] {
                       Real s = 0;
                       for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
                       return s;
                     }()),
                     {out}, [out, w](Tape& t, const Tensor& g) {
                       if (Tensor* gi = t.grad_buffer(out))
                         for (std::size_t i = 0; i < gi->size(); ++i) (*gi)[i] += g[0] * w[i];
                     });
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Worst relative error between backprop and central differences over every
// input of `build`, checked through a random projection of its output.
inline double check_gradients(const Builder& build, std::vector<Tensor> inputs, std::mt19937_64& rng,
                              double step = 1e-3) {
  Tensor weights;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(probe.constant(x));
    weights = random_tensor(probe.value(build(probe, vars)).shape(), rng);
  }
  auto eval = [&] {
    Tape t;
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(t.constant(x));
    return static_cast<double>(t.value(project(t, build(t, vars), weights))[0]);
  };
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& x : inputs) vars.push_back(tape.variable(x));
  tape.backward(project(tape, build(tape, vars), weights));
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor* g = tape.grad(vars[i]);
    const Tensor analytic = g ? *g : Tensor::zeros_like(inputs[i]);
    const Tensor numeric = numeric_gradient(eval, inputs[i], step);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

// Values bounded away from zero, so relu kinks stay outside the probe step.
inline Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double margin = 0.05) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (Real& v : t.values()) v = v < 0 ? v - margin : v + margin;
  return t;
}

}  // namespace relmetric::testing
