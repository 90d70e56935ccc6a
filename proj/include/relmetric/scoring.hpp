#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "relmetric/corpus.hpp"
#include "relmetric/error.hpp"

namespace relmetric {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2 * p * r / (p + r);
  }

  Counts& operator+=(const Counts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;

  nlohmann::json to_json() const {
    return {{"tp", tp}, {"fp", fp}, {"fn", fn}, {"precision", precision()}, {"recall", recall()}, {"f1", f1()}};
  }
};

struct ScoreReport {
  Counts ner, re;
  std::map<std::string, Counts> ner_by_type, re_by_type;

  nlohmann::json to_json() const {
    nlohmann::json j{{"ner", ner.to_json()}, {"re", re.to_json()}};
    j["ner_by_type"] = nlohmann::json::object();
    j["re_by_type"] = nlohmann::json::object();
    for (const auto& [k, c] : ner_by_type) j["ner_by_type"][k] = c.to_json();
    for (const auto& [k, c] : re_by_type) j["re_by_type"][k] = c.to_json();
    return j;
  }
};

// Character-level view of an annotation, the unit of strict matching.
struct CharEntity {
  std::string type;
  std::size_t start = 0, end = 0;  // byte offsets, end exclusive
  auto operator<=>(const CharEntity&) const = default;
};

struct CharRelation {
  CharEntity subject, object;
  std::string predicate;
  auto operator<=>(const CharRelation&) const = default;
};

inline CharEntity char_entity(const SentenceExample& ex, const Entity& e) {
  const auto [s, t] = ex.char_span(e);
  return {e.type, s, t};
}

inline std::vector<CharEntity> char_entities(const SentenceExample& ex) {
  std::vector<CharEntity> out;
  for (const auto& e : ex.entities) out.push_back(char_entity(ex, e));
  return out;
}

inline std::vector<CharRelation> char_relations(const SentenceExample& ex) {
  std::vector<CharRelation> out;
  for (const auto& r : ex.relations) out.push_back({char_entity(ex, r.subject), char_entity(ex, r.object), r.predicate});
  return out;
}

namespace detail {

// Multiset matching on sorted copies.
template <typename T, typename Key>
void tally(std::vector<T> pred, std::vector<T> gold, Counts& total, std::map<std::string, Counts>& by, Key key) {
  std::sort(pred.begin(), pred.end());
  std::sort(gold.begin(), gold.end());
  auto p = pred.begin(), g = gold.begin();
  while (p != pred.end() || g != gold.end()) {
    if (g == gold.end() || (p != pred.end() && *p < *g)) {
      ++total.fp, ++by[key(*p)].fp, ++p;
    } else if (p == pred.end() || *g < *p) {
      ++total.fn, ++by[key(*g)].fn, ++g;
    } else {
      ++total.tp, ++by[key(*p)].tp, ++p, ++g;
    }
  }
}

inline void score_pair(const SentenceExample& pred, const SentenceExample& gold, ScoreReport& report) {
  tally(char_entities(pred), char_entities(gold), report.ner, report.ner_by_type,
        [](const CharEntity& e) { return e.type; });
  tally(char_relations(pred), char_relations(gold), report.re, report.re_by_type,
        [](const CharRelation& r) { return r.predicate; });
}

inline std::vector<std::pair<const SentenceExample*, const SentenceExample*>> align_by_id(
    const std::vector<SentenceExample>& predictions, const std::vector<SentenceExample>& gold) {
  std::unordered_map<std::string, const SentenceExample*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) throw ContractError("evaluate: duplicate prediction id '" + p.id + "'");
  }
  std::vector<std::pair<const SentenceExample*, const SentenceExample*>> out;
  for (const auto& g : gold) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw ContractError("evaluate: no prediction for sentence id '" + g.id + "'");
    out.emplace_back(it->second, &g);
    by_id.erase(it);
  }
  if (!by_id.empty()) {
    throw ContractError("evaluate: prediction id '" + by_id.begin()->first + "' has no gold sentence");
  }
  return out;
}

}  // namespace detail

// Micro-averaged strict-match scores. An entity matches on exact character
// span and type; a relation on both argument entities and the predicate.
inline ScoreReport evaluate(const std::vector<SentenceExample>& predictions, const std::vector<SentenceExample>& gold) {
  ScoreReport report;
  for (const auto& [p, g] : detail::align_by_id(predictions, gold)) detail::score_pair(*p, *g, report);
  return report;
}

enum class PartitionScheme { length, entity_distance, relation_type };

inline PartitionScheme parse_partition_scheme(const std::string& name) {
  if (name == "length") return PartitionScheme::length;
  if (name == "entity_distance") return PartitionScheme::entity_distance;
  if (name == "relation_type") return PartitionScheme::relation_type;
  throw ConfigError("unknown partition scheme '" + name + "' (expected length, entity_distance or relation_type)");
}

struct PartitionRow {
  std::string label;
  std::size_t items = 0;  // sentences (length) or gold relations (other schemes)
  ScoreReport report;
};

// Characters separating two entities: gap between the end of the earlier one
// and the start of the later one, zero if they touch.
inline std::size_t entity_distance(const CharEntity& a, const CharEntity& b) {
  const CharEntity& first = a.start <= b.start ? a : b;
  const CharEntity& second = a.start <= b.start ? b : a;
  return second.start > first.end ? second.start - first.end : 0;
}

// Per-bin scores.
//   length:          bins are thresholds; row k keeps sentences with at most bins[k] tokens (cumulative).
//   entity_distance: bins are edges; row k holds relations with distance in [bins[k], bins[k+1]).
//                    True and false negatives bin by the gold pair, false positives by the predicted pair.
//   relation_type:   bins unused; one row per predicate.
inline std::vector<PartitionRow> partition_analysis(const std::vector<SentenceExample>& predictions,
                                                    const std::vector<SentenceExample>& gold, PartitionScheme scheme,
                                                    const std::vector<double>& bins = {}) {
  const auto pairs = detail::align_by_id(predictions, gold);
  if (scheme != PartitionScheme::relation_type) {
    if (bins.empty() || (scheme == PartitionScheme::entity_distance && bins.size() < 2)) {
      throw ConfigError("partition_analysis: not enough bin edges");
    }
    for (std::size_t i = 1; i < bins.size(); ++i)
      if (!(bins[i] > bins[i - 1])) throw ConfigError("partition_analysis: bin edges must be strictly ascending");
    if (bins.front() < 0) throw ConfigError("partition_analysis: bin edges must be non-negative");
  }
  auto num = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  std::vector<PartitionRow> rows;
  switch (scheme) {
    case PartitionScheme::length:
      for (double k : bins) {
        PartitionRow row{"<=" + num(k), 0, {}};
        for (const auto& [p, g] : pairs) {
          if (static_cast<double>(g->size()) > k) continue;
          ++row.items;
          detail::score_pair(*p, *g, row.report);
        }
        rows.push_back(std::move(row));
      }
      break;
    case PartitionScheme::entity_distance: {
      for (std::size_t b = 0; b + 1 < bins.size(); ++b) rows.push_back({num(bins[b]) + "-" + num(bins[b + 1]), 0, {}});
      auto bin_of = [&](const CharRelation& r) -> long {
        const double d = static_cast<double>(entity_distance(r.subject, r.object));
        for (std::size_t b = 0; b + 1 < bins.size(); ++b)
          if (d >= bins[b] && d < bins[b + 1]) return static_cast<long>(b);
        return -1;
      };
      for (const auto& [p, g] : pairs) {
        std::vector<std::vector<CharRelation>> pb(rows.size()), gb(rows.size());
        for (const auto& r : char_relations(*p))
          if (long b = bin_of(r); b >= 0) pb[b].push_back(r);
        for (const auto& r : char_relations(*g))
          if (long b = bin_of(r); b >= 0) gb[b].push_back(r), ++rows[b].items;
        for (std::size_t b = 0; b < rows.size(); ++b)
          detail::tally(pb[b], gb[b], rows[b].report.re, rows[b].report.re_by_type,
                        [](const CharRelation& r) { return r.predicate; });
      }
      break;
    }
    case PartitionScheme::relation_type: {
      std::map<std::string, PartitionRow> by;
      for (const auto& [p, g] : pairs) {
        auto pr = char_relations(*p);
        auto gr = char_relations(*g);
        std::map<std::string, std::pair<std::vector<CharRelation>, std::vector<CharRelation>>> split;
        for (auto& r : pr) split[r.predicate].first.push_back(r);
        for (auto& r : gr) split[r.predicate].second.push_back(r);
        for (auto& [pred, lists] : split) {
          PartitionRow& row = by[pred];
          row.label = pred;
          row.items += lists.second.size();
          detail::tally(lists.first, lists.second, row.report.re, row.report.re_by_type,
                        [](const CharRelation& r) { return r.predicate; });
        }
      }
      for (auto& [k, row] : by) rows.push_back(std::move(row));
      break;
    }
  }
  return rows;
}

}  // namespace relmetric
