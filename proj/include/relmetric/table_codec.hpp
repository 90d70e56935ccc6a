#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relmetric/error.hpp"
#include "relmetric/log.hpp"
#include "relmetric/tensor.hpp"

namespace relmetric {

// Token span [start, end] (both inclusive) with an entity type.
struct Entity {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;

  friend auto operator<=>(const Entity&, const Entity&) = default;
};

// Directed relation subject -> object.
struct RelationTriple {
  Entity subject;
  Entity object;
  std::string predicate;

  friend auto operator<=>(const RelationTriple&, const RelationTriple&) = default;
};

enum class TagKind { outside, begin, inside, last, unit, relation };

struct Tag {
  TagKind kind = TagKind::outside;
  std::size_t type = 0;  // entity-type or relation-type index
};

// Unified tag inventory of the table: index 0 is O, then B/I/L/U for each
// entity type in declaration order, then one tag per relation type.
class LabelSpace {
 public:
  LabelSpace() : LabelSpace({}, {}) {}

  LabelSpace(std::vector<std::string> entity_types, std::vector<std::string> relation_types)
      : entity_types_(std::move(entity_types)), relation_types_(std::move(relation_types)) {
    auto check_unique = [](const std::vector<std::string>& names, const char* what) {
      std::unordered_map<std::string, std::size_t> seen;
      for (const auto& name : names) {
        if (name.empty()) throw ConfigError(std::string("label space: empty ") + what + " name");
        if (!seen.emplace(name, seen.size()).second) {
          throw ConfigError(std::string("label space: duplicate ") + what + " '" + name + "'");
        }
      }
      return seen;
    };
    entity_index_ = check_unique(entity_types_, "entity type");
    relation_index_ = check_unique(relation_types_, "relation type");
  }

  // |Z| = 4 * n_ent + n_rel + 1
  std::size_t size() const noexcept { return 4 * entity_types_.size() + relation_types_.size() + 1; }

  const std::vector<std::string>& entity_types() const noexcept { return entity_types_; }
  const std::vector<std::string>& relation_types() const noexcept { return relation_types_; }

  std::optional<std::size_t> entity_type_index(const std::string& name) const {
    auto it = entity_index_.find(name);
    return it == entity_index_.end() ? std::nullopt : std::optional(it->second);
  }
  std::optional<std::size_t> relation_type_index(const std::string& name) const {
    auto it = relation_index_.find(name);
    return it == relation_index_.end() ? std::nullopt : std::optional(it->second);
  }

  static constexpr std::size_t outside() noexcept { return 0; }

  std::size_t entity_tag(TagKind kind, std::size_t type) const {
    if (type >= entity_types_.size()) throw ContractError("label space: entity type index out of range");
    switch (kind) {
      case TagKind::begin: return 1 + 4 * type;
      case TagKind::inside: return 2 + 4 * type;
      case TagKind::last: return 3 + 4 * type;
      case TagKind::unit: return 4 + 4 * type;
      default: throw ContractError("label space: not an entity tag kind");
    }
  }

  std::size_t relation_tag(std::size_t type) const {
    if (type >= relation_types_.size()) throw ContractError("label space: relation type index out of range");
    return 1 + 4 * entity_types_.size() + type;
  }

  Tag tag(std::size_t index) const {
    if (index >= size()) throw ContractError("label space: tag index " + std::to_string(index) + " out of range");
    if (index == 0) return {};
    const std::size_t ent_end = 1 + 4 * entity_types_.size();
    if (index < ent_end) {
      static constexpr TagKind kinds[] = {TagKind::begin, TagKind::inside, TagKind::last, TagKind::unit};
      return {kinds[(index - 1) % 4], (index - 1) / 4};
    }
    return {TagKind::relation, index - ent_end};
  }

  bool is_relation_tag(std::size_t index) const { return index < size() && tag(index).kind == TagKind::relation; }

  std::string tag_name(std::size_t index) const {
    const Tag t = tag(index);
    switch (t.kind) {
      case TagKind::outside: return "O";
      case TagKind::begin: return "B-" + entity_types_[t.type];
      case TagKind::inside: return "I-" + entity_types_[t.type];
      case TagKind::last: return "L-" + entity_types_[t.type];
      case TagKind::unit: return "U-" + entity_types_[t.type];
      case TagKind::relation: return relation_types_[t.type];
    }
    return "O";
  }

  friend bool operator==(const LabelSpace& a, const LabelSpace& b) {
    return a.entity_types_ == b.entity_types_ && a.relation_types_ == b.relation_types_;
  }

 private:
  std::vector<std::string> entity_types_;
  std::vector<std::string> relation_types_;
  std::unordered_map<std::string, std::size_t> entity_index_;
  std::unordered_map<std::string, std::size_t> relation_index_;
};

inline LabelSpace build_label_space(std::vector<std::string> entity_types, std::vector<std::string> relation_types) {
  return LabelSpace(std::move(entity_types), std::move(relation_types));
}

// n x n tag indices, row-major.
struct TagTable {
  std::size_t n = 0;
  std::vector<std::size_t> cells;

  std::size_t at(std::size_t i, std::size_t j) const { return cells[i * n + j]; }
  std::size_t& at(std::size_t i, std::size_t j) { return cells[i * n + j]; }

  std::vector<std::size_t> diagonal() const {
    std::vector<std::size_t> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = at(i, i);
    return d;
  }
};

inline TagTable encode_table(const std::vector<Entity>& entities, const std::vector<RelationTriple>& relations,
                             std::size_t n, const LabelSpace& labels) {
  TagTable table{n, std::vector<std::size_t>(n * n, LabelSpace::outside())};
  std::vector<const Entity*> owner(n, nullptr);
  for (const Entity& e : entities) {
    if (e.start > e.end || e.end >= n) {
      throw EncodingError("encode_table: entity span [" + std::to_string(e.start) + "," + std::to_string(e.end) +
                          "] outside sentence of length " + std::to_string(n));
    }
    const auto type = labels.entity_type_index(e.type);
    if (!type) throw EncodingError("encode_table: unknown entity type '" + e.type + "'");
    for (std::size_t i = e.start; i <= e.end; ++i) {
      if (owner[i]) {
        if (*owner[i] == e) break;  // duplicate annotation of the same entity
        throw EncodingError("encode_table: overlapping entity spans at token " + std::to_string(i));
      }
      owner[i] = &e;
    }
    if (e.start == e.end) {
      table.at(e.start, e.start) = labels.entity_tag(TagKind::unit, *type);
    } else {
      table.at(e.start, e.start) = labels.entity_tag(TagKind::begin, *type);
      for (std::size_t i = e.start + 1; i < e.end; ++i) table.at(i, i) = labels.entity_tag(TagKind::inside, *type);
      table.at(e.end, e.end) = labels.entity_tag(TagKind::last, *type);
    }
  }
  auto known = [&](const Entity& e) { return std::find(entities.begin(), entities.end(), e) != entities.end(); };
  for (const RelationTriple& r : relations) {
    if (!known(r.subject) || !known(r.object)) {
      throw EncodingError("encode_table: relation '" + r.predicate + "' references an entity not in the entity set");
    }
    if (r.subject == r.object) throw EncodingError("encode_table: self-relation '" + r.predicate + "'");
    const auto type = labels.relation_type_index(r.predicate);
    if (!type) throw EncodingError("encode_table: unknown relation type '" + r.predicate + "'");
    const std::size_t tag = labels.relation_tag(*type);
    bool clobbered = false;
    for (std::size_t i = r.subject.start; i <= r.subject.end; ++i) {
      for (std::size_t j = r.object.start; j <= r.object.end; ++j) {
        std::size_t& cell = table.at(i, j);
        if (cell != LabelSpace::outside() && cell != tag) clobbered = true;
        cell = tag;
      }
    }
    if (clobbered) log::warn("encode_table: relation '", r.predicate, "' overwrote an existing relation block");
  }
  return table;
}

// Strict BILOU automaton over the diagonal: U-t, or B-t (I-t)* L-t. Anything
// that does not complete such a segment is dropped.
inline std::vector<Entity> decode_entities(std::span<const std::size_t> diagonal, const LabelSpace& labels) {
  std::vector<Entity> out;
  const std::size_t n = diagonal.size();
  std::size_t i = 0;
  while (i < n) {
    const Tag t = labels.tag(diagonal[i]);
    if (t.kind == TagKind::unit) {
      out.push_back({labels.entity_types()[t.type], i, i});
      ++i;
      continue;
    }
    if (t.kind == TagKind::begin) {
      std::size_t j = i + 1;
      while (j < n) {
        const Tag u = labels.tag(diagonal[j]);
        if (u.kind == TagKind::inside && u.type == t.type) {
          ++j;
          continue;
        }
        break;
      }
      if (j < n) {
        const Tag u = labels.tag(diagonal[j]);
        if (u.kind == TagKind::last && u.type == t.type) {
          out.push_back({labels.entity_types()[t.type], i, j});
          i = j + 1;
          continue;
        }
      }
    }
    ++i;
  }
  return out;
}

// Per-cell argmax along the tag axis of a probability table (lowest index on ties).
inline std::vector<std::size_t> argmax_diagonal(const Tensor& probs) {
  const std::size_t n = probs.dim(0), z = probs.dim(2);
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* cell = probs.data() + (i * n + i) * z;
    diag[i] = static_cast<std::size_t>(std::max_element(cell, cell + z) - cell);
  }
  return diag;
}

// Block-argmax relation decoding: for each ordered pair of distinct entities,
// sum Q over the subject-rows x object-columns block and take the argmax tag
// (lowest index on ties). Only relation tags produce a triple.
inline std::vector<RelationTriple> decode_relations(const Tensor& probs, const std::vector<Entity>& entities,
                                                    const LabelSpace& labels) {
  if (probs.rank() != 3 || probs.dim(0) != probs.dim(1)) {
    throw ContractError("decode_relations: probability table must be n x n x |Z|, got " + shape_string(probs.shape()));
  }
  const std::size_t n = probs.dim(0), z = probs.dim(2);
  if (z != labels.size()) throw ContractError("decode_relations: tag axis does not match label space");
  for (const Entity& e : entities) {
    if (e.start > e.end || e.end >= n) throw ContractError("decode_relations: entity span out of range");
  }
  std::vector<RelationTriple> out;
  std::vector<Real> block(z);
  for (const Entity& a : entities) {
    for (const Entity& b : entities) {
      if (a == b) continue;
      std::fill(block.begin(), block.end(), Real{0});
      for (std::size_t i = a.start; i <= a.end; ++i)
        for (std::size_t j = b.start; j <= b.end; ++j) {
          const Real* cell = probs.data() + (i * n + j) * z;
          for (std::size_t k = 0; k < z; ++k) block[k] += cell[k];
        }
      const auto best = static_cast<std::size_t>(std::max_element(block.begin(), block.end()) - block.begin());
      const Tag t = labels.tag(best);
      if (t.kind == TagKind::relation) out.push_back({a, b, labels.relation_types()[t.type]});
    }
  }
  return out;
}

// One-hot target tensor n x n x |Z| for a tag table.
inline Tensor one_hot(const TagTable& table, const LabelSpace& labels) {
  const std::size_t z = labels.size();
  Tensor y({table.n, table.n, z});
  for (std::size_t c = 0; c < table.cells.size(); ++c) y[c * z + table.cells[c]] = Real{1};
  return y;
}

}  // namespace relmetric
