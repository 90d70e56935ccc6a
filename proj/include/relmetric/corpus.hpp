#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relmetric/error.hpp"
#include "relmetric/log.hpp"
#include "relmetric/table_codec.hpp"

namespace relmetric {

// Byte offsets into the sentence text; `end` is exclusive.
struct Token {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

struct DependencyArc {
  std::size_t head = 0;
  std::size_t dependent = 0;
  std::string tag;

  friend bool operator==(const DependencyArc&, const DependencyArc&) = default;
};

struct SentenceExample {
  std::string id;
  std::string text;
  std::vector<Token> tokens;
  std::vector<Entity> entities;
  std::vector<RelationTriple> relations;
  std::vector<DependencyArc> dep_edges;

  std::size_t size() const noexcept { return tokens.size(); }

  // Character span [start, end) covered by a token span.
  std::pair<std::size_t, std::size_t> char_span(const Entity& e) const {
    return {tokens.at(e.start).start, tokens.at(e.end).end};
  }

  std::vector<std::string> words() const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const Token& t : tokens) out.push_back(t.text);
    return out;
  }
};

struct CorpusSplit {
  std::vector<SentenceExample> train;
  std::vector<SentenceExample> dev;
  std::vector<SentenceExample> test;
};

enum class CorpusFormat { canonical, conll04, ade };

inline CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "canonical" || name == "jsonl") return CorpusFormat::canonical;
  if (name == "conll04") return CorpusFormat::conll04;
  if (name == "ade") return CorpusFormat::ade;
  throw ConfigError("unknown corpus format '" + std::string(name) + "' (expected canonical, conll04 or ade)");
}

// What to do with an annotated entity whose character span does not fall on
// token boundaries.
enum class AlignmentPolicy { repair, skip, abort };

struct IngestOptions {
  AlignmentPolicy alignment = AlignmentPolicy::repair;
  // When false a malformed record aborts the whole parse; otherwise it is
  // logged and skipped.
  bool skip_bad_records = false;
};

namespace detail {

inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (true) {
    const std::size_t next = s.find(sep, at);
    out.emplace_back(s.substr(at, next == std::string_view::npos ? std::string_view::npos : next - at));
    if (next == std::string_view::npos) break;
    at = next + 1;
  }
  return out;
}

}  // namespace detail

// Whitespace split, then leading and trailing punctuation runs of each chunk
// become their own tokens. A chunk made only of punctuation stays whole.
inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t len = text.size();
  while (i < len) {
    while (i < len && detail::is_space(text[i])) ++i;
    if (i >= len) break;
    std::size_t j = i;
    while (j < len && !detail::is_space(text[j])) ++j;
    std::size_t lead = i;
    while (lead < j && detail::is_punct(text[lead])) ++lead;
    if (lead == j) {
      out.push_back({std::string(text.substr(i, j - i)), i, j});
    } else {
      std::size_t trail = j;
      while (trail > lead && detail::is_punct(text[trail - 1])) --trail;
      if (lead > i) out.push_back({std::string(text.substr(i, lead - i)), i, lead});
      out.push_back({std::string(text.substr(lead, trail - lead)), lead, trail});
      if (trail < j) out.push_back({std::string(text.substr(trail, j - trail)), trail, j});
    }
    i = j;
  }
  if (out.empty()) throw IngestionError("tokenize: empty or whitespace-only text");
  return out;
}

// Maps a character span [start, end) onto the covering token span. Returns
// nullopt when no token overlaps it; `exact` reports whether both boundaries
// coincide with token boundaries.
struct Alignment {
  std::size_t first = 0;
  std::size_t last = 0;
  bool exact = false;
};

inline std::optional<Alignment> align_span(const std::vector<Token>& tokens, std::size_t start, std::size_t end) {
  std::optional<Alignment> out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t].end > start && tokens[t].start < end) {
      if (!out) out = Alignment{t, t, false};
      out->last = t;
    }
  }
  if (out) out->exact = tokens[out->first].start == start && tokens[out->last].end == end;
  return out;
}

namespace detail {

struct RawEntity {
  std::string type;
  std::size_t start = 0;  // character offsets, end exclusive
  std::size_t end = 0;
};

struct RawRelation {
  std::size_t subject = 0;
  std::size_t object = 0;
  std::string type;
};

// Builds a validated example from character-offset annotations.
inline SentenceExample assemble(std::string id, std::string text, std::vector<Token> tokens,
                                const std::vector<RawEntity>& raw_entities, const std::vector<RawRelation>& raw_relations,
                                const IngestOptions& options) {
  SentenceExample ex;
  ex.id = std::move(id);
  ex.text = std::move(text);
  ex.tokens = tokens.empty() ? tokenize(ex.text) : std::move(tokens);
  for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
    const Token& tok = ex.tokens[t];
    if (tok.start >= tok.end || tok.end > ex.text.size() || (t > 0 && tok.start < ex.tokens[t - 1].end)) {
      throw IngestionError("record '" + ex.id + "': token offsets overlap, are empty or out of range");
    }
  }
  std::vector<std::optional<Entity>> mapped;
  for (const RawEntity& re : raw_entities) {
    if (re.start >= re.end || re.end > ex.text.size()) {
      throw IngestionError("record '" + ex.id + "': entity offsets [" + std::to_string(re.start) + "," +
                           std::to_string(re.end) + ") out of range");
    }
    const auto al = align_span(ex.tokens, re.start, re.end);
    if (!al) throw IngestionError("record '" + ex.id + "': entity covers no token");
    if (!al->exact) {
      const std::string mention = ex.text.substr(re.start, re.end - re.start);
      switch (options.alignment) {
        case AlignmentPolicy::abort:
          throw IngestionError("record '" + ex.id + "': entity '" + mention + "' is not aligned to token boundaries");
        case AlignmentPolicy::skip:
          log::warn("record '", ex.id, "': dropping unaligned entity '", mention, "'");
          mapped.emplace_back(std::nullopt);
          continue;
        case AlignmentPolicy::repair:
          log::warn("record '", ex.id, "': entity '", mention, "' extended to covering token span");
          break;
      }
    }
    mapped.emplace_back(Entity{re.type, al->first, al->last});
  }
  for (const auto& e : mapped) {
    if (!e) continue;
    if (std::find(ex.entities.begin(), ex.entities.end(), *e) != ex.entities.end()) continue;
    for (const Entity& other : ex.entities) {
      if (e->start <= other.end && other.start <= e->end) {
        throw IngestionError("record '" + ex.id + "': overlapping entity spans");
      }
    }
    ex.entities.push_back(*e);
  }
  for (const RawRelation& rr : raw_relations) {
    if (rr.subject >= mapped.size() || rr.object >= mapped.size()) {
      throw IngestionError("record '" + ex.id + "': relation '" + rr.type + "' points to missing entity index");
    }
    if (!mapped[rr.subject] || !mapped[rr.object]) continue;  // endpoint dropped by alignment policy
    if (*mapped[rr.subject] == *mapped[rr.object]) {
      throw IngestionError("record '" + ex.id + "': relation '" + rr.type + "' links an entity to itself");
    }
    RelationTriple rel{*mapped[rr.subject], *mapped[rr.object], rr.type};
    if (std::find(ex.relations.begin(), ex.relations.end(), rel) == ex.relations.end()) ex.relations.push_back(rel);
  }
  std::sort(ex.entities.begin(), ex.entities.end(),
            [](const Entity& a, const Entity& b) { return a.start < b.start; });
  return ex;
}

template <typename Fn>
void guarded(const IngestOptions& options, Fn&& fn) {
  try {
    fn();
  } catch (const IngestionError& e) {
    if (!options.skip_bad_records) throw;
    log::warn("skipping record: ", e.what());
  }
}

}  // namespace detail

// Canonical format: one JSON object per line,
//   {"id", "text", "tokens"?: [{"start","end"}...], "entities": [{"type","start","end"}],
//    "relations": [{"subject","object","type"}]}
// Lines whose "kind" is present and not "sentence" are ignored (prediction
// files carry a run header).
inline std::vector<SentenceExample> parse_canonical(std::istream& in, const IngestOptions& options = {}) {
  std::vector<SentenceExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError("canonical corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (rec.contains("kind") && rec["kind"] != "sentence") continue;
    const std::string id = rec.value("id", "line-" + std::to_string(line_no));
    detail::guarded(options, [&] {
      try {
        if (!rec.contains("text")) throw IngestionError("record '" + id + "': missing text");
        std::string text = rec["text"].get<std::string>();
        std::vector<Token> tokens;
        if (rec.contains("tokens")) {
          for (const auto& t : rec["tokens"]) {
            Token tok;
            if (t.is_array()) {
              tok.start = t.at(0).get<std::size_t>();
              tok.end = t.at(1).get<std::size_t>();
            } else {
              tok.start = t.at("start").get<std::size_t>();
              tok.end = t.at("end").get<std::size_t>();
            }
            if (tok.end > text.size() || tok.start >= tok.end) {
              throw IngestionError("record '" + id + "': token offsets out of range");
            }
            tok.text = text.substr(tok.start, tok.end - tok.start);
            tokens.push_back(std::move(tok));
          }
        }
        std::vector<detail::RawEntity> ents;
        for (const auto& e : rec.value("entities", nlohmann::json::array())) {
          ents.push_back({e.at("type").get<std::string>(), e.at("start").get<std::size_t>(), e.at("end").get<std::size_t>()});
        }
        std::vector<detail::RawRelation> rels;
        for (const auto& r : rec.value("relations", nlohmann::json::array())) {
          rels.push_back({r.at("subject").get<std::size_t>(), r.at("object").get<std::size_t>(), r.at("type").get<std::string>()});
        }
        out.push_back(detail::assemble(id, std::move(text), std::move(tokens), ents, rels, options));
      } catch (const nlohmann::json::exception& e) {
        throw IngestionError("record '" + id + "': " + e.what());
      }
    });
  }
  return out;
}

namespace detail {

inline std::vector<std::string> parse_py_list(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::vector<std::string> out;
  for (std::string item : split(s, ',')) {
    item = trim(item);
    if (item.size() >= 2 && (item.front() == '\'' || item.front() == '"')) item = item.substr(1, item.size() - 2);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Chunks BIO / BILOU (also BIOES) tags into token spans.
inline std::vector<Entity> chunk_tags(const std::vector<std::string>& tags) {
  std::vector<Entity> out;
  std::optional<Entity> open;
  auto close = [&] {
    if (open) out.push_back(*open);
    open.reset();
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    if (tag == "O" || tag.size() < 3 || tag[1] != '-') {
      close();
      continue;
    }
    const char prefix = tag[0];
    const std::string type = tag.substr(2);
    const bool continues = open && open->type == type && open->end + 1 == i;
    switch (prefix) {
      case 'B':
        close();
        open = Entity{type, i, i};
        break;
      case 'I':
        if (continues) open->end = i;
        else { close(); open = Entity{type, i, i}; }
        break;
      case 'L':
      case 'E':
        if (continues) open->end = i;
        else { close(); open = Entity{type, i, i}; }
        close();
        break;
      case 'U':
      case 'S':
        close();
        out.push_back({type, i, i});
        break;
      default:
        close();
    }
  }
  close();
  return out;
}

}  // namespace detail

// Column layout used by the established CoNLL04 split: a "#doc <id>" line
// opens each sentence, followed by tab-separated token rows
//   index  token  tag  ['rel', ...]  [head, ...]
// A relation on token i with head h links the entity containing i (subject)
// to the entity containing h (object); 'N' means no relation.
inline std::vector<SentenceExample> parse_conll04(std::istream& in, const IngestOptions& options = {}) {
  std::vector<SentenceExample> out;
  struct Row {
    std::string token, tag;
    std::vector<std::string> rels;
    std::vector<std::string> heads;
  };
  std::string doc_id;
  std::vector<Row> rows;
  std::size_t doc_counter = 0;
  auto flush = [&] {
    if (rows.empty()) return;
    const std::string id = doc_id.empty() ? "doc-" + std::to_string(doc_counter) : doc_id;
    detail::guarded(options, [&] {
      SentenceExample ex;
      ex.id = id;
      std::vector<std::string> tags;
      for (const Row& r : rows) {
        if (!ex.text.empty()) ex.text += ' ';
        const std::size_t start = ex.text.size();
        ex.text += r.token;
        ex.tokens.push_back({r.token, start, ex.text.size()});
        tags.push_back(r.tag);
      }
      ex.entities = detail::chunk_tags(tags);
      auto owner = [&](std::size_t tok) -> const Entity* {
        for (const Entity& e : ex.entities)
          if (e.start <= tok && tok <= e.end) return &e;
        return nullptr;
      };
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const Row& r = rows[i];
        if (r.rels.size() != r.heads.size()) {
          throw IngestionError("record '" + id + "': relation and head lists differ in length at token " +
                               std::to_string(i));
        }
        for (std::size_t k = 0; k < r.rels.size(); ++k) {
          if (r.rels[k] == "N") continue;
          std::size_t head = 0;
          try {
            head = std::stoul(r.heads[k]);
          } catch (const std::exception&) {
            throw IngestionError("record '" + id + "': bad head index '" + r.heads[k] + "'");
          }
          const Entity* subj = owner(i);
          const Entity* obj = head < rows.size() ? owner(head) : nullptr;
          if (!subj || !obj) {
            throw IngestionError("record '" + id + "': relation '" + r.rels[k] + "' points to missing entity");
          }
          RelationTriple rel{*subj, *obj, r.rels[k]};
          if (rel.subject == rel.object) continue;
          if (std::find(ex.relations.begin(), ex.relations.end(), rel) == ex.relations.end())
            ex.relations.push_back(rel);
        }
      }
      out.push_back(std::move(ex));
    });
    rows.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#doc", 0) == 0) {
      flush();
      ++doc_counter;
      doc_id = detail::trim(line.substr(4));
      continue;
    }
    if (detail::trim(line).empty()) continue;
    const auto cols = detail::split(line, '\t');
    if (cols.size() < 3) throw IngestionError("conll04: malformed row '" + line + "' in '" + doc_id + "'");
    Row r{cols[1], cols[2], {}, {}};
    if (cols.size() >= 5) {
      r.rels = detail::parse_py_list(cols[3]);
      r.heads = detail::parse_py_list(cols[4]);
    }
    rows.push_back(std::move(r));
  }
  flush();
  return out;
}

// ADE relation file (DRUG-AE.rel): pipe-separated
//   pmid | sentence | effect | begin | end | drug | begin | end
// Offsets in that file are document-level, so mentions are located in the
// sentence by string search. Duplicated sentences are collapsed; relations
// whose entities overlap (nested annotations) are removed.
inline std::vector<SentenceExample> parse_ade(std::istream& in, const IngestOptions& options = {}) {
  struct Pending {
    std::string pmid, text;
    std::vector<std::pair<detail::RawEntity, detail::RawEntity>> pairs;  // (effect, drug)
  };
  std::vector<Pending> sentences;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  std::size_t unresolved = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto cols = detail::split(line, '|');
    if (cols.size() < 8) throw IngestionError("ade: line " + std::to_string(line_no) + " has fewer than 8 fields");
    const std::size_t m = cols.size();
    std::string text = cols[1];
    for (std::size_t c = 2; c + 6 < m; ++c) text += "|" + cols[c];
    const std::string pmid = detail::trim(cols[0]);
    const std::string effect = cols[m - 6], drug = cols[m - 3];
    auto key = std::make_pair(pmid, text);
    auto [it, fresh] = index.emplace(key, sentences.size());
    if (fresh) sentences.push_back({pmid, text, {}});
    const std::size_t e_at = text.find(effect), d_at = text.find(drug);
    if (effect.empty() || drug.empty() || e_at == std::string::npos || d_at == std::string::npos) {
      ++unresolved;
      continue;
    }
    sentences[it->second].pairs.push_back({{"Disease", e_at, e_at + effect.size()}, {"Drug", d_at, d_at + drug.size()}});
  }
  if (unresolved) log::warn("ade: ", unresolved, " relation rows whose mentions were not found in the sentence");

  std::vector<SentenceExample> out;
  std::map<std::string, std::size_t> per_doc;
  std::size_t nested = 0;
  for (Pending& p : sentences) {
    const std::string id = p.pmid + "-" + std::to_string(per_doc[p.pmid]++);
    detail::guarded(options, [&] {
      std::vector<detail::RawEntity> ents;
      std::vector<detail::RawRelation> rels;
      auto overlaps = [](const detail::RawEntity& a, const detail::RawEntity& b) {
        return a.start < b.end && b.start < a.end;
      };
      auto same = [](const detail::RawEntity& a, const detail::RawEntity& b) {
        return a.type == b.type && a.start == b.start && a.end == b.end;
      };
      for (const auto& [effect, drug] : p.pairs) {
        bool conflict = overlaps(effect, drug);
        for (const auto& e : ents)
          if ((overlaps(e, effect) && !same(e, effect)) || (overlaps(e, drug) && !same(e, drug))) conflict = true;
        if (conflict) {
          ++nested;
          continue;
        }
        auto find_or_add = [&](const detail::RawEntity& x) {
          for (std::size_t i = 0; i < ents.size(); ++i)
            if (same(ents[i], x)) return i;
          ents.push_back(x);
          return ents.size() - 1;
        };
        const std::size_t s = find_or_add(effect), o = find_or_add(drug);
        rels.push_back({s, o, "Adverse_Effect"});
      }
      out.push_back(detail::assemble(id, p.text, {}, ents, rels, options));
    });
  }
  if (nested) log::info("ade: removed ", nested, " relations with nested or overlapping entity annotations");
  return out;
}

inline std::vector<SentenceExample> parse_corpus(std::istream& in, CorpusFormat format, const IngestOptions& options = {}) {
  switch (format) {
    case CorpusFormat::canonical: return parse_canonical(in, options);
    case CorpusFormat::conll04: return parse_conll04(in, options);
    case CorpusFormat::ade: return parse_ade(in, options);
  }
  return {};
}

inline std::vector<SentenceExample> parse_corpus(const std::string& path, CorpusFormat format,
                                                 const IngestOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open corpus file '" + path + "'");
  return parse_corpus(in, format, options);
}

// Canonical JSON record for an example (the inverse of parse_canonical).
inline nlohmann::json to_canonical_json(const SentenceExample& ex) {
  nlohmann::json rec;
  rec["id"] = ex.id;
  rec["text"] = ex.text;
  rec["tokens"] = nlohmann::json::array();
  for (const Token& t : ex.tokens) rec["tokens"].push_back({{"start", t.start}, {"end", t.end}});
  rec["entities"] = nlohmann::json::array();
  for (const Entity& e : ex.entities) {
    const auto [cs, ce] = ex.char_span(e);
    rec["entities"].push_back({{"type", e.type}, {"start", cs}, {"end", ce}});
  }
  auto index_of = [&](const Entity& e) {
    return static_cast<std::size_t>(std::find(ex.entities.begin(), ex.entities.end(), e) - ex.entities.begin());
  };
  rec["relations"] = nlohmann::json::array();
  for (const RelationTriple& r : ex.relations) {
    rec["relations"].push_back({{"subject", index_of(r.subject)}, {"object", index_of(r.object)}, {"type", r.predicate}});
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Dependency sidecar: one block per sentence, blocks separated by blank lines.
//   # <sentence id> <token count>
//   <head index> <dependent index> <tag>
//   ...

struct ParseBlock {
  std::size_t token_count = 0;
  std::vector<DependencyArc> arcs;
};

using ParseSidecar = std::unordered_map<std::string, ParseBlock>;

inline ParseSidecar read_parse_sidecar(std::istream& in) {
  ParseSidecar out;
  std::string line, current;
  std::size_t line_no = 0;
  bool open = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) {
      open = false;
      continue;
    }
    std::istringstream fields(t);
    if (t[0] == '#') {
      std::string hash;
      ParseBlock block;
      if (!(fields >> hash >> current >> block.token_count)) {
        throw IngestionError("parse sidecar line " + std::to_string(line_no) + ": expected '# <id> <token count>'");
      }
      if (!out.emplace(current, std::move(block)).second) {
        throw IngestionError("parse sidecar: duplicate block for sentence '" + current + "'");
      }
      open = true;
      continue;
    }
    if (!open) throw IngestionError("parse sidecar line " + std::to_string(line_no) + ": edge row outside a block");
    long head = 0, dep = 0;
    std::string tag;
    if (!(fields >> head >> dep >> tag) || head < 0 || dep < 0) {
      throw IngestionError("parse sidecar line " + std::to_string(line_no) + ": expected '<head> <dependent> <tag>'");
    }
    out[current].arcs.push_back({static_cast<std::size_t>(head), static_cast<std::size_t>(dep), tag});
  }
  return out;
}

inline ParseSidecar read_parse_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open parse sidecar '" + path + "'");
  return read_parse_sidecar(in);
}

// Attaches the sidecar block of the example. A missing block leaves the
// example without edges.
inline void attach_parse(SentenceExample& ex, const ParseBlock* block) {
  ex.dep_edges.clear();
  if (!block) {
    log::warn("no dependency parse for sentence '", ex.id, "'; using the null relation everywhere");
    return;
  }
  if (block->token_count != ex.size()) {
    throw IngestionError("parse alignment: sentence '" + ex.id + "' has " + std::to_string(ex.size()) +
                         " tokens but its parse has " + std::to_string(block->token_count));
  }
  for (const DependencyArc& a : block->arcs) {
    if (a.head >= ex.size() || a.dependent >= ex.size()) {
      throw IngestionError("parse alignment: sentence '" + ex.id + "' has an edge outside the token range");
    }
    ex.dep_edges.push_back(a);
  }
}

inline void attach_parses(std::vector<SentenceExample>& examples, const ParseSidecar& sidecar) {
  for (SentenceExample& ex : examples) {
    auto it = sidecar.find(ex.id);
    attach_parse(ex, it == sidecar.end() ? nullptr : &it->second);
  }
}

// ---------------------------------------------------------------------------
// Deterministic k-fold assignment: hash(sentence id, seed) mod k.

inline std::uint64_t fold_hash(std::string_view id, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  // splitmix finalizer spreads the low bits used by the modulus
  h ^= h >> 30;
  h *= 0xBF58476D1CE4E5B9ULL;
  h ^= h >> 27;
  h *= 0x94D049BB133111EBULL;
  h ^= h >> 31;
  return h;
}

inline std::vector<std::size_t> assign_folds(const std::vector<SentenceExample>& examples, std::size_t k,
                                             std::uint64_t seed) {
  if (k < 2) throw ConfigError("folds: k must be at least 2");
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const SentenceExample& ex : examples) out.push_back(fold_hash(ex.id, seed) % k);
  return out;
}

// Train/test partition for one fold; dev is left empty.
inline CorpusSplit fold_split(const std::vector<SentenceExample>& examples, std::size_t k, std::size_t fold,
                              std::uint64_t seed) {
  if (fold >= k) throw ConfigError("folds: fold index out of range");
  const auto folds = assign_folds(examples, k, seed);
  CorpusSplit split;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    (folds[i] == fold ? split.test : split.train).push_back(examples[i]);
  }
  return split;
}

}  // namespace relmetric
