#include "bagre/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace bagre {

using nlohmann::json;

std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::kOriginal: return "original";
    case Origin::kSynthValid: return "synth_valid";
    case Origin::kSynthNoisy: return "synth_noisy";
  }
  return "?";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Origin parse_origin(std::string_view s) {
  if (s == "original") return Origin::kOriginal;
  if (s == "synth_valid") return Origin::kSynthValid;
  if (s == "synth_noisy") return Origin::kSynthNoisy;
  throw Error("unknown origin '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw Error("unknown split tag '" + std::string(s) + "'");
}

std::size_t Dataset::num_sentences() const {
  std::size_t n = 0;
  for (const auto& b : bags) n += b.size();
  return n;
}

void validate_sentence(const Sentence& s, std::int32_t vocab_size) {
  const int n = static_cast<int>(s.tokens.size());
  for (const Span* sp : {&s.head, &s.tail}) {
    if (sp->size() <= 0) throw Error("empty mention span");
    if (sp->begin < 0 || sp->end > n) throw Error("mention span out of bounds");
  }
  if (s.head.overlaps(s.tail)) throw Error("head and tail spans overlap");
  for (TokenId t : s.tokens) {
    if (t < 0 || t >= vocab_size) throw Error("token id " + std::to_string(t) + " outside vocabulary");
  }
  if (s.z == AttentionLabel::kValid && s.origin == Origin::kSynthNoisy)
    throw Error("valid sentence with synth_noisy origin");
  if (s.z == AttentionLabel::kNoisy && s.origin != Origin::kSynthNoisy)
    throw Error("noisy sentence must have synth_noisy origin");
}

void validate_dataset(const Dataset& d) {
  std::unordered_set<BagId> ids;
  for (const auto& b : d.bags) {
    if (!ids.insert(b.id).second) throw Error("duplicate bag id " + std::to_string(b.id));
    if (b.relation < 0 || b.relation >= d.num_relations())
      throw Error("bag " + std::to_string(b.id) + " references unknown relation");
    if (b.sentences.empty()) throw Error("bag " + std::to_string(b.id) + " is empty");
    for (const auto& s : b.sentences) {
      if (s.relation != b.relation) throw Error("sentence relation differs from bag relation");
      validate_sentence(s, d.vocab_size);
    }
  }
  for (int i = 0; i < d.num_relations(); ++i) {
    if (d.relations[i].id != i) throw Error("relation ids must be dense and ordered");
  }
}

namespace {

bool sentence_noisy(const Sentence& s) {
  if (s.z == AttentionLabel::kUnknown) throw Error("unlabeled noise status");
  return s.z == AttentionLabel::kNoisy;
}

}  // namespace

Ratio noise_ratio(const Dataset& d) {
  std::int64_t noisy = 0;
  std::int64_t total = 0;
  for (const auto& b : d.bags) {
    for (const auto& s : b.sentences) {
      noisy += sentence_noisy(s) ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw Error("no sentences");
  return Ratio(noisy, total);
}

bool is_disturbing(const Bag& b) {
  bool all_noisy = true;
  bool all_valid = true;
  for (const auto& s : b.sentences) {
    const bool noisy = sentence_noisy(s);
    all_noisy = all_noisy && noisy;
    all_valid = all_valid && !noisy;
  }
  return all_noisy || all_valid;
}

Ratio disturbing_ratio(const Dataset& d) {
  if (d.bags.empty()) throw Error("empty dataset");
  std::int64_t disturbing = 0;
  for (const auto& b : d.bags) disturbing += is_disturbing(b) ? 1 : 0;
  return Ratio(disturbing, static_cast<std::int64_t>(d.bags.size()));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json span_json(const Span& s) { return json::array({s.begin, s.end}); }

Span span_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error("span must be a 2-element array");
  return Span{j[0].get<int>(), j[1].get<int>()};
}

json z_json(AttentionLabel z) {
  if (z == AttentionLabel::kUnknown) return nullptr;
  return z == AttentionLabel::kValid ? 1 : 0;
}

AttentionLabel z_from(const json& j) {
  if (j.is_null()) return AttentionLabel::kUnknown;
  const int v = j.get<int>();
  if (v == 1) return AttentionLabel::kValid;
  if (v == 0) return AttentionLabel::kNoisy;
  throw Error("z must be 0, 1 or null");
}

}  // namespace

void write_dataset(const Dataset& d, std::ostream& os) {
  json rels = json::array();
  for (const auto& r : d.relations) rels.push_back({{"id", r.id}, {"name", r.name}});
  json header = {{"record", "header"},
                 {"vocab_size", d.vocab_size},
                 {"relations", rels},
                 {"split", to_string(d.split)},
                 {"seed", d.seed}};
  os << header.dump() << '\n';
  for (const auto& b : d.bags) {
    for (const auto& s : b.sentences) {
      json rec = {{"bag_id", b.id},
                  {"head_id", b.head},
                  {"tail_id", b.tail},
                  {"relation_id", s.relation},
                  {"tokens", s.tokens},
                  {"head_span", span_json(s.head)},
                  {"tail_span", span_json(s.tail)},
                  {"z", z_json(s.z)},
                  {"origin", to_string(s.origin)},
                  {"source", s.context_source}};
      os << rec.dump() << '\n';
    }
  }
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_dataset(d, os);
  if (!os) throw Error("write failed: " + path.string());
}

Dataset read_dataset(std::istream& is) {
  Dataset d;
  bool have_header = false;
  std::unordered_map<BagId, std::size_t> index;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(lineno) + ": ";
    try {
      const json rec = json::parse(line);
      if (!have_header) {
        if (rec.value("record", "") != "header") throw Error("expected header record");
        d.vocab_size = rec.at("vocab_size").get<std::int32_t>();
        for (const auto& r : rec.at("relations")) {
          d.relations.push_back({r.at("id").get<RelationId>(), r.at("name").get<std::string>()});
        }
        d.split = parse_split(rec.at("split").get<std::string>());
        d.seed = rec.at("seed").get<std::uint64_t>();
        have_header = true;
        continue;
      }
      Sentence s;
      s.tokens = rec.at("tokens").get<std::vector<TokenId>>();
      s.head = span_from(rec.at("head_span"));
      s.tail = span_from(rec.at("tail_span"));
      s.relation = rec.at("relation_id").get<RelationId>();
      s.z = z_from(rec.at("z"));
      s.origin = parse_origin(rec.at("origin").get<std::string>());
      s.context_source = rec.value("source", std::int64_t{-1});
      validate_sentence(s, d.vocab_size);

      const BagId id = rec.at("bag_id").get<BagId>();
      const EntityId head = rec.at("head_id").get<EntityId>();
      const EntityId tail = rec.at("tail_id").get<EntityId>();
      auto [it, fresh] = index.try_emplace(id, d.bags.size());
      if (fresh) d.bags.push_back(Bag{id, head, tail, s.relation, {}});
      Bag& bag = d.bags[it->second];
      if (bag.head != head || bag.tail != tail) throw Error("sentence entity pair differs from its bag");
      if (bag.relation != s.relation) throw Error("sentence relation differs from its bag");
      bag.sentences.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw Error(where + "malformed record: " + e.what());
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
  }
  if (!have_header || d.bags.empty()) throw Error("no bags");
  validate_dataset(d);
  return d;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_dataset(is);
}

}  // namespace bagre
