#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/rational.hpp>

namespace bagre {

// All recoverable failures in the library surface as this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TokenId = std::int32_t;
using RelationId = std::int32_t;
using EntityId = std::int32_t;
using BagId = std::int64_t;

// Exact ratio used for dataset-level noise descriptors.
using Ratio = boost::rational<std::int64_t>;

// Half-open token range [begin, end).
struct Span {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  bool contains(int i) const { return i >= begin && i < end; }
  bool overlaps(const Span& o) const { return begin < o.end && o.begin < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

// Ground-truth attention label of a bag sentence.
enum class AttentionLabel : std::uint8_t { kNoisy = 0, kValid = 1, kUnknown = 2 };

enum class Origin : std::uint8_t { kOriginal, kSynthValid, kSynthNoisy };

enum class Split : std::uint8_t { kTrain, kDev, kTest };

std::string_view to_string(Origin o);
std::string_view to_string(Split s);
Origin parse_origin(std::string_view s);
Split parse_split(std::string_view s);

struct Relation {
  RelationId id = 0;
  std::string name;
  friend bool operator==(const Relation&, const Relation&) = default;
};

struct Entity {
  EntityId id = 0;
  std::vector<TokenId> surface_tokens;
  friend bool operator==(const Entity&, const Entity&) = default;
};

struct Sentence {
  std::vector<TokenId> tokens;
  Span head;
  Span tail;
  RelationId relation = 0;
  AttentionLabel z = AttentionLabel::kUnknown;
  Origin origin = Origin::kOriginal;
  // Seed sentence whose context this sentence carries; -1 when unknown.
  std::int64_t context_source = -1;

  bool is_noisy() const { return z == AttentionLabel::kNoisy; }
  bool is_valid() const { return z == AttentionLabel::kValid; }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct Bag {
  BagId id = 0;
  EntityId head = 0;
  EntityId tail = 0;
  RelationId relation = 0;
  std::vector<Sentence> sentences;

  std::size_t size() const { return sentences.size(); }
  friend bool operator==(const Bag&, const Bag&) = default;
};

struct Dataset {
  std::vector<Bag> bags;
  // Token ids are in [0, vocab_size).
  std::int32_t vocab_size = 0;
  std::vector<Relation> relations;
  Split split = Split::kTrain;
  std::uint64_t seed = 0;

  std::size_t num_sentences() const;
  int num_relations() const { return static_cast<int>(relations.size()); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Checks the structural invariants of a sentence against a vocabulary size.
// Throws Error describing the first violation.
void validate_sentence(const Sentence& s, std::int32_t vocab_size);
void validate_dataset(const Dataset& d);

// Fraction of noisy sentences over all sentences.
Ratio noise_ratio(const Dataset& d);

// A bag is disturbing when its sentences are all valid or all noisy.
bool is_disturbing(const Bag& b);

// Fraction of disturbing bags.
Ratio disturbing_ratio(const Dataset& d);

// Line-delimited JSON: one header record followed by one record per sentence,
// grouped into bags by bag_id in order of first appearance. Serialization is
// canonical (sorted keys, no whitespace), so equal datasets give equal bytes.
void write_dataset(const Dataset& d, std::ostream& os);
void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(std::istream& is);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace bagre
