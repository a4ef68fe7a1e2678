#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <unordered_set>
#include <vector>

#include "bagre/corpus.hpp"
#include "bagre/linalg.hpp"

namespace bagre {

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Directed multi-relational graph. Entity and relation ids are dense.
struct KnowledgeGraph {
  int num_entities = 0;
  int num_relations = 0;
  std::vector<Triple> triples;

  // Throws on out-of-range ids or duplicate triples.
  void validate() const;
  friend bool operator==(const KnowledgeGraph&, const KnowledgeGraph&) = default;
};

// Triple file: one "h r t" line per triple; the first line is
// "# entities <n> relations <m>".
void write_triples(const KnowledgeGraph& kg, const std::filesystem::path& path);
KnowledgeGraph read_triples(const std::filesystem::path& path);

struct EmbeddingTable {
  RowMatrix entity;    // num_entities x dim
  RowMatrix relation;  // num_relations x dim

  int dim() const { return static_cast<int>(entity.cols()); }
  int num_entities() const { return static_cast<int>(entity.rows()); }
  int num_relations() const { return static_cast<int>(relation.rows()); }
  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.entity == b.entity && a.relation == b.relation;
  }
};

// Text matrix file: header line "bagre-embeddings <n_entities> <n_relations>
// <dim>", then one row per line, entities first, in id order. Values are
// printed with round-trip precision.
void write_embeddings(const EmbeddingTable& emb, std::ostream& os);
void write_embeddings(const EmbeddingTable& emb, const std::filesystem::path& path);
EmbeddingTable read_embeddings(std::istream& is);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

struct TransEConfig {
  int dim = 32;
  double margin = 1.0;
  double learning_rate = 0.01;
  int epochs = 200;
  int negatives = 1;
  int norm = 2;  // 1 or 2
  std::uint64_t rng_seed = 1;

  void validate() const;
};

// -||e_h + e_r - e_t||_p; higher is more plausible.
double transe_score(const Triple& t, const EmbeddingTable& emb, int norm = 2);

// Seeded uniform initialization with unit-norm entity and relation rows.
EmbeddingTable init_embeddings(int num_entities, int num_relations, int dim, std::uint64_t seed);

// Uniform head-or-tail corruption that never returns a triple of the graph.
class NegativeSampler {
 public:
  explicit NegativeSampler(const KnowledgeGraph& kg);

  bool known(const Triple& t) const;
  // nullopt when no unseen corruption was found within a bounded number of
  // draws (only happens on tiny, near-complete graphs).
  std::optional<Triple> sample(const Triple& positive, std::mt19937_64& rng) const;

 private:
  std::uint64_t key(const Triple& t) const;

  int num_entities_;
  int num_relations_;
  std::unordered_set<std::uint64_t> known_;
};

// Margin ranking SGD with filtered head-or-tail corruption. Entity rows are
// renormalized to unit length after every epoch.
EmbeddingTable train_transe(const KnowledgeGraph& kg, const TransEConfig& cfg);

// e_h - e_t.
Vector latent_relation(EntityId head, EntityId tail, const EmbeddingTable& emb);

// Rank (1 = best) of the true tail among all entities, with other known true
// tails of (h, r, ?) filtered out.
int filtered_tail_rank(const KnowledgeGraph& kg, const EmbeddingTable& emb, const Triple& t,
                       int norm = 2);

// Mean filtered tail rank over `queries`, scored against the known triples in kg.
double mean_filtered_tail_rank(const KnowledgeGraph& kg, const EmbeddingTable& emb,
                               const std::vector<Triple>& queries, int norm = 2);

}  // namespace bagre
