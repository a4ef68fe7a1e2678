#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "bagre/corpus.hpp"
#include "bagre/kgembed.hpp"

namespace bagre {

// Knobs for the templated seed corpus that stands in for a sentence-level RE
// corpus. Every seed sentence carries a fresh (head, tail) entity pair.
struct SeedCorpusConfig {
  int k_relations = 10;
  int pairs_per_relation = 140;
  int template_count = 4;
  // Probability that a sentence draws its context from a template shared by
  // all relations, so its context does not identify the relation.
  double ambiguity = 0.0;
  std::uint64_t rng_seed = 7;

  // Entities carry a type token; each relation has a canonical (head type,
  // tail type) combination, replaced by a random type with prob. type_noise.
  int head_types = 4;
  int tail_types = 4;
  double type_noise = 0.3;
  int filler_vocab = 200;
  int cues_per_template = 3;
  // Probability that a cue slot is filled with a filler token instead.
  double cue_dropout = 0.0;
};

struct SeedCorpus {
  // Seed sentences are valid, origin=original, context_source=own index.
  std::vector<Sentence> sentences;
  // entities[2i] / entities[2i+1] are the head / tail of sentence i.
  std::vector<Entity> entities;
  std::map<std::pair<EntityId, EntityId>, RelationId> entity_pair_map;
  std::vector<Relation> relations;
  std::int32_t vocab_size = 0;
  std::uint64_t rng_seed = 0;

  EntityId head_of(std::size_t i) const { return static_cast<EntityId>(2 * i); }
  EntityId tail_of(std::size_t i) const { return static_cast<EntityId>(2 * i + 1); }
  int num_relations() const { return static_cast<int>(relations.size()); }
};

SeedCorpus generate_seed_corpus(const SeedCorpusConfig& cfg);

// Per-relation partition of seed sentence indices.
struct SplitSpec {
  double train_fraction = 5.0 / 7.0;
  double test_fraction = 1.0 / 7.0;
  double dev_fraction = 1.0 / 7.0;
  std::uint64_t rng_seed = 11;
};

struct SeedSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> test;
};

SeedSplit split_seed_corpus(const SeedCorpus& seed, const SplitSpec& spec);

// Replaces the source's head/tail mentions with the target entities' surface
// tokens, keeping the context. The result is labeled with bag_relation and is
// valid iff the source expresses bag_relation.
Sentence synthesize_sentence(const Sentence& source, const Entity& head, const Entity& tail,
                             RelationId bag_relation);

// Exact per-bag composition realizing a (noise ratio, disturbing ratio) pair.
struct NoisePatternPlan {
  Ratio target_nr;
  Ratio target_dr;
  int bag_size = 0;
  int n_bags = 0;
  int n_disturbing = 0;
  int n_all_noisy = 0;
  int n_all_valid = 0;
  int per_nondisturbing_noisy = 0;

  int n_nondisturbing() const { return n_bags - n_disturbing; }
};

// NR must be one of 1/3, 1/2, 2/3 and DR one of 0, 1/2, 1.
NoisePatternPlan plan_pattern(Ratio target_nr, Ratio target_dr, int n_bags);

// One bag per seed sentence in `part`; contexts come only from `part`.
Dataset build_training_set(const SeedCorpus& seed, std::span<const std::size_t> part,
                           const NoisePatternPlan& plan, std::uint64_t rng_seed);

// Every bag is {original sentence, one synthesized noisy sentence}.
Dataset build_eval_set(const SeedCorpus& seed, std::span<const std::size_t> part, Split split,
                       std::uint64_t rng_seed);

// Uniform bag-level sample without replacement. The sample is a prefix of one
// seeded permutation, so smaller fractions nest inside larger ones.
Dataset subsample_bags(const Dataset& d, double fraction, std::uint64_t rng_seed);

// One triple (h, y, t) per seed entity pair plus distractor triples among
// existing entities; distractor_ratio is relative to the number of pairs.
KnowledgeGraph build_kg(const SeedCorpus& seed, double distractor_ratio, std::uint64_t rng_seed);

// Replaces each triple's relation with a uniformly random different relation.
KnowledgeGraph randomize_kg(const KnowledgeGraph& kg, std::uint64_t rng_seed);

}  // namespace bagre
