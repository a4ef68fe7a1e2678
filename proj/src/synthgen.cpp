#include "bagre/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>

namespace bagre {

namespace {

using Rng = std::mt19937_64;

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Vocabulary layout of the seed corpus, in id order.
struct VocabLayout {
  int fillers = 0;
  int relation_cues = 0;  // start of K*T*C relation template cues
  int shared_cues = 0;    // start of T*C shared template cues
  int head_types = 0;
  int tail_types = 0;
  int names = 0;
  int size = 0;
};

struct Template {
  std::vector<TokenId> cues;
  bool tail_first = false;
};

}  // namespace

SeedCorpus generate_seed_corpus(const SeedCorpusConfig& cfg) {
  if (cfg.k_relations < 2) throw Error("need at least 2 relations");
  if (cfg.pairs_per_relation < 3) throw Error("need at least 3 pairs per relation");
  if (cfg.template_count < 1) throw Error("need at least one template per relation");
  if (!(cfg.ambiguity >= 0.0 && cfg.ambiguity < 1.0)) throw Error("ambiguity must lie in [0, 1)");
  if (cfg.head_types < 1 || cfg.tail_types < 1 || cfg.filler_vocab < 1 || cfg.cues_per_template < 1)
    throw Error("bad seed corpus vocabulary sizes");

  const int K = cfg.k_relations;
  const int T = cfg.template_count;
  const int C = cfg.cues_per_template;
  const std::size_t n_sent = static_cast<std::size_t>(K) * cfg.pairs_per_relation;

  VocabLayout v;
  v.fillers = 0;
  v.relation_cues = cfg.filler_vocab;
  v.shared_cues = v.relation_cues + K * T * C;
  v.head_types = v.shared_cues + T * C;
  v.tail_types = v.head_types + cfg.head_types;
  v.names = v.tail_types + cfg.tail_types;
  v.size = v.names + static_cast<int>(2 * n_sent);

  Rng rng(cfg.rng_seed);

  auto make_template = [&](int cue_base) {
    Template t;
    for (int c = 0; c < C; ++c) t.cues.push_back(cue_base + c);
    t.tail_first = std::bernoulli_distribution(0.5)(rng);
    return t;
  };
  std::vector<std::vector<Template>> rel_templates(K);
  for (int r = 0; r < K; ++r)
    for (int t = 0; t < T; ++t) rel_templates[r].push_back(make_template(v.relation_cues + (r * T + t) * C));
  std::vector<Template> shared_templates;
  for (int t = 0; t < T; ++t) shared_templates.push_back(make_template(v.shared_cues + t * C));

  SeedCorpus seed;
  seed.vocab_size = v.size;
  seed.rng_seed = cfg.rng_seed;
  for (int r = 0; r < K; ++r) seed.relations.push_back({r, "rel" + std::to_string(r)});

  auto filler = [&] { return static_cast<TokenId>(uniform_int(rng, 0, cfg.filler_vocab - 1)); };
  auto typed = [&](int canonical, int count) {
    return std::bernoulli_distribution(cfg.type_noise)(rng) ? uniform_int(rng, 0, count - 1) : canonical;
  };

  seed.sentences.reserve(n_sent);
  seed.entities.reserve(2 * n_sent);
  for (int r = 0; r < K; ++r) {
    const int canon_head = r % cfg.head_types;
    const int canon_tail = (r / cfg.head_types) % cfg.tail_types;
    for (int p = 0; p < cfg.pairs_per_relation; ++p) {
      const std::size_t i = seed.sentences.size();
      const EntityId h = seed.head_of(i);
      const EntityId t = seed.tail_of(i);
      seed.entities.push_back(
          {h, {v.head_types + typed(canon_head, cfg.head_types), static_cast<TokenId>(v.names + h)}});
      seed.entities.push_back(
          {t, {v.tail_types + typed(canon_tail, cfg.tail_types), static_cast<TokenId>(v.names + t)}});

      const bool shared = std::bernoulli_distribution(cfg.ambiguity)(rng);
      const Template& tpl = shared ? shared_templates[uniform_int(rng, 0, T - 1)]
                                   : rel_templates[r][uniform_int(rng, 0, T - 1)];
      auto cue = [&](int c) {
        return std::bernoulli_distribution(cfg.cue_dropout)(rng) ? filler() : tpl.cues[c];
      };

      Sentence s;
      s.relation = r;
      s.z = AttentionLabel::kValid;
      s.origin = Origin::kOriginal;
      s.context_source = static_cast<std::int64_t>(i);
      const auto& first = tpl.tail_first ? seed.entities[t].surface_tokens : seed.entities[h].surface_tokens;
      const auto& second = tpl.tail_first ? seed.entities[h].surface_tokens : seed.entities[t].surface_tokens;

      for (int k = uniform_int(rng, 1, 2); k > 0; --k) s.tokens.push_back(filler());
      s.tokens.push_back(cue(0));
      Span a{static_cast<int>(s.tokens.size()), 0};
      s.tokens.insert(s.tokens.end(), first.begin(), first.end());
      a.end = static_cast<int>(s.tokens.size());
      for (int c = 1; c + 1 < C; ++c) {
        s.tokens.push_back(cue(c));
        s.tokens.push_back(filler());
      }
      if (C < 3) s.tokens.push_back(filler());
      Span b{static_cast<int>(s.tokens.size()), 0};
      s.tokens.insert(s.tokens.end(), second.begin(), second.end());
      b.end = static_cast<int>(s.tokens.size());
      if (C >= 2) s.tokens.push_back(cue(C - 1));
      for (int k = uniform_int(rng, 0, 2); k > 0; --k) s.tokens.push_back(filler());
      s.head = tpl.tail_first ? b : a;
      s.tail = tpl.tail_first ? a : b;

      seed.entity_pair_map.emplace(std::make_pair(h, t), r);
      seed.sentences.push_back(std::move(s));
    }
  }
  return seed;
}

SeedSplit split_seed_corpus(const SeedCorpus& seed, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0 && spec.test_fraction > 0 && spec.dev_fraction > 0) ||
      spec.train_fraction + spec.test_fraction + spec.dev_fraction > 1.0 + 1e-9)
    throw Error("split fractions must be positive and sum to at most 1");
  std::vector<std::vector<std::size_t>> by_rel(seed.num_relations());
  for (std::size_t i = 0; i < seed.sentences.size(); ++i) by_rel[seed.sentences[i].relation].push_back(i);

  Rng rng(spec.rng_seed);
  SeedSplit out;
  for (auto& idx : by_rel) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::floor(n * spec.train_fraction + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * spec.test_fraction + 1e-9));
    const auto n_dev = static_cast<std::size_t>(std::floor(n * spec.dev_fraction + 1e-9));
    auto it = idx.begin();
    out.train.insert(out.train.end(), it, it + n_train);
    it += n_train;
    out.test.insert(out.test.end(), it, it + n_test);
    it += n_test;
    out.dev.insert(out.dev.end(), it, it + n_dev);
  }
  for (auto* part : {&out.train, &out.dev, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

Sentence synthesize_sentence(const Sentence& source, const Entity& head, const Entity& tail,
                             RelationId bag_relation) {
  if (head.surface_tokens.empty() || tail.surface_tokens.empty())
    throw Error("target entity has empty surface");
  const int n = static_cast<int>(source.tokens.size());
  if (source.head.size() <= 0 || source.tail.size() <= 0 || source.head.begin < 0 || source.tail.begin < 0 ||
      source.head.end > n || source.tail.end > n || source.head.overlaps(source.tail))
    throw Error("source sentence has invalid spans");

  const bool head_first = source.head.begin < source.tail.begin;
  const Span& first = head_first ? source.head : source.tail;
  const Span& second = head_first ? source.tail : source.head;
  const auto& first_tokens = head_first ? head.surface_tokens : tail.surface_tokens;
  const auto& second_tokens = head_first ? tail.surface_tokens : head.surface_tokens;

  Sentence out;
  const auto src = source.tokens.begin();
  out.tokens.assign(src, src + first.begin);
  Span new_first{static_cast<int>(out.tokens.size()), 0};
  out.tokens.insert(out.tokens.end(), first_tokens.begin(), first_tokens.end());
  new_first.end = static_cast<int>(out.tokens.size());
  out.tokens.insert(out.tokens.end(), src + first.end, src + second.begin);
  Span new_second{static_cast<int>(out.tokens.size()), 0};
  out.tokens.insert(out.tokens.end(), second_tokens.begin(), second_tokens.end());
  new_second.end = static_cast<int>(out.tokens.size());
  out.tokens.insert(out.tokens.end(), src + second.end, source.tokens.end());

  out.head = head_first ? new_first : new_second;
  out.tail = head_first ? new_second : new_first;
  out.relation = bag_relation;
  const bool valid = source.relation == bag_relation;
  out.z = valid ? AttentionLabel::kValid : AttentionLabel::kNoisy;
  out.origin = valid ? Origin::kSynthValid : Origin::kSynthNoisy;
  out.context_source = source.context_source;
  return out;
}

NoisePatternPlan plan_pattern(Ratio target_nr, Ratio target_dr, int n_bags) {
  const Ratio third(1, 3), half(1, 2), two_thirds(2, 3);
  if (target_nr != third && target_nr != half && target_nr != two_thirds)
    throw Error("noise ratio must be 1/3, 1/2 or 2/3");
  if (target_dr != Ratio(0) && target_dr != half && target_dr != Ratio(1))
    throw Error("disturbing ratio must be 0, 1/2 or 1");
  if (n_bags < 1) throw Error("need at least one bag");

  NoisePatternPlan plan;
  plan.target_nr = target_nr;
  plan.target_dr = target_dr;
  plan.n_bags = n_bags;
  plan.bag_size = target_nr == half ? 2 : 3;
  plan.per_nondisturbing_noisy = boost::rational_cast<int>(target_nr * plan.bag_size);

  // Noise balance: (1-DR)*c + bag_size*DR*q = bag_size*NR with c = NR*bag_size
  // forces the all-noisy share of disturbing bags to q = NR.
  const Ratio disturbing = target_dr * n_bags;
  const Ratio all_noisy = target_nr * disturbing;
  if (disturbing.denominator() != 1 || all_noisy.denominator() != 1) {
    const std::int64_t step = std::lcm(target_dr.denominator(), (target_nr * target_dr).denominator());
    const std::int64_t lo = n_bags / step * step;
    const std::int64_t hi = lo + step;
    const std::int64_t nearest = (lo > 0 && n_bags - lo <= hi - n_bags) ? lo : hi;
    throw Error("pattern not realizable at this n_bags (" + std::to_string(n_bags) +
                "); nearest feasible n is " + std::to_string(nearest));
  }
  plan.n_disturbing = static_cast<int>(disturbing.numerator());
  plan.n_all_noisy = static_cast<int>(all_noisy.numerator());
  plan.n_all_valid = plan.n_disturbing - plan.n_all_noisy;
  return plan;
}

namespace {

// Seed indices of `part` grouped by relation.
std::vector<std::vector<std::size_t>> group_by_relation(const SeedCorpus& seed,
                                                        std::span<const std::size_t> part) {
  std::vector<std::vector<std::size_t>> by_rel(seed.num_relations());
  for (std::size_t i : part) {
    if (i >= seed.sentences.size()) throw Error("seed index out of range");
    by_rel[seed.sentences[i].relation].push_back(i);
  }
  return by_rel;
}

class ContextSampler {
 public:
  ContextSampler(const SeedCorpus& seed, std::span<const std::size_t> part)
      : seed_(seed), by_rel_(group_by_relation(seed, part)), part_(part.begin(), part.end()) {}

  // `count` distinct same-relation sources, excluding the original itself.
  std::vector<std::size_t> valid_sources(std::size_t original, int count, Rng& rng) const {
    if (count == 0) return {};
    const auto& pool = by_rel_[seed_.sentences[original].relation];
    if (pool.size() < 2 || static_cast<int>(pool.size()) - 1 < count)
      throw Error("relation " + std::to_string(seed_.sentences[original].relation) +
                  " has too few seed sentences to synthesize valid sentences");
    return draw(pool, count, rng, [&](std::size_t j) { return j == original; });
  }

  // `count` distinct sources whose relation differs from the original's.
  std::vector<std::size_t> noisy_sources(std::size_t original, int count, Rng& rng) const {
    const RelationId r = seed_.sentences[original].relation;
    const std::size_t available = part_.size() - by_rel_[r].size();
    if (static_cast<int>(available) < count) throw Error("too few other-relation seed sentences");
    return draw(part_, count, rng, [&](std::size_t j) { return seed_.sentences[j].relation == r; });
  }

 private:
  template <class Reject>
  static std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, int count, Rng& rng,
                                       Reject reject) {
    std::vector<std::size_t> out;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    while (static_cast<int>(out.size()) < count) {
      const std::size_t j = pool[pick(rng)];
      if (reject(j) || std::find(out.begin(), out.end(), j) != out.end()) continue;
      out.push_back(j);
    }
    return out;
  }

  const SeedCorpus& seed_;
  std::vector<std::vector<std::size_t>> by_rel_;
  std::vector<std::size_t> part_;
};

Dataset empty_dataset(const SeedCorpus& seed, Split split, std::uint64_t rng_seed) {
  Dataset d;
  d.vocab_size = seed.vocab_size;
  d.relations = seed.relations;
  d.split = split;
  d.seed = rng_seed;
  return d;
}

Bag bag_for(const SeedCorpus& seed, std::size_t i) {
  return Bag{static_cast<BagId>(i), seed.head_of(i), seed.tail_of(i), seed.sentences[i].relation, {}};
}

void add_synthesized(const SeedCorpus& seed, Bag& bag, const std::vector<std::size_t>& sources) {
  const Entity& h = seed.entities[bag.head];
  const Entity& t = seed.entities[bag.tail];
  for (std::size_t j : sources) bag.sentences.push_back(synthesize_sentence(seed.sentences[j], h, t, bag.relation));
}

}  // namespace

Dataset build_training_set(const SeedCorpus& seed, std::span<const std::size_t> part,
                           const NoisePatternPlan& plan, std::uint64_t rng_seed) {
  if (static_cast<int>(part.size()) != plan.n_bags)
    throw Error("plan expects " + std::to_string(plan.n_bags) + " bags but the seed part has " +
                std::to_string(part.size()));
  Rng rng(rng_seed);
  const ContextSampler sampler(seed, part);

  // Bag roles: the first n_all_noisy of a seeded permutation are all-noisy,
  // the next n_all_valid all-valid, the rest non-disturbing.
  std::vector<std::size_t> perm(part.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  enum class Role { kMixed, kAllNoisy, kAllValid };
  std::vector<Role> role(part.size(), Role::kMixed);
  for (int k = 0; k < plan.n_all_noisy; ++k) role[perm[k]] = Role::kAllNoisy;
  for (int k = plan.n_all_noisy; k < plan.n_disturbing; ++k) role[perm[k]] = Role::kAllValid;

  Dataset d = empty_dataset(seed, Split::kTrain, rng_seed);
  d.bags.reserve(part.size());
  for (std::size_t b = 0; b < part.size(); ++b) {
    const std::size_t i = part[b];
    Bag bag = bag_for(seed, i);
    switch (role[b]) {
      case Role::kAllNoisy:
        add_synthesized(seed, bag, sampler.noisy_sources(i, plan.bag_size, rng));
        break;
      case Role::kAllValid:
        bag.sentences.push_back(seed.sentences[i]);
        add_synthesized(seed, bag, sampler.valid_sources(i, plan.bag_size - 1, rng));
        break;
      case Role::kMixed: {
        const int noisy = plan.per_nondisturbing_noisy;
        bag.sentences.push_back(seed.sentences[i]);
        add_synthesized(seed, bag, sampler.valid_sources(i, plan.bag_size - 1 - noisy, rng));
        add_synthesized(seed, bag, sampler.noisy_sources(i, noisy, rng));
        break;
      }
    }
    std::shuffle(bag.sentences.begin(), bag.sentences.end(), rng);
    d.bags.push_back(std::move(bag));
  }
  return d;
}

Dataset build_eval_set(const SeedCorpus& seed, std::span<const std::size_t> part, Split split,
                       std::uint64_t rng_seed) {
  if (part.empty()) throw Error("empty seed part");
  Rng rng(rng_seed);
  const ContextSampler sampler(seed, part);
  Dataset d = empty_dataset(seed, split, rng_seed);
  d.bags.reserve(part.size());
  for (std::size_t i : part) {
    Bag bag = bag_for(seed, i);
    bag.sentences.push_back(seed.sentences[i]);
    add_synthesized(seed, bag, sampler.noisy_sources(i, 1, rng));
    std::shuffle(bag.sentences.begin(), bag.sentences.end(), rng);
    d.bags.push_back(std::move(bag));
  }
  return d;
}

Dataset subsample_bags(const Dataset& d, double fraction, std::uint64_t rng_seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d.bags.size()) + 1e-9));
  if (n == 0) throw Error("subsample would be empty");
  std::vector<std::size_t> perm(d.bags.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(rng_seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.resize(n);
  std::sort(perm.begin(), perm.end());

  Dataset out = d;
  out.bags.clear();
  for (std::size_t i : perm) out.bags.push_back(d.bags[i]);
  return out;
}

KnowledgeGraph build_kg(const SeedCorpus& seed, double distractor_ratio, std::uint64_t rng_seed) {
  if (seed.sentences.empty()) throw Error("empty seed corpus");
  if (distractor_ratio < 0) throw Error("distractor ratio must be non-negative");
  KnowledgeGraph kg;
  kg.num_entities = static_cast<int>(seed.entities.size());
  kg.num_relations = seed.num_relations();
  std::set<Triple> seen;
  for (const auto& [pair, rel] : seed.entity_pair_map) {
    Triple t{pair.first, rel, pair.second};
    seen.insert(t);
    kg.triples.push_back(t);
  }
  std::sort(kg.triples.begin(), kg.triples.end());

  Rng rng(rng_seed);
  const auto n_distractors =
      static_cast<std::size_t>(std::llround(distractor_ratio * static_cast<double>(seed.entity_pair_map.size())));
  std::size_t guard = 0;
  while (kg.triples.size() < seed.entity_pair_map.size() + n_distractors) {
    if (++guard > 100 * (n_distractors + 1)) throw Error("cannot place distractor triples");
    Triple t{uniform_int(rng, 0, kg.num_entities - 1), uniform_int(rng, 0, kg.num_relations - 1),
             uniform_int(rng, 0, kg.num_entities - 1)};
    if (t.head == t.tail || !seen.insert(t).second) continue;
    kg.triples.push_back(t);
  }
  return kg;
}

KnowledgeGraph randomize_kg(const KnowledgeGraph& kg, std::uint64_t rng_seed) {
  if (kg.num_relations < 2) throw Error("randomizing a KG needs at least 2 relations");
  Rng rng(rng_seed);
  KnowledgeGraph out = kg;
  std::set<Triple> seen;
  for (auto& t : out.triples) {
    const RelationId original = t.relation;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      // Uniform over the other relations.
      RelationId r = uniform_int(rng, 0, kg.num_relations - 2);
      if (r >= original) ++r;
      Triple cand{t.head, r, t.tail};
      if (seen.insert(cand).second) {
        t = cand;
        placed = true;
      }
    }
    if (!placed) throw Error("cannot corrupt triple without creating a duplicate");
  }
  return out;
}

}  // namespace bagre
