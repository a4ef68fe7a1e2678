#include "bagre/kgembed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace bagre {

namespace {

double distance(const EmbeddingTable& emb, EntityId h, RelationId r, EntityId t, int norm) {
  auto diff = emb.entity.row(h) + emb.relation.row(r) - emb.entity.row(t);
  return norm == 1 ? diff.lpNorm<1>() : diff.norm();
}

void check_entity(const EmbeddingTable& emb, EntityId e) {
  if (e < 0 || e >= emb.num_entities()) throw Error("unknown entity id " + std::to_string(e));
}

void normalize_rows(RowMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0) m.row(i) /= n;
  }
}

}  // namespace

void KnowledgeGraph::validate() const {
  std::set<Triple> seen;
  for (const auto& t : triples) {
    if (t.head < 0 || t.head >= num_entities || t.tail < 0 || t.tail >= num_entities)
      throw Error("triple endpoint outside entity set");
    if (t.relation < 0 || t.relation >= num_relations) throw Error("triple relation outside relation set");
    if (!seen.insert(t).second) throw Error("duplicate triple");
  }
}

void write_triples(const KnowledgeGraph& kg, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "# entities " << kg.num_entities << " relations " << kg.num_relations << '\n';
  for (const auto& t : kg.triples) os << t.head << ' ' << t.relation << ' ' << t.tail << '\n';
}

KnowledgeGraph read_triples(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  KnowledgeGraph kg;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (!header) {
      std::string hash, ew, rw;
      if (!(ls >> hash >> ew >> kg.num_entities >> rw >> kg.num_relations) || hash != "#")
        throw Error("line 1: bad triple file header");
      header = true;
      continue;
    }
    Triple t;
    if (!(ls >> t.head >> t.relation >> t.tail))
      throw Error("line " + std::to_string(lineno) + ": malformed triple");
    kg.triples.push_back(t);
  }
  if (!header) throw Error("empty triple file");
  kg.validate();
  return kg;
}

void write_embeddings(const EmbeddingTable& emb, std::ostream& os) {
  os << "bagre-embeddings " << emb.num_entities() << ' ' << emb.num_relations() << ' ' << emb.dim()
     << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const RowMatrix* m : {&emb.entity, &emb.relation}) {
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) os << (j ? " " : "") << (*m)(i, j);
      os << '\n';
    }
  }
}

void write_embeddings(const EmbeddingTable& emb, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_embeddings(emb, os);
}

EmbeddingTable read_embeddings(std::istream& is) {
  std::string magic;
  int ne = 0, nr = 0, dim = 0;
  if (!(is >> magic >> ne >> nr >> dim) || magic != "bagre-embeddings" || ne < 0 || nr < 0 || dim < 1)
    throw Error("bad embedding file header");
  EmbeddingTable emb{RowMatrix(ne, dim), RowMatrix(nr, dim)};
  for (RowMatrix* m : {&emb.entity, &emb.relation}) {
    for (Eigen::Index i = 0; i < m->rows(); ++i)
      for (Eigen::Index j = 0; j < m->cols(); ++j)
        if (!(is >> (*m)(i, j))) throw Error("truncated embedding file");
  }
  return emb;
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_embeddings(is);
}

void TransEConfig::validate() const {
  if (!(margin > 0)) throw Error("TransE margin must be positive");
  if (dim < 2) throw Error("TransE dimension must be at least 2");
  if (norm != 1 && norm != 2) throw Error("TransE norm must be 1 or 2");
  if (epochs < 0 || negatives < 1) throw Error("bad TransE schedule");
}

double transe_score(const Triple& t, const EmbeddingTable& emb, int norm) {
  check_entity(emb, t.head);
  check_entity(emb, t.tail);
  if (t.relation < 0 || t.relation >= emb.num_relations())
    throw Error("unknown relation id " + std::to_string(t.relation));
  return -distance(emb, t.head, t.relation, t.tail, norm);
}

EmbeddingTable init_embeddings(int num_entities, int num_relations, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> unif(-bound, bound);
  EmbeddingTable emb{RowMatrix(num_entities, dim), RowMatrix(num_relations, dim)};
  for (RowMatrix* m : {&emb.relation, &emb.entity}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = unif(rng);
    normalize_rows(*m);
  }
  return emb;
}

NegativeSampler::NegativeSampler(const KnowledgeGraph& kg)
    : num_entities_(kg.num_entities), num_relations_(kg.num_relations) {
  for (const auto& t : kg.triples) known_.insert(key(t));
}

std::uint64_t NegativeSampler::key(const Triple& t) const {
  return (static_cast<std::uint64_t>(t.head) * num_relations_ + t.relation) * num_entities_ + t.tail;
}

bool NegativeSampler::known(const Triple& t) const { return known_.contains(key(t)); }

std::optional<Triple> NegativeSampler::sample(const Triple& positive, std::mt19937_64& rng) const {
  std::uniform_int_distribution<EntityId> pick_entity(0, num_entities_ - 1);
  const bool corrupt_head = std::bernoulli_distribution(0.5)(rng);
  for (int attempt = 0; attempt < 64; ++attempt) {
    Triple neg = positive;
    (corrupt_head ? neg.head : neg.tail) = pick_entity(rng);
    if (!known(neg)) return neg;
  }
  return std::nullopt;
}

EmbeddingTable train_transe(const KnowledgeGraph& kg, const TransEConfig& cfg) {
  cfg.validate();
  kg.validate();
  if (kg.triples.empty()) throw Error("cannot train TransE on an empty triple set");
  EmbeddingTable emb = init_embeddings(kg.num_entities, kg.num_relations, cfg.dim, cfg.rng_seed);

  const NegativeSampler sampler(kg);
  std::mt19937_64 rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(kg.triples.size());

  const int dim = cfg.dim;
  Vector gpos(dim), gneg(dim);

  // Gradient of ||v||_p w.r.t. v.
  auto norm_grad = [&](const Eigen::RowVectorXd& v, Vector& out) {
    if (cfg.norm == 1) {
      out = v.transpose().array().sign();
    } else {
      const double n = v.norm();
      if (n > 0) out = v.transpose() / n; else out.setZero();
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t idx : order) {
      const Triple& pos = kg.triples[idx];
      for (int n = 0; n < cfg.negatives; ++n) {
        const auto sampled = sampler.sample(pos, rng);
        if (!sampled) continue;
        const Triple& neg = *sampled;

        const Eigen::RowVectorXd dpos =
            emb.entity.row(pos.head) + emb.relation.row(pos.relation) - emb.entity.row(pos.tail);
        const Eigen::RowVectorXd dneg =
            emb.entity.row(neg.head) + emb.relation.row(neg.relation) - emb.entity.row(neg.tail);
        const double npos = cfg.norm == 1 ? dpos.lpNorm<1>() : dpos.norm();
        const double nneg = cfg.norm == 1 ? dneg.lpNorm<1>() : dneg.norm();
        const double loss = cfg.margin + npos - nneg;
        if (!std::isfinite(loss))
          throw Error("TransE diverged (non-finite loss) at epoch " + std::to_string(epoch));
        if (loss <= 0) continue;
        epoch_loss += loss;

        norm_grad(dpos, gpos);
        norm_grad(dneg, gneg);
        const double lr = cfg.learning_rate;
        emb.entity.row(pos.head) -= lr * gpos.transpose();
        emb.relation.row(pos.relation) -= lr * gpos.transpose();
        emb.entity.row(pos.tail) += lr * gpos.transpose();
        emb.entity.row(neg.head) += lr * gneg.transpose();
        emb.relation.row(neg.relation) += lr * gneg.transpose();
        emb.entity.row(neg.tail) -= lr * gneg.transpose();
      }
    }
    if (!std::isfinite(epoch_loss))
      throw Error("TransE diverged (non-finite loss) at epoch " + std::to_string(epoch));
    normalize_rows(emb.entity);
  }
  return emb;
}

Vector latent_relation(EntityId head, EntityId tail, const EmbeddingTable& emb) {
  check_entity(emb, head);
  check_entity(emb, tail);
  return (emb.entity.row(head) - emb.entity.row(tail)).transpose();
}

int filtered_tail_rank(const KnowledgeGraph& kg, const EmbeddingTable& emb, const Triple& t, int norm) {
  std::unordered_set<EntityId> other_tails;
  for (const auto& k : kg.triples)
    if (k.head == t.head && k.relation == t.relation && k.tail != t.tail) other_tails.insert(k.tail);
  const double true_d = distance(emb, t.head, t.relation, t.tail, norm);
  int rank = 1;
  for (EntityId e = 0; e < emb.num_entities(); ++e) {
    if (e == t.tail || other_tails.contains(e)) continue;
    if (distance(emb, t.head, t.relation, e, norm) <= true_d) ++rank;
  }
  return rank;
}

double mean_filtered_tail_rank(const KnowledgeGraph& kg, const EmbeddingTable& emb,
                               const std::vector<Triple>& queries, int norm) {
  if (queries.empty()) throw Error("no rank queries");
  // Index known tails once; the per-query helper is quadratic in |T|.
  std::unordered_map<std::uint64_t, std::vector<EntityId>> tails;
  for (const auto& k : kg.triples)
    tails[static_cast<std::uint64_t>(k.head) * kg.num_relations + k.relation].push_back(k.tail);
  double total = 0;
  for (const auto& t : queries) {
    const auto& known = tails[static_cast<std::uint64_t>(t.head) * kg.num_relations + t.relation];
    const double true_d = distance(emb, t.head, t.relation, t.tail, norm);
    int rank = 1;
    for (EntityId e = 0; e < emb.num_entities(); ++e) {
      if (e == t.tail || std::find(known.begin(), known.end(), e) != known.end()) continue;
      if (distance(emb, t.head, t.relation, e, norm) <= true_d) ++rank;
    }
    total += rank;
  }
  return total / static_cast<double>(queries.size());
}

}  // namespace bagre
