#include "bagre/aggregate.hpp"

#include <cmath>

#include "bagre/encoder.hpp"

namespace bagre {

namespace {

void require_finite(const RowMatrix& reps) {
  if (reps.rows() == 0) throw Error("empty bag");
  if (!reps.allFinite()) throw Error("non-finite sentence representation");
}

}  // namespace

Vector ce_augment(const Vector& s_prime, EntityId head, EntityId tail, const EmbeddingTable& emb) {
  const Vector latent = latent_relation(head, tail, emb);
  Vector out(s_prime.size() + latent.size());
  out << s_prime, latent;
  return out;
}

RowMatrix bag_representations(const Bag& bag, const Model& model) {
  if (bag.sentences.empty()) throw Error("empty bag");
  RowMatrix reps(bag.sentences.size(), model.rep_dim());
  const int enc = model.encoder.rep_dim();
  Vector latent;
  if (model.kind.use_ce) latent = latent_relation(bag.head, bag.tail, *model.kg);
  for (std::size_t i = 0; i < bag.sentences.size(); ++i) {
    reps.row(i).head(enc) = encode(bag.sentences[i], model.encoder).s_prime.transpose();
    if (model.kind.use_ce) reps.row(i).tail(latent.size()) = latent.transpose();
  }
  return reps;
}

Vector att_weights(const RowMatrix& reps, RelationId query, const ClassifierParams& cls) {
  require_finite(reps);
  if (query < 0 || query >= cls.weight.rows()) throw Error("query relation out of range");
  if (reps.cols() != cls.weight.cols()) throw Error("representation / classifier dimension mismatch");
  return softmax(reps * cls.weight.row(query).transpose());
}

Vector ka_weights(const RowMatrix& reps, const Vector& latent, const KaParams& ka) {
  require_finite(reps);
  if (reps.cols() != ka.weight.cols() || latent.size() != ka.weight.rows())
    throw Error("KA dimension mismatch");
  const Matrix act = ((reps * ka.weight.transpose()).rowwise() + ka.bias.transpose()).array().tanh();
  return softmax(act * latent);
}

Vector ka_weights(const RowMatrix& reps, EntityId head, EntityId tail, const EmbeddingTable& emb,
                  const KaParams& ka) {
  return ka_weights(reps, latent_relation(head, tail, emb), ka);
}

Vector gate_weights(const RowMatrix& reps, const GateParams& gate) {
  require_finite(reps);
  if (reps.cols() != gate.weight.size()) throw Error("gate dimension mismatch");
  Vector z = reps * gate.weight;
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = sigmoid(z[i] + gate.bias);
  return z;
}

Vector sentence_logits(const Vector& rep, const ClassifierParams& cls) {
  if (rep.size() != cls.weight.cols()) throw Error("representation / classifier dimension mismatch");
  return cls.weight * rep + cls.bias;
}

Vector bag_logits(const RowMatrix& reps, const Vector& weights, const ClassifierParams& cls) {
  if (weights.size() != reps.rows()) throw Error("weights / sentences count mismatch");
  if (reps.cols() != cls.weight.cols()) throw Error("representation / classifier dimension mismatch");
  const Vector pooled = reps.transpose() * weights;
  return cls.weight * pooled + cls.bias;
}

Vector bag_logits_from_sentences(const RowMatrix& reps, const Vector& weights, const ClassifierParams& cls) {
  if (weights.size() != reps.rows()) throw Error("weights / sentences count mismatch");
  Vector out = Vector::Zero(cls.weight.rows());
  for (Eigen::Index i = 0; i < reps.rows(); ++i) out += weights[i] * sentence_logits(reps.row(i).transpose(), cls);
  return out;
}

Vector aggregation_weights(const Bag& bag, const RowMatrix& reps, const Model& model, RelationId query) {
  switch (model.kind.aggregator) {
    case Aggregator::kMean:
      return Vector::Constant(reps.rows(), 1.0 / static_cast<double>(reps.rows()));
    case Aggregator::kAtt:
      return att_weights(reps, query, model.classifier);
    case Aggregator::kKa:
      return ka_weights(reps, bag.head, bag.tail, *model.kg, model.ka);
    case Aggregator::kGate:
      return gate_weights(reps, model.gate);
  }
  throw Error("unknown aggregator");
}

const Vector* BagScore::attention_for(RelationId gold) const {
  if (weights.empty()) return nullptr;
  if (weights.size() == 1) return &weights.front();
  if (gold < 0 || gold >= static_cast<RelationId>(weights.size())) throw Error("gold relation out of range");
  return &weights[gold];
}

BagScore score_bag(const Bag& bag, const Model& model) {
  if (bag.sentences.empty()) throw Error("empty bag");
  const RowMatrix reps = bag_representations(bag, model);
  const int K = model.num_relations();
  BagScore out;

  switch (model.kind.aggregator) {
    case Aggregator::kMean: {
      // Mean of per-sentence distributions.
      out.scores = Vector::Zero(K);
      for (Eigen::Index i = 0; i < reps.rows(); ++i)
        out.scores += softmax(sentence_logits(reps.row(i).transpose(), model.classifier));
      out.scores /= static_cast<double>(reps.rows());
      out.query_probs.push_back(out.scores);
      break;
    }
    case Aggregator::kAtt: {
      out.scores.resize(K);
      for (RelationId k = 0; k < K; ++k) {
        Vector w = att_weights(reps, k, model.classifier);
        Vector logits = bag_logits(reps, w, model.classifier);
        Vector probs = softmax(logits);
        out.scores[k] = probs[k];
        out.weights.push_back(std::move(w));
        out.logits.push_back(std::move(logits));
        out.query_probs.push_back(std::move(probs));
      }
      break;
    }
    case Aggregator::kKa:
    case Aggregator::kGate: {
      Vector w = aggregation_weights(bag, reps, model, 0);
      Vector logits = bag_logits(reps, w, model.classifier);
      out.scores = softmax(logits);
      out.query_probs.push_back(out.scores);
      out.weights.push_back(std::move(w));
      out.logits.push_back(std::move(logits));
      break;
    }
  }
  return out;
}

}  // namespace bagre
