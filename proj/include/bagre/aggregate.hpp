#pragma once

#include <vector>

#include "bagre/corpus.hpp"
#include "bagre/kgembed.hpp"
#include "bagre/linalg.hpp"
#include "bagre/model.hpp"

namespace bagre {

// [s' ; e_h - e_t].
Vector ce_augment(const Vector& s_prime, EntityId head, EntityId tail, const EmbeddingTable& emb);

// Representation matrix of a bag: one row per sentence, CE feature appended
// when the model uses it.
RowMatrix bag_representations(const Bag& bag, const Model& model);

// ATT: omega_i = v_k . s'_i with v_k = row k of the classifier weight,
// alpha = softmax(omega).
Vector att_weights(const RowMatrix& reps, RelationId query, const ClassifierParams& cls);

// KA: omega_i = r_ht . tanh(W_s s'_i + b_s), alpha = softmax(omega).
Vector ka_weights(const RowMatrix& reps, const Vector& latent, const KaParams& ka);
Vector ka_weights(const RowMatrix& reps, EntityId head, EntityId tail, const EmbeddingTable& emb,
                  const KaParams& ka);

// Sigmoid gate g_i = sigma(w_g . s'_i + b_g); not normalized.
Vector gate_weights(const RowMatrix& reps, const GateParams& gate);

// o = W_b s' + b_b.
Vector sentence_logits(const Vector& rep, const ClassifierParams& cls);

// W_b (sum_i w_i s'_i) + b_b.
Vector bag_logits(const RowMatrix& reps, const Vector& weights, const ClassifierParams& cls);

// sum_i w_i o_i. Equals bag_logits when the weights sum to one.
Vector bag_logits_from_sentences(const RowMatrix& reps, const Vector& weights, const ClassifierParams& cls);

// Weights the model's aggregator assigns under a given query relation (the
// query is ignored by KA and gate). Mean returns uniform 1/m weights.
Vector aggregation_weights(const Bag& bag, const RowMatrix& reps, const Model& model, RelationId query);

struct BagScore {
  // Per-relation score. For ATT, scores[k] is P(k | B) under query k, so the
  // vector as a whole need not sum to one; every entry of query_probs does.
  Vector scores;
  std::vector<Vector> query_probs;
  // Per-query sentence weights: K entries for ATT, one for KA and gate, none
  // for mean aggregation.
  std::vector<Vector> weights;
  std::vector<Vector> logits;

  // Attention weights under the query that would be used for `gold`; empty
  // when the aggregator has no attention.
  const Vector* attention_for(RelationId gold) const;
};

BagScore score_bag(const Bag& bag, const Model& model);

}  // namespace bagre
