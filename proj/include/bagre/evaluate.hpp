#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "bagre/corpus.hpp"
#include "bagre/linalg.hpp"
#include "bagre/model.hpp"

namespace bagre {

struct PredictionRecord {
  BagId bag_id = 0;
  Vector scores;  // one per relation
  RelationId gold = 0;
  // Sentence weights under the gold-relation query; empty for aggregators
  // without attention.
  Vector attention;
  std::vector<AttentionLabel> z;
};

std::vector<PredictionRecord> predict(const Model& model, const Dataset& d);

// Mean over bags of the fraction of (valid, noisy) sentence pairs in which the
// valid sentence gets a strictly higher weight. Every bag must be
// non-disturbing and fully labeled.
double attention_accuracy(std::span<const PredictionRecord> records);

struct PRPoint {
  double recall = 0;
  double precision = 0;
};

struct PRCurve {
  std::vector<PRPoint> points;
  double auc = 0;
};

// Micro precision/recall over all (bag, relation) pairs; a pair is positive
// iff the relation is the bag's gold relation. Pairs are ranked by score
// (ties broken by bag id, then relation id) and equal-score runs form a
// single threshold. The curve starts at recall 0 with the precision of the
// first threshold; the AUC is the trapezoidal area under the stored points.
PRCurve pr_auc(std::span<const PredictionRecord> records);

// Same bags and labels with only valid (resp. noisy) sentences kept.
Dataset filter_valid(const Dataset& d);
Dataset filter_noisy(const Dataset& d);

struct EvalReport {
  double auc = 0;
  std::optional<double> aacc;  // not applicable for aggregators without attention
  double aucv = 0;
  double aucn = 0;
  PRCurve curve;
  PRCurve curve_valid;
  PRCurve curve_noisy;
};

EvalReport evaluate_model(const Model& model, const Dataset& test);

// CSV "recall,precision".
void write_pr_curve_csv(const PRCurve& curve, std::ostream& os);
// CSV "bag_id,sentence,weight,z" for the gold-query attention.
void write_attention_trace_csv(std::span<const PredictionRecord> records, std::ostream& os);

}  // namespace bagre
