#include "bagre/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "bagre/aggregate.hpp"

namespace bagre {

std::vector<PredictionRecord> predict(const Model& model, const Dataset& d) {
  model.validate();
  std::vector<PredictionRecord> out;
  out.reserve(d.bags.size());
  for (const auto& bag : d.bags) {
    const BagScore score = score_bag(bag, model);
    PredictionRecord rec;
    rec.bag_id = bag.id;
    rec.scores = score.scores;
    rec.gold = bag.relation;
    if (const Vector* w = score.attention_for(bag.relation)) rec.attention = *w;
    for (const auto& s : bag.sentences) rec.z.push_back(s.z);
    out.push_back(std::move(rec));
  }
  return out;
}

double attention_accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) throw Error("no records");
  double total = 0;
  for (const auto& r : records) {
    if (r.attention.size() == 0) throw Error("record has no attention trace");
    if (static_cast<std::size_t>(r.attention.size()) != r.z.size())
      throw Error("attention trace length differs from bag size");
    std::vector<double> valid, noisy;
    for (std::size_t j = 0; j < r.z.size(); ++j) {
      if (r.z[j] == AttentionLabel::kUnknown) throw Error("unlabeled noise status");
      (r.z[j] == AttentionLabel::kValid ? valid : noisy).push_back(r.attention[j]);
    }
    if (valid.empty() || noisy.empty())
      throw Error("attention accuracy is undefined on disturbing bag " + std::to_string(r.bag_id));
    // Count valid > noisy pairs by sorting the noisy weights.
    std::sort(noisy.begin(), noisy.end());
    std::size_t wins = 0;
    for (double v : valid) wins += std::lower_bound(noisy.begin(), noisy.end(), v) - noisy.begin();
    total += static_cast<double>(wins) / static_cast<double>(valid.size() * noisy.size());
  }
  return total / static_cast<double>(records.size());
}

PRCurve pr_auc(std::span<const PredictionRecord> records) {
  struct Pair {
    double score;
    BagId bag;
    RelationId rel;
    bool positive;
  };
  std::vector<Pair> pairs;
  std::size_t positives = 0;
  for (const auto& r : records) {
    if (r.scores.size() < 2) throw Error("need at least 2 relations");
    for (Eigen::Index k = 0; k < r.scores.size(); ++k) {
      if (!std::isfinite(r.scores[k])) throw Error("non-finite score");
      const bool pos = k == r.gold;
      positives += pos ? 1 : 0;
      pairs.push_back({r.scores[k], r.bag_id, static_cast<RelationId>(k), pos});
    }
  }
  if (positives == 0) throw Error("no positive pairs");
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.bag != b.bag) return a.bag < b.bag;
    return a.rel < b.rel;
  });

  PRCurve curve;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    for (; j < pairs.size() && pairs[j].score == pairs[i].score; ++j) tp += pairs[j].positive ? 1 : 0;
    seen += j - i;
    curve.points.push_back({static_cast<double>(tp) / static_cast<double>(positives),
                            static_cast<double>(tp) / static_cast<double>(seen)});
    i = j;
  }
  curve.points.insert(curve.points.begin(), PRPoint{0.0, curve.points.front().precision});
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    curve.auc += (b.recall - a.recall) * (a.precision + b.precision) / 2.0;
  }
  return curve;
}

namespace {

Dataset keep_only(const Dataset& d, AttentionLabel keep) {
  Dataset out = d;
  for (auto& bag : out.bags) {
    std::erase_if(bag.sentences, [&](const Sentence& s) {
      if (s.z == AttentionLabel::kUnknown) throw Error("unlabeled noise status");
      return s.z != keep;
    });
    if (bag.sentences.empty()) throw Error("filtering would empty bag " + std::to_string(bag.id));
  }
  return out;
}

}  // namespace

Dataset filter_valid(const Dataset& d) { return keep_only(d, AttentionLabel::kValid); }
Dataset filter_noisy(const Dataset& d) { return keep_only(d, AttentionLabel::kNoisy); }

EvalReport evaluate_model(const Model& model, const Dataset& test) {
  EvalReport rep;
  const auto records = predict(model, test);
  rep.curve = pr_auc(records);
  rep.auc = rep.curve.auc;
  if (model.kind.has_attention()) rep.aacc = attention_accuracy(records);
  rep.curve_valid = pr_auc(predict(model, filter_valid(test)));
  rep.aucv = rep.curve_valid.auc;
  rep.curve_noisy = pr_auc(predict(model, filter_noisy(test)));
  rep.aucn = rep.curve_noisy.auc;
  return rep;
}

void write_pr_curve_csv(const PRCurve& curve, std::ostream& os) {
  os << "recall,precision\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : curve.points) os << p.recall << ',' << p.precision << '\n';
}

void write_attention_trace_csv(std::span<const PredictionRecord> records, std::ostream& os) {
  os << "bag_id,sentence,weight,z\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : records) {
    for (Eigen::Index j = 0; j < r.attention.size(); ++j) {
      const auto z = r.z[j];
      os << r.bag_id << ',' << j << ',' << r.attention[j] << ','
         << (z == AttentionLabel::kUnknown ? "" : (z == AttentionLabel::kValid ? "1" : "0")) << '\n';
    }
  }
}

}  // namespace bagre
