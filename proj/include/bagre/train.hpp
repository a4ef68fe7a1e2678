#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "bagre/corpus.hpp"
#include "bagre/kgembed.hpp"
#include "bagre/model.hpp"

namespace bagre {

enum class LossMode : std::uint8_t {
  kBag,       // -log P(y | B) with aggregator weights
  kSentence,  // -sum_j log P(y | s_j), every sentence on its own
};

std::string_view to_string(LossMode m);
LossMode parse_loss_mode(std::string_view s);

struct TrainConfig {
  LossMode loss_mode = LossMode::kBag;
  AggregatorKind kind;
  // Fixed weight alpha on the valid sentence and 1 - alpha on the noisy one,
  // routed by ground-truth labels. Bag loss and {valid, noisy} bags only.
  std::optional<double> fixed_alpha;

  // Adam.
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  int epochs = 10;
  int batch_size = 16;
  int dim = 64;
  std::uint64_t rng_seed = 1;
  // Dev AUC is computed every dev_every epochs and after the last one; the
  // best-on-dev parameters are returned.
  int dev_every = 1;

  void validate() const;
};

// The loss each of the five studied models trains with: mean aggregation
// (with or without CE) trains sentence-level, attention kinds bag-level.
LossMode default_loss_mode(AggregatorKind kind);

// Loss of one bag; when grad is non-null its gradient is accumulated there.
// KG embeddings stay frozen.
double bag_loss(const Bag& bag, const Model& model, LossMode mode, std::optional<double> fixed_alpha,
                ModelGrad* grad);

struct CurvePoint {
  int epoch = 0;
  std::int64_t step = 0;
  double train_loss = 0;  // mean per training unit over the epoch
  std::optional<double> dev_auc;
};

struct TrainResult {
  ModelCheckpoint best;
  std::vector<CurvePoint> curve;
  double best_dev_auc = 0;
};

// Adam optimizer over the model's trainable blocks.
class Adam {
 public:
  Adam(Model& model, const TrainConfig& cfg);
  void step(Model& model, ModelGrad& grad, double scale);
  std::int64_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Vector> m_, v_;
};

TrainResult train_model(const Dataset& train, const Dataset& dev, const TrainConfig& cfg,
                        std::shared_ptr<const EmbeddingTable> kg = nullptr);

// Trains one model per alpha with weights fixed from ground-truth labels.
// Every training bag must hold exactly one valid and one noisy sentence.
std::vector<TrainResult> fixed_weight_sweep(const Dataset& train, const Dataset& dev, std::span<const double> alphas,
                                            const TrainConfig& cfg, std::shared_ptr<const EmbeddingTable> kg = nullptr);

// CSV "epoch,step,loss,dev_auc".
void write_curve_csv(const std::vector<CurvePoint>& curve, std::ostream& os);

}  // namespace bagre
