#include "bagre/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "bagre/aggregate.hpp"
#include "bagre/encoder.hpp"
#include "bagre/evaluate.hpp"

namespace bagre {

std::string_view to_string(LossMode m) { return m == LossMode::kBag ? "bag" : "sentence"; }

LossMode parse_loss_mode(std::string_view s) {
  if (s == "bag") return LossMode::kBag;
  if (s == "sentence") return LossMode::kSentence;
  throw Error("unknown loss mode '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (fixed_alpha) {
    if (loss_mode != LossMode::kBag) throw Error("fixed_alpha requires bag loss");
    if (!(*fixed_alpha >= 0.0 && *fixed_alpha <= 1.0)) throw Error("fixed_alpha must lie in [0, 1]");
  }
  if (epochs < 0 || batch_size < 1 || dim < 1 || dev_every < 1) throw Error("bad training schedule");
  if (!(learning_rate >= 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0))
    throw Error("bad optimizer hyperparameters");
}

LossMode default_loss_mode(AggregatorKind kind) {
  return kind.aggregator == Aggregator::kMean ? LossMode::kSentence : LossMode::kBag;
}

namespace {

struct Encoded {
  std::vector<SentenceRep> sentences;
  RowMatrix reps;
};

Encoded encode_bag(const Bag& bag, const Model& model) {
  Encoded e;
  const int enc = model.encoder.rep_dim();
  e.reps.resize(bag.sentences.size(), model.rep_dim());
  Vector latent;
  if (model.kind.use_ce) latent = latent_relation(bag.head, bag.tail, *model.kg);
  for (std::size_t i = 0; i < bag.sentences.size(); ++i) {
    e.sentences.push_back(encode(bag.sentences[i], model.encoder));
    e.reps.row(i).head(enc) = e.sentences.back().s_prime.transpose();
    if (model.kind.use_ce) e.reps.row(i).tail(latent.size()) = latent.transpose();
  }
  return e;
}

void backward_encoder(const Encoded& e, const RowMatrix& rep_grads, const Model& model, ModelGrad& grad) {
  const int enc = model.encoder.rep_dim();
  for (std::size_t i = 0; i < e.sentences.size(); ++i) {
    const Vector g = rep_grads.row(i).head(enc).transpose();
    encode_backward(e.sentences[i], model.encoder, g, grad.encoder);
  }
}

// Softmax backward: d(loss)/d(omega) from d(loss)/d(alpha).
Vector softmax_backward(const Vector& alpha, const Vector& d_alpha) {
  return (alpha.array() * (d_alpha.array() - alpha.dot(d_alpha))).matrix();
}

double sentence_mode_loss(const Bag& bag, const Model& model, ModelGrad* grad) {
  const Encoded e = encode_bag(bag, model);
  const auto& cls = model.classifier;
  RowMatrix rep_grads(e.reps.rows(), e.reps.cols());
  double loss = 0;
  for (Eigen::Index i = 0; i < e.reps.rows(); ++i) {
    const Vector rep = e.reps.row(i).transpose();
    const Vector p = softmax(cls.weight * rep + cls.bias);
    loss -= std::log(p[bag.relation]);
    if (!grad) continue;
    Vector d_logits = p;
    d_logits[bag.relation] -= 1.0;
    grad->classifier.weight.noalias() += d_logits * rep.transpose();
    grad->classifier.bias += d_logits;
    rep_grads.row(i) = (cls.weight.transpose() * d_logits).transpose();
  }
  if (grad) backward_encoder(e, rep_grads, model, *grad);
  return loss;
}

Vector fixed_weights(const Bag& bag, double alpha) {
  int valid = 0, noisy = 0;
  for (const auto& s : bag.sentences) {
    valid += s.is_valid() ? 1 : 0;
    noisy += s.is_noisy() ? 1 : 0;
  }
  if (bag.sentences.size() != 2 || valid != 1 || noisy != 1)
    throw Error("fixed attention weights need a bag with exactly one valid and one noisy sentence (bag " +
                std::to_string(bag.id) + ")");
  Vector w(2);
  for (int i = 0; i < 2; ++i) w[i] = bag.sentences[i].is_valid() ? alpha : 1.0 - alpha;
  return w;
}

double bag_mode_loss(const Bag& bag, const Model& model, std::optional<double> fixed_alpha, ModelGrad* grad) {
  const Encoded e = encode_bag(bag, model);
  const RowMatrix& S = e.reps;
  const auto& cls = model.classifier;
  const RelationId y = bag.relation;
  const Aggregator agg = fixed_alpha ? Aggregator::kMean : model.kind.aggregator;

  // Forward.
  Vector w;
  Matrix ka_act;  // m x d_e, KA only
  Vector latent;
  if (fixed_alpha) {
    w = fixed_weights(bag, *fixed_alpha);
  } else {
    switch (agg) {
      case Aggregator::kMean:
        w = Vector::Constant(S.rows(), 1.0 / static_cast<double>(S.rows()));
        break;
      case Aggregator::kAtt:
        w = att_weights(S, y, cls);
        break;
      case Aggregator::kKa:
        latent = latent_relation(bag.head, bag.tail, *model.kg);
        ka_act = ((S * model.ka.weight.transpose()).rowwise() + model.ka.bias.transpose()).array().tanh();
        w = softmax(ka_act * latent);
        break;
      case Aggregator::kGate:
        w = gate_weights(S, model.gate);
        break;
    }
  }
  const Vector pooled = S.transpose() * w;
  const Vector p = softmax(cls.weight * pooled + cls.bias);
  const double loss = -std::log(p[y]);
  if (!grad) return loss;

  // Backward.
  Vector d_logits = p;
  d_logits[y] -= 1.0;
  grad->classifier.weight.noalias() += d_logits * pooled.transpose();
  grad->classifier.bias += d_logits;
  const Vector d_pooled = cls.weight.transpose() * d_logits;
  RowMatrix rep_grads = w * d_pooled.transpose();
  const Vector d_w = S * d_pooled;

  if (!fixed_alpha) {
    switch (agg) {
      case Aggregator::kMean:
        break;
      case Aggregator::kAtt: {
        const Vector d_omega = softmax_backward(w, d_w);
        grad->classifier.weight.row(y) += (S.transpose() * d_omega).transpose();
        rep_grads.noalias() += d_omega * cls.weight.row(y);
        break;
      }
      case Aggregator::kKa: {
        const Vector d_omega = softmax_backward(w, d_w);
        // d(pre-activation) = d_omega_i * latent (.) (1 - a_i^2), one row per sentence.
        const Matrix d_pre = ((d_omega * latent.transpose()).array() * (1.0 - ka_act.array().square())).matrix();
        grad->ka.weight.noalias() += d_pre.transpose() * S;
        grad->ka.bias += d_pre.colwise().sum().transpose();
        rep_grads.noalias() += d_pre * model.ka.weight;
        break;
      }
      case Aggregator::kGate: {
        const Vector d_z = (d_w.array() * w.array() * (1.0 - w.array())).matrix();
        grad->gate.weight.noalias() += S.transpose() * d_z;
        grad->gate.bias += d_z.sum();
        rep_grads.noalias() += d_z * model.gate.weight.transpose();
        break;
      }
    }
  }
  backward_encoder(e, rep_grads, model, *grad);
  return loss;
}

}  // namespace

double bag_loss(const Bag& bag, const Model& model, LossMode mode, std::optional<double> fixed_alpha,
                ModelGrad* grad) {
  if (bag.sentences.empty()) throw Error("empty bag");
  if (mode == LossMode::kSentence) {
    if (fixed_alpha) throw Error("fixed_alpha requires bag loss");
    return sentence_mode_loss(bag, model, grad);
  }
  return bag_mode_loss(bag, model, fixed_alpha, grad);
}

Adam::Adam(Model& model, const TrainConfig& cfg)
    : lr_(cfg.learning_rate), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.epsilon) {
  for (const auto& b : model_blocks(model)) {
    m_.push_back(Vector::Zero(b.size));
    v_.push_back(Vector::Zero(b.size));
  }
}

void Adam::step(Model& model, ModelGrad& grad, double scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  auto params = model_blocks(model);
  auto grads = grad_blocks(grad, model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Vector> p(params[i].data, params[i].size);
    const Vector g = Eigen::Map<const Vector>(grads[i].data, grads[i].size) * scale;
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseAbs2();
    p.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

TrainResult train_model(const Dataset& train, const Dataset& dev, const TrainConfig& cfg,
                        std::shared_ptr<const EmbeddingTable> kg) {
  cfg.validate();
  if (train.bags.empty()) throw Error("empty training set");
  if (cfg.kind.needs_kg() && !kg) throw Error(to_string(cfg.kind) + " requires KG embeddings");
  if (cfg.fixed_alpha)
    for (const auto& bag : train.bags) fixed_weights(bag, *cfg.fixed_alpha);

  Model model = Model::init(cfg.kind, train.vocab_size, train.num_relations(), cfg.dim, kg, cfg.rng_seed);
  Adam adam(model, cfg);
  ModelGrad grad(model);

  // Training units: whole bags, or (bag, sentence) pairs in sentence mode.
  struct Unit {
    std::size_t bag;
    int sentence;  // -1 for the whole bag
  };
  std::vector<Unit> units;
  for (std::size_t b = 0; b < train.bags.size(); ++b) {
    if (cfg.loss_mode == LossMode::kBag) {
      units.push_back({b, -1});
    } else {
      for (std::size_t j = 0; j < train.bags[b].sentences.size(); ++j) units.push_back({b, static_cast<int>(j)});
    }
  }

  TrainResult result;
  result.best = {model, 0, cfg.rng_seed};
  result.best_dev_auc = -1;
  Bag single;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(cfg.rng_seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(units.begin(), units.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < units.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(units.size(), start + cfg.batch_size);
      grad.set_zero();
      for (std::size_t u = start; u < end; ++u) {
        const Bag& bag = train.bags[units[u].bag];
        const Bag* unit_bag = &bag;
        if (units[u].sentence >= 0) {
          single.id = bag.id;
          single.head = bag.head;
          single.tail = bag.tail;
          single.relation = bag.relation;
          single.sentences.assign(1, bag.sentences[units[u].sentence]);
          unit_bag = &single;
        }
        const double loss = bag_loss(*unit_bag, model, cfg.loss_mode, cfg.fixed_alpha, &grad);
        if (!std::isfinite(loss))
          throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                      ", bag " + std::to_string(bag.id));
        epoch_loss += loss;
      }
      adam.step(model, grad, 1.0 / static_cast<double>(end - start));
      ++step;
    }
    CurvePoint point{epoch, step, epoch_loss / static_cast<double>(units.size()), std::nullopt};
    if ((epoch + 1) % cfg.dev_every == 0 || epoch + 1 == cfg.epochs) {
      const double auc = pr_auc(predict(model, dev)).auc;
      point.dev_auc = auc;
      if (auc > result.best_dev_auc) {
        result.best_dev_auc = auc;
        result.best = {model, step, cfg.rng_seed};
      }
    }
    result.curve.push_back(point);
  }
  if (cfg.epochs == 0) result.best_dev_auc = pr_auc(predict(model, dev)).auc;
  return result;
}

std::vector<TrainResult> fixed_weight_sweep(const Dataset& train, const Dataset& dev, std::span<const double> alphas,
                                            const TrainConfig& cfg, std::shared_ptr<const EmbeddingTable> kg) {
  for (const auto& bag : train.bags) {
    if (is_disturbing(bag)) throw Error("fixed-weight sweep got disturbing bag " + std::to_string(bag.id));
  }
  std::vector<TrainResult> out;
  for (double alpha : alphas) {
    TrainConfig c = cfg;
    c.loss_mode = LossMode::kBag;
    c.fixed_alpha = alpha;
    out.push_back(train_model(train, dev, c, kg));
  }
  return out;
}

void write_curve_csv(const std::vector<CurvePoint>& curve, std::ostream& os) {
  os << "epoch,step,loss,dev_auc\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : curve) {
    os << p.epoch << ',' << p.step << ',' << p.train_loss << ',';
    if (p.dev_auc) os << *p.dev_auc;
    os << '\n';
  }
}

}  // namespace bagre
