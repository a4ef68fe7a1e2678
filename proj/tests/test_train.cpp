#include <doctest.h>

#include <random>
#include <sstream>

#include "bagre/aggregate.hpp"
#include "bagre/evaluate.hpp"
#include "bagre/kgembed.hpp"
#include "bagre/synthgen.hpp"
#include "bagre/train.hpp"
#include "oracles.hpp"

using namespace bagre;
using namespace bagre::testing;

namespace {

struct Fixture {
  SeedCorpus seed;
  Dataset train, dev;
  std::shared_ptr<const EmbeddingTable> kg;

  Fixture() {
    SeedCorpusConfig c;
    c.k_relations = 3;
    c.pairs_per_relation = 28;
    c.template_count = 3;
    seed = generate_seed_corpus(c);
    const auto split = split_seed_corpus(seed, SplitSpec{});
    train = build_training_set(seed, split.train, plan_pattern(Ratio(1, 2), Ratio(0), 60), 1);
    dev = build_eval_set(seed, split.dev, Split::kDev, 2);
    TransEConfig t;
    t.dim = 8;
    t.epochs = 5;
    kg = std::make_shared<const EmbeddingTable>(train_transe(build_kg(seed, 0.5, 3), t));
  }

  TrainConfig config(const char* kind) const {
    TrainConfig cfg;
    cfg.kind = parse_aggregator_kind(kind);
    cfg.loss_mode = default_loss_mode(cfg.kind);
    cfg.epochs = 2;
    cfg.dim = 8;
    return cfg;
  }
};

double max_abs_diff(Model a, Model b) {
  double out = 0;
  const auto pa = model_blocks(a), pb = model_blocks(b);
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (Eigen::Index j = 0; j < pa[i].size; ++j) out = std::max(out, std::abs(pa[i].data[j] - pb[i].data[j]));
  return out;
}

}  // namespace

TEST_CASE("default loss modes") {
  CHECK(default_loss_mode(parse_aggregator_kind("mean")) == LossMode::kSentence);
  CHECK(default_loss_mode(parse_aggregator_kind("mean+ce")) == LossMode::kSentence);
  CHECK(default_loss_mode(parse_aggregator_kind("att")) == LossMode::kBag);
  CHECK(default_loss_mode(parse_aggregator_kind("ka")) == LossMode::kBag);
  CHECK(default_loss_mode(parse_aggregator_kind("gate")) == LossMode::kBag);
  CHECK(parse_loss_mode(to_string(LossMode::kSentence)) == LossMode::kSentence);
  CHECK_THROWS_AS(parse_loss_mode("bags"), Error);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  c.fixed_alpha = 0.5;
  c.loss_mode = LossMode::kSentence;
  CHECK_THROWS_AS(c.validate(), Error);
  c.loss_mode = LossMode::kBag;
  c.fixed_alpha = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c.fixed_alpha.reset();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("analytic gradients match finite differences for every model") {
  std::mt19937_64 rng(21);
  const auto kg = random_kg_table(rng, 5, 3, 4);
  struct Case {
    const char* kind;
    LossMode mode;
    std::optional<double> alpha;
  };
  const Case cases[] = {
      {"mean", LossMode::kSentence, {}}, {"mean+ce", LossMode::kSentence, {}}, {"mean", LossMode::kBag, {}},
      {"att", LossMode::kBag, {}},       {"att+ce", LossMode::kBag, {}},       {"ka", LossMode::kBag, {}},
      {"gate", LossMode::kBag, {}},      {"att", LossMode::kBag, 0.7},         {"mean", LossMode::kBag, 0.2},
  };
  for (const auto& c : cases) {
    CAPTURE(c.kind);
    CAPTURE(static_cast<int>(c.mode));
    for (int trial = 0; trial < 3; ++trial) {
      const Model m = random_model(rng, parse_aggregator_kind(c.kind), 10, 3, 3, kg);
      const Bag bag = random_bag(rng, 10, 3, 5, c.alpha ? 2 : 3, c.alpha.has_value());
      const auto r = model_fd_check(bag, m, c.mode, c.alpha);
      CHECK(r.checked > 0);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("bag_loss contracts") {
  std::mt19937_64 rng(22);
  Model m = random_model(rng, parse_aggregator_kind("att"), 10, 3, 3, nullptr);
  Bag bag = random_bag(rng, 10, 3, 5, 3);
  CHECK(bag_loss(bag, m, LossMode::kBag, std::nullopt, nullptr) > 0);
  CHECK_THROWS_AS(bag_loss(bag, m, LossMode::kBag, 0.5, nullptr), Error);
  CHECK_THROWS_AS(bag_loss(bag, m, LossMode::kSentence, 0.5, nullptr), Error);
  CHECK_THROWS_AS(bag_loss(Bag{}, m, LossMode::kBag, std::nullopt, nullptr), Error);

  // Sentence mode never touches the attention path, so the query rows only
  // receive classifier gradient and KA/gate blocks stay at zero.
  Model g = random_model(rng, parse_aggregator_kind("gate"), 10, 3, 3, nullptr);
  ModelGrad grad(g);
  grad.set_zero();
  bag_loss(bag, g, LossMode::kSentence, std::nullopt, &grad);
  CHECK(grad.gate.weight.norm() == 0.0);
  CHECK(grad.gate.bias == 0.0);
  CHECK(grad.classifier.weight.norm() > 0.0);
}

TEST_CASE("fixed weights") {
  std::mt19937_64 rng(23);
  const Model m = random_model(rng, parse_aggregator_kind("att"), 10, 3, 3, nullptr);
  const Bag bag = random_bag(rng, 10, 3, 5, 2, true);
  // alpha = 1/2 is mean pooling under bag loss.
  Model mean = m;
  mean.kind = parse_aggregator_kind("mean");
  CHECK(bag_loss(bag, m, LossMode::kBag, 0.5, nullptr) ==
        doctest::Approx(bag_loss(bag, mean, LossMode::kBag, std::nullopt, nullptr)).epsilon(1e-14));

  // alpha = 1 routes no gradient into the noisy sentence's context tokens.
  ModelGrad grad(m);
  grad.set_zero();
  bag_loss(bag, m, LossMode::kBag, 1.0, &grad);
  const Sentence& noisy = bag.sentences[0].is_noisy() ? bag.sentences[0] : bag.sentences[1];
  const Sentence& valid = bag.sentences[0].is_noisy() ? bag.sentences[1] : bag.sentences[0];
  for (std::size_t i = 0; i < noisy.tokens.size(); ++i) {
    const TokenId t = noisy.tokens[i];
    if (std::find(valid.tokens.begin(), valid.tokens.end(), t) != valid.tokens.end()) continue;
    CHECK(grad.encoder.token_embeddings.row(t).norm() == 0.0);
  }

  const Bag three = random_bag(rng, 10, 3, 5, 3, true);
  CHECK_THROWS_AS(bag_loss(three, m, LossMode::kBag, 0.5, nullptr), Error);
}

TEST_CASE("training: no-op, determinism, checkpoint round trip") {
  const Fixture f;
  auto cfg = f.config("att");
  cfg.learning_rate = 0;
  const auto frozen = train_model(f.train, f.dev, cfg);
  const Model init = Model::init(cfg.kind, f.train.vocab_size, f.train.num_relations(), cfg.dim, nullptr, cfg.rng_seed);
  CHECK(max_abs_diff(frozen.best.model, init) == 0.0);

  cfg.learning_rate = 0.01;
  const auto a = train_model(f.train, f.dev, cfg);
  const auto b = train_model(f.train, f.dev, cfg);
  CHECK(max_abs_diff(a.best.model, b.best.model) == 0.0);
  CHECK(a.curve.size() == 2);
  CHECK(a.curve[1].train_loss < a.curve[0].train_loss);
  CHECK(a.best_dev_auc == doctest::Approx(pr_auc(predict(a.best.model, f.dev)).auc).epsilon(1e-12));

  std::stringstream ss;
  save_checkpoint(a.best, ss);
  const auto back = load_checkpoint(ss);
  CHECK(back.step == a.best.step);
  CHECK(max_abs_diff(back.model, a.best.model) == 0.0);
  CHECK(std::abs(pr_auc(predict(back.model, f.dev)).auc - a.best_dev_auc) <= 1e-12);

  std::ostringstream csv;
  write_curve_csv(a.curve, csv);
  CHECK(csv.str().rfind("epoch,step,loss,dev_auc\n", 0) == 0);
}

TEST_CASE("sentence-level training leaves attention parameters at their init") {
  const Fixture f;
  auto cfg = f.config("ka");
  cfg.loss_mode = LossMode::kSentence;
  const auto r = train_model(f.train, f.dev, cfg, f.kg);
  const Model init = Model::init(cfg.kind, f.train.vocab_size, f.train.num_relations(), cfg.dim, f.kg, cfg.rng_seed);
  CHECK((r.best.model.ka.weight - init.ka.weight).norm() == 0.0);
  CHECK((r.best.model.encoder.token_embeddings - init.encoder.token_embeddings).norm() > 0.0);
}

TEST_CASE("KG-dependent models need embeddings; checkpoints carry them") {
  const Fixture f;
  auto cfg = f.config("mean+ce");
  CHECK_THROWS_AS(train_model(f.train, f.dev, cfg), Error);
  const auto r = train_model(f.train, f.dev, cfg, f.kg);
  std::stringstream ss;
  save_checkpoint(r.best, ss);
  const auto back = load_checkpoint(ss);
  REQUIRE(back.model.kg);
  CHECK((back.model.kg->entity - f.kg->entity).norm() == 0.0);
}

TEST_CASE("fixed-weight sweep") {
  const Fixture f;
  const double alphas[] = {0.5, 1.0};
  const auto results = fixed_weight_sweep(f.train, f.dev, alphas, f.config("att"));
  CHECK(results.size() == 2);
  Dataset disturbing = build_training_set(f.seed, split_seed_corpus(f.seed, SplitSpec{}).train,
                                          plan_pattern(Ratio(1, 2), Ratio(1), 60), 1);
  CHECK_THROWS_AS(fixed_weight_sweep(disturbing, f.dev, alphas, f.config("att")), Error);
}

TEST_CASE("on an unambiguous corpus sentence-level training fits the valid sentences") {
  const SeedCorpus seed = generate_seed_corpus(SeedCorpusConfig{});
  const auto split = split_seed_corpus(seed, SplitSpec{});
  const Dataset train = build_training_set(
      seed, split.train, plan_pattern(Ratio(1, 2), Ratio(0), static_cast<int>(split.train.size())), 1);
  const Dataset dev = build_eval_set(seed, split.dev, Split::kDev, 2);
  TrainConfig cfg;
  cfg.kind = parse_aggregator_kind("mean");
  cfg.loss_mode = LossMode::kSentence;
  const auto r = train_model(train, dev, cfg);
  int correct = 0, total = 0;
  for (const auto& bag : train.bags) {
    for (const auto& s : bag.sentences) {
      if (!s.is_valid()) continue;
      Eigen::Index arg = 0;
      sentence_logits(encode(s, r.best.model.encoder).s_prime, r.best.model.classifier).maxCoeff(&arg);
      correct += arg == bag.relation ? 1 : 0;
      ++total;
    }
  }
  CHECK(static_cast<double>(correct) / total > 0.95);
}
