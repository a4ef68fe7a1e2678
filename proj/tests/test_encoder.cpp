#include <doctest.h>

#include <random>

#include "bagre/encoder.hpp"
#include "bagre/synthgen.hpp"
#include "oracles.hpp"

using namespace bagre;
using bagre::testing::make_sentence;

TEST_CASE("markers sit immediately around each span") {
  const auto p = EncoderParams::zeros(10, 4);
  const Sentence s = make_sentence({1, 2, 3, 4, 5, 6}, {1, 3}, {4, 5});
  const std::vector<TokenId> expect{1, p.head_open(), 2, 3, p.head_close(), 4, p.tail_open(), 5, p.tail_close(), 6};
  CHECK(with_markers(s, p) == expect);
  // Tail first.
  const Sentence r = make_sentence({1, 2, 3}, {2, 3}, {0, 1});
  const std::vector<TokenId> expect_r{p.tail_open(), 1, p.tail_close(), 2, p.head_open(), 3, p.head_close()};
  CHECK(with_markers(r, p) == expect_r);
}

TEST_CASE("zero parameters encode to zero") {
  const auto p = EncoderParams::zeros(10, 4);
  const auto rep = encode(make_sentence({1, 2, 3, 4}, {0, 1}, {2, 3}), p);
  CHECK(rep.s_prime.size() == 8);
  CHECK(rep.s_prime.norm() == 0.0);
}

TEST_CASE("encoder follows its definition") {
  const auto p = EncoderParams::random(10, 3, 4, 0.5);
  const Sentence s = make_sentence({7, 1, 2, 8, 3}, {1, 3}, {4, 5});
  const auto rep = encode(s, p);
  const auto E = p.token_embeddings;
  const Vector mh = (E.row(1) + E.row(2)).transpose() / 2;
  const Vector mt = E.row(3).transpose();
  Vector c = (E.row(7) + E.row(8) + E.row(p.head_open()) + E.row(p.head_close()) + E.row(p.tail_open()) +
              E.row(p.tail_close()))
                 .transpose() /
             6;
  const Vector u = (p.context_map * c).array().tanh();
  Vector expect(6);
  expect << mh + u, mt + u;
  CHECK((rep.s_prime - expect).norm() < 1e-14);
}

TEST_CASE("context order does not matter and context changes s'") {
  const auto p = EncoderParams::random(12, 4, 9, 0.5);
  const auto a = encode(make_sentence({5, 1, 6, 7, 2, 8}, {1, 2}, {4, 5}), p);
  const auto b = encode(make_sentence({8, 1, 7, 6, 2, 5}, {1, 2}, {4, 5}), p);
  CHECK((a.s_prime - b.s_prime).norm() < 1e-14);
  const auto c = encode(make_sentence({9, 1, 6, 7, 2, 8}, {1, 2}, {4, 5}), p);
  CHECK((a.s_prime - c.s_prime).norm() > 1e-6);
}

TEST_CASE("changing mentions leaves the context term unchanged") {
  const auto p = EncoderParams::random(12, 4, 9, 0.5);
  const auto a = encode(make_sentence({5, 1, 6, 2, 8}, {1, 2}, {3, 4}), p);
  const auto b = encode(make_sentence({5, 10, 6, 11, 8}, {1, 2}, {3, 4}), p);
  CHECK((a.context_act - b.context_act).norm() == 0.0);
}

TEST_CASE("a sentence made only of mentions has no context") {
  // Markers alone are not context: the corpus tokens around the spans are.
  const auto p = EncoderParams::random(12, 4, 9);
  CHECK_THROWS_WITH_AS(encode(make_sentence({1, 2}, {0, 1}, {1, 2}), p), "no context tokens", Error);
}

TEST_CASE("backward: sparsity, zero upstream, missing cache") {
  const auto p = EncoderParams::random(12, 4, 2, 0.5);
  const Sentence s = make_sentence({5, 1, 6, 2, 8}, {1, 2}, {3, 4});
  const auto rep = encode(s, p);
  EncoderGrad g(p);
  g.set_zero();
  encode_backward(rep, p, Vector::Zero(8), g);
  CHECK(g.token_embeddings.norm() == 0.0);
  CHECK(g.context_map.norm() == 0.0);

  encode_backward(rep, p, Vector::Ones(8), g);
  for (int row : {0, 3, 4, 7, 9, 10, 11}) CHECK(g.token_embeddings.row(row).norm() == 0.0);
  for (int row : {1, 2, 5, 6, 8}) CHECK(g.token_embeddings.row(row).norm() > 0.0);

  SentenceRep empty;
  CHECK_THROWS_AS(encode_backward(empty, p, Vector::Ones(8), g), Error);
}

TEST_CASE("finite-difference check on seed-corpus sentences") {
  SeedCorpusConfig c;
  c.k_relations = 3;
  c.pairs_per_relation = 5;
  const auto seed = generate_seed_corpus(c);
  const auto p = EncoderParams::random(seed.vocab_size, 6, 3, 0.5);
  for (std::size_t i = 0; i < seed.sentences.size(); i += 3) {
    const auto r = grad_check(p, seed.sentences[i], 1e-4, i);
    CHECK(r.passed);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-4);
  }
  CHECK_FALSE(grad_check(p, seed.sentences[0], 0.0, 1).passed);
  CHECK(grad_check(EncoderParams::zeros(seed.vocab_size, 6), seed.sentences[0], 1e-4, 1).passed);
}

TEST_CASE("relative error uses the floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-3));
}
