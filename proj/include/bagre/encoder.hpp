#pragma once

#include <cstdint>
#include <vector>

#include "bagre/corpus.hpp"
#include "bagre/linalg.hpp"

namespace bagre {

// Compact sentence encoder with entity markers:
//   m_h, m_t = mean embedding of the head / tail mention tokens
//   c        = mean embedding of every other token, the four markers included
//   u        = tanh(U c)
//   s'       = [m_h + u ; m_t + u]
// Marker rows sit at the tail of the embedding table, right after the corpus
// vocabulary. Markers are placed immediately before a span's first token and
// immediately after its last token.
struct EncoderParams {
  RowMatrix token_embeddings;  // (corpus_vocab + 4) x d
  Matrix context_map;          // d x d

  int dim() const { return static_cast<int>(token_embeddings.cols()); }
  int rep_dim() const { return 2 * dim(); }
  int corpus_vocab() const { return static_cast<int>(token_embeddings.rows()) - 4; }
  TokenId head_open() const { return corpus_vocab(); }
  TokenId head_close() const { return corpus_vocab() + 1; }
  TokenId tail_open() const { return corpus_vocab() + 2; }
  TokenId tail_close() const { return corpus_vocab() + 3; }

  static EncoderParams zeros(int corpus_vocab, int dim);
  static EncoderParams random(int corpus_vocab, int dim, std::uint64_t seed, double scale = 0.1);
};

struct EncoderGrad {
  RowMatrix token_embeddings;
  Matrix context_map;

  explicit EncoderGrad(const EncoderParams& p);
  void set_zero();
};

struct SentenceRep {
  Vector s_prime;  // 2d

  // Forward cache for encode_backward.
  Vector mention_head;
  Vector mention_tail;
  Vector context_mean;
  Vector context_act;  // u
  std::vector<TokenId> head_tokens;
  std::vector<TokenId> tail_tokens;
  std::vector<TokenId> context_tokens;  // markers included
  bool cached = false;
};

// Token sequence with the four markers inserted around the spans.
std::vector<TokenId> with_markers(const Sentence& s, const EncoderParams& p);

SentenceRep encode(const Sentence& s, const EncoderParams& p);

// Accumulates d(loss)/d(params) into grad given d(loss)/d(s').
void encode_backward(const SentenceRep& rep, const EncoderParams& p, const Vector& upstream, EncoderGrad& grad);

struct GradCheckReport {
  double max_rel_error = 0;
  int checked = 0;
  bool passed = false;
};

// Relative error |a - n| / max(|a|, |n|, floor): entries where both the
// analytic and numeric value are below `floor` count as absolute error.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Central-difference check of encode_backward on the scalar loss w . s' for
// a seeded random w, over the embedding rows the sentence touches and a
// random subset of context-map entries.
GradCheckReport grad_check(const EncoderParams& p, const Sentence& s, double tolerance,
                           std::uint64_t seed = 0, double eps = 1e-4);

}  // namespace bagre
