#include "bagre/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bagre {

EncoderParams EncoderParams::zeros(int corpus_vocab, int dim) {
  if (corpus_vocab < 1 || dim < 1) throw Error("bad encoder dimensions");
  return EncoderParams{RowMatrix::Zero(corpus_vocab + 4, dim), Matrix::Zero(dim, dim)};
}

EncoderParams EncoderParams::random(int corpus_vocab, int dim, std::uint64_t seed, double scale) {
  EncoderParams p = zeros(corpus_vocab, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (Eigen::Index i = 0; i < p.token_embeddings.size(); ++i) p.token_embeddings.data()[i] = normal(rng);
  const double bound = std::sqrt(3.0 / dim);
  std::uniform_real_distribution<double> unif(-bound, bound);
  for (Eigen::Index i = 0; i < p.context_map.size(); ++i) p.context_map.data()[i] = unif(rng);
  return p;
}

EncoderGrad::EncoderGrad(const EncoderParams& p)
    : token_embeddings(RowMatrix::Zero(p.token_embeddings.rows(), p.token_embeddings.cols())),
      context_map(Matrix::Zero(p.context_map.rows(), p.context_map.cols())) {}

void EncoderGrad::set_zero() {
  token_embeddings.setZero();
  context_map.setZero();
}

std::vector<TokenId> with_markers(const Sentence& s, const EncoderParams& p) {
  std::vector<TokenId> out;
  out.reserve(s.tokens.size() + 4);
  for (int i = 0; i < static_cast<int>(s.tokens.size()); ++i) {
    if (i == s.head.begin) out.push_back(p.head_open());
    if (i == s.tail.begin) out.push_back(p.tail_open());
    out.push_back(s.tokens[i]);
    if (i + 1 == s.head.end) out.push_back(p.head_close());
    if (i + 1 == s.tail.end) out.push_back(p.tail_close());
  }
  return out;
}

namespace {

Vector mean_rows(const RowMatrix& table, const std::vector<TokenId>& ids) {
  Vector m = Vector::Zero(table.cols());
  for (TokenId t : ids) m += table.row(t).transpose();
  return m / static_cast<double>(ids.size());
}

}  // namespace

SentenceRep encode(const Sentence& s, const EncoderParams& p) {
  const int n = static_cast<int>(s.tokens.size());
  if (s.head.size() <= 0 || s.tail.size() <= 0 || s.head.begin < 0 || s.tail.begin < 0 || s.head.end > n ||
      s.tail.end > n || s.head.overlaps(s.tail))
    throw Error("sentence has invalid mention spans");
  if (s.head.size() + s.tail.size() == n) throw Error("no context tokens");

  SentenceRep rep;
  for (int i = 0; i < n; ++i) {
    const TokenId t = s.tokens[i];
    if (t < 0 || t >= p.corpus_vocab()) throw Error("token id outside encoder vocabulary");
    if (s.head.contains(i)) rep.head_tokens.push_back(t);
    else if (s.tail.contains(i)) rep.tail_tokens.push_back(t);
    else rep.context_tokens.push_back(t);
  }
  for (TokenId m : {p.head_open(), p.head_close(), p.tail_open(), p.tail_close()}) rep.context_tokens.push_back(m);

  const int d = p.dim();
  rep.mention_head = mean_rows(p.token_embeddings, rep.head_tokens);
  rep.mention_tail = mean_rows(p.token_embeddings, rep.tail_tokens);
  rep.context_mean = mean_rows(p.token_embeddings, rep.context_tokens);
  rep.context_act = (p.context_map * rep.context_mean).array().tanh().matrix();
  rep.s_prime.resize(2 * d);
  rep.s_prime.head(d) = rep.mention_head + rep.context_act;
  rep.s_prime.tail(d) = rep.mention_tail + rep.context_act;
  rep.cached = true;
  return rep;
}

void encode_backward(const SentenceRep& rep, const EncoderParams& p, const Vector& upstream, EncoderGrad& grad) {
  if (!rep.cached) throw Error("encode_backward called without a forward cache");
  const int d = p.dim();
  if (upstream.size() != 2 * d) throw Error("upstream gradient has wrong dimension");
  const auto g_head = upstream.head(d);
  const auto g_tail = upstream.tail(d);

  const Vector pre_grad = ((g_head + g_tail).array() * (1.0 - rep.context_act.array().square())).matrix();
  grad.context_map.noalias() += pre_grad * rep.context_mean.transpose();
  const Vector ctx_grad = p.context_map.transpose() * pre_grad / static_cast<double>(rep.context_tokens.size());

  const double hn = 1.0 / static_cast<double>(rep.head_tokens.size());
  const double tn = 1.0 / static_cast<double>(rep.tail_tokens.size());
  for (TokenId t : rep.head_tokens) grad.token_embeddings.row(t) += hn * g_head.transpose();
  for (TokenId t : rep.tail_tokens) grad.token_embeddings.row(t) += tn * g_tail.transpose();
  for (TokenId t : rep.context_tokens) grad.token_embeddings.row(t) += ctx_grad.transpose();
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const EncoderParams& params, const Sentence& s, double tolerance, std::uint64_t seed,
                           double eps) {
  if (!params.token_embeddings.allFinite() || !params.context_map.allFinite())
    throw Error("grad_check: non-finite parameters");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector w(params.rep_dim());
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = normal(rng);

  EncoderParams p = params;
  const SentenceRep rep = encode(s, p);
  EncoderGrad grad(p);
  encode_backward(rep, p, w, grad);

  auto loss = [&] { return w.dot(encode(s, p).s_prime); };
  GradCheckReport report;
  auto check = [&](double& slot, double analytic) {
    const double old = slot;
    slot = old + eps;
    const double up = loss();
    slot = old - eps;
    const double down = loss();
    slot = old;
    const double numeric = (up - down) / (2 * eps);
    if (!std::isfinite(numeric) || !std::isfinite(analytic)) throw Error("grad_check: non-finite values");
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic, numeric));
    ++report.checked;
  };

  std::vector<TokenId> rows = rep.head_tokens;
  rows.insert(rows.end(), rep.tail_tokens.begin(), rep.tail_tokens.end());
  rows.insert(rows.end(), rep.context_tokens.begin(), rep.context_tokens.end());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  for (TokenId t : rows)
    for (int j = 0; j < p.dim(); ++j) check(p.token_embeddings(t, j), grad.token_embeddings(t, j));

  const int n_map = std::min<int>(64, static_cast<int>(p.context_map.size()));
  std::uniform_int_distribution<Eigen::Index> pick(0, p.context_map.size() - 1);
  for (int k = 0; k < n_map; ++k) {
    const Eigen::Index i = pick(rng);
    check(p.context_map.data()[i], grad.context_map.data()[i]);
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace bagre
