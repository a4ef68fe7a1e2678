#include "bagre/model.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

namespace bagre {

std::string to_string(AggregatorKind k) {
  std::string base;
  switch (k.aggregator) {
    case Aggregator::kMean: base = "mean"; break;
    case Aggregator::kAtt: base = "att"; break;
    case Aggregator::kKa: base = "ka"; break;
    case Aggregator::kGate: base = "gate"; break;
  }
  return k.use_ce ? base + "+ce" : base;
}

AggregatorKind parse_aggregator_kind(std::string_view s) {
  AggregatorKind k;
  if (s.ends_with("+ce")) {
    k.use_ce = true;
    s.remove_suffix(3);
  }
  if (s == "mean") k.aggregator = Aggregator::kMean;
  else if (s == "att") k.aggregator = Aggregator::kAtt;
  else if (s == "ka") k.aggregator = Aggregator::kKa;
  else if (s == "gate") k.aggregator = Aggregator::kGate;
  else throw Error("unknown aggregator '" + std::string(s) + "'");
  return k;
}

Model Model::init(AggregatorKind kind, int corpus_vocab, int num_relations, int dim,
                  std::shared_ptr<const EmbeddingTable> kg, std::uint64_t seed) {
  if (kind.needs_kg() && !kg) throw Error(to_string(kind) + " requires KG embeddings");
  if (num_relations < 2) throw Error("need at least 2 relations");
  Model m;
  m.kind = kind;
  m.kg = std::move(kg);
  m.encoder = EncoderParams::random(corpus_vocab, dim, seed);

  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  const int D = m.rep_dim();
  auto fill = [&](double* data, Eigen::Index n, double bound) {
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (Eigen::Index i = 0; i < n; ++i) data[i] = unif(rng);
  };
  const double glorot = std::sqrt(6.0 / (D + num_relations));
  m.classifier.weight.resize(num_relations, D);
  fill(m.classifier.weight.data(), m.classifier.weight.size(), glorot);
  m.classifier.bias = Vector::Zero(num_relations);
  if (kind.aggregator == Aggregator::kKa) {
    const int de = m.kg_dim();
    m.ka.weight.resize(de, D);
    fill(m.ka.weight.data(), m.ka.weight.size(), std::sqrt(6.0 / (D + de)));
    m.ka.bias = Vector::Zero(de);
  }
  if (kind.aggregator == Aggregator::kGate) {
    m.gate.weight = Vector::Zero(D);
    fill(m.gate.weight.data(), D, std::sqrt(3.0 / D));
    m.gate.bias = 0.0;
  }
  return m;
}

void Model::validate() const {
  if (kind.needs_kg() && !kg) throw Error(to_string(kind) + " requires KG embeddings");
  const int D = rep_dim();
  if (classifier.weight.cols() != D || classifier.bias.size() != classifier.weight.rows())
    throw Error("classifier dimensions inconsistent with representation dimension");
  if (encoder.context_map.rows() != encoder.dim() || encoder.context_map.cols() != encoder.dim())
    throw Error("context map must be d x d");
  if (kind.aggregator == Aggregator::kKa &&
      (ka.weight.rows() != kg_dim() || ka.weight.cols() != D || ka.bias.size() != kg_dim()))
    throw Error("KA parameter dimensions inconsistent");
  if (kind.aggregator == Aggregator::kGate && gate.weight.size() != D)
    throw Error("gate parameter dimensions inconsistent");
}

ModelGrad::ModelGrad(const Model& m) : encoder(m.encoder) {
  classifier.weight = RowMatrix::Zero(m.classifier.weight.rows(), m.classifier.weight.cols());
  classifier.bias = Vector::Zero(m.classifier.bias.size());
  ka.weight = RowMatrix::Zero(m.ka.weight.rows(), m.ka.weight.cols());
  ka.bias = Vector::Zero(m.ka.bias.size());
  gate.weight = Vector::Zero(m.gate.weight.size());
  gate.bias = 0;
}

void ModelGrad::set_zero() {
  encoder.set_zero();
  classifier.weight.setZero();
  classifier.bias.setZero();
  ka.weight.setZero();
  ka.bias.setZero();
  gate.weight.setZero();
  gate.bias = 0;
}

ModelGrad& ModelGrad::operator+=(const ModelGrad& o) {
  encoder.token_embeddings += o.encoder.token_embeddings;
  encoder.context_map += o.encoder.context_map;
  classifier.weight += o.classifier.weight;
  classifier.bias += o.classifier.bias;
  ka.weight += o.ka.weight;
  ka.bias += o.ka.bias;
  gate.weight += o.gate.weight;
  gate.bias += o.gate.bias;
  return *this;
}

namespace {

template <class Enc, class Cls, class Ka, class Gate>
std::vector<ParamBlock> blocks(Enc& enc, Cls& cls, Ka& ka, Gate& gate, AggregatorKind kind) {
  std::vector<ParamBlock> out = {
      {"encoder.token_embeddings", enc.token_embeddings.data(), enc.token_embeddings.size()},
      {"encoder.context_map", enc.context_map.data(), enc.context_map.size()},
      {"classifier.weight", cls.weight.data(), cls.weight.size()},
      {"classifier.bias", cls.bias.data(), cls.bias.size()},
  };
  if (kind.aggregator == Aggregator::kKa) {
    out.push_back({"ka.weight", ka.weight.data(), ka.weight.size()});
    out.push_back({"ka.bias", ka.bias.data(), ka.bias.size()});
  }
  if (kind.aggregator == Aggregator::kGate) {
    out.push_back({"gate.weight", gate.weight.data(), gate.weight.size()});
    out.push_back({"gate.bias", &gate.bias, 1});
  }
  return out;
}

void write_block(std::ostream& os, std::string_view name, const double* data, Eigen::Index rows, Eigen::Index cols) {
  os << name << ' ' << rows << ' ' << cols << '\n';
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) os << (j ? " " : "") << data[i * cols + j];
    os << '\n';
  }
}

template <class M>
void write_matrix(std::ostream& os, std::string_view name, const M& m) {
  // Row-major traversal regardless of storage order.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  write_block(os, name, rm.data(), rm.rows(), rm.cols());
}

RowMatrix read_matrix(std::istream& is, std::string_view expected) {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> name >> rows >> cols) || name != expected || rows < 0 || cols < 0)
    throw Error("checkpoint: expected block '" + std::string(expected) + "'");
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (!(is >> m.data()[i])) throw Error("checkpoint: truncated block '" + std::string(expected) + "'");
  return m;
}

constexpr std::string_view kMagic = "bagre-checkpoint 1";

}  // namespace

std::vector<ParamBlock> model_blocks(Model& m) {
  return blocks(m.encoder, m.classifier, m.ka, m.gate, m.kind);
}

std::vector<ParamBlock> grad_blocks(ModelGrad& g, const Model& m) {
  return blocks(g.encoder, g.classifier, g.ka, g.gate, m.kind);
}

void save_checkpoint(const ModelCheckpoint& ckpt, std::ostream& os) {
  const Model& m = ckpt.model;
  m.validate();
  nlohmann::json meta = {{"kind", to_string(m.kind)},
                         {"step", ckpt.step},
                         {"seed", ckpt.seed},
                         {"corpus_vocab", m.encoder.corpus_vocab()},
                         {"dim", m.encoder.dim()},
                         {"relations", m.num_relations()},
                         {"kg", static_cast<bool>(m.kg)}};
  os << kMagic << '\n' << meta.dump() << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  write_matrix(os, "encoder.token_embeddings", m.encoder.token_embeddings);
  write_matrix(os, "encoder.context_map", m.encoder.context_map);
  write_matrix(os, "classifier.weight", m.classifier.weight);
  write_matrix(os, "classifier.bias", m.classifier.bias.transpose());
  write_matrix(os, "ka.weight", m.ka.weight);
  write_matrix(os, "ka.bias", m.ka.bias.transpose());
  write_matrix(os, "gate.weight", m.gate.weight.transpose());
  write_block(os, "gate.bias", &m.gate.bias, 1, 1);
  if (m.kg) {
    write_matrix(os, "kg.entity", m.kg->entity);
    write_matrix(os, "kg.relation", m.kg->relation);
  }
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  save_checkpoint(ckpt, os);
  if (!os) throw Error("write failed: " + path.string());
}

ModelCheckpoint load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMagic) throw Error("not a checkpoint file");
  if (!std::getline(is, line)) throw Error("checkpoint: missing metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: bad metadata: ") + e.what());
  }
  ModelCheckpoint ckpt;
  ckpt.step = meta.at("step").get<std::int64_t>();
  ckpt.seed = meta.at("seed").get<std::uint64_t>();
  Model& m = ckpt.model;
  m.kind = parse_aggregator_kind(meta.at("kind").get<std::string>());
  m.encoder.token_embeddings = read_matrix(is, "encoder.token_embeddings");
  m.encoder.context_map = read_matrix(is, "encoder.context_map");
  m.classifier.weight = read_matrix(is, "classifier.weight");
  m.classifier.bias = read_matrix(is, "classifier.bias").transpose();
  m.ka.weight = read_matrix(is, "ka.weight");
  m.ka.bias = read_matrix(is, "ka.bias").transpose();
  m.gate.weight = read_matrix(is, "gate.weight").transpose();
  m.gate.bias = read_matrix(is, "gate.bias")(0, 0);
  if (meta.at("kg").get<bool>()) {
    auto emb = std::make_shared<EmbeddingTable>();
    emb->entity = read_matrix(is, "kg.entity");
    emb->relation = read_matrix(is, "kg.relation");
    m.kg = std::move(emb);
  }
  m.validate();
  return ckpt;
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return load_checkpoint(is);
}

}  // namespace bagre
