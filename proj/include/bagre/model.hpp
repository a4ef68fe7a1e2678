#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>

#include "bagre/encoder.hpp"
#include "bagre/kgembed.hpp"
#include "bagre/linalg.hpp"

namespace bagre {

enum class Aggregator : std::uint8_t { kMean, kAtt, kKa, kGate };

// Bag aggregation mechanism plus whether the KG feature e_h - e_t is
// concatenated onto every sentence representation.
struct AggregatorKind {
  Aggregator aggregator = Aggregator::kMean;
  bool use_ce = false;

  bool needs_kg() const { return use_ce || aggregator == Aggregator::kKa; }
  // Attention-style kinds produce per-sentence weights worth scoring with AAcc.
  bool has_attention() const { return aggregator != Aggregator::kMean; }
  friend bool operator==(const AggregatorKind&, const AggregatorKind&) = default;
};

// "mean", "att", "ka", "gate", optionally suffixed with "+ce".
std::string to_string(AggregatorKind k);
AggregatorKind parse_aggregator_kind(std::string_view s);

// Row k of weight is the label embedding v_k used as the ATT query.
struct ClassifierParams {
  RowMatrix weight;  // K x D
  Vector bias;       // K
};

struct KaParams {
  RowMatrix weight;  // d_e x D
  Vector bias;       // d_e
};

struct GateParams {
  Vector weight;  // D
  double bias = 0;
};

struct Model {
  AggregatorKind kind;
  EncoderParams encoder;
  ClassifierParams classifier;
  KaParams ka;      // empty unless kind.aggregator == kKa
  GateParams gate;  // empty unless kind.aggregator == kGate
  // Frozen KG embeddings; required when kind.needs_kg().
  std::shared_ptr<const EmbeddingTable> kg;

  int num_relations() const { return static_cast<int>(classifier.weight.rows()); }
  int kg_dim() const { return kg ? kg->dim() : 0; }
  // Dimension D of the representation fed to the classifier.
  int rep_dim() const { return encoder.rep_dim() + (kind.use_ce ? kg_dim() : 0); }

  static Model init(AggregatorKind kind, int corpus_vocab, int num_relations, int dim,
                    std::shared_ptr<const EmbeddingTable> kg, std::uint64_t seed);
  void validate() const;
};

// Same layout as the trainable parameters of a Model.
struct ModelGrad {
  EncoderGrad encoder;
  ClassifierParams classifier;
  KaParams ka;
  GateParams gate;

  explicit ModelGrad(const Model& m);
  void set_zero();
  ModelGrad& operator+=(const ModelGrad& o);
};

// A named view over one contiguous trainable block.
struct ParamBlock {
  std::string_view name;
  double* data;
  Eigen::Index size;
};

// Trainable blocks in a fixed order; attention blocks only for kinds that use
// them. model_blocks and grad_blocks return matching sequences.
std::vector<ParamBlock> model_blocks(Model& m);
std::vector<ParamBlock> grad_blocks(ModelGrad& g, const Model& m);

struct ModelCheckpoint {
  Model model;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
};

// Text format: a magic line, one JSON metadata line, then named matrices
// ("<name> <rows> <cols>" followed by values at round-trip precision). The KG
// embedding table a model depends on is stored inline.
void save_checkpoint(const ModelCheckpoint& ckpt, std::ostream& os);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(std::istream& is);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bagre
