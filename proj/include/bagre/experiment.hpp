#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bagre/corpus.hpp"
#include "bagre/kgembed.hpp"
#include "bagre/model.hpp"
#include "bagre/synthgen.hpp"
#include "bagre/train.hpp"

namespace bagre {

// One of the nine noise-pattern training sets, optionally subsampled.
struct TrainSetSpec {
  Ratio nr{1, 2};
  Ratio dr{0};
  std::optional<double> fraction;  // in (0, 1); absent means the whole set

  // "nr1_2-dr0", "nr1_2-dr1_2-f0.02".
  std::string name() const;
  friend bool operator==(const TrainSetSpec&, const TrainSetSpec&) = default;
};

enum class KgVariant : std::uint8_t { kNone, kReal, kRandom };

std::string_view to_string(KgVariant v);
KgVariant parse_kg_variant(std::string_view s);

struct CellSpec {
  TrainSetSpec train_set;
  AggregatorKind kind;
  KgVariant kg = KgVariant::kNone;
  std::optional<double> fixed_alpha;
  std::optional<LossMode> loss_mode;  // default_loss_mode(kind) when absent

  LossMode effective_loss_mode() const;
  // "<kind>[-kgrandom][-alpha0.7]__<train set>", unique within a grid.
  std::string id() const;
  void validate() const;
  friend bool operator==(const CellSpec&, const CellSpec&) = default;
};

struct ExperimentConfig {
  // Larger and harder than the module defaults: with unambiguous contexts
  // every attention model separates valid from noisy perfectly and the grid
  // carries no signal.
  SeedCorpusConfig corpus = [] {
    SeedCorpusConfig c;
    c.pairs_per_relation = 840;
    c.ambiguity = 0.3;
    c.cue_dropout = 0.5;
    return c;
  }();
  SplitSpec split;
  // Seeds for bag synthesis; the datasets stay fixed across model seeds.
  std::uint64_t train_set_seed = 21;
  std::uint64_t dev_seed = 4;
  std::uint64_t test_seed = 3;
  std::uint64_t subset_seed = 31;

  // Random triples per corpus pair. A sparse KG all but labels every pair
  // by itself and drowns out the text.
  double kg_distractor_ratio = 6;
  std::uint64_t kg_seed = 5;
  std::uint64_t kg_random_seed = 9;
  TransEConfig transe;

  // Shared optimizer settings; kind, loss mode, fixed alpha and seed come
  // from the cell.
  // The best dev checkpoint comes early at this corpus size.
  TrainConfig train = [] {
    TrainConfig t;
    t.epochs = 4;
    return t;
  }();
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<CellSpec> cells;
  int workers = 1;

  void validate() const;
};

// Cells for the AAcc grid, the model comparisons with and without KG, the
// fixed-weight sweep and the training-subset study.
std::vector<CellSpec> default_cells();
ExperimentConfig default_experiment();

nlohmann::json to_json(const ExperimentConfig& cfg);
nlohmann::json to_json(const CellSpec& cell);
// Missing keys keep their defaults; unknown keys are rejected. A config
// without "cells" gets default_cells().
ExperimentConfig experiment_from_json(const nlohmann::json& j);
CellSpec cell_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Hex SHA-256 of bytes / of a file's contents.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);
// First 16 hex digits of the SHA-256 of the canonical config JSON.
std::string config_hash(const ExperimentConfig& cfg);

// Cells whose id contains any of the filters (all cells when empty).
std::vector<CellSpec> select_cells(const std::vector<CellSpec>& cells, const std::vector<std::string>& filters);

enum class Stage : std::uint8_t { kGenerate, kKgTrain, kTrain, kEval, kGrid };

struct RunOptions {
  std::filesystem::path out_dir = "results";
  Stage stage = Stage::kGrid;
  std::vector<std::string> cell_filters;
  // Overrides cfg.workers when positive.
  int workers = 0;
  // Progress lines go to stderr unless quiet.
  bool quiet = false;
};

struct CellFailure {
  std::string cell;
  std::uint64_t seed = 0;
  std::string message;
};

struct PipelineSummary {
  std::string config_hash;
  int tasks = 0;
  int ran = 0;
  int skipped = 0;
  std::vector<CellFailure> failures;
};

// Generates datasets and KGs, trains and evaluates every selected
// (cell, seed), then writes the aggregate CSV and tables. A failing
// (cell, seed) is recorded and the rest of the grid continues. Completed
// work is skipped when its input and output hashes still match.
PipelineSummary run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts);

// Markdown tables from <dir>/results.csv.
// Throws when the directory holds no results.
std::string emit_tables(const std::filesystem::path& results_dir);

}  // namespace bagre
