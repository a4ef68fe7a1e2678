// bagre: generate -> kg-train -> train -> eval -> report, driven by one JSON
// config. Flags override the config file.
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bagre/experiment.hpp"

namespace {

using nlohmann::json;

// "train.epochs=5" sets j["train"]["epochs"] = 5. The value is parsed as
// JSON when possible, otherwise kept as a string.
void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw bagre::Error("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw bagre::Error("bad key path '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null()) throw bagre::Error("'" + key + "' in '" + path + "' is not an object");
    start = dot + 1;
  }
}

struct Flags {
  std::string config;
  std::string out_dir = "results";
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> cells;
  std::vector<std::string> sets;
  int workers = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config (defaults apply when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", f.out_dir, "Results directory")->capture_default_str();
  cmd->add_option("--seed", f.seeds, "Model seed; repeat to run several (replaces the config's seed list)");
  cmd->add_option("--cell", f.cells, "Only cells whose id contains this text; repeatable");
  cmd->add_option("--workers", f.workers, "Cells trained in parallel (overrides config)")->check(CLI::PositiveNumber);
  cmd->add_option("--set", f.sets, "Override a config key, e.g. --set train.epochs=5; repeatable");
  cmd->add_flag("--quiet", f.quiet, "No progress output");
}

bagre::ExperimentConfig resolve_config(const Flags& f) {
  json j = json::object();
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw bagre::Error(f.config + ": not valid JSON");
  }
  for (const auto& s : f.sets) apply_override(j, s);
  if (!f.seeds.empty()) j["seeds"] = f.seeds;
  return bagre::experiment_from_json(j);
}

int run_stage(const Flags& f, bagre::Stage stage) {
  const auto cfg = resolve_config(f);
  bagre::RunOptions opts;
  opts.out_dir = f.out_dir;
  opts.stage = stage;
  opts.cell_filters = f.cells;
  opts.workers = f.workers;
  opts.quiet = f.quiet;
  const auto summary = bagre::run_pipeline(cfg, opts);
  for (const auto& fail : summary.failures)
    std::cerr << "failed: " << fail.cell << " seed " << fail.seed << ": " << fail.message << '\n';
  if (stage == bagre::Stage::kGrid && !f.quiet) std::cout << bagre::emit_tables(f.out_dir);
  return summary.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bag-level relation extraction noise-pattern experiments"};
  app.require_subcommand(1);
  Flags flags;

  struct Sub {
    const char* name;
    const char* help;
    bagre::Stage stage;
  };
  const Sub subs[] = {
      {"generate", "Write the seed-corpus training sets, dev and test sets", bagre::Stage::kGenerate},
      {"kg-train", "Build the KG and its randomized copy and train TransE on both", bagre::Stage::kKgTrain},
      {"train", "Train the selected cells (after generate and kg-train)", bagre::Stage::kTrain},
      {"eval", "Evaluate trained checkpoints of the selected cells", bagre::Stage::kEval},
      {"grid", "Run every stage and write results.csv and tables.md", bagre::Stage::kGrid},
  };
  bagre::Stage chosen = bagre::Stage::kGrid;
  for (const auto& s : subs) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, flags);
    cmd->callback([&chosen, stage = s.stage] { chosen = stage; });
  }
  auto* report = app.add_subcommand("report", "Print tables from an existing results directory");
  report->add_option("--out-dir", flags.out_dir, "Results directory")->capture_default_str();
  bool report_mode = false;
  report->callback([&] { report_mode = true; });

  CLI11_PARSE(app, argc, argv);
  try {
    if (report_mode) {
      const std::string tables = bagre::emit_tables(flags.out_dir);
      std::ofstream(std::filesystem::path(flags.out_dir) / "tables.md") << tables;
      std::cout << tables;
      return 0;
    }
    return run_stage(flags, chosen);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
