#include "bagre/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "bagre/evaluate.hpp"

namespace bagre {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string ratio_string(const Ratio& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

Ratio parse_ratio(const json& j) {
  if (j.is_number_integer()) return Ratio(j.get<std::int64_t>());
  if (!j.is_string()) throw Error("ratio must be a string like \"1/2\" or an integer");
  const auto s = j.get<std::string>();
  try {
    const auto slash = s.find('/');
    if (slash == std::string::npos) return Ratio(std::stoll(s));
    return Ratio(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
  } catch (const std::exception&) {
    throw Error("bad ratio '" + s + "'");
  }
}

// %g keeps "0.02" and "1" short and stable.
std::string short_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

// Reads an object key by key and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).template get<T>();
    } catch (const json::exception& e) {
      throw Error(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.contains(k)) throw Error(where_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

void write_atomic(const fs::path& path, std::string_view bytes) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Writes only when the content changed; returns the content hash.
std::string write_if_changed(const fs::path& path, std::string_view bytes) {
  const std::string hash = sha256_hex(bytes);
  if (fs::exists(path) && file_sha256(path) == hash) return hash;
  write_atomic(path, bytes);
  return hash;
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

template <class F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

json transe_json(const TransEConfig& c) {
  return {{"dim", c.dim},       {"margin", c.margin}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"negatives", c.negatives}, {"norm", c.norm}, {"seed", c.rng_seed}};
}

json train_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
          {"epsilon", c.epsilon},             {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"dim", c.dim},                     {"dev_every", c.dev_every}};
}

}  // namespace

std::string TrainSetSpec::name() const {
  auto part = [](const Ratio& r) {
    return std::to_string(r.numerator()) + (r.denominator() == 1 ? "" : "_" + std::to_string(r.denominator()));
  };
  std::string out = "nr" + part(nr) + "-dr" + part(dr);
  if (fraction) out += "-f" + short_number(*fraction);
  return out;
}

std::string_view to_string(KgVariant v) {
  switch (v) {
    case KgVariant::kNone: return "none";
    case KgVariant::kReal: return "real";
    case KgVariant::kRandom: return "random";
  }
  return "?";
}

KgVariant parse_kg_variant(std::string_view s) {
  if (s == "none") return KgVariant::kNone;
  if (s == "real") return KgVariant::kReal;
  if (s == "random") return KgVariant::kRandom;
  throw Error("unknown KG variant '" + std::string(s) + "'");
}

LossMode CellSpec::effective_loss_mode() const { return loss_mode.value_or(default_loss_mode(kind)); }

std::string CellSpec::id() const {
  std::string out = to_string(kind);
  if (kg == KgVariant::kRandom) out += "-kgrandom";
  if (fixed_alpha) out += "-alpha" + short_number(*fixed_alpha);
  if (loss_mode && *loss_mode != default_loss_mode(kind)) out += "-" + std::string(to_string(*loss_mode));
  return out + "__" + train_set.name();
}

void CellSpec::validate() const {
  const auto& nr = train_set.nr;
  const auto& dr = train_set.dr;
  if (nr != Ratio(1, 3) && nr != Ratio(1, 2) && nr != Ratio(2, 3)) throw Error("cell " + id() + ": NR must be 1/3, 1/2 or 2/3");
  if (dr != Ratio(0) && dr != Ratio(1, 2) && dr != Ratio(1)) throw Error("cell " + id() + ": DR must be 0, 1/2 or 1");
  if (train_set.fraction && !(*train_set.fraction > 0 && *train_set.fraction < 1))
    throw Error("cell " + id() + ": subset fraction must be in (0, 1)");
  if (kind.needs_kg() != (kg != KgVariant::kNone))
    throw Error("cell " + id() + ": KG variant must be set exactly when the model uses KG embeddings");
  if (fixed_alpha) {
    if (!(*fixed_alpha >= 0 && *fixed_alpha <= 1)) throw Error("cell " + id() + ": fixed_alpha outside [0, 1]");
    if (effective_loss_mode() != LossMode::kBag) throw Error("cell " + id() + ": fixed_alpha needs bag loss");
    if (train_set.nr != Ratio(1, 2) || train_set.dr != Ratio(0))
      throw Error("cell " + id() + ": fixed_alpha needs the NR 1/2, DR 0 training set");
  }
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw Error("seed list is empty");
  if (std::set(seeds.begin(), seeds.end()).size() != seeds.size()) throw Error("duplicate seeds");
  if (cells.empty()) throw Error("no cells");
  if (workers < 1) throw Error("workers must be >= 1");
  std::set<std::string> ids;
  for (const auto& c : cells) {
    c.validate();
    if (!ids.insert(c.id()).second) throw Error("duplicate cell " + c.id());
  }
  transe.validate();
  TrainConfig probe = train;
  probe.loss_mode = LossMode::kBag;
  probe.fixed_alpha.reset();
  probe.validate();
  if (!(kg_distractor_ratio >= 0)) throw Error("kg distractor_ratio must be >= 0");
}

std::vector<CellSpec> default_cells() {
  const AggregatorKind att{Aggregator::kAtt, false};
  const AggregatorKind ka{Aggregator::kKa, false};
  const AggregatorKind gate{Aggregator::kGate, false};
  const AggregatorKind bre{Aggregator::kMean, false};
  const AggregatorKind ce{Aggregator::kMean, true};
  const Ratio nrs[] = {Ratio(1, 3), Ratio(1, 2), Ratio(2, 3)};
  const Ratio drs[] = {Ratio(0), Ratio(1, 2), Ratio(1)};
  const TrainSetSpec half_zero{Ratio(1, 2), Ratio(0), {}};

  std::vector<CellSpec> cells;
  auto add = [&](CellSpec c) {
    if (std::find(cells.begin(), cells.end(), c) == cells.end()) cells.push_back(std::move(c));
  };
  for (const auto& dr : drs)
    for (const auto& nr : nrs) add({{nr, dr, {}}, att, KgVariant::kNone, {}, {}});
  for (const auto& dr : drs) {
    const TrainSetSpec ts{Ratio(1, 2), dr, {}};
    add({ts, ce, KgVariant::kReal, {}, {}});
    add({ts, ka, KgVariant::kReal, {}, {}});
    add({ts, bre, KgVariant::kNone, {}, {}});
    add({ts, gate, KgVariant::kNone, {}, {}});
  }
  add({half_zero, ka, KgVariant::kRandom, {}, {}});
  for (double a : {0.5, 0.6, 0.7, 0.8, 0.9, 1.0}) add({half_zero, att, KgVariant::kNone, a, {}});
  for (double f : {0.02, 0.1, 0.2}) {
    const TrainSetSpec ts{Ratio(1, 2), Ratio(1, 2), f};
    add({ts, att, KgVariant::kNone, {}, {}});
    add({ts, ce, KgVariant::kReal, {}, {}});
    add({ts, bre, KgVariant::kNone, {}, {}});
    add({ts, gate, KgVariant::kNone, {}, {}});
  }
  return cells;
}

ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  cfg.cells = default_cells();
  return cfg;
}

json to_json(const CellSpec& c) {
  json ts = {{"nr", ratio_string(c.train_set.nr)}, {"dr", ratio_string(c.train_set.dr)}};
  if (c.train_set.fraction) ts["fraction"] = *c.train_set.fraction;
  json j = {{"model", to_string(c.kind)}, {"train_set", ts}, {"kg", to_string(c.kg)}};
  if (c.fixed_alpha) j["fixed_alpha"] = *c.fixed_alpha;
  if (c.loss_mode) j["loss"] = to_string(*c.loss_mode);
  return j;
}

json to_json(const ExperimentConfig& cfg) {
  const auto& c = cfg.corpus;
  json cells = json::array();
  for (const auto& cell : cfg.cells) cells.push_back(to_json(cell));
  return {
      {"corpus",
       {{"relations", c.k_relations},
        {"pairs_per_relation", c.pairs_per_relation},
        {"templates", c.template_count},
        {"ambiguity", c.ambiguity},
        {"seed", c.rng_seed},
        {"head_types", c.head_types},
        {"tail_types", c.tail_types},
        {"type_noise", c.type_noise},
        {"filler_vocab", c.filler_vocab},
        {"cues_per_template", c.cues_per_template},
        {"cue_dropout", c.cue_dropout}}},
      {"split",
       {{"train_fraction", cfg.split.train_fraction},
        {"dev_fraction", cfg.split.dev_fraction},
        {"test_fraction", cfg.split.test_fraction},
        {"seed", cfg.split.rng_seed}}},
      {"datasets",
       {{"train_seed", cfg.train_set_seed},
        {"dev_seed", cfg.dev_seed},
        {"test_seed", cfg.test_seed},
        {"subset_seed", cfg.subset_seed}}},
      {"kg",
       {{"distractor_ratio", cfg.kg_distractor_ratio},
        {"seed", cfg.kg_seed},
        {"random_seed", cfg.kg_random_seed},
        {"transe", transe_json(cfg.transe)}}},
      {"train", train_json(cfg.train)},
      {"seeds", cfg.seeds},
      {"workers", cfg.workers},
      {"cells", cells},
  };
}

CellSpec cell_from_json(const json& j) {
  ObjectReader r(j, "cell");
  CellSpec c;
  std::string model = "att";
  r.get("model", model);
  c.kind = parse_aggregator_kind(model);
  if (const json* ts = r.sub("train_set")) {
    ObjectReader t(*ts, "cell.train_set");
    if (const json* v = t.sub("nr")) c.train_set.nr = parse_ratio(*v);
    if (const json* v = t.sub("dr")) c.train_set.dr = parse_ratio(*v);
    double f = 1.0;
    t.get("fraction", f);
    if (f != 1.0) c.train_set.fraction = f;
    t.finish();
  }
  std::string kg = c.kind.needs_kg() ? "real" : "none";
  r.get("kg", kg);
  c.kg = parse_kg_variant(kg);
  if (j.contains("fixed_alpha")) {
    double a = 0;
    r.get("fixed_alpha", a);
    c.fixed_alpha = a;
  }
  if (j.contains("loss")) {
    std::string m;
    r.get("loss", m);
    c.loss_mode = parse_loss_mode(m);
  }
  r.finish();
  return c;
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig cfg;
  ObjectReader r(j, "config");
  if (const json* s = r.sub("corpus")) {
    ObjectReader o(*s, "corpus");
    auto& c = cfg.corpus;
    o.get("relations", c.k_relations);
    o.get("pairs_per_relation", c.pairs_per_relation);
    o.get("templates", c.template_count);
    o.get("ambiguity", c.ambiguity);
    o.get("seed", c.rng_seed);
    o.get("head_types", c.head_types);
    o.get("tail_types", c.tail_types);
    o.get("type_noise", c.type_noise);
    o.get("filler_vocab", c.filler_vocab);
    o.get("cues_per_template", c.cues_per_template);
    o.get("cue_dropout", c.cue_dropout);
    o.finish();
  }
  if (const json* s = r.sub("split")) {
    ObjectReader o(*s, "split");
    o.get("train_fraction", cfg.split.train_fraction);
    o.get("dev_fraction", cfg.split.dev_fraction);
    o.get("test_fraction", cfg.split.test_fraction);
    o.get("seed", cfg.split.rng_seed);
    o.finish();
  }
  if (const json* s = r.sub("datasets")) {
    ObjectReader o(*s, "datasets");
    o.get("train_seed", cfg.train_set_seed);
    o.get("dev_seed", cfg.dev_seed);
    o.get("test_seed", cfg.test_seed);
    o.get("subset_seed", cfg.subset_seed);
    o.finish();
  }
  if (const json* s = r.sub("kg")) {
    ObjectReader o(*s, "kg");
    o.get("distractor_ratio", cfg.kg_distractor_ratio);
    o.get("seed", cfg.kg_seed);
    o.get("random_seed", cfg.kg_random_seed);
    if (const json* t = o.sub("transe")) {
      ObjectReader p(*t, "kg.transe");
      auto& c = cfg.transe;
      p.get("dim", c.dim);
      p.get("margin", c.margin);
      p.get("learning_rate", c.learning_rate);
      p.get("epochs", c.epochs);
      p.get("negatives", c.negatives);
      p.get("norm", c.norm);
      p.get("seed", c.rng_seed);
      p.finish();
    }
    o.finish();
  }
  if (const json* s = r.sub("train")) {
    ObjectReader o(*s, "train");
    auto& c = cfg.train;
    o.get("learning_rate", c.learning_rate);
    o.get("beta1", c.beta1);
    o.get("beta2", c.beta2);
    o.get("epsilon", c.epsilon);
    o.get("epochs", c.epochs);
    o.get("batch_size", c.batch_size);
    o.get("dim", c.dim);
    o.get("dev_every", c.dev_every);
    o.finish();
  }
  r.get("seeds", cfg.seeds);
  r.get("workers", cfg.workers);
  if (const json* s = r.sub("cells")) {
    if (!s->is_array()) throw Error("config.cells: expected an array");
    for (const auto& c : *s) cfg.cells.push_back(cell_from_json(c));
  } else {
    cfg.cells = default_cells();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("workers");  // parallelism never changes results
  return sha256_hex(j.dump()).substr(0, 16);
}

std::vector<CellSpec> select_cells(const std::vector<CellSpec>& cells, const std::vector<std::string>& filters) {
  if (filters.empty()) return cells;
  std::vector<CellSpec> out;
  for (const auto& c : cells) {
    const std::string id = c.id();
    if (std::any_of(filters.begin(), filters.end(), [&](const std::string& f) { return id.find(f) != std::string::npos; }))
      out.push_back(c);
  }
  return out;
}

namespace {

struct Inputs {
  SeedCorpus seed;
  std::map<std::string, Dataset> train_sets;
  Dataset dev, test;
  std::shared_ptr<const EmbeddingTable> emb, emb_random;
  // Relative artifact path -> SHA-256.
  std::map<std::string, std::string> hashes;
};

std::string train_file(const TrainSetSpec& ts) { return "data/train_" + ts.name() + ".jsonl"; }

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, const RunOptions& opts)
      : cfg_(cfg), opts_(opts), hash_(config_hash(cfg)), out_(opts.out_dir) {}

  PipelineSummary run() {
    cfg_.validate();
    PipelineSummary summary;
    summary.config_hash = hash_;
    fs::create_directories(out_);
    put("config.json", to_json(cfg_).dump(2) + "\n");
    log("config " + hash_ + ", seeds " + seed_list());

    generate();
    if (opts_.stage != Stage::kGenerate) train_kgs();
    if (opts_.stage == Stage::kTrain || opts_.stage == Stage::kEval || opts_.stage == Stage::kGrid)
      run_cells(summary);
    if (opts_.stage == Stage::kGrid) {
      aggregate();
      put("tables.md", emit_tables(out_));
    }
    write_manifest();
    write_summary(summary);
    return summary;
  }

 private:
  void log(const std::string& msg) {
    if (opts_.quiet) return;
    std::lock_guard lock(log_mu_);
    std::cerr << "[bagre] " << msg << '\n';
  }

  std::string seed_list() const {
    std::string s;
    for (auto seed : cfg_.seeds) s += (s.empty() ? "" : ",") + std::to_string(seed);
    return s;
  }

  void put(const std::string& rel, std::string_view bytes) {
    const std::string h = write_if_changed(out_ / rel, bytes);
    std::lock_guard lock(hash_mu_);
    in_.hashes[rel] = h;
  }

  void put_dataset(const std::string& rel, const Dataset& d) {
    put(rel, render([&](std::ostream& os) { write_dataset(d, os); }));
  }

  void generate() {
    in_.seed = generate_seed_corpus(cfg_.corpus);
    const SeedSplit split = split_seed_corpus(in_.seed, cfg_.split);
    const Ratio nrs[] = {Ratio(1, 3), Ratio(1, 2), Ratio(2, 3)};
    const Ratio drs[] = {Ratio(0), Ratio(1, 2), Ratio(1)};
    for (const auto& nr : nrs) {
      for (const auto& dr : drs) {
        const TrainSetSpec ts{nr, dr, {}};
        const auto plan = plan_pattern(nr, dr, static_cast<int>(split.train.size()));
        in_.train_sets[ts.name()] = build_training_set(in_.seed, split.train, plan, cfg_.train_set_seed);
        put_dataset(train_file(ts), in_.train_sets[ts.name()]);
      }
    }
    for (const auto& cell : cfg_.cells) {
      const auto& ts = cell.train_set;
      if (!ts.fraction || in_.train_sets.contains(ts.name())) continue;
      const TrainSetSpec full{ts.nr, ts.dr, {}};
      in_.train_sets[ts.name()] = subsample_bags(in_.train_sets.at(full.name()), *ts.fraction, cfg_.subset_seed);
      put_dataset(train_file(ts), in_.train_sets[ts.name()]);
    }
    in_.dev = build_eval_set(in_.seed, split.dev, Split::kDev, cfg_.dev_seed);
    in_.test = build_eval_set(in_.seed, split.test, Split::kTest, cfg_.test_seed);
    put_dataset("data/dev.jsonl", in_.dev);
    put_dataset("data/test.jsonl", in_.test);
    log("datasets: " + std::to_string(in_.train_sets.size()) + " training sets, " +
        std::to_string(in_.dev.bags.size()) + " dev bags, " + std::to_string(in_.test.bags.size()) + " test bags");
  }

  void train_kgs() {
    const KnowledgeGraph kg = build_kg(in_.seed, cfg_.kg_distractor_ratio, cfg_.kg_seed);
    const KnowledgeGraph rnd = randomize_kg(kg, cfg_.kg_random_seed);
    auto triples = [](const KnowledgeGraph& g) {
      return render([&](std::ostream& os) {
        os << "# entities " << g.num_entities << " relations " << g.num_relations << '\n';
        for (const auto& t : g.triples) os << t.head << ' ' << t.relation << ' ' << t.tail << '\n';
      });
    };
    put("kg/triples.txt", triples(kg));
    put("kg/triples_random.txt", triples(rnd));
    in_.emb = std::make_shared<const EmbeddingTable>(train_transe(kg, cfg_.transe));
    in_.emb_random = std::make_shared<const EmbeddingTable>(train_transe(rnd, cfg_.transe));
    put("kg/embeddings.txt", render([&](std::ostream& os) { write_embeddings(*in_.emb, os); }));
    put("kg/embeddings_random.txt", render([&](std::ostream& os) { write_embeddings(*in_.emb_random, os); }));
    log("KG: " + std::to_string(kg.triples.size()) + " triples, TransE dim " + std::to_string(cfg_.transe.dim));
  }

  std::shared_ptr<const EmbeddingTable> kg_for(const CellSpec& c) const {
    switch (c.kg) {
      case KgVariant::kNone: return nullptr;
      case KgVariant::kReal: return in_.emb;
      case KgVariant::kRandom: return in_.emb_random;
    }
    return nullptr;
  }

  std::string kg_hash(const CellSpec& c) const {
    switch (c.kg) {
      case KgVariant::kNone: return "";
      case KgVariant::kReal: return in_.hashes.at("kg/embeddings.txt");
      case KgVariant::kRandom: return in_.hashes.at("kg/embeddings_random.txt");
    }
    return "";
  }

  static fs::path cell_dir(const CellSpec& c, std::uint64_t seed) {
    return fs::path("cells") / c.id() / ("seed-" + std::to_string(seed));
  }

  // True when the stamp was written for the same inputs and every listed
  // output still hashes to what the stamp recorded.
  bool up_to_date(const fs::path& stamp_path, const std::string& inputs) const {
    if (!fs::exists(stamp_path)) return false;
    try {
      const json stamp = json::parse(read_file(stamp_path));
      if (stamp.at("inputs").get<std::string>() != inputs) return false;
      for (const auto& [name, h] : stamp.at("outputs").items()) {
        const fs::path p = stamp_path.parent_path() / name;
        if (!fs::exists(p) || file_sha256(p) != h.get<std::string>()) return false;
      }
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  void write_stamp(const fs::path& stamp_path, const std::string& stage, const std::string& inputs,
                   std::uint64_t seed, const std::map<std::string, std::string>& outputs) {
    json stamp = {{"stage", stage}, {"inputs", inputs}, {"config_hash", hash_}, {"seed", seed}, {"outputs", outputs}};
    write_atomic(stamp_path, stamp.dump(2) + "\n");
  }

  // Returns true when the stage did work, false when it was skipped.
  bool train_cell(const CellSpec& cell, std::uint64_t seed) {
    const fs::path dir = out_ / cell_dir(cell, seed);
    const json inputs_json = {{"cell", to_json(cell)},
                              {"seed", seed},
                              {"train", train_json(cfg_.train)},
                              {"train_data", in_.hashes.at(train_file(cell.train_set))},
                              {"dev_data", in_.hashes.at("data/dev.jsonl")},
                              {"kg", kg_hash(cell)}};
    const std::string inputs = sha256_hex(inputs_json.dump());
    if (up_to_date(dir / "train_stamp.json", inputs)) {
      write_stamp(dir / "train_stamp.json", "train", inputs, seed, read_outputs(dir / "train_stamp.json"));
      return false;
    }

    TrainConfig tc = cfg_.train;
    tc.kind = cell.kind;
    tc.loss_mode = cell.effective_loss_mode();
    tc.fixed_alpha = cell.fixed_alpha;
    tc.rng_seed = seed;
    const TrainResult result = train_model(in_.train_sets.at(cell.train_set.name()), in_.dev, tc, kg_for(cell));

    std::map<std::string, std::string> outputs;
    const std::string ckpt = render([&](std::ostream& os) { save_checkpoint(result.best, os); });
    const std::string curve = render([&](std::ostream& os) { write_curve_csv(result.curve, os); });
    outputs["checkpoint.txt"] = write_if_changed(dir / "checkpoint.txt", ckpt);
    outputs["curve.csv"] = write_if_changed(dir / "curve.csv", curve);
    write_stamp(dir / "train_stamp.json", "train", inputs, seed, outputs);
    return true;
  }

  static std::map<std::string, std::string> read_outputs(const fs::path& stamp_path) {
    return json::parse(read_file(stamp_path)).at("outputs").get<std::map<std::string, std::string>>();
  }

  bool eval_cell(const CellSpec& cell, std::uint64_t seed) {
    const fs::path dir = out_ / cell_dir(cell, seed);
    if (!fs::exists(dir / "checkpoint.txt")) throw Error("no checkpoint; run the train stage first");
    const json inputs_json = {{"checkpoint", file_sha256(dir / "checkpoint.txt")},
                              {"test_data", in_.hashes.at("data/test.jsonl")}};
    const std::string inputs = sha256_hex(inputs_json.dump());
    if (up_to_date(dir / "eval_stamp.json", inputs)) {
      write_stamp(dir / "eval_stamp.json", "eval", inputs, seed, read_outputs(dir / "eval_stamp.json"));
      return false;
    }

    const ModelCheckpoint ckpt = load_checkpoint(dir / "checkpoint.txt");
    const EvalReport rep = evaluate_model(ckpt.model, in_.test);
    json report = {{"cell", cell.id()}, {"seed", seed},   {"step", ckpt.step}, {"auc", rep.auc},
                   {"aucv", rep.aucv},  {"aucn", rep.aucn}, {"aacc", nullptr}};
    if (rep.aacc) report["aacc"] = *rep.aacc;

    std::map<std::string, std::string> outputs;
    outputs["report.json"] = write_if_changed(dir / "report.json", report.dump(2) + "\n");
    auto curve_csv = [](const PRCurve& c) { return render([&](std::ostream& os) { write_pr_curve_csv(c, os); }); };
    outputs["pr.csv"] = write_if_changed(dir / "pr.csv", curve_csv(rep.curve));
    outputs["pr_valid.csv"] = write_if_changed(dir / "pr_valid.csv", curve_csv(rep.curve_valid));
    outputs["pr_noisy.csv"] = write_if_changed(dir / "pr_noisy.csv", curve_csv(rep.curve_noisy));
    if (ckpt.model.kind.has_attention()) {
      const auto records = predict(ckpt.model, in_.test);
      outputs["attention.csv"] = write_if_changed(
          dir / "attention.csv", render([&](std::ostream& os) { write_attention_trace_csv(records, os); }));
    }
    write_stamp(dir / "eval_stamp.json", "eval", inputs, seed, outputs);
    return true;
  }

  void run_cells(PipelineSummary& summary) {
    struct Task {
      CellSpec cell;
      std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (const auto& c : select_cells(cfg_.cells, opts_.cell_filters))
      for (auto s : cfg_.seeds) tasks.push_back({c, s});
    summary.tasks = static_cast<int>(tasks.size());
    if (tasks.empty()) log("no cell matches the filter");

    std::vector<std::optional<std::string>> errors(tasks.size());
    std::vector<char> did_work(tasks.size(), 0);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < tasks.size(); i = next++) {
        const auto& t = tasks[i];
        const std::string name = t.cell.id() + " seed " + std::to_string(t.seed);
        try {
          bool work = false;
          if (opts_.stage != Stage::kEval) work |= train_cell(t.cell, t.seed);
          if (opts_.stage != Stage::kTrain) work |= eval_cell(t.cell, t.seed);
          did_work[i] = work;
          log((work ? "done " : "up to date ") + name);
        } catch (const std::exception& e) {
          errors[i] = e.what();
          log("FAILED " + name + ": " + e.what());
        }
      }
    };
    const int n = std::max(1, std::min<int>(opts_.workers > 0 ? opts_.workers : cfg_.workers,
                                            static_cast<int>(tasks.size())));
    {
      std::vector<std::jthread> pool;
      for (int w = 1; w < n; ++w) pool.emplace_back(worker);
      worker();
    }
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (errors[i]) {
        summary.failures.push_back({tasks[i].cell.id(), tasks[i].seed, *errors[i]});
      } else if (did_work[i]) {
        ++summary.ran;
      } else {
        ++summary.skipped;
      }
    }
  }

  // One row per (cell, seed) that has a current report, in config order.
  void aggregate() {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    os << "config_hash,cell,model,train_set,kg,fixed_alpha,seed,auc,aacc,aucv,aucn\n";
    for (const auto& cell : cfg_.cells) {
      for (auto seed : cfg_.seeds) {
        const fs::path dir = out_ / cell_dir(cell, seed);
        if (!fs::exists(dir / "report.json") || !fs::exists(dir / "eval_stamp.json")) continue;
        const json rep = json::parse(read_file(dir / "report.json"));
        os << hash_ << ',' << cell.id() << ',' << to_string(cell.kind) << ',' << cell.train_set.name() << ','
           << to_string(cell.kg) << ',' << (cell.fixed_alpha ? short_number(*cell.fixed_alpha) : "") << ','
           << seed << ',' << rep.at("auc").get<double>() << ',';
        if (!rep.at("aacc").is_null()) os << rep.at("aacc").get<double>();
        os << ',' << rep.at("aucv").get<double>() << ',' << rep.at("aucn").get<double>() << '\n';
      }
    }
    put("results.csv", os.str());
  }

  void write_manifest() {
    json artifacts = json::object();
    for (const auto& [rel, h] : in_.hashes) artifacts[rel] = h;
    json manifest = {{"config_hash", hash_}, {"seeds", cfg_.seeds}, {"artifacts", artifacts}};
    write_if_changed(out_ / "manifest.json", manifest.dump(2) + "\n");
  }

  void write_summary(const PipelineSummary& s) {
    json failures = json::array();
    for (const auto& f : s.failures) failures.push_back({{"cell", f.cell}, {"seed", f.seed}, {"error", f.message}});
    json j = {{"config_hash", hash_}, {"seeds", cfg_.seeds}, {"tasks", s.tasks},
              {"ran", s.ran},         {"skipped", s.skipped}, {"failures", failures}};
    write_atomic(out_ / "run_summary.json", j.dump(2) + "\n");
    if (s.tasks > 0)
      log(std::to_string(s.ran) + " ran, " + std::to_string(s.skipped) + " up to date, " +
          std::to_string(s.failures.size()) + " failed (config " + hash_ + ", seeds " + seed_list() + ")");
  }

  ExperimentConfig cfg_;
  RunOptions opts_;
  std::string hash_;
  fs::path out_;
  Inputs in_;
  std::mutex log_mu_, hash_mu_;
};

struct Row {
  std::string cell;
  std::uint64_t seed;
  double auc, aucv, aucn;
  std::optional<double> aacc;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

class Tables {
 public:
  explicit Tables(const std::vector<Row>& rows) {
    for (const auto& r : rows) by_cell_[r.cell].push_back(r);
  }

  // "0.812 ± 0.013" over seeds (sample standard deviation; 0 for one seed).
  std::string stat(const std::string& cell, double Row::*metric) const {
    const auto it = by_cell_.find(cell);
    if (it == by_cell_.end()) return "missing";
    std::vector<double> v;
    for (const auto& r : it->second) v.push_back(r.*metric);
    return format(v);
  }

  std::string aacc(const std::string& cell) const {
    const auto it = by_cell_.find(cell);
    if (it == by_cell_.end()) return "missing";
    std::vector<double> v;
    for (const auto& r : it->second) {
      if (!r.aacc) return "NA";
      v.push_back(*r.aacc);
    }
    return format(v);
  }

 private:
  static std::string format(const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", mean, sd);
    return buf;
  }

  std::map<std::string, std::vector<Row>> by_cell_;
};

}  // namespace

PipelineSummary run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) {
  return Pipeline(cfg, opts).run();
}

std::string emit_tables(const fs::path& results_dir) {
  const fs::path csv = results_dir / "results.csv";
  if (!fs::exists(csv)) throw Error("no results in " + results_dir.string());
  std::istringstream is(read_file(csv));
  std::string line;
  std::getline(is, line);
  std::vector<Row> rows;
  std::set<std::string> hashes;
  std::set<std::uint64_t> seeds;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11) throw Error("malformed results row: " + line);
    Row r{f[1], std::stoull(f[6]), std::stod(f[7]), std::stod(f[9]), std::stod(f[10]), std::nullopt};
    if (!f[8].empty()) r.aacc = std::stod(f[8]);
    hashes.insert(f[0]);
    seeds.insert(r.seed);
    rows.push_back(r);
  }
  if (rows.empty()) throw Error("no results in " + results_dir.string());
  const Tables t(rows);

  std::ostringstream os;
  std::string hash_list, seed_list;
  for (const auto& h : hashes) hash_list += (hash_list.empty() ? "" : ", ") + h;
  for (auto s : seeds) seed_list += (seed_list.empty() ? "" : ", ") + std::to_string(s);
  os << "# Results\n\nconfig hash: " << hash_list << "  \nseeds: " << seed_list
     << "  \ncells are mean ± sample standard deviation over seeds\n";

  const std::pair<const char*, const char*> nrs[] = {{"1/3", "1_3"}, {"1/2", "1_2"}, {"2/3", "2_3"}};
  const std::pair<const char*, const char*> drs[] = {{"0", "0"}, {"1/2", "1_2"}, {"1", "1"}};
  auto ts = [](const char* nr, const char* dr) { return std::string("nr") + nr + "-dr" + dr; };

  os << "\n## Attention accuracy of BRE+ATT by noise pattern\n\n| DR \\ NR |";
  for (const auto& nr : nrs) os << ' ' << nr.first << " |";
  os << "\n|---|---|---|---|\n";
  for (const auto& dr : drs) {
    os << "| " << dr.first << " |";
    for (const auto& nr : nrs) os << ' ' << t.aacc("att__" + ts(nr.second, dr.second)) << " |";
    os << '\n';
  }

  auto metric_table = [&](const std::string& title, const std::vector<std::pair<std::string, std::string>>& rows_) {
    os << "\n## " << title << "\n\n| Model | AUC | AAcc | AUCV | AUCN |\n|---|---|---|---|---|\n";
    for (const auto& [label, cell] : rows_)
      os << "| " << label << " | " << t.stat(cell, &Row::auc) << " | " << t.aacc(cell) << " | "
         << t.stat(cell, &Row::aucv) << " | " << t.stat(cell, &Row::aucn) << " |\n";
  };
  metric_table("Attention versus no attention",
               {{"BRE-train(1/2,0)", "mean__nr1_2-dr0"},
                {"BRE+ATT-train(1/2,0)", "att__nr1_2-dr0"},
                {"BRE+ATT-train(1/2,1/2)", "att__nr1_2-dr1_2"},
                {"BRE+ATT-train(1/2,1)", "att__nr1_2-dr1"}});
  metric_table("KG-enhanced attention and concatenated KG features",
               {{"BRE+ATT-train(1/2,0)", "att__nr1_2-dr0"},
                {"BRE+KA_rand-train(1/2,0)", "ka-kgrandom__nr1_2-dr0"},
                {"BRE+KA-train(1/2,0)", "ka__nr1_2-dr0"},
                {"BRE+KA-train(1/2,1/2)", "ka__nr1_2-dr1_2"},
                {"BRE+KA-train(1/2,1)", "ka__nr1_2-dr1"},
                {"BRE+CE-train(1/2,0)", "mean+ce__nr1_2-dr0"},
                {"BRE+CE-train(1/2,1/2)", "mean+ce__nr1_2-dr1_2"},
                {"BRE+CE-train(1/2,1)", "mean+ce__nr1_2-dr1"}});

  os << "\n## AUC with and without KG, train(1/2,0)\n\n| Model | AUC |\n|---|---|\n";
  for (const auto& [label, cell] : std::vector<std::pair<std::string, std::string>>{
           {"BRE+ATT", "att__nr1_2-dr0"}, {"BRE+KA", "ka__nr1_2-dr0"}, {"BRE", "mean__nr1_2-dr0"},
           {"BRE+CE", "mean+ce__nr1_2-dr0"}})
    os << "| " << label << " | " << t.stat(cell, &Row::auc) << " |\n";

  os << "\n## Fixed attention weights, train(1/2,0)\n\n| alpha | AUC | AUCV | AUCN |\n|---|---|---|---|\n";
  for (const char* a : {"0.5", "0.6", "0.7", "0.8", "0.9", "1"}) {
    const std::string cell = std::string("att-alpha") + a + "__nr1_2-dr0";
    os << "| " << a << " | " << t.stat(cell, &Row::auc) << " | " << t.stat(cell, &Row::aucv) << " | "
       << t.stat(cell, &Row::aucn) << " |\n";
  }

  os << "\n## AUC on subsets of train(1/2,1/2)\n\n| Subset | BRE+ATT | BRE+CE | BRE | BRE+SeG |\n"
     << "|---|---|---|---|---|\n";
  for (const auto& [label, suffix] : std::vector<std::pair<std::string, std::string>>{
           {"2%", "-f0.02"}, {"10%", "-f0.1"}, {"20%", "-f0.2"}, {"100%", ""}}) {
    os << "| " << label << " |";
    for (const char* model : {"att", "mean+ce", "mean", "gate"})
      os << ' ' << t.stat(std::string(model) + "__nr1_2-dr1_2" + suffix, &Row::auc) << " |";
    os << '\n';
  }
  return os.str();
}

}  // namespace bagre
