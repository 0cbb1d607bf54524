#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "causerec/causal.hpp"
#include "causerec/data.hpp"
#include "causerec/eval.hpp"
#include "causerec/model.hpp"
#include "causerec/trainer.hpp"

namespace causerec::cli {

// Exactly one of the two is set once validated.
struct DataSource {
  std::optional<std::filesystem::path> interactions;  // user<TAB>item<TAB>timestamp
  std::optional<SyntheticSpec> synthetic;

  bool operator==(const DataSource&) const = default;
};

struct RunConfig {
  DataSource data;
  std::size_t k_core = 10;
  std::size_t max_len = 20;
  std::uint64_t split_seed = 0;
  double prefix_frac = 0.8;
  // n_items comes from the prepared data and n_interests from variant.K.
  ModelConfig model;
  VariantConfig variant;
  TrainConfig train;
  std::filesystem::path out_dir = "out";

  static RunConfig defaults(Variant v);

  nlohmann::json to_json() const;
  // Starts from defaults(variant named in `j`, else `fallback`) and overrides
  // the keys present. Throws ConfigError on unknown keys or bad values.
  static RunConfig from_json(const nlohmann::json& j, Variant fallback = Variant::item);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Sub-config checks plus existence of referenced paths.
  void validate() const;
  // Exactly one data source; required by prepare only.
  void validate_source() const;

  std::filesystem::path prepared_dir() const { return out_dir / "data"; }
  std::filesystem::path train_dir() const { return out_dir / "train"; }
  ModelConfig model_for(std::size_t n_items) const;

  bool operator==(const RunConfig&) const = default;
};

struct DatasetSummary {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double density = 0.0;
  std::size_t train_users = 0;
  std::size_t val_users = 0;
  std::size_t test_users = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Loaded output of cmd_prepare.
struct Prepared {
  InteractionLog log;
  UserSplit split;
  PreparedData data;
};

// load -> k-core -> truncate -> split. Writes interactions.tsv, the three
// user manifests and summary.json under prepared_dir().
DatasetSummary cmd_prepare(const RunConfig& cfg);
// Throws DataError when prepare has not run.
Prepared load_prepared(const RunConfig& cfg);

struct TrainOutcome {
  MetricsReport test_best;
  MetricsReport test_final;
  std::optional<MetricsReport> val_best;
  std::size_t best_step = 0;
  std::size_t steps = 0;
};

// Trains into `run_dir` (train_dir() by default): run_config.json,
// train_log.jsonl, checkpoints, metrics_best.json, metrics_final.json.
TrainOutcome cmd_train(const RunConfig& cfg);
TrainOutcome run_training(const RunConfig& cfg, const Prepared& prepared,
                          const std::filesystem::path& run_dir);

struct EvalRequest {
  std::optional<std::filesystem::path> checkpoint;
  bool pop = false;
  std::string split = "test";  // val or test
};

// Writes eval/metrics_<split>.json (metrics_pop_<split>.json for POP).
MetricsReport cmd_eval(const RunConfig& cfg, const EvalRequest& req);

enum class EmbeddingSet { items, users };

// Writes embeddings/items.tsv or embeddings/users_<split>.tsv with rows
// id<TAB>v1<TAB>...<TAB>vd at 17 significant digits. Users are encoded from
// their prepared history. Returns the written path.
std::filesystem::path cmd_export_embeddings(const RunConfig& cfg,
                                            const std::filesystem::path& checkpoint,
                                            EmbeddingSet which, const std::string& split = "test");

// Reads an export back (id, vector) in file order.
std::vector<std::pair<std::string, std::vector<double>>> read_embeddings(
    const std::filesystem::path& path);

enum class SweepAxis { r_rep, MN, K };
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepRow {
  std::string label;
  RunConfig config;
  MetricsReport test_best;
};

struct SweepReport {
  SweepAxis axis = SweepAxis::r_rep;
  std::vector<SweepRow> rows;

  std::string to_table() const;
};

// The grid for one axis, in table order.
std::vector<std::pair<std::string, RunConfig>> sweep_grid(const RunConfig& base, SweepAxis axis);
// Runs the grid under sweep/<axis>/<label>/ and writes sweep/<axis>.txt.
// Up to `jobs` runs train concurrently.
SweepReport cmd_sweep(const RunConfig& cfg, SweepAxis axis, std::size_t jobs = 1);

// Exit codes: 0 success, 1 internal error, 2 config error, 3 data or
// checkpoint error, 4 training divergence.
int exit_code_for(const std::exception& e);

// Full command line entry point.
int run(int argc, const char* const* argv);

}  // namespace causerec::cli
