#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "causerec/causal.hpp"
#include "causerec/data.hpp"
#include "causerec/eval.hpp"
#include "causerec/losses.hpp"
#include "causerec/model.hpp"
#include "causerec/optim.hpp"
#include "causerec/rng.hpp"

namespace causerec {

struct AblationFlags {
  bool disable_co = false;
  bool disable_ii = false;
  bool pos_only = false;  // positive counterfactuals and the positive L_ii term only
  bool neg_only = false;  // negative counterfactuals and the negative L_ii term only

  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 1024;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t negatives_per_example = 10;
  // Validate every this many steps; 0 validates at the end of each epoch.
  std::size_t eval_every = 0;
  std::size_t patience = 3;
  std::size_t log_every = 1;
  std::size_t memory_capacity = 4096;
  AblationFlags ablation;
  std::vector<std::size_t> cutoffs = {20, 50};
  // When set, receives train_log.jsonl, ckpt-{step}.bin and best.bin.
  std::optional<std::filesystem::path> out_dir;

  // 10 epochs for the item variant, 30 for interest and hierarchical.
  static TrainConfig defaults(Variant v);
  // Throws ConfigError on zero epochs/batch size or pos_only with neg_only.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainLogRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
  std::int64_t wall_ms = 0;

  // wall_ms is the only non-deterministic field; it is omitted when false.
  std::string to_json(bool with_wall_clock = true) const;
};

// Training examples for the train users and 80%-prefix examples for the
// validation and test users.
struct PreparedData {
  std::size_t n_items = 0;
  std::vector<TrainingExample> train;
  EvalSet val;
  EvalSet test;
};

PreparedData prepare_data(const InteractionLog& log, const UserSplit& split, std::size_t max_len,
                          double prefix_frac = 0.8);

// k distinct items from [0, vocab_size) other than `target`.
std::vector<ItemIndex> sample_negatives(std::size_t vocab_size, ItemIndex target, std::size_t k,
                                        Rng& rng);

// True once the best value is `patience` or more evaluations old.
bool early_stop(std::span<const double> history, std::size_t patience);

// Random streams for one training run: negative sampling and counterfactual
// synthesis draw independently.
struct StepRngs {
  Rng negatives;
  Rng synthesis;

  static StepRngs for_seed(std::uint64_t seed);
};

// Whether a configuration runs the counterfactual branch at all.
bool uses_counterfactuals(const AblationFlags& flags);

// Loss of one mini-batch (mean over examples per component). With `grads`
// non-null the reverse-mode gradient is accumulated into it. Consumes the RNG
// streams and reads/rotates the memories but does not enqueue the batch.
LossBreakdown batch_loss(const ModelConfig& model, const ParamSet& tensors,
                         std::span<const TrainingExample> batch, const TrainConfig& cfg,
                         const VariantConfig& vcfg, ConceptMemories& memories, StepRngs& rngs,
                         ParamSet* grads);

struct TrainResult {
  ModelParams final_params;
  ModelParams best_params;
  std::vector<TrainLogRecord> log;
  std::vector<double> val_history;  // Recall@50 per validation
  std::optional<MetricsReport> best_val;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  std::size_t memory_high_water = 0;
};

// Full training run. Throws DivergenceError (with the step) on a non-finite loss.
TrainResult train(const PreparedData& data, const ModelConfig& model, const TrainConfig& cfg,
                  const VariantConfig& vcfg);

}  // namespace causerec
