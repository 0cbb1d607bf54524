#include "causerec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "causerec/errors.hpp"

namespace causerec {

TrainConfig TrainConfig::defaults(Variant v) {
  TrainConfig c;
  c.epochs = v == Variant::item ? 10 : 30;
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (negatives_per_example == 0) throw ConfigError("train: negatives_per_example must be >= 1");
  if (ablation.pos_only && ablation.neg_only) {
    throw ConfigError("ablation: pos_only and neg_only are mutually exclusive");
  }
  if (cutoffs.empty()) throw ConfigError("train: no evaluation cutoffs");
}

std::string TrainLogRecord::to_json(bool with_wall_clock) const {
  nlohmann::json j{{"step", step},         {"epoch", epoch},     {"matching", loss.matching},
                   {"co", loss.co},         {"ii", loss.ii},       {"total", loss.total}};
  if (with_wall_clock) j["wall_ms"] = wall_ms;
  return j.dump();
}

PreparedData prepare_data(const InteractionLog& log, const UserSplit& split, std::size_t max_len,
                          double prefix_frac) {
  PreparedData d;
  d.n_items = log.num_items();
  d.train = make_training_examples(log, split.train, max_len);
  d.val = make_eval_examples(log, split.val, prefix_frac);
  d.test = make_eval_examples(log, split.test, prefix_frac);
  return d;
}

std::vector<ItemIndex> sample_negatives(std::size_t vocab_size, ItemIndex target, std::size_t k,
                                        Rng& rng) {
  if (vocab_size == 0 || k > vocab_size - 1) {
    throw SamplingError("sample_negatives: cannot draw " + std::to_string(k) +
                        " negatives from a vocabulary of " + std::to_string(vocab_size));
  }
  auto picks = rng.sample_without_replacement(vocab_size - 1, k);
  for (auto& p : picks) {
    if (p >= target) ++p;
  }
  return picks;
}

bool early_stop(std::span<const double> history, std::size_t patience) {
  if (history.empty()) return false;
  const auto best = std::max_element(history.begin(), history.end());
  const auto since = static_cast<std::size_t>(history.end() - best) - 1;
  return since >= patience;
}

StepRngs StepRngs::for_seed(std::uint64_t seed) {
  return {Rng::derive(seed, 1), Rng::derive(seed, 2)};
}

bool uses_counterfactuals(const AblationFlags& f) {
  const bool co = !f.disable_co && !f.pos_only && !f.neg_only;
  return co || !f.disable_ii;
}

LossBreakdown batch_loss(const ModelConfig& model, const ParamSet& tensors,
                         std::span<const TrainingExample> batch, const TrainConfig& cfg,
                         const VariantConfig& vcfg, ConceptMemories& memories, StepRngs& rngs,
                         ParamSet* grads) {
  if (batch.empty()) throw ConfigError("batch_loss: empty batch");
  Tape tape;
  BoundModel m = bind(tape, model, tensors, grads);

  SequenceBatch seqs;
  std::vector<ItemIndex> targets;
  std::vector<ItemIndex> candidates;
  const std::size_t k = cfg.negatives_per_example;
  for (const auto& ex : batch) {
    seqs.add(ex.prefix);
    targets.push_back(ex.target);
    candidates.push_back(ex.target);
    for (ItemIndex n : sample_negatives(model.n_items, ex.target, k, rngs.negatives)) {
      candidates.push_back(n);
    }
  }

  const EncodedBatch obs = encode_batch(m, backbone_of(vcfg.variant), seqs);
  Var matching = mean_all(sampled_softmax_loss(m, obs.users, candidates, k + 1));
  Var total = matching;
  double co = 0.0, ii = 0.0;

  const AblationFlags& f = cfg.ablation;
  const bool use_co = !f.disable_co && !f.pos_only && !f.neg_only;
  const bool use_ii = !f.disable_ii;
  if (use_co || use_ii) {
    // Ablations drop loss terms only; the draws stay the same.
    auto cf = synthesize_counterfactuals(m, vcfg, seqs, targets, obs, memories, rngs.synthesis);
    if (!cf.examples.empty()) {
      if (use_co) {
        Var v = mean_all(loss_co(cf.observational, *cf.positives, cf.M, *cf.negatives, cf.N,
                                 vcfg.margin_co));
        if (vcfg.co_mean_pairs) v = scale(v, 1.0 / static_cast<double>(cf.M * cf.N));
        co = v.value()(0, 0);
        total = add(total, scale(v, vcfg.lambda1));
      }
      if (use_ii) {
        std::vector<ItemIndex> cf_targets;
        for (std::size_t b : cf.examples) cf_targets.push_back(targets[b]);
        std::optional<Var> pos = cf.positives, neg = cf.negatives;
        if (f.neg_only) pos.reset();
        if (f.pos_only) neg.reset();
        Var v = mean_all(loss_ii(pos, cf.M, neg, cf.N, embed_items(m, cf_targets), vcfg.margin_ii));
        ii = v.value()(0, 0);
        total = add(total, scale(v, vcfg.lambda2));
      }
    }
  }

  const LossBreakdown out = loss_total(matching.value()(0, 0), co, ii, vcfg.lambda1, vcfg.lambda2);
  if (!std::isfinite(total.value()(0, 0))) throw DivergenceError("batch_loss: non-finite loss");
  if (grads != nullptr) tape.backward(total);
  return out;
}

namespace {

std::string checkpoint_meta(std::size_t step, const VariantConfig& vcfg) {
  return nlohmann::json{{"step", step}, {"variant", to_string(vcfg.variant)}}.dump();
}

}  // namespace

TrainResult train(const PreparedData& data, const ModelConfig& model, const TrainConfig& cfg,
                  const VariantConfig& vcfg) {
  cfg.validate();
  vcfg.validate();
  if (data.train.empty()) throw DataError("train: no training examples");
  if (model.n_items != data.n_items) {
    throw ConfigError("train: model vocabulary " + std::to_string(model.n_items) +
                      " differs from the data's " + std::to_string(data.n_items));
  }
  if (backbone_of(vcfg.variant) == EncoderKind::interest_level && vcfg.K != model.n_interests) {
    throw ConfigError("train: variant K differs from the model's interest count");
  }

  TrainResult result;
  ModelParams params = ModelParams::init(model);
  AdamState adam = AdamState::for_params(params.tensors());
  ParamSet grads = params.tensors().zeros_like();
  ConceptMemories memories{ConceptMemory(ConceptLevel::item, cfg.memory_capacity),
                           ConceptMemory(ConceptLevel::interest, cfg.memory_capacity)};
  StepRngs rngs = StepRngs::for_seed(cfg.seed);
  Rng shuffle_rng = Rng::derive(cfg.seed, 3);
  const EncoderKind backbone = backbone_of(vcfg.variant);

  std::ofstream log_out;
  if (cfg.out_dir) {
    std::filesystem::create_directories(*cfg.out_dir);
    log_out.open(*cfg.out_dir / "train_log.jsonl", std::ios::binary);
  }
  result.best_params = params;
  const auto t0 = std::chrono::steady_clock::now();

  auto validate = [&](std::size_t step) -> bool {
    if (data.val.examples.empty()) return false;
    MetricsReport r = evaluate(params, backbone, data.val.examples, cfg.cutoffs, data.val.skipped);
    const double key = r.at.back().recall;
    const bool improved =
        result.val_history.empty() ||
        key > *std::max_element(result.val_history.begin(), result.val_history.end());
    result.val_history.push_back(key);
    if (improved) {
      result.best_val = r;
      result.best_params = params;
      result.best_step = step;
      if (cfg.out_dir) save_checkpoint(*cfg.out_dir / "best.bin", params, checkpoint_meta(step, vcfg));
    }
    if (cfg.out_dir) {
      save_checkpoint(*cfg.out_dir / ("ckpt-" + std::to_string(step) + ".bin"), params,
                      checkpoint_meta(step, vcfg));
    }
    return early_stop(result.val_history, cfg.patience);
  };

  std::vector<std::size_t> order(data.train.size());
  std::size_t step = 0;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size() && !stop; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<TrainingExample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(data.train[order[i]]);

      ++step;
      grads.zero();
      LossBreakdown loss;
      try {
        loss = batch_loss(model, params.tensors(), batch, cfg, vcfg, memories, rngs, &grads);
        adam_step(params.tensors(), grads, adam, cfg.adam);
        const ParamSet& t = params.tensors();
        for (std::size_t i = 0; i < t.count(); ++i) {
          if (!all_finite(t[i].values())) throw DivergenceError("parameter " + t.name(i) + " is not finite");
        }
      } catch (const DivergenceError& e) {
        throw DivergenceError("step " + std::to_string(step) + ": " + e.what());
      }

      // Concepts of this batch become substitutes for later batches.
      {
        Tape tape;
        BoundModel m = bind(tape, model, params.tensors(), nullptr);
        SequenceBatch seqs;
        for (const auto& ex : batch) seqs.add(ex.prefix);
        if (uses_counterfactuals(cfg.ablation)) {
          const EncodedBatch obs = encode_batch(m, backbone, seqs);
          std::vector<std::size_t> rows(seqs.count());
          std::iota(rows.begin(), rows.end(), 0);
          remember_batch(vcfg.variant, seqs, obs, rows, memories);
        }
      }

      if (cfg.log_every > 0 && (step % cfg.log_every == 0 || end == order.size())) {
        TrainLogRecord rec{step, epoch, loss,
                           std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - t0)
                               .count()};
        if (log_out) log_out << rec.to_json() << '\n';
        result.log.push_back(rec);
      }
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0) stop = validate(step);
    }
    if (cfg.eval_every == 0 && !stop) stop = validate(step);
  }

  result.steps = step;
  result.final_params = params;
  if (!result.best_val) result.best_params = params;
  result.memory_high_water = std::max(memories.item.high_water(), memories.interest.high_water());
  if (cfg.out_dir) {
    save_checkpoint(*cfg.out_dir / "final.bin", params, checkpoint_meta(step, vcfg));
  }
  return result;
}

}  // namespace causerec
