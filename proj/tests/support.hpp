#pragma once

#include "causerec/data.hpp"
#include "causerec/model.hpp"
#include "causerec/rng.hpp"
#include "causerec/trainer.hpp"

namespace causerec::testing {

inline Dense2 random_rows(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Dense2 m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

// Random nonzero biases keep rectifier inputs off the kink at 0, where central
// differences and the subgradient disagree.
inline ModelParams kink_free_params(const ModelConfig& cfg) {
  ModelParams p = ModelParams::init(cfg);
  Rng rng = Rng::derive(cfg.seed, 77);
  for (auto slot : {ModelParams::kMlpB0, ModelParams::kMlpB1, ModelParams::kMlpB2}) {
    for (auto& v : p.tensors()[slot].values()) v = rng.uniform(0.05, 0.3) * (rng.uniform01() < 0.5 ? -1 : 1);
  }
  return p;
}

// Synthetic log split 8:1:1 and windowed to 20 behaviors.
inline PreparedData synthetic_data(const SyntheticSpec& spec, std::uint64_t split_seed = 0) {
  const auto data = gen_synthetic(spec);
  return prepare_data(data.log, split_users(data.log, {}, split_seed), 20);
}

}  // namespace causerec::testing
