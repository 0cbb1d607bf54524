#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "causerec/dense.hpp"

namespace causerec {

// Ordered collection of named tensors. Order is the declaration order used by
// optimizers and checkpoints.
class ParamSet {
 public:
  std::size_t add(std::string name, Dense2 value);

  std::size_t count() const { return tensors_.size(); }
  Dense2& operator[](std::size_t i) { return tensors_[i]; }
  const Dense2& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::size_t total_size() const;

  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  void zero();
  bool same_layout(const ParamSet& other) const;

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Dense2> tensors_;
};

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 1e-5;

  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::size_t t = 0;

  static AdamState for_params(const ParamSet& params);
};

// One bias-corrected Adam update. Weight decay enters as an L2 term added to
// the gradient. Throws DivergenceError naming the tensor when a gradient entry
// is not finite; nothing is modified in that case.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg);

// Loss evaluated at `params`; when `grads` is non-null it receives the
// reverse-mode gradient (already zeroed by the caller).
using LossFn = std::function<double(const ParamSet& params, ParamSet* grads)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the reverse-mode gradient against central differences for every
// entry, with relative error |a - n| / max(|a|, |n|, 1e-8). With
// refinements > 0, an entry whose error exceeds 1e-6 is re-measured with the
// step divided by 10 (down to 1e-8) up to that many times and keeps its best
// agreement; a step that straddles a rectifier or hinge kink measures a chord.
GradCheckResult grad_check(const LossFn& loss, ParamSet params, double eps,
                           std::size_t refinements = 0);

}  // namespace causerec
