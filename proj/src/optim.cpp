#include "causerec/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "causerec/errors.hpp"

namespace causerec {

std::size_t ParamSet::add(std::string name, Dense2 value) {
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    out.add(names_[i], Dense2(tensors_[i].rows(), tensors_[i].cols()));
  }
  return out;
}

void ParamSet::zero() {
  for (auto& t : tensors_) t.fill(0.0);
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (count() != other.count()) return false;
  for (std::size_t i = 0; i < count(); ++i) {
    if (names_[i] != other.names_[i] || !tensors_[i].same_shape(other.tensors_[i])) return false;
  }
  return true;
}

AdamState AdamState::for_params(const ParamSet& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) ||
      !params.same_layout(state.v)) {
    throw DimensionError("adam_step: parameter, gradient and state layouts differ");
  }
  if (!(cfg.lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  for (std::size_t i = 0; i < grads.count(); ++i) {
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw DivergenceError("adam_step: non-finite gradient in '" + grads.name(i) +
                              "' at entry " + std::to_string(j));
      }
    }
  }

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto w = params[i].values();
    const auto g = grads[i].values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] + cfg.weight_decay * w[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

namespace {

constexpr double kRefineBelow = 1e-6;
constexpr double kMinStep = 1e-8;

}  // namespace

GradCheckResult grad_check(const LossFn& loss, ParamSet params, double eps,
                           std::size_t refinements) {
  if (eps < 1e-6 || eps > 1e-3) throw ConfigError("grad_check: eps must lie in [1e-6, 1e-3]");
  ParamSet analytic = params.zeros_like();
  loss(params, &analytic);

  GradCheckResult result;
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto w = params[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      const double a = analytic[i].values()[j];
      double best = std::numeric_limits<double>::infinity(), best_numeric = 0.0;
      double h = eps;
      for (std::size_t level = 0; level <= refinements; ++level) {
        w[j] = saved + h;
        const double up = loss(params, nullptr);
        w[j] = saved - h;
        const double down = loss(params, nullptr);
        w[j] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double rel = std::abs(a - numeric) / denom;
        if (rel < best) {
          best = rel;
          best_numeric = numeric;
        }
        if (best <= kRefineBelow || h <= kMinStep) break;
        h = std::max(h / 10.0, kMinStep);
      }
      if (best > result.max_rel_error) result = {best, i, j, a, best_numeric};
    }
  }
  return result;
}

}  // namespace causerec
