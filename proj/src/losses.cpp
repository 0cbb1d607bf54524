#include "causerec/losses.hpp"

#include <cmath>

#include <json.hpp>

#include "causerec/errors.hpp"

namespace causerec {

std::string LossBreakdown::to_json() const {
  return nlohmann::json{{"matching", matching}, {"co", co}, {"ii", ii}, {"total", total}}.dump();
}

LossBreakdown loss_total(double matching, double co, double ii, double lambda1, double lambda2) {
  for (double v : {matching, co, ii, lambda1, lambda2}) {
    if (!std::isfinite(v)) throw DivergenceError("loss_total: non-finite loss component");
  }
  return {matching, co, ii, matching + lambda1 * co + lambda2 * ii};
}

Var loss_co(Var observational, Var positives, std::size_t M, Var negatives, std::size_t N,
            double margin) {
  if (M == 0 || N == 0) throw ConfigError("loss_co: needs at least one positive and one negative");
  Var dpos = grouped_distance(observational, positives, M);
  Var dneg = grouped_distance(observational, negatives, N);
  return triplet_hinge(dpos, dneg, margin);
}

Var loss_ii(std::optional<Var> positives, std::size_t M, std::optional<Var> negatives,
            std::size_t N, Var targets, double margin) {
  if (!positives && !negatives) throw ConfigError("loss_ii: no counterfactual terms");
  Var y = l2_normalize_rows(targets);
  std::optional<Var> total;
  if (positives) {
    Var cos = grouped_dot(y, l2_normalize_rows(*positives), M);
    total = row_sum(affine_scalar(cos, -1.0, 1.0));
  }
  if (negatives) {
    Var cos = grouped_dot(y, l2_normalize_rows(*negatives), N);
    Var term = row_sum(hinge(cos, margin));
    total = total ? add(*total, term) : term;
  }
  return *total;
}

namespace {

Dense2 stack(const std::vector<Dense1>& rows) {
  if (rows.empty()) throw ConfigError("empty representation list");
  Dense2 m(rows.size(), rows.front().len());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].len() != m.cols()) throw DimensionError("representations differ in length");
    std::copy_n(rows[r].values().begin(), m.cols(), m.row(r).begin());
  }
  return m;
}

}  // namespace

double loss_co(const Dense1& xq, const std::vector<Dense1>& positives,
               const std::vector<Dense1>& negatives, double margin) {
  Tape t;
  Var out = loss_co(t.constant(Dense2::row_vector(xq.values())), t.constant(stack(positives)),
                    positives.size(), t.constant(stack(negatives)), negatives.size(), margin);
  return out.value()(0, 0);
}

double loss_ii(const std::vector<Dense1>& positives, const std::vector<Dense1>& negatives,
               const Dense1& y, double margin) {
  Tape t;
  std::optional<Var> p, n;
  if (!positives.empty()) p = t.constant(stack(positives));
  if (!negatives.empty()) n = t.constant(stack(negatives));
  Var out = loss_ii(p, positives.size(), n, negatives.size(),
                    t.constant(Dense2::row_vector(y.values())), margin);
  return out.value()(0, 0);
}

}  // namespace causerec
