#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "causerec/dense.hpp"
#include "causerec/tape.hpp"

namespace causerec {

struct LossBreakdown {
  double matching = 0.0;
  double co = 0.0;
  double ii = 0.0;
  double total = 0.0;

  std::string to_json() const;
};

// total = matching + lambda1 * co + lambda2 * ii. Throws DivergenceError on a
// non-finite component.
LossBreakdown loss_total(double matching, double co, double ii, double lambda1, double lambda2);

// Triplet margin loss between each observational row and its counterfactuals:
// per row b, sum_{m,n} max(d(x_b, p_{b,m}) - d(x_b, n_{b,n}) + margin, 0) with
// Euclidean d. Returns B x 1.
Var loss_co(Var observational, Var positives, std::size_t M, Var negatives, std::size_t N,
            double margin);

// Interest-item contrast on L2-normalized rows: per row b,
//   sum_m (1 - <p~_{b,m}, y~_b>) + sum_n max(0, <n~_{b,n}, y~_b> - margin).
// Either side may be absent (ablations). Returns B x 1.
Var loss_ii(std::optional<Var> positives, std::size_t M, std::optional<Var> negatives,
            std::size_t N, Var targets, double margin);

// Single-instance forms.
double loss_co(const Dense1& xq, const std::vector<Dense1>& positives,
               const std::vector<Dense1>& negatives, double margin);
double loss_ii(const std::vector<Dense1>& positives, const std::vector<Dense1>& negatives,
               const Dense1& y, double margin);

}  // namespace causerec
