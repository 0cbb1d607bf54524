#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "causerec/data.hpp"
#include "causerec/dense.hpp"
#include "causerec/model.hpp"

namespace causerec {

// The n highest inner-product items outside `exclude`, by descending score
// with ties to the lower index. `exclude` is a membership mask over items
// (may be empty). Throws ConfigError when fewer than n candidates remain.
std::vector<ItemIndex> topn_retrieve(std::span<const double> user, const Dense2& items,
                                     std::size_t n, const std::vector<bool>& exclude);
// Same ranking over precomputed scores.
std::vector<ItemIndex> topn_by_score(std::span<const double> scores, std::size_t n,
                                     const std::vector<bool>& exclude);

// Targets are treated as a set; repeats count once. All throw ConfigError on
// an empty target list.
double recall_at(std::span<const ItemIndex> topn, std::span<const ItemIndex> targets);
double ndcg_at(std::span<const ItemIndex> topn, std::span<const ItemIndex> targets);
double hitrate_at(std::span<const ItemIndex> topn, std::span<const ItemIndex> targets);

struct CutoffMetrics {
  std::size_t cutoff = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  double hitrate = 0.0;

  bool operator==(const CutoffMetrics&) const = default;
};

struct MetricsReport {
  std::vector<CutoffMetrics> at;
  std::size_t n_users_evaluated = 0;
  std::size_t n_users_skipped = 0;

  const CutoffMetrics& cutoff(std::size_t c) const;
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  // Recall / NDCG / HitRate columns per cutoff, one row.
  std::string to_table(const std::string& label) const;

  bool operator==(const MetricsReport&) const = default;
};

std::vector<std::size_t> default_cutoffs();

// Encodes each prefix with the backbone, retrieves top-max(cutoffs) items
// excluding the prefix, and averages the per-user metrics.
MetricsReport evaluate(const ModelParams& params, EncoderKind backbone,
                       const std::vector<EvalExample>& examples,
                       std::span<const std::size_t> cutoffs, std::size_t skipped = 0);

// Popularity baseline under the same protocol.
MetricsReport evaluate_pop(const PopScorer& pop, const std::vector<EvalExample>& examples,
                           std::span<const std::size_t> cutoffs, std::size_t skipped = 0);

}  // namespace causerec
