#include "causerec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include <json.hpp>

#include "causerec/errors.hpp"

namespace causerec {

std::vector<ItemIndex> topn_by_score(std::span<const double> scores, std::size_t n,
                                     const std::vector<bool>& exclude) {
  std::vector<ItemIndex> cand;
  cand.reserve(scores.size());
  for (ItemIndex i = 0; i < scores.size(); ++i) {
    if (i < exclude.size() && exclude[i]) continue;
    cand.push_back(i);
  }
  if (n > cand.size()) {
    throw ConfigError("topn_retrieve: asked for " + std::to_string(n) + " items, only " +
                      std::to_string(cand.size()) + " candidates");
  }
  auto better = [&](ItemIndex a, ItemIndex b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(cand.begin(), cand.begin() + n, cand.end(), better);
  cand.resize(n);
  return cand;
}

std::vector<ItemIndex> topn_retrieve(std::span<const double> user, const Dense2& items,
                                     std::size_t n, const std::vector<bool>& exclude) {
  if (user.size() != items.cols()) {
    throw DimensionError("topn_retrieve: user length " + std::to_string(user.size()) +
                         " vs item table " + items.shape_str());
  }
  std::vector<double> scores(items.rows());
  for (std::size_t i = 0; i < items.rows(); ++i) scores[i] = dot(user, items.row(i));
  return topn_by_score(scores, n, exclude);
}

namespace {

std::unordered_set<ItemIndex> target_set(std::span<const ItemIndex> targets, const char* op) {
  if (targets.empty()) throw ConfigError(std::string(op) + ": empty target set");
  return {targets.begin(), targets.end()};
}

}  // namespace

double recall_at(std::span<const ItemIndex> topn, std::span<const ItemIndex> targets) {
  const auto t = target_set(targets, "recall_at");
  std::size_t hits = 0;
  for (ItemIndex i : topn) hits += t.contains(i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(t.size());
}

double ndcg_at(std::span<const ItemIndex> topn, std::span<const ItemIndex> targets) {
  const auto t = target_set(targets, "ndcg_at");
  double dcg = 0.0;
  for (std::size_t r = 0; r < topn.size(); ++r) {
    if (t.contains(topn[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(t.size(), topn.size());
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

double hitrate_at(std::span<const ItemIndex> topn, std::span<const ItemIndex> targets) {
  const auto t = target_set(targets, "hitrate_at");
  for (ItemIndex i : topn) {
    if (t.contains(i)) return 1.0;
  }
  return 0.0;
}

const CutoffMetrics& MetricsReport::cutoff(std::size_t c) const {
  for (const auto& m : at) {
    if (m.cutoff == c) return m;
  }
  throw ConfigError("metrics report has no cutoff " + std::to_string(c));
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["n_users_evaluated"] = n_users_evaluated;
  j["n_users_skipped"] = n_users_skipped;
  auto& arr = j["cutoffs"] = nlohmann::json::array();
  for (const auto& m : at) {
    arr.push_back({{"cutoff", m.cutoff}, {"recall", m.recall}, {"ndcg", m.ndcg},
                   {"hitrate", m.hitrate}});
  }
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricsReport r;
  r.n_users_evaluated = j.at("n_users_evaluated");
  r.n_users_skipped = j.at("n_users_skipped");
  for (const auto& m : j.at("cutoffs")) {
    r.at.push_back({m.at("cutoff"), m.at("recall"), m.at("ndcg"), m.at("hitrate")});
  }
  return r;
}

std::string MetricsReport::to_table(const std::string& label) const {
  struct Column {
    const char* tag;
    double CutoffMetrics::*field;
  };
  const Column columns[] = {{"R", &CutoffMetrics::recall},
                            {"N", &CutoffMetrics::ndcg},
                            {"HR", &CutoffMetrics::hitrate}};
  std::string head, row;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-24s", "Model");
  head += buf;
  std::snprintf(buf, sizeof buf, "%-24s", label.c_str());
  row += buf;
  for (const auto& col : columns) {
    for (const auto& m : at) {
      std::snprintf(buf, sizeof buf, " %8s@%-3zu", col.tag, m.cutoff);
      head += buf;
      std::snprintf(buf, sizeof buf, " %12.4f", m.*col.field);
      row += buf;
    }
  }
  return head + "\n" + row + "\n";
}

std::vector<std::size_t> default_cutoffs() { return {20, 50}; }

namespace {

struct Accumulator {
  std::vector<CutoffMetrics> sums;
  std::size_t users = 0;

  explicit Accumulator(std::span<const std::size_t> cutoffs) {
    if (cutoffs.empty()) throw ConfigError("evaluate: no cutoffs");
    for (std::size_t c : cutoffs) {
      if (c == 0) throw ConfigError("evaluate: cutoff must be >= 1");
      sums.push_back({c, 0.0, 0.0, 0.0});
    }
  }

  void add(const std::vector<ItemIndex>& ranked, std::span<const ItemIndex> targets) {
    for (auto& s : sums) {
      std::span<const ItemIndex> top(ranked.data(), std::min(s.cutoff, ranked.size()));
      s.recall += recall_at(top, targets);
      s.ndcg += ndcg_at(top, targets);
      s.hitrate += hitrate_at(top, targets);
    }
    ++users;
  }

  MetricsReport finish(std::size_t skipped) const {
    MetricsReport r;
    r.n_users_evaluated = users;
    r.n_users_skipped = skipped;
    const double n = static_cast<double>(users);
    for (const auto& s : sums) r.at.push_back({s.cutoff, s.recall / n, s.ndcg / n, s.hitrate / n});
    return r;
  }
};

std::size_t max_cutoff(std::span<const std::size_t> cutoffs) {
  return *std::max_element(cutoffs.begin(), cutoffs.end());
}

std::vector<bool> mask_of(std::span<const ItemIndex> prefix, std::size_t n_items) {
  std::vector<bool> mask(n_items, false);
  for (ItemIndex i : prefix) {
    if (i >= n_items) throw VocabularyError("evaluate: prefix item out of range");
    mask[i] = true;
  }
  return mask;
}

}  // namespace

MetricsReport evaluate(const ModelParams& params, EncoderKind backbone,
                       const std::vector<EvalExample>& examples,
                       std::span<const std::size_t> cutoffs, std::size_t skipped) {
  if (examples.empty()) throw ConfigError("evaluate: no evaluation examples");
  Accumulator acc(cutoffs);
  const Dense2& items = params.item_embeddings();
  const std::size_t want = max_cutoff(cutoffs);
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < examples.size(); start += kChunk) {
    const std::size_t end = std::min(examples.size(), start + kChunk);
    SequenceBatch batch;
    for (std::size_t i = start; i < end; ++i) batch.add(examples[i].prefix);
    const Dense2 users = encode_users(params, backbone, batch);
    for (std::size_t i = start; i < end; ++i) {
      const auto mask = mask_of(examples[i].prefix, items.rows());
      const std::size_t available =
          items.rows() - static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
      acc.add(topn_retrieve(users.row(i - start), items, std::min(want, available), mask),
              examples[i].targets);
    }
  }
  return acc.finish(skipped);
}

MetricsReport evaluate_pop(const PopScorer& pop, const std::vector<EvalExample>& examples,
                           std::span<const std::size_t> cutoffs, std::size_t skipped) {
  if (examples.empty()) throw ConfigError("evaluate: no evaluation examples");
  Accumulator acc(cutoffs);
  std::vector<double> scores(pop.counts().begin(), pop.counts().end());
  const std::size_t want = max_cutoff(cutoffs);
  for (const auto& ex : examples) {
    const auto mask = mask_of(ex.prefix, scores.size());
    const std::size_t available =
        scores.size() - static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    acc.add(topn_by_score(scores, std::min(want, available), mask), ex.targets);
  }
  return acc.finish(skipped);
}

}  // namespace causerec
