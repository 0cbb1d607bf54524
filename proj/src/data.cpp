#include "causerec/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "causerec/errors.hpp"
#include "causerec/rng.hpp"

namespace causerec {

InteractionLog::InteractionLog(std::vector<Interaction> interactions)
    : interactions_(std::move(interactions)) {
  for (const auto& x : interactions_) {
    if (!vocab_index_.contains(x.item)) {
      vocab_index_.emplace(x.item, vocab_.size());
      vocab_.push_back(x.item);
    }
  }
  // Stable sort by timestamp within each user keeps input order on ties.
  std::map<std::string, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < interactions_.size(); ++i) rows[interactions_[i].user].push_back(i);
  for (auto& [user, idx] : rows) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return interactions_[a].timestamp < interactions_[b].timestamp;
    });
    auto& h = histories_[user];
    h.reserve(idx.size());
    for (std::size_t i : idx) h.push_back(vocab_index_.at(interactions_[i].item));
  }
}

std::vector<std::string> InteractionLog::users() const {
  std::vector<std::string> out;
  out.reserve(histories_.size());
  for (const auto& [user, h] : histories_) out.push_back(user);
  return out;
}

std::optional<ItemIndex> InteractionLog::item_index(const std::string& item) const {
  auto it = vocab_index_.find(item);
  if (it == vocab_index_.end()) return std::nullopt;
  return it->second;
}

const std::vector<ItemIndex>& InteractionLog::history(const std::string& user) const {
  auto it = histories_.find(user);
  if (it == histories_.end()) throw DataError("unknown user '" + user + "'");
  return it->second;
}

std::vector<std::size_t> InteractionLog::item_counts() const {
  std::vector<std::size_t> counts(vocab_.size(), 0);
  for (const auto& x : interactions_) counts[vocab_index_.at(x.item)] += 1;
  return counts;
}

void InteractionLog::write_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& x : interactions_) out << x.user << '\t' << x.item << '\t' << x.timestamp << '\n';
}

InteractionLog parse_interactions(const std::string& text, const std::string& source) {
  std::vector<Interaction> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw ParseError(source, line_no,
                       "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError(source, line_no, "empty id");
    std::int64_t ts = 0;
    const auto& f = fields[2];
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), ts);
    if (ec != std::errc() || ptr != f.data() + f.size() || ts < 0) {
      throw ParseError(source, line_no, "bad timestamp '" + f + "'");
    }
    rows.push_back({std::move(fields[0]), std::move(fields[1]), ts});
  }
  if (rows.empty()) throw EmptyDatasetError(source + ": no interactions");
  return InteractionLog(std::move(rows));
}

InteractionLog load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_interactions(buf.str(), path.string());
}

InteractionLog k_core_filter(const InteractionLog& log, std::size_t k) {
  if (k == 0) throw ConfigError("k_core_filter: k must be >= 1");
  const auto& rows = log.interactions();
  std::vector<char> alive(rows.size(), 1);
  std::unordered_map<std::string, std::size_t> user_deg, item_deg;
  for (const auto& x : rows) {
    ++user_deg[x.user];
    ++item_deg[x.item];
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!alive[i]) continue;
      if (user_deg[rows[i].user] < k || item_deg[rows[i].item] < k) {
        alive[i] = 0;
        changed = true;
      }
    }
    // A sweep removes what was under-degree at its start.
    user_deg.clear();
    item_deg.clear();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!alive[i]) continue;
      ++user_deg[rows[i].user];
      ++item_deg[rows[i].item];
    }
  }
  std::vector<Interaction> kept;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (alive[i]) kept.push_back(rows[i]);
  }
  return InteractionLog(std::move(kept));
}

InteractionLog truncate_histories(const InteractionLog& log, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("truncate_histories: max_len must be >= 1");
  const auto& rows = log.interactions();
  std::map<std::string, std::vector<std::size_t>> per_user;
  for (std::size_t i = 0; i < rows.size(); ++i) per_user[rows[i].user].push_back(i);
  std::vector<char> keep(rows.size(), 0);
  for (auto& [user, idx] : per_user) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return rows[a].timestamp < rows[b].timestamp;
    });
    const std::size_t drop = idx.size() > max_len ? idx.size() - max_len : 0;
    for (std::size_t j = drop; j < idx.size(); ++j) keep[idx[j]] = 1;
  }
  std::vector<Interaction> kept;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (keep[i]) kept.push_back(rows[i]);
  }
  return InteractionLog(std::move(kept));
}

UserSplit split_users(const InteractionLog& log, SplitRatios ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0)) {
    throw SplitError("split_users: ratios must be positive");
  }
  std::vector<std::string> users = log.users();
  const std::size_t n = users.size();
  if (n < 3) throw SplitError("split_users: need at least 3 users, have " + std::to_string(n));
  Rng rng(seed);
  rng.shuffle(users);
  const double total = ratios.train + ratios.val + ratios.test;
  const auto n_train = static_cast<std::size_t>(std::floor(n * ratios.train / total + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.val / total + 1e-9));
  UserSplit out;
  out.train.assign(users.begin(), users.begin() + n_train);
  out.val.assign(users.begin() + n_train, users.begin() + n_train + n_val);
  out.test.assign(users.begin() + n_train + n_val, users.end());
  return out;
}

std::vector<TrainingExample> make_training_examples(const InteractionLog& log,
                                                    const std::vector<std::string>& users,
                                                    std::size_t max_len) {
  if (max_len == 0) throw ConfigError("make_training_examples: max_len must be >= 1");
  std::vector<TrainingExample> out;
  for (const auto& user : users) {
    const auto& h = log.history(user);
    for (std::size_t t = 1; t < h.size(); ++t) {
      const std::size_t begin = t > max_len ? t - max_len : 0;
      out.push_back({std::vector<ItemIndex>(h.begin() + begin, h.begin() + t), h[t]});
    }
  }
  return out;
}

EvalSet make_eval_examples(const InteractionLog& log, const std::vector<std::string>& users,
                           double prefix_frac) {
  if (!(prefix_frac > 0.0 && prefix_frac < 1.0)) {
    throw ConfigError("make_eval_examples: prefix_frac must lie in (0, 1)");
  }
  EvalSet out;
  for (const auto& user : users) {
    const auto& h = log.history(user);
    // The epsilon absorbs representation error, e.g. 0.8 * 15.
    auto cut = static_cast<std::size_t>(std::ceil(prefix_frac * h.size() - 1e-9));
    cut = std::max<std::size_t>(cut, 1);
    if (cut >= h.size()) {
      ++out.skipped;
      continue;
    }
    out.examples.push_back({user, std::vector<ItemIndex>(h.begin(), h.begin() + cut),
                            std::vector<ItemIndex>(h.begin() + cut, h.end())});
  }
  return out;
}

namespace {

std::string padded(char prefix, std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%05zu", prefix, v);
  return buf;
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n_clusters == 0 || spec.n_items == 0 || spec.n_items % spec.n_clusters != 0) {
    throw ConfigError("gen_synthetic: n_items must be a positive multiple of n_clusters");
  }
  if (!(spec.noise_rate >= 0.0 && spec.noise_rate < 1.0)) {
    throw ConfigError("gen_synthetic: noise_rate must lie in [0, 1)");
  }
  Rng rng(spec.seed);
  SyntheticData out;
  out.cluster_size = spec.n_items / spec.n_clusters;
  std::vector<Interaction> rows;
  rows.reserve(spec.n_users * spec.seq_len);
  std::int64_t clock = 0;
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    const std::string user = padded('u', u);
    const std::size_t n_pref = spec.n_clusters >= 2 && rng.uniform01() < 0.5 ? 2 : 1;
    auto pref = rng.sample_without_replacement(spec.n_clusters, n_pref);
    for (std::size_t pos = 0; pos < spec.seq_len; ++pos) {
      std::size_t item;
      if (rng.uniform01() < spec.noise_rate) {
        item = rng.uniform_index(spec.n_items);
      } else {
        const std::size_t c = pref[rng.uniform_index(pref.size())];
        item = c * out.cluster_size + rng.uniform_index(out.cluster_size);
      }
      rows.push_back({user, padded('i', item), clock++});
    }
    out.preferred.emplace(user, std::move(pref));
  }
  out.log = InteractionLog(std::move(rows));
  return out;
}

std::size_t synthetic_cluster_of(const std::string& item_id, std::size_t cluster_size) {
  return static_cast<std::size_t>(std::stoull(item_id.substr(1))) / cluster_size;
}

}  // namespace causerec
