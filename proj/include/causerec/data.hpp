#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace causerec {

using ItemIndex = std::size_t;

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

// The raw interaction list plus derived per-user chronological histories and a
// dense item vocabulary. Users iterate in lexicographic id order; vocabulary
// indices follow first appearance in the interaction list.
class InteractionLog {
 public:
  InteractionLog() = default;
  explicit InteractionLog(std::vector<Interaction> interactions);

  const std::vector<Interaction>& interactions() const { return interactions_; }
  std::size_t size() const { return interactions_.size(); }
  bool empty() const { return interactions_.empty(); }

  std::size_t num_users() const { return histories_.size(); }
  std::size_t num_items() const { return vocab_.size(); }
  std::vector<std::string> users() const;

  const std::vector<std::string>& vocabulary() const { return vocab_; }
  std::optional<ItemIndex> item_index(const std::string& item) const;
  const std::string& item_id(ItemIndex i) const { return vocab_.at(i); }

  // Chronological item indices of `user`; ties keep input order.
  const std::vector<ItemIndex>& history(const std::string& user) const;
  bool has_user(const std::string& user) const { return histories_.contains(user); }

  // Interaction count per vocabulary index.
  std::vector<std::size_t> item_counts() const;

  void write_tsv(const std::filesystem::path& path) const;

 private:
  std::vector<Interaction> interactions_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, ItemIndex> vocab_index_;
  std::map<std::string, std::vector<ItemIndex>> histories_;
};

// Parses `user<TAB>item<TAB>timestamp` lines. Throws ParseError with the line
// number on malformed input and EmptyDatasetError on an empty file.
InteractionLog load_interactions(const std::filesystem::path& path);
InteractionLog parse_interactions(const std::string& text, const std::string& source = "<memory>");

// Largest sub-log in which every user and item has at least k interactions.
InteractionLog k_core_filter(const InteractionLog& log, std::size_t k);

// Keeps each user's `max_len` most recent interactions.
InteractionLog truncate_histories(const InteractionLog& log, std::size_t max_len);

struct UserSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct SplitRatios {
  double train = 8;
  double val = 1;
  double test = 1;
};

// Seeded shuffle of the user ids followed by a contiguous partition of sizes
// floor(n*train/sum), floor(n*val/sum) and the remainder.
UserSplit split_users(const InteractionLog& log, SplitRatios ratios, std::uint64_t seed);

struct TrainingExample {
  std::vector<ItemIndex> prefix;
  ItemIndex target = 0;

  bool operator==(const TrainingExample&) const = default;
};

// One example per position t >= 2 of each history, prefix clipped to the most
// recent max_len items. Emitted in the order of `users`, then position.
std::vector<TrainingExample> make_training_examples(const InteractionLog& log,
                                                    const std::vector<std::string>& users,
                                                    std::size_t max_len);

struct EvalExample {
  std::string user;
  std::vector<ItemIndex> prefix;
  std::vector<ItemIndex> targets;  // remaining behaviors in order; repeats kept
};

struct EvalSet {
  std::vector<EvalExample> examples;
  std::size_t skipped = 0;
};

// prefix = first ceil(prefix_frac * T) behaviors, targets = the rest. Users
// left with no targets are skipped and counted.
EvalSet make_eval_examples(const InteractionLog& log, const std::vector<std::string>& users,
                           double prefix_frac = 0.8);

struct SyntheticSpec {
  std::size_t n_users = 2000;
  std::size_t n_items = 400;
  std::size_t n_clusters = 8;
  std::size_t seq_len = 20;
  double noise_rate = 0.3;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticSpec&) const = default;
};

struct SyntheticData {
  InteractionLog log;
  // Preferred cluster ids per user, keyed by user id.
  std::map<std::string, std::vector<std::size_t>> preferred;
  std::size_t cluster_size = 0;
};

// Users with 1-2 preferred clusters of consecutive item ids; each behavior is
// in-cluster with probability 1 - noise_rate, else uniform over all items.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

// Cluster of a synthetic item id ("i00042" -> 42 / cluster_size).
std::size_t synthetic_cluster_of(const std::string& item_id, std::size_t cluster_size);

}  // namespace causerec
