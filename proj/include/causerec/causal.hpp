#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "causerec/dense.hpp"
#include "causerec/model.hpp"
#include "causerec/rng.hpp"

namespace causerec {

enum class ConceptLevel { item, interest };
enum class Variant { item, interest, hierarchical };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
// item -> item-level backbone; interest and hierarchical -> interest-level.
EncoderKind backbone_of(Variant v);

struct VariantConfig {
  Variant variant = Variant::item;
  std::size_t M = 1;  // counterfactually positive representations
  std::size_t N = 8;  // counterfactually negative representations
  double r_rep = 0.5;
  std::size_t K = 20;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double margin_co = 1.0;
  double margin_ii = 0.5;
  // Average L_co over the M*N pairs instead of summing them.
  bool co_mean_pairs = false;

  // M=1, N=8 for item/interest; M=2, N=16 for hierarchical.
  static VariantConfig defaults(Variant v);
  // Throws ConfigError on M or N of zero, or r_rep outside (0, 1].
  void validate() const;

  bool operator==(const VariantConfig&) const = default;
};

struct ConceptSequence {
  ConceptLevel level = ConceptLevel::item;
  Dense2 vectors;
  std::vector<ItemIndex> source_ids;  // item level only
  Dense1 scores;
};

struct ConceptSplit {
  std::vector<std::size_t> indispensable;  // ascending
  std::vector<std::size_t> dispensable;    // ascending
};

// Bounded FIFO of substitute concepts for one level. Item-level entries are
// item indices; interest-level entries are detached concept vectors.
class ConceptMemory {
 public:
  using Entry = std::variant<ItemIndex, Dense1>;

  ConceptMemory(ConceptLevel level, std::size_t capacity = 4096);

  ConceptLevel level() const { return level_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return queue_.size(); }
  bool empty() const { return queue_.empty(); }
  // Largest size observed after any enqueue.
  std::size_t high_water() const { return high_water_; }

  // Appends in order, evicting the oldest beyond capacity. Throws ConfigError
  // when an entry kind does not match the level.
  void enqueue(std::span<const Entry> entries);
  void enqueue_items(std::span<const ItemIndex> items);
  // Each row becomes one interest-level entry.
  void enqueue_vectors(const Dense2& rows);
  std::optional<Entry> dequeue();

  const std::deque<Entry>& contents() const { return queue_; }

 private:
  void push(Entry e);

  ConceptLevel level_;
  std::size_t capacity_;
  std::size_t high_water_ = 0;
  std::deque<Entry> queue_;
};

struct ConceptMemories {
  ConceptMemory item{ConceptLevel::item};
  ConceptMemory interest{ConceptLevel::interest};
};

// Call counts of the identification and transformation machinery. Serving
// paths must leave them untouched. Counts are per thread.
struct CausalCounters {
  std::size_t item_scores = 0;
  std::size_t interest_scores = 0;
  std::size_t splits = 0;
  std::size_t transforms = 0;
  std::size_t syntheses = 0;
  std::size_t memory_reads = 0;

  std::size_t total() const {
    return item_scores + interest_scores + splits + transforms + syntheses + memory_reads;
  }
};
CausalCounters& causal_counters();
void reset_causal_counters();

// p_i = <x_i, y> on plain values. Throws SequenceTooShort for t < 2.
Dense1 item_concept_scores(const Dense2& x, std::span<const double> y);
// Concept k scores sum_i a[i][k] * item_scores[i].
Dense1 interest_concept_scores(const Dense2& a, const Dense1& item_scores);
// Top ceil(n/2) scores are indispensable; ties go to the earlier position.
ConceptSplit split_concepts(const Dense1& scores);

struct Replacement {
  std::size_t position = 0;
  ConceptMemory::Entry substitute;
};

// Cold-start substitutes when the memory is empty.
struct ColdStart {
  std::size_t vocab_size = 0;  // item level
  std::size_t dim = 0;         // interest level
};

// Picks ceil(r_rep * |replace_set|) positions uniformly without replacement
// and dequeues one substitute for each, re-enqueueing it at the tail.
std::vector<Replacement> plan_replacements(std::span<const std::size_t> replace_set, double r_rep,
                                           ConceptMemory& mem, const ColdStart& cold, Rng& rng);

// Applies plan_replacements to a sequence. Item-level rows are refreshed from
// `item_table` (required for item level).
ConceptSequence counterfactual_transform(const ConceptSequence& seq,
                                         std::span<const std::size_t> replace_set, double r_rep,
                                         ConceptMemory& mem, Rng& rng,
                                         const Dense2* item_table = nullptr);

// Counterfactual representations for the eligible rows of an observational
// pass, laid out example-major.
struct CounterfactualBatch {
  std::vector<std::size_t> examples;  // batch rows with >= 2 behaviors
  Var observational;                  // examples.size() x d
  std::optional<Var> positives;       // (examples.size() * M) x d
  std::optional<Var> negatives;       // (examples.size() * N) x d
  std::size_t M = 0;
  std::size_t N = 0;
};

struct SynthesisOptions {
  bool positives = true;
  bool negatives = true;
};

// Builds M positive and N negative counterfactual representations per
// eligible example. `obs` must come from encode_batch on `batch` with the
// variant's backbone. Returns an empty batch when no example qualifies.
CounterfactualBatch synthesize_counterfactuals(const BoundModel& m, const VariantConfig& cfg,
                                               const SequenceBatch& batch,
                                               std::span<const ItemIndex> targets,
                                               const EncodedBatch& obs, ConceptMemories& memories,
                                               Rng& rng, SynthesisOptions opts = {});

struct Counterfactuals {
  std::vector<Dense1> positives;
  std::vector<Dense1> negatives;
  Dense1 observational;
};

// Single-sequence synthesis without gradients.
Counterfactuals synthesize_counterfactuals(const ModelParams& params,
                                           std::span<const ItemIndex> behavior_ids,
                                           ItemIndex target, const VariantConfig& cfg,
                                           ConceptMemories& memories, Rng& rng);

// Enqueues the observational concepts of the listed batch rows into the
// memories the variant uses: behavior ids at the item level, detached concept
// rows at the interest level.
void remember_batch(Variant variant, const SequenceBatch& batch, const EncodedBatch& obs,
                    std::span<const std::size_t> rows, ConceptMemories& memories);

}  // namespace causerec
