#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "causerec/data.hpp"
#include "causerec/dense.hpp"
#include "causerec/optim.hpp"
#include "causerec/tape.hpp"

namespace causerec {

struct ModelConfig {
  std::size_t n_items = 0;
  std::size_t dim = 64;
  std::size_t hidden = 256;
  std::size_t attn_dim = 64;
  std::size_t n_interests = 20;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

// Which backbone turns a behavior sequence into a user representation.
enum class EncoderKind { item_level, interest_level };

// All trainable tensors. Declaration order (also the checkpoint order):
// item embeddings, three MLP layers (weight, bias), attention W1, attention W2.
class ModelParams {
 public:
  enum Slot : std::size_t {
    kItemEmb = 0,
    kMlpW0, kMlpB0,
    kMlpW1, kMlpB1,
    kMlpW2, kMlpB2,
    kAttnW1,
    kAttnW2,
  };

  ModelParams() = default;
  ModelParams(ModelConfig config, ParamSet tensors);

  // Seeded uniform init in [-1/sqrt(dim), 1/sqrt(dim)] for embeddings and
  // weights; zero biases.
  static ModelParams init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParamSet& tensors() { return tensors_; }
  const ParamSet& tensors() const { return tensors_; }
  const Dense2& item_embeddings() const { return tensors_[kItemEmb]; }

  bool operator==(const ModelParams&) const = default;

 private:
  ModelConfig config_;
  ParamSet tensors_;
};

// Parameters recorded on a tape. With a gradient set the leaves accumulate
// gradients into it; without one they are read-only views.
struct BoundModel {
  const ModelConfig* config = nullptr;
  Tape* tape = nullptr;
  Var item_emb;
  Var mlp_w[3];
  Var mlp_b[3];
  Var attn_w1;
  Var attn_w2;
};

BoundModel bind(Tape& tape, const ModelParams& params, ParamSet* grads);
// Binds an arbitrary tensor set with the ModelParams layout (used by gradient checks).
BoundModel bind(Tape& tape, const ModelConfig& config, const ParamSet& tensors, ParamSet* grads);

// A batch of variable-length item sequences flattened into one id list.
struct SequenceBatch {
  std::vector<ItemIndex> ids;
  std::vector<std::size_t> offsets{0};

  void add(std::span<const ItemIndex> seq);
  std::size_t count() const { return offsets.size() - 1; }
  std::span<const ItemIndex> sequence(std::size_t i) const {
    return {ids.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

// Rows of the item table for `ids`. Throws VocabularyError for ids >= |Y|.
Var embed_items(const BoundModel& m, std::span<const ItemIndex> ids);

// Three-layer perceptron with rectifiers between layers and a linear output.
Var mlp(const BoundModel& m, Var pooled);

// MLP(mean of each segment's rows). Throws SequenceTooShort for an empty segment.
Var user_rep_item_level(const BoundModel& m, Var x, std::span<const std::size_t> offsets);

struct InterestConcepts {
  Var concepts;   // (nseg * K) x d, K consecutive rows per sequence
  Var attention;  // total_t x K; each column sums to 1 within a segment
};

// A = softmax over the sequence of W2 tanh(W1 x^T), C = A^T X, per segment.
InterestConcepts interest_concepts(const BoundModel& m, Var x, std::span<const std::size_t> offsets);

// MLP(mean of each group of K consecutive concept rows).
Var user_rep_interest_level(const BoundModel& m, Var concepts, std::size_t per_user);

// Backbone pass over a batch with the intermediates kept for reuse.
struct EncodedBatch {
  EncoderKind kind = EncoderKind::item_level;
  Var items;                 // embedded behaviors, total_t x d
  InterestConcepts interest; // set for interest_level only
  Var users;                 // one representation per sequence
};

EncodedBatch encode_batch(const BoundModel& m, EncoderKind kind, const SequenceBatch& batch);
// Backbone encoder for a batch of behavior sequences.
Var encode_sequences(const BoundModel& m, EncoderKind kind, const SequenceBatch& batch);

// Per-row sampled-softmax loss. `candidates` holds 1 + k ids per user, target
// first. Returns B x 1 values of -log(e^{s_target} / sum_c e^{s_c}).
Var sampled_softmax_loss(const BoundModel& m, Var users, std::span<const ItemIndex> candidates,
                         std::size_t per_user);

double score(std::span<const double> user, std::span<const double> item);

// Single-sequence conveniences (no gradient).
Dense1 user_rep_item_level(const ModelParams& params, const Dense2& x);
Dense1 user_rep_interest_level(const ModelParams& params, const Dense2& concepts);
std::pair<Dense2, Dense2> interest_concepts(const ModelParams& params, const Dense2& x);
Dense2 embed_items(const ModelParams& params, std::span<const ItemIndex> ids);
// Batch encoding without a gradient; one row per sequence.
Dense2 encode_users(const ModelParams& params, EncoderKind kind, const SequenceBatch& batch);

// Popularity ranker: scores every item by its interaction count.
class PopScorer {
 public:
  explicit PopScorer(std::vector<std::size_t> counts) : counts_(std::move(counts)) {}
  static PopScorer from_log(const InteractionLog& log, const std::vector<std::string>& users);
  const std::vector<std::size_t>& counts() const { return counts_; }

 private:
  std::vector<std::size_t> counts_;
};

// Binary checkpoint: "CRCKPT01", u64 LE header length, JSON header (config,
// seed, config hash, tensor names and shapes, caller metadata), then all
// tensor entries as little-endian doubles in declaration order.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::string& metadata_json = "{}");
ModelParams load_checkpoint(const std::filesystem::path& path, std::string* metadata_json = nullptr);
std::string config_hash(const ModelConfig& config);

}  // namespace causerec
