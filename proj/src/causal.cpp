#include "causerec/causal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "causerec/errors.hpp"

namespace causerec {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::item: return "item";
    case Variant::interest: return "interest";
    case Variant::hierarchical: return "hierarchical";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "item") return Variant::item;
  if (s == "interest") return Variant::interest;
  if (s == "hierarchical" || s == "h") return Variant::hierarchical;
  throw ConfigError("unknown variant '" + s + "' (expected item, interest or hierarchical)");
}

EncoderKind backbone_of(Variant v) {
  return v == Variant::item ? EncoderKind::item_level : EncoderKind::interest_level;
}

VariantConfig VariantConfig::defaults(Variant v) {
  VariantConfig c;
  c.variant = v;
  if (v == Variant::hierarchical) {
    c.M = 2;
    c.N = 16;
  }
  return c;
}

void VariantConfig::validate() const {
  if (M == 0 || N == 0) throw ConfigError("variant: M and N must be >= 1");
  if (!(r_rep > 0.0 && r_rep <= 1.0)) throw ConfigError("variant: r_rep must lie in (0, 1]");
  if (K == 0) throw ConfigError("variant: K must be >= 1");
}

// ---------------------------------------------------------------------------

ConceptMemory::ConceptMemory(ConceptLevel level, std::size_t capacity)
    : level_(level), capacity_(capacity) {
  if (capacity == 0) throw ConfigError("ConceptMemory: capacity must be >= 1");
}

void ConceptMemory::push(Entry e) {
  const bool is_item = std::holds_alternative<ItemIndex>(e);
  if (is_item != (level_ == ConceptLevel::item)) {
    throw ConfigError(std::string("ConceptMemory: ") + (is_item ? "item" : "vector") +
                      " entry offered to the " +
                      (level_ == ConceptLevel::item ? "item" : "interest") + "-level memory");
  }
  queue_.push_back(std::move(e));
  while (queue_.size() > capacity_) queue_.pop_front();
  high_water_ = std::max(high_water_, queue_.size());
}

void ConceptMemory::enqueue(std::span<const Entry> entries) {
  for (const auto& e : entries) push(e);
}

void ConceptMemory::enqueue_items(std::span<const ItemIndex> items) {
  for (ItemIndex i : items) push(i);
}

void ConceptMemory::enqueue_vectors(const Dense2& rows) {
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto row = rows.row(r);
    push(Dense1(std::vector<double>(row.begin(), row.end())));
  }
}

std::optional<ConceptMemory::Entry> ConceptMemory::dequeue() {
  ++causal_counters().memory_reads;
  if (queue_.empty()) return std::nullopt;
  Entry e = std::move(queue_.front());
  queue_.pop_front();
  return e;
}

CausalCounters& causal_counters() {
  thread_local CausalCounters counters;
  return counters;
}

void reset_causal_counters() { causal_counters() = {}; }

// ---------------------------------------------------------------------------

Dense1 item_concept_scores(const Dense2& x, std::span<const double> y) {
  ++causal_counters().item_scores;
  if (x.rows() < 2) {
    throw SequenceTooShort("item_concept_scores: need at least 2 behaviors, have " +
                           std::to_string(x.rows()));
  }
  if (x.cols() != y.size()) {
    throw DimensionError("item_concept_scores: concepts " + x.shape_str() + " vs target length " +
                         std::to_string(y.size()));
  }
  Dense1 s(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) s[i] = dot(x.row(i), y);
  return s;
}

Dense1 interest_concept_scores(const Dense2& a, const Dense1& item_scores) {
  ++causal_counters().interest_scores;
  if (a.rows() != item_scores.len()) {
    throw DimensionError("interest_concept_scores: attention " + a.shape_str() +
                         " vs item scores of length " + std::to_string(item_scores.len()));
  }
  Dense1 s(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) s[k] += a(i, k) * item_scores[i];
  }
  return s;
}

ConceptSplit split_concepts(const Dense1& scores) {
  ++causal_counters().splits;
  const std::size_t n = scores.len();
  if (n < 2) throw SequenceTooShort("split_concepts: need at least 2 concepts");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t top = (n + 1) / 2;
  ConceptSplit split;
  split.indispensable.assign(order.begin(), order.begin() + top);
  split.dispensable.assign(order.begin() + top, order.end());
  std::sort(split.indispensable.begin(), split.indispensable.end());
  std::sort(split.dispensable.begin(), split.dispensable.end());
  return split;
}

namespace {

Dense1 random_unit_vector(std::size_t dim, Rng& rng) {
  Dense1 v(dim);
  double norm = 0.0;
  while (norm < 1e-12) {
    for (std::size_t i = 0; i < dim; ++i) v[i] = rng.normal();
    norm = l2_norm(v.values());
  }
  for (std::size_t i = 0; i < dim; ++i) v[i] /= norm;
  return v;
}

std::size_t replacement_count(std::size_t set_size, double r_rep) {
  const auto c = static_cast<std::size_t>(std::ceil(r_rep * static_cast<double>(set_size) - 1e-9));
  return std::clamp<std::size_t>(c, 1, set_size);
}

}  // namespace

std::vector<Replacement> plan_replacements(std::span<const std::size_t> replace_set, double r_rep,
                                           ConceptMemory& mem, const ColdStart& cold, Rng& rng) {
  ++causal_counters().transforms;
  if (!(r_rep > 0.0 && r_rep <= 1.0)) {
    throw ConfigError("counterfactual transform: r_rep must lie in (0, 1], got " +
                      std::to_string(r_rep));
  }
  if (replace_set.empty()) throw ConfigError("counterfactual transform: empty replace set");
  const std::size_t count = replacement_count(replace_set.size(), r_rep);
  const auto picks = rng.sample_without_replacement(replace_set.size(), count);
  std::vector<Replacement> plan;
  plan.reserve(count);
  for (std::size_t p : picks) {
    Replacement r;
    r.position = replace_set[p];
    if (auto e = mem.dequeue()) {
      r.substitute = *e;
      const ConceptMemory::Entry again[] = {std::move(*e)};
      mem.enqueue(again);
    } else if (mem.level() == ConceptLevel::item) {
      if (cold.vocab_size == 0) throw ConfigError("counterfactual transform: empty vocabulary");
      r.substitute = rng.uniform_index(cold.vocab_size);
    } else {
      if (cold.dim == 0) throw ConfigError("counterfactual transform: zero concept dimension");
      r.substitute = random_unit_vector(cold.dim, rng);
    }
    plan.push_back(std::move(r));
  }
  return plan;
}

ConceptSequence counterfactual_transform(const ConceptSequence& seq,
                                         std::span<const std::size_t> replace_set, double r_rep,
                                         ConceptMemory& mem, Rng& rng, const Dense2* item_table) {
  if (mem.level() != seq.level) throw ConfigError("counterfactual transform: memory level mismatch");
  for (std::size_t p : replace_set) {
    if (p >= seq.vectors.rows()) throw DimensionError("counterfactual transform: index out of range");
  }
  if (seq.level == ConceptLevel::item && item_table == nullptr) {
    throw ConfigError("counterfactual transform: item level needs the item table");
  }
  ColdStart cold{item_table != nullptr ? item_table->rows() : 0, seq.vectors.cols()};
  ConceptSequence out = seq;
  for (auto& r : plan_replacements(replace_set, r_rep, mem, cold, rng)) {
    if (seq.level == ConceptLevel::item) {
      const ItemIndex id = std::get<ItemIndex>(r.substitute);
      if (id >= item_table->rows()) throw VocabularyError("counterfactual transform: bad item id");
      out.source_ids.at(r.position) = id;
      std::copy_n(item_table->row(id).begin(), out.vectors.cols(), out.vectors.row(r.position).begin());
    } else {
      const Dense1& v = std::get<Dense1>(r.substitute);
      if (v.len() != out.vectors.cols()) throw DimensionError("counterfactual transform: bad vector");
      std::copy_n(v.values().begin(), v.len(), out.vectors.row(r.position).begin());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Dense2 rows_of(const Dense2& m, std::size_t begin, std::size_t end) {
  Dense2 out(end - begin, m.cols());
  std::copy(m.values().begin() + begin * m.cols(), m.values().begin() + end * m.cols(),
            out.values().begin());
  return out;
}

// Splits a count across the two levels of the hierarchical variant; the item
// level takes the larger half.
std::pair<std::size_t, std::size_t> per_level(Variant v, std::size_t count) {
  switch (v) {
    case Variant::item: return {count, 0};
    case Variant::interest: return {0, count};
    case Variant::hierarchical: return {(count + 1) / 2, count / 2};
  }
  return {0, 0};
}

}  // namespace

CounterfactualBatch synthesize_counterfactuals(const BoundModel& m, const VariantConfig& cfg,
                                               const SequenceBatch& batch,
                                               std::span<const ItemIndex> targets,
                                               const EncodedBatch& obs, ConceptMemories& memories,
                                               Rng& rng, SynthesisOptions opts) {
  cfg.validate();
  ++causal_counters().syntheses;
  if (targets.size() != batch.count()) {
    throw DimensionError("synthesize_counterfactuals: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(batch.count()) + " sequences");
  }
  if (obs.kind != backbone_of(cfg.variant)) {
    throw ConfigError("synthesize_counterfactuals: observational pass uses the wrong backbone");
  }
  CounterfactualBatch out;
  for (std::size_t b = 0; b < batch.count(); ++b) {
    if (batch.sequence(b).size() >= 2) out.examples.push_back(b);
  }
  if (out.examples.empty()) return out;
  out.observational = gather_rows(obs.users, out.examples);
  out.M = opts.positives ? cfg.M : 0;
  out.N = opts.negatives ? cfg.N : 0;
  if (out.M == 0 && out.N == 0) return out;

  const auto [m_item, m_int] = per_level(cfg.variant, out.M);
  const auto [n_item, n_int] = per_level(cfg.variant, out.N);
  const std::size_t d = m.config->dim;
  const std::size_t K = m.config->n_interests;
  const Dense2& x_all = obs.items.value();
  const Dense2& table = m.item_emb.value();
  const ColdStart cold{table.rows(), d};

  SequenceBatch cf_items;             // item-level counterfactual sequences
  std::vector<std::size_t> int_rows;  // concept rows gathered for interest-level draws
  std::vector<std::size_t> int_replaced;
  std::vector<double> int_values;

  for (std::size_t b : out.examples) {
    const std::size_t begin = batch.offsets[b], end = batch.offsets[b + 1];
    const Dense2 x = rows_of(x_all, begin, end);
    const Dense1 item_scores = item_concept_scores(x, table.row(targets[b]));

    if (m_item + n_item > 0) {
      const ConceptSplit split = split_concepts(item_scores);
      const auto seq = batch.sequence(b);
      auto draw = [&](const std::vector<std::size_t>& replace_set) {
        std::vector<ItemIndex> ids(seq.begin(), seq.end());
        for (auto& r : plan_replacements(replace_set, cfg.r_rep, memories.item, cold, rng)) {
          ids[r.position] = std::get<ItemIndex>(r.substitute);
        }
        cf_items.add(ids);
      };
      for (std::size_t j = 0; j < m_item; ++j) draw(split.dispensable);
      for (std::size_t j = 0; j < n_item; ++j) draw(split.indispensable);
    }

    if (m_int + n_int > 0) {
      const Dense2 a = rows_of(obs.interest.attention.value(), begin, end);
      const ConceptSplit split = split_concepts(interest_concept_scores(a, item_scores));
      auto draw = [&](const std::vector<std::size_t>& replace_set) {
        const std::size_t base = int_rows.size();
        for (std::size_t k = 0; k < K; ++k) int_rows.push_back(b * K + k);
        for (auto& r : plan_replacements(replace_set, cfg.r_rep, memories.interest, cold, rng)) {
          const Dense1& v = std::get<Dense1>(r.substitute);
          if (v.len() != d) throw DimensionError("interest memory entry has the wrong length");
          int_replaced.push_back(base + r.position);
          int_values.insert(int_values.end(), v.values().begin(), v.values().end());
        }
      };
      for (std::size_t j = 0; j < m_int; ++j) draw(split.dispensable);
      for (std::size_t j = 0; j < n_int; ++j) draw(split.indispensable);
    }
  }

  // Encode each level's counterfactual sequences in one pass, then stack them
  // so positives and negatives come out example-major.
  std::optional<Var> reps;
  std::size_t item_rows = 0;
  if (cf_items.count() > 0) {
    reps = encode_sequences(m, backbone_of(cfg.variant), cf_items);
    item_rows = cf_items.count();
  }
  if (!int_rows.empty()) {
    Var gathered = gather_rows(obs.interest.concepts, int_rows);
    Dense2 repl(int_replaced.size(), d, std::move(int_values));
    Var concepts = replace_rows(gathered, int_replaced, repl);
    Var r = user_rep_interest_level(m, concepts, K);
    reps = reps ? concat_rows(*reps, r) : r;
  }

  std::vector<std::size_t> pos_idx, neg_idx;
  const std::size_t per_item = m_item + n_item, per_int = m_int + n_int;
  for (std::size_t e = 0; e < out.examples.size(); ++e) {
    for (std::size_t j = 0; j < m_item; ++j) pos_idx.push_back(e * per_item + j);
    for (std::size_t j = 0; j < m_int; ++j) pos_idx.push_back(item_rows + e * per_int + j);
    for (std::size_t j = 0; j < n_item; ++j) neg_idx.push_back(e * per_item + m_item + j);
    for (std::size_t j = 0; j < n_int; ++j) neg_idx.push_back(item_rows + e * per_int + m_int + j);
  }
  if (!pos_idx.empty()) out.positives = gather_rows(*reps, pos_idx);
  if (!neg_idx.empty()) out.negatives = gather_rows(*reps, neg_idx);
  return out;
}

Counterfactuals synthesize_counterfactuals(const ModelParams& params,
                                           std::span<const ItemIndex> behavior_ids,
                                           ItemIndex target, const VariantConfig& cfg,
                                           ConceptMemories& memories, Rng& rng) {
  if (behavior_ids.size() < 2) {
    throw SequenceTooShort("synthesize_counterfactuals: need at least 2 behaviors");
  }
  Tape tape;
  BoundModel m = bind(tape, params, nullptr);
  SequenceBatch batch;
  batch.add(behavior_ids);
  const EncodedBatch obs = encode_batch(m, backbone_of(cfg.variant), batch);
  const ItemIndex targets[] = {target};
  auto cf = synthesize_counterfactuals(m, cfg, batch, targets, obs, memories, rng);
  auto to_rows = [](const Dense2& v) {
    std::vector<Dense1> rows;
    for (std::size_t r = 0; r < v.rows(); ++r) {
      rows.emplace_back(std::vector<double>(v.row(r).begin(), v.row(r).end()));
    }
    return rows;
  };
  Counterfactuals out;
  out.observational = to_rows(cf.observational.value()).front();
  if (cf.positives) out.positives = to_rows(cf.positives->value());
  if (cf.negatives) out.negatives = to_rows(cf.negatives->value());
  return out;
}

void remember_batch(Variant variant, const SequenceBatch& batch, const EncodedBatch& obs,
                    std::span<const std::size_t> rows, ConceptMemories& memories) {
  if (variant != Variant::interest) {
    for (std::size_t b : rows) memories.item.enqueue_items(batch.sequence(b));
  }
  if (variant != Variant::item) {
    const Dense2& c = obs.interest.concepts.value();
    const std::size_t K = c.rows() / batch.count();
    for (std::size_t b : rows) memories.interest.enqueue_vectors(rows_of(c, b * K, (b + 1) * K));
  }
}

}  // namespace causerec
