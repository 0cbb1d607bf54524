#include "causerec/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "causerec/errors.hpp"
#include "causerec/rng.hpp"

namespace causerec {

ModelParams::ModelParams(ModelConfig config, ParamSet tensors)
    : config_(config), tensors_(std::move(tensors)) {
  const std::size_t d = config_.dim, h = config_.hidden;
  const std::pair<std::size_t, std::size_t> shapes[] = {
      {config_.n_items, d}, {h, d}, {1, h}, {h, h}, {1, h}, {d, h}, {1, d},
      {config_.attn_dim, d}, {config_.n_interests, config_.attn_dim}};
  if (tensors_.count() != std::size(shapes)) {
    throw DimensionError("ModelParams: expected " + std::to_string(std::size(shapes)) +
                         " tensors, got " + std::to_string(tensors_.count()));
  }
  for (std::size_t i = 0; i < std::size(shapes); ++i) {
    const auto& t = tensors_[i];
    if (t.rows() != shapes[i].first || t.cols() != shapes[i].second) {
      throw DimensionError("ModelParams: tensor '" + tensors_.name(i) + "' has shape " +
                           t.shape_str() + ", config implies " +
                           shape_str(shapes[i].first, shapes[i].second));
    }
  }
}

ModelParams ModelParams::init(const ModelConfig& c) {
  if (c.n_items == 0 || c.dim == 0 || c.hidden == 0 || c.attn_dim == 0 || c.n_interests == 0) {
    throw ConfigError("ModelParams::init: all dimensions must be positive");
  }
  Rng rng(c.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(c.dim));
  auto uniform = [&rng, bound](std::size_t rows, std::size_t cols) {
    Dense2 m(rows, cols);
    for (double& v : m.values()) v = rng.uniform(-bound, bound);
    return m;
  };
  ParamSet p;
  p.add("item_emb", uniform(c.n_items, c.dim));
  p.add("mlp.w0", uniform(c.hidden, c.dim));
  p.add("mlp.b0", Dense2(1, c.hidden));
  p.add("mlp.w1", uniform(c.hidden, c.hidden));
  p.add("mlp.b1", Dense2(1, c.hidden));
  p.add("mlp.w2", uniform(c.dim, c.hidden));
  p.add("mlp.b2", Dense2(1, c.dim));
  p.add("attn.w1", uniform(c.attn_dim, c.dim));
  p.add("attn.w2", uniform(c.n_interests, c.attn_dim));
  return ModelParams(c, std::move(p));
}

BoundModel bind(Tape& tape, const ModelConfig& config, const ParamSet& t, ParamSet* grads) {
  auto leaf = [&](std::size_t i) {
    return grads != nullptr ? tape.param(t[i], &(*grads)[i]) : tape.view(t[i]);
  };
  BoundModel m;
  m.config = &config;
  m.tape = &tape;
  m.item_emb = leaf(ModelParams::kItemEmb);
  m.mlp_w[0] = leaf(ModelParams::kMlpW0);
  m.mlp_b[0] = leaf(ModelParams::kMlpB0);
  m.mlp_w[1] = leaf(ModelParams::kMlpW1);
  m.mlp_b[1] = leaf(ModelParams::kMlpB1);
  m.mlp_w[2] = leaf(ModelParams::kMlpW2);
  m.mlp_b[2] = leaf(ModelParams::kMlpB2);
  m.attn_w1 = leaf(ModelParams::kAttnW1);
  m.attn_w2 = leaf(ModelParams::kAttnW2);
  return m;
}

BoundModel bind(Tape& tape, const ModelParams& params, ParamSet* grads) {
  return bind(tape, params.config(), params.tensors(), grads);
}

void SequenceBatch::add(std::span<const ItemIndex> seq) {
  ids.insert(ids.end(), seq.begin(), seq.end());
  offsets.push_back(ids.size());
}

Var embed_items(const BoundModel& m, std::span<const ItemIndex> ids) {
  return gather_rows(m.item_emb, ids);
}

Var mlp(const BoundModel& m, Var pooled) {
  Var h = relu(affine(pooled, m.mlp_w[0], m.mlp_b[0]));
  h = relu(affine(h, m.mlp_w[1], m.mlp_b[1]));
  return affine(h, m.mlp_w[2], m.mlp_b[2]);
}

namespace {

void require_nonempty_segments(std::span<const std::size_t> offsets) {
  if (offsets.size() < 2) throw SequenceTooShort("encoder: no sequences");
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s + 1] <= offsets[s]) {
      throw SequenceTooShort("encoder: sequence " + std::to_string(s) + " is empty");
    }
  }
}

}  // namespace

Var user_rep_item_level(const BoundModel& m, Var x, std::span<const std::size_t> offsets) {
  require_nonempty_segments(offsets);
  return mlp(m, segment_mean(x, offsets));
}

InterestConcepts interest_concepts(const BoundModel& m, Var x,
                                   std::span<const std::size_t> offsets) {
  require_nonempty_segments(offsets);
  Var logits = linear(tanh_map(linear(x, m.attn_w1)), m.attn_w2);
  Var a = segment_softmax_cols(logits, offsets);
  return {segment_attend(a, x, offsets), a};
}

Var user_rep_interest_level(const BoundModel& m, Var concepts, std::size_t per_user) {
  const std::size_t rows = concepts.rows();
  if (per_user == 0 || rows == 0 || rows % per_user != 0) {
    throw DimensionError("user_rep_interest_level: " + std::to_string(rows) +
                         " concept rows are not a multiple of K=" + std::to_string(per_user));
  }
  std::vector<std::size_t> offsets;
  for (std::size_t r = 0; r <= rows; r += per_user) offsets.push_back(r);
  return mlp(m, segment_mean(concepts, offsets));
}

EncodedBatch encode_batch(const BoundModel& m, EncoderKind kind, const SequenceBatch& batch) {
  require_nonempty_segments(batch.offsets);
  EncodedBatch out;
  out.kind = kind;
  out.items = embed_items(m, batch.ids);
  if (kind == EncoderKind::item_level) {
    out.users = user_rep_item_level(m, out.items, batch.offsets);
  } else {
    out.interest = interest_concepts(m, out.items, batch.offsets);
    out.users = user_rep_interest_level(m, out.interest.concepts, m.config->n_interests);
  }
  return out;
}

Var encode_sequences(const BoundModel& m, EncoderKind kind, const SequenceBatch& batch) {
  return encode_batch(m, kind, batch).users;
}

Var sampled_softmax_loss(const BoundModel& m, Var users, std::span<const ItemIndex> candidates,
                         std::size_t per_user) {
  if (per_user < 2) throw SamplingError("sampled_softmax_loss: need at least one negative");
  if (candidates.size() != users.rows() * per_user) {
    throw DimensionError("sampled_softmax_loss: " + std::to_string(candidates.size()) +
                         " candidates for " + std::to_string(users.rows()) + " users x " +
                         std::to_string(per_user));
  }
  for (std::size_t b = 0; b < users.rows(); ++b) {
    const ItemIndex target = candidates[b * per_user];
    for (std::size_t j = 1; j < per_user; ++j) {
      if (candidates[b * per_user + j] == target) {
        throw SamplingError("sampled_softmax_loss: target " + std::to_string(target) +
                            " appears among its negatives");
      }
    }
  }
  Var items = embed_items(m, candidates);
  return xent_first_col(grouped_dot(users, items, per_user));
}

double score(std::span<const double> user, std::span<const double> item) {
  if (user.size() != item.size()) {
    throw DimensionError("score: user length " + std::to_string(user.size()) +
                         " vs item length " + std::to_string(item.size()));
  }
  return dot(user, item);
}

Dense1 user_rep_item_level(const ModelParams& params, const Dense2& x) {
  if (x.rows() == 0) throw SequenceTooShort("user_rep_item_level: empty sequence");
  Tape tape;
  BoundModel m = bind(tape, params, nullptr);
  const std::size_t offsets[] = {0, x.rows()};
  Var u = user_rep_item_level(m, tape.view(x), offsets);
  return Dense1(std::vector<double>(u.value().values().begin(), u.value().values().end()));
}

Dense1 user_rep_interest_level(const ModelParams& params, const Dense2& concepts) {
  if (concepts.rows() == 0) throw SequenceTooShort("user_rep_interest_level: no concepts");
  Tape tape;
  BoundModel m = bind(tape, params, nullptr);
  Var u = user_rep_interest_level(m, tape.view(concepts), concepts.rows());
  return Dense1(std::vector<double>(u.value().values().begin(), u.value().values().end()));
}

std::pair<Dense2, Dense2> interest_concepts(const ModelParams& params, const Dense2& x) {
  Tape tape;
  BoundModel m = bind(tape, params, nullptr);
  const std::size_t offsets[] = {0, x.rows()};
  auto ic = interest_concepts(m, tape.view(x), offsets);
  return {ic.concepts.value(), ic.attention.value()};
}

Dense2 embed_items(const ModelParams& params, std::span<const ItemIndex> ids) {
  Tape tape;
  BoundModel m = bind(tape, params, nullptr);
  return embed_items(m, ids).value();
}

Dense2 encode_users(const ModelParams& params, EncoderKind kind, const SequenceBatch& batch) {
  Tape tape;
  BoundModel m = bind(tape, params, nullptr);
  return encode_sequences(m, kind, batch).value();
}

PopScorer PopScorer::from_log(const InteractionLog& log, const std::vector<std::string>& users) {
  std::vector<std::size_t> counts(log.num_items(), 0);
  for (const auto& u : users) {
    for (ItemIndex i : log.history(u)) counts[i] += 1;
  }
  return PopScorer(std::move(counts));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'R', 'C', 'K', 'P', 'T', '0', '1'};

nlohmann::json config_json(const ModelConfig& c) {
  return {{"n_items", c.n_items},       {"dim", c.dim},
          {"hidden", c.hidden},         {"attn_dim", c.attn_dim},
          {"n_interests", c.n_interests}, {"seed", c.seed}};
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::string config_hash(const ModelConfig& config) {
  // FNV-1a over the canonical (sorted-key) JSON text.
  const std::string text = config_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::string& metadata_json) {
  nlohmann::json header;
  header["config"] = config_json(params.config());
  header["seed"] = params.config().seed;
  header["config_hash"] = config_hash(params.config());
  header["meta"] = nlohmann::json::parse(metadata_json);
  auto& tensors = header["tensors"] = nlohmann::json::array();
  const ParamSet& p = params.tensors();
  for (std::size_t i = 0; i < p.count(); ++i) {
    tensors.push_back({{"name", p.name(i)}, {"rows", p[i].rows()}, {"cols", p[i].cols()}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < p.count(); ++i) {
    for (double v : p[i].values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::string* metadata_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint file");
  }
  const std::uint64_t len = get_u64(in);
  if (len > (1ULL << 30)) throw CheckpointError(path.string() + ": header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw CheckpointError(path.string() + ": header truncated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  ModelConfig c;
  try {
    const auto& cj = header.at("config");
    c.n_items = cj.at("n_items");
    c.dim = cj.at("dim");
    c.hidden = cj.at("hidden");
    c.attn_dim = cj.at("attn_dim");
    c.n_interests = cj.at("n_interests");
    c.seed = cj.at("seed");
    if (header.at("config_hash").get<std::string>() != config_hash(c)) {
      throw CheckpointError(path.string() + ": config hash mismatch");
    }
    ParamSet p;
    for (const auto& t : header.at("tensors")) {
      const std::size_t rows = t.at("rows"), cols = t.at("cols");
      Dense2 m(rows, cols);
      for (double& v : m.values()) v = std::bit_cast<double>(get_u64(in));
      p.add(t.at("name").get<std::string>(), std::move(m));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw CheckpointError(path.string() + ": trailing bytes after tensors");
    }
    if (metadata_json != nullptr) *metadata_json = header.value("meta", nlohmann::json::object()).dump();
    try {
      return ModelParams(c, std::move(p));
    } catch (const DimensionError& e) {
      throw CheckpointError(path.string() + ": " + e.what());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
}

}  // namespace causerec
