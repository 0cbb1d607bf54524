#include "cli.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string_view>
#include <thread>
#include <type_traits>

#include <CLI11.hpp>

#include "causerec/errors.hpp"

namespace causerec::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& name, const char* expected) {
  throw ConfigError("config: " + name + " must be " + expected);
}

bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

void only_keys(const json& j, const std::string& where,
               std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (auto allowed : keys) known = known || k == allowed;
    if (!known) throw ConfigError("config: unknown key " + where + "." + k);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string name = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) bad(name, "a boolean");
    out = it->template get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!non_negative_integer(*it)) bad(name, "a non-negative integer");
    out = it->template get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) bad(name, "a number");
    out = it->template get<T>();
  } else if constexpr (std::is_same_v<T, fs::path>) {
    if (!it->is_string()) bad(name, "a path string");
    out = it->template get<std::string>();
  } else {
    static_assert(std::is_same_v<T, std::vector<std::size_t>>);
    if (!it->is_array()) bad(name, "a list of non-negative integers");
    out.clear();
    for (const auto& v : *it) {
      if (!non_negative_integer(v)) bad(name, "a list of non-negative integers");
      out.push_back(v.template get<std::size_t>());
    }
  }
}

json synthetic_json(const SyntheticSpec& s) {
  return {{"n_users", s.n_users},   {"n_items", s.n_items},       {"n_clusters", s.n_clusters},
          {"seq_len", s.seq_len},   {"noise_rate", s.noise_rate}, {"seed", s.seed}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_text(path, text);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) lines.push_back(l);
  }
  return lines;
}

const std::vector<std::string>& split_users_of(const UserSplit& s, const std::string& which) {
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  throw ConfigError("unknown split '" + which + "' (expected train, val or test)");
}

const EvalSet& eval_set_of(const PreparedData& d, const std::string& which) {
  if (which == "val") return d.val;
  if (which == "test") return d.test;
  throw ConfigError("unknown evaluation split '" + which + "' (expected val or test)");
}

// Checkpoint plus the backbone named in its metadata.
std::pair<ModelParams, EncoderKind> load_for_data(const fs::path& path, const RunConfig& cfg,
                                                  std::size_t n_items) {
  std::string meta;
  ModelParams params = load_checkpoint(path, &meta);
  if (params.config().n_items != n_items) {
    throw CheckpointError("checkpoint " + path.string() + " has " +
                          std::to_string(params.config().n_items) +
                          " items, the prepared data has " + std::to_string(n_items));
  }
  Variant v = cfg.variant.variant;
  const json j = json::parse(meta, nullptr, false);
  if (j.is_object() && j.contains("variant") && j["variant"].is_string()) {
    v = parse_variant(j["variant"].get<std::string>());
  }
  return {std::move(params), backbone_of(v)};
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig RunConfig::defaults(Variant v) {
  RunConfig c;
  c.variant = VariantConfig::defaults(v);
  c.train = TrainConfig::defaults(v);
  c.model.n_interests = c.variant.K;
  return c;
}

json RunConfig::to_json() const {
  json data = json::object();
  if (this->data.interactions) data["interactions"] = this->data.interactions->string();
  if (this->data.synthetic) data["synthetic"] = synthetic_json(*this->data.synthetic);
  const auto& a = train.adam;
  const auto& f = train.ablation;
  return {
      {"data", data},
      {"k_core", k_core},
      {"max_len", max_len},
      {"split_seed", split_seed},
      {"prefix_frac", prefix_frac},
      {"model",
       {{"dim", model.dim}, {"hidden", model.hidden}, {"attn_dim", model.attn_dim}, {"seed", model.seed}}},
      {"variant",
       {{"variant", to_string(variant.variant)},
        {"M", variant.M},
        {"N", variant.N},
        {"r_rep", variant.r_rep},
        {"K", variant.K},
        {"lambda1", variant.lambda1},
        {"lambda2", variant.lambda2},
        {"margin_co", variant.margin_co},
        {"margin_ii", variant.margin_ii},
        {"co_mean_pairs", variant.co_mean_pairs}}},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"seed", train.seed},
        {"negatives_per_example", train.negatives_per_example},
        {"eval_every", train.eval_every},
        {"patience", train.patience},
        {"log_every", train.log_every},
        {"memory_capacity", train.memory_capacity},
        {"cutoffs", train.cutoffs},
        {"adam",
         {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}}},
        {"ablation",
         {{"disable_co", f.disable_co},
          {"disable_ii", f.disable_ii},
          {"pos_only", f.pos_only},
          {"neg_only", f.neg_only}}}}},
      {"out_dir", out_dir.string()},
  };
}

RunConfig RunConfig::from_json(const json& j, Variant fallback) {
  only_keys(j, "config",
            {"data", "k_core", "max_len", "split_seed", "prefix_frac", "model", "variant", "train",
             "out_dir"});
  Variant v = fallback;
  if (j.contains("variant") && j["variant"].is_object() && j["variant"].contains("variant")) {
    const auto& name = j["variant"]["variant"];
    if (!name.is_string()) bad("variant.variant", "one of item, interest, hierarchical");
    v = parse_variant(name.get<std::string>());
  }
  RunConfig c = defaults(v);

  if (const auto it = j.find("data"); it != j.end()) {
    only_keys(*it, "data", {"interactions", "synthetic"});
    if (it->contains("interactions")) {
      fs::path p;
      read(*it, "interactions", p, "data");
      c.data.interactions = p;
    }
    if (const auto s = it->find("synthetic"); s != it->end()) {
      only_keys(*s, "data.synthetic", {"n_users", "n_items", "n_clusters", "seq_len", "noise_rate", "seed"});
      SyntheticSpec spec;
      read(*s, "n_users", spec.n_users, "data.synthetic");
      read(*s, "n_items", spec.n_items, "data.synthetic");
      read(*s, "n_clusters", spec.n_clusters, "data.synthetic");
      read(*s, "seq_len", spec.seq_len, "data.synthetic");
      read(*s, "noise_rate", spec.noise_rate, "data.synthetic");
      read(*s, "seed", spec.seed, "data.synthetic");
      c.data.synthetic = spec;
    }
  }
  read(j, "k_core", c.k_core, "config");
  read(j, "max_len", c.max_len, "config");
  read(j, "split_seed", c.split_seed, "config");
  read(j, "prefix_frac", c.prefix_frac, "config");
  read(j, "out_dir", c.out_dir, "config");

  if (const auto it = j.find("model"); it != j.end()) {
    only_keys(*it, "model", {"dim", "hidden", "attn_dim", "seed"});
    read(*it, "dim", c.model.dim, "model");
    read(*it, "hidden", c.model.hidden, "model");
    read(*it, "attn_dim", c.model.attn_dim, "model");
    read(*it, "seed", c.model.seed, "model");
  }
  if (const auto it = j.find("variant"); it != j.end()) {
    only_keys(*it, "variant",
              {"variant", "M", "N", "r_rep", "K", "lambda1", "lambda2", "margin_co", "margin_ii",
               "co_mean_pairs"});
    auto& vc = c.variant;
    read(*it, "M", vc.M, "variant");
    read(*it, "N", vc.N, "variant");
    read(*it, "r_rep", vc.r_rep, "variant");
    read(*it, "K", vc.K, "variant");
    read(*it, "lambda1", vc.lambda1, "variant");
    read(*it, "lambda2", vc.lambda2, "variant");
    read(*it, "margin_co", vc.margin_co, "variant");
    read(*it, "margin_ii", vc.margin_ii, "variant");
    read(*it, "co_mean_pairs", vc.co_mean_pairs, "variant");
  }
  if (const auto it = j.find("train"); it != j.end()) {
    only_keys(*it, "train",
              {"epochs", "batch_size", "seed", "negatives_per_example", "eval_every", "patience",
               "log_every", "memory_capacity", "cutoffs", "adam", "ablation"});
    auto& t = c.train;
    read(*it, "epochs", t.epochs, "train");
    read(*it, "batch_size", t.batch_size, "train");
    read(*it, "seed", t.seed, "train");
    read(*it, "negatives_per_example", t.negatives_per_example, "train");
    read(*it, "eval_every", t.eval_every, "train");
    read(*it, "patience", t.patience, "train");
    read(*it, "log_every", t.log_every, "train");
    read(*it, "memory_capacity", t.memory_capacity, "train");
    read(*it, "cutoffs", t.cutoffs, "train");
    if (const auto a = it->find("adam"); a != it->end()) {
      only_keys(*a, "train.adam", {"lr", "beta1", "beta2", "eps", "weight_decay"});
      read(*a, "lr", t.adam.lr, "train.adam");
      read(*a, "beta1", t.adam.beta1, "train.adam");
      read(*a, "beta2", t.adam.beta2, "train.adam");
      read(*a, "eps", t.adam.eps, "train.adam");
      read(*a, "weight_decay", t.adam.weight_decay, "train.adam");
    }
    if (const auto f = it->find("ablation"); f != it->end()) {
      only_keys(*f, "train.ablation", {"disable_co", "disable_ii", "pos_only", "neg_only"});
      read(*f, "disable_co", t.ablation.disable_co, "train.ablation");
      read(*f, "disable_ii", t.ablation.disable_ii, "train.ablation");
      read(*f, "pos_only", t.ablation.pos_only, "train.ablation");
      read(*f, "neg_only", t.ablation.neg_only, "train.ablation");
    }
  }
  c.model.n_interests = c.variant.K;
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  const json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return from_json(j);
}

void RunConfig::save(const fs::path& path) const { write_text(path, to_json().dump(2) + "\n"); }

void RunConfig::validate_source() const {
  if (data.interactions.has_value() == data.synthetic.has_value()) {
    throw ConfigError("config: set exactly one of data.interactions and data.synthetic");
  }
}

void RunConfig::validate() const {
  if (data.interactions && !fs::exists(*data.interactions)) {
    throw ConfigError("config: data.interactions " + data.interactions->string() + " does not exist");
  }
  if (data.synthetic && (data.synthetic->n_users == 0 || data.synthetic->n_items == 0)) {
    throw ConfigError("config: data.synthetic needs users and items");
  }
  if (max_len < 2) throw ConfigError("config: max_len must be >= 2");
  if (!(prefix_frac > 0.0 && prefix_frac < 1.0)) throw ConfigError("config: prefix_frac must lie in (0, 1)");
  if (model.dim == 0 || model.hidden == 0 || model.attn_dim == 0) {
    throw ConfigError("config: model dimensions must be positive");
  }
  if (variant.K == 0) throw ConfigError("config: variant.K must be >= 1");
  if (out_dir.empty()) throw ConfigError("config: out_dir is empty");
  variant.validate();
  train.validate();
}

ModelConfig RunConfig::model_for(std::size_t n_items) const {
  ModelConfig m = model;
  m.n_items = n_items;
  m.n_interests = variant.K;
  return m;
}

json DatasetSummary::to_json() const {
  return {{"users", users},       {"items", items},             {"interactions", interactions},
          {"density", density},   {"train_users", train_users}, {"val_users", val_users},
          {"test_users", test_users}};
}

std::string DatasetSummary::to_table() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %-10s %-14s %-10s\n%-10zu %-10zu %-14zu %.5f%%\n", "#users",
                "#items", "#interactions", "density", users, items, interactions, density * 100.0);
  return buf;
}

DatasetSummary cmd_prepare(const RunConfig& cfg) {
  cfg.validate();
  cfg.validate_source();
  const fs::path dir = cfg.prepared_dir();
  fs::create_directories(dir);
  cfg.save(dir / "run_config.json");
  InteractionLog raw;
  if (cfg.data.synthetic) {
    raw = gen_synthetic(*cfg.data.synthetic).log;
    raw.write_tsv(dir / "raw.tsv");
  } else {
    raw = load_interactions(*cfg.data.interactions);
  }
  const InteractionLog log = truncate_histories(k_core_filter(raw, cfg.k_core), cfg.max_len);
  if (log.empty()) throw EmptyDatasetError("prepare: no interactions survive filtering");
  const UserSplit split = split_users(log, {}, cfg.split_seed);

  log.write_tsv(dir / "interactions.tsv");
  write_lines(dir / "train_users.txt", split.train);
  write_lines(dir / "val_users.txt", split.val);
  write_lines(dir / "test_users.txt", split.test);

  DatasetSummary s;
  s.users = log.num_users();
  s.items = log.num_items();
  s.interactions = log.size();
  s.density = static_cast<double>(s.interactions) /
              (static_cast<double>(s.users) * static_cast<double>(s.items));
  s.train_users = split.train.size();
  s.val_users = split.val.size();
  s.test_users = split.test.size();
  write_text(dir / "summary.json", s.to_json().dump(2) + "\n");
  return s;
}

Prepared load_prepared(const RunConfig& cfg) {
  const fs::path dir = cfg.prepared_dir();
  if (!fs::exists(dir / "interactions.tsv")) {
    throw DataError("no prepared dataset under " + dir.string() + "; run prepare first");
  }
  Prepared p;
  p.log = load_interactions(dir / "interactions.tsv");
  p.split.train = read_lines(dir / "train_users.txt");
  p.split.val = read_lines(dir / "val_users.txt");
  p.split.test = read_lines(dir / "test_users.txt");
  for (const auto* users : {&p.split.train, &p.split.val, &p.split.test}) {
    for (const auto& u : *users) {
      if (!p.log.has_user(u)) throw DataError("split manifest names unknown user '" + u + "'");
    }
  }
  p.data = prepare_data(p.log, p.split, cfg.max_len, cfg.prefix_frac);
  return p;
}

TrainOutcome run_training(const RunConfig& cfg, const Prepared& prepared, const fs::path& run_dir) {
  cfg.validate();
  if (prepared.data.test.examples.empty()) throw DataError("train: the test split has no evaluable users");
  fs::create_directories(run_dir);
  cfg.save(run_dir / "run_config.json");

  TrainConfig tc = cfg.train;
  tc.out_dir = run_dir;
  const TrainResult res = train(prepared.data, cfg.model_for(prepared.data.n_items), tc, cfg.variant);

  const EncoderKind backbone = backbone_of(cfg.variant.variant);
  const auto& test = prepared.data.test;
  TrainOutcome out;
  out.test_best = evaluate(res.best_params, backbone, test.examples, tc.cutoffs, test.skipped);
  out.test_final = evaluate(res.final_params, backbone, test.examples, tc.cutoffs, test.skipped);
  out.val_best = res.best_val;
  out.best_step = res.best_step;
  out.steps = res.steps;
  write_text(run_dir / "metrics_best.json", out.test_best.to_json() + "\n");
  write_text(run_dir / "metrics_final.json", out.test_final.to_json() + "\n");
  return out;
}

TrainOutcome cmd_train(const RunConfig& cfg) {
  cfg.validate();
  return run_training(cfg, load_prepared(cfg), cfg.train_dir());
}

MetricsReport cmd_eval(const RunConfig& cfg, const EvalRequest& req) {
  if (req.pop == req.checkpoint.has_value()) {
    throw ConfigError("eval: give either a checkpoint or POP mode");
  }
  const Prepared p = load_prepared(cfg);
  const EvalSet& set = eval_set_of(p.data, req.split);
  if (set.examples.empty()) throw DataError("eval: the " + req.split + " split has no evaluable users");
  MetricsReport r;
  std::string name;
  if (req.pop) {
    r = evaluate_pop(PopScorer::from_log(p.log, p.split.train), set.examples, cfg.train.cutoffs,
                     set.skipped);
    name = "metrics_pop_" + req.split + ".json";
  } else {
    const auto [params, backbone] = load_for_data(*req.checkpoint, cfg, p.data.n_items);
    r = evaluate(params, backbone, set.examples, cfg.train.cutoffs, set.skipped);
    name = "metrics_" + req.checkpoint->stem().string() + "_" + req.split + ".json";
  }
  const fs::path dir = cfg.out_dir / "eval";
  fs::create_directories(dir);
  write_text(dir / name, r.to_json() + "\n");
  return r;
}

fs::path cmd_export_embeddings(const RunConfig& cfg, const fs::path& checkpoint, EmbeddingSet which,
                               const std::string& split) {
  const Prepared p = load_prepared(cfg);
  const auto [params, backbone] = load_for_data(checkpoint, cfg, p.data.n_items);
  const fs::path dir = cfg.out_dir / "embeddings";
  fs::create_directories(dir);

  std::string text;
  auto emit = [&text](const std::string& id, std::span<const double> v) {
    text += id;
    for (double x : v) text += "\t" + format_value(x);
    text += "\n";
  };
  fs::path path;
  if (which == EmbeddingSet::items) {
    path = dir / "items.tsv";
    const Dense2& items = params.item_embeddings();
    for (ItemIndex i = 0; i < items.rows(); ++i) emit(p.log.item_id(i), items.row(i));
  } else {
    path = dir / ("users_" + split + ".tsv");
    const auto& users = split_users_of(p.split, split);
    constexpr std::size_t kChunk = 512;
    for (std::size_t start = 0; start < users.size(); start += kChunk) {
      const std::size_t end = std::min(users.size(), start + kChunk);
      SequenceBatch batch;
      for (std::size_t u = start; u < end; ++u) batch.add(p.log.history(users[u]));
      const Dense2 reps = encode_users(params, backbone, batch);
      for (std::size_t u = start; u < end; ++u) emit(users[u], reps.row(u - start));
    }
  }
  write_text(path, text);
  return path;
}

std::vector<std::pair<std::string, std::vector<double>>> read_embeddings(const fs::path& path) {
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (const auto& line : read_lines(path)) {
    std::istringstream in(line);
    std::string id, field;
    std::getline(in, id, '\t');
    std::vector<double> v;
    while (std::getline(in, field, '\t')) v.push_back(std::stod(field));
    rows.emplace_back(id, std::move(v));
  }
  return rows;
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "r_rep") return SweepAxis::r_rep;
  if (s == "MN") return SweepAxis::MN;
  if (s == "K") return SweepAxis::K;
  throw ConfigError("unknown sweep axis '" + s + "' (expected r_rep, MN or K)");
}

namespace {

const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::r_rep: return "r_rep";
    case SweepAxis::MN: return "MN";
    case SweepAxis::K: return "K";
  }
  return "?";
}

}  // namespace

std::vector<std::pair<std::string, RunConfig>> sweep_grid(const RunConfig& base, SweepAxis axis) {
  std::vector<std::pair<std::string, RunConfig>> grid;
  switch (axis) {
    case SweepAxis::r_rep:
      for (double r : {0.2, 0.4, 0.5, 0.6, 0.8}) {
        RunConfig c = base;
        c.variant.r_rep = r;
        char label[32];
        std::snprintf(label, sizeof label, "r_rep=%.1f", r);
        grid.emplace_back(label, c);
      }
      break;
    case SweepAxis::MN:
      for (auto [n, m] : {std::pair<std::size_t, std::size_t>{1, 1}, {4, 4}, {8, 8}, {8, 1}, {1, 8}}) {
        RunConfig c = base;
        c.variant.N = n;
        c.variant.M = m;
        grid.emplace_back("N=" + std::to_string(n) + ",M=" + std::to_string(m), c);
      }
      break;
    case SweepAxis::K:
      if (backbone_of(base.variant.variant) != EncoderKind::interest_level) {
        throw ConfigError("sweep: the K axis needs the interest or hierarchical variant");
      }
      for (std::size_t k : {4, 10, 20, 30}) {
        RunConfig c = base;
        c.variant.K = k;
        c.model.n_interests = k;
        grid.emplace_back("K=" + std::to_string(k), c);
      }
      break;
  }
  return grid;
}

std::string SweepReport::to_table() const {
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", axis_name(axis));
  out += buf;
  if (rows.empty()) return out + "\n";
  const auto& first = rows.front().test_best.at;
  for (const char* tag : {"R", "N", "HR"}) {
    for (const auto& m : first) {
      std::snprintf(buf, sizeof buf, " %8s@%-3zu", tag, m.cutoff);
      out += buf;
    }
  }
  out += "\n";
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-12s", row.label.c_str());
    out += buf;
    for (double CutoffMetrics::*f : {&CutoffMetrics::recall, &CutoffMetrics::ndcg, &CutoffMetrics::hitrate}) {
      for (const auto& m : row.test_best.at) {
        std::snprintf(buf, sizeof buf, " %12.4f", m.*f);
        out += buf;
      }
    }
    out += "\n";
  }
  return out;
}

SweepReport cmd_sweep(const RunConfig& cfg, SweepAxis axis, std::size_t jobs) {
  cfg.validate();
  const auto grid = sweep_grid(cfg, axis);
  for (const auto& [label, c] : grid) c.validate();
  const Prepared prepared = load_prepared(cfg);
  const fs::path dir = cfg.out_dir / "sweep" / axis_name(axis);

  std::vector<TrainOutcome> outcomes(grid.size());
  std::vector<std::exception_ptr> errors(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      try {
        outcomes[i] = run_training(grid[i].second, prepared, dir / grid[i].first);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(std::max<std::size_t>(jobs, 1), grid.size()); ++t) {
    pool.emplace_back(worker);
  }
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SweepReport report;
  report.axis = axis;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    report.rows.push_back({grid[i].first, grid[i].second, outcomes[i].test_best});
  }
  write_text(cfg.out_dir / "sweep" / (std::string(axis_name(axis)) + ".txt"), report.to_table());
  return report;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const json::exception*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const CheckpointError*>(&e) ||
      dynamic_cast<const VocabularyError*>(&e) || dynamic_cast<const SequenceTooShort*>(&e)) {
    return 3;
  }
  return 1;
}

namespace {

// Flag values; unset ones leave the config untouched.
struct Overrides {
  std::optional<std::string> out_dir, data, variant, ablation;
  bool synthetic = false;
  std::optional<std::size_t> k_core, max_len, M, N, K, epochs, batch_size, negatives, eval_every,
      patience, memory_capacity, dim, hidden, attn_dim;
  std::optional<std::uint64_t> seed, split_seed;
  std::optional<double> lambda1, lambda2, r_rep, margin_co, margin_ii, lr, weight_decay;
  std::vector<std::size_t> cutoffs;
  bool disable_co = false, disable_ii = false, pos_only = false, neg_only = false,
       co_mean_pairs = false;
};

void add_run_options(CLI::App* app, std::string& config_path, Overrides& o) {
  auto opt = [app](const std::string& name, auto& target, const std::string& help,
                   const std::string& env) {
    return app->add_option(name, target, help)->envname("CAUSEREC_" + env);
  };
  auto flag = [app](const std::string& name, bool& target, const std::string& help,
                    const std::string& env) {
    return app->add_flag(name, target, help)->envname("CAUSEREC_" + env);
  };
  opt("-c,--config", config_path, "JSON run config", "CONFIG")->check(CLI::ExistingFile);
  opt("-o,--out-dir", o.out_dir, "Output directory", "OUT_DIR");
  opt("--data", o.data, "Interactions TSV (user, item, timestamp)", "DATA");
  flag("--synthetic", o.synthetic, "Use the synthetic generator instead of a TSV", "SYNTHETIC");
  opt("--k-core", o.k_core, "k-core filter threshold", "K_CORE");
  opt("--max-len", o.max_len, "Keep the most recent behaviors per user", "MAX_LEN");
  opt("--split-seed", o.split_seed, "Seed of the 8:1:1 user split", "SPLIT_SEED");
  opt("--seed", o.seed, "Model and training seed", "SEED");
  opt("--variant", o.variant, "item, interest or hierarchical (resets M, N, epochs)", "VARIANT")
      ->check(CLI::IsMember({"item", "interest", "hierarchical"}));
  opt("--ablation", o.ablation, "none, no_co, no_ii, pos_only or neg_only", "ABLATION")
      ->check(CLI::IsMember({"none", "no_co", "no_ii", "pos_only", "neg_only"}));
  flag("--disable-co", o.disable_co, "Drop the counterfactual/observation contrast", "DISABLE_CO");
  flag("--disable-ii", o.disable_ii, "Drop the interest/item contrast", "DISABLE_II");
  flag("--pos-only", o.pos_only, "Positive counterfactuals only", "POS_ONLY");
  flag("--neg-only", o.neg_only, "Negative counterfactuals only", "NEG_ONLY");
  opt("--lambda1", o.lambda1, "Weight of the counterfactual/observation contrast", "LAMBDA1");
  opt("--lambda2", o.lambda2, "Weight of the interest/item contrast", "LAMBDA2");
  opt("-M,--cf-positives", o.M, "Counterfactually positive representations", "M");
  opt("-N,--cf-negatives", o.N, "Counterfactually negative representations", "N");
  opt("--r-rep", o.r_rep, "Replacement rate", "R_REP");
  opt("-K,--interests", o.K, "Interest-level concepts", "K");
  opt("--margin-co", o.margin_co, "Triplet margin", "MARGIN_CO");
  opt("--margin-ii", o.margin_ii, "Cosine margin", "MARGIN_II");
  flag("--co-mean-pairs", o.co_mean_pairs, "Average the triplet loss over pairs", "CO_MEAN_PAIRS");
  opt("--epochs", o.epochs, "Maximum epochs", "EPOCHS");
  opt("--batch-size", o.batch_size, "Mini-batch size", "BATCH_SIZE");
  opt("--negatives", o.negatives, "Sampled negatives per example", "NEGATIVES");
  opt("--eval-every", o.eval_every, "Validate every this many steps (0: per epoch)", "EVAL_EVERY");
  opt("--patience", o.patience, "Early-stopping patience in validations", "PATIENCE");
  opt("--memory-capacity", o.memory_capacity, "Concept memory capacity", "MEMORY_CAPACITY");
  opt("--lr", o.lr, "Adam learning rate", "LR");
  opt("--weight-decay", o.weight_decay, "L2 weight decay", "WEIGHT_DECAY");
  opt("--dim", o.dim, "Embedding size", "DIM");
  opt("--hidden", o.hidden, "Hidden size of the user MLP", "HIDDEN");
  opt("--attn-dim", o.attn_dim, "Attention size d_a", "ATTN_DIM");
  opt("--cutoffs", o.cutoffs, "Evaluation cutoffs", "CUTOFFS")->delimiter(',');
}

RunConfig resolve(const std::string& config_path, const Overrides& o) {
  json j = json::object();
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) throw ConfigError("config file " + config_path + " does not exist");
    j = json::parse(read_text(config_path), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + config_path + " is not valid JSON");
    if (!j.is_object()) throw ConfigError("config file " + config_path + " must hold an object");
  }
  if (o.variant) {
    if (!j.contains("variant")) j["variant"] = json::object();
    auto& jv = j["variant"];
    if (jv.is_object()) {
      // Switching variant brings that variant's M, N and epoch defaults.
      if (jv.value("variant", std::string("item")) != *o.variant) {
        jv.erase("M");
        jv.erase("N");
        if (j.contains("train") && j["train"].is_object()) j["train"].erase("epochs");
      }
      jv["variant"] = *o.variant;
    }
  }
  RunConfig c = RunConfig::from_json(j);

  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.data) {
    c.data.interactions = *o.data;
    c.data.synthetic.reset();
  }
  if (o.synthetic) {
    if (!c.data.synthetic) c.data.synthetic = SyntheticSpec{};
    c.data.interactions.reset();
  }
  if (o.k_core) c.k_core = *o.k_core;
  if (o.max_len) c.max_len = *o.max_len;
  if (o.split_seed) c.split_seed = *o.split_seed;
  if (o.seed) c.train.seed = c.model.seed = *o.seed;
  if (o.ablation) {
    c.train.ablation = {};
    auto& f = c.train.ablation;
    if (*o.ablation == "no_co") f.disable_co = true;
    if (*o.ablation == "no_ii") f.disable_ii = true;
    if (*o.ablation == "pos_only") f.pos_only = true;
    if (*o.ablation == "neg_only") f.neg_only = true;
  }
  auto& f = c.train.ablation;
  f.disable_co = f.disable_co || o.disable_co;
  f.disable_ii = f.disable_ii || o.disable_ii;
  f.pos_only = f.pos_only || o.pos_only;
  f.neg_only = f.neg_only || o.neg_only;
  auto& v = c.variant;
  if (o.lambda1) v.lambda1 = *o.lambda1;
  if (o.lambda2) v.lambda2 = *o.lambda2;
  if (o.M) v.M = *o.M;
  if (o.N) v.N = *o.N;
  if (o.r_rep) v.r_rep = *o.r_rep;
  if (o.K) v.K = *o.K;
  if (o.margin_co) v.margin_co = *o.margin_co;
  if (o.margin_ii) v.margin_ii = *o.margin_ii;
  v.co_mean_pairs = v.co_mean_pairs || o.co_mean_pairs;
  auto& t = c.train;
  if (o.epochs) t.epochs = *o.epochs;
  if (o.batch_size) t.batch_size = *o.batch_size;
  if (o.negatives) t.negatives_per_example = *o.negatives;
  if (o.eval_every) t.eval_every = *o.eval_every;
  if (o.patience) t.patience = *o.patience;
  if (o.memory_capacity) t.memory_capacity = *o.memory_capacity;
  if (o.lr) t.adam.lr = *o.lr;
  if (o.weight_decay) t.adam.weight_decay = *o.weight_decay;
  if (!o.cutoffs.empty()) t.cutoffs = o.cutoffs;
  if (o.dim) c.model.dim = *o.dim;
  if (o.hidden) c.model.hidden = *o.hidden;
  if (o.attn_dim) c.model.attn_dim = *o.attn_dim;
  c.model.n_interests = v.K;
  c.validate();
  return c;
}

void print_outcome(std::ostream& out, const TrainOutcome& r, const std::string& label) {
  out << r.test_best.to_table(label + " (best, step " + std::to_string(r.best_step) + ")");
  out << r.test_final.to_table(label + " (final, step " + std::to_string(r.steps) + ")");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"CauseRec sequential recommendation toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides o;

  auto* prepare = app.add_subcommand("prepare", "Filter, truncate and split a dataset");
  auto* train = app.add_subcommand("train", "Train a model and report test metrics");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or the POP baseline");
  auto* export_emb = app.add_subcommand("export-embeddings", "Write item or user vectors as TSV");
  auto* sweep = app.add_subcommand("sweep", "Run a hyperparameter grid");
  for (auto* sub : {prepare, train, eval, export_emb, sweep}) add_run_options(sub, config_path, o);

  std::string checkpoint, split = "test", which, axis;
  bool pop = false;
  std::size_t jobs = 1;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->check(CLI::ExistingFile);
  eval->add_flag("--pop", pop, "Evaluate the popularity baseline");
  eval->add_option("--split", split, "val or test")->check(CLI::IsMember({"val", "test"}));
  export_emb->add_option("--checkpoint", checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  export_emb->add_option("--which", which, "items or users")->required()->check(CLI::IsMember({"items", "users"}));
  export_emb->add_option("--split", split, "User split: train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  sweep->add_option("--axis", axis, "r_rep, MN or K")->required()->check(CLI::IsMember({"r_rep", "MN", "K"}));
  sweep->add_option("--jobs", jobs, "Concurrent runs")->envname("CAUSEREC_JOBS");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = resolve(config_path, o);
    if (prepare->parsed()) {
      std::cout << cmd_prepare(cfg).to_table();
    } else if (train->parsed()) {
      print_outcome(std::cout, cmd_train(cfg), to_string(cfg.variant.variant));
    } else if (eval->parsed()) {
      EvalRequest req;
      req.pop = pop;
      if (!checkpoint.empty()) req.checkpoint = checkpoint;
      req.split = split;
      const auto r = cmd_eval(cfg, req);
      std::cout << r.to_table(pop ? "POP" : fs::path(checkpoint).stem().string());
    } else if (export_emb->parsed()) {
      const auto set = which == "items" ? EmbeddingSet::items : EmbeddingSet::users;
      std::cout << cmd_export_embeddings(cfg, checkpoint, set, split).string() << "\n";
    } else if (sweep->parsed()) {
      std::cout << cmd_sweep(cfg, parse_sweep_axis(axis), jobs).to_table();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace causerec::cli
