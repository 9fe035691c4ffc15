#pragma once

// Subcommands behind the mavenrec tool: run configuration, run manifests and
// the synth / train / eval / inspect-attention pipelines. Each command writes
// its outputs plus one manifest.json into the output directory.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <json.hpp>

#include "mavenrec/data_store.hpp"
#include "mavenrec/eval.hpp"
#include "mavenrec/model.hpp"
#include "mavenrec/synth.hpp"
#include "mavenrec/training.hpp"

namespace mavenrec::cli {

inline constexpr const char* kVersion = "0.1.0";

using ojson = nlohmann::ordered_json;

/// Bad invocation: missing flags, unknown ids, malformed values.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Run configuration

struct EvalSettings {
  std::size_t eval_negatives = 100;
  std::vector<Method> methods = all_methods();
  std::vector<std::size_t> cutoffs{5, 10};
};

/// Every tunable of every command in one flat key space.
struct RunConfig {
  std::uint64_t seed = 1;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  EvalSettings eval;

  /// Canonical echo of every key with its effective value.
  ojson to_json() const {
    ojson j;
    j["seed"] = seed;
    j["n_users"] = synth.n_users;
    j["n_items"] = synth.n_items;
    j["n_groups"] = synth.n_groups;
    j["group_size_range"] = {synth.group_size_min, synth.group_size_max};
    j["mean_group_size"] = synth.mean_group_size ? ojson(*synth.mean_group_size) : ojson(nullptr);
    j["latent_dim"] = synth.latent_dim;
    j["maven_weight"] = synth.maven_weight;
    j["interactions_per_user"] = synth.interactions_per_user;
    j["interactions_per_group"] = synth.interactions_per_group;
    j["cover_all_items"] = synth.cover_all_items;
    const auto model_keys = model.to_json();
    for (const auto& [k, v] : model_keys.items()) j[k] = v;
    const auto train_keys = train.to_json();
    for (const auto& [k, v] : train_keys.items()) {
      if (k != "seed") j[k] = v;
    }
    j["eval_negatives"] = eval.eval_negatives;
    std::vector<std::string> methods;
    for (auto m : eval.methods) methods.push_back(to_string(m));
    j["methods"] = methods;
    j["cutoffs"] = eval.cutoffs;
    return j;
  }
};

namespace detail {

template <class T>
T get_key(const ojson& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

inline std::vector<Method> methods_from(const ojson& v) {
  try {
    if (v.is_string()) return parse_methods(v.get<std::string>());
    std::vector<Method> out;
    for (const auto& m : get_key<std::vector<std::string>>(v, "methods")) out.push_back(parse_method(m));
    if (out.empty()) throw ConfigError("config key 'methods' is empty");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config key 'methods': ") + e.what());
  }
}

}  // namespace detail

/// Reads a flat JSON object. Unknown keys are rejected so typos cannot
/// silently fall back to defaults.
inline RunConfig parse_config(const ojson& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  using detail::get_key;
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") c.seed = get_key<std::uint64_t>(v, key);
    else if (key == "n_users") c.synth.n_users = get_key<std::size_t>(v, key);
    else if (key == "n_items") c.synth.n_items = get_key<std::size_t>(v, key);
    else if (key == "n_groups") c.synth.n_groups = get_key<std::size_t>(v, key);
    else if (key == "group_size_range") {
      auto r = get_key<std::vector<std::size_t>>(v, key);
      if (r.size() != 2) throw ConfigError("config key 'group_size_range' must be [min, max]");
      c.synth.group_size_min = r[0];
      c.synth.group_size_max = r[1];
    } else if (key == "mean_group_size") {
      if (v.is_null()) c.synth.mean_group_size.reset();
      else c.synth.mean_group_size = get_key<double>(v, key);
    } else if (key == "latent_dim") c.synth.latent_dim = get_key<std::size_t>(v, key);
    else if (key == "maven_weight") c.synth.maven_weight = get_key<double>(v, key);
    else if (key == "interactions_per_user") c.synth.interactions_per_user = get_key<std::size_t>(v, key);
    else if (key == "interactions_per_group") c.synth.interactions_per_group = get_key<std::size_t>(v, key);
    else if (key == "cover_all_items") c.synth.cover_all_items = get_key<bool>(v, key);
    else if (key == "embedding_dim") c.model.embedding_dim = get_key<std::size_t>(v, key);
    else if (key == "hidden_widths") c.model.hidden_widths = get_key<std::vector<std::size_t>>(v, key);
    else if (key == "encoder_layers") c.model.encoder_layers = get_key<std::size_t>(v, key);
    else if (key == "encoder_heads") c.model.encoder_heads = get_key<std::size_t>(v, key);
    else if (key == "encoder_ff_dim") c.model.encoder_ff_dim = get_key<std::size_t>(v, key);
    else if (key == "attention_dim") c.model.attention_dim = get_key<std::size_t>(v, key);
    else if (key == "variant") c.model.variant = parse_variant(get_key<std::string>(v, key));
    else if (key == "epochs") c.train.epochs = get_key<std::size_t>(v, key);
    else if (key == "batch_size") c.train.batch_size = get_key<std::size_t>(v, key);
    else if (key == "learning_rate") c.train.adam.learning_rate = get_key<double>(v, key);
    else if (key == "adam_beta1") c.train.adam.beta1 = get_key<double>(v, key);
    else if (key == "adam_beta2") c.train.adam.beta2 = get_key<double>(v, key);
    else if (key == "adam_epsilon") c.train.adam.epsilon = get_key<double>(v, key);
    else if (key == "negatives_per_positive") c.train.negatives_per_positive = get_key<std::size_t>(v, key);
    else if (key == "lambda_user") c.train.lambda_user = get_key<double>(v, key);
    else if (key == "eval_negatives") c.eval.eval_negatives = get_key<std::size_t>(v, key);
    else if (key == "methods") c.eval.methods = detail::methods_from(v);
    else if (key == "cutoffs") c.eval.cutoffs = get_key<std::vector<std::size_t>>(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.synth.validate();
  c.model.validate();
  c.train.validate();
  if (c.eval.eval_negatives == 0) throw ConfigError("eval_negatives must be positive");
  for (auto n : c.eval.cutoffs) {
    if (n == 0) throw ConfigError("cutoffs must be positive");
  }
  return c;
}

inline ojson read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Hashing and manifests

inline std::string to_hex(const unsigned char* bytes, std::size_t n) {
  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(bytes[i]);
  return os.str();
}

inline std::string sha256_bytes(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  return to_hex(digest, len);
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open for hashing");
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_bytes(buf.str());
}

/// Hash of the effective configuration, independent of file formatting.
inline std::string config_hash(const RunConfig& c) { return sha256_bytes(c.to_json().dump()); }

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config_hash;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  std::uint64_t seed = 0;
  double duration_seconds = 0.0;
  ojson versions;
  ojson config;

  ojson to_json() const {
    return {{"command", command},   {"config_path", config_path}, {"config_hash", config_hash},
            {"seed", seed},         {"inputs", inputs},           {"outputs", outputs},
            {"duration_seconds", duration_seconds}, {"versions", versions}, {"config", config}};
  }

  static RunManifest from_json(const ojson& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_path = j.at("config_path").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.duration_seconds = j.at("duration_seconds").get<double>();
    m.versions = j.at("versions");
    m.config = j.value("config", ojson::object());
    return m;
  }
};

inline ojson artifact_versions() {
  return {{"mavenrec", kVersion},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"openblas", std::string(openblas_get_config())}};
}

/// Files whose recorded hash no longer matches their contents (or that are
/// missing), prefixed "input " or "output ".
inline std::vector<std::string> verify_manifest(const RunManifest& m) {
  std::vector<std::string> bad;
  auto check = [&](const char* kind, const std::map<std::string, std::string>& files) {
    for (const auto& [path, hash] : files) {
      if (!std::filesystem::exists(path)) {
        bad.push_back(std::string(kind) + " " + path + " is missing");
      } else if (sha256_file(path) != hash) {
        bad.push_back(std::string(kind) + " " + path + " changed");
      }
    }
  };
  check("input", m.inputs);
  check("output", m.outputs);
  return bad;
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
  return RunManifest::from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Options shared by every subcommand

struct Options {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> methods;
  std::optional<std::size_t> eval_negatives;
  std::size_t threads = 1;
  bool per_group_mean = false;
  std::optional<std::string> groups;  // comma-separated external ids
  std::optional<std::string> items;
};

/// Config file (or defaults) with flag overrides applied.
inline RunConfig effective_config(const Options& o) {
  RunConfig c = o.config ? parse_config(read_json_file(*o.config)) : RunConfig{};
  if (o.seed) c.seed = *o.seed;
  if (o.methods) {
    try {
      c.eval.methods = parse_methods(*o.methods);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("--methods: ") + e.what());
    }
  }
  if (o.eval_negatives) {
    if (*o.eval_negatives == 0) throw UsageError("--eval-negatives must be positive");
    c.eval.eval_negatives = *o.eval_negatives;
  }
  c.synth.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

namespace detail {

inline std::filesystem::path require(const std::optional<std::filesystem::path>& p, const char* flag) {
  if (!p) throw UsageError(std::string("missing required flag ") + flag);
  return *p;
}

class Run {
 public:
  Run(std::string command, const Options& o, const RunConfig& cfg)
      : out_(require(o.out, "--out")), start_(std::chrono::steady_clock::now()) {
    std::filesystem::create_directories(out_);
    m_.command = std::move(command);
    m_.config_path = o.config ? o.config->string() : "";
    m_.config_hash = config_hash(cfg);
    m_.seed = cfg.seed;
    m_.versions = artifact_versions();
    m_.config = cfg.to_json();
    if (o.config) input(*o.config);
  }

  const std::filesystem::path& dir() const { return out_; }
  RunManifest& manifest() { return m_; }

  void input(const std::filesystem::path& p) { m_.inputs[p.string()] = sha256_file(p); }
  void inputs_of_data_dir(const std::filesystem::path& dir) {
    for (const char* f : {"user_item.csv", "group_item.csv", "membership.csv"}) input(dir / f);
  }
  void output(const std::filesystem::path& p) { m_.outputs[p.string()] = sha256_file(p); }

  /// Writes manifest.json and checks every recorded hash against disk.
  std::filesystem::path finish() {
    m_.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const auto path = out_ / "manifest.json";
    {
      std::ofstream out(path, std::ios::binary);
      out << m_.to_json().dump(2) << '\n';
      if (!out) throw std::runtime_error(path.string() + ": write failed");
    }
    auto bad = verify_manifest(read_manifest(path));
    if (!bad.empty()) throw std::runtime_error("manifest verification failed: " + bad.front());
    return path;
  }

 private:
  std::filesystem::path out_;
  std::chrono::steady_clock::time_point start_;
  RunManifest m_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string loss_csv(const std::vector<EpochLoss>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,group_loss,user_loss\n";
  for (const auto& e : history) os << e.epoch << ',' << e.group_loss << ',' << e.user_loss << '\n';
  return os.str();
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

/// Internal ids for external ids, or a UsageError naming the valid range.
inline std::vector<Id> resolve_ids(const IdMap& map, const std::string& kind, const std::string& list) {
  std::vector<Id> out;
  for (const auto& ext : split_list(list)) {
    auto id = map.find(ext);
    if (!id) {
      const std::string range = map.size() == 0 ? "none"
                                                : map.external(0) + ".." + map.external(map.size() - 1) + " (" +
                                                      std::to_string(map.size()) + " ids)";
      throw UsageError("unknown " + kind + " id '" + ext + "'; valid " + kind + " ids: " + range);
    }
    out.push_back(*id);
  }
  if (out.empty()) throw UsageError("no " + kind + " ids given");
  return out;
}

inline Checkpoint load_model(const Options& o, const InteractionStore& store) {
  auto ck = load_checkpoint(require(o.checkpoint, "--checkpoint"));
  if (ck.params.num_users() != store.num_users() || ck.params.num_items() != store.num_items()) {
    throw CheckpointError("checkpoint was trained on " + std::to_string(ck.params.num_users()) + " users / " +
                          std::to_string(ck.params.num_items()) + " items, data has " +
                          std::to_string(store.num_users()) + " / " + std::to_string(store.num_items()));
  }
  return ck;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

/// Synthetic population: three CSVs, ground_truth.json and a manifest.
inline std::filesystem::path cmd_synth(const Options& o) {
  const auto cfg = effective_config(o);
  detail::Run run("synth", o, cfg);
  auto data = generate(cfg.synth);
  write_synth(data, run.dir());
  for (const char* f : {"user_item.csv", "group_item.csv", "membership.csv", "ground_truth.json"}) {
    run.output(run.dir() / f);
  }
  spdlog::info("synth: {} users, {} items, {} groups, {} user-item and {} group-item interactions",
               data.store.num_users(), data.store.num_items(), data.store.num_groups(), data.store.user_item().size(),
               data.store.group_item().size());
  return run.finish();
}

/// Trains on the leave-one-out training split of --data. The checkpoint and
/// loss CSV are rewritten after every epoch, so an interrupted run leaves the
/// last complete epoch behind.
inline std::filesystem::path cmd_train(const Options& o) {
  auto cfg = effective_config(o);
  const auto data_dir = detail::require(o.data, "--data");
  detail::require(o.out, "--out");
  LoadStats stats;
  auto store = load_dir(data_dir, &stats);
  if (stats.duplicate_user_item + stats.duplicate_group_item + stats.duplicate_membership > 0) {
    spdlog::warn("dropped duplicate rows: {} user-item, {} group-item, {} membership", stats.duplicate_user_item,
                 stats.duplicate_group_item, stats.duplicate_membership);
  }
  detail::Run run("train", o, cfg);
  run.inputs_of_data_dir(data_dir);
  auto split = split_leave_one_out(store, cfg.seed);
  spdlog::info("train: {} group and {} user test cases held out ({} groups, {} users skipped)",
               split.group_test.size(), split.user_test.size(), split.skipped_groups, split.skipped_users);

  const auto ckpt = run.dir() / "checkpoint.json";
  const auto loss = run.dir() / "loss.csv";
  const auto hash = config_hash(cfg);
  auto meta = [&](std::size_t epoch) {
    auto m = fit_meta(cfg.model, cfg.train, epoch);
    m["seed"] = cfg.seed;
    m["config_hash"] = hash;
    return m;
  };
  FitHooks hooks;
  hooks.on_epoch = [&](const ModelParameters& p, const std::vector<EpochLoss>& history) {
    const auto& e = history.back();
    spdlog::info("epoch {}: group loss {:.6f}, user loss {:.6f}", e.epoch, e.group_loss, e.user_loss);
    save_checkpoint(ckpt, p, meta(e.epoch));
    detail::write_text(loss, detail::loss_csv(history));
    return true;
  };
  auto result = fit(split.train, cfg.model, cfg.train, hooks);
  save_checkpoint(ckpt, result.params, meta(result.history.size()));
  detail::write_text(loss, detail::loss_csv(result.history));
  run.output(ckpt);
  run.output(loss);
  return run.finish();
}

/// Ranks each held-out group item against sampled negatives under every
/// requested method; writes report.json and report.csv.
inline std::filesystem::path cmd_eval(const Options& o) {
  auto cfg = effective_config(o);
  const auto data_dir = detail::require(o.data, "--data");
  detail::require(o.out, "--out");
  auto store = load_dir(data_dir);
  auto ck = detail::load_model(o, store);
  detail::Run run("eval", o, cfg);
  run.inputs_of_data_dir(data_dir);
  run.input(*o.checkpoint);
  // The split must be the one the model was trained on.
  const auto split_seed = ck.meta.value("seed", cfg.seed);
  auto split = split_leave_one_out(store, split_seed);
  if (split.group_test.empty()) throw DataError("no group has two or more interactions; nothing to evaluate");
  EvalOptions opt;
  opt.eval_negatives = cfg.eval.eval_negatives;
  opt.seed = cfg.seed;
  opt.methods = cfg.eval.methods;
  opt.cutoffs = cfg.eval.cutoffs;
  opt.threads = o.threads;
  opt.config_hash = ck.meta.value("config_hash", std::string());
  auto report = evaluate(ck.params, split.group_test, store, opt);
  for (const auto& name : report.method_order) {
    const auto& m = report.methods.at(name);
    spdlog::info("{}: HR@{} {:.4f}, MRR {:.4f}", name, m.hit_ratio.rbegin()->first, m.hit_ratio.rbegin()->second,
                 m.mrr);
  }
  const auto json_path = run.dir() / "report.json";
  const auto csv_path = run.dir() / "report.csv";
  detail::write_text(json_path, report.to_json().dump(2) + "\n");
  detail::write_text(csv_path, report.to_csv());
  run.output(json_path);
  run.output(csv_path);
  return run.finish();
}

struct AttentionRow {
  Id group = 0;
  Id member = 0;
  std::optional<Id> item;  // empty: averaged over the group's items
  double weight = 0.0;
};

/// Member attention per requested (group, item) pair, or with
/// `per_group_mean` the average over every item the group interacted with.
inline std::vector<AttentionRow> attention_rows(const ModelParameters& p, const InteractionStore& store,
                                                const std::vector<Id>& groups, const std::vector<Id>& items,
                                                bool per_group_mean) {
  std::vector<AttentionRow> rows;
  const auto& roster = store.membership();
  for (Id g : groups) {
    const auto& members = roster.at(g);
    if (per_group_mean) {
      const auto& own = store.positives(EntityKind::group, g);
      if (own.empty()) throw UsageError("group " + store.groups().external(g) + " has no interactions to average over");
      std::vector<double> mean(members.size(), 0.0);
      for (Id i : own) {
        auto a = member_attention(p, roster, g, i);
        for (std::size_t j = 0; j < a.size(); ++j) mean[j] += a[j];
      }
      for (std::size_t j = 0; j < members.size(); ++j) {
        rows.push_back({g, members[j], std::nullopt, mean[j] / static_cast<double>(own.size())});
      }
    } else {
      for (Id i : items) {
        auto a = member_attention(p, roster, g, i);
        for (std::size_t j = 0; j < members.size(); ++j) rows.push_back({g, members[j], i, a[j]});
      }
    }
  }
  return rows;
}

inline std::string attention_csv(const std::vector<AttentionRow>& rows, const InteractionStore& store) {
  std::ostringstream os;
  os.precision(17);
  os << "group_id,member_id,item_id,weight\n";
  for (const auto& r : rows) {
    os << store.groups().external(r.group) << ',' << store.users().external(r.member) << ','
       << (r.item ? store.items().external(*r.item) : std::string("mean")) << ',' << r.weight << '\n';
  }
  return os.str();
}

/// Attention heat-map rows group_id,member_id,item_id,weight in attention.csv.
inline std::filesystem::path cmd_inspect_attention(const Options& o) {
  auto cfg = effective_config(o);
  const auto data_dir = detail::require(o.data, "--data");
  detail::require(o.out, "--out");
  auto store = load_dir(data_dir);
  auto ck = detail::load_model(o, store);
  std::vector<Id> groups;
  if (o.groups) {
    groups = detail::resolve_ids(store.groups(), "group", *o.groups);
  } else {
    for (Id g = 0; g < store.num_groups(); ++g) groups.push_back(g);
  }
  std::vector<Id> items;
  if (!o.per_group_mean) {
    if (!o.items) throw UsageError("inspect-attention needs --items or --per-group-mean");
    items = detail::resolve_ids(store.items(), "item", *o.items);
  }
  auto rows = attention_rows(ck.params, store, groups, items, o.per_group_mean);
  detail::Run run("inspect-attention", o, cfg);
  run.inputs_of_data_dir(data_dir);
  run.input(*o.checkpoint);
  const auto csv = run.dir() / "attention.csv";
  detail::write_text(csv, attention_csv(rows, store));
  run.output(csv);
  return run.finish();
}

// ---------------------------------------------------------------------------
// Error reporting

/// Exit status per failure class.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const CheckpointError*>(&e)) return 4;
  if (dynamic_cast<const TrainingError*>(&e)) return 5;
  return 1;
}

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DataError*>(&e)) return "data";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  return "runtime";
}

/// One line of JSON, safe to parse from scripts.
inline std::string error_line(const std::string& command, const std::exception& e) {
  return ojson{{"error", error_kind(e)}, {"command", command}, {"message", e.what()}}.dump(
      -1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace mavenrec::cli
