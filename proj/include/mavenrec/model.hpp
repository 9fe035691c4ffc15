#pragma once

// The NCF prediction network shared by the user and group towers, and the
// group profile that feeds it:
//
//   g_l(t) = sum_j alpha(t, j) u_j + g_l'          (maven vector + encoder vector)
//   e_0    = [g ⊙ v_t, g, v_t]                      (pooling)
//   e_n    = ReLU(W_n e_{n-1} + b_n)                (hidden stack)
//   score  = w^T e_N                                (no bias, no squashing)

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mavenrec/attention.hpp"
#include "mavenrec/data_store.hpp"
#include "mavenrec/encoder.hpp"
#include "mavenrec/random.hpp"
#include "mavenrec/tensor.hpp"

namespace mavenrec {

using Membership = std::vector<std::vector<Id>>;

/// Which components make up the group profile.
enum class Variant {
  siagr,    // maven vector + encoder vector
  siagr_g,  // encoder vector only
  siagr_m,  // maven vector only
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::siagr: return "siagr";
    case Variant::siagr_g: return "siagr-g";
    case Variant::siagr_m: return "siagr-m";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "siagr") return Variant::siagr;
  if (s == "siagr-g") return Variant::siagr_g;
  if (s == "siagr-m") return Variant::siagr_m;
  throw ConfigError("unknown model variant '" + s + "' (expected siagr, siagr-g or siagr-m)");
}

inline bool uses_mavens(Variant v) { return v != Variant::siagr_g; }
inline bool uses_encoder(Variant v) { return v != Variant::siagr_m; }

struct ModelConfig {
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> hidden_widths{96, 48, 16};
  std::size_t encoder_layers = 1;
  std::size_t encoder_heads = 2;
  std::size_t encoder_ff_dim = 0;  // 0: 4 * embedding_dim
  std::size_t attention_dim = 0;   // 0: embedding_dim
  Variant variant = Variant::siagr;

  std::size_t ff_dim() const { return encoder_ff_dim ? encoder_ff_dim : 4 * embedding_dim; }
  std::size_t att_dim() const { return attention_dim ? attention_dim : embedding_dim; }
  std::size_t pooled_dim() const { return 3 * embedding_dim; }
  std::size_t output_dim() const { return hidden_widths.empty() ? pooled_dim() : hidden_widths.back(); }

  void validate() const {
    if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
    if (encoder_heads == 0 || embedding_dim % encoder_heads != 0) {
      throw ConfigError("embedding_dim " + std::to_string(embedding_dim) + " is not divisible by encoder_heads " +
                        std::to_string(encoder_heads));
    }
    for (auto w : hidden_widths) {
      if (w == 0) throw ConfigError("hidden widths must be positive");
    }
  }

  nlohmann::ordered_json to_json() const {
    return {{"embedding_dim", embedding_dim},   {"hidden_widths", hidden_widths}, {"encoder_layers", encoder_layers},
            {"encoder_heads", encoder_heads},   {"encoder_ff_dim", ff_dim()},     {"attention_dim", att_dim()},
            {"variant", to_string(variant)}};
  }

  static ModelConfig from_json(const nlohmann::ordered_json& j) {
    ModelConfig c;
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    c.encoder_heads = j.at("encoder_heads").get<std::size_t>();
    c.encoder_ff_dim = j.at("encoder_ff_dim").get<std::size_t>();
    c.attention_dim = j.at("attention_dim").get<std::size_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.validate();
    return c;
  }
};

struct HiddenLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
};

struct ModelParameters {
  ModelConfig config;
  Tensor user_embeddings;  // [|U| x d]
  Tensor item_embeddings;  // [|V| x d]
  AttentionParams attention;
  EncoderParams encoder;
  std::vector<HiddenLayer> hidden;
  Tensor prediction;  // w, [last hidden width]

  std::size_t num_users() const { return user_embeddings.rows(); }
  std::size_t num_items() const { return item_embeddings.rows(); }

  /// Every trainable tensor with a stable name. The handles alias the model.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out{{"user_embeddings", user_embeddings},
                                                    {"item_embeddings", item_embeddings},
                                                    {"attention.H_v", attention.H_v},
                                                    {"attention.H_u", attention.H_u},
                                                    {"attention.b", attention.b},
                                                    {"attention.A", attention.A},
                                                    {"encoder.summary_token", encoder.summary_token}};
    for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
      const auto& L = encoder.layers[l];
      const std::string p = "encoder.layers." + std::to_string(l) + ".";
      for (auto& [n, t] : std::vector<std::pair<std::string, Tensor>>{{"ln1_gain", L.ln1_gain},
                                                                      {"ln1_bias", L.ln1_bias},
                                                                      {"W_q", L.W_q},
                                                                      {"W_k", L.W_k},
                                                                      {"W_v", L.W_v},
                                                                      {"W_o", L.W_o},
                                                                      {"ln2_gain", L.ln2_gain},
                                                                      {"ln2_bias", L.ln2_bias},
                                                                      {"ff_w1", L.ff_w1},
                                                                      {"ff_b1", L.ff_b1},
                                                                      {"ff_w2", L.ff_w2},
                                                                      {"ff_b2", L.ff_b2}}) {
        out.emplace_back(p + n, t);
      }
    }
    for (std::size_t n = 0; n < hidden.size(); ++n) {
      out.emplace_back("hidden." + std::to_string(n) + ".W", hidden[n].weight);
      out.emplace_back("hidden." + std::to_string(n) + ".b", hidden[n].bias);
    }
    out.emplace_back("prediction.w", prediction);
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (auto& [_, t] : named_tensors()) out.push_back(t);
    return out;
  }

  void zero_grad() const {
    for (auto t : tensors()) t.zero_grad();
  }
};

inline ModelParameters init_model(const ModelConfig& cfg, std::size_t n_users, std::size_t n_items,
                                  std::uint64_t seed) {
  cfg.validate();
  if (n_users == 0 || n_items == 0) throw ConfigError("model needs at least one user and one item");
  const auto d = cfg.embedding_dim;
  ModelParameters p;
  p.config = cfg;
  p.user_embeddings = param({n_users, d}, Init::xavier_uniform, derive_seed(seed, {10}));
  p.item_embeddings = param({n_items, d}, Init::xavier_uniform, derive_seed(seed, {11}));
  p.attention = make_attention_params(d, cfg.att_dim(), derive_seed(seed, {12}));
  p.encoder = make_encoder_params(d, cfg.encoder_layers, cfg.encoder_heads, cfg.ff_dim(), derive_seed(seed, {13}));
  std::size_t in = cfg.pooled_dim();
  for (std::size_t n = 0; n < cfg.hidden_widths.size(); ++n) {
    const auto out = cfg.hidden_widths[n];
    p.hidden.push_back({param({out, in}, Init::xavier_uniform, derive_seed(seed, {14, n})), param({out}, Init::zeros, 0)});
    in = out;
  }
  p.prediction = param({in}, Init::xavier_uniform, derive_seed(seed, {15}));
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks

inline Tensor aggregate_group(const Tensor& maven_vec, const Tensor& group_vec) {
  if (maven_vec.shape() != group_vec.shape()) {
    throw ShapeError("aggregate_group: " + shape_str(maven_vec.shape()) + " vs " + shape_str(group_vec.shape()));
  }
  return add(maven_vec, group_vec);
}

/// [entity ⊙ item, entity, item] along the last axis; works on single
/// vectors [d] and on batches [B x d].
inline Tensor pool(const Tensor& entity, const Tensor& item) {
  if (entity.shape() != item.shape()) {
    throw ShapeError("pool: " + shape_str(entity.shape()) + " vs " + shape_str(item.shape()));
  }
  return concat({elementwise_mul(entity, item), entity, item}, entity.dim() == 1 ? 0 : 1);
}

inline Tensor hidden_forward(const Tensor& e0, const std::vector<HiddenLayer>& layers) {
  const bool vec = e0.dim() == 1;
  Tensor e = vec ? reshape(e0, {1, e0.numel()}) : e0;
  for (std::size_t n = 0; n < layers.size(); ++n) {
    if (layers[n].weight.cols() != e.cols()) {
      throw ShapeError("hidden layer " + std::to_string(n + 1) + " expects width " +
                       std::to_string(layers[n].weight.cols()) + ", got " + std::to_string(e.cols()));
    }
    e = relu(linear(e, layers[n].weight, layers[n].bias));
  }
  return vec ? reshape(e, {e.numel()}) : e;
}

/// Scores for paired rows entity [B x d], item [B x d] -> [B].
inline Tensor score_pairs(const ModelParameters& p, const Tensor& entity, const Tensor& item) {
  auto eN = hidden_forward(pool(entity, item), p.hidden);
  if (eN.cols() != p.prediction.numel()) {
    throw ShapeError("prediction weight " + shape_str(p.prediction.shape()) + " does not fit " + shape_str(eN.shape()));
  }
  return reshape(matmul(eN, reshape(p.prediction, {p.prediction.numel(), 1})), {eN.rows()});
}

// ---------------------------------------------------------------------------
// Group profiles

/// Maven vectors for a batch of (group, item) pairs -> [B x d]. Members are
/// padded to the largest group in the batch and masked out of the softmax.
/// When `alpha_out` is given it receives the [B x M] attention matrix.
inline Tensor batch_maven_vectors(const ModelParameters& p, const Membership& roster, std::span<const Id> groups,
                                  const Tensor& item_vecs, Tensor* alpha_out = nullptr) {
  const std::size_t B = groups.size();
  std::size_t M = 0;
  for (Id g : groups) {
    const auto& m = roster.at(g);
    if (m.empty()) throw std::invalid_argument("group " + std::to_string(g) + " has no members");
    M = std::max(M, m.size());
  }
  // Each distinct member is projected by H_u once; slots index into that
  // compact table.
  std::unordered_map<Id, std::size_t> local;
  std::vector<Id> distinct;
  std::vector<std::size_t> slot_user(B * M), slot_row(B * M);
  std::vector<bool> mask(B * M, false);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& m = roster[groups[b]];
    for (std::size_t j = 0; j < M; ++j) {
      const Id u = j < m.size() ? m[j] : m[0];
      auto [it, fresh] = local.try_emplace(u, distinct.size());
      if (fresh) distinct.push_back(u);
      slot_row[b * M + j] = b;
      slot_user[b * M + j] = it->second;
      mask[b * M + j] = j < m.size();
    }
  }
  auto users = embedding_lookup(p.user_embeddings, distinct);
  auto members = embedding_lookup(users, slot_user);
  auto item_part = embedding_lookup(matmul_nt(item_vecs, p.attention.H_v), slot_row);
  auto member_part = embedding_lookup(matmul_nt(users, p.attention.H_u), slot_user);
  auto pre = add_bias(add(item_part, member_part), p.attention.b);
  auto z = reshape(matmul(relu(pre), reshape(p.attention.A, {p.attention.hidden_dim(), 1})), {B, M});
  auto alpha = masked_softmax(z, mask);
  if (alpha_out) *alpha_out = alpha;
  return weighted_sum(alpha, members);
}

/// Encoder vectors for a batch of groups -> [B x d]; each distinct group is
/// encoded once.
inline Tensor batch_encoder_vectors(const ModelParameters& p, const Membership& roster, std::span<const Id> groups) {
  std::unordered_map<Id, std::size_t> slot;
  std::vector<Tensor> encoded;
  std::vector<std::size_t> rows;
  rows.reserve(groups.size());
  const auto d = p.config.embedding_dim;
  for (Id g : groups) {
    auto [it, fresh] = slot.try_emplace(g, encoded.size());
    if (fresh) {
      const auto& m = roster.at(g);
      if (m.empty()) throw std::invalid_argument("group " + std::to_string(g) + " has no members");
      auto members = embedding_lookup(p.user_embeddings, m);
      encoded.push_back(reshape(encode_group(members, p.encoder), {1, d}));
    }
    rows.push_back(it->second);
  }
  auto table = encoded.size() == 1 ? encoded[0] : concat(encoded, 0);
  return embedding_lookup(table, rows);
}

/// g_l(t) for a batch of (group, item) pairs -> [B x d].
inline Tensor group_profiles(const ModelParameters& p, const Membership& roster, std::span<const Id> groups,
                             const Tensor& item_vecs, Variant variant) {
  Tensor maven, encoded;
  if (uses_mavens(variant)) maven = batch_maven_vectors(p, roster, groups, item_vecs);
  if (uses_encoder(variant)) encoded = batch_encoder_vectors(p, roster, groups);
  if (!maven.defined()) return encoded;
  if (!encoded.defined()) return maven;
  return aggregate_group(maven, encoded);
}

inline Tensor score_users(const ModelParameters& p, std::span<const Id> users, std::span<const Id> items) {
  if (users.size() != items.size()) throw ShapeError("score_users: users and items differ in length");
  return score_pairs(p, embedding_lookup(p.user_embeddings, users), embedding_lookup(p.item_embeddings, items));
}

inline Tensor score_groups(const ModelParameters& p, const Membership& roster, std::span<const Id> groups,
                           std::span<const Id> items, Variant variant) {
  if (groups.size() != items.size()) throw ShapeError("score_groups: groups and items differ in length");
  auto item_vecs = embedding_lookup(p.item_embeddings, items);
  return score_pairs(p, group_profiles(p, roster, groups, item_vecs, variant), item_vecs);
}

inline Tensor score_groups(const ModelParameters& p, const Membership& roster, std::span<const Id> groups,
                           std::span<const Id> items) {
  return score_groups(p, roster, groups, items, p.config.variant);
}

inline Tensor predict_user(const ModelParameters& p, Id user, Id item) {
  const Id u[1]{user}, i[1]{item};
  return score_users(p, u, i);
}

inline Tensor predict_group(const ModelParameters& p, const Membership& roster, Id group, Id item, Variant variant) {
  const Id g[1]{group}, i[1]{item};
  return score_groups(p, roster, g, i, variant);
}

inline Tensor predict_group(const ModelParameters& p, const Membership& roster, Id group, Id item) {
  return predict_group(p, roster, group, item, p.config.variant);
}

/// Attention weights of a group's members (in roster order) for one item.
inline std::vector<double> member_attention(const ModelParameters& p, const Membership& roster, Id group, Id item) {
  NoGradGuard no_grad;
  const Id g[1]{group}, i[1]{item};
  Tensor alpha;
  batch_maven_vectors(p, roster, g, embedding_lookup(p.item_embeddings, i), &alpha);
  return {alpha.data().begin(), alpha.data().end()};
}

// ---------------------------------------------------------------------------
// Checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelParameters params;
  nlohmann::ordered_json meta;  // free-form run metadata (train config echo, seed, ...)
};

inline nlohmann::ordered_json checkpoint_json(const ModelParameters& p, const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json j;
  j["format"] = "mavenrec-checkpoint";
  j["version"] = 1;
  j["model"] = p.config.to_json();
  j["num_users"] = p.num_users();
  j["num_items"] = p.num_items();
  j["meta"] = meta;
  auto& tensors = j["tensors"] = nlohmann::ordered_json::object();
  for (const auto& [name, t] : p.named_tensors()) {
    tensors[name] = {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
  }
  return j;
}

/// Writes via a temporary file and rename, so an interrupted write never
/// replaces the previous checkpoint with a partial one.
inline void save_checkpoint(const std::filesystem::path& path, const ModelParameters& p,
                            const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError(tmp.string() + ": cannot write");
    out << checkpoint_json(p, meta).dump() << '\n';
    if (!out) throw CheckpointError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint checkpoint_from_json(const nlohmann::ordered_json& j) {
  if (j.value("format", "") != "mavenrec-checkpoint") throw CheckpointError("not a mavenrec checkpoint");
  auto cfg = ModelConfig::from_json(j.at("model"));
  Checkpoint ck{init_model(cfg, j.at("num_users").get<std::size_t>(), j.at("num_items").get<std::size_t>(), 0),
                j.value("meta", nlohmann::ordered_json::object())};
  const auto& tensors = j.at("tensors");
  auto named = ck.params.named_tensors();
  if (tensors.size() != named.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(named.size()));
  }
  for (auto& [name, t] : named) {
    if (!tensors.contains(name)) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    const auto& entry = tensors.at(name);
    auto shape = entry.at("shape").get<Shape>();
    if (shape != t.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                            shape_str(t.shape()));
    }
    auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != t.numel()) throw CheckpointError("tensor '" + name + "' has the wrong number of values");
    std::copy(data.begin(), data.end(), t.mutable_data().begin());
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError(path.string() + ": cannot open checkpoint");
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::ordered_json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace mavenrec
