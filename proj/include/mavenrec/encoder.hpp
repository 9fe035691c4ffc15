#pragma once

// Bidirectional self-attention encoder over a group's members. A learned
// summary token is prepended to the member sequence; after L pre-norm
// transformer layers its final state is the group vector. There are no
// positional embeddings, so the output is invariant to member order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mavenrec/random.hpp"
#include "mavenrec/errors.hpp"
#include "mavenrec/tensor.hpp"

namespace mavenrec {

struct EncoderLayer {
  Tensor ln1_gain, ln1_bias;  // [d]
  // Projections are [d x d]; head h owns columns [h*d/H, (h+1)*d/H) of the
  // projected rows.
  Tensor W_q, W_k, W_v, W_o;
  Tensor ln2_gain, ln2_bias;  // [d]
  Tensor ff_w1, ff_b1;        // [d_ff x d], [d_ff]
  Tensor ff_w2, ff_b2;        // [d x d_ff], [d]
};

struct EncoderParams {
  Tensor summary_token;  // [d]
  std::size_t heads = 1;
  std::vector<EncoderLayer> layers;

  std::size_t dim() const { return summary_token.numel(); }
};

inline EncoderParams make_encoder_params(std::size_t d, std::size_t layers, std::size_t heads, std::size_t d_ff,
                                         std::uint64_t seed) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("encoder: embedding dim " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (d_ff == 0) throw ConfigError("encoder: feed-forward width must be positive");
  EncoderParams p;
  p.heads = heads;
  p.summary_token = param({d}, Init::xavier_uniform, derive_seed(seed, {0}));
  for (std::size_t l = 0; l < layers; ++l) {
    auto s = [&](std::uint64_t k) { return derive_seed(seed, {l + 1, k}); };
    EncoderLayer L;
    L.ln1_gain = param({d}, Init::ones, 0);
    L.ln1_bias = param({d}, Init::zeros, 0);
    L.W_q = param({d, d}, Init::xavier_uniform, s(1));
    L.W_k = param({d, d}, Init::xavier_uniform, s(2));
    L.W_v = param({d, d}, Init::xavier_uniform, s(3));
    // Residual branches start closed (W_o and ff_w2 zero), so the encoder
    // initially returns the summary token and the maven path is not drowned
    // out by layer-normalised member tokens early in training.
    L.W_o = param({d, d}, Init::zeros, s(4));
    L.ln2_gain = param({d}, Init::ones, 0);
    L.ln2_bias = param({d}, Init::zeros, 0);
    L.ff_w1 = param({d_ff, d}, Init::xavier_uniform, s(5));
    L.ff_b1 = param({d_ff}, Init::zeros, 0);
    L.ff_w2 = param({d, d_ff}, Init::zeros, s(6));
    L.ff_b2 = param({d}, Init::zeros, 0);
    p.layers.push_back(std::move(L));
  }
  return p;
}

/// Masked multi-head self-attention of the first `queries` token rows over all
/// rows of x [n x d]; `key_mask` marks which tokens may be attended to.
/// Optionally exposes each head's [queries x n] attention matrix.
inline Tensor self_attention(const Tensor& x, const std::vector<bool>& key_mask, const EncoderLayer& layer,
                             std::size_t heads, std::size_t queries, std::vector<Tensor>* attention_out = nullptr) {
  const std::size_t n = x.rows(), d = x.cols(), dh = d / heads;
  auto q = matmul_nt(queries == n ? x : slice(x, 0, 0, queries), layer.W_q);
  auto k = matmul_nt(x, layer.W_k);
  auto v = matmul_nt(x, layer.W_v);
  std::vector<bool> mask;
  mask.reserve(queries * n);
  for (std::size_t r = 0; r < queries; ++r) mask.insert(mask.end(), key_mask.begin(), key_mask.end());
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> per_head;
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : slice(q, 1, h * dh, dh);
    auto kh = heads == 1 ? k : slice(k, 1, h * dh, dh);
    auto vh = heads == 1 ? v : slice(v, 1, h * dh, dh);
    auto probs = masked_softmax(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    if (attention_out) attention_out->push_back(probs);
    per_head.push_back(matmul(probs, vh));
  }
  auto merged = heads == 1 ? per_head[0] : concat(per_head, 1);
  return matmul_nt(merged, layer.W_o);
}

inline Tensor self_attention(const Tensor& x, const std::vector<bool>& key_mask, const EncoderLayer& layer,
                             std::size_t heads, std::vector<Tensor>* attention_out = nullptr) {
  return self_attention(x, key_mask, layer, heads, x.rows(), attention_out);
}

/// One pre-norm layer. Only the first `queries` rows of the output are
/// produced; every row still serves as a key and value.
inline Tensor encoder_layer(const Tensor& x, const std::vector<bool>& key_mask, const EncoderLayer& layer,
                            std::size_t heads, std::size_t queries, std::vector<Tensor>* attention_out = nullptr) {
  auto xq = queries == x.rows() ? x : slice(x, 0, 0, queries);
  auto h = add(xq, self_attention(layer_norm(x, layer.ln1_gain, layer.ln1_bias), key_mask, layer, heads, queries,
                                  attention_out));
  auto ff = linear(relu(linear(layer_norm(h, layer.ln2_gain, layer.ln2_bias), layer.ff_w1, layer.ff_b1)), layer.ff_w2,
                   layer.ff_b2);
  return add(h, ff);
}

inline Tensor encoder_layer(const Tensor& x, const std::vector<bool>& key_mask, const EncoderLayer& layer,
                            std::size_t heads, std::vector<Tensor>* attention_out = nullptr) {
  return encoder_layer(x, key_mask, layer, heads, x.rows(), attention_out);
}

/// Group vector [d] for member rows [m x d]. Masked rows are padding: they are
/// never attended to and do not affect the result.
inline Tensor encode_group(const Tensor& members, const std::vector<bool>& mask, const EncoderParams& p,
                           std::vector<Tensor>* attention_out = nullptr) {
  detail::require_2d(members, "encode_group");
  const std::size_t m = members.rows(), d = p.dim();
  if (members.cols() != d) {
    throw ShapeError("encode_group: member rows " + shape_str(members.shape()) + " do not match dim " +
                     std::to_string(d));
  }
  if (mask.size() != m) throw ShapeError("encode_group: mask length does not match member count");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("encode_group: every member is masked");
  }
  if (p.heads == 0 || d % p.heads != 0) {
    throw ConfigError("encode_group: dim " + std::to_string(d) + " not divisible by " + std::to_string(p.heads) +
                      " heads");
  }
  std::vector<bool> key_mask;
  key_mask.reserve(m + 1);
  key_mask.push_back(true);
  key_mask.insert(key_mask.end(), mask.begin(), mask.end());
  auto x = concat({reshape(p.summary_token, {1, d}), members}, 0);
  // The last layer only needs the summary row as a query.
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const bool last = l + 1 == p.layers.size();
    x = encoder_layer(x, key_mask, p.layers[l], p.heads, last ? 1 : x.rows(), attention_out);
  }
  return reshape(x.rows() == 1 ? x : slice(x, 0, 0, 1), {d});
}

inline Tensor encode_group(const Tensor& members, const EncoderParams& p) {
  return encode_group(members, std::vector<bool>(members.rows(), true), p);
}

}  // namespace mavenrec
