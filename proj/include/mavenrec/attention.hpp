#pragma once

// Item-conditioned attention over group members:
//   z(t, j) = A^T ReLU(H_v v_t + H_u u_j + b),   alpha(t, .) = softmax_j z(t, j)
// and the attention-weighted member sum.

#include <cstdint>
#include <string>
#include <vector>

#include "mavenrec/random.hpp"
#include "mavenrec/tensor.hpp"

namespace mavenrec {

struct AttentionParams {
  Tensor H_v;  // [d_att x d]
  Tensor H_u;  // [d_att x d]
  Tensor b;    // [d_att]
  Tensor A;    // [d_att]

  std::size_t embedding_dim() const { return H_v.cols(); }
  std::size_t hidden_dim() const { return H_v.rows(); }
};

inline AttentionParams make_attention_params(std::size_t d, std::size_t d_att, std::uint64_t seed) {
  return {param({d_att, d}, Init::xavier_uniform, derive_seed(seed, {1})),
          param({d_att, d}, Init::xavier_uniform, derive_seed(seed, {2})), param({d_att}, Init::zeros, 0),
          param({d_att}, Init::xavier_uniform, derive_seed(seed, {3}))};
}

/// Row-wise logits for paired item/member rows: items [n x d], members [n x d]
/// -> [n x 1].
inline Tensor attention_logits(const Tensor& items, const Tensor& members, const AttentionParams& p) {
  if (items.cols() != p.embedding_dim() || members.cols() != p.embedding_dim()) {
    throw ShapeError("attention: embeddings " + shape_str(items.shape()) + " / " + shape_str(members.shape()) +
                     " do not match H_v " + shape_str(p.H_v.shape()));
  }
  auto pre = add_bias(add(matmul_nt(items, p.H_v), matmul_nt(members, p.H_u)), p.b);
  return matmul(relu(pre), reshape(p.A, {p.hidden_dim(), 1}));
}

inline Tensor attention_logit(const Tensor& item, const Tensor& member, const AttentionParams& p) {
  const auto d = p.embedding_dim();
  if (item.numel() != d || member.numel() != d) {
    throw ShapeError("attention_logit: expected embeddings of width " + std::to_string(d) + ", got " +
                     shape_str(item.shape()) + " and " + shape_str(member.shape()));
  }
  return reshape(attention_logits(reshape(item, {1, d}), reshape(member, {1, d}), p), {1});
}

/// Softmax attention over the rows of `members` [m x d] for one target item
/// [d]. Masked-out rows receive weight exactly 0.
inline Tensor attention_weights(const Tensor& item, const Tensor& members, const std::vector<bool>& mask,
                                const AttentionParams& p) {
  detail::require_2d(members, "attention_weights");
  const std::size_t m = members.rows(), d = p.embedding_dim();
  if (item.numel() != d) throw ShapeError("attention_weights: item embedding " + shape_str(item.shape()));
  std::vector<std::size_t> repeat(m, 0);
  auto items = embedding_lookup(reshape(item, {1, d}), repeat);
  auto z = reshape(attention_logits(items, members, p), {m});
  return masked_softmax(z, mask);
}

inline Tensor attention_weights(const Tensor& item, const Tensor& members, const AttentionParams& p) {
  return attention_weights(item, members, std::vector<bool>(members.rows(), true), p);
}

/// sum_j alpha_j u_j.
inline Tensor maven_vector(const Tensor& alpha, const Tensor& members) {
  if (alpha.dim() != 1 || members.dim() != 2 || alpha.numel() != members.rows()) {
    throw ShapeError("maven_vector: " + std::to_string(alpha.numel()) + " weights for members " +
                     shape_str(members.shape()));
  }
  return weighted_sum(alpha, members);
}

}  // namespace mavenrec
