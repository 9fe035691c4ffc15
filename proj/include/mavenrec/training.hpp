#pragma once

// Joint pairwise training of the group and user towers. Each triple
// (entity, positive t, negative s) contributes (y_t - y_s - 1)^2; the epoch
// objective is mean group loss + lambda_user * mean user loss.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mavenrec/data_store.hpp"
#include "mavenrec/model.hpp"
#include "mavenrec/random.hpp"
#include "mavenrec/tensor.hpp"

namespace mavenrec {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  AdamConfig adam;
  std::size_t negatives_per_positive = 4;
  double lambda_user = 1.0;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> checkpoint_path;

  void validate() const {
    if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(lambda_user >= 0.0)) throw ConfigError("lambda_user must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (negatives_per_positive == 0) throw ConfigError("negatives_per_positive must be at least 1");
  }

  nlohmann::ordered_json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", adam.learning_rate},
            {"adam_beta1", adam.beta1},
            {"adam_beta2", adam.beta2},
            {"adam_epsilon", adam.epsilon},
            {"negatives_per_positive", negatives_per_positive},
            {"lambda_user", lambda_user},
            {"seed", seed}};
  }
};

/// (score_pos - score_neg - 1)^2, elementwise over equal-shaped inputs.
inline Tensor pairwise_loss(const Tensor& score_pos, const Tensor& score_neg) {
  return square(add_scalar(sub(score_pos, score_neg), -1.0));
}

inline double pairwise_loss(double score_pos, double score_neg) {
  const double r = score_pos - score_neg - 1.0;
  return r * r;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;

  static AdamState for_params(std::span<const Tensor> params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), 0.0);
      s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
  }
};

/// One bias-corrected Adam update of every tensor from its grad slot (a
/// missing slot counts as zero gradient).
inline void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto x = params[k].mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != x.size() || v.size() != x.size()) {
      throw ShapeError("adam_step: moment buffers for tensor " + std::to_string(k) + " do not match shape " +
                       shape_str(params[k].shape()));
    }
    const bool has = params[k].has_grad();
    auto g = params[k].grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      x[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss over a batch of triples

struct BatchLoss {
  Tensor objective;  // mean group loss + lambda * mean user loss over the batch
  double group_sum = 0.0;
  double user_sum = 0.0;
  std::size_t group_count = 0;
  std::size_t user_count = 0;
};

inline BatchLoss batch_loss(const ModelParameters& p, const Membership& roster, std::span<const Triple> batch,
                            double lambda_user) {
  std::vector<Id> g_ent, g_items, u_ent, u_items;
  std::vector<Id> g_neg, u_neg;
  for (const auto& t : batch) {
    if (t.kind == EntityKind::group) {
      g_ent.push_back(t.entity);
      g_items.push_back(t.positive);
      g_neg.push_back(t.negative);
    } else {
      u_ent.push_back(t.entity);
      u_items.push_back(t.positive);
      u_neg.push_back(t.negative);
    }
  }
  BatchLoss out;
  Tensor total;
  auto accumulate = [&](const Tensor& term) { total = total.defined() ? add(total, term) : term; };
  // positives and negatives go through the network together: rows [0, n) are
  // positives, rows [n, 2n) the matching negatives
  if (!g_ent.empty()) {
    const std::size_t n = g_ent.size();
    std::vector<Id> ents(g_ent), items(g_items);
    ents.insert(ents.end(), g_ent.begin(), g_ent.end());
    items.insert(items.end(), g_neg.begin(), g_neg.end());
    auto s = reshape(score_groups(p, roster, ents, items), {2 * n, 1});
    auto losses = pairwise_loss(slice(s, 0, 0, n), slice(s, 0, n, n));
    out.group_count = n;
    for (double v : losses.data()) out.group_sum += v;
    accumulate(mean(losses));
  }
  if (!u_ent.empty()) {
    const std::size_t n = u_ent.size();
    std::vector<Id> ents(u_ent), items(u_items);
    ents.insert(ents.end(), u_ent.begin(), u_ent.end());
    items.insert(items.end(), u_neg.begin(), u_neg.end());
    auto s = reshape(score_users(p, ents, items), {2 * n, 1});
    auto losses = pairwise_loss(slice(s, 0, 0, n), slice(s, 0, n, n));
    out.user_count = n;
    for (double v : losses.data()) out.user_sum += v;
    if (lambda_user > 0.0) accumulate(scale(mean(losses), lambda_user));
  }
  out.objective = total;
  return out;
}

// ---------------------------------------------------------------------------
// Fit

struct EpochLoss {
  std::size_t epoch = 0;  // 1-based
  double group_loss = 0.0;
  double user_loss = 0.0;

  bool operator==(const EpochLoss&) const = default;
};

struct FitResult {
  ModelParameters params;
  std::vector<EpochLoss> history;
};

/// Independent copy of every tensor.
inline ModelParameters clone(const ModelParameters& p) {
  ModelParameters out = init_model(p.config, p.num_users(), p.num_items(), 0);
  auto src = p.tensors();
  auto dst = out.tensors();
  for (std::size_t k = 0; k < src.size(); ++k) {
    std::copy(src[k].data().begin(), src[k].data().end(), dst[k].mutable_data().begin());
  }
  return out;
}

struct FitHooks {
  // Called after every epoch; returning false stops training.
  std::function<bool(const ModelParameters&, const std::vector<EpochLoss>&)> on_epoch;
  // When set, flags each named tensor that received a nonzero gradient.
  std::vector<bool>* touched = nullptr;
  // Starting parameters; defaults to a fresh seeded initialization.
  std::optional<ModelParameters> initial;
};

inline nlohmann::ordered_json fit_meta(const ModelConfig& model, const TrainConfig& cfg, std::size_t epoch) {
  return {{"train", cfg.to_json()}, {"model", model.to_json()}, {"epochs_completed", epoch}};
}

inline FitResult fit(const InteractionStore& train, const ModelConfig& model_cfg, const TrainConfig& cfg,
                     FitHooks hooks = {}) {
  cfg.validate();
  if (train.user_item().empty() && train.group_item().empty()) {
    throw TrainingError("training split has no interactions");
  }
  FitResult out{hooks.initial ? clone(*hooks.initial)
                              : init_model(model_cfg, train.num_users(), train.num_items(), derive_seed(cfg.seed, {7})),
                {}};
  auto& p = out.params;
  auto params = p.tensors();
  auto state = AdamState::for_params(params);
  if (hooks.touched) hooks.touched->assign(params.size(), false);
  const auto& roster = train.membership();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto triples = make_train_triples(train, cfg.negatives_per_positive, derive_seed(cfg.seed, {8, epoch}));
    std::span<const Triple> all(triples.entries);
    double g_sum = 0.0, u_sum = 0.0;
    std::size_t g_n = 0, u_n = 0, step = 0;
    for (std::size_t begin = 0; begin < all.size(); begin += cfg.batch_size, ++step) {
      auto batch = all.subspan(begin, std::min(cfg.batch_size, all.size() - begin));
      auto loss = batch_loss(p, roster, batch, cfg.lambda_user);
      if (!std::isfinite(loss.group_sum) || !std::isfinite(loss.user_sum)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      g_sum += loss.group_sum;
      u_sum += loss.user_sum;
      g_n += loss.group_count;
      u_n += loss.user_count;
      if (!loss.objective.defined()) continue;
      p.zero_grad();
      backward(loss.objective);
      if (hooks.touched) {
        for (std::size_t k = 0; k < params.size(); ++k) {
          if ((*hooks.touched)[k] || !params[k].has_grad()) continue;
          auto g = params[k].grad();
          (*hooks.touched)[k] = std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
        }
      }
      adam_step(params, state, cfg.adam);
    }
    out.history.push_back({epoch, g_n ? g_sum / static_cast<double>(g_n) : 0.0,
                           u_n ? u_sum / static_cast<double>(u_n) : 0.0});
    if (cfg.checkpoint_path) save_checkpoint(*cfg.checkpoint_path, p, fit_meta(model_cfg, cfg, epoch));
    if (hooks.on_epoch && !hooks.on_epoch(p, out.history)) break;
  }
  p.zero_grad();
  return out;
}

}  // namespace mavenrec
