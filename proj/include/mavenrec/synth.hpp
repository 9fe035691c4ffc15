#pragma once

// Synthetic populations with a planted maven in every group.
//
// World model: user and item latents are standard Gaussian; a user's item
// distribution is softmax(u . v) over the catalog. A group draws items from
// the influence-weighted mixture of its members' distributions, where the
// maven holds `maven_weight` and the rest share the remainder equally.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mavenrec/data_store.hpp"
#include "mavenrec/errors.hpp"
#include "mavenrec/random.hpp"

namespace mavenrec {

struct SynthConfig {
  std::size_t n_users = 500;
  std::size_t n_items = 300;
  std::size_t n_groups = 200;
  std::size_t group_size_min = 2;
  std::size_t group_size_max = 8;
  // When set, sizes are min + Binomial(max - min, p) with p matched to this
  // mean instead of uniform on [min, max].
  std::optional<double> mean_group_size;
  std::size_t latent_dim = 8;
  double maven_weight = 0.8;
  std::size_t interactions_per_user = 20;
  std::size_t interactions_per_group = 20;
  // Give every item at least one user interaction so the catalog is fully
  // observable from the CSVs.
  bool cover_all_items = false;
  std::uint64_t seed = 1;

  void validate() const {
    auto bad = [](const std::string& why) { return ConfigError("synth config: " + why); };
    if (n_users == 0 || n_items == 0 || n_groups == 0 || latent_dim == 0) throw bad("counts must be positive");
    if (interactions_per_user == 0 || interactions_per_group == 0) throw bad("interaction counts must be positive");
    if (group_size_min == 0 || group_size_min > group_size_max) throw bad("group_size_range must satisfy 1 <= min <= max");
    if (group_size_max > n_users) {
      throw bad("group_size_range max " + std::to_string(group_size_max) + " exceeds n_users " + std::to_string(n_users));
    }
    if (interactions_per_user > n_items || interactions_per_group > n_items) {
      throw bad("per-entity interactions exceed n_items");
    }
    if (group_size_max >= 2) {
      const double uniform_share = 1.0 / static_cast<double>(std::max<std::size_t>(group_size_min, 2));
      if (!(maven_weight > uniform_share && maven_weight < 1.0)) {
        throw bad("maven_weight must lie in (1/group_size, 1) for every multi-member size");
      }
    }
    if (mean_group_size) {
      const double m = *mean_group_size;
      if (!(m >= static_cast<double>(group_size_min) && m <= static_cast<double>(group_size_max))) {
        throw bad("mean_group_size must lie within group_size_range");
      }
    }
  }
};

struct GroundTruth {
  std::vector<std::vector<double>> user_latents;  // by internal user id
  std::vector<std::vector<double>> item_latents;  // by internal item id
  std::vector<Id> maven_of;                        // by group: internal user id
  // by group: weight per member, aligned with InteractionStore::members(g)
  std::vector<std::vector<double>> influence;
};

struct SynthData {
  InteractionStore store;
  GroundTruth truth;
};

namespace detail {

inline std::string padded_id(char prefix, std::size_t i, std::size_t n) {
  const std::size_t width = std::to_string(n == 0 ? 0 : n - 1).size();
  std::string digits = std::to_string(i);
  return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

inline IdMap sequential_ids(char prefix, std::size_t n) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.insert(padded_id(prefix, i, n));
  return IdMap::from_ids(std::move(ids));
}

inline std::vector<double> softmax(std::vector<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : logits) v /= z;
  return logits;
}

/// Weighted sampling of k distinct indices without replacement
/// (exponential-key method); the returned order is the draw order.
template <class Rng>
std::vector<Id> weighted_sample_distinct(const std::vector<double>& weights, std::size_t k, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::pair<double, Id>> keys;
  keys.reserve(weights.size());
  for (Id i = 0; i < weights.size(); ++i) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    const double key = weights[i] > 0.0 ? -std::log(u) / weights[i] : std::numeric_limits<double>::infinity();
    keys.emplace_back(key, i);
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end());
  std::vector<Id> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(keys[i].second);
  return out;
}

}  // namespace detail

/// Item distribution of one user under the latent softmax model.
inline std::vector<double> user_preference(const GroundTruth& gt, Id user) {
  const auto& u = gt.user_latents.at(user);
  std::vector<double> logits(gt.item_latents.size());
  for (Id i = 0; i < logits.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) s += u[k] * gt.item_latents[i][k];
    logits[i] = s;
  }
  return detail::softmax(std::move(logits));
}

/// Influence-weighted mixture of the members' item distributions.
inline std::vector<double> group_preference(const GroundTruth& gt, const std::vector<Id>& members,
                                            const std::vector<double>& influence) {
  std::vector<double> p(gt.item_latents.size(), 0.0);
  for (std::size_t j = 0; j < members.size(); ++j) {
    auto pj = user_preference(gt, members[j]);
    for (Id i = 0; i < p.size(); ++i) p[i] += influence[j] * pj[i];
  }
  return p;
}

inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  GroundTruth gt;
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, {1}));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](std::size_t n) {
      std::vector<std::vector<double>> m(n, std::vector<double>(cfg.latent_dim));
      for (auto& row : m)
        for (auto& v : row) v = normal(rng);
      return m;
    };
    gt.user_latents = draw(cfg.n_users);
    gt.item_latents = draw(cfg.n_items);
  }

  std::vector<Interaction> user_item;
  std::vector<std::size_t> item_hits(cfg.n_items, 0);
  std::vector<std::int64_t> next_ts(cfg.n_users, 1);
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, {2}));
    for (Id u = 0; u < cfg.n_users; ++u) {
      auto items = detail::weighted_sample_distinct(user_preference(gt, u), cfg.interactions_per_user, rng);
      // Draw order favours likely items; timestamps follow a random order so
      // the latest interaction is an ordinary draw.
      std::shuffle(items.begin(), items.end(), rng);
      for (Id i : items) {
        user_item.push_back({u, i, next_ts[u]++});
        ++item_hits[i];
      }
    }
  }
  if (cfg.cover_all_items) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {3}));
    for (Id i = 0; i < cfg.n_items; ++i) {
      if (item_hits[i] > 0) continue;
      std::vector<double> logits(cfg.n_users);
      for (Id u = 0; u < cfg.n_users; ++u) {
        double s = 0.0;
        for (std::size_t k = 0; k < cfg.latent_dim; ++k) s += gt.user_latents[u][k] * gt.item_latents[i][k];
        logits[u] = s;
      }
      auto w = detail::softmax(std::move(logits));
      Id u = std::discrete_distribution<Id>(w.begin(), w.end())(rng);
      user_item.push_back({u, i, next_ts[u]++});
      ++item_hits[i];
    }
  }

  std::vector<std::vector<Id>> members(cfg.n_groups);
  std::vector<Interaction> group_item;
  gt.maven_of.resize(cfg.n_groups);
  gt.influence.resize(cfg.n_groups);
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, {4}));
    std::vector<Id> all_users(cfg.n_users);
    std::iota(all_users.begin(), all_users.end(), Id{0});
    for (Id g = 0; g < cfg.n_groups; ++g) {
      std::size_t size = cfg.group_size_min;
      const std::size_t spread = cfg.group_size_max - cfg.group_size_min;
      if (spread > 0) {
        if (cfg.mean_group_size) {
          const double p = (*cfg.mean_group_size - static_cast<double>(cfg.group_size_min)) / static_cast<double>(spread);
          size += std::binomial_distribution<std::size_t>(spread, p)(rng);
        } else {
          size += std::uniform_int_distribution<std::size_t>(0, spread)(rng);
        }
      }
      // partial Fisher-Yates for `size` distinct users
      for (std::size_t j = 0; j < size; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, cfg.n_users - 1);
        std::swap(all_users[j], all_users[pick(rng)]);
      }
      std::vector<Id> roster(all_users.begin(), all_users.begin() + static_cast<std::ptrdiff_t>(size));
      std::sort(roster.begin(), roster.end());
      const std::size_t maven_pos = std::uniform_int_distribution<std::size_t>(0, size - 1)(rng);
      std::vector<double> influence(size, size == 1 ? 1.0 : (1.0 - cfg.maven_weight) / static_cast<double>(size - 1));
      if (size > 1) influence[maven_pos] = cfg.maven_weight;

      auto dist = group_preference(gt, roster, influence);
      auto items = detail::weighted_sample_distinct(dist, cfg.interactions_per_group, rng);
      std::shuffle(items.begin(), items.end(), rng);
      std::int64_t ts = 1;
      for (Id i : items) group_item.push_back({g, i, ts++});

      gt.maven_of[g] = roster[maven_pos];
      gt.influence[g] = std::move(influence);
      members[g] = std::move(roster);
    }
  }

  InteractionStore store(detail::sequential_ids('u', cfg.n_users), detail::sequential_ids('i', cfg.n_items),
                         detail::sequential_ids('g', cfg.n_groups), std::move(user_item), std::move(group_item),
                         std::move(members));
  return {std::move(store), std::move(gt)};
}

/// {group_id: {"maven": user_id, "influence": {user_id: weight}}}
inline nlohmann::ordered_json ground_truth_json(const InteractionStore& store, const GroundTruth& gt) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (Id g = 0; g < store.num_groups(); ++g) {
    nlohmann::ordered_json infl = nlohmann::ordered_json::object();
    const auto& m = store.members(g);
    for (std::size_t j = 0; j < m.size(); ++j) infl[store.users().external(m[j])] = gt.influence[g][j];
    out[store.groups().external(g)] = {{"maven", store.users().external(gt.maven_of[g])}, {"influence", infl}};
  }
  return out;
}

inline void write_synth(const SynthData& data, const std::filesystem::path& dir) {
  save_dir(data.store, dir);
  std::ofstream out(dir / "ground_truth.json", std::ios::binary);
  out << ground_truth_json(data.store, data.truth).dump(2) << '\n';
}

/// Maven per group (internal ids) from a ground_truth.json file.
inline std::vector<std::optional<Id>> read_mavens(const std::filesystem::path& path, const InteractionStore& store) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open file");
  auto j = nlohmann::json::parse(in);
  std::vector<std::optional<Id>> out(store.num_groups());
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto g = store.groups().find(it.key());
    auto u = store.users().find(it.value().at("maven").get<std::string>());
    if (g && u) out[*g] = *u;
  }
  return out;
}

}  // namespace mavenrec
