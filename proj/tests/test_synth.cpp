#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <numeric>

#include "mavenrec/data_store.hpp"
#include "mavenrec/synth.hpp"
#include "test_support.hpp"

using namespace mavenrec;
using test::fresh_dir;
using test::read_file;

namespace {

std::vector<Id> top_k(const std::vector<double>& p, std::size_t k) {
  std::vector<Id> idx(p.size());
  std::iota(idx.begin(), idx.end(), Id{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](Id a, Id b) { return p[a] > p[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace

TEST(Synth, SingletonGroupsHaveUnitInfluence) {
  SynthConfig c;
  c.group_size_min = c.group_size_max = 1;
  auto d = generate(c);
  for (Id g = 0; g < d.store.num_groups(); ++g) {
    ASSERT_EQ(d.truth.influence[g], std::vector<double>{1.0});
    EXPECT_EQ(d.truth.maven_of[g], d.store.members(g)[0]);
  }
}

TEST(Synth, InfluenceSplitsTheRemainderEvenly) {
  SynthConfig c;
  c.group_size_min = c.group_size_max = 5;
  c.maven_weight = 0.8;
  auto d = generate(c);
  for (Id g = 0; g < d.store.num_groups(); ++g) {
    const auto& w = d.truth.influence[g];
    ASSERT_EQ(w.size(), 5u);
    auto sorted = w;
    std::sort(sorted.rbegin(), sorted.rend());
    EXPECT_DOUBLE_EQ(sorted[0], 0.8);
    for (std::size_t j = 1; j < 5; ++j) EXPECT_NEAR(sorted[j], 0.05, 1e-15);
  }
}

TEST(Synth, InfluenceIsADistributionPeakingAtTheMaven) {
  auto d = generate(SynthConfig{});
  std::set<std::size_t> sizes;
  for (Id g = 0; g < d.store.num_groups(); ++g) {
    const auto& w = d.truth.influence[g];
    const auto& m = d.store.members(g);
    ASSERT_EQ(w.size(), m.size());
    sizes.insert(m.size());
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    for (double x : w) EXPECT_GE(x, 0.0);
    const auto arg = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
    EXPECT_EQ(m[arg], d.truth.maven_of[g]);
    EXPECT_EQ(std::count(w.begin(), w.end(), w[arg]), 1);
  }
  EXPECT_EQ(*sizes.begin(), 2u);
  EXPECT_EQ(*sizes.rbegin(), 8u);
}

TEST(Synth, MavenTopItemsDominateGroupChoices) {
  SynthConfig c;
  c.maven_weight = 0.9;
  c.n_groups = 500;
  c.interactions_per_group = 20;  // 10^4 group interactions
  auto d = generate(c);
  ASSERT_EQ(d.store.group_item().size(), 10000u);
  std::size_t maven_hits = 0, best_other_hits = 0;
  for (Id g = 0; g < d.store.num_groups(); ++g) {
    const auto& pos = d.store.positives(EntityKind::group, g);
    auto hits = [&](Id u) {
      auto top = top_k(user_preference(d.truth, u), 10);
      std::size_t n = 0;
      for (Id i : top) n += std::binary_search(pos.begin(), pos.end(), i);
      return n;
    };
    std::size_t best = 0;
    for (Id u : d.store.members(g)) {
      if (u == d.truth.maven_of[g]) maven_hits += hits(u);
      else best = std::max(best, hits(u));
    }
    best_other_hits += best;
  }
  EXPECT_GT(maven_hits, best_other_hits);
}

TEST(Synth, SameSeedGivesIdenticalFiles) {
  SynthConfig c;
  c.n_groups = 40;
  auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b"), other = fresh_dir("synth_other");
  write_synth(generate(c), a);
  write_synth(generate(c), b);
  for (const char* f : {"user_item.csv", "group_item.csv", "membership.csv", "ground_truth.json"}) {
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  }
  c.seed = 2;
  write_synth(generate(c), other);
  EXPECT_NE(read_file(a / "group_item.csv"), read_file(other / "group_item.csv"));
}

TEST(Synth, OutputReloadsAsAValidStore) {
  SynthConfig c;
  c.n_groups = 60;
  auto d = generate(c);
  auto dir = fresh_dir("synth_reload");
  write_synth(d, dir);
  auto back = load_dir(dir);
  EXPECT_EQ(back, d.store);
  auto mavens = read_mavens(dir / "ground_truth.json", back);
  for (Id g = 0; g < back.num_groups(); ++g) {
    ASSERT_TRUE(mavens[g].has_value());
    EXPECT_EQ(*mavens[g], d.truth.maven_of[g]);
  }
  for (const auto& r : back.group_item()) EXPECT_LT(r.item, back.num_items());
  for (Id g = 0; g < back.num_groups(); ++g) EXPECT_TRUE(std::is_sorted(back.members(g).begin(), back.members(g).end()));
}

TEST(Synth, GroupChoicesApproachTheMavenAsWeightGrows) {
  const std::vector<double> weights{0.5, 0.7, 0.9, 0.99};
  std::vector<double> tv(weights.size(), 0.0);
  for (std::size_t w = 0; w < weights.size(); ++w) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SynthConfig c;
      c.n_items = 100;
      c.n_groups = 100;
      c.group_size_min = c.group_size_max = 3;
      c.interactions_per_group = 30;
      c.maven_weight = weights[w];
      c.seed = seed;
      auto d = generate(c);
      double sum = 0.0;
      for (Id g = 0; g < d.store.num_groups(); ++g) {
        auto p = user_preference(d.truth, d.truth.maven_of[g]);
        std::vector<double> emp(c.n_items, 0.0);
        for (Id i : d.store.positives(EntityKind::group, g)) emp[i] += 1.0 / static_cast<double>(c.interactions_per_group);
        double dist = 0.0;
        for (Id i = 0; i < c.n_items; ++i) dist += std::abs(emp[i] - p[i]);
        sum += 0.5 * dist;
      }
      tv[w] += sum / static_cast<double>(d.store.num_groups()) / 5.0;
    }
  }
  for (std::size_t w = 1; w < weights.size(); ++w) EXPECT_LT(tv[w], tv[w - 1]) << "maven_weight " << weights[w];
}

TEST(Synth, MeanGroupSizeTargetsTheRequestedAverage) {
  SynthConfig c;
  c.n_users = 690;
  c.n_items = 7710;
  c.n_groups = 290;
  c.group_size_min = 2;
  c.group_size_max = 4;
  c.mean_group_size = 2.08;
  c.cover_all_items = true;
  const auto t0 = std::chrono::steady_clock::now();
  auto d = generate(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 10.0);
  EXPECT_NEAR(d.store.mean_group_size(), 2.08, 0.1);
  std::set<Id> items;
  for (const auto& r : d.store.user_item()) items.insert(r.item);
  EXPECT_EQ(items.size(), 7710u);
}

TEST(Synth, InvalidConfigsAreRejected) {
  auto expect_bad = [](auto mutate) {
    SynthConfig c;
    mutate(c);
    EXPECT_THROW(generate(c), ConfigError);
  };
  expect_bad([](SynthConfig& c) { c.group_size_max = c.n_users + 1; });
  expect_bad([](SynthConfig& c) { c.group_size_min = 5, c.group_size_max = 3; });
  expect_bad([](SynthConfig& c) { c.maven_weight = 0.5; });  // not above 1/2 for pairs
  expect_bad([](SynthConfig& c) { c.maven_weight = 1.0; });
  expect_bad([](SynthConfig& c) { c.n_items = 0; });
  expect_bad([](SynthConfig& c) { c.interactions_per_group = c.n_items + 1; });
  expect_bad([](SynthConfig& c) { c.mean_group_size = 9.0; });
}
