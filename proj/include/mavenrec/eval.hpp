#pragma once

// Top-N evaluation: each test case ranks its held-out item against sampled
// items the entity never interacted with; HR@n and MRR aggregate the ranks.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mavenrec/data_store.hpp"
#include "mavenrec/model.hpp"
#include "mavenrec/random.hpp"
#include "mavenrec/tensor.hpp"

namespace mavenrec {

enum class Method { siagr, siagr_g, siagr_m, ncf_avg, ncf_lm };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::siagr: return "siagr";
    case Method::siagr_g: return "siagr-g";
    case Method::siagr_m: return "siagr-m";
    case Method::ncf_avg: return "ncf-avg";
    case Method::ncf_lm: return "ncf-lm";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (auto m : {Method::siagr, Method::siagr_g, Method::siagr_m, Method::ncf_avg, Method::ncf_lm}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown method '" + s + "' (expected siagr, siagr-g, siagr-m, ncf-avg, ncf-lm)");
}

inline std::vector<Method> parse_methods(const std::string& csv) {
  std::vector<Method> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(parse_method(tok));
  }
  if (out.empty()) throw std::invalid_argument("no evaluation methods given");
  return out;
}

inline std::vector<Method> all_methods() {
  return {Method::siagr, Method::siagr_g, Method::siagr_m, Method::ncf_avg, Method::ncf_lm};
}

// ---------------------------------------------------------------------------
// Metrics

/// 1 + #candidates scoring strictly higher + #equal-scoring candidates with a
/// smaller item id. Ties are broken by item id so ranks are reproducible.
inline std::size_t rank_candidates(std::span<const Id> items, std::span<const double> scores, Id held_out) {
  if (items.size() != scores.size()) throw std::invalid_argument("rank_candidates: items and scores differ in length");
  auto it = std::find(items.begin(), items.end(), held_out);
  if (it == items.end()) throw std::invalid_argument("rank_candidates: held-out item is not among the candidates");
  const double target = scores[static_cast<std::size_t>(it - items.begin())];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i] == held_out) continue;
    if (scores[i] > target || (scores[i] == target && items[i] < held_out)) ++rank;
  }
  return rank;
}

inline std::size_t rank_candidates(const std::map<Id, double>& scores, Id held_out) {
  std::vector<Id> items;
  std::vector<double> values;
  for (const auto& [i, s] : scores) {
    items.push_back(i);
    values.push_back(s);
  }
  return rank_candidates(items, values, held_out);
}

inline double hit_ratio(std::span<const std::size_t> ranks, std::size_t n) {
  if (ranks.empty()) throw std::invalid_argument("hit_ratio: no ranks");
  std::size_t hits = 0;
  for (auto r : ranks) hits += r <= n;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

inline double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: no ranks");
  double s = 0.0;
  for (auto r : ranks) s += 1.0 / static_cast<double>(r);
  return s / static_cast<double>(ranks.size());
}

// ---------------------------------------------------------------------------
// Static aggregation baselines

enum class Aggregation { average, least_misery };

inline double aggregate_scores(std::span<const double> member_scores, Aggregation strategy) {
  if (member_scores.empty()) throw std::invalid_argument("aggregate_scores: empty group");
  if (strategy == Aggregation::least_misery) return *std::min_element(member_scores.begin(), member_scores.end());
  double s = 0.0;
  for (double v : member_scores) s += v;
  return s / static_cast<double>(member_scores.size());
}

/// Group scores for `items` by aggregating the user tower over the members.
inline std::vector<double> score_baseline(const ModelParameters& p, const std::vector<Id>& members,
                                          std::span<const Id> items, Aggregation strategy) {
  if (members.empty()) throw std::invalid_argument("score_baseline: empty group");
  NoGradGuard no_grad;
  const std::size_t m = members.size(), c = items.size();
  std::vector<Id> users, its;
  users.reserve(m * c);
  its.reserve(m * c);
  for (Id u : members)
    for (Id i : items) {
      users.push_back(u);
      its.push_back(i);
    }
  auto s = score_users(p, users, its);
  std::vector<double> out(c);
  std::vector<double> col(m);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t j = 0; j < m; ++j) col[j] = s[j * c + k];
    out[k] = aggregate_scores(col, strategy);
  }
  return out;
}

inline double score_baseline(const ModelParameters& p, const std::vector<Id>& members, Id item, Aggregation strategy) {
  const Id i[1]{item};
  return score_baseline(p, members, i, strategy)[0];
}

// ---------------------------------------------------------------------------
// Protocol

struct EvalOptions {
  std::size_t eval_negatives = 100;
  std::uint64_t seed = 1;
  std::vector<std::size_t> cutoffs{5, 10};
  std::vector<Method> methods{Method::siagr};
  std::size_t threads = 1;
  std::string config_hash;
};

struct MethodMetrics {
  std::map<std::size_t, double> hit_ratio;
  double mrr = 0.0;
  std::vector<std::size_t> ranks;  // per evaluated case, in test order

  bool operator==(const MethodMetrics&) const = default;
};

struct EvalReport {
  std::vector<std::string> method_order;
  std::map<std::string, MethodMetrics> methods;
  std::size_t test_cases = 0;
  std::size_t skipped = 0;
  std::size_t eval_negatives = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  bool operator==(const EvalReport&) const = default;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["test_cases"] = test_cases;
    j["skipped"] = skipped;
    j["eval_negatives"] = eval_negatives;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    auto& ms = j["methods"] = nlohmann::ordered_json::object();
    for (const auto& name : method_order) {
      const auto& m = methods.at(name);
      nlohmann::ordered_json hr = nlohmann::ordered_json::object();
      for (const auto& [n, v] : m.hit_ratio) hr[std::to_string(n)] = v;
      ms[name] = {{"hr", hr}, {"mrr", m.mrr}};
    }
    return j;
  }

  /// method,metric,n,value
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "method,metric,n,value\n";
    for (const auto& name : method_order) {
      const auto& m = methods.at(name);
      for (const auto& [n, v] : m.hit_ratio) os << name << ",hr," << n << ',' << v << '\n';
      os << name << ",mrr,," << m.mrr << '\n';
    }
    return os.str();
  }
};

/// Candidate list of one test case: the held-out item first, then sampled
/// negatives.
struct CandidateSet {
  TestCase test;
  std::vector<Id> items;
};

/// Draws negatives from items the entity never interacted with in `store`
/// (the full data, so held-out items cannot reappear as negatives). Entities
/// with no such item are skipped; fewer than `eval_negatives` eligible items
/// yields a shorter list.
inline std::vector<CandidateSet> build_candidates(const InteractionStore& store, std::span<const TestCase> tests,
                                                  std::size_t eval_negatives, std::uint64_t seed, std::size_t* skipped) {
  std::vector<CandidateSet> out;
  std::size_t skip = 0;
  for (std::size_t c = 0; c < tests.size(); ++c) {
    const auto& t = tests[c];
    const auto eligible = store.num_items() - store.positives(t.kind, t.entity).size();
    if (eligible == 0) {
      ++skip;
      continue;
    }
    std::mt19937_64 rng(derive_seed(seed, {0xe7a1, c}));
    CandidateSet cs{t, {t.item}};
    auto negs = sample_negatives(store, t.kind, t.entity, std::min(eval_negatives, eligible), rng);
    cs.items.insert(cs.items.end(), negs.begin(), negs.end());
    out.push_back(std::move(cs));
  }
  if (skipped) *skipped = skip;
  return out;
}

inline std::vector<double> method_scores(const ModelParameters& p, const Membership& roster, const CandidateSet& cs,
                                         Method method) {
  NoGradGuard no_grad;
  if (cs.test.kind == EntityKind::user) {
    std::vector<Id> users(cs.items.size(), cs.test.entity);
    auto s = score_users(p, users, cs.items);
    return {s.data().begin(), s.data().end()};
  }
  switch (method) {
    case Method::ncf_avg: return score_baseline(p, roster.at(cs.test.entity), cs.items, Aggregation::average);
    case Method::ncf_lm: return score_baseline(p, roster.at(cs.test.entity), cs.items, Aggregation::least_misery);
    default: break;
  }
  const Variant v = method == Method::siagr_g ? Variant::siagr_g
                    : method == Method::siagr_m ? Variant::siagr_m
                                                : Variant::siagr;
  std::vector<Id> groups(cs.items.size(), cs.test.entity);
  auto s = score_groups(p, roster, groups, cs.items, v);
  return {s.data().begin(), s.data().end()};
}

/// Ranks every candidate set under every method. With threads > 1 cases are
/// split into contiguous chunks; results are merged in test order.
inline EvalReport evaluate_candidates(const ModelParameters& p, const Membership& roster,
                                      const std::vector<CandidateSet>& cases, const EvalOptions& opt) {
  if (cases.empty()) throw std::invalid_argument("evaluate: no test cases");
  if (opt.methods.empty()) throw std::invalid_argument("evaluate: no methods");
  EvalReport report;
  report.test_cases = cases.size();
  report.eval_negatives = opt.eval_negatives;
  report.seed = opt.seed;
  report.config_hash = opt.config_hash;

  const std::size_t nm = opt.methods.size();
  std::vector<std::vector<std::size_t>> ranks(nm, std::vector<std::size_t>(cases.size()));
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c)
      for (std::size_t k = 0; k < nm; ++k) {
        auto s = method_scores(p, roster, cases[c], opt.methods[k]);
        ranks[k][c] = rank_candidates(cases[c].items, s, cases[c].test.item);
      }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.threads, cases.size()));
  if (threads == 1) {
    work(0, cases.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (cases.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(cases.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  for (std::size_t k = 0; k < nm; ++k) {
    const auto name = to_string(opt.methods[k]);
    MethodMetrics mm;
    for (auto n : opt.cutoffs) mm.hit_ratio[n] = hit_ratio(ranks[k], n);
    mm.mrr = mrr(ranks[k]);
    mm.ranks = std::move(ranks[k]);
    report.method_order.push_back(name);
    report.methods[name] = std::move(mm);
  }
  return report;
}

inline EvalReport evaluate(const ModelParameters& p, std::span<const TestCase> tests, const InteractionStore& store,
                           const EvalOptions& opt) {
  if (tests.empty()) throw std::invalid_argument("evaluate: no test cases");
  std::size_t skipped = 0;
  auto cases = build_candidates(store, tests, opt.eval_negatives, opt.seed, &skipped);
  auto report = evaluate_candidates(p, store.membership(), cases, opt);
  report.skipped = skipped;
  return report;
}

}  // namespace mavenrec
