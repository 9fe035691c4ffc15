// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <map>
#include <set>

#include "mavenrec/eval.hpp"
#include "mavenrec/synth.hpp"
#include "mavenrec/training.hpp"
#include "test_support.hpp"

using namespace mavenrec;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity of the full loss

void criterion_gradients() {
  const auto t0 = Clock::now();
  // Three users in one group; one more user for the user tower.
  InteractionStore store(IdMap::from_ids({"u0", "u1", "u2", "u3"}), IdMap::from_ids({"i0", "i1", "i2", "i3", "i4"}),
                         IdMap::from_ids({"g0"}), {{0, 1, 1}, {3, 2, 1}}, {{0, 0, 1}}, {{0, 1, 2}});
  ModelConfig mc;
  mc.embedding_dim = 4;
  mc.hidden_widths = {6, 3};
  auto p = init_model(mc, 4, 5, 11);
  // Random values everywhere, so the zero-initialized residual outputs and
  // unit layer-norm gains do not hide gradient paths.
  test::randomize(p, 12, 0.6);
  const std::vector<Triple> batch{{EntityKind::group, 0, 0, 3},
                                  {EntityKind::group, 0, 0, 4},
                                  {EntityKind::user, 0, 1, 2},
                                  {EntityKind::user, 3, 2, 0}};
  auto r = test::check_gradients([&] { return batch_loss(p, store.membership(), batch, 0.5).objective; },
                                 p.named_tensors(), 1e-5);
  const double secs = seconds_since(t0);
  report(1, r.max_rel < 1e-4 && secs < 60.0, "analytic vs central-difference gradients (h=1e-5), all parameters",
         fmt("%zu entries, max rel err %.2e (%s), %.2fs", r.checked, r.max_rel, r.worst.c_str(), secs));
}

// ---------------------------------------------------------------------------
// 2. Softmax and attention contracts

void criterion_attention() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_sum = 0.0, worst_shift = 0.0;
  std::size_t negative = 0, masked_nonzero = 0, argmax_moved = 0;
  const std::size_t n_groups = 10000;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t d = 2 + rng() % 15, m = 1 + rng() % 12;
    auto att = make_attention_params(d, 1 + rng() % 20, rng());
    for (Tensor t : {att.H_v, att.H_u, att.b, att.A})
      for (auto& v : t.mutable_data()) v = 1.5 * u(rng);
    auto item = test::random_tensor({d}, rng(), -1, 1, false);
    auto members = test::random_tensor({m, d}, rng(), -1, 1, false);
    std::vector<bool> mask(m);
    bool any = false;
    for (std::size_t j = 0; j < m; ++j) any |= (mask[j] = rng() % 4 != 0);
    if (!any) mask[rng() % m] = true;

    auto w = attention_weights(item, members, mask, att);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      negative += w[j] < 0.0;
      masked_nonzero += !mask[j] && w[j] != 0.0;
      s += w[j];
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));

    // Shift invariance of the underlying masked softmax.
    auto z = reshape(attention_logits(embedding_lookup(reshape(item, {1, d}), std::vector<std::size_t>(m, 0)), members, att), {m});
    const double c = 50.0 * u(rng);
    auto a = masked_softmax(z, mask), b = masked_softmax(add_scalar(z, c), mask);
    std::size_t arg_a = 0, arg_b = 0;
    for (std::size_t j = 0; j < m; ++j) {
      worst_shift = std::max(worst_shift, std::abs(a[j] - b[j]));
      if (a[j] > a[arg_a]) arg_a = j;
      if (b[j] > b[arg_b]) arg_b = j;
    }
    argmax_moved += arg_a != arg_b;
  }
  const bool pass = negative == 0 && masked_nonzero == 0 && worst_sum <= 1e-9 && argmax_moved == 0 && worst_shift <= 1e-12;
  report(2, pass, "attention weights: nonnegative, masked zero, sum 1; softmax shift invariance",
         fmt("%zu groups, negative %zu, masked nonzero %zu, max |sum-1| %.1e, argmax changes %zu, max shift diff %.1e",
             n_groups, negative, masked_nonzero, worst_sum, argmax_moved, worst_shift));
}

// ---------------------------------------------------------------------------
// Shared trained studies for criteria 3, 5 and 6

ModelConfig study_model() {
  ModelConfig mc;
  mc.embedding_dim = 16;
  mc.hidden_widths = {48, 24, 8};
  return mc;
}

TrainConfig study_train(std::uint64_t seed, std::size_t epochs) {
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs = epochs;
  tc.adam.learning_rate = 0.005;
  tc.lambda_user = 10.0;
  return tc;
}

constexpr std::size_t kSeeds = 5;
constexpr std::size_t kRankingEpoch = 20;  // ranking metrics are read here
constexpr std::size_t kConvergedEpoch = 80;

struct SeedOutcome {
  EvalReport ranking;         // every method, snapshot at kRankingEpoch
  double maven_recovery = 0;  // at the final epoch
  double seconds = 0;
};

/// Share of groups with at least three members whose mean attention over
/// the group's training items peaks at the planted maven.
double maven_recovery(const ModelParameters& p, const InteractionStore& train, const GroundTruth& truth) {
  std::size_t hit = 0, n = 0;
  for (Id g = 0; g < train.num_groups(); ++g) {
    const auto& members = train.members(g);
    const auto& items = train.positives(EntityKind::group, g);
    if (members.size() < 3 || items.empty()) continue;
    std::vector<double> mean(members.size(), 0.0);
    for (Id i : items) {
      auto a = member_attention(p, train.membership(), g, i);
      for (std::size_t j = 0; j < a.size(); ++j) mean[j] += a[j];
    }
    const auto arg = std::max_element(mean.begin(), mean.end()) - mean.begin();
    hit += members[arg] == truth.maven_of[g];
    ++n;
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

SeedOutcome run_seed(double maven_weight, std::uint64_t seed, std::size_t epochs) {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.seed = seed;
  sc.maven_weight = maven_weight;
  auto data = generate(sc);
  auto split = split_leave_one_out(data.store, seed);
  SeedOutcome out;
  FitHooks hooks;
  hooks.on_epoch = [&](const ModelParameters& p, const std::vector<EpochLoss>& h) {
    if (h.size() == kRankingEpoch) {
      EvalOptions opt;
      opt.methods = all_methods();
      opt.seed = seed;
      out.ranking = evaluate(p, split.group_test, data.store, opt);
    }
    return true;
  };
  auto fitted = fit(split.train, study_model(), study_train(seed, epochs), hooks);
  out.maven_recovery = maven_recovery(fitted.params, split.train, data.truth);
  out.seconds = seconds_since(t0);
  return out;
}

std::map<double, std::vector<SeedOutcome>> studies;

const std::vector<SeedOutcome>& study(double maven_weight, std::size_t epochs) {
  auto& s = studies[maven_weight];
  if (s.empty()) {
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) s.push_back(run_seed(maven_weight, seed, epochs));
  }
  return s;
}

double mean_of(const std::vector<SeedOutcome>& s, auto field) {
  double acc = 0.0;
  for (const auto& o : s) acc += field(o);
  return acc / static_cast<double>(s.size());
}

double mean_hr10(const std::vector<SeedOutcome>& s, const std::string& m) {
  return mean_of(s, [&](const SeedOutcome& o) { return o.ranking.methods.at(m).hit_ratio.at(10); });
}

double mean_mrr(const std::vector<SeedOutcome>& s, const std::string& m) {
  return mean_of(s, [&](const SeedOutcome& o) { return o.ranking.methods.at(m).mrr; });
}

// 3. Maven recovery
void criterion_mavens() {
  const auto& s = study(0.8, kConvergedEpoch);
  const double acc = mean_of(s, [](const SeedOutcome& o) { return o.maven_recovery; });
  const double secs = mean_of(s, [](const SeedOutcome& o) { return o.seconds; }) * static_cast<double>(s.size());
  std::string per_seed;
  for (const auto& o : s) per_seed += fmt(" %.3f", o.maven_recovery);
  report(3, acc >= 0.8 && secs < 600.0, "argmax attention finds the planted maven in >= 80% of groups of size >= 3",
         fmt("mean %.3f over %zu seeds (per seed:%s), %d epochs, %.0fs", acc, s.size(), per_seed.c_str(),
             int(kConvergedEpoch), secs));
}

// 5. Ablation ordering
void criterion_ablation() {
  const auto& s = study(0.8, kConvergedEpoch);
  const double full = mean_hr10(s, "siagr"), g = mean_hr10(s, "siagr-g"), m = mean_hr10(s, "siagr-m");
  report(5, full >= std::max(g, m) - 0.01, "mean HR@10 of siagr >= max(siagr-g, siagr-m) (ties within 0.01)",
         fmt("siagr %.3f, siagr-g %.3f, siagr-m %.3f over %zu seeds (maven_weight 0.8)", full, g, m, s.size()));
}

// 6. Baseline ordering
void criterion_baselines() {
  const auto& s = study(0.9, kRankingEpoch);
  const double hr = mean_hr10(s, "siagr"), mr = mean_mrr(s, "siagr");
  const double hr_avg = mean_hr10(s, "ncf-avg"), hr_lm = mean_hr10(s, "ncf-lm");
  const double mr_avg = mean_mrr(s, "ncf-avg"), mr_lm = mean_mrr(s, "ncf-lm");
  report(6, hr > hr_avg && hr > hr_lm && mr > mr_avg && mr > mr_lm,
         "siagr strictly beats ncf-avg and ncf-lm on HR@10 and MRR (maven_weight 0.9)",
         fmt("HR@10 %.3f vs %.3f / %.3f, MRR %.4f vs %.4f / %.4f over %zu seeds", hr, hr_avg, hr_lm, mr, mr_avg, mr_lm,
             s.size()));
}

// ---------------------------------------------------------------------------
// 4. Overfit sanity

void criterion_overfit() {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.n_users = 100;
  sc.n_items = 100;
  sc.n_groups = 50;
  sc.interactions_per_user = 10;
  sc.interactions_per_group = 10;
  sc.seed = 4;
  auto data = generate(sc);
  const auto& store = data.store;
  ModelConfig mc;
  mc.embedding_dim = 16;
  mc.hidden_widths = {48, 24, 8};
  TrainConfig tc;
  tc.epochs = 500;
  tc.seed = 4;
  tc.adam.learning_rate = 0.01;

  std::vector<TestCase> positives;
  for (const auto& r : store.group_item()) positives.push_back({EntityKind::group, r.entity, r.item});
  auto cases = build_candidates(store, positives, 100, 4, nullptr);
  EvalOptions opt;
  double hr = 0.0, loss = 1e9;
  std::size_t reached = 0;
  FitHooks hooks;
  hooks.on_epoch = [&](const ModelParameters& p, const std::vector<EpochLoss>& h) {
    loss = h.back().group_loss;
    if (h.size() % 10 != 0) return true;
    hr = evaluate_candidates(p, store.membership(), cases, opt).methods.at("siagr").hit_ratio.at(10);
    if (loss < 0.05 && hr > 0.9) {
      reached = h.size();
      return false;
    }
    return true;
  };
  fit(store, mc, tc, hooks);
  report(4, reached > 0, "50 groups / 100 items / d=16: pairwise loss < 0.05 and train HR@10 > 0.9 within 500 epochs",
         fmt("reached at epoch %zu: group loss %.4f, train HR@10 %.3f over %zu positives, %.0fs", reached, loss, hr,
             cases.size(), seconds_since(t0)));
}

// ---------------------------------------------------------------------------
// 7. Metric oracle

void criterion_metrics() {
  std::mt19937_64 rng(7);
  std::size_t hr_mismatch = 0;
  double worst_mrr = 0.0;
  const std::size_t maps = 1000;
  for (std::size_t trial = 0; trial < maps; ++trial) {
    // One score map per "test case"; metrics over a batch of 1..50 maps.
    const std::size_t cases = 1 + rng() % 50;
    std::vector<std::size_t> ranks;
    std::vector<std::size_t> brute;
    for (std::size_t c = 0; c < cases; ++c) {
      const std::size_t n = 1 + rng() % 101;
      std::map<Id, double> scores;
      while (scores.size() < n) scores[rng() % 5000] = static_cast<double>(rng() % 9) * 0.25;
      auto it = scores.begin();
      std::advance(it, rng() % n);
      const Id held = it->first;
      ranks.push_back(rank_candidates(scores, held));
      std::size_t r = 1;
      for (const auto& [id, s] : scores) r += s > it->second || (s == it->second && id < held);
      brute.push_back(r);
    }
    for (std::size_t cut : {1u, 5u, 10u, 20u, 50u}) {
      std::size_t hits = 0;
      for (auto r : brute) hits += r <= cut;
      hr_mismatch += hit_ratio(ranks, cut) != static_cast<double>(hits) / static_cast<double>(cases);
    }
    long double rr = 0.0L;
    for (auto r : brute) rr += 1.0L / static_cast<long double>(r);
    worst_mrr = std::max(worst_mrr, std::abs(mrr(ranks) - static_cast<double>(rr / cases)));
  }

  // Null model: an untrained scorer on held-out items that carry no signal.
  const std::size_t n_items = 5000, n_groups = 2000;
  std::set<std::string> items, groups;
  for (std::size_t i = 0; i < n_items; ++i) items.insert("i" + std::to_string(10000 + i));
  for (std::size_t g = 0; g < n_groups; ++g) groups.insert("g" + std::to_string(10000 + g));
  std::vector<Interaction> gi;
  std::vector<TestCase> tests;
  for (Id g = 0; g < n_groups; ++g) {
    const Id item = rng() % n_items;
    gi.push_back({g, item, 1});
    tests.push_back({EntityKind::group, g, item});
  }
  InteractionStore store(IdMap::from_ids({"u"}), IdMap::from_ids(items), IdMap::from_ids(groups), {}, gi,
                         std::vector<std::vector<Id>>(n_groups, std::vector<Id>{0}));
  ModelConfig mc;
  mc.embedding_dim = 8;
  mc.hidden_widths = {12, 4};
  auto p = init_model(mc, 1, n_items, 9);
  test::randomize(p, 10);
  const double null_mrr = evaluate(p, tests, store, EvalOptions{}).methods.at("siagr").mrr;
  double expect = 0.0, second = 0.0;
  for (int k = 1; k <= 101; ++k) expect += 1.0 / k / 101.0, second += 1.0 / (double(k) * k) / 101.0;
  const double sigma = std::sqrt((second - expect * expect) / static_cast<double>(n_groups));

  report(7, hr_mismatch == 0 && worst_mrr <= 1e-12 && std::abs(null_mrr - expect) <= 3.0 * sigma,
         "HR@n exact and MRR within 1e-12 of brute force; null MRR within 3 sigma of uniform",
         fmt("%zu batches of score maps, HR mismatches %zu, max MRR diff %.1e; null MRR %.4f vs %.4f +- %.4f (3 sigma)",
             maps, hr_mismatch, worst_mrr, null_mrr, expect, 3.0 * sigma));
}

// ---------------------------------------------------------------------------
// 8. Determinism

void criterion_determinism() {
  SynthConfig sc;
  sc.n_users = 150;
  sc.n_items = 120;
  sc.n_groups = 60;
  sc.seed = 8;
  auto data = generate(sc);
  auto split = split_leave_one_out(data.store, 8);
  ModelConfig mc;
  mc.embedding_dim = 8;
  mc.hidden_widths = {24, 8};
  auto dir = test::fresh_dir("acceptance_determinism");
  std::vector<std::string> checkpoints;
  std::vector<std::vector<EpochLoss>> histories;
  std::vector<EvalReport> reports;
  for (int run = 0; run < 2; ++run) {
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 8;
    tc.checkpoint_path = dir / ("run" + std::to_string(run) + ".json");
    auto r = fit(split.train, mc, tc);
    checkpoints.push_back(test::read_file(*tc.checkpoint_path));
    histories.push_back(r.history);
    EvalOptions opt;
    opt.methods = all_methods();
    opt.seed = 8;
    reports.push_back(evaluate(r.params, split.group_test, data.store, opt));
  }
  const bool same_ck = !checkpoints[0].empty() && checkpoints[0] == checkpoints[1];
  const bool same_hist = histories[0] == histories[1];
  const bool same_report = reports[0] == reports[1] && reports[0].to_csv() == reports[1].to_csv();
  report(8, same_ck && same_hist && same_report, "identical config and seed give bitwise-identical artifacts",
         fmt("checkpoint bytes %s (%zu B), loss history %s, eval report %s", same_ck ? "equal" : "DIFFER",
             checkpoints[0].size(), same_hist ? "equal" : "DIFFER", same_report ? "equal" : "DIFFER"));
}

// ---------------------------------------------------------------------------
// 9. Scale

void criterion_scale() {
  SynthConfig sc;
  sc.n_users = 690;
  sc.n_items = 7710;
  sc.n_groups = 290;
  sc.group_size_min = 2;
  sc.group_size_max = 4;
  sc.mean_group_size = 2.08;
  sc.cover_all_items = true;
  sc.interactions_per_user = 200;
  sc.interactions_per_group = 20;
  sc.seed = 9;
  auto data = generate(sc);
  auto split = split_leave_one_out(data.store, 9);
  TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 9;
  const auto t0 = Clock::now();
  auto r = fit(split.train, ModelConfig{}, tc);
  const double train_secs = seconds_since(t0);
  EvalOptions opt;
  opt.methods = all_methods();
  const auto t1 = Clock::now();
  auto rep = evaluate(r.params, split.group_test, data.store, opt);
  const double eval_secs = seconds_since(t1);
  report(9, train_secs < 60.0 && eval_secs < 30.0,
         "290 groups / 690 users / 7710 items: one epoch < 60 s, evaluation < 30 s",
         fmt("%zu user + %zu group training interactions, mean group size %.2f; epoch %.1fs, eval of %zu cases x %zu "
             "methods %.1fs (single thread)",
             split.train.user_item().size(), split.train.group_item().size(), data.store.mean_group_size(), train_secs,
             rep.test_cases, rep.method_order.size(), eval_secs));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto run = [&](int id, void (*f)()) {
    if (wanted.empty() || wanted.count(id)) f();
  };
  run(1, criterion_gradients);
  run(2, criterion_attention);
  run(3, criterion_mavens);
  run(4, criterion_overfit);
  run(5, criterion_ablation);
  run(6, criterion_baselines);
  run(7, criterion_metrics);
  run(8, criterion_determinism);
  run(9, criterion_scale);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
