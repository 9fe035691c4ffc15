#include <gtest/gtest.h>

#include <cmath>

#include "mavenrec/model.hpp"
#include "test_support.hpp"

using namespace mavenrec;
using test::check_gradients;
using test::fresh_dir;
using test::random_tensor;
using test::randomize;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

ModelConfig toy_config(Variant v = Variant::siagr) {
  ModelConfig c;
  c.embedding_dim = 4;
  c.hidden_widths = {6, 3};
  c.encoder_heads = 2;
  c.variant = v;
  return c;
}

const Membership kRoster{{0, 2, 4}, {1}, {3, 4}, {0, 1, 2, 3, 4}};

/// Per-pair reference built from the single-group primitives rather than the
/// batched path.
double reference_group_score(const ModelParameters& p, const Membership& roster, Id g, Id item, Variant v) {
  NoGradGuard no_grad;
  auto members = embedding_lookup(p.user_embeddings, roster[g]);
  const Id ids[1]{item};
  auto item_vec = reshape(embedding_lookup(p.item_embeddings, ids), {p.config.embedding_dim});
  Tensor profile;
  if (uses_mavens(v)) profile = maven_vector(attention_weights(item_vec, members, p.attention), members);
  if (uses_encoder(v)) {
    auto enc = encode_group(members, p.encoder);
    profile = profile.defined() ? aggregate_group(profile, enc) : enc;
  }
  auto eN = hidden_forward(pool(profile, item_vec), p.hidden);
  double s = 0.0;
  for (std::size_t k = 0; k < eN.numel(); ++k) s += p.prediction[k] * eN[k];
  return s;
}

}  // namespace

TEST(Aggregate, SumsTheTwoPaths) {
  EXPECT_EQ(values(aggregate_group(Tensor::vector({1, 2}), Tensor::vector({3, -2}))), (std::vector<double>{4, 0}));
  auto m = Tensor::vector({0.5, -1.5});
  EXPECT_EQ(values(aggregate_group(m, Tensor::zeros({2}))), values(m));
  EXPECT_EQ(values(aggregate_group(Tensor::zeros({2}), m)), values(m));
  EXPECT_THROW(aggregate_group(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST(Pool, HandExample) {
  EXPECT_EQ(values(pool(Tensor::vector({1, 2}), Tensor::vector({3, 4}))), (std::vector<double>{3, 8, 1, 2, 3, 4}));
  EXPECT_EQ(values(pool(Tensor::vector({1, 2}), Tensor::zeros({2}))), (std::vector<double>{0, 0, 1, 2, 0, 0}));
  EXPECT_THROW(pool(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST(Pool, BatchedRowsAreThreeDWide) {
  auto out = pool(random_tensor({5, 4}, 1), random_tensor({5, 4}, 2));
  EXPECT_EQ(out.shape(), (Shape{5, 12}));
}

TEST(Pool, GradientsMatchFiniteDifferences) {
  auto e = random_tensor({3}, 3), i = random_tensor({3}, 4);
  auto w = random_tensor({9}, 5, -1, 1, false);
  auto r = check_gradients([&] { return sum(elementwise_mul(pool(e, i), w)); }, {{"entity", e}, {"item", i}});
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Hidden, EmptyStackIsIdentity) {
  auto e0 = random_tensor({6}, 1);
  EXPECT_EQ(values(hidden_forward(e0, {})), values(e0));
}

TEST(Hidden, IdentityLayerKeepsNonnegativeInput) {
  HiddenLayer L{Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor::zeros({3})};
  auto x = Tensor::vector({0.0, 2.5, 7.0});
  EXPECT_EQ(values(hidden_forward(x, {L, L})), values(x));
}

TEST(Hidden, OutputsAreNonnegative) {
  std::vector<HiddenLayer> layers{{random_tensor({8, 12}, 1), random_tensor({8}, 2)},
                                  {random_tensor({4, 8}, 3), random_tensor({4}, 4)}};
  for (std::uint64_t s = 0; s < 500; ++s) {
    for (double v : values(hidden_forward(random_tensor({12}, 100 + s, -10, 10), layers))) ASSERT_GE(v, 0.0);
  }
}

TEST(Hidden, WidthMismatchNamesTheLayer) {
  std::vector<HiddenLayer> layers{{Tensor::zeros({4, 6}), Tensor::zeros({4})}, {Tensor::zeros({2, 5}), Tensor::zeros({2})}};
  try {
    hidden_forward(Tensor::zeros({6}), layers);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("hidden layer 2"), std::string::npos) << e.what();
  }
}

TEST(Model, InitShapesFollowTheConfig) {
  ModelConfig c;  // defaults: d = 32, hidden [96, 48, 16]
  auto p = init_model(c, 7, 9, 1);
  EXPECT_EQ(p.user_embeddings.shape(), (Shape{7, 32}));
  EXPECT_EQ(p.item_embeddings.shape(), (Shape{9, 32}));
  ASSERT_EQ(p.hidden.size(), 3u);
  EXPECT_EQ(p.hidden[0].weight.shape(), (Shape{96, 96}));
  EXPECT_EQ(p.hidden[2].weight.shape(), (Shape{16, 48}));
  EXPECT_EQ(p.prediction.shape(), (Shape{16}));
  EXPECT_EQ(p.attention.H_v.shape(), (Shape{32, 32}));
  EXPECT_EQ(p.encoder.layers.at(0).ff_w1.shape(), (Shape{128, 32}));
  EXPECT_THROW(init_model(toy_config(), 0, 3, 1), ConfigError);
  ModelConfig bad = toy_config();
  bad.encoder_heads = 3;
  EXPECT_THROW(init_model(bad, 3, 3, 1), ConfigError);
}

TEST(Model, ZeroPredictionWeightsScoreZero) {
  auto p = init_model(toy_config(), 5, 6, 1);
  randomize(p, 2);
  std::fill(p.prediction.mutable_data().begin(), p.prediction.mutable_data().end(), 0.0);
  for (Id i = 0; i < 6; ++i) {
    EXPECT_EQ(predict_user(p, i % 5, i).item(), 0.0);
    EXPECT_EQ(predict_group(p, kRoster, i % 4, i).item(), 0.0);
  }
}

TEST(Model, SingletonWithoutEncoderEqualsTheUserTower) {
  auto p = init_model(toy_config(), 5, 6, 3);
  randomize(p, 4);
  for (Id i = 0; i < 6; ++i) {
    EXPECT_EQ(predict_group(p, kRoster, 1, i, Variant::siagr_m).item(), predict_user(p, 1, i).item());
  }
}

TEST(Model, BatchedScoresMatchThePerPairComposition) {
  auto p = init_model(toy_config(), 5, 6, 5);
  randomize(p, 6);
  for (Variant v : {Variant::siagr, Variant::siagr_g, Variant::siagr_m}) {
    std::vector<Id> groups, items;
    for (Id g = 0; g < 4; ++g)
      for (Id i = 0; i < 6; ++i) groups.push_back(g), items.push_back(i);
    NoGradGuard no_grad;
    auto s = score_groups(p, kRoster, groups, items, v);
    for (std::size_t k = 0; k < groups.size(); ++k) {
      EXPECT_NEAR(s[k], reference_group_score(p, kRoster, groups[k], items[k], v), 1e-12) << to_string(v);
    }
  }
}

TEST(Model, ScoresStayFiniteForLargeParameters) {
  auto p = init_model(toy_config(), 5, 6, 7);
  randomize(p, 8, 5.0);
  for (Id i = 0; i < 6; ++i) EXPECT_TRUE(std::isfinite(predict_group(p, kRoster, 3, i).item()));
}

TEST(Model, EndToEndGradientsMatchFiniteDifferences) {
  auto p = init_model(toy_config(), 5, 6, 9);
  randomize(p, 10);
  const std::vector<Id> groups{0, 2, 3, 0}, gitems{1, 4, 5, 2}, users{1, 3}, uitems{0, 5};
  auto loss = [&] {
    return add(sum(score_groups(p, kRoster, groups, gitems)), scale(sum(square(score_users(p, users, uitems))), 0.5));
  };
  auto r = check_gradients(loss, p.named_tensors());
  EXPECT_GT(r.checked, 400u);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Model, MavenOnlyScoresIgnoreTheEncoder) {
  auto p = init_model(toy_config(), 5, 6, 11);
  randomize(p, 12);
  std::vector<double> before, after;
  for (Id i = 0; i < 6; ++i) before.push_back(predict_group(p, kRoster, 3, i, Variant::siagr_m).item());
  for (auto& L : p.encoder.layers) {
    for (auto& v : L.W_q.mutable_data()) v += 0.3;
    for (auto& v : L.ff_w2.mutable_data()) v -= 0.2;
  }
  for (auto& v : p.encoder.summary_token.mutable_data()) v *= -2.0;
  for (Id i = 0; i < 6; ++i) after.push_back(predict_group(p, kRoster, 3, i, Variant::siagr_m).item());
  EXPECT_EQ(before, after);
}

TEST(Model, EncoderOnlyScoresIgnoreTheAttention) {
  auto p = init_model(toy_config(), 5, 6, 13);
  randomize(p, 14);
  std::vector<double> before, after;
  for (Id i = 0; i < 6; ++i) before.push_back(predict_group(p, kRoster, 0, i, Variant::siagr_g).item());
  for (Tensor t : {p.attention.H_v, p.attention.H_u, p.attention.b, p.attention.A})
    for (auto& v : t.mutable_data()) v = -v + 0.1;
  for (Id i = 0; i < 6; ++i) after.push_back(predict_group(p, kRoster, 0, i, Variant::siagr_g).item());
  EXPECT_EQ(before, after);
}

TEST(Model, MemberAttentionIsADistributionInRosterOrder) {
  auto p = init_model(toy_config(), 5, 6, 15);
  randomize(p, 16);
  auto a = member_attention(p, kRoster, 3, 2);
  ASSERT_EQ(a.size(), 5u);
  double s = 0.0;
  for (double x : a) s += x;
  EXPECT_NEAR(s, 1.0, 1e-12);
  auto members = embedding_lookup(p.user_embeddings, kRoster[3]);
  const Id item[1]{2};
  auto direct = attention_weights(reshape(embedding_lookup(p.item_embeddings, item), {4}), members, p.attention);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(a[j], direct[j], 1e-14);
}

TEST(Model, UnknownIdsAreLookupErrors) {
  auto p = init_model(toy_config(), 5, 6, 1);
  EXPECT_THROW(predict_user(p, 5, 0), std::out_of_range);
  EXPECT_THROW(predict_user(p, 0, 6), std::out_of_range);
  EXPECT_THROW(predict_group(p, kRoster, 4, 0), std::out_of_range);
}

TEST(Variant, NamesRoundTrip) {
  for (Variant v : {Variant::siagr, Variant::siagr_g, Variant::siagr_m}) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("agree"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto cfg = toy_config(Variant::siagr_g);
  auto p = init_model(cfg, 5, 6, 17);
  randomize(p, 18);
  auto dir = fresh_dir("checkpoint");
  save_checkpoint(dir / "ck.json", p, {{"epoch", 3}});
  auto ck = load_checkpoint(dir / "ck.json");
  EXPECT_EQ(ck.meta["epoch"], 3);
  EXPECT_EQ(ck.params.config.variant, Variant::siagr_g);
  auto a = p.named_tensors(), b = ck.params.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].first, b[k].first);
    EXPECT_EQ(values(a[k].second), values(b[k].second)) << a[k].first;
  }
  for (Id i = 0; i < 6; ++i) EXPECT_EQ(predict_group(p, kRoster, 2, i).item(), predict_group(ck.params, kRoster, 2, i).item());
  EXPECT_FALSE(std::filesystem::exists(dir / "ck.json.tmp"));
}

TEST(Checkpoint, RejectsShapeMismatchAndForeignFiles) {
  auto p = init_model(toy_config(), 5, 6, 19);
  auto j = checkpoint_json(p, {});
  auto wrong = j;
  wrong["tensors"]["prediction.w"]["shape"] = {4};
  wrong["tensors"]["prediction.w"]["data"] = {0, 0, 0, 0};
  EXPECT_THROW(checkpoint_from_json(wrong), CheckpointError);
  auto missing = j;
  missing["tensors"].erase("attention.A");
  EXPECT_THROW(checkpoint_from_json(missing), CheckpointError);
  auto foreign = j;
  foreign["format"] = "something-else";
  EXPECT_THROW(checkpoint_from_json(foreign), CheckpointError);
  auto dir = fresh_dir("checkpoint_bad");
  test::write_file(dir / "broken.json", "{not json");
  EXPECT_THROW(load_checkpoint(dir / "broken.json"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "absent.json"), CheckpointError);
}
