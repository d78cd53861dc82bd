#include <cmath>

#include <gtest/gtest.h>

#include "noisytail/config_json.hpp"
#include "noisytail/errors.hpp"
#include "noisytail/stage1.hpp"
#include "test_util.hpp"

using namespace noisytail;
using testutil::random_vec;

namespace {

Vec random_unit(Rng& rng, std::size_t d) { return normalized(random_vec(rng, d)); }

Vec random_one_hot(Rng& rng, std::size_t k) { return one_hot(rng.uniform_index(k), k); }

// Checks a logits-gradient loss against central differences.
template <typename LossFn>
double worst_logit_grad_error(LossFn loss, std::uint64_t seed, double eps) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + rng.uniform_index(4);
    const Vec z = random_vec(rng, k, 2.0);
    const Vec y = random_one_hot(rng, k);
    const Vec analytic = loss(z, y).grad;
    const Vec numeric = finite_diff_grad([&](const Vec& v) { return loss(v, y).loss; }, z, eps);
    worst = std::max(worst, compare_gradients(analytic, numeric, 1.0).max_relative_error);
  }
  return worst;
}

}  // namespace

TEST(Losses, CrossEntropyClosedForm) {
  const LossGrad lg = cross_entropy(Vec{0.0, 0.0}, Vec{1.0, 0.0});
  EXPECT_NEAR(lg.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(lg.grad[0], -0.5, 1e-15);
  EXPECT_NEAR(lg.grad[1], 0.5, 1e-15);
}

TEST(Losses, BancWorkedExample) {
  EXPECT_NEAR(banc_loss_from_probs(Vec{0.5, 0.5}, Vec{1.0, 0.0}, 6.0), 3.6931, 1e-4);
  EXPECT_NEAR(banc_loss(Vec{0.0, 0.0}, Vec{1.0, 0.0}, 6.0).loss, std::log(2.0) + 3.0, 1e-12);
}

TEST(Losses, BancPerfectPredictionIsZero) {
  for (double c : {0.0, 1.0, 6.0, 10.0}) EXPECT_EQ(banc_loss_from_probs(Vec{1.0, 0.0}, Vec{1.0, 0.0}, c), 0.0);
}

TEST(Losses, BancWithZeroScaleIsCrossEntropy) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Vec z = random_vec(rng, 5, 2.0);
    const Vec y = random_one_hot(rng, 5);
    const LossGrad a = banc_loss(z, y, 0.0), b = cross_entropy(z, y);
    EXPECT_NEAR(a.loss, b.loss, 1e-12);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(a.grad[i], b.grad[i], 1e-12);
  }
}

TEST(Losses, BancPenaltyIsScaledMissingMass) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng.uniform_index(6);
    const Vec z = random_vec(rng, k, 2.0);
    const std::size_t y = rng.uniform_index(k);
    const double c = 10.0 * rng.uniform();
    const Vec p = softmax(z);
    const double gap = banc_loss(z, one_hot(y, k), c).loss - cross_entropy(z, one_hot(y, k)).loss;
    EXPECT_NEAR(gap, c * (1.0 - p[y]), 1e-10);
    EXPECT_GE(gap, -1e-12);
    EXPECT_LE(gap, c + 1e-12);
  }
}

TEST(Losses, SceWorkedExamples) {
  EXPECT_NEAR(sce_loss_from_probs(Vec{0.5, 0.5}, Vec{1.0, 0.0}), 2.6931, 1e-4);
  EXPECT_EQ(sce_loss_from_probs(Vec{1.0, 0.0}, Vec{1.0, 0.0}), 0.0);
  EXPECT_NEAR(sce_loss(Vec{0.0, 0.0}, Vec{1.0, 0.0}).loss, std::log(2.0) + 2.0, 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  for (double eps : {1e-4, 1e-5}) {
    EXPECT_LT(worst_logit_grad_error([](const Vec& z, const Vec& y) { return cross_entropy(z, y); }, 3, eps), 1e-4);
    EXPECT_LT(worst_logit_grad_error([](const Vec& z, const Vec& y) { return banc_loss(z, y, 6.0); }, 4, eps), 1e-4);
    EXPECT_LT(worst_logit_grad_error([](const Vec& z, const Vec& y) { return sce_loss(z, y); }, 5, eps), 1e-4);
  }
}

TEST(Losses, BlendEndpointsAndExample) {
  EXPECT_DOUBLE_EQ(stage1_loss(2.0, 5.0, 0.0), 2.0);
  EXPECT_DOUBLE_EQ(stage1_loss(2.0, 5.0, 1.0), 5.0);
  EXPECT_NEAR(stage1_loss(2.0, 5.0, 0.2), 2.6, 1e-15);
}

TEST(Contrastive, EqualSimilaritiesGiveLogM) {
  const Vec q = {1.0, 0.0, 0.0};
  const Vec k = normalized(Vec{0.5, 1.0, 0.0});
  std::vector<Vec> negs;
  for (int m = 0; m < 7; ++m) {
    const double a = 0.3 * m;
    negs.push_back(normalized(Vec{0.5, std::cos(a), std::sin(a)}));
  }
  EXPECT_NEAR(contrastive_loss(q, k, negs, 0.2).loss, std::log(7.0), 1e-12);
}

TEST(Contrastive, ClosedFormMinusTwo) {
  const Vec q = {1.0, 0.0};
  EXPECT_NEAR(contrastive_loss(q, q, std::vector<Vec>{Vec{-1.0, 0.0}}, 1.0).loss, -2.0, 1e-15);
}

TEST(Contrastive, HugeTemperatureWithOneNegativeIsNearZero) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const double l = contrastive_loss(random_unit(rng, 4), random_unit(rng, 4),
                                      std::vector<Vec>{random_unit(rng, 4)}, 1e6)
                         .loss;
    EXPECT_LT(std::abs(l), 1e-5);
  }
}

TEST(Contrastive, EmptyNegativesRejected) {
  const Vec q = {1.0, 0.0};
  EXPECT_THROW(contrastive_loss(q, q, std::vector<Vec>{}, 0.2), InvalidInput);
  EXPECT_THROW(contrastive_loss(q, q, std::vector<Vec>{q}, 0.2, ContrastiveDenominator::kNegativesOnly, 0),
               InvalidInput);
}

TEST(Contrastive, InfoNceIncludesPositive) {
  const Vec q = {1.0, 0.0};
  const double l = contrastive_loss(q, q, std::vector<Vec>{Vec{-1.0, 0.0}}, 1.0,
                                    ContrastiveDenominator::kIncludePositive)
                       .loss;
  EXPECT_NEAR(l, std::log(1.0 + std::exp(-2.0)), 1e-15);
}

class ContrastiveGrad : public ::testing::TestWithParam<std::tuple<ContrastiveDenominator, double>> {};

TEST_P(ContrastiveGrad, AllGradientsMatchFiniteDifferences) {
  const auto [denom, eps] = GetParam();
  Rng rng(7);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 2 + rng.uniform_index(7);
    const std::size_t m = 1 + rng.uniform_index(6);
    const double tau = 0.2 + rng.uniform();
    const Vec q = random_unit(rng, d), k = random_unit(rng, d);
    std::vector<Vec> negs;
    for (std::size_t j = 0; j < m; ++j) negs.push_back(random_unit(rng, d));
    const ContrastiveResult r = contrastive_loss(q, k, negs, tau, denom);
    auto err = [&](const Vec& analytic, const Vec& numeric) {
      worst = std::max(worst, compare_gradients(analytic, numeric, 1.0).max_relative_error);
    };
    err(r.grad_key, finite_diff_grad([&](const Vec& v) { return contrastive_loss(q, v, negs, tau, denom).loss; }, k, eps));
    err(r.grad_query, finite_diff_grad([&](const Vec& v) { return contrastive_loss(v, k, negs, tau, denom).loss; }, q, eps));
    for (std::size_t j = 0; j < m; ++j) {
      err(r.grad_negatives[j], finite_diff_grad(
                                   [&](const Vec& v) {
                                     std::vector<Vec> n2 = negs;
                                     n2[j] = v;
                                     return contrastive_loss(q, k, n2, tau, denom).loss;
                                   },
                                   negs[j], eps));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Denominators, ContrastiveGrad,
                         ::testing::Combine(::testing::Values(ContrastiveDenominator::kNegativesOnly,
                                                              ContrastiveDenominator::kIncludePositive),
                                            ::testing::Values(1e-4, 1e-5)));

TEST(Contrastive, SkippedNegativeHasZeroGradient) {
  Rng rng(8);
  std::vector<Vec> negs = {random_unit(rng, 3), random_unit(rng, 3), random_unit(rng, 3)};
  const Vec q = random_unit(rng, 3), k = random_unit(rng, 3);
  const ContrastiveResult r = contrastive_loss(q, k, negs, 0.5, ContrastiveDenominator::kNegativesOnly, 1);
  for (double g : r.grad_negatives[1]) EXPECT_EQ(g, 0.0);
  std::vector<Vec> without = {negs[0], negs[2]};
  EXPECT_NEAR(r.loss, contrastive_loss(q, k, without, 0.5).loss, 1e-14);
}

TEST(Queue, FifoDisciplineProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t cap = 1 + rng.uniform_index(20);
    const std::size_t batch = 1 + rng.uniform_index(6);
    const std::size_t steps = rng.uniform_index(10);
    FeatureQueue q(cap);
    std::vector<Vec> pushed;
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t b = 0; b < batch; ++b) {
        pushed.push_back(random_unit(rng, 3));
        q.push(pushed.back());
      }
    }
    const std::size_t expect = std::min(steps * batch, cap);
    ASSERT_EQ(q.size(), expect);
    for (std::size_t i = 0; i < expect; ++i) EXPECT_EQ(q.entries()[i], pushed[pushed.size() - expect + i]);
  }
}

TEST(Queue, RejectsNonUnitEmbeddings) {
  FeatureQueue q(4);
  EXPECT_THROW(q.push(Vec{1.0, 1.0}), InvalidInput);
  EXPECT_NO_THROW(q.push(normalized(Vec{1.0, 1.0})));
  EXPECT_THROW(FeatureQueue(0), InvalidSpec);
}

TEST(Augment, IdentityZeroAndDeterminism) {
  Stage1Config cfg;
  const Vec x = {1.0, -2.0, 3.0};
  cfg.aug_noise_stddev = 0.0;
  cfg.aug_dropout_prob = 0.0;
  Rng rng(1);
  EXPECT_EQ(augment(x, cfg, rng), x);
  cfg.aug_dropout_prob = 1.0;
  for (double v : augment(x, cfg, rng)) EXPECT_EQ(v, 0.0);
  cfg = Stage1Config{};
  Rng a(5), b(5);
  EXPECT_EQ(augment(x, cfg, a), augment(x, cfg, b));
  EXPECT_EQ(augment(x, cfg, a), augment(x, cfg, b));
}

TEST(Predict, ProbabilitiesAndZeroClassifier) {
  Stage1Config cfg;
  Rng rng(2);
  Stage1Model m = init_stage1_model(5, 4, cfg, rng);
  const Vec x = random_vec(rng, 5);
  const Prediction p = predict(m, x);
  double s = 0;
  for (double v : p.probs) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_EQ(p.predicted_class, argmax(p.logits));
  EXPECT_EQ(predict(m, x).logits, p.logits);
  m.classifier = Mlp::zeros(m.classifier.dims(), m.classifier.activation());
  for (double v : predict(m, x).probs) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_THROW(predict(m, Vec(3)), InvalidInput);
}

TEST(Config, ValidationRejectsOutOfRange) {
  Stage1Config c;
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), InvalidSpec);
  c = Stage1Config{};
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), InvalidSpec);
  c = Stage1Config{};
  c.c = -1.0;
  EXPECT_THROW(c.validate(), InvalidSpec);
  c = Stage1Config{};
  c.aug_dropout_prob = 2.0;
  EXPECT_THROW(c.validate(), InvalidSpec);
}

// ---------------------------------------------------------------------------
// Batch gradients

namespace {

struct BatchFixture {
  Stage1Config cfg;
  Stage1Model model;
  Stage1Batch batch;
  FeatureQueue queue{16};

  explicit BatchFixture(StopGradient sg, double alpha = 0.3) {
    cfg.stop_gradient = sg;
    cfg.alpha = alpha;
    cfg.hidden_dim = 6;
    cfg.feature_dim = 5;
    cfg.embed_dim = 4;
    Rng rng(31);
    model = init_stage1_model(3, 3, cfg, rng);
    for (int i = 0; i < 5; ++i) {
      batch.query_views.push_back(random_vec(rng, 3));
      batch.key_views.push_back(random_vec(rng, 3));
      batch.labels.push_back(rng.uniform_index(3));
    }
    for (int i = 0; i < 6; ++i) queue.push(random_unit(rng, 4));
  }
};

Vec embed(const Stage1Model& m, const Vec& x) {
  return normalized(mlp_forward(m.projection, mlp_forward(m.encoder, x)));
}

// Mean contrastive loss where `live` computes the trainable branch and the
// other branch is frozen at `frozen`.
double frozen_branch_loss(const Stage1Model& live, const Stage1Model& frozen, const BatchFixture& f) {
  const bool query_live = f.cfg.stop_gradient == StopGradient::kKey;
  const std::size_t b = f.batch.query_views.size();
  std::vector<Vec> qs(b), ks(b);
  for (std::size_t i = 0; i < b; ++i) {
    qs[i] = embed(query_live ? live : frozen, f.batch.query_views[i]);
    ks[i] = embed(query_live ? frozen : live, f.batch.key_views[i]);
  }
  std::vector<Vec> negs(f.queue.entries().begin(), f.queue.entries().end());
  const std::size_t q = negs.size();
  negs.insert(negs.end(), ks.begin(), ks.end());
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) total += contrastive_loss(qs[i], ks[i], negs, f.cfg.tau, f.cfg.denominator, q + i).loss;
  return total / static_cast<double>(b);
}

void check_stop_gradient(StopGradient sg) {
  const BatchFixture f(sg);
  const Stage1Gradients g = stage1_batch_gradients(f.model, f.batch, f.queue, f.cfg);
  const Vec enc0 = flatten_parameters(f.model.encoder);
  const Vec proj0 = flatten_parameters(f.model.projection);
  Vec theta = enc0;
  theta.insert(theta.end(), proj0.begin(), proj0.end());
  const Vec numeric = finite_diff_grad(
      [&](const Vec& th) {
        Stage1Model live = f.model;
        assign_parameters(live.encoder, std::span<const double>(th).first(enc0.size()));
        assign_parameters(live.projection, std::span<const double>(th).subspan(enc0.size()));
        return frozen_branch_loss(live, f.model, f);
      },
      theta, 1e-5);
  Vec analytic = flatten_gradient(g.encoder);
  const Vec gp = flatten_gradient(g.projection);
  analytic.insert(analytic.end(), gp.begin(), gp.end());
  for (double& v : analytic) v /= (1.0 - f.cfg.alpha);
  EXPECT_LT(compare_gradients(analytic, numeric, 1e-4).max_relative_error, 1e-4);
  EXPECT_NEAR(g.contrastive_loss, frozen_branch_loss(f.model, f.model, f), 1e-12);
}

}  // namespace

TEST(BatchGradients, QueryBranchDetached) { check_stop_gradient(StopGradient::kQuery); }
TEST(BatchGradients, KeyBranchDetached) { check_stop_gradient(StopGradient::kKey); }

TEST(BatchGradients, ClassifierGradientMatchesFiniteDifferences) {
  const BatchFixture f(StopGradient::kKey);
  const Stage1Gradients g = stage1_batch_gradients(f.model, f.batch, f.queue, f.cfg);
  const Vec numeric = finite_diff_grad(
      [&](const Vec& th) {
        Mlp cls = f.model.classifier;
        assign_parameters(cls, th);
        double total = 0;
        for (std::size_t i = 0; i < f.batch.labels.size(); ++i) {
          const Vec h = mlp_forward(f.model.encoder, f.batch.query_views[i]);
          total += banc_loss(mlp_forward(cls, h), one_hot(f.batch.labels[i], 3), f.cfg.c).loss;
        }
        return f.cfg.alpha * total / static_cast<double>(f.batch.labels.size());
      },
      flatten_parameters(f.model.classifier), 1e-5);
  EXPECT_TRUE(compare_gradients(flatten_gradient(g.classifier), numeric, 1e-4).passed);
}

TEST(BatchGradients, ClassifierIsolatedFromEncoder) {
  for (StopGradient sg : {StopGradient::kQuery, StopGradient::kKey}) {
    const BatchFixture f(sg, 1.0);
    const Stage1Gradients g = stage1_batch_gradients(f.model, f.batch, f.queue, f.cfg);
    for (double v : flatten_gradient(g.encoder)) EXPECT_EQ(v, 0.0);
    for (double v : flatten_gradient(g.projection)) EXPECT_EQ(v, 0.0);
    double norm = 0;
    for (double v : flatten_gradient(g.classifier)) norm += v * v;
    EXPECT_GT(norm, 0.0);
  }
}

TEST(BatchGradients, LabelsNeverReachEncoder) {
  BatchFixture f(StopGradient::kKey);
  const Stage1Gradients a = stage1_batch_gradients(f.model, f.batch, f.queue, f.cfg);
  for (auto& y : f.batch.labels) y = (y + 1) % 3;
  const Stage1Gradients b = stage1_batch_gradients(f.model, f.batch, f.queue, f.cfg);
  EXPECT_EQ(flatten_gradient(a.encoder), flatten_gradient(b.encoder));
  EXPECT_EQ(flatten_gradient(a.projection), flatten_gradient(b.projection));
  EXPECT_NE(flatten_gradient(a.classifier), flatten_gradient(b.classifier));
}

TEST(BatchGradients, ContrastiveOnlyLeavesClassifierUntouched) {
  const BatchFixture f(StopGradient::kKey, 0.0);
  const Stage1Gradients g = stage1_batch_gradients(f.model, f.batch, f.queue, f.cfg);
  for (double v : flatten_gradient(g.classifier)) EXPECT_EQ(v, 0.0);
}

// ---------------------------------------------------------------------------
// Training

namespace {

Dataset small_noisy(std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds = synth_dataset({5, 120, 2.0}, MixtureSpec{}, rng);
  return inject_symmetric(ds, 0.4, rng).dataset;
}

Stage1Config small_cfg() {
  Stage1Config c;
  c.epochs = 15;
  c.batch_size = 32;
  c.queue_capacity = 128;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Training, ZeroEpochsReturnsInitialisation) {
  const Dataset ds = small_noisy(1);
  Stage1Config c = small_cfg();
  c.epochs = 0;
  const Stage1Result r = train_stage1(ds, c);
  EXPECT_TRUE(r.log.empty());
  ASSERT_EQ(r.predictions.size(), ds.size());
  const std::vector<Prediction> again = predict_all(r.model, ds);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(r.predictions[i].logits, again[i].logits);
}

TEST(Training, DeterministicUnderSeed) {
  const Dataset ds = small_noisy(2);
  Stage1Config c = small_cfg();
  c.epochs = 3;
  const Stage1Result a = train_stage1(ds, c), b = train_stage1(ds, c);
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(a.log[e].total_loss, b.log[e].total_loss);
}

TEST(Training, BatchLargerThanDatasetRejected) {
  Stage1Config c = small_cfg();
  c.batch_size = 100000;
  EXPECT_THROW(train_stage1(small_noisy(3), c), InvalidSpec);
}

TEST(Training, LogRecordsBlend) {
  Stage1Config c = small_cfg();
  c.epochs = 2;
  for (const Stage1EpochLog& l : train_stage1(small_noisy(4), c).log) {
    EXPECT_NEAR(l.total_loss, stage1_loss(l.contrastive_loss, l.classifier_loss, c.alpha), 1e-12);
  }
}

TEST(Training, PredictionsBeatObservedLabels) {
  const Dataset ds = small_noisy(5);
  const Stage1Result r = train_stage1(ds, small_cfg());
  EXPECT_GT(prediction_accuracy(r.predictions, ds, true), prediction_accuracy(r.predictions, ds, false));
  EXPECT_GT(prediction_accuracy(r.predictions, ds, true), 0.6);
}

TEST(Persistence, CheckpointAndPredictionsRoundTrip) {
  testutil::TempDir dir("s1");
  const Dataset ds = small_noisy(6);
  Stage1Config c = small_cfg();
  c.epochs = 1;
  const Stage1Result r = train_stage1(ds, c);
  save_stage1_checkpoint(r.model, c, dir.path() / "ck.json");
  const Stage1Checkpoint back = load_stage1_checkpoint(dir.path() / "ck.json");
  EXPECT_EQ(back.model, r.model);
  EXPECT_EQ(to_json(back.config), to_json(c));
  save_predictions(r.predictions, ds, dir.path() / "p.jsonl");
  const std::vector<IdPrediction> preds = load_predictions(dir.path() / "p.jsonl");
  ASSERT_EQ(preds.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(preds[i].id, ds.samples[i].id);
    EXPECT_EQ(preds[i].prediction.logits, r.predictions[i].logits);
    EXPECT_EQ(preds[i].prediction.probs, r.predictions[i].probs);
    EXPECT_EQ(preds[i].prediction.predicted_class, r.predictions[i].predicted_class);
  }
}
