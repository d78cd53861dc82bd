#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "noisytail/datagen.hpp"
#include "noisytail/errors.hpp"
#include "noisytail/jsonl.hpp"
#include "test_util.hpp"

using namespace noisytail;
using testutil::TempDir;

namespace {

Dataset toy(std::size_t n, std::size_t k, std::size_t d = 3, std::uint64_t seed = 1) {
  Rng rng(seed);
  Dataset ds;
  ds.num_classes = k;
  ds.feature_dim = d;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % k;
    ds.samples.push_back({static_cast<std::int64_t>(i), testutil::random_vec(rng, d), y, y});
  }
  return ds;
}

std::size_t corrupted(const Dataset& ds) {
  std::size_t c = 0;
  for (const Sample& s : ds.samples) c += s.observed_label != *s.true_label;
  return c;
}

}  // namespace

TEST(LongTail, BalancedLimit) {
  for (std::size_t n : longtail_counts({10, 1000, 1.0})) EXPECT_EQ(n, 1000u);
}

TEST(LongTail, GeometricDecayClosedForm) {
  const auto n = longtail_counts({10, 1000, 10.0});
  ASSERT_EQ(n.size(), 10u);
  for (std::size_t k = 0; k < 10; ++k) {
    EXPECT_EQ(n[k], static_cast<std::size_t>(std::llround(1000.0 * std::pow(10.0, -double(k) / 9.0))));
  }
  EXPECT_EQ(n.front(), 1000u);
  EXPECT_EQ(n.back(), 100u);
}

TEST(LongTail, HundredFoldTail) { EXPECT_EQ(longtail_counts({10, 5000, 100.0}).back(), 50u); }

TEST(LongTail, NonIncreasingAndFlooredAtOne) {
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng.uniform_index(40);
    const std::size_t head = 1 + rng.uniform_index(3000);
    const double ir = 1.0 + rng.uniform() * (static_cast<double>(head) - 1.0);
    const auto n = longtail_counts({k, head, ir});
    EXPECT_EQ(n.front(), head);
    for (std::size_t i = 1; i < n.size(); ++i) EXPECT_LE(n[i], n[i - 1]);
    EXPECT_GE(n.back(), 1u);
  }
}

TEST(LongTail, InvalidSpecsRejected) {
  EXPECT_THROW(longtail_counts({1, 100, 1.0}), InvalidSpec);
  EXPECT_THROW(longtail_counts({5, 10, 20.0}), InvalidSpec);
  EXPECT_THROW(longtail_counts({5, 10, 0.5}), InvalidSpec);
}

TEST(Mixture, CountsAndLabelsMatchSpec) {
  Rng rng(2);
  const LongTailSpec lt{5, 80, 8.0};
  const Dataset ds = synth_dataset(lt, MixtureSpec{}, rng);
  const auto expect = longtail_counts(lt);
  EXPECT_EQ(true_class_counts(ds), expect);
  for (const Sample& s : ds.samples) EXPECT_EQ(s.observed_label, *s.true_label);
  ds.validate();
}

TEST(Mixture, DeterministicUnderSeed) {
  Rng a(3), b(3);
  EXPECT_EQ(synth_dataset({4, 50, 5.0}, {}, a), synth_dataset({4, 50, 5.0}, {}, b));
}

TEST(Mixture, VanishingSpreadIsPerfectlySeparable) {
  Rng rng(4);
  MixtureSpec mix;
  mix.within_class_stddev = 1e-6;
  const std::vector<Vec> centers = sample_class_centers(6, mix, rng);
  const Dataset ds = sample_mixture(centers, std::vector<std::size_t>(6, 30), mix, rng);
  for (const Sample& s : ds.samples) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      double d2 = 0;
      for (std::size_t j = 0; j < s.features.size(); ++j) d2 += std::pow(s.features[j] - centers[c][j], 2);
      if (d2 < bd) bd = d2, best = c;
    }
    EXPECT_EQ(best, *s.true_label);
  }
}

TEST(Mixture, DefaultGeometryIsLinearlySeparableEnough) {
  // Nearest class mean is a linear rule; on clean labels it should clear 90%.
  Rng rng(5);
  MixtureSpec mix;  // d = 16, stddev / scale = 0.3
  const TrainTestSplit split = synth_train_test({10, 200, 1.0}, mix, 100, rng);
  std::vector<Vec> mean(10, Vec(mix.feature_dim, 0.0));
  std::vector<double> n(10, 0.0);
  for (const Sample& s : split.train.samples) {
    for (std::size_t j = 0; j < s.features.size(); ++j) mean[s.observed_label][j] += s.features[j];
    n[s.observed_label] += 1.0;
  }
  for (std::size_t c = 0; c < 10; ++c) {
    for (double& v : mean[c]) v /= n[c];
  }
  std::size_t hits = 0;
  for (const Sample& s : split.test.samples) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < 10; ++c) {
      double d2 = 0;
      for (std::size_t j = 0; j < s.features.size(); ++j) d2 += std::pow(s.features[j] - mean[c][j], 2);
      if (d2 < bd) bd = d2, best = c;
    }
    hits += best == *s.true_label;
  }
  EXPECT_GT(static_cast<double>(hits) / split.test.size(), 0.9);
}

TEST(Mixture, TestSplitBalancedCleanWithDisjointIds) {
  Rng rng(6);
  const TrainTestSplit split = synth_train_test({5, 100, 10.0}, {}, 20, rng);
  for (std::size_t c : true_class_counts(split.test)) EXPECT_EQ(c, 20u);
  std::set<std::int64_t> ids;
  for (const Sample& s : split.train.samples) ids.insert(s.id);
  for (const Sample& s : split.test.samples) {
    EXPECT_EQ(s.observed_label, *s.true_label);
    EXPECT_TRUE(ids.insert(s.id).second);
  }
}

TEST(SymmetricNoise, ZeroRateIsIdentity) {
  Rng rng(1);
  const Dataset ds = toy(100, 4);
  const NoisyDataset out = inject_symmetric(ds, 0.0, rng);
  EXPECT_EQ(out.dataset, ds);
  EXPECT_EQ(out.mask.noisy_count(), 0u);
}

TEST(SymmetricNoise, ExactCountAndAlwaysDifferent) {
  Rng rng(2);
  const Dataset ds = toy(10000, 10);
  const NoisyDataset out = inject_symmetric(ds, 0.4, rng);
  EXPECT_EQ(out.mask.noisy_count(), 4000u);
  EXPECT_EQ(corrupted(out.dataset), 4000u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = out.dataset.samples[i];
    EXPECT_EQ(out.mask.noisy[i], s.observed_label != *s.true_label);
    EXPECT_EQ(s.true_label, ds.samples[i].true_label);
    EXPECT_EQ(s.features, ds.samples[i].features);
  }
}

TEST(SymmetricNoise, BinaryFlipsToTheOtherLabel) {
  Rng rng(3);
  const NoisyDataset out = inject_symmetric(toy(200, 2), 0.5, rng);
  EXPECT_EQ(out.mask.noisy_count(), 100u);
  for (std::size_t i = 0; i < 200; ++i) {
    if (out.mask.noisy[i]) {
      EXPECT_EQ(out.dataset.samples[i].observed_label, 1 - *out.dataset.samples[i].true_label);
    }
  }
}

TEST(SymmetricNoise, RateWithinOneSampleOfRequest) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 10 + rng.uniform_index(500);
    const double rate = rng.uniform() * 0.95;
    const NoisyDataset out = inject_symmetric(toy(n, 3 + t % 5, 2, t), rate, rng);
    EXPECT_LE(std::abs(static_cast<double>(corrupted(out.dataset)) - rate * n), 0.5 + 1e-9);
  }
}

TEST(SymmetricNoise, RateOfOneRejected) {
  Rng rng(5);
  EXPECT_THROW(inject_symmetric(toy(10, 2), 1.0, rng), InvalidSpec);
  EXPECT_THROW(inject_symmetric(toy(10, 2), -0.1, rng), InvalidSpec);
}

TEST(AsymmetricNoise, SinglePairCountingExample) {
  Dataset ds = toy(200, 2);  // 100 samples per class
  Rng rng(6);
  const NoisyDataset out = inject_asymmetric(ds, 0.5, {{0, 1}}, rng);
  std::size_t relabeled = 0;
  for (const Sample& s : out.dataset.samples) {
    if (*s.true_label == 1) {
      EXPECT_EQ(s.observed_label, 1u);
    }
    relabeled += *s.true_label == 0 && s.observed_label == 1;
  }
  EXPECT_EQ(relabeled, 50u);
}

TEST(AsymmetricNoise, CifarMapFlipsEachSourceToItsTarget) {
  const Dataset ds = toy(1000, 10);  // 100 per class
  Rng rng(7);
  const auto map = cifar10_flip_map();
  const NoisyDataset out = inject_asymmetric(ds, 0.4, map, rng);
  std::map<std::size_t, std::size_t> target;
  for (auto [s, t] : map) target[s] = t;
  std::vector<std::size_t> flipped(10, 0);
  for (const Sample& s : out.dataset.samples) {
    const std::size_t y = *s.true_label;
    if (s.observed_label == y) continue;
    ASSERT_TRUE(target.count(y)) << "non-source class " << y << " was altered";
    EXPECT_EQ(s.observed_label, target[y]);
    ++flipped[y];
  }
  for (auto [s, t] : map) EXPECT_EQ(flipped[s], 40u);
}

TEST(AsymmetricNoise, InvalidMapsRejected) {
  Rng rng(8);
  EXPECT_THROW(inject_asymmetric(toy(10, 2), 0.2, {{0, 5}}, rng), InvalidSpec);
  EXPECT_THROW(inject_asymmetric(toy(10, 2), 0.2, {{1, 1}}, rng), InvalidSpec);
  NoiseSpec spec;
  spec.kind = NoiseKind::kAsymmetric;
  EXPECT_THROW(spec.validate(3), InvalidSpec);  // empty map
}

TEST(Persistence, RoundTripIsBitExact) {
  TempDir dir("ds");
  Rng rng(9);
  Dataset ds = synth_dataset({3, 20, 2.0}, {}, rng);
  ds.samples[0].features[0] = 0.1 + 0.2;  // needs all 17 digits
  save_dataset(ds, dir.path() / "d.jsonl");
  EXPECT_EQ(load_dataset(dir.path() / "d.jsonl", 3), ds);
}

TEST(Persistence, LabelOutOfRangeNamesLine) {
  TempDir dir("bad");
  const auto p = dir.path() / "d.jsonl";
  std::ofstream(p) << R"({"id":0,"features":[1.0],"observed_label":0})" << '\n'
                   << R"({"id":1,"features":[1.0],"observed_label":3})" << '\n';
  try {
    load_dataset(p, 3);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Persistence, MalformedLineRaisesParseError) {
  TempDir dir("bad2");
  const auto p = dir.path() / "d.jsonl";
  std::ofstream(p) << R"({"id":0,"features":[1.0],"observed_label":0})" << "\n{oops\n";
  EXPECT_THROW(load_dataset(p, 2), ParseError);
}

TEST(Persistence, MissingTrueLabelMeansRealData) {
  TempDir dir("real");
  const auto p = dir.path() / "d.jsonl";
  std::ofstream(p) << R"({"id":4,"features":[1.0,2.0],"observed_label":1})" << '\n';
  const Dataset ds = load_dataset(p, 2);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_FALSE(ds.samples[0].true_label.has_value());
  EXPECT_FALSE(ds.has_true_labels());
}

TEST(Persistence, MissingFileIsIoError) { EXPECT_THROW(load_dataset("/nonexistent/x.jsonl"), IoError); }

TEST(Persistence, NoiseMaskRoundTrip) {
  TempDir dir("mask");
  Rng rng(10);
  const NoisyDataset out = inject_symmetric(toy(50, 5), 0.3, rng);
  save_noise_mask(out.mask, dir.path() / "m.jsonl");
  const NoiseMask back = load_noise_mask(dir.path() / "m.jsonl");
  EXPECT_EQ(back.ids, out.mask.ids);
  EXPECT_EQ(back.noisy, out.mask.noisy);
}

TEST(Import, ThreeRowsOfDimFour) {
  TempDir dir("imp");
  std::ofstream(dir.path() / "f.jsonl") << "[1,2,3,4]\n[5,6,7,8]\n[0,0,0,1]\n";
  std::ofstream(dir.path() / "l.txt") << "0\n2\n1\n";
  const Dataset ds = import_embeddings(dir.path() / "f.jsonl", dir.path() / "l.txt");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.feature_dim, 4u);
  EXPECT_EQ(ds.num_classes, 3u);
  EXPECT_FALSE(ds.has_true_labels());
  save_dataset(ds, dir.path() / "d.jsonl");
  EXPECT_EQ(load_dataset(dir.path() / "d.jsonl", 3), ds);
}

TEST(Import, MismatchedRowCountsRejected) {
  TempDir dir("imp2");
  std::ofstream(dir.path() / "f.jsonl") << "[1,2]\n[3,4]\n";
  std::ofstream(dir.path() / "l.txt") << "0\n";
  EXPECT_THROW(import_embeddings(dir.path() / "f.jsonl", dir.path() / "l.txt"), Error);
}

TEST(Import, InconsistentDimensionNamesLine) {
  TempDir dir("imp3");
  std::ofstream(dir.path() / "f.jsonl") << "[1,2]\n[3,4,5]\n";
  std::ofstream(dir.path() / "l.txt") << "0\n1\n";
  try {
    import_embeddings(dir.path() / "f.jsonl", dir.path() / "l.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Validation, DuplicateIdsRejected) {
  Dataset ds = toy(3, 2);
  ds.samples[2].id = 0;
  EXPECT_THROW(ds.validate(), InvalidInput);
}
