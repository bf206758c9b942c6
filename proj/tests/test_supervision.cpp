#include <gtest/gtest.h>

#include <cmath>

#include "samdwich/supervision.hpp"
#include "support/oracles.hpp"

namespace samdwich {
namespace {

double dice_value(const Tensor& p, const Tensor& y, double eps, const Tensor* w = nullptr) {
  Tape tape;
  return dice_loss(tape, p, y, eps, w).item();
}

double focal_value(const Tensor& p, const Tensor& y, double gamma, double alpha, const Tensor* w = nullptr) {
  Tape tape;
  return focal_loss(tape, p, y, gamma, alpha, 1e-7, w).item();
}

Tensor tile_twice(const Tensor& t) {
  Tensor out = Tensor::zeros({t.shape[0], 2 * t.shape[1]});
  for (std::size_t i = 0; i < t.shape[0]; ++i)
    for (std::size_t j = 0; j < t.shape[1]; ++j) out.at(i, j) = out.at(i, j + t.shape[1]) = t.at(i, j);
  return out;
}

TEST(Dice, Examples) {
  const Tensor y({2, 2}, {1, 0, 0, 1});
  EXPECT_DOUBLE_EQ(dice_value(y, y, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(dice_value(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), 1.0), 0.0);
  EXPECT_NEAR(dice_value(Tensor::filled({2, 2}, 1.0), Tensor::zeros({2, 2}), 1.0), 0.8, 1e-15);
}

TEST(Dice, MatchesLoopOracleAndStaysInRange) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const std::size_t h = rng.range(1, 6), w = rng.range(1, 6);
    const Tensor p = oracle::random_tensor(rng, {h, w}, 0, 1);
    const Tensor y = oracle::random_mask(rng, h, w);
    const Tensor wt = oracle::random_mask(rng, h, w, 0.7);
    const double eps = rng.uniform(0.0, 2.0);
    const double d = dice_value(p, y, eps);
    EXPECT_NEAR(d, oracle::dice(p, y, eps), 1e-12);
    EXPECT_NEAR(dice_value(p, y, eps, &wt), oracle::dice(p, y, eps, &wt), 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(Dice, InvariantToTilingWithoutSmoothing) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Tensor p = oracle::random_tensor(rng, {3, 4}, 0.05, 1);
    const Tensor y = oracle::random_mask(rng, 3, 4);
    EXPECT_NEAR(dice_value(p, y, 0.0), dice_value(tile_twice(p), tile_twice(y), 0.0), 1e-12);
  }
}

TEST(Focal, GammaZeroIsScaledCrossEntropy) {
  Rng rng(3);
  const Tensor p = oracle::random_tensor(rng, {3, 3}, 0.01, 0.99);
  const Tensor y = oracle::random_mask(rng, 3, 3);
  double bce = 0;
  for (std::size_t i = 0; i < 9; ++i)
    bce -= y.data[i] * std::log(p.data[i]) + (1 - y.data[i]) * std::log(1 - p.data[i]);
  EXPECT_NEAR(focal_value(p, y, 0.0, 0.5), 0.5 * bce / 9, 1e-12);
}

TEST(Focal, ConfidentCorrectIsNearZero) {
  const Tensor y({1, 4}, {1, 0, 1, 0});
  const Tensor p({1, 4}, {1.0, 0.0, 1.0 - 1e-12, 1e-12});
  EXPECT_LT(focal_value(p, y, 2.0, 0.25), 1e-15);
  EXPECT_GT(focal_value(Tensor({1, 4}, {0, 1, 0, 1}), y, 2.0, 0.25), 1.0);
}

TEST(Focal, MatchesLoopOracleAndIsNonNegative) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const std::size_t h = rng.range(1, 6), w = rng.range(1, 6);
    const Tensor p = oracle::random_tensor(rng, {h, w}, 0, 1);
    const Tensor y = oracle::random_mask(rng, h, w);
    const Tensor wt = oracle::random_mask(rng, h, w, 0.7);
    const double gamma = rng.uniform(0.0, 3.0), alpha = rng.uniform();
    const double f = focal_value(p, y, gamma, alpha);
    EXPECT_NEAR(f, oracle::focal(p, y, gamma, alpha, 1e-7), 1e-12);
    EXPECT_NEAR(focal_value(p, y, gamma, alpha, &wt), oracle::focal(p, y, gamma, alpha, 1e-7, &wt), 1e-12);
    EXPECT_GE(f, 0.0);
  }
}

TEST(Focal, InvariantToTiling) {
  Rng rng(5);
  const Tensor p = oracle::random_tensor(rng, {3, 4}, 0, 1);
  const Tensor y = oracle::random_mask(rng, 3, 4);
  EXPECT_NEAR(focal_value(p, y, 2.0, 0.25), focal_value(tile_twice(p), tile_twice(y), 2.0, 0.25), 1e-12);
}

TEST(Losses, RejectBadTargets) {
  Tape tape;
  EXPECT_THROW(dice_loss(tape, Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(focal_loss(tape, Tensor::zeros({2, 2}), Tensor::filled({2, 2}, 0.5)), std::invalid_argument);
}

struct TwoFrameClip {
  std::map<FrameIndex, Tensor> logits;
  std::map<FrameIndex, FrameSupervision> targets;
  explicit TwoFrameClip(Rng& rng) {
    for (FrameIndex t : {1, 2}) {
      logits.emplace(t, oracle::random_tensor(rng, {3, 3}));
      targets.emplace(t, FrameSupervision{oracle::random_mask(rng, 3, 3), std::nullopt});
    }
  }
};

TEST(TotalLoss, WeightsSelectComponents) {
  Rng rng(6);
  TwoFrameClip clip(rng);
  LossConfig cfg;
  cfg.dice_weight = 0;
  Tape tape;
  const ClipLoss only_focal = total_loss(tape, clip.logits, clip.targets, cfg);
  EXPECT_NEAR(only_focal.total.item(), only_focal.focal, 1e-15);
  double expected = 0;
  for (const auto& [t, l] : clip.logits) {
    Tensor p = l;
    for (double& v : p.data) v = 1 / (1 + std::exp(-v));
    expected += oracle::focal(p, clip.targets.at(t).target, cfg.focal_gamma, cfg.focal_alpha, cfg.prob_clamp) / 2;
  }
  EXPECT_NEAR(only_focal.focal, expected, 1e-12);
  cfg.focal_weight = 0;
  EXPECT_EQ(total_loss(tape, clip.logits, clip.targets, cfg).total.item(), 0.0);
}

TEST(TotalLoss, EmptyOrUnmatchedClipRejected) {
  Rng rng(7);
  TwoFrameClip clip(rng);
  Tape tape;
  EXPECT_THROW(total_loss(tape, {}, {}, LossConfig{}), std::invalid_argument);
  clip.targets.erase(2);
  EXPECT_THROW(total_loss(tape, clip.logits, clip.targets, LossConfig{}), std::invalid_argument);
}

TEST(SampleClip, ForcedCases) {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const auto c = sample_clip(MomentSet({2}, 4), MomentSet({1, 3, 4}, 4), 4, rng);
    EXPECT_EQ(c.frames, (std::vector<FrameIndex>{1, 2, 3, 4}));
    EXPECT_EQ(c.relevant, (std::vector<bool>{false, true, false, false}));
  }
  const auto all = sample_clip(MomentSet({1, 2, 3, 4}, 4), MomentSet({}, 4), 4, rng);
  EXPECT_EQ(all.frames, (std::vector<FrameIndex>{1, 2, 3, 4}));
}

TEST(SampleClip, HalfFromMomentWhenAvailable) {
  Rng rng(9);
  const MomentSet mplus({3, 4, 5, 6, 7}, 20);
  const MomentSet mminus = moment_complement(mplus);
  for (int i = 0; i < 200; ++i) {
    const auto c = sample_clip(mplus, mminus, 6, rng);
    ASSERT_EQ(c.frames.size(), 6u);
    EXPECT_TRUE(std::is_sorted(c.frames.begin(), c.frames.end()));
    EXPECT_EQ(std::adjacent_find(c.frames.begin(), c.frames.end()), c.frames.end());
    int relevant = 0;
    for (std::size_t k = 0; k < c.frames.size(); ++k) {
      EXPECT_EQ(c.relevant[k], mplus.contains(c.frames[k]));
      relevant += c.relevant[k];
    }
    EXPECT_GE(relevant, 3);
  }
}

TEST(SampleClip, InclusionFrequencyMatchesDerivation) {
  Rng rng(10);
  const int n = 10000;
  std::map<FrameIndex, int> hits;
  for (int i = 0; i < n; ++i)
    for (auto f : sample_clip(MomentSet({1, 2}, 4), MomentSet({3, 4}, 4), 2, rng).frames) ++hits[f];
  const double sigma = std::sqrt(n * 2.0 / 9.0);
  EXPECT_NEAR(hits[1], n * 2.0 / 3.0, 3 * sigma);
  EXPECT_NEAR(hits[2], n * 2.0 / 3.0, 3 * sigma);
  EXPECT_NEAR(hits[3], n / 3.0, 3 * sigma);
  EXPECT_NEAR(hits[4], n / 3.0, 3 * sigma);
}

TEST(SampleClip, Errors) {
  Rng rng(11);
  EXPECT_THROW(sample_clip(MomentSet({}, 4), MomentSet({1, 2, 3, 4}, 4), 2, rng), MomentError);
  EXPECT_THROW(sample_clip(MomentSet({1}, 4), MomentSet({2, 3, 4}, 4), 3, rng), std::invalid_argument);
  EXPECT_THROW(sample_clip(MomentSet({1}, 4), MomentSet({2, 3, 4}, 4), 6, rng), std::invalid_argument);
}

VideoSample worked_video() {
  VideoSample v;
  v.video_id = "worked";
  v.length = 5;
  v.height = 2;
  v.width = 2;
  for (int t = 0; t < 5; ++t) v.frames.push_back({2, 2, 1, {0, 0, 0, 0}});
  BinaryMask left(2, 2), right(2, 2);
  left.at(0, 0) = 1;
  right.at(1, 1) = 1;
  v.objects["1"].masks.assign(5, left);
  v.objects["2"].masks.assign(5, right);
  v.moments.video_length = 5;
  v.moments.per_object.emplace("1", MomentSet({1, 2, 3}, 5));
  v.moments.per_object.emplace("2", MomentSet({3, 5}, 5));
  v.expressions.push_back({{1, 2, 3}, {3}, {"1", "2"}});
  return v;
}

TEST(Oss, ClipOutsideEveryMomentRetainsNothing) {
  const auto s = oss_filter(worked_video(), 0, {4}, OssOptions{});
  EXPECT_TRUE(s.retained.empty());
  ASSERT_EQ(s.frames.size(), 1u);
  for (double y : s.frames.at(4).target.data) EXPECT_EQ(y, 0.0);
  EXPECT_FALSE(s.frames.at(4).weight.has_value());
}

TEST(Oss, WorkedExampleRetainsBoth) {
  const auto s = oss_filter(worked_video(), 0, {3, 4}, OssOptions{});
  EXPECT_EQ(s.retained, (std::set<std::string>{"1", "2"}));
  EXPECT_EQ(s.frames.at(4).target.data, (std::vector<double>{1, 0, 0, 1}));
}

TEST(Oss, PartialRetentionAndIgnoreWeights) {
  const VideoSample v = worked_video();
  const auto bg = oss_filter(v, 0, {1, 2}, OssOptions{});
  EXPECT_EQ(bg.retained, (std::set<std::string>{"1"}));
  EXPECT_EQ(bg.frames.at(2).target.data, (std::vector<double>{1, 0, 0, 0}));
  EXPECT_FALSE(bg.frames.at(2).weight.has_value());
  const auto ignore = oss_filter(v, 0, {1, 2}, OssOptions{true, true});
  EXPECT_EQ(ignore.frames.at(2).target.data, (std::vector<double>{1, 0, 0, 0}));
  ASSERT_TRUE(ignore.frames.at(2).weight.has_value());
  EXPECT_EQ(ignore.frames.at(2).weight->data, (std::vector<double>{1, 1, 1, 0}));
}

TEST(Oss, DisabledKeepsEveryReferent) {
  const auto s = oss_filter(worked_video(), 0, {4}, OssOptions{false, false});
  EXPECT_EQ(s.retained, (std::set<std::string>{"1", "2"}));
  EXPECT_EQ(s.frames.at(4).target.data, (std::vector<double>{1, 0, 0, 1}));
}

TEST(Oss, MissingMasksForRetainedObject) {
  VideoSample v = worked_video();
  v.objects["2"].masks.pop_back();
  EXPECT_THROW(oss_filter(v, 0, {5}, OssOptions{}), SchemaError);
}

TEST(Oss, MatchesPairwiseOracle) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const VideoSample v = oracle::random_video(rng);
    const auto clip = oracle::random_clip(rng, v.length);
    const auto s = oss_filter(v, 0, clip, OssOptions{});
    const auto ref = oracle::oss(v, 0, clip);
    EXPECT_EQ(s.retained, ref.retained);
    for (FrameIndex t : clip) EXPECT_EQ(s.frames.at(t).target.data, mask_to_tensor(ref.targets.at(t)).data);
  }
}

TEST(Oss, RetentionIsMonotoneInClip) {
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const VideoSample v = oracle::random_video(rng);
    const auto small = oracle::random_clip(rng, v.length);
    std::set<FrameIndex> grown(small.begin(), small.end());
    for (auto t : oracle::random_clip(rng, v.length)) grown.insert(t);
    const auto a = oss_filter(v, 0, small, OssOptions{}).retained;
    const auto b = oss_filter(v, 0, {grown.begin(), grown.end()}, OssOptions{}).retained;
    EXPECT_TRUE(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  }
}

}  // namespace
}  // namespace samdwich
