#include <gtest/gtest.h>

#include <sstream>

#include "samdwich/metrics.hpp"
#include "support/oracles.hpp"

namespace samdwich {
namespace {

BinaryMask square(int h, int w, int y0, int x0, int size) {
  BinaryMask m(h, w);
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) m.at(y, x) = 1;
  return m;
}

RetrievalQuery query(std::vector<ScoredSegment> ranked, std::vector<Segment> gt) { return {std::move(ranked), std::move(gt)}; }

TEST(RegionSimilarity, Examples) {
  BinaryMask a(1, 4), b(1, 4);
  a.bits = {1, 1, 0, 0};
  b.bits = {0, 1, 1, 0};
  EXPECT_DOUBLE_EQ(region_similarity(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(region_similarity(a, a), 1.0);
  EXPECT_DOUBLE_EQ(region_similarity(BinaryMask(2, 2), BinaryMask(2, 2)), 1.0);
  EXPECT_DOUBLE_EQ(region_similarity(BinaryMask(2, 2), square(2, 2, 0, 0, 1)), 0.0);
  EXPECT_THROW(region_similarity(a, BinaryMask(4, 1)), std::invalid_argument);
}

TEST(Boundary, FilledSquareRing) {
  const BinaryMask b = mask_boundary(square(5, 5, 1, 1, 3));
  int n = 0;
  for (auto bit : b.bits) n += bit;
  EXPECT_EQ(n, 8);
  EXPECT_FALSE(b.at(2, 2));
  EXPECT_EQ(mask_boundary(square(2, 2, 0, 0, 2)).bits, square(2, 2, 0, 0, 2).bits);
  EXPECT_FALSE(mask_boundary(square(3, 3, 0, 0, 3)).at(1, 1));
}

TEST(ContourAccuracy, ToleranceAbsorbsOnePixelShift) {
  const BinaryMask gt = square(16, 16, 4, 4, 6), shifted = square(16, 16, 5, 5, 6);
  EXPECT_DOUBLE_EQ(contour_accuracy(shifted, gt, 1), 1.0);
  EXPECT_LT(contour_accuracy(shifted, gt, 0), 1.0);
  EXPECT_DOUBLE_EQ(contour_accuracy(gt, gt, 0), 1.0);
  EXPECT_DOUBLE_EQ(contour_accuracy(BinaryMask(4, 4), BinaryMask(4, 4), 1), 1.0);
  EXPECT_DOUBLE_EQ(contour_accuracy(BinaryMask(16, 16), gt, 1), 0.0);
  EXPECT_DOUBLE_EQ(contour_accuracy(square(16, 16, 0, 0, 2), square(16, 16, 12, 12, 2), 1), 0.0);
  EXPECT_THROW(contour_accuracy(gt, gt, -1), std::invalid_argument);
}

TEST(ContourAccuracy, MatchesAllPairsOracle) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const int h = rng.range(1, 10), w = rng.range(1, 10);
    BinaryMask a(h, w), b(h, w);
    const double pa = rng.uniform(), pb = rng.uniform();
    for (auto& bit : a.bits) bit = rng.bernoulli(pa);
    for (auto& bit : b.bits) bit = rng.bernoulli(pb);
    const int tol = rng.range(0, 3);
    EXPECT_NEAR(contour_accuracy(a, b, tol), oracle::contour_accuracy(a, b, tol), 1e-12);
    EXPECT_NEAR(contour_accuracy(a, b, tol), contour_accuracy(b, a, tol), 1e-12);
    EXPECT_DOUBLE_EQ(region_similarity(a, b), region_similarity(b, a));
    if (!a.empty() && !b.empty()) EXPECT_DOUBLE_EQ(contour_accuracy(a, b, std::max(h, w)), 1.0);
  }
}

TEST(Retrieval, ThreePredictionPrCurve) {
  // Ranked hit, miss, hit against two GT intervals: PR points (1, 1/2), (1/2, 1/2), (2/3, 1).
  const RetrievalQuery q = query({{{1, 3}, 0.7}, {{10, 13}, 0.9}, {{20, 22}, 0.8}}, {{1, 4}, {10, 14}});
  EXPECT_DOUBLE_EQ(average_precision(q, 0.5), 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
  EXPECT_DOUBLE_EQ(average_precision(q, 0.78), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(q, 0.9), 0.0);
}

TEST(Retrieval, RecallIsNonIncreasingInThreshold) {
  Rng rng(2);
  std::vector<RetrievalQuery> qs;
  for (int i = 0; i < 50; ++i) {
    const int a = rng.range(1, 20), b = rng.range(1, 20);
    qs.push_back(query({{{a, a + rng.range(0, 6)}, 1.0}}, {{b, b + rng.range(0, 6)}}));
  }
  double prev = 1.0;
  for (double theta = 0.05; theta <= 1.0; theta += 0.05) {
    const double r = recall_at_iou(qs, theta);
    EXPECT_LE(r, prev);
    prev = r;
  }
}

TEST(ContourAccuracy, DefaultTolerance) {
  EXPECT_EQ(default_boundary_tolerance(32, 32), 1);
  EXPECT_EQ(default_boundary_tolerance(480, 854), 8);
}

TEST(IntervalIou, Examples) {
  EXPECT_DOUBLE_EQ(interval_iou({2, 8}, {4, 10}), 5.0 / 9.0);
  EXPECT_DOUBLE_EQ(interval_iou({1, 3}, {1, 3}), 1.0);
  EXPECT_DOUBLE_EQ(interval_iou({1, 3}, {4, 6}), 0.0);
}

TEST(Retrieval, RecallAtIou) {
  const std::vector<RetrievalQuery> qs{query({{{2, 8}, 1.0}}, {{4, 10}}), query({{{1, 4}, 1.0}}, {{1, 4}}),
                                       query({{{1, 2}, 0.9}, {{5, 9}, 0.1}}, {{5, 9}})};
  EXPECT_DOUBLE_EQ(recall_at_iou(qs, 0.5), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(recall_at_iou(qs, 0.7), 1.0 / 3.0);
  EXPECT_THROW(recall_at_iou({query({}, {{1, 2}})}, 0.5), std::invalid_argument);
}

TEST(Retrieval, AveragePrecision) {
  EXPECT_DOUBLE_EQ(average_precision(query({{{1, 3}, 0.9}}, {{1, 3}}), 0.5), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(query({{{7, 9}, 0.9}, {{1, 3}, 0.8}}, {{1, 3}}), 0.5), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(query({{{1, 3}, 0.1}, {{7, 9}, 0.9}}, {{1, 3}}), 0.5), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(query({{{1, 3}, 0.9}}, {{1, 3}, {6, 8}}), 0.5), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(query({{{1, 3}, 0.9}, {{1, 3}, 0.8}}, {{1, 3}}), 0.5), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(query({{{1, 3}, 0.9}}, {}), 0.5), 0.0);
}

TEST(Retrieval, AveragedMapCountsThresholds) {
  const std::vector<RetrievalQuery> qs{query({{{1, 9}, 1.0}}, {{1, 7}})};
  EXPECT_NEAR(map_averaged(qs), 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(map_at_iou(qs, 0.75), 1.0);
  EXPECT_DOUBLE_EQ(map_at_iou(qs, 0.8), 0.0);
}

TEST(Top1, SkipsFullSpanQueries) {
  const std::vector<MomentSet> gt{MomentSet({1, 2}, 5), MomentSet({4}, 5), MomentSet({3}, 5), MomentSet::full(5)};
  const auto acc = top1_keyframe_accuracy({2, 4, 1, 5}, gt);
  ASSERT_TRUE(acc.has_value());
  EXPECT_DOUBLE_EQ(*acc, 2.0 / 3.0);
  EXPECT_FALSE(top1_keyframe_accuracy({1}, {MomentSet::full(5)}).has_value());
  EXPECT_THROW(top1_keyframe_accuracy({1, 2}, {MomentSet::full(5)}), std::invalid_argument);
}

TEST(Report, ExpressionAndCorpusMeans) {
  const BinaryMask gt = square(8, 8, 2, 2, 3);
  EvalReport r;
  ExpressionScores perfect = score_expression({gt, gt}, {gt, gt}, 1);
  EXPECT_DOUBLE_EQ(perfect.jf, 1.0);
  ExpressionScores half = score_expression({gt, BinaryMask(8, 8)}, {gt, gt}, 1);
  EXPECT_DOUBLE_EQ(half.j, 0.5);
  EXPECT_DOUBLE_EQ(half.f, 0.5);
  perfect.video_id = "a";
  half.video_id = "b";
  r.per_expression = {perfect, half};
  fill_corpus_segmentation(r);
  EXPECT_DOUBLE_EQ(r.corpus.jf, 0.75);
  EXPECT_THROW(score_expression({gt}, {gt, gt}, 1), std::invalid_argument);

  const auto j = report_to_json(r);
  EXPECT_DOUBLE_EQ(j["corpus"]["JF"].get<double>(), 75.0);
  EXPECT_TRUE(j["corpus"]["top1"].is_null());
  EXPECT_EQ(j["per_expression"].size(), 2u);

  std::istringstream table(report_to_table(r));
  std::string line;
  std::size_t width = 0;
  for (int i = 0; i < 4 && std::getline(table, line); ++i) {
    if (width == 0) width = line.size();
    EXPECT_EQ(line.size(), width) << line;
  }
}

}  // namespace
}  // namespace samdwich
