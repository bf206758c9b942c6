#pragma once

// Segmentation (J, F, J&F) and moment-retrieval (R1@IoU, mAP@IoU, top-1
// keyframe accuracy) metrics, plus the evaluation report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "samdwich/dataset.hpp"
#include "samdwich/moments.hpp"

namespace samdwich {

inline void require_same_size(const char* who, const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument(std::string(who) + ": mask sizes " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " and " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + " differ");
}

/// Mask IoU; 1 when both masks are empty.
inline double region_similarity(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_size("region_similarity", pred, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    inter += pred.bits[i] & gt.bits[i];
    uni += pred.bits[i] | gt.bits[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Mask pixels with a background 4-neighbour or lying on the image border.
inline BinaryMask mask_boundary(const BinaryMask& m) {
  BinaryMask b(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == m.height - 1 || x == m.width - 1 ||
                        !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
      b.at(y, x) = edge;
    }
  return b;
}

namespace detail {

// Chebyshev dilation of a mask by `tol` pixels.
inline BinaryMask dilate(const BinaryMask& m, int tol) {
  BinaryMask rows(m.height, m.width), out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool any = false;
      for (int d = std::max(0, x - tol); d <= std::min(m.width - 1, x + tol) && !any; ++d)
        any = m.at(y, d);
      rows.at(y, x) = any;
    }
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool any = false;
      for (int d = std::max(0, y - tol); d <= std::min(m.height - 1, y + tol) && !any; ++d)
        any = rows.at(d, x);
      out.at(y, x) = any;
    }
  return out;
}

inline double matched_fraction(const BinaryMask& from, const BinaryMask& to_dilated) {
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < from.bits.size(); ++i)
    if (from.bits[i]) {
      ++n;
      hit += to_dilated.bits[i];
    }
  return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace detail

/// Default boundary tolerance: ceil(0.008 * image diagonal).
inline int default_boundary_tolerance(int height, int width) {
  return static_cast<int>(std::ceil(0.008 * std::hypot(double(height), double(width))));
}

/// Boundary F-measure with a Chebyshev-distance tolerance.
inline double contour_accuracy(const BinaryMask& pred, const BinaryMask& gt, int tol) {
  require_same_size("contour_accuracy", pred, gt);
  if (tol < 0) throw std::invalid_argument("contour_accuracy: negative tolerance");
  const BinaryMask bp = mask_boundary(pred), bg = mask_boundary(gt);
  const bool ep = bp.empty(), eg = bg.empty();
  if (ep && eg) return 1.0;
  if (ep || eg) return 0.0;
  const double precision = detail::matched_fraction(bp, detail::dilate(bg, tol));
  const double recall = detail::matched_fraction(bg, detail::dilate(bp, tol));
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

inline double jf_mean(double j, double f) { return 0.5 * (j + f); }

/// Frame-count IoU of closed intervals.
inline double interval_iou(const Segment& a, const Segment& b) {
  const int inter = std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start) + 1);
  const int uni = a.length() + b.length() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

struct ScoredSegment {
  Segment segment;
  double score = 0;
};

/// One retrieval query: predictions ranked by descending score, and GT intervals.
struct RetrievalQuery {
  std::vector<ScoredSegment> ranked;
  std::vector<Segment> gt;
};

/// Fraction of queries whose top-1 prediction reaches IoU >= theta with any GT interval.
inline double recall_at_iou(const std::vector<RetrievalQuery>& queries, double theta) {
  if (queries.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (queries[q].ranked.empty())
      throw std::invalid_argument("recall_at_iou: query " + std::to_string(q) + " has no prediction");
    const Segment& top = queries[q].ranked.front().segment;
    double best = 0;
    for (const auto& g : queries[q].gt) best = std::max(best, interval_iou(top, g));
    hits += best >= theta;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

/// All-point interpolated AP with greedy one-to-one matching at IoU >= theta.
inline double average_precision(const RetrievalQuery& q, double theta) {
  if (q.gt.empty()) return 0.0;
  std::vector<std::size_t> order(q.ranked.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return q.ranked[a].score > q.ranked[b].score;
  });
  std::vector<bool> used(q.gt.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Segment& s = q.ranked[order[r]].segment;
    double best = -1;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < q.gt.size(); ++g) {
      if (used[g]) continue;
      const double iou = interval_iou(s, q.gt[g]);
      if (iou >= theta && iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best >= 0) {
      used[best_g] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(q.gt.size()));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

inline double map_at_iou(const std::vector<RetrievalQuery>& queries, double theta) {
  if (queries.empty()) return 0.0;
  double s = 0;
  for (const auto& q : queries) s += average_precision(q, theta);
  return s / static_cast<double>(queries.size());
}

/// Mean of mAP@theta over theta = 0.50, 0.55, ..., 0.95.
inline double map_averaged(const std::vector<RetrievalQuery>& queries) {
  double s = 0;
  for (int i = 0; i < 10; ++i) s += map_at_iou(queries, 0.5 + 0.05 * i);
  return s / 10.0;
}

/// Fraction of queries whose predicted top frame lies in M+, skipping queries
/// whose M+ covers the whole video. Returns nullopt when every query is skipped.
inline std::optional<double> top1_keyframe_accuracy(const std::vector<FrameIndex>& predicted,
                                                    const std::vector<MomentSet>& gt) {
  if (predicted.size() != gt.size())
    throw std::invalid_argument("top1_keyframe_accuracy: prediction and GT counts differ");
  std::size_t n = 0, hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i].is_full_span()) continue;
    ++n;
    hits += gt[i].contains(predicted[i]);
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(n);
}

struct ExpressionScores {
  std::string video_id;
  int expression_index = 0;
  double j = 0, f = 0, jf = 0;
};

struct CorpusScores {
  double j = 0, f = 0, jf = 0;
  double r1_50 = 0, r1_70 = 0;
  double map = 0, map_50 = 0, map_75 = 0;
  std::optional<double> top1;
};

struct EvalReport {
  std::vector<ExpressionScores> per_expression;
  CorpusScores corpus;
  std::string build_id;
  std::string config_hash;
};

/// Mean J, F, J&F over all frames of one expression.
inline ExpressionScores score_expression(const std::vector<BinaryMask>& pred,
                                         const std::vector<BinaryMask>& gt, int tol) {
  if (pred.size() != gt.size() || pred.empty())
    throw std::invalid_argument("score_expression: " + std::to_string(pred.size()) +
                                " predicted frames for " + std::to_string(gt.size()) + " GT frames");
  ExpressionScores s;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    s.j += region_similarity(pred[t], gt[t]);
    s.f += contour_accuracy(pred[t], gt[t], tol);
  }
  s.j /= static_cast<double>(pred.size());
  s.f /= static_cast<double>(pred.size());
  s.jf = jf_mean(s.j, s.f);
  return s;
}

/// Corpus segmentation means as the mean of per-expression means.
inline void fill_corpus_segmentation(EvalReport& r) {
  if (r.per_expression.empty()) return;
  double j = 0, f = 0;
  for (const auto& e : r.per_expression) {
    j += e.j;
    f += e.f;
  }
  const double n = static_cast<double>(r.per_expression.size());
  r.corpus.j = j / n;
  r.corpus.f = f / n;
  r.corpus.jf = jf_mean(r.corpus.j, r.corpus.f);
}

inline void fill_corpus_retrieval(EvalReport& r, const std::vector<RetrievalQuery>& queries,
                                  const std::vector<FrameIndex>& top_frames,
                                  const std::vector<MomentSet>& gt) {
  if (queries.empty()) return;
  r.corpus.r1_50 = recall_at_iou(queries, 0.5);
  r.corpus.r1_70 = recall_at_iou(queries, 0.7);
  r.corpus.map = map_averaged(queries);
  r.corpus.map_50 = map_at_iou(queries, 0.5);
  r.corpus.map_75 = map_at_iou(queries, 0.75);
  r.corpus.top1 = top1_keyframe_accuracy(top_frames, gt);
}

/// Metrics are reported x100.
inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["build"] = r.build_id;
  j["config_hash"] = r.config_hash;
  j["per_expression"] = nlohmann::json::array();
  for (const auto& e : r.per_expression)
    j["per_expression"].push_back({{"video_id", e.video_id},
                                   {"expression_index", e.expression_index},
                                   {"J", 100 * e.j},
                                   {"F", 100 * e.f},
                                   {"JF", 100 * e.jf}});
  const auto& c = r.corpus;
  j["corpus"] = {{"J", 100 * c.j},         {"F", 100 * c.f},         {"JF", 100 * c.jf},
                 {"R1_50", 100 * c.r1_50}, {"R1_70", 100 * c.r1_70}, {"mAP", 100 * c.map},
                 {"mAP_50", 100 * c.map_50}, {"mAP_75", 100 * c.map_75}};
  j["corpus"]["top1"] = c.top1 ? nlohmann::json(100 * *c.top1) : nlohmann::json(nullptr);
  return j;
}

inline std::string report_to_table(const EvalReport& r) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-16s %5s %8s %8s %8s\n", "video", "expr", "J", "F", "J&F");
  out += buf;
  for (const auto& e : r.per_expression) {
    std::snprintf(buf, sizeof buf, "%-16s %5d %8.2f %8.2f %8.2f\n", e.video_id.c_str(),
                  e.expression_index, 100 * e.j, 100 * e.f, 100 * e.jf);
    out += buf;
  }
  const auto& c = r.corpus;
  std::snprintf(buf, sizeof buf, "%-16s %5s %8.2f %8.2f %8.2f\n", "corpus", "", 100 * c.j, 100 * c.f,
                100 * c.jf);
  out += buf;
  std::snprintf(buf, sizeof buf, "\n%-8s %8s %8s %8s %8s %8s\n", "R1@.5", "R1@.7", "mAP",
                "mAP@.5", "mAP@.75", "top1");
  out += buf;
  std::string top1 = c.top1 ? std::to_string(100 * *c.top1).substr(0, 6) : "n/a";
  std::snprintf(buf, sizeof buf, "%-8.2f %8.2f %8.2f %8.2f %8.2f %8s\n", 100 * c.r1_50, 100 * c.r1_70,
                100 * c.map, 100 * c.map_50, 100 * c.map_75, top1.c_str());
  out += buf;
  return out;
}

}  // namespace samdwich
