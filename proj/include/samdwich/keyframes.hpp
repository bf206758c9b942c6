#pragma once

// Frame-relevance scorers and selection plans for moment-aware inference.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "samdwich/dataset.hpp"
#include "samdwich/memory.hpp"
#include "samdwich/moments.hpp"
#include "samdwich/rng.hpp"

namespace samdwich {

/// Scores keyed by (video_id, expression_index); one score per frame.
using ScoreTable = std::map<std::pair<std::string, int>, std::vector<double>>;

struct ScorerConfig {
  enum class Kind { kOracleNoisy, kUniformRandom, kExternal };
  Kind kind = Kind::kOracleNoisy;
  double accuracy = 0.5;   // probability a frame keeps its true relevance label
  double noise = 0.1;      // uniform tie-break noise amplitude
  std::uint64_t seed = 11;
  const ScoreTable* external = nullptr;
};

inline std::uint64_t query_seed(std::uint64_t seed, const std::string& video_id, std::size_t e) {
  return mix_seed(mix_seed(seed, fnv1a64(video_id)), e);
}

/// Per-frame relevance scores for expression `e` of `v`.
inline std::vector<double> score_frames(const ScorerConfig& cfg, const VideoSample& v, std::size_t e) {
  if (v.length < 1) throw std::invalid_argument("score_frames: empty video");
  std::vector<double> scores(static_cast<std::size_t>(v.length));
  Rng rng(query_seed(cfg.seed, v.video_id, e));
  switch (cfg.kind) {
    case ScorerConfig::Kind::kOracleNoisy: {
      const MomentSet mplus = v.relevant_moment(e);
      for (int t = 1; t <= v.length; ++t) {
        double s = mplus.contains(t) ? 1.0 : 0.0;
        if (!rng.bernoulli(cfg.accuracy)) s = 1.0 - s;
        scores[static_cast<std::size_t>(t - 1)] = s + rng.uniform(0.0, cfg.noise);
      }
      break;
    }
    case ScorerConfig::Kind::kUniformRandom:
      for (auto& s : scores) s = rng.uniform();
      break;
    case ScorerConfig::Kind::kExternal: {
      if (!cfg.external) throw std::invalid_argument("score_frames: no external score table");
      auto it = cfg.external->find({v.video_id, static_cast<int>(e)});
      if (it == cfg.external->end())
        throw std::invalid_argument("score_frames: no external scores for " + v.video_id + "/" +
                                    std::to_string(e));
      if (it->second.size() != scores.size())
        throw std::invalid_argument("score_frames: external scores for " + v.video_id + "/" +
                                    std::to_string(e) + " cover " +
                                    std::to_string(it->second.size()) + " of " +
                                    std::to_string(v.length) + " frames");
      scores = it->second;
      break;
    }
  }
  return scores;
}

/// The k highest-scoring frames (1-based), restricted to `interval` when
/// given, in descending score order with ties to the earlier frame.
inline std::vector<FrameIndex> select_topk(const std::vector<double>& scores, int k,
                                           const std::optional<std::vector<Segment>>& interval = {}) {
  if (k < 1) throw std::invalid_argument("select_topk: k must be >= 1");
  const int tv = static_cast<int>(scores.size());
  std::vector<FrameIndex> pool;
  for (int t = 1; t <= tv; ++t) {
    if (interval) {
      const bool inside = std::any_of(interval->begin(), interval->end(),
                                      [&](const Segment& s) { return t >= s.start && t <= s.end; });
      if (!inside) continue;
    }
    pool.push_back(t);
  }
  std::stable_sort(pool.begin(), pool.end(), [&](FrameIndex a, FrameIndex b) {
    return scores[static_cast<std::size_t>(a - 1)] > scores[static_cast<std::size_t>(b - 1)];
  });
  if (static_cast<int>(pool.size()) > k) pool.resize(static_cast<std::size_t>(k));
  return pool;
}

struct SelectionPlan {
  enum class Strategy { kRandom, kTopk, kTopkInInterval, kGtMoments };
  Strategy strategy = Strategy::kGtMoments;
  MomentSet proxy;                  // stands in for M+
  std::vector<FrameIndex> order;    // full processing order, proxy frames first
};

struct PlanInputs {
  SelectionPlan::Strategy strategy = SelectionPlan::Strategy::kGtMoments;
  int k = 4;
  int video_length = 1;
  const std::vector<double>* scores = nullptr;
  const MomentSet* gt = nullptr;
  std::optional<std::vector<Segment>> interval;
  std::uint64_t seed = 0;  // for the random strategy
};

inline SelectionPlan build_plan(const PlanInputs& in) {
  using S = SelectionPlan::Strategy;
  SelectionPlan plan;
  plan.strategy = in.strategy;
  std::vector<FrameIndex> first;
  const int tv = in.video_length;
  switch (in.strategy) {
    case S::kGtMoments:
      if (!in.gt) throw std::invalid_argument("build_plan: gt_moments strategy needs GT moments");
      first = in.gt->indices();
      break;
    case S::kTopk:
      if (!in.scores) throw std::invalid_argument("build_plan: topk strategy needs scores");
      first = select_topk(*in.scores, std::min(in.k, tv));
      break;
    case S::kTopkInInterval:
      if (!in.scores || !in.interval)
        throw std::invalid_argument("build_plan: topk_in_interval needs scores and an interval");
      first = select_topk(*in.scores, std::min(in.k, tv), in.interval);
      break;
    case S::kRandom: {
      if (in.k < 1) throw std::invalid_argument("build_plan: k must be >= 1");
      std::vector<FrameIndex> pool(static_cast<std::size_t>(tv));
      std::iota(pool.begin(), pool.end(), 1);
      Rng rng(in.seed);
      rng.shuffle(pool);
      pool.resize(static_cast<std::size_t>(std::min(in.k, tv)));
      std::sort(pool.begin(), pool.end());
      first = pool;
      break;
    }
  }
  if (first.empty()) {
    if (!in.scores) throw std::invalid_argument("build_plan: empty selection and no scores to fall back on");
    first = select_topk(*in.scores, 1);
  }
  plan.proxy = MomentSet(first, tv);
  plan.order = propagation_order(plan.proxy, first);
  return plan;
}

/// Parses `video_id,expression_index,frame,score` rows; frames are 1-based and
/// every (video, expression) must cover a contiguous 1..n frame range.
inline ScoreTable parse_score_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("score CSV: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "video_id,expression_index,frame,score")
    throw std::invalid_argument("score CSV: unexpected header '" + line + "'");
  std::map<std::pair<std::string, int>, std::map<int, double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string vid, e, f, s;
    if (!std::getline(ss, vid, ',') || !std::getline(ss, e, ',') || !std::getline(ss, f, ',') ||
        !std::getline(ss, s))
      throw std::invalid_argument("score CSV line " + std::to_string(lineno) + ": expected 4 fields");
    try {
      std::size_t used = 0;
      const int ei = std::stoi(e, &used);
      if (used != e.size()) throw std::invalid_argument("");
      const int fi = std::stoi(f, &used);
      if (used != f.size()) throw std::invalid_argument("");
      const double sv = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("");
      if (fi < 1 || ei < 0) throw std::invalid_argument("");
      if (!rows[{vid, ei}].emplace(fi, sv).second)
        throw std::invalid_argument("duplicate");
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("score CSV line " + std::to_string(lineno) + ": malformed row");
    } catch (const std::out_of_range&) {
      throw std::invalid_argument("score CSV line " + std::to_string(lineno) + ": value out of range");
    }
  }
  ScoreTable out;
  for (auto& [key, frames] : rows) {
    std::vector<double> v;
    int expect = 1;
    for (auto& [f, s] : frames) {
      if (f != expect)
        throw std::invalid_argument("score CSV: " + key.first + "/" + std::to_string(key.second) +
                                    " is missing frame " + std::to_string(expect));
      v.push_back(s);
      ++expect;
    }
    out.emplace(key, std::move(v));
  }
  return out;
}

}  // namespace samdwich
