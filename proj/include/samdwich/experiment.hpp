#pragma once

// Prediction files, corpus evaluation and the ablation grid.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "samdwich/config.hpp"
#include "samdwich/dataset.hpp"
#include "samdwich/keyframes.hpp"
#include "samdwich/memory.hpp"
#include "samdwich/metrics.hpp"
#include "samdwich/synth.hpp"
#include "samdwich/training.hpp"

namespace samdwich {

inline constexpr const char* kPredictionFormat = "samdwich-pred/1";

inline std::string build_id() {
#ifdef SAMDWICH_BUILD_ID
  return SAMDWICH_BUILD_ID;
#else
  return "unknown";
#endif
}

struct Prediction {
  std::string video_id;
  int expression_index = 0;
  std::vector<BinaryMask> masks;          // one per frame
  std::vector<ScoredSegment> segments;    // ranked, best first
  FrameIndex top_frame = 1;
};

struct PredictionFile {
  std::string config_hash;
  std::string build;
  std::vector<Prediction> entries;
};

inline nlohmann::json predictions_to_json(const PredictionFile& f) {
  nlohmann::json j;
  j["format_version"] = kPredictionFormat;
  j["config_hash"] = f.config_hash;
  j["build"] = f.build;
  j["predictions"] = nlohmann::json::array();
  for (const auto& p : f.entries) {
    nlohmann::json e;
    e["video_id"] = p.video_id;
    e["expression_index"] = p.expression_index;
    e["masks"] = nlohmann::json::array();
    for (const auto& m : p.masks) e["masks"].push_back(detail::rle_to_json(encode_mask_rle(m)));
    e["segments"] = nlohmann::json::array();
    for (const auto& s : p.segments)
      e["segments"].push_back({{"start", s.segment.start}, {"end", s.segment.end}, {"score", s.score}});
    e["top_frame"] = p.top_frame;
    j["predictions"].push_back(std::move(e));
  }
  return j;
}

inline PredictionFile predictions_from_json(const nlohmann::json& j) {
  using detail::field;
  using detail::int_field;
  PredictionFile f;
  if (!j.is_object()) throw SchemaError("<root>", "expected an object");
  const auto& version = field(j, "format_version", "");
  if (!version.is_string() || version.get<std::string>() != kPredictionFormat)
    throw SchemaError("format_version", std::string("expected \"") + kPredictionFormat + "\"");
  if (auto it = j.find("config_hash"); it != j.end() && it->is_string()) f.config_hash = *it;
  if (auto it = j.find("build"); it != j.end() && it->is_string()) f.build = *it;
  const auto& preds = field(j, "predictions", "");
  if (!preds.is_array()) throw SchemaError("predictions", "expected an array");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string path = "predictions[" + std::to_string(i) + "]";
    const auto& e = preds[i];
    if (!e.is_object()) throw SchemaError(path, "expected an object");
    Prediction p;
    const auto& vid = field(e, "video_id", path);
    if (!vid.is_string()) throw SchemaError(path + ".video_id", "expected a string");
    p.video_id = vid.get<std::string>();
    p.expression_index = int_field(e, "expression_index", path, 0);
    p.top_frame = int_field(e, "top_frame", path, 1);
    const auto& masks = field(e, "masks", path);
    if (!masks.is_array()) throw SchemaError(path + ".masks", "expected an array");
    for (std::size_t t = 0; t < masks.size(); ++t)
      p.masks.push_back(decode_mask_rle(detail::rle_from_json(masks[t], path + ".masks[" + std::to_string(t) + "]")));
    const auto& segs = field(e, "segments", path);
    if (!segs.is_array()) throw SchemaError(path + ".segments", "expected an array");
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const std::string sp = path + ".segments[" + std::to_string(s) + "]";
      ScoredSegment seg;
      seg.segment.start = int_field(segs[s], "start", sp, 1);
      seg.segment.end = int_field(segs[s], "end", sp, seg.segment.start);
      const auto& score = field(segs[s], "score", sp);
      if (!score.is_number()) throw SchemaError(sp + ".score", "expected a number");
      seg.score = score.get<double>();
      p.segments.push_back(seg);
    }
    f.entries.push_back(std::move(p));
  }
  return f;
}

inline ScorerConfig scorer_from(const InferenceConfig& c, const ScoreTable* external) {
  ScorerConfig s;
  s.kind = c.scorer;
  s.accuracy = c.scorer_accuracy;
  s.noise = c.scorer_noise;
  s.seed = c.scorer_seed;
  s.external = external;
  return s;
}

/// The highest-mean-score run of frames scoring above 0.5: the retrieval
/// interval used by the topk_in_interval strategy.
inline std::vector<Segment> score_interval(const std::vector<double>& scores) {
  std::vector<FrameIndex> above;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > 0.5) above.push_back(static_cast<FrameIndex>(i + 1));
  if (above.empty()) {
    const auto top = select_topk(scores, 1).front();
    return {{top, top}};
  }
  const auto segs = set_to_segments(MomentSet(above, static_cast<int>(scores.size())));
  const Segment* best = &segs.front();
  double best_mean = -1;
  for (const auto& s : segs) {
    double m = 0;
    for (int t = s.start; t <= s.end; ++t) m += scores[static_cast<std::size_t>(t - 1)];
    m /= s.length();
    if (m > best_mean) {
      best_mean = m;
      best = &s;
    }
  }
  return {*best};
}

inline std::vector<ScoredSegment> rank_segments(const MomentSet& proxy, const std::vector<double>& scores) {
  std::vector<ScoredSegment> out;
  for (const auto& s : set_to_segments(proxy)) {
    double m = 0;
    for (int t = s.start; t <= s.end; ++t) m += scores[static_cast<std::size_t>(t - 1)];
    out.push_back({s, m / s.length()});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredSegment& a, const ScoredSegment& b) { return a.score > b.score; });
  return out;
}

/// The train and eval corpora of the synthetic benchmark for `cfg`.
inline std::pair<std::vector<VideoSample>, std::vector<VideoSample>> synth_benchmark(const RunConfig& cfg) {
  return {generate_dataset(cfg.synth, cfg.synth.train_videos, mix_seed(cfg.synth_seed, 1), "train"),
          generate_dataset(cfg.synth, cfg.synth.eval_videos, mix_seed(cfg.synth_seed, 2), "eval")};
}

/// Segments every expression of `videos` with `params`.
inline PredictionFile run_predictions(const RunConfig& cfg, const ModelParams& params,
                                      const std::vector<VideoSample>& videos,
                                      const ScoreTable* external = nullptr) {
  FeatureCache cache(videos, cfg.model.encoder);
  const FrozenContext frozen = make_frozen_context(cfg.model);
  const ScorerConfig scorer = scorer_from(cfg.inference, external);
  PredictionFile out;
  out.config_hash = config_hash(cfg);
  out.build = build_id();
  for (std::size_t vi = 0; vi < videos.size(); ++vi) {
    const auto& v = videos[vi];
    for (std::size_t e = 0; e < v.expressions.size(); ++e) {
      const auto scores = score_frames(scorer, v, e);
      const MomentSet gt = v.relevant_moment(e);
      PlanInputs in;
      in.strategy = cfg.inference.strategy;
      in.k = cfg.inference.k;
      in.video_length = v.length;
      in.scores = &scores;
      in.gt = &gt;
      in.seed = query_seed(cfg.inference.scorer_seed ^ 0x52414e44ULL, v.video_id, e);
      if (in.strategy == SelectionPlan::Strategy::kTopkInInterval) in.interval = score_interval(scores);
      const SelectionPlan plan = build_plan(in);
      Prediction p;
      p.video_id = v.video_id;
      p.expression_index = static_cast<int>(e);
      p.segments = rank_segments(plan.proxy, scores);
      p.top_frame = select_topk(scores, 1).front();
      const VideoFeatures feats = cache.features(videos, vi, e);
      if (cfg.train.use_mdp) {
        p.masks = run_inference(feats, plan.proxy, plan.order, params, cfg.model, frozen);
      } else {
        const MomentSet all = MomentSet::full(v.length);
        p.masks = run_inference(feats, all, all.indices(), params, cfg.model, frozen);
      }
      out.entries.push_back(std::move(p));
    }
  }
  return out;
}

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scores predictions against the referred objects' masks on every frame.
inline EvalReport evaluate(const PredictionFile& preds, const std::vector<VideoSample>& videos,
                           int boundary_tolerance = -1) {
  std::map<std::pair<std::string, int>, const Prediction*> index;
  for (const auto& p : preds.entries)
    if (!index.emplace(std::make_pair(p.video_id, p.expression_index), &p).second)
      throw EvaluationError("duplicate prediction for " + p.video_id + "/" + std::to_string(p.expression_index));
  EvalReport report;
  report.config_hash = preds.config_hash;
  report.build_id = build_id();
  std::vector<RetrievalQuery> queries;
  std::vector<FrameIndex> top_frames;
  std::vector<MomentSet> gts;
  for (const auto& v : videos) {
    const int tol = boundary_tolerance >= 0 ? boundary_tolerance : default_boundary_tolerance(v.height, v.width);
    for (std::size_t e = 0; e < v.expressions.size(); ++e) {
      auto it = index.find({v.video_id, static_cast<int>(e)});
      if (it == index.end())
        throw EvaluationError("no prediction for " + v.video_id + "/" + std::to_string(e));
      const Prediction& p = *it->second;
      if (static_cast<int>(p.masks.size()) != v.length)
        throw EvaluationError("prediction for " + v.video_id + "/" + std::to_string(e) + " has " +
                              std::to_string(p.masks.size()) + " masks, video has " +
                              std::to_string(v.length) + " frames");
      std::vector<BinaryMask> gt;
      for (int t = 1; t <= v.length; ++t) gt.push_back(v.target_mask(e, t));
      ExpressionScores s = score_expression(p.masks, gt, tol);
      s.video_id = v.video_id;
      s.expression_index = static_cast<int>(e);
      report.per_expression.push_back(s);
      const MomentSet m = v.relevant_moment(e);
      if (!p.segments.empty() && !m.empty()) {
        queries.push_back({p.segments, set_to_segments(m)});
        top_frames.push_back(p.top_frame);
        gts.push_back(m);
      }
    }
  }
  fill_corpus_segmentation(report);
  fill_corpus_retrieval(report, queries, top_frames, gts);
  return report;
}

/// Train on `train_videos`, predict and evaluate on `eval_videos`.
inline EvalReport run_experiment(const RunConfig& cfg, const std::vector<VideoSample>& train_videos,
                                 const std::vector<VideoSample>& eval_videos) {
  const TrainState state = train(cfg, train_videos);
  const PredictionFile preds = run_predictions(cfg, state.params, eval_videos);
  return evaluate(preds, eval_videos, cfg.boundary_tolerance);
}

struct AblationFlags {
  bool moment_sampling = false;
  bool mdp = false;
  bool oss = false;
};

/// The 2^3 grid: baseline, each component alone, all three, then the
/// remaining pairs.
inline std::vector<AblationFlags> ablation_grid() {
  return {{false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
          {true, true, true},    {true, true, false},  {true, false, true},  {false, true, true}};
}

struct AblationRow {
  AblationFlags flags;
  std::vector<double> jf;  // per seed, x100
  double mean_jf = 0;
};

inline RunConfig with_flags(RunConfig cfg, const AblationFlags& f, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.train.use_moment_sampling = f.moment_sampling;
  cfg.train.use_mdp = f.mdp;
  cfg.train.use_oss = f.oss;
  return cfg;
}

inline std::vector<AblationRow> run_ablation(
    const RunConfig& cfg, const std::vector<VideoSample>& train_videos,
    const std::vector<VideoSample>& eval_videos, const std::vector<AblationFlags>& grid,
    const std::function<void(const AblationRow&, std::size_t seed_index)>& progress = {}) {
  std::vector<AblationRow> rows;
  for (const auto& flags : grid) {
    AblationRow row{flags, {}, 0};
    for (std::size_t s = 0; s < cfg.ablate_seeds.size(); ++s) {
      const EvalReport r = run_experiment(with_flags(cfg, flags, cfg.ablate_seeds[s]), train_videos, eval_videos);
      row.jf.push_back(100 * r.corpus.jf);
      if (progress) progress(row, s);
    }
    for (double v : row.jf) row.mean_jf += v;
    row.mean_jf /= static_cast<double>(row.jf.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-9s %-4s %-4s %10s  %s\n", "sampling", "MDP", "OSS", "mean J&F", "per seed");
  out += buf;
  for (const auto& r : rows) {
    std::string seeds;
    for (double v : r.jf) {
      char s[32];
      std::snprintf(s, sizeof s, "%s%.2f", seeds.empty() ? "" : " ", v);
      seeds += s;
    }
    std::snprintf(buf, sizeof buf, "%-9s %-4s %-4s %10.2f  %s\n", r.flags.moment_sampling ? "x" : "",
                  r.flags.mdp ? "x" : "", r.flags.oss ? "x" : "", r.mean_jf, seeds.c_str());
    out += buf;
  }
  return out;
}

inline nlohmann::json ablation_to_json(const std::vector<AblationRow>& rows, const RunConfig& cfg) {
  nlohmann::json j;
  j["build"] = build_id();
  j["config_hash"] = config_hash(cfg);
  j["seeds"] = cfg.ablate_seeds;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"use_moment_sampling", r.flags.moment_sampling},
                         {"use_mdp", r.flags.mdp},
                         {"use_oss", r.flags.oss},
                         {"JF", r.jf},
                         {"mean_JF", r.mean_jf}});
  return j;
}

}  // namespace samdwich
