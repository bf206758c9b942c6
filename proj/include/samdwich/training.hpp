#pragma once

// End-to-end training loop. Each step draws one (video, expression) pair,
// samples a clip, propagates through it with a fresh memory bank, and applies
// one Adam update to the trainable parameters. Randomness for step s comes
// from (seed, s) only, so a resumed run replays the unbroken one exactly.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "samdwich/config.hpp"
#include "samdwich/dataset.hpp"
#include "samdwich/encoders.hpp"
#include "samdwich/keyframes.hpp"
#include "samdwich/losses.hpp"
#include "samdwich/memory.hpp"
#include "samdwich/model_params.hpp"
#include "samdwich/optim.hpp"
#include "samdwich/supervision.hpp"

namespace samdwich {

/// Frozen encoder outputs for every video and expression of a corpus.
class FeatureCache {
 public:
  FeatureCache(const std::vector<VideoSample>& videos, const EncoderConfig& cfg) {
    for (const auto& v : videos) {
      pyramids_.push_back(encode_video(v.frames, cfg, cfg.seed));
      std::vector<TextLayers> texts;
      for (const auto& e : v.expressions) texts.push_back(encode_text(e.tokens, cfg, cfg.seed));
      texts_.push_back(std::move(texts));
    }
  }

  VideoFeatures features(const std::vector<VideoSample>& videos, std::size_t v, std::size_t e) const {
    return {&pyramids_.at(v), &texts_.at(v).at(e), videos.at(v).expressions.at(e).verb_indices};
  }

 private:
  std::vector<FeaturePyramid> pyramids_;
  std::vector<std::vector<TextLayers>> texts_;
};

struct LossRecord {
  std::int64_t step = 0;  // 1-based
  double total = 0;
  double dice = 0;
  double focal = 0;
};

struct TrainState {
  ModelParams params;
  AdamState optimizer;
  std::int64_t step = 0;  // completed steps
  std::vector<LossRecord> curve;
};

inline TrainState initial_state(const RunConfig& cfg) {
  TrainState s;
  s.params = init_params(cfg.model, cfg.seed);
  s.optimizer = AdamState::zeros_like(s.params);
  return s;
}

/// The frame set standing in for M+ during training.
inline MomentSet training_moment(const RunConfig& cfg, const VideoSample& v, std::size_t e) {
  const MomentSet gt = v.relevant_moment(e);
  if (cfg.train.moments == TrainMoments::kGt) return gt.empty() ? MomentSet::full(v.length) : gt;
  PlanInputs in;
  in.k = cfg.inference.k;
  in.video_length = v.length;
  ScorerConfig sc;
  sc.accuracy = cfg.inference.scorer_accuracy;
  sc.noise = cfg.inference.scorer_noise;
  sc.seed = cfg.inference.scorer_seed;
  const auto scores = score_frames(sc, v, e);
  in.scores = &scores;
  if (cfg.train.moments == TrainMoments::kTopk) {
    in.strategy = SelectionPlan::Strategy::kTopk;
  } else {
    in.strategy = SelectionPlan::Strategy::kRandom;
    in.seed = query_seed(cfg.inference.scorer_seed ^ 0x52414e44ULL, v.video_id, e);
  }
  return build_plan(in).proxy;
}

struct Trainer {
  const RunConfig& cfg;
  const std::vector<VideoSample>& videos;
  const FeatureCache& cache;
  FrozenContext frozen;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<MomentSet> proxies;  // per pair

  Trainer(const RunConfig& c, const std::vector<VideoSample>& vids, const FeatureCache& fc)
      : cfg(c), videos(vids), cache(fc), frozen(make_frozen_context(c.model)) {
    for (std::size_t v = 0; v < videos.size(); ++v)
      for (std::size_t e = 0; e < videos[v].expressions.size(); ++e) {
        pairs.emplace_back(v, e);
        proxies.push_back(training_moment(cfg, videos[v], e));
      }
    if (pairs.empty()) throw std::invalid_argument("train: dataset has no expressions");
    for (const auto& v : videos)
      if (v.height != cfg.model.frame_height || v.width != cfg.model.frame_width)
        throw std::invalid_argument("train: video " + v.video_id + " is " + std::to_string(v.height) +
                                    "x" + std::to_string(v.width) + ", model expects " +
                                    std::to_string(cfg.model.frame_height) + "x" +
                                    std::to_string(cfg.model.frame_width));
  }

  std::size_t pair_for_step(std::int64_t step) const {
    const auto n = static_cast<std::int64_t>(pairs.size());
    const std::int64_t epoch = step / n;
    std::vector<std::size_t> perm(pairs.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(mix_seed(cfg.seed, 0x45504f4348ULL), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(perm);
    return perm[static_cast<std::size_t>(step % n)];
  }

  /// Loss of one step on the tracked parameters; `step` is 0-based.
  ClipLoss step_loss(Tape& tape, const ModelParams& tracked, std::int64_t step) const {
    const std::size_t p = pair_for_step(step);
    const auto [vi, ei] = pairs[p];
    const VideoSample& v = videos[vi];
    const MomentSet& mplus = proxies[p];
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
    const int length = std::min(cfg.train.clip_length, v.length);
    ClipSample clip = cfg.train.use_moment_sampling && length % 2 == 0
                          ? sample_clip(mplus, moment_complement(mplus), length, rng)
                          : sample_uniform_clip(mplus, length, rng);
    std::vector<FrameIndex> order = clip.frames;
    const bool mdp = cfg.train.use_mdp;
    if (mdp && cfg.train.clip_order == ClipOrder::kMomentFirst)
      std::stable_partition(order.begin(), order.end(), [&](FrameIndex f) { return mplus.contains(f); });
    const VideoFeatures feats = cache.features(videos, vi, ei);
    auto logits = propagate(
        tape, feats, order, [&](FrameIndex f) { return !mdp || mplus.contains(f); }, tracked,
        cfg.model, frozen);
    SupervisionTarget target = oss_filter(v, ei, clip.frames, {cfg.train.use_oss, cfg.train.oss_ignore});
    return total_loss(tape, logits, target.frames, cfg.train.loss);
  }
};

/// Runs steps [state.step, until) and appends to the loss curve. `on_step`
/// is called after every update.
inline void train_until(TrainState& state, const Trainer& trainer, std::int64_t until,
                        const std::function<void(const TrainState&)>& on_step = {}) {
  while (state.step < until) {
    Tape tape;
    const ModelParams tracked = state.params.tracked(tape);
    ClipLoss loss = trainer.step_loss(tape, tracked, state.step);
    const Gradients grads = tape.backward(loss.total);
    adam_step(state.params, state.optimizer, tracked, grads, trainer.cfg.train.adam);
    ++state.step;
    state.curve.push_back({state.step, loss.total.item(), loss.dice, loss.focal});
    if (on_step) on_step(state);
  }
}

inline TrainState train(const RunConfig& cfg, const std::vector<VideoSample>& videos,
                        const std::function<void(const TrainState&)>& on_step = {}) {
  FeatureCache cache(videos, cfg.model.encoder);
  Trainer trainer(cfg, videos, cache);
  TrainState state = initial_state(cfg);
  train_until(state, trainer, cfg.train.steps, on_step);
  return state;
}

inline std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
  std::string out = "step,total,dice,focal\n";
  char buf[128];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(r.step), r.total,
                  r.dice, r.focal);
    out += buf;
  }
  return out;
}

}  // namespace samdwich
