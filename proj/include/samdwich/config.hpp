#pragma once

// Run configuration: one JSON document, strictly validated (unknown keys and
// out-of-range values are rejected with the offending field path).

#include <cstdint>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "samdwich/keyframes.hpp"
#include "samdwich/losses.hpp"
#include "samdwich/model_params.hpp"
#include "samdwich/optim.hpp"
#include "samdwich/rng.hpp"
#include "samdwich/synth.hpp"

namespace samdwich {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Which frames stand in for M+ while training.
enum class TrainMoments { kGt, kTopk, kRandom };
enum class ClipOrder { kTemporal, kMomentFirst };

struct TrainConfig {
  int clip_length = 4;
  int steps = 2000;
  AdamConfig adam;
  LossConfig loss;
  bool use_moment_sampling = true;
  bool use_mdp = true;
  bool use_oss = true;
  bool oss_ignore = false;
  ClipOrder clip_order = ClipOrder::kTemporal;
  TrainMoments moments = TrainMoments::kGt;
};

struct InferenceConfig {
  SelectionPlan::Strategy strategy = SelectionPlan::Strategy::kGtMoments;
  int k = 4;
  ScorerConfig::Kind scorer = ScorerConfig::Kind::kOracleNoisy;
  double scorer_accuracy = 0.5;
  double scorer_noise = 0.1;
  std::uint64_t scorer_seed = 11;
  std::string scores_path;  // external scorer CSV
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string train_data;
  std::string eval_data;
  ModelConfig model;
  TrainConfig train;
  InferenceConfig inference;
  int boundary_tolerance = -1;  // -1: derived from the image diagonal
  SynthConfig synth;
  std::uint64_t synth_seed = 2024;
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};
};

namespace detail {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  ~Reader() = default;

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(sub(it.key()), "unknown key");
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, int& out, int lo, int hi) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) throw ConfigError(sub(key), "expected an integer");
      const auto x = v->get<long long>();
      if (x < lo || x > hi)
        throw ConfigError(sub(key), "value " + std::to_string(x) + " outside [" + std::to_string(lo) +
                                        ", " + std::to_string(hi) + "]");
      out = static_cast<int>(x);
    }
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
        throw ConfigError(sub(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void real(const std::string& key, double& out, double lo, double hi) {
    if (const json* v = get(key)) {
      if (!v->is_number()) throw ConfigError(sub(key), "expected a number");
      const double x = v->get<double>();
      if (!(x >= lo && x <= hi))
        throw ConfigError(sub(key), "value " + v->dump() + " outside [" + json(lo).dump() + ", " +
                                        json(hi).dump() + "]");
      out = x;
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) throw ConfigError(sub(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) throw ConfigError(sub(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <typename E>
  void choice(const std::string& key, E& out, const std::vector<std::pair<std::string, E>>& options) {
    if (const json* v = get(key)) {
      if (!v->is_string()) throw ConfigError(sub(key), "expected a string");
      const auto s = v->get<std::string>();
      for (const auto& [name, value] : options)
        if (name == s) {
          out = value;
          return;
        }
      std::string allowed;
      for (const auto& [name, value] : options) allowed += (allowed.empty() ? "" : ", ") + name;
      throw ConfigError(sub(key), "unknown value '" + s + "' (allowed: " + allowed + ")");
    }
  }
  template <typename F>
  void section(const std::string& key, F&& f) {
    if (const json* v = get(key)) {
      Reader r(*v, sub(key));
      f(r);
      r.finish();
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline const std::vector<std::pair<std::string, SelectionPlan::Strategy>> kStrategies{
    {"gt_moments", SelectionPlan::Strategy::kGtMoments},
    {"topk", SelectionPlan::Strategy::kTopk},
    {"topk_in_interval", SelectionPlan::Strategy::kTopkInInterval},
    {"random", SelectionPlan::Strategy::kRandom}};
inline const std::vector<std::pair<std::string, ScorerConfig::Kind>> kScorers{
    {"oracle_noisy", ScorerConfig::Kind::kOracleNoisy},
    {"uniform_random", ScorerConfig::Kind::kUniformRandom},
    {"external", ScorerConfig::Kind::kExternal}};
inline const std::vector<std::pair<std::string, TrainMoments>> kTrainMoments{
    {"gt", TrainMoments::kGt}, {"topk", TrainMoments::kTopk}, {"random", TrainMoments::kRandom}};
inline const std::vector<std::pair<std::string, ClipOrder>> kClipOrders{
    {"temporal", ClipOrder::kTemporal}, {"moment_first", ClipOrder::kMomentFirst}};

template <typename E>
std::string choice_name(E value, const std::vector<std::pair<std::string, E>>& options) {
  for (const auto& [name, v] : options)
    if (v == value) return name;
  return "?";
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::Reader root(j, "");
  root.u64("seed", c.seed);
  root.section("data", [&](detail::Reader& r) {
    r.string("train", c.train_data);
    r.string("eval", c.eval_data);
  });
  root.section("model", [&](detail::Reader& r) {
    auto& m = c.model;
    r.integer("frame_height", m.frame_height, 1, 4096);
    r.integer("frame_width", m.frame_width, 1, 4096);
    r.integer("frame_channels", m.frame_channels, 1, 16);
    r.integer("patch", m.encoder.patch, 1, 64);
    if (const auto* ch = r.get("channels")) {
      if (!ch->is_array() || ch->empty()) throw ConfigError(r.sub("channels"), "expected a non-empty array");
      m.encoder.channels.clear();
      for (std::size_t i = 0; i < ch->size(); ++i) {
        const auto& v = (*ch)[i];
        if (!v.is_number_integer() || v.get<long long>() < 1 || v.get<long long>() > 4096)
          throw ConfigError(r.sub("channels") + "[" + std::to_string(i) + "]", "expected an integer in [1, 4096]");
        m.encoder.channels.push_back(v.get<int>());
      }
    }
    r.integer("text_dim", m.encoder.text_dim, 1, 4096);
    r.integer("vocab_size", m.encoder.vocab_size, 1, 1 << 20);
    r.u64("encoder_seed", m.encoder.seed);
    r.integer("adapter_width", m.adapter_width, 1, 4096);
    r.integer("prompt_hidden", m.prompt_hidden, 1, 4096);
    r.integer("prompt_dim", m.prompt_dim, 1, 4096);
    r.integer("memory_dim", m.memory_dim, 1, 4096);
    r.integer("memory_attn_width", m.memory_attn_width, 1, 4096);
    r.integer("decoder_width", m.decoder_width, 1, 4096);
    r.integer("memory_capacity", m.memory_capacity, 1, 1024);
    r.integer("memory_neighbors", m.memory_neighbors, 1, 1024);
    r.real("locality_sigma", m.locality_sigma, 1e-3, 1e6);
  });
  root.section("train", [&](detail::Reader& r) {
    auto& t = c.train;
    r.integer("clip_length", t.clip_length, 2, 1 << 16);
    if (t.clip_length % 2 != 0) throw ConfigError(r.sub("clip_length"), "must be even");
    r.integer("steps", t.steps, 0, 1 << 30);
    r.real("lr", t.adam.lr, 0.0, 10.0);
    r.real("beta1", t.adam.beta1, 0.0, 0.999999);
    r.real("beta2", t.adam.beta2, 0.0, 0.999999999);
    r.real("adam_eps", t.adam.eps, 1e-300, 1.0);
    r.real("lambda_dice", t.loss.dice_weight, 0.0, 1e6);
    r.real("lambda_focal", t.loss.focal_weight, 0.0, 1e6);
    r.real("focal_gamma", t.loss.focal_gamma, 0.0, 100.0);
    r.real("focal_alpha", t.loss.focal_alpha, 0.0, 1.0);
    r.real("dice_eps", t.loss.dice_eps, 0.0, 1e6);
    r.boolean("use_moment_sampling", t.use_moment_sampling);
    r.boolean("use_mdp", t.use_mdp);
    r.boolean("use_oss", t.use_oss);
    r.boolean("oss_ignore", t.oss_ignore);
    r.choice("clip_order", t.clip_order, detail::kClipOrders);
    r.choice("moments", t.moments, detail::kTrainMoments);
  });
  root.section("inference", [&](detail::Reader& r) {
    auto& i = c.inference;
    r.choice("strategy", i.strategy, detail::kStrategies);
    r.integer("k", i.k, 1, 1 << 16);
    r.choice("scorer", i.scorer, detail::kScorers);
    r.real("scorer_accuracy", i.scorer_accuracy, 0.0, 1.0);
    r.real("scorer_noise", i.scorer_noise, 0.0, 1e6);
    r.u64("scorer_seed", i.scorer_seed);
    r.string("scores", i.scores_path);
  });
  root.section("metrics", [&](detail::Reader& r) { r.integer("boundary_tolerance", c.boundary_tolerance, -1, 1 << 16); });
  root.section("synth", [&](detail::Reader& r) {
    auto& s = c.synth;
    r.u64("seed", c.synth_seed);
    r.integer("train_videos", s.train_videos, 0, 1 << 20);
    r.integer("eval_videos", s.eval_videos, 0, 1 << 20);
    r.integer("length", s.length, 1, 4096);
    r.integer("height", s.height, 1, 4096);
    r.integer("width", s.width, 1, 4096);
    r.integer("min_objects", s.min_objects, 1, 64);
    r.integer("max_objects", s.max_objects, 1, 64);
    r.integer("min_size", s.min_size, 2, 4096);
    r.integer("max_size", s.max_size, 2, 4096);
    r.integer("min_moment", s.min_moment, 1, 4096);
    r.integer("max_moment", s.max_moment, 1, 4096);
    r.real("distractor_prob", s.distractor_prob, 0.0, 1.0);
    r.real("second_referent_prob", s.second_referent_prob, 0.0, 1.0);
    if (s.max_objects < s.min_objects) throw ConfigError(r.sub("max_objects"), "smaller than min_objects");
    if (s.max_size < s.min_size) throw ConfigError(r.sub("max_size"), "smaller than min_size");
    if (s.max_moment < s.min_moment) throw ConfigError(r.sub("max_moment"), "smaller than min_moment");
    if (s.min_moment > s.length) throw ConfigError(r.sub("min_moment"), "longer than the video");
  });
  root.section("ablate", [&](detail::Reader& r) {
    if (const auto* seeds = r.get("seeds")) {
      if (!seeds->is_array() || seeds->empty()) throw ConfigError(r.sub("seeds"), "expected a non-empty array");
      c.ablate_seeds.clear();
      for (std::size_t i = 0; i < seeds->size(); ++i) {
        const auto& v = (*seeds)[i];
        if (!v.is_number_unsigned()) throw ConfigError(r.sub("seeds") + "[" + std::to_string(i) + "]", "expected a non-negative integer");
        c.ablate_seeds.push_back(v.get<std::uint64_t>());
      }
    }
  });
  root.finish();

  const auto& m = c.model;
  const int levels = m.encoder.levels();
  const int div = std::lcm(m.encoder.patch << (levels - 1), 2 << levels);
  if (m.frame_height % div != 0 || m.frame_width % div != 0)
    throw ConfigError("model.frame_height", "frame size must be divisible by " + std::to_string(div));
  if (m.encoder.vocab_size < vocab::kSize && c.synth.train_videos + c.synth.eval_videos > 0)
    throw ConfigError("model.vocab_size", "smaller than the synthetic vocabulary (" + std::to_string(vocab::kSize) + ")");
  if (c.inference.scorer == ScorerConfig::Kind::kExternal && c.inference.scores_path.empty())
    throw ConfigError("inference.scores", "external scorer needs a scores file");
  return c;
}

/// Canonical JSON form, including defaults.
inline nlohmann::json config_to_json(const RunConfig& c) {
  using detail::choice_name;
  const auto& m = c.model;
  const auto& t = c.train;
  const auto& i = c.inference;
  const auto& s = c.synth;
  nlohmann::json j;
  j["seed"] = c.seed;
  j["data"] = {{"train", c.train_data}, {"eval", c.eval_data}};
  j["model"] = {{"frame_height", m.frame_height},       {"frame_width", m.frame_width},
                {"frame_channels", m.frame_channels},   {"patch", m.encoder.patch},
                {"channels", m.encoder.channels},       {"text_dim", m.encoder.text_dim},
                {"vocab_size", m.encoder.vocab_size},   {"encoder_seed", m.encoder.seed},
                {"adapter_width", m.adapter_width},     {"prompt_hidden", m.prompt_hidden},
                {"prompt_dim", m.prompt_dim},           {"memory_dim", m.memory_dim},
                {"memory_attn_width", m.memory_attn_width}, {"decoder_width", m.decoder_width},
                {"memory_capacity", m.memory_capacity}, {"memory_neighbors", m.memory_neighbors},
                {"locality_sigma", m.locality_sigma}};
  j["train"] = {{"clip_length", t.clip_length},
                {"steps", t.steps},
                {"lr", t.adam.lr},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"adam_eps", t.adam.eps},
                {"lambda_dice", t.loss.dice_weight},
                {"lambda_focal", t.loss.focal_weight},
                {"focal_gamma", t.loss.focal_gamma},
                {"focal_alpha", t.loss.focal_alpha},
                {"dice_eps", t.loss.dice_eps},
                {"use_moment_sampling", t.use_moment_sampling},
                {"use_mdp", t.use_mdp},
                {"use_oss", t.use_oss},
                {"oss_ignore", t.oss_ignore},
                {"clip_order", choice_name(t.clip_order, detail::kClipOrders)},
                {"moments", choice_name(t.moments, detail::kTrainMoments)}};
  j["inference"] = {{"strategy", choice_name(i.strategy, detail::kStrategies)},
                    {"k", i.k},
                    {"scorer", choice_name(i.scorer, detail::kScorers)},
                    {"scorer_accuracy", i.scorer_accuracy},
                    {"scorer_noise", i.scorer_noise},
                    {"scorer_seed", i.scorer_seed},
                    {"scores", i.scores_path}};
  j["metrics"] = {{"boundary_tolerance", c.boundary_tolerance}};
  j["synth"] = {{"seed", c.synth_seed},
                {"train_videos", s.train_videos},
                {"eval_videos", s.eval_videos},
                {"length", s.length},
                {"height", s.height},
                {"width", s.width},
                {"min_objects", s.min_objects},
                {"max_objects", s.max_objects},
                {"min_size", s.min_size},
                {"max_size", s.max_size},
                {"min_moment", s.min_moment},
                {"max_moment", s.max_moment},
                {"distractor_prob", s.distractor_prob},
                {"second_referent_prob", s.second_referent_prob}};
  j["ablate"] = {{"seeds", c.ablate_seeds}};
  return j;
}

/// Hex FNV-1a of the canonical form with file paths removed.
inline std::string config_hash(const RunConfig& c) {
  nlohmann::json j = config_to_json(c);
  j.erase("data");
  j["inference"].erase("scores");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

/// Hash of the parts that determine trained parameters (seed, model, train);
/// stored in checkpoints.
inline std::string training_hash(const RunConfig& c) {
  const nlohmann::json full = config_to_json(c);
  const nlohmann::json j = {{"seed", full["seed"]}, {"model", full["model"]}, {"train", full["train"]}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace samdwich
