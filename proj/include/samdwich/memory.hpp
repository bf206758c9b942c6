#pragma once

// Moment-guided memory propagation: the memory bank, memory encoding and
// attention, the mask decoder, the per-frame step and two-pass inference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "samdwich/adapter.hpp"
#include "samdwich/dataset.hpp"
#include "samdwich/encoders.hpp"
#include "samdwich/model_params.hpp"
#include "samdwich/moments.hpp"
#include "samdwich/rng.hpp"
#include "samdwich/tensor.hpp"

namespace samdwich {

class PropagationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MemoryEntry {
  FrameIndex frame = 1;
  Tensor fused;  // [cells, C_m]
  bool is_relevant = true;
};

/// Bounded store of fused memory features, kept sorted by frame index. Only
/// relevant-frame entries are accepted.
class MemoryBank {
 public:
  explicit MemoryBank(int capacity = 8) : capacity_(capacity) {
    if (capacity_ < 1) throw std::invalid_argument("MemoryBank: capacity must be positive");
  }

  /// Inserts `entry`; when full, evicts the entry farthest from `current`
  /// (ties evict the earlier frame).
  void insert(MemoryEntry entry, FrameIndex current) {
    if (!entry.is_relevant)
      throw PropagationError("memory bank accepts relevant frames only (frame " +
                             std::to_string(entry.frame) + ")");
    std::erase_if(entries_, [&](const MemoryEntry& e) { return e.frame == entry.frame; });
    if (static_cast<int>(entries_.size()) >= capacity_) {
      auto victim = std::max_element(entries_.begin(), entries_.end(),
                                     [&](const MemoryEntry& a, const MemoryEntry& b) {
                                       const int da = std::abs(a.frame - current);
                                       const int db = std::abs(b.frame - current);
                                       if (da != db) return da < db;
                                       return a.frame > b.frame;
                                     });
      entries_.erase(victim);
    }
    auto pos = std::lower_bound(entries_.begin(), entries_.end(), entry.frame,
                                [](const MemoryEntry& e, FrameIndex f) { return e.frame < f; });
    entries_.insert(pos, std::move(entry));
  }

  /// Up to `k` stored frames nearest to `t` (ties prefer the earlier frame),
  /// returned in ascending frame order.
  std::vector<FrameIndex> nearest(FrameIndex t, int k) const {
    std::vector<FrameIndex> frames;
    for (const auto& e : entries_) frames.push_back(e.frame);
    std::stable_sort(frames.begin(), frames.end(), [&](FrameIndex a, FrameIndex b) {
      const int da = std::abs(a - t), db = std::abs(b - t);
      return da != db ? da < db : a < b;
    });
    if (static_cast<int>(frames.size()) > k) frames.resize(static_cast<std::size_t>(k));
    std::sort(frames.begin(), frames.end());
    return frames;
  }

  const MemoryEntry& at(FrameIndex frame) const {
    for (const auto& e : entries_)
      if (e.frame == frame) return e;
    throw PropagationError("memory bank has no entry for frame " + std::to_string(frame));
  }

  std::vector<FrameIndex> frames() const {
    std::vector<FrameIndex> out;
    for (const auto& e : entries_) out.push_back(e.frame);
    return out;
  }
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int capacity() const { return capacity_; }
  void clear() { entries_.clear(); }

 private:
  int capacity_;
  std::vector<MemoryEntry> entries_;
};

/// Fuses frame features [cells, C_f] with the predicted mask logits [H, W]:
/// concat(F, pool(2 sigmoid(P) - 1)) W + b. A zero-logit mask contributes a
/// zero channel.
inline Tensor memory_encode(Tape& tape, const Tensor& features, const Tensor& mask_logits,
                            const MemoryParams& p, const FrozenContext& frozen) {
  const std::size_t cells = frozen.mask_downsample.shape[0];
  const std::size_t pixels = frozen.mask_downsample.shape[1];
  if (features.rank() != 2 || features.shape[0] != cells)
    throw ShapeError("memory_encode: features must be [" + std::to_string(cells) + ", C], got " +
                     shape_str(features.shape));
  if (mask_logits.numel() != pixels)
    throw ShapeError("memory_encode: mask has " + std::to_string(mask_logits.numel()) +
                     " pixels, expected " + std::to_string(pixels));
  Tensor flat = tape.reshape(mask_logits, {pixels, 1});
  Tensor centred = tape.sub(tape.scale(tape.sigmoid(flat), 2.0), ones(pixels, 1));
  Tensor pooled = tape.matmul(frozen.mask_downsample, centred);
  Tensor fused_in = tape.concat({&features, &pooled}, 1);
  Tensor bias = tape.matmul(ones(cells, 1), p.fuse_b);
  return tape.add(tape.matmul(fused_in, p.fuse_w), bias);
}

struct AttendResult {
  Tensor features;                  // F_mem, [cells, C_f]
  std::vector<FrameIndex> attended; // bank frames used as keys
};

/// Cross-attention from the current frame features to the nearest stored
/// memories, with a residual connection. An empty bank passes the query through.
inline AttendResult memory_attend(Tape& tape, const Tensor& query, const MemoryBank& bank,
                                  FrameIndex t, int neighbors, const MemoryParams& p,
                                  const FrozenContext& frozen) {
  AttendResult out;
  out.features = query;
  if (bank.empty()) return out;
  out.attended = bank.nearest(t, neighbors);
  std::vector<const Tensor*> keys, priors;
  for (FrameIndex f : out.attended) {
    keys.push_back(&bank.at(f).fused);
    priors.push_back(&frozen.locality);
  }
  Tensor memory = keys.size() == 1 ? *keys[0] : tape.concat(keys, 0);
  Tensor prior = priors.size() == 1 ? frozen.locality : tape.concat(priors, 1);
  const double r = static_cast<double>(p.query.shape.at(1));
  Tensor q = tape.matmul(query, p.query);
  Tensor k = tape.matmul(memory, p.key);
  Tensor v = tape.matmul(memory, p.value);
  Tensor logits = tape.add(tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(r)), prior);
  out.features = tape.add(query, tape.matmul(tape.softmax(logits, 1), v));
  return out;
}

/// Mask logits [H, W]. `prompt` is the text prompt [1, D_p]; without one the
/// learned mask token is used.
inline Tensor decode_mask(Tape& tape, const Tensor& features, const Tensor* prompt,
                          const DecoderParams& p, const FrozenContext& frozen,
                          std::size_t height, std::size_t width) {
  const std::size_t cells = features.shape.at(0);
  const Tensor& token = prompt ? *prompt : p.mask_token;
  if (token.shape != p.mask_token.shape)
    throw ShapeError("decode_mask: prompt must be " + shape_str(p.mask_token.shape) + ", got " +
                     shape_str(token.shape));
  const double r = static_cast<double>(p.query.shape.at(1));
  Tensor q = tape.matmul(token, p.query);
  Tensor k = tape.matmul(features, p.key);
  Tensor v = tape.matmul(features, p.value);
  Tensor attn = tape.softmax(tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(r)), 1);
  Tensor u = tape.add(token, tape.matmul(attn, v));
  Tensor cell_bias = tape.matmul(ones(cells, 1), p.cell_b);
  Tensor embed = tape.relu(tape.add(tape.matmul(features, p.cell_w), cell_bias));
  Tensor cell_logits = tape.add(tape.matmul(embed, tape.transpose(u)),
                                tape.matmul(ones(cells, 1), p.bias));
  return tape.reshape(tape.matmul(frozen.logits_upsample, cell_logits), {height, width});
}

inline BinaryMask binarize(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("binarize: logits must be [H, W]");
  BinaryMask m(static_cast<int>(logits.shape[0]), static_cast<int>(logits.shape[1]));
  for (std::size_t i = 0; i < logits.numel(); ++i) m.bits[i] = logits.data[i] > 0.0;
  return m;
}

enum class Membership { kRelevant, kIrrelevant };

/// Everything a frame contributes to one step. `adapted` and `prompt` are read
/// only for relevant frames, `raw` only for irrelevant ones.
struct FrameInputs {
  const Tensor* adapted = nullptr;  // F_Adp, [cells, C_f]
  const Tensor* prompt = nullptr;   // rho, [1, D_p]
  const Tensor* raw = nullptr;      // F_SAM, [cells, C_f]
};

struct StepTrace {
  FrameIndex frame = 1;
  Membership membership = Membership::kRelevant;
  bool used_prompt = false;
  std::uint64_t query_digest = 0;          // digest of the features used as query
  std::vector<FrameIndex> attended;
  std::vector<FrameIndex> bank_after;
};

inline std::uint64_t tensor_digest(const Tensor& t) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data.data()),
                                  t.data.size() * sizeof(double)));
}

struct PropagationState {
  explicit PropagationState(int capacity = 8) : bank(capacity) {}
  MemoryBank bank;
  std::vector<StepTrace>* trace = nullptr;
};

struct StepContext {
  const ModelParams* params = nullptr;
  const FrozenContext* frozen = nullptr;
  int neighbors = 6;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// One propagation step at frame t. Relevant frames decode from adapted
/// features with the text prompt and are written to the bank; irrelevant
/// frames decode from raw features with no prompt and are never written.
inline Tensor mdp_step(Tape& tape, FrameIndex t, Membership membership, const FrameInputs& in,
                       PropagationState& state, const StepContext& ctx) {
  const bool relevant = membership == Membership::kRelevant;
  const Tensor* query = relevant ? in.adapted : in.raw;
  if (!query)
    throw PropagationError("mdp_step: missing " + std::string(relevant ? "adapted" : "raw") +
                           " features for frame " + std::to_string(t));
  if (relevant && !in.prompt)
    throw PropagationError("mdp_step: relevant frame " + std::to_string(t) + " has no prompt");
  AttendResult attended = memory_attend(tape, *query, state.bank, t, ctx.neighbors,
                                        ctx.params->memory, *ctx.frozen);
  Tensor logits = decode_mask(tape, attended.features, relevant ? in.prompt : nullptr,
                              ctx.params->decoder, *ctx.frozen, ctx.height, ctx.width);
  if (relevant) {
    MemoryEntry entry{t, memory_encode(tape, *query, logits, ctx.params->memory, *ctx.frozen),
                      true};
    state.bank.insert(std::move(entry), t);
  }
  if (state.trace) {
    StepTrace st;
    st.frame = t;
    st.membership = membership;
    st.used_prompt = relevant;
    st.query_digest = tensor_digest(*query);
    st.attended = std::move(attended.attended);
    st.bank_after = state.bank.frames();
    state.trace->push_back(std::move(st));
  }
  return logits;
}

/// Pass 2 order: irrelevant frames by ascending distance to the nearest
/// relevant frame, ties toward the earlier frame.
inline std::vector<FrameIndex> irrelevant_order(const MomentSet& mplus) {
  std::vector<FrameIndex> rest = moment_complement(mplus).indices();
  auto dist = [&](FrameIndex f) {
    int best = mplus.video_length() + 1;
    for (FrameIndex m : mplus.indices()) best = std::min(best, std::abs(f - m));
    return best;
  };
  std::stable_sort(rest.begin(), rest.end(), [&](FrameIndex a, FrameIndex b) {
    const int da = dist(a), db = dist(b);
    return da != db ? da < db : a < b;
  });
  return rest;
}

/// Full processing order: `relevant_first` (a permutation of M+) followed by
/// the pass 2 order.
inline std::vector<FrameIndex> propagation_order(const MomentSet& mplus,
                                                 std::vector<FrameIndex> relevant_first) {
  auto tail = irrelevant_order(mplus);
  relevant_first.insert(relevant_first.end(), tail.begin(), tail.end());
  return relevant_first;
}

/// Checks that `order` is a permutation of 1..T_V with every M+ frame first.
inline void validate_order(const std::vector<FrameIndex>& order, const MomentSet& mplus) {
  const int tv = mplus.video_length();
  if (static_cast<int>(order.size()) != tv)
    throw PropagationError("processing order has " + std::to_string(order.size()) +
                           " frames, video has " + std::to_string(tv));
  std::vector<bool> seen(static_cast<std::size_t>(tv) + 1, false);
  bool in_tail = false;
  for (FrameIndex f : order) {
    if (f < 1 || f > tv) throw PropagationError("processing order frame " + std::to_string(f) + " out of range");
    if (seen[f]) throw PropagationError("processing order repeats frame " + std::to_string(f));
    seen[f] = true;
    if (!mplus.contains(f)) in_tail = true;
    else if (in_tail)
      throw PropagationError("processing order places relevant frame " + std::to_string(f) +
                             " after an irrelevant frame");
  }
}

/// Frozen features of one video and one expression.
struct VideoFeatures {
  const FeaturePyramid* pyramid = nullptr;
  const TextLayers* text = nullptr;
  std::vector<int> verb_indices;
};

/// Adapted features and text prompt for one 0-based frame.
struct AdaptedFrame {
  Tensor features;
  Tensor prompt;
};

inline AdaptedFrame adapt_frame(Tape& tape, const VideoFeatures& v, std::size_t frame,
                                const ModelParams& params, const FrozenContext& frozen) {
  AdapterInputs in;
  for (const auto& level : v.pyramid->levels) in.visual.push_back(&level.frames.at(frame));
  for (const auto& layer : v.text->layers) in.text.push_back(&layer);
  AdapterOutput a = run_adapter_stack(tape, in, params, frozen);
  TextSlots slots = extract_text_slots(tape, a.text, v.verb_indices);
  return {std::move(a.visual), build_text_prompt(tape, slots.contextual, slots.motion, params.prompt)};
}

/// Runs mdp_step over `order` (1-based frames) with a fresh bank, returning
/// logits keyed by frame. Shared by training and inference.
inline std::map<FrameIndex, Tensor> propagate(Tape& tape, const VideoFeatures& v,
                                              const std::vector<FrameIndex>& order,
                                              const std::function<bool(FrameIndex)>& is_relevant,
                                              const ModelParams& params, const ModelConfig& cfg,
                                              const FrozenContext& frozen,
                                              std::vector<StepTrace>* trace = nullptr) {
  PropagationState state(cfg.memory_capacity);
  state.trace = trace;
  StepContext ctx{&params, &frozen, cfg.memory_neighbors,
                  static_cast<std::size_t>(cfg.frame_height), static_cast<std::size_t>(cfg.frame_width)};
  std::map<FrameIndex, Tensor> out;
  for (FrameIndex t : order) {
    const std::size_t idx = static_cast<std::size_t>(t - 1);
    FrameInputs in;
    AdaptedFrame adapted;
    const bool relevant = is_relevant(t);
    if (relevant) {
      adapted = adapt_frame(tape, v, idx, params, frozen);
      in.adapted = &adapted.features;
      in.prompt = &adapted.prompt;
    } else {
      in.raw = &v.pyramid->finest(idx);
    }
    out[t] = mdp_step(tape, t, relevant ? Membership::kRelevant : Membership::kIrrelevant, in,
                      state, ctx);
  }
  return out;
}

/// Two-pass inference. `order` must list every M+ frame before any M- frame;
/// its M+ prefix sets the pass 1 priority, pass 2 is ordered by distance to
/// M+. Returns binary masks in temporal order.
inline std::vector<BinaryMask> run_inference(const VideoFeatures& v, const MomentSet& mplus,
                                             const std::vector<FrameIndex>& order,
                                             const ModelParams& params, const ModelConfig& cfg,
                                             const FrozenContext& frozen,
                                             std::vector<Tensor>* logits_out = nullptr,
                                             std::vector<StepTrace>* trace = nullptr) {
  if (mplus.video_length() != v.pyramid->frame_count())
    throw PropagationError("moment video_length " + std::to_string(mplus.video_length()) +
                           " does not match " + std::to_string(v.pyramid->frame_count()) + " frames");
  validate_order(order, mplus);
  std::vector<FrameIndex> pass1(order.begin(), order.begin() + static_cast<long>(mplus.size()));
  Tape tape;
  auto logits = propagate(tape, v, propagation_order(mplus, pass1),
                          [&](FrameIndex f) { return mplus.contains(f); }, params, cfg, frozen, trace);
  std::vector<BinaryMask> masks;
  if (logits_out) logits_out->clear();
  for (auto& [t, l] : logits) {
    masks.push_back(binarize(l));
    if (logits_out) logits_out->push_back(l.detached());
  }
  return masks;
}

}  // namespace samdwich
