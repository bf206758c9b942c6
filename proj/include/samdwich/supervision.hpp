#pragma once

// Moment-aware clip sampling and object-level selective supervision.

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "samdwich/dataset.hpp"
#include "samdwich/losses.hpp"
#include "samdwich/moments.hpp"
#include "samdwich/rng.hpp"

namespace samdwich {

struct ClipSample {
  std::vector<FrameIndex> frames;  // sorted ascending
  std::vector<bool> relevant;      // parallel to frames
};

namespace detail {

inline FrameIndex take_random(std::vector<FrameIndex>& pool, Rng& rng) {
  const std::size_t i = static_cast<std::size_t>(rng.below(pool.size()));
  const FrameIndex f = pool[i];
  pool.erase(pool.begin() + static_cast<long>(i));
  return f;
}

}  // namespace detail

/// Half of the clip (rounded up) comes from M+, the rest uniformly from the
/// remaining frames of the video.
inline ClipSample sample_clip(const MomentSet& mplus, const MomentSet& mminus, int length, Rng& rng) {
  if (mplus.empty()) throw MomentError("sample_clip: empty M+");
  if (length < 2 || length % 2 != 0)
    throw std::invalid_argument("sample_clip: clip length must be even and >= 2, got " +
                                std::to_string(length));
  const int total = static_cast<int>(mplus.size() + mminus.size());
  if (length > total)
    throw std::invalid_argument("sample_clip: clip length " + std::to_string(length) +
                                " exceeds the " + std::to_string(total) + " available frames");
  const std::size_t half = static_cast<std::size_t>((length + 1) / 2);
  std::set<FrameIndex> chosen;
  if (mplus.size() >= half) {
    std::vector<FrameIndex> pool = mplus.indices();
    while (chosen.size() < half) chosen.insert(detail::take_random(pool, rng));
  } else {
    for (std::size_t i = 0; i < half; ++i)
      chosen.insert(mplus.indices()[static_cast<std::size_t>(rng.below(mplus.size()))]);
  }
  std::vector<FrameIndex> rest;
  for (auto f : mplus.indices())
    if (!chosen.count(f)) rest.push_back(f);
  rest.insert(rest.end(), mminus.indices().begin(), mminus.indices().end());
  std::sort(rest.begin(), rest.end());
  while (static_cast<int>(chosen.size()) < length) chosen.insert(detail::take_random(rest, rng));

  ClipSample out;
  out.frames.assign(chosen.begin(), chosen.end());
  for (auto f : out.frames) out.relevant.push_back(mplus.contains(f));
  return out;
}

/// Uniform clip with no moment guidance, used when moment sampling is off.
inline ClipSample sample_uniform_clip(const MomentSet& mplus, int length, Rng& rng) {
  const int tv = mplus.video_length();
  if (length < 1 || length > tv)
    throw std::invalid_argument("sample_uniform_clip: clip length " + std::to_string(length) +
                                " outside [1," + std::to_string(tv) + "]");
  std::vector<FrameIndex> pool(static_cast<std::size_t>(tv));
  for (int i = 0; i < tv; ++i) pool[static_cast<std::size_t>(i)] = i + 1;
  std::vector<FrameIndex> frames;
  for (int i = 0; i < length; ++i) frames.push_back(detail::take_random(pool, rng));
  std::sort(frames.begin(), frames.end());
  ClipSample out;
  out.frames = frames;
  for (auto f : frames) out.relevant.push_back(mplus.contains(f));
  return out;
}

/// Objects i with clip ∩ M_i non-empty.
inline std::set<std::string> retained_objects(const std::map<std::string, MomentSet>& moments,
                                              const std::vector<FrameIndex>& clip) {
  std::set<std::string> out;
  for (const auto& [id, m] : moments)
    if (overlaps(clip, m)) out.insert(id);
  return out;
}

struct SupervisionTarget {
  std::set<std::string> retained;
  std::map<FrameIndex, FrameSupervision> frames;
};

struct OssOptions {
  bool enabled = true;
  bool ignore_discarded = false;  // discarded objects become don't-care pixels instead of background
};

/// Per-frame targets for the referred objects of expression `e` over `clip`.
inline SupervisionTarget oss_filter(const VideoSample& v, std::size_t e,
                                    const std::vector<FrameIndex>& clip, const OssOptions& opt) {
  const auto& expr = v.expressions.at(e);
  const auto video_level = v.moments.per_object.find(kVideoLevelObject);
  std::map<std::string, MomentSet> referred;
  for (const auto& id : expr.referred_object_ids) {
    if (video_level != v.moments.per_object.end()) {
      referred.emplace(id, video_level->second);
      continue;
    }
    auto it = v.moments.per_object.find(id);
    referred.emplace(id, it != v.moments.per_object.end() ? it->second : MomentSet({}, v.length));
  }
  SupervisionTarget out;
  if (opt.enabled) {
    out.retained = retained_objects(referred, clip);
  } else {
    for (const auto& [id, m] : referred) out.retained.insert(id);
  }
  for (const auto& id : out.retained) {
    auto it = v.objects.find(id);
    if (it == v.objects.end() || it->second.masks.size() != static_cast<std::size_t>(v.length))
      throw SchemaError("videos/" + v.video_id + "/objects/" + id, "missing masks for retained object");
  }
  for (FrameIndex t : clip) {
    const std::size_t idx = static_cast<std::size_t>(t - 1);
    BinaryMask target(v.height, v.width);
    BinaryMask ignored(v.height, v.width);
    for (const auto& [id, m] : referred) {
      auto it = v.objects.find(id);
      if (it == v.objects.end() || it->second.masks.empty()) continue;
      const auto& mask = it->second.masks.at(idx);
      auto& dst = out.retained.count(id) ? target : ignored;
      for (std::size_t i = 0; i < dst.bits.size(); ++i) dst.bits[i] |= mask.bits[i];
    }
    FrameSupervision fs{mask_to_tensor(target), std::nullopt};
    if (opt.ignore_discarded && !ignored.empty()) {
      Tensor w = Tensor::filled(fs.target.shape, 1.0);
      for (std::size_t i = 0; i < ignored.bits.size(); ++i)
        if (ignored.bits[i] && !target.bits[i]) w.data[i] = 0.0;
      fs.weight = std::move(w);
    }
    out.frames.emplace(t, std::move(fs));
  }
  return out;
}

}  // namespace samdwich
