#pragma once

// Per-object text-relevant moments and the derived relevant / irrelevant
// frame sets. Frame indices are 1-based throughout.

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace samdwich {

using FrameIndex = int;

class MomentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Closed frame interval [start, end].
struct Segment {
  FrameIndex start = 1;
  FrameIndex end = 1;
  int length() const { return end - start + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

class MomentSet {
 public:
  MomentSet() = default;

  /// Accepts indices in any order; rejects duplicates and out-of-range values.
  MomentSet(std::vector<FrameIndex> indices, int video_length)
      : indices_(std::move(indices)), video_length_(video_length) {
    if (video_length_ < 1) throw MomentError("video_length must be positive");
    std::sort(indices_.begin(), indices_.end());
    if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end())
      throw MomentError("moment indices contain duplicates");
    for (auto i : indices_)
      if (i < 1 || i > video_length_)
        throw MomentError("moment index " + std::to_string(i) + " outside [1," +
                          std::to_string(video_length_) + "]");
  }

  static MomentSet full(int video_length) {
    std::vector<FrameIndex> all(video_length);
    for (int i = 0; i < video_length; ++i) all[i] = i + 1;
    return MomentSet(std::move(all), video_length);
  }

  const std::vector<FrameIndex>& indices() const { return indices_; }
  int video_length() const { return video_length_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  bool contains(FrameIndex i) const {
    return std::binary_search(indices_.begin(), indices_.end(), i);
  }
  bool is_full_span() const { return static_cast<int>(indices_.size()) == video_length_; }

  friend bool operator==(const MomentSet&, const MomentSet&) = default;

 private:
  std::vector<FrameIndex> indices_;
  int video_length_ = 1;
};

/// Object id -> moment, all sharing one video length.
struct MomentAnnotation {
  std::map<std::string, MomentSet> per_object;
  int video_length = 1;
};

/// M+ = union of all per-object moments.
inline MomentSet moment_union(const MomentAnnotation& ann) {
  if (ann.per_object.empty()) throw MomentError("moment_union: empty annotation");
  std::vector<FrameIndex> all;
  for (const auto& [id, m] : ann.per_object) {
    if (m.video_length() != ann.video_length)
      throw MomentError("moment_union: object '" + id + "' has video_length " +
                        std::to_string(m.video_length()) + ", expected " +
                        std::to_string(ann.video_length));
    all.insert(all.end(), m.indices().begin(), m.indices().end());
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return MomentSet(std::move(all), ann.video_length);
}

/// M- = {1..T_V} \ M+.
inline MomentSet moment_complement(const MomentSet& mplus) {
  std::vector<FrameIndex> rest;
  for (FrameIndex i = 1; i <= mplus.video_length(); ++i)
    if (!mplus.contains(i)) rest.push_back(i);
  return MomentSet(std::move(rest), mplus.video_length());
}

/// True iff clip ∩ m is non-empty. `clip` must be sorted ascending.
inline bool overlaps(const std::vector<FrameIndex>& clip, const MomentSet& m) {
  for (auto i : clip)
    if (i < 1 || i > m.video_length())
      throw MomentError("overlaps: clip index " + std::to_string(i) + " outside [1," +
                        std::to_string(m.video_length()) + "]");
  auto a = clip.begin();
  auto b = m.indices().begin();
  while (a != clip.end() && b != m.indices().end()) {
    if (*a == *b) return true;
    if (*a < *b) ++a;
    else ++b;
  }
  return false;
}

/// Maximal runs of consecutive indices.
inline std::vector<Segment> set_to_segments(const MomentSet& m) {
  std::vector<Segment> segs;
  for (auto i : m.indices()) {
    if (!segs.empty() && segs.back().end + 1 == i) segs.back().end = i;
    else segs.push_back({i, i});
  }
  return segs;
}

inline MomentSet segments_to_set(const std::vector<Segment>& segs, int video_length) {
  std::vector<FrameIndex> idx;
  for (const auto& s : segs) {
    if (s.end < s.start) throw MomentError("segment end precedes start");
    for (auto i = s.start; i <= s.end; ++i) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return MomentSet(std::move(idx), video_length);
}

}  // namespace samdwich
