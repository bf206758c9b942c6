#pragma once

// Annotated-video documents: frames, per-object masks (RLE), per-object
// moments and tokenized expressions, serialized as one JSON document.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "samdwich/base64.hpp"
#include "samdwich/moments.hpp"

namespace samdwich {

inline constexpr const char* kDatasetFormat = "samdwich-m/1";
/// Object id whose moment covers the whole expression (video-level annotation).
inline constexpr const char* kVideoLevelObject = "*";

class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0/1

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool empty() const { return count() == 0; }
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Run lengths over the row-major mask, alternating 0-run / 1-run, starting
/// with a (possibly empty) 0-run.
struct Rle {
  int h = 0;
  int w = 0;
  std::vector<std::uint32_t> runs;
  friend bool operator==(const Rle&, const Rle&) = default;
};

inline Rle encode_mask_rle(const BinaryMask& m) {
  Rle r{m.height, m.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto b : m.bits) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != current) {
      r.runs.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  r.runs.push_back(run);
  return r;
}

inline BinaryMask decode_mask_rle(const Rle& r) {
  if (r.h < 0 || r.w < 0) throw CodecError("rle: negative size");
  BinaryMask m(r.h, r.w);
  std::size_t pos = 0;
  std::uint8_t v = 0;
  for (auto run : r.runs) {
    if (pos + run > m.bits.size()) throw CodecError("rle: runs exceed h*w");
    std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(pos), run, v);
    pos += run;
    v ^= 1;
  }
  if (pos != m.bits.size())
    throw CodecError("rle: runs sum to " + std::to_string(pos) + ", expected " +
                     std::to_string(m.bits.size()));
  return m;
}

struct Frame {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major HWC
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  friend bool operator==(const Frame&, const Frame&) = default;
};

struct ExpressionRecord {
  std::vector<int> tokens;
  std::vector<int> verb_indices;  // 1-based positions into tokens
  std::vector<std::string> referred_object_ids;
  friend bool operator==(const ExpressionRecord&, const ExpressionRecord&) = default;
};

struct ObjectTrack {
  std::vector<BinaryMask> masks;  // one per frame; empty for the video-level object
  friend bool operator==(const ObjectTrack&, const ObjectTrack&) = default;
};

struct VideoSample {
  std::string video_id;
  int length = 0;  // T_V
  int height = 0;
  int width = 0;
  std::vector<Frame> frames;
  std::map<std::string, ObjectTrack> objects;
  MomentAnnotation moments;
  std::vector<ExpressionRecord> expressions;

  /// M+ for an expression: the video-level moment when present, else the union
  /// of the referred objects' moments.
  MomentSet relevant_moment(std::size_t expression_index) const {
    if (auto it = moments.per_object.find(kVideoLevelObject); it != moments.per_object.end())
      return it->second;
    MomentAnnotation sub;
    sub.video_length = length;
    for (const auto& id : expressions.at(expression_index).referred_object_ids) {
      auto it = moments.per_object.find(id);
      if (it != moments.per_object.end()) sub.per_object.emplace(id, it->second);
    }
    if (sub.per_object.empty()) return MomentSet({}, length);
    return moment_union(sub);
  }

  /// Pixelwise OR of the referred objects' masks at a 1-based frame.
  BinaryMask target_mask(std::size_t expression_index, FrameIndex t) const {
    BinaryMask out(height, width);
    for (const auto& id : expressions.at(expression_index).referred_object_ids) {
      const auto& track = objects.at(id);
      if (track.masks.empty()) continue;
      const auto& m = track.masks.at(static_cast<std::size_t>(t - 1));
      for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] |= m.bits[i];
    }
    return out;
  }

  friend bool operator==(const VideoSample& a, const VideoSample& b) {
    if (a.moments.video_length != b.moments.video_length) return false;
    return a.video_id == b.video_id && a.length == b.length && a.height == b.height &&
           a.width == b.width && a.frames == b.frames && a.objects == b.objects &&
           a.moments.per_object == b.moments.per_object && a.expressions == b.expressions;
  }
};

namespace detail {

using nlohmann::json;

inline const json& field(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(path + "." + key, "missing field");
  return *it;
}

inline int int_field(const json& j, const char* key, const std::string& path, int min_value) {
  const auto& v = field(j, key, path);
  if (!v.is_number_integer()) throw SchemaError(path + "." + key, "expected an integer");
  const auto x = v.get<long long>();
  if (x < min_value || x > 1'000'000'000)
    throw SchemaError(path + "." + key, "value " + std::to_string(x) + " out of range");
  return static_cast<int>(x);
}

inline std::vector<int> int_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw SchemaError(path, "expected an array");
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_integer())
      throw SchemaError(path + "[" + std::to_string(i) + "]", "expected an integer");
    out.push_back(v[i].get<int>());
  }
  return out;
}

inline json rle_to_json(const Rle& r) {
  return json{{"h", r.h}, {"w", r.w}, {"runs", base64::encode_u32(r.runs)}};
}

inline Rle rle_from_json(const json& j, const std::string& path) {
  Rle r;
  r.h = int_field(j, "h", path, 0);
  r.w = int_field(j, "w", path, 0);
  const auto& runs = field(j, "runs", path);
  if (!runs.is_string()) throw SchemaError(path + ".runs", "expected a base64 string");
  try {
    r.runs = base64::decode_u32(runs.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(path + ".runs", e.what());
  }
  return r;
}

}  // namespace detail

inline nlohmann::json video_to_json(const VideoSample& v) {
  using nlohmann::json;
  json frames = json::array();
  for (const auto& f : v.frames) frames.push_back(base64::encode(f.pixels));
  json objects = json::object();
  for (const auto& [id, track] : v.objects) {
    json masks = json::array();
    for (const auto& m : track.masks) masks.push_back(detail::rle_to_json(encode_mask_rle(m)));
    std::vector<int> moment;
    if (auto it = v.moments.per_object.find(id); it != v.moments.per_object.end())
      moment = it->second.indices();
    objects[id] = json{{"masks", masks}, {"moment", moment}};
  }
  // Moments for ids without masks (the video-level object).
  for (const auto& [id, m] : v.moments.per_object)
    if (!v.objects.count(id)) objects[id] = json{{"masks", json::array()}, {"moment", m.indices()}};
  json exprs = json::array();
  for (const auto& e : v.expressions)
    exprs.push_back(json{{"tokens", e.tokens},
                         {"verb_indices", e.verb_indices},
                         {"referred_object_ids", e.referred_object_ids}});
  return json{{"video_id", v.video_id}, {"T_V", v.length},  {"H", v.height},
              {"W", v.width},           {"frames", frames}, {"objects", objects},
              {"expressions", exprs}};
}

inline VideoSample video_from_json(const nlohmann::json& j, const std::string& path) {
  using detail::field;
  using detail::int_field;
  VideoSample v;
  const auto& id = field(j, "video_id", path);
  if (!id.is_string()) throw SchemaError(path + ".video_id", "expected a string");
  v.video_id = id.get<std::string>();
  v.length = int_field(j, "T_V", path, 1);
  v.height = int_field(j, "H", path, 1);
  v.width = int_field(j, "W", path, 1);
  v.moments.video_length = v.length;

  const auto& frames = field(j, "frames", path);
  if (!frames.is_array()) throw SchemaError(path + ".frames", "expected an array");
  if (static_cast<int>(frames.size()) != v.length)
    throw SchemaError(path + ".frames", "expected " + std::to_string(v.length) + " frames, got " +
                                            std::to_string(frames.size()));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const std::string fp = path + ".frames[" + std::to_string(t) + "]";
    if (!frames[t].is_string()) throw SchemaError(fp, "expected a base64 string");
    Frame f;
    f.height = v.height;
    f.width = v.width;
    try {
      f.pixels = base64::decode(frames[t].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw CodecError("video '" + v.video_id + "' frame " + std::to_string(t + 1) + ": " +
                       e.what());
    }
    const std::size_t plane = static_cast<std::size_t>(v.height) * v.width;
    if (f.pixels.empty() || f.pixels.size() % plane != 0)
      throw CodecError("video '" + v.video_id + "' frame " + std::to_string(t + 1) +
                       ": payload size " + std::to_string(f.pixels.size()) +
                       " is not a multiple of H*W");
    f.channels = static_cast<int>(f.pixels.size() / plane);
    v.frames.push_back(std::move(f));
  }

  const auto& objects = field(j, "objects", path);
  if (!objects.is_object()) throw SchemaError(path + ".objects", "expected an object");
  for (auto it = objects.begin(); it != objects.end(); ++it) {
    const std::string op = path + ".objects." + it.key();
    const auto& masks = field(*it, "masks", op);
    if (!masks.is_array()) throw SchemaError(op + ".masks", "expected an array");
    ObjectTrack track;
    if (!masks.empty()) {
      if (static_cast<int>(masks.size()) != v.length)
        throw SchemaError(op + ".masks", "expected " + std::to_string(v.length) + " masks");
      for (std::size_t t = 0; t < masks.size(); ++t) {
        const std::string mp = op + ".masks[" + std::to_string(t) + "]";
        const Rle r = detail::rle_from_json(masks[t], mp);
        if (r.h != v.height || r.w != v.width)
          throw SchemaError(mp, "mask size differs from frame size");
        try {
          track.masks.push_back(decode_mask_rle(r));
        } catch (const CodecError& e) {
          throw CodecError("video '" + v.video_id + "' object '" + it.key() + "' frame " +
                           std::to_string(t + 1) + ": " + e.what());
        }
      }
    } else if (it.key() != kVideoLevelObject) {
      throw SchemaError(op + ".masks", "only the video-level object may omit masks");
    }
    const auto moment = detail::int_array(field(*it, "moment", op), op + ".moment");
    try {
      v.moments.per_object.emplace(it.key(), MomentSet(moment, v.length));
    } catch (const MomentError& e) {
      throw SchemaError(op + ".moment", e.what());
    }
    if (!track.masks.empty()) v.objects.emplace(it.key(), std::move(track));
  }

  const auto& exprs = field(j, "expressions", path);
  if (!exprs.is_array()) throw SchemaError(path + ".expressions", "expected an array");
  for (std::size_t e = 0; e < exprs.size(); ++e) {
    const std::string ep = path + ".expressions[" + std::to_string(e) + "]";
    ExpressionRecord rec;
    rec.tokens = detail::int_array(field(exprs[e], "tokens", ep), ep + ".tokens");
    rec.verb_indices = detail::int_array(field(exprs[e], "verb_indices", ep), ep + ".verb_indices");
    const auto& ids = field(exprs[e], "referred_object_ids", ep);
    if (!ids.is_array() || ids.empty())
      throw SchemaError(ep + ".referred_object_ids", "expected a non-empty array");
    for (const auto& x : ids) {
      if (!x.is_string()) throw SchemaError(ep + ".referred_object_ids", "expected strings");
      rec.referred_object_ids.push_back(x.get<std::string>());
    }
    if (rec.tokens.empty()) throw SchemaError(ep + ".tokens", "expression has no tokens");
    for (std::size_t k = 0; k < rec.verb_indices.size(); ++k) {
      const int vi = rec.verb_indices[k];
      if (vi < 1 || vi > static_cast<int>(rec.tokens.size()) ||
          (k > 0 && vi <= rec.verb_indices[k - 1]))
        throw SchemaError(ep + ".verb_indices", "must be strictly increasing within [1,L]");
    }
    for (const auto& rid : rec.referred_object_ids) {
      if (!v.objects.count(rid))
        throw SchemaError(ep + ".referred_object_ids", "unknown object id '" + rid + "'");
      if (!v.moments.per_object.count(rid))
        throw SchemaError(ep + ".referred_object_ids", "object '" + rid + "' has no moment");
    }
    v.expressions.push_back(std::move(rec));
  }
  return v;
}

inline std::string write_dataset(const std::vector<VideoSample>& samples) {
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& v : samples) videos.push_back(video_to_json(v));
  nlohmann::json doc{{"format_version", kDatasetFormat}, {"videos", videos}};
  return doc.dump(1);
}

inline std::vector<VideoSample> parse_dataset(const std::string& bytes) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("$", std::string("malformed JSON: ") + e.what());
  }
  const auto& ver = detail::field(doc, "format_version", "$");
  if (!ver.is_string() || ver.get<std::string>() != kDatasetFormat)
    throw SchemaError("$.format_version", std::string("expected \"") + kDatasetFormat + "\"");
  const auto& videos = detail::field(doc, "videos", "$");
  if (!videos.is_array()) throw SchemaError("$.videos", "expected an array");
  std::vector<VideoSample> out;
  out.reserve(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i)
    out.push_back(video_from_json(videos[i], "$.videos[" + std::to_string(i) + "]"));
  return out;
}

enum class ViolationKind {
  kEmptyMaskOverMoment,     // referred object has no mask pixels on any frame of its moment
  kMomentOutOfRange,        // moment not expressed over this video's length
  kExpressionWithoutMoment, // every referred object has an empty moment
  kUnknownObject,           // expression references an object without masks
};

struct Violation {
  ViolationKind kind;
  std::string video_id;
  std::string object_id;
  int expression_index = -1;
  std::string message;
};

/// Reports annotation defects; never throws and never mutates.
inline std::vector<Violation> validate_dataset(const std::vector<VideoSample>& samples) {
  std::vector<Violation> out;
  for (const auto& v : samples) {
    if (v.moments.video_length != v.length)
      out.push_back({ViolationKind::kMomentOutOfRange, v.video_id, "", -1,
                     "annotation video_length differs from T_V"});
    for (const auto& [id, m] : v.moments.per_object) {
      const bool bad_len = m.video_length() != v.length;
      const bool bad_idx = !m.empty() && (m.indices().front() < 1 || m.indices().back() > v.length);
      if (bad_len || bad_idx)
        out.push_back({ViolationKind::kMomentOutOfRange, v.video_id, id, -1,
                       "moment indices outside [1,T_V]"});
    }
    std::map<std::string, bool> checked;
    for (std::size_t e = 0; e < v.expressions.size(); ++e) {
      const auto& ex = v.expressions[e];
      bool any_moment = v.moments.per_object.count(kVideoLevelObject) > 0;
      for (const auto& rid : ex.referred_object_ids) {
        auto obj = v.objects.find(rid);
        auto mom = v.moments.per_object.find(rid);
        if (obj == v.objects.end()) {
          out.push_back({ViolationKind::kUnknownObject, v.video_id, rid, static_cast<int>(e),
                         "referred object has no masks"});
          continue;
        }
        if (mom == v.moments.per_object.end() || mom->second.empty()) continue;
        any_moment = true;
        if (checked[rid]) continue;
        checked[rid] = true;
        bool visible = false;
        for (auto t : mom->second.indices()) {
          if (t < 1 || t > static_cast<int>(obj->second.masks.size())) continue;
          if (!obj->second.masks[static_cast<std::size_t>(t - 1)].empty()) {
            visible = true;
            break;
          }
        }
        if (!visible)
          out.push_back({ViolationKind::kEmptyMaskOverMoment, v.video_id, rid, static_cast<int>(e),
                         "referred object has empty masks on every frame of its moment"});
      }
      if (!any_moment)
        out.push_back({ViolationKind::kExpressionWithoutMoment, v.video_id, "", static_cast<int>(e),
                       "all referred objects have empty moments"});
    }
  }
  return out;
}

}  // namespace samdwich
