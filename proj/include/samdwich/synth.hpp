#pragma once

// Synthetic moving-shapes benchmark with exact per-object moments.
//
// Frames carry four channels: RGB and a motion channel that stamps each
// object's current action onto its visible pixels, so a single frame carries
// the evidence a video model would read off neighbouring frames.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "samdwich/dataset.hpp"
#include "samdwich/moments.hpp"
#include "samdwich/rng.hpp"

namespace samdwich {

enum class ShapeKind { kSquare, kDisc, kTriangle };
enum class Action { kMovingLeft, kMovingRight, kMovingUp, kMovingDown, kStill };

inline constexpr std::array<const char*, 4> kColorNames{"red", "green", "blue", "yellow"};
inline constexpr std::array<std::array<std::uint8_t, 3>, 4> kColorRgb{
    {{220, 40, 40}, {40, 200, 60}, {50, 70, 230}, {225, 215, 40}}};
inline constexpr std::array<const char*, 3> kShapeNames{"square", "disc", "triangle"};

/// Fixed vocabulary. Id 0 is padding.
namespace vocab {
inline constexpr int kThe = 1;
inline constexpr int kColorBase = 2;   // red, green, blue, yellow
inline constexpr int kShapeBase = 6;   // square, disc, triangle
inline constexpr int kMoving = 9;
inline constexpr int kLeft = 10;
inline constexpr int kRight = 11;
inline constexpr int kUp = 12;
inline constexpr int kDown = 13;
inline constexpr int kStanding = 14;
inline constexpr int kStill = 15;
inline constexpr int kSize = 32;
}  // namespace vocab

inline std::vector<int> action_tokens(Action a) {
  switch (a) {
    case Action::kMovingLeft: return {vocab::kMoving, vocab::kLeft};
    case Action::kMovingRight: return {vocab::kMoving, vocab::kRight};
    case Action::kMovingUp: return {vocab::kMoving, vocab::kUp};
    case Action::kMovingDown: return {vocab::kMoving, vocab::kDown};
    case Action::kStill: return {vocab::kStanding, vocab::kStill};
  }
  return {};
}

inline std::uint8_t motion_code(Action a) {
  switch (a) {
    case Action::kMovingLeft: return 50;
    case Action::kMovingRight: return 100;
    case Action::kMovingUp: return 150;
    case Action::kMovingDown: return 200;
    case Action::kStill: return 0;
  }
  return 0;
}

inline std::pair<int, int> action_step(Action a) {  // (dx, dy) per frame
  switch (a) {
    case Action::kMovingLeft: return {-1, 0};
    case Action::kMovingRight: return {1, 0};
    case Action::kMovingUp: return {0, -1};
    case Action::kMovingDown: return {0, 1};
    case Action::kStill: return {0, 0};
  }
  return {0, 0};
}

struct ActionSegment {
  Action action = Action::kStill;
  FrameIndex start = 1;  // inclusive, 1-based
  FrameIndex end = 1;
};

/// One object. The action of frame t is the displacement from t-1 to t; frame
/// 1's position is (x, y), the top-left of the bounding box.
struct ObjectSpec {
  std::string id;
  ShapeKind shape = ShapeKind::kSquare;
  int color = 0;
  int size = 6;
  int x = 0;
  int y = 0;
  std::vector<ActionSegment> segments;  // must cover every frame exactly once

  Action action_at(FrameIndex t) const {
    for (const auto& s : segments)
      if (t >= s.start && t <= s.end) return s.action;
    throw std::invalid_argument("object " + id + " has no action at frame " + std::to_string(t));
  }
};

struct SceneSpec {
  int height = 32;
  int width = 32;
  int length = 16;
  std::vector<ObjectSpec> objects;  // drawn in order, later objects on top
};

class SceneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bounding-box origin of an object at every frame (index t-1).
inline std::vector<std::pair<int, int>> trajectory(const ObjectSpec& o, int length) {
  if (o.segments.empty()) throw SceneError("object " + o.id + " has no action segment");
  std::vector<int> cover(static_cast<std::size_t>(length) + 1, 0);
  for (const auto& s : o.segments) {
    if (s.start < 1 || s.end > length || s.end < s.start)
      throw SceneError("object " + o.id + " has an action segment outside [1," + std::to_string(length) + "]");
    for (int t = s.start; t <= s.end; ++t) ++cover[static_cast<std::size_t>(t)];
  }
  for (int t = 1; t <= length; ++t)
    if (cover[static_cast<std::size_t>(t)] != 1)
      throw SceneError("object " + o.id + " action segments do not cover frame " + std::to_string(t) + " exactly once");
  std::vector<std::pair<int, int>> pos;
  int x = o.x, y = o.y;
  for (int t = 1; t <= length; ++t) {
    if (t > 1) {
      const auto [dx, dy] = action_step(o.action_at(t));
      x += dx;
      y += dy;
    }
    pos.emplace_back(x, y);
  }
  return pos;
}

/// Whether local pixel (dx, dy) of a size x size box belongs to the shape.
inline bool shape_covers(ShapeKind shape, int size, int dx, int dy) {
  const double cx = dx + 0.5, cy = dy + 0.5, half = size / 2.0;
  switch (shape) {
    case ShapeKind::kSquare: return true;
    case ShapeKind::kDisc: return (cx - half) * (cx - half) + (cy - half) * (cy - half) <= half * half;
    case ShapeKind::kTriangle: return std::abs(cx - half) <= cy / 2.0;  // apex up, base = size
  }
  return false;
}

struct RenderedScene {
  std::vector<Frame> frames;
  std::vector<std::vector<BinaryMask>> masks;  // [object][frame], visible pixels only
};

inline RenderedScene render_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.height < 1 || spec.width < 1 || spec.length < 1)
    throw SceneError("scene dimensions must be positive");
  std::vector<std::vector<std::pair<int, int>>> paths;
  for (const auto& o : spec.objects) {
    if (o.color < 0 || o.color >= static_cast<int>(kColorRgb.size()))
      throw SceneError("object " + o.id + " has unknown color " + std::to_string(o.color));
    if (o.size < 2) throw SceneError("object " + o.id + " is smaller than 2 pixels");
    auto path = trajectory(o, spec.length);
    for (std::size_t t = 0; t < path.size(); ++t) {
      const auto [x, y] = path[t];
      if (x < 0 || y < 0 || x + o.size > spec.width || y + o.size > spec.height)
        throw SceneError("object " + o.id + " leaves the canvas at frame " + std::to_string(t + 1));
    }
    paths.push_back(std::move(path));
  }
  Rng rng(mix_seed(seed, 0x524e4452ULL));
  const int h = spec.height, w = spec.width;
  std::vector<std::uint8_t> background(static_cast<std::size_t>(h * w * 3));
  for (auto& b : background) b = static_cast<std::uint8_t>(rng.range(0, 60));

  RenderedScene out;
  out.masks.assign(spec.objects.size(), {});
  for (int t = 0; t < spec.length; ++t) {
    Frame f{h, w, 4, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * 4), 0)};
    for (int i = 0; i < h * w; ++i)
      for (int c = 0; c < 3; ++c)
        f.pixels[static_cast<std::size_t>(i * 4 + c)] = background[static_cast<std::size_t>(i * 3 + c)];
    std::vector<int> owner(static_cast<std::size_t>(h * w), -1);
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
      const auto& o = spec.objects[k];
      const auto [ox, oy] = paths[k][static_cast<std::size_t>(t)];
      const auto& rgb = kColorRgb[static_cast<std::size_t>(o.color)];
      const std::uint8_t motion = motion_code(o.action_at(t + 1));
      for (int dy = 0; dy < o.size; ++dy)
        for (int dx = 0; dx < o.size; ++dx) {
          if (!shape_covers(o.shape, o.size, dx, dy)) continue;
          const int p = (oy + dy) * w + ox + dx;
          owner[static_cast<std::size_t>(p)] = static_cast<int>(k);
          for (int c = 0; c < 3; ++c) f.pixels[static_cast<std::size_t>(p * 4 + c)] = rgb[static_cast<std::size_t>(c)];
          f.pixels[static_cast<std::size_t>(p * 4 + 3)] = motion;
        }
    }
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
      BinaryMask m(h, w);
      for (int p = 0; p < h * w; ++p) m.bits[static_cast<std::size_t>(p)] = owner[static_cast<std::size_t>(p)] == static_cast<int>(k);
      out.masks[k].push_back(std::move(m));
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

struct ExpressionSpec {
  int color = 0;
  ShapeKind shape = ShapeKind::kSquare;
  Action action = Action::kMovingLeft;
};

/// Builds the sample for one scene and one expression. Referred objects are
/// those matching color and shape that perform the action at least once; each
/// object's moment is the set of frames where it performs the action.
inline VideoSample build_sample(const std::string& video_id, const SceneSpec& scene,
                                const ExpressionSpec& expr, std::uint64_t seed) {
  RenderedScene r = render_scene(scene, seed);
  VideoSample v;
  v.video_id = video_id;
  v.length = scene.length;
  v.height = scene.height;
  v.width = scene.width;
  v.frames = std::move(r.frames);
  v.moments.video_length = scene.length;
  ExpressionRecord rec;
  rec.tokens = {vocab::kThe, vocab::kColorBase + expr.color,
                vocab::kShapeBase + static_cast<int>(expr.shape)};
  for (int tok : action_tokens(expr.action)) {
    rec.tokens.push_back(tok);
    rec.verb_indices.push_back(static_cast<int>(rec.tokens.size()));
  }
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& o = scene.objects[k];
    std::vector<FrameIndex> frames;
    if (o.color == expr.color && o.shape == expr.shape)
      for (int t = 1; t <= scene.length; ++t)
        if (o.action_at(t) == expr.action) frames.push_back(t);
    if (!frames.empty()) rec.referred_object_ids.push_back(o.id);
    v.moments.per_object.emplace(o.id, MomentSet(frames, scene.length));
    v.objects.emplace(o.id, ObjectTrack{std::move(r.masks[k])});
  }
  if (rec.referred_object_ids.empty())
    throw SceneError(video_id + ": expression refers to no object");
  v.expressions.push_back(std::move(rec));
  return v;
}

struct SynthConfig {
  int train_videos = 200;
  int eval_videos = 40;
  int length = 16;
  int height = 32;
  int width = 32;
  int min_objects = 2;
  int max_objects = 4;
  int min_size = 6;
  int max_size = 8;
  int min_moment = 4;
  int max_moment = 10;
  double distractor_prob = 0.7;    // same color and shape, different action
  double second_referent_prob = 0.25;
};

namespace detail {

inline Action random_motion(Rng& rng) { return static_cast<Action>(rng.range(0, 3)); }

// Still outside [start, end], `a` inside.
inline std::vector<ActionSegment> spans_with(Action a, int start, int end, int length) {
  std::vector<ActionSegment> s;
  if (start > 1) s.push_back({Action::kStill, 1, start - 1});
  s.push_back({a, start, end});
  if (end < length) s.push_back({Action::kStill, end + 1, length});
  return s;
}

inline std::vector<ActionSegment> random_span(Action a, const SynthConfig& c, Rng& rng) {
  const int len = rng.range(c.min_moment, std::min(c.max_moment, c.length));
  const int start = rng.range(1, c.length - len + 1);
  return spans_with(a, start, start + len - 1, c.length);
}

// Places `o` at a random origin that keeps its whole path on the canvas.
inline bool place(ObjectSpec& o, const SynthConfig& c, Rng& rng) {
  o.x = 0;
  o.y = 0;
  const auto path = trajectory(o, c.length);
  int min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  for (auto [x, y] : path) {
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }
  const int lo_x = -min_x, hi_x = c.width - o.size - max_x;
  const int lo_y = -min_y, hi_y = c.height - o.size - max_y;
  if (lo_x > hi_x || lo_y > hi_y) return false;
  o.x = rng.range(lo_x, hi_x);
  o.y = rng.range(lo_y, hi_y);
  return true;
}

inline int box_overlap(const ObjectSpec& a, const ObjectSpec& b) {
  const int ix = std::max(0, std::min(a.x + a.size, b.x + b.size) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.y + a.size, b.y + b.size) - std::max(a.y, b.y));
  return ix * iy;
}

}  // namespace detail

/// Random scene and expression for one video. Referred objects are drawn last
/// so they are never hidden.
inline std::pair<SceneSpec, ExpressionSpec> random_scene(const SynthConfig& c, Rng& rng) {
  SceneSpec scene{c.height, c.width, c.length, {}};
  ExpressionSpec expr{rng.range(0, 3), static_cast<ShapeKind>(rng.range(0, 2)), detail::random_motion(rng)};
  const int n_objects = rng.range(c.min_objects, c.max_objects);

  std::vector<ObjectSpec> front, back;
  auto make = [&](int color, ShapeKind shape, std::vector<ActionSegment> segs) {
    ObjectSpec o;
    o.color = color;
    o.shape = shape;
    o.size = rng.range(c.min_size, c.max_size);
    o.segments = std::move(segs);
    return o;
  };
  front.push_back(make(expr.color, expr.shape, detail::random_span(expr.action, c, rng)));
  if (n_objects > static_cast<int>(front.size()) && rng.bernoulli(c.second_referent_prob))
    front.push_back(make(expr.color, expr.shape, detail::random_span(expr.action, c, rng)));
  if (n_objects > static_cast<int>(front.size() + back.size()) && rng.bernoulli(c.distractor_prob)) {
    std::vector<ActionSegment> segs;
    if (rng.bernoulli(0.5)) {
      segs = {{Action::kStill, 1, c.length}};
    } else {
      Action other = detail::random_motion(rng);
      while (other == expr.action) other = detail::random_motion(rng);
      segs = detail::random_span(other, c, rng);
    }
    back.push_back(make(expr.color, expr.shape, std::move(segs)));
  }
  while (static_cast<int>(front.size() + back.size()) < n_objects) {
    int color = rng.range(0, 3);
    auto shape = static_cast<ShapeKind>(rng.range(0, 2));
    while (color == expr.color && shape == expr.shape) {
      color = rng.range(0, 3);
      shape = static_cast<ShapeKind>(rng.range(0, 2));
    }
    const Action a = rng.bernoulli(0.3) ? Action::kStill : detail::random_motion(rng);
    back.push_back(make(color, shape, a == Action::kStill
                                          ? std::vector<ActionSegment>{{Action::kStill, 1, c.length}}
                                          : detail::random_span(a, c, rng)));
  }
  scene.objects = back;
  scene.objects.insert(scene.objects.end(), front.begin(), front.end());
  // Placement: a few tries to limit overlap at frame 1.
  int best_overlap = -1;
  std::vector<ObjectSpec> best;
  for (int attempt = 0; attempt < 12; ++attempt) {
    std::vector<ObjectSpec> trial = scene.objects;
    bool ok = true;
    for (auto& o : trial) ok = ok && detail::place(o, c, rng);
    if (!ok) continue;
    int overlap = 0;
    for (std::size_t i = 0; i < trial.size(); ++i)
      for (std::size_t j = i + 1; j < trial.size(); ++j) overlap += detail::box_overlap(trial[i], trial[j]);
    if (best_overlap < 0 || overlap < best_overlap) {
      best_overlap = overlap;
      best = trial;
    }
    if (overlap == 0) break;
  }
  if (best_overlap < 0) throw SceneError("could not place objects on the canvas");
  scene.objects = best;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) scene.objects[i].id = "obj" + std::to_string(i);
  return {scene, expr};
}

/// Deterministic corpus of `count` videos. Video i uses seed mix(seed, i) and is
/// redrawn until it passes validation.
inline std::vector<VideoSample> generate_dataset(const SynthConfig& c, int count, std::uint64_t seed,
                                                 const std::string& id_prefix = "vid") {
  if (c.min_objects < 1 || c.max_objects < c.min_objects)
    throw std::invalid_argument("synth: object count range is empty");
  if (c.min_moment < 1 || c.max_moment < c.min_moment || c.min_moment > c.length)
    throw std::invalid_argument("synth: moment length range is invalid");
  std::vector<VideoSample> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t vseed = mix_seed(seed, static_cast<std::uint64_t>(i));
    char id[32];
    std::snprintf(id, sizeof id, "%s%04d", id_prefix.c_str(), i);
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(mix_seed(vseed, attempt));
      auto [scene, expr] = random_scene(c, rng);
      VideoSample v = build_sample(id, scene, expr, rng.next());
      if (validate_dataset({v}).empty()) {
        out.push_back(std::move(v));
        break;
      }
      if (attempt > 100) throw SceneError(std::string(id) + ": no valid scene after 100 attempts");
    }
  }
  return out;
}

}  // namespace samdwich
