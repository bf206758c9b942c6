#include <gtest/gtest.h>

#include "samdwich/encoders.hpp"
#include "support/oracles.hpp"

namespace samdwich {
namespace {

// Locked at first build: seed 7, 16x16 checkerboard, channels {8, 8, 8}.
constexpr double kCheckerboardChecksum = 19.203761301068159;

Frame blank_frame(int h, int w, int c) {
  return {h, w, c, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * c), 0)};
}

double checksum(const FeaturePyramid& p) {
  double s = 0, i = 1;
  for (const auto& level : p.levels)
    for (const auto& f : level.frames)
      for (double v : f.data) s += v * (i += 0.001);
  return s;
}

TEST(Encoders, PyramidShapes) {
  EncoderConfig cfg;
  Rng rng(1);
  const auto frames = oracle::random_frames(rng, 3, 32, 32, 4);
  const auto pyr = encode_video(frames, cfg, 7);
  ASSERT_EQ(pyr.levels.size(), 3u);
  EXPECT_EQ(pyr.frame_count(), 3);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(pyr.levels[k].height, 8 >> k);
    EXPECT_EQ(pyr.levels[k].frames[0].shape,
              (Shape{static_cast<std::size_t>((8 >> k) * (8 >> k)), static_cast<std::size_t>(cfg.channels[k])}));
  }
}

TEST(Encoders, IdenticalFramesGiveIdenticalFeatures) {
  EncoderConfig cfg;
  Rng rng(2);
  auto frames = oracle::random_frames(rng, 1, 32, 32, 4);
  frames.push_back(frames[0]);
  const auto pyr = encode_video(frames, cfg, 7);
  for (const auto& level : pyr.levels) EXPECT_TRUE(level.frames[0].same_values(level.frames[1]));
  EXPECT_EQ(checksum(pyr), checksum(encode_video(frames, cfg, 7)));
}

TEST(Encoders, ZeroFrameGivesZeroFeatures) {
  EncoderConfig cfg;
  const auto pyr = encode_video({blank_frame(32, 32, 4)}, cfg, 7);
  for (const auto& level : pyr.levels)
    for (double v : level.frames[0].data) EXPECT_EQ(v, 0.0);
}

TEST(Encoders, CheckerboardGoldenChecksum) {
  EncoderConfig cfg;
  cfg.channels = {8, 8, 8};
  Frame f = blank_frame(16, 16, 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) f.pixels[static_cast<std::size_t>(y * 16 + x)] = ((x + y) % 2) ? 255 : 0;
  const double sum = checksum(encode_video({f}, cfg, 7));
  EXPECT_NEAR(sum, kCheckerboardChecksum, 1e-9);
}

TEST(Encoders, PatchShiftTranslatesFinestLevel) {
  EncoderConfig cfg;
  Frame a = blank_frame(32, 32, 4), b = blank_frame(32, 32, 4);
  Rng rng(3);
  for (int y = 8; y < 16; ++y)
    for (int x = 4; x < 12; ++x)
      for (int c = 0; c < 4; ++c) {
        const auto v = static_cast<std::uint8_t>(rng.below(256));
        a.pixels[static_cast<std::size_t>((y * 32 + x) * 4 + c)] = v;
        b.pixels[static_cast<std::size_t>((y * 32 + x + 4) * 4 + c)] = v;
      }
  const auto pa = encode_video({a}, cfg, 7), pb = encode_video({b}, cfg, 7);
  const Tensor& fa = pa.finest(0);
  const Tensor& fb = pb.finest(0);
  for (int gy = 0; gy < 8; ++gy)
    for (int gx = 0; gx + 1 < 8; ++gx)
      for (std::size_t c = 0; c < fa.shape[1]; ++c)
        EXPECT_EQ(fa.at(static_cast<std::size_t>(gy * 8 + gx), c), fb.at(static_cast<std::size_t>(gy * 8 + gx + 1), c));
}

TEST(Encoders, IndivisibleSizeRejected) {
  EncoderConfig cfg;
  EXPECT_THROW(encode_video({blank_frame(24, 24, 4)}, cfg, 7), std::invalid_argument);
  EXPECT_THROW(encode_video({}, cfg, 7), std::invalid_argument);
}

TEST(Encoders, TextLayersShapesAndCls) {
  EncoderConfig cfg;
  const auto text = encode_text({1, 4, 7, 9, 10}, cfg, 7);
  ASSERT_EQ(text.layers.size(), 3u);
  for (const auto& layer : text.layers) {
    EXPECT_EQ(layer.shape, (Shape{6, 32}));
    for (std::size_t i = 0; i < 32; ++i) {
      double mean = 0;
      for (std::size_t l = 1; l <= 5; ++l) mean += layer.at(l, i) / 5.0;
      EXPECT_NEAR(layer.at(0, i), mean, 1e-12);
    }
  }
}

TEST(Encoders, SingleTokenClsEqualsToken) {
  EncoderConfig cfg;
  const auto text = encode_text({5}, cfg, 7);
  for (const auto& layer : text.layers)
    for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(layer.at(0, i), layer.at(1, i));
}

TEST(Encoders, TokenOrderMatters) {
  EncoderConfig cfg;
  EXPECT_FALSE(encode_text({3, 4}, cfg, 7).layers[0].same_values(encode_text({4, 3}, cfg, 7).layers[0]));
}

TEST(Encoders, TextPreconditions) {
  EncoderConfig cfg;
  EXPECT_THROW(encode_text({}, cfg, 7), std::invalid_argument);
  EXPECT_THROW(encode_text({32}, cfg, 7), std::invalid_argument);
}

TEST(Encoders, TextSlots) {
  Rng rng(4);
  const Tensor text = oracle::random_tensor(rng, {6, 4});
  Tape tape;
  auto one = extract_text_slots(tape, text, {3});
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(one.contextual.data[i], text.at(0, i));
    EXPECT_EQ(one.motion.data[i], text.at(3, i));
  }
  auto many = extract_text_slots(tape, text, {1, 2, 4, 5});
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(many.motion.data[i], (text.at(1, i) + text.at(2, i) + text.at(4, i) + text.at(5, i)) / 4, 1e-12);
  Tensor same = text;
  for (std::size_t i = 0; i < 4; ++i) same.at(2, i) = same.at(1, i);
  auto pair = extract_text_slots(tape, same, {1, 2});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(pair.motion.data[i], same.at(1, i), 1e-15);
  EXPECT_THROW(extract_text_slots(tape, text, {}), std::invalid_argument);
  EXPECT_THROW(extract_text_slots(tape, text, {6}), std::invalid_argument);
}

TEST(Encoders, FrozenFeaturesReceiveNoGradient) {
  const ModelConfig cfg = oracle::tiny_model();
  Rng rng(5);
  const auto pyr = encode_video(oracle::random_frames(rng, 1, 16, 16, 4), cfg.encoder, 7);
  const auto text = encode_text({1, 2, 9}, cfg.encoder, 7);
  const FrozenContext frozen = make_frozen_context(cfg);
  Tape tape;
  const ModelParams tracked = oracle::random_params(cfg, rng).tracked(tape);
  const VideoFeatures v{&pyr, &text, {3}};
  const AdaptedFrame a = adapt_frame(tape, v, 0, tracked, frozen);
  const auto g = tape.backward(tape.sum(tape.add(tape.sum(a.features), tape.sum(a.prompt))));
  for (const auto& level : pyr.levels) EXPECT_FALSE(g.has(level.frames[0]));
  EXPECT_FALSE(g.has(text.layers[0]));
  EXPECT_TRUE(g.has(tracked.adapter[0].down_v));
}

}  // namespace
}  // namespace samdwich
