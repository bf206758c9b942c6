#pragma once

// Frozen stand-in encoders. The visual encoder is a seeded patch embedding
// followed by 2x average pooling + fixed channel projection per level; the text
// encoder is an embedding table with sinusoidal positions followed by fixed
// linear mixes. Neither holds trainable parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "samdwich/dataset.hpp"
#include "samdwich/rng.hpp"
#include "samdwich/tensor.hpp"

namespace samdwich {

struct EncoderConfig {
  int patch = 4;
  std::vector<int> channels{32, 48, 64};  // C_k per pyramid level, finest first
  int text_dim = 32;                      // D
  int vocab_size = 32;
  std::uint64_t seed = 7;

  int levels() const { return static_cast<int>(channels.size()); }
};

/// Level k (0-based here, finest first) holds T frames of [H_k * W_k, C_k]
/// with H_k = H / (patch * 2^k). Cells are flattened row-major.
struct FeaturePyramid {
  struct Level {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<Tensor> frames;  // each [height*width, channels]
  };
  std::vector<Level> levels;

  int frame_count() const { return levels.empty() ? 0 : static_cast<int>(levels[0].frames.size()); }
  /// Finest-level features of a 0-based frame; this is the raw visual feature.
  const Tensor& finest(std::size_t frame) const { return levels.front().frames.at(frame); }
};

/// K tensors shaped [L+1, D]; row 0 is the CLS slot (mean of token rows).
struct TextLayers {
  std::vector<Tensor> layers;
};

namespace detail {

inline Tensor gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor m = Tensor::zeros({rows, cols});
  for (auto& v : m.data) v = rng.normal() * stddev;
  return m;
}

struct EncoderWeights {
  Tensor patch_proj;               // [patch*patch*channels_in, C_0]
  std::vector<Tensor> transitions; // [C_k, C_{k+1}]
};

inline EncoderWeights encoder_weights(const EncoderConfig& cfg, int in_channels,
                                      std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5649534fULL));
  EncoderWeights w;
  const std::size_t fan_in = static_cast<std::size_t>(cfg.patch * cfg.patch * in_channels);
  w.patch_proj = gaussian_matrix(fan_in, cfg.channels.at(0), 2.0 / std::sqrt(double(fan_in)), rng);
  for (int k = 0; k + 1 < cfg.levels(); ++k)
    w.transitions.push_back(gaussian_matrix(cfg.channels[k], cfg.channels[k + 1],
                                            1.0 / std::sqrt(double(cfg.channels[k])), rng));
  return w;
}

inline Tensor avg_pool2(const Tensor& cells, int h, int w) {
  const int c = static_cast<int>(cells.shape[1]);
  Tensor out = Tensor::zeros({static_cast<std::size_t>(h / 2 * (w / 2)), static_cast<std::size_t>(c)});
  for (int y = 0; y < h / 2; ++y)
    for (int x = 0; x < w / 2; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) s += cells.at((2 * y + dy) * w + 2 * x + dx, ch);
        out.at(y * (w / 2) + x, ch) = s / 4.0;
      }
  return out;
}

}  // namespace detail

/// Frozen channel transition from level k to level k+1 (used by the adapter's
/// top-down carry as well).
inline std::vector<Tensor> encoder_transitions(const EncoderConfig& cfg, int in_channels,
                                               std::uint64_t seed) {
  return detail::encoder_weights(cfg, in_channels, seed).transitions;
}

inline FeaturePyramid encode_video(const std::vector<Frame>& frames, const EncoderConfig& cfg,
                                   std::uint64_t seed) {
  if (frames.empty()) throw std::invalid_argument("encode_video: no frames");
  const int h = frames[0].height, w = frames[0].width, c = frames[0].channels;
  // Every level must tile exactly, and H, W must be divisible by 2^(K+1).
  const int div = std::lcm(cfg.patch << (cfg.levels() - 1), 2 << cfg.levels());
  for (const auto& f : frames)
    if (f.height != h || f.width != w || f.channels != c)
      throw std::invalid_argument("encode_video: frames differ in size");
  if (h % div != 0 || w % div != 0)
    throw std::invalid_argument("encode_video: spatial size " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by " + std::to_string(div));
  const auto weights = detail::encoder_weights(cfg, c, seed);
  FeaturePyramid pyr;
  pyr.levels.resize(cfg.levels());
  int lh = h / cfg.patch, lw = w / cfg.patch;
  for (int k = 0; k < cfg.levels(); ++k) {
    pyr.levels[k].height = lh;
    pyr.levels[k].width = lw;
    pyr.levels[k].channels = cfg.channels[k];
    lh /= 2;
    lw /= 2;
  }
  const int p = cfg.patch;
  const std::size_t fan_in = static_cast<std::size_t>(p * p * c);
  for (const auto& f : frames) {
    const int gh = h / p, gw = w / p;
    Tensor patches = Tensor::zeros({static_cast<std::size_t>(gh * gw), fan_in});
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        std::size_t col = 0;
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            for (int ch = 0; ch < c; ++ch)
              patches.at(gy * gw + gx, col++) = f.at(gy * p + dy, gx * p + dx, ch) / 255.0;
      }
    Tensor level(Shape{static_cast<std::size_t>(gh * gw), static_cast<std::size_t>(cfg.channels[0])},
                 std::vector<double>(static_cast<std::size_t>(gh * gw * cfg.channels[0])));
    detail::matmul_into(patches.data.data(), weights.patch_proj.data.data(), level.data.data(),
                        gh * gw, fan_in, cfg.channels[0]);
    pyr.levels[0].frames.push_back(level);
    for (int k = 1; k < cfg.levels(); ++k) {
      const auto& prev = pyr.levels[k - 1];
      Tensor pooled = detail::avg_pool2(pyr.levels[k - 1].frames.back(), prev.height, prev.width);
      Tensor next = Tensor::zeros({pooled.shape[0], static_cast<std::size_t>(cfg.channels[k])});
      detail::matmul_into(pooled.data.data(), weights.transitions[k - 1].data.data(),
                          next.data.data(), pooled.shape[0], pooled.shape[1], cfg.channels[k]);
      pyr.levels[k].frames.push_back(std::move(next));
    }
  }
  return pyr;
}

inline TextLayers encode_text(const std::vector<int>& tokens, const EncoderConfig& cfg,
                              std::uint64_t seed) {
  if (tokens.empty()) throw std::invalid_argument("encode_text: expression must have L >= 1");
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size)
      throw std::invalid_argument("encode_text: unknown token id " + std::to_string(t));
  const std::size_t d = static_cast<std::size_t>(cfg.text_dim);
  const std::size_t len = tokens.size();
  Rng rng(mix_seed(seed, 0x54455854ULL));
  const Tensor table = detail::gaussian_matrix(static_cast<std::size_t>(cfg.vocab_size), d, 1.0, rng);
  std::vector<Tensor> mixes;
  for (int k = 1; k < cfg.levels(); ++k)
    mixes.push_back(detail::gaussian_matrix(d, d, 1.0 / std::sqrt(double(d)), rng));

  Tensor slots = Tensor::zeros({len, d});
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t i = 0; i < d; ++i) {
      const double pos = static_cast<double>(l + 1);
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / double(d));
      const double pe = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
      slots.at(l, i) = table.at(static_cast<std::size_t>(tokens[l]), i) + pe;
    }
  auto with_cls = [&](const Tensor& s) {
    Tensor out = Tensor::zeros({len + 1, d});
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < d; ++i) {
        out.at(l + 1, i) = s.at(l, i);
        out.at(0, i) += s.at(l, i) / static_cast<double>(len);
      }
    return out;
  };
  TextLayers out;
  out.layers.push_back(with_cls(slots));
  for (const auto& mix : mixes) {
    Tensor next = Tensor::zeros({len, d});
    detail::matmul_into(slots.data.data(), mix.data.data(), next.data.data(), len, d, d);
    slots = std::move(next);
    out.layers.push_back(with_cls(slots));
  }
  return out;
}

struct TextSlots {
  Tensor contextual;  // E_C, [1, D]
  Tensor motion;      // E_M, [1, D]
};

/// CLS row and the mean of the verb-token rows of an adapted text layer.
/// Differentiable through `tape` when `text` is tracked.
inline TextSlots extract_text_slots(Tape& tape, const Tensor& text,
                                    const std::vector<int>& verb_indices) {
  if (verb_indices.empty()) throw std::invalid_argument("extract_text_slots: empty verb_indices");
  const std::size_t rows = text.shape.at(0);
  Tensor pick_cls = Tensor::zeros({1, rows});
  pick_cls.data[0] = 1.0;
  Tensor pick_verbs = Tensor::zeros({1, rows});
  for (int v : verb_indices) {
    if (v < 1 || v >= static_cast<int>(rows))
      throw std::invalid_argument("extract_text_slots: verb index " + std::to_string(v) +
                                  " outside [1,L]");
    pick_verbs.data[static_cast<std::size_t>(v)] += 1.0 / static_cast<double>(verb_indices.size());
  }
  return {tape.matmul(pick_cls, text), tape.matmul(pick_verbs, text)};
}

}  // namespace samdwich
