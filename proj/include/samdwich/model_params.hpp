#pragma once

// Trainable parameters (adapter, prompt MLP, memory modules, mask decoder),
// the model configuration and the frozen constant operators derived from it.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "samdwich/encoders.hpp"
#include "samdwich/rng.hpp"
#include "samdwich/tensor.hpp"

namespace samdwich {

struct ModelConfig {
  EncoderConfig encoder;
  int frame_height = 32;
  int frame_width = 32;
  int frame_channels = 4;
  int adapter_width = 16;     // r, shared by all adapter levels
  int prompt_hidden = 64;
  int prompt_dim = 32;        // D_p
  int memory_dim = 32;        // C_m
  int memory_attn_width = 16;
  int decoder_width = 16;
  int memory_capacity = 8;
  int memory_neighbors = 6;
  double locality_sigma = 1.0;  // memory attention position prior, in cells

  int finest_channels() const { return encoder.channels.at(0); }
  int grid_height() const { return frame_height / encoder.patch; }
  int grid_width() const { return frame_width / encoder.patch; }
  int cells() const { return grid_height() * grid_width(); }
};

struct AdapterLevelParams {
  Tensor down_v;  // [C_k, r]
  Tensor down_t;  // [D, r]
  Tensor up_v;    // [r, C_k]
  Tensor up_t;    // [r, D]
  Tensor query;   // [r, r], shared by both attention directions
  Tensor key;     // [r, r]
  Tensor value;   // [r, r]
};

struct PromptParams {
  Tensor w1;  // [2D, hidden]
  Tensor b1;  // [1, hidden]
  Tensor w2;  // [hidden, D_p]
  Tensor b2;  // [1, D_p]
};

struct MemoryParams {
  Tensor fuse_w;  // [C_f + 1, C_m]
  Tensor fuse_b;  // [1, C_m]
  Tensor query;   // [C_f, r_m]
  Tensor key;     // [C_m, r_m]
  Tensor value;   // [C_m, C_f]
};

struct DecoderParams {
  Tensor mask_token;  // [1, D_p], stands in for the prompt on the visual-only path
  Tensor query;       // [D_p, r_d]
  Tensor key;         // [C_f, r_d]
  Tensor value;       // [C_f, D_p]
  Tensor cell_w;      // [C_f, D_p]
  Tensor cell_b;      // [1, D_p]
  Tensor bias;        // [1, 1]
};

struct ModelParams {
  std::vector<AdapterLevelParams> adapter;  // indexed by pyramid level, finest first
  PromptParams prompt;
  MemoryParams memory;
  DecoderParams decoder;

  /// Visits every trainable tensor with a stable name, in a fixed order.
  template <typename F>
  void visit(F&& f) {
    for (std::size_t k = 0; k < adapter.size(); ++k) {
      const std::string p = "adapter." + std::to_string(k) + ".";
      auto& a = adapter[k];
      f(p + "down_v", a.down_v);
      f(p + "down_t", a.down_t);
      f(p + "up_v", a.up_v);
      f(p + "up_t", a.up_t);
      f(p + "query", a.query);
      f(p + "key", a.key);
      f(p + "value", a.value);
    }
    f("prompt.w1", prompt.w1);
    f("prompt.b1", prompt.b1);
    f("prompt.w2", prompt.w2);
    f("prompt.b2", prompt.b2);
    f("memory.fuse_w", memory.fuse_w);
    f("memory.fuse_b", memory.fuse_b);
    f("memory.query", memory.query);
    f("memory.key", memory.key);
    f("memory.value", memory.value);
    f("decoder.mask_token", decoder.mask_token);
    f("decoder.query", decoder.query);
    f("decoder.key", decoder.key);
    f("decoder.value", decoder.value);
    f("decoder.cell_w", decoder.cell_w);
    f("decoder.cell_b", decoder.cell_b);
    f("decoder.bias", decoder.bias);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit([&](const std::string& n, Tensor& t) {
      f(n, static_cast<const Tensor&>(t));
    });
  }

  /// Copy whose tensors are leaves on `tape`.
  ModelParams tracked(Tape& tape) const {
    ModelParams out = *this;
    out.visit([&](const std::string&, Tensor& t) { t = tape.leaf(t.detached()); });
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
  }
};

/// Fresh parameters. Up-projections start at zero so the adapter begins as the
/// identity on both modalities.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x504152414dULL));
  auto gauss = [&](std::size_t r, std::size_t c, double fan_in) {
    return detail::gaussian_matrix(r, c, 1.0 / std::sqrt(fan_in), rng);
  };
  const std::size_t r = static_cast<std::size_t>(cfg.adapter_width);
  const std::size_t d = static_cast<std::size_t>(cfg.encoder.text_dim);
  const std::size_t cf = static_cast<std::size_t>(cfg.finest_channels());
  const std::size_t dp = static_cast<std::size_t>(cfg.prompt_dim);
  const std::size_t hid = static_cast<std::size_t>(cfg.prompt_hidden);
  const std::size_t cm = static_cast<std::size_t>(cfg.memory_dim);
  const std::size_t rm = static_cast<std::size_t>(cfg.memory_attn_width);
  const std::size_t rd = static_cast<std::size_t>(cfg.decoder_width);

  ModelParams p;
  for (int k = 0; k < cfg.encoder.levels(); ++k) {
    const std::size_t ck = static_cast<std::size_t>(cfg.encoder.channels[k]);
    AdapterLevelParams a;
    a.down_v = gauss(ck, r, double(ck));
    a.down_t = gauss(d, r, double(d));
    a.up_v = Tensor::zeros({r, ck});
    a.up_t = Tensor::zeros({r, d});
    a.query = gauss(r, r, double(r));
    a.key = gauss(r, r, double(r));
    a.value = gauss(r, r, double(r));
    p.adapter.push_back(std::move(a));
  }
  p.prompt.w1 = gauss(2 * d, hid, double(d));
  p.prompt.b1 = Tensor::zeros({1, hid});
  p.prompt.w2 = gauss(hid, dp, double(hid) / 2.0);
  p.prompt.b2 = Tensor::zeros({1, dp});
  p.memory.fuse_w = gauss(cf + 1, cm, double(cf + 1));
  p.memory.fuse_b = Tensor::zeros({1, cm});
  p.memory.query = gauss(cf, rm, double(cf));
  p.memory.key = gauss(cm, rm, double(cm));
  p.memory.value = gauss(cm, cf, double(cm));
  p.decoder.mask_token = gauss(1, dp, 1.0);
  p.decoder.query = gauss(dp, rd, double(dp));
  p.decoder.key = gauss(cf, rd, double(cf));
  p.decoder.value = gauss(cf, dp, double(cf));
  p.decoder.cell_w = gauss(cf, dp, double(cf));
  p.decoder.cell_b = Tensor::zeros({1, dp});
  p.decoder.bias = Tensor::zeros({1, 1});
  return p;
}

/// Constant operators shared by every forward pass: resampling matrices, the
/// encoder's frozen level transitions and the memory-attention position prior.
struct FrozenContext {
  std::vector<Tensor> upsample_nearest;   // [k]: level k+1 cells -> level k cells
  std::vector<Tensor> transitions_t;      // [k]: C_{k+1} -> C_k, transpose of encoder transition
  Tensor mask_downsample;                 // [cells, H*W] block average
  Tensor logits_upsample;                 // [H*W, cells] bilinear
  Tensor locality;                        // [cells, cells] additive attention prior
};

namespace detail {

inline Tensor nearest_upsample_matrix(int h, int w) {  // (h,w) -> (2h,2w)
  const int oh = 2 * h, ow = 2 * w;
  Tensor m = Tensor::zeros({static_cast<std::size_t>(oh * ow), static_cast<std::size_t>(h * w)});
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) m.at(y * ow + x, (y / 2) * w + x / 2) = 1.0;
  return m;
}

// Bilinear weights with half-pixel centers, clamped at the border.
inline Tensor bilinear_matrix(int gh, int gw, int oh, int ow) {
  Tensor m = Tensor::zeros({static_cast<std::size_t>(oh * ow), static_cast<std::size_t>(gh * gw)});
  auto axis = [](int out, int in_size, int out_size, int& i0, int& i1, double& f) {
    double src = (out + 0.5) * in_size / double(out_size) - 0.5;
    src = std::clamp(src, 0.0, double(in_size - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, in_size - 1);
    f = src - i0;
  };
  for (int y = 0; y < oh; ++y) {
    int y0, y1;
    double fy;
    axis(y, gh, oh, y0, y1, fy);
    for (int x = 0; x < ow; ++x) {
      int x0, x1;
      double fx;
      axis(x, gw, ow, x0, x1, fx);
      const std::size_t row = static_cast<std::size_t>(y * ow + x);
      m.at(row, y0 * gw + x0) += (1 - fy) * (1 - fx);
      m.at(row, y0 * gw + x1) += (1 - fy) * fx;
      m.at(row, y1 * gw + x0) += fy * (1 - fx);
      m.at(row, y1 * gw + x1) += fy * fx;
    }
  }
  return m;
}

}  // namespace detail

inline FrozenContext make_frozen_context(const ModelConfig& cfg) {
  FrozenContext fc;
  const int gh = cfg.grid_height(), gw = cfg.grid_width();
  int lh = gh, lw = gw;
  for (int k = 0; k + 1 < cfg.encoder.levels(); ++k) {
    fc.upsample_nearest.push_back(detail::nearest_upsample_matrix(lh / 2, lw / 2));
    lh /= 2;
    lw /= 2;
  }
  for (const auto& t : encoder_transitions(cfg.encoder, cfg.frame_channels, cfg.encoder.seed)) {
    Tensor tt = Tensor::zeros({t.shape[1], t.shape[0]});
    for (std::size_t i = 0; i < t.shape[0]; ++i)
      for (std::size_t j = 0; j < t.shape[1]; ++j) tt.at(j, i) = t.at(i, j);
    fc.transitions_t.push_back(std::move(tt));
  }
  const int h = cfg.frame_height, w = cfg.frame_width, p = cfg.encoder.patch;
  fc.mask_downsample = Tensor::zeros({static_cast<std::size_t>(gh * gw), static_cast<std::size_t>(h * w)});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      fc.mask_downsample.at((y / p) * gw + x / p, y * w + x) = 1.0 / (p * p);
  fc.logits_upsample = detail::bilinear_matrix(gh, gw, h, w);
  const int cells = gh * gw;
  fc.locality = Tensor::zeros({static_cast<std::size_t>(cells), static_cast<std::size_t>(cells)});
  const double s2 = 2.0 * cfg.locality_sigma * cfg.locality_sigma;
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j) {
      const double dy = i / gw - j / gw, dx = i % gw - j % gw;
      fc.locality.at(i, j) = -(dy * dy + dx * dx) / s2;
    }
  return fc;
}

}  // namespace samdwich
