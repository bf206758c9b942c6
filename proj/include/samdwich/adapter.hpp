#pragma once

// Bidirectional cross-modal adapter and the text-prompt MLP.
//
// Stack position s (0-based) pairs visual level K-1-s with text layer s, so
// the stack walks the pyramid coarse to fine while walking the text encoder
// shallow to deep. Each position's text output feeds the next position's text
// input (plus that layer's frozen features), and each visual correction is
// carried down to the next finer level through a nearest 2x upsample and the
// transposed frozen channel transition.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "samdwich/encoders.hpp"
#include "samdwich/model_params.hpp"
#include "samdwich/tensor.hpp"

namespace samdwich {

/// Single-head scaled dot-product cross-attention h(X, Y) with weights on the
/// low-rank space: softmax(X Wq (Y Wk)^T / sqrt(r)) Y Wv.
inline Tensor cross_attention(Tape& tape, const Tensor& x, const Tensor& y,
                              const AdapterLevelParams& p) {
  const double r = static_cast<double>(p.query.shape.at(1));
  Tensor q = tape.matmul(x, p.query);
  Tensor k = tape.matmul(y, p.key);
  Tensor v = tape.matmul(y, p.value);
  Tensor logits = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(r));
  return tape.matmul(tape.softmax(logits, 1), v);
}

struct AdapterOutput {
  Tensor visual;  // [N, C_k]
  Tensor text;    // [L+1, D]
};

/// One adapter layer on visual tokens [N, C_k] (N = T * cells) and text tokens
/// [L+1, D]. Every visual token attends over all text tokens and vice versa.
inline AdapterOutput adapter_layer(Tape& tape, const Tensor& visual, const Tensor& text,
                                   const AdapterLevelParams& p) {
  if (visual.rank() != 2 || text.rank() != 2)
    throw ShapeError("adapter_layer: inputs must be rank 2");
  if (visual.shape[1] != p.down_v.shape[0])
    throw ShapeError("adapter_layer: visual channels " + std::to_string(visual.shape[1]) +
                     " do not match down projection " + shape_str(p.down_v.shape));
  if (text.shape[1] != p.down_t.shape[0])
    throw ShapeError("adapter_layer: text width " + std::to_string(text.shape[1]) +
                     " does not match down projection " + shape_str(p.down_t.shape));
  Tensor fv = tape.matmul(visual, p.down_v);
  Tensor ft = tape.matmul(text, p.down_t);
  Tensor to_visual = tape.matmul(cross_attention(tape, fv, ft, p), p.up_v);
  Tensor to_text = tape.matmul(cross_attention(tape, ft, fv, p), p.up_t);
  return {tape.add(visual, to_visual), tape.add(text, to_text)};
}

/// Frozen per-frame inputs of the adapter stack.
struct AdapterInputs {
  std::vector<const Tensor*> visual;  // per pyramid level, finest first, [cells_k, C_k]
  std::vector<const Tensor*> text;    // per text layer, shallow first, [L+1, D]
};

/// Returns the adapted finest visual level and the adapted deepest text layer.
inline AdapterOutput run_adapter_stack(Tape& tape, const AdapterInputs& in,
                                       const ModelParams& params, const FrozenContext& frozen) {
  const std::size_t levels = params.adapter.size();
  if (in.visual.size() != levels || in.text.size() != levels)
    throw ShapeError("run_adapter_stack: expected " + std::to_string(levels) +
                     " visual and text levels, got " + std::to_string(in.visual.size()) + " and " +
                     std::to_string(in.text.size()));
  Tensor visual_carry, text_carry;
  AdapterOutput out;
  for (std::size_t s = 0; s < levels; ++s) {
    const std::size_t level = levels - 1 - s;
    const Tensor& base_v = *in.visual[level];
    const Tensor& base_t = *in.text[s];
    Tensor vin = base_v;
    if (s > 0) {
      Tensor up = tape.matmul(frozen.upsample_nearest.at(level), visual_carry);
      vin = tape.add(base_v, tape.matmul(up, frozen.transitions_t.at(level)));
    }
    Tensor tin = s > 0 ? tape.add(base_t, text_carry) : base_t;
    out = adapter_layer(tape, vin, tin, params.adapter[level]);
    if (s + 1 < levels) {
      visual_carry = tape.sub(out.visual, base_v);
      text_carry = tape.sub(out.text, base_t);
    }
  }
  return out;
}

/// rho = MLP([E_C ; E_M]) with one ReLU hidden layer.
inline Tensor build_text_prompt(Tape& tape, const Tensor& contextual, const Tensor& motion,
                                const PromptParams& p) {
  if (contextual.shape != motion.shape || contextual.rank() != 2 || contextual.shape[0] != 1)
    throw ShapeError("build_text_prompt: E_C and E_M must both be [1, D], got " +
                     shape_str(contextual.shape) + " and " + shape_str(motion.shape));
  Tensor x = tape.concat({&contextual, &motion}, 1);
  Tensor h = tape.relu(tape.add(tape.matmul(x, p.w1), p.b1));
  return tape.add(tape.matmul(h, p.w2), p.b2);
}

}  // namespace samdwich
