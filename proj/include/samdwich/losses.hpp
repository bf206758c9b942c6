#pragma once

// Dice and sigmoid focal losses on per-pixel probabilities, and the per-clip
// total averaged over frames.

#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "samdwich/dataset.hpp"
#include "samdwich/tensor.hpp"

namespace samdwich {

struct LossConfig {
  double dice_weight = 1.0;
  double focal_weight = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_eps = 1.0;
  double prob_clamp = 1e-7;
};

inline Tensor mask_to_tensor(const BinaryMask& m) {
  Tensor t = Tensor::zeros({static_cast<std::size_t>(m.height), static_cast<std::size_t>(m.width)});
  for (std::size_t i = 0; i < m.bits.size(); ++i) t.data[i] = m.bits[i];
  return t;
}

namespace detail {

inline void check_target(const char* who, const Tensor& probs, const Tensor& target,
                         const Tensor* weight) {
  if (probs.shape != target.shape)
    throw ShapeError(std::string(who) + ": prediction " + shape_str(probs.shape) +
                     " and target " + shape_str(target.shape) + " differ");
  if (weight && weight->shape != target.shape)
    throw ShapeError(std::string(who) + ": weight shape " + shape_str(weight->shape) +
                     " does not match target");
  for (double y : target.data)
    if (y != 0.0 && y != 1.0) throw std::invalid_argument(std::string(who) + ": target must be binary");
}

}  // namespace detail

/// 1 - (2 sum(P Y) + eps) / (sum P + sum Y + eps). `weight` (0/1) drops
/// ignored pixels from every sum.
inline Tensor dice_loss(Tape& tape, const Tensor& probs, const Tensor& target, double eps = 1.0,
                        const Tensor* weight = nullptr) {
  detail::check_target("dice_loss", probs, target, weight);
  Tensor p = weight ? tape.mul(probs, *weight) : probs;
  double target_sum = 0;
  for (std::size_t i = 0; i < target.numel(); ++i)
    target_sum += target.data[i] * (weight ? weight->data[i] : 1.0);
  Tensor inter = tape.sum(tape.mul(p, target));
  Tensor num = tape.add(tape.scale(inter, 2.0), Tensor::scalar(eps));
  Tensor den = tape.add(tape.sum(p), Tensor::scalar(target_sum + eps));
  return tape.sub(Tensor::scalar(1.0), tape.mul(num, tape.power(den, -1.0)));
}

/// Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t, with p clamped away
/// from 0 and 1.
inline Tensor focal_loss(Tape& tape, const Tensor& probs, const Tensor& target, double gamma = 2.0,
                         double alpha = 0.25, double clamp = 1e-7,
                         const Tensor* weight = nullptr) {
  detail::check_target("focal_loss", probs, target, weight);
  Tensor pc = tape.clamp(probs, clamp, 1.0 - clamp);
  Tensor neg_target = Tensor::zeros(target.shape);
  Tensor alpha_t = Tensor::zeros(target.shape);
  double kept = 0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const double w = weight ? weight->data[i] : 1.0;
    neg_target.data[i] = 1.0 - target.data[i];
    alpha_t.data[i] = -w * (target.data[i] > 0 ? alpha : 1.0 - alpha);
    kept += w;
  }
  if (kept <= 0) return tape.scale(tape.sum(pc), 0.0);
  const Tensor all_ones = Tensor::filled(target.shape, 1.0);
  Tensor pt = tape.add(tape.mul(pc, target), tape.mul(tape.sub(all_ones, pc), neg_target));
  Tensor modulating = tape.power(tape.sub(all_ones, pt), gamma);
  Tensor terms = tape.mul(alpha_t, tape.mul(modulating, tape.log(pt)));
  return tape.scale(tape.sum(terms), 1.0 / kept);
}

struct ClipLoss {
  Tensor total;  // [1], differentiable
  double dice = 0;
  double focal = 0;
};

struct FrameSupervision {
  Tensor target;               // [H, W] binary
  std::optional<Tensor> weight;  // [H, W] 0/1, absent = all pixels count
};

/// Frame-averaged weighted sum of dice and focal losses on sigmoid(logits).
inline ClipLoss total_loss(Tape& tape, const std::map<FrameIndex, Tensor>& logits,
                           const std::map<FrameIndex, FrameSupervision>& targets,
                           const LossConfig& cfg) {
  if (logits.empty()) throw std::invalid_argument("total_loss: no frames");
  std::vector<Tensor> per_frame;
  ClipLoss out;
  for (const auto& [t, l] : logits) {
    auto it = targets.find(t);
    if (it == targets.end())
      throw std::invalid_argument("total_loss: no target for frame " + std::to_string(t));
    const Tensor* w = it->second.weight ? &*it->second.weight : nullptr;
    Tensor probs = tape.sigmoid(l);
    Tensor d = dice_loss(tape, probs, it->second.target, cfg.dice_eps, w);
    Tensor f = focal_loss(tape, probs, it->second.target, cfg.focal_gamma, cfg.focal_alpha,
                          cfg.prob_clamp, w);
    out.dice += d.item();
    out.focal += f.item();
    per_frame.push_back(tape.add(tape.scale(d, cfg.dice_weight), tape.scale(f, cfg.focal_weight)));
  }
  const double n = static_cast<double>(per_frame.size());
  out.dice /= n;
  out.focal /= n;
  Tensor acc = per_frame[0];
  for (std::size_t i = 1; i < per_frame.size(); ++i) acc = tape.add(acc, per_frame[i]);
  out.total = tape.scale(acc, 1.0 / n);
  return out;
}

}  // namespace samdwich
