#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "samdwich/model_params.hpp"
#include "samdwich/tensor.hpp"

namespace samdwich {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModelParams first;   // running means, same layout as the parameters
  ModelParams second;  // running uncentred variances
  std::int64_t steps = 0;

  static AdamState zeros_like(const ModelParams& p) {
    AdamState s{p, p, 0};
    s.first.visit([](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape); });
    s.second.visit([](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape); });
    return s;
  }
};

/// One bias-corrected Adam update. `tracked` is the tape copy of `params` the
/// loss was computed from.
inline void adam_step(ModelParams& params, AdamState& state, const ModelParams& tracked,
                      const Gradients& grads, const AdamConfig& cfg) {
  ++state.steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  std::vector<Tensor*> p_list, m_list, v_list;
  std::vector<const Tensor*> t_list;
  params.visit([&](const std::string&, Tensor& t) { p_list.push_back(&t); });
  state.first.visit([&](const std::string&, Tensor& t) { m_list.push_back(&t); });
  state.second.visit([&](const std::string&, Tensor& t) { v_list.push_back(&t); });
  tracked.visit([&](const std::string&, const Tensor& t) { t_list.push_back(&t); });
  if (p_list.size() != t_list.size() || p_list.size() != m_list.size())
    throw std::logic_error("adam_step: parameter layouts differ");
  for (std::size_t i = 0; i < p_list.size(); ++i) {
    const Tensor g = grads.of(*t_list[i]);
    auto& p = p_list[i]->data;
    auto& m = m_list[i]->data;
    auto& v = v_list[i]->data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1 - cfg.beta1) * g.data[j];
      v[j] = cfg.beta2 * v[j] + (1 - cfg.beta2) * g.data[j] * g.data[j];
      p[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

}  // namespace samdwich
