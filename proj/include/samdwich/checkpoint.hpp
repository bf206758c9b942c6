#pragma once

// Checkpoints: parameters, optimizer state, step counter and loss curve in one
// JSON document with base-64 float64 payloads (bit-exact).

#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "samdwich/base64.hpp"
#include "samdwich/io.hpp"
#include "samdwich/model_params.hpp"
#include "samdwich/optim.hpp"
#include "samdwich/training.hpp"

namespace samdwich {

inline constexpr const char* kCheckpointFormat = "samdwich-ckpt/1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string config_hash;
  TrainState state;
};

namespace detail {

inline nlohmann::json params_to_json(const ModelParams& p) {
  nlohmann::json j = nlohmann::json::object();
  p.visit([&](const std::string& name, const Tensor& t) {
    j[name] = {{"shape", t.shape}, {"data", base64::encode_f64(t.data)}};
  });
  return j;
}

// Fills `into` (already holding the expected layout) from `j`.
inline void params_from_json(const nlohmann::json& j, ModelParams& into, const std::string& where) {
  if (!j.is_object()) throw CheckpointError(where + ": expected an object");
  std::size_t seen = 0;
  into.visit([&](const std::string& name, Tensor& t) {
    auto it = j.find(name);
    if (it == j.end()) throw CheckpointError(where + "." + name + ": missing");
    Shape shape = it->at("shape").get<Shape>();
    if (shape != t.shape)
      throw CheckpointError(where + "." + name + ": shape " + shape_str(shape) + " does not match " +
                            shape_str(t.shape));
    auto data = base64::decode_f64(it->at("data").get<std::string>());
    t = Tensor(std::move(shape), std::move(data));
    ++seen;
  });
  if (seen != j.size()) throw CheckpointError(where + ": unexpected extra tensors");
}

}  // namespace detail

inline std::string checkpoint_to_string(const Checkpoint& c) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormat;
  j["config_hash"] = c.config_hash;
  j["step"] = c.state.step;
  j["params"] = detail::params_to_json(c.state.params);
  j["optimizer"] = {{"steps", c.state.optimizer.steps},
                    {"first", detail::params_to_json(c.state.optimizer.first)},
                    {"second", detail::params_to_json(c.state.optimizer.second)}};
  std::vector<double> steps, total, dice, focal;
  for (const auto& r : c.state.curve) {
    steps.push_back(static_cast<double>(r.step));
    total.push_back(r.total);
    dice.push_back(r.dice);
    focal.push_back(r.focal);
  }
  j["curve"] = {{"step", base64::encode_f64(steps)},
                {"total", base64::encode_f64(total)},
                {"dice", base64::encode_f64(dice)},
                {"focal", base64::encode_f64(focal)}};
  return j.dump(1);
}

/// Parses a checkpoint for a model shaped by `model`. A non-empty
/// `expected_hash` must match the stored config hash.
inline Checkpoint checkpoint_from_string(const std::string& text, const ModelConfig& model,
                                         const std::string& expected_hash = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const auto version = j.at("format_version").get<std::string>();
    if (version != kCheckpointFormat)
      throw CheckpointError("checkpoint format '" + version + "' is not " + kCheckpointFormat);
    Checkpoint c;
    c.config_hash = j.at("config_hash").get<std::string>();
    if (!expected_hash.empty() && c.config_hash != expected_hash)
      throw CheckpointError("checkpoint config hash " + c.config_hash + " does not match " + expected_hash);
    c.state.step = j.at("step").get<std::int64_t>();
    c.state.params = init_params(model, 0);
    detail::params_from_json(j.at("params"), c.state.params, "params");
    c.state.optimizer = AdamState::zeros_like(c.state.params);
    c.state.optimizer.steps = j.at("optimizer").at("steps").get<std::int64_t>();
    detail::params_from_json(j.at("optimizer").at("first"), c.state.optimizer.first, "optimizer.first");
    detail::params_from_json(j.at("optimizer").at("second"), c.state.optimizer.second, "optimizer.second");
    const auto& cv = j.at("curve");
    const auto steps = base64::decode_f64(cv.at("step").get<std::string>());
    const auto total = base64::decode_f64(cv.at("total").get<std::string>());
    const auto dice = base64::decode_f64(cv.at("dice").get<std::string>());
    const auto focal = base64::decode_f64(cv.at("focal").get<std::string>());
    if (total.size() != steps.size() || dice.size() != steps.size() || focal.size() != steps.size())
      throw CheckpointError("curve arrays differ in length");
    for (std::size_t i = 0; i < steps.size(); ++i)
      c.state.curve.push_back({static_cast<std::int64_t>(steps[i]), total[i], dice[i], focal[i]});
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  write_file_atomic(path, checkpoint_to_string(c));
}

inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& model,
                                  const std::string& expected_hash = {}) {
  return checkpoint_from_string(read_file(path), model, expected_hash);
}

}  // namespace samdwich
