// Command-line entry point: synth, train, infer, eval, retrieval-eval, ablate.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "samdwich/samdwich.hpp"

namespace fs = std::filesystem;
using namespace samdwich;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig load_config(const CommonArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) {
    std::string text;
    try {
      text = read_file(a.config);
    } catch (const IoError& e) {
      throw ConfigError(a.config, e.what());
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(a.config, std::string("not valid JSON: ") + e.what());
    }
    cfg = config_from_json(j);
  }
  if (a.seed) cfg.seed = *a.seed;
  return cfg;
}

std::vector<VideoSample> load_dataset(const std::string& path, const char* role) {
  if (path.empty()) throw ConfigError(std::string("data.") + role, "no dataset path given");
  auto videos = parse_dataset(read_file(path));
  const auto violations = validate_dataset(videos);
  if (!violations.empty()) {
    for (const auto& v : violations) std::cerr << "invalid: " << v.message << "\n";
    throw SchemaError(path, std::to_string(violations.size()) + " validation finding(s)");
  }
  return videos;
}

std::string require_out(const CommonArgs& a) {
  if (a.out.empty()) throw ConfigError("--out", "output path required");
  return a.out;
}

int cmd_synth(const CommonArgs& a) {
  RunConfig cfg = load_config(a);
  if (a.seed) cfg.synth_seed = *a.seed;
  const fs::path dir = require_out(a);
  const auto [train, eval] = synth_benchmark(cfg);
  write_file_atomic((dir / "train.json").string(), write_dataset(train));
  write_file_atomic((dir / "eval.json").string(), write_dataset(eval));
  nlohmann::json manifest = {{"seed", cfg.synth_seed},
                             {"config_hash", config_hash(cfg)},
                             {"synth", config_to_json(cfg)["synth"]},
                             {"train_videos", train.size()},
                             {"eval_videos", eval.size()},
                             {"build", build_id()}};
  write_file_atomic((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  std::cout << "wrote " << train.size() << " train and " << eval.size() << " eval videos to " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const CommonArgs& a, const std::string& data, const std::string& resume,
              std::int64_t stop_after) {
  RunConfig cfg = load_config(a);
  if (!data.empty()) cfg.train_data = data;
  const fs::path dir = require_out(a);
  const auto videos = load_dataset(cfg.train_data, "train");
  const std::string hash = training_hash(cfg);
  FeatureCache cache(videos, cfg.model.encoder);
  Trainer trainer(cfg, videos, cache);
  TrainState state = resume.empty() ? initial_state(cfg) : load_checkpoint(resume, cfg.model, hash).state;
  const std::int64_t until = stop_after >= 0 ? std::min<std::int64_t>(stop_after, cfg.train.steps) : cfg.train.steps;
  train_until(state, trainer, until, [&](const TrainState& s) {
    if (s.step % 100 == 0 || s.step == until)
      std::fprintf(stderr, "step %lld loss %.5f\n", static_cast<long long>(s.step), s.curve.back().total);
  });
  save_checkpoint((dir / "checkpoint.json").string(), {hash, state});
  write_file_atomic((dir / "loss.csv").string(), loss_curve_csv(state.curve));
  std::cout << "trained " << state.step << " steps; checkpoint " << (dir / "checkpoint.json").string() << "\n";
  return kOk;
}

int cmd_infer(const CommonArgs& a, const std::string& data, const std::string& ckpt, bool allow_mismatch,
              const std::string& scores_path) {
  RunConfig cfg = load_config(a);
  if (!data.empty()) cfg.eval_data = data;
  if (!scores_path.empty()) cfg.inference.scores_path = scores_path;
  const std::string out = require_out(a);
  if (ckpt.empty()) throw ConfigError("--checkpoint", "checkpoint path required");
  const auto videos = load_dataset(cfg.eval_data, "eval");
  const Checkpoint c = load_checkpoint(ckpt, cfg.model, allow_mismatch ? "" : training_hash(cfg));
  ScoreTable table;
  if (cfg.inference.scorer == ScorerConfig::Kind::kExternal) {
    std::istringstream in(read_file(cfg.inference.scores_path));
    table = parse_score_csv(in);
  }
  const PredictionFile preds = run_predictions(cfg, c.state.params, videos, &table);
  write_file_atomic(out, predictions_to_json(preds).dump() + "\n");
  std::cout << "wrote " << preds.entries.size() << " predictions to " << out << "\n";
  return kOk;
}

std::string sibling_table_path(const std::string& out) {
  fs::path p(out);
  p.replace_extension(".txt");
  return p.string();
}

int cmd_eval(const CommonArgs& a, const std::string& data, const std::string& pred_path, bool retrieval_only) {
  RunConfig cfg = load_config(a);
  if (!data.empty()) cfg.eval_data = data;
  const std::string out = require_out(a);
  if (pred_path.empty()) throw ConfigError("--predictions", "prediction file required");
  const auto videos = load_dataset(cfg.eval_data, "eval");
  nlohmann::json pj;
  try {
    pj = nlohmann::json::parse(read_file(pred_path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(pred_path, std::string("not valid JSON: ") + e.what());
  }
  const PredictionFile preds = predictions_from_json(pj);
  EvalReport report = evaluate(preds, videos, cfg.boundary_tolerance);
  nlohmann::json j = report_to_json(report);
  if (retrieval_only) {
    nlohmann::json r;
    for (const char* k : {"R1_50", "R1_70", "mAP", "mAP_50", "mAP_75", "top1"}) r[k] = j["corpus"][k];
    j = {{"build", report.build_id}, {"config_hash", report.config_hash}, {"corpus", r}};
  }
  write_file_atomic(out, j.dump(2) + "\n");
  const std::string table = report_to_table(report);
  if (!retrieval_only) write_file_atomic(sibling_table_path(out), table);
  std::cout << table;
  return kOk;
}

int cmd_ablate(const CommonArgs& a) {
  RunConfig cfg = load_config(a);
  if (a.seed) cfg.ablate_seeds = {*a.seed};
  const fs::path dir = require_out(a);
  const auto train = load_dataset(cfg.train_data, "train");
  const auto eval = load_dataset(cfg.eval_data, "eval");
  const auto rows = run_ablation(cfg, train, eval, ablation_grid(), [](const AblationRow& r, std::size_t s) {
    std::fprintf(stderr, "sampling=%d mdp=%d oss=%d seed#%zu J&F %.2f\n", r.flags.moment_sampling, r.flags.mdp,
                 r.flags.oss, s, r.jf.back());
  });
  const std::string table = ablation_table(rows);
  write_file_atomic((dir / "ablation.json").string(), ablation_to_json(rows, cfg).dump(2) + "\n");
  write_file_atomic((dir / "ablation.txt").string(), table);
  std::cout << table;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moment-aware referring video segmentation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", build_id());
  CommonArgs common;
  std::string data, resume, ckpt, preds, scores;
  std::int64_t stop_after = -1;
  bool allow_mismatch = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "run configuration (JSON)");
    sub->add_option("--seed", common.seed, "override the seed");
    sub->add_option("--out", common.out, "output path");
  };
  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark");
  add_common(synth);
  auto* train = app.add_subcommand("train", "train and write a checkpoint and loss curve");
  add_common(train);
  train->add_option("--data", data, "training dataset (overrides data.train)");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--stop-after", stop_after, "stop after this many total steps");
  auto* infer = app.add_subcommand("infer", "segment a dataset with a checkpoint");
  add_common(infer);
  infer->add_option("--data", data, "dataset to segment (overrides data.eval)");
  infer->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  infer->add_option("--scores", scores, "external frame score CSV");
  infer->add_flag("--allow-hash-mismatch", allow_mismatch, "accept a checkpoint trained with another config");
  auto* eval = app.add_subcommand("eval", "score predictions");
  add_common(eval);
  eval->add_option("--data", data, "ground-truth dataset (overrides data.eval)");
  eval->add_option("--predictions", preds, "prediction file")->required();
  auto* reval = app.add_subcommand("retrieval-eval", "score predicted moments only");
  add_common(reval);
  reval->add_option("--data", data, "ground-truth dataset (overrides data.eval)");
  reval->add_option("--predictions", preds, "prediction file")->required();
  auto* ablate = app.add_subcommand("ablate", "run the component ablation grid");
  add_common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (synth->parsed()) return cmd_synth(common);
    if (train->parsed()) return cmd_train(common, data, resume, stop_after);
    if (infer->parsed()) return cmd_infer(common, data, ckpt, allow_mismatch, scores);
    if (eval->parsed()) return cmd_eval(common, data, preds, false);
    if (reval->parsed()) return cmd_eval(common, data, preds, true);
    if (ablate->parsed()) return cmd_ablate(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const CodecError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const EvaluationError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kRuntimeError;
}
