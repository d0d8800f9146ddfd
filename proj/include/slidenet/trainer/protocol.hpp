#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "slidenet/datagen/pipeline.hpp"
#include "slidenet/trainer/trainer.hpp"

namespace slidenet::trainer {

/// impulse_gen: same objects in train and test (split by simulation).
/// obj_gen: held-out objects (split by shape id).
/// leave_one_out: one family only in test.
/// ablation: impulse_gen split, used with a non-default variant.
struct ProtocolSpec {
  std::string name = "impulse_gen";
  std::string category;  // leave_one_out only
  std::string variant = "full";
  data::SplitFractions fractions;
  std::uint64_t split_seed = 0;
};

inline nlohmann::json to_json(const ProtocolSpec& p) {
  return {{"name", p.name},
          {"category", p.category},
          {"variant", p.variant},
          {"train", p.fractions.train},
          {"val", p.fractions.val},
          {"test", p.fractions.test},
          {"split_seed", p.split_seed}};
}

inline data::SplitSpec split_for(const ProtocolSpec& p) {
  data::SplitSpec s;
  s.fractions = p.fractions;
  s.seed = p.split_seed;
  if (p.name == "impulse_gen" || p.name == "ablation") {
    s.mode = data::SplitMode::BySim;
  } else if (p.name == "obj_gen") {
    s.mode = data::SplitMode::ByObject;
  } else if (p.name == "leave_one_out") {
    if (p.category.empty()) throw UsageError("leave_one_out needs a category");
    s.mode = data::SplitMode::LeaveCategoryOut;
    s.category = p.category;
  } else {
    throw UsageError("unknown protocol '" + p.name + "'");
  }
  return s;
}

/// Refuses to train when held-out shapes leak into training or validation.
inline void assert_no_leak(const data::DatasetManifest& m, data::SplitMode mode) {
  if (mode == data::SplitMode::BySim) return;
  for (auto other : {data::Split::Train, data::Split::Val}) {
    const auto shared = data::shared_shape_ids(m, other, data::Split::Test);
    if (!shared.empty()) {
      throw DataError("split leaks shape '" + *shared.begin() + "' into " + std::string(data::to_string(other)));
    }
  }
}

struct Splits {
  PreparedSet train, val, test;
};

inline Splits prepare_splits(const data::DatasetManifest& m, const nn::ModelConfig& model) {
  Splits s;
  s.train = prepare(m, m.select(data::Split::Train), model.use_impulse_coords, model.n_points);
  s.val = prepare(m, m.select(data::Split::Val), model.use_impulse_coords, model.n_points);
  s.test = prepare(m, m.select(data::Split::Test), model.use_impulse_coords, model.n_points);
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write on " + path.string());
}

/// Protocol and split recorded in a checkpoint's metadata.
inline std::pair<std::string, data::SplitSpec> run_split(const nn::CheckpointMeta& meta) {
  if (!meta.extra.contains("split") || !meta.extra.contains("protocol")) {
    throw DataError("checkpoint does not record its protocol split");
  }
  return {meta.extra.at("protocol").get<std::string>(), data::split_from_json(meta.extra.at("split"))};
}

struct TrainRun {
  TrainResult training;
  data::DatasetManifest split_manifest;
  data::SplitSpec split;
  TrainConfig config;
};

/// Splits the dataset, trains, and writes config.json, history.csv and
/// best.ckpt into `out_dir`.
inline TrainRun train_protocol(const data::DatasetManifest& dataset, const ProtocolSpec& spec, TrainConfig cfg,
                               const std::filesystem::path& out_dir, std::ostream* log = nullptr,
                               const nlohmann::json& provenance = nlohmann::json::object()) {
  const auto heads_mi = cfg.model.head_mass_inertia, heads_v = cfg.model.head_velocities;
  cfg.model = nn::with_variant(cfg.model, spec.variant);
  cfg.model.head_mass_inertia = heads_mi;
  cfg.model.head_velocities = heads_v;
  cfg.validate();

  TrainRun run;
  run.config = cfg;
  run.split = split_for(spec);
  run.split_manifest = data::split(dataset, run.split);
  assert_no_leak(run.split_manifest, run.split.mode);
  const auto select = [&](data::Split s) {
    return prepare(run.split_manifest, run.split_manifest.select(s), cfg.model.use_impulse_coords, cfg.model.n_points);
  };
  const PreparedSet train_set = select(data::Split::Train);
  const PreparedSet val_set = select(data::Split::Val);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create run directory " + out_dir.string() + ": " + ec.message());
  const nlohmann::json config = {{"protocol", to_json(spec)},
                                 {"split", data::to_json(run.split)},
                                 {"train", to_json(cfg)},
                                 {"variant", cfg.model.variant()},
                                 {"code_version", data::kCodeVersion},
                                 {"dataset", provenance},
                                 {"counts", {{"train", train_set.size()}, {"val", val_set.size()}}}};
  write_text(out_dir / "config.json", config.dump(2) + "\n");

  const nlohmann::json extra = {{"split", data::to_json(run.split)}, {"protocol", spec.name}};
  run.training = train(train_set, val_set, cfg, extra, log);
  write_text(out_dir / "best.ckpt", run.training.best_checkpoint);
  std::ostringstream h;
  write_history_csv(run.training.history, h);
  write_text(out_dir / "history.csv", h.str());
  return run;
}

/// Scores `model` on the test split of `split_manifest` and writes
/// metrics.json and curves.csv into `out_dir`.
inline MetricsReport evaluate_protocol(nn::Model& model, const data::DatasetManifest& split_manifest,
                                       const std::string& protocol, const std::filesystem::path& out_dir) {
  const auto& mc = model.config();
  const auto test = prepare(split_manifest, split_manifest.select(data::Split::Test), mc.use_impulse_coords,
                            mc.n_points);
  if (test.size() == 0) throw DataError("protocol " + protocol + ": empty test split");
  auto report = evaluate(model, test);
  report.protocol = protocol;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create run directory " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "metrics.json", to_json(report).dump(2) + "\n");
  curves_csv(report, out_dir / "curves.csv");
  return report;
}

struct RunResult {
  MetricsReport report;
  TrainResult training;
  data::DatasetManifest split_manifest;
};

/// train_protocol followed by evaluate_protocol in the same directory.
inline RunResult run_protocol(const data::DatasetManifest& dataset, const ProtocolSpec& spec, const TrainConfig& cfg,
                              const std::filesystem::path& out_dir, std::ostream* log = nullptr,
                              const nlohmann::json& provenance = nlohmann::json::object()) {
  auto run = train_protocol(dataset, spec, cfg, out_dir, log, provenance);
  RunResult res;
  res.report = evaluate_protocol(*run.training.model, run.split_manifest, spec.name, out_dir);
  res.training = std::move(run.training);
  res.split_manifest = std::move(run.split_manifest);
  return res;
}

} // namespace slidenet::trainer
