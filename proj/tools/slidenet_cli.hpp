#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slidenet/datagen/pipeline.hpp"
#include "slidenet/geometry/primitives.hpp"
#include "slidenet/simulator/dynamics.hpp"
#include "slidenet/trainer/protocol.hpp"

namespace slidenet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = ".";
  std::string config;
};

inline fs::path resolve(const Globals& g, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(g.out_dir) / path;
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("malformed config " + path.string() + ": " + e.what());
  }
}

inline json load_config(const Globals& g) { return g.config.empty() ? json::object() : read_json_file(g.config); }

inline void write_json(const fs::path& path, const json& j) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw DataError("cannot create " + path.parent_path().string() + ": " + ec.message());
  trainer::write_text(path, j.dump(2) + "\n");
}

inline Vec2 parse_vec2(const std::string& text, const char* what) {
  std::stringstream ss(text);
  double a = 0, b = 0;
  char comma = 0;
  if (!(ss >> a >> comma >> b) || comma != ',' || !(ss >> std::ws).eof()) {
    throw UsageError(std::string(what) + " expects x,y but got '" + text + "'");
  }
  return {a, b};
}

/// Either a family member id such as box_3 or an OBJ/OFF path.
inline geometry::TriMesh load_shape(const Globals& g, const std::string& shape, const std::string& mesh_path) {
  if (!mesh_path.empty()) return geometry::load_mesh(resolve(g, mesh_path));
  const auto us = shape.rfind('_');
  std::optional<geometry::ShapeKind> kind;
  if (us != std::string::npos) kind = geometry::parse_shape_kind(shape.substr(0, us));
  std::size_t index = 0;
  try {
    if (kind) index = std::stoul(shape.substr(us + 1));
  } catch (const std::exception&) {
    throw UsageError("shape id '" + shape + "' must look like <family>_<index>");
  }
  if (!kind) throw UsageError("shape id '" + shape + "' must look like <family>_<index>");
  return geometry::family_member(*kind, index, g.seed);
}

struct Range {
  double lo = std::numeric_limits<double>::infinity(), hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

inline void print_gen_summary(const data::DatasetManifest& m, std::size_t generated, std::size_t removed,
                              std::ostream& out) {
  Range mass, travel, rot;
  std::size_t in_band = 0;
  for (const auto& r : m.records) {
    mass.add(r.mass);
    travel.add(r.final_pos.norm());
    rot.add(r.total_rotation_deg);
    in_band += r.final_pos.norm() >= 0.5 && r.final_pos.norm() <= 5.0;
  }
  out << "generated " << generated << " simulations, kept " << m.records.size() << ", outliers removed " << removed
      << "\n";
  if (m.records.empty()) return;
  out << std::fixed << std::setprecision(3) << "  mass      " << mass.lo << " .. " << mass.hi << " kg\n"
      << "  travel    " << travel.lo << " .. " << travel.hi << " m (" << std::setprecision(1)
      << 100.0 * static_cast<double>(in_band) / static_cast<double>(m.records.size()) << "% within 0.5-5 m)\n"
      << std::setprecision(1) << "  rotation  " << rot.lo << " .. " << rot.hi << " deg\n";
  out.unsetf(std::ios::floatfield);
}

struct GenArgs {
  std::string shapes;
  std::size_t n = 0;
  std::string out;
  std::optional<double> mu, dt, density, cell, speed_min, speed_max;
  std::optional<std::size_t> n_points, patch_samples, jobs;
};

inline int cmd_gen(const Globals& g, const GenArgs& a, std::ostream& out) {
  const json file = load_config(g);
  const json cmd = file.value("command", json::object());
  data::GenConfig cfg;
  if (file.contains("generation")) data::apply_json(cfg, file.at("generation"));
  if (a.mu) cfg.sim.mu = *a.mu;
  if (a.dt) cfg.sim.dt = *a.dt;
  if (a.density) cfg.density = *a.density;
  if (a.cell) cfg.cell = *a.cell;
  if (a.speed_min) cfg.impulse.speed_min = *a.speed_min;
  if (a.speed_max) cfg.impulse.speed_max = *a.speed_max;
  if (a.n_points) cfg.n_points = *a.n_points;
  if (a.patch_samples) cfg.patch_samples = *a.patch_samples;
  cfg.jobs = a.jobs.value_or(cmd.value("jobs", std::size_t{1}));
  const std::uint64_t seed = g.seed_given ? g.seed : file.value("seed", g.seed);
  const std::string spec = a.shapes.empty() ? cmd.value("shapes", std::string{}) : a.shapes;
  const std::size_t n = a.n > 0 ? a.n : cmd.value("n", std::size_t{0});
  if (spec.empty()) throw UsageError("gen: --shapes is required");
  if (n == 0) throw UsageError("gen: --n must be positive");

  const auto shapes = data::parse_shape_spec(spec, seed);
  if (n % shapes.size() != 0) {
    throw UsageError("gen: --n " + std::to_string(n) + " is not a multiple of the " + std::to_string(shapes.size()) +
                     " shapes");
  }
  auto raw = data::generate(shapes, n / shapes.size(), cfg, seed);
  std::size_t removed = 0;
  auto m = data::filter_outliers(raw, &removed);
  m.config["command"] = {{"shapes", spec}, {"n", n}, {"jobs", cfg.jobs}};
  data::save(m, resolve(g, a.out));
  print_gen_summary(m, raw.records.size(), removed, out);
  return 0;
}

struct SimulateArgs {
  std::optional<std::string> mesh, shape, impulse, at, trace;
  std::optional<double> mu, dt, density, cell;
  std::optional<std::size_t> patch_samples;
};

inline int cmd_simulate(const Globals& g, const SimulateArgs& a, std::ostream& out) {
  const json file = load_config(g);
  const json cmd = file.value("command", json::object());
  const auto pick = [&](const std::optional<std::string>& flag, const char* key, const char* fallback) {
    return flag ? *flag : cmd.value(key, std::string(fallback));
  };
  const std::string mesh_path = pick(a.mesh, "mesh", ""), shape = pick(a.shape, "shape", "box_0");
  const std::string impulse = pick(a.impulse, "impulse", "0,0"), at = pick(a.at, "at", "0,0");
  const std::string trace = pick(a.trace, "trace", "");
  const std::size_t patch_samples = a.patch_samples.value_or(cmd.value("patch_samples", std::size_t{1024}));
  const std::uint64_t seed = g.seed_given ? g.seed : file.value("seed", g.seed);
  data::GenConfig gc;
  if (file.contains("generation")) data::apply_json(gc, file.at("generation"));
  if (a.mu) gc.sim.mu = *a.mu;
  if (a.dt) gc.sim.dt = *a.dt;
  if (a.density) gc.density = *a.density;
  if (a.cell) gc.cell = *a.cell;
  const sim::ImpulseSpec imp{parse_vec2(impulse, "--impulse"), parse_vec2(at, "--at")};

  Globals sg = g;
  sg.seed = seed;
  const auto mesh = load_shape(sg, shape, mesh_path);
  const auto grid = geometry::voxelize(mesh, gc.cell);
  const auto mp = geometry::mass_properties(grid, gc.density);
  const auto patch = geometry::contact_patch(grid, patch_samples);
  auto sc = gc.sim;
  if (!trace.empty()) sc.trace_every = 1;
  const auto res = sim::run_to_rest(mp, patch, imp, sc);
  if (res.hit_max_time) throw NumericError("simulate: body still moving after " + std::to_string(sc.max_time) + " s");

  const json snapshot = {{"command", {{"mesh", mesh_path}, {"shape", shape}, {"impulse", impulse}, {"at", at},
                                      {"trace", trace}, {"patch_samples", patch_samples}}},
                         {"seed", seed},
                         {"generation", data::to_json(gc)}};
  write_json(resolve(g, "simulate.config.json"), snapshot);
  if (!trace.empty()) {
    std::ofstream csv(resolve(g, trace));
    if (!csv) throw DataError("cannot write trace " + trace);
    sim::write_trace_csv(csv, res.trajectory);
  }
  out << std::setprecision(6) << "mass " << mp.mass << " kg, inertia_z " << mp.inertia_z << " kg m^2\n"
      << "final_pos " << res.final_pos.x() << "," << res.final_pos.y() << " m (distance " << res.final_pos.norm()
      << ")\n"
      << "total_rotation " << res.total_rotation_deg << " deg\n"
      << "duration " << res.duration << " s\n";
  return 0;
}

struct ShapeArgs {
  std::string shape = "box_0";
  std::string out;
};

inline int cmd_shape(const Globals& g, const ShapeArgs& a, std::ostream& out) {
  const auto mesh = load_shape(g, a.shape, "");
  const auto path = resolve(g, a.out.empty() ? a.shape + ".obj" : a.out);
  geometry::save_mesh(mesh, path);
  write_json(resolve(g, "shape.config.json"), {{"command", {{"shape", a.shape}, {"out", a.out}}}, {"seed", g.seed}});
  out << "wrote " << path.string() << " (" << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
      << " triangles)\n";
  return 0;
}

struct TrainArgs {
  std::string dataset, out;
  std::string protocol, category, variant, preset;
  std::vector<std::string> heads;
  std::optional<std::size_t> epochs, batch_size, val_every;
  std::optional<double> lr_start, lr_end;
  std::optional<std::uint64_t> split_seed;
  bool quiet = false;
};

struct Prepared {
  trainer::ProtocolSpec spec;
  trainer::TrainConfig cfg;
};

inline Prepared prepare_train(const Globals& g, const TrainArgs& a, const data::DatasetManifest& m) {
  const json file = load_config(g);
  Prepared p;
  const std::string preset = !a.preset.empty() ? a.preset : file.value("preset", std::string("full"));
  if (preset == "desk") {
    p.cfg = trainer::desk_preset();
  } else if (preset != "full") {
    throw UsageError("unknown preset '" + preset + "' (expected full or desk)");
  }
  if (file.contains("train")) trainer::apply_json(p.cfg, file.at("train"));
  if (file.contains("protocol")) {
    const auto& pj = file.at("protocol");
    p.spec.name = pj.value("name", p.spec.name);
    p.spec.category = pj.value("category", p.spec.category);
    p.spec.variant = pj.value("variant", p.spec.variant);
    p.spec.split_seed = pj.value("split_seed", p.spec.split_seed);
    p.spec.fractions = {pj.value("train", p.spec.fractions.train), pj.value("val", p.spec.fractions.val),
                        pj.value("test", p.spec.fractions.test)};
  } else {
    p.spec.split_seed = g.seed;
  }
  if (g.seed_given) {
    p.cfg.seed = g.seed;
    if (!a.split_seed) p.spec.split_seed = g.seed;
  }
  if (!a.protocol.empty()) p.spec.name = a.protocol;
  if (!a.category.empty()) p.spec.category = a.category;
  if (!a.variant.empty()) p.spec.variant = a.variant;
  if (a.split_seed) p.spec.split_seed = *a.split_seed;
  if (a.epochs) p.cfg.epochs = *a.epochs;
  if (a.batch_size) p.cfg.batch_size = *a.batch_size;
  if (a.val_every) p.cfg.val_every = *a.val_every;
  if (a.lr_start) p.cfg.lr_start = *a.lr_start;
  if (a.lr_end) p.cfg.lr_end = *a.lr_end;
  for (const auto& h : a.heads) {
    if (h == "mass_inertia") {
      p.cfg.model.head_mass_inertia = true;
    } else if (h == "velocities") {
      p.cfg.model.head_velocities = true;
    } else {
      throw UsageError("unknown head '" + h + "' (expected mass_inertia or velocities)");
    }
  }
  if (!m.clouds.empty()) p.cfg.model.n_points = m.clouds.begin()->second.size();
  return p;
}

inline json dataset_provenance(const fs::path& dir, const data::DatasetManifest& m) {
  return {{"path", dir.string()}, {"records", m.records.size()}, {"seed", m.config.value("seed", std::uint64_t{0})}};
}

inline int cmd_train(const Globals& g, const TrainArgs& a, bool evaluate, std::ostream& out, std::ostream& err) {
  if (a.dataset.empty()) throw UsageError("--dataset is required");
  if (a.out.empty()) throw UsageError("--out is required");
  const auto dir = resolve(g, a.dataset);
  const auto m = data::load(dir);
  const auto p = prepare_train(g, a, m);
  const auto run_dir = resolve(g, a.out);
  auto run = trainer::train_protocol(m, p.spec, p.cfg, run_dir, a.quiet ? nullptr : &err, dataset_provenance(dir, m));
  out << "best epoch " << run.training.best_epoch << ", validation loss " << std::setprecision(6)
      << run.training.best_val_loss << "\n";
  if (evaluate) {
    const auto report = trainer::evaluate_protocol(*run.training.model, run.split_manifest, p.spec.name, run_dir);
    trainer::print_report(report, out);
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint, dataset, out;
};

inline int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() || a.dataset.empty()) throw UsageError("eval: --checkpoint and --dataset are required");
  nn::CheckpointMeta meta;
  auto model = nn::load_checkpoint(resolve(g, a.checkpoint), &meta);
  const auto [protocol, split] = trainer::run_split(meta);
  const auto dir = resolve(g, a.dataset);
  const auto m = data::split(data::load(dir), split);
  trainer::assert_no_leak(m, split.mode);
  const auto run_dir = resolve(g, a.out.empty() ? fs::path(a.checkpoint).parent_path().string() : a.out);
  write_json(run_dir / "eval.config.json", {{"command", {{"checkpoint", a.checkpoint}, {"dataset", a.dataset}}},
                                            {"protocol", protocol},
                                            {"split", data::to_json(split)}});
  trainer::print_report(trainer::evaluate_protocol(*model, m, protocol, run_dir), out);
  return 0;
}

/// Parses and runs one command line. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Predict where an object slides to after an impulse"};
  app.require_subcommand(1);
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out-dir", g.out_dir, "Base directory for relative paths");
  app.add_option("--config", g.config, "JSON file of overrides (any run snapshot replays its run)");

  const auto add_physics = [](CLI::App* c, std::optional<double>& mu, std::optional<double>& dt,
                              std::optional<double>& density, std::optional<double>& cell) {
    c->add_option("--mu", mu, "Friction coefficient");
    c->add_option("--dt", dt, "Integrator step (s)");
    c->add_option("--density", density, "Density (kg/m^3)");
    c->add_option("--cell", cell, "Voxel edge (m)");
  };

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Simulate a dataset");
  c_gen->add_option("--shapes", gen.shapes, "family:count list and/or mesh paths, e.g. box:10,cylinder:30");
  c_gen->add_option("--n", gen.n, "Total simulations (split evenly over shapes)");
  c_gen->add_option("--out", gen.out, "Dataset directory")->required();
  c_gen->add_option("--jobs", gen.jobs, "Worker threads");
  c_gen->add_option("--n-points", gen.n_points, "Points per cloud");
  c_gen->add_option("--patch-samples", gen.patch_samples, "Contact patch samples");
  c_gen->add_option("--speed-min", gen.speed_min, "Lowest initial speed (m/s)");
  c_gen->add_option("--speed-max", gen.speed_max, "Highest initial speed (m/s)");
  add_physics(c_gen, gen.mu, gen.dt, gen.density, gen.cell);

  SimulateArgs simu;
  auto* c_sim = app.add_subcommand("simulate", "Simulate one impulse and print the outcome");
  c_sim->add_option("--mesh", simu.mesh, "OBJ or OFF mesh");
  c_sim->add_option("--shape", simu.shape, "Family member such as box_0 (used without --mesh)");
  c_sim->add_option("--impulse", simu.impulse, "Jx,Jy in N s");
  c_sim->add_option("--at", simu.at, "Application point relative to the COM, rx,ry in m");
  c_sim->add_option("--trace", simu.trace, "Trajectory CSV");
  c_sim->add_option("--patch-samples", simu.patch_samples, "Contact patch samples");
  add_physics(c_sim, simu.mu, simu.dt, simu.density, simu.cell);

  ShapeArgs shape;
  auto* c_shape = app.add_subcommand("shape", "Export a procedural shape as OBJ");
  c_shape->add_option("--shape", shape.shape, "Family member such as cylinder_4");
  c_shape->add_option("--out", shape.out, "OBJ path");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train on a protocol split");
  auto* c_proto = app.add_subcommand("protocol", "Train, then evaluate on the held-out split");
  for (auto* c : {c_train, c_proto}) {
    c->add_option("--dataset", tr.dataset, "Dataset directory");
    c->add_option("--out", tr.out, "Run directory");
    c->add_option("--protocol", tr.protocol, "impulse_gen, obj_gen, leave_one_out or ablation");
    c->add_option("--category", tr.category, "Held-out family for leave_one_out");
    c->add_option("--variant", tr.variant, "full, npp, nic, plain_mlp or np_mlp");
    c->add_option("--preset", tr.preset, "full (default widths) or desk");
    c->add_option("--heads", tr.heads, "Optional heads: mass_inertia, velocities")->delimiter(',');
    c->add_option("--epochs", tr.epochs, "Epochs");
    c->add_option("--batch-size", tr.batch_size, "Mini-batch size");
    c->add_option("--val-every", tr.val_every, "Validation interval in epochs");
    c->add_option("--lr-start", tr.lr_start, "Initial learning rate");
    c->add_option("--lr-end", tr.lr_end, "Final learning rate");
    c->add_option("--split-seed", tr.split_seed, "Seed for the split (defaults to --seed)");
    c->add_flag("--quiet", tr.quiet, "No per-epoch log");
  }

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on its test split");
  c_eval->add_option("--checkpoint", ev.checkpoint, "best.ckpt from a train run");
  c_eval->add_option("--dataset", ev.dataset, "Dataset directory");
  c_eval->add_option("--out", ev.out, "Directory for metrics.json and curves.csv (default: next to the checkpoint)");

  for (auto* c : {c_gen, c_sim, c_shape, c_train, c_proto, c_eval}) c->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*c_gen) return cmd_gen(g, gen, out);
    if (*c_sim) return cmd_simulate(g, simu, out);
    if (*c_shape) return cmd_shape(g, shape, out);
    if (*c_train) return cmd_train(g, tr, false, out, err);
    if (*c_proto) return cmd_train(g, tr, true, out, err);
    if (*c_eval) return cmd_eval(g, ev, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

} // namespace slidenet::cli
