#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "slidenet/datagen/records.hpp"
#include "slidenet/geometry/mesh.hpp"
#include "slidenet/geometry/primitives.hpp"
#include "slidenet/geometry/sampling.hpp"
#include "slidenet/geometry/voxel.hpp"
#include "slidenet/rng.hpp"
#include "slidenet/simulator/dynamics.hpp"

namespace slidenet::data {

inline constexpr int kSchemaVersion = 1;
inline constexpr double kOutlierDistance = 7.0;        // m
inline constexpr double kOutlierRotation = 3000.0;     // degrees

#ifdef SLIDENET_VERSION
inline constexpr const char* kCodeVersion = SLIDENET_VERSION;
#else
inline constexpr const char* kCodeVersion = "dev";
#endif

struct ImpulseConfig {
  double speed_min = 0.9;   // m/s, |J| = mass * U(speed_min, speed_max)
  double speed_max = 2.5;
  double com_radius = 0.10; // max perpendicular distance of the impulse line to the COM
};

struct GenConfig {
  double density = geometry::kDefaultDensity;
  double cell = geometry::kDefaultCell;
  std::size_t n_points = geometry::kDefaultCloudSize;
  std::size_t patch_samples = 1024;
  double scale_min = 0.5;
  double scale_max = 1.5;
  ImpulseConfig impulse;
  sim::SimConfig sim;
  std::size_t jobs = 1;
};

inline nlohmann::json to_json(const GenConfig& c) {
  return {
      {"density", c.density},
      {"cell", c.cell},
      {"n_points", c.n_points},
      {"patch_samples", c.patch_samples},
      {"scale_min", c.scale_min},
      {"scale_max", c.scale_max},
      {"speed_min", c.impulse.speed_min},
      {"speed_max", c.impulse.speed_max},
      {"com_radius", c.impulse.com_radius},
      {"mu", c.sim.mu},
      {"g", c.sim.g},
      {"dt", c.sim.dt},
      {"rest_v", c.sim.rest_v},
      {"rest_omega", c.sim.rest_omega},
      {"max_time", c.sim.max_time},
      {"slip_eps", c.sim.slip_eps},
  };
}

/// Overrides only the keys present in `j`.
inline void apply_json(GenConfig& c, const nlohmann::json& j) {
  const auto set = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  set("density", c.density);
  set("cell", c.cell);
  set("n_points", c.n_points);
  set("patch_samples", c.patch_samples);
  set("scale_min", c.scale_min);
  set("scale_max", c.scale_max);
  set("speed_min", c.impulse.speed_min);
  set("speed_max", c.impulse.speed_max);
  set("com_radius", c.impulse.com_radius);
  set("mu", c.sim.mu);
  set("g", c.sim.g);
  set("dt", c.sim.dt);
  set("rest_v", c.sim.rest_v);
  set("rest_omega", c.sim.rest_omega);
  set("max_time", c.sim.max_time);
  set("slip_eps", c.sim.slip_eps);
}

/// A base shape to simulate: its mesh, identity and family label.
struct ShapeSource {
  geometry::TriMesh mesh;
  std::string shape_id;
  std::string family;
};

/// Parses `family:count` (procedural members 0..count-1) or a mesh file path.
inline std::vector<ShapeSource> parse_shape_spec(const std::string& spec, std::uint64_t seed) {
  std::vector<ShapeSource> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon != std::string::npos) {
      const auto kind = geometry::parse_shape_kind(item.substr(0, colon));
      if (!kind) throw UsageError("unknown shape family '" + item.substr(0, colon) + "'");
      std::size_t count = 0;
      try {
        count = std::stoul(item.substr(colon + 1));
      } catch (const std::logic_error&) {
        throw UsageError("bad shape count in '" + item + "'");
      }
      if (count == 0) throw UsageError("shape count must be positive in '" + item + "'");
      for (std::size_t i = 0; i < count; ++i) {
        auto mesh = geometry::family_member(*kind, i, seed);
        out.push_back({mesh, mesh.shape_id, std::string(geometry::to_string(*kind))});
      }
    } else {
      auto mesh = geometry::load_mesh(item);
      geometry::seat_on_ground(mesh);
      out.push_back({mesh, mesh.shape_id, "mesh"});
    }
  }
  if (out.empty()) throw UsageError("shape spec '" + spec + "' names no shapes");
  return out;
}

/// Horizontal cross-section of the surface at height `z` as 2D segments.
inline std::vector<std::pair<Vec2, Vec2>> slice_at(const geometry::TriMesh& mesh, double z) {
  std::vector<std::pair<Vec2, Vec2>> segs;
  for (const auto& t : mesh.triangles) {
    Vec2 pts[3];
    int n = 0;
    for (int k = 0; k < 3 && n < 3; ++k) {
      const Vec3 a = mesh.vertex(t, k), b = mesh.vertex(t, (k + 1) % 3);
      if ((a.z() - z) * (b.z() - z) < 0.0) {
        const double s = (z - a.z()) / (b.z() - a.z());
        pts[n++] = (a + s * (b - a)).head<2>();
      }
    }
    if (n == 2) segs.emplace_back(pts[0], pts[1]);
  }
  return segs;
}

/// Random impulse: uniform direction, |J| = mass * U(speed range), and a line of
/// action offset from the COM by d ~ U(-com_radius, com_radius). The application
/// point is where that line first enters the object's silhouette at COM height;
/// offsets whose line misses the silhouette are redrawn.
inline sim::ImpulseSpec sample_impulse(const geometry::TriMesh& mesh, const geometry::MassProperties& mp,
                                       const ImpulseConfig& cfg, Rng& rng) {
  if (!(cfg.speed_min > 0.0) || cfg.speed_max < cfg.speed_min) throw UsageError("sample_impulse: bad speed range");
  if (!(cfg.com_radius > 0.0)) throw UsageError("sample_impulse: com_radius must be positive");
  const auto segs = slice_at(mesh, mp.com.z());
  const Vec2 com = mp.com.head<2>();

  const double angle = rng.uniform(0.0, 2.0 * kPi);
  const Vec2 dir(std::cos(angle), std::sin(angle));
  const Vec2 normal(-dir.y(), dir.x());
  const double magnitude = mp.mass * rng.uniform(cfg.speed_min, cfg.speed_max);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double d = rng.uniform(-cfg.com_radius, cfg.com_radius);
    const Vec2 origin = com + d * normal;
    double entry = std::numeric_limits<double>::infinity();
    for (const auto& [p, q] : segs) {
      // origin + t dir = p + s (q - p)
      const Vec2 e = q - p;
      const double den = sim::cross2(dir, e);
      if (std::abs(den) < 1e-15) continue;
      const Vec2 w = p - origin;
      const double t = sim::cross2(w, e) / den;
      const double s = sim::cross2(w, dir) / den;
      if (s >= 0.0 && s <= 1.0) entry = std::min(entry, t);
    }
    if (std::isfinite(entry)) {
      return {magnitude * dir, origin + entry * dir - com};
    }
  }
  throw DataError("sample_impulse: impulse line missed the silhouette of '" + mesh.shape_id + "' 1000 times");
}

namespace detail {

struct GeneratedRecord {
  SimRecord record;
  geometry::PointCloud cloud;
};

inline GeneratedRecord simulate_record(const ShapeSource& src, std::size_t index, std::uint64_t master_seed,
                                       const GenConfig& cfg) {
  const std::uint64_t seed = derive_seed(master_seed, index);
  Rng rng(seed);
  GeneratedRecord out;
  SimRecord& rec = out.record;
  rec.index = index;
  rec.seed = seed;
  rec.shape_id = src.shape_id;
  rec.family = src.family;
  char ref[32];
  std::snprintf(ref, sizeof ref, "r%07zu", index);
  rec.pointcloud_ref = ref;

  try {
    rec.scale = Vec3(rng.uniform(cfg.scale_min, cfg.scale_max), rng.uniform(cfg.scale_min, cfg.scale_max),
                     rng.uniform(cfg.scale_min, cfg.scale_max));
    const auto mesh = geometry::scale_mesh(src.mesh, rec.scale.x(), rec.scale.y(), rec.scale.z());
    const auto grid = geometry::voxelize(mesh, cfg.cell);
    const auto mp = geometry::mass_properties(grid, cfg.density);
    const auto patch = geometry::contact_patch(grid, cfg.patch_samples);
    out.cloud = geometry::quantize_f32(
        geometry::sample_pointcloud(mesh, cfg.n_points, rng.next(), Vec2(mp.com.head<2>())));
    const auto imp = sample_impulse(mesh, mp, cfg.impulse, rng);
    const auto v = sim::apply_impulse(mp, imp);
    const auto outcome = sim::run_to_rest(mp, patch, imp, cfg.sim);
    if (outcome.hit_max_time) throw NumericError("body did not come to rest within max_time");

    rec.J = imp.J;
    rec.r = imp.r;
    rec.mass = mp.mass;
    rec.inertia_z = mp.inertia_z;
    rec.v0 = v.v.norm();
    rec.omega0 = v.omega;
    rec.final_pos = outcome.final_pos;
    rec.total_rotation_deg = outcome.total_rotation_deg;
  } catch (const NumericError& e) {
    throw NumericError("record " + std::to_string(index) + " (" + src.shape_id + "): " + e.what());
  } catch (const UsageError& e) {
    throw UsageError("record " + std::to_string(index) + " (" + src.shape_id + "): " + e.what());
  } catch (const Error& e) {
    throw DataError("record " + std::to_string(index) + " (" + src.shape_id + "): " + e.what());
  }
  return out;
}

} // namespace detail

/// Runs `n_per_shape` simulations for each shape. Record i of shape s gets
/// index s * n_per_shape + i and the seed derive_seed(seed, index), so the
/// result is identical for any `cfg.jobs`.
inline DatasetManifest generate(const std::vector<ShapeSource>& shapes, std::size_t n_per_shape, const GenConfig& cfg,
                                std::uint64_t seed) {
  if (shapes.empty()) throw UsageError("generate: no shapes");
  if (n_per_shape == 0) throw UsageError("generate: need at least one simulation per shape");
  const std::size_t total = shapes.size() * n_per_shape;
  std::vector<detail::GeneratedRecord> slots(total);

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, total));
  std::exception_ptr failure;
  std::size_t failed_index = total;
  std::mutex mu;
  const auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < total; i += jobs) {
      try {
        slots[i] = detail::simulate_record(shapes[i / n_per_shape], i, seed, cfg);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
        return;
      }
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  DatasetManifest m;
  m.records.reserve(total);
  for (auto& s : slots) {
    m.clouds.emplace(s.record.pointcloud_ref, std::move(s.cloud));
    m.records.push_back(std::move(s.record));
  }
  nlohmann::json shape_list = nlohmann::json::array();
  for (const auto& s : shapes) shape_list.push_back({{"shape_id", s.shape_id}, {"family", s.family}});
  m.config = {{"schema_version", kSchemaVersion},
              {"code_version", kCodeVersion},
              {"seed", seed},
              {"n_per_shape", n_per_shape},
              {"generation", to_json(cfg)},
              {"shapes", shape_list}};
  return m;
}

inline bool is_outlier(const SimRecord& r) {
  return r.final_pos.norm() > kOutlierDistance || r.total_rotation_deg > kOutlierRotation;
}

/// Drops records that travelled more than 7 m or turned more than 3000 degrees.
inline DatasetManifest filter_outliers(const DatasetManifest& in, std::size_t* removed = nullptr) {
  DatasetManifest out;
  out.config = in.config;
  std::size_t dropped = 0;
  for (const auto& r : in.records) {
    if (is_outlier(r)) {
      ++dropped;
      continue;
    }
    out.records.push_back(r);
    if (auto it = in.clouds.find(r.pointcloud_ref); it != in.clouds.end()) out.clouds.insert(*it);
  }
  if (out.config.is_object()) out.config["outliers_removed"] = out.config.value("outliers_removed", std::size_t{0}) + dropped;
  if (removed) *removed = dropped;
  return out;
}

/// Rotates a record (and its cloud) about the vertical axis so the impulse
/// points along +x. The rotation label is a scalar and is left untouched.
inline std::pair<SimRecord, geometry::PointCloud> to_impulse_coords(const SimRecord& rec,
                                                                    const geometry::PointCloud& cloud) {
  const double mag = rec.J.norm();
  if (!(mag > 0.0)) throw DataError("to_impulse_coords: record " + std::to_string(rec.index) + " has a zero impulse");
  const double angle = -std::atan2(rec.J.y(), rec.J.x());
  const double c = std::cos(angle), s = std::sin(angle);
  const auto rot = [&](const Vec2& p) { return Vec2(c * p.x() - s * p.y(), s * p.x() + c * p.y()); };
  SimRecord out = rec;
  out.J = Vec2(mag, 0.0);
  out.r = rot(rec.r);
  out.final_pos = rot(rec.final_pos);
  return {out, angle == 0.0 ? cloud : geometry::rotate_cloud(cloud, angle)};
}

enum class SplitMode { BySim, ByObject, LeaveCategoryOut };

inline std::string_view to_string(SplitMode m) {
  switch (m) {
    case SplitMode::BySim: return "by_sim";
    case SplitMode::ByObject: return "by_object";
    case SplitMode::LeaveCategoryOut: return "leave_category_out";
  }
  return "";
}

inline SplitMode parse_split_mode(std::string_view s) {
  if (s == "by_sim") return SplitMode::BySim;
  if (s == "by_object") return SplitMode::ByObject;
  if (s == "leave_category_out") return SplitMode::LeaveCategoryOut;
  throw UsageError("unknown split mode '" + std::string(s) + "'");
}

/// Train / validation / test fractions; they must sum to one.
struct SplitFractions {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
};

struct SplitSpec {
  SplitMode mode = SplitMode::BySim;
  SplitFractions fractions;
  std::string category;  // leave_category_out only
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const SplitSpec& s) {
  return {{"mode", std::string(to_string(s.mode))},
          {"train", s.fractions.train},
          {"val", s.fractions.val},
          {"test", s.fractions.test},
          {"category", s.category},
          {"seed", s.seed}};
}

inline SplitSpec split_from_json(const nlohmann::json& j) {
  SplitSpec s;
  s.mode = parse_split_mode(j.at("mode").get<std::string>());
  s.fractions = {j.at("train").get<double>(), j.at("val").get<double>(), j.at("test").get<double>()};
  s.category = j.value("category", std::string{});
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

namespace detail {

// Assigns `items` (already in a seeded random order) to test, val, train.
template <typename T>
std::map<T, Split> partition(const std::vector<T>& items, double val_frac, double test_frac) {
  const auto n = items.size();
  auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_frac));
  auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_frac));
  if (test_frac > 0 && n_test == 0 && n >= 2) n_test = 1;
  if (val_frac > 0 && n_val == 0 && n >= 3) n_val = 1;
  n_test = std::min(n_test, n);
  n_val = std::min(n_val, n - n_test);
  std::map<T, Split> out;
  for (std::size_t i = 0; i < n; ++i) {
    out[items[i]] = i < n_test ? Split::Test : (i < n_test + n_val ? Split::Val : Split::Train);
  }
  return out;
}

} // namespace detail

/// by_sim partitions records independently of shape; by_object partitions the
/// set of shape ids; leave_category_out sends one family to test and splits
/// the remaining shapes between train and validation.
inline DatasetManifest split(const DatasetManifest& in, const SplitSpec& spec) {
  const auto& f = spec.fractions;
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw UsageError("split: fractions must be non-negative and sum to 1");
  }
  DatasetManifest out = in;
  Rng rng(derive_seed(spec.seed, 0x5b117));

  if (spec.mode == SplitMode::BySim) {
    std::vector<std::size_t> order(out.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    const auto assign = detail::partition(order, f.val, f.test);
    for (std::size_t i = 0; i < out.records.size(); ++i) out.records[i].split = assign.at(i);
    return out;
  }

  std::set<std::string> pool;
  std::set<std::string> held_out;
  for (const auto& r : out.records) {
    if (spec.mode == SplitMode::LeaveCategoryOut && r.family == spec.category) {
      held_out.insert(r.shape_id);
    } else {
      pool.insert(r.shape_id);
    }
  }
  if (spec.mode == SplitMode::LeaveCategoryOut && held_out.empty()) {
    throw DataError("split: category '" + spec.category + "' is absent from the dataset");
  }
  std::vector<std::string> ids(pool.begin(), pool.end());
  rng.shuffle(ids.begin(), ids.end());

  std::map<std::string, Split> assign;
  if (spec.mode == SplitMode::ByObject) {
    assign = detail::partition(ids, f.val, f.test);
  } else {
    const double keep = f.train + f.val;
    assign = detail::partition(ids, keep > 0 ? f.val / keep : 0.0, 0.0);
    for (const auto& id : held_out) assign[id] = Split::Test;
  }
  for (auto& r : out.records) r.split = assign.at(r.shape_id);
  return out;
}

/// Shape ids present in both splits (empty when the split does not leak).
inline std::set<std::string> shared_shape_ids(const DatasetManifest& m, Split a, Split b) {
  std::set<std::string> sa, sb, both;
  for (const auto& r : m.records) {
    if (r.split == a) sa.insert(r.shape_id);
    if (r.split == b) sb.insert(r.shape_id);
  }
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.begin()));
  return both;
}

/// Layout: manifest.jsonl (one record per line), config.json, shapes/<ref>.pc
inline void save(const DatasetManifest& m, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "shapes", ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::size_t n_points = 0;
  for (const auto& [ref, cloud] : m.clouds) {
    geometry::write_pc(cloud, dir / "shapes" / (ref + ".pc"));
    n_points = cloud.size();
  }
  nlohmann::json cfg = m.config;
  cfg["schema_version"] = kSchemaVersion;
  if (!m.clouds.empty()) cfg["n_points"] = n_points;
  {
    std::ofstream out(dir / "config.json");
    if (!out) throw DataError("cannot write " + (dir / "config.json").string());
    out << cfg.dump(2) << '\n';
  }
  std::ofstream out(dir / "manifest.jsonl");
  if (!out) throw DataError("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& r : m.records) out << to_json(r).dump() << '\n';
  if (!out) throw DataError("short write on manifest in " + dir.string());
}

inline DatasetManifest load(const std::filesystem::path& dir) {
  DatasetManifest m;
  {
    std::ifstream in(dir / "config.json");
    if (!in) throw DataError("dataset " + dir.string() + " has no config.json");
    try {
      in >> m.config;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed config.json in " + dir.string() + ": " + e.what());
    }
  }
  const int version = m.config.value("schema_version", -1);
  if (version != kSchemaVersion) {
    throw DataError("dataset " + dir.string() + " has schema version " + std::to_string(version) + ", expected " +
                    std::to_string(kSchemaVersion));
  }
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw DataError("dataset " + dir.string() + " has no manifest.jsonl");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!m.records.empty()) {
    const auto n_points = m.config.at("n_points").get<std::size_t>();
    for (const auto& r : m.records) {
      if (m.clouds.count(r.pointcloud_ref)) continue;
      const auto path = dir / "shapes" / (r.pointcloud_ref + ".pc");
      if (!std::filesystem::exists(path)) {
        throw DataError("referential integrity: record " + std::to_string(r.index) + " points to missing " + path.string());
      }
      m.clouds.emplace(r.pointcloud_ref, geometry::read_pc(path, n_points));
    }
  }
  m.config.erase("n_points");
  return m;
}

} // namespace slidenet::data
