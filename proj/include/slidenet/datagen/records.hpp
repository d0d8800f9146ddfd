#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "slidenet/common.hpp"
#include "slidenet/geometry/sampling.hpp"

namespace slidenet::data {

enum class Split { None, Train, Val, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::None: return "";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "";
}

inline Split parse_split(std::string_view s) {
  if (s.empty()) return Split::None;
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split label '" + std::string(s) + "'");
}

/// One labelled simulation. Positions and vectors are in the world frame as
/// generated; `to_impulse_coords` produces the aligned view used for training.
struct SimRecord {
  std::size_t index = 0;
  std::string shape_id;
  std::string family;
  Vec3 scale = Vec3::Ones();
  std::string pointcloud_ref;
  Vec2 J = Vec2::Zero();
  Vec2 r = Vec2::Zero();
  double mass = 0.0;
  double inertia_z = 0.0;
  double v0 = 0.0;
  double omega0 = 0.0;
  Vec2 final_pos = Vec2::Zero();
  double total_rotation_deg = 0.0;
  std::uint64_t seed = 0;
  Split split = Split::None;

  bool operator==(const SimRecord&) const = default;
};

/// Records, their point clouds keyed by `pointcloud_ref`, and the snapshot of
/// the configuration that produced them.
struct DatasetManifest {
  std::vector<SimRecord> records;
  std::map<std::string, geometry::PointCloud> clouds;
  nlohmann::json config = nlohmann::json::object();

  const geometry::PointCloud& cloud(const SimRecord& r) const {
    auto it = clouds.find(r.pointcloud_ref);
    if (it == clouds.end()) throw DataError("record " + std::to_string(r.index) + ": missing point cloud '" + r.pointcloud_ref + "'");
    return it->second;
  }

  std::vector<const SimRecord*> select(Split s) const {
    std::vector<const SimRecord*> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(&r);
    return out;
  }

  bool operator==(const DatasetManifest& o) const {
    return records == o.records && clouds == o.clouds && config == o.config;
  }
};

inline nlohmann::json to_json(const SimRecord& r) {
  return {
      {"index", r.index},
      {"shape_id", r.shape_id},
      {"family", r.family},
      {"scale", {r.scale.x(), r.scale.y(), r.scale.z()}},
      {"pointcloud_ref", r.pointcloud_ref},
      {"J", {r.J.x(), r.J.y()}},
      {"r", {r.r.x(), r.r.y()}},
      {"mass", r.mass},
      {"inertia_z", r.inertia_z},
      {"v0", r.v0},
      {"omega0", r.omega0},
      {"final_pos", {r.final_pos.x(), r.final_pos.y()}},
      {"total_rotation_deg", r.total_rotation_deg},
      {"seed", r.seed},
      {"split", std::string(to_string(r.split))},
  };
}

inline SimRecord record_from_json(const nlohmann::json& j) {
  try {
    SimRecord r;
    r.index = j.at("index").get<std::size_t>();
    r.shape_id = j.at("shape_id").get<std::string>();
    r.family = j.at("family").get<std::string>();
    const auto& s = j.at("scale");
    r.scale = Vec3(s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>());
    r.pointcloud_ref = j.at("pointcloud_ref").get<std::string>();
    r.J = Vec2(j.at("J").at(0).get<double>(), j.at("J").at(1).get<double>());
    r.r = Vec2(j.at("r").at(0).get<double>(), j.at("r").at(1).get<double>());
    r.mass = j.at("mass").get<double>();
    r.inertia_z = j.at("inertia_z").get<double>();
    r.v0 = j.at("v0").get<double>();
    r.omega0 = j.at("omega0").get<double>();
    r.final_pos = Vec2(j.at("final_pos").at(0).get<double>(), j.at("final_pos").at(1).get<double>());
    r.total_rotation_deg = j.at("total_rotation_deg").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.split = parse_split(j.value("split", std::string{}));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest record: ") + e.what());
  }
}

} // namespace slidenet::data
