#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "slidenet/common.hpp"

namespace slidenet::geometry {

using Triangle = std::array<int, 3>;

inline constexpr double kMinTriangleArea = 1e-12;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::string shape_id;

  Vec3 vertex(const Triangle& t, int k) const { return vertices[static_cast<std::size_t>(t[k])]; }
};

struct Aabb {
  Vec3 min;
  Vec3 max;
  Vec3 extent() const { return max - min; }
};

inline Aabb bounds(const TriMesh& mesh) {
  if (mesh.vertices.empty()) throw DataError("bounds: mesh has no vertices");
  Aabb box{mesh.vertices.front(), mesh.vertices.front()};
  for (const auto& v : mesh.vertices) {
    box.min = box.min.cwiseMin(v);
    box.max = box.max.cwiseMax(v);
  }
  return box;
}

inline double triangle_area(const TriMesh& mesh, const Triangle& t) {
  return 0.5 * (mesh.vertex(t, 1) - mesh.vertex(t, 0)).cross(mesh.vertex(t, 2) - mesh.vertex(t, 0)).norm();
}

// Throws DataError on empty meshes, out-of-range indices or degenerate faces.
inline void validate(const TriMesh& mesh) {
  if (mesh.vertices.empty() || mesh.triangles.empty()) {
    throw DataError("mesh '" + mesh.shape_id + "' is empty");
  }
  const auto n = static_cast<int>(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    for (int k : t) {
      if (k < 0 || k >= n) {
        throw DataError("mesh '" + mesh.shape_id + "': triangle " + std::to_string(i) + " index " +
                        std::to_string(k) + " out of range [0," + std::to_string(n) + ")");
      }
    }
    if (!(triangle_area(mesh, t) > kMinTriangleArea)) {
      throw DataError("mesh '" + mesh.shape_id + "': triangle " + std::to_string(i) + " is degenerate");
    }
  }
  for (const auto& v : mesh.vertices) {
    if (!v.allFinite()) throw DataError("mesh '" + mesh.shape_id + "': non-finite vertex");
  }
}

// Closed and consistently oriented: every directed edge appears once and its
// reverse appears once.
inline bool is_watertight(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      ++directed[{t[k], t[(k + 1) % 3]}];
    }
  }
  for (const auto& [edge, count] : directed) {
    if (count != 1) return false;
    auto it = directed.find({edge.second, edge.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return !mesh.triangles.empty();
}

// Signed-tetrahedron sums against the origin.
inline double enclosed_volume(const TriMesh& mesh) {
  double vol = 0.0;
  for (const auto& t : mesh.triangles) {
    vol += mesh.vertex(t, 0).dot(mesh.vertex(t, 1).cross(mesh.vertex(t, 2))) / 6.0;
  }
  return vol;
}

inline Vec3 enclosed_centroid(const TriMesh& mesh) {
  double vol = 0.0;
  Vec3 moment = Vec3::Zero();
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertex(t, 0), b = mesh.vertex(t, 1), c = mesh.vertex(t, 2);
    const double v = a.dot(b.cross(c)) / 6.0;
    vol += v;
    moment += v * (a + b + c) / 4.0;
  }
  if (std::abs(vol) < 1e-15) throw DataError("mesh '" + mesh.shape_id + "' encloses no volume");
  return moment / vol;
}

inline double surface_area(const TriMesh& mesh) {
  double area = 0.0;
  for (const auto& t : mesh.triangles) area += triangle_area(mesh, t);
  return area;
}

inline void translate(TriMesh& mesh, const Vec3& offset) {
  for (auto& v : mesh.vertices) v += offset;
}

// Moves the mesh so its xy footprint is centred on the origin and min z = 0.
inline void seat_on_ground(TriMesh& mesh) {
  const Aabb box = bounds(mesh);
  const Vec3 c = 0.5 * (box.min + box.max);
  translate(mesh, Vec3(-c.x(), -c.y(), -box.min.z()));
}

/// Reads an ASCII triangle mesh: `v x y z` vertex lines and `f i j k ...` face
/// lines with 1-based indices (OBJ subset). Polygons are fan-triangulated,
/// `i/j/k` style tokens keep only the position index, other tags are ignored.
inline TriMesh read_mesh(std::istream& in, std::string shape_id) {
  TriMesh mesh;
  mesh.shape_id = std::move(shape_id);
  std::string line;
  std::size_t lineno = 0;
  const auto fail = [&](const std::string& what) {
    throw DataError("mesh '" + mesh.shape_id + "' line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) fail("malformed vertex");
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        const std::string head = tok.substr(0, slash);
        try {
          std::size_t used = 0;
          const long v = std::stol(head, &used);
          if (used != head.size()) fail("malformed face index '" + tok + "'");
          idx.push_back(static_cast<int>(v) - 1);
        } catch (const std::logic_error&) {
          fail("malformed face index '" + tok + "'");
        }
      }
      if (idx.size() < 3) fail("face with fewer than 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
      }
    }
  }
  validate(mesh);
  return mesh;
}

inline TriMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mesh file " + path.string());
  return read_mesh(in, path.stem().string());
}

inline void write_mesh(std::ostream& out, const TriMesh& mesh) {
  out << "# " << mesh.shape_id << "\n" << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

inline void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write mesh file " + path.string());
  write_mesh(out, mesh);
}

/// Uniform per-axis scaling about the footprint centre, then re-seated on z = 0.
inline TriMesh scale_mesh(const TriMesh& mesh, double sx, double sy, double sz) {
  for (double s : {sx, sy, sz}) {
    if (!(s > 0.0) || s > 10.0) throw UsageError("scale_mesh: scale factors must lie in (0, 10]");
  }
  TriMesh out = mesh;
  const Aabb box = bounds(mesh);
  const Vec3 pivot(0.5 * (box.min.x() + box.max.x()), 0.5 * (box.min.y() + box.max.y()), box.min.z());
  for (auto& v : out.vertices) {
    const Vec3 d = v - pivot;
    v = Vec3(pivot.x() + d.x() * sx, pivot.y() + d.y() * sy, d.z() * sz);
  }
  return out;
}

} // namespace slidenet::geometry
