#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "slidenet/geometry/mesh.hpp"

namespace slidenet::geometry {

inline constexpr double kDefaultCell = 0.025;
inline constexpr double kDefaultDensity = 300.0;

struct VoxelGrid {
  Vec3 origin = Vec3::Zero();  // min corner of cell (0, 0, 0)
  double cell = kDefaultCell;
  int nx = 0, ny = 0, nz = 0;
  std::vector<std::uint8_t> occupancy;

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(nx) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(ny) * static_cast<std::size_t>(k));
  }
  bool occupied(int i, int j, int k) const { return occupancy[index(i, j, k)] != 0; }
  Vec3 center(int i, int j, int k) const {
    return origin + cell * Vec3(i + 0.5, j + 0.5, k + 0.5);
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(occupancy.begin(), occupancy.end(), std::uint8_t{1}));
  }
};

struct MassProperties {
  double mass = 0.0;       // kg
  double inertia_z = 0.0;  // kg m^2, vertical axis through the COM
  Vec3 com = Vec3::Zero();
  double volume = 0.0;     // m^3
};

/// Solid voxelization by ray parity along +z through every column centre.
/// Rays are offset by a tiny irrational jitter so they do not graze shared
/// edges or vertices. A column with an odd number of surface crossings means
/// the mesh is not closed and is reported as a DataError.
inline VoxelGrid voxelize(const TriMesh& mesh, double cell = kDefaultCell) {
  validate(mesh);
  const Aabb box = bounds(mesh);
  const Vec3 ext = box.extent();
  if (!(cell > 0.0)) throw UsageError("voxelize: cell size must be positive");
  if (cell > ext.minCoeff() / 4.0 * (1.0 + 1e-9)) {
    std::ostringstream msg;
    msg << "voxelize: cell " << cell << " m exceeds a quarter of the smallest extent (" << ext.minCoeff() << " m) of '"
        << mesh.shape_id << "'";
    throw UsageError(msg.str());
  }

  VoxelGrid g;
  g.origin = box.min;
  g.cell = cell;
  const auto cells_along = [cell](double e) { return std::max(1, static_cast<int>(std::ceil(e / cell - 1e-9))); };
  g.nx = cells_along(ext.x());
  g.ny = cells_along(ext.y());
  g.nz = cells_along(ext.z());
  g.occupancy.assign(static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(g.ny) * static_cast<std::size_t>(g.nz), 0);

  const double jx = cell * 0.61803398874989e-6, jy = cell * 0.41421356237310e-6;
  const auto column_x = [&](int i) { return g.origin.x() + (i + 0.5) * cell + jx; };
  const auto column_y = [&](int j) { return g.origin.y() + (j + 0.5) * cell + jy; };

  // Bucket triangles by the columns their xy bounding box covers.
  std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(g.ny));
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    Vec3 lo = mesh.vertex(tri, 0), hi = lo;
    for (int k = 1; k < 3; ++k) {
      lo = lo.cwiseMin(mesh.vertex(tri, k));
      hi = hi.cwiseMax(mesh.vertex(tri, k));
    }
    const int i0 = std::max(0, static_cast<int>(std::floor((lo.x() - g.origin.x()) / cell - 0.5)));
    const int i1 = std::min(g.nx - 1, static_cast<int>(std::ceil((hi.x() - g.origin.x()) / cell - 0.5)));
    const int j0 = std::max(0, static_cast<int>(std::floor((lo.y() - g.origin.y()) / cell - 0.5)));
    const int j1 = std::min(g.ny - 1, static_cast<int>(std::ceil((hi.y() - g.origin.y()) / cell - 0.5)));
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        buckets[static_cast<std::size_t>(i) + static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(j)].push_back(t);
      }
    }
  }

  std::vector<double> hits;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const double px = column_x(i), py = column_y(j);
      hits.clear();
      for (std::size_t t : buckets[static_cast<std::size_t>(i) + static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(j)]) {
        const auto& tri = mesh.triangles[t];
        const Vec3 a = mesh.vertex(tri, 0), b = mesh.vertex(tri, 1), c = mesh.vertex(tri, 2);
        const double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
        if (std::abs(det) < 1e-300) continue;  // vertical face, parallel to the ray
        const double u = ((px - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (py - a.y())) / det;
        const double v = ((b.x() - a.x()) * (py - a.y()) - (px - a.x()) * (b.y() - a.y())) / det;
        if (u < 0.0 || v < 0.0 || u + v > 1.0) continue;
        hits.push_back(a.z() + u * (b.z() - a.z()) + v * (c.z() - a.z()));
      }
      if (hits.size() % 2 != 0) {
        std::ostringstream msg;
        msg << "voxelize: mesh '" << mesh.shape_id << "' is not watertight: ray at column (" << i << ", " << j
            << ") x=" << px << " y=" << py << " crossed the surface " << hits.size() << " times";
        throw DataError(msg.str());
      }
      std::sort(hits.begin(), hits.end());
      for (std::size_t h = 0; h + 1 < hits.size(); h += 2) {
        for (int k = 0; k < g.nz; ++k) {
          const double z = g.origin.z() + (k + 0.5) * cell;
          if (z >= hits[h] && z < hits[h + 1]) g.occupancy[g.index(i, j, k)] = 1;
        }
      }
    }
  }
  return g;
}

/// Mass, COM and vertical-axis inertia of the occupied cells. Each cell
/// contributes its point-mass term plus its own cube inertia m c^2 / 6.
inline MassProperties mass_properties(const VoxelGrid& g, double density = kDefaultDensity) {
  if (!(density > 0.0)) throw UsageError("mass_properties: density must be positive");
  const std::size_t n = g.count();
  if (n == 0) throw DataError("mass_properties: voxel grid is empty");
  const double cell_volume = g.cell * g.cell * g.cell;
  const double cell_mass = cell_volume * density;

  Vec3 sum = Vec3::Zero();
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        if (g.occupied(i, j, k)) sum += g.center(i, j, k);

  MassProperties mp;
  mp.volume = static_cast<double>(n) * cell_volume;
  mp.mass = mp.volume * density;
  mp.com = sum / static_cast<double>(n);

  double spread = 0.0;
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        if (g.occupied(i, j, k)) {
          const Vec3 d = g.center(i, j, k) - mp.com;
          spread += d.x() * d.x() + d.y() * d.y();
        }
  mp.inertia_z = cell_mass * (spread + static_cast<double>(n) * g.cell * g.cell / 6.0);
  return mp;
}

/// Ground contact discretisation: xy positions relative to the COM plus the
/// fraction of the normal load each point carries (uniform).
struct ContactPatch {
  std::vector<Vec2> points;
  std::vector<double> load;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

inline ContactPatch uniform_patch(std::vector<Vec2> points) {
  ContactPatch p;
  p.load.assign(points.size(), points.empty() ? 0.0 : 1.0 / static_cast<double>(points.size()));
  p.points = std::move(points);
  return p;
}

/// Bottom-layer cell centres (relative to the occupied-cell centroid). When the
/// layer has more than `k` cells an evenly strided subset of `k` is kept.
inline ContactPatch contact_patch(const VoxelGrid& g, std::size_t k) {
  if (k == 0) throw UsageError("contact_patch: sample count must be positive");
  if (g.count() == 0) throw DataError("contact_patch: voxel grid is empty");
  const Vec3 com = mass_properties(g, 1.0).com;
  std::vector<Vec2> bottom;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (g.occupied(i, j, 0)) {
        const Vec3 c = g.center(i, j, 0);
        bottom.emplace_back(c.x() - com.x(), c.y() - com.y());
      }
  if (bottom.empty()) throw DataError("contact_patch: bottom voxel layer is empty");
  if (bottom.size() <= k) return uniform_patch(std::move(bottom));
  std::vector<Vec2> picked;
  picked.reserve(k);
  for (std::size_t s = 0; s < k; ++s) picked.push_back(bottom[s * bottom.size() / k]);
  return uniform_patch(std::move(picked));
}

} // namespace slidenet::geometry
