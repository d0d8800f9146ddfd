#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "slidenet/geometry/mesh.hpp"
#include "slidenet/rng.hpp"

namespace slidenet::geometry {

inline constexpr std::size_t kDefaultCloudSize = 1024;
inline constexpr std::size_t kOversampleFactor = 3;

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// N x 3, metres. x, y relative to the COM; z above the ground plane.
struct PointCloud {
  PointMatrix points;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  bool operator==(const PointCloud& o) const {
    return points.rows() == o.points.rows() && points == o.points;
  }
};

/// Area-weighted uniform samples on the surface.
inline std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t count, Rng& rng) {
  std::vector<double> cdf;
  cdf.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    total += triangle_area(mesh, t);
    cdf.push_back(total);
  }
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double pick = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
    if (it == cdf.end()) --it;
    const auto& t = mesh.triangles[static_cast<std::size_t>(it - cdf.begin())];
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    out.push_back((1.0 - r1) * mesh.vertex(t, 0) + r1 * (1.0 - r2) * mesh.vertex(t, 1) + r1 * r2 * mesh.vertex(t, 2));
  }
  return out;
}

/// Greedy furthest point sampling. The first pick is the candidate furthest
/// from the candidates' centroid; ties go to the lowest index.
inline std::vector<std::size_t> furthest_point_indices(const std::vector<Vec3>& candidates, std::size_t n) {
  if (n > candidates.size()) throw UsageError("furthest point sampling: requested more points than candidates");
  std::vector<std::size_t> picked;
  if (n == 0) return picked;
  picked.reserve(n);

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : candidates) centroid += p;
  centroid /= static_cast<double>(candidates.size());

  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double d = (candidates[i] - centroid).squaredNorm();
    if (d > best) {
      best = d;
      first = i;
    }
  }
  picked.push_back(first);

  std::vector<double> nearest(candidates.size(), std::numeric_limits<double>::infinity());
  std::size_t last = first;
  while (picked.size() < n) {
    std::size_t next = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      nearest[i] = std::min(nearest[i], (candidates[i] - candidates[last]).squaredNorm());
      if (nearest[i] > far) {
        far = nearest[i];
        next = i;
      }
    }
    picked.push_back(next);
    last = next;
  }
  return picked;
}

/// Oversamples the surface `oversample` times, keeps `n` points by furthest
/// point sampling and expresses them in the COM-centred, ground-seated frame.
/// `com_xy` defaults to the centroid of the enclosed solid.
inline PointCloud sample_pointcloud(const TriMesh& mesh, std::size_t n, std::uint64_t seed,
                                    std::optional<Vec2> com_xy = std::nullopt,
                                    std::size_t oversample = kOversampleFactor) {
  if (n < 4) throw UsageError("sample_pointcloud: need at least 4 points");
  validate(mesh);
  if (oversample < 1) throw UsageError("sample_pointcloud: requested points exceed the oversample count");
  Rng rng(seed);
  const auto candidates = sample_surface(mesh, n * oversample, rng);
  const auto idx = furthest_point_indices(candidates, n);

  const Vec2 centre = com_xy ? *com_xy : enclosed_centroid(mesh).head<2>();
  const double ground = bounds(mesh).min.z();
  PointCloud cloud;
  cloud.points.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t r = 0; r < n; ++r) {
    const Vec3& p = candidates[idx[r]];
    cloud.points.row(static_cast<Eigen::Index>(r)) << p.x() - centre.x(), p.y() - centre.y(), p.z() - ground;
  }
  return cloud;
}

/// Rotates the cloud about the vertical axis by `angle` radians.
inline PointCloud rotate_cloud(const PointCloud& cloud, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  PointCloud out = cloud;
  for (Eigen::Index r = 0; r < out.points.rows(); ++r) {
    const double x = cloud.points(r, 0), y = cloud.points(r, 1);
    out.points(r, 0) = c * x - s * y;
    out.points(r, 1) = s * x + c * y;
  }
  return out;
}

namespace detail {
inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}
} // namespace detail

/// `.pc` store: headerless little-endian float32 triples, row-major.
inline void write_pc(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write point cloud " + path.string());
  for (Eigen::Index r = 0; r < cloud.points.rows(); ++r) {
    for (int c = 0; c < 3; ++c) {
      const float f = static_cast<float>(cloud.points(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      bits = detail::to_little(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw DataError("short write on point cloud " + path.string());
}

inline PointCloud read_pc(const std::filesystem::path& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing point cloud file " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != n * 3 * sizeof(float)) {
    throw DataError("point cloud " + path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(n * 3 * sizeof(float)));
  }
  in.seekg(0);
  PointCloud cloud;
  cloud.points.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t r = 0; r < n; ++r) {
    for (int c = 0; c < 3; ++c) {
      std::uint32_t bits;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      bits = detail::to_little(bits);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      cloud.points(static_cast<Eigen::Index>(r), c) = f;
    }
  }
  if (!in) throw DataError("short read on point cloud " + path.string());
  return cloud;
}

/// Rounds every coordinate through float32, matching what a `.pc` round trip yields.
inline PointCloud quantize_f32(PointCloud cloud) {
  for (Eigen::Index r = 0; r < cloud.points.rows(); ++r)
    for (int c = 0; c < 3; ++c) cloud.points(r, c) = static_cast<float>(cloud.points(r, c));
  return cloud;
}

} // namespace slidenet::geometry
