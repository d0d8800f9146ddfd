#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slidenet/geometry/mesh.hpp"
#include "slidenet/rng.hpp"

namespace slidenet::geometry {

enum class ShapeKind { Box, Cylinder, LShape, TaperedPrism, Tube };

inline constexpr std::array<ShapeKind, 5> kAllShapeKinds{ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::LShape,
                                                         ShapeKind::TaperedPrism, ShapeKind::Tube};

inline std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Box: return "box";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::LShape: return "l-shape";
    case ShapeKind::TaperedPrism: return "tapered-prism";
    case ShapeKind::Tube: return "tube";
  }
  return "?";
}

inline std::optional<ShapeKind> parse_shape_kind(std::string_view name) {
  for (auto k : kAllShapeKinds) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

/// Dimensions in metres. Fields a kind does not use are ignored.
///   box           size
///   cylinder      radius, height
///   tube          radius, wall, height
///   l-shape       size, arm (leg thickness, < min(size.x, size.y))
///   tapered-prism size (bottom footprint + height), taper (top/bottom ratio in (0, 1])
struct PrimitiveParams {
  Vec3 size = Vec3::Ones();
  double radius = 0.5;
  double height = 1.0;
  double wall = 0.1;
  double arm = 0.5;
  double taper = 0.5;
  int segments = 64;
};

namespace detail {

class MeshBuilder {
public:
  int vertex(double x, double y, double z) {
    mesh_.vertices.emplace_back(x, y, z);
    return static_cast<int>(mesh_.vertices.size()) - 1;
  }
  void tri(int a, int b, int c) { mesh_.triangles.push_back({a, b, c}); }
  // Counter-clockwise as seen from outside.
  void quad(int a, int b, int c, int d) {
    tri(a, b, c);
    tri(a, c, d);
  }
  TriMesh finish(std::string id) && {
    mesh_.shape_id = std::move(id);
    seat_on_ground(mesh_);
    validate(mesh_);
    return std::move(mesh_);
  }

private:
  TriMesh mesh_;
};

// Extrudes a simple polygon (counter-clockwise, fan-triangulable from vertex 0)
// between z = 0 and z = h, with the top scaled about `centre` by `top_scale`.
inline TriMesh extrude(const std::vector<Vec2>& poly, double h, double top_scale, const Vec2& centre,
                       std::string id) {
  MeshBuilder b;
  const int n = static_cast<int>(poly.size());
  std::vector<int> lo(static_cast<std::size_t>(n)), hi(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vec2& p = poly[static_cast<std::size_t>(i)];
    const Vec2 q = centre + top_scale * (p - centre);
    lo[static_cast<std::size_t>(i)] = b.vertex(p.x(), p.y(), 0.0);
    hi[static_cast<std::size_t>(i)] = b.vertex(q.x(), q.y(), h);
  }
  for (int i = 1; i + 1 < n; ++i) {
    b.tri(lo[0], lo[static_cast<std::size_t>(i + 1)], lo[static_cast<std::size_t>(i)]);
    b.tri(hi[0], hi[static_cast<std::size_t>(i)], hi[static_cast<std::size_t>(i + 1)]);
  }
  for (int i = 0; i < n; ++i) {
    const auto a = static_cast<std::size_t>(i), c = static_cast<std::size_t>((i + 1) % n);
    b.quad(lo[a], lo[c], hi[c], hi[a]);
  }
  return std::move(b).finish(std::move(id));
}

inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw UsageError(std::string("gen_primitive: ") + what + " must be positive");
  }
}

} // namespace detail

inline TriMesh make_box(double sx, double sy, double sz, std::string id = "box") {
  detail::require_positive(sx, "box size");
  detail::require_positive(sy, "box size");
  detail::require_positive(sz, "box size");
  const double hx = 0.5 * sx, hy = 0.5 * sy;
  return detail::extrude({{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}}, sz, 1.0, Vec2::Zero(), std::move(id));
}

inline TriMesh make_cylinder(double r, double h, int segments = 64, std::string id = "cylinder") {
  detail::require_positive(r, "cylinder radius");
  detail::require_positive(h, "cylinder height");
  if (segments < 3) throw UsageError("gen_primitive: cylinder needs at least 3 segments");
  detail::MeshBuilder b;
  std::vector<int> lo, hi;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * kPi * i / segments;
    lo.push_back(b.vertex(r * std::cos(a), r * std::sin(a), 0.0));
    hi.push_back(b.vertex(r * std::cos(a), r * std::sin(a), h));
  }
  const int cb = b.vertex(0, 0, 0), ct = b.vertex(0, 0, h);
  for (int i = 0; i < segments; ++i) {
    const auto a = static_cast<std::size_t>(i), c = static_cast<std::size_t>((i + 1) % segments);
    b.tri(cb, lo[c], lo[a]);
    b.tri(ct, hi[a], hi[c]);
    b.quad(lo[a], lo[c], hi[c], hi[a]);
  }
  return std::move(b).finish(std::move(id));
}

inline TriMesh make_tube(double r, double wall, double h, int segments = 64, std::string id = "tube") {
  detail::require_positive(r, "tube radius");
  detail::require_positive(wall, "tube wall");
  detail::require_positive(h, "tube height");
  if (!(wall < r)) throw UsageError("gen_primitive: tube wall thickness must be below the radius");
  if (segments < 3) throw UsageError("gen_primitive: tube needs at least 3 segments");
  const double ri = r - wall;
  detail::MeshBuilder b;
  std::vector<int> olo, ohi, ilo, ihi;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * kPi * i / segments, c = std::cos(a), s = std::sin(a);
    olo.push_back(b.vertex(r * c, r * s, 0.0));
    ohi.push_back(b.vertex(r * c, r * s, h));
    ilo.push_back(b.vertex(ri * c, ri * s, 0.0));
    ihi.push_back(b.vertex(ri * c, ri * s, h));
  }
  for (int i = 0; i < segments; ++i) {
    const auto a = static_cast<std::size_t>(i), c = static_cast<std::size_t>((i + 1) % segments);
    b.quad(olo[a], olo[c], ohi[c], ohi[a]);  // outer wall
    b.quad(ilo[c], ilo[a], ihi[a], ihi[c]);  // inner wall faces the axis
    b.quad(ohi[a], ohi[c], ihi[c], ihi[a]);  // top ring
    b.quad(olo[c], olo[a], ilo[a], ilo[c]);  // bottom ring
  }
  return std::move(b).finish(std::move(id));
}

inline TriMesh make_l_shape(double sx, double sy, double sz, double arm, std::string id = "l-shape") {
  detail::require_positive(sx, "l-shape size");
  detail::require_positive(sy, "l-shape size");
  detail::require_positive(sz, "l-shape size");
  detail::require_positive(arm, "l-shape arm");
  if (!(arm < std::min(sx, sy))) throw UsageError("gen_primitive: l-shape arm must be thinner than the footprint");
  return detail::extrude({{0, 0}, {sx, 0}, {sx, arm}, {arm, arm}, {arm, sy}, {0, sy}}, sz, 1.0, Vec2::Zero(),
                         std::move(id));
}

inline TriMesh make_tapered_prism(double sx, double sy, double sz, double taper, std::string id = "tapered-prism") {
  detail::require_positive(sx, "prism size");
  detail::require_positive(sy, "prism size");
  detail::require_positive(sz, "prism size");
  if (!(taper > 0.0 && taper <= 1.0)) throw UsageError("gen_primitive: taper must lie in (0, 1]");
  const double hx = 0.5 * sx, hy = 0.5 * sy;
  return detail::extrude({{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}}, sz, taper, Vec2::Zero(), std::move(id));
}

inline TriMesh gen_primitive(ShapeKind kind, const PrimitiveParams& p, std::string id = {}) {
  if (id.empty()) id = std::string(to_string(kind));
  switch (kind) {
    case ShapeKind::Box: return make_box(p.size.x(), p.size.y(), p.size.z(), id);
    case ShapeKind::Cylinder: return make_cylinder(p.radius, p.height, p.segments, id);
    case ShapeKind::LShape: return make_l_shape(p.size.x(), p.size.y(), p.size.z(), p.arm, id);
    case ShapeKind::TaperedPrism: return make_tapered_prism(p.size.x(), p.size.y(), p.size.z(), p.taper, id);
    case ShapeKind::Tube: return make_tube(p.radius, p.wall, p.height, p.segments, id);
  }
  throw UsageError("gen_primitive: unknown kind");
}

/// Draws the dimensions of the `index`-th member of a procedural family.
/// Sizes sit around 0.2-0.4 m so that, after the per-simulation 0.5-1.5 scale
/// and the default density, masses fall in the household range.
/// Box member 0 is the reference 0.3 m cube.
inline PrimitiveParams family_params(ShapeKind kind, std::size_t index, std::uint64_t seed) {
  Rng rng(derive_seed(seed, index * 16 + static_cast<std::size_t>(kind)));
  PrimitiveParams p;
  switch (kind) {
    case ShapeKind::Box:
      p.size = index == 0 ? Vec3(0.3, 0.3, 0.3)
                          : Vec3(rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4));
      break;
    case ShapeKind::Cylinder:
      p.radius = rng.uniform(0.1, 0.2);
      p.height = rng.uniform(0.2, 0.5);
      break;
    case ShapeKind::LShape:
      p.size = Vec3(rng.uniform(0.25, 0.4), rng.uniform(0.25, 0.4), rng.uniform(0.2, 0.35));
      p.arm = rng.uniform(0.4, 0.6) * std::min(p.size.x(), p.size.y());
      break;
    case ShapeKind::TaperedPrism:
      p.size = Vec3(rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4));
      p.taper = rng.uniform(0.4, 0.9);
      break;
    case ShapeKind::Tube:
      p.radius = rng.uniform(0.12, 0.2);
      p.wall = rng.uniform(0.3, 0.5) * p.radius;
      p.height = rng.uniform(0.2, 0.4);
      break;
  }
  return p;
}

inline std::string family_shape_id(ShapeKind kind, std::size_t index) {
  return std::string(to_string(kind)) + "_" + std::to_string(index);
}

inline TriMesh family_member(ShapeKind kind, std::size_t index, std::uint64_t seed) {
  return gen_primitive(kind, family_params(kind, index, seed), family_shape_id(kind, index));
}

} // namespace slidenet::geometry
