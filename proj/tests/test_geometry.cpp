#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "slidenet/geometry/mesh.hpp"
#include "slidenet/geometry/primitives.hpp"
#include "slidenet/geometry/sampling.hpp"
#include "slidenet/geometry/voxel.hpp"
#include "test_support.hpp"

using namespace slidenet;
using namespace slidenet::geometry;

namespace {

constexpr const char* kUnitCube = R"(# unit cube
v -0.5 -0.5 0
v 0.5 -0.5 0
v 0.5 0.5 0
v -0.5 0.5 0
v -0.5 -0.5 1
v 0.5 -0.5 1
v 0.5 0.5 1
v -0.5 0.5 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
)";

TriMesh parse(const std::string& text, const std::string& id = "m") {
  std::istringstream in(text);
  return read_mesh(in, id);
}

} // namespace

TEST(LoadMesh, UnitCubeFile) {
  const auto mesh = parse(kUnitCube, "cube");
  EXPECT_EQ(mesh.vertices.size(), 8u);
  EXPECT_EQ(mesh.triangles.size(), 12u);
  EXPECT_TRUE(is_watertight(mesh));
  EXPECT_NEAR(enclosed_volume(mesh), 1.0, 1e-12);
}

TEST(LoadMesh, OutOfRangeIndexRejected) {
  std::string text = kUnitCube;
  text += "f 1 2 9\n";
  EXPECT_THROW(parse(text), DataError);
}

TEST(LoadMesh, DegenerateAndEmptyRejected) {
  EXPECT_THROW(parse("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n"), DataError);
  EXPECT_THROW(parse("# nothing\n"), DataError);
  EXPECT_THROW(parse("v 0 0 zero\n"), DataError);
  EXPECT_THROW(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n"), DataError);
}

TEST(LoadMesh, CylinderRoundTripIsWatertight) {
  const auto cyl = make_cylinder(0.5, 1.0, 64);
  const auto path = test_support::temp_dir("mesh") / "cyl.obj";
  save_mesh(cyl, path);
  const auto back = load_mesh(path);
  EXPECT_EQ(back.shape_id, "cyl");
  ASSERT_EQ(back.vertices.size(), cyl.vertices.size());
  EXPECT_EQ(back.triangles, cyl.triangles);
  for (std::size_t i = 0; i < cyl.vertices.size(); ++i) EXPECT_EQ(back.vertices[i], cyl.vertices[i]);
  EXPECT_TRUE(is_watertight(back));
}

TEST(LoadMesh, MissingFile) { EXPECT_THROW(load_mesh("/nonexistent/shape.obj"), DataError); }

TEST(GenPrimitive, AllKindsWatertightSeatedAndPositiveVolume) {
  for (auto kind : kAllShapeKinds) {
    for (std::size_t i = 0; i < 4; ++i) {
      const auto mesh = family_member(kind, i, 11);
      SCOPED_TRACE(mesh.shape_id);
      EXPECT_TRUE(is_watertight(mesh));
      EXPECT_GT(enclosed_volume(mesh), 0.0);
      const auto box = bounds(mesh);
      EXPECT_NEAR(box.min.z(), 0.0, 1e-15);
      // COM above the support polygon: it sits over an occupied bottom cell.
      const auto grid = voxelize(mesh, std::min(0.02, box.extent().minCoeff() / 4));
      const auto mp = mass_properties(grid);
      const auto patch = contact_patch(grid, 100000);
      Vec2 lo = patch.points.front(), hi = lo;
      for (const auto& p : patch.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
      EXPECT_TRUE(lo.x() < 0 && lo.y() < 0 && hi.x() > 0 && hi.y() > 0);
      EXPECT_GT(mp.com.z(), 0.0);
    }
  }
}

TEST(GenPrimitive, AnalyticVolumes) {
  EXPECT_NEAR(enclosed_volume(make_box(1, 1, 1)), 1.0, 1e-12);
  // Polygonal cylinder: exact prism volume, and within 0.2% of pi r^2 h.
  const double prism = 0.5 * 64 * 0.25 * std::sin(2 * kPi / 64);
  EXPECT_NEAR(enclosed_volume(make_cylinder(0.5, 1.0)), prism, 1e-12);
  const auto cyl_vox = mass_properties(voxelize(make_cylinder(0.5, 1.0), 0.025), 1.0);
  EXPECT_NEAR(cyl_vox.volume, kPi * 0.25, 0.02 * kPi * 0.25);
  const auto tube_vox = mass_properties(voxelize(make_tube(0.5, 0.1, 1.0), 0.025), 1.0);
  EXPECT_NEAR(tube_vox.volume, kPi * (0.25 - 0.16), 0.03 * kPi * 0.09);
}

TEST(GenPrimitive, InvalidDimensions) {
  EXPECT_THROW(make_box(0, 1, 1), UsageError);
  EXPECT_THROW(make_cylinder(-1, 1), UsageError);
  EXPECT_THROW(make_tube(0.5, 0.5, 1), UsageError);
  EXPECT_THROW(make_l_shape(1, 1, 1, 1.2), UsageError);
  EXPECT_THROW(make_tapered_prism(1, 1, 1, 1.5), UsageError);
}

TEST(ScaleMesh, IdentityAndVolumeLinearity) {
  const auto cube = make_box(1, 1, 1);
  const auto same = scale_mesh(cube, 1, 1, 1);
  for (std::size_t i = 0; i < cube.vertices.size(); ++i) EXPECT_EQ(same.vertices[i], cube.vertices[i]);
  EXPECT_NEAR(enclosed_volume(scale_mesh(cube, 2, 1, 1)), 2.0, 1e-12);
  const auto half = scale_mesh(cube, 0.5, 0.5, 0.5);
  EXPECT_NEAR(bounds(half).min.z(), 0.0, 1e-15);
  EXPECT_NEAR(mass_properties(voxelize(half, 0.025), 300).mass, 37.5, 0.02 * 37.5);
  EXPECT_THROW(scale_mesh(cube, 0, 1, 1), UsageError);
  EXPECT_THROW(scale_mesh(cube, 1, -2, 1), UsageError);
}

TEST(Voxelize, UnitCubeFullyOccupied) {
  const auto g = voxelize(make_box(1, 1, 1), 0.025);
  EXPECT_EQ(g.nx, 40);
  EXPECT_EQ(g.ny, 40);
  EXPECT_EQ(g.nz, 40);
  EXPECT_EQ(g.count(), 40u * 40u * 40u);
}

TEST(Voxelize, SphereVolumeWithinTwoPercent) {
  const auto sphere = test_support::uv_sphere(1.0, 96, 48);
  ASSERT_TRUE(is_watertight(sphere));
  const auto mp = mass_properties(voxelize(sphere, 0.025), 1.0);
  EXPECT_NEAR(mp.volume, 4.0 / 3.0 * kPi, 0.02 * 4.0 / 3.0 * kPi);
}

TEST(Voxelize, OpenBoxRejectedWithRayDiagnostic) {
  auto open = make_box(1, 1, 1);
  std::erase_if(open.triangles, [&](const Triangle& t) {
    return open.vertex(t, 0).z() == 0 && open.vertex(t, 1).z() == 0 && open.vertex(t, 2).z() == 0;
  });
  ASSERT_EQ(open.triangles.size(), 10u);
  EXPECT_FALSE(is_watertight(open));
  try {
    voxelize(open, 0.05);
    FAIL() << "expected a watertightness error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("not watertight: ray at column"), std::string::npos);
  }
}

TEST(Voxelize, CellTooLarge) { EXPECT_THROW(voxelize(make_box(1, 1, 0.1), 0.05), UsageError); }

TEST(Voxelize, VolumeConvergesUnderRefinement) {
  const double vcyl = kPi * 0.437 * 0.437 * 0.913, vsph = 4.0 / 3.0 * kPi * std::pow(0.47, 3);
  const auto cyl = make_cylinder(0.437, 0.913, 256);
  const auto sph = test_support::uv_sphere(0.47, 256, 128);
  const auto box = make_box(0.93, 0.87, 0.71);
  auto err = [](const TriMesh& m, double cell, double truth) {
    return std::abs(mass_properties(voxelize(m, cell), 1.0).volume - truth);
  };
  EXPECT_LT(err(cyl, 0.025, vcyl), err(cyl, 0.05, vcyl));
  EXPECT_LT(err(sph, 0.025, vsph), err(sph, 0.05, vsph));
  EXPECT_LT(err(box, 0.025, 0.93 * 0.87 * 0.71), err(box, 0.05, 0.93 * 0.87 * 0.71));
}

TEST(MassProperties, CubeAndCylinderInertia) {
  const auto cube = mass_properties(voxelize(make_box(1, 1, 1), 0.025), 300);
  EXPECT_NEAR(cube.mass, 300.0, 1e-9);
  EXPECT_NEAR(cube.inertia_z, 50.0, 0.03 * 50.0);
  EXPECT_NEAR(cube.com.x(), 0.0, 1e-12);
  EXPECT_NEAR(cube.com.z(), 0.5, 1e-12);

  const auto cyl = mass_properties(voxelize(make_cylinder(0.5, 1.0), 0.025), 300);
  const double m = 300 * kPi * 0.25;
  EXPECT_NEAR(cyl.mass, m, 0.03 * m);
  EXPECT_NEAR(cyl.inertia_z, 29.45, 0.03 * 29.45);
}

TEST(MassProperties, SingleCell) {
  VoxelGrid g;
  g.origin = Vec3(1, 2, 0);
  g.cell = 0.1;
  g.nx = g.ny = g.nz = 1;
  g.occupancy = {1};
  const auto mp = mass_properties(g, 1000);
  EXPECT_NEAR(mp.mass, 1.0, 1e-12);
  EXPECT_TRUE(mp.com.isApprox(Vec3(1.05, 2.05, 0.05)));
  EXPECT_NEAR(mp.inertia_z, 1.0 * 0.01 / 6.0, 1e-15);
}

TEST(MassProperties, EmptyGridAndBadDensity) {
  VoxelGrid g;
  g.nx = g.ny = g.nz = 2;
  g.occupancy.assign(8, 0);
  EXPECT_THROW(mass_properties(g, 300), DataError);
  g.occupancy[0] = 1;
  EXPECT_THROW(mass_properties(g, 0), UsageError);
}

TEST(MassProperties, ScaleCovariance) {
  // Uniform scale s: volume ~ s^3, inertia ~ s^5 (5% discretisation tolerance).
  for (auto kind : {ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::LShape}) {
    const auto base = family_member(kind, 1, 3);
    const auto a = mass_properties(voxelize(base, 0.005));
    const double s = 1.7;
    const auto b = mass_properties(voxelize(scale_mesh(base, s, s, s), 0.005));
    EXPECT_NEAR(b.volume / a.volume, s * s * s, 0.05 * s * s * s) << to_string(kind);
    EXPECT_NEAR(b.inertia_z / a.inertia_z, std::pow(s, 5), 0.05 * std::pow(s, 5)) << to_string(kind);
  }
}

TEST(ContactPatch, CubeFullSquare) {
  const auto patch = contact_patch(voxelize(make_box(1, 1, 1), 0.025), 1600);
  ASSERT_EQ(patch.size(), 1600u);
  double lo = 1, hi = -1, load = 0;
  for (std::size_t i = 0; i < patch.size(); ++i) {
    lo = std::min({lo, patch.points[i].x(), patch.points[i].y()});
    hi = std::max({hi, patch.points[i].x(), patch.points[i].y()});
    load += patch.load[i];
  }
  EXPECT_NEAR(lo, -0.4875, 1e-12);
  EXPECT_NEAR(hi, 0.4875, 1e-12);
  EXPECT_NEAR(load, 1.0, 1e-12);
  EXPECT_EQ(contact_patch(voxelize(make_box(1, 1, 1), 0.025), 100).size(), 100u);
}

TEST(ContactPatch, CylinderDiskAndTubeAnnulus) {
  for (const auto& p : contact_patch(voxelize(make_cylinder(0.5, 1.0), 0.025), 5000).points) {
    EXPECT_LE(p.norm(), 0.5);
  }
  const auto tube = contact_patch(voxelize(make_tube(0.5, 0.1, 1.0), 0.025), 5000);
  EXPECT_GT(tube.size(), 100u);
  const double inner_inscribed = 0.4 * std::cos(kPi / 64);
  for (const auto& p : tube.points) EXPECT_GE(p.norm(), inner_inscribed);
}

TEST(ContactPatch, EmptyBottomLayer) {
  VoxelGrid g;
  g.nx = g.ny = 1;
  g.nz = 2;
  g.occupancy = {0, 1};
  EXPECT_THROW(contact_patch(g, 10), DataError);
}

TEST(SamplePointcloud, CubeSurfaceMembership) {
  const auto cloud = sample_pointcloud(make_box(1, 1, 1), 1024, 5);
  ASSERT_EQ(cloud.size(), 1024u);
  for (Eigen::Index r = 0; r < cloud.points.rows(); ++r) {
    const double x = cloud.points(r, 0), y = cloud.points(r, 1), z = cloud.points(r, 2) - 0.5;
    const double on_face = std::max({std::abs(x), std::abs(y), std::abs(z)});
    EXPECT_NEAR(on_face, 0.5, 1e-12);
  }
}

TEST(SamplePointcloud, PointsOnMeshSurface) {
  const auto mesh = family_member(ShapeKind::TaperedPrism, 2, 9);
  const Vec2 com = enclosed_centroid(mesh).head<2>();
  const auto cloud = sample_pointcloud(mesh, 256, 1);
  for (Eigen::Index r = 0; r < cloud.points.rows(); ++r) {
    const Vec3 p(cloud.points(r, 0) + com.x(), cloud.points(r, 1) + com.y(), cloud.points(r, 2));
    EXPECT_LT(test_support::distance_to_mesh(mesh, p), 1e-6);
  }
}

TEST(SamplePointcloud, GreedyFurthestPointProperty) {
  Rng rng(3);
  const auto cand = sample_surface(make_cylinder(0.3, 0.5), 600, rng);
  const auto idx = furthest_point_indices(cand, 200);
  std::set<std::size_t> chosen;
  chosen.insert(idx[0]);
  for (std::size_t k = 1; k < idx.size(); ++k) {
    auto mind = [&](std::size_t c) {
      double d = 1e300;
      for (auto s : chosen) d = std::min(d, (cand[c] - cand[s]).norm());
      return d;
    };
    const double picked = mind(idx[k]);
    for (std::size_t c = 0; c < cand.size(); ++c) {
      if (!chosen.count(c)) EXPECT_GE(picked, mind(c) - 1e-15);
    }
    chosen.insert(idx[k]);
  }
  EXPECT_EQ(chosen.size(), idx.size());
}

TEST(SamplePointcloud, DeterministicPerSeed) {
  const auto mesh = family_member(ShapeKind::LShape, 0, 2);
  const auto a = sample_pointcloud(mesh, 128, 42);
  const auto b = sample_pointcloud(mesh, 128, 42);
  const auto c = sample_pointcloud(mesh, 128, 43);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
}

TEST(SamplePointcloud, Errors) {
  EXPECT_THROW(sample_pointcloud(make_box(1, 1, 1), 3, 0), UsageError);
  EXPECT_THROW(sample_pointcloud(make_box(1, 1, 1), 8, 0, std::nullopt, 0), UsageError);
}

TEST(PointCloudStore, LittleEndianFloatTriples) {
  const auto cloud = sample_pointcloud(make_box(0.3, 0.2, 0.1), 64, 8);
  const auto path = test_support::temp_dir("pc") / "a.pc";
  write_pc(cloud, path);
  EXPECT_EQ(std::filesystem::file_size(path), 64u * 12u);
  const auto back = read_pc(path, 64);
  EXPECT_TRUE(back == quantize_f32(cloud));
  std::ifstream in(path, std::ios::binary);
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  const float first = static_cast<float>(cloud.points(0, 0));
  std::uint32_t bits;
  std::memcpy(&bits, &first, 4);
  EXPECT_EQ(bytes[0], bits & 0xff);
  EXPECT_EQ(bytes[3], bits >> 24);
  EXPECT_THROW(read_pc(path, 65), DataError);
}
