#include "mvdpp/recon.hpp"

#include "mvdpp/synthdata.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

using namespace mvdpp;
using recon::OccupancyGrid;

namespace {

synth::SceneObject sphere_object(double radius) {
  synth::SceneObject o;
  synth::Primitive p;
  p.shape = synth::Shape::Sphere;
  p.center = {0, 0, 0};
  p.half_extents = {radius, radius, radius};
  p.albedo = {0.5f, 0.5f, 0.5f};
  o.primitives.push_back(p);
  return o;
}

void rendered_silhouettes(const synth::SceneObject& obj, std::vector<img::Mask>& masks,
                          std::vector<geometry::CameraPose>& poses) {
  geometry::Intrinsics K;
  auto grid = geometry::generation_view_grid(0);
  for (const auto& p : grid.poses) {
    masks.push_back(synth::render(obj, p, K).mask);
    poses.push_back(p);
  }
}

}  // namespace

TEST_CASE("visual hull of a sphere matches the true volume") {
  auto obj = sphere_object(0.5);
  std::vector<img::Mask> masks;
  std::vector<geometry::CameraPose> poses;
  rendered_silhouettes(obj, masks, poses);
  auto hull = recon::carve(masks, poses, geometry::Intrinsics{}, 64);
  auto gt = synth::voxelize(obj, 64);
  CHECK(recon::volume_iou(hull, gt) >= 0.95);

  // Visual-hull superset property: the eroded true occupancy is contained
  // in the hull (1-voxel boundary tolerance).
  for (int z = 1; z < 63; ++z)
    for (int y = 1; y < 63; ++y)
      for (int x = 1; x < 63; ++x) {
        bool interior = gt.at(x, y, z) && gt.at(x - 1, y, z) && gt.at(x + 1, y, z) &&
                        gt.at(x, y - 1, z) && gt.at(x, y + 1, z) && gt.at(x, y, z - 1) &&
                        gt.at(x, y, z + 1);
        if (interior) CHECK(hull.at(x, y, z) == 1);
      }
}

TEST_CASE("carving with more views only removes volume") {
  auto obj = synth::sample_object(31);
  std::vector<img::Mask> masks;
  std::vector<geometry::CameraPose> poses;
  rendered_silhouettes(obj, masks, poses);

  std::vector<img::Mask> few_m(masks.begin(), masks.begin() + 4);
  std::vector<geometry::CameraPose> few_p(poses.begin(), poses.begin() + 4);
  auto few = recon::carve(few_m, few_p, geometry::Intrinsics{}, 32);
  auto all = recon::carve(masks, poses, geometry::Intrinsics{}, 32);

  // Voxels outside every frustum are dropped, so monotonicity holds only
  // inside the subset's coverage. All-ones masks carve nothing that is seen,
  // which makes the surviving set exactly the 4-view coverage region.
  img::Mask ones = img::Mask::zeros(few_m[0].height, few_m[0].width);
  std::fill(ones.data.begin(), ones.data.end(), 1);
  auto coverage = recon::carve({ones, ones, ones, ones}, few_p, geometry::Intrinsics{}, 32);

  int checked = 0;
  for (size_t i = 0; i < all.bits.size(); ++i)
    if (all.bits[i] && coverage.bits[i]) {
      CHECK(few.bits[i] == 1);
      ++checked;
    }
  CHECK(checked > 0);
}

TEST_CASE("carve degenerate inputs") {
  img::Mask zero = img::Mask::zeros(64, 64);
  std::vector<geometry::CameraPose> poses = {geometry::camera_pose(0, 0, 1.5),
                                             geometry::camera_pose(90, 0, 1.5)};
  auto g = recon::carve({zero, zero}, poses, geometry::Intrinsics{}, 16);
  CHECK(g.count() == 0);

  CHECK_THROWS_AS(recon::carve({zero}, {poses[0]}, geometry::Intrinsics{}, 16), std::invalid_argument);
  CHECK_THROWS_AS(recon::carve({zero, zero}, {poses[0]}, geometry::Intrinsics{}, 16),
                  std::invalid_argument);
}

TEST_CASE("mesh extraction face counts") {
  auto one = OccupancyGrid::zeros(8);
  one.set(3, 4, 2, 1);
  auto m1 = recon::extract_mesh(one);
  CHECK(m1.triangles.size() == 12);  // 6 faces x 2

  auto two = OccupancyGrid::zeros(8);
  two.set(3, 4, 2, 1);
  two.set(4, 4, 2, 1);
  auto m2 = recon::extract_mesh(two);
  CHECK(m2.triangles.size() == 20);  // 10 exposed faces

  CHECK_THROWS_AS(recon::extract_mesh(OccupancyGrid::zeros(8)), std::invalid_argument);
}

TEST_CASE("full-cube mesh is closed: V - E + F = 2") {
  auto g = OccupancyGrid::zeros(4);
  std::fill(g.bits.begin(), g.bits.end(), 1);
  auto m = recon::extract_mesh(g);

  std::set<std::pair<int, int>> edges;
  for (const auto& t : m.triangles)
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  // Vertices must be shared, not duplicated, for the Euler count.
  std::map<std::array<double, 3>, int> uniq;
  for (const auto& v : m.vertices) uniq[v]++;
  long V = static_cast<long>(uniq.size());
  long E = static_cast<long>(edges.size());
  long F = static_cast<long>(m.triangles.size());
  CHECK(V == static_cast<long>(m.vertices.size()));  // no duplicate vertices
  CHECK(V - E + F == 2);
}

TEST_CASE("volume_iou identities") {
  auto a = OccupancyGrid::zeros(8);
  a.set(1, 1, 1, 1);
  a.set(2, 1, 1, 1);
  CHECK(recon::volume_iou(a, a) == doctest::Approx(1.0));

  auto b = OccupancyGrid::zeros(8);
  b.set(5, 5, 5, 1);
  CHECK(recon::volume_iou(a, b) == doctest::Approx(0.0));

  auto c = OccupancyGrid::zeros(8);
  c.set(1, 1, 1, 1);
  CHECK(recon::volume_iou(a, c) == doctest::Approx(0.5));

  auto e = OccupancyGrid::zeros(8);
  CHECK(recon::volume_iou(e, e) == doctest::Approx(1.0));  // both empty

  CHECK_THROWS_AS(recon::volume_iou(a, OccupancyGrid::zeros(16)), std::invalid_argument);
}

TEST_CASE("surface sampling is deterministic and lies on exposed faces") {
  auto g = OccupancyGrid::zeros(16);
  for (int z = 6; z < 10; ++z)
    for (int y = 6; y < 10; ++y)
      for (int x = 6; x < 10; ++x) g.set(x, y, z, 1);
  auto p1 = recon::sample_surface_points(g, 500, 3);
  auto p2 = recon::sample_surface_points(g, 500, 3);
  CHECK(p1 == p2);
  REQUIRE(p1.size() == 500);
  // The occupied block spans [-0.25, 0.25]^3; face centers stay on its boundary.
  for (const auto& p : p1) {
    double m = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
    CHECK(m == doctest::Approx(0.25).epsilon(1e-9));
  }
  CHECK_THROWS_AS(recon::sample_surface_points(OccupancyGrid::zeros(8), 10, 0), std::invalid_argument);
}

TEST_CASE("chamfer closed forms") {
  std::vector<std::array<double, 3>> a = {{0, 0, 0}};
  std::vector<std::array<double, 3>> b = {{1, 0, 0}};
  CHECK(recon::chamfer(a, b) == doctest::Approx(1.0));
  CHECK(recon::chamfer(a, a) == doctest::Approx(0.0));
  CHECK(recon::chamfer(a, b) == doctest::Approx(recon::chamfer(b, a)));
  CHECK_THROWS_AS(recon::chamfer({}, b), std::invalid_argument);
}

TEST_CASE("chamfer of a one-voxel shift matches a brute-force oracle") {
  // Single voxel at res 64 shifted by one cell (spacing 2/64 = 0.03125).
  // The two cubes share a face plane, so part of each sample set has a
  // zero-distance neighbor and the mean lands strictly between 0 and the
  // cell width.
  auto g = OccupancyGrid::zeros(64);
  auto s = OccupancyGrid::zeros(64);
  g.set(30, 30, 30, 1);
  s.set(31, 30, 30, 1);
  auto pa = recon::sample_surface_points(g, 8192, 0);
  auto pb = recon::sample_surface_points(s, 8192, 0);
  double d = recon::chamfer(pa, pb);
  CHECK(d > 0.0);
  CHECK(d < 0.03125);

  // Brute-force nearest-neighbor oracle on the same sampled sets.
  auto brute = [](const std::vector<std::array<double, 3>>& from,
                  const std::vector<std::array<double, 3>>& to) {
    double acc = 0;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) {
        double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      acc += std::sqrt(best);
    }
    return acc / from.size();
  };
  double ref = 0.5 * (brute(pa, pb) + brute(pb, pa));
  CHECK(d == doctest::Approx(ref).epsilon(1e-9));
}
