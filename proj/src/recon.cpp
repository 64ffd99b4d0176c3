#include "mvdpp/recon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace mvdpp::recon {

OccupancyGrid carve(const std::vector<img::Mask>& masks, const std::vector<geometry::CameraPose>& poses,
                    const geometry::Intrinsics& K, int res) {
  if (masks.size() < 2) throw std::invalid_argument("carve: need at least 2 views");
  if (masks.size() != poses.size()) throw std::invalid_argument("carve: masks/poses length mismatch");

  OccupancyGrid g = OccupancyGrid::zeros(res);
  for (int z = 0; z < res; ++z)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        geometry::Vec3 p = {g.cell_center(x), g.cell_center(y), g.cell_center(z)};
        bool seen = false, consistent = true;
        for (size_t v = 0; v < masks.size() && consistent; ++v) {
          geometry::Projection pr;
          try {
            pr = geometry::project(poses[v], K, p);
          } catch (const std::invalid_argument&) {
            continue;  // behind this camera
          }
          int pu = static_cast<int>(std::floor(pr.u));
          int pv = static_cast<int>(std::floor(pr.v));
          if (pu < 0 || pu >= masks[v].width || pv < 0 || pv >= masks[v].height) continue;
          seen = true;
          if (!masks[v].at(pv, pu)) consistent = false;
        }
        if (seen && consistent) g.set(x, y, z, 1);
      }
  return g;
}

namespace {

// Exposed faces of occupied voxels, each with its outward axis/direction.
struct Face {
  int x, y, z;  // voxel
  int axis;     // 0,1,2
  int dir;      // -1 or +1
};

std::vector<Face> exposed_faces(const OccupancyGrid& g) {
  std::vector<Face> faces;
  int res = g.res;
  auto occupied = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= res || y >= res || z >= res) return false;
    return g.at(x, y, z) != 0;
  };
  for (int z = 0; z < res; ++z)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        if (!g.at(x, y, z)) continue;
        const int d[6][4] = {{-1, 0, 0, 0}, {1, 0, 0, 0}, {0, -1, 0, 1}, {0, 1, 0, 1}, {0, 0, -1, 2}, {0, 0, 1, 2}};
        for (const auto& dd : d)
          if (!occupied(x + dd[0], y + dd[1], z + dd[2]))
            faces.push_back({x, y, z, dd[3], dd[dd[3]]});
      }
  return faces;
}

}  // namespace

TriangleMesh extract_mesh(const OccupancyGrid& grid) {
  if (grid.count() == 0) throw std::invalid_argument("extract_mesh: empty grid");
  double cell = 2.0 / grid.res;
  TriangleMesh mesh;
  std::map<std::array<int, 3>, int> vertex_ids;
  auto vid = [&](int cx, int cy, int cz) {
    auto key = std::array<int, 3>{cx, cy, cz};
    auto it = vertex_ids.find(key);
    if (it != vertex_ids.end()) return it->second;
    int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back({-1.0 + cx * cell, -1.0 + cy * cell, -1.0 + cz * cell});
    vertex_ids.emplace(key, id);
    return id;
  };

  for (const Face& f : exposed_faces(grid)) {
    // Corner lattice coordinates of the face quad, ordered so the two
    // triangles wind outward (counterclockwise seen from outside).
    int bx = f.x, by = f.y, bz = f.z;
    std::array<std::array<int, 3>, 4> q;
    switch (f.axis) {
      case 0: {
        int cx = bx + (f.dir > 0 ? 1 : 0);
        q = {{{cx, by, bz}, {cx, by + 1, bz}, {cx, by + 1, bz + 1}, {cx, by, bz + 1}}};
        if (f.dir < 0) std::swap(q[1], q[3]);
        break;
      }
      case 1: {
        int cy = by + (f.dir > 0 ? 1 : 0);
        q = {{{bx, cy, bz}, {bx, cy, bz + 1}, {bx + 1, cy, bz + 1}, {bx + 1, cy, bz}}};
        if (f.dir < 0) std::swap(q[1], q[3]);
        break;
      }
      default: {
        int cz = bz + (f.dir > 0 ? 1 : 0);
        q = {{{bx, by, cz}, {bx + 1, by, cz}, {bx + 1, by + 1, cz}, {bx, by + 1, cz}}};
        if (f.dir < 0) std::swap(q[1], q[3]);
        break;
      }
    }
    int a = vid(q[0][0], q[0][1], q[0][2]);
    int b = vid(q[1][0], q[1][1], q[1][2]);
    int c = vid(q[2][0], q[2][1], q[2][2]);
    int d = vid(q[3][0], q[3][1], q[3][2]);
    mesh.triangles.push_back({a, b, c});
    mesh.triangles.push_back({a, c, d});
  }
  return mesh;
}

void save_obj(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_obj: cannot open " + path);
  for (const auto& v : mesh.vertices) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!out) throw std::runtime_error("save_obj: write failed for " + path);
}

double volume_iou(const OccupancyGrid& a, const OccupancyGrid& b) {
  if (a.res != b.res) throw std::invalid_argument("volume_iou: resolution mismatch");
  std::int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::array<double, 3>> sample_surface_points(const OccupancyGrid& g, int n_samples,
                                                         std::uint64_t seed) {
  auto faces = exposed_faces(g);
  if (faces.empty()) throw std::invalid_argument("sample_surface_points: empty grid");
  double cell = 2.0 / g.res;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, faces.size() - 1);
  std::vector<std::array<double, 3>> pts;
  pts.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const Face& f = faces[pick(rng)];
    std::array<double, 3> c = {-1.0 + (f.x + 0.5) * cell, -1.0 + (f.y + 0.5) * cell, -1.0 + (f.z + 0.5) * cell};
    c[f.axis] += f.dir * 0.5 * cell;
    pts.push_back(c);
  }
  return pts;
}

double chamfer(const std::vector<std::array<double, 3>>& a, const std::vector<std::array<double, 3>>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
  auto mean_nn = [](const std::vector<std::array<double, 3>>& from, const std::vector<std::array<double, 3>>& to) {
    double acc = 0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      acc += std::sqrt(best);
    }
    return acc / from.size();
  };
  return 0.5 * (mean_nn(a, b) + mean_nn(b, a));
}

}  // namespace mvdpp::recon
