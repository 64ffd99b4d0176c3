#pragma once

// Visual-hull reconstruction from silhouettes at known poses, boundary-face
// mesh extraction, and the geometry metrics (volume IoU, Chamfer distance).

#include "mvdpp/geometry.hpp"
#include "mvdpp/image.hpp"
#include "mvdpp/occupancy.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mvdpp::recon {

struct TriangleMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> triangles;
};

// Cell occupied iff every view whose image plane sees the cell center marks
// the projected pixel as foreground. Cells seen by no view are carved away.
OccupancyGrid carve(const std::vector<img::Mask>& masks, const std::vector<geometry::CameraPose>& poses,
                    const geometry::Intrinsics& K, int res);

// Two triangles per exposed voxel face, vertices on cell corners.
TriangleMesh extract_mesh(const OccupancyGrid& grid);

void save_obj(const std::string& path, const TriangleMesh& mesh);

double volume_iou(const OccupancyGrid& a, const OccupancyGrid& b);

// Uniform seeded sample of exposed-face centers (with replacement).
std::vector<std::array<double, 3>> sample_surface_points(const OccupancyGrid& g, int n_samples,
                                                         std::uint64_t seed);

// 0.5 * (mean NN dist a->b + mean NN dist b->a), Euclidean.
double chamfer(const std::vector<std::array<double, 3>>& a, const std::vector<std::array<double, 3>>& b);

}  // namespace mvdpp::recon
