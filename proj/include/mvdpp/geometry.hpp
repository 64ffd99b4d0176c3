#pragma once

// Camera conventions: right-handed world frame, +Z is up (gravity), azimuth
// measured counterclockwise from +X in the XY plane. Cameras sit on a sphere
// around the origin with the optical axis through the origin. The camera
// frame is x=right, y=down, z=forward (world-to-camera rotation has det +1).

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvdpp::geometry {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;  // row-major

struct CameraPose {
  double azimuth_deg = 0.0;    // [0, 360)
  double elevation_deg = 0.0;  // [-90, 90]
  double distance = 1.5;       // > 0

  Vec3 center() const;
  Vec3 forward() const;  // unit, points at the origin
  Vec3 up() const;       // +Z projected orthogonal to forward
  Mat3 rotation() const; // world-to-camera, rows (right, -up, forward)
};

struct Intrinsics {
  double fov_deg = 60.0;
  int width = 64;
  int height = 64;

  double focal_px() const;
  double cx() const { return width / 2.0; }
  double cy() const { return height / 2.0; }
};

struct ViewGrid {
  std::vector<CameraPose> poses;  // exactly 32, frozen ordering
  double azimuth_offset_deg = 0.0;
};

// Elevation rows of the generation grid, in storage order.
inline constexpr std::array<double, 4> kGridElevations = {60.0, 30.0, 0.0, -30.0};
inline constexpr double kGridDistance = 1.5;
inline constexpr int kGridViews = 32;
inline constexpr int kMaxConditionViews = 10;

CameraPose camera_pose(double azimuth_deg, double elevation_deg, double distance);

// 32 poses: elevation rows {60,30,0,-30}, azimuths offset + {0,45,...,315}.
ViewGrid generation_view_grid(double azimuth_offset_deg);

// Grid whose azimuth-slot 0 shares the reference (first condition) azimuth.
ViewGrid align_grid_to_reference(const CameraPose& reference);

// Condition-view distribution: azimuth on one of the eight output slots,
// elevation uniform in [-10, 45] deg, distance uniform in [1.5, 2.2].
CameraPose sample_condition_pose(std::mt19937_64& rng);

struct Projection {
  double u, v;   // pixels
  double depth;  // along the optical axis
};

// Pinhole projection; throws if the point is at or behind the camera plane.
Projection project(const CameraPose& pose, const Intrinsics& K, const Vec3& p);

// World-space ray through pixel center (u, v); direction is unit length.
struct Ray {
  Vec3 origin;
  Vec3 dir;
};
Ray pixel_ray(const CameraPose& pose, const Intrinsics& K, double u, double v);

// Point at given depth along the pixel's viewing ray (inverse of project).
Vec3 backproject(const CameraPose& pose, const Intrinsics& K, double u, double v, double depth);

}  // namespace mvdpp::geometry
