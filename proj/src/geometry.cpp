#include "mvdpp/geometry.hpp"

#include <cmath>

namespace mvdpp::geometry {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

Vec3 normalize(const Vec3& v) {
  double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

double wrap_azimuth(double a) {
  a = std::fmod(a, 360.0);
  if (a < 0) a += 360.0;
  return a;
}

}  // namespace

Vec3 CameraPose::center() const {
  double a = azimuth_deg * kDegToRad, e = elevation_deg * kDegToRad;
  return {distance * std::cos(e) * std::cos(a), distance * std::cos(e) * std::sin(a), distance * std::sin(e)};
}

Vec3 CameraPose::forward() const {
  Vec3 c = center();
  return normalize({-c[0], -c[1], -c[2]});
}

Vec3 CameraPose::up() const {
  Vec3 f = forward();
  Vec3 z = {0, 0, 1};
  double d = dot(z, f);
  return normalize({z[0] - d * f[0], z[1] - d * f[1], z[2] - d * f[2]});
}

Mat3 CameraPose::rotation() const {
  Vec3 f = forward(), u = up();
  Vec3 r = cross(f, u);
  return {{{r[0], r[1], r[2]}, {-u[0], -u[1], -u[2]}, {f[0], f[1], f[2]}}};
}

double Intrinsics::focal_px() const {
  return (width / 2.0) / std::tan(fov_deg * kDegToRad / 2.0);
}

CameraPose camera_pose(double azimuth_deg, double elevation_deg, double distance) {
  if (distance <= 0) throw std::invalid_argument("camera_pose: distance must be positive");
  if (std::abs(elevation_deg) >= 90.0)
    throw std::invalid_argument("camera_pose: elevation at +-90 degrees has a degenerate up vector");
  CameraPose p;
  p.azimuth_deg = wrap_azimuth(azimuth_deg);
  p.elevation_deg = elevation_deg;
  p.distance = distance;
  return p;
}

ViewGrid generation_view_grid(double azimuth_offset_deg) {
  ViewGrid grid;
  grid.azimuth_offset_deg = wrap_azimuth(azimuth_offset_deg);
  grid.poses.reserve(kGridViews);
  for (double elev : kGridElevations)
    for (int a = 0; a < 8; ++a)
      grid.poses.push_back(camera_pose(grid.azimuth_offset_deg + 45.0 * a, elev, kGridDistance));
  return grid;
}

ViewGrid align_grid_to_reference(const CameraPose& reference) {
  return generation_view_grid(reference.azimuth_deg);
}

CameraPose sample_condition_pose(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> slot(0, 7);
  std::uniform_real_distribution<double> elev(-10.0, 45.0);
  std::uniform_real_distribution<double> dist(1.5, 2.2);
  return camera_pose(45.0 * slot(rng), elev(rng), dist(rng));
}

Projection project(const CameraPose& pose, const Intrinsics& K, const Vec3& p) {
  Mat3 R = pose.rotation();
  Vec3 d = sub3(p, pose.center());
  double xc = dot({R[0][0], R[0][1], R[0][2]}, d);
  double yc = dot({R[1][0], R[1][1], R[1][2]}, d);
  double zc = dot({R[2][0], R[2][1], R[2][2]}, d);
  if (zc <= 0) throw std::invalid_argument("project: point behind camera");
  double f = K.focal_px();
  return {K.cx() + f * xc / zc, K.cy() + f * yc / zc, zc};
}

Ray pixel_ray(const CameraPose& pose, const Intrinsics& K, double u, double v) {
  Mat3 R = pose.rotation();
  double f = K.focal_px();
  Vec3 dc = {(u - K.cx()) / f, (v - K.cy()) / f, 1.0};
  // world dir = R^T * dc
  Vec3 dw = {R[0][0] * dc[0] + R[1][0] * dc[1] + R[2][0] * dc[2],
             R[0][1] * dc[0] + R[1][1] * dc[1] + R[2][1] * dc[2],
             R[0][2] * dc[0] + R[1][2] * dc[1] + R[2][2] * dc[2]};
  return {pose.center(), normalize(dw)};
}

Vec3 backproject(const CameraPose& pose, const Intrinsics& K, double u, double v, double depth) {
  Mat3 R = pose.rotation();
  double f = K.focal_px();
  Vec3 dc = {(u - K.cx()) / f * depth, (v - K.cy()) / f * depth, depth};
  Vec3 c = pose.center();
  return {c[0] + R[0][0] * dc[0] + R[1][0] * dc[1] + R[2][0] * dc[2],
          c[1] + R[0][1] * dc[0] + R[1][1] * dc[1] + R[2][1] * dc[2],
          c[2] + R[0][2] * dc[0] + R[1][2] * dc[1] + R[2][2] * dc[2]};
}

}  // namespace mvdpp::geometry
