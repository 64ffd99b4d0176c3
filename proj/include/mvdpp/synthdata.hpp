#pragma once

// Procedural training objects and the software renderer. Objects are unions
// of spheres, boxes, and ellipsoids, normalized so the bounding box is
// centered at the origin with longest dimension spanning [-1,1]. Rendering
// casts one primary ray per pixel; background is pure white.

#include "mvdpp/geometry.hpp"
#include "mvdpp/image.hpp"
#include "mvdpp/occupancy.hpp"

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mvdpp::synth {

enum class Shape { Sphere, Box, Ellipsoid };

struct Primitive {
  Shape shape = Shape::Sphere;
  geometry::Vec3 center = {0, 0, 0};
  geometry::Vec3 half_extents = {0.5, 0.5, 0.5};  // sphere uses [0] as radius
  std::array<float, 3> albedo = {0.8f, 0.8f, 0.8f};
};

struct SceneObject {
  std::vector<Primitive> primitives;
  std::uint64_t seed = 0;
};

struct RenderedView {
  img::ImageRGB rgb;
  img::Mask mask;
  geometry::CameraPose pose;
  geometry::Intrinsics intrinsics;
};

// Deterministic in seed: 1-5 primitives, then normalized.
SceneObject sample_object(std::uint64_t seed);

// Normalize in place so the union AABB is origin-centered and its longest
// dimension spans exactly [-1, 1]. No-op for empty objects.
void normalize_object(SceneObject& obj);

struct HitRecord {
  double t;
  geometry::Vec3 normal;
  const Primitive* prim;
};
std::optional<HitRecord> intersect(const SceneObject& obj, const geometry::Ray& ray);

RenderedView render(const SceneObject& obj, const geometry::CameraPose& pose, const geometry::Intrinsics& K);

// Point-membership test against the primitive union.
bool inside(const SceneObject& obj, const geometry::Vec3& p);

// Cell occupied iff its center lies inside the union. res >= 8.
recon::OccupancyGrid voxelize(const SceneObject& obj, int res);

struct DatasetConfig {
  int n_objects = 64;
  int n_condition_views = 10;
  int image_size = 64;
  int grid_res = 64;
  std::uint64_t seed = 0;
};

struct DatasetViewRecord {
  std::string image_file;
  std::string mask_file;
  geometry::CameraPose pose;
};

struct DatasetEntry {
  std::uint64_t object_seed = 0;
  std::string dir;
  std::vector<DatasetViewRecord> condition_views;  // n_condition_views entries
  std::vector<DatasetViewRecord> target_views;     // 32 entries, aligned grid
  std::string grid_file;
};

struct DatasetManifest {
  DatasetConfig config;
  std::vector<DatasetEntry> entries;
};

// Renders every object: condition views from sample_condition_pose, 32
// aligned target views, and the ground-truth occupancy grid. Writes PNGs,
// grid files, and manifest.json under out_dir.
DatasetManifest build_dataset(const DatasetConfig& config, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dataset_dir);
void save_manifest(const std::string& dataset_dir, const DatasetManifest& m);

// Loads one view record back from disk (paths relative to dataset_dir).
RenderedView load_view(const std::string& dataset_dir, const DatasetViewRecord& rec, int image_size);

}  // namespace mvdpp::synth
