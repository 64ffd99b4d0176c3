#include "mvdpp/synthdata.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mvdpp::geometry {

void to_json(json& j, const CameraPose& p) {
  j = json{{"azimuth_deg", p.azimuth_deg}, {"elevation_deg", p.elevation_deg}, {"distance", p.distance}};
}

void from_json(const json& j, CameraPose& p) {
  p.azimuth_deg = j.at("azimuth_deg").get<double>();
  p.elevation_deg = j.at("elevation_deg").get<double>();
  p.distance = j.at("distance").get<double>();
}

}  // namespace mvdpp::geometry

namespace mvdpp::recon {

void save_grid(const std::string& path, const OccupancyGrid& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_grid: cannot open " + path);
  std::string header = json{{"res", g.res}}.dump();
  out << header << '\n';
  std::vector<std::uint8_t> packed((g.bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < g.bits.size(); ++i)
    if (g.bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  out.write(reinterpret_cast<const char*>(packed.data()), packed.size());
  if (!out) throw std::runtime_error("save_grid: write failed for " + path);
}

OccupancyGrid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_grid: cannot open " + path);
  std::string header;
  std::getline(in, header);
  int res = json::parse(header).at("res").get<int>();
  OccupancyGrid g = OccupancyGrid::zeros(res);
  std::vector<std::uint8_t> packed((g.bits.size() + 7) / 8);
  in.read(reinterpret_cast<char*>(packed.data()), packed.size());
  if (!in) throw std::runtime_error("load_grid: truncated file " + path);
  for (size_t i = 0; i < g.bits.size(); ++i)
    g.bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return g;
}

}  // namespace mvdpp::recon

namespace mvdpp::synth {

namespace {

using geometry::Ray;
using geometry::Vec3;

constexpr double kHitEps = 1e-9;

Vec3 prim_min(const Primitive& p) {
  if (p.shape == Shape::Sphere) {
    double r = p.half_extents[0];
    return {p.center[0] - r, p.center[1] - r, p.center[2] - r};
  }
  return {p.center[0] - p.half_extents[0], p.center[1] - p.half_extents[1], p.center[2] - p.half_extents[2]};
}

Vec3 prim_max(const Primitive& p) {
  if (p.shape == Shape::Sphere) {
    double r = p.half_extents[0];
    return {p.center[0] + r, p.center[1] + r, p.center[2] + r};
  }
  return {p.center[0] + p.half_extents[0], p.center[1] + p.half_extents[1], p.center[2] + p.half_extents[2]};
}

std::optional<HitRecord> intersect_sphere_like(const Primitive& prim, const Ray& ray, const Vec3& radii) {
  // Scale into the unit-sphere frame; the ray parameter is preserved.
  Vec3 o = {(ray.origin[0] - prim.center[0]) / radii[0], (ray.origin[1] - prim.center[1]) / radii[1],
            (ray.origin[2] - prim.center[2]) / radii[2]};
  Vec3 d = {ray.dir[0] / radii[0], ray.dir[1] / radii[1], ray.dir[2] / radii[2]};
  double a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  double b = 2 * (o[0] * d[0] + o[1] * d[1] + o[2] * d[2]);
  double c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - 1.0;
  double disc = b * b - 4 * a * c;
  if (disc < 0) return std::nullopt;
  double sq = std::sqrt(disc);
  double t = (-b - sq) / (2 * a);
  if (t < kHitEps) t = (-b + sq) / (2 * a);
  if (t < kHitEps) return std::nullopt;
  Vec3 p = {ray.origin[0] + t * ray.dir[0], ray.origin[1] + t * ray.dir[1], ray.origin[2] + t * ray.dir[2]};
  Vec3 n = {(p[0] - prim.center[0]) / (radii[0] * radii[0]), (p[1] - prim.center[1]) / (radii[1] * radii[1]),
            (p[2] - prim.center[2]) / (radii[2] * radii[2])};
  double nn = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
  return HitRecord{t, {n[0] / nn, n[1] / nn, n[2] / nn}, &prim};
}

std::optional<HitRecord> intersect_box(const Primitive& prim, const Ray& ray) {
  double t0 = kHitEps, t1 = std::numeric_limits<double>::infinity();
  int axis0 = -1;
  double sign0 = 0;
  for (int a = 0; a < 3; ++a) {
    double lo = prim.center[a] - prim.half_extents[a];
    double hi = prim.center[a] + prim.half_extents[a];
    if (std::abs(ray.dir[a]) < 1e-15) {
      if (ray.origin[a] < lo || ray.origin[a] > hi) return std::nullopt;
      continue;
    }
    double ta = (lo - ray.origin[a]) / ray.dir[a];
    double tb = (hi - ray.origin[a]) / ray.dir[a];
    double sgn = -1;
    if (ta > tb) { std::swap(ta, tb); sgn = 1; }
    if (ta > t0) { t0 = ta; axis0 = a; sign0 = sgn; }
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  if (axis0 < 0) return std::nullopt;  // origin inside the box
  Vec3 n = {0, 0, 0};
  n[axis0] = sign0;
  return HitRecord{t0, n, &prim};
}

float shade(const HitRecord& hit, int channel) {
  static const Vec3 kLight = {1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
  double diffuse = std::max(0.0, hit.normal[0] * kLight[0] + hit.normal[1] * kLight[1] + hit.normal[2] * kLight[2]);
  double v = hit.prim->albedo[channel] * (0.3 + 0.7 * diffuse);
  return static_cast<float>(std::min(1.0, v));
}

}  // namespace

SceneObject sample_object(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> n_prims(1, 5);
  std::uniform_int_distribution<int> shape_pick(0, 2);
  std::uniform_real_distribution<double> center_u(-0.5, 0.5);
  std::uniform_real_distribution<double> extent_u(0.15, 0.5);
  std::uniform_real_distribution<double> albedo_u(0.2, 1.0);

  SceneObject obj;
  obj.seed = seed;
  int n = n_prims(rng);
  for (int i = 0; i < n; ++i) {
    Primitive p;
    p.shape = static_cast<Shape>(shape_pick(rng));
    p.center = {center_u(rng), center_u(rng), center_u(rng)};
    if (p.shape == Shape::Sphere) {
      double r = extent_u(rng);
      p.half_extents = {r, r, r};
    } else {
      p.half_extents = {extent_u(rng), extent_u(rng), extent_u(rng)};
    }
    p.albedo = {static_cast<float>(albedo_u(rng)), static_cast<float>(albedo_u(rng)),
                static_cast<float>(albedo_u(rng))};
    obj.primitives.push_back(p);
  }
  normalize_object(obj);
  return obj;
}

void normalize_object(SceneObject& obj) {
  if (obj.primitives.empty()) return;
  Vec3 lo = prim_min(obj.primitives[0]), hi = prim_max(obj.primitives[0]);
  for (const auto& p : obj.primitives) {
    Vec3 pl = prim_min(p), ph = prim_max(p);
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], pl[a]);
      hi[a] = std::max(hi[a], ph[a]);
    }
  }
  Vec3 mid = {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
  double longest = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  double s = 2.0 / longest;
  for (auto& p : obj.primitives) {
    for (int a = 0; a < 3; ++a) {
      p.center[a] = (p.center[a] - mid[a]) * s;
      p.half_extents[a] *= s;
    }
  }
}

std::optional<HitRecord> intersect(const SceneObject& obj, const Ray& ray) {
  std::optional<HitRecord> best;
  for (const auto& prim : obj.primitives) {
    std::optional<HitRecord> h;
    switch (prim.shape) {
      case Shape::Sphere:
      case Shape::Ellipsoid:
        h = intersect_sphere_like(prim, ray, prim.half_extents);
        break;
      case Shape::Box:
        h = intersect_box(prim, ray);
        break;
    }
    if (h && (!best || h->t < best->t)) best = h;
  }
  return best;
}

RenderedView render(const SceneObject& obj, const geometry::CameraPose& pose, const geometry::Intrinsics& K) {
  RenderedView view;
  view.pose = pose;
  view.intrinsics = K;
  view.rgb = img::ImageRGB::filled(K.height, K.width, 1.0f, 1.0f, 1.0f);
  view.mask = img::Mask::zeros(K.height, K.width);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      geometry::Ray ray = geometry::pixel_ray(pose, K, x + 0.5, y + 0.5);
      auto hit = intersect(obj, ray);
      if (!hit) continue;
      view.mask.at(y, x) = 1;
      for (int c = 0; c < 3; ++c) view.rgb.at(y, x, c) = shade(*hit, c);
    }
  return view;
}

bool inside(const SceneObject& obj, const Vec3& p) {
  for (const auto& prim : obj.primitives) {
    switch (prim.shape) {
      case Shape::Box: {
        if (std::abs(p[0] - prim.center[0]) <= prim.half_extents[0] &&
            std::abs(p[1] - prim.center[1]) <= prim.half_extents[1] &&
            std::abs(p[2] - prim.center[2]) <= prim.half_extents[2])
          return true;
        break;
      }
      case Shape::Sphere:
      case Shape::Ellipsoid: {
        double q = 0;
        for (int a = 0; a < 3; ++a) {
          double d = (p[a] - prim.center[a]) / prim.half_extents[a];
          q += d * d;
        }
        if (q <= 1.0) return true;
        break;
      }
    }
  }
  return false;
}

recon::OccupancyGrid voxelize(const SceneObject& obj, int res) {
  if (res < 8) throw std::invalid_argument("voxelize: res must be >= 8");
  auto g = recon::OccupancyGrid::zeros(res);
  for (int z = 0; z < res; ++z)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        if (inside(obj, {g.cell_center(x), g.cell_center(y), g.cell_center(z)}))
          g.set(x, y, z, 1);
  return g;
}

namespace {

json view_record_to_json(const DatasetViewRecord& r) {
  return json{{"image", r.image_file}, {"mask", r.mask_file}, {"pose", r.pose}};
}

DatasetViewRecord view_record_from_json(const json& j) {
  DatasetViewRecord r;
  r.image_file = j.at("image").get<std::string>();
  r.mask_file = j.at("mask").get<std::string>();
  r.pose = j.at("pose").get<geometry::CameraPose>();
  return r;
}

char path_buf[64];

std::string indexed(const char* prefix, int i, const char* suffix) {
  std::snprintf(path_buf, sizeof(path_buf), "%s%02d%s", prefix, i, suffix);
  return path_buf;
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& config, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("build_dataset: cannot create " + out_dir + ": " + ec.message());

  geometry::Intrinsics K;
  K.width = K.height = config.image_size;

  DatasetManifest manifest;
  manifest.config = config;
  for (int i = 0; i < config.n_objects; ++i) {
    DatasetEntry entry;
    entry.object_seed = config.seed * 1000003ULL + static_cast<std::uint64_t>(i);
    char dname[32];
    std::snprintf(dname, sizeof(dname), "obj_%04d", i);
    entry.dir = dname;
    fs::path odir = fs::path(out_dir) / entry.dir;
    fs::create_directories(odir, ec);
    if (ec) throw std::runtime_error("build_dataset: cannot create " + odir.string() + ": " + ec.message());

    SceneObject obj = sample_object(entry.object_seed);
    std::mt19937_64 pose_rng(entry.object_seed ^ 0x9E3779B97F4A7C15ULL);

    for (int c = 0; c < config.n_condition_views; ++c) {
      geometry::CameraPose pose = geometry::sample_condition_pose(pose_rng);
      RenderedView v = render(obj, pose, K);
      DatasetViewRecord rec;
      rec.image_file = entry.dir + "/" + indexed("cond_", c, ".png");
      rec.mask_file = entry.dir + "/" + indexed("cond_", c, "_mask.png");
      rec.pose = pose;
      img::write_png_rgb((fs::path(out_dir) / rec.image_file).string(), v.rgb);
      img::write_png_mask((fs::path(out_dir) / rec.mask_file).string(), v.mask);
      entry.condition_views.push_back(rec);
    }

    geometry::ViewGrid grid = geometry::align_grid_to_reference(entry.condition_views[0].pose);
    for (int t = 0; t < geometry::kGridViews; ++t) {
      RenderedView v = render(obj, grid.poses[t], K);
      DatasetViewRecord rec;
      rec.image_file = entry.dir + "/" + indexed("tgt_", t, ".png");
      rec.mask_file = entry.dir + "/" + indexed("tgt_", t, "_mask.png");
      rec.pose = grid.poses[t];
      img::write_png_rgb((fs::path(out_dir) / rec.image_file).string(), v.rgb);
      img::write_png_mask((fs::path(out_dir) / rec.mask_file).string(), v.mask);
      entry.target_views.push_back(rec);
    }

    entry.grid_file = entry.dir + "/grid.bin";
    recon::save_grid((fs::path(out_dir) / entry.grid_file).string(), voxelize(obj, config.grid_res));
    manifest.entries.push_back(std::move(entry));
  }
  save_manifest(out_dir, manifest);
  return manifest;
}

void save_manifest(const std::string& dataset_dir, const DatasetManifest& m) {
  json j;
  j["config"] = {{"n_objects", m.config.n_objects},
                 {"n_condition_views", m.config.n_condition_views},
                 {"image_size", m.config.image_size},
                 {"grid_res", m.config.grid_res},
                 {"seed", m.config.seed}};
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    json je;
    je["object_seed"] = e.object_seed;
    je["dir"] = e.dir;
    je["grid"] = e.grid_file;
    je["condition_views"] = json::array();
    for (const auto& v : e.condition_views) je["condition_views"].push_back(view_record_to_json(v));
    je["target_views"] = json::array();
    for (const auto& v : e.target_views) je["target_views"].push_back(view_record_to_json(v));
    j["entries"].push_back(je);
  }
  std::ofstream out(fs::path(dataset_dir) / "manifest.json");
  if (!out) throw std::runtime_error("save_manifest: cannot write manifest in " + dataset_dir);
  out << j.dump(1) << '\n';
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
  std::ifstream in(fs::path(dataset_dir) / "manifest.json");
  if (!in) throw std::runtime_error("load_manifest: no manifest.json in " + dataset_dir);
  json j = json::parse(in);
  DatasetManifest m;
  const auto& jc = j.at("config");
  m.config.n_objects = jc.at("n_objects").get<int>();
  m.config.n_condition_views = jc.at("n_condition_views").get<int>();
  m.config.image_size = jc.at("image_size").get<int>();
  m.config.grid_res = jc.at("grid_res").get<int>();
  m.config.seed = jc.at("seed").get<std::uint64_t>();
  for (const auto& je : j.at("entries")) {
    DatasetEntry e;
    e.object_seed = je.at("object_seed").get<std::uint64_t>();
    e.dir = je.at("dir").get<std::string>();
    e.grid_file = je.at("grid").get<std::string>();
    for (const auto& jv : je.at("condition_views")) e.condition_views.push_back(view_record_from_json(jv));
    for (const auto& jv : je.at("target_views")) e.target_views.push_back(view_record_from_json(jv));
    m.entries.push_back(std::move(e));
  }
  return m;
}

RenderedView load_view(const std::string& dataset_dir, const DatasetViewRecord& rec, int image_size) {
  RenderedView v;
  v.rgb = img::read_png_rgb((fs::path(dataset_dir) / rec.image_file).string());
  v.mask = img::read_png_mask((fs::path(dataset_dir) / rec.mask_file).string());
  if (v.rgb.width != image_size || v.rgb.height != image_size)
    throw std::runtime_error("load_view: unexpected image size in " + rec.image_file);
  v.pose = rec.pose;
  v.intrinsics.width = v.intrinsics.height = image_size;
  return v;
}

}  // namespace mvdpp::synth
