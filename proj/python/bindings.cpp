// Python bindings for the core operations: schedules, camera geometry, the
// procedural renderer/voxelizer, visual-hull carving, and the image metrics.

#include "mvdpp/geometry.hpp"
#include "mvdpp/metrics.hpp"
#include "mvdpp/recon.hpp"
#include "mvdpp/sampling.hpp"
#include "mvdpp/schedule.hpp"
#include "mvdpp/synthdata.hpp"
#include "mvdpp/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

namespace py = pybind11;
using namespace mvdpp;

namespace {

py::array_t<float> rgb_to_array(const img::ImageRGB& im) {
  py::array_t<float> a({im.height, im.width, 3});
  std::copy(im.data.begin(), im.data.end(), a.mutable_data());
  return a;
}

img::ImageRGB array_to_rgb(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an (H, W, 3) array");
  img::ImageRGB im;
  im.height = static_cast<int>(a.shape(0));
  im.width = static_cast<int>(a.shape(1));
  im.data.assign(a.data(), a.data() + a.size());
  return im;
}

py::array_t<std::uint8_t> mask_to_array(const img::Mask& m) {
  py::array_t<std::uint8_t> a({m.height, m.width});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

py::array_t<std::uint8_t> grid_to_array(const recon::OccupancyGrid& g) {
  py::array_t<std::uint8_t> a({g.res, g.res, g.res});
  // bits are stored x-fastest; emit [z][y][x] to match the index order.
  std::copy(g.bits.begin(), g.bits.end(), a.mutable_data());
  return a;
}

py::dict schedule_to_dict(const sched::NoiseSchedule& s) {
  py::dict d;
  d["T"] = s.T;
  d["beta"] = py::array_t<double>(s.T, s.beta.data());
  d["alpha_bar"] = py::array_t<double>(s.T, s.alpha_bar.data());
  d["alpha_t"] = py::array_t<double>(s.T, s.alpha_t.data());
  d["gamma_t"] = py::array_t<double>(s.T, s.gamma_t.data());
  d["zero_snr"] = s.zero_snr;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mvdpp, m) {
  m.doc() = "Multi-view conditional diffusion pipeline: core operations";

  m.def(
      "linear_schedule",
      [](int T, bool zero_snr) {
        auto s = sched::linear_schedule(T);
        if (zero_snr) s = sched::rescale_zero_snr(s);
        return schedule_to_dict(s);
      },
      py::arg("T") = 1000, py::arg("zero_snr") = false);

  m.def(
      "snr", [](int t, int T, bool zero_snr) {
        auto s = sched::linear_schedule(T);
        if (zero_snr) s = sched::rescale_zero_snr(s);
        return sched::snr(t, s);
      },
      py::arg("t"), py::arg("T") = 1000, py::arg("zero_snr") = false);

  m.def("step_sequence", &sampling::step_sequence, py::arg("T"), py::arg("steps"));

  m.def(
      "camera_pose",
      [](double az, double el, double dist) {
        auto p = geometry::camera_pose(az, el, dist);
        py::dict d;
        d["center"] = p.center();
        d["forward"] = p.forward();
        d["up"] = p.up();
        return d;
      },
      py::arg("azimuth_deg"), py::arg("elevation_deg"), py::arg("distance"));

  m.def(
      "generation_view_grid",
      [](double offset) {
        auto g = geometry::generation_view_grid(offset);
        std::vector<std::tuple<double, double, double>> out;
        for (const auto& p : g.poses) out.emplace_back(p.azimuth_deg, p.elevation_deg, p.distance);
        return out;
      },
      py::arg("azimuth_offset_deg") = 0.0);

  m.def(
      "render_object",
      [](std::uint64_t seed, double az, double el, double dist) {
        auto obj = synth::sample_object(seed);
        auto v = synth::render(obj, geometry::camera_pose(az, el, dist), geometry::Intrinsics{});
        return py::make_tuple(rgb_to_array(v.rgb), mask_to_array(v.mask));
      },
      py::arg("seed"), py::arg("azimuth_deg"), py::arg("elevation_deg"), py::arg("distance"));

  m.def(
      "voxelize_object",
      [](std::uint64_t seed, int res) { return grid_to_array(synth::voxelize(synth::sample_object(seed), res)); },
      py::arg("seed"), py::arg("res") = 64);

  m.def(
      "carve",
      [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& masks,
         const std::vector<std::tuple<double, double, double>>& poses, int res) {
        if (masks.ndim() != 3) throw std::invalid_argument("expected a (V, H, W) mask array");
        int V = static_cast<int>(masks.shape(0));
        int H = static_cast<int>(masks.shape(1)), W = static_cast<int>(masks.shape(2));
        std::vector<img::Mask> ms;
        std::vector<geometry::CameraPose> ps;
        for (int v = 0; v < V; ++v) {
          img::Mask mk = img::Mask::zeros(H, W);
          std::copy(masks.data() + static_cast<size_t>(v) * H * W,
                    masks.data() + static_cast<size_t>(v + 1) * H * W, mk.data.begin());
          ms.push_back(std::move(mk));
        }
        for (const auto& [az, el, d] : poses) ps.push_back(geometry::camera_pose(az, el, d));
        return grid_to_array(recon::carve(ms, ps, geometry::Intrinsics{}, res));
      },
      py::arg("masks"), py::arg("poses"), py::arg("res") = 64);

  m.def(
      "psnr",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
        return metrics::psnr(array_to_rgb(a), array_to_rgb(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "ssim",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
        return metrics::ssim(array_to_rgb(a), array_to_rgb(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "chamfer",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        auto to_points = [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
          if (x.ndim() != 2 || x.shape(1) != 3) throw std::invalid_argument("expected an (N, 3) array");
          std::vector<std::array<double, 3>> pts(x.shape(0));
          for (py::ssize_t i = 0; i < x.shape(0); ++i)
            pts[i] = {x.at(i, 0), x.at(i, 1), x.at(i, 2)};
          return pts;
        };
        return recon::chamfer(to_points(a), to_points(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "dropout_views",
      [](int m_total, int keep, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return training::dropout_views(m_total, keep, rng);
      },
      py::arg("m_total"), py::arg("keep"), py::arg("seed") = 0);

  m.def(
      "sample_conditions",
      [](bool mixed, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return training::sample_conditions(
            10, mixed ? training::ConditionMode::Mixed : training::ConditionMode::Single, rng);
      },
      py::arg("mixed"), py::arg("seed") = 0);

  m.def(
      "build_dataset",
      [](const std::string& out_dir, int n_objects, int grid_res, std::uint64_t seed) {
        synth::DatasetConfig c;
        c.n_objects = n_objects;
        c.grid_res = grid_res;
        c.seed = seed;
        return static_cast<int>(synth::build_dataset(c, out_dir).entries.size());
      },
      py::arg("out_dir"), py::arg("n_objects") = 4, py::arg("grid_res") = 16, py::arg("seed") = 0);
}
