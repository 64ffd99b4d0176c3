// Command-line operator surface: dataset creation, VAE training, staged
// diffusion training, sampling, reconstruction, evaluation, and a quick
// property selftest. JSON configs with dotted-key --set overrides.

#include "mvdpp/config.hpp"
#include "mvdpp/denoiser.hpp"
#include "mvdpp/geometry.hpp"
#include "mvdpp/metrics.hpp"
#include "mvdpp/mvae.hpp"
#include "mvdpp/recon.hpp"
#include "mvdpp/sampling.hpp"
#include "mvdpp/schedule.hpp"
#include "mvdpp/synthdata.hpp"
#include "mvdpp/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mvdpp;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "JSON config file");
  cmd->add_option("--set", a.overrides, "dotted.key=value overrides")->take_all();
  cmd->add_option("--seed", a.seed, "override the config seed")->each([&a](const std::string&) {
    a.seed_set = true;
  });
}

json resolve(const json& defaults, const CommonArgs& a) {
  json cfg = cfg::merge_validated(defaults, cfg::load_config(a.config_path));
  for (const auto& kv : a.overrides) cfg::apply_override(cfg, kv);
  if (a.seed_set) {
    if (!cfg.contains("seed")) throw std::invalid_argument("config: this command has no seed");
    cfg["seed"] = a.seed;
  }
  return cfg;
}

json pose_json(const geometry::CameraPose& p) {
  return {{"azimuth_deg", p.azimuth_deg}, {"elevation_deg", p.elevation_deg}, {"distance", p.distance}};
}

geometry::CameraPose pose_from_json(const json& j) {
  return geometry::camera_pose(j.at("azimuth_deg").get<double>(), j.at("elevation_deg").get<double>(),
                               j.at("distance").get<double>());
}

// "all", "a..b" (inclusive), or comma list mixing both.
std::vector<int> parse_views(const std::string& s) {
  if (s == "all") {
    std::vector<int> v(geometry::kGridViews);
    for (int i = 0; i < geometry::kGridViews; ++i) v[i] = i;
    return v;
  }
  std::vector<int> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t comma = s.find(',', pos);
    std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (tok.empty()) throw std::invalid_argument("--views: empty entry in \"" + s + "\"");
    size_t dots = tok.find("..");
    try {
      if (dots == std::string::npos) {
        out.push_back(std::stoi(tok));
      } else {
        int lo = std::stoi(tok.substr(0, dots)), hi = std::stoi(tok.substr(dots + 2));
        if (hi < lo) throw std::invalid_argument("range");
        for (int i = lo; i <= hi; ++i) out.push_back(i);
      }
    } catch (const std::exception&) {
      throw std::invalid_argument("--views: cannot parse \"" + tok + "\"");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("--views: empty request");
  return out;
}

void write_curve_csv(const std::string& path, const std::vector<double>& loss) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,loss\n";
  for (size_t i = 0; i < loss.size(); ++i) out << i << ',' << loss[i] << '\n';
}

// ---- subcommand bodies ----

void run_dataset_build(const json& cfg) {
  synth::DatasetConfig dc;
  dc.n_objects = cfg.at("n_objects").get<int>();
  dc.n_condition_views = cfg.at("n_condition_views").get<int>();
  dc.image_size = cfg.at("image_size").get<int>();
  dc.grid_res = cfg.at("grid_res").get<int>();
  dc.seed = cfg.at("seed").get<std::uint64_t>();
  std::string out_dir = cfg.at("out_dir").get<std::string>();
  auto manifest = synth::build_dataset(dc, out_dir);
  cfg::write_run_json(out_dir, "dataset build", cfg);
  std::cout << "dataset: " << manifest.entries.size() << " objects in " << out_dir << "\n";
}

void run_vae_train(const json& cfg) {
  std::string out_dir = cfg.at("out_dir").get<std::string>();
  fs::create_directories(out_dir);
  mvae::MvaeTrainConfig tc;
  tc.steps = cfg.at("steps").get<int>();
  tc.batch_size = cfg.at("batch_size").get<int>();
  tc.learning_rate = cfg.at("learning_rate").get<double>();
  tc.beta_kl = cfg.at("beta_kl").get<double>();
  tc.holdout_objects = cfg.at("holdout_objects").get<int>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  std::string ckpt = (fs::path(out_dir) / "mvae.ckpt").string();
  auto report = mvae::train_mvae(cfg.at("dataset_dir").get<std::string>(), tc, ckpt);
  write_curve_csv((fs::path(out_dir) / "loss.csv").string(), report.loss_curve);
  cfg::write_run_json(out_dir, "vae train", cfg);
  std::cout << "vae: loss " << report.initial_smoothed_loss << " -> " << report.final_smoothed_loss
            << ", holdout psnr " << report.recon_psnr << " dB, mask iou " << report.mask_iou << "\n";
}

void run_diffusion_train(const json& cfg, int stage) {
  std::string out_dir = cfg.at("out_dir").get<std::string>();
  fs::create_directories(out_dir);
  std::string mvae_path = cfg.at("mvae_checkpoint").get<std::string>();
  if (!fs::exists(mvae_path))
    throw std::invalid_argument("diffusion train: missing prerequisite VAE checkpoint " + mvae_path);
  mvae::MvaeModel vae = mvae::MvaeModel::load(mvae_path);

  auto ckpt_path = [&](int s) { return (fs::path(out_dir) / ("denoiser_stage" + std::to_string(s) + ".ckpt")).string(); };
  training::StageConfig sc = training::StageConfig::defaults_for_stage(stage);
  sc.steps = cfg.at("steps").get<int>();
  sc.batch_size = cfg.at("batch_size").get<int>();
  sc.keep_views = cfg.at("keep_views").get<int>();
  sc.learning_rate = cfg.at("learning_rate").get<double>();
  sc.seed = cfg.at("seed").get<std::uint64_t>();

  denoiser::DenoiserModel model;
  if (stage == 1) {
    denoiser::DenoiserConfig dc;
    model = denoiser::DenoiserModel(dc, sc.seed ^ 0x646e7372ULL);
  } else {
    std::string prev = ckpt_path(stage - 1);
    if (!fs::exists(prev))
      throw std::invalid_argument("diffusion train: stage " + std::to_string(stage) +
                                  " requires the stage " + std::to_string(stage - 1) +
                                  " checkpoint (missing " + prev + ")");
    model = denoiser::DenoiserModel::load(prev);
    if (model.stage != stage - 1)
      throw std::invalid_argument("diffusion train: " + prev + " was produced by stage " +
                                  std::to_string(model.stage) + ", expected " + std::to_string(stage - 1));
  }

  auto objects = training::prepare_objects(cfg.at("dataset_dir").get<std::string>(), vae,
                                           cfg.at("max_objects").get<int>());
  std::vector<float> white = vae.white_latent(model.config().image_size).data;
  auto result = training::train_stage(objects, white, model, sc, ckpt_path(stage),
                                      (fs::path(out_dir) / ("loss_stage" + std::to_string(stage) + ".csv")).string());
  cfg::write_run_json(out_dir, "diffusion train --stage " + std::to_string(stage), cfg);
  std::cout << "stage " << stage << ": loss " << result.initial_smoothed_loss << " -> "
            << result.final_smoothed_loss << "\n";
}

void run_sample(const json& cfg, const std::string& views_str) {
  std::string out_dir = cfg.at("out_dir").get<std::string>();
  fs::create_directories(out_dir);
  std::string dataset_dir = cfg.at("dataset_dir").get<std::string>();
  synth::DatasetManifest ds = synth::load_manifest(dataset_dir);
  int oi = cfg.at("object_index").get<int>();
  if (oi < 0 || oi >= static_cast<int>(ds.entries.size()))
    throw std::invalid_argument("sample: object_index out of range");
  int n_cond = cfg.at("n_conditions").get<int>();
  const auto& entry = ds.entries[oi];
  if (n_cond < 1 || n_cond > static_cast<int>(entry.condition_views.size()))
    throw std::invalid_argument("sample: n_conditions out of range");

  std::string mvae_path = cfg.at("mvae_checkpoint").get<std::string>();
  std::string den_path = cfg.at("denoiser_checkpoint").get<std::string>();
  for (const auto& p : {mvae_path, den_path})
    if (!fs::exists(p)) throw std::invalid_argument("sample: missing checkpoint " + p);
  mvae::MvaeModel vae = mvae::MvaeModel::load(mvae_path);
  denoiser::DenoiserModel model = denoiser::DenoiserModel::load(den_path);

  std::vector<synth::RenderedView> conds;
  for (int i = 0; i < n_cond; ++i)
    conds.push_back(synth::load_view(dataset_dir, entry.condition_views[i], ds.config.image_size));

  sampling::GenerateOptions opts;
  opts.views = parse_views(views_str);
  opts.steps = cfg.at("steps").get<int>();
  std::string sampler = cfg.at("sampler").get<std::string>();
  if (sampler == "ddpm")
    opts.sampler = sampling::SamplerType::Ddpm;
  else if (sampler == "ddim")
    opts.sampler = sampling::SamplerType::Ddim;
  else
    throw std::invalid_argument("sample: sampler must be ddpm or ddim, got \"" + sampler + "\"");
  opts.seed = cfg.at("seed").get<std::uint64_t>();

  auto generated = sampling::generate(model, vae, conds, opts);

  geometry::ViewGrid grid = geometry::align_grid_to_reference(conds[0].pose);
  json jm;
  jm["config"] = cfg;
  jm["conditions"] = json::array();
  for (const auto& c : conds) jm["conditions"].push_back(pose_json(c.pose));
  jm["views"] = json::array();
  for (const auto& g : generated) {
    char img_name[32], mask_name[32];
    std::snprintf(img_name, sizeof(img_name), "view_%02d.png", g.view_index);
    std::snprintf(mask_name, sizeof(mask_name), "view_%02d_mask.png", g.view_index);
    img::write_png_rgb((fs::path(out_dir) / img_name).string(), g.rgb);
    img::write_png_mask((fs::path(out_dir) / mask_name).string(), g.mask);
    jm["views"].push_back({{"index", g.view_index},
                           {"image", img_name},
                           {"mask", mask_name},
                           {"pose", pose_json(grid.poses[g.view_index])}});
  }
  std::ofstream mout(fs::path(out_dir) / "manifest.json");
  mout << jm.dump(1) << '\n';
  cfg::write_run_json(out_dir, "sample", cfg);
  std::cout << "sample: " << generated.size() << " views in " << out_dir << "\n";
}

void run_reconstruct(const json& cfg) {
  std::string run_dir = cfg.at("run_dir").get<std::string>();
  fs::path manifest_path = fs::path(run_dir) / "manifest.json";
  if (!fs::exists(manifest_path))
    throw std::invalid_argument("reconstruct: missing " + manifest_path.string());
  std::ifstream in(manifest_path);
  json jm = json::parse(in);

  std::vector<img::Mask> masks;
  std::vector<geometry::CameraPose> poses;
  int image_size = 0;
  for (const auto& jv : jm.at("views")) {
    img::Mask m = img::read_png_mask((fs::path(run_dir) / jv.at("mask").get<std::string>()).string());
    image_size = m.width;
    masks.push_back(std::move(m));
    poses.push_back(pose_from_json(jv.at("pose")));
  }
  if (masks.size() < 2) throw std::invalid_argument("reconstruct: need at least 2 views");
  geometry::Intrinsics K;
  K.width = image_size;
  K.height = image_size;
  int res = cfg.at("grid_res").get<int>();
  recon::OccupancyGrid hull = recon::carve(masks, poses, K, res);
  recon::save_grid((fs::path(run_dir) / "recon_grid.bin").string(), hull);
  if (hull.count() > 0)
    recon::save_obj((fs::path(run_dir) / "recon_mesh.obj").string(), recon::extract_mesh(hull));
  cfg::write_run_json(run_dir, "reconstruct", cfg);
  std::cout << "reconstruct: " << hull.count() << " occupied cells (res " << res << ") in " << run_dir << "\n";
}

void run_evaluate(const json& cfg) {
  std::string out_dir = cfg.at("out_dir").get<std::string>();
  auto report = metrics::evaluate(cfg.at("run_dir").get<std::string>(),
                                  cfg.at("dataset_dir").get<std::string>(), cfg.at("object_index").get<int>());
  fs::create_directories(out_dir);
  metrics::save_report((fs::path(out_dir) / "report.json").string(), report);
  cfg::write_run_json(out_dir, "evaluate", cfg);
  std::cout << "evaluate: mean psnr " << report.mean_psnr << " dB, mean ssim " << report.mean_ssim;
  if (report.volume_iou >= 0)
    std::cout << ", iou " << report.volume_iou << ", chamfer " << report.chamfer;
  std::cout << "\n";
}

void check(bool ok, const std::string& what) {
  std::cout << (ok ? "ok   " : "FAIL ") << what << "\n";
  if (!ok) throw std::runtime_error("selftest failed: " + what);
}

void run_selftest() {
  // Schedule identities.
  auto s = sched::linear_schedule(1000);
  bool ident = true, dec = true;
  for (int t = 0; t < s.T; ++t) {
    double r = s.alpha_t[t] * s.alpha_t[t] + s.gamma_t[t] * s.gamma_t[t];
    ident = ident && std::abs(r - 1.0) <= 1e-6;
    if (t > 0) dec = dec && sched::snr(t, s) < sched::snr(t - 1, s);
  }
  check(ident, "schedule: alpha^2 + gamma^2 = 1");
  check(dec, "schedule: SNR strictly decreasing");
  auto z = sched::rescale_zero_snr(s);
  check(z.alpha_t[z.T - 1] == 0.0, "schedule: zero-SNR terminal sqrt(alpha_bar) exactly 0");

  std::vector<float> z0 = {0.3f, -1.2f, 0.8f}, eps = {1.0f, -0.5f, 0.25f}, zt, v, rz0, reps;
  sched::add_noise(z0, eps, 500, s, zt);
  sched::to_velocity(z0, eps, 500, s, v);
  sched::from_velocity(zt, v, 500, s, rz0, reps);
  bool rt = true;
  for (int i = 0; i < 3; ++i)
    rt = rt && std::abs(rz0[i] - z0[i]) <= 1e-6 && std::abs(reps[i] - eps[i]) <= 1e-6;
  check(rt, "schedule: velocity roundtrip recovers (z0, eps)");

  // Gradient checks on core primitives in double precision.
  std::mt19937_64 rng(7);
  {
    auto a = nc::Tensor<double>::randn({3, 4}, rng).as_param();
    auto b = nc::Tensor<double>::randn({4, 5}, rng).as_param();
    double err = nc::grad_check<double>(
        [&] { return nc::sum_all(nc::silu(nc::matmul(a, b))); }, {a, b});
    check(err < 1e-6, "grad: matmul + silu finite differences");
  }
  {
    auto x = nc::Tensor<double>::randn({2, 4, 6, 6}, rng).as_param();
    nc::ParamList<double> p;
    auto conv = nc::Conv2dLayer<double>::make(p, "c", 4, 3, 3, 1, 1, rng);
    auto params = p.tensors();
    params.push_back(x);
    double err = nc::grad_check<double>([&] { return nc::sum_all(conv(x)); }, params);
    check(err < 1e-6, "grad: conv2d finite differences");
  }
  {
    auto q = nc::Tensor<double>::randn({6, 8}, rng).as_param();
    auto k = nc::Tensor<double>::randn({6, 8}, rng).as_param();
    auto v2 = nc::Tensor<double>::randn({6, 8}, rng).as_param();
    double err = nc::grad_check<double>(
        [&] { return nc::sum_all(nc::attention(q, k, v2)); }, {q, k, v2});
    check(err < 1e-6, "grad: attention finite differences");
  }

  // Attention token-count law on a small denoiser.
  {
    denoiser::DenoiserConfig dc;
    dc.width0 = 8;
    dc.width1 = 16;
    dc.emb_dim = 16;
    dc.latent_size = 8;
    dc.image_size = 64;
    denoiser::DenoiserModel model(dc, 11);
    std::mt19937_64 r2(3);
    denoiser::BatchElement el;
    el.n_cond = 1;
    el.t = 100;
    size_t latent_n = 4 * 8 * 8;
    std::normal_distribution<double> nd;
    auto rnd = [&](size_t n) {
      std::vector<float> x(n);
      for (auto& y : x) y = static_cast<float>(nd(r2));
      return x;
    };
    for (int i = 0; i < 4; ++i) {
      el.latents.push_back(rnd(latent_n));
      el.cond_latents.push_back(rnd(latent_n));
      el.view_indices.push_back(i == 0 ? 0 : 9 + i);
      el.branch_flags.push_back(i == 0 ? 1 : 0);
    }
    el.cond_images.push_back(rnd(4 * 64 * 64));
    bool prev = nc::debug_checks();
    nc::debug_checks() = false;
    model.net().forward_element(el, 8, 8);
    nc::debug_checks() = prev;
    const auto& tc = model.net().last_token_counts;
    check(tc.size() == 3 && tc[0] == 4 * 64 && tc[1] == 4 * 16 && tc[2] == 4 * 64,
          "attention: token count = (N+M) * h' * w' at every site");
  }

  // Sampler point-mass oracle, epsilon parameterization, quick version.
  {
    std::vector<float> target = {0.7f, -0.4f, 1.1f, 0.0f};
    auto sch = sched::linear_schedule(1000);
    sch.prediction_type = sched::PredictionType::Epsilon;
    std::mt19937_64 r3(5);
    std::normal_distribution<double> nd;
    std::vector<float> zc(4);
    for (auto& x : zc) x = static_cast<float>(nd(r3));
    auto ts = sampling::step_sequence(1000, 75);
    for (size_t i = 0; i < ts.size(); ++i) {
      int t = ts[i], tp = i + 1 < ts.size() ? ts[i + 1] : -1;
      std::vector<float> pred(4);
      for (int j = 0; j < 4; ++j)
        pred[j] = static_cast<float>((zc[j] - sch.alpha_t[t] * target[j]) / sch.gamma_t[t]);
      zc = sampling::ddpm_step(zc, pred, t, tp, sch, r3);
    }
    double e = 0;
    for (int j = 0; j < 4; ++j) e = std::max(e, std::abs(static_cast<double>(zc[j]) - target[j]));
    check(e < 0.05, "sampler: 75-step DDPM point-mass oracle converges");
  }
  std::cout << "selftest passed\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale pose-free multi-view conditional diffusion pipeline"};
  app.require_subcommand(1);

  CommonArgs a_dataset, a_vae, a_diff, a_sample, a_recon, a_eval;
  int stage = 0;
  std::string views_str = "all";

  auto* dataset = app.add_subcommand("dataset", "dataset tools")->require_subcommand(1);
  auto* dataset_build = dataset->add_subcommand("build", "render the synthetic dataset");
  add_common(dataset_build, a_dataset);

  auto* vae = app.add_subcommand("vae", "autoencoder tools")->require_subcommand(1);
  auto* vae_train = vae->add_subcommand("train", "train the mask-aware VAE");
  add_common(vae_train, a_vae);

  auto* diff = app.add_subcommand("diffusion", "denoiser tools")->require_subcommand(1);
  auto* diff_train = diff->add_subcommand("train", "train one denoiser stage");
  diff_train->add_option("--stage", stage, "training stage")->required()->check(CLI::Range(1, 3));
  add_common(diff_train, a_diff);

  auto* sample = app.add_subcommand("sample", "generate views from conditions");
  sample->add_option("--views", views_str, "requested grid views, e.g. 0..7 or 0,4,12 or all");
  add_common(sample, a_sample);

  auto* recon_cmd = app.add_subcommand("reconstruct", "visual-hull reconstruction of a sample run");
  add_common(recon_cmd, a_recon);

  auto* eval_cmd = app.add_subcommand("evaluate", "score a sample run against ground truth");
  add_common(eval_cmd, a_eval);

  app.add_subcommand("selftest", "run quick property checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dataset_build->parsed()) {
      run_dataset_build(resolve({{"out_dir", "data"},
                                 {"n_objects", 64},
                                 {"n_condition_views", 10},
                                 {"image_size", 64},
                                 {"grid_res", 64},
                                 {"seed", 0}},
                                a_dataset));
    } else if (vae_train->parsed()) {
      run_vae_train(resolve({{"dataset_dir", "data"},
                             {"out_dir", "runs/vae"},
                             {"steps", 3000},
                             {"batch_size", 8},
                             {"learning_rate", 1e-3},
                             {"beta_kl", 1e-6},
                             {"holdout_objects", 4},
                             {"seed", 0}},
                            a_vae));
    } else if (diff_train->parsed()) {
      run_diffusion_train(resolve({{"dataset_dir", "data"},
                                   {"mvae_checkpoint", "runs/vae/mvae.ckpt"},
                                   {"out_dir", "runs/diffusion"},
                                   {"steps", 2000},
                                   {"batch_size", 4},
                                   {"keep_views", 8},
                                   {"learning_rate", 2e-3},
                                   {"max_objects", -1},
                                   {"seed", 0}},
                                  a_diff),
                          stage);
    } else if (sample->parsed()) {
      run_sample(resolve({{"dataset_dir", "data"},
                          {"object_index", 0},
                          {"n_conditions", 1},
                          {"mvae_checkpoint", "runs/vae/mvae.ckpt"},
                          {"denoiser_checkpoint", "runs/diffusion/denoiser_stage1.ckpt"},
                          {"out_dir", "runs/sample"},
                          {"steps", 75},
                          {"sampler", "ddpm"},
                          {"seed", 0}},
                         a_sample),
                 views_str);
    } else if (recon_cmd->parsed()) {
      run_reconstruct(resolve({{"run_dir", "runs/sample"}, {"grid_res", 64}}, a_recon));
    } else if (eval_cmd->parsed()) {
      run_evaluate(resolve({{"run_dir", "runs/sample"},
                            {"dataset_dir", "data"},
                            {"object_index", 0},
                            {"out_dir", "runs/eval"}},
                           a_eval));
    } else {
      run_selftest();
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
