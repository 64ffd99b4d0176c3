#include "mvdpp/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace mvdpp::sampling {

namespace {

void check_finite(const std::vector<float>& v, const char* what) {
  for (float x : v)
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

double alpha_bar_at(const sched::NoiseSchedule& s, int t) {
  return t < 0 ? 1.0 : s.alpha_bar[t];
}

}  // namespace

std::vector<int> step_sequence(int T, int steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("step_sequence: steps out of range");
  // Evenly strided, descending, always starting at T-1.
  std::vector<int> ts(steps);
  for (int i = 0; i < steps; ++i)
    ts[i] = static_cast<int>(static_cast<std::int64_t>(steps - i) * T / steps) - 1;
  return ts;
}

void prediction_to_z0_eps(const std::vector<float>& z_t, const std::vector<float>& prediction,
                          int t, const sched::NoiseSchedule& s, std::vector<float>& z0_hat,
                          std::vector<float>& eps_hat) {
  if (t < 0 || t >= s.T) throw std::invalid_argument("prediction_to_z0_eps: t out of range");
  if (z_t.size() != prediction.size())
    throw std::invalid_argument("prediction_to_z0_eps: size mismatch");
  check_finite(z_t, "z_t");
  check_finite(prediction, "prediction");
  double a = s.alpha_t[t], g = s.gamma_t[t];
  size_t n = z_t.size();
  z0_hat.resize(n);
  eps_hat.resize(n);
  if (s.prediction_type == sched::PredictionType::Epsilon) {
    if (a <= 0) throw std::invalid_argument("prediction_to_z0_eps: epsilon prediction at alpha_t = 0");
    for (size_t i = 0; i < n; ++i) z0_hat[i] = static_cast<float>((z_t[i] - g * prediction[i]) / a);
  } else {
    for (size_t i = 0; i < n; ++i) z0_hat[i] = static_cast<float>(a * z_t[i] - g * prediction[i]);
  }
  for (auto& v : z0_hat) v = static_cast<float>(std::clamp<double>(v, -kZ0Clamp, kZ0Clamp));
  if (g > 0) {
    for (size_t i = 0; i < n; ++i) eps_hat[i] = static_cast<float>((z_t[i] - a * z0_hat[i]) / g);
  } else {
    // alpha_bar = 1 only happens off-schedule; fall back to the raw algebra.
    for (size_t i = 0; i < n; ++i)
      eps_hat[i] = s.prediction_type == sched::PredictionType::Epsilon
                       ? prediction[i]
                       : static_cast<float>(g * z_t[i] + a * prediction[i]);
  }
}

std::vector<float> ddpm_step(const std::vector<float>& z_t, const std::vector<float>& prediction,
                             int t, int t_prev, const sched::NoiseSchedule& s, std::mt19937_64& rng) {
  if (t_prev >= t) throw std::invalid_argument("ddpm_step: t_prev must be < t");
  std::vector<float> z0, eps;
  prediction_to_z0_eps(z_t, prediction, t, s, z0, eps);
  double a_t = s.alpha_bar[t];
  double a_prev = alpha_bar_at(s, t_prev);
  double alpha_step = a_t / a_prev;  // product of per-step alphas over the stride
  double beta_step = 1.0 - alpha_step;
  double denom = 1.0 - a_t;
  double c0 = std::sqrt(a_prev) * beta_step / denom;
  double ct = std::sqrt(alpha_step) * (1.0 - a_prev) / denom;
  double var = (1.0 - a_prev) / denom * beta_step;
  bool final_step = t_prev < 0;

  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<float> out(z_t.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double mean = c0 * z0[i] + ct * z_t[i];
    double noise = final_step ? 0.0 : nd(rng) * std::sqrt(std::max(0.0, var));
    out[i] = static_cast<float>(mean + noise);
  }
  return out;
}

std::vector<float> ddim_step(const std::vector<float>& z_t, const std::vector<float>& prediction,
                             int t, int t_prev, const sched::NoiseSchedule& s) {
  if (t_prev >= t) throw std::invalid_argument("ddim_step: t_prev must be < t");
  std::vector<float> z0, eps;
  prediction_to_z0_eps(z_t, prediction, t, s, z0, eps);
  double a_prev = alpha_bar_at(s, t_prev);
  double ca = std::sqrt(a_prev), cg = std::sqrt(1.0 - a_prev);
  std::vector<float> out(z_t.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(ca * z0[i] + cg * eps[i]);
  return out;
}

std::vector<GeneratedView> generate(const denoiser::DenoiserModel& model, const mvae::MvaeModel& vae,
                                    const std::vector<synth::RenderedView>& condition_views,
                                    const GenerateOptions& opts) {
  int n_cond = static_cast<int>(condition_views.size());
  if (n_cond < 1 || n_cond > denoiser::kCondEmbeddings)
    throw std::invalid_argument("generate: need 1..10 condition views");
  if (opts.views.empty()) throw std::invalid_argument("generate: empty view request");
  std::set<int> seen;
  for (int v : opts.views) {
    if (v < 0 || v >= denoiser::kGenEmbeddings)
      throw std::invalid_argument("generate: view index out of [0, 32)");
    if (!seen.insert(v).second) throw std::invalid_argument("generate: duplicate view request");
  }
  int n_gen = static_cast<int>(opts.views.size());
  const auto& cfg = model.config();
  int h = cfg.latent_size;
  size_t latent_n = static_cast<size_t>(denoiser::kLatentChannels) * h * h;

  // Clean condition latents, packed condition images, and the white latent
  // that fills the generation views' condition channel.
  std::vector<std::vector<float>> cond_z0, cond_images;
  for (const auto& v : condition_views) {
    if (v.rgb.height != cfg.image_size || v.rgb.width != cfg.image_size)
      throw std::invalid_argument("generate: condition image size mismatch");
    cond_z0.push_back(vae.encode(v.rgb, v.mask).data);
    int H = cfg.image_size;
    std::vector<float> packed(static_cast<size_t>(4) * H * H);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < H; ++x) {
        for (int c = 0; c < 3; ++c)
          packed[(static_cast<size_t>(c) * H + y) * H + x] = v.rgb.at(y, x, c);
        packed[(static_cast<size_t>(3) * H + y) * H + x] = v.mask.at(y, x);
      }
    cond_images.push_back(std::move(packed));
  }
  std::vector<float> white = vae.white_latent(cfg.image_size).data;

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::vector<float>> gen_z(n_gen, std::vector<float>(latent_n));
  for (auto& z : gen_z)
    for (auto& x : z) x = static_cast<float>(nd(rng));

  std::vector<int> ts = step_sequence(model.schedule.T, opts.steps);
  bool prev_checks = nc::debug_checks();
  nc::debug_checks() = false;

  for (size_t si = 0; si < ts.size(); ++si) {
    int t = ts[si];
    int t_prev = si + 1 < ts.size() ? ts[si + 1] : -1;

    denoiser::BatchElement el;
    el.n_cond = n_cond;
    el.t = t;
    for (int ci = 0; ci < n_cond; ++ci) {
      std::vector<float> eps(latent_n), zt;
      for (auto& x : eps) x = static_cast<float>(nd(rng));
      sched::add_noise(cond_z0[ci], eps, t, model.schedule, zt);
      el.latents.push_back(std::move(zt));
      el.cond_latents.push_back(cond_z0[ci]);
      el.view_indices.push_back(ci);
      el.branch_flags.push_back(1);
    }
    for (int gi = 0; gi < n_gen; ++gi) {
      el.latents.push_back(gen_z[gi]);
      el.cond_latents.push_back(white);
      el.view_indices.push_back(denoiser::kCondEmbeddings + opts.views[gi]);
      el.branch_flags.push_back(0);
    }
    el.cond_images = cond_images;

    auto pred = model.net().forward_element(el, h, h);
    const auto& pv = pred.val();
    for (int gi = 0; gi < n_gen; ++gi) {
      std::vector<float> p(pv.begin() + static_cast<size_t>(n_cond + gi) * latent_n,
                           pv.begin() + static_cast<size_t>(n_cond + gi + 1) * latent_n);
      gen_z[gi] = opts.sampler == SamplerType::Ddpm
                      ? ddpm_step(gen_z[gi], p, t, t_prev, model.schedule, rng)
                      : ddim_step(gen_z[gi], p, t, t_prev, model.schedule);
    }
  }
  nc::debug_checks() = prev_checks;

  std::vector<GeneratedView> out;
  for (int gi = 0; gi < n_gen; ++gi) {
    mvae::LatentImage z;
    z.h = h;
    z.w = h;
    z.data = gen_z[gi];
    auto d = vae.decode(z);
    GeneratedView g;
    g.view_index = opts.views[gi];
    g.rgb = std::move(d.rgb);
    g.mask_prob = std::move(d.mask_prob);
    g.mask = img::Mask::zeros(d.height, d.width);
    for (size_t i = 0; i < g.mask_prob.size(); ++i) g.mask.data[i] = g.mask_prob[i] > 0.5f ? 1 : 0;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace mvdpp::sampling
