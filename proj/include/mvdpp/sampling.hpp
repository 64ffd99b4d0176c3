#pragma once

// Reverse-process generation. DDPM (default) and DDIM (eta=0) samplers run
// 75 strided steps over the 1000-step schedule; condition views are re-noised
// from their known clean latents at every step while the requested generation
// views evolve from pure noise.

#include "mvdpp/denoiser.hpp"
#include "mvdpp/mvae.hpp"
#include "mvdpp/schedule.hpp"
#include "mvdpp/synthdata.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace mvdpp::sampling {

enum class SamplerType { Ddpm, Ddim };

inline constexpr double kZ0Clamp = 4.0;  // latent-space guard on z0-hat

// Descending timestep sequence: `steps` values ending at 0's successor
// region, last entry is T-1 when read front-to-back descending.
std::vector<int> step_sequence(int T, int steps);

// Converts a model prediction at step t to (z0_hat, eps_hat) per the
// schedule's prediction type, with z0_hat clamped to [-c, c].
void prediction_to_z0_eps(const std::vector<float>& z_t, const std::vector<float>& prediction,
                          int t, const sched::NoiseSchedule& s, std::vector<float>& z0_hat,
                          std::vector<float>& eps_hat);

// One strided DDPM posterior step from t to t_prev (t_prev < 0 means the
// final step: returns the posterior mean exactly, no noise added).
std::vector<float> ddpm_step(const std::vector<float>& z_t, const std::vector<float>& prediction,
                             int t, int t_prev, const sched::NoiseSchedule& s, std::mt19937_64& rng);

// Deterministic DDIM (eta=0) step from t to t_prev.
std::vector<float> ddim_step(const std::vector<float>& z_t, const std::vector<float>& prediction,
                             int t, int t_prev, const sched::NoiseSchedule& s);

struct GeneratedView {
  int view_index = 0;  // grid slot in [0, 32)
  img::ImageRGB rgb;
  img::Mask mask;                // mask_prob thresholded at 0.5
  std::vector<float> mask_prob;  // decoded probabilities
};

struct GenerateOptions {
  std::vector<int> views;  // requested grid slots, subset of {0..31}
  int steps = 75;
  SamplerType sampler = SamplerType::Ddpm;
  std::uint64_t seed = 0;
};

// Joint sampling over condition + requested generation views.
std::vector<GeneratedView> generate(const denoiser::DenoiserModel& model, const mvae::MvaeModel& vae,
                                    const std::vector<synth::RenderedView>& condition_views,
                                    const GenerateOptions& opts);

}  // namespace mvdpp::sampling
