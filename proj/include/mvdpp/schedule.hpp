#pragma once

// Noise schedules and prediction-target algebra. alpha_t = sqrt(alpha_bar_t)
// and gamma_t = sqrt(1 - alpha_bar_t), so alpha^2 + gamma^2 = 1 at every
// step and (z0, eps) <-> (z_t, v) conversions are exact rotations.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvdpp::sched {

enum class PredictionType { Epsilon, Velocity };

std::string to_string(PredictionType p);
PredictionType prediction_type_from_string(const std::string& s);

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // [T]
  std::vector<double> alpha_bar;  // [T], cumulative products of (1-beta)
  std::vector<double> alpha_t;    // sqrt(alpha_bar)
  std::vector<double> gamma_t;    // sqrt(1-alpha_bar)
  PredictionType prediction_type = PredictionType::Epsilon;
  bool zero_snr = false;
  double beta_start = 0, beta_end = 0;
};

NoiseSchedule linear_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

// Affine rescale of the sqrt(alpha_bar) sequence: first step unchanged,
// terminal step exactly zero; beta recomputed from the new alpha_bar.
NoiseSchedule rescale_zero_snr(const NoiseSchedule& s);

// z_t = alpha_t z0 + gamma_t eps, elementwise over equal-size buffers.
void add_noise(const std::vector<float>& z0, const std::vector<float>& eps, int t,
               const NoiseSchedule& s, std::vector<float>& z_t);

// v = alpha_t eps - gamma_t z0.
void to_velocity(const std::vector<float>& z0, const std::vector<float>& eps, int t,
                 const NoiseSchedule& s, std::vector<float>& v);

// z0 = alpha_t z_t - gamma_t v; eps = gamma_t z_t + alpha_t v.
void from_velocity(const std::vector<float>& z_t, const std::vector<float>& v, int t,
                   const NoiseSchedule& s, std::vector<float>& z0, std::vector<float>& eps);

// alpha_bar / (1 - alpha_bar); throws on the degenerate alpha_bar = 1.
double snr(int t, const NoiseSchedule& s);

}  // namespace mvdpp::sched
