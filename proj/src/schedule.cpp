#include "mvdpp/schedule.hpp"

#include <cmath>

namespace mvdpp::sched {

std::string to_string(PredictionType p) {
  return p == PredictionType::Epsilon ? "epsilon" : "velocity";
}

PredictionType prediction_type_from_string(const std::string& s) {
  if (s == "epsilon") return PredictionType::Epsilon;
  if (s == "velocity") return PredictionType::Velocity;
  throw std::invalid_argument("unknown prediction type: " + s);
}

NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("linear_schedule: T must be >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
    throw std::invalid_argument("linear_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(T);
  s.alpha_bar.resize(T);
  s.alpha_t.resize(T);
  s.gamma_t.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.beta[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    prod *= 1.0 - s.beta[t];
    s.alpha_bar[t] = prod;
    s.alpha_t[t] = std::sqrt(prod);
    s.gamma_t[t] = std::sqrt(1.0 - prod);
  }
  return s;
}

NoiseSchedule rescale_zero_snr(const NoiseSchedule& in) {
  if (in.T < 2) throw std::invalid_argument("rescale_zero_snr: need T >= 2");
  if (!(in.alpha_t.back() > 0)) throw std::invalid_argument("rescale_zero_snr: terminal alpha already zero");
  NoiseSchedule s = in;
  double a0 = in.alpha_t.front(), aT = in.alpha_t.back();
  // shift so the last entry hits zero, scale so the first is preserved
  for (int t = 0; t < s.T; ++t) {
    double a = (in.alpha_t[t] - aT) * a0 / (a0 - aT);
    s.alpha_t[t] = a;
    s.alpha_bar[t] = a * a;
    s.gamma_t[t] = std::sqrt(1.0 - a * a);
  }
  s.beta[0] = 1.0 - s.alpha_bar[0];
  for (int t = 1; t < s.T; ++t)
    s.beta[t] = 1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1];
  s.zero_snr = true;
  return s;
}

namespace {

void check_t(int t, const NoiseSchedule& s) {
  if (t < 0 || t >= s.T) throw std::invalid_argument("timestep out of range: " + std::to_string(t));
}

void check_same(size_t a, size_t b) {
  if (a != b) throw std::invalid_argument("schedule op: buffer size mismatch");
}

}  // namespace

void add_noise(const std::vector<float>& z0, const std::vector<float>& eps, int t,
               const NoiseSchedule& s, std::vector<float>& z_t) {
  check_t(t, s);
  check_same(z0.size(), eps.size());
  z_t.resize(z0.size());
  float a = static_cast<float>(s.alpha_t[t]), g = static_cast<float>(s.gamma_t[t]);
  for (size_t i = 0; i < z0.size(); ++i) z_t[i] = a * z0[i] + g * eps[i];
}

void to_velocity(const std::vector<float>& z0, const std::vector<float>& eps, int t,
                 const NoiseSchedule& s, std::vector<float>& v) {
  check_t(t, s);
  check_same(z0.size(), eps.size());
  v.resize(z0.size());
  float a = static_cast<float>(s.alpha_t[t]), g = static_cast<float>(s.gamma_t[t]);
  for (size_t i = 0; i < z0.size(); ++i) v[i] = a * eps[i] - g * z0[i];
}

void from_velocity(const std::vector<float>& z_t, const std::vector<float>& v, int t,
                   const NoiseSchedule& s, std::vector<float>& z0, std::vector<float>& eps) {
  check_t(t, s);
  check_same(z_t.size(), v.size());
  z0.resize(z_t.size());
  eps.resize(z_t.size());
  float a = static_cast<float>(s.alpha_t[t]), g = static_cast<float>(s.gamma_t[t]);
  for (size_t i = 0; i < z_t.size(); ++i) {
    z0[i] = a * z_t[i] - g * v[i];
    eps[i] = g * z_t[i] + a * v[i];
  }
}

double snr(int t, const NoiseSchedule& s) {
  check_t(t, s);
  double ab = s.alpha_bar[t];
  if (ab >= 1.0) throw std::invalid_argument("snr: degenerate alpha_bar = 1");
  return ab / (1.0 - ab);
}

}  // namespace mvdpp::sched
