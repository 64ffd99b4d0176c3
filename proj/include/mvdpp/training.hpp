#pragma once

// View dropout, condition-view sampling, the multi-view denoising loss, and
// the three-stage training driver (epsilon single -> velocity single ->
// velocity mixed conditioning).

#include "mvdpp/denoiser.hpp"
#include "mvdpp/mvae.hpp"
#include "mvdpp/schedule.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mvdpp::training {

enum class ConditionMode { Single, Mixed };

struct StageConfig {
  int stage = 1;  // 1, 2, or 3
  sched::PredictionType prediction_type = sched::PredictionType::Epsilon;
  ConditionMode condition_mode = ConditionMode::Single;
  int steps = 2000;
  int batch_size = 4;
  int keep_views = 8;  // generation views kept per example per iteration
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;

  void validate() const;
  static StageConfig defaults_for_stage(int stage);
};

// Uniform random subset of {0..m_total-1} without replacement, sorted.
std::vector<int> dropout_views(int m_total, int keep, std::mt19937_64& rng);

// Indices into the example's 10 condition views; index 0 (the reference) is
// always included. Single mode: exactly {0}. Mixed mode: {0} with
// probability 1/2, otherwise N uniform in [2,10] including the reference.
std::vector<int> sample_conditions(int n_available, ConditionMode mode, std::mt19937_64& rng);

// Mean squared error over batch, views, channels, and pixels (Eq. form:
// every view present in the batch is supervised, condition views included).
nc::Tensor<float> mvldm_loss(const std::vector<nc::Tensor<float>>& predictions,
                             const std::vector<std::vector<std::vector<float>>>& targets);

struct TrainStageResult {
  std::vector<double> loss_curve;
  std::vector<double> lr_curve;
  double initial_smoothed_loss = 0;
  double final_smoothed_loss = 0;
};

// Precomputed per-object training data: clean latents for every view plus
// packed condition images.
struct PreparedObject {
  std::vector<std::vector<float>> cond_latents;    // 10 x [4*h*w]
  std::vector<std::vector<float>> target_latents;  // 32 x [4*h*w]
  std::vector<std::vector<float>> cond_images;     // 10 x [4*H*W]
};

std::vector<PreparedObject> prepare_objects(const std::string& dataset_dir, const mvae::MvaeModel& mvae_model,
                                            int max_objects = -1);

// Runs one training stage. `model` must carry the predecessor stage's
// weights for stage > 1 (checked by the caller/CLI via checkpoint stage
// numbers). Writes a (step, loss, lr) CSV when csv_path is non-empty.
TrainStageResult train_stage(const std::vector<PreparedObject>& objects,
                             const std::vector<float>& white_latent, denoiser::DenoiserModel& model,
                             const StageConfig& config, const std::string& checkpoint_path,
                             const std::string& csv_path = "");

}  // namespace mvdpp::training
