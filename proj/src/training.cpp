#include "mvdpp/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mvdpp::training {

void StageConfig::validate() const {
  if (stage < 1 || stage > 3) throw std::invalid_argument("stage must be 1, 2, or 3");
  if (keep_views < 1 || keep_views > denoiser::kGenEmbeddings)
    throw std::invalid_argument("keep_views must be in [1, 32]");
  bool ok = (stage == 1 && prediction_type == sched::PredictionType::Epsilon && condition_mode == ConditionMode::Single) ||
            (stage == 2 && prediction_type == sched::PredictionType::Velocity && condition_mode == ConditionMode::Single) ||
            (stage == 3 && prediction_type == sched::PredictionType::Velocity && condition_mode == ConditionMode::Mixed);
  if (!ok) throw std::invalid_argument("stage/prediction/conditioning combination violates the stage contract");
}

StageConfig StageConfig::defaults_for_stage(int stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1:
      c.prediction_type = sched::PredictionType::Epsilon;
      c.condition_mode = ConditionMode::Single;
      break;
    case 2:
      c.prediction_type = sched::PredictionType::Velocity;
      c.condition_mode = ConditionMode::Single;
      break;
    case 3:
      c.prediction_type = sched::PredictionType::Velocity;
      c.condition_mode = ConditionMode::Mixed;
      break;
    default:
      throw std::invalid_argument("stage must be 1, 2, or 3");
  }
  return c;
}

std::vector<int> dropout_views(int m_total, int keep, std::mt19937_64& rng) {
  if (keep < 1 || keep > m_total) throw std::invalid_argument("dropout_views: keep out of range");
  // Partial Fisher-Yates over the index pool.
  std::vector<int> pool(m_total);
  for (int i = 0; i < m_total; ++i) pool[i] = i;
  for (int i = 0; i < keep; ++i) {
    std::uniform_int_distribution<int> d(i, m_total - 1);
    std::swap(pool[i], pool[d(rng)]);
  }
  std::vector<int> subset(pool.begin(), pool.begin() + keep);
  std::sort(subset.begin(), subset.end());
  return subset;
}

std::vector<int> sample_conditions(int n_available, ConditionMode mode, std::mt19937_64& rng) {
  if (n_available < denoiser::kCondEmbeddings)
    throw std::invalid_argument("sample_conditions: example must have 10 condition views");
  if (mode == ConditionMode::Single) return {0};
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < 0.5) return {0};
  std::uniform_int_distribution<int> nd(2, 10);
  int n = nd(rng);
  // Reference always included; the remaining n-1 come from views 1..9.
  std::vector<int> others = dropout_views(denoiser::kCondEmbeddings - 1, n - 1, rng);
  std::vector<int> out = {0};
  for (int o : others) out.push_back(o + 1);
  return out;
}

nc::Tensor<float> mvldm_loss(const std::vector<nc::Tensor<float>>& predictions,
                             const std::vector<std::vector<std::vector<float>>>& targets) {
  if (predictions.empty() || predictions.size() != targets.size())
    throw std::invalid_argument("mvldm_loss: batch size mismatch");
  std::vector<nc::Tensor<float>> flat_preds;
  std::vector<float> flat_targets;
  for (size_t b = 0; b < predictions.size(); ++b) {
    const auto& p = predictions[b];
    size_t plane = static_cast<size_t>(p.shape()[1]) * p.shape()[2] * p.shape()[3];
    if (static_cast<size_t>(p.shape()[0]) != targets[b].size())
      throw std::invalid_argument("mvldm_loss: view count mismatch");
    flat_preds.push_back(nc::reshape(p, {static_cast<int>(p.numel())}));
    for (const auto& t : targets[b]) {
      if (t.size() != plane) throw std::invalid_argument("mvldm_loss: target size mismatch");
      flat_targets.insert(flat_targets.end(), t.begin(), t.end());
    }
  }
  auto pred = flat_preds.size() == 1 ? flat_preds[0] : nc::concat(flat_preds, 0);
  int total = static_cast<int>(flat_targets.size());
  auto target = nc::Tensor<float>::from_data({total}, std::move(flat_targets));
  return nc::mse_loss(pred, target);
}

namespace {

std::vector<float> pack_view_planar(const synth::RenderedView& v) {
  int H = v.rgb.height, W = v.rgb.width;
  std::vector<float> data(static_cast<size_t>(4) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) data[(static_cast<size_t>(c) * H + y) * W + x] = v.rgb.at(y, x, c);
      data[(static_cast<size_t>(3) * H + y) * W + x] = v.mask.at(y, x);
    }
  return data;
}

std::vector<float> gaussian_vec(size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(d(rng));
  return v;
}

}  // namespace

std::vector<PreparedObject> prepare_objects(const std::string& dataset_dir, const mvae::MvaeModel& mvae_model,
                                            int max_objects) {
  synth::DatasetManifest manifest = synth::load_manifest(dataset_dir);
  int H = manifest.config.image_size;
  int n = static_cast<int>(manifest.entries.size());
  if (max_objects > 0) n = std::min(n, max_objects);
  std::vector<PreparedObject> out;
  for (int i = 0; i < n; ++i) {
    const auto& e = manifest.entries[i];
    PreparedObject obj;
    for (const auto& rec : e.condition_views) {
      synth::RenderedView v = synth::load_view(dataset_dir, rec, H);
      obj.cond_latents.push_back(mvae_model.encode(v.rgb, v.mask).data);
      obj.cond_images.push_back(pack_view_planar(v));
    }
    for (const auto& rec : e.target_views) {
      synth::RenderedView v = synth::load_view(dataset_dir, rec, H);
      obj.target_latents.push_back(mvae_model.encode(v.rgb, v.mask).data);
    }
    out.push_back(std::move(obj));
  }
  return out;
}

TrainStageResult train_stage(const std::vector<PreparedObject>& objects,
                             const std::vector<float>& white_latent, denoiser::DenoiserModel& model,
                             const StageConfig& config, const std::string& checkpoint_path,
                             const std::string& csv_path) {
  config.validate();
  if (objects.empty()) throw std::invalid_argument("train_stage: no training objects");

  // Stage 1 trains epsilon prediction on the plain linear schedule; the
  // velocity stages switch to the Zero-SNR-rescaled schedule.
  sched::NoiseSchedule schedule = sched::linear_schedule(1000);
  if (config.prediction_type == sched::PredictionType::Velocity)
    schedule = sched::rescale_zero_snr(schedule);
  schedule.prediction_type = config.prediction_type;
  model.schedule = schedule;

  auto params = model.net().params.tensors();
  nc::AdamW<float> opt(config.learning_rate, 0.9, 0.999, 1e-8, 1e-4);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<size_t> obj_pick(0, objects.size() - 1);
  std::uniform_int_distribution<int> t_pick(0, schedule.T - 1);

  int h = model.config().latent_size;
  size_t latent_n = static_cast<size_t>(denoiser::kLatentChannels) * h * h;

  bool prev_checks = nc::debug_checks();
  nc::debug_checks() = false;

  TrainStageResult result;
  std::vector<std::vector<float>> last_good;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<nc::Tensor<float>> preds;
    std::vector<std::vector<std::vector<float>>> targets;
    for (int b = 0; b < config.batch_size; ++b) {
      const PreparedObject& obj = objects[obj_pick(rng)];
      std::vector<int> conds = sample_conditions(denoiser::kCondEmbeddings, config.condition_mode, rng);
      std::vector<int> kept = dropout_views(denoiser::kGenEmbeddings, config.keep_views, rng);
      int t = t_pick(rng);

      denoiser::BatchElement el;
      el.n_cond = static_cast<int>(conds.size());
      el.t = t;
      std::vector<std::vector<float>> el_targets;
      auto push_view = [&](const std::vector<float>& z0, const std::vector<float>& cond_latent,
                           int view_index, bool is_cond) {
        std::vector<float> eps = gaussian_vec(latent_n, rng);
        std::vector<float> zt, target;
        sched::add_noise(z0, eps, t, schedule, zt);
        if (config.prediction_type == sched::PredictionType::Epsilon)
          target = eps;
        else
          sched::to_velocity(z0, eps, t, schedule, target);
        el.latents.push_back(std::move(zt));
        el.cond_latents.push_back(cond_latent);
        el.view_indices.push_back(view_index);
        el.branch_flags.push_back(is_cond ? 1 : 0);
        el_targets.push_back(std::move(target));
      };
      for (int ci : conds) {
        push_view(obj.cond_latents[ci], obj.cond_latents[ci], ci, true);
        el.cond_images.push_back(obj.cond_images[ci]);
      }
      for (int gi : kept)
        push_view(obj.target_latents[gi], white_latent, denoiser::kCondEmbeddings + gi, false);

      preds.push_back(model.net().forward_element(el, h, h));
      targets.push_back(std::move(el_targets));
    }

    nc::zero_grad(params);
    auto loss = mvldm_loss(preds, targets);
    double lv = loss.item();
    if (!std::isfinite(lv)) {
      if (!last_good.empty())
        for (size_t i = 0; i < params.size(); ++i) params[i].val() = last_good[i];
      model.stage = config.stage;
      model.save(checkpoint_path);
      nc::debug_checks() = prev_checks;
      throw std::runtime_error("train_stage: loss diverged at step " + std::to_string(step) +
                               "; last good checkpoint written to " + checkpoint_path);
    }
    nc::backward(loss);
    double lr = config.learning_rate * 0.5 * (1.0 + std::cos(M_PI * step / config.steps));
    opt.set_lr(lr);
    opt.step(params);
    result.loss_curve.push_back(lv);
    result.lr_curve.push_back(lr);

    if (step % 100 == 0) {
      last_good.clear();
      for (const auto& p : params) last_good.push_back(p.val());
    }
  }
  nc::debug_checks() = prev_checks;

  int smooth = std::min<int>(50, config.steps);
  for (int i = 0; i < smooth; ++i) {
    result.initial_smoothed_loss += result.loss_curve[i] / smooth;
    result.final_smoothed_loss += result.loss_curve[config.steps - 1 - i] / smooth;
  }

  model.stage = config.stage;
  model.save(checkpoint_path);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("train_stage: cannot write " + csv_path);
    out << "step,loss,lr\n";
    for (size_t i = 0; i < result.loss_curve.size(); ++i)
      out << i << ',' << result.loss_curve[i] << ',' << result.lr_curve[i] << '\n';
  }
  return result;
}

}  // namespace mvdpp::training
