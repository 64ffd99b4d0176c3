#include "mvdpp/mvae.hpp"

#include "mvdpp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace mvdpp::mvae {

namespace {

constexpr std::uint64_t kDefaultInitSeed = 0x6d766165;  // arbitrary fixed init

void copy_params_from_checkpoint(nc::ParamList<float>& params, const ckpt::Checkpoint& c) {
  for (auto& [name, tensor] : params.items) {
    const auto& t = c.find(name);
    if (static_cast<std::int64_t>(t.data.size()) != tensor.numel())
      throw std::runtime_error("checkpoint: size mismatch for " + name);
    tensor.val() = t.data;
  }
}

void params_to_checkpoint(const nc::ParamList<float>& params, ckpt::Checkpoint& c) {
  for (const auto& [name, tensor] : params.items) {
    ckpt::NamedTensor t;
    t.name = name;
    t.shape = tensor.shape();
    t.data = tensor.val();
    c.tensors.push_back(std::move(t));
  }
}

}  // namespace

MvaeModel::MvaeModel() : MvaeModel(kDefaultInitSeed) {}

MvaeModel::MvaeModel(std::uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  net_ = MvaeNet<float>::make(rng);
}

LatentImage MvaeModel::encode(const img::ImageRGB& rgb, const img::Mask& mask) const {
  if (rgb.height % kCompression != 0 || rgb.width % kCompression != 0)
    throw std::invalid_argument("encode: image size must be divisible by 8");
  if (mask.height != rgb.height || mask.width != rgb.width)
    throw std::invalid_argument("encode: mask size mismatch");
  auto x = pack_rgbm<float>(rgb, mask);
  auto [mu, logvar] = net_.encode_dist(x);
  LatentImage z;
  z.h = rgb.height / kCompression;
  z.w = rgb.width / kCompression;
  z.data = mu.val();
  for (auto& v : z.data) v *= latent_scale_;
  return z;
}

MvaeModel::Decoded MvaeModel::decode(const LatentImage& z) const {
  for (float v : z.data)
    if (!std::isfinite(v)) throw std::invalid_argument("decode: non-finite latent");
  std::vector<float> data = z.data;
  for (auto& v : data) v /= latent_scale_;
  auto zt = nc::Tensor<float>::from_data({1, kLatentChannels, z.h, z.w}, std::move(data));
  auto out = net_.decode_raw(zt);
  int H = z.h * kCompression, W = z.w * kCompression;
  Decoded d;
  d.height = H;
  d.width = W;
  d.rgb.height = H;
  d.rgb.width = W;
  d.rgb.data.resize(static_cast<size_t>(H) * W * 3);
  d.mask_prob.resize(static_cast<size_t>(H) * W);
  const auto& ov = out.val();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float logit = ov[(static_cast<size_t>(3) * H + y) * W + x];
      float mp = 1.0f / (1.0f + std::exp(-logit));
      d.mask_prob[static_cast<size_t>(y) * W + x] = mp;
      for (int c = 0; c < 3; ++c) {
        float v = ov[(static_cast<size_t>(c) * H + y) * W + x];
        v = std::min(1.0f, std::max(0.0f, v));
        // Composite over the white background with the predicted mask; the
        // renderer always uses a white backdrop, so this is lossless there.
        d.rgb.at(y, x, c) = mp * v + (1.0f - mp);
      }
    }
  return d;
}

LatentImage MvaeModel::white_latent(int image_size) const {
  img::ImageRGB white = img::ImageRGB::filled(image_size, image_size, 1, 1, 1);
  img::Mask ones = img::Mask::zeros(image_size, image_size);
  std::fill(ones.data.begin(), ones.data.end(), 1);
  return encode(white, ones);
}

void MvaeModel::save(const std::string& path) const {
  ckpt::Checkpoint c;
  c.meta = {{"kind", "mvae"}, {"latent_scale", latent_scale_}};
  params_to_checkpoint(net_.params, c);
  ckpt::save_checkpoint(path, c);
}

MvaeModel MvaeModel::load(const std::string& path) {
  ckpt::Checkpoint c = ckpt::load_checkpoint(path);
  if (c.meta.value("kind", "") != "mvae")
    throw std::runtime_error("load: not an mvae checkpoint: " + path);
  MvaeModel m;
  copy_params_from_checkpoint(m.net_.params, c);
  m.latent_scale_ = c.meta.at("latent_scale").get<float>();
  return m;
}

namespace {

struct LoadedView {
  std::vector<float> rgbm;  // packed [4,H,W]
};

std::vector<float> pack_view(const synth::RenderedView& v) {
  int H = v.rgb.height, W = v.rgb.width;
  std::vector<float> data(static_cast<size_t>(4) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) data[(static_cast<size_t>(c) * H + y) * W + x] = v.rgb.at(y, x, c);
      data[(static_cast<size_t>(3) * H + y) * W + x] = v.mask.at(y, x);
    }
  return data;
}

}  // namespace

void evaluate_mvae(const MvaeModel& model, const std::string& dataset_dir, int holdout_objects,
                   double* psnr_out, double* iou_out) {
  synth::DatasetManifest m = synth::load_manifest(dataset_dir);
  int n = static_cast<int>(m.entries.size());
  int first_holdout = std::max(0, n - holdout_objects);
  double psnr_acc = 0, iou_acc = 0;
  int count = 0;
  for (int i = first_holdout; i < n; ++i) {
    std::vector<synth::DatasetViewRecord> views = m.entries[i].condition_views;
    views.insert(views.end(), m.entries[i].target_views.begin(), m.entries[i].target_views.end());
    for (const auto& rec : views) {
      synth::RenderedView v = synth::load_view(dataset_dir, rec, m.config.image_size);
      LatentImage z = model.encode(v.rgb, v.mask);
      auto d = model.decode(z);
      double p = metrics::psnr(d.rgb, v.rgb);
      psnr_acc += std::isinf(p) ? 100.0 : p;
      std::int64_t inter = 0, uni = 0;
      for (int pix = 0; pix < d.height * d.width; ++pix) {
        bool a = d.mask_prob[pix] > 0.5f;
        bool b = v.mask.data[pix] != 0;
        inter += a && b;
        uni += a || b;
      }
      iou_acc += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
      ++count;
    }
  }
  if (count == 0) throw std::runtime_error("evaluate_mvae: no held-out views");
  *psnr_out = psnr_acc / count;
  *iou_out = iou_acc / count;
}

MvaeTrainReport train_mvae(const std::string& dataset_dir, const MvaeTrainConfig& config,
                           const std::string& checkpoint_path, MvaeModel* out_model) {
  synth::DatasetManifest manifest = synth::load_manifest(dataset_dir);
  int n_objects = static_cast<int>(manifest.entries.size());
  int n_train = n_objects - config.holdout_objects;
  if (n_train < 1) throw std::invalid_argument("train_mvae: not enough objects for the holdout split");
  int H = manifest.config.image_size;

  std::vector<LoadedView> views;
  for (int i = 0; i < n_train; ++i) {
    const auto& e = manifest.entries[i];
    for (const auto& rec : e.condition_views)
      views.push_back({pack_view(synth::load_view(dataset_dir, rec, H))});
    for (const auto& rec : e.target_views)
      views.push_back({pack_view(synth::load_view(dataset_dir, rec, H))});
  }

  MvaeModel model(kDefaultInitSeed ^ config.seed);
  auto params = model.net().params.tensors();
  nc::AdamW<float> opt(config.learning_rate, 0.9, 0.999, 1e-8, 1e-4);

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<size_t> pick(0, views.size() - 1);
  int h = H / kCompression;

  bool prev_checks = nc::debug_checks();
  nc::debug_checks() = false;

  MvaeTrainReport report;
  std::vector<std::vector<float>> last_good;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<float> batch(static_cast<size_t>(config.batch_size) * 4 * H * H);
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& v = views[pick(rng)].rgbm;
      std::copy(v.begin(), v.end(), batch.begin() + static_cast<size_t>(b) * 4 * H * H);
    }
    auto x = nc::Tensor<float>::from_data({config.batch_size, 4, H, H}, std::move(batch));
    auto noise = nc::Tensor<float>::randn({config.batch_size, kLatentChannels, h, h}, rng);

    nc::zero_grad(params);
    auto loss = mvae_loss(model.net(), x, noise, config.beta_kl);
    double lv = loss.item();
    if (!std::isfinite(lv)) {
      if (!last_good.empty())
        for (size_t i = 0; i < params.size(); ++i) params[i].val() = last_good[i];
      model.save(checkpoint_path);
      nc::debug_checks() = prev_checks;
      throw std::runtime_error("train_mvae: loss diverged at step " + std::to_string(step) +
                               "; last good checkpoint written to " + checkpoint_path);
    }
    report.loss_curve.push_back(lv);
    nc::backward(loss);
    opt.set_lr(config.learning_rate * 0.5 * (1.0 + std::cos(M_PI * step / config.steps)));
    opt.step(params);

    if (step % 100 == 0) {
      last_good.clear();
      for (const auto& p : params) last_good.push_back(p.val());
    }
  }
  nc::debug_checks() = prev_checks;

  // Calibrate the latent scale so latent std over the training set is ~1.
  {
    double sum = 0, sum2 = 0;
    std::int64_t count = 0;
    std::mt19937_64 srng(config.seed + 7);
    std::uniform_int_distribution<size_t> spick(0, views.size() - 1);
    int n_cal = std::min<size_t>(views.size(), 128);
    for (int i = 0; i < n_cal; ++i) {
      auto x = nc::Tensor<float>::from_data({1, 4, H, H}, views[spick(srng)].rgbm);
      auto [mu, logvar] = model.net().encode_dist(x);
      for (float v : mu.val()) {
        sum += v;
        sum2 += static_cast<double>(v) * v;
        ++count;
      }
    }
    double mean = sum / count;
    double std_dev = std::sqrt(std::max(1e-12, sum2 / count - mean * mean));
    model.set_latent_scale(static_cast<float>(1.0 / std_dev));
  }

  int smooth = std::min<int>(50, config.steps);
  for (int i = 0; i < smooth; ++i) {
    report.initial_smoothed_loss += report.loss_curve[i] / smooth;
    report.final_smoothed_loss += report.loss_curve[config.steps - 1 - i] / smooth;
  }

  model.save(checkpoint_path);
  evaluate_mvae(model, dataset_dir, config.holdout_objects, &report.recon_psnr, &report.mask_iou);
  if (out_model) *out_model = model;
  return report;
}

}  // namespace mvdpp::mvae
