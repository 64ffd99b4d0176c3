#pragma once

// Mask-aware autoencoder. Encodes RGB+mask (4 channels) to a 4-channel
// latent at 8x spatial compression; decodes back to RGB plus a mask logit.
// Trained from scratch with L2 + BCE(mask) + small KL.

#include "mvdpp/checkpoint.hpp"
#include "mvdpp/image.hpp"
#include "mvdpp/nc/layers.hpp"
#include "mvdpp/synthdata.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mvdpp::mvae {

inline constexpr int kLatentChannels = 4;
inline constexpr int kCompression = 8;

// Conv encoder/decoder with three stride-2 stages on either side.
template <class T>
struct MvaeNet {
  nc::ParamList<T> params;

  nc::Conv2dLayer<T> e0, e1, e2, e3, e4;
  nc::GroupNormLayer<T> eg0, eg1, eg2, eg3;
  nc::Conv2dLayer<T> d0, d1, d2, d2b, d3, d4, d5;
  nc::GroupNormLayer<T> dg0, dg1, dg2, dg2b, dg3, dg4;

  template <class Rng>
  static MvaeNet make(Rng& rng) {
    MvaeNet m;
    auto& p = m.params;
    m.e0 = nc::Conv2dLayer<T>::make(p, "enc.0", 4, 16, 3, 1, 1, rng);
    m.eg0 = nc::GroupNormLayer<T>::make(p, "enc.0n", 16, 4);
    m.e1 = nc::Conv2dLayer<T>::make(p, "enc.1", 16, 32, 3, 2, 1, rng);
    m.eg1 = nc::GroupNormLayer<T>::make(p, "enc.1n", 32, 8);
    m.e2 = nc::Conv2dLayer<T>::make(p, "enc.2", 32, 64, 3, 2, 1, rng);
    m.eg2 = nc::GroupNormLayer<T>::make(p, "enc.2n", 64, 8);
    m.e3 = nc::Conv2dLayer<T>::make(p, "enc.3", 64, 64, 3, 2, 1, rng);
    m.eg3 = nc::GroupNormLayer<T>::make(p, "enc.3n", 64, 8);
    m.e4 = nc::Conv2dLayer<T>::make(p, "enc.4", 64, 2 * kLatentChannels, 3, 1, 1, rng);
    // Start the posterior near-deterministic: logvar bias -6 keeps the
    // reparameterization noise from washing out early reconstruction training.
    for (int c = kLatentChannels; c < 2 * kLatentChannels; ++c) m.e4.b.val()[c] = T(-6);

    m.d0 = nc::Conv2dLayer<T>::make(p, "dec.0", kLatentChannels, 64, 3, 1, 1, rng);
    m.dg0 = nc::GroupNormLayer<T>::make(p, "dec.0n", 64, 8);
    m.d1 = nc::Conv2dLayer<T>::make(p, "dec.1", 64, 64, 3, 1, 1, rng);
    m.dg1 = nc::GroupNormLayer<T>::make(p, "dec.1n", 64, 8);
    m.d2 = nc::Conv2dLayer<T>::make(p, "dec.2", 64, 32, 3, 1, 1, rng);
    m.dg2 = nc::GroupNormLayer<T>::make(p, "dec.2n", 32, 8);
    m.d2b = nc::Conv2dLayer<T>::make(p, "dec.2b", 32, 32, 3, 1, 1, rng);
    m.dg2b = nc::GroupNormLayer<T>::make(p, "dec.2bn", 32, 8);
    m.d3 = nc::Conv2dLayer<T>::make(p, "dec.3", 32, 16, 3, 1, 1, rng);
    m.dg3 = nc::GroupNormLayer<T>::make(p, "dec.3n", 16, 4);
    m.d4 = nc::Conv2dLayer<T>::make(p, "dec.4", 16, 16, 3, 1, 1, rng);
    m.dg4 = nc::GroupNormLayer<T>::make(p, "dec.4n", 16, 4);
    m.d5 = nc::Conv2dLayer<T>::make(p, "dec.5", 16, 4, 3, 1, 1, rng);
    return m;
  }

  // x: [N,4,H,W] -> (mu, logvar) each [N,4,H/8,W/8]
  std::pair<nc::Tensor<T>, nc::Tensor<T>> encode_dist(const nc::Tensor<T>& x) const {
    auto h = nc::silu(eg0(e0(x)));
    h = nc::silu(eg1(e1(h)));
    h = nc::silu(eg2(e2(h)));
    h = nc::silu(eg3(e3(h)));
    auto out = e4(h);
    auto mu = nc::slice(out, 1, 0, kLatentChannels);
    auto logvar = nc::slice(out, 1, kLatentChannels, kLatentChannels);
    return {mu, logvar};
  }

  // z: [N,4,h,w] -> [N,4,8h,8w] (RGB raw + mask logit)
  nc::Tensor<T> decode_raw(const nc::Tensor<T>& z) const {
    auto h = nc::silu(dg0(d0(z)));
    h = nc::silu(dg1(d1(nc::upsample_nearest2(h))));
    h = nc::silu(dg2(d2(nc::upsample_nearest2(h))));
    h = nc::silu(dg2b(d2b(h)));
    h = nc::silu(dg3(d3(nc::upsample_nearest2(h))));
    h = nc::silu(dg4(d4(h)));
    return d5(h);
  }
};

struct LatentImage {
  int h = 0, w = 0;
  std::vector<float> data;  // [4, h, w]
};

// Float inference/training wrapper with the dataset-calibrated latent scale.
class MvaeModel {
 public:
  MvaeModel();
  explicit MvaeModel(std::uint64_t init_seed);

  MvaeNet<float>& net() { return net_; }
  const MvaeNet<float>& net() const { return net_; }
  float latent_scale() const { return latent_scale_; }
  void set_latent_scale(float s) { latent_scale_ = s; }

  // Deterministic mean latent, scaled. rgb values and mask in [0,1].
  LatentImage encode(const img::ImageRGB& rgb, const img::Mask& mask) const;

  struct Decoded {
    img::ImageRGB rgb;             // clamped to [0,1]
    std::vector<float> mask_prob;  // H*W, in (0,1)
    int height = 0, width = 0;
  };
  Decoded decode(const LatentImage& z) const;

  // Latent of the generation-branch placeholder (white image, full mask).
  LatentImage white_latent(int image_size) const;

  void save(const std::string& path) const;
  static MvaeModel load(const std::string& path);

 private:
  MvaeNet<float> net_;
  float latent_scale_ = 1.0f;
};

// Packs rgb+mask into a [1,4,H,W] tensor (channels R,G,B,mask).
template <class T>
nc::Tensor<T> pack_rgbm(const img::ImageRGB& rgb, const img::Mask& mask) {
  int H = rgb.height, W = rgb.width;
  std::vector<T> data(static_cast<size_t>(4) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c)
        data[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<T>(rgb.at(y, x, c));
      data[(static_cast<size_t>(3) * H + y) * W + x] = static_cast<T>(mask.at(y, x));
    }
  return nc::Tensor<T>::from_data({1, 4, H, W}, std::move(data));
}

// Background pixels get this weight in the RGB term; the decoder composites
// them from the mask at inference, so foreground fidelity is what counts.
inline constexpr double kBgRgbWeight = 0.1;

// Foreground-weighted L2(rgb) + BCE(mask logits) + beta_kl * KL, where the
// posterior sample is z = mu + exp(logvar/2) * noise.
template <class T>
nc::Tensor<T> mvae_loss(const MvaeNet<T>& net, const nc::Tensor<T>& batch_rgbm,
                        const nc::Tensor<T>& noise, double beta_kl) {
  auto [mu, logvar] = net.encode_dist(batch_rgbm);
  auto std_dev = nc::exp_of(nc::scale(logvar, 0.5));
  auto z = nc::add(mu, nc::mul(std_dev, noise));
  auto out = net.decode_raw(z);

  auto rgb_out = nc::slice(out, 1, 0, 3);
  auto mask_logit = nc::slice(out, 1, 3, 1);
  auto rgb_gt = nc::slice(batch_rgbm, 1, 0, 3);
  auto mask_gt = nc::slice(batch_rgbm, 1, 3, 1);

  // Pixel weights w = bg + (1 - bg) * mask, replicated over the 3 channels;
  // the normalizer stays in the graph so the loss is fully differentiable.
  auto w1 = nc::add_scalar(nc::scale(mask_gt, 1.0 - kBgRgbWeight), kBgRgbWeight);
  auto w3 = nc::concat(std::vector<nc::Tensor<T>>{w1, w1, w1}, 1);
  auto diff = nc::sub(rgb_out, rgb_gt);
  auto recon = nc::scale_by(nc::sum_all(nc::mul(w3, nc::mul(diff, diff))),
                            nc::reciprocal(nc::sum_all(w3)));
  auto bce = nc::bce_with_logits_mean(mask_logit, mask_gt);
  // KL per element: 0.5 (mu^2 + e^lv - 1 - lv), averaged.
  auto kl = nc::scale(
      nc::mean_all(nc::sub(nc::add(nc::mul(mu, mu), nc::exp_of(logvar)),
                           nc::add_scalar(logvar, 1.0))),
      0.5);
  return nc::add(nc::add(recon, bce), nc::scale(kl, beta_kl));
}

struct MvaeTrainConfig {
  int steps = 3000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double beta_kl = 1e-6;
  int holdout_objects = 4;
  std::uint64_t seed = 0;
};

struct MvaeTrainReport {
  double recon_psnr = 0;
  double mask_iou = 0;
  double initial_smoothed_loss = 0;
  double final_smoothed_loss = 0;
  std::vector<double> loss_curve;
};

MvaeTrainReport train_mvae(const std::string& dataset_dir, const MvaeTrainConfig& config,
                           const std::string& checkpoint_path, MvaeModel* out_model = nullptr);

// Held-out reconstruction quality of an already-trained model.
void evaluate_mvae(const MvaeModel& model, const std::string& dataset_dir, int holdout_objects,
                   double* psnr_out, double* iou_out);

}  // namespace mvdpp::mvae
