#pragma once

// Two-branch multi-view denoiser. One weight-shared UNet processes every
// condition and generation view; global self-attention runs over the
// concatenated spatial tokens of all views of a batch element, and
// cross-attention injects tokens encoded from the condition images.
// Per-view input is 9 = 4 (noisy latent) + 4 (condition latent) + 1 (branch
// flag) channels, mapped to the first block width by a 1x1 convolution.

#include "mvdpp/checkpoint.hpp"
#include "mvdpp/image.hpp"
#include "mvdpp/nc/layers.hpp"
#include "mvdpp/schedule.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace mvdpp::denoiser {

inline constexpr int kCondEmbeddings = 10;  // view indices 0..9
inline constexpr int kGenEmbeddings = 32;   // view indices 10..41
inline constexpr int kViewEmbeddings = kCondEmbeddings + kGenEmbeddings;
inline constexpr int kLatentChannels = 4;
inline constexpr int kInputChannels = 9;

struct DenoiserConfig {
  int width0 = 32;
  int width1 = 64;
  int emb_dim = 64;
  int latent_size = 8;  // latent h = w
  int image_size = 64;  // condition-encoder input resolution
};

// One element of a multi-view batch: V = n_cond + n_gen views. The first
// n_cond entries are condition views (branch flag 1, view index < 10);
// the rest are generation views (flag 0, view index 10 + grid slot).
struct BatchElement {
  int n_cond = 0;
  std::vector<std::vector<float>> latents;       // V x [4*h*w], noisy
  std::vector<std::vector<float>> cond_latents;  // V x [4*h*w]
  std::vector<int> view_indices;                 // V
  std::vector<std::uint8_t> branch_flags;        // V, 1 cond / 0 gen
  std::vector<std::vector<float>> cond_images;   // n_cond x [4*H*W] packed RGB+mask
  int t = 0;

  int n_views() const { return static_cast<int>(latents.size()); }
  void validate() const;
};

struct MultiViewBatch {
  std::vector<BatchElement> elements;
  int latent_h = 8, latent_w = 8;
};

// Keep at least two channels per norm group: with size-1 groups the norm
// reduces to instance norm and cancels any per-channel bias added upstream.
inline int norm_groups(int channels) {
  int g = std::min(8, channels / 2);
  while (g > 1 && channels % g != 0) --g;
  return std::max(1, g);
}

template <class T>
struct ResBlock {
  nc::GroupNormLayer<T> gn1, gn2;
  nc::Conv2dLayer<T> c1, c2, skip;
  nc::LinearLayer<T> emb_proj;
  bool has_skip = false;

  template <class Rng>
  static ResBlock make(nc::ParamList<T>& p, const std::string& name, int cin, int cout, int emb_dim, Rng& rng) {
    ResBlock b;
    b.gn1 = nc::GroupNormLayer<T>::make(p, name + ".gn1", cin, norm_groups(cin));
    b.c1 = nc::Conv2dLayer<T>::make(p, name + ".c1", cin, cout, 3, 1, 1, rng);
    b.emb_proj = nc::LinearLayer<T>::make(p, name + ".emb", emb_dim, cout, rng);
    b.gn2 = nc::GroupNormLayer<T>::make(p, name + ".gn2", cout, norm_groups(cout));
    b.c2 = nc::Conv2dLayer<T>::make(p, name + ".c2", cout, cout, 3, 1, 1, rng);
    b.has_skip = cin != cout;
    if (b.has_skip) b.skip = nc::Conv2dLayer<T>::make(p, name + ".skip", cin, cout, 1, 1, 0, rng);
    return b;
  }

  // x: [V,cin,h,w], emb: [V,emb_dim]
  nc::Tensor<T> operator()(const nc::Tensor<T>& x, const nc::Tensor<T>& emb) const {
    auto h = c1(nc::silu(gn1(x)));
    // Inject the embedding after the norm; a per-channel shift applied before
    // it would be cancelled when the group size is 1.
    h = nc::add_nc_bias(gn2(h), emb_proj(emb));
    h = c2(nc::silu(h));
    return nc::add(h, has_skip ? skip(x) : x);
  }
};

// [V,C,h,w] -> [V*h*w, C] token matrix and back.
template <class T>
nc::Tensor<T> to_tokens(const nc::Tensor<T>& x) {
  int V = x.shape()[0], C = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  std::vector<nc::Tensor<T>> rows;
  rows.reserve(V);
  for (int v = 0; v < V; ++v)
    rows.push_back(nc::transpose2d(nc::reshape(nc::slice(x, 0, v, 1), {C, h * w})));
  return V == 1 ? rows[0] : nc::concat(rows, 0);
}

template <class T>
nc::Tensor<T> from_tokens(const nc::Tensor<T>& tokens, int V, int C, int h, int w) {
  std::vector<nc::Tensor<T>> views;
  views.reserve(V);
  for (int v = 0; v < V; ++v)
    views.push_back(nc::reshape(nc::transpose2d(nc::slice(tokens, 0, v * h * w, h * w)), {1, C, h, w}));
  return V == 1 ? views[0] : nc::concat(views, 0);
}

// Global multi-view self-attention: every token of every view attends to
// every token of every view of the same batch element.
template <class T>
struct GlobalSelfAttention {
  nc::GroupNormLayer<T> gn;
  nc::LinearLayer<T> q, k, v, o;

  template <class Rng>
  static GlobalSelfAttention make(nc::ParamList<T>& p, const std::string& name, int channels, Rng& rng) {
    GlobalSelfAttention a;
    a.gn = nc::GroupNormLayer<T>::make(p, name + ".gn", channels, norm_groups(channels));
    a.q = nc::LinearLayer<T>::make(p, name + ".q", channels, channels, rng);
    a.k = nc::LinearLayer<T>::make_no_bias(p, name + ".k", channels, channels, rng);
    a.v = nc::LinearLayer<T>::make(p, name + ".v", channels, channels, rng);
    a.o = nc::LinearLayer<T>::make(p, name + ".o", channels, channels, rng);
    return a;
  }

  nc::Tensor<T> operator()(const nc::Tensor<T>& x, int* token_count = nullptr) const {
    int V = x.shape()[0], C = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    auto tokens = to_tokens(gn(x));
    if (token_count) *token_count = tokens.shape()[0];
    auto out = o(nc::attention(q(tokens), k(tokens), v(tokens)));
    return nc::add(x, from_tokens(out, V, C, h, w));
  }
};

// Cross-attention from view tokens to the condition-image token sequence.
template <class T>
struct CrossAttention {
  nc::GroupNormLayer<T> gn;
  nc::LinearLayer<T> q, k, v, o;

  template <class Rng>
  static CrossAttention make(nc::ParamList<T>& p, const std::string& name, int channels, int ctx_dim, Rng& rng) {
    CrossAttention a;
    a.gn = nc::GroupNormLayer<T>::make(p, name + ".gn", channels, norm_groups(channels));
    a.q = nc::LinearLayer<T>::make(p, name + ".q", channels, channels, rng);
    a.k = nc::LinearLayer<T>::make_no_bias(p, name + ".k", ctx_dim, channels, rng);
    a.v = nc::LinearLayer<T>::make(p, name + ".v", ctx_dim, channels, rng);
    a.o = nc::LinearLayer<T>::make(p, name + ".o", channels, channels, rng);
    return a;
  }

  // ctx: [N_cond, ctx_dim]
  nc::Tensor<T> operator()(const nc::Tensor<T>& x, const nc::Tensor<T>& ctx) const {
    int V = x.shape()[0], C = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    auto tokens = to_tokens(gn(x));
    auto out = o(nc::attention(q(tokens), k(ctx), v(ctx)));
    return nc::add(x, from_tokens(out, V, C, h, w));
  }
};

template <class T>
struct DenoiserNet {
  DenoiserConfig cfg;
  nc::ParamList<T> params;

  nc::Conv2dLayer<T> in_conv;  // 1x1, 9 -> width0
  nc::LinearLayer<T> t_mlp1, t_mlp2;
  nc::Tensor<T> view_emb;   // [42, emb_dim]
  nc::Tensor<T> emb_scale;  // [1], zero-initialized

  // condition-image encoder: one token per condition image
  nc::Conv2dLayer<T> ce0, ce1, ce2, ce3;
  nc::GroupNormLayer<T> ceg0, ceg1, ceg2;

  ResBlock<T> down0, down1, mid, up0;
  nc::Conv2dLayer<T> down_conv;  // stride-2, width0 -> width1
  GlobalSelfAttention<T> sa0, sa1, sa2;
  CrossAttention<T> ca0, ca1, ca2;
  nc::GroupNormLayer<T> out_gn;
  nc::Conv2dLayer<T> out_conv;

  // Token counts observed at each self-attention site of the last forward.
  mutable std::vector<int> last_token_counts;

  template <class Rng>
  static DenoiserNet make(const DenoiserConfig& cfg, Rng& rng) {
    DenoiserNet n;
    n.cfg = cfg;
    auto& p = n.params;
    int w0 = cfg.width0, w1 = cfg.width1, e = cfg.emb_dim;
    n.in_conv = nc::Conv2dLayer<T>::make(p, "in_conv", kInputChannels, w0, 1, 1, 0, rng);
    n.t_mlp1 = nc::LinearLayer<T>::make(p, "t_mlp1", e, e, rng);
    n.t_mlp2 = nc::LinearLayer<T>::make(p, "t_mlp2", e, e, rng);
    n.view_emb = p.reg("view_emb", nc::Tensor<T>::randn({kViewEmbeddings, e}, rng, T(1)));
    n.emb_scale = p.reg("emb_scale", nc::Tensor<T>::zeros({1}));

    n.ce0 = nc::Conv2dLayer<T>::make(p, "cond_enc.0", 4, 8, 3, 2, 1, rng);
    n.ceg0 = nc::GroupNormLayer<T>::make(p, "cond_enc.0n", 8, 4);
    n.ce1 = nc::Conv2dLayer<T>::make(p, "cond_enc.1", 8, 16, 3, 2, 1, rng);
    n.ceg1 = nc::GroupNormLayer<T>::make(p, "cond_enc.1n", 16, 4);
    n.ce2 = nc::Conv2dLayer<T>::make(p, "cond_enc.2", 16, 32, 3, 2, 1, rng);
    n.ceg2 = nc::GroupNormLayer<T>::make(p, "cond_enc.2n", 32, 8);
    n.ce3 = nc::Conv2dLayer<T>::make(p, "cond_enc.3", 32, e, 3, 1, 1, rng);

    n.down0 = ResBlock<T>::make(p, "down0", w0, w0, e, rng);
    n.sa0 = GlobalSelfAttention<T>::make(p, "sa0", w0, rng);
    n.ca0 = CrossAttention<T>::make(p, "ca0", w0, e, rng);
    n.down_conv = nc::Conv2dLayer<T>::make(p, "down_conv", w0, w1, 3, 2, 1, rng);
    n.down1 = ResBlock<T>::make(p, "down1", w1, w1, e, rng);
    n.sa1 = GlobalSelfAttention<T>::make(p, "sa1", w1, rng);
    n.ca1 = CrossAttention<T>::make(p, "ca1", w1, e, rng);
    n.mid = ResBlock<T>::make(p, "mid", w1, w1, e, rng);
    n.up0 = ResBlock<T>::make(p, "up0", w1 + w0, w0, e, rng);
    n.sa2 = GlobalSelfAttention<T>::make(p, "sa2", w0, rng);
    n.ca2 = CrossAttention<T>::make(p, "ca2", w0, e, rng);
    n.out_gn = nc::GroupNormLayer<T>::make(p, "out_gn", w0, norm_groups(w0));
    n.out_conv = nc::Conv2dLayer<T>::make(p, "out_conv", w0, kLatentChannels, 3, 1, 1, rng);
    return n;
  }

  // Sinusoidal frequency encoding of the timestep, [1, emb_dim].
  nc::Tensor<T> timestep_encoding(int t) const {
    int e = cfg.emb_dim, half = e / 2;
    std::vector<T> enc(e);
    for (int i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * i / (half - 1));
      enc[i] = static_cast<T>(std::sin(t * freq));
      enc[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return nc::Tensor<T>::from_data({1, e}, std::move(enc));
  }

  // tau(t) + s * V_i per view, [V, emb_dim].
  nc::Tensor<T> view_time_embedding(int t, const std::vector<int>& view_indices) const {
    auto temb = t_mlp2(nc::silu(t_mlp1(timestep_encoding(t))));
    std::vector<nc::Tensor<T>> trows, vrows;
    for (int idx : view_indices) {
      if (idx < 0 || idx >= kViewEmbeddings)
        throw std::invalid_argument("view index out of range: " + std::to_string(idx));
      trows.push_back(temb);
      vrows.push_back(nc::slice(view_emb, 0, idx, 1));
    }
    auto tall = trows.size() == 1 ? trows[0] : nc::concat(trows, 0);
    auto vall = vrows.size() == 1 ? vrows[0] : nc::concat(vrows, 0);
    return nc::add(tall, nc::scale_by(vall, emb_scale));
  }

  // One token per condition image from the packed [4,H,W] inputs.
  nc::Tensor<T> encode_condition(const std::vector<std::vector<float>>& cond_images) const {
    int n = static_cast<int>(cond_images.size());
    if (n < 1 || n > kCondEmbeddings)
      throw std::invalid_argument("encode_condition: need 1..10 condition images");
    int H = cfg.image_size;
    std::vector<T> data(static_cast<size_t>(n) * 4 * H * H);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(cond_images[i].size()) != 4 * H * H)
        throw std::invalid_argument("encode_condition: bad condition image size");
      for (size_t j = 0; j < cond_images[i].size(); ++j)
        data[static_cast<size_t>(i) * 4 * H * H + j] = static_cast<T>(cond_images[i][j]);
    }
    auto x = nc::Tensor<T>::from_data({n, 4, H, H}, std::move(data));
    auto h = nc::silu(ceg0(ce0(x)));
    h = nc::silu(ceg1(ce1(h)));
    h = nc::silu(ceg2(ce2(h)));
    return nc::spatial_mean(ce3(h));  // [n, emb_dim]
  }

  // Per-view concat(noisy latent, condition latent, branch flag), [V,9,h,w].
  nc::Tensor<T> assemble_input(const BatchElement& el, int h, int w) const {
    el.validate();
    int V = el.n_views();
    std::vector<T> data(static_cast<size_t>(V) * kInputChannels * h * w);
    size_t plane = static_cast<size_t>(h) * w;
    for (int v = 0; v < V; ++v) {
      if (el.latents[v].size() != 4 * plane || el.cond_latents[v].size() != 4 * plane)
        throw std::invalid_argument("assemble_input: latent size mismatch");
      T* base = data.data() + static_cast<size_t>(v) * kInputChannels * plane;
      for (size_t i = 0; i < 4 * plane; ++i) base[i] = static_cast<T>(el.latents[v][i]);
      for (size_t i = 0; i < 4 * plane; ++i) base[4 * plane + i] = static_cast<T>(el.cond_latents[v][i]);
      T flag = el.branch_flags[v] ? T(1) : T(0);
      for (size_t i = 0; i < plane; ++i) base[8 * plane + i] = flag;
    }
    return nc::Tensor<T>::from_data({V, kInputChannels, h, w}, std::move(data));
  }

  // Predictions for one batch element, [V,4,h,w].
  nc::Tensor<T> forward_element(const BatchElement& el, int latent_h, int latent_w) const {
    int V = el.n_views();
    auto x = in_conv(assemble_input(el, latent_h, latent_w));
    auto emb = view_time_embedding(el.t, el.view_indices);
    auto ctx = encode_condition(el.cond_images);

    last_token_counts.clear();
    int tc = 0;
    auto a = down0(x, emb);
    a = sa0(a, &tc);
    last_token_counts.push_back(tc);
    a = ca0(a, ctx);

    auto b = down_conv(a);
    b = down1(b, emb);
    b = sa1(b, &tc);
    last_token_counts.push_back(tc);
    b = ca1(b, ctx);
    b = mid(b, emb);

    auto u = nc::upsample_nearest2(b);
    u = nc::concat(std::vector<nc::Tensor<T>>{u, a}, 1);
    u = up0(u, emb);
    u = sa2(u, &tc);
    last_token_counts.push_back(tc);
    u = ca2(u, ctx);

    // Token-count law: every self-attention site sees (N+M) * h' * w' tokens.
    size_t hw = static_cast<size_t>(latent_h) * latent_w;
    if (last_token_counts[0] != static_cast<int>(V * hw) ||
        last_token_counts[1] != static_cast<int>(V * hw / 4) ||
        last_token_counts[2] != static_cast<int>(V * hw))
      throw std::runtime_error("forward: token count law violated");
    (void)V;

    return out_conv(nc::silu(out_gn(u)));
  }
};

// Float inference/training wrapper carrying the noise schedule.
class DenoiserModel {
 public:
  DenoiserModel() = default;
  DenoiserModel(const DenoiserConfig& cfg, std::uint64_t init_seed);

  DenoiserNet<float>& net() { return *net_; }
  const DenoiserNet<float>& net() const { return *net_; }
  const DenoiserConfig& config() const { return net_->cfg; }

  sched::NoiseSchedule schedule;
  int stage = 0;  // training stage that produced this checkpoint (0 = fresh)

  void save(const std::string& path) const;
  static DenoiserModel load(const std::string& path);

 private:
  std::shared_ptr<DenoiserNet<float>> net_;
};

}  // namespace mvdpp::denoiser
