#include "mvdpp/denoiser.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

using namespace mvdpp;
using denoiser::BatchElement;

namespace {

denoiser::DenoiserConfig toy_config() {
  denoiser::DenoiserConfig c;
  c.width0 = 8;
  c.width1 = 8;
  c.emb_dim = 8;
  c.latent_size = 8;
  c.image_size = 16;
  return c;
}

std::vector<float> randf(int n, std::mt19937_64& rng, float scale = 1.0f) {
  std::normal_distribution<float> nd(0.0f, scale);
  std::vector<float> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// n_cond condition views then n_gen generation views on latents of size hw.
BatchElement make_element(int n_cond, int n_gen, int hw, int img, std::mt19937_64& rng) {
  BatchElement el;
  el.n_cond = n_cond;
  el.t = 500;
  for (int i = 0; i < n_cond + n_gen; ++i) {
    el.latents.push_back(randf(4 * hw * hw, rng));
    el.cond_latents.push_back(randf(4 * hw * hw, rng));
    bool cond = i < n_cond;
    el.branch_flags.push_back(cond ? 1 : 0);
    el.view_indices.push_back(cond ? i : 10 + (i - n_cond));
  }
  for (int i = 0; i < n_cond; ++i) el.cond_images.push_back(randf(4 * img * img, rng, 0.3f));
  return el;
}

}  // namespace

TEST_CASE("batch element validation") {
  std::mt19937_64 rng(1);
  auto el = make_element(2, 3, 8, 16, rng);
  CHECK_NOTHROW(el.validate());

  auto bad = el;
  bad.view_indices[0] = 42;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = el;
  bad.branch_flags[3] = 1;  // gen view flagged as condition
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = el;
  bad.cond_images.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = el;
  bad.n_cond = 0;
  bad.cond_images.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = el;
  bad.latents.pop_back();
  bad.view_indices.pop_back();
  bad.cond_latents.pop_back();
  bad.branch_flags.pop_back();
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("assemble_input packs nine channels with flag planes") {
  std::mt19937_64 rng(2);
  auto net = denoiser::DenoiserNet<float>::make(toy_config(), rng);
  auto el = make_element(1, 2, 8, 16, rng);
  auto x = net.assemble_input(el, 8, 8);
  REQUIRE(x.shape() == nc::Shape{3, 9, 8, 8});
  const auto& v = x.val();
  size_t plane = 64, per_view = 9 * plane;
  for (int view = 0; view < 3; ++view) {
    float flag = view == 0 ? 1.0f : 0.0f;
    for (size_t i = 0; i < plane; ++i) CHECK(v[view * per_view + 8 * plane + i] == flag);
    for (size_t i = 0; i < 4 * plane; ++i) {
      CHECK(v[view * per_view + i] == el.latents[view][i]);
      CHECK(v[view * per_view + 4 * plane + i] == el.cond_latents[view][i]);
    }
  }
}

TEST_CASE("forward shape and token-count law") {
  std::mt19937_64 rng(3);
  auto net = denoiser::DenoiserNet<float>::make(toy_config(), rng);
  for (int n_gen : {1, 3}) {
    auto el = make_element(2, n_gen, 8, 16, rng);
    int V = 2 + n_gen;
    auto out = net.forward_element(el, 8, 8);
    CHECK(out.shape() == nc::Shape{V, 4, 8, 8});
    REQUIRE(net.last_token_counts.size() == 3);
    CHECK(net.last_token_counts[0] == V * 64);
    CHECK(net.last_token_counts[1] == V * 16);
    CHECK(net.last_token_counts[2] == V * 64);
  }
}

TEST_CASE("zero-initialized embedding scale makes view identity irrelevant") {
  std::mt19937_64 rng(4);
  auto net = denoiser::DenoiserNet<float>::make(toy_config(), rng);
  auto el = make_element(1, 2, 8, 16, rng);
  auto a = net.forward_element(el, 8, 8);
  auto el2 = el;
  el2.view_indices = {5, 30, 41};  // different identities, same flags
  auto b = net.forward_element(el2, 8, 8);
  for (size_t i = 0; i < a.val().size(); ++i) CHECK(a.val()[i] == b.val()[i]);

  // After perturbing the scale the identities must matter.
  net.emb_scale.val()[0] = 0.5f;
  auto c = net.forward_element(el, 8, 8);
  auto d = net.forward_element(el2, 8, 8);
  double diff = 0;
  for (size_t i = 0; i < c.val().size(); ++i) diff += std::abs(c.val()[i] - d.val()[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("generation views are permutation equivariant") {
  std::mt19937_64 rng(5);
  auto net = denoiser::DenoiserNet<float>::make(toy_config(), rng);
  net.emb_scale.val()[0] = 0.3f;  // make view identity active
  auto el = make_element(2, 4, 8, 16, rng);
  auto base = net.forward_element(el, 8, 8);

  std::vector<int> perm = {3, 1, 0, 2};  // of the 4 generation slots
  auto p = el;
  for (int i = 0; i < 4; ++i) {
    p.latents[2 + i] = el.latents[2 + perm[i]];
    p.cond_latents[2 + i] = el.cond_latents[2 + perm[i]];
    p.view_indices[2 + i] = el.view_indices[2 + perm[i]];
  }
  auto permuted = net.forward_element(p, 8, 8);

  size_t per_view = 4 * 64;
  for (int i = 0; i < 4; ++i)
    for (size_t j = 0; j < per_view; ++j) {
      float expect = base.val()[(2 + perm[i]) * per_view + j];
      float got = permuted.val()[(2 + i) * per_view + j];
      CHECK(std::abs(expect - got) < 2e-5);
    }
  // Condition views are unchanged by the generation permutation.
  for (size_t j = 0; j < 2 * per_view; ++j)
    CHECK(std::abs(base.val()[j] - permuted.val()[j]) < 2e-5);
}

TEST_CASE("condition encoder emits one token per image") {
  std::mt19937_64 rng(6);
  auto net = denoiser::DenoiserNet<float>::make(toy_config(), rng);
  std::vector<std::vector<float>> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(randf(4 * 16 * 16, rng));
  auto ctx = net.encode_condition(imgs);
  CHECK(ctx.shape() == nc::Shape{3, 8});

  // Token i depends only on image i.
  std::vector<std::vector<float>> swapped = {imgs[1], imgs[0], imgs[2]};
  auto ctx2 = net.encode_condition(swapped);
  for (int j = 0; j < 8; ++j) {
    CHECK(ctx.val()[0 * 8 + j] == ctx2.val()[1 * 8 + j]);
    CHECK(ctx.val()[2 * 8 + j] == ctx2.val()[2 * 8 + j]);
  }

  CHECK_THROWS_AS(net.encode_condition({}), std::invalid_argument);
  std::vector<std::vector<float>> eleven(11, imgs[0]);
  CHECK_THROWS_AS(net.encode_condition(eleven), std::invalid_argument);
  CHECK_THROWS_AS(net.encode_condition({std::vector<float>(7)}), std::invalid_argument);
}

TEST_CASE("timestep encoding shape and distinctness") {
  std::mt19937_64 rng(7);
  auto net = denoiser::DenoiserNet<float>::make(toy_config(), rng);
  auto e0 = net.timestep_encoding(0);
  auto e1 = net.timestep_encoding(999);
  CHECK(e0.shape() == nc::Shape{1, 8});
  double diff = 0;
  for (int i = 0; i < 8; ++i) diff += std::abs(e0.val()[i] - e1.val()[i]);
  CHECK(diff > 0.1);
}

TEST_CASE("toy denoiser finite-difference gradients") {
  std::mt19937_64 rng(8);
  auto net = denoiser::DenoiserNet<double>::make(toy_config(), rng);
  std::mt19937_64 drng(9);
  auto el = make_element(1, 1, 8, 16, drng);

  auto loss_fn = [&] {
    auto out = net.forward_element(el, 8, 8);
    return nc::mse_loss(out, nc::Tensor<double>::zeros(out.shape()));
  };
  // Subset of parameters spanning every component type.
  std::vector<nc::Tensor<double>> params;
  for (const auto& [name, t] : net.params.items)
    if (name == "emb_scale" || name == "out_conv.b" || name == "t_mlp2.b" || name == "sa1.q.b" ||
        name == "ca0.v.b" || name == "down0.gn2.beta" || name == "cond_enc.3.b" || name == "in_conv.b")
      params.push_back(t);
  REQUIRE(params.size() == 8);
  double err = nc::grad_check<double>(loss_fn, params, 1e-5);
  CHECK(err < 1e-3);
}

TEST_CASE("denoiser checkpoint roundtrip") {
  denoiser::DenoiserModel model(toy_config(), 77);
  model.schedule = sched::rescale_zero_snr(sched::linear_schedule(1000));
  model.stage = 2;
  auto path = (std::filesystem::temp_directory_path() / "mvdpp_denoiser_test.ckpt").string();
  model.save(path);
  auto loaded = denoiser::DenoiserModel::load(path);
  CHECK(loaded.stage == 2);
  CHECK(loaded.config().width0 == 8);
  CHECK(loaded.schedule.T == 1000);
  CHECK(loaded.schedule.zero_snr);

  std::mt19937_64 rng(10);
  auto el = make_element(2, 2, 8, 16, rng);
  auto a = model.net().forward_element(el, 8, 8);
  auto b = loaded.net().forward_element(el, 8, 8);
  CHECK(a.val() == b.val());
  std::filesystem::remove(path);
}
