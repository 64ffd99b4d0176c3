#include "mvdpp/denoiser.hpp"

namespace mvdpp::denoiser {

void BatchElement::validate() const {
  int V = n_views();
  if (n_cond < 1 || n_cond > kCondEmbeddings)
    throw std::invalid_argument("batch element: condition count must be 1..10");
  if (V <= n_cond) throw std::invalid_argument("batch element: no generation views");
  if (static_cast<int>(cond_latents.size()) != V || static_cast<int>(view_indices.size()) != V ||
      static_cast<int>(branch_flags.size()) != V)
    throw std::invalid_argument("batch element: per-view array length mismatch");
  if (static_cast<int>(cond_images.size()) != n_cond)
    throw std::invalid_argument("batch element: condition image count mismatch");
  for (int v = 0; v < V; ++v) {
    bool is_cond = v < n_cond;
    if ((branch_flags[v] != 0) != is_cond)
      throw std::invalid_argument("batch element: branch flag inconsistent with view order");
    if (is_cond && view_indices[v] >= kCondEmbeddings)
      throw std::invalid_argument("batch element: condition view index must be < 10");
    if (!is_cond && (view_indices[v] < kCondEmbeddings || view_indices[v] >= kViewEmbeddings))
      throw std::invalid_argument("batch element: generation view index must be in [10, 42)");
  }
}

DenoiserModel::DenoiserModel(const DenoiserConfig& cfg, std::uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  net_ = std::make_shared<DenoiserNet<float>>(DenoiserNet<float>::make(cfg, rng));
  schedule = sched::linear_schedule(1000);
}

void DenoiserModel::save(const std::string& path) const {
  ckpt::Checkpoint c;
  c.meta = {{"kind", "denoiser"},
            {"stage", stage},
            {"config",
             {{"width0", net_->cfg.width0},
              {"width1", net_->cfg.width1},
              {"emb_dim", net_->cfg.emb_dim},
              {"latent_size", net_->cfg.latent_size},
              {"image_size", net_->cfg.image_size}}},
            {"schedule",
             {{"T", schedule.T},
              {"beta_start", schedule.beta_start},
              {"beta_end", schedule.beta_end},
              {"zero_snr", schedule.zero_snr},
              {"prediction_type", sched::to_string(schedule.prediction_type)}}}};
  for (const auto& [name, tensor] : net_->params.items) {
    ckpt::NamedTensor t;
    t.name = name;
    t.shape = tensor.shape();
    t.data = tensor.val();
    c.tensors.push_back(std::move(t));
  }
  ckpt::save_checkpoint(path, c);
}

DenoiserModel DenoiserModel::load(const std::string& path) {
  ckpt::Checkpoint c = ckpt::load_checkpoint(path);
  if (c.meta.value("kind", "") != "denoiser")
    throw std::runtime_error("load: not a denoiser checkpoint: " + path);
  DenoiserConfig cfg;
  const auto& jc = c.meta.at("config");
  cfg.width0 = jc.at("width0").get<int>();
  cfg.width1 = jc.at("width1").get<int>();
  cfg.emb_dim = jc.at("emb_dim").get<int>();
  cfg.latent_size = jc.at("latent_size").get<int>();
  cfg.image_size = jc.at("image_size").get<int>();
  DenoiserModel m(cfg, 0);
  for (auto& [name, tensor] : m.net_->params.items) {
    const auto& t = c.find(name);
    if (static_cast<std::int64_t>(t.data.size()) != tensor.numel())
      throw std::runtime_error("load: size mismatch for " + name);
    tensor.val() = t.data;
  }
  const auto& js = c.meta.at("schedule");
  m.schedule = sched::linear_schedule(js.at("T").get<int>(), js.at("beta_start").get<double>(),
                                      js.at("beta_end").get<double>());
  if (js.at("zero_snr").get<bool>()) m.schedule = sched::rescale_zero_snr(m.schedule);
  m.schedule.prediction_type = sched::prediction_type_from_string(js.at("prediction_type").get<std::string>());
  m.stage = c.meta.value("stage", 0);
  return m;
}

}  // namespace mvdpp::denoiser
