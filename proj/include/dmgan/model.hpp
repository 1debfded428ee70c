#pragma once

// Full model bundle: text encoder, generator stack, per-stage discriminators,
// and a frozen image embedder for the matching loss and retrieval metric.
// Also the glue between named parameter sets and checkpoint entries.

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "networks.hpp"
#include "text.hpp"

namespace dmgan {

// Fixed random convolutional embedder mapping the highest-resolution image to
// an N_w-dim vector.  Its weights are never trained: the matching loss moves
// images and text codes toward each other inside this fixed feature space,
// which keeps the objective well-defined without a pretrained network.
template <typename T>
class ImageEmbedder {
 public:
  ImageEmbedder() = default;
  ImageEmbedder(std::size_t resolution, std::size_t n_w, Rng& rng,
                ParamSet<T>& ps)
      : resolution_(resolution) {
    std::size_t res = resolution, ci = 3;
    const std::size_t ch = 8;
    while (res > 4) {
      convs_.emplace_back(ci, ch, rng, ps,
                          "emb.c" + std::to_string(convs_.size()));
      ci = ch;
      res /= 2;
    }
    proj_ = Linear<T>(ci, n_w, rng, ps, "emb.proj");
  }

  Tensor<T> embed(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(1) != resolution_ ||
        image.dim(2) != resolution_)
      throw std::invalid_argument("embed: unexpected image shape");
    auto x = image;
    for (const auto& c : convs_) x = leaky_relu(c(x, 2));
    return proj_(mean_rows(chw_to_pixels(x)));  // [1 x N_w]
  }

 private:
  std::size_t resolution_ = 0;
  std::vector<Conv3x3Layer<T>> convs_;
  Linear<T> proj_;
};

template <typename T>
struct GeneratedStages {
  std::vector<Tensor<T>> images;    // one per stage, tanh range
  std::vector<Tensor<T>> features;  // stage feature maps
  std::vector<Tensor<T>> alphas;    // addressing weights per refinement stage
  std::vector<Tensor<T>> gates;     // write gates per refinement stage
};

template <typename T>
class Model {
 public:
  Model(const NetConfig& cfg, std::size_t vocab_size, std::uint64_t seed)
      : cfg_(cfg) {
    Rng init = derive_rng(seed, "model.init", 0);
    encoder_ = TextEncoder<T>(vocab_size, cfg.n_w, cfg.t_max, init, gen_params_);
    g0_ = GeneratorInitial<T>(cfg, init, gen_params_);
    for (std::size_t s = 1; s < cfg.stages; ++s)
      refiners_.emplace_back(cfg, s, init, gen_params_);
    disc_params_.resize(cfg.stages);
    for (std::size_t s = 0; s < cfg.stages; ++s)
      discs_.emplace_back(cfg, stage_resolution(s), init, disc_params_[s],
                          buffers_);
    Rng emb_init = derive_rng(seed, "model.embedder", 0);
    embedder_ = ImageEmbedder<T>(stage_resolution(cfg.stages - 1), cfg.n_w,
                                 emb_init, frozen_);
    for (auto& [name, t] : frozen_.items()) t.node()->requires_grad = false;
  }

  const NetConfig& config() const { return cfg_; }
  std::size_t stage_resolution(std::size_t s) const {
    return cfg_.base_res << s;
  }

  TextEncoder<T>& encoder() { return encoder_; }
  GeneratorInitial<T>& initial() { return g0_; }
  std::vector<GeneratorRefine<T>>& refiners() { return refiners_; }
  std::vector<Discriminator<T>>& discriminators() { return discs_; }
  const ImageEmbedder<T>& embedder() const { return embedder_; }

  ParamSet<T>& generator_params() { return gen_params_; }
  std::vector<ParamSet<T>>& discriminator_params() { return disc_params_; }
  ParamSet<T>& buffers() { return buffers_; }
  ParamSet<T>& frozen_params() { return frozen_; }

  // One full generation pass from token ids and noise.
  GeneratedStages<T> generate(const std::vector<std::size_t>& tokens,
                              const Tensor<T>& z, const Tensor<T>& ca_noise,
                              bool train_mode,
                              typename TextEncoder<T>::CaResult* ca_out = nullptr,
                              Tensor<T>* sentence_out = nullptr) const {
    auto enc = encoder_.encode(tokens);
    auto ca = encoder_.condition_augment(enc.sentence, ca_noise, train_mode);
    if (ca_out) *ca_out = ca;
    if (sentence_out) *sentence_out = enc.sentence;
    GeneratedStages<T> out;
    auto stage0 = g0_.generate(z, ca.code);
    out.images.push_back(stage0.image);
    out.features.push_back(stage0.features);
    auto feat = stage0.features;
    for (const auto& r : refiners_) {
      auto ro = r.refine(feat, enc.words);
      out.images.push_back(ro.image);
      out.features.push_back(ro.features);
      out.alphas.push_back(ro.alpha);
      out.gates.push_back(ro.gates);
      feat = ro.features;
    }
    return out;
  }

 private:
  NetConfig cfg_;
  ParamSet<T> gen_params_;
  std::vector<ParamSet<T>> disc_params_;
  ParamSet<T> buffers_;
  ParamSet<T> frozen_;
  TextEncoder<T> encoder_;
  GeneratorInitial<T> g0_;
  std::vector<GeneratorRefine<T>> refiners_;
  std::vector<Discriminator<T>> discs_;
  ImageEmbedder<T> embedder_;
};

// ---- ParamSet <-> checkpoint glue -----------------------------------------

template <typename T>
void append_param_entries(const ParamSet<T>& ps,
                          std::vector<CheckpointEntry>& out) {
  for (const auto& [name, t] : ps.items()) {
    CheckpointEntry e;
    e.name = name;
    for (std::size_t d : t.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    const auto& data = t.data();
    e.data.assign(data.begin(), data.end());
    out.push_back(std::move(e));
  }
}

template <typename T>
void load_param_entries(ParamSet<T>& ps,
                        const std::vector<CheckpointEntry>& entries) {
  for (auto& [name, t] : ps.items()) {
    const CheckpointEntry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == name) {
        found = &e;
        break;
      }
    if (!found)
      throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    if (found->data.size() != t.numel())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    auto& data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i)
      data[i] = static_cast<T>(found->data[i]);
  }
}

// All model tensors (trainable, buffers, frozen embedder) as entries.
template <typename T>
std::vector<CheckpointEntry> model_entries(Model<T>& model) {
  std::vector<CheckpointEntry> entries;
  append_param_entries(model.generator_params(), entries);
  for (auto& dp : model.discriminator_params()) append_param_entries(dp, entries);
  append_param_entries(model.buffers(), entries);
  append_param_entries(model.frozen_params(), entries);
  return entries;
}

template <typename T>
void load_model_entries(Model<T>& model,
                        const std::vector<CheckpointEntry>& entries) {
  load_param_entries(model.generator_params(), entries);
  for (auto& dp : model.discriminator_params()) load_param_entries(dp, entries);
  load_param_entries(model.buffers(), entries);
  load_param_entries(model.frozen_params(), entries);
}

// Architecture description embedded in checkpoints, so `eval` and `inspect`
// can rebuild the model from the checkpoint file alone.  Every value is a
// small integer and is exactly representable as f32.
inline void append_net_config_entries(const NetConfig& cfg, std::uint64_t seed,
                                      std::vector<CheckpointEntry>& out) {
  auto put = [&](const std::string& name, double v) {
    CheckpointEntry e;
    e.name = "cfg." + name;
    e.dims = {1};
    e.data = {static_cast<float>(v)};
    out.push_back(std::move(e));
  };
  put("z_dim", static_cast<double>(cfg.z_dim));
  put("n_w", static_cast<double>(cfg.n_w));
  put("n_r", static_cast<double>(cfg.n_r));
  put("n_m", static_cast<double>(cfg.n_m));
  put("base_res", static_cast<double>(cfg.base_res));
  put("stages", static_cast<double>(cfg.stages));
  put("g_channels", static_cast<double>(cfg.g_channels));
  put("d_channels", static_cast<double>(cfg.d_channels));
  put("t_max", static_cast<double>(cfg.t_max));
  put("memory", cfg.flags.memory ? 1.0 : 0.0);
  put("write_gate", cfg.flags.write_gate ? 1.0 : 0.0);
  put("response_gate", cfg.flags.response_gate ? 1.0 : 0.0);
  put("seed", static_cast<double>(seed));
}

inline NetConfig net_config_from_entries(
    const std::vector<CheckpointEntry>& entries, std::uint64_t* seed_out) {
  auto get = [&](const std::string& name) -> double {
    for (const auto& e : entries)
      if (e.name == "cfg." + name) {
        if (e.data.size() != 1)
          throw std::runtime_error("checkpoint: malformed config entry " + name);
        return static_cast<double>(e.data[0]);
      }
    throw std::runtime_error("checkpoint: missing config entry cfg." + name);
  };
  NetConfig cfg;
  cfg.z_dim = static_cast<std::size_t>(get("z_dim"));
  cfg.n_w = static_cast<std::size_t>(get("n_w"));
  cfg.n_r = static_cast<std::size_t>(get("n_r"));
  cfg.n_m = static_cast<std::size_t>(get("n_m"));
  cfg.base_res = static_cast<std::size_t>(get("base_res"));
  cfg.stages = static_cast<std::size_t>(get("stages"));
  cfg.g_channels = static_cast<std::size_t>(get("g_channels"));
  cfg.d_channels = static_cast<std::size_t>(get("d_channels"));
  cfg.t_max = static_cast<std::size_t>(get("t_max"));
  cfg.flags.memory = get("memory") != 0.0;
  cfg.flags.write_gate = get("write_gate") != 0.0;
  cfg.flags.response_gate = get("response_gate") != 0.0;
  if (seed_out) *seed_out = static_cast<std::uint64_t>(get("seed"));
  return cfg;
}

// Rebuild a model from a checkpoint's embedded config and load its tensors.
inline std::unique_ptr<Model<float>> model_from_checkpoint(
    const std::vector<CheckpointEntry>& entries, std::size_t vocab_size) {
  std::uint64_t seed = 0;
  NetConfig cfg = net_config_from_entries(entries, &seed);
  auto model = std::make_unique<Model<float>>(cfg, vocab_size, seed);
  load_model_entries(*model, entries);
  return model;
}

}  // namespace dmgan
