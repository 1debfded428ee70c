#pragma once

// Adam optimizer over a ParamSet, with moment export/import for resumable
// checkpoints.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "module.hpp"

namespace dmgan {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(ParamSet<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    if (cfg.lr <= 0.0) throw std::invalid_argument("adam: lr must be positive");
    for (auto& [name, t] : params.items()) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  std::uint64_t step_count() const { return t_; }

  // One update from the gradients currently stored in the parameters.
  // Throws if any gradient is non-finite; training must not silently absorb
  // a NaN and keep going.
  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t idx = 0;
    for (auto& [name, tensor] : params_->items()) {
      std::vector<T>& w = tensor.data();
      const std::vector<T>& g = tensor.grad();
      std::vector<double>& m = m_[idx];
      std::vector<double>& v = v_[idx];
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = static_cast<double>(g[i]);
        if (!std::isfinite(gi))
          throw std::runtime_error("adam: non-finite gradient in parameter '" +
                                   name + "' at step " + std::to_string(t_));
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        double m_hat = m[i] / bc1;
        double v_hat = v[i] / bc2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) -
                              cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
      ++idx;
    }
  }

  // Serialize moments and the step counter as checkpoint entries under
  // `prefix`.  Moments are stored as f32; they are recomputed in double
  // internally, so a save/load cycle rounds them, and the round-tripped
  // values are what resume determinism is defined against.
  void export_state(const std::string& prefix,
                    std::vector<CheckpointEntry>& out) const {
    if (t_ >= (1ULL << 24))
      throw std::runtime_error("adam: step counter too large for f32 storage");
    CheckpointEntry step_entry;
    step_entry.name = prefix + ".step";
    step_entry.dims = {1};
    step_entry.data = {static_cast<float>(t_)};
    out.push_back(std::move(step_entry));
    std::size_t idx = 0;
    for (const auto& [name, tensor] : params_->items()) {
      CheckpointEntry em;
      em.name = prefix + ".m." + name;
      em.dims = {static_cast<std::uint32_t>(tensor.numel())};
      em.data.assign(m_[idx].begin(), m_[idx].end());
      out.push_back(std::move(em));
      CheckpointEntry ev;
      ev.name = prefix + ".v." + name;
      ev.dims = {static_cast<std::uint32_t>(tensor.numel())};
      ev.data.assign(v_[idx].begin(), v_[idx].end());
      out.push_back(std::move(ev));
      ++idx;
    }
  }

  void import_state(const std::string& prefix,
                    const std::vector<CheckpointEntry>& entries) {
    const CheckpointEntry* step_entry = find(entries, prefix + ".step");
    if (step_entry->data.size() != 1)
      throw std::runtime_error("adam: malformed step counter entry");
    t_ = static_cast<std::uint64_t>(step_entry->data[0]);
    std::size_t idx = 0;
    for (const auto& [name, tensor] : params_->items()) {
      const CheckpointEntry* em = find(entries, prefix + ".m." + name);
      const CheckpointEntry* ev = find(entries, prefix + ".v." + name);
      if (em->data.size() != tensor.numel() || ev->data.size() != tensor.numel())
        throw std::runtime_error("adam: moment size mismatch for '" + name +
                                 "'");
      m_[idx].assign(em->data.begin(), em->data.end());
      v_[idx].assign(ev->data.begin(), ev->data.end());
      ++idx;
    }
  }

  // Quantize internal double moments to f32, exactly as a save/load cycle
  // would.  Calling this right after saving a checkpoint makes continued
  // training bit-identical to training resumed from that checkpoint.
  void round_state_to_f32() {
    for (auto& m : m_)
      for (double& x : m) x = static_cast<double>(static_cast<float>(x));
    for (auto& v : v_)
      for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  }

 private:
  static const CheckpointEntry* find(const std::vector<CheckpointEntry>& es,
                                     const std::string& name) {
    for (const auto& e : es)
      if (e.name == name) return &e;
    throw std::runtime_error("adam: missing checkpoint entry '" + name + "'");
  }

  ParamSet<T>* params_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace dmgan
