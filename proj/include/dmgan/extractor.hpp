#pragma once

// Small CNN classifier over the 48 synthetic shape/color/background classes.
// Serves as the feature extractor behind the evaluation metrics: class
// probabilities feed the inception-style score, the penultimate activations
// feed the distribution distance.  Trained once and cached to disk.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "dataset.hpp"
#include "model.hpp"
#include "networks.hpp"
#include "tensor.hpp"

namespace dmgan {

inline constexpr std::size_t kExtractorRes = 32;
inline constexpr std::size_t kExtractorFeatureDim = 32;

template <typename T>
class Extractor {
 public:
  explicit Extractor(std::uint64_t seed = 7) {
    Rng init = derive_rng(seed, "extractor.init", 0);
    conv1_ = Conv3x3Layer<T>(3, 16, init, params_, "ext.c1");
    conv2_ = Conv3x3Layer<T>(16, 32, init, params_, "ext.c2");
    conv3_ = Conv3x3Layer<T>(32, 32, init, params_, "ext.c3");
    fc_feat_ = Linear<T>(32 * 4 * 4, kExtractorFeatureDim, init, params_,
                         "ext.feat");
    fc_logit_ = Linear<T>(kExtractorFeatureDim, kNumClasses, init, params_,
                          "ext.logit");
  }

  struct Output {
    Tensor<T> features;  // [1 x 32]
    Tensor<T> probs;     // [1 x 48]
  };

  // Image must be 3 x 16 x 16; downsample higher resolutions first.
  Output forward(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != kExtractorRes ||
        image.dim(2) != kExtractorRes)
      throw std::invalid_argument("extractor: expected 3x32x32 image");
    auto x = leaky_relu(conv1_(image, 2));  // 16 x 16 x 16
    x = leaky_relu(conv2_(x, 2));           // 32 x 8 x 8
    x = leaky_relu(conv3_(x, 2));           // 32 x 4 x 4
    auto flat = reshape(x, {1, x.numel()});
    Output out;
    out.features = relu(fc_feat_(flat));
    out.probs = softmax(fc_logit_(out.features), 1);
    return out;
  }

  // Accepts a raw CHW float image at any stage resolution.
  Output forward_raw(const std::vector<float>& img, std::size_t res) const {
    std::vector<float> resized;
    if (res == kExtractorRes)
      resized = img;
    else if (res > kExtractorRes)
      resized = downsample_avg(img, 3, res, res / kExtractorRes);
    else
      resized = upsample_nearest_raw(img, 3, res, kExtractorRes / res);
    std::vector<T> data(resized.begin(), resized.end());
    return forward(Tensor<T>({3, kExtractorRes, kExtractorRes}, std::move(data)));
  }

  std::size_t predict_class(const std::vector<float>& img, std::size_t res) const {
    auto out = forward_raw(img, res);
    const auto& p = out.probs.data();
    return static_cast<std::size_t>(
        std::max_element(p.begin(), p.end()) - p.begin());
  }

  // Train on procedurally generated samples until the held-out accuracy
  // reaches `target_accuracy` (checked every epoch), or until `max_steps`.
  // Returns the final held-out accuracy.
  double train(std::uint64_t seed, std::size_t train_count,
               std::size_t eval_count, double target_accuracy,
               std::size_t max_steps) {
    AdamConfig cfg;
    cfg.lr = 2e-3;
    cfg.beta1 = 0.9;
    Adam<T> opt(params_, cfg);
    constexpr std::size_t kBatch = 8;
    std::size_t step = 0;
    double acc = 0.0;
    Rng order = derive_rng(seed, "extractor.order", 0);
    while (step < max_steps) {
      auto loss = Tensor<T>::scalar(T(0));
      for (std::size_t b = 0; b < kBatch; ++b) {
        std::uint64_t idx = order.below(train_count);
        ShapeSpec spec = make_shape_spec(seed, idx);
        auto out = forward_raw(render_shape(spec, kExtractorRes), kExtractorRes);
        loss = add(loss, class_nll(out.probs, spec.class_id()));
      }
      loss = affine(loss, T(1) / T(kBatch), T(0));
      params_.zero_grads();
      loss.backward();
      opt.step();
      ++step;
      if (step % 200 == 0 || step == max_steps) {
        acc = accuracy(seed + 1, eval_count);
        if (acc >= target_accuracy) break;
      }
    }
    return acc;
  }

  double accuracy(std::uint64_t seed, std::size_t count) const {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < count; ++i) {
      ShapeSpec spec = make_shape_spec(seed, i);
      if (predict_class(render_shape(spec, kExtractorRes), kExtractorRes) ==
          spec.class_id())
        ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(count);
  }

  void save(const std::string& path) {
    std::vector<CheckpointEntry> entries;
    append_param_entries(params_, entries);
    save_checkpoint(path, entries);
  }

  void load(const std::string& path) {
    load_param_entries(params_, load_checkpoint(path));
  }

  ParamSet<T>& params() { return params_; }

 private:
  // -log p[target] with the probability floored away from zero.
  Tensor<T> class_nll(const Tensor<T>& probs, std::size_t target) const {
    auto mask = Tensor<T>::zeros({1, kNumClasses});
    mask.data()[target] = T(1);
    auto p_target = sum(mul(probs, mask));
    return affine(log_clamped(p_target), T(-1), T(0));
  }

  ParamSet<T> params_;
  Conv3x3Layer<T> conv1_, conv2_, conv3_;
  Linear<T> fc_feat_, fc_logit_;
};

}  // namespace dmgan
