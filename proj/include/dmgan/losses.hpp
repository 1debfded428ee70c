// Training objective: per-stage adversarial losses, conditioning
// augmentation KL, and the sentence-level contrastive matching loss that
// fills the DAMSM slot of the total objective.

#pragma once

#include <stdexcept>
#include <vector>

#include "dmgan/tensor.hpp"

namespace dmgan {

// Scalar record of one training step, serialized to the JSONL log.
struct LossReport {
    std::vector<double> generator_adv;      // per stage
    std::vector<double> discriminator;      // per stage
    double ca_loss = 0.0;
    double match_loss = 0.0;
    double total = 0.0;
};

// -1/2 [ log D(x) + log D(x, s) ] for one fake sample, D = sigmoid(logit).
template <typename T>
Tensor<T> generator_adv_loss(const Tensor<T>& uncond_logit, const Tensor<T>& cond_logit) {
    auto term = add(log_clamped(sigmoid(uncond_logit)), log_clamped(sigmoid(cond_logit)));
    return affine(sum(term), T(-0.5), T(0));
}

// -1/2 [ log D(xr) + log(1-D(xf)) + log D(xr,s) + log(1-D(xf,s)) ].
template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& real_uncond, const Tensor<T>& real_cond,
                             const Tensor<T>& fake_uncond, const Tensor<T>& fake_cond) {
    auto real_terms = add(log_clamped(sigmoid(real_uncond)), log_clamped(sigmoid(real_cond)));
    auto fake_terms = add(log_clamped(one_minus(sigmoid(fake_uncond))),
                          log_clamped(one_minus(sigmoid(fake_cond))));
    return affine(sum(add(real_terms, fake_terms)), T(-0.5), T(0));
}

namespace detail {

// Rows scaled to unit L2 norm; the exp(-log/2) route keeps it in-graph.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x) {
    const std::size_t d = x.dim(1);
    auto sq = mul(x, x);
    auto rowsum = affine(reshape(matmul(sq, Tensor<T>::full({d, 1}, T(1))), {x.dim(0)}),
                         T(1), T(1e-24));
    auto inv_norm = exp(affine(log(rowsum), T(-0.5), T(0)));
    return scale_rows(x, inv_norm);
}

}  // namespace detail

// Symmetric contrastive loss over cosine similarities, scaled by gamma.
// The matching pair is the correct class along each row and each column;
// the two cross-entropies are averaged over the batch and summed.
template <typename T>
Tensor<T> match_loss(const Tensor<T>& image_embs, const Tensor<T>& text_embs,
                     T gamma = T(10)) {
    if (image_embs.rank() != 2 || image_embs.shape() != text_embs.shape())
        throw std::invalid_argument("match_loss: embedding shape mismatch");
    const std::size_t b = image_embs.dim(0);
    if (b < 2) throw std::logic_error("match_loss: contrastive loss needs a batch of >= 2");

    auto sim = affine(matmul(detail::normalize_rows(image_embs),
                             transpose(detail::normalize_rows(text_embs))),
                      gamma, T(0));

    std::vector<T> eye(b * b, T(0));
    for (std::size_t i = 0; i < b; ++i) eye[i * b + i] = T(1);
    Tensor<T> mask({b, b}, eye);

    auto row_ce = sum(mul(log_clamped(softmax(sim, 1)), mask));
    auto col_ce = sum(mul(log_clamped(softmax(sim, 0)), mask));
    return affine(add(row_ce, col_ce), T(-1) / static_cast<T>(b), T(0));
}

// L = sum_i L_Gi + lambda1 * L_CA + lambda2 * L_match.
template <typename T>
Tensor<T> total_generator_loss(const std::vector<Tensor<T>>& adv_losses,
                               const Tensor<T>& ca, const Tensor<T>& match,
                               T lambda1, T lambda2) {
    if (lambda1 < T(0) || lambda2 < T(0))
        throw std::invalid_argument("total_generator_loss: negative weight");
    auto total = affine(ca, lambda1, T(0));
    total = add(total, affine(match, lambda2, T(0)));
    for (const auto& adv : adv_losses) total = add(total, adv);
    return total;
}

}  // namespace dmgan
