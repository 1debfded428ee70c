// Dynamic key-value memory: writing (naive and gated), key addressing,
// value reading, and response (naive and gated). Image features are handled
// as an [N x N_r] matrix of per-pixel features, word features as [T x N_w].

#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dmgan/module.hpp"
#include "dmgan/tensor.hpp"

namespace dmgan {

template <typename T>
struct MemorySlots {
    Tensor<T> slots;  // [T x N_m]
    Tensor<T> gates;  // [T] write gates, undefined handle for naive writing
};

// Top-k word index/score rankings, descending, ties broken by lower index.
struct WordRanking {
    std::vector<std::pair<std::size_t, double>> by_write_gate;
    std::vector<std::pair<std::size_t, double>> by_addressing;
};

template <typename T>
class DynamicMemory {
public:
    DynamicMemory() = default;
    DynamicMemory(std::size_t n_w, std::size_t n_r, std::size_t n_m,
                  Rng& rng, ParamSet<T>& ps, const std::string& name)
        : write_map_(n_w, n_m, rng, ps, name + ".M"),
          write_word_map_(n_w, n_m, rng, ps, name + ".Mw"),
          write_img_map_(n_r, n_m, rng, ps, name + ".Mr"),
          gate_word_(ps.add_weight(name + ".gateA", {n_w, 1}, rng)),
          gate_img_(ps.add_weight(name + ".gateB", {n_r, 1}, rng)),
          gate_bias_(ps.add_zeros(name + ".gate_bias", {1})),
          key_map_(n_m, n_r, rng, ps, name + ".phiK"),
          value_map_(n_m, n_r, rng, ps, name + ".phiV"),
          resp_gate_w_(ps.add_weight(name + ".respW", {2 * n_r, 1}, rng)),
          resp_gate_b_(ps.add_zeros(name + ".resp_bias", {1})) {}

    // m_i = M(w_i); memory built from the words alone.
    MemorySlots<T> write_naive(const Tensor<T>& words) const {
        return {write_map_(words), Tensor<T>{}};
    }

    // g^w_i = sigmoid(A w_i + B rbar + bias), rbar the pixel-mean image
    // feature; m_i = Mw(w_i) g^w_i + Mr(rbar) (1 - g^w_i).
    MemorySlots<T> write_gated(const Tensor<T>& words, const Tensor<T>& image) const {
        const std::size_t t = words.dim(0);
        auto rbar = mean_rows(image);                                    // [1 x N_r]
        auto word_scores = reshape(matmul(words, gate_word_), {t});     // [T]
        auto img_score = add(matmul(rbar, gate_img_), reshape(gate_bias_, {1, 1}));
        auto gates = sigmoid(add_scalar_tensor(word_scores, reshape(img_score, {1})));
        auto from_words = scale_rows(write_word_map_(words), gates);
        auto from_image = scale_rows(repeat_rows(write_img_map_(rbar), t), one_minus(gates));
        return {add(from_words, from_image), gates};
    }

    // alpha_{i,j} = softmax over slots i of <phiK(m_i), r_j>, per pixel j.
    Tensor<T> key_address(const MemorySlots<T>& mem, const Tensor<T>& image) const {
        auto keys = key_map_(mem.slots);                       // [T x N_r]
        auto scores = matmul(keys, transpose(image));          // [T x N]
        return softmax(scores, 0);
    }

    // o_j = sum_i alpha_{i,j} phiV(m_i).
    Tensor<T> value_read(const MemorySlots<T>& mem, const Tensor<T>& alpha) const {
        return matmul(transpose(alpha), value_map_(mem.slots));  // [N x N_r]
    }

    // r_new_j = [o_j, r_j].
    static Tensor<T> respond_naive(const Tensor<T>& output, const Tensor<T>& image) {
        if (output.dim(0) != image.dim(0))
            throw std::invalid_argument("respond_naive: pixel count mismatch");
        return concat<T>({output, image}, 1);  // [N x 2 N_r]
    }

    // g^r_j = sigmoid(W [o_j, r_j] + b); r_new_j = o_j g^r_j + r_j (1 - g^r_j).
    Tensor<T> respond_gated(const Tensor<T>& output, const Tensor<T>& image) const {
        auto joint = respond_naive(output, image);
        const std::size_t n = joint.dim(0);
        auto scores = add_rowvec(matmul(joint, resp_gate_w_), resp_gate_b_);
        auto gates = reshape(sigmoid(scores), {n});
        return add(scale_rows(output, gates), scale_rows(image, one_minus(gates)));
    }

    // Accessors used by tests and weight-sharing configurations.
    Linear<T>& write_map() { return write_map_; }
    Linear<T>& write_word_map() { return write_word_map_; }
    Linear<T>& write_img_map() { return write_img_map_; }
    Tensor<T>& gate_bias() { return gate_bias_; }
    Tensor<T>& resp_gate_bias() { return resp_gate_b_; }

private:
    Linear<T> write_map_;                 // M, naive writing
    Linear<T> write_word_map_;            // M_w
    Linear<T> write_img_map_;             // M_r
    Tensor<T> gate_word_, gate_img_, gate_bias_;
    Linear<T> key_map_, value_map_;       // phi_K, phi_V
    Tensor<T> resp_gate_w_, resp_gate_b_;
};

// Rankings over words: by write gate, and by pixel-averaged addressing
// weight. Pure value-level inspection, no gradients. gates may be empty
// (naive writing), in which case the gate ranking is over zeros and the
// index tie-break produces [0..k).
inline WordRanking top_k_words(const std::vector<double>& alpha, std::size_t t, std::size_t n,
                               const std::vector<double>& gates, std::size_t k) {
    if (alpha.size() != t * n) throw std::invalid_argument("top_k_words: alpha size mismatch");
    if (k > t) throw std::invalid_argument("top_k_words: k exceeds word count");

    auto rank = [k](const std::vector<double>& score) {
        std::vector<std::size_t> idx(score.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
        std::vector<std::pair<std::size_t, double>> out;
        for (std::size_t i = 0; i < k; ++i) out.emplace_back(idx[i], score[idx[i]]);
        return out;
    };

    std::vector<double> mean_alpha(t, 0.0);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < n; ++j) mean_alpha[i] += alpha[i * n + j];
        mean_alpha[i] /= static_cast<double>(n);
    }
    std::vector<double> g = gates.empty() ? std::vector<double>(t, 0.0) : gates;
    if (g.size() != t) throw std::invalid_argument("top_k_words: gate size mismatch");

    return {rank(g), rank(mean_alpha)};
}

}  // namespace dmgan
