// Generator stages (initial + memory-based refinement) and per-resolution
// conditional discriminators with spectral-normalized convolutions.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dmgan/memory.hpp"
#include "dmgan/module.hpp"
#include "dmgan/tensor.hpp"

namespace dmgan {

// Architecture switches for the ablation ladder:
//   baseline / +M / +M+WG / +M+WG+RG.
struct AblationFlags {
    bool memory = true;         // M: dynamic memory readout in refinement
    bool write_gate = true;     // WG: gated memory writing
    bool response_gate = true;  // RG: gated response

    static AblationFlags baseline() { return {false, false, false}; }
    static AblationFlags with_memory() { return {true, false, false}; }
    static AblationFlags with_write_gate() { return {true, true, false}; }
    static AblationFlags full() { return {true, true, true}; }

    std::string label() const {
        if (!memory) return "baseline";
        std::string s = "+M";
        if (write_gate) s += "+WG";
        if (response_gate) s += "+RG";
        return s;
    }
};

struct NetConfig {
    std::size_t z_dim = 16;
    std::size_t n_w = 32;   // word/sentence feature dim
    std::size_t n_r = 16;   // image feature dim
    std::size_t n_m = 32;   // memory dim
    std::size_t base_res = 16;
    std::size_t stages = 3;           // images at base_res * 2^i
    std::size_t g_channels = 32;      // G0 channels at 4x4
    std::size_t d_channels = 16;      // D channels after first downsample
    std::size_t t_max = 8;
    AblationFlags flags;
};

// One power iteration against the persistent left singular vector estimate u:
//   v = normalize(W^T u), u' = normalize(W v), sigma = u'^T W v, return W/sigma.
// In eval mode u is used as stored and not advanced. sigma is built as a
// graph node over W (u, v constant), so gradients see the normalization.
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& w2d, Tensor<T>& u, bool update) {
    const std::size_t rows = w2d.dim(0), cols = w2d.dim(1);
    if (u.numel() != rows) throw std::invalid_argument("spectral_normalize: u size mismatch");
    const auto& w = w2d.data();

    auto normalize = [](std::vector<T>& v) {
        T norm = T(0);
        for (T x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < T(1e-20)) norm = T(1e-20);
        for (T& x : v) x /= norm;
    };

    std::vector<T> v(cols, T(0));
    for (std::size_t i = 0; i < rows; ++i) {
        const T ui = u.data()[i];
        for (std::size_t j = 0; j < cols; ++j) v[j] += w[i * cols + j] * ui;
    }
    normalize(v);
    if (update) {
        std::vector<T> unew(rows, T(0));
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) unew[i] += w[i * cols + j] * v[j];
        normalize(unew);
        u.data() = unew;
    }

    Tensor<T> u_row({1, rows}, u.data());
    Tensor<T> v_col({cols, 1}, v);
    auto sigma = reshape(matmul(u_row, matmul(w2d, v_col)), {1});
    if (sigma.item() < T(1e-12)) sigma = Tensor<T>::scalar(T(1e-12));
    return div_scalar_tensor(w2d, sigma);
}

// 3x3 conv layer; when `spectral` the kernel is normalized through a
// persistent u buffer before every application.
template <typename T>
struct Conv3x3Layer {
    Tensor<T> k;     // [Co x Ci x 3 x 3]
    Tensor<T> bias;  // [Co]
    Tensor<T> sn_u;  // [Co], only when spectral
    bool spectral = false;

    Conv3x3Layer() = default;
    Conv3x3Layer(std::size_t ci, std::size_t co, Rng& rng, ParamSet<T>& ps,
                 const std::string& name, bool use_sn = false,
                 ParamSet<T>* buffers = nullptr)
        : k(ps.add_weight(name + ".k", {co, ci, 3, 3}, rng)),
          bias(ps.add_zeros(name + ".b", {co})),
          spectral(use_sn) {
        if (use_sn) {
            Rng urng = derive_rng(0xD15C0, name);
            sn_u = Tensor<T>::randn({co}, urng);
            T norm = T(0);
            for (T v : sn_u.data()) norm += v * v;
            norm = std::sqrt(norm);
            for (T& v : sn_u.data()) v /= norm;
            if (buffers) buffers->add(name + ".sn_u", sn_u);
            sn_u.node()->requires_grad = false;
        }
    }

    Tensor<T> operator()(const Tensor<T>& x, std::size_t stride = 1,
                         bool update_sn = false) const {
        if (!spectral) return conv3x3(x, k, bias, stride);
        const std::size_t co = k.dim(0);
        auto w2d = reshape(k, {co, k.numel() / co});
        auto wn = spectral_normalize(w2d, const_cast<Tensor<T>&>(sn_u), update_sn);
        return conv3x3(x, reshape(wn, k.shape()), bias, stride);
    }
};

template <typename T>
struct StageOutput {
    Tensor<T> image;     // [3 x H x W], tanh range
    Tensor<T> features;  // [N_r x H x W]
};

// Flatten [C x H x W] into per-pixel rows [H*W x C] and back.
template <typename T>
Tensor<T> chw_to_pixels(const Tensor<T>& x) {
    const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
    return transpose(reshape(x, {c, n}));
}

template <typename T>
Tensor<T> pixels_to_chw(const Tensor<T>& p, std::size_t h, std::size_t w) {
    return reshape(transpose(p), {p.dim(1), h, w});
}

// Initial stage: FC([z, s_code]) -> 4x4 grid -> upsampling stack to the
// base resolution, emitting feature map R0 and image x0.
template <typename T>
class GeneratorInitial {
public:
    GeneratorInitial() = default;
    GeneratorInitial(const NetConfig& cfg, Rng& rng, ParamSet<T>& ps)
        : cfg_(cfg),
          fc_(cfg.z_dim + cfg.n_w, cfg.g_channels * 16, rng, ps, "g0.fc") {
        std::size_t res = 4, ch = cfg.g_channels;
        while (res < cfg.base_res) {
            const std::size_t next_ch = res * 2 < cfg.base_res ? ch / 2 : cfg.n_r;
            ups_.emplace_back(ch, next_ch, rng, ps, "g0.up" + std::to_string(ups_.size()));
            ch = next_ch;
            res *= 2;
        }
        to_image_ = Conv3x3Layer<T>(cfg.n_r, 3, rng, ps, "g0.img");
    }

    StageOutput<T> generate(const Tensor<T>& z, const Tensor<T>& s_code) const {
        auto joint = concat<T>({reshape(z, {1, z.numel()}),
                                reshape(s_code, {1, s_code.numel()})}, 1);
        auto x = relu(fc_(joint));
        auto feat = reshape(x, {cfg_.g_channels, 4, 4});
        for (const auto& up : ups_)
            feat = relu(up(nearest_upsample(feat)));
        return {tanh(to_image_(feat)), feat};
    }

private:
    NetConfig cfg_;
    Linear<T> fc_;
    std::vector<Conv3x3Layer<T>> ups_;
    Conv3x3Layer<T> to_image_;
};

// Refinement stage: dynamic memory block (per ablation flags) -> residual
// blocks -> upsampling block; doubles the spatial resolution.
template <typename T>
class GeneratorRefine {
public:
    GeneratorRefine() = default;
    GeneratorRefine(const NetConfig& cfg, std::size_t stage, Rng& rng, ParamSet<T>& ps)
        : cfg_(cfg) {
        const std::string name = "g" + std::to_string(stage);
        memory_ = DynamicMemory<T>(cfg.n_w, cfg.n_r, cfg.n_m, rng, ps, name + ".mem");
        fuse_naive_ = Linear<T>(2 * cfg.n_r, cfg.n_r, rng, ps, name + ".fuse_n");
        for (std::size_t r = 0; r < 2; ++r) {
            res_a_.emplace_back(cfg.n_r, cfg.n_r, rng, ps,
                                name + ".res" + std::to_string(r) + "a");
            res_b_.emplace_back(cfg.n_r, cfg.n_r, rng, ps,
                                name + ".res" + std::to_string(r) + "b");
        }
        up_ = Conv3x3Layer<T>(cfg.n_r, cfg.n_r, rng, ps, name + ".up");
        to_image_ = Conv3x3Layer<T>(cfg.n_r, 3, rng, ps, name + ".img");
    }

    struct RefineOutput {
        Tensor<T> image;
        Tensor<T> features;
        Tensor<T> alpha;  // addressing weights, undefined when memory is off
        Tensor<T> gates;  // write gates, undefined unless WG
    };

    RefineOutput refine(const Tensor<T>& features_prev, const Tensor<T>& words) const {
        const std::size_t h = features_prev.dim(1), w = features_prev.dim(2);
        RefineOutput out;
        Tensor<T> fused;
        if (cfg_.flags.memory) {
            auto pixels = chw_to_pixels(features_prev);  // [N x N_r]
            auto mem = cfg_.flags.write_gate ? memory_.write_gated(words, pixels)
                                             : memory_.write_naive(words);
            out.alpha = memory_.key_address(mem, pixels);
            out.gates = mem.gates;
            auto o = memory_.value_read(mem, out.alpha);
            // The gated response is already N_r wide and feeds the residual
            // blocks directly; the naive concat needs a 1x1 projection back.
            if (cfg_.flags.response_gate) {
                fused = pixels_to_chw(memory_.respond_gated(o, pixels), h, w);
            } else {
                auto responded = DynamicMemory<T>::respond_naive(o, pixels);
                fused = pixels_to_chw(relu(fuse_naive_(responded)), h, w);
            }
        } else {
            fused = features_prev;
        }
        auto feat = fused;
        for (std::size_t r = 0; r < res_a_.size(); ++r)
            feat = add(feat, res_b_[r](relu(res_a_[r](feat))));
        feat = relu(up_(nearest_upsample(feat)));
        out.features = feat;
        out.image = tanh(to_image_(feat));
        return out;
    }

    DynamicMemory<T>& memory() { return memory_; }

private:
    NetConfig cfg_;
    DynamicMemory<T> memory_;
    Linear<T> fuse_naive_;
    std::vector<Conv3x3Layer<T>> res_a_, res_b_;
    Conv3x3Layer<T> up_, to_image_;
};

// Downsampling conv stack to 4x4 with spectral normalization, then an
// unconditional logit head and a conditional head over the sentence code.
template <typename T>
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const NetConfig& cfg, std::size_t resolution, Rng& rng,
                  ParamSet<T>& ps, ParamSet<T>& buffers)
        : resolution_(resolution), n_w_(cfg.n_w) {
        const std::string name = "d" + std::to_string(resolution);
        std::size_t res = resolution, ci = 3, ch = cfg.d_channels;
        while (res > 4) {
            convs_.emplace_back(ci, ch, rng, ps,
                                name + ".c" + std::to_string(convs_.size()),
                                /*use_sn=*/true, &buffers);
            ci = ch;
            ch *= 2;
            res /= 2;
        }
        final_ch_ = ci;
        uncond_head_ = Linear<T>(final_ch_ * 16, 1, rng, ps, name + ".uncond");
        cond_conv_ = Conv3x3Layer<T>(final_ch_ + cfg.n_w, final_ch_, rng, ps,
                                     name + ".cc", /*use_sn=*/true, &buffers);
        cond_head_ = Linear<T>(final_ch_ * 16, 1, rng, ps, name + ".cond");
    }

    struct Logits {
        Tensor<T> unconditional;  // [1]
        Tensor<T> conditional;    // [1]
    };

    // update_sn advances every layer's power iteration by one step; pass it
    // once per training step and false for all other forwards.
    Logits discriminate(const Tensor<T>& image, const Tensor<T>& s_code,
                        bool update_sn = false) const {
        if (image.rank() != 3 || image.dim(1) != resolution_ || image.dim(2) != resolution_)
            throw std::invalid_argument(
                "discriminate: expected 3x" + std::to_string(resolution_) + "x" +
                std::to_string(resolution_) + " image, got " + shape_str(image.shape()));
        auto feat = image;
        for (const auto& conv : convs_)
            feat = leaky_relu(conv(feat, 2, update_sn));

        Logits out;
        auto flat = reshape(feat, {1, final_ch_ * 16});
        out.unconditional = reshape(uncond_head_(flat), {1});

        // sentence code replicated over the 4x4 grid, channel-concatenated
        auto code = reshape(s_code, {1, n_w_});
        auto tiled = reshape(transpose(repeat_rows(code, 16)), {n_w_, 4, 4});
        auto joint = concat<T>({feat, tiled}, 0);
        auto cfeat = leaky_relu(cond_conv_(joint, 1, update_sn));
        out.conditional = reshape(cond_head_(reshape(cfeat, {1, final_ch_ * 16})), {1});
        return out;
    }

    std::size_t resolution() const { return resolution_; }

private:
    std::size_t resolution_ = 0, n_w_ = 0, final_ch_ = 0;
    std::vector<Conv3x3Layer<T>> convs_;
    Conv3x3Layer<T> cond_conv_;
    Linear<T> uncond_head_, cond_head_;
};

}  // namespace dmgan
