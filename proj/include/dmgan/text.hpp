// Text side of the pipeline: vocabulary, a small trainable bidirectional
// GRU encoder producing word features W and sentence feature s, and
// conditioning augmentation (resampled sentence code with KL regulariser).

#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmgan/module.hpp"
#include "dmgan/tensor.hpp"

namespace dmgan {

class Vocabulary {
public:
    static constexpr std::size_t kPadId = 0;

    Vocabulary() { add("<pad>"); }

    std::size_t add(const std::string& token) {
        auto it = token_to_id_.find(token);
        if (it != token_to_id_.end()) return it->second;
        const std::size_t id = tokens_.size();
        token_to_id_.emplace(token, id);
        tokens_.push_back(token);
        return id;
    }

    std::size_t id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        if (it == token_to_id_.end())
            throw std::out_of_range("vocabulary: unknown token '" + token + "'");
        return it->second;
    }

    const std::string& token(std::size_t id) const { return tokens_.at(id); }
    std::size_t size() const { return tokens_.size(); }

    // Lowercased whitespace tokenization.
    std::vector<std::size_t> encode_caption(const std::string& caption) const {
        std::istringstream ss(caption);
        std::vector<std::size_t> ids;
        std::string tok;
        while (ss >> tok) {
            for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            ids.push_back(id(tok));
        }
        return ids;
    }

    // One token per line, line number = id. Line 0 is the PAD token.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("vocabulary: cannot write " + path);
        for (const auto& t : tokens_) out << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("vocabulary: cannot read " + path);
        Vocabulary v;
        v.tokens_.clear();
        v.token_to_id_.clear();
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            v.token_to_id_.emplace(line, v.tokens_.size());
            v.tokens_.push_back(line);
        }
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> token_to_id_;
};

// Single-direction GRU parameters over [1 x E] inputs with [1 x H] state.
template <typename T>
struct GruCell {
    Linear<T> xz, xr, xh;  // input projections
    Tensor<T> uz, ur, uh;  // recurrent weights [H x H]

    GruCell() = default;
    GruCell(std::size_t in, std::size_t hidden, Rng& rng, ParamSet<T>& ps,
            const std::string& name)
        : xz(in, hidden, rng, ps, name + ".xz"),
          xr(in, hidden, rng, ps, name + ".xr"),
          xh(in, hidden, rng, ps, name + ".xh"),
          uz(ps.add_weight(name + ".uz", {hidden, hidden}, rng)),
          ur(ps.add_weight(name + ".ur", {hidden, hidden}, rng)),
          uh(ps.add_weight(name + ".uh", {hidden, hidden}, rng)) {}

    Tensor<T> step(const Tensor<T>& x, const Tensor<T>& h) const {
        auto z = sigmoid(add(xz(x), matmul(h, uz)));
        auto r = sigmoid(add(xr(x), matmul(h, ur)));
        auto cand = tanh(add(xh(x), matmul(mul(r, h), uh)));
        return add(mul(one_minus(z), h), mul(z, cand));
    }
};

template <typename T>
struct EncodedText {
    Tensor<T> words;     // [T x N_w]
    Tensor<T> sentence;  // [1 x N_w]
};

// Word features are the concatenated per-token hidden states of the two
// directions; the sentence feature concatenates the two final states.
template <typename T>
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(std::size_t vocab_size, std::size_t n_w, std::size_t t_max,
                Rng& rng, ParamSet<T>& ps)
        : n_w_(n_w), t_max_(t_max), hidden_(n_w / 2),
          embedding_(ps.add_weight("txt.embed", {vocab_size, hidden_}, rng)),
          fwd_(hidden_, hidden_, rng, ps, "txt.fwd"),
          bwd_(hidden_, hidden_, rng, ps, "txt.bwd"),
          mu_head_(n_w, n_w, rng, ps, "txt.ca_mu"),
          logvar_head_(n_w, n_w, rng, ps, "txt.ca_logvar") {
        if (n_w % 2 != 0) throw std::invalid_argument("text encoder: N_w must be even");
    }

    EncodedText<T> encode(const std::vector<std::size_t>& tokens) const {
        const std::size_t t = tokens.size();
        if (t < 1 || t > t_max_)
            throw std::invalid_argument("encode: token count " + std::to_string(t) +
                                        " outside [1, " + std::to_string(t_max_) + "]");
        for (std::size_t id : tokens)
            if (id >= embedding_.dim(0))
                throw std::out_of_range("encode: token id " + std::to_string(id) +
                                        " outside vocabulary");
        auto embedded = gather_rows(embedding_, tokens);  // [T x H]

        std::vector<Tensor<T>> hf(t), hb(t);
        auto h = Tensor<T>::zeros({1, hidden_});
        for (std::size_t i = 0; i < t; ++i) {
            h = fwd_.step(slice_rows(embedded, i, 1), h);
            hf[i] = h;
        }
        h = Tensor<T>::zeros({1, hidden_});
        for (std::size_t i = t; i-- > 0;) {
            h = bwd_.step(slice_rows(embedded, i, 1), h);
            hb[i] = h;
        }
        std::vector<Tensor<T>> rows(t);
        for (std::size_t i = 0; i < t; ++i) rows[i] = concat<T>({hf[i], hb[i]}, 1);
        EncodedText<T> out;
        out.words = t == 1 ? rows[0] : concat<T>(rows, 0);
        out.sentence = concat<T>({hf[t - 1], hb[0]}, 1);
        return out;
    }

    struct CaResult {
        Tensor<T> code;    // resampled sentence code, [1 x N_w]
        Tensor<T> mu;      // [1 x N_w]
        Tensor<T> logvar;  // [1 x N_w]
    };

    // code = mu + exp(logvar / 2) * noise in train mode, mu in eval mode.
    CaResult condition_augment(const Tensor<T>& sentence, const Tensor<T>& noise,
                               bool train_mode) const {
        CaResult res;
        res.mu = mu_head_(sentence);
        res.logvar = logvar_head_(sentence);
        if (train_mode) {
            auto stddev = exp(affine(res.logvar, T(0.5), T(0)));
            res.code = add(res.mu, mul(stddev, noise));
        } else {
            res.code = res.mu;
        }
        return res;
    }

    std::size_t n_w() const { return n_w_; }
    std::size_t t_max() const { return t_max_; }

private:
    std::size_t n_w_ = 0, t_max_ = 0, hidden_ = 0;
    Tensor<T> embedding_;
    GruCell<T> fwd_, bwd_;
    Linear<T> mu_head_, logvar_head_;
};

// D_KL( N(mu, diag(exp(logvar))) || N(0, I) )
//   = 1/2 sum_d ( mu_d^2 + exp(logvar_d) - logvar_d - 1 ).
template <typename T>
Tensor<T> ca_kl_loss(const Tensor<T>& mu, const Tensor<T>& logvar) {
    detail::check_same_shape(mu, logvar, "ca_kl_loss");
    auto terms = sub(add(mul(mu, mu), exp(logvar)), affine(logvar, T(1), T(1)));
    return affine(sum(terms), T(0.5), T(0));
}

}  // namespace dmgan
