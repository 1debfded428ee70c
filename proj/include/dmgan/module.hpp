// Named-parameter bookkeeping shared by all network modules.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dmgan/rng.hpp"
#include "dmgan/tensor.hpp"

namespace dmgan {

// DCGAN-convention initialisation: weights ~ N(0, 0.02), biases zero.
inline constexpr double kWeightInitStd = 0.02;

template <typename T>
class ParamSet {
public:
    Tensor<T> add(std::string name, Tensor<T> t) {
        t.node()->requires_grad = true;
        items_.emplace_back(std::move(name), t);
        return t;
    }

    Tensor<T> add_weight(std::string name, Shape shape, Rng& rng) {
        return add(std::move(name), Tensor<T>::randn(std::move(shape), rng,
                                                     static_cast<T>(kWeightInitStd)));
    }

    Tensor<T> add_zeros(std::string name, Shape shape) {
        return add(std::move(name), Tensor<T>::zeros(std::move(shape)));
    }

    const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
    std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }

    Tensor<T> find(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        throw std::out_of_range("param not found: " + name);
    }

    void zero_grads() {
        for (auto& [n, t] : items_) t.zero_grad();
    }

    std::size_t count_scalars() const {
        std::size_t total = 0;
        for (const auto& [n, t] : items_) total += t.numel();
        return total;
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
};

// Per-position linear map x[M x in] -> [M x out]; this is how every 1x1
// convolution in the architecture is realized.
template <typename T>
struct Linear {
    Tensor<T> w;  // [in x out]
    Tensor<T> b;  // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, ParamSet<T>& ps, const std::string& name)
        : w(ps.add_weight(name + ".w", {in, out}, rng)),
          b(ps.add_zeros(name + ".b", {out})) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return add_rowvec(matmul(x, w), b); }
};

}  // namespace dmgan
