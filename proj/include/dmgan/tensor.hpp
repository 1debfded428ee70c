// Dense tensor with reverse-mode automatic differentiation.
//
// A Tensor<T> is a shared handle to a graph node holding the forward value,
// an optional gradient buffer and a backward closure. Ops build the graph
// implicitly; backward() replays it in reverse topological order. T is
// float for training and double for finite-difference gradient checking.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "dmgan/rng.hpp"

namespace dmgan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// C[M x P] += A[M x K] * B[K x P], row-major. The i-k-j loop order keeps the
// inner loop contiguous over both B and C so the compiler vectorizes it.
template <typename T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t p,
              const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b + kk * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // sized on demand, always data.size() once allocated
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;

        void ensure_grad() {
            if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        }
    };
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                        " does not match data size " + std::to_string(data.size()));
        n_ = std::make_shared<Node>();
        n_->shape = std::move(shape);
        n_->data = std::move(data);
        n_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        return Tensor(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        std::vector<T> d(shape_numel(shape));
        for (auto& v : d) v = static_cast<T>(rng.normal()) * stddev;
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->data.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
    std::size_t rank() const { return n_->shape.size(); }
    bool requires_grad() const { return n_->requires_grad; }

    std::vector<T>& data() { return n_->data; }
    const std::vector<T>& data() const { return n_->data; }
    std::vector<T>& grad() { n_->ensure_grad(); return n_->grad; }
    const std::vector<T>& grad() const { return n_->grad; }

    T item() const {
        if (numel() != 1) throw std::logic_error("item: tensor is not scalar");
        return n_->data[0];
    }

    void zero_grad() { n_->grad.assign(n_->data.size(), T(0)); }

    bool all_finite() const {
        for (T v : n_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    NodePtr node() const { return n_; }

    // Detached copy of the forward value (leaf, no history).
    Tensor detach(bool requires_grad = false) const {
        return Tensor(n_->shape, n_->data, requires_grad);
    }

    // Reverse-mode accumulation from a scalar loss. Grads of every
    // requires_grad node reachable from the loss are incremented, so call
    // zero_grad on leaves between backward passes.
    void backward() const {
        if (numel() != 1) throw std::logic_error("backward: loss must be scalar");
        std::vector<Node*> order;
        topo_sort(n_.get(), order);
        n_->ensure_grad();
        n_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            if (node->backward_fn && node->requires_grad) {
                node->ensure_grad();
                node->backward_fn(*node);
            }
        }
    }

    // Zero the grad of every node reachable from this one (for replaying
    // backward on an existing graph).
    void zero_all_grads() const {
        std::vector<Node*> order;
        topo_sort(n_.get(), order);
        for (Node* node : order) node->grad.assign(node->data.size(), T(0));
    }

    static Tensor from_node(NodePtr n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

    // Builds an op node: output shape/data plus backward closure over parents.
    static Tensor make_op(Shape shape, std::vector<T> data,
                          std::vector<NodePtr> parents,
                          std::function<void(Node&)> backward_fn) {
        Tensor out(std::move(shape), std::move(data));
        bool rg = false;
        for (const auto& p : parents) rg = rg || p->requires_grad;
        out.n_->requires_grad = rg;
        out.n_->parents = std::move(parents);
        if (rg) out.n_->backward_fn = std::move(backward_fn);
        return out;
    }

private:
    static void topo_sort(Node* root, std::vector<Node*>& order) {
        // Iterative post-order DFS; parent visit order is the recorded op
        // input order, so two backward passes run in identical order.
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                Node* parent = node->parents[idx++].get();
                if (visited.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    NodePtr n_;
};

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void accumulate(typename Tensor<T>::Node& dst, const std::vector<T>& g) {
    dst.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor<T>::make_op(a.shape(), std::move(out), {an, bn},
        [an, bn](typename Tensor<T>::Node& n) {
            if (an->requires_grad) detail::accumulate<T>(*an, n.grad);
            if (bn->requires_grad) detail::accumulate<T>(*bn, n.grad);
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor<T>::make_op(a.shape(), std::move(out), {an, bn},
        [an, bn](typename Tensor<T>::Node& n) {
            if (an->requires_grad) detail::accumulate<T>(*an, n.grad);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor<T>::make_op(a.shape(), std::move(out), {an, bn},
        [an, bn](typename Tensor<T>::Node& n) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    an->grad[i] += n.grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    bn->grad[i] += n.grad[i] * an->data[i];
            }
        });
}

// y = scale * x + shift, elementwise with constants. Covers negation,
// scalar scaling and the ubiquitous (1 - x).
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.data()[i] + shift;
    auto xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {xn},
        [xn, scale](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += scale * n.grad[i];
        });
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) { return affine(x, T(-1), T(1)); }

// Broadcast-add a scalar tensor (numel 1) to every element.
template <typename T>
Tensor<T> add_scalar_tensor(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw std::invalid_argument("add_scalar_tensor: s must be scalar");
    const T sv = s.data()[0];
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + sv;
    auto xn = x.node(), sn = s.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {xn, sn},
        [xn, sn](typename Tensor<T>::Node& n) {
            if (xn->requires_grad) detail::accumulate<T>(*xn, n.grad);
            if (sn->requires_grad) {
                sn->ensure_grad();
                T acc = T(0);
                for (T g : n.grad) acc += g;
                sn->grad[0] += acc;
            }
        });
}

// y = x / s for scalar tensor s; grads flow into both.
template <typename T>
Tensor<T> div_scalar_tensor(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw std::invalid_argument("div_scalar_tensor: s must be scalar");
    const T sv = s.data()[0];
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] / sv;
    auto xn = x.node(), sn = s.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {xn, sn},
        [xn, sn, sv](typename Tensor<T>::Node& n) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i] / sv;
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                T acc = T(0);
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    acc += n.grad[i] * xn->data[i];
                sn->grad[0] -= acc / (sv * sv);
            }
        });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

namespace detail {

template <typename T, typename F, typename DF>
Tensor<T> pointwise(const Tensor<T>& x, F f, DF df_from_xy) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
    auto xn = x.node();
    std::vector<T> y = out;  // saved forward values, many derivatives reuse them
    return Tensor<T>::make_op(x.shape(), std::move(out), {xn},
        [xn, df_from_xy, y = std::move(y)](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                xn->grad[i] += n.grad[i] * df_from_xy(xn->data[i], y[i]);
        });
}

}  // namespace detail

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::pointwise(x,
        [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::pointwise(x,
        [](T v) { return std::tanh(v); },
        [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::pointwise(x,
        [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
    return detail::pointwise(x,
        [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::pointwise(x,
        [](T v) { return std::exp(v); },
        [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    for (T v : x.data())
        if (!(v > T(0))) throw std::domain_error("log: non-positive input");
    return detail::pointwise(x,
        [](T v) { return std::log(v); },
        [](T v, T) { return T(1) / v; });
}

// log(max(x, floor)); the clamp keeps adversarial losses finite when a
// sigmoid saturates. No gradient through clamped entries.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T floor = T(1e-12)) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::log(std::max(x.data()[i], floor));
    auto xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {xn},
        [xn, floor](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                if (xn->data[i] > floor) xn->grad[i] += n.grad[i] / xn->data[i];
        });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    std::vector<T> out(m * p, T(0));
    gemm_acc(m, k, p, a.data().data(), b.data().data(), out.data());
    auto an = a.node(), bn = b.node();
    return Tensor<T>::make_op({m, p}, std::move(out), {an, bn},
        [an, bn, m, k, p](typename Tensor<T>::Node& n) {
            if (an->requires_grad) {
                // dA = g . B^T
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p; ++j) {
                        const T g = n.grad[i * p + j];
                        if (g == T(0)) continue;
                        for (std::size_t kk = 0; kk < k; ++kk)
                            an->grad[i * k + kk] += g * bn->data[kk * p + j];
                    }
            }
            if (bn->requires_grad) {
                // dB = A^T . g
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const T av = an->data[i * k + kk];
                        if (av == T(0)) continue;
                        for (std::size_t j = 0; j < p; ++j)
                            bn->grad[kk * p + j] += av * n.grad[i * p + j];
                    }
            }
        });
}

// mat[M x P] + row vector vec[P] broadcast over rows (bias add).
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& mat, const Tensor<T>& vec) {
    if (mat.rank() != 2 || vec.numel() != mat.dim(1))
        throw std::invalid_argument("add_rowvec: incompatible shapes");
    const std::size_t m = mat.dim(0), p = mat.dim(1);
    std::vector<T> out(mat.data());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) out[i * p + j] += vec.data()[j];
    auto mn = mat.node(), vn = vec.node();
    return Tensor<T>::make_op(mat.shape(), std::move(out), {mn, vn},
        [mn, vn, m, p](typename Tensor<T>::Node& n) {
            if (mn->requires_grad) detail::accumulate<T>(*mn, n.grad);
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p; ++j) vn->grad[j] += n.grad[i * p + j];
            }
        });
}

// Scale row i of mat[M x P] by v[i].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& mat, const Tensor<T>& v) {
    if (mat.rank() != 2 || v.numel() != mat.dim(0))
        throw std::invalid_argument("scale_rows: incompatible shapes");
    const std::size_t m = mat.dim(0), p = mat.dim(1);
    std::vector<T> out(m * p);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) out[i * p + j] = mat.data()[i * p + j] * v.data()[i];
    auto mn = mat.node(), vn = v.node();
    return Tensor<T>::make_op(mat.shape(), std::move(out), {mn, vn},
        [mn, vn, m, p](typename Tensor<T>::Node& n) {
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p; ++j)
                        mn->grad[i * p + j] += n.grad[i * p + j] * vn->data[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    T acc = T(0);
                    for (std::size_t j = 0; j < p; ++j)
                        acc += n.grad[i * p + j] * mn->data[i * p + j];
                    vn->grad[i] += acc;
                }
            }
        });
}

// Replicate a [1 x D] row into [count x D]; backward sums row gradients.
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& row, std::size_t count) {
    if (row.rank() != 2 || row.dim(0) != 1)
        throw std::invalid_argument("repeat_rows: expected a [1 x D] row");
    const std::size_t d = row.dim(1);
    std::vector<T> out(count * d);
    for (std::size_t i = 0; i < count; ++i)
        std::copy(row.data().begin(), row.data().end(), out.begin() + i * d);
    auto rn = row.node();
    return Tensor<T>::make_op({count, d}, std::move(out), {rn},
        [rn, count, d](typename Tensor<T>::Node& n) {
            rn->ensure_grad();
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t j = 0; j < d; ++j) rn->grad[j] += n.grad[i * d + j];
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
    const std::size_t m = x.dim(0), p = x.dim(1);
    std::vector<T> out(m * p);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) out[j * m + i] = x.data()[i * p + j];
    auto xn = x.node();
    return Tensor<T>::make_op({p, m}, std::move(out), {xn},
        [xn, m, p](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < p; ++j) xn->grad[i * p + j] += n.grad[j * m + i];
        });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    auto xn = x.node();
    return Tensor<T>::make_op(std::move(new_shape), x.data(), {xn},
        [xn](typename Tensor<T>::Node& n) { detail::accumulate<T>(*xn, n.grad); });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    const Shape& base = parts[0].shape();
    if (axis >= base.size()) throw std::invalid_argument("concat: axis out of range");
    Shape out_shape = base;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != base.size()) throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t d = 0; d < base.size(); ++d)
            if (d != axis && p.shape()[d] != base[d])
                throw std::invalid_argument("concat: non-axis extent mismatch");
        out_shape[axis] += p.shape()[axis];
    }
    // outer: product of extents before axis; inner: product after.
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= base[d];
    for (std::size_t d = axis + 1; d < base.size(); ++d) inner *= base[d];
    const std::size_t out_axis = out_shape[axis];

    std::vector<T> out(shape_numel(out_shape));
    std::vector<typename Tensor<T>::NodePtr> pnodes;
    std::vector<std::size_t> axis_sizes;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t pa = p.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(p.data().begin() + o * pa * inner,
                      p.data().begin() + (o + 1) * pa * inner,
                      out.begin() + (o * out_axis + offset) * inner);
        offset += pa;
        pnodes.push_back(p.node());
        axis_sizes.push_back(pa);
    }
    return Tensor<T>::make_op(std::move(out_shape), std::move(out), pnodes,
        [pnodes, axis_sizes, outer, inner, out_axis](typename Tensor<T>::Node& n) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < pnodes.size(); ++k) {
                const std::size_t pa = axis_sizes[k];
                if (pnodes[k]->requires_grad) {
                    pnodes[k]->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const T* src = n.grad.data() + (o * out_axis + off) * inner;
                        T* dst = pnodes[k]->grad.data() + o * pa * inner;
                        for (std::size_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
                    }
                }
                off += pa;
            }
        });
}

// Rows [start, start+count) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
    if (x.rank() != 2 || start + count > x.dim(0))
        throw std::invalid_argument("slice_rows: out of range");
    const std::size_t p = x.dim(1);
    std::vector<T> out(x.data().begin() + start * p, x.data().begin() + (start + count) * p);
    auto xn = x.node();
    return Tensor<T>::make_op({count, p}, std::move(out), {xn},
        [xn, start, p, count](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < count * p; ++i) xn->grad[start * p + i] += n.grad[i];
        });
}

// Gather rows of table[V x D] by index; backward scatters (embedding lookup).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
    if (table.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank-2");
    const std::size_t v = table.dim(0), d = table.dim(1);
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v) throw std::out_of_range("gather_rows: id out of range");
        std::copy(table.data().begin() + ids[i] * d, table.data().begin() + (ids[i] + 1) * d,
                  out.begin() + i * d);
    }
    auto tn = table.node();
    return Tensor<T>::make_op({ids.size(), d}, std::move(out), {tn},
        [tn, ids, d](typename Tensor<T>::Node& n) {
            tn->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < d; ++j)
                    tn->grad[ids[i] * d + j] += n.grad[i * d + j];
        });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    auto xn = x.node();
    return Tensor<T>::make_op({1}, {acc}, {xn},
        [xn](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (auto& g : xn->grad) g += n.grad[0];
        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const T inv = T(1) / static_cast<T>(x.numel());
    T acc = T(0);
    for (T v : x.data()) acc += v;
    auto xn = x.node();
    return Tensor<T>::make_op({1}, {acc * inv}, {xn},
        [xn, inv](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (auto& g : xn->grad) g += n.grad[0] * inv;
        });
}

// Mean over axis 0 of a rank-2 tensor: [M x D] -> [1 x D].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
    if (x.rank() != 2) throw std::invalid_argument("mean_rows: rank-2 only");
    const std::size_t m = x.dim(0), d = x.dim(1);
    const T inv = T(1) / static_cast<T>(m);
    std::vector<T> out(d, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += x.data()[i * d + j];
    for (auto& v : out) v *= inv;
    auto xn = x.node();
    return Tensor<T>::make_op({1, d}, std::move(out), {xn},
        [xn, m, d, inv](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j) xn->grad[i * d + j] += n.grad[j] * inv;
        });
}

// Numerically stable softmax along one axis (max subtraction per slice).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) throw std::invalid_argument("softmax: axis out of range");
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::size_t n_axis = s[axis];

    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n_axis * inner + i;
            T mx = x.data()[base];
            for (std::size_t a = 1; a < n_axis; ++a)
                mx = std::max(mx, x.data()[base + a * inner]);
            T denom = T(0);
            for (std::size_t a = 0; a < n_axis; ++a) {
                const T e = std::exp(x.data()[base + a * inner] - mx);
                out[base + a * inner] = e;
                denom += e;
            }
            for (std::size_t a = 0; a < n_axis; ++a) out[base + a * inner] /= denom;
        }
    auto xn = x.node();
    std::vector<T> y = out;
    return Tensor<T>::make_op(x.shape(), std::move(out), {xn},
        [xn, outer, inner, n_axis, y = std::move(y)](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * n_axis * inner + i;
                    T dot = T(0);
                    for (std::size_t a = 0; a < n_axis; ++a)
                        dot += n.grad[base + a * inner] * y[base + a * inner];
                    for (std::size_t a = 0; a < n_axis; ++a)
                        xn->grad[base + a * inner] +=
                            y[base + a * inner] * (n.grad[base + a * inner] - dot);
                }
        });
}

// ---------------------------------------------------------------------------
// Spatial ops (single sample, CHW layout)

// 3x3 cross-correlation, zero padding 1. stride 1 keeps spatial size,
// stride 2 halves it. Forward/backward go through im2col + gemm.
template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                  std::size_t stride = 1) {
    if (x.rank() != 3 || k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3)
        throw std::invalid_argument("conv3x3: expected x[C,H,W], k[Co,Ci,3,3]");
    if (k.dim(1) != x.dim(0))
        throw std::invalid_argument("conv3x3: channel mismatch: input has " +
                                    std::to_string(x.dim(0)) + ", kernel expects " +
                                    std::to_string(k.dim(1)));
    if (bias.numel() != k.dim(0)) throw std::invalid_argument("conv3x3: bias size mismatch");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv3x3: stride must be 1 or 2");
    const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0);
    const std::size_t ho = (h + 2 - 3) / stride + 1;
    const std::size_t wo = (w + 2 - 3) / stride + 1;
    const std::size_t patch = ci * 9, npix = ho * wo;

    // col[patch x npix]
    std::vector<T> col(patch * npix, T(0));
    for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t dy = 0; dy < 3; ++dy)
            for (std::size_t dx = 0; dx < 3; ++dx) {
                T* crow = col.data() + ((c * 3 + dy) * 3 + dx) * npix;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + dy) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + dx) - 1;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        crow[oy * wo + ox] = x.data()[(c * h + iy) * w + ix];
                    }
                }
            }

    std::vector<T> out(co * npix, T(0));
    gemm_acc(co, patch, npix, k.data().data(), col.data(), out.data());
    for (std::size_t c = 0; c < co; ++c)
        for (std::size_t p = 0; p < npix; ++p) out[c * npix + p] += bias.data()[c];

    auto xn = x.node(), kn = k.node(), bn = bias.node();
    return Tensor<T>::make_op({co, ho, wo}, std::move(out), {xn, kn, bn},
        [xn, kn, bn, col = std::move(col), ci, h, w, co, ho, wo, stride]
        (typename Tensor<T>::Node& n) {
            const std::size_t patch = ci * 9, npix = ho * wo;
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t c = 0; c < co; ++c) {
                    T acc = T(0);
                    for (std::size_t p = 0; p < npix; ++p) acc += n.grad[c * npix + p];
                    bn->grad[c] += acc;
                }
            }
            if (kn->requires_grad) {
                // dK = g[co x npix] . col^T[npix x patch]
                kn->ensure_grad();
                for (std::size_t c = 0; c < co; ++c)
                    for (std::size_t q = 0; q < patch; ++q) {
                        T acc = T(0);
                        const T* grow = n.grad.data() + c * npix;
                        const T* crow = col.data() + q * npix;
                        for (std::size_t p = 0; p < npix; ++p) acc += grow[p] * crow[p];
                        kn->grad[c * patch + q] += acc;
                    }
            }
            if (xn->requires_grad) {
                // dcol = K^T . g, then scatter back through the im2col map.
                xn->ensure_grad();
                std::vector<T> dcol(patch * npix, T(0));
                for (std::size_t c = 0; c < co; ++c)
                    for (std::size_t q = 0; q < patch; ++q) {
                        const T kv = kn->data[c * patch + q];
                        if (kv == T(0)) continue;
                        const T* grow = n.grad.data() + c * npix;
                        T* drow = dcol.data() + q * npix;
                        for (std::size_t p = 0; p < npix; ++p) drow[p] += kv * grow[p];
                    }
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t dy = 0; dy < 3; ++dy)
                        for (std::size_t dx = 0; dx < 3; ++dx) {
                            const T* drow = dcol.data() + ((c * 3 + dy) * 3 + dx) * npix;
                            for (std::size_t oy = 0; oy < ho; ++oy) {
                                const std::ptrdiff_t iy =
                                    static_cast<std::ptrdiff_t>(oy * stride + dy) - 1;
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t ox = 0; ox < wo; ++ox) {
                                    const std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(ox * stride + dx) - 1;
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                    xn->grad[(c * h + iy) * w + ix] += drow[oy * wo + ox];
                                }
                            }
                        }
            }
        });
}

// Nearest-neighbour 2x upsampling; backward sums each 2x2 block.
template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x) {
    if (x.rank() != 3) throw std::invalid_argument("nearest_upsample: expected [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<T> out(c * 4 * h * w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const T v = x.data()[(ch * h + y) * w + xx];
                const std::size_t base = (ch * 2 * h + 2 * y) * 2 * w + 2 * xx;
                out[base] = v;
                out[base + 1] = v;
                out[base + 2 * w] = v;
                out[base + 2 * w + 1] = v;
            }
    auto xn = x.node();
    return Tensor<T>::make_op({c, 2 * h, 2 * w}, std::move(out), {xn},
        [xn, c, h, w](typename Tensor<T>::Node& n) {
            xn->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const std::size_t base = (ch * 2 * h + 2 * y) * 2 * w + 2 * xx;
                        xn->grad[(ch * h + y) * w + xx] +=
                            n.grad[base] + n.grad[base + 1] +
                            n.grad[base + 2 * w] + n.grad[base + 2 * w + 1];
                    }
        });
}

}  // namespace dmgan
