// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with define-by-run reverse-mode differentiation.
//
// The scalar type is a template parameter: training runs float, oracle and
// gradient-check tests instantiate the identical graphs in double. The tape
// is rebuilt every step; a loss tensor keeps its whole graph alive through
// the shared parents of each node.

#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "bootmae/common.hpp"
#include "bootmae/rng.hpp"

namespace bootmae {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative extent in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename S>
struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until touched by backward / accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Distributes this node's grad into its parents' grads.
    std::function<void(Node&)> backprop;

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
    }
};

template <typename S>
class Tensor {
  public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("element count " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node<S>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<S> d(shape_numel(shape), S(0));
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        std::vector<S> d(shape_numel(shape), v);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(S v) { return from({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, S std_dev, bool requires_grad = false) {
        std::vector<S> d(shape_numel(shape));
        for (auto& x : d) x = static_cast<S>(rng.normal() * static_cast<double>(std_dev));
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor trunc_normal(Shape shape, Rng& rng, S std_dev, bool requires_grad = false) {
        std::vector<S> d(shape_numel(shape));
        for (auto& x : d) x = static_cast<S>(rng.trunc_normal(static_cast<double>(std_dev)));
        return from(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<S>& values() const { return node_->value; }
    std::vector<S>& mutable_values() { return node_->value; }
    const std::vector<S>& grad() const { return node_->grad; }
    S item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    // A grad-less copy of the value, cut off from the graph.
    Tensor detach() const { return from(node_->shape, node_->value, false); }

    void zero_grad() { node_->grad.clear(); }

    std::shared_ptr<Node<S>> node() const { return node_; }

    explicit Tensor(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <typename S>
std::shared_ptr<Node<S>> make_result(Shape shape, std::vector<S> value,
                                     std::vector<std::shared_ptr<Node<S>>> parents,
                                     std::function<void(Node<S>&)> backprop) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

template <typename S>
void accumulate(Node<S>& p, std::size_t i, S v) {
    p.grad[i] += v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

// add/sub allow the smaller operand's shape to be a suffix of the larger's;
// the missing leading axes broadcast (used for bias rows and similar). No
// other broadcasting exists.
template <typename S>
void check_suffix_broadcast(const Shape& a, const Shape& b) {
    const Shape& big = a.size() >= b.size() ? a : b;
    const Shape& small = a.size() >= b.size() ? b : a;
    const std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (small[i] != big[off + i])
            throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                             " do not align for elementwise op");
    }
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    check_suffix_broadcast<S>(a.shape(), b.shape());
    const bool a_big = a.numel() >= b.numel();
    const Tensor<S>& big = a_big ? a : b;
    const Tensor<S>& small = a_big ? b : a;
    const std::size_t nb = small.numel();
    std::vector<S> out(big.numel());
    const auto& bv = big.values();
    const auto& sv = small.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bv[i] + sv[i % nb];
    auto bn = big.node();
    auto sn = small.node();
    auto node = detail::make_result<S>(
        big.shape(), std::move(out), {a.node(), b.node()}, [bn, sn, nb](Node<S>& r) {
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < r.grad.size(); ++i) detail::accumulate(*bn, i, r.grad[i]);
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                for (std::size_t i = 0; i < r.grad.size(); ++i)
                    detail::accumulate(*sn, i % nb, r.grad[i]);
            }
        });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    check_suffix_broadcast<S>(a.shape(), b.shape());
    if (b.numel() > a.numel())
        throw ShapeError("sub broadcasts only the subtrahend: " + shape_str(a.shape()) + " - " +
                         shape_str(b.shape()));
    const std::size_t nb = b.numel();
    std::vector<S> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i % nb];
    auto an = a.node();
    auto bn = b.node();
    auto node = detail::make_result<S>(
        a.shape(), std::move(out), {a.node(), b.node()}, [an, bn, nb](Node<S>& r) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < r.grad.size(); ++i) detail::accumulate(*an, i, r.grad[i]);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < r.grad.size(); ++i)
                    detail::accumulate(*bn, i % nb, -r.grad[i]);
            }
        });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul requires equal shapes, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    std::vector<S> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto an = a.node();
    auto bn = b.node();
    auto node = detail::make_result<S>(
        a.shape(), std::move(out), {a.node(), b.node()}, [an, bn](Node<S>& r) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < r.grad.size(); ++i)
                    detail::accumulate(*an, i, r.grad[i] * bn->value[i]);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < r.grad.size(); ++i)
                    detail::accumulate(*bn, i, r.grad[i] * an->value[i]);
            }
        });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    std::vector<S> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    auto an = a.node();
    auto node = detail::make_result<S>(a.shape(), std::move(out), {a.node()}, [an, c](Node<S>& r) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r.grad.size(); ++i) detail::accumulate(*an, i, r.grad[i] * c);
    });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> shift(const Tensor<S>& a, S c) {
    std::vector<S> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
    auto an = a.node();
    auto node = detail::make_result<S>(a.shape(), std::move(out), {a.node()}, [an](Node<S>& r) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r.grad.size(); ++i) detail::accumulate(*an, i, r.grad[i]);
    });
    return Tensor<S>(std::move(node));
}

// Exact gelu, x * Phi(x).
template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<S> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(av[i]);
        out[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    auto an = a.node();
    auto node = detail::make_result<S>(a.shape(), std::move(out), {a.node()}, [an](Node<S>& r) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r.grad.size(); ++i) {
            const double x = static_cast<double>(an->value[i]);
            const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            detail::accumulate(*an, i, r.grad[i] * static_cast<S>(phi + x * pdf));
        }
    });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
    std::vector<S> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    auto an = a.node();
    auto node = detail::make_result<S>(a.shape(), std::move(out), {a.node()}, [an](Node<S>& r) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r.grad.size(); ++i)
            detail::accumulate(*an, i, r.grad[i] * r.value[i]);
    });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
    std::vector<S> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(av[i] > S(0))) throw NumericError("log of non-positive value");
        out[i] = std::log(av[i]);
    }
    auto an = a.node();
    auto node = detail::make_result<S>(a.shape(), std::move(out), {a.node()}, [an](Node<S>& r) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r.grad.size(); ++i)
            detail::accumulate(*an, i, r.grad[i] / an->value[i]);
    });
    return Tensor<S>(std::move(node));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// [m,k]x[k,n], [B,m,k]x[k,n], [B,m,k]x[B,k,n]; a rank-2 operand broadcasts
// across the other's batch axis.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    const int ra = a.rank();
    const int rb = b.rank();
    if (ra < 2 || ra > 3 || rb < 2 || rb > 3)
        throw ShapeError("matmul supports rank 2 or 3, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = a.dim(ra - 2), k = a.dim(ra - 1);
    const int kb = b.dim(rb - 2), n = b.dim(rb - 1);
    if (k != kb)
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int ba = ra == 3 ? a.dim(0) : 1;
    const int bb = rb == 3 ? b.dim(0) : 1;
    if (ra == 3 && rb == 3 && ba != bb)
        throw ShapeError("matmul batch extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int batch = std::max(ba, bb);

    Shape out_shape = (ra == 3 || rb == 3) ? Shape{batch, m, n} : Shape{m, n};
    std::vector<S> out(static_cast<std::size_t>(batch) * m * n, S(0));
    const auto& av = a.values();
    const auto& bv = b.values();
    const std::size_t sa = static_cast<std::size_t>(m) * k;
    const std::size_t sb = static_cast<std::size_t>(k) * n;
    const std::size_t so = static_cast<std::size_t>(m) * n;
    for (int t = 0; t < batch; ++t) {
        const S* pa = av.data() + (ra == 3 ? t * sa : 0);
        const S* pb = bv.data() + (rb == 3 ? t * sb : 0);
        S* po = out.data() + t * so;
        for (int i = 0; i < m; ++i) {
            for (int kk = 0; kk < k; ++kk) {
                const S aik = pa[i * k + kk];
                const S* pbr = pb + kk * n;
                S* por = po + i * n;
                for (int j = 0; j < n; ++j) por[j] += aik * pbr[j];
            }
        }
    }

    auto an = a.node();
    auto bn = b.node();
    auto node = detail::make_result<S>(
        std::move(out_shape), std::move(out), {a.node(), b.node()},
        [an, bn, m, k, n, batch, ra, rb, sa, sb, so](Node<S>& r) {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int t = 0; t < batch; ++t) {
                const S* pa = an->value.data() + (ra == 3 ? t * sa : 0);
                const S* pb = bn->value.data() + (rb == 3 ? t * sb : 0);
                const S* pg = r.grad.data() + t * so;
                if (an->requires_grad) {
                    S* ga = an->grad.data() + (ra == 3 ? t * sa : 0);
                    // dA = dC * B^T
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j) {
                            const S g = pg[i * n + j];
                            const S* pbr = pb + j;  // column j
                            for (int kk = 0; kk < k; ++kk) ga[i * k + kk] += g * pbr[kk * n];
                        }
                }
                if (bn->requires_grad) {
                    S* gb = bn->grad.data() + (rb == 3 ? t * sb : 0);
                    // dB = A^T * dC
                    for (int kk = 0; kk < k; ++kk)
                        for (int i = 0; i < m; ++i) {
                            const S aik = pa[i * k + kk];
                            const S* pgr = pg + i * n;
                            S* gbr = gb + kk * n;
                            for (int j = 0; j < n; ++j) gbr[j] += aik * pgr[j];
                        }
                }
            }
        });
    return Tensor<S>(std::move(node));
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

namespace detail {
// Iterates all 1-D lines along `axis`: calls fn(base_offset, stride, len).
template <typename F>
void for_each_line(const Shape& shape, int axis, F&& fn) {
    const int rank = static_cast<int>(shape.size());
    std::size_t stride = 1;
    for (int i = rank - 1; i > axis; --i) stride *= static_cast<std::size_t>(shape[i]);
    const std::size_t len = static_cast<std::size_t>(shape[axis]);
    std::size_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(shape[i]);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t s = 0; s < stride; ++s) {
            fn(o * stride * len + s, stride, len);
        }
    }
}
}  // namespace detail

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
    if (axis < 0) axis += a.rank();
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("softmax axis out of range for " + shape_str(a.shape()));
    const auto& av = a.values();
    for (const S& x : av)
        if (!std::isfinite(static_cast<double>(x))) throw NumericError("softmax of non-finite input");
    std::vector<S> out(a.numel());
    detail::for_each_line(a.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
        S m = av[base];
        for (std::size_t i = 1; i < len; ++i) m = std::max(m, av[base + i * stride]);
        S sum = S(0);
        for (std::size_t i = 0; i < len; ++i) {
            const S e = std::exp(av[base + i * stride] - m);
            out[base + i * stride] = e;
            sum += e;
        }
        for (std::size_t i = 0; i < len; ++i) out[base + i * stride] /= sum;
    });
    auto an = a.node();
    const Shape sh = a.shape();
    auto node = detail::make_result<S>(
        a.shape(), std::move(out), {a.node()}, [an, sh, axis](Node<S>& r) {
            an->ensure_grad();
            detail::for_each_line(sh, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
                S dot = S(0);
                for (std::size_t i = 0; i < len; ++i)
                    dot += r.grad[base + i * stride] * r.value[base + i * stride];
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t ix = base + i * stride;
                    detail::accumulate(*an, ix, r.value[ix] * (r.grad[ix] - dot));
                }
            });
        });
    return Tensor<S>(std::move(node));
}

// Normalizes the last axis to zero mean / unit variance (population variance,
// eps inside the sqrt), then applies the affine gain/bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
    if (!(eps > S(0))) throw ContractError("layer_norm requires eps > 0");
    const int d = x.dim(x.rank() - 1);
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm affine params must be [" + std::to_string(d) + "]");
    const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<S> out(x.numel());
    std::vector<S> xhat(x.numel());
    std::vector<S> inv_sd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* px = xv.data() + r * d;
        S mean = S(0);
        for (int i = 0; i < d; ++i) mean += px[i];
        mean /= static_cast<S>(d);
        S var = S(0);
        for (int i = 0; i < d; ++i) {
            const S c = px[i] - mean;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S isd = S(1) / std::sqrt(var + eps);
        inv_sd[r] = isd;
        for (int i = 0; i < d; ++i) {
            const S h = (px[i] - mean) * isd;
            xhat[r * d + i] = h;
            out[r * d + i] = h * gv[i] + bv[i];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    auto node = detail::make_result<S>(
        x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
        [xn, gn, bn, d, rows, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Node<S>& r) {
            if (xn->requires_grad) xn->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t row = 0; row < rows; ++row) {
                const S* g = r.grad.data() + row * d;
                const S* h = xhat.data() + row * d;
                if (gn->requires_grad || bn->requires_grad) {
                    for (int i = 0; i < d; ++i) {
                        if (gn->requires_grad) gn->grad[static_cast<std::size_t>(i)] += g[i] * h[i];
                        if (bn->requires_grad) bn->grad[static_cast<std::size_t>(i)] += g[i];
                    }
                }
                if (xn->requires_grad) {
                    S sum_dh = S(0), sum_dh_h = S(0);
                    for (int i = 0; i < d; ++i) {
                        const S dh = g[i] * gn->value[static_cast<std::size_t>(i)];
                        sum_dh += dh;
                        sum_dh_h += dh * h[i];
                    }
                    const S inv_d = S(1) / static_cast<S>(d);
                    for (int i = 0; i < d; ++i) {
                        const S dh = g[i] * gn->value[static_cast<std::size_t>(i)];
                        xn->grad[row * d + i] +=
                            inv_sd[row] * (dh - inv_d * sum_dh - h[i] * inv_d * sum_dh_h);
                    }
                }
            }
        });
    return Tensor<S>(std::move(node));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& a, int axis, bool take_mean = false) {
    if (axis < 0) axis += a.rank();
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("reduction axis out of range for " + shape_str(a.shape()));
    Shape out_shape;
    for (int i = 0; i < a.rank(); ++i)
        if (i != axis) out_shape.push_back(a.dim(i));
    if (out_shape.empty()) out_shape = {1};
    std::vector<S> out(shape_numel(out_shape), S(0));
    const auto& av = a.values();
    const S norm = take_mean ? S(1) / static_cast<S>(a.dim(axis)) : S(1);
    std::size_t oi = 0;
    detail::for_each_line(a.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
        S s = S(0);
        for (std::size_t i = 0; i < len; ++i) s += av[base + i * stride];
        out[oi++] = s * norm;
    });
    auto an = a.node();
    const Shape sh = a.shape();
    auto node = detail::make_result<S>(
        std::move(out_shape), std::move(out), {a.node()}, [an, sh, axis, norm](Node<S>& r) {
            an->ensure_grad();
            std::size_t oi = 0;
            detail::for_each_line(sh, axis,
                                  [&](std::size_t base, std::size_t stride, std::size_t len) {
                                      const S g = r.grad[oi++] * norm;
                                      for (std::size_t i = 0; i < len; ++i)
                                          detail::accumulate(*an, base + i * stride, g);
                                  });
        });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a, int axis) {
    return sum(a, axis, true);
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    S s = S(0);
    for (const S& v : a.values()) s += v;
    auto an = a.node();
    auto node = detail::make_result<S>(Shape{1}, {s}, {a.node()}, [an](Node<S>& r) {
        an->ensure_grad();
        const S g = r.grad[0];
        for (std::size_t i = 0; i < an->grad.size(); ++i) detail::accumulate(*an, i, g);
    });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

// ---------------------------------------------------------------------------
// movement
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    auto an = a.node();
    auto node = detail::make_result<S>(std::move(shape), a.values(), {a.node()}, [an](Node<S>& r) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r.grad.size(); ++i) detail::accumulate(*an, i, r.grad[i]);
    });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& perm) {
    const int rank = a.rank();
    if (static_cast<int>(perm.size()) != rank) throw ShapeError("permute rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(rank), false);
    Shape out_shape(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) {
        const int p = perm[static_cast<std::size_t>(i)];
        if (p < 0 || p >= rank || seen[static_cast<std::size_t>(p)])
            throw ShapeError("invalid permutation");
        seen[static_cast<std::size_t>(p)] = true;
        out_shape[static_cast<std::size_t>(i)] = a.dim(p);
    }
    std::vector<std::size_t> in_strides(static_cast<std::size_t>(rank), 1);
    for (int i = rank - 2; i >= 0; --i)
        in_strides[static_cast<std::size_t>(i)] =
            in_strides[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(a.dim(i + 1));
    std::vector<std::size_t> map(a.numel());
    std::vector<int> idx(static_cast<std::size_t>(rank), 0);
    for (std::size_t o = 0; o < a.numel(); ++o) {
        std::size_t src = 0;
        for (int i = 0; i < rank; ++i)
            src += static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) *
                   in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        map[o] = src;
        for (int i = rank - 1; i >= 0; --i) {
            if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
            idx[static_cast<std::size_t>(i)] = 0;
        }
    }
    std::vector<S> out(a.numel());
    const auto& av = a.values();
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = av[map[o]];
    auto an = a.node();
    auto node = detail::make_result<S>(std::move(out_shape), std::move(out), {a.node()},
                                       [an, map = std::move(map)](Node<S>& r) {
                                           an->ensure_grad();
                                           for (std::size_t o = 0; o < r.grad.size(); ++o)
                                               detail::accumulate(*an, map[o], r.grad[o]);
                                       });
    return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d requires rank 2");
    return permute(a, {1, 0});
}

// Concatenates along axis 0; all other extents must agree.
template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != b.rank() || a.rank() < 1)
        throw ShapeError("concat rank mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    for (int i = 1; i < a.rank(); ++i)
        if (a.dim(i) != b.dim(i))
            throw ShapeError("concat trailing extents differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Shape out_shape = a.shape();
    out_shape[0] += b.dim(0);
    std::vector<S> out;
    out.reserve(a.numel() + b.numel());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    auto an = a.node();
    auto bn = b.node();
    const std::size_t na = a.numel();
    auto node = detail::make_result<S>(
        std::move(out_shape), std::move(out), {a.node(), b.node()}, [an, bn, na](Node<S>& r) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < na; ++i) detail::accumulate(*an, i, r.grad[i]);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = na; i < r.grad.size(); ++i)
                    detail::accumulate(*bn, i - na, r.grad[i]);
            }
        });
    return Tensor<S>(std::move(node));
}

// Row selection along axis 0; indices may repeat. The adjoint scatter-adds.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, const std::vector<int>& indices) {
    if (a.rank() < 1) throw ShapeError("gather_rows requires rank >= 1");
    const int t = a.dim(0);
    const std::size_t row = a.numel() / static_cast<std::size_t>(std::max(t, 1));
    for (int ix : indices)
        if (ix < 0 || ix >= t)
            throw IndexError("gather index " + std::to_string(ix) + " out of range [0," +
                             std::to_string(t) + ")");
    Shape out_shape = a.shape();
    out_shape[0] = static_cast<int>(indices.size());
    std::vector<S> out(row * indices.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.data() + i * row, av.data() + static_cast<std::size_t>(indices[i]) * row,
                    row * sizeof(S));
    auto an = a.node();
    auto node = detail::make_result<S>(std::move(out_shape), std::move(out), {a.node()},
                                       [an, indices, row](Node<S>& r) {
                                           an->ensure_grad();
                                           for (std::size_t i = 0; i < indices.size(); ++i) {
                                               const std::size_t dst =
                                                   static_cast<std::size_t>(indices[i]) * row;
                                               for (std::size_t j = 0; j < row; ++j)
                                                   detail::accumulate(*an, dst + j,
                                                                      r.grad[i * row + j]);
                                           }
                                       });
    return Tensor<S>(std::move(node));
}

// [d] -> [n,d]; the adjoint sums over the repeated rows.
template <typename S>
Tensor<S> repeat_rows(const Tensor<S>& a, int n) {
    if (a.rank() != 1) throw ShapeError("repeat_rows expects a vector, got " + shape_str(a.shape()));
    if (n < 0) throw ShapeError("repeat_rows count must be non-negative");
    const int d = a.dim(0);
    std::vector<S> out(static_cast<std::size_t>(n) * d);
    const auto& av = a.values();
    for (int i = 0; i < n; ++i)
        std::memcpy(out.data() + static_cast<std::size_t>(i) * d, av.data(), static_cast<std::size_t>(d) * sizeof(S));
    auto an = a.node();
    auto node = detail::make_result<S>(Shape{n, d}, std::move(out), {a.node()}, [an, n, d](Node<S>& r) {
        an->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                detail::accumulate(*an, static_cast<std::size_t>(j),
                                   r.grad[static_cast<std::size_t>(i) * d + j]);
    });
    return Tensor<S>(std::move(node));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Visits each node exactly once in
// reverse topological order; repeated calls without zero_grad accumulate.
template <typename S>
void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->requires_grad) return;

    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> visited;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Node<S>* p = node->parents[child++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

template <typename S>
bool all_finite(const Tensor<S>& t) {
    for (const S& v : t.values())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

}  // namespace bootmae
