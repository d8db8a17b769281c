// Dense row-major tensors with reverse-mode differentiation. Small by
// design: just the operations a Transformer needs, each with an exact
// backward rule that the finite-difference checker can verify.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "zsnmt/util.hpp"

namespace zsnmt {

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

namespace detail {
// Gradient recording is thread-local; the training loop records graphs
// while decoding and evaluation run inside a NoGradGuard.
inline bool& grad_mode_flag() {
    static thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Value-semantics handle over a shared autograd node. Copies alias the
// same storage; the graph is immutable during forward/backward except for
// each node's own grad buffer.
template <typename T>
class Tensor {
  public:
    using Scalar = T;

    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;  // same length as value once touched
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;  // pushes node.grad into parents

        std::size_t numel() const { return value.size(); }
        void ensure_grad() {
            if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        }
    };
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(shape_numel(n->shape), v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }

    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    T item() const {
        if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    NodePtr node() const { return node_; }

    bool all_finite() const {
        for (T v : node_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Reverse-mode sweep from this (scalar) tensor. Single-threaded and
    // deterministic: nodes run in reverse topological order.
    void backward() {
        if (numel() != 1) throw DimensionError("backward() requires a scalar loss");
        node_->ensure_grad();
        node_->grad[0] = T(1);

        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        // Iterative DFS; stack entries carry the next-parent index.
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        // order is children-before-parents; traverse from the loss down.
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

  private:
    NodePtr node_;
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EMat<T>>;

template <typename T>
ConstMatMap<T> mat_of(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
    return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> mat_of(std::vector<T>& v, std::size_t rows, std::size_t cols) {
    return MatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Builds a graph node. Parents and backward are dropped entirely when
// gradients are disabled or no parent needs them, so inference forwards
// carry no graph.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> parents,
                  std::function<void(typename Tensor<T>::Node&)> backward) {
    auto n = std::make_shared<typename Tensor<T>::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Tensor<T>(std::move(n));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

template <typename T>
std::pair<std::size_t, std::size_t> as_2d(const Tensor<T>& a, const char* op) {
    if (a.rank() == 2) return {a.dim(0), a.dim(1)};
    if (a.rank() == 1) return {std::size_t{1}, a.dim(0)};
    throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(a.shape()));
}

}  // namespace detail

// ---- elementwise and structural ops ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return detail::make_op<T>(
        a.shape(), std::move(out), {a, b}, [](typename Tensor<T>::Node& n) {
            for (int k = 0; k < 2; ++k) {
                auto& p = *n.parents[k];
                if (!p.requires_grad) continue;
                p.ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
            }
        });
}

// n-ary sum; keeps batch-loss accumulation one node deep.
template <typename T>
Tensor<T> add_all(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw DimensionError("add_all: empty operand list");
    for (const auto& x : xs) detail::require_same_shape(xs[0], x, "add_all");
    std::vector<T> out(xs[0].numel(), T(0));
    for (const auto& x : xs) {
        const auto& v = x.values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    }
    return detail::make_op<T>(
        xs[0].shape(), std::move(out), xs, [](typename Tensor<T>::Node& n) {
            for (auto& pp : n.parents) {
                auto& p = *pp;
                if (!p.requires_grad) continue;
                p.ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_op<T>(
        a.shape(), std::move(out), {a, b}, [](typename Tensor<T>::Node& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
            }
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    return detail::make_op<T>(
        a.shape(), std::move(out), {a}, [c](typename Tensor<T>::Node& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
        });
}

// Broadcast-add a row vector b[n] to every row of a[m×n].
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& b) {
    auto [m, n] = detail::as_2d(a, "add_row");
    if (b.rank() != 1 || b.dim(0) != n)
        throw DimensionError("add_row: bias shape " + shape_str(b.shape()) +
                             " does not match row width " + std::to_string(n));
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = av[r * n + c] + bv[c];
    return detail::make_op<T>(
        a.shape(), std::move(out), {a, b}, [m, n](typename Tensor<T>::Node& nd) {
            auto& pa = *nd.parents[0];
            auto& pb = *nd.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < nd.grad.size(); ++i) pa.grad[i] += nd.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) pb.grad[c] += nd.grad[r * n + c];
            }
        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
    return detail::make_op<T>(
        a.shape(), std::move(out), {a}, [](typename Tensor<T>::Node& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                if (p.value[i] > T(0)) p.grad[i] += n.grad[i];
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    auto [m, n] = detail::as_2d(a, "transpose");
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[c * m + r] = av[r * n + c];
    return detail::make_op<T>(
        Shape{n, m}, std::move(out), {a}, [m, n](typename Tensor<T>::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) p.grad[r * n + c] += nd.grad[c * m + r];
        });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    auto [m, k] = detail::as_2d(a, "matmul");
    auto [k2, n] = detail::as_2d(b, "matmul");
    if (k != k2)
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    std::vector<T> out(m * n);
    detail::mat_of(out, m, n).noalias() =
        detail::mat_of(a.values(), m, k) * detail::mat_of(b.values(), k, n);
    return detail::make_op<T>(
        Shape{m, n}, std::move(out), {a, b}, [m, k, n](typename Tensor<T>::Node& nd) {
            auto& pa = *nd.parents[0];
            auto& pb = *nd.parents[1];
            auto dC = detail::mat_of(nd.grad, m, n);
            if (pa.requires_grad) {
                pa.ensure_grad();
                detail::mat_of(pa.grad, m, k).noalias() +=
                    dC * detail::mat_of(pb.value, k, n).transpose();
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                detail::mat_of(pb.grad, k, n).noalias() +=
                    detail::mat_of(pa.value, m, k).transpose() * dC;
            }
        });
}

// Row-wise softmax with max-subtraction. With causal=true, row i only
// distributes mass over columns [0, i]; masked entries are exactly zero,
// which keeps decoder causality exact rather than epsilon-small.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a, bool causal = false) {
    auto [m, n] = detail::as_2d(a, "softmax_rows");
    if (n < 1) throw DimensionError("softmax_rows: empty rows");
    if (causal && m > n)
        throw DimensionError("softmax_rows: causal mask needs cols >= rows");
    std::vector<T> out(a.numel(), T(0));
    const auto& av = a.values();
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t valid = causal ? r + 1 : n;
        const T* row = &av[r * n];
        T mx = row[0];
        for (std::size_t c = 1; c < valid; ++c) mx = std::max(mx, row[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < valid; ++c) {
            const T e = std::exp(row[c] - mx);
            out[r * n + c] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < valid; ++c) out[r * n + c] /= sum;
    }
    // Backward needs the output probabilities.
    auto probs = std::make_shared<std::vector<T>>(out);
    return detail::make_op<T>(
        a.shape(), std::move(out), {a},
        [m, n, causal, probs](typename Tensor<T>::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const auto& pv = *probs;
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t valid = causal ? r + 1 : n;
                T dot = T(0);
                for (std::size_t c = 0; c < valid; ++c)
                    dot += nd.grad[r * n + c] * pv[r * n + c];
                for (std::size_t c = 0; c < valid; ++c)
                    p.grad[r * n + c] += pv[r * n + c] * (nd.grad[r * n + c] - dot);
            }
        });
}

// Layer normalization over the last dimension with population statistics;
// epsilon sits inside the standard-deviation term so constant rows stay
// defined. y = (x - mu)/sqrt(var + eps) * g + b, per row.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& g, const Tensor<T>& b,
                     T epsilon = T(1e-6)) {
    auto [m, n] = detail::as_2d(a, "layer_norm");
    if (g.rank() != 1 || g.dim(0) != n || b.rank() != 1 || b.dim(0) != n)
        throw DimensionError("layer_norm: gain/bias must be vectors of width " + std::to_string(n));
    if (!(epsilon > T(0))) throw ConfigError("layer_norm: epsilon must be positive");
    std::vector<T> out(a.numel());
    auto xhat = std::make_shared<std::vector<T>>(a.numel());
    auto inv_std = std::make_shared<std::vector<T>>(m);
    const auto& av = a.values();
    const auto& gv = g.values();
    const auto& bv = b.values();
    for (std::size_t r = 0; r < m; ++r) {
        const T* row = &av[r * n];
        T mean = T(0);
        for (std::size_t c = 0; c < n; ++c) mean += row[c];
        mean /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t c = 0; c < n; ++c) {
            const T d = row[c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + epsilon);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < n; ++c) {
            const T xh = (row[c] - mean) * is;
            (*xhat)[r * n + c] = xh;
            out[r * n + c] = xh * gv[c] + bv[c];
        }
    }
    return detail::make_op<T>(
        a.shape(), std::move(out), {a, g, b},
        [m, n, xhat, inv_std](typename Tensor<T>::Node& nd) {
            auto& pa = *nd.parents[0];
            auto& pg = *nd.parents[1];
            auto& pb = *nd.parents[2];
            if (pg.requires_grad) {
                pg.ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c)
                        pg.grad[c] += nd.grad[r * n + c] * (*xhat)[r * n + c];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) pb.grad[c] += nd.grad[r * n + c];
            }
            if (pa.requires_grad) {
                pa.ensure_grad();
                const auto& gv = pg.value;
                for (std::size_t r = 0; r < m; ++r) {
                    // dxhat = dy * g; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) / std
                    T sum_dxh = T(0), sum_dxh_xh = T(0);
                    for (std::size_t c = 0; c < n; ++c) {
                        const T dxh = nd.grad[r * n + c] * gv[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * (*xhat)[r * n + c];
                    }
                    const T mean_dxh = sum_dxh / static_cast<T>(n);
                    const T mean_dxh_xh = sum_dxh_xh / static_cast<T>(n);
                    for (std::size_t c = 0; c < n; ++c) {
                        const T dxh = nd.grad[r * n + c] * gv[c];
                        pa.grad[r * n + c] +=
                            ((dxh - mean_dxh) - (*xhat)[r * n + c] * mean_dxh_xh) * (*inv_std)[r];
                    }
                }
            }
        });
}

// Gather rows of an embedding table; backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int>& ids) {
    auto [v, d] = detail::as_2d(table, "embedding_rows");
    if (ids.empty()) throw SequenceError("embedding_rows: empty id sequence");
    std::vector<T> out(ids.size() * d);
    const auto& tv = table.values();
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw IndexError("embedding id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        std::copy_n(&tv[static_cast<std::size_t>(id) * d], d, &out[r * d]);
    }
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return detail::make_op<T>(
        Shape{ids.size(), d}, std::move(out), {table},
        [d, ids_copy](typename Tensor<T>::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t r = 0; r < ids_copy->size(); ++r) {
                const std::size_t base = static_cast<std::size_t>((*ids_copy)[r]) * d;
                for (std::size_t c = 0; c < d; ++c) p.grad[base + c] += nd.grad[r * d + c];
            }
        });
}

// Column slice [c0, c1) of a 2-D tensor.
template <typename T>
Tensor<T> cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    auto [m, n] = detail::as_2d(a, "cols");
    if (c0 >= c1 || c1 > n) throw DimensionError("cols: bad column range");
    const std::size_t w = c1 - c0;
    std::vector<T> out(m * w);
    const auto& av = a.values();
    for (std::size_t r = 0; r < m; ++r)
        std::copy_n(&av[r * n + c0], w, &out[r * w]);
    return detail::make_op<T>(
        Shape{m, w}, std::move(out), {a}, [m, n, c0, w](typename Tensor<T>::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < w; ++c) p.grad[r * n + c0 + c] += nd.grad[r * w + c];
        });
}

// Row slice [r0, r1) of a 2-D tensor.
template <typename T>
Tensor<T> rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
    auto [m, n] = detail::as_2d(a, "rows");
    if (r0 >= r1 || r1 > m) throw DimensionError("rows: bad row range");
    const std::size_t h = r1 - r0;
    std::vector<T> out(h * n);
    std::copy_n(&a.values()[r0 * n], h * n, out.data());
    return detail::make_op<T>(
        Shape{h, n}, std::move(out), {a}, [n, r0, h](typename Tensor<T>::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < h * n; ++i) p.grad[r0 * n + i] += nd.grad[i];
        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: empty part list");
    const std::size_t m = detail::as_2d(parts[0], "concat_cols").first;
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        auto [pm, pn] = detail::as_2d(p, "concat_cols");
        if (pm != m) throw DimensionError("concat_cols: row counts differ");
        widths.push_back(pn);
        total += pn;
    }
    std::vector<T> out(m * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = parts[k].values();
        for (std::size_t r = 0; r < m; ++r)
            std::copy_n(&pv[r * widths[k]], widths[k], &out[r * total + off]);
        off += widths[k];
    }
    auto w_copy = std::make_shared<std::vector<std::size_t>>(widths);
    return detail::make_op<T>(
        Shape{m, total}, std::move(out), parts,
        [m, total, w_copy](typename Tensor<T>::Node& nd) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < nd.parents.size(); ++k) {
                auto& p = *nd.parents[k];
                const std::size_t w = (*w_copy)[k];
                if (p.requires_grad) {
                    p.ensure_grad();
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < w; ++c)
                            p.grad[r * w + c] += nd.grad[r * total + off + c];
                }
                off += w;
            }
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = T(0);
    for (T v : a.values()) s += v;
    return detail::make_op<T>(
        Shape{1}, {s}, {a}, [](typename Tensor<T>::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += nd.grad[0];
        });
}

// Inverted dropout; the sampled mask is replayed in backward. A rate of 0
// (or disabled grad-free evaluation paths passing rate 0) is an exact no-op.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, T rate, Rng& rng) {
    if (rate < T(0) || rate >= T(1)) throw ConfigError("dropout rate must be in [0,1)");
    if (rate == T(0)) return a;
    auto mask = std::make_shared<std::vector<T>>(a.numel());
    const T keep_scale = T(1) / (T(1) - rate);
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T m = rng.uniform() < static_cast<double>(rate) ? T(0) : keep_scale;
        (*mask)[i] = m;
        out[i] = av[i] * m;
    }
    return detail::make_op<T>(
        a.shape(), std::move(out), {a}, [mask](typename Tensor<T>::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i)
                p.grad[i] += nd.grad[i] * (*mask)[i];
        });
}

// Label-smoothed token cross entropy over logits[n×V]. The target
// distribution puts (1 - eps) on the gold index and eps/(V-1) on every
// other class. Positions whose gold index equals pad_id are skipped.
// Returns the sum over counted positions; `positions` reports how many.
template <typename T>
Tensor<T> cross_entropy_smoothed_sum(const Tensor<T>& logits, const std::vector<int>& gold,
                                     T eps_ls, int pad_id, std::size_t* positions = nullptr) {
    auto [n, vocab] = detail::as_2d(logits, "cross_entropy_smoothed");
    if (gold.size() != n)
        throw DimensionError("cross_entropy: gold length " + std::to_string(gold.size()) +
                             " vs logits rows " + std::to_string(n));
    if (eps_ls < T(0) || eps_ls >= T(1))
        throw ConfigError("label smoothing must be in [0,1)");
    if (eps_ls > T(0) && vocab < 2)
        throw ConfigError("label smoothing requires vocab size >= 2");
    for (int gidx : gold)
        if (gidx != pad_id && (gidx < 0 || static_cast<std::size_t>(gidx) >= vocab))
            throw IndexError("gold index " + std::to_string(gidx) + " out of range [0," +
                             std::to_string(vocab) + ")");

    const T off_mass = vocab > 1 ? eps_ls / static_cast<T>(vocab - 1) : T(0);
    const T gold_mass = T(1) - eps_ls;
    const auto& lv = logits.values();
    auto logp = std::make_shared<std::vector<T>>(n * vocab);
    std::size_t counted = 0;
    T total = T(0);
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = &lv[r * vocab];
        T mx = row[0];
        for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
        T lse = T(0);
        for (std::size_t c = 0; c < vocab; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        for (std::size_t c = 0; c < vocab; ++c) (*logp)[r * vocab + c] = row[c] - lse;
        if (gold[r] == pad_id) continue;
        ++counted;
        T row_loss = T(0);
        for (std::size_t c = 0; c < vocab; ++c) {
            const T q = static_cast<std::size_t>(gold[r]) == c ? gold_mass : off_mass;
            if (q != T(0)) row_loss -= q * (*logp)[r * vocab + c];
        }
        total += row_loss;
    }
    if (positions) *positions = counted;

    auto gold_copy = std::make_shared<std::vector<int>>(gold);
    return detail::make_op<T>(
        Shape{1}, {total}, {logits},
        [n, vocab, gold_copy, logp, gold_mass, off_mass, pad_id](typename Tensor<T>::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const T g0 = nd.grad[0];
            for (std::size_t r = 0; r < n; ++r) {
                if ((*gold_copy)[r] == pad_id) continue;
                for (std::size_t c = 0; c < vocab; ++c) {
                    const T q = static_cast<std::size_t>((*gold_copy)[r]) == c ? gold_mass : off_mass;
                    const T prob = std::exp((*logp)[r * vocab + c]);
                    p.grad[r * vocab + c] += g0 * (prob - q);
                }
            }
        });
}

// Mean over non-pad positions.
template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, const std::vector<int>& gold,
                                 T eps_ls, int pad_id = -1) {
    std::size_t positions = 0;
    Tensor<T> s = cross_entropy_smoothed_sum(logits, gold, eps_ls, pad_id, &positions);
    if (positions == 0) throw SequenceError("cross_entropy: no non-pad positions");
    return scale(s, T(1) / static_cast<T>(positions));
}

// ---- value helpers (leaf tensors, no graph) ----

template <typename T>
void fill_normal(Tensor<T>& t, double mean, double stddev, Rng& rng) {
    for (T& v : t.values()) v = static_cast<T>(mean + stddev * rng.normal());
}

template <typename T>
void fill_identity(Tensor<T>& t) {
    auto [m, n] = detail::as_2d(t, "fill_identity");
    if (m != n) throw DimensionError("fill_identity: square matrix required");
    std::fill(t.values().begin(), t.values().end(), T(0));
    for (std::size_t i = 0; i < m; ++i) t.values()[i * n + i] = T(1);
}

// Fixed sinusoidal position embedding rows [n×d]; a constant leaf.
template <typename T>
Tensor<T> positional_rows(std::size_t n, std::size_t d) {
    std::vector<T> out(n * d);
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            out[pos * d + i] = static_cast<T>(std::sin(angle));
            if (i + 1 < d) out[pos * d + i + 1] = static_cast<T>(std::cos(angle));
        }
    }
    return Tensor<T>::from({n, d}, std::move(out));
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& label) {
    const auto& v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(static_cast<double>(v[i])))
            throw NumericError("non-finite value in " + label + " at element " +
                               std::to_string(i));
    }
}

}  // namespace zsnmt
