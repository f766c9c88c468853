#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "docdpm/tensor.hpp"

namespace docdpm {

// Reverse-mode tape. Graphs are built dynamically per forward pass; parameter
// nodes are long-lived and accumulate gradients across backward() calls until
// the optimizer clears them.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backfn;  // reads this->grad, accumulates into parents

    explicit Node(Tensor<T> v) : value(std::move(v)) {}

    void ensure_grad() {
        if (grad.empty() && value.numel() > 0) grad = Tensor<T>(value.shape());
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> v) {
    return std::make_shared<Node<T>>(std::move(v));
}

template <typename T>
Var<T> parameter(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>(std::move(v));
    n->requires_grad = true;
    return n;
}

template <typename T>
inline const Tensor<T>& val(const Var<T>& v) {
    return v->value;
}

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backfn) {
    auto n = std::make_shared<Node<T>>(std::move(value));
    for (const auto& p : parents)
        if (p && p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backfn = std::move(backfn);
    }
    return n;
}

template <typename T>
void accum(const Var<T>& p, std::int64_t i, T g) {
    if (p->requires_grad) {
        p->ensure_grad();
        p->grad[i] += g;
    }
}

}  // namespace detail

// Backpropagate from a scalar root. Parameter gradients accumulate.
template <typename T>
void backward(const Var<T>& root) {
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;

    // Iterative post-order DFS.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backfn) {
            n->ensure_grad();
            n->backfn(*n);
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            detail::accum(a, i, self.grad[i]);
            detail::accum(b, i, self.grad[i]);
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            detail::accum(a, i, self.grad[i]);
            detail::accum(b, i, -self.grad[i]);
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            detail::accum(a, i, self.grad[i] * b->value[i]);
            detail::accum(b, i, self.grad[i] * a->value[i]);
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * s;
    return detail::make_op<T>(std::move(out), {a}, [a, s](Node<T>& self) {
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            detail::accum(a, i, self.grad[i] * s);
    });
}

template <typename T>
Var<T> add_const(const Var<T>& a, T c) {
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + c;
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            detail::accum(a, i, self.grad[i]);
    });
}

// Per-batch-item scalar multiply: x is (N, ...), coeff has N entries.
template <typename T>
Var<T> scale_per_item(const Var<T>& x, std::vector<T> coeff) {
    int n = x->value.dim(0);
    if (static_cast<int>(coeff.size()) != n)
        throw std::invalid_argument("scale_per_item: coefficient count mismatch");
    std::int64_t stride = x->value.numel() / n;
    Tensor<T> out(x->value.shape());
    for (int i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < stride; ++j)
            out[i * stride + j] = x->value[i * stride + j] * coeff[static_cast<std::size_t>(i)];
    return detail::make_op<T>(std::move(out), {x}, [x, coeff, stride, n](Node<T>& self) {
        for (int i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < stride; ++j)
                detail::accum(x, i * stride + j, self.grad[i * stride + j] * coeff[static_cast<std::size_t>(i)]);
    });
}

template <typename T>
Var<T> detach(const Var<T>& a) {
    return constant(a->value);
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
    auto n = detail::make_op<T>(out, {a}, nullptr);
    if (n->requires_grad) {
        Tensor<T> saved = n->value;
        n->backfn = [a, saved](Node<T>& self) {
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
                T s = saved[i];
                detail::accum(a, i, self.grad[i] * s * (T(1) - s));
            }
        };
    }
    return n;
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a->value[i]);
    auto n = detail::make_op<T>(out, {a}, nullptr);
    if (n->requires_grad) {
        Tensor<T> saved = n->value;
        n->backfn = [a, saved](Node<T>& self) {
            for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                detail::accum(a, i, self.grad[i] * (T(1) - saved[i] * saved[i]));
        };
    }
    return n;
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        T s = T(1) / (T(1) + std::exp(-a->value[i]));
        out[i] = a->value[i] * s;
    }
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            T x = a->value[i];
            T s = T(1) / (T(1) + std::exp(-x));
            detail::accum(a, i, self.grad[i] * s * (T(1) + x * (T(1) - s)));
        }
    });
}

template <typename T>
Var<T> sqrt_op(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(a->value[i]);
    auto n = detail::make_op<T>(out, {a}, nullptr);
    if (n->requires_grad) {
        Tensor<T> saved = n->value;
        n->backfn = [a, saved](Node<T>& self) {
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
                // subgradient 0 at the origin
                T g = saved[i] > T(0) ? self.grad[i] / (T(2) * saved[i]) : T(0);
                detail::accum(a, i, g);
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    for (std::int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return detail::make_op<T>(Tensor<T>::scalar(s), {a}, [a](Node<T>& self) {
        T g = self.grad[0];
        for (std::int64_t i = 0; i < a->value.numel(); ++i) detail::accum(a, i, g);
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    std::int64_t n = a->value.numel();
    T s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += a->value[i];
    s /= static_cast<T>(n);
    return detail::make_op<T>(Tensor<T>::scalar(s), {a}, [a, n](Node<T>& self) {
        T g = self.grad[0] / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i) detail::accum(a, i, g);
    });
}

// sqrt(mean(x^2)): the pixel-count-normalized L2 norm.
template <typename T>
Var<T> rms_norm(const Var<T>& a) {
    return sqrt_op(mean_all(mul(a, a)));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes");
    int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor<T> out({m, n});
    detail::MapMat<T>(out.data(), m, n) =
        detail::CMapMat<T>(a->value.data(), m, k) * detail::CMapMat<T>(b->value.data(), k, n);
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& self) {
        detail::CMapMat<T> dout(self.grad.data(), m, n);
        if (a->requires_grad) {
            a->ensure_grad();
            detail::MapMat<T>(a->grad.data(), m, k).noalias() +=
                dout * detail::CMapMat<T>(b->value.data(), k, n).transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::MapMat<T>(b->grad.data(), k, n).noalias() +=
                detail::CMapMat<T>(a->value.data(), m, k).transpose() * dout;
        }
    });
}

// x:(N,Din) w:(Dout,Din) b:(Dout) or null -> (N,Dout)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    if (x->value.ndim() != 2 || w->value.ndim() != 2 || x->value.dim(1) != w->value.dim(1))
        throw std::invalid_argument("linear: incompatible shapes");
    int n = x->value.dim(0), din = x->value.dim(1), dout = w->value.dim(0);
    Tensor<T> out({n, dout});
    detail::MapMat<T> o(out.data(), n, dout);
    o.noalias() = detail::CMapMat<T>(x->value.data(), n, din) *
                  detail::CMapMat<T>(w->value.data(), dout, din).transpose();
    if (b) {
        if (b->value.numel() != dout) throw std::invalid_argument("linear: bad bias size");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dout; ++j) out.at2(i, j) += b->value[j];
    }
    std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    return detail::make_op<T>(std::move(out), std::move(parents),
                              [x, w, b, n, din, dout](Node<T>& self) {
        detail::CMapMat<T> dout_m(self.grad.data(), n, dout);
        if (x->requires_grad) {
            x->ensure_grad();
            detail::MapMat<T>(x->grad.data(), n, din).noalias() +=
                dout_m * detail::CMapMat<T>(w->value.data(), dout, din);
        }
        if (w->requires_grad) {
            w->ensure_grad();
            detail::MapMat<T>(w->grad.data(), dout, din).noalias() +=
                dout_m.transpose() * detail::CMapMat<T>(x->value.data(), n, din);
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < dout; ++j) b->grad[j] += self.grad[static_cast<std::int64_t>(i) * dout + j];
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops on 2-d (rows, cols) tensors
// ---------------------------------------------------------------------------

template <typename T>
Var<T> slice_rows(const Var<T>& x, int r0, int r1) {
    int rows = x->value.dim(0), cols = x->value.dim(1);
    if (r0 < 0 || r1 > rows || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    Tensor<T> out({r1 - r0, cols});
    std::copy(x->value.data() + static_cast<std::int64_t>(r0) * cols,
              x->value.data() + static_cast<std::int64_t>(r1) * cols, out.data());
    return detail::make_op<T>(std::move(out), {x}, [x, r0, cols](Node<T>& self) {
        std::int64_t base = static_cast<std::int64_t>(r0) * cols;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            detail::accum(x, base + i, self.grad[i]);
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int cols = parts[0]->value.dim(1);
    int rows = 0;
    for (const auto& p : parts) {
        if (p->value.ndim() != 2 || p->value.dim(1) != cols)
            throw std::invalid_argument("concat_rows: column mismatch");
        rows += p->value.dim(0);
    }
    Tensor<T> out({rows, cols});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->value.numel(), out.data() + off);
        off += p->value.numel();
    }
    std::vector<Var<T>> parents(parts.begin(), parts.end());
    return detail::make_op<T>(std::move(out), parents, [parts](Node<T>& self) {
        std::int64_t off = 0;
        for (const auto& p : parts) {
            for (std::int64_t i = 0; i < p->value.numel(); ++i)
                detail::accum(p, i, self.grad[off + i]);
            off += p->value.numel();
        }
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int c0, int c1) {
    int rows = x->value.dim(0), cols = x->value.dim(1);
    if (c0 < 0 || c1 > cols || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    Tensor<T> out({rows, c1 - c0});
    for (int r = 0; r < rows; ++r)
        std::copy(x->value.data() + static_cast<std::int64_t>(r) * cols + c0,
                  x->value.data() + static_cast<std::int64_t>(r) * cols + c1,
                  out.data() + static_cast<std::int64_t>(r) * (c1 - c0));
    return detail::make_op<T>(std::move(out), {x}, [x, c0, c1, cols](Node<T>& self) {
        int w = c1 - c0;
        int rows = self.grad.dim(0);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j)
                detail::accum(x, static_cast<std::int64_t>(r) * cols + c0 + j,
                              self.grad[static_cast<std::int64_t>(r) * w + j]);
    });
}

// Side-by-side concatenation: (R,Ca) ++ (R,Cb) -> (R,Ca+Cb)
template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
    int r = a->value.dim(0), ca = a->value.dim(1), cb = b->value.dim(1);
    if (b->value.dim(0) != r) throw std::invalid_argument("concat_cols: row mismatch");
    Tensor<T> out({r, ca + cb});
    for (int i = 0; i < r; ++i) {
        std::copy(a->value.data() + static_cast<std::int64_t>(i) * ca,
                  a->value.data() + static_cast<std::int64_t>(i + 1) * ca,
                  out.data() + static_cast<std::int64_t>(i) * (ca + cb));
        std::copy(b->value.data() + static_cast<std::int64_t>(i) * cb,
                  b->value.data() + static_cast<std::int64_t>(i + 1) * cb,
                  out.data() + static_cast<std::int64_t>(i) * (ca + cb) + ca);
    }
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, r, ca, cb](Node<T>& self) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < ca + cb; ++j) {
                T g = self.grad[static_cast<std::int64_t>(i) * (ca + cb) + j];
                if (j < ca)
                    detail::accum(a, static_cast<std::int64_t>(i) * ca + j, g);
                else
                    detail::accum(b, static_cast<std::int64_t>(i) * cb + (j - ca), g);
            }
    });
}

// Matrix transpose: (R,C) -> (C,R).
template <typename T>
Var<T> transpose2d(const Var<T>& a) {
    if (a->value.ndim() != 2) throw std::invalid_argument("transpose2d: expected a matrix");
    int r = a->value.dim(0), c = a->value.dim(1);
    Tensor<T> out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::int64_t>(j) * r + i] =
                a->value[static_cast<std::int64_t>(i) * c + j];
    return detail::make_op<T>(std::move(out), {a}, [a, r, c](Node<T>& self) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                detail::accum(a, static_cast<std::int64_t>(i) * c + j,
                              self.grad[static_cast<std::int64_t>(j) * r + i]);
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> shape) {
    Tensor<T> out = x->value.reshaped(shape);
    return detail::make_op<T>(std::move(out), {x}, [x](Node<T>& self) {
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) detail::accum(x, i, self.grad[i]);
    });
}

// Tile a length-C vector into (n, C); gradients sum back over rows.
template <typename T>
Var<T> broadcast_rows(const Var<T>& v, int n) {
    if (v->value.ndim() != 1) throw std::invalid_argument("broadcast_rows: expected a vector");
    int c = v->value.dim(0);
    Tensor<T> out({n, c});
    for (int i = 0; i < n; ++i)
        std::copy(v->value.data(), v->value.data() + c,
                  out.data() + static_cast<std::int64_t>(i) * c);
    return detail::make_op<T>(std::move(out), {v}, [v, n, c](Node<T>& self) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                detail::accum(v, j, self.grad[static_cast<std::int64_t>(i) * c + j]);
    });
}

// Row-wise log-softmax on (rows, classes).
template <typename T>
Var<T> log_softmax(const Var<T>& x) {
    int rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor<T> out(x->value.shape());
    for (int r = 0; r < rows; ++r) {
        const T* in = x->value.data() + static_cast<std::int64_t>(r) * cols;
        T* o = out.data() + static_cast<std::int64_t>(r) * cols;
        T m = in[0];
        for (int c = 1; c < cols; ++c) m = std::max(m, in[c]);
        T lse = 0;
        for (int c = 0; c < cols; ++c) lse += std::exp(in[c] - m);
        lse = m + std::log(lse);
        for (int c = 0; c < cols; ++c) o[c] = in[c] - lse;
    }
    auto n = detail::make_op<T>(out, {x}, nullptr);
    if (n->requires_grad) {
        Tensor<T> saved = n->value;
        n->backfn = [x, saved, rows, cols](Node<T>& self) {
            for (int r = 0; r < rows; ++r) {
                std::int64_t base = static_cast<std::int64_t>(r) * cols;
                T gsum = 0;
                for (int c = 0; c < cols; ++c) gsum += self.grad[base + c];
                for (int c = 0; c < cols; ++c)
                    detail::accum(x, base + c,
                                  self.grad[base + c] - std::exp(saved[base + c]) * gsum);
            }
        };
    }
    return n;
}

}  // namespace docdpm
