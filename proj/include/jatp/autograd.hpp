#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "jatp/errors.hpp"
#include "jatp/tensor.hpp"

// Minimal define-by-run reverse-mode autodiff. Every forward pass builds a
// fresh graph of shared nodes; parameters live in long-lived leaf nodes so
// optimizers can read accumulated gradients after backward().
namespace jatp::ag {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    }
    void zero_grad() { grad.fill(T(0)); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return n;
}

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

template <class T>
void accumulate(Var<T>& p, const T* g, std::size_t n) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

// Backward pass from a scalar root. Seeds d(root)/d(root) = 1.
template <class T>
void backward(const Var<T>& root) {
    if (root->value.size() != 1)
        throw ArgumentError("backward() requires a scalar root");
    // Topological order by iterative post-order DFS.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
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
        if (n->backprop && n->requires_grad) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise / arithmetic ops

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value))
        throw ArgumentError("add: shape mismatch");
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a->value[i] + b->value[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        accumulate(n.parents[0], n.grad.data(), n.grad.size());
        accumulate(n.parents[1], n.grad.data(), n.grad.size());
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value))
        throw ArgumentError("sub: shape mismatch");
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a->value[i] - b->value[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        accumulate(n.parents[0], n.grad.data(), n.grad.size());
        if (n.parents[1]->requires_grad) {
            auto& p = n.parents[1];
            p->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                p->grad[i] -= n.grad[i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value))
        throw ArgumentError("mul: shape mismatch");
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a->value[i] * b->value[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        auto& a = n.parents[0];
        auto& b = n.parents[1];
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                a->grad[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                b->grad[i] += n.grad[i] * a->value[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * c;
    return make_op<T>(std::move(out), {a}, [c](Node<T>& n) {
        auto& a = n.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            a->grad[i] += n.grad[i] * c;
    });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a->value[i] > T(0) ? a->value[i] : T(0);
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& a = n.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (a->value[i] > T(0)) a->grad[i] += n.grad[i];
    });
}

// clamp to [0,1]; gradient is zero in the saturated regions (true clamp,
// not a straight-through estimator).
template <class T>
Var<T> clamp01(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::min(T(1), std::max(T(0), a->value[i]));
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& a = n.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (a->value[i] > T(0) && a->value[i] < T(1))
                a->grad[i] += n.grad[i];
    });
}

// mean of all elements -> scalar
template <class T>
Var<T> mean(const Var<T>& a) {
    const T inv = T(1) / T(a->value.size());
    T s = 0;
    for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    Tensor<T> out(Shape{1});
    out[0] = s * inv;
    return make_op<T>(std::move(out), {a}, [inv](Node<T>& n) {
        auto& a = n.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        const T g = n.grad[0] * inv;
        for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    });
}

template <class T>
Var<T> sum(const Var<T>& a) {
    T s = 0;
    for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    Tensor<T> out(Shape{1});
    out[0] = s;
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& a = n.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        const T g = n.grad[0];
        for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    });
}

// ---------------------------------------------------------------------------
// dense / conv layers

// x: (N, D), w: (K, D), b: (K) -> (N, K)
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMat = Eigen::Map<const Mat>;
    const int n = x->value.dim(0), d = x->value.dim(1), k = w->value.dim(0);
    if (w->value.dim(1) != d || b->value.dim(0) != k)
        throw ArgumentError("linear: shape mismatch");
    Tensor<T> out(Shape{n, k});
    CMat X(x->value.data(), n, d), W(w->value.data(), k, d);
    Eigen::Map<Mat> O(out.data(), n, k);
    O.noalias() = X * W.transpose();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) out[std::size_t(i) * k + j] += b->value[std::size_t(j)];
    return make_op<T>(std::move(out), {x, w, b}, [n, d, k](Node<T>& node) {
        auto& x = node.parents[0];
        auto& w = node.parents[1];
        auto& b = node.parents[2];
        CMat G(node.grad.data(), n, k);
        if (x->requires_grad) {
            x->ensure_grad();
            Eigen::Map<Mat> GX(x->grad.data(), n, d);
            CMat W(w->value.data(), k, d);
            GX.noalias() += G * W;
        }
        if (w->requires_grad) {
            w->ensure_grad();
            Eigen::Map<Mat> GW(w->grad.data(), k, d);
            CMat X(x->value.data(), n, d);
            GW.noalias() += G.transpose() * X;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j)
                    b->grad[std::size_t(j)] += node.grad[std::size_t(i) * k + j];
        }
    });
}

namespace detail {

// im2col for NCHW input; columns matrix is (C*kh*kw) x (N*Ho*Wo),
// column index = (n*Ho + oy)*Wo + ox, stored column-major.
template <class T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad,
            int ho, int wo, std::vector<T>& cols) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t krows = std::size_t(c) * kh * kw;
    const std::size_t ncols = std::size_t(n) * ho * wo;
    cols.assign(krows * ncols, T(0));
    const T* xd = x.data();
    for (int ni = 0; ni < n; ++ni) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const std::size_t col = (std::size_t(ni) * ho + oy) * wo + ox;
                T* dst = cols.data() + col * krows;
                for (int ci = 0; ci < c; ++ci) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) { dst += kw; continue; }
                        const T* src = xd + ((std::size_t(ni) * c + ci) * h + iy) * w;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            *dst++ = (ix >= 0 && ix < w) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_accum(const std::vector<T>& cols, int n, int c, int h, int w,
                  int kh, int kw, int stride, int pad, int ho, int wo,
                  Tensor<T>& gx) {
    const std::size_t krows = std::size_t(c) * kh * kw;
    T* xd = gx.data();
    for (int ni = 0; ni < n; ++ni) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const std::size_t col = (std::size_t(ni) * ho + oy) * wo + ox;
                const T* src = cols.data() + col * krows;
                for (int ci = 0; ci < c; ++ci) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) { src += kw; continue; }
                        T* dst = xd + ((std::size_t(ni) * c + ci) * h + iy) * w;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < w) dst[ix] += *src;
                            ++src;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x: (N, C, H, W), w: (Co, C, kh, kw), b: (Co)
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
              int pad) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;  // col-major
    const int n = x->value.dim(0), c = x->value.dim(1);
    const int h = x->value.dim(2), wi = x->value.dim(3);
    const int co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (w->value.dim(1) != c)
        throw ConfigError("conv2d: input has " + std::to_string(c) +
                          " channels, kernel expects " +
                          std::to_string(w->value.dim(1)));
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wi + 2 * pad - kw) / stride + 1;
    const std::size_t krows = std::size_t(c) * kh * kw;
    const std::size_t ncols = std::size_t(n) * ho * wo;

    auto cols = std::make_shared<std::vector<T>>();
    detail::im2col(x->value, kh, kw, stride, pad, ho, wo, *cols);

    // O (Co x ncols) = W (Co x krows) * cols
    std::vector<T> obuf(std::size_t(co) * ncols);
    {
        Eigen::Map<const Mat> C(cols->data(), Eigen::Index(krows), Eigen::Index(ncols));
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            W(w->value.data(), co, Eigen::Index(krows));
        Eigen::Map<Mat> O(obuf.data(), co, Eigen::Index(ncols));
        O.noalias() = W * C;
        for (int j = 0; j < co; ++j) O.row(j).array() += b->value[std::size_t(j)];
    }
    // rearrange (Co x N*Ho*Wo) column-major -> NCHW
    Tensor<T> out(Shape{n, co, ho, wo});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < co; ++ci) {
            T* dst = out.data() + ((std::size_t(ni) * co + ci) * ho) * wo;
            for (int p = 0; p < ho * wo; ++p)
                dst[p] = obuf[(std::size_t(ni) * ho * wo + p) * co + ci];
        }

    const bool keep_cols = w->requires_grad;
    auto back = [=](Node<T>& node) {
        auto& x = node.parents[0];
        auto& w = node.parents[1];
        auto& b = node.parents[2];
        // regather grad into (Co x ncols) column-major
        std::vector<T> gbuf(std::size_t(co) * ncols);
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < co; ++ci) {
                const T* src = node.grad.data() + ((std::size_t(ni) * co + ci) * ho) * wo;
                for (int p = 0; p < ho * wo; ++p)
                    gbuf[(std::size_t(ni) * ho * wo + p) * co + ci] = src[p];
            }
        Eigen::Map<const Mat> G(gbuf.data(), co, Eigen::Index(ncols));
        if (w->requires_grad) {
            w->ensure_grad();
            Eigen::Map<const Mat> C(cols->data(), Eigen::Index(krows), Eigen::Index(ncols));
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
                GW(w->grad.data(), co, Eigen::Index(krows));
            GW.noalias() += G * C.transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int j = 0; j < co; ++j) b->grad[std::size_t(j)] += G.row(j).sum();
        }
        if (x->requires_grad) {
            x->ensure_grad();
            std::vector<T> gcols(krows * ncols);
            Eigen::Map<Mat> GC(gcols.data(), Eigen::Index(krows), Eigen::Index(ncols));
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
                W(w->value.data(), co, Eigen::Index(krows));
            GC.noalias() = W.transpose() * G;
            detail::col2im_accum(gcols, n, c, h, wi, kh, kw, stride, pad, ho, wo,
                                 x->grad);
        }
    };
    auto node = make_op<T>(std::move(out), {x, w, b}, back);
    if (!keep_cols) cols->clear();  // free im2col buffer when dW is not needed
    return node;
}

// (N, C, H, W) -> (N, C)
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    const int n = x->value.dim(0), c = x->value.dim(1);
    const int hw = x->value.dim(2) * x->value.dim(3);
    Tensor<T> out(Shape{n, c});
    const T inv = T(1) / T(hw);
    for (int i = 0; i < n * c; ++i) {
        T s = 0;
        const T* src = x->value.data() + std::size_t(i) * hw;
        for (int p = 0; p < hw; ++p) s += src[p];
        out[std::size_t(i)] = s * inv;
    }
    return make_op<T>(std::move(out), {x}, [n, c, hw, inv](Node<T>& node) {
        auto& x = node.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < n * c; ++i) {
            const T g = node.grad[std::size_t(i)] * inv;
            T* dst = x->grad.data() + std::size_t(i) * hw;
            for (int p = 0; p < hw; ++p) dst[p] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// classification heads

// rowwise stable softmax: (N, K) -> (N, K)
template <class T>
Var<T> softmax(const Var<T>& logits) {
    const int n = logits->value.dim(0), k = logits->value.dim(1);
    Tensor<T> out(Shape{n, k});
    for (int i = 0; i < n; ++i) {
        const T* z = logits->value.data() + std::size_t(i) * k;
        T* p = out.data() + std::size_t(i) * k;
        T m = z[0];
        for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
        T s = 0;
        for (int j = 0; j < k; ++j) { p[j] = std::exp(z[j] - m); s += p[j]; }
        for (int j = 0; j < k; ++j) p[j] /= s;
    }
    return make_op<T>(std::move(out), {logits}, [n, k](Node<T>& node) {
        auto& z = node.parents[0];
        if (!z->requires_grad) return;
        z->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const T* p = node.value.data() + std::size_t(i) * k;
            const T* g = node.grad.data() + std::size_t(i) * k;
            T dot = 0;
            for (int j = 0; j < k; ++j) dot += g[j] * p[j];
            T* dz = z->grad.data() + std::size_t(i) * k;
            for (int j = 0; j < k; ++j) dz[j] += p[j] * (g[j] - dot);
        }
    });
}

// fused softmax cross-entropy, per example: (N, K), labels -> (N)
template <class T>
Var<T> cross_entropy_per_example(const Var<T>& logits,
                                 const std::vector<int>& labels) {
    const int n = logits->value.dim(0), k = logits->value.dim(1);
    if (int(labels.size()) != n)
        throw ArgumentError("cross_entropy: batch/label size mismatch");
    auto probs = std::make_shared<std::vector<T>>(std::size_t(n) * k);
    Tensor<T> out(Shape{n});
    for (int i = 0; i < n; ++i) {
        const T* z = logits->value.data() + std::size_t(i) * k;
        T* p = probs->data() + std::size_t(i) * k;
        T m = z[0];
        for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
        T s = 0;
        for (int j = 0; j < k; ++j) { p[j] = std::exp(z[j] - m); s += p[j]; }
        for (int j = 0; j < k; ++j) p[j] /= s;
        out[std::size_t(i)] = -std::log(std::max(p[labels[std::size_t(i)]], T(1e-12)));
    }
    return make_op<T>(std::move(out), {logits},
                      [n, k, probs, labels](Node<T>& node) {
        auto& z = node.parents[0];
        if (!z->requires_grad) return;
        z->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const T g = node.grad[std::size_t(i)];
            const T* p = probs->data() + std::size_t(i) * k;
            T* dz = z->grad.data() + std::size_t(i) * k;
            for (int j = 0; j < k; ++j)
                dz[j] += g * (p[j] - (j == labels[std::size_t(i)] ? T(1) : T(0)));
        }
    });
}

// picks the true-class probability out of each row: (N, K), labels -> (N)
template <class T>
Var<T> gather_class(const Var<T>& probs, const std::vector<int>& labels) {
    const int n = probs->value.dim(0), k = probs->value.dim(1);
    if (int(labels.size()) != n)
        throw ArgumentError("gather_class: batch/label size mismatch");
    Tensor<T> out(Shape{n});
    for (int i = 0; i < n; ++i)
        out[std::size_t(i)] = probs->value[std::size_t(i) * k + labels[std::size_t(i)]];
    return make_op<T>(std::move(out), {probs}, [n, k, labels](Node<T>& node) {
        auto& p = node.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < n; ++i)
            p->grad[std::size_t(i) * k + labels[std::size_t(i)]] +=
                node.grad[std::size_t(i)];
    });
}

// per-example squared-difference mean over the non-batch dims:
// a, b: (N, ...) -> (N)
template <class T>
Var<T> mse_per_example(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value))
        throw ArgumentError("mse: shape mismatch " + shape_str(a->value.shape()) +
                            " vs " + shape_str(b->value.shape()));
    const int n = a->value.dim(0);
    const std::size_t per = a->value.size() / std::size_t(n);
    Tensor<T> out(Shape{n});
    const T inv = T(1) / T(per);
    for (int i = 0; i < n; ++i) {
        const T* pa = a->value.data() + std::size_t(i) * per;
        const T* pb = b->value.data() + std::size_t(i) * per;
        T s = 0;
        for (std::size_t j = 0; j < per; ++j) {
            const T d = pa[j] - pb[j];
            s += d * d;
        }
        out[std::size_t(i)] = s * inv;
    }
    return make_op<T>(std::move(out), {a, b}, [n, per, inv](Node<T>& node) {
        auto& a = node.parents[0];
        auto& b = node.parents[1];
        for (int i = 0; i < n; ++i) {
            const T g = node.grad[std::size_t(i)] * inv * T(2);
            const T* pa = a->value.data() + std::size_t(i) * per;
            const T* pb = b->value.data() + std::size_t(i) * per;
            if (a->requires_grad) {
                a->ensure_grad();
                T* da = a->grad.data() + std::size_t(i) * per;
                for (std::size_t j = 0; j < per; ++j) da[j] += g * (pa[j] - pb[j]);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                T* db = b->grad.data() + std::size_t(i) * per;
                for (std::size_t j = 0; j < per; ++j) db[j] -= g * (pa[j] - pb[j]);
            }
        }
    });
}

// per-example Euclidean norm of (a - b) flattened: (N, ...) -> (N)
template <class T>
Var<T> l2_norm_per_example(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value))
        throw ArgumentError("l2_norm: shape mismatch");
    const int n = a->value.dim(0);
    const std::size_t per = a->value.size() / std::size_t(n);
    Tensor<T> out(Shape{n});
    for (int i = 0; i < n; ++i) {
        const T* pa = a->value.data() + std::size_t(i) * per;
        const T* pb = b->value.data() + std::size_t(i) * per;
        T s = 0;
        for (std::size_t j = 0; j < per; ++j) {
            const T d = pa[j] - pb[j];
            s += d * d;
        }
        out[std::size_t(i)] = std::sqrt(s);
    }
    return make_op<T>(std::move(out), {a, b}, [n, per](Node<T>& node) {
        auto& a = node.parents[0];
        auto& b = node.parents[1];
        for (int i = 0; i < n; ++i) {
            const T norm = node.value[std::size_t(i)];
            if (norm <= T(0)) continue;  // gradient undefined at 0, use 0
            const T g = node.grad[std::size_t(i)] / norm;
            const T* pa = a->value.data() + std::size_t(i) * per;
            const T* pb = b->value.data() + std::size_t(i) * per;
            if (a->requires_grad) {
                a->ensure_grad();
                T* da = a->grad.data() + std::size_t(i) * per;
                for (std::size_t j = 0; j < per; ++j) da[j] += g * (pa[j] - pb[j]);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                T* db = b->grad.data() + std::size_t(i) * per;
                for (std::size_t j = 0; j < per; ++j) db[j] -= g * (pa[j] - pb[j]);
            }
        }
    });
}

// KL(p || q) per example, both (N, K) probability rows, floored at 1e-12.
template <class T>
Var<T> kl_per_example(const Var<T>& p, const Var<T>& q) {
    if (!p->value.same_shape(q->value))
        throw ArgumentError("kl: shape mismatch");
    const int n = p->value.dim(0), k = p->value.dim(1);
    Tensor<T> out(Shape{n});
    const T floor = T(1e-12);
    for (int i = 0; i < n; ++i) {
        const T* pi = p->value.data() + std::size_t(i) * k;
        const T* qi = q->value.data() + std::size_t(i) * k;
        T s = 0;
        for (int j = 0; j < k; ++j) {
            const T pj = std::max(pi[j], floor);
            const T qj = std::max(qi[j], floor);
            s += pi[j] * (std::log(pj) - std::log(qj));
        }
        out[std::size_t(i)] = s;
    }
    return make_op<T>(std::move(out), {p, q}, [n, k, floor](Node<T>& node) {
        auto& p = node.parents[0];
        auto& q = node.parents[1];
        for (int i = 0; i < n; ++i) {
            const T g = node.grad[std::size_t(i)];
            const T* pi = p->value.data() + std::size_t(i) * k;
            const T* qi = q->value.data() + std::size_t(i) * k;
            if (p->requires_grad) {
                p->ensure_grad();
                T* dp = p->grad.data() + std::size_t(i) * k;
                for (int j = 0; j < k; ++j) {
                    const T pj = std::max(pi[j], floor);
                    const T qj = std::max(qi[j], floor);
                    dp[j] += g * (std::log(pj) - std::log(qj) + T(1));
                }
            }
            if (q->requires_grad) {
                q->ensure_grad();
                T* dq = q->grad.data() + std::size_t(i) * k;
                for (int j = 0; j < k; ++j) {
                    const T qj = std::max(qi[j], floor);
                    if (qi[j] > floor) dq[j] -= g * pi[j] / qj;
                }
            }
        }
    });
}

}  // namespace jatp::ag
