#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <vector>

#include "ichscnet/autodiff.hpp"

namespace ichscnet {
namespace nn {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("add: shape mismatch");
    Tensor<T> out = a.value();
    out.add_(b.value());
    return Var<T>(detail::make_node<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
    }));
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("sub: shape mismatch");
    Tensor<T> out = a.value();
    const T* bp = b.value().data();
    T* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] -= bp[i];
    return Var<T>(detail::make_node<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor<T> g(n.grad.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = -n.grad[i];
            n.parents[1]->accumulate(g);
        }
    }));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("mul: shape mismatch");
    Tensor<T> out(a.value().shape());
    const T* ap = a.value().data();
    const T* bp = b.value().data();
    T* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] * bp[i];
    return Var<T>(detail::make_node<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
        const T* av = n.parents[0]->value.data();
        const T* bv = n.parents[1]->value.data();
        if (n.parents[0]->requires_grad) {
            Tensor<T> g(n.grad.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * bv[i];
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor<T> g(n.grad.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * av[i];
            n.parents[1]->accumulate(g);
        }
    }));
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    if (!a.value().same_shape(b.value())) throw ShapeError("div: shape mismatch");
    Tensor<T> out(a.value().shape());
    const T* ap = a.value().data();
    const T* bp = b.value().data();
    T* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] / bp[i];
    auto node = detail::make_node<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
        const T* av = n.parents[0]->value.data();
        const T* bv = n.parents[1]->value.data();
        if (n.parents[0]->requires_grad) {
            Tensor<T> g(n.grad.shape());
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] / bv[i];
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor<T> g(n.grad.shape());
            for (int64_t i = 0; i < g.numel(); ++i)
                g[i] = -n.grad[i] * av[i] / (bv[i] * bv[i]);
            n.parents[1]->accumulate(g);
        }
    });
    return Var<T>(node);
}

template <typename T>
Var<T> neg(const Var<T>& a) {
    Tensor<T> out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = -a.value()[i];
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [](Node<T>& n) {
        Tensor<T> g(n.grad.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = -n.grad[i];
        n.parents[0]->accumulate(g);
    }));
}

template <typename T>
Var<T> mul_const(const Var<T>& a, T c) {
    Tensor<T> out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * c;
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [c](Node<T>& n) {
        Tensor<T> g(n.grad.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * c;
        n.parents[0]->accumulate(g);
    }));
}

template <typename T>
Var<T> add_const(const Var<T>& a, T c) {
    Tensor<T> out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + c;
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [](Node<T>& n) {
        n.parents[0]->accumulate(n.grad);
    }));
}

template <typename T>
Var<T> log_op(const Var<T>& a) {
    Tensor<T> out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = std::log(a.value()[i]);
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [](Node<T>& n) {
        const T* xv = n.parents[0]->value.data();
        Tensor<T> g(n.grad.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] / xv[i];
        n.parents[0]->accumulate(g);
    }));
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        const T x = a.value()[i];
        out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                           : std::exp(x) / (T(1) + std::exp(x));
    }
    auto node = detail::make_node<T>(out, {a.node()}, [](Node<T>& n) {
        Tensor<T> g(n.grad.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
            const T y = n.value[i];
            g[i] = n.grad[i] * y * (T(1) - y);
        }
        n.parents[0]->accumulate(g);
    });
    return Var<T>(node);
}

// Smooth SiLU-shaped activation built on the algebraic sigmoid
// x / sqrt(1 + x^2): analytic everywhere and cheap to vectorize.
template <typename T>
Var<T> smooth_silu(const Var<T>& a) {
    Tensor<T> out(a.value().shape());
    const T* xp = a.value().data();
    T* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        const T x = xp[i];
        const T s = x / std::sqrt(T(1) + x * x);
        op[i] = T(0.5) * x * (T(1) + s);
    }
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [](Node<T>& n) {
        const T* xv = n.parents[0]->value.data();
        Tensor<T> g(n.grad.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
            const T x = xv[i];
            const T r = T(1) / std::sqrt(T(1) + x * x);
            const T s = x * r;
            g[i] = n.grad[i] * (T(0.5) * (T(1) + s) + T(0.5) * x * r * r * r);
        }
        n.parents[0]->accumulate(g);
    }));
}

template <typename T>
Var<T> sin_op(const Var<T>& a) {
    Tensor<T> out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sin(a.value()[i]);
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [](Node<T>& n) {
        const T* xv = n.parents[0]->value.data();
        Tensor<T> g(n.grad.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * std::cos(xv[i]);
        n.parents[0]->accumulate(g);
    }));
}

template <typename T>
Var<T> cos_op(const Var<T>& a) {
    Tensor<T> out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::cos(a.value()[i]);
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [](Node<T>& n) {
        const T* xv = n.parents[0]->value.data();
        Tensor<T> g(n.grad.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = -n.grad[i] * std::sin(xv[i]);
        n.parents[0]->accumulate(g);
    }));
}

// Subgradient 0 outside [lo, hi]; active only at saturation.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    Tensor<T> out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = std::min(hi, std::max(lo, a.value()[i]));
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [lo, hi](Node<T>& n) {
        const T* xv = n.parents[0]->value.data();
        Tensor<T> g(n.grad.shape());
        for (int64_t i = 0; i < g.numel(); ++i)
            g[i] = (xv[i] > lo && xv[i] < hi) ? n.grad[i] : T(0);
        n.parents[0]->accumulate(g);
    }));
}

// ---------------------------------------------------------------------------
// reductions / shape
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int64_t> shape) {
    Tensor<T> out = a.value().reshaped(shape);
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [](Node<T>& n) {
        n.parents[0]->accumulate(n.grad.reshaped(n.parents[0]->value.shape()));
    }));
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T s = T(0);
    for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
    return Var<T>(detail::make_node<T>(Tensor<T>::scalar(s), {a.node()}, [](Node<T>& n) {
        Tensor<T> g(n.parents[0]->value.shape(), n.grad[0]);
        n.parents[0]->accumulate(g);
    }));
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    const int64_t cnt = a.value().numel();
    T s = T(0);
    for (int64_t i = 0; i < cnt; ++i) s += a.value()[i];
    s /= static_cast<T>(cnt);
    return Var<T>(detail::make_node<T>(Tensor<T>::scalar(s), {a.node()}, [cnt](Node<T>& n) {
        Tensor<T> g(n.parents[0]->value.shape(), n.grad[0] / static_cast<T>(cnt));
        n.parents[0]->accumulate(g);
    }));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.value().dim(1) != b.value().dim(0))
        throw ShapeError("matmul: incompatible shapes " + a.value().shape_str() + " x " +
                         b.value().shape_str());
    const int64_t m = a.value().dim(0), k = a.value().dim(1), n2 = b.value().dim(1);
    Tensor<T> out({m, n2});
    ECMap<T> A(a.value().data(), m, k), B(b.value().data(), k, n2);
    EMap<T> C(out.data(), m, n2);
    C.noalias() = A * B;
    return Var<T>(detail::make_node<T>(std::move(out), {a.node(), b.node()}, [m, k, n2](Node<T>& n) {
        ECMap<T> G(n.grad.data(), m, n2);
        ECMap<T> A(n.parents[0]->value.data(), m, k);
        ECMap<T> B(n.parents[1]->value.data(), k, n2);
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            EMap<T> dA(n.parents[0]->grad.data(), m, k);
            dA.noalias() += G * B.transpose();
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            EMap<T> dB(n.parents[1]->grad.data(), k, n2);
            dB.noalias() += A.transpose() * G;
        }
    }));
}

template <typename T>
Var<T> transpose2d(const Var<T>& a) {
    if (a.value().rank() != 2) throw ShapeError("transpose2d: rank != 2");
    const int64_t r = a.value().dim(0), c = a.value().dim(1);
    Tensor<T> out({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at2(j, i) = a.value().at2(i, j);
    return Var<T>(detail::make_node<T>(std::move(out), {a.node()}, [r, c](Node<T>& n) {
        Tensor<T> g({r, c});
        for (int64_t j = 0; j < c; ++j)
            for (int64_t i = 0; i < r; ++i) g.at2(i, j) = n.grad.at2(j, i);
        n.parents[0]->accumulate(g);
    }));
}

// x: (n, d) plus row vector b: (d)
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& b) {
    if (x.value().rank() != 2 || b.value().rank() != 1 || x.value().dim(1) != b.value().dim(0))
        throw ShapeError("add_rowvec: incompatible shapes");
    const int64_t n0 = x.value().dim(0), d = x.value().dim(1);
    Tensor<T> out = x.value();
    for (int64_t i = 0; i < n0; ++i)
        for (int64_t j = 0; j < d; ++j) out.at2(i, j) += b.value()[j];
    return Var<T>(detail::make_node<T>(std::move(out), {x.node(), b.node()}, [n0, d](Node<T>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor<T> g({d});
            for (int64_t i = 0; i < n0; ++i)
                for (int64_t j = 0; j < d; ++j) g[j] += n.grad.at2(i, j);
            n.parents[1]->accumulate(g);
        }
    }));
}

// y = x W^T + b with x: (n, din), w: (dout, din), b: (dout)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    if (x.value().rank() != 2 || w.value().rank() != 2 || x.value().dim(1) != w.value().dim(1))
        throw ShapeError("linear: incompatible shapes");
    const int64_t n0 = x.value().dim(0), din = x.value().dim(1), dout = w.value().dim(0);
    Tensor<T> out({n0, dout});
    ECMap<T> X(x.value().data(), n0, din), W(w.value().data(), dout, din);
    EMap<T> Y(out.data(), n0, dout);
    Y.noalias() = X * W.transpose();
    for (int64_t i = 0; i < n0; ++i)
        for (int64_t j = 0; j < dout; ++j) out.at2(i, j) += b.value()[j];
    return Var<T>(detail::make_node<T>(std::move(out), {x.node(), w.node(), b.node()},
                                       [n0, din, dout](Node<T>& n) {
        ECMap<T> G(n.grad.data(), n0, dout);
        ECMap<T> X(n.parents[0]->value.data(), n0, din);
        ECMap<T> W(n.parents[1]->value.data(), dout, din);
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            EMap<T> dX(n.parents[0]->grad.data(), n0, din);
            dX.noalias() += G * W;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            EMap<T> dW(n.parents[1]->grad.data(), dout, din);
            dW.noalias() += G.transpose() * X;
        }
        if (n.parents[2]->requires_grad) {
            Tensor<T> db({dout});
            for (int64_t i = 0; i < n0; ++i)
                for (int64_t j = 0; j < dout; ++j) db[j] += n.grad.at2(i, j);
            n.parents[2]->accumulate(db);
        }
    }));
}

// rows sum to 1; numerically stabilized by row-max subtraction
template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
    if (x.value().rank() != 2) throw ShapeError("softmax_rows: rank != 2");
    const int64_t n0 = x.value().dim(0), m = x.value().dim(1);
    Tensor<T> out({n0, m});
    for (int64_t i = 0; i < n0; ++i) {
        T mx = x.value().at2(i, 0);
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, x.value().at2(i, j));
        T sum = T(0);
        for (int64_t j = 0; j < m; ++j) {
            const T e = std::exp(x.value().at2(i, j) - mx);
            out.at2(i, j) = e;
            sum += e;
        }
        for (int64_t j = 0; j < m; ++j) out.at2(i, j) /= sum;
    }
    auto node = detail::make_node<T>(out, {x.node()}, [n0, m](Node<T>& n) {
        Tensor<T> g({n0, m});
        for (int64_t i = 0; i < n0; ++i) {
            T dot = T(0);
            for (int64_t j = 0; j < m; ++j) dot += n.grad.at2(i, j) * n.value.at2(i, j);
            for (int64_t j = 0; j < m; ++j)
                g.at2(i, j) = (n.grad.at2(i, j) - dot) * n.value.at2(i, j);
        }
        n.parents[0]->accumulate(g);
    });
    return Var<T>(node);
}

// ---------------------------------------------------------------------------
// convolution and pooling (tensors are (C, H, W))
// ---------------------------------------------------------------------------

namespace detail_conv {

inline int64_t out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad, int64_t dil) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// column matrix: (Ci*kh*kw) x (Ho*Wo)
template <typename T>
void im2col(const Tensor<T>& x, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            int64_t dil, int64_t ho, int64_t wo, T* col) {
    const int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    int64_t row = 0;
    for (int64_t c = 0; c < ci; ++c) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx, ++row) {
                T* dst = col + row * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const int64_t iy = oy * stride - pad + ky * dil;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst + oy * wo, 0, sizeof(T) * static_cast<size_t>(wo));
                        continue;
                    }
                    const T* src = x.data() + (c * h + iy) * w;
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const int64_t ix = ox * stride - pad + kx * dil;
                        dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accum(const T* col, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw,
                  int64_t stride, int64_t pad, int64_t dil, int64_t ho, int64_t wo,
                  Tensor<T>& dx) {
    int64_t row = 0;
    for (int64_t c = 0; c < ci; ++c) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx, ++row) {
                const T* src = col + row * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const int64_t iy = oy * stride - pad + ky * dil;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = dx.data() + (c * h + iy) * w;
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const int64_t ix = ox * stride - pad + kx * dil;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail_conv

// x: (Ci, H, W), w: (Co, Ci, kh, kw), b: (Co)
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride = 1,
              int64_t pad = 0, int64_t dil = 1) {
    if (x.value().rank() != 3 || w.value().rank() != 4)
        throw ShapeError("conv2d: expected (C,H,W) input and (Co,Ci,kh,kw) weight");
    if (x.value().dim(0) != w.value().dim(1))
        throw ShapeError("conv2d: input channels " + std::to_string(x.value().dim(0)) +
                         " != weight channels " + std::to_string(w.value().dim(1)));
    const int64_t ci = x.value().dim(0), h = x.value().dim(1), ww = x.value().dim(2);
    const int64_t co = w.value().dim(0), kh = w.value().dim(2), kw = w.value().dim(3);
    const int64_t ho = detail_conv::out_extent(h, kh, stride, pad, dil);
    const int64_t wo = detail_conv::out_extent(ww, kw, stride, pad, dil);
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");

    const int64_t krows = ci * kh * kw;
    AlignedVec<T> col(static_cast<size_t>(krows * ho * wo));
    detail_conv::im2col(x.value(), kh, kw, stride, pad, dil, ho, wo, col.data());

    Tensor<T> out({co, ho, wo});
    {
        ECMap<T> W(w.value().data(), co, krows);
        ECMap<T> K(col.data(), krows, ho * wo);
        EMap<T> O(out.data(), co, ho * wo);
        O.noalias() = W * K;
    }
    for (int64_t c = 0; c < co; ++c) {
        const T bias = b.value()[c];
        T* dst = out.data() + c * ho * wo;
        for (int64_t i = 0; i < ho * wo; ++i) dst[i] += bias;
    }

    auto bwd = [stride, pad, dil, ci, h, ww, co, kh, kw, ho, wo, krows](Node<T>& n) {
        ECMap<T> G(n.grad.data(), co, ho * wo);
        Node<T>& xn = *n.parents[0];
        Node<T>& wn = *n.parents[1];
        Node<T>& bn = *n.parents[2];
        const bool need_w = wn.requires_grad, need_x = xn.requires_grad;
        AlignedVec<T> col;
        if (need_w) {
            col.resize(static_cast<size_t>(krows * ho * wo));
            detail_conv::im2col(xn.value, kh, kw, stride, pad, dil, ho, wo, col.data());
            wn.ensure_grad();
            ECMap<T> K(col.data(), krows, ho * wo);
            EMap<T> dW(wn.grad.data(), co, krows);
            dW.noalias() += G * K.transpose();
        }
        if (bn.requires_grad) {
            Tensor<T> db({co});
            for (int64_t c = 0; c < co; ++c) {
                T s = T(0);
                const T* g = n.grad.data() + c * ho * wo;
                for (int64_t i = 0; i < ho * wo; ++i) s += g[i];
                db[c] = s;
            }
            bn.accumulate(db);
        }
        if (need_x) {
            AlignedVec<T> dcol(static_cast<size_t>(krows * ho * wo));
            ECMap<T> W(wn.value.data(), co, krows);
            EMap<T> DC(dcol.data(), krows, ho * wo);
            DC.noalias() = W.transpose() * G;
            xn.ensure_grad();
            detail_conv::col2im_accum(dcol.data(), ci, h, ww, kh, kw, stride, pad, dil, ho,
                                      wo, xn.grad);
        }
    };
    return Var<T>(detail::make_node<T>(std::move(out), {x.node(), w.node(), b.node()}, bwd));
}

template <typename T>
Var<T> maxpool2(const Var<T>& x) {
    if (x.value().rank() != 3) throw ShapeError("maxpool2: rank != 3");
    const int64_t c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    if (h % 2 || w % 2) throw ShapeError("maxpool2: odd spatial size");
    const int64_t ho = h / 2, wo = w / 2;
    Tensor<T> out({c, ho, wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(c * ho * wo));
    for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                int64_t best = ((cc * h + 2 * oy) * w + 2 * ox);
                T bv = x.value()[best];
                const int64_t cand[3] = {best + 1, best + w, best + w + 1};
                for (int64_t k = 0; k < 3; ++k)
                    if (x.value()[cand[k]] > bv) {
                        bv = x.value()[cand[k]];
                        best = cand[k];
                    }
                out.at3(cc, oy, ox) = bv;
                (*argmax)[static_cast<size_t>((cc * ho + oy) * wo + ox)] = best;
            }
    return Var<T>(detail::make_node<T>(std::move(out), {x.node()}, [argmax](Node<T>& n) {
        Node<T>& xn = *n.parents[0];
        xn.ensure_grad();
        for (size_t i = 0; i < argmax->size(); ++i)
            xn.grad[(*argmax)[i]] += n.grad[static_cast<int64_t>(i)];
    }));
}

template <typename T>
Var<T> avgpool2(const Var<T>& x) {
    if (x.value().rank() != 3) throw ShapeError("avgpool2: rank != 3");
    const int64_t c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    if (h % 2 || w % 2) throw ShapeError("avgpool2: odd spatial size");
    const int64_t ho = h / 2, wo = w / 2;
    Tensor<T> out({c, ho, wo});
    for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                const int64_t base = (cc * h + 2 * oy) * w + 2 * ox;
                out.at3(cc, oy, ox) = (x.value()[base] + x.value()[base + 1] +
                                       x.value()[base + w] + x.value()[base + w + 1]) /
                                      T(4);
            }
    return Var<T>(detail::make_node<T>(std::move(out), {x.node()}, [c, h, w, ho, wo](Node<T>& n) {
        Node<T>& xn = *n.parents[0];
        xn.ensure_grad();
        for (int64_t cc = 0; cc < c; ++cc)
            for (int64_t oy = 0; oy < ho; ++oy)
                for (int64_t ox = 0; ox < wo; ++ox) {
                    const T g = n.grad.at3(cc, oy, ox) / T(4);
                    const int64_t base = (cc * h + 2 * oy) * w + 2 * ox;
                    xn.grad[base] += g;
                    xn.grad[base + 1] += g;
                    xn.grad[base + w] += g;
                    xn.grad[base + w + 1] += g;
                }
    }));
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    if (x.value().rank() != 3) throw ShapeError("global_avg_pool: rank != 3");
    const int64_t c = x.value().dim(0), hw = x.value().dim(1) * x.value().dim(2);
    Tensor<T> out({c});
    for (int64_t cc = 0; cc < c; ++cc) {
        T s = T(0);
        const T* p = x.value().data() + cc * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
        out[cc] = s / static_cast<T>(hw);
    }
    return Var<T>(detail::make_node<T>(std::move(out), {x.node()}, [c, hw](Node<T>& n) {
        Node<T>& xn = *n.parents[0];
        xn.ensure_grad();
        for (int64_t cc = 0; cc < c; ++cc) {
            const T g = n.grad[cc] / static_cast<T>(hw);
            T* p = xn.grad.data() + cc * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += g;
        }
    }));
}

// ---------------------------------------------------------------------------
// bilinear resize (half-pixel centers, clamped taps)
// ---------------------------------------------------------------------------

struct BilinearTap {
    int64_t i0, i1;
    double w0, w1;
};

inline std::vector<BilinearTap> bilinear_taps(int64_t in, int64_t out) {
    std::vector<BilinearTap> taps(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
        const int64_t i0 = static_cast<int64_t>(std::floor(src));
        const int64_t i1 = std::min(i0 + 1, in - 1);
        const double f = src - static_cast<double>(i0);
        taps[static_cast<size_t>(o)] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}

template <typename T>
Var<T> bilinear(const Var<T>& x, int64_t ho, int64_t wo) {
    if (x.value().rank() != 3) throw ShapeError("bilinear: rank != 3");
    const int64_t c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    if (h == ho && w == wo) {
        // identity resize keeps the gradient path without resampling
        Tensor<T> out = x.value();
        return Var<T>(detail::make_node<T>(std::move(out), {x.node()}, [](Node<T>& n) {
            n.parents[0]->accumulate(n.grad);
        }));
    }
    auto ty = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(h, ho));
    auto tx = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(w, wo));
    Tensor<T> out({c, ho, wo});
    for (int64_t cc = 0; cc < c; ++cc) {
        const T* src = x.value().data() + cc * h * w;
        for (int64_t oy = 0; oy < ho; ++oy) {
            const auto& by = (*ty)[static_cast<size_t>(oy)];
            for (int64_t ox = 0; ox < wo; ++ox) {
                const auto& bx = (*tx)[static_cast<size_t>(ox)];
                const double v = by.w0 * (bx.w0 * static_cast<double>(src[by.i0 * w + bx.i0]) +
                                          bx.w1 * static_cast<double>(src[by.i0 * w + bx.i1])) +
                                 by.w1 * (bx.w0 * static_cast<double>(src[by.i1 * w + bx.i0]) +
                                          bx.w1 * static_cast<double>(src[by.i1 * w + bx.i1]));
                out.at3(cc, oy, ox) = static_cast<T>(v);
            }
        }
    }
    return Var<T>(detail::make_node<T>(std::move(out), {x.node()},
                                       [c, h, w, ho, wo, ty, tx](Node<T>& n) {
        Node<T>& xn = *n.parents[0];
        xn.ensure_grad();
        for (int64_t cc = 0; cc < c; ++cc) {
            T* dst = xn.grad.data() + cc * h * w;
            for (int64_t oy = 0; oy < ho; ++oy) {
                const auto& by = (*ty)[static_cast<size_t>(oy)];
                for (int64_t ox = 0; ox < wo; ++ox) {
                    const auto& bx = (*tx)[static_cast<size_t>(ox)];
                    const T g = n.grad.at3(cc, oy, ox);
                    dst[by.i0 * w + bx.i0] += static_cast<T>(by.w0 * bx.w0) * g;
                    dst[by.i0 * w + bx.i1] += static_cast<T>(by.w0 * bx.w1) * g;
                    dst[by.i1 * w + bx.i0] += static_cast<T>(by.w1 * bx.w0) * g;
                    dst[by.i1 * w + bx.i1] += static_cast<T>(by.w1 * bx.w1) * g;
                }
            }
        }
    }));
}

// ---------------------------------------------------------------------------
// normalization / channel plumbing
// ---------------------------------------------------------------------------

// Per-channel standardization over the spatial grid with learned affine.
template <typename T>
Var<T> channel_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                    T eps = T(1e-5)) {
    if (x.value().rank() != 3) throw ShapeError("channel_norm: rank != 3");
    const int64_t c = x.value().dim(0), hw = x.value().dim(1) * x.value().dim(2);
    if (gain.value().numel() != c || bias.value().numel() != c)
        throw ShapeError("channel_norm: affine size mismatch");
    Tensor<T> out(x.value().shape());
    auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(2 * c));
    for (int64_t cc = 0; cc < c; ++cc) {
        const T* src = x.value().data() + cc * hw;
        T mu = T(0);
        for (int64_t i = 0; i < hw; ++i) mu += src[i];
        mu /= static_cast<T>(hw);
        T var = T(0);
        for (int64_t i = 0; i < hw; ++i) {
            const T d = src[i] - mu;
            var += d * d;
        }
        var /= static_cast<T>(hw);
        const T inv = T(1) / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(2 * cc)] = mu;
        (*stats)[static_cast<size_t>(2 * cc + 1)] = inv;
        const T g = gain.value()[cc], b = bias.value()[cc];
        T* dst = out.data() + cc * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * inv * g + b;
    }
    auto bwd = [c, hw, stats](Node<T>& n) {
        Node<T>& xn = *n.parents[0];
        Node<T>& gn = *n.parents[1];
        Node<T>& bn = *n.parents[2];
        Tensor<T> dgain({c}), dbias({c});
        const bool need_x = xn.requires_grad;
        if (need_x) xn.ensure_grad();
        for (int64_t cc = 0; cc < c; ++cc) {
            const T mu = (*stats)[static_cast<size_t>(2 * cc)];
            const T inv = (*stats)[static_cast<size_t>(2 * cc + 1)];
            const T* xv = xn.value.data() + cc * hw;
            const T* gv = n.grad.data() + cc * hw;
            T sum_g = T(0), sum_gx = T(0);
            for (int64_t i = 0; i < hw; ++i) {
                const T xh = (xv[i] - mu) * inv;
                sum_g += gv[i];
                sum_gx += gv[i] * xh;
            }
            dbias[cc] = sum_g;
            dgain[cc] = sum_gx;
            if (need_x) {
                const T gamma = gn.value[cc];
                const T mg = sum_g / static_cast<T>(hw);
                const T mgx = sum_gx / static_cast<T>(hw);
                T* dx = xn.grad.data() + cc * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const T xh = (xv[i] - mu) * inv;
                    dx[i] += gamma * inv * (gv[i] - mg - xh * mgx);
                }
            }
        }
        if (gn.requires_grad) gn.accumulate(dgain);
        if (bn.requires_grad) bn.accumulate(dbias);
    };
    return Var<T>(detail::make_node<T>(std::move(out), {x.node(), gain.node(), bias.node()}, bwd));
}

template <typename T>
Var<T> concat_ch(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_ch: empty input");
    const int64_t h = xs[0].value().dim(1), w = xs[0].value().dim(2);
    int64_t ctot = 0;
    std::vector<NodePtr<T>> parents;
    for (const auto& x : xs) {
        if (x.value().rank() != 3 || x.value().dim(1) != h || x.value().dim(2) != w)
            throw ShapeError("concat_ch: spatial mismatch");
        ctot += x.value().dim(0);
        parents.push_back(x.node());
    }
    Tensor<T> out({ctot, h, w});
    int64_t off = 0;
    for (const auto& x : xs) {
        const int64_t nel = x.value().numel();
        std::memcpy(out.data() + off, x.value().data(), sizeof(T) * static_cast<size_t>(nel));
        off += nel;
    }
    return Var<T>(detail::make_node<T>(std::move(out), std::move(parents), [](Node<T>& n) {
        int64_t off = 0;
        for (auto& p : n.parents) {
            const int64_t nel = p->value.numel();
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t i = 0; i < nel; ++i) p->grad[i] += n.grad[off + i];
            }
            off += nel;
        }
    }));
}

// stack rank-2 inputs with a shared column count along rows
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_rows: empty input");
    const int64_t cols = xs[0].value().dim(1);
    int64_t rows = 0;
    std::vector<NodePtr<T>> parents;
    for (const auto& x : xs) {
        if (x.value().rank() != 2 || x.value().dim(1) != cols)
            throw ShapeError("concat_rows: column mismatch");
        rows += x.value().dim(0);
        parents.push_back(x.node());
    }
    Tensor<T> out({rows, cols});
    int64_t off = 0;
    for (const auto& x : xs) {
        std::memcpy(out.data() + off, x.value().data(),
                    sizeof(T) * static_cast<size_t>(x.value().numel()));
        off += x.value().numel();
    }
    return Var<T>(detail::make_node<T>(std::move(out), std::move(parents), [](Node<T>& n) {
        int64_t off = 0;
        for (auto& p : n.parents) {
            const int64_t nel = p->value.numel();
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t i = 0; i < nel; ++i) p->grad[i] += n.grad[off + i];
            }
            off += nel;
        }
    }));
}

// join rank-2 inputs with a shared row count along columns
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: empty input");
    const int64_t rows = xs[0].value().dim(0);
    int64_t cols = 0;
    std::vector<NodePtr<T>> parents;
    std::vector<int64_t> widths;
    for (const auto& x : xs) {
        if (x.value().rank() != 2 || x.value().dim(0) != rows)
            throw ShapeError("concat_cols: row mismatch");
        widths.push_back(x.value().dim(1));
        cols += x.value().dim(1);
        parents.push_back(x.node());
    }
    Tensor<T> out({rows, cols});
    int64_t coff = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
        const auto& v = xs[k].value();
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.data() + r * cols + coff, v.data() + r * widths[k],
                        sizeof(T) * static_cast<size_t>(widths[k]));
        coff += widths[k];
    }
    auto w = std::make_shared<std::vector<int64_t>>(std::move(widths));
    return Var<T>(detail::make_node<T>(std::move(out), std::move(parents),
                                       [rows, cols, w](Node<T>& n) {
        int64_t coff = 0;
        for (size_t k = 0; k < n.parents.size(); ++k) {
            auto& p = n.parents[k];
            const int64_t wk = (*w)[k];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < wk; ++c)
                        p->grad[r * wk + c] += n.grad[r * cols + coff + c];
            }
            coff += wk;
        }
    }));
}

template <typename T>
Var<T> slice_ch(const Var<T>& x, int64_t c0, int64_t c1) {
    if (x.value().rank() != 3) throw ShapeError("slice_ch: rank != 3");
    const int64_t c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_ch: bad range");
    Tensor<T> out({c1 - c0, h, w});
    std::memcpy(out.data(), x.value().data() + c0 * h * w,
                sizeof(T) * static_cast<size_t>(out.numel()));
    return Var<T>(detail::make_node<T>(std::move(out), {x.node()}, [c0, h, w](Node<T>& n) {
        Node<T>& xn = *n.parents[0];
        xn.ensure_grad();
        T* dst = xn.grad.data() + c0 * h * w;
        for (int64_t i = 0; i < n.grad.numel(); ++i) dst[i] += n.grad[i];
    }));
}

}  // namespace nn
}  // namespace ichscnet
