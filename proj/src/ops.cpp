/* Copyright 2026 The CDD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cdd/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace cdd::ad {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using RowVec = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using CRowVec = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

void require(bool ok, const std::string& what)
{
    if (!ok) throw std::invalid_argument(what);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op)
{
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
}

// Input i of the node, or nullptr when it does not take a gradient.
template <typename T>
Node<T>* grad_input(Node<T>& self, std::size_t i)
{
    if (i >= self.inputs.size()) return nullptr;
    Node<T>* in = self.inputs[i].get();
    return in->requires_grad ? in : nullptr;
}

// Writes expr into the node's gradient, assigning on first touch so the
// buffer never needs zeroing.
template <typename T, typename Expr>
void accumulate_product(Node<T>* in, Eigen::Index rows, Eigen::Index cols, const Expr& expr)
{
    if (in->grad.empty()) {
        in->grad = Tensor<T>::uninitialized(in->value.shape());
        MapRM<T>(in->grad.data(), rows, cols).noalias() = expr;
    } else {
        MapRM<T>(in->grad.data(), rows, cols).noalias() += expr;
    }
}

template <typename T>
std::size_t inner_dim(const Tensor<T>& t)
{
    return t.rank() == 0 ? 1 : static_cast<std::size_t>(t.dim(-1));
}

struct ConvGeometry {
    int n, h, w, cin, k, cout, stride, pad, ho, wo;
    [[nodiscard]] std::size_t rows() const { return static_cast<std::size_t>(n) * ho * wo; }
    [[nodiscard]] std::size_t kdim() const { return static_cast<std::size_t>(k) * k * cin; }
    [[nodiscard]] bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col)
{
    const std::size_t kdim = g.kdim();
    for (int n = 0; n < g.n; ++n) {
        for (int oy = 0; oy < g.ho; ++oy) {
            for (int ox = 0; ox < g.wo; ++ox) {
                T* row = col + ((static_cast<std::size_t>(n) * g.ho + oy) * g.wo + ox) * kdim;
                for (int ky = 0; ky < g.k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        T* dst = row + (static_cast<std::size_t>(ky) * g.k + kx) * g.cin;
                        if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
                            std::fill(dst, dst + g.cin, T(0));
                        } else {
                            const T* src = x + ((static_cast<std::size_t>(n) * g.h + iy) * g.w + ix) * g.cin;
                            std::memcpy(dst, src, sizeof(T) * g.cin);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx)
{
    const std::size_t kdim = g.kdim();
    for (int n = 0; n < g.n; ++n) {
        for (int oy = 0; oy < g.ho; ++oy) {
            for (int ox = 0; ox < g.wo; ++ox) {
                const T* row = col + ((static_cast<std::size_t>(n) * g.ho + oy) * g.wo + ox) * kdim;
                for (int ky = 0; ky < g.k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.w) continue;
                        const T* src = row + (static_cast<std::size_t>(ky) * g.k + kx) * g.cin;
                        T* dst = dx + ((static_cast<std::size_t>(n) * g.h + iy) * g.w + ix) * g.cin;
                        for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }
}

thread_local bool g_stats_frozen = false;

}  // namespace

FreezeRunningStatsGuard::FreezeRunningStatsGuard() : previous_(g_stats_frozen) { g_stats_frozen = true; }
FreezeRunningStatsGuard::~FreezeRunningStatsGuard() { g_stats_frozen = previous_; }
bool running_stats_frozen() noexcept { return g_stats_frozen; }

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    require_same_shape(a, b, "add");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t i = 0; i < 2; ++i) {
            if (auto* in = grad_input(self, i)) in->accumulate(self.grad);
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b)
{
    require_same_shape(a, b, "sub");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) in->accumulate(self.grad);
        if (auto* in = grad_input(self, 1)) {
            T* g = in->grad_buffer();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b)
{
    require_same_shape(a, b, "mul");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const Tensor<T>& va = self.inputs[0]->value;
        const Tensor<T>& vb = self.inputs[1]->value;
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * vb[i];
        }
        if (auto* in = grad_input(self, 1)) {
            T* g = in->grad_buffer();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * va[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor)
{
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v *= factor;
    return make_result<T>(std::move(out), {a}, [factor](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += factor * self.grad[i];
        }
    });
}

template <typename T>
Var<T> exp(const Var<T>& a)
{
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v = std::exp(v);
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * self.value[i];
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& a)
{
    T total = T(0);
    for (T v : a.value().values()) total += v;
    return make_result<T>(Tensor<T>({1}, total), {a}, [](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            const T s = self.grad[0];
            for (std::size_t i = 0; i < in->value.numel(); ++i) g[i] += s;
        }
    });
}

template <typename T>
Var<T> mean(const Var<T>& a)
{
    const auto n = static_cast<T>(a.value().numel());
    return scale(sum(a), T(1) / n);
}

template <typename T>
Var<T> detach(const Var<T>& a)
{
    return Var<T>(a.value(), false);
}

template <typename T>
Var<T> straight_through(const Tensor<T>& hard, const Var<T>& soft)
{
    require(hard.shape() == soft.shape(), "straight_through: shape mismatch");
    return make_result<T>(hard, {soft}, [](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) in->accumulate(self.grad);
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape)
{
    return make_result<T>(a.value().reshaped(std::move(shape)), {a}, [](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) in->accumulate(self.grad);
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, int begin, int end)
{
    const Tensor<T>& v = a.value();
    require(v.rank() >= 1 && 0 <= begin && begin <= end && end <= v.dim(0), "slice_rows: bad range");
    const std::size_t stride = v.numel() / static_cast<std::size_t>(v.dim(0));
    Shape shape = v.shape();
    shape[0] = end - begin;
    std::vector<T> data(v.data() + begin * stride, v.data() + end * stride);
    const std::size_t offset = static_cast<std::size_t>(begin) * stride;
    return make_result<T>(Tensor<T>(std::move(shape), std::move(data)), {a}, [offset](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer() + offset;
            for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts)
{
    require(!parts.empty(), "concat_rows: no inputs");
    Shape shape = parts.front().shape();
    require(!shape.empty(), "concat_rows: rank-0 input");
    int rows = 0;
    std::vector<T> data;
    for (const auto& p : parts) {
        Shape tail(p.shape().begin() + 1, p.shape().end());
        require(Shape(shape.begin() + 1, shape.end()) == tail, "concat_rows: trailing shape mismatch");
        rows += p.dim(0);
        data.insert(data.end(), p.value().values().begin(), p.value().values().end());
    }
    shape[0] = rows;
    return make_result<T>(Tensor<T>(std::move(shape), std::move(data)), parts, [](Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            const std::size_t n = self.inputs[i]->value.numel();
            if (auto* in = grad_input(self, i)) {
                T* g = in->grad_buffer();
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[offset + j];
            }
            offset += n;
        }
    });
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<int>& index)
{
    const Tensor<T>& v = a.value();
    require(v.rank() >= 1, "gather_rows: rank-0 input");
    const int rows = v.dim(0);
    const std::size_t stride = v.numel() / static_cast<std::size_t>(std::max(rows, 1));
    Shape shape = v.shape();
    shape[0] = static_cast<int>(index.size());
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && index[i] < rows, "gather_rows: index out of range");
        std::copy_n(v.data() + index[i] * stride, stride, out.data() + i * stride);
    }
    return make_result<T>(std::move(out), {a}, [index, stride](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (std::size_t i = 0; i < index.size(); ++i) {
                const T* src = self.grad.data() + i * stride;
                T* dst = g + index[i] * stride;
                for (std::size_t j = 0; j < stride; ++j) dst[j] += src[j];
            }
        }
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b)
{
    const Tensor<T>& va = a.value();
    const Tensor<T>& vb = b.value();
    require(va.rank() == vb.rank() && va.rank() >= 1, "concat_channels: rank mismatch");
    require(Shape(va.shape().begin(), va.shape().end() - 1) == Shape(vb.shape().begin(), vb.shape().end() - 1),
            "concat_channels: leading shape mismatch " + shape_str(va.shape()) + " vs " + shape_str(vb.shape()));
    const std::size_t ca = inner_dim(va), cb = inner_dim(vb), c = ca + cb;
    const std::size_t rows = va.numel() / ca;
    Shape shape = va.shape();
    shape.back() = static_cast<int>(c);
    Tensor<T> out(shape);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(va.data() + r * ca, ca, out.data() + r * c);
        std::copy_n(vb.data() + r * cb, cb, out.data() + r * c + ca);
    }
    return make_result<T>(std::move(out), {a, b}, [rows, ca, cb](Node<T>& self) {
        const std::size_t c = ca + cb;
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < ca; ++j) g[r * ca + j] += self.grad[r * c + j];
        }
        if (auto* in = grad_input(self, 1)) {
            T* g = in->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < cb; ++j) g[r * cb + j] += self.grad[r * c + ca + j];
        }
    });
}

template <typename T>
Var<T> tile_spatial(const Var<T>& z, int height, int width)
{
    const Tensor<T>& v = z.value();
    require(v.rank() == 2, "tile_spatial: expected [B, Z], got " + shape_str(v.shape()));
    const int b = v.dim(0), zd = v.dim(1);
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    Tensor<T> out({b, height, width, zd});
    for (int n = 0; n < b; ++n)
        for (std::size_t p = 0; p < plane; ++p)
            std::copy_n(v.data() + n * zd, zd, out.data() + (n * plane + p) * zd);
    return make_result<T>(std::move(out), {z}, [b, zd, plane](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (int n = 0; n < b; ++n)
                for (std::size_t p = 0; p < plane; ++p) {
                    const T* src = self.grad.data() + (n * plane + p) * zd;
                    for (int j = 0; j < zd; ++j) g[n * zd + j] += src[j];
                }
        }
    });
}

template <typename T>
Var<T> linear_combination(const std::vector<Var<T>>& codes, const Var<T>& alpha)
{
    require(!codes.empty(), "linear_combination: no codes");
    require(alpha.value().numel() == codes.size(), "linear_combination: alpha has " +
                                                      std::to_string(alpha.value().numel()) + " entries for " +
                                                      std::to_string(codes.size()) + " codes");
    Tensor<T> out(codes.front().shape());
    for (std::size_t k = 0; k < codes.size(); ++k) {
        require(codes[k].shape() == out.shape(), "linear_combination: code shape mismatch");
        const T a = alpha.value()[k];
        const T* src = codes[k].value().data();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += a * src[i];
    }
    std::vector<Var<T>> inputs = codes;
    inputs.push_back(alpha);
    return make_result<T>(std::move(out), inputs, [](Node<T>& self) {
        const std::size_t k_count = self.inputs.size() - 1;
        const Tensor<T>& a = self.inputs.back()->value;
        Node<T>* alpha_in = grad_input(self, k_count);
        for (std::size_t k = 0; k < k_count; ++k) {
            if (auto* in = grad_input(self, k)) {
                T* g = in->grad_buffer();
                for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += a[k] * self.grad[i];
            }
            if (alpha_in) {
                const T* c = self.inputs[k]->value.data();
                T acc = T(0);
                for (std::size_t i = 0; i < self.grad.numel(); ++i) acc += c[i] * self.grad[i];
                alpha_in->grad_buffer()[k] += acc;
            }
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias)
{
    const Tensor<T>& vx = x.value();
    const Tensor<T>& vw = weight.value();
    require(vx.rank() == 2 && vw.rank() == 2 && vx.dim(1) == vw.dim(0),
            "linear: incompatible shapes " + shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
    const int rows = vx.dim(0), in_dim = vw.dim(0), out_dim = vw.dim(1);
    auto out = Tensor<T>::uninitialized({rows, out_dim});
    MapRM<T>(out.data(), rows, out_dim).noalias() =
        CMapRM<T>(vx.data(), rows, in_dim) * CMapRM<T>(vw.data(), in_dim, out_dim);
    const bool has_bias = bias.defined();
    if (has_bias) {
        MapRM<T>(out.data(), rows, out_dim).rowwise() += CRowVec<T>(bias.value().data(), out_dim);
    }
    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result<T>(std::move(out), inputs, [rows, in_dim, out_dim](Node<T>& self) {
        CMapRM<T> dy(self.grad.data(), rows, out_dim);
        if (auto* in = grad_input(self, 0)) {
            accumulate_product(in, rows, in_dim, dy * CMapRM<T>(self.inputs[1]->value.data(), in_dim, out_dim).transpose());
        }
        if (auto* in = grad_input(self, 1)) {
            accumulate_product(in, in_dim, out_dim, CMapRM<T>(self.inputs[0]->value.data(), rows, in_dim).transpose() * dy);
        }
        if (auto* in = grad_input(self, 2)) {
            RowVec<T>(in->grad_buffer(), out_dim) += dy.colwise().sum();
        }
    });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding)
{
    const Tensor<T>& vx = x.value();
    const Tensor<T>& vw = weight.value();
    require(vx.rank() == 4, "conv2d: input must be NHWC, got " + shape_str(vx.shape()));
    require(vw.rank() == 4 && vw.dim(0) == vw.dim(1) && vw.dim(2) == vx.dim(3),
            "conv2d: weight " + shape_str(vw.shape()) + " incompatible with input " + shape_str(vx.shape()));
    require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    ConvGeometry g{vx.dim(0), vx.dim(1), vx.dim(2), vx.dim(3), vw.dim(0), vw.dim(3), stride, padding, 0, 0};
    g.ho = (g.h + 2 * padding - g.k) / stride + 1;
    g.wo = (g.w + 2 * padding - g.k) / stride + 1;
    require(g.ho > 0 && g.wo > 0, "conv2d: kernel larger than padded input");

    const auto rows = static_cast<Eigen::Index>(g.rows());
    const auto kdim = static_cast<Eigen::Index>(g.kdim());
    auto col = std::make_shared<Tensor<T>>();
    if (!g.direct()) {
        *col = Tensor<T>::uninitialized({static_cast<int>(rows), static_cast<int>(kdim)});
        im2col(vx.data(), g, col->data());
    }
    const T* colp = g.direct() ? vx.data() : col->data();

    auto out = Tensor<T>::uninitialized({g.n, g.ho, g.wo, g.cout});
    MapRM<T> y(out.data(), rows, g.cout);
    y.noalias() = CMapRM<T>(colp, rows, kdim) * CMapRM<T>(vw.data(), kdim, g.cout);
    const bool has_bias = bias.defined();
    if (has_bias) y.rowwise() += CRowVec<T>(bias.value().data(), g.cout);

    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result<T>(std::move(out), inputs, [g, col](Node<T>& self) {
        const auto rows = static_cast<Eigen::Index>(g.rows());
        const auto kdim = static_cast<Eigen::Index>(g.kdim());
        CMapRM<T> dy(self.grad.data(), rows, g.cout);
        CMapRM<T> w(self.inputs[1]->value.data(), kdim, g.cout);
        const T* colp = g.direct() ? self.inputs[0]->value.data() : col->data();
        if (auto* in = grad_input(self, 1)) {
            accumulate_product(in, kdim, g.cout, CMapRM<T>(colp, rows, kdim).transpose() * dy);
        }
        if (auto* in = grad_input(self, 2)) {
            RowVec<T>(in->grad_buffer(), g.cout) += dy.colwise().sum();
        }
        if (auto* in = grad_input(self, 0)) {
            if (g.direct()) {
                accumulate_product(in, rows, kdim, dy * w.transpose());
            } else {
                MatRM<T> dcol = dy * w.transpose();
                col2im_add(dcol.data(), g, in->grad_buffer());
            }
        }
    });
}

template <typename T>
Var<T> conv_transpose2x2(const Var<T>& x, const Var<T>& weight, const Var<T>& bias)
{
    const Tensor<T>& vx = x.value();
    const Tensor<T>& vw = weight.value();
    require(vx.rank() == 4, "conv_transpose2x2: input must be NHWC");
    require(vw.rank() == 4 && vw.dim(0) == vx.dim(3) && vw.dim(1) == 2 && vw.dim(2) == 2,
            "conv_transpose2x2: weight " + shape_str(vw.shape()) + " incompatible with input " +
                shape_str(vx.shape()));
    const int n = vx.dim(0), h = vx.dim(1), w = vx.dim(2), cin = vx.dim(3), cout = vw.dim(3);
    const Eigen::Index rows = static_cast<Eigen::Index>(n) * h * w;
    MatRM<T> tmp = CMapRM<T>(vx.data(), rows, cin) * CMapRM<T>(vw.data(), cin, 4 * cout);
    auto out = Tensor<T>::uninitialized({n, 2 * h, 2 * w, cout});
    const T* pb = bias.defined() ? bias.value().data() : nullptr;
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const T* src = tmp.data() + ((static_cast<Eigen::Index>(b) * h + y) * w + xx) * 4 * cout;
                for (int ky = 0; ky < 2; ++ky)
                    for (int kx = 0; kx < 2; ++kx) {
                        T* dst = out.data() +
                                 ((static_cast<std::size_t>(b) * 2 * h + 2 * y + ky) * 2 * w + 2 * xx + kx) * cout;
                        const T* s = src + (ky * 2 + kx) * cout;
                        for (int c = 0; c < cout; ++c) dst[c] = s[c] + (pb ? pb[c] : T(0));
                    }
            }
    std::vector<Var<T>> inputs{x, weight};
    if (pb) inputs.push_back(bias);
    return make_result<T>(std::move(out), inputs, [n, h, w, cin, cout](Node<T>& self) {
        const Eigen::Index rows = static_cast<Eigen::Index>(n) * h * w;
        MatRM<T> dtmp(rows, 4 * cout);
        for (int b = 0; b < n; ++b)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    T* dst = dtmp.data() + ((static_cast<Eigen::Index>(b) * h + y) * w + xx) * 4 * cout;
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx) {
                            const T* src = self.grad.data() +
                                           ((static_cast<std::size_t>(b) * 2 * h + 2 * y + ky) * 2 * w + 2 * xx + kx) *
                                               cout;
                            std::copy_n(src, cout, dst + (ky * 2 + kx) * cout);
                        }
                }
        if (auto* in = grad_input(self, 0)) {
            accumulate_product(in, rows, cin, dtmp * CMapRM<T>(self.inputs[1]->value.data(), cin, 4 * cout).transpose());
        }
        if (auto* in = grad_input(self, 1)) {
            accumulate_product(in, cin, 4 * cout, CMapRM<T>(self.inputs[0]->value.data(), rows, cin).transpose() * dtmp);
        }
        if (auto* in = grad_input(self, 2)) {
            CMapRM<T> dy(self.grad.data(), rows * 4, cout);
            RowVec<T>(in->grad_buffer(), cout) += dy.colwise().sum();
        }
    });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats, bool training,
                  T momentum, T eps)
{
    const Tensor<T>& vx = x.value();
    const std::size_t c = inner_dim(vx);
    const std::size_t m = vx.numel() / c;
    require(gamma.value().numel() == c && beta.value().numel() == c, "batch_norm: parameter size mismatch");
    if (stats.running_mean.numel() != c) {
        stats.running_mean = Tensor<T>({static_cast<int>(c)}, T(0));
        stats.running_var = Tensor<T>({static_cast<int>(c)}, T(1));
    }

    std::vector<T> mean(c), invstd(c);
    if (training) {
        require(m > 1, "batch_norm: training needs more than one value per channel");
        std::vector<double> s(c, 0.0), ss(c, 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            const T* row = vx.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) s[j] += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) s[j] /= static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) {
            const T* row = vx.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) {
                const double d = row[j] - s[j];
                ss[j] += d * d;
            }
        }
        const bool update = !g_stats_frozen;
        for (std::size_t j = 0; j < c; ++j) {
            const double var = ss[j] / static_cast<double>(m);
            mean[j] = static_cast<T>(s[j]);
            invstd[j] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
            if (update) {
                stats.running_mean[j] = static_cast<T>((1 - momentum) * stats.running_mean[j] + momentum * s[j]);
                stats.running_var[j] = static_cast<T>((1 - momentum) * stats.running_var[j] + momentum * unbiased);
            }
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) {
            mean[j] = stats.running_mean[j];
            invstd[j] = T(1) / std::sqrt(stats.running_var[j] + eps);
        }
    }

    auto xhat = std::make_shared<Tensor<T>>(vx.shape());
    Tensor<T> out(vx.shape());
    const T* pg = gamma.value().data();
    const T* pbeta = beta.value().data();
    for (std::size_t r = 0; r < m; ++r) {
        const T* row = vx.data() + r * c;
        T* xh = xhat->data() + r * c;
        T* y = out.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) {
            xh[j] = (row[j] - mean[j]) * invstd[j];
            y[j] = pg[j] * xh[j] + pbeta[j];
        }
    }
    return make_result<T>(std::move(out), {x, gamma, beta}, [xhat, invstd, m, c, training](Node<T>& self) {
        const T* dy = self.grad.data();
        const T* pg = self.inputs[1]->value.data();
        std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
        for (std::size_t r = 0; r < m; ++r) {
            const T* g = dy + r * c;
            const T* xh = xhat->data() + r * c;
            for (std::size_t j = 0; j < c; ++j) {
                sum_dy[j] += g[j];
                sum_dy_xhat[j] += g[j] * xh[j];
            }
        }
        if (auto* in = grad_input(self, 1)) {
            T* g = in->grad_buffer();
            for (std::size_t j = 0; j < c; ++j) g[j] += sum_dy_xhat[j];
        }
        if (auto* in = grad_input(self, 2)) {
            T* g = in->grad_buffer();
            for (std::size_t j = 0; j < c; ++j) g[j] += sum_dy[j];
        }
        if (auto* in = grad_input(self, 0)) {
            T* dx = in->grad_buffer();
            const T inv_m = T(1) / static_cast<T>(m);
            for (std::size_t r = 0; r < m; ++r) {
                const T* g = dy + r * c;
                const T* xh = xhat->data() + r * c;
                T* d = dx + r * c;
                for (std::size_t j = 0; j < c; ++j) {
                    if (training) {
                        d[j] += pg[j] * invstd[j] * (g[j] - inv_m * (sum_dy[j] + xh[j] * sum_dy_xhat[j]));
                    } else {
                        d[j] += pg[j] * invstd[j] * g[j];
                    }
                }
            }
        }
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope)
{
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : slope * v;
    return make_result<T>(std::move(out), {x}, [slope](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            const T* v = in->value.data();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += v[i] > T(0) ? self.grad[i] : slope * self.grad[i];
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x)
{
    Tensor<T> out = x.value();
    for (auto& v : out.values()) {
        if (v >= T(0)) {
            v = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) {
                const T y = self.value[i];
                g[i] += self.grad[i] * y * (T(1) - y);
            }
        }
    });
}

template <typename T>
Var<T> softmax(const Var<T>& x)
{
    Tensor<T> out = x.value();
    const std::size_t c = inner_dim(out);
    const std::size_t rows = out.numel() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = out.data() + r * c;
        const T mx = *std::max_element(row, row + c);
        T total = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            total += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= total;
    }
    return make_result<T>(std::move(out), {x}, [rows, c](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.value.data() + r * c;
                const T* dy = self.grad.data() + r * c;
                T dot = T(0);
                for (std::size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
                for (std::size_t j = 0; j < c; ++j) g[r * c + j] += y[j] * (dy[j] - dot);
            }
        }
    });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x)
{
    const Tensor<T>& v = x.value();
    require(v.rank() == 4 && v.dim(1) % 2 == 0 && v.dim(2) % 2 == 0,
            "max_pool2x2: spatial size must be even, got " + shape_str(v.shape()));
    const int n = v.dim(0), h = v.dim(1), w = v.dim(2), c = v.dim(3);
    const int ho = h / 2, wo = w / 2;
    Tensor<T> out({n, ho, wo, c});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                for (int ch = 0; ch < c; ++ch) {
                    std::size_t best = ((static_cast<std::size_t>(b) * h + 2 * y) * w + 2 * xx) * c + ch;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx =
                                ((static_cast<std::size_t>(b) * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
                            if (v[idx] > v[best]) best = idx;
                        }
                    const std::size_t o = ((static_cast<std::size_t>(b) * ho + y) * wo + xx) * c + ch;
                    out[o] = v[best];
                    (*argmax)[o] = best;
                }
    return make_result<T>(std::move(out), {x}, [argmax](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x)
{
    const Tensor<T>& v = x.value();
    require(v.rank() == 4, "global_avg_pool: input must be NHWC");
    const int n = v.dim(0), c = v.dim(3);
    const std::size_t plane = static_cast<std::size_t>(v.dim(1)) * v.dim(2);
    Tensor<T> out({n, c});
    for (int b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < plane; ++p) {
            const T* src = v.data() + (b * plane + p) * c;
            for (int j = 0; j < c; ++j) out[b * c + j] += src[j];
        }
        for (int j = 0; j < c; ++j) out[b * c + j] /= static_cast<T>(plane);
    }
    return make_result<T>(std::move(out), {x}, [n, c, plane](Node<T>& self) {
        if (auto* in = grad_input(self, 0)) {
            T* g = in->grad_buffer();
            const T inv = T(1) / static_cast<T>(plane);
            for (int b = 0; b < n; ++b)
                for (std::size_t p = 0; p < plane; ++p)
                    for (int j = 0; j < c; ++j) g[(b * plane + p) * c + j] += self.grad[b * c + j] * inv;
        }
    });
}

#define CDD_INSTANTIATE_OPS(T)                                                                                 \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> scale(const Var<T>&, T);                                                                   \
    template Var<T> exp(const Var<T>&);                                                                        \
    template Var<T> sum(const Var<T>&);                                                                        \
    template Var<T> mean(const Var<T>&);                                                                       \
    template Var<T> detach(const Var<T>&);                                                                     \
    template Var<T> straight_through(const Tensor<T>&, const Var<T>&);                                         \
    template Var<T> reshape(const Var<T>&, Shape);                                                             \
    template Var<T> slice_rows(const Var<T>&, int, int);                                                       \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                                                   \
    template Var<T> gather_rows(const Var<T>&, const std::vector<int>&);                                       \
    template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                             \
    template Var<T> tile_spatial(const Var<T>&, int, int);                                                     \
    template Var<T> linear_combination(const std::vector<Var<T>>&, const Var<T>&);                             \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                       \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                             \
    template Var<T> conv_transpose2x2(const Var<T>&, const Var<T>&, const Var<T>&);                            \
    template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&, bool, T, T);   \
    template Var<T> leaky_relu(const Var<T>&, T);                                                              \
    template Var<T> sigmoid(const Var<T>&);                                                                    \
    template Var<T> softmax(const Var<T>&);                                                                    \
    template Var<T> max_pool2x2(const Var<T>&);                                                                \
    template Var<T> global_avg_pool(const Var<T>&);

CDD_INSTANTIATE_OPS(float)
CDD_INSTANTIATE_OPS(double)

}  // namespace cdd::ad
