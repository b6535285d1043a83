#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "uxmil/blas.hpp"
#include "uxmil/rng.hpp"
#include "uxmil/tensor.hpp"

namespace uxmil {

namespace detail {

template <class S>
inline bool track(Tape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
    if (!tape) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <class S>
inline void mark_output(Tape<S>* tape, Tensor<S>& out) {
    out.set_requires_grad(true);
    tape->register_output(out);
}

inline std::size_t leading_numel(const Shape& s, std::size_t suffix_rank) {
    std::size_t n = 1;
    for (std::size_t i = 0; i + suffix_rank < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: C[m,n] = A[m,k] * B[k,n]
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> matmul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = static_cast<int>(a.dim(0));
    const int k = static_cast<int>(a.dim(1));
    const int n = static_cast<int>(b.dim(1));
    Tensor<S> out(Shape{a.dim(0), b.dim(1)});
    gemm(false, false, m, n, k, S(1), a.data(), k, b.data(), n, S(0), out.data(), n);
    check_finite(out, "matmul");
    if (detail::track(tape, {&a, &b})) {
        detail::mark_output(tape, out);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, m, n, k]() mutable {
            if (ac.requires_grad())
                gemm(false, true, m, k, n, S(1), oc.grad(), n, bc.data(), n, S(1), ac.grad(), k);
            if (bc.requires_grad())
                gemm(true, false, k, n, m, S(1), ac.data(), k, oc.grad(), n, S(1), bc.grad(), n);
        });
    }
    return out;
}

// X[..., k] * W[k, n] -> [..., n]; the leading dims are flattened into rows.
template <class S>
Tensor<S> linear_apply(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w) {
    if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0))
        throw ShapeError("linear_apply: incompatible shapes " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
    Shape out_shape = x.shape();
    out_shape.back() = w.dim(1);
    std::size_t rows = x.numel() / x.shape().back();
    Tensor<S> x2 = x.reshaped(Shape{rows, x.shape().back()});
    return matmul(tape, x2, w).reshaped(out_shape);
}

// Batched matmul over identical leading dims: A[..., m, k] * B[..., k, n].
template <class S>
Tensor<S> bmm(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() < 2 || a.rank() != b.rank())
        throw ShapeError("bmm: rank mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    for (std::size_t i = 0; i + 2 < a.rank(); ++i)
        if (a.dim(i) != b.dim(i))
            throw ShapeError("bmm: batch dims differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const std::size_t r = a.rank();
    if (a.dim(r - 1) != b.dim(r - 2))
        throw ShapeError("bmm: inner dims differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = static_cast<int>(a.dim(r - 2));
    const int k = static_cast<int>(a.dim(r - 1));
    const int n = static_cast<int>(b.dim(r - 1));
    const std::size_t batch = detail::leading_numel(a.shape(), 2);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(b.dim(r - 1));
    Tensor<S> out(out_shape);
    for (std::size_t i = 0; i < batch; ++i)
        gemm(false, false, m, n, k, S(1), a.data() + i * m * k, k, b.data() + i * k * n, n, S(0),
             out.data() + i * m * n, n);
    check_finite(out, "bmm");
    if (detail::track(tape, {&a, &b})) {
        detail::mark_output(tape, out);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, m, n, k, batch]() mutable {
            for (std::size_t i = 0; i < batch; ++i) {
                if (ac.requires_grad())
                    gemm(false, true, m, k, n, S(1), oc.grad() + i * m * n, n,
                         bc.data() + i * k * n, n, S(1), ac.grad() + i * m * k, k);
                if (bc.requires_grad())
                    gemm(true, false, k, n, m, S(1), ac.data() + i * m * k, k,
                         oc.grad() + i * m * n, n, S(1), bc.grad() + i * k * n, n);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, zero padding. input [B,Cin,H,W] (or [Cin,H,W]),
// kernels [Cout,Cin,kh,kw] -> [B,Cout,H',W'].
// Lowered to one GEMM per image over an im2col buffer; backward rebuilds the
// buffer instead of keeping it alive on the tape.
// ---------------------------------------------------------------------------
namespace detail {

template <class S>
void im2col(const S* img, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            S* cols) {
    // cols layout: [cin*kh*kw, oh*ow]
    const std::size_t plane = oh * ow;
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                S* dst = cols + ((c * kh + ki) * kw + kj) * plane;
                for (std::size_t oi = 0; oi < oh; ++oi) {
                    const std::ptrdiff_t ii =
                        static_cast<std::ptrdiff_t>(oi * stride + ki) -
                        static_cast<std::ptrdiff_t>(pad);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(dst + oi * ow, dst + (oi + 1) * ow, S(0));
                        continue;
                    }
                    const S* src_row = img + (c * h + ii) * w;
                    for (std::size_t oj = 0; oj < ow; ++oj) {
                        const std::ptrdiff_t jj =
                            static_cast<std::ptrdiff_t>(oj * stride + kj) -
                            static_cast<std::ptrdiff_t>(pad);
                        dst[oi * ow + oj] =
                            (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) ? S(0) : src_row[jj];
                    }
                }
            }
        }
    }
}

template <class S>
void col2im_add(const S* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
                std::size_t ow, S* img_grad) {
    const std::size_t plane = oh * ow;
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const S* src = cols + ((c * kh + ki) * kw + kj) * plane;
                for (std::size_t oi = 0; oi < oh; ++oi) {
                    const std::ptrdiff_t ii =
                        static_cast<std::ptrdiff_t>(oi * stride + ki) -
                        static_cast<std::ptrdiff_t>(pad);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                    S* dst_row = img_grad + (c * h + ii) * w;
                    for (std::size_t oj = 0; oj < ow; ++oj) {
                        const std::ptrdiff_t jj =
                            static_cast<std::ptrdiff_t>(oj * stride + kj) -
                            static_cast<std::ptrdiff_t>(pad);
                        if (jj >= 0 && jj < static_cast<std::ptrdiff_t>(w))
                            dst_row[jj] += src[oi * ow + oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class S>
Tensor<S> conv2d(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& kernels,
                 std::size_t stride = 1, std::size_t pad = 0) {
    const bool unbatched = input.rank() == 3;
    if (input.rank() != 3 && input.rank() != 4)
        throw ShapeError("conv2d: input must be [Cin,H,W] or [B,Cin,H,W], got " +
                         shape_str(input.shape()));
    if (kernels.rank() != 4)
        throw ShapeError("conv2d: kernels must be [Cout,Cin,kh,kw], got " +
                         shape_str(kernels.shape()));
    Tensor<S> x = unbatched ? input.reshaped(Shape{1, input.dim(0), input.dim(1), input.dim(2)})
                            : input;
    const std::size_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    if (kernels.dim(1) != cin)
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(input.shape()) +
                         " vs kernels " + shape_str(kernels.shape()));
    if (kh > h + 2 * pad || kw > w + 2 * pad)
        throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
    const std::size_t kdim = cin * kh * kw, plane = oh * ow;

    Tensor<S> out(Shape{b, cout, oh, ow});
    std::vector<S> cols(kdim * plane);
    for (std::size_t i = 0; i < b; ++i) {
        detail::im2col(x.data() + i * cin * h * w, cin, h, w, kh, kw, stride, pad, oh, ow,
                       cols.data());
        gemm(false, false, static_cast<int>(cout), static_cast<int>(plane),
             static_cast<int>(kdim), S(1), kernels.data(), static_cast<int>(kdim), cols.data(),
             static_cast<int>(plane), S(0), out.data() + i * cout * plane,
             static_cast<int>(plane));
    }
    check_finite(out, "conv2d");

    if (detail::track(tape, {&input, &kernels})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, kc = kernels, oc = out;
        tape->record([xc, kc, oc, b, cin, h, w, cout, kh, kw, stride, pad, oh, ow, kdim,
                      plane]() mutable {
            std::vector<S> cols(kdim * plane);
            std::vector<S> dcols(kdim * plane);
            for (std::size_t i = 0; i < b; ++i) {
                const S* dout = oc.grad() + i * cout * plane;
                if (kc.requires_grad()) {
                    detail::im2col(xc.data() + i * cin * h * w, cin, h, w, kh, kw, stride, pad,
                                   oh, ow, cols.data());
                    gemm(false, true, static_cast<int>(cout), static_cast<int>(kdim),
                         static_cast<int>(plane), S(1), dout, static_cast<int>(plane),
                         cols.data(), static_cast<int>(plane), S(1), kc.grad(),
                         static_cast<int>(kdim));
                }
                if (xc.requires_grad()) {
                    gemm(true, false, static_cast<int>(kdim), static_cast<int>(plane),
                         static_cast<int>(cout), S(1), kc.data(), static_cast<int>(kdim), dout,
                         static_cast<int>(plane), S(0), dcols.data(), static_cast<int>(plane));
                    detail::col2im_add(dcols.data(), cin, h, w, kh, kw, stride, pad, oh, ow,
                                       xc.grad() + i * cin * h * w);
                }
            }
        });
    }
    return unbatched ? out.reshaped(Shape{cout, oh, ow}) : out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> avg_pool2(Tape<S>* tape, const Tensor<S>& x) {
    if (x.rank() != 4) throw ShapeError("avg_pool2: expected [B,C,H,W], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0)
        throw ShapeError("avg_pool2: input too small " + shape_str(x.shape()));
    Tensor<S> out(Shape{b, c, oh, ow});
    const std::size_t planes = b * c;
    for (std::size_t p = 0; p < planes; ++p) {
        const S* src = x.data() + p * h * w;
        S* dst = out.data() + p * oh * ow;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                dst[i * ow + j] = (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] +
                                   src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]) *
                                  S(0.25);
    }
    check_finite(out, "avg_pool2");
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, planes, h, w, oh, ow]() mutable {
            for (std::size_t p = 0; p < planes; ++p) {
                const S* g = oc.grad() + p * oh * ow;
                S* dx = xc.grad() + p * h * w;
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        const S v = g[i * ow + j] * S(0.25);
                        dx[2 * i * w + 2 * j] += v;
                        dx[2 * i * w + 2 * j + 1] += v;
                        dx[(2 * i + 1) * w + 2 * j] += v;
                        dx[(2 * i + 1) * w + 2 * j + 1] += v;
                    }
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> global_avg_pool(Tape<S>* tape, const Tensor<S>& x) {
    if (x.rank() != 4)
        throw ShapeError("global_avg_pool: expected [B,C,H,W], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor<S> out(Shape{b, c});
    for (std::size_t i = 0; i < b * c; ++i) {
        const S* src = x.data() + i * plane;
        S acc = 0;
        for (std::size_t k = 0; k < plane; ++k) acc += src[k];
        out.data()[i] = acc / static_cast<S>(plane);
    }
    check_finite(out, "global_avg_pool");
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, b, c, plane]() mutable {
            for (std::size_t i = 0; i < b * c; ++i) {
                const S g = oc.grad()[i] / static_cast<S>(plane);
                S* dst = xc.grad() + i * plane;
                for (std::size_t k = 0; k < plane; ++k) dst[k] += g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> relu(Tape<S>* tape, const Tensor<S>& x) {
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.at(i) > S(0) ? x.at(i) : S(0);
    check_finite(out, "relu");
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            for (std::size_t i = 0; i < xc.numel(); ++i)
                if (oc.at(i) > S(0)) xc.grad()[i] += oc.grad()[i];
        });
    }
    return out;
}

template <class S>
Tensor<S> gelu(Tape<S>* tape, const Tensor<S>& x) {
    Tensor<S> out(x.shape());
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(x.at(i));
        out.data()[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
    check_finite(out, "gelu");
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            constexpr double inv_sqrt2pi = 0.3989422804014326779;
            for (std::size_t i = 0; i < xc.numel(); ++i) {
                const double v = static_cast<double>(xc.at(i));
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                xc.grad()[i] += oc.grad()[i] * static_cast<S>(cdf + v * pdf);
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<S> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.at(i) + b.at(i);
    check_finite(out, "add");
    if (detail::track(tape, {&a, &b})) {
        detail::mark_output(tape, out);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            for (std::size_t i = 0; i < oc.numel(); ++i) {
                if (ac.requires_grad()) ac.grad()[i] += oc.grad()[i];
                if (bc.requires_grad()) bc.grad()[i] += oc.grad()[i];
            }
        });
    }
    return out;
}

// a[..., suffix] + b[suffix]; b is broadcast over the leading dims.
template <class S>
Tensor<S> add_broadcast(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (b.rank() > a.rank())
        throw ShapeError("add_broadcast: " + shape_str(b.shape()) + " does not fit " +
                         shape_str(a.shape()));
    for (std::size_t i = 0; i < b.rank(); ++i)
        if (b.dim(i) != a.dim(a.rank() - b.rank() + i))
            throw ShapeError("add_broadcast: suffix mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const std::size_t block = b.numel();
    const std::size_t reps = a.numel() / std::max<std::size_t>(block, 1);
    Tensor<S> out(a.shape());
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < block; ++i)
            out.data()[r * block + i] = a.at(r * block + i) + b.at(i);
    check_finite(out, "add_broadcast");
    if (detail::track(tape, {&a, &b})) {
        detail::mark_output(tape, out);
        Tensor<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, reps, block]() mutable {
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t i = 0; i < block; ++i) {
                    const S g = oc.grad()[r * block + i];
                    if (ac.requires_grad()) ac.grad()[r * block + i] += g;
                    if (bc.requires_grad()) bc.grad()[i] += g;
                }
        });
    }
    return out;
}

// x[B,C,...] + b[C], broadcast over batch and spatial dims.
template <class S>
Tensor<S> add_channel_bias(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& b) {
    if (x.rank() < 2 || b.rank() != 1 || x.dim(1) != b.dim(0))
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t batch = x.dim(0), c = x.dim(1);
    const std::size_t plane = x.numel() / (batch * c);
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const S bias = b.at(ch);
            const std::size_t base = (i * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k) out.data()[base + k] = x.at(base + k) + bias;
        }
    check_finite(out, "add_channel_bias");
    if (detail::track(tape, {&x, &b})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, bc = b, oc = out;
        tape->record([xc, bc, oc, batch, c, plane]() mutable {
            for (std::size_t i = 0; i < batch; ++i)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t base = (i * c + ch) * plane;
                    S acc = 0;
                    for (std::size_t k = 0; k < plane; ++k) {
                        const S g = oc.grad()[base + k];
                        if (xc.requires_grad()) xc.grad()[base + k] += g;
                        acc += g;
                    }
                    if (bc.requires_grad()) bc.grad()[ch] += acc;
                }
        });
    }
    return out;
}

template <class S>
Tensor<S> scale(Tape<S>* tape, const Tensor<S>& x, S factor) {
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.at(i) * factor;
    check_finite(out, "scale");
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, factor]() mutable {
            for (std::size_t i = 0; i < xc.numel(); ++i) xc.grad()[i] += oc.grad()[i] * factor;
        });
    }
    return out;
}

// Inverted dropout with a fixed keep mask drawn from rng. Identity when rate
// is 0 or training is off.
template <class S>
Tensor<S> dropout(Tape<S>* tape, const Tensor<S>& x, double rate, Rng* rng, bool training) {
    if (!training || rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
    if (!rng) throw ConfigError("dropout: training mode requires an rng");
    const S scale_keep = static_cast<S>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<uint8_t>>(x.numel());
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const bool keep = rng->uniform() >= rate;
        (*mask)[i] = keep;
        out.data()[i] = keep ? x.at(i) * scale_keep : S(0);
    }
    check_finite(out, "dropout");
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, mask, scale_keep]() mutable {
            for (std::size_t i = 0; i < xc.numel(); ++i)
                if ((*mask)[i]) xc.grad()[i] += oc.grad()[i] * scale_keep;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax over an arbitrary axis, max-subtracted for stability.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> softmax(Tape<S>* tape, const Tensor<S>& x, int axis = -1) {
    if (x.rank() == 0) throw ShapeError("softmax: scalar input");
    const std::size_t ax = axis < 0 ? x.rank() + axis : static_cast<std::size_t>(axis);
    if (ax >= x.rank())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    const std::size_t n = x.dim(ax);
    std::size_t inner = 1, outer = 1;
    for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);
    for (std::size_t i = 0; i < ax; ++i) outer *= x.dim(i);

    Tensor<S> out(x.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            S mx = x.at(base);
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x.at(base + i * inner));
            S sum = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const S e = std::exp(x.at(base + i * inner) - mx);
                out.data()[base + i * inner] = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (std::size_t i = 0; i < n; ++i) out.data()[base + i * inner] *= inv;
        }
    }
    check_finite(out, "softmax");
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, outer, inner, n]() mutable {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n * inner + in;
                    S dot = 0;
                    for (std::size_t i = 0; i < n; ++i)
                        dot += oc.grad()[base + i * inner] * oc.at(base + i * inner);
                    for (std::size_t i = 0; i < n; ++i)
                        xc.grad()[base + i * inner] +=
                            (oc.grad()[base + i * inner] - dot) * oc.at(base + i * inner);
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis with affine (gamma, beta).
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> layer_norm(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, double eps = 1e-5) {
    if (x.rank() == 0 || gamma.rank() != 1 || beta.rank() != 1 ||
        gamma.dim(0) != x.shape().back() || beta.dim(0) != x.shape().back())
        throw ShapeError("layer_norm: shapes " + shape_str(x.shape()) + ", gamma " +
                         shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    Tensor<S> out(x.shape());
    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    auto inv_std = std::make_shared<std::vector<S>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = x.data() + r * d;
        S mean = 0;
        for (std::size_t i = 0; i < d; ++i) mean += row[i];
        mean /= static_cast<S>(d);
        S var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= static_cast<S>(d);
        const S istd = S(1) / std::sqrt(var + static_cast<S>(eps));
        (*inv_std)[r] = istd;
        for (std::size_t i = 0; i < d; ++i) {
            const S xh = (row[i] - mean) * istd;
            (*xhat)[r * d + i] = xh;
            out.data()[r * d + i] = gamma.at(i) * xh + beta.at(i);
        }
    }
    check_finite(out, "layer_norm");
    if (detail::track(tape, {&x, &gamma, &beta})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, gc = gamma, bc = beta, oc = out;
        tape->record([xc, gc, bc, oc, xhat, inv_std, rows, d]() mutable {
            for (std::size_t r = 0; r < rows; ++r) {
                const S* dy = oc.grad() + r * d;
                const S* xh = xhat->data() + r * d;
                const S istd = (*inv_std)[r];
                S sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (std::size_t i = 0; i < d; ++i) {
                    const S dxhat = dy[i] * gc.at(i);
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xh[i];
                }
                if (xc.requires_grad()) {
                    const S inv_d = S(1) / static_cast<S>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        const S dxhat = dy[i] * gc.at(i);
                        xc.grad()[r * d + i] +=
                            istd * (dxhat - inv_d * sum_dxhat - inv_d * xh[i] * sum_dxhat_xhat);
                    }
                }
                if (gc.requires_grad())
                    for (std::size_t i = 0; i < d; ++i) gc.grad()[i] += dy[i] * xh[i];
                if (bc.requires_grad())
                    for (std::size_t i = 0; i < d; ++i) bc.grad()[i] += dy[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape plumbing: permute / concat / select / expand / gather
// ---------------------------------------------------------------------------
namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

}  // namespace detail

template <class S>
Tensor<S> permute(Tape<S>* tape, const Tensor<S>& x, const std::vector<std::size_t>& perm) {
    if (perm.size() != x.rank())
        throw ShapeError("permute: perm size " + std::to_string(perm.size()) + " vs rank " +
                         std::to_string(x.rank()));
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.dim(perm[i]);
    const auto in_strides = detail::strides_of(x.shape());
    const auto out_strides = detail::strides_of(out_shape);
    Tensor<S> out(out_shape);
    const std::size_t n = x.numel();
    for (std::size_t idx = 0; idx < n; ++idx) {
        std::size_t rem = idx, src = 0;
        for (std::size_t a = 0; a < perm.size(); ++a) {
            const std::size_t coord = rem / out_strides[a];
            rem %= out_strides[a];
            src += coord * in_strides[perm[a]];
        }
        out.data()[idx] = x.at(src);
    }
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        auto in_st = in_strides;
        auto out_st = out_strides;
        auto p = perm;
        tape->record([xc, oc, in_st, out_st, p, n]() mutable {
            for (std::size_t idx = 0; idx < n; ++idx) {
                std::size_t rem = idx, src = 0;
                for (std::size_t a = 0; a < p.size(); ++a) {
                    const std::size_t coord = rem / out_st[a];
                    rem %= out_st[a];
                    src += coord * in_st[p[a]];
                }
                xc.grad()[src] += oc.grad()[idx];
            }
        });
    }
    return out;
}

// Concatenate along `axis`; all other dims must match.
template <class S>
Tensor<S> concat(Tape<S>* tape, const std::vector<Tensor<S>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size())
            throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(s0));
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != axis && p.dim(i) != s0[i])
                throw ShapeError("concat: dim mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(s0));
        axis_total += p.dim(axis);
    }
    Shape out_shape = s0;
    out_shape[axis] = axis_total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    Tensor<S> out(out_shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t blk = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(p.data() + o * blk, p.data() + (o + 1) * blk,
                      out.data() + o * axis_total * inner + offset);
        offset += blk;
    }
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    if (tape && needs) {
        detail::mark_output(tape, out);
        auto pc = parts;
        Tensor<S> oc = out;
        tape->record([pc, oc, outer, inner, axis_total]() mutable {
            std::size_t offset = 0;
            for (auto& p : pc) {
                const std::size_t ax_len = p.numel() / (outer * inner);
                const std::size_t b = ax_len * inner;
                if (p.requires_grad())
                    for (std::size_t o = 0; o < outer; ++o) {
                        const S* g = oc.grad() + o * axis_total * inner + offset;
                        S* dst = p.grad() + o * b;
                        for (std::size_t i = 0; i < b; ++i) dst[i] += g[i];
                    }
                offset += b;
            }
        });
    }
    return out;
}

// Select index `i` along `axis`, dropping that axis.
template <class S>
Tensor<S> select(Tape<S>* tape, const Tensor<S>& x, std::size_t axis, std::size_t index) {
    if (axis >= x.rank() || index >= x.dim(axis))
        throw ShapeError("select: axis/index out of range for " + shape_str(x.shape()));
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t n_axis = x.dim(axis);
    Tensor<S> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(x.data() + (o * n_axis + index) * inner, x.data() + (o * n_axis + index + 1) * inner,
                  out.data() + o * inner);
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, outer, inner, n_axis, index]() mutable {
            for (std::size_t o = 0; o < outer; ++o) {
                const S* g = oc.grad() + o * inner;
                S* dst = xc.grad() + (o * n_axis + index) * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
            }
        });
    }
    return out;
}

// Replicate x along a new leading axis of size n.
template <class S>
Tensor<S> expand_leading(Tape<S>* tape, const Tensor<S>& x, std::size_t n) {
    Shape out_shape{n};
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    Tensor<S> out(out_shape);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(x.data(), x.data() + x.numel(), out.data() + i * x.numel());
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc, n]() mutable {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < xc.numel(); ++k)
                    xc.grad()[k] += oc.grad()[i * xc.numel() + k];
        });
    }
    return out;
}

// Gather rows of x[n, rest] at the given indices -> [idx.size(), rest].
template <class S>
Tensor<S> gather_rows(Tape<S>* tape, const Tensor<S>& x, const std::vector<std::size_t>& idx) {
    if (x.rank() < 1) throw ShapeError("gather_rows: scalar input");
    const std::size_t row = x.numel() / x.dim(0);
    for (auto i : idx)
        if (i >= x.dim(0))
            throw ValidationError("gather_rows: index " + std::to_string(i) + " out of range " +
                                  std::to_string(x.dim(0)));
    Shape out_shape = x.shape();
    out_shape[0] = idx.size();
    Tensor<S> out(out_shape);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(x.data() + idx[r] * row, x.data() + (idx[r] + 1) * row, out.data() + r * row);
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        auto ix = idx;
        tape->record([xc, oc, ix, row]() mutable {
            for (std::size_t r = 0; r < ix.size(); ++r) {
                const S* g = oc.grad() + r * row;
                S* dst = xc.grad() + ix[r] * row;
                for (std::size_t i = 0; i < row; ++i) dst[i] += g[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and loss
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> sum_all(Tape<S>* tape, const Tensor<S>& x) {
    Tensor<S> out(Shape{});
    S acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.at(i);
    out.data()[0] = acc;
    if (detail::track(tape, {&x})) {
        detail::mark_output(tape, out);
        Tensor<S> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            const S g = oc.grad()[0];
            for (std::size_t i = 0; i < xc.numel(); ++i) xc.grad()[i] += g;
        });
    }
    return out;
}

template <class S>
Tensor<S> mean_all(Tape<S>* tape, const Tensor<S>& x) {
    return scale(tape, sum_all(tape, x), S(1) / static_cast<S>(x.numel()));
}

// Mean over the batch of -log softmax(logits)[target].
template <class S>
Tensor<S> cross_entropy_logits(Tape<S>* tape, const Tensor<S>& logits,
                               const std::vector<int>& targets) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy_logits: expected [batch, classes], got " +
                         shape_str(logits.shape()));
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (targets.size() != b)
        throw ShapeError("cross_entropy_logits: batch " + std::to_string(b) + " vs " +
                         std::to_string(targets.size()) + " targets");
    for (auto t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= c)
            throw ValidationError("cross_entropy_logits: target index " + std::to_string(t) +
                                  " out of range [0," + std::to_string(c) + ")");
    Tensor<S> out(Shape{});
    auto probs = std::make_shared<std::vector<S>>(b * c);
    double loss = 0;
    for (std::size_t i = 0; i < b; ++i) {
        const S* row = logits.data() + i * c;
        S mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(static_cast<double>(row[j] - mx));
            (*probs)[i * c + j] = static_cast<S>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] *= static_cast<S>(inv);
        loss += std::log(sum) - static_cast<double>(row[targets[i]] - mx);
    }
    out.data()[0] = static_cast<S>(loss / static_cast<double>(b));
    check_finite(out, "cross_entropy_logits");
    if (detail::track(tape, {&logits})) {
        detail::mark_output(tape, out);
        Tensor<S> lc = logits, oc = out;
        auto tg = targets;
        tape->record([lc, oc, probs, tg, b, c]() mutable {
            const S g = oc.grad()[0] / static_cast<S>(b);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    S p = (*probs)[i * c + j];
                    if (static_cast<std::size_t>(tg[i]) == j) p -= S(1);
                    lc.grad()[i * c + j] += g * p;
                }
        });
    }
    return out;
}

}  // namespace uxmil
