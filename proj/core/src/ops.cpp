#include "augcl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "augcl/errors.hpp"

namespace augcl {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_tape(Var<T> a, Var<T> b) {
    if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
}

template <typename T>
void require_rank(const Var<T>& v, std::size_t rank, const char* op) {
    if (v.value().rank() != rank)
        throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                             shape_string(v.shape()));
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

// Geometry of a convolution, shared by forward and backward.
struct ConvGeometry {
    std::size_t n, c, h, w, o, kh, kw, stride, pad, oh, ow;

    std::size_t patch() const { return c * kh * kw; }
    std::size_t positions() const { return oh * ow; }
};

// Output columns [lo, hi) whose input column ox * stride + kj - pad falls inside the image.
inline void valid_columns(const ConvGeometry& g, std::size_t kj, std::size_t& lo, std::size_t& hi) {
    const long pad = static_cast<long>(g.pad), k = static_cast<long>(kj), s = static_cast<long>(g.stride);
    const long first = std::max(0L, (pad - k + s - 1) / s);
    const long last = (static_cast<long>(g.w) - 1 + pad - k) / s + 1;
    lo = static_cast<std::size_t>(std::min(first, static_cast<long>(g.ow)));
    hi = static_cast<std::size_t>(std::clamp(last, static_cast<long>(lo), static_cast<long>(g.ow)));
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
    const std::size_t p = g.positions();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = col + ((ci * g.kh + ki) * g.kw + kj) * p;
                std::size_t lo = 0, hi = 0;
                valid_columns(g, kj, lo, hi);
                const long shift = static_cast<long>(kj) - static_cast<long>(g.pad);
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long y = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    T* dst = row + oy * g.ow;
                    if (y < 0 || y >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.ow, T(0));
                        continue;
                    }
                    const T* src = image + (ci * g.h + static_cast<std::size_t>(y)) * g.w;
                    std::fill(dst, dst + lo, T(0));
                    if (g.stride == 1) {
                        std::copy(src + static_cast<long>(lo) + shift, src + static_cast<long>(hi) + shift, dst + lo);
                    } else {
                        for (std::size_t ox = lo; ox < hi; ++ox)
                            dst[ox] = src[static_cast<long>(ox * g.stride) + shift];
                    }
                    std::fill(dst + hi, dst + g.ow, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
    const std::size_t p = g.positions();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = col + ((ci * g.kh + ki) * g.kw + kj) * p;
                std::size_t lo = 0, hi = 0;
                valid_columns(g, kj, lo, hi);
                const long shift = static_cast<long>(kj) - static_cast<long>(g.pad);
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long y = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (y < 0 || y >= static_cast<long>(g.h)) continue;
                    T* dst = image + (ci * g.h + static_cast<std::size_t>(y)) * g.w;
                    const T* src = row + oy * g.ow;
                    for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<long>(ox * g.stride) + shift] += src[ox];
                }
            }
        }
    }
}

// Splits a batch-norm input into (batch, channels, spatial).
struct ChannelLayout {
    std::size_t n, c, s;
};

template <typename T>
ChannelLayout channel_layout(const Tensor<T>& x) {
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    throw DimensionError("batch_norm expects [n x d] or [n x c x h x w], got " + shape_string(x.shape()));
}

template <typename T>
void check_affine(const Var<T>& gamma, const Var<T>& beta, std::size_t c) {
    if (gamma.value().numel() != c || beta.value().numel() != c)
        throw DimensionError("batch_norm affine parameters must have " + std::to_string(c) + " entries");
}

template <typename T>
using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// Per-channel sum over batch and spatial positions.
template <typename T>
void channel_sums(const T* x, const ChannelLayout& L, T* out) {
    std::fill(out, out + L.c, T(0));
    if (L.s == 1) {
        Arr<T> acc(out, L.c);
        for (std::size_t i = 0; i < L.n; ++i) acc += CArr<T>(x + i * L.c, L.c);
        return;
    }
    for (std::size_t i = 0; i < L.n; ++i)
        for (std::size_t ch = 0; ch < L.c; ++ch) out[ch] += CArr<T>(x + (i * L.c + ch) * L.s, L.s).sum();
}

// Per-channel sum of a * b.
template <typename T>
void channel_dot(const T* a, const T* b, const ChannelLayout& L, T* out) {
    std::fill(out, out + L.c, T(0));
    if (L.s == 1) {
        Arr<T> acc(out, L.c);
        for (std::size_t i = 0; i < L.n; ++i) acc += CArr<T>(a + i * L.c, L.c) * CArr<T>(b + i * L.c, L.c);
        return;
    }
    for (std::size_t i = 0; i < L.n; ++i)
        for (std::size_t ch = 0; ch < L.c; ++ch) {
            const std::size_t base = (i * L.c + ch) * L.s;
            out[ch] += (CArr<T>(a + base, L.s) * CArr<T>(b + base, L.s)).sum();
        }
}

}  // namespace

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_same_tape(a, b);
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    Tensor<T> out({m, p});
    MapMat<T>(out.data().data(), m, p).noalias() =
        CMapMat<T>(a.value().data().data(), m, k) * CMapMat<T>(b.value().data().data(), k, p);
    return a.tape()->record(std::move(out), {a, b}, "matmul", [a, b, m, k, p](Tape<T>& tape, std::span<const T> g) {
        CMapMat<T> gm(g.data(), m, p);
        if (tape.needs_grad(a)) {
            AlignedVector<T> da(m * k);
            MapMat<T>(da.data(), m, k).noalias() = gm * CMapMat<T>(b.value().data().data(), k, p).transpose();
            tape.accumulate(a, da);
        }
        if (tape.needs_grad(b)) {
            AlignedVector<T> db(k * p);
            MapMat<T>(db.data(), k, p).noalias() = CMapMat<T>(a.value().data().data(), m, k).transpose() * gm;
            tape.accumulate(b, db);
        }
    });
}

template <std::floating_point T>
Var<T> transpose(Var<T> a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<T> out({n, m});
    MapMat<T>(out.data().data(), n, m) = CMapMat<T>(a.value().data().data(), m, n).transpose();
    return a.tape()->record(std::move(out), {a}, "transpose", [a, m, n](Tape<T>& tape, std::span<const T> g) {
        AlignedVector<T> da(m * n);
        MapMat<T>(da.data(), m, n) = CMapMat<T>(g.data(), n, m).transpose();
        tape.accumulate(a, da);
    });
}

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "add");
    Tensor<T> out = a.value();
    out.set_requires_grad(false);
    out.clear_grad();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return a.tape()->record(std::move(out), {a, b}, "add", [a, b](Tape<T>& tape, std::span<const T> g) {
        tape.accumulate(a, g);
        tape.accumulate(b, g);
    });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    const auto av = a.value().data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
    return a.tape()->record(std::move(out), {a, b}, "sub", [a, b](Tape<T>& tape, std::span<const T> g) {
        tape.accumulate(a, g);
        if (tape.needs_grad(b)) {
            AlignedVector<T> nb(g.begin(), g.end());
            for (T& v : nb) v = -v;
            tape.accumulate(b, nb);
        }
    });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    const auto av = a.value().data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    return a.tape()->record(std::move(out), {a, b}, "mul", [a, b](Tape<T>& tape, std::span<const T> g) {
        const auto av = a.value().data();
        const auto bv = b.value().data();
        if (tape.needs_grad(a)) {
            AlignedVector<T> da(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * bv[i];
            tape.accumulate(a, da);
        }
        if (tape.needs_grad(b)) {
            AlignedVector<T> db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * av[i];
            tape.accumulate(b, db);
        }
    });
}

template <std::floating_point T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out(a.shape());
    const auto av = a.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * factor;
    return a.tape()->record(std::move(out), {a}, "scale", [a, factor](Tape<T>& tape, std::span<const T> g) {
        AlignedVector<T> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * factor;
        tape.accumulate(a, da);
    });
}

template <std::floating_point T>
Var<T> sum(Var<T> a) {
    T total = 0;
    for (T v : a.value().data()) total += v;
    const std::size_t n = a.value().numel();
    return a.tape()->record(Tensor<T>::scalar(total), {a}, "sum", [a, n](Tape<T>& tape, std::span<const T> g) {
        tape.accumulate(a, AlignedVector<T>(n, g[0]));
    });
}

template <std::floating_point T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
    require_same_tape(x, bias);
    require_rank(x, 2, "add_bias");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (bias.value().numel() != d)
        throw DimensionError("add_bias: bias has " + std::to_string(bias.value().numel()) + " entries, need " +
                             std::to_string(d));
    Tensor<T> out(x.shape());
    const auto xv = x.value().data();
    const auto bv = bias.value().data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
    return x.tape()->record(std::move(out), {x, bias}, "add_bias", [x, bias, n, d](Tape<T>& tape, std::span<const T> g) {
        tape.accumulate(x, g);
        if (tape.needs_grad(bias)) {
            AlignedVector<T> db(d, T(0));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
            tape.accumulate(bias, db);
        }
    });
}

template <std::floating_point T>
Var<T> relu(Var<T> x) {
    Tensor<T> out(x.shape());
    const auto xv = x.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    return x.tape()->record(std::move(out), {x}, "relu", [x](Tape<T>& tape, std::span<const T> g) {
        const auto xv = x.value().data();
        AlignedVector<T> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = xv[i] > T(0) ? g[i] : T(0);
        tape.accumulate(x, dx);
    });
}

template <std::floating_point T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return x.tape()->record(std::move(out), {x}, "reshape",
                            [x](Tape<T>& tape, std::span<const T> g) { tape.accumulate(x, g); });
}

template <std::floating_point T>
Var<T> conv2d(Var<T> input, Var<T> kernels, std::size_t stride, std::size_t padding) {
    require_same_tape(input, kernels);
    require_rank(input, 4, "conv2d input");
    require_rank(kernels, 4, "conv2d kernels");
    if (stride == 0) throw ContractError("conv2d stride must be positive");
    ConvGeometry geo{};
    geo.n = input.dim(0);
    geo.c = input.dim(1);
    geo.h = input.dim(2);
    geo.w = input.dim(3);
    geo.o = kernels.dim(0);
    geo.kh = kernels.dim(2);
    geo.kw = kernels.dim(3);
    geo.stride = stride;
    geo.pad = padding;
    if (kernels.dim(1) != geo.c)
        throw DimensionError("conv2d channel mismatch: input " + shape_string(input.shape()) + ", kernels " +
                             shape_string(kernels.shape()));
    if (geo.kh > geo.h + 2 * padding || geo.kw > geo.w + 2 * padding)
        throw DimensionError("conv2d kernel " + shape_string(kernels.shape()) + " larger than padded input " +
                             shape_string(input.shape()));
    geo.oh = (geo.h + 2 * padding - geo.kh) / stride + 1;
    geo.ow = (geo.w + 2 * padding - geo.kw) / stride + 1;

    const std::size_t k = geo.patch(), p = geo.positions();
    Tensor<T> out({geo.n, geo.o, geo.oh, geo.ow});
    AlignedVector<T> col(k * p);
    CMapMat<T> wm(kernels.value().data().data(), geo.o, k);
    const T* in = input.value().data().data();
    for (std::size_t i = 0; i < geo.n; ++i) {
        im2col(in + i * geo.c * geo.h * geo.w, geo, col.data());
        MapMat<T>(out.data().data() + i * geo.o * p, geo.o, p).noalias() = wm * CMapMat<T>(col.data(), k, p);
    }

    return input.tape()->record(
        std::move(out), {input, kernels}, "conv2d", [input, kernels, geo](Tape<T>& tape, std::span<const T> g) {
            const std::size_t k = geo.patch(), p = geo.positions();
            const std::size_t image_size = geo.c * geo.h * geo.w;
            const bool want_input = tape.needs_grad(input);
            const bool want_kernels = tape.needs_grad(kernels);
            CMapMat<T> wm(kernels.value().data().data(), geo.o, k);
            const T* in = input.value().data().data();
            AlignedVector<T> col(k * p);
            AlignedVector<T> dw(want_kernels ? geo.o * k : 0, T(0));
            AlignedVector<T> dx(want_input ? geo.n * image_size : 0, T(0));
            for (std::size_t i = 0; i < geo.n; ++i) {
                CMapMat<T> gi(g.data() + i * geo.o * p, geo.o, p);
                if (want_kernels) {
                    im2col(in + i * image_size, geo, col.data());
                    MapMat<T>(dw.data(), geo.o, k).noalias() += gi * CMapMat<T>(col.data(), k, p).transpose();
                }
                if (want_input) {
                    MapMat<T>(col.data(), k, p).noalias() = wm.transpose() * gi;
                    col2im_add(col.data(), geo, dx.data() + i * image_size);
                }
            }
            if (want_kernels) tape.accumulate(kernels, dw);
            if (want_input) tape.accumulate(input, dx);
        });
}

template <std::floating_point T>
Var<T> max_pool2d(Var<T> input, std::size_t window) {
    require_rank(input, 4, "max_pool2d");
    if (window == 0) throw ContractError("max_pool2d window must be positive");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t oh = h / window, ow = w / window;
    if (oh == 0 || ow == 0)
        throw DimensionError("max_pool2d window " + std::to_string(window) + " larger than input " +
                             shape_string(input.shape()));
    Tensor<T> out({n, c, oh, ow});
    std::vector<std::size_t> argmax(out.numel());
    const auto xv = input.value().data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = base + oy * window * w + ox * window;
                for (std::size_t dy = 0; dy < window; ++dy) {
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = base + (oy * window + dy) * w + ox * window + dx;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                }
                const std::size_t o = (plane * oh + oy) * ow + ox;
                out[o] = xv[best];
                argmax[o] = best;
            }
        }
    }
    const std::size_t in_size = input.value().numel();
    return input.tape()->record(std::move(out), {input}, "max_pool2d",
                                [input, in_size, argmax = std::move(argmax)](Tape<T>& tape, std::span<const T> g) {
                                    AlignedVector<T> dx(in_size, T(0));
                                    for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
                                    tape.accumulate(input, dx);
                                });
}

template <std::floating_point T>
Var<T> global_avg_pool(Var<T> input) {
    require_rank(input, 4, "global_avg_pool");
    const std::size_t n = input.dim(0), c = input.dim(1), s = input.dim(2) * input.dim(3);
    Tensor<T> out({n, c});
    const auto xv = input.value().data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        T acc = 0;
        for (std::size_t j = 0; j < s; ++j) acc += xv[plane * s + j];
        out[plane] = acc / static_cast<T>(s);
    }
    return input.tape()->record(std::move(out), {input}, "global_avg_pool",
                                [input, n, c, s](Tape<T>& tape, std::span<const T> g) {
                                    AlignedVector<T> dx(n * c * s);
                                    for (std::size_t plane = 0; plane < n * c; ++plane)
                                        std::fill_n(dx.begin() + plane * s, s, g[plane] / static_cast<T>(s));
                                    tape.accumulate(input, dx);
                                });
}

template <std::floating_point T>
Var<T> batch_norm(Var<T> input, Var<T> gamma, Var<T> beta, BatchNormStats<T>& running, Mode mode,
                  const BatchNormOptions& options) {
    if (mode == Mode::eval) return batch_norm_eval(input, gamma, beta, running, options);

    require_same_tape(input, gamma);
    require_same_tape(input, beta);
    const ChannelLayout L = channel_layout(input.value());
    check_affine(gamma, beta, L.c);
    if (running.running_mean.size() != L.c || running.running_var.size() != L.c)
        throw DimensionError("batch_norm running statistics have the wrong width");
    if (L.n < 2) throw BatchSizeError("batch_norm in train mode needs at least 2 samples, got " + std::to_string(L.n));

    const T eps = static_cast<T>(options.eps);
    const T momentum = static_cast<T>(options.momentum);
    const T count = static_cast<T>(L.n * L.s);
    const auto xv = input.value().data();
    const auto gv = gamma.value().data();
    const auto bv = beta.value().data();

    AlignedVector<T> mean(L.c), var(L.c), inv_std(L.c);
    channel_sums(xv.data(), L, mean.data());
    for (T& m : mean) m /= count;
    AlignedVector<T> xhat(xv.size());
    for (std::size_t i = 0; i < L.n; ++i)
        for (std::size_t ch = 0; ch < L.c; ++ch) {
            const std::size_t base = (i * L.c + ch) * L.s;
            Arr<T>(xhat.data() + base, L.s) = CArr<T>(xv.data() + base, L.s) - mean[ch];
        }
    channel_dot(xhat.data(), xhat.data(), L, var.data());
    for (std::size_t ch = 0; ch < L.c; ++ch) {
        var[ch] /= count;
        inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);
    }

    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < L.n; ++i)
        for (std::size_t ch = 0; ch < L.c; ++ch) {
            const std::size_t base = (i * L.c + ch) * L.s;
            Arr<T> xh(xhat.data() + base, L.s);
            xh *= inv_std[ch];
            Arr<T>(out.data().data() + base, L.s) = xh * gv[ch] + bv[ch];
        }

    for (std::size_t ch = 0; ch < L.c; ++ch) {
        running.running_mean[ch] = (T(1) - momentum) * running.running_mean[ch] + momentum * mean[ch];
        running.running_var[ch] = (T(1) - momentum) * running.running_var[ch] + momentum * var[ch];
    }

    return input.tape()->record(
        std::move(out), {input, gamma, beta}, "batch_norm",
        [input, gamma, beta, L, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tape,
                                                                                       std::span<const T> g) {
            const auto gv = gamma.value().data();
            AlignedVector<T> dgamma(L.c), dbeta(L.c);
            channel_dot(g.data(), xhat.data(), L, dgamma.data());
            channel_sums(g.data(), L, dbeta.data());
            if (tape.needs_grad(input)) {
                // dx = inv_std * gamma * (g - mean(g) - xhat * mean(g * xhat))
                const T count = static_cast<T>(L.n * L.s);
                AlignedVector<T> dx(g.size());
                for (std::size_t i = 0; i < L.n; ++i)
                    for (std::size_t ch = 0; ch < L.c; ++ch) {
                        const std::size_t base = (i * L.c + ch) * L.s;
                        const T k = inv_std[ch] * gv[ch];
                        const T mg = dbeta[ch] / count;
                        const T mgx = dgamma[ch] / count;
                        Arr<T>(dx.data() + base, L.s) =
                            k * (CArr<T>(g.data() + base, L.s) - mg - CArr<T>(xhat.data() + base, L.s) * mgx);
                    }
                tape.accumulate(input, dx);
            }
            tape.accumulate(gamma, dgamma);
            tape.accumulate(beta, dbeta);
        });
}

template <std::floating_point T>
Var<T> batch_norm_eval(Var<T> input, Var<T> gamma, Var<T> beta, const BatchNormStats<T>& running,
                       const BatchNormOptions& options) {
    require_same_tape(input, gamma);
    require_same_tape(input, beta);
    const ChannelLayout L = channel_layout(input.value());
    check_affine(gamma, beta, L.c);
    if (running.running_mean.size() != L.c || running.running_var.size() != L.c)
        throw DimensionError("batch_norm running statistics have the wrong width");

    const T eps = static_cast<T>(options.eps);
    AlignedVector<T> inv_std(L.c);
    for (std::size_t ch = 0; ch < L.c; ++ch) inv_std[ch] = T(1) / std::sqrt(running.running_var[ch] + eps);
    const AlignedVector<T> mean(running.running_mean.begin(), running.running_mean.end());

    const auto xv = input.value().data();
    const auto gv = gamma.value().data();
    const auto bv = beta.value().data();
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < L.n; ++i)
        for (std::size_t ch = 0; ch < L.c; ++ch) {
            const std::size_t base = (i * L.c + ch) * L.s;
            for (std::size_t j = 0; j < L.s; ++j)
                out[base + j] = gv[ch] * (xv[base + j] - mean[ch]) * inv_std[ch] + bv[ch];
        }

    return input.tape()->record(
        std::move(out), {input, gamma, beta}, "batch_norm_eval",
        [input, gamma, beta, L, mean, inv_std](Tape<T>& tape, std::span<const T> g) {
            const auto xv = input.value().data();
            const auto gv = gamma.value().data();
            AlignedVector<T> dx(tape.needs_grad(input) ? g.size() : 0);
            AlignedVector<T> dgamma(L.c, T(0)), dbeta(L.c, T(0));
            for (std::size_t i = 0; i < L.n; ++i)
                for (std::size_t ch = 0; ch < L.c; ++ch) {
                    const std::size_t base = (i * L.c + ch) * L.s;
                    for (std::size_t j = 0; j < L.s; ++j) {
                        const T xhat = (xv[base + j] - mean[ch]) * inv_std[ch];
                        dgamma[ch] += g[base + j] * xhat;
                        dbeta[ch] += g[base + j];
                        if (!dx.empty()) dx[base + j] = g[base + j] * gv[ch] * inv_std[ch];
                    }
                }
            if (!dx.empty()) tape.accumulate(input, dx);
            tape.accumulate(gamma, dgamma);
            tape.accumulate(beta, dbeta);
        });
}

template <std::floating_point T>
Var<T> standardize_columns(Var<T> z, T eps) {
    require_rank(z, 2, "standardize_columns");
    const std::size_t n = z.dim(0), d = z.dim(1);
    if (n < 2) throw BatchSizeError("standardize_columns needs at least 2 rows, got " + std::to_string(n));
    const auto zv = z.value().data();

    AlignedVector<T> mean(d, T(0)), sigma(d, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += zv[i * d + j];
    for (T& m : mean) m /= static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const T c = zv[i * d + j] - mean[j];
            sigma[j] += c * c;
        }
    for (T& s : sigma) s = std::sqrt(s / static_cast<T>(n));

    Tensor<T> out(z.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (zv[i * d + j] - mean[j]) / (sigma[j] + eps);

    return z.tape()->record(
        std::move(out), {z}, "standardize_columns", [z, n, d, eps, mean, sigma](Tape<T>& tape, std::span<const T> g) {
            const auto zv = z.value().data();
            AlignedVector<T> dz(n * d);
            for (std::size_t j = 0; j < d; ++j) {
                const T s = sigma[j] + eps;
                T g_mean = 0, g_dot_c = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    g_mean += g[i * d + j];
                    g_dot_c += g[i * d + j] * (zv[i * d + j] - mean[j]);
                }
                g_mean /= static_cast<T>(n);
                // d sigma / d z_k = c_k / (n sigma); undefined at sigma == 0, where the
                // output is identically zero and we keep only the centering term.
                const T sigma_coef = sigma[j] > T(0) ? -g_dot_c / (s * s) / (static_cast<T>(n) * sigma[j]) : T(0);
                for (std::size_t i = 0; i < n; ++i) {
                    const T c = zv[i * d + j] - mean[j];
                    dz[i * d + j] = (g[i * d + j] - g_mean) / s + sigma_coef * c;
                }
            }
            tape.accumulate(z, dz);
        });
}

template <std::floating_point T>
Var<T> barlow_objective(Var<T> correlation, T lambda) {
    require_rank(correlation, 2, "barlow_objective");
    const std::size_t d = correlation.dim(0);
    if (correlation.dim(1) != d)
        throw DimensionError("barlow_objective expects a square matrix, got " + shape_string(correlation.shape()));
    const auto cv = correlation.value().data();
    T on_diag = 0, off_diag = 0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const T c = cv[i * d + j];
            if (i == j)
                on_diag += (T(1) - c) * (T(1) - c);
            else
                off_diag += c * c;
        }
    return correlation.tape()->record(
        Tensor<T>::scalar(on_diag + lambda * off_diag), {correlation}, "barlow_objective",
        [correlation, d, lambda](Tape<T>& tape, std::span<const T> g) {
            const auto cv = correlation.value().data();
            AlignedVector<T> dc(d * d);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    const T c = cv[i * d + j];
                    dc[i * d + j] = g[0] * (i == j ? T(-2) * (T(1) - c) : T(2) * lambda * c);
                }
            tape.accumulate(correlation, dc);
        });
}

template <std::floating_point T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " rows");
    const auto lv = logits.value().data();
    AlignedVector<T> probs(n * k);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= k)
            throw ContractError("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
        const T* row = lv.data() + i * k;
        const T top = *std::max_element(row, row + k);
        T z = 0;
        for (std::size_t j = 0; j < k; ++j) {
            probs[i * k + j] = std::exp(row[j] - top);
            z += probs[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
        loss += -(row[label] - top - std::log(z));
    }
    loss /= static_cast<T>(n);
    std::vector<int> owned(labels.begin(), labels.end());
    return logits.tape()->record(
        Tensor<T>::scalar(loss), {logits}, "softmax_cross_entropy",
        [logits, n, k, probs = std::move(probs), owned = std::move(owned)](Tape<T>& tape, std::span<const T> g) {
            AlignedVector<T> dl(probs);
            for (std::size_t i = 0; i < n; ++i) dl[i * k + static_cast<std::size_t>(owned[i])] -= T(1);
            const T factor = g[0] / static_cast<T>(n);
            for (T& v : dl) v *= factor;
            tape.accumulate(logits, dl);
        });
}

#define AUGCL_INSTANTIATE_OPS(T)                                                                              \
    template Var<T> matmul<T>(Var<T>, Var<T>);                                                                \
    template Var<T> transpose<T>(Var<T>);                                                                     \
    template Var<T> add<T>(Var<T>, Var<T>);                                                                   \
    template Var<T> sub<T>(Var<T>, Var<T>);                                                                   \
    template Var<T> mul<T>(Var<T>, Var<T>);                                                                   \
    template Var<T> scale<T>(Var<T>, T);                                                                      \
    template Var<T> sum<T>(Var<T>);                                                                           \
    template Var<T> add_bias<T>(Var<T>, Var<T>);                                                              \
    template Var<T> relu<T>(Var<T>);                                                                          \
    template Var<T> reshape<T>(Var<T>, Shape);                                                                \
    template Var<T> conv2d<T>(Var<T>, Var<T>, std::size_t, std::size_t);                                      \
    template Var<T> max_pool2d<T>(Var<T>, std::size_t);                                                       \
    template Var<T> global_avg_pool<T>(Var<T>);                                                               \
    template Var<T> batch_norm<T>(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, Mode, const BatchNormOptions&); \
    template Var<T> batch_norm_eval<T>(Var<T>, Var<T>, Var<T>, const BatchNormStats<T>&,                      \
                                       const BatchNormOptions&);                                              \
    template Var<T> standardize_columns<T>(Var<T>, T);                                                        \
    template Var<T> barlow_objective<T>(Var<T>, T);                                                           \
    template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const int>);

AUGCL_INSTANTIATE_OPS(float)
AUGCL_INSTANTIATE_OPS(double)

}  // namespace augcl
