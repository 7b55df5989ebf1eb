#pragma once

#include <cstdint>
#include <vector>

#include "octflow/rng.hpp"
#include "octflow/tensor.hpp"
#include "octflow/threadpool.hpp"

namespace octflow {

// All spatial kernels are 3x3, stride 1, zero-padded to preserve h and w.
// Inner sums accumulate in double and are rounded into T on store; every
// reduction runs in a fixed order so outputs do not depend on thread count.

namespace detail {

#if defined(__GNUC__) && defined(__x86_64__)
#define OCTFLOW_V4D 1
typedef double v4d __attribute__((vector_size(32)));

inline v4d v4d_load(const double* p) {
    v4d v;
    __builtin_memcpy(&v, p, sizeof v);
    return v;
}
#endif

// zero-padded double copy of every (sample, channel) plane: (h+2) x (w+2).
// Two slack doubles at the tail: the tap-shifted sweeps below read up to two
// elements past the final plane and discard those lanes.
template <typename T>
std::vector<double> pad_planes(const Tensor4<T>& t) {
    const int n = t.n(), c = t.c(), h = t.h(), w = t.w();
    const std::size_t ph = h + 2, pw = w + 2;
    std::vector<double> pad(static_cast<std::size_t>(n) * c * ph * pw + 2, 0.0);
    parallel_ranges(static_cast<std::size_t>(n) * c, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t plane = lo; plane < hi; ++plane) {
            const int in = static_cast<int>(plane) / c;
            const int ic = static_cast<int>(plane) % c;
            double* dst = pad.data() + plane * ph * pw;
            for (int y = 0; y < h; ++y) {
                const T* src = t.row(in, ic, y);
                double* drow = dst + (y + 1) * pw + 1;
                for (int x = 0; x < w; ++x) drow[x] = static_cast<double>(src[x]);
            }
        }
    });
    return pad;
}

} // namespace detail

template <typename T>
void check_conv_shapes(const Tensor4<T>& input, const Tensor4<T>& kernel,
                       const std::vector<T>& bias) {
    if (kernel.h() != 3 || kernel.w() != 3) {
        throw ShapeError("conv2d: kernel must be 3x3, got " + kernel.shape().str());
    }
    if (kernel.c() != input.c()) {
        throw ShapeError("conv2d: input channels " + input.shape().str() +
                         " do not match kernel " + kernel.shape().str());
    }
    if (static_cast<int>(bias.size()) != kernel.n()) {
        throw ShapeError("conv2d: bias size " + std::to_string(bias.size()) +
                         " does not match kernel filters " + kernel.shape().str());
    }
}

// kernel dims: (filters, in_channels, 3, 3); output (n, filters, h, w)
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const Tensor4<T>& kernel,
                          const std::vector<T>& bias) {
    check_conv_shapes(input, kernel, bias);
    const int n = input.n(), ci = input.c(), h = input.h(), w = input.w();
    const int co = kernel.n();
    const std::size_t pw = w + 2, ph = h + 2;

    const std::vector<double> pad = detail::pad_planes(input);
    Tensor4<T> out(n, co, h, w);

    // One flat pass per (in-channel, tap) pair over the whole plane at padded
    // width. Columns w and w+1 of each accumulator row are don't-care lanes
    // (their reads spill into the next padded row); they are never copied out.
    const std::size_t flat = static_cast<std::size_t>(h) * pw;
    parallel_ranges(static_cast<std::size_t>(n) * co, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> acc(flat);
        for (std::size_t plane = lo; plane < hi; ++plane) {
            const int in = static_cast<int>(plane) / co;
            const int oc = static_cast<int>(plane) % co;
            const double* sample_pad = pad.data() + static_cast<std::size_t>(in) * ci * ph * pw;
            std::fill(acc.begin(), acc.end(), static_cast<double>(bias[oc]));
            for (int c = 0; c < ci; ++c) {
                const T* kp = kernel.row(oc, c, 0); // 9 contiguous taps
                double k[9];
                for (int t = 0; t < 9; ++t) k[t] = static_cast<double>(kp[t]);
                const double* cpad = sample_pad + static_cast<std::size_t>(c) * ph * pw;
                const double* r0 = cpad;
                const double* r1 = cpad + pw;
                const double* r2 = cpad + 2 * pw;
                for (std::size_t j = 0; j < flat; ++j) {
                    acc[j] += k[0] * r0[j] + k[1] * r0[j + 1] + k[2] * r0[j + 2] +
                              k[3] * r1[j] + k[4] * r1[j + 1] + k[5] * r1[j + 2] +
                              k[6] * r2[j] + k[7] * r2[j + 1] + k[8] * r2[j + 2];
                }
            }
            for (int y = 0; y < h; ++y) {
                const double* arow = acc.data() + static_cast<std::size_t>(y) * pw;
                T* orow = out.row(in, oc, y);
                for (int x = 0; x < w; ++x) orow[x] = static_cast<T>(arow[x]);
            }
        }
    });
    return out;
}

template <typename T>
struct Conv2dGrads {
    Tensor4<T> d_input;
    Tensor4<T> d_kernel;
    std::vector<T> d_bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor4<T>& input, const Tensor4<T>& kernel,
                               const Tensor4<T>& d_out) {
    const int n = input.n(), ci = input.c(), h = input.h(), w = input.w();
    const int co = kernel.n();
    if (d_out.n() != n || d_out.c() != co || d_out.h() != h || d_out.w() != w) {
        throw ShapeError("conv2d_backward: output grad " + d_out.shape().str() +
                         " inconsistent with input " + input.shape().str() +
                         " and kernel " + kernel.shape().str());
    }
    const std::size_t pw = w + 2, ph = h + 2;

    Conv2dGrads<T> g{Tensor4<T>(n, ci, h, w), Tensor4<T>(co, ci, 3, 3),
                     std::vector<T>(static_cast<std::size_t>(co), T{0})};

    const std::vector<double> dout_pad = detail::pad_planes(d_out);

    // d_input: correlation of d_out with the spatially flipped, transposed
    // kernel, as flat tap sweeps (same don't-care-lane scheme as forward)
    const std::size_t flat = static_cast<std::size_t>(h) * pw;
    parallel_ranges(static_cast<std::size_t>(n) * ci, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> acc(flat);
        for (std::size_t plane = lo; plane < hi; ++plane) {
            const int in = static_cast<int>(plane) / ci;
            const int c = static_cast<int>(plane) % ci;
            const double* sample_pad = dout_pad.data() + static_cast<std::size_t>(in) * co * ph * pw;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int oc = 0; oc < co; ++oc) {
                const T* kp = kernel.row(oc, c, 0);
                double k[9]; // flipped taps
                for (int t = 0; t < 9; ++t) k[t] = static_cast<double>(kp[8 - t]);
                const double* opad = sample_pad + static_cast<std::size_t>(oc) * ph * pw;
                const double* r0 = opad;
                const double* r1 = opad + pw;
                const double* r2 = opad + 2 * pw;
                for (std::size_t j = 0; j < flat; ++j) {
                    acc[j] += k[0] * r0[j] + k[1] * r0[j + 1] + k[2] * r0[j + 2] +
                              k[3] * r1[j] + k[4] * r1[j + 1] + k[5] * r1[j + 2] +
                              k[6] * r2[j] + k[7] * r2[j + 1] + k[8] * r2[j + 2];
                }
            }
            for (int y = 0; y < h; ++y) {
                const double* arow = acc.data() + static_cast<std::size_t>(y) * pw;
                T* orow = g.d_input.row(in, c, y);
                for (int x = 0; x < w; ++x) orow[x] = static_cast<T>(arow[x]);
            }
        }
    });

    // d_kernel[t] = <d_out, input shifted by tap t>. Running the dot at padded
    // width is exact because d_out's padding ring is zero; the j range is
    // trimmed only where the shifted index would leave the plane, and every
    // trimmed element sits in that zero ring.
    const std::vector<double> in_pad = detail::pad_planes(input);
    const std::size_t plane_len = ph * pw;
    parallel_ranges(static_cast<std::size_t>(co), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t oc = lo; oc < hi; ++oc) {
            double bsum = 0.0;
            for (int in = 0; in < n; ++in) {
                for (int y = 0; y < h; ++y) {
                    const T* drow = d_out.row(in, static_cast<int>(oc), y);
                    for (int x = 0; x < w; ++x) bsum += static_cast<double>(drow[x]);
                }
            }
            g.d_bias[oc] = static_cast<T>(bsum);

            // j sweeps the interior of the padded d_out plane; the first and
            // last swept index are shrunk by one so every tap offset stays in
            // the input plane, and both dropped elements lie in d_out's zero
            // padding ring, so the dots are unchanged.
            const std::size_t jstart = pw + 1;
            const std::size_t jend = (static_cast<std::size_t>(h) + 1) * pw - 1;
            for (int c = 0; c < ci; ++c) {
                double ksum[9] = {};
                for (int in = 0; in < n; ++in) {
                    const double* dpad = dout_pad.data() +
                        (static_cast<std::size_t>(in) * co + oc) * plane_len;
                    const double* base = in_pad.data() +
                        (static_cast<std::size_t>(in) * ci + c) * plane_len - pw - 1;
#ifdef OCTFLOW_V4D
                    // four-lane partial sums per tap, folded in a fixed tree;
                    // lane arithmetic is elementwise, so the summation order
                    // is pinned by the source regardless of target ISA
                    detail::v4d a0{}, a1{}, a2{}, a3{}, a4{}, a5{}, a6{}, a7{}, a8{};
                    const double* s0 = base;
                    const double* s1 = base + 1;
                    const double* s2 = base + 2;
                    const double* s3 = base + pw;
                    const double* s4 = base + pw + 1;
                    const double* s5 = base + pw + 2;
                    const double* s6 = base + 2 * pw;
                    const double* s7 = base + 2 * pw + 1;
                    const double* s8 = base + 2 * pw + 2;
                    std::size_t j = jstart;
                    for (; j + 4 <= jend; j += 4) {
                        const detail::v4d dv = detail::v4d_load(dpad + j);
                        a0 += dv * detail::v4d_load(s0 + j);
                        a1 += dv * detail::v4d_load(s1 + j);
                        a2 += dv * detail::v4d_load(s2 + j);
                        a3 += dv * detail::v4d_load(s3 + j);
                        a4 += dv * detail::v4d_load(s4 + j);
                        a5 += dv * detail::v4d_load(s5 + j);
                        a6 += dv * detail::v4d_load(s6 + j);
                        a7 += dv * detail::v4d_load(s7 + j);
                        a8 += dv * detail::v4d_load(s8 + j);
                    }
                    const detail::v4d* acc9[9] = {&a0, &a1, &a2, &a3, &a4, &a5, &a6, &a7, &a8};
                    for (int t = 0; t < 9; ++t) {
                        const detail::v4d& a = *acc9[t];
                        double s = (a[0] + a[2]) + (a[1] + a[3]);
                        const double* src = base + (t / 3) * pw + (t % 3);
                        for (std::size_t jt = j; jt < jend; ++jt) s += dpad[jt] * src[jt];
                        ksum[t] += s;
                    }
#else
                    for (int t = 0; t < 9; ++t) {
                        const double* src = base + (t / 3) * pw + (t % 3);
                        double l0 = 0, l1 = 0, l2 = 0, l3 = 0;
                        std::size_t j = jstart;
                        for (; j + 4 <= jend; j += 4) {
                            l0 += dpad[j] * src[j];
                            l1 += dpad[j + 1] * src[j + 1];
                            l2 += dpad[j + 2] * src[j + 2];
                            l3 += dpad[j + 3] * src[j + 3];
                        }
                        double tail = 0;
                        for (; j < jend; ++j) tail += dpad[j] * src[j];
                        ksum[t] += ((l0 + l2) + (l1 + l3)) + tail;
                    }
#endif
                }
                T* krow = g.d_kernel.row(static_cast<int>(oc), c, 0);
                for (int k = 0; k < 9; ++k) krow[k] = static_cast<T>(ksum[k]);
            }
        }
    });
    return g;
}

// ---- 2x2 max pooling, stride 2 ----

template <typename T>
struct PoolResult {
    Tensor4<T> out;
    std::vector<std::uint8_t> argmax; // winner position 0..3 = (dy<<1)|dx, per output element
};

template <typename T>
PoolResult<T> maxpool2(const Tensor4<T>& input) {
    const int n = input.n(), c = input.c(), h = input.h(), w = input.w();
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2: h and w must be even, got " + input.shape().str());
    }
    const int oh = h / 2, ow = w / 2;
    PoolResult<T> r{Tensor4<T>(n, c, oh, ow), {}};
    r.argmax.assign(r.out.size(), 0);
    parallel_ranges(static_cast<std::size_t>(n) * c, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t plane = lo; plane < hi; ++plane) {
            const int in = static_cast<int>(plane) / c;
            const int ic = static_cast<int>(plane) % c;
            for (int y = 0; y < oh; ++y) {
                const T* r0 = input.row(in, ic, 2 * y);
                const T* r1 = input.row(in, ic, 2 * y + 1);
                T* orow = r.out.row(in, ic, y);
                std::uint8_t* arow = r.argmax.data() + r.out.index(in, ic, y, 0);
                for (int x = 0; x < ow; ++x) {
                    // ties keep the first value in scan order
                    T best = r0[2 * x];
                    std::uint8_t pos = 0;
                    if (r0[2 * x + 1] > best) { best = r0[2 * x + 1]; pos = 1; }
                    if (r1[2 * x] > best) { best = r1[2 * x]; pos = 2; }
                    if (r1[2 * x + 1] > best) { best = r1[2 * x + 1]; pos = 3; }
                    orow[x] = best;
                    arow[x] = pos;
                }
            }
        }
    });
    return r;
}

template <typename T>
Tensor4<T> maxpool2_backward(const Shape4& input_shape, const std::vector<std::uint8_t>& argmax,
                             const Tensor4<T>& d_out) {
    Tensor4<T> d_in(input_shape);
    const int n = d_out.n(), c = d_out.c(), oh = d_out.h(), ow = d_out.w();
    parallel_ranges(static_cast<std::size_t>(n) * c, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t plane = lo; plane < hi; ++plane) {
            const int in = static_cast<int>(plane) / c;
            const int ic = static_cast<int>(plane) % c;
            for (int y = 0; y < oh; ++y) {
                const T* drow = d_out.row(in, ic, y);
                const std::uint8_t* arow = argmax.data() + d_out.index(in, ic, y, 0);
                for (int x = 0; x < ow; ++x) {
                    const int dy = arow[x] >> 1, dx = arow[x] & 1;
                    d_in.at(in, ic, 2 * y + dy, 2 * x + dx) = drow[x];
                }
            }
        }
    });
    return d_in;
}

// ---- 2x nearest-neighbor upsampling ----

template <typename T>
Tensor4<T> upsample2(const Tensor4<T>& input) {
    const int n = input.n(), c = input.c(), h = input.h(), w = input.w();
    Tensor4<T> out(n, c, 2 * h, 2 * w);
    parallel_ranges(static_cast<std::size_t>(n) * c, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t plane = lo; plane < hi; ++plane) {
            const int in = static_cast<int>(plane) / c;
            const int ic = static_cast<int>(plane) % c;
            for (int y = 0; y < h; ++y) {
                const T* src = input.row(in, ic, y);
                T* d0 = out.row(in, ic, 2 * y);
                T* d1 = out.row(in, ic, 2 * y + 1);
                for (int x = 0; x < w; ++x) {
                    d0[2 * x] = src[x];
                    d0[2 * x + 1] = src[x];
                    d1[2 * x] = src[x];
                    d1[2 * x + 1] = src[x];
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor4<T> upsample2_backward(const Tensor4<T>& d_out) {
    const int n = d_out.n(), c = d_out.c(), oh = d_out.h(), ow = d_out.w();
    if (oh % 2 != 0 || ow % 2 != 0) {
        throw ShapeError("upsample2_backward: grad dims must be even, got " + d_out.shape().str());
    }
    Tensor4<T> d_in(n, c, oh / 2, ow / 2);
    parallel_ranges(static_cast<std::size_t>(n) * c, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t plane = lo; plane < hi; ++plane) {
            const int in = static_cast<int>(plane) / c;
            const int ic = static_cast<int>(plane) % c;
            for (int y = 0; y < oh / 2; ++y) {
                const T* r0 = d_out.row(in, ic, 2 * y);
                const T* r1 = d_out.row(in, ic, 2 * y + 1);
                T* drow = d_in.row(in, ic, y);
                for (int x = 0; x < ow / 2; ++x) {
                    const double s = static_cast<double>(r0[2 * x]) + r0[2 * x + 1] +
                                     r1[2 * x] + r1[2 * x + 1];
                    drow[x] = static_cast<T>(s);
                }
            }
        }
    });
    return d_in;
}

// ---- bridge combine (skip connection variants) ----

enum class BridgeKind { none, sum, concat };

inline const char* bridge_name(BridgeKind k) {
    switch (k) {
        case BridgeKind::none: return "none";
        case BridgeKind::sum: return "sum";
        default: return "concat";
    }
}

template <typename T>
Tensor4<T> bridge_combine(const Tensor4<T>& skip, const Tensor4<T>& up, BridgeKind kind) {
    if (kind == BridgeKind::none) return up;
    if (kind == BridgeKind::sum) {
        require_same_shape(skip, up, "bridge_combine[sum]");
        Tensor4<T> out(up.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out.vec()[i] = skip.vec()[i] + up.vec()[i];
        return out;
    }
    if (skip.n() != up.n() || skip.h() != up.h() || skip.w() != up.w()) {
        throw ShapeError("bridge_combine[concat]: spatial/batch mismatch " +
                         skip.shape().str() + " vs " + up.shape().str());
    }
    // skip channels first
    Tensor4<T> out(up.n(), skip.c() + up.c(), up.h(), up.w());
    const std::size_t plane = static_cast<std::size_t>(up.h()) * up.w();
    for (int in = 0; in < up.n(); ++in) {
        T* dst = out.data() + out.index(in, 0, 0, 0);
        const T* s = skip.data() + skip.index(in, 0, 0, 0);
        std::copy(s, s + plane * skip.c(), dst);
        const T* u = up.data() + up.index(in, 0, 0, 0);
        std::copy(u, u + plane * up.c(), dst + plane * skip.c());
    }
    return out;
}

template <typename T>
struct BridgeGrads {
    Tensor4<T> d_skip;
    Tensor4<T> d_up;
};

template <typename T>
BridgeGrads<T> bridge_backward(const Shape4& skip_shape, const Shape4& up_shape,
                               BridgeKind kind, const Tensor4<T>& d_out) {
    if (kind == BridgeKind::none) {
        return {Tensor4<T>(skip_shape), d_out};
    }
    if (kind == BridgeKind::sum) {
        return {d_out, d_out};
    }
    BridgeGrads<T> g{Tensor4<T>(skip_shape), Tensor4<T>(up_shape)};
    const std::size_t plane = static_cast<std::size_t>(up_shape.h) * up_shape.w;
    for (int in = 0; in < up_shape.n; ++in) {
        const T* src = d_out.data() + d_out.index(in, 0, 0, 0);
        T* ds = g.d_skip.data() + g.d_skip.index(in, 0, 0, 0);
        T* du = g.d_up.data() + g.d_up.index(in, 0, 0, 0);
        std::copy(src, src + plane * skip_shape.c, ds);
        std::copy(src + plane * skip_shape.c, src + plane * (skip_shape.c + up_shape.c), du);
    }
    return g;
}

// ---- activations ----

template <typename T>
Tensor4<T> relu(const Tensor4<T>& input) {
    Tensor4<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        out.vec()[i] = input.vec()[i] > T{0} ? input.vec()[i] : T{0};
    }
    return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& input, const Tensor4<T>& d_out) {
    require_same_shape(input, d_out, "relu_backward");
    Tensor4<T> d_in(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        d_in.vec()[i] = input.vec()[i] > T{0} ? d_out.vec()[i] : T{0};
    }
    return d_in;
}

template <typename T>
Tensor4<T> linear_activation(const Tensor4<T>& input) {
    return input;
}

// ---- inverted dropout ----

template <typename T>
struct DropoutResult {
    Tensor4<T> out;
    std::vector<std::uint8_t> kept; // train mode only
};

template <typename T>
DropoutResult<T> dropout_forward(const Tensor4<T>& input, double p, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(p));
    }
    if (!train || p == 0.0) {
        return {input, {}};
    }
    DropoutResult<T> r{Tensor4<T>(input.shape()), {}};
    r.kept.assign(input.size(), 1);
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (rng.next_double() < p) {
            r.kept[i] = 0;
            r.out.vec()[i] = T{0};
        } else {
            r.out.vec()[i] = static_cast<T>(static_cast<double>(input.vec()[i]) * scale);
        }
    }
    return r;
}

template <typename T>
Tensor4<T> dropout_backward(const std::vector<std::uint8_t>& kept, double p,
                            const Tensor4<T>& d_out) {
    if (kept.empty()) return d_out; // identity pass
    Tensor4<T> d_in(d_out.shape());
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < d_out.size(); ++i) {
        d_in.vec()[i] = kept[i] ? static_cast<T>(static_cast<double>(d_out.vec()[i]) * scale) : T{0};
    }
    return d_in;
}

// ---- mean squared error ----

template <typename T>
struct MseResult {
    double loss = 0.0;
    Tensor4<T> grad; // d loss / d pred
};

template <typename T>
MseResult<T> mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target) {
    require_same_shape(pred, target, "mse_loss");
    MseResult<T> r{0.0, Tensor4<T>(pred.shape())};
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.vec()[i]) - static_cast<double>(target.vec()[i]);
        sum += d * d;
        r.grad.vec()[i] = static_cast<T>(2.0 * d * inv_n);
    }
    r.loss = sum * inv_n;
    return r;
}

} // namespace octflow
