#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "longct/nn/tensor.hpp"
#include "longct/util/rng.hpp"

namespace longct {
namespace nn {

// ---------------------------------------------------------------------------
// conv2d, stride 1, square kernel, symmetric zero padding
// weight layout (Co, Ci, k, k), bias (Co)
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const T* x, int ci, int h, int w, int k, int pad, T* cols) {
    const int64_t plane = static_cast<int64_t>(h) * w;
    int64_t row = 0;
    for (int c = 0; c < ci; ++c) {
        const T* src_plane = x + static_cast<int64_t>(c) * plane;
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx, ++row) {
                T* dst = cols + row * plane;
                const int dy = ky - pad;
                const int dx = kx - pad;
                // Valid destination column range for this kernel offset.
                const int x0 = dx < 0 ? -dx : 0;
                const int x1 = dx > 0 ? w - dx : w;
                for (int y = 0; y < h; ++y) {
                    T* drow = dst + static_cast<int64_t>(y) * w;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(drow, drow + w, T(0));
                        continue;
                    }
                    const T* srow = src_plane + static_cast<int64_t>(sy) * w;
                    if (x0 > 0) std::fill(drow, drow + x0, T(0));
                    if (x1 > x0) std::copy(srow + x0 + dx, srow + x1 + dx, drow + x0);
                    if (x1 < w) std::fill(drow + x1, drow + w, T(0));
                }
            }
    }
}

template <typename T>
void col2im_add(const T* cols, int ci, int h, int w, int k, int pad, T* x) {
    const int64_t plane = static_cast<int64_t>(h) * w;
    int64_t row = 0;
    for (int c = 0; c < ci; ++c) {
        T* dst_plane = x + static_cast<int64_t>(c) * plane;
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx, ++row) {
                const T* src = cols + row * plane;
                const int dy = ky - pad;
                const int dx = kx - pad;
                const int x0 = dx < 0 ? -dx : 0;
                const int x1 = dx > 0 ? w - dx : w;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const T* srow = src + static_cast<int64_t>(y) * w;
                    T* drow = dst_plane + static_cast<int64_t>(sy) * w + dx;
                    for (int xx = x0; xx < x1; ++xx) drow[xx] += srow[xx];
                }
            }
    }
}

namespace conv_detail {

/// Per-scalar-type scratch for the unrolled column matrices.
template <typename T>
std::vector<T>& scratch(size_t n) {
    thread_local std::vector<T> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

}  // namespace conv_detail

// ---------------------------------------------------------------------------
// channel-window views
//
// Dense blocks keep one concatenation buffer per block; layers read and
// write channel windows of it instead of materializing concatenations.
// A view is a per-sample channel range: contiguous within a sample, strided
// across samples.
// ---------------------------------------------------------------------------

template <typename T>
struct CView {
    const T* base = nullptr;
    int n = 0, c = 0, h = 0, w = 0;
    int64_t stride = 0;  // elements between consecutive samples

    int64_t plane() const { return static_cast<int64_t>(h) * w; }
    const T* sample(int i) const { return base + static_cast<int64_t>(i) * stride; }
    const T* channel(int i, int ch) const { return sample(i) + ch * plane(); }
};

template <typename T>
struct MView {
    T* base = nullptr;
    int n = 0, c = 0, h = 0, w = 0;
    int64_t stride = 0;

    int64_t plane() const { return static_cast<int64_t>(h) * w; }
    T* sample(int i) const { return base + static_cast<int64_t>(i) * stride; }
    T* channel(int i, int ch) const { return sample(i) + ch * plane(); }

    operator CView<T>() const { return {base, n, c, h, w, stride}; }
};

template <typename T>
CView<T> full_view(const Tensor<T>& t) {
    return {t.v.data(), t.n, t.c, t.h, t.w, static_cast<int64_t>(t.c) * t.plane()};
}

template <typename T>
MView<T> full_mview(Tensor<T>& t) {
    return {t.v.data(), t.n, t.c, t.h, t.w, static_cast<int64_t>(t.c) * t.plane()};
}

/// Channels [c0, c0+nc) of every sample.
template <typename T>
CView<T> window_view(const Tensor<T>& t, int c0, int nc) {
    return {t.v.data() + static_cast<int64_t>(c0) * t.plane(), t.n, nc, t.h, t.w,
            static_cast<int64_t>(t.c) * t.plane()};
}

template <typename T>
MView<T> window_mview(Tensor<T>& t, int c0, int nc) {
    return {t.v.data() + static_cast<int64_t>(c0) * t.plane(), t.n, nc, t.h, t.w,
            static_cast<int64_t>(t.c) * t.plane()};
}

template <typename T>
void copy_view(const CView<T>& src, const MView<T>& dst) {
    const int64_t chunk = static_cast<int64_t>(src.c) * src.plane();
    for (int i = 0; i < src.n; ++i) std::copy_n(src.sample(i), chunk, dst.sample(i));
}

// --- view-based layer cores (used by the model graph) ----------------------

template <typename T>
void conv2d_fwd_core(const CView<T>& x, const Tensor<T>& weight, const T* bias,
                     int k, int pad, const MView<T>& y) {
    const int co = weight.n;
    const int kdim = x.c * k * k;
    const int64_t plane = x.plane();
    const bool pointwise = k == 1 && pad == 0;
    auto& cols = conv_detail::scratch<T>(
        pointwise ? 0 : static_cast<size_t>(kdim) * plane);
    for (int in = 0; in < x.n; ++in) {
        const T* col_ptr = x.sample(in);
        if (!pointwise) {
            im2col(x.sample(in), x.c, x.h, x.w, k, pad, cols.data());
            col_ptr = cols.data();
        }
        nn_detail::gemm_nn<T>(co, static_cast<int>(plane), kdim, weight.v.data(),
                              col_ptr, y.sample(in), false);
        for (int c = 0; c < co; ++c) {
            T* row = y.channel(in, c);
            const T b = bias[c];
            for (int64_t i = 0; i < plane; ++i) row[i] += b;
        }
    }
}

/// dx is overwritten when given; dweight/dbias accumulate.
template <typename T>
void conv2d_bwd_core(const CView<T>& x, const Tensor<T>& weight, const CView<T>& dy,
                     int k, int pad, MView<T>* dx, Tensor<T>& dweight, T* dbias) {
    const int co = weight.n;
    const int kdim = x.c * k * k;
    const int64_t plane = x.plane();
    const bool pointwise = k == 1 && pad == 0;
    auto& cols = conv_detail::scratch<T>(2 * static_cast<size_t>(kdim) * plane);
    T* dcols = cols.data() + static_cast<size_t>(kdim) * plane;
    for (int in = 0; in < x.n; ++in) {
        const T* col_ptr = x.sample(in);
        if (!pointwise) {
            im2col(x.sample(in), x.c, x.h, x.w, k, pad, cols.data());
            col_ptr = cols.data();
        }
        nn_detail::gemm_nt<T>(co, kdim, static_cast<int>(plane), dy.sample(in),
                              col_ptr, dweight.v.data(), true);
        if (dx) {
            if (pointwise) {
                nn_detail::gemm_tn<T>(kdim, static_cast<int>(plane), co,
                                      weight.v.data(), dy.sample(in), dx->sample(in),
                                      false);
            } else {
                nn_detail::gemm_tn<T>(kdim, static_cast<int>(plane), co,
                                      weight.v.data(), dy.sample(in), dcols, false);
                std::fill_n(dx->sample(in), static_cast<int64_t>(x.c) * plane, T(0));
                col2im_add(dcols, x.c, x.h, x.w, k, pad, dx->sample(in));
            }
        }
        for (int c = 0; c < co; ++c) {
            const T* row = dy.channel(in, c);
            T acc = 0;
            for (int64_t i = 0; i < plane; ++i) acc += row[i];
            dbias[c] += acc;
        }
    }
}

/// Per-channel batch statistics, saved for the backward pass.
struct BNStats {
    std::vector<double> mean;
    std::vector<double> invstd;
};

/// Fused BN + ReLU: y = max(0, gamma*xhat + beta). In training mode batch
/// statistics are used and the running estimates updated.
template <typename T>
void bn_relu_fwd_core(const CView<T>& x, const T* gamma, const T* beta,
                      T* running_mean, T* running_var, bool training,
                      double momentum, double eps, BNStats& stats,
                      const MView<T>& y) {
    stats.mean.assign(static_cast<size_t>(x.c), 0.0);
    stats.invstd.assign(static_cast<size_t>(x.c), 0.0);
    const int64_t plane = x.plane();
    const int64_t ne = static_cast<int64_t>(x.n) * plane;
    for (int c = 0; c < x.c; ++c) {
        double mean, var;
        if (training) {
            double s = 0.0, s2 = 0.0;
            for (int in = 0; in < x.n; ++in) {
                const T* p = x.channel(in, c);
                for (int64_t i = 0; i < plane; ++i) {
                    s += p[i];
                    s2 += static_cast<double>(p[i]) * p[i];
                }
            }
            mean = s / static_cast<double>(ne);
            var = s2 / static_cast<double>(ne) - mean * mean;
            if (var < 0) var = 0;
            const double unbiased = ne > 1 ? var * ne / (ne - 1.0) : var;
            running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] +
                                             momentum * mean);
            running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] +
                                            momentum * unbiased);
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double invstd = 1.0 / std::sqrt(var + eps);
        stats.mean[static_cast<size_t>(c)] = mean;
        stats.invstd[static_cast<size_t>(c)] = invstd;
        const double a = gamma[c] * invstd;
        const double b = beta[c] - gamma[c] * invstd * mean;
        for (int in = 0; in < x.n; ++in) {
            const T* p = x.channel(in, c);
            T* out = y.channel(in, c);
            for (int64_t i = 0; i < plane; ++i) {
                const T v = static_cast<T>(a * p[i] + b);
                out[i] = v > T(0) ? v : T(0);
            }
        }
    }
}

/// Recompute the fused BN+ReLU output from the saved statistics.
template <typename T>
void bn_relu_recompute_core(const CView<T>& x, const T* gamma, const T* beta,
                            const BNStats& stats, const MView<T>& y) {
    const int64_t plane = x.plane();
    for (int c = 0; c < x.c; ++c) {
        const double a = gamma[c] * stats.invstd[static_cast<size_t>(c)];
        const double b =
            beta[c] - a * stats.mean[static_cast<size_t>(c)];
        for (int in = 0; in < x.n; ++in) {
            const T* p = x.channel(in, c);
            T* out = y.channel(in, c);
            for (int64_t i = 0; i < plane; ++i) {
                const T v = static_cast<T>(a * p[i] + b);
                out[i] = v > T(0) ? v : T(0);
            }
        }
    }
}

/// Backward through ReLU (mask from y) and BN (batch statistics), writing or
/// accumulating dx. dgamma/dbeta accumulate.
template <typename T>
void bn_relu_bwd_core(const CView<T>& d_relu, const CView<T>& x, const CView<T>& y,
                      const T* gamma, const BNStats& stats, T* dgamma, T* dbeta,
                      const MView<T>& dx, bool accumulate) {
    const int64_t plane = x.plane();
    const double ne = static_cast<double>(x.n) * static_cast<double>(plane);
    for (int c = 0; c < x.c; ++c) {
        const double mean = stats.mean[static_cast<size_t>(c)];
        const double invstd = stats.invstd[static_cast<size_t>(c)];
        // sum_dy_xhat = invstd * (sum(dy*x) - mean*sum(dy)); accumulating the
        // raw moments keeps the hot loop in fused multiply-adds.
        double s_dy = 0.0, s_dyx = 0.0;
        for (int in = 0; in < x.n; ++in) {
            const T* g = d_relu.channel(in, c);
            const T* xp = x.channel(in, c);
            const T* yp = y.channel(in, c);
            double p_dy = 0.0, p_dyx = 0.0;
            for (int64_t i = 0; i < plane; ++i) {
                const T dy = yp[i] > T(0) ? g[i] : T(0);
                p_dy += dy;
                p_dyx += static_cast<double>(dy) * xp[i];
            }
            s_dy += p_dy;
            s_dyx += p_dyx;
        }
        const double sum_dy = s_dy;
        const double sum_dy_xhat = invstd * (s_dyx - mean * s_dy);
        dgamma[c] += static_cast<T>(sum_dy_xhat);
        dbeta[c] += static_cast<T>(sum_dy);
        // dx = A*dy + C*x + B with the channel constants folded out.
        const double scale = static_cast<double>(gamma[c]) * invstd / ne;
        const T A = static_cast<T>(scale * ne);
        const T C = static_cast<T>(-scale * sum_dy_xhat * invstd);
        const T B = static_cast<T>(-scale * sum_dy +
                                   scale * sum_dy_xhat * invstd * mean);
        for (int in = 0; in < x.n; ++in) {
            const T* g = d_relu.channel(in, c);
            const T* xp = x.channel(in, c);
            const T* yp = y.channel(in, c);
            T* out = dx.channel(in, c);
            if (accumulate) {
                for (int64_t i = 0; i < plane; ++i) {
                    const T dy = yp[i] > T(0) ? g[i] : T(0);
                    out[i] += A * dy + C * xp[i] + B;
                }
            } else {
                for (int64_t i = 0; i < plane; ++i) {
                    const T dy = yp[i] > T(0) ? g[i] : T(0);
                    out[i] = A * dy + C * xp[i] + B;
                }
            }
        }
    }
}

/// Inverted dropout on a view; the mask is keyed by the view-local index so
/// the backward pass regenerates it exactly.
template <typename T>
void dropout_core(const MView<T>& x, double p, uint64_t key, uint64_t uid) {
    if (p <= 0) return;
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    const float pf = static_cast<float>(p);
    const int64_t chunk = static_cast<int64_t>(x.c) * x.plane();
    for (int in = 0; in < x.n; ++in) {
        T* s = x.sample(in);
        const uint64_t base = static_cast<uint64_t>(in) * static_cast<uint64_t>(chunk);
        for (int64_t i = 0; i < chunk; ++i)
            s[i] = counter_uniform_fast(key, uid, base + static_cast<uint64_t>(i)) < pf
                       ? T(0)
                       : s[i] * scale;
    }
}

template <typename T>
void maxpool2_fwd_core(const CView<T>& x, const MView<T>& y,
                       std::vector<uint8_t>& argmax) {
    argmax.assign(static_cast<size_t>(y.n) * y.c * y.plane(), 0);
    int64_t oi = 0;
    for (int in = 0; in < x.n; ++in)
        for (int c = 0; c < x.c; ++c) {
            const T* src = x.channel(in, c);
            T* dst = y.channel(in, c);
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx, ++oi) {
                    const int64_t base = static_cast<int64_t>(2 * yy) * x.w + 2 * xx;
                    T best = src[base];
                    uint8_t bi = 0;
                    const T c01 = src[base + 1];
                    const T c10 = src[base + x.w];
                    const T c11 = src[base + x.w + 1];
                    if (c01 > best) { best = c01; bi = 1; }
                    if (c10 > best) { best = c10; bi = 2; }
                    if (c11 > best) { best = c11; bi = 3; }
                    dst[static_cast<int64_t>(yy) * y.w + xx] = best;
                    argmax[static_cast<size_t>(oi)] = bi;
                }
        }
}

template <typename T>
void maxpool2_bwd_core(const CView<T>& dy, const std::vector<uint8_t>& argmax,
                       const MView<T>& dx) {
    for (int in = 0; in < dx.n; ++in)
        std::fill_n(dx.sample(in), static_cast<int64_t>(dx.c) * dx.plane(), T(0));
    int64_t oi = 0;
    for (int in = 0; in < dy.n; ++in)
        for (int c = 0; c < dy.c; ++c) {
            const T* g = dy.channel(in, c);
            T* dst = dx.channel(in, c);
            for (int yy = 0; yy < dy.h; ++yy)
                for (int xx = 0; xx < dy.w; ++xx, ++oi) {
                    const uint8_t bi = argmax[static_cast<size_t>(oi)];
                    dst[static_cast<int64_t>(2 * yy + bi / 2) * dx.w + 2 * xx + bi % 2] +=
                        g[static_cast<int64_t>(yy) * dy.w + xx];
                }
        }
}

/// Transposed conv forward writing into a view (used for transition-up).
template <typename T>
void convtranspose2d_fwd_core(const CView<T>& x, const Tensor<T>& weight,
                              const T* bias, const MView<T>& y) {
    const int ci = weight.n;
    const int co = weight.c;
    const int k = 3;
    const int oh = y.h, ow = y.w;
    const int rows = co * k * k;
    const int64_t plane = x.plane();
    auto& cols = conv_detail::scratch<T>(static_cast<size_t>(rows) * plane);
    for (int in = 0; in < x.n; ++in) {
        nn_detail::gemm_tn<T>(rows, static_cast<int>(plane), ci, weight.v.data(),
                              x.sample(in), cols.data(), false);
        for (int c = 0; c < co; ++c) {
            T* out = y.channel(in, c);
            const T b = bias[c];
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) out[i] = b;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const T* src = cols.data() +
                                   (static_cast<int64_t>(c) * k * k + ky * k + kx) * plane;
                    for (int yy = 0; yy < x.h; ++yy) {
                        const int oy = 2 * yy + ky;
                        if (oy >= oh) continue;
                        for (int xx = 0; xx < x.w; ++xx) {
                            const int ox = 2 * xx + kx;
                            if (ox >= ow) continue;
                            out[static_cast<int64_t>(oy) * ow + ox] +=
                                src[static_cast<int64_t>(yy) * x.w + xx];
                        }
                    }
                }
        }
    }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight,
                         const T* bias, int k, int pad) {
    const int co = weight.n;
    Tensor<T> y(x.n, co, x.h, x.w);
    const int kdim = x.c * k * k;
    const int64_t plane = x.plane();
    const bool pointwise = k == 1 && pad == 0;
    auto& cols = conv_detail::scratch<T>(
        pointwise ? 0 : static_cast<size_t>(kdim) * plane);
    for (int in = 0; in < x.n; ++in) {
        const T* col_ptr = x.sample(in);
        if (!pointwise) {
            im2col(x.sample(in), x.c, x.h, x.w, k, pad, cols.data());
            col_ptr = cols.data();
        }
        nn_detail::gemm_nn<T>(co, static_cast<int>(plane), kdim, weight.v.data(),
                              col_ptr, y.sample(in), false);
        for (int c = 0; c < co; ++c) {
            T* row = y.channel(in, c);
            const T b = bias[c];
            for (int64_t i = 0; i < plane; ++i) row[i] += b;
        }
    }
    return y;
}

/// Gradients for conv2d. dweight/dbias accumulate; dx is overwritten.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& dy, int k, int pad, Tensor<T>& dx,
                     Tensor<T>& dweight, T* dbias) {
    const int co = weight.n;
    const int kdim = x.c * k * k;
    const int64_t plane = x.plane();
    const bool pointwise = k == 1 && pad == 0;
    dx = Tensor<T>(x.n, x.c, x.h, x.w);
    auto& cols = conv_detail::scratch<T>(
        pointwise ? static_cast<size_t>(kdim) * plane
                  : 2 * static_cast<size_t>(kdim) * plane);
    T* dcols = cols.data() + (pointwise ? 0 : static_cast<size_t>(kdim) * plane);
    for (int in = 0; in < x.n; ++in) {
        const T* col_ptr = x.sample(in);
        if (!pointwise) {
            im2col(x.sample(in), x.c, x.h, x.w, k, pad, cols.data());
            col_ptr = cols.data();
        }
        // dW += dy * cols^T
        nn_detail::gemm_nt<T>(co, kdim, static_cast<int>(plane), dy.sample(in),
                              col_ptr, dweight.v.data(), true);
        if (pointwise) {
            // dX = W^T * dy, written straight into the gradient tensor.
            nn_detail::gemm_tn<T>(kdim, static_cast<int>(plane), co, weight.v.data(),
                                  dy.sample(in), dx.sample(in), false);
        } else {
            nn_detail::gemm_tn<T>(kdim, static_cast<int>(plane), co, weight.v.data(),
                                  dy.sample(in), dcols, false);
            std::fill_n(dx.sample(in), x.c * plane, T(0));
            col2im_add(dcols, x.c, x.h, x.w, k, pad, dx.sample(in));
        }
        for (int c = 0; c < co; ++c) {
            const T* row = dy.channel(in, c);
            T acc = 0;
            for (int64_t i = 0; i < plane; ++i) acc += row[i];
            dbias[c] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// transposed conv2d, stride 2, kernel 3, no padding; output cropped to
// exactly (2H, 2W) from the top-left of the full (2H+1, 2W+1) result
// weight layout (Ci, Co, 3, 3), bias (Co)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> convtranspose2d_forward(const Tensor<T>& x, const Tensor<T>& weight,
                                  const T* bias) {
    const int ci = weight.n;
    const int co = weight.c;
    const int k = 3;
    LONGCT_REQUIRE(x.c == ci, "convtranspose: channel mismatch");
    const int oh = 2 * x.h, ow = 2 * x.w;
    Tensor<T> y(x.n, co, oh, ow);
    const int rows = co * k * k;
    const int64_t plane = x.plane();
    std::vector<T> cols(static_cast<size_t>(rows) * plane);
    for (int in = 0; in < x.n; ++in) {
        // cols = W^T(co*9, ci) * x(ci, HW)
        nn_detail::gemm_tn<T>(rows, static_cast<int>(plane), ci, weight.v.data(),
                              x.sample(in), cols.data(), false);
        for (int c = 0; c < co; ++c) {
            T* out = y.channel(in, c);
            const T b = bias[c];
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) out[i] = b;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const T* src = cols.data() +
                                   (static_cast<int64_t>(c) * k * k + ky * k + kx) * plane;
                    for (int yy = 0; yy < x.h; ++yy) {
                        const int oy = 2 * yy + ky;
                        if (oy >= oh) continue;
                        for (int xx = 0; xx < x.w; ++xx) {
                            const int ox = 2 * xx + kx;
                            if (ox >= ow) continue;
                            out[static_cast<int64_t>(oy) * ow + ox] +=
                                src[static_cast<int64_t>(yy) * x.w + xx];
                        }
                    }
                }
        }
    }
    return y;
}

template <typename T>
void convtranspose2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                              const Tensor<T>& dy, Tensor<T>& dx,
                              Tensor<T>& dweight, T* dbias) {
    const int ci = weight.n;
    const int co = weight.c;
    const int k = 3;
    const int oh = dy.h, ow = dy.w;
    const int rows = co * k * k;
    const int64_t plane = x.plane();
    dx = Tensor<T>(x.n, x.c, x.h, x.w);
    std::vector<T> dcols(static_cast<size_t>(rows) * plane);
    for (int in = 0; in < x.n; ++in) {
        for (int c = 0; c < co; ++c) {
            const T* g = dy.channel(in, c);
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    T* dst = dcols.data() +
                             (static_cast<int64_t>(c) * k * k + ky * k + kx) * plane;
                    for (int yy = 0; yy < x.h; ++yy) {
                        const int oy = 2 * yy + ky;
                        for (int xx = 0; xx < x.w; ++xx) {
                            const int ox = 2 * xx + kx;
                            dst[static_cast<int64_t>(yy) * x.w + xx] =
                                (oy < oh && ox < ow)
                                    ? g[static_cast<int64_t>(oy) * ow + ox]
                                    : T(0);
                        }
                    }
                }
            T acc = 0;
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) acc += g[i];
            dbias[c] += acc;
        }
        // dX = W(ci, co*9) * dcols(co*9, HW)
        nn_detail::gemm_nn<T>(ci, static_cast<int>(plane), rows, weight.v.data(),
                              dcols.data(), dx.sample(in), false);
        // dW += X(ci, HW) * dcols^T
        nn_detail::gemm_nt<T>(ci, rows, static_cast<int>(plane), x.sample(in),
                              dcols.data(), dweight.v.data(), true);
    }
}

// ---------------------------------------------------------------------------
// batch normalization (per channel over N,H,W)
// ---------------------------------------------------------------------------

template <typename T>
struct BNSaved {
    std::vector<double> invstd;
    Tensor<T> xhat;
};

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const T* gamma, const T* beta,
                            T* running_mean, T* running_var, bool training,
                            double momentum, double eps, BNSaved<T>& saved) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    saved.invstd.assign(static_cast<size_t>(x.c), 0.0);
    saved.xhat = Tensor<T>(x.n, x.c, x.h, x.w);
    const int64_t plane = x.plane();
    const int64_t ne = static_cast<int64_t>(x.n) * plane;
    for (int c = 0; c < x.c; ++c) {
        double mean, var;
        if (training) {
            double s = 0.0, s2 = 0.0;
            for (int in = 0; in < x.n; ++in) {
                const T* p = x.channel(in, c);
                for (int64_t i = 0; i < plane; ++i) {
                    s += p[i];
                    s2 += static_cast<double>(p[i]) * p[i];
                }
            }
            mean = s / static_cast<double>(ne);
            var = s2 / static_cast<double>(ne) - mean * mean;
            if (var < 0) var = 0;
            const double unbiased = ne > 1 ? var * ne / (ne - 1.0) : var;
            running_mean[c] = static_cast<T>(
                (1.0 - momentum) * running_mean[c] + momentum * mean);
            running_var[c] = static_cast<T>(
                (1.0 - momentum) * running_var[c] + momentum * unbiased);
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double invstd = 1.0 / std::sqrt(var + eps);
        saved.invstd[static_cast<size_t>(c)] = invstd;
        const T g = gamma[c];
        const T b = beta[c];
        for (int in = 0; in < x.n; ++in) {
            const T* p = x.channel(in, c);
            T* xh = saved.xhat.channel(in, c);
            T* out = y.channel(in, c);
            for (int64_t i = 0; i < plane; ++i) {
                const T xhat = static_cast<T>((p[i] - mean) * invstd);
                xh[i] = xhat;
                out[i] = g * xhat + b;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, const T* gamma,
                             const BNSaved<T>& saved, T* dgamma, T* dbeta) {
    const Tensor<T>& xhat = saved.xhat;
    Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
    const int64_t plane = dy.plane();
    const double ne = static_cast<double>(dy.n) * static_cast<double>(plane);
    for (int c = 0; c < dy.c; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int in = 0; in < dy.n; ++in) {
            const T* g = dy.channel(in, c);
            const T* xh = xhat.channel(in, c);
            for (int64_t i = 0; i < plane; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
            }
        }
        dgamma[c] += static_cast<T>(sum_dy_xhat);
        dbeta[c] += static_cast<T>(sum_dy);
        const double scale =
            static_cast<double>(gamma[c]) * saved.invstd[static_cast<size_t>(c)] / ne;
        for (int in = 0; in < dy.n; ++in) {
            const T* g = dy.channel(in, c);
            const T* xh = xhat.channel(in, c);
            T* out = dx.channel(in, c);
            for (int64_t i = 0; i < plane; ++i)
                out[i] = static_cast<T>(scale * (ne * g[i] - sum_dy - xh[i] * sum_dy_xhat));
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// pointwise layers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.v)
        if (v < T(0)) v = T(0);
    return y;
}

/// dx from dy using the forward output as the activation mask.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
    Tensor<T> dx = dy;
    for (size_t i = 0; i < dx.v.size(); ++i)
        if (y.v[i] <= T(0)) dx.v[i] = T(0);
    return dx;
}

/// Inverted dropout. The mask is regenerated from (key, uid) in the backward
/// pass instead of being stored.
template <typename T>
void dropout_forward_inplace(Tensor<T>& x, double p, uint64_t key, uint64_t uid) {
    if (p <= 0) return;
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    const float pf = static_cast<float>(p);
    for (size_t i = 0; i < x.v.size(); ++i)
        x.v[i] = counter_uniform_fast(key, uid, i) < pf ? T(0) : x.v[i] * scale;
}

template <typename T>
void dropout_backward_inplace(Tensor<T>& dy, double p, uint64_t key, uint64_t uid) {
    dropout_forward_inplace(dy, p, key, uid);
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2 (even input sides)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<uint8_t>& argmax) {
    LONGCT_REQUIRE(x.h % 2 == 0 && x.w % 2 == 0, "maxpool2: input sides must be even");
    Tensor<T> y(x.n, x.c, x.h / 2, x.w / 2);
    argmax.assign(static_cast<size_t>(y.numel()), 0);
    int64_t oi = 0;
    for (int in = 0; in < x.n; ++in)
        for (int c = 0; c < x.c; ++c) {
            const T* src = x.channel(in, c);
            T* dst = y.channel(in, c);
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx, ++oi) {
                    const int64_t base = static_cast<int64_t>(2 * yy) * x.w + 2 * xx;
                    T best = src[base];
                    uint8_t bi = 0;
                    const T c01 = src[base + 1];
                    const T c10 = src[base + x.w];
                    const T c11 = src[base + x.w + 1];
                    if (c01 > best) { best = c01; bi = 1; }
                    if (c10 > best) { best = c10; bi = 2; }
                    if (c11 > best) { best = c11; bi = 3; }
                    dst[static_cast<int64_t>(yy) * y.w + xx] = best;
                    argmax[static_cast<size_t>(oi)] = bi;
                }
        }
    return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<uint8_t>& argmax,
                            int in_h, int in_w) {
    Tensor<T> dx(dy.n, dy.c, in_h, in_w);
    int64_t oi = 0;
    for (int in = 0; in < dy.n; ++in)
        for (int c = 0; c < dy.c; ++c) {
            const T* g = dy.channel(in, c);
            T* dst = dx.channel(in, c);
            for (int yy = 0; yy < dy.h; ++yy)
                for (int xx = 0; xx < dy.w; ++xx, ++oi) {
                    const uint8_t bi = argmax[static_cast<size_t>(oi)];
                    const int64_t base =
                        static_cast<int64_t>(2 * yy + bi / 2) * in_w + 2 * xx + bi % 2;
                    dst[base] += g[static_cast<int64_t>(yy) * dy.w + xx];
                }
        }
    return dx;
}

// ---------------------------------------------------------------------------
// per-pixel softmax across channels
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_forward(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const int64_t plane = x.plane();
    for (int in = 0; in < x.n; ++in) {
        const T* src = x.sample(in);
        T* dst = y.sample(in);
        for (int64_t i = 0; i < plane; ++i) {
            T mx = src[i];
            for (int c = 1; c < x.c; ++c) mx = std::max(mx, src[c * plane + i]);
            double denom = 0.0;
            for (int c = 0; c < x.c; ++c) {
                const double e = std::exp(static_cast<double>(src[c * plane + i] - mx));
                dst[c * plane + i] = static_cast<T>(e);
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (int c = 0; c < x.c; ++c)
                dst[c * plane + i] = static_cast<T>(dst[c * plane + i] * inv);
        }
    }
    return y;
}

/// dz = J_softmax^T * dp, with p the forward output.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& dp, const Tensor<T>& p) {
    Tensor<T> dz(p.n, p.c, p.h, p.w);
    const int64_t plane = p.plane();
    for (int in = 0; in < p.n; ++in) {
        const T* pp = p.sample(in);
        const T* g = dp.sample(in);
        T* dst = dz.sample(in);
        for (int64_t i = 0; i < plane; ++i) {
            double dot = 0.0;
            for (int c = 0; c < p.c; ++c)
                dot += static_cast<double>(pp[c * plane + i]) * g[c * plane + i];
            for (int c = 0; c < p.c; ++c)
                dst[c * plane + i] = static_cast<T>(
                    pp[c * plane + i] * (g[c * plane + i] - dot));
        }
    }
    return dz;
}

// ---------------------------------------------------------------------------
// channel concat / split, spatial pad / crop
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    LONGCT_REQUIRE(a.n == b.n && a.h == b.h && a.w == b.w,
                   "concat: spatial/batch shapes differ");
    Tensor<T> y(a.n, a.c + b.c, a.h, a.w);
    const int64_t plane = a.plane();
    for (int in = 0; in < a.n; ++in) {
        std::copy_n(a.sample(in), static_cast<int64_t>(a.c) * plane, y.sample(in));
        std::copy_n(b.sample(in), static_cast<int64_t>(b.c) * plane,
                    y.sample(in) + static_cast<int64_t>(a.c) * plane);
    }
    return y;
}

/// Channel slice [c0, c0+nc) as its own tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int nc) {
    Tensor<T> y(x.n, nc, x.h, x.w);
    const int64_t plane = x.plane();
    for (int in = 0; in < x.n; ++in)
        std::copy_n(x.channel(in, c0), static_cast<int64_t>(nc) * plane, y.sample(in));
    return y;
}

/// Accumulate dy into channels [c0, c0+dy.c) of dx.
template <typename T>
void add_into_channels(Tensor<T>& dx, const Tensor<T>& dy, int c0) {
    const int64_t plane = dx.plane();
    for (int in = 0; in < dx.n; ++in) {
        T* dst = dx.channel(in, c0);
        const T* src = dy.sample(in);
        for (int64_t i = 0; i < static_cast<int64_t>(dy.c) * plane; ++i) dst[i] += src[i];
    }
}

template <typename T>
Tensor<T> pad_spatial(const Tensor<T>& x, int top, int bottom, int left, int right) {
    Tensor<T> y(x.n, x.c, x.h + top + bottom, x.w + left + right);
    for (int in = 0; in < x.n; ++in)
        for (int c = 0; c < x.c; ++c) {
            const T* src = x.channel(in, c);
            T* dst = y.channel(in, c);
            for (int yy = 0; yy < x.h; ++yy)
                std::copy_n(src + static_cast<int64_t>(yy) * x.w, x.w,
                            dst + static_cast<int64_t>(yy + top) * y.w + left);
        }
    return y;
}

template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& x, int top, int left, int h, int w) {
    Tensor<T> y(x.n, x.c, h, w);
    for (int in = 0; in < x.n; ++in)
        for (int c = 0; c < x.c; ++c) {
            const T* src = x.channel(in, c);
            T* dst = y.channel(in, c);
            for (int yy = 0; yy < h; ++yy)
                std::copy_n(src + static_cast<int64_t>(yy + top) * x.w + left, w,
                            dst + static_cast<int64_t>(yy) * w);
        }
    return y;
}

}  // namespace nn
}  // namespace longct
