#pragma once

#include "longct/nn/tensor.hpp"
#include "longct/util/parallel.hpp"

namespace longct {

/// Additive decomposition of the training objective.
struct LossBreakdown {
    double seg = 0.0;
    double prog = 0.0;
    double total = 0.0;

    static LossBreakdown make(double seg, double prog) {
        return {seg, prog, seg + prog};
    }
};

/// Mean squared error over every element (mean over batch, channels and
/// pixels, so the magnitude is resolution independent).
template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    LONGCT_REQUIRE(a.same_shape(b), "mse: shape mismatch " + a.shape_str() +
                                        " vs " + b.shape_str());
    const int64_t n = a.numel();
    if (n == 0) return 0.0;
    const double sum = parallel_sum(n, [&](int64_t i) {
        const double d = static_cast<double>(a.v[static_cast<size_t>(i)]) -
                         static_cast<double>(b.v[static_cast<size_t>(i)]);
        return d * d;
    });
    return sum / static_cast<double>(n);
}

/// Gradient of mse with respect to its first argument, scaled by `weight`.
template <typename T>
void mse_grad(const Tensor<T>& a, const Tensor<T>& b, double weight, Tensor<T>& da) {
    LONGCT_REQUIRE(a.same_shape(b) && a.same_shape(da), "mse_grad: shape mismatch");
    const double scale = 2.0 * weight / static_cast<double>(a.numel());
    for (size_t i = 0; i < a.v.size(); ++i)
        da.v[i] += static_cast<T>(scale * (static_cast<double>(a.v[i]) - b.v[i]));
}

/// Segmentation loss: MSE against the one-hot ground truth, summed over the
/// two timepoints.
template <typename T>
double seg_loss(const Tensor<T>& pred0, const Tensor<T>& gt0, const Tensor<T>& pred1,
                const Tensor<T>& gt1) {
    return mse(pred0, gt0) + mse(pred1, gt1);
}

/// Progression loss: MSE between the ground-truth consolidation difference
/// map and the predicted one. Inputs are consolidation maps (one channel),
/// predictions soft, ground truth binary.
template <typename T>
double prog_loss(const Tensor<T>& pred0_con, const Tensor<T>& pred1_con,
                 const Tensor<T>& gt0_con, const Tensor<T>& gt1_con) {
    LONGCT_REQUIRE(pred0_con.same_shape(pred1_con) && pred0_con.same_shape(gt0_con) &&
                       pred0_con.same_shape(gt1_con),
                   "prog_loss: shape mismatch");
    const int64_t n = pred0_con.numel();
    if (n == 0) return 0.0;
    const double sum = parallel_sum(n, [&](int64_t i) {
        const size_t k = static_cast<size_t>(i);
        const double gt_diff =
            static_cast<double>(gt1_con.v[k]) - static_cast<double>(gt0_con.v[k]);
        const double pred_diff =
            static_cast<double>(pred1_con.v[k]) - static_cast<double>(pred0_con.v[k]);
        const double d = gt_diff - pred_diff;
        return d * d;
    });
    return sum / static_cast<double>(n);
}

/// Gradients of prog_loss with respect to the two predicted consolidation
/// maps (accumulated into dpred0/dpred1).
template <typename T>
void prog_loss_grad(const Tensor<T>& pred0_con, const Tensor<T>& pred1_con,
                    const Tensor<T>& gt0_con, const Tensor<T>& gt1_con,
                    double weight, Tensor<T>& dpred0, Tensor<T>& dpred1) {
    const double scale = 2.0 * weight / static_cast<double>(pred0_con.numel());
    for (size_t i = 0; i < pred0_con.v.size(); ++i) {
        const double diff_err =
            (static_cast<double>(pred1_con.v[i]) - pred0_con.v[i]) -
            (static_cast<double>(gt1_con.v[i]) - gt0_con.v[i]);
        dpred1.v[i] += static_cast<T>(scale * diff_err);
        dpred0.v[i] -= static_cast<T>(scale * diff_err);
    }
}

/// Combined objective for the longitudinal model. `include_prog` is false
/// for the static baseline, whose total is the segmentation term alone.
template <typename T>
LossBreakdown total_loss(const Tensor<T>& pred0, const Tensor<T>& gt0,
                         const Tensor<T>& pred1, const Tensor<T>& gt1,
                         const Tensor<T>& pred0_con, const Tensor<T>& pred1_con,
                         const Tensor<T>& gt0_con, const Tensor<T>& gt1_con,
                         bool include_prog = true) {
    const double seg = seg_loss(pred0, gt0, pred1, gt1);
    const double prog =
        include_prog ? prog_loss(pred0_con, pred1_con, gt0_con, gt1_con) : 0.0;
    return LossBreakdown::make(seg, prog);
}

/// One channel of a prediction tensor as a standalone (N,1,H,W) map.
template <typename T>
Tensor<T> extract_channel(const Tensor<T>& x, int channel) {
    LONGCT_REQUIRE(channel >= 0 && channel < x.c, "extract_channel: bad channel");
    Tensor<T> y(x.n, 1, x.h, x.w);
    const int64_t plane = x.plane();
    for (int in = 0; in < x.n; ++in)
        std::copy_n(x.channel(in, channel), plane, y.channel(in, 0));
    return y;
}

/// Scatter a (N,1,H,W) channel gradient back into the full-channel gradient.
template <typename T>
void add_channel_grad(Tensor<T>& dfull, const Tensor<T>& dchan, int channel) {
    const int64_t plane = dfull.plane();
    for (int in = 0; in < dfull.n; ++in) {
        T* dst = dfull.channel(in, channel);
        const T* src = dchan.channel(in, 0);
        for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
}

}  // namespace longct
