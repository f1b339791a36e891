#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "longct/core/filters.hpp"
#include "longct/preprocess/preprocess.hpp"
#include "longct/registration/bspline.hpp"

namespace longct {

/// Mask-driven deformable registration settings. The metric is mean squares
/// on Gaussian-smoothed binary masks; the optimizer is L-BFGS with a
/// backtracking line search over the control-point displacements.
struct RegistrationConfig {
    int control_grid_points = 8;
    int pyramid_levels = 3;  // shrink factors 2^(levels-1) ... 1
    double metric_sigma = 1.0;  // voxels, applied at every level
    int max_iterations = 100;   // per level
    double convergence_tol = 1e-6;

    void validate() const {
        LONGCT_REQUIRE(control_grid_points >= 4,
                       "RegistrationConfig: cubic BSpline needs >= 4 control points");
        LONGCT_REQUIRE(pyramid_levels >= 1,
                       "RegistrationConfig: pyramid_levels must be >= 1");
        LONGCT_REQUIRE(max_iterations >= 1 && convergence_tol > 0,
                       "RegistrationConfig: invalid optimizer settings");
    }
};

namespace reg_detail {

inline Volume3D mask_to_float(const LabelVolume& mask) {
    Volume3D out(mask.geom);
    for (size_t i = 0; i < mask.labels.size(); ++i)
        out.data[i] = mask.labels[i] != 0 ? 1.0f : 0.0f;
    return out;
}

inline double binary_dice(const LabelVolume& a, const LabelVolume& b) {
    int64_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.labels.size(); ++i) {
        const bool fa = a.labels[i] != 0;
        const bool fb = b.labels[i] != 0;
        na += fa;
        nb += fb;
        inter += fa && fb;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

/// Mean-squares metric between the fixed image and the moving image warped
/// by the B-spline, with the analytic gradient with respect to the
/// control-point displacements. Partial sums per z-slab keep evaluation
/// deterministic regardless of thread count.
class MeanSquaresMetric {
public:
    MeanSquaresMetric(const Volume3D& fixed, const Volume3D& moving,
                      const BSplineTransform& shape)
        : fixed_(fixed), moving_(moving), t_(shape) {
        // Per-axis support tables: the basis only depends on voxel position.
        for (int d = 0; d < 3; ++d) {
            const int n = fixed_.geom.shape[d];
            idx_[d].resize(static_cast<size_t>(n));
            w_[d].resize(static_cast<size_t>(n) * 4);
            for (int i = 0; i < n; ++i) {
                Vec3 wpt = fixed_.geom.voxel_to_world(0, 0, 0);
                wpt[d] = fixed_.geom.origin[d] + i * fixed_.geom.spacing[d];
                int sup[3];
                double wts[3][4];
                t_.support(wpt, sup, wts);
                idx_[d][static_cast<size_t>(i)] = sup[d];
                for (int c = 0; c < 4; ++c)
                    w_[d][static_cast<size_t>(i) * 4 + c] = wts[d][c];
            }
        }
    }

    /// Returns the metric value and fills grad (same layout as coefficients).
    double value_and_gradient(const std::vector<double>& coeff,
                              std::vector<double>& grad) const {
        const auto& s = fixed_.geom.shape;
        const int64_t ncoef = static_cast<int64_t>(coeff.size());
        grad.assign(coeff.size(), 0.0);

        const int nslabs = s[2];
        std::vector<double> slab_loss(static_cast<size_t>(nslabs), 0.0);
        std::vector<std::vector<double>> slab_grad(
            static_cast<size_t>(nslabs));

        parallel_for(nslabs, [&](int64_t z) {
            auto& g = slab_grad[static_cast<size_t>(z)];
            g.assign(coeff.size(), 0.0);
            double loss = 0.0;
            const int gx = t_.grid_shape[0], gy = t_.grid_shape[1];
            for (int y = 0; y < s[1]; ++y) {
                const double* wy = &w_[1][static_cast<size_t>(y) * 4];
                const int jy = idx_[1][static_cast<size_t>(y)];
                const double* wz = &w_[2][static_cast<size_t>(z) * 4];
                const int jz = idx_[2][static_cast<size_t>(z)];
                for (int x = 0; x < s[0]; ++x) {
                    const double* wx = &w_[0][static_cast<size_t>(x) * 4];
                    const int jx = idx_[0][static_cast<size_t>(x)];

                    // Displacement at this voxel.
                    double ux = 0, uy = 0, uz = 0;
                    for (int cz = 0; cz < 4; ++cz)
                        for (int cy = 0; cy < 4; ++cy) {
                            const double wzy = wz[cz] * wy[cy];
                            const int64_t base =
                                (static_cast<int64_t>(jz + cz) * gy + (jy + cy)) * gx;
                            for (int cx = 0; cx < 4; ++cx) {
                                const double wt = wzy * wx[cx];
                                const size_t o =
                                    static_cast<size_t>((base + jx + cx) * 3);
                                ux += wt * coeff[o];
                                uy += wt * coeff[o + 1];
                                uz += wt * coeff[o + 2];
                            }
                        }

                    const Vec3 wpt = fixed_.geom.voxel_to_world(x, y, static_cast<double>(z));
                    const Vec3 sample = {wpt.x + ux, wpt.y + uy, wpt.z + uz};
                    const Vec3 mv = moving_.geom.world_to_voxel(sample);

                    double val, gvx, gvy, gvz;
                    sample_with_gradient(mv, val, gvx, gvy, gvz);
                    const double r =
                        val - fixed_.at(x, y, static_cast<int>(z));
                    loss += r * r;

                    // World-space image gradient.
                    const double gwx = gvx / moving_.geom.spacing.x;
                    const double gwy = gvy / moving_.geom.spacing.y;
                    const double gwz = gvz / moving_.geom.spacing.z;
                    const double rx = 2.0 * r * gwx;
                    const double ry = 2.0 * r * gwy;
                    const double rz = 2.0 * r * gwz;
                    if (rx == 0.0 && ry == 0.0 && rz == 0.0) continue;
                    for (int cz = 0; cz < 4; ++cz)
                        for (int cy = 0; cy < 4; ++cy) {
                            const double wzy = wz[cz] * wy[cy];
                            const int64_t base =
                                (static_cast<int64_t>(jz + cz) * gy + (jy + cy)) * gx;
                            for (int cx = 0; cx < 4; ++cx) {
                                const double wt = wzy * wx[cx];
                                const size_t o =
                                    static_cast<size_t>((base + jx + cx) * 3);
                                g[o] += wt * rx;
                                g[o + 1] += wt * ry;
                                g[o + 2] += wt * rz;
                            }
                        }
                }
            }
            slab_loss[static_cast<size_t>(z)] = loss;
        });

        const double n = static_cast<double>(fixed_.geom.voxels());
        double total = 0.0;
        for (int zi = 0; zi < nslabs; ++zi) {
            total += slab_loss[static_cast<size_t>(zi)];
            const auto& g = slab_grad[static_cast<size_t>(zi)];
            for (int64_t i = 0; i < ncoef; ++i) grad[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
        }
        for (auto& gv : grad) gv /= n;
        return total / n;
    }

private:
    /// Trilinear sample with analytic derivative, zero-padded outside.
    void sample_with_gradient(const Vec3& vox, double& val, double& gx,
                              double& gy, double& gz) const {
        const auto& s = moving_.geom.shape;
        const int x0 = static_cast<int>(std::floor(vox.x));
        const int y0 = static_cast<int>(std::floor(vox.y));
        const int z0 = static_cast<int>(std::floor(vox.z));
        const double fx = vox.x - x0, fy = vox.y - y0, fz = vox.z - z0;
        double c[2][2][2];
        for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int xx = x0 + dx, yy = y0 + dy, zz = z0 + dz;
                    c[dz][dy][dx] = (xx < 0 || yy < 0 || zz < 0 || xx >= s[0] ||
                                     yy >= s[1] || zz >= s[2])
                                        ? 0.0
                                        : moving_.at(xx, yy, zz);
                }
        const double c00 = c[0][0][0] * (1 - fx) + c[0][0][1] * fx;
        const double c01 = c[0][1][0] * (1 - fx) + c[0][1][1] * fx;
        const double c10 = c[1][0][0] * (1 - fx) + c[1][0][1] * fx;
        const double c11 = c[1][1][0] * (1 - fx) + c[1][1][1] * fx;
        const double c0 = c00 * (1 - fy) + c01 * fy;
        const double c1 = c10 * (1 - fy) + c11 * fy;
        val = c0 * (1 - fz) + c1 * fz;
        gz = c1 - c0;
        const double dy0 = c01 - c00, dy1 = c11 - c10;
        gy = dy0 * (1 - fz) + dy1 * fz;
        const double dx00 = c[0][0][1] - c[0][0][0];
        const double dx01 = c[0][1][1] - c[0][1][0];
        const double dx10 = c[1][0][1] - c[1][0][0];
        const double dx11 = c[1][1][1] - c[1][1][0];
        gx = (dx00 * (1 - fy) + dx01 * fy) * (1 - fz) +
             (dx10 * (1 - fy) + dx11 * fy) * fz;
    }

    const Volume3D& fixed_;
    const Volume3D& moving_;
    const BSplineTransform& t_;
    std::array<std::vector<int>, 3> idx_;
    std::array<std::vector<double>, 3> w_;
};

/// Compact L-BFGS with Armijo backtracking. Returns the best value seen;
/// x is left at the corresponding point.
inline double lbfgs_minimize(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& fn,
    std::vector<double>& x, int max_iters, double tol) {
    const size_t n = x.size();
    const int history = 8;
    std::vector<std::vector<double>> s_hist, y_hist;
    std::vector<double> rho_hist;

    std::vector<double> g(n), g_new(n), x_new(n), d(n);
    double f = fn(x, g);
    LONGCT_REQUIRE(std::isfinite(f), "registration metric is not finite at start");

    for (int iter = 0; iter < max_iters; ++iter) {
        double gmax = 0.0;
        for (double gv : g) gmax = std::max(gmax, std::fabs(gv));
        if (gmax < tol) break;

        // Two-loop recursion.
        d = g;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            double sd = 0;
            for (size_t k = 0; k < n; ++k) sd += s_hist[static_cast<size_t>(i)][k] * d[k];
            alpha[static_cast<size_t>(i)] = rho_hist[static_cast<size_t>(i)] * sd;
            for (size_t k = 0; k < n; ++k)
                d[k] -= alpha[static_cast<size_t>(i)] * y_hist[static_cast<size_t>(i)][k];
        }
        if (!s_hist.empty()) {
            double sy = 0, yy = 0;
            const auto& sl = s_hist.back();
            const auto& yl = y_hist.back();
            for (size_t k = 0; k < n; ++k) {
                sy += sl[k] * yl[k];
                yy += yl[k] * yl[k];
            }
            const double gamma = yy > 0 ? sy / yy : 1.0;
            for (size_t k = 0; k < n; ++k) d[k] *= gamma;
        }
        for (size_t i = 0; i < s_hist.size(); ++i) {
            double yd = 0;
            for (size_t k = 0; k < n; ++k) yd += y_hist[i][k] * d[k];
            const double beta = rho_hist[i] * yd;
            for (size_t k = 0; k < n; ++k) d[k] += s_hist[i][k] * (alpha[i] - beta);
        }
        for (size_t k = 0; k < n; ++k) d[k] = -d[k];

        double gd = 0;
        for (size_t k = 0; k < n; ++k) gd += g[k] * d[k];
        if (gd >= 0) {  // not a descent direction; restart from steepest descent
            for (size_t k = 0; k < n; ++k) d[k] = -g[k];
            gd = 0;
            for (size_t k = 0; k < n; ++k) gd += g[k] * d[k];
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        double step = s_hist.empty() ? 1.0 / std::max(1.0, gmax) : 1.0;
        double f_new = f;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            for (size_t k = 0; k < n; ++k) x_new[k] = x[k] + step * d[k];
            f_new = fn(x_new, g_new);
            LONGCT_REQUIRE(std::isfinite(f_new),
                           "registration diverged: metric is not finite");
            if (f_new <= f + 1e-4 * step * gd) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        std::vector<double> s_vec(n), y_vec(n);
        double sy = 0;
        for (size_t k = 0; k < n; ++k) {
            s_vec[k] = x_new[k] - x[k];
            y_vec[k] = g_new[k] - g[k];
            sy += s_vec[k] * y_vec[k];
        }
        if (sy > 1e-12) {
            s_hist.push_back(std::move(s_vec));
            y_hist.push_back(std::move(y_vec));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > history) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
        }

        const double decrease = f - f_new;
        x.swap(x_new);
        g.swap(g_new);
        f = f_new;
        if (decrease < 1e-10 * std::max(1.0, std::fabs(f))) break;
    }
    return f;
}

}  // namespace reg_detail

/// Estimate the deformable transform aligning the reference lung mask M0 to
/// the follow-up lung mask M1. Only the masks drive the optimization; the
/// returned transform never worsens the mask Dice (identity fallback).
inline BSplineTransform register_masks(const LabelVolume& m0, const LabelVolume& m1,
                                       const RegistrationConfig& cfg = {}) {
    cfg.validate();
    LONGCT_REQUIRE(check_geometry(m0.geom, m1.geom),
                   "register_masks: mask geometries differ");
    int64_t fg0 = 0, fg1 = 0;
    for (uint8_t v : m0.labels) fg0 += v != 0;
    for (uint8_t v : m1.labels) fg1 += v != 0;
    LONGCT_REQUIRE(fg0 > 0, "register_masks: reference mask is empty");
    LONGCT_REQUIRE(fg1 > 0, "register_masks: follow-up mask is empty");

    // Fixed = follow-up, moving = reference; the transform maps follow-up
    // points into the reference frame for resampling.
    BSplineTransform t = BSplineTransform::identity_for(m1.geom, cfg.control_grid_points);
    const Volume3D moving_full = reg_detail::mask_to_float(m0);
    const Volume3D fixed_full = reg_detail::mask_to_float(m1);

    for (int level = 0; level < cfg.pyramid_levels; ++level) {
        const int shrink = 1 << (cfg.pyramid_levels - 1 - level);
        Volume3D fixed_l = box_downsample(fixed_full, shrink);
        Volume3D moving_l = box_downsample(moving_full, shrink);
        gaussian_blur_inplace(fixed_l, cfg.metric_sigma);
        gaussian_blur_inplace(moving_l, cfg.metric_sigma);

        reg_detail::MeanSquaresMetric metric(fixed_l, moving_l, t);
        auto fn = [&](const std::vector<double>& x, std::vector<double>& grad) {
            return metric.value_and_gradient(x, grad);
        };
        reg_detail::lbfgs_minimize(fn, t.coefficients, cfg.max_iterations,
                                   cfg.convergence_tol);
    }

    // Never hand back a transform that loses mask overlap.
    const double dice_before = reg_detail::binary_dice(m0, m1);
    const double dice_after = reg_detail::binary_dice(warp_labels(m0, t), m1);
    if (dice_after < dice_before) {
        BSplineTransform identity =
            BSplineTransform::identity_for(m1.geom, cfg.control_grid_points);
        return identity;
    }
    return t;
}

/// A fully registered consecutive pair: everything lives in the follow-up
/// (t=1) geometry. The reference CT and its annotations are warped; the
/// follow-up volumes are untouched.
struct RegisteredPair {
    std::string patient_id;
    int pair_index = 0;
    Volume3D x0_reg, x1;
    LabelVolume lung0_reg, lung1;
    std::optional<LabelVolume> y0_reg, y1;
    BSplineTransform transform;
};

/// Register a preprocessed pair. The transform is estimated from the lung
/// masks only; pathology labels never influence it.
inline RegisteredPair register_pair(const ProcessedPair& pair,
                                    const RegistrationConfig& cfg = {}) {
    RegisteredPair out;
    out.patient_id = pair.patient_id;
    out.pair_index = pair.pair_index;
    out.transform = register_masks(pair.lung0, pair.lung1, cfg);
    out.x0_reg = warp_intensity(pair.ct0, out.transform);
    out.x1 = pair.ct1;
    out.lung0_reg = warp_labels(pair.lung0, out.transform);
    out.lung1 = pair.lung1;
    if (pair.path0) out.y0_reg = warp_labels(*pair.path0, out.transform);
    if (pair.path1) out.y1 = pair.path1;
    return out;
}

}  // namespace longct
