#pragma once

#include <cmath>
#include <vector>

#include "longct/core/volume.hpp"
#include "longct/util/parallel.hpp"

namespace longct {

/// Separable 3D Gaussian blur with reflect boundary handling.
inline void gaussian_blur_inplace(Volume3D& vol, double sigma) {
    if (sigma <= 0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<size_t>(i + radius)];
    }
    for (auto& v : k) v /= sum;

    const auto& s = vol.geom.shape;
    std::vector<float> tmp(vol.data.size());
    auto reflect = [](int i, int nmax) {
        if (i < 0) i = -i - 1;
        if (i >= nmax) i = 2 * nmax - 1 - i;
        return i;
    };
    for (int axis = 0; axis < 3; ++axis) {
        parallel_for(s[2], [&](int64_t z) {
            for (int y = 0; y < s[1]; ++y)
                for (int x = 0; x < s[0]; ++x) {
                    double acc = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        int xx = x, yy = y, zz = static_cast<int>(z);
                        if (axis == 0) xx = reflect(x + t, s[0]);
                        if (axis == 1) yy = reflect(y + t, s[1]);
                        if (axis == 2) zz = reflect(static_cast<int>(z) + t, s[2]);
                        acc += k[static_cast<size_t>(t + radius)] * vol.at(xx, yy, zz);
                    }
                    tmp[static_cast<size_t>(vol.geom.index(x, y, static_cast<int>(z)))] =
                        static_cast<float>(acc);
                }
        });
        vol.data.swap(tmp);
    }
}

/// Downsample by an integer factor with block averaging (partial border
/// blocks average their in-bounds voxels).
inline Volume3D box_downsample(const Volume3D& vol, int factor) {
    if (factor <= 1) return vol;
    const auto& s = vol.geom.shape;
    Volume3D out;
    out.geom.shape = {(s[0] + factor - 1) / factor, (s[1] + factor - 1) / factor,
                      (s[2] + factor - 1) / factor};
    for (int d = 0; d < 3; ++d) {
        out.geom.spacing[d] = vol.geom.spacing[d] * factor;
        out.geom.origin[d] =
            vol.geom.origin[d] + 0.5 * (factor - 1) * vol.geom.spacing[d];
    }
    out.data.resize(static_cast<size_t>(out.geom.voxels()));
    parallel_for(out.geom.shape[2], [&](int64_t z) {
        for (int y = 0; y < out.geom.shape[1]; ++y)
            for (int x = 0; x < out.geom.shape[0]; ++x) {
                double acc = 0.0;
                int cnt = 0;
                for (int dz = 0; dz < factor; ++dz)
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dx = 0; dx < factor; ++dx) {
                            const int xx = x * factor + dx;
                            const int yy = y * factor + dy;
                            const int zz = static_cast<int>(z) * factor + dz;
                            if (xx < s[0] && yy < s[1] && zz < s[2]) {
                                acc += vol.at(xx, yy, zz);
                                ++cnt;
                            }
                        }
                out.at(x, y, static_cast<int>(z)) = static_cast<float>(acc / cnt);
            }
    });
    return out;
}

}  // namespace longct
