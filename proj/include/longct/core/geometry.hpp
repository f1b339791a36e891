#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "longct/common.hpp"

namespace longct {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

/// Voxel lattice of a volume: shape in voxels, spacing in mm/voxel and the
/// world position of voxel (0,0,0). Index order is x-fastest.
struct GridGeometry {
    std::array<int, 3> shape{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    int64_t voxels() const {
        return static_cast<int64_t>(shape[0]) * shape[1] * shape[2];
    }

    int64_t index(int x, int y, int z) const {
        return static_cast<int64_t>(x) +
               static_cast<int64_t>(shape[0]) *
                   (static_cast<int64_t>(y) + static_cast<int64_t>(shape[1]) * z);
    }

    Vec3 voxel_to_world(double x, double y, double z) const {
        return {origin.x + x * spacing.x, origin.y + y * spacing.y,
                origin.z + z * spacing.z};
    }

    Vec3 world_to_voxel(const Vec3& w) const {
        return {(w.x - origin.x) / spacing.x, (w.y - origin.y) / spacing.y,
                (w.z - origin.z) / spacing.z};
    }

    /// Physical extent along each axis (mm), measured between voxel centers
    /// of the first and one-past-last voxel.
    Vec3 extent() const {
        return {shape[0] * spacing.x, shape[1] * spacing.y, shape[2] * spacing.z};
    }

    double voxel_volume_mm3() const { return spacing.x * spacing.y * spacing.z; }

    void validate() const {
        LONGCT_REQUIRE(shape[0] >= 1 && shape[1] >= 1 && shape[2] >= 1,
                       "GridGeometry: shape components must be >= 1");
        LONGCT_REQUIRE(spacing.x > 0 && spacing.y > 0 && spacing.z > 0,
                       "GridGeometry: spacing components must be > 0");
    }
};

namespace detail {
inline bool rel_close(double a, double b, double rel_tol) {
    const double scale = std::fmax(std::fabs(a), std::fabs(b));
    return std::fabs(a - b) <= rel_tol * std::fmax(scale, 1.0);
}
}  // namespace detail

/// True iff shapes match exactly and spacing/origin match within 1e-6
/// relative tolerance.
inline bool check_geometry(const GridGeometry& a, const GridGeometry& b) {
    constexpr double kTol = 1e-6;
    if (a.shape != b.shape) return false;
    for (int d = 0; d < 3; ++d) {
        if (!detail::rel_close(a.spacing[d], b.spacing[d], kTol)) return false;
        if (!detail::rel_close(a.origin[d], b.origin[d], kTol)) return false;
    }
    return true;
}

}  // namespace longct
