#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "longct/core/volume.hpp"
#include "longct/util/parallel.hpp"

namespace longct {

namespace bspline_detail {

/// Uniform cubic B-spline basis on t in [0,1].
inline void basis(double t, double w[4]) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    w[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
    w[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
    w[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
    w[3] = t3 / 6.0;
}

}  // namespace bspline_detail

/// Free-form deformation parameterized by displacement 3-vectors on a sparse
/// control-point grid overlaid on the fixed-image domain, interpolated with
/// cubic B-splines. The transform maps fixed-domain world points to sampling
/// positions in the moving image: x -> x + displacement(x).
struct BSplineTransform {
    std::array<int, 3> grid_shape{0, 0, 0};  // control points per axis
    Vec3 grid_spacing{1, 1, 1};              // mm between control points
    Vec3 grid_origin{0, 0, 0};               // world position of control point (0,0,0)
    GridGeometry domain;                     // fixed-image geometry
    // Displacements in mm, z-major: ((cz*Gy + cy)*Gx + cx)*3 + component.
    std::vector<double> coefficients;

    static BSplineTransform identity_for(const GridGeometry& domain, int grid_points) {
        LONGCT_REQUIRE(grid_points >= 4,
                       "BSplineTransform: cubic support needs >= 4 control points per axis");
        domain.validate();
        BSplineTransform t;
        t.domain = domain;
        t.grid_shape = {grid_points, grid_points, grid_points};
        const int cells = grid_points - 3;
        for (int d = 0; d < 3; ++d) {
            const double extent = (domain.shape[d] - 1) * domain.spacing[d];
            // Degenerate axes still get a positive cell size.
            const double h = extent > 0 ? extent / cells : 1.0;
            t.grid_spacing[d] = h;
            t.grid_origin[d] = domain.origin[d] - h;
        }
        t.coefficients.assign(
            static_cast<size_t>(grid_points) * grid_points * grid_points * 3, 0.0);
        return t;
    }

    int64_t n_control_points() const {
        return static_cast<int64_t>(grid_shape[0]) * grid_shape[1] * grid_shape[2];
    }

    bool is_identity() const {
        for (double c : coefficients)
            if (c != 0.0) return false;
        return true;
    }

    /// Support cell and per-axis weights for a world position.
    void support(const Vec3& world, int idx[3], double w[3][4]) const {
        for (int d = 0; d < 3; ++d) {
            const int cells = grid_shape[d] - 3;
            double s = (world[d] - grid_origin[d]) / grid_spacing[d] - 1.0;
            if (s < 0) s = 0;
            if (s > cells) s = cells;
            int j = static_cast<int>(std::floor(s));
            if (j > cells - 1) j = cells - 1;
            idx[d] = j;
            bspline_detail::basis(s - j, w[d]);
        }
    }

    Vec3 displacement(const Vec3& world) const {
        int idx[3];
        double w[3][4];
        support(world, idx, w);
        Vec3 out{0, 0, 0};
        for (int cz = 0; cz < 4; ++cz)
            for (int cy = 0; cy < 4; ++cy) {
                const double wzy = w[2][cz] * w[1][cy];
                const int64_t base =
                    (static_cast<int64_t>(idx[2] + cz) * grid_shape[1] + (idx[1] + cy)) *
                    grid_shape[0];
                for (int cx = 0; cx < 4; ++cx) {
                    const double wt = wzy * w[0][cx];
                    const size_t o = static_cast<size_t>((base + idx[0] + cx) * 3);
                    out.x += wt * coefficients[o];
                    out.y += wt * coefficients[o + 1];
                    out.z += wt * coefficients[o + 2];
                }
            }
        return out;
    }
};

enum class WarpKind { Intensity, Label };

namespace warp_detail {

inline float sample_trilinear(const Volume3D& vol, const Vec3& vox) {
    const auto& s = vol.geom.shape;
    const int x0 = static_cast<int>(std::floor(vox.x));
    const int y0 = static_cast<int>(std::floor(vox.y));
    const int z0 = static_cast<int>(std::floor(vox.z));
    const double fx = vox.x - x0, fy = vox.y - y0, fz = vox.z - z0;
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const int z = z0 + dz;
        if (z < 0 || z >= s[2]) continue;
        const double wz = dz ? fz : 1.0 - fz;
        for (int dy = 0; dy < 2; ++dy) {
            const int y = y0 + dy;
            if (y < 0 || y >= s[1]) continue;
            const double wy = dy ? fy : 1.0 - fy;
            for (int dx = 0; dx < 2; ++dx) {
                const int x = x0 + dx;
                if (x < 0 || x >= s[0]) continue;
                const double wx = dx ? fx : 1.0 - fx;
                acc += wz * wy * wx * vol.at(x, y, z);
            }
        }
    }
    return static_cast<float>(acc);
}

inline uint8_t sample_nearest(const LabelVolume& lab, const Vec3& vox) {
    const auto& s = lab.geom.shape;
    const int x = static_cast<int>(std::lround(vox.x));
    const int y = static_cast<int>(std::lround(vox.y));
    const int z = static_cast<int>(std::lround(vox.z));
    if (x < 0 || y < 0 || z < 0 || x >= s[0] || y >= s[1] || z >= s[2]) return 0;
    return lab.at(x, y, z);
}

}  // namespace warp_detail

/// Resample an intensity volume through the transform into the fixed
/// geometry. Out-of-domain samples fill with 0.
inline Volume3D warp_intensity(const Volume3D& vol, const BSplineTransform& t) {
    LONGCT_REQUIRE(check_geometry(vol.geom, t.domain),
                   "warp: volume geometry does not match the transform domain");
    if (t.is_identity()) return vol;
    Volume3D out(t.domain);
    out.meta = vol.meta;
    const auto& s = t.domain.shape;
    parallel_for(s[2], [&](int64_t z) {
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[0]; ++x) {
                const Vec3 w = t.domain.voxel_to_world(x, y, static_cast<double>(z));
                const Vec3 sample = w + t.displacement(w);
                out.at(x, y, static_cast<int>(z)) = warp_detail::sample_trilinear(
                    vol, vol.geom.world_to_voxel(sample));
            }
    });
    return out;
}

/// Nearest-neighbor warp for label volumes; labels(warp(Y)) is a subset of
/// labels(Y) plus the 0 fill.
inline LabelVolume warp_labels(const LabelVolume& lab, const BSplineTransform& t) {
    LONGCT_REQUIRE(check_geometry(lab.geom, t.domain),
                   "warp: label geometry does not match the transform domain");
    if (t.is_identity()) return lab;
    LabelVolume out(t.domain);
    const auto& s = t.domain.shape;
    parallel_for(s[2], [&](int64_t z) {
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[0]; ++x) {
                const Vec3 w = t.domain.voxel_to_world(x, y, static_cast<double>(z));
                const Vec3 sample = w + t.displacement(w);
                out.at(x, y, static_cast<int>(z)) = warp_detail::sample_nearest(
                    lab, lab.geom.world_to_voxel(sample));
            }
    });
    return out;
}

/// Transform file: "LBSP" magic, a JSON header describing the grids and the
/// coefficient layout, then the raw float64 coefficient array.
inline void save_transform(const std::string& path, const BSplineTransform& t) {
    nlohmann::ordered_json j;
    j["format_version"] = kTransformFormatVersion;
    j["grid_shape"] = t.grid_shape;
    j["grid_spacing"] = {t.grid_spacing.x, t.grid_spacing.y, t.grid_spacing.z};
    j["grid_origin"] = {t.grid_origin.x, t.grid_origin.y, t.grid_origin.z};
    j["domain"] = {{"shape", t.domain.shape},
                   {"spacing", {t.domain.spacing.x, t.domain.spacing.y, t.domain.spacing.z}},
                   {"origin", {t.domain.origin.x, t.domain.origin.y, t.domain.origin.z}}};
    j["coefficient_order"] =
        "z-major control points: offset = ((cz*Gy + cy)*Gx + cx)*3 + axis, "
        "axis in {x,y,z}, float64 little-endian, displacements in mm";
    j["n_coefficients"] = t.coefficients.size();
    const std::string header = j.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write transform: " + path);
    const char magic[4] = {'L', 'B', 'S', 'P'};
    out.write(magic, 4);
    const uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(t.coefficients.data()),
              static_cast<std::streamsize>(t.coefficients.size() * 8));
    if (!out) throw Error("write failed: " + path);
}

inline BSplineTransform load_transform(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open transform: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LBSP", 4) != 0)
        throw Error("not a transform file: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const std::exception& e) {
        throw Error("bad transform header in " + path + ": " + e.what());
    }
    if (j.at("format_version").get<int>() != kTransformFormatVersion)
        throw Error("unsupported transform format version in " + path);
    BSplineTransform t;
    j.at("grid_shape").get_to(t.grid_shape);
    auto gs = j.at("grid_spacing");
    t.grid_spacing = {gs[0], gs[1], gs[2]};
    auto go = j.at("grid_origin");
    t.grid_origin = {go[0], go[1], go[2]};
    j.at("domain").at("shape").get_to(t.domain.shape);
    auto ds = j.at("domain").at("spacing");
    t.domain.spacing = {ds[0], ds[1], ds[2]};
    auto dor = j.at("domain").at("origin");
    t.domain.origin = {dor[0], dor[1], dor[2]};
    t.coefficients.resize(j.at("n_coefficients").get<size_t>());
    in.read(reinterpret_cast<char*>(t.coefficients.data()),
            static_cast<std::streamsize>(t.coefficients.size() * 8));
    if (!in) throw Error("truncated transform file: " + path);
    return t;
}

}  // namespace longct
