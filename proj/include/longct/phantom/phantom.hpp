#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "longct/core/filters.hpp"
#include "longct/core/study.hpp"
#include "longct/util/parallel.hpp"
#include "longct/util/rng.hpp"

namespace longct {

/// Synthetic longitudinal study generator settings. Intensity priors follow
/// radiological convention (air -1000 HU, aerated lung -850, GGO -500,
/// consolidation 0, effusion 10) but the data is synthetic, not clinical.
struct PhantomConfig {
    int grid_size = 64;
    int n_studies = 14;
    int n_train = 8, n_val = 2, n_test = 4;
    int timepoints_per_study = 2;  // 2 or 3
    int lesion_count_min = 2;
    int lesion_count_max = 4;
    // Per-pair lesion size factors, drawn uniformly per lesion. Values < 1
    // shrink (recovery), values > 1 grow (progression).
    double ggo_rate_min = 0.75, ggo_rate_max = 1.35;
    double cons_rate_min = 0.80, cons_rate_max = 1.45;
    double pleff_rate_min = 0.80, pleff_rate_max = 1.30;
    double deform_amplitude = 3.0;  // peak displacement, voxels
    double deform_max_freq = 1.0;   // cycles per domain edge (smoothness)
    int deform_modes = 2;           // sinusoidal modes per component
    double noise_sigma = 20.0;      // HU
    double spacing_mm = 1.5;
    uint64_t seed = 1234;

    void validate() const {
        LONGCT_REQUIRE(grid_size >= 32, "PhantomConfig: grid_size must be >= 32");
        LONGCT_REQUIRE(deform_amplitude < grid_size / 8.0,
                       "PhantomConfig: deformation amplitude must stay below grid/8");
        LONGCT_REQUIRE(timepoints_per_study == 2 || timepoints_per_study == 3,
                       "PhantomConfig: timepoints_per_study must be 2 or 3");
        LONGCT_REQUIRE(n_studies >= 1 && lesion_count_min >= 1 &&
                           lesion_count_max >= lesion_count_min,
                       "PhantomConfig: invalid study/lesion counts");
        LONGCT_REQUIRE(n_train + n_val + n_test == n_studies,
                       "PhantomConfig: split sizes must sum to n_studies");
        LONGCT_REQUIRE(deform_modes >= 1 && deform_max_freq > 0,
                       "PhantomConfig: invalid deformation settings");
    }

    /// Analytic bound on the displacement gradient magnitude (per axis).
    double max_displacement_gradient() const {
        return deform_amplitude * 2.0 * 3.14159265358979323846 * deform_max_freq /
               grid_size;
    }
};

/// Dense per-voxel 3-vector displacement, in voxel units of its grid,
/// mapping follow-up coordinates to reference coordinates (the same
/// direction a fixed-to-moving registration transform resolves).
struct DisplacementField {
    GridGeometry geom;
    std::vector<float> u;  // component-major: u[c * voxels + voxel]

    Vec3 at(int x, int y, int z) const {
        const int64_t n = geom.voxels();
        const int64_t i = geom.index(x, y, z);
        return {u[i], u[n + i], u[2 * n + i]};
    }
};

namespace phantom_detail {

struct Ellipsoid {
    Vec3 center;
    Vec3 radii;

    /// Normalized radial coordinate: <1 inside, 1 on the surface.
    double rho(const Vec3& p) const {
        const double dx = (p.x - center.x) / radii.x;
        const double dy = (p.y - center.y) / radii.y;
        const double dz = (p.z - center.z) / radii.z;
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    }
};

struct Lesion {
    uint8_t cls = ClassMap::kConsolidation;
    Vec3 center;
    double radius0 = 5.0;
    std::array<double, 2> pair_rate{1.0, 1.0};  // size factor per pair

    double radius_at(int tp) const {
        double r = radius0;
        for (int j = 0; j < tp && j < 2; ++j) r *= pair_rate[j];
        return r;
    }
};

struct SineMode {
    Vec3 freq;   // cycles per domain edge
    Vec3 phase;  // radians
    double amp = 0.0;
};

/// One smooth displacement component: sum of separable sinusoidal modes.
struct SmoothField {
    std::array<std::vector<SineMode>, 3> modes;  // per component

    double component(int c, const Vec3& p, double grid) const {
        constexpr double kTwoPi = 6.283185307179586;
        double v = 0.0;
        for (const auto& m : modes[c]) {
            v += m.amp * std::sin(kTwoPi * m.freq.x * p.x / grid + m.phase.x) *
                 std::sin(kTwoPi * m.freq.y * p.y / grid + m.phase.y) *
                 std::sin(kTwoPi * m.freq.z * p.z / grid + m.phase.z);
        }
        return v;
    }

    Vec3 eval(const Vec3& p, double grid) const {
        return {component(0, p, grid), component(1, p, grid), component(2, p, grid)};
    }
};

/// Full analytic description of one study.
struct Scene {
    std::array<Ellipsoid, 2> lungs;
    std::vector<Lesion> lesions;
    bool has_pleff = false;
    int pleff_lung = 0;
    double pleff_thickness0 = 0.08;              // in normalized rho units
    std::array<double, 2> pleff_rate{1.0, 1.0};  // thickness factor per pair
    std::vector<SmoothField> deform;             // one per consecutive pair
    double grid = 64.0;

    double pleff_thickness_at(int tp) const {
        double t = pleff_thickness0;
        for (int j = 0; j < tp && j < 2; ++j) t *= pleff_rate[j];
        return t;
    }

    /// Compose the pairwise fields to map a timepoint-tp grid coordinate
    /// back into the scene (timepoint 0) frame.
    Vec3 to_scene(const Vec3& x, int tp) const {
        Vec3 p = x;
        for (int j = tp - 1; j >= 0; --j) p = p + deform[static_cast<size_t>(j)].eval(p, grid);
        return p;
    }

    bool in_lung(const Vec3& p) const {
        return lungs[0].rho(p) < 1.0 || lungs[1].rho(p) < 1.0;
    }

    bool in_pleff(const Vec3& p, int tp) const {
        if (!has_pleff) return false;
        const Ellipsoid& lung = lungs[static_cast<size_t>(pleff_lung)];
        const double r = lung.rho(p);
        const double th = pleff_thickness_at(tp);
        // Thin shell hugging the lower lung boundary, outside the parenchyma.
        return r >= 1.0 && r < 1.0 + th &&
               p.z < lung.center.z - 0.35 * lung.radii.z;
    }

    /// Class label of a scene point at a given timepoint (lesion radii evolve).
    uint8_t label_at(const Vec3& p, int tp) const {
        if (in_pleff(p, tp)) return ClassMap::kPleuralEffusion;
        if (!in_lung(p)) return ClassMap::kBackground;
        for (const auto& le : lesions) {
            if (le.cls != ClassMap::kConsolidation) continue;
            const double r = le.radius_at(tp);
            const Vec3 d = p - le.center;
            if (d.x * d.x + d.y * d.y + d.z * d.z < r * r) return ClassMap::kConsolidation;
        }
        for (const auto& le : lesions) {
            if (le.cls != ClassMap::kGGO) continue;
            const double r = le.radius_at(tp);
            const Vec3 d = p - le.center;
            if (d.x * d.x + d.y * d.y + d.z * d.z < r * r) return ClassMap::kGGO;
        }
        return ClassMap::kHealthyLung;
    }

    static double class_hu(uint8_t cls) {
        switch (cls) {
            case ClassMap::kHealthyLung: return -850.0;
            case ClassMap::kGGO: return -500.0;
            case ClassMap::kConsolidation: return 0.0;
            case ClassMap::kPleuralEffusion: return 10.0;
            default: return -1000.0;
        }
    }
};

inline Scene build_scene(const PhantomConfig& cfg, int study_index) {
    Rng rng(hash_combine(cfg.seed, static_cast<uint64_t>(study_index) + 101));
    const double n = cfg.grid_size;
    Scene sc;
    sc.grid = n;
    for (int side = 0; side < 2; ++side) {
        const double sgn = side == 0 ? -1.0 : 1.0;
        Ellipsoid e;
        e.center = {n * (0.5 + sgn * (0.205 + 0.01 * rng.uniform())),
                    n * (0.5 + 0.02 * (rng.uniform() - 0.5)),
                    n * (0.5 + 0.02 * (rng.uniform() - 0.5))};
        e.radii = {n * rng.uniform(0.130, 0.155), n * rng.uniform(0.185, 0.215),
                   n * rng.uniform(0.265, 0.300)};
        sc.lungs[static_cast<size_t>(side)] = e;
    }

    const int n_lesions = rng.uniform_int(cfg.lesion_count_min, cfg.lesion_count_max);
    for (int i = 0; i < n_lesions; ++i) {
        Lesion le;
        // The first lesion is always consolidation so progression analysis
        // has signal in every study.
        le.cls = (i == 0 || rng.uniform() < 0.5) ? ClassMap::kConsolidation
                                                 : ClassMap::kGGO;
        const auto& lung = sc.lungs[rng.below(2)];
        // Keep centers well inside so lesions rarely clip the boundary.
        le.center = {lung.center.x + lung.radii.x * rng.uniform(-0.45, 0.45),
                     lung.center.y + lung.radii.y * rng.uniform(-0.45, 0.45),
                     lung.center.z + lung.radii.z * rng.uniform(-0.50, 0.50)};
        le.radius0 = n * rng.uniform(0.055, 0.095);
        const double lo = le.cls == ClassMap::kGGO ? cfg.ggo_rate_min : cfg.cons_rate_min;
        const double hi = le.cls == ClassMap::kGGO ? cfg.ggo_rate_max : cfg.cons_rate_max;
        le.pair_rate = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
        sc.lesions.push_back(le);
    }

    sc.has_pleff = rng.uniform() < 0.6;
    sc.pleff_lung = static_cast<int>(rng.below(2));
    sc.pleff_thickness0 = rng.uniform(0.06, 0.11);
    sc.pleff_rate = {rng.uniform(cfg.pleff_rate_min, cfg.pleff_rate_max),
                     rng.uniform(cfg.pleff_rate_min, cfg.pleff_rate_max)};

    for (int pair = 0; pair < 2; ++pair) {
        SmoothField f;
        for (int c = 0; c < 3; ++c) {
            double amp_total = 0.0;
            std::vector<SineMode> modes;
            for (int m = 0; m < cfg.deform_modes; ++m) {
                SineMode sm;
                sm.freq = {rng.uniform(0.3, cfg.deform_max_freq),
                           rng.uniform(0.3, cfg.deform_max_freq),
                           rng.uniform(0.3, cfg.deform_max_freq)};
                sm.phase = {rng.uniform(0, 6.283), rng.uniform(0, 6.283),
                            rng.uniform(0, 6.283)};
                sm.amp = rng.uniform(0.5, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                amp_total += std::fabs(sm.amp);
                modes.push_back(sm);
            }
            // Normalize so the summed mode amplitudes hit the configured peak.
            const double target = cfg.deform_amplitude * rng.uniform(0.7, 1.0);
            for (auto& sm : modes) sm.amp *= amp_total > 0 ? target / amp_total : 0.0;
            f.modes[c] = modes;
        }
        sc.deform.push_back(f);
    }
    return sc;
}

}  // namespace phantom_detail

struct PhantomStudy {
    Study study;
    /// Ground-truth displacement for each consecutive pair, defined on the
    /// follow-up grid and pointing to the reference frame, in voxel units.
    std::vector<DisplacementField> gt_displacements;
};

/// Generate one study. Fully determined by (cfg.seed, study_index).
inline PhantomStudy generate_study(const PhantomConfig& cfg, int study_index) {
    cfg.validate();
    using namespace phantom_detail;
    const Scene sc = build_scene(cfg, study_index);
    const int n = cfg.grid_size;

    GridGeometry geom;
    geom.shape = {n, n, n};
    geom.spacing = {cfg.spacing_mm, cfg.spacing_mm, cfg.spacing_mm};
    geom.origin = {0.0, 0.0, 0.0};

    PhantomStudy out;
    out.study.patient_id = "phantom_" + std::to_string(study_index);

    int day = 0;
    for (int tp = 0; tp < cfg.timepoints_per_study; ++tp) {
        Volume3D ct(geom);
        LabelVolume lung(geom);
        LabelVolume path(geom);
        parallel_for(n, [&](int64_t z) {
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const Vec3 p = sc.to_scene(
                        {static_cast<double>(x), static_cast<double>(y),
                         static_cast<double>(z)},
                        tp);
                    const uint8_t cls = sc.label_at(p, tp);
                    path.at(x, y, static_cast<int>(z)) = cls;
                    lung.at(x, y, static_cast<int>(z)) = sc.in_lung(p) ? 1 : 0;
                    ct.at(x, y, static_cast<int>(z)) =
                        static_cast<float>(Scene::class_hu(cls));
                }
        });
        gaussian_blur_inplace(ct, 0.8);
        if (cfg.noise_sigma > 0) {
            const uint64_t stream =
                hash_combine(cfg.seed, 7919 * static_cast<uint64_t>(study_index) + tp);
            parallel_for(geom.voxels(), [&](int64_t i) {
                ct.data[static_cast<size_t>(i)] += static_cast<float>(
                    cfg.noise_sigma *
                    counter_normal(cfg.seed, stream, static_cast<uint64_t>(i)));
            });
        }

        Timepoint t;
        t.timepoint_index = tp;
        t.acquisition_day = day;
        ct.meta["device"] = "synthetic phantom";
        ct.meta["acquisition_day"] = std::to_string(day);
        t.ct = std::move(ct);
        t.lung_mask = std::move(lung);
        t.pathology = std::move(path);
        out.study.timepoints.push_back(std::move(t));
        day += 10 + (study_index * 7 + tp * 3) % 15;
    }

    for (int pair = 0; pair + 1 < cfg.timepoints_per_study; ++pair) {
        DisplacementField f;
        f.geom = geom;
        f.u.resize(static_cast<size_t>(geom.voxels()) * 3);
        const int64_t nvox = geom.voxels();
        parallel_for(n, [&](int64_t z) {
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const Vec3 u = sc.deform[static_cast<size_t>(pair)].eval(
                        {static_cast<double>(x), static_cast<double>(y),
                         static_cast<double>(z)},
                        sc.grid);
                    const int64_t i = geom.index(x, y, static_cast<int>(z));
                    f.u[static_cast<size_t>(i)] = static_cast<float>(u.x);
                    f.u[static_cast<size_t>(nvox + i)] = static_cast<float>(u.y);
                    f.u[static_cast<size_t>(2 * nvox + i)] = static_cast<float>(u.z);
                }
        });
        out.gt_displacements.push_back(std::move(f));
    }
    out.study.validate();
    return out;
}

/// Patient-level split by study index: the first n_train studies train, the
/// next n_val validate, the rest test.
inline std::map<std::string, std::vector<std::string>> phantom_splits(
    const PhantomConfig& cfg) {
    std::map<std::string, std::vector<std::string>> splits;
    for (int i = 0; i < cfg.n_studies; ++i) {
        const std::string id = "phantom_" + std::to_string(i);
        if (i < cfg.n_train) splits["train"].push_back(id);
        else if (i < cfg.n_train + cfg.n_val) splits["val"].push_back(id);
        else splits["test"].push_back(id);
    }
    return splits;
}

}  // namespace longct
