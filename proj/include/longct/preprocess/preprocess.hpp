#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "longct/core/study.hpp"
#include "longct/core/volume.hpp"
#include "longct/util/parallel.hpp"

namespace longct {

/// Preprocessing chain settings: HU clip window, isotropic target grid and
/// the empty-slice variation threshold (fraction of the normalized [0,1]
/// range).
struct PreprocessConfig {
    float clip_lo = -1024.0f;
    float clip_hi = 600.0f;
    int target_size = 300;
    float empty_eps = 1e-5f;
    int crop_margin = 0;

    void validate() const {
        LONGCT_REQUIRE(clip_lo < clip_hi, "PreprocessConfig: clip_lo must be < clip_hi");
        LONGCT_REQUIRE(target_size >= 8, "PreprocessConfig: target_size must be >= 8");
        LONGCT_REQUIRE(empty_eps > 0, "PreprocessConfig: empty_eps must be > 0");
        LONGCT_REQUIRE(crop_margin >= 0, "PreprocessConfig: crop_margin must be >= 0");
    }
};

/// Inclusive axis-aligned voxel box.
struct BBox {
    std::array<int, 3> lo{0, 0, 0};
    std::array<int, 3> hi{-1, -1, -1};

    std::array<int, 3> size() const {
        return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    }
    bool operator==(const BBox&) const = default;
};

/// Minimal box containing every foreground (nonzero) voxel of the mask,
/// dilated by margin and clamped to the volume bounds. Throws when the mask
/// is empty.
inline BBox foreground_bbox(const LabelVolume& mask, int margin) {
    const auto& s = mask.geom.shape;
    BBox b{{s[0], s[1], s[2]}, {-1, -1, -1}};
    for (int z = 0; z < s[2]; ++z)
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[0]; ++x)
                if (mask.at(x, y, z) != 0) {
                    b.lo[0] = std::min(b.lo[0], x);
                    b.lo[1] = std::min(b.lo[1], y);
                    b.lo[2] = std::min(b.lo[2], z);
                    b.hi[0] = std::max(b.hi[0], x);
                    b.hi[1] = std::max(b.hi[1], y);
                    b.hi[2] = std::max(b.hi[2], z);
                }
    LONGCT_REQUIRE(b.hi[0] >= 0, "crop_to_lung: lung mask has no foreground voxels");
    for (int d = 0; d < 3; ++d) {
        b.lo[d] = std::max(0, b.lo[d] - margin);
        b.hi[d] = std::min(s[d] - 1, b.hi[d] + margin);
    }
    return b;
}

inline Volume3D crop_volume(const Volume3D& vol, const BBox& box) {
    const auto sz = box.size();
    Volume3D out;
    out.geom.shape = sz;
    out.geom.spacing = vol.geom.spacing;
    out.geom.origin = vol.geom.voxel_to_world(box.lo[0], box.lo[1], box.lo[2]);
    out.meta = vol.meta;
    out.data.resize(static_cast<size_t>(out.geom.voxels()));
    for (int z = 0; z < sz[2]; ++z)
        for (int y = 0; y < sz[1]; ++y)
            for (int x = 0; x < sz[0]; ++x)
                out.at(x, y, z) = vol.at(box.lo[0] + x, box.lo[1] + y, box.lo[2] + z);
    return out;
}

inline LabelVolume crop_labels(const LabelVolume& lab, const BBox& box) {
    const auto sz = box.size();
    LabelVolume out;
    out.geom.shape = sz;
    out.geom.spacing = lab.geom.spacing;
    out.geom.origin = lab.geom.voxel_to_world(box.lo[0], box.lo[1], box.lo[2]);
    out.labels.resize(static_cast<size_t>(out.geom.voxels()));
    for (int z = 0; z < sz[2]; ++z)
        for (int y = 0; y < sz[1]; ++y)
            for (int x = 0; x < sz[0]; ++x)
                out.at(x, y, z) = lab.at(box.lo[0] + x, box.lo[1] + y, box.lo[2] + z);
    return out;
}

struct CropResult {
    Volume3D ct;
    LabelVolume lung_mask;
    BBox box;
};

/// Crop CT and lung mask to the lung region. World coordinates of retained
/// voxels are unchanged (the origin moves with the box).
inline CropResult crop_to_lung(const Volume3D& ct, const LabelVolume& lung_mask,
                               int margin = 0) {
    LONGCT_REQUIRE(check_geometry(ct.geom, lung_mask.geom),
                   "crop_to_lung: CT and lung mask geometry differ");
    BBox box = foreground_bbox(lung_mask, margin);
    return {crop_volume(ct, box), crop_labels(lung_mask, box), box};
}

/// Clip to [clip_lo, clip_hi] then min-max normalize with the per-volume
/// post-clip extrema. A constant volume maps to 0.5 everywhere (such volumes
/// are later dropped entirely by empty-slice removal).
inline Volume3D clip_and_normalize(const Volume3D& ct, const PreprocessConfig& cfg) {
    cfg.validate();
    Volume3D out = ct;
    float lo = cfg.clip_hi, hi = cfg.clip_lo;
    for (float& v : out.data) {
        v = std::clamp(v, cfg.clip_lo, cfg.clip_hi);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo) {
        const float scale = 1.0f / (hi - lo);
        for (float& v : out.data) v = (v - lo) * scale;
    } else {
        for (float& v : out.data) v = 0.5f;
    }
    return out;
}

namespace detail {

/// Center-aligned resampling coordinate: output voxel center i maps to
/// (i + 0.5) * n_in / n_out - 0.5 in input voxel coordinates.
inline double resample_coord(int i, int n_in, int n_out) {
    return (i + 0.5) * static_cast<double>(n_in) / n_out - 0.5;
}

inline GridGeometry resized_geometry(const GridGeometry& g, int target) {
    GridGeometry out;
    out.shape = {target, target, target};
    for (int d = 0; d < 3; ++d) {
        const double ratio = static_cast<double>(g.shape[d]) / target;
        out.spacing[d] = g.spacing[d] * ratio;
        // Keep voxel-center world positions consistent with the resampling map.
        out.origin[d] = g.origin[d] + (0.5 * ratio - 0.5) * g.spacing[d];
    }
    return out;
}

}  // namespace detail

/// Trilinear resize to target^3 voxels; spacing is rescaled so the physical
/// extent is preserved. Intended for intensity volumes.
inline Volume3D resize_intensity(const Volume3D& vol, int target) {
    vol.validate();
    LONGCT_REQUIRE(target >= 1, "resize: target must be >= 1");
    Volume3D out;
    out.geom = detail::resized_geometry(vol.geom, target);
    out.meta = vol.meta;
    out.data.resize(static_cast<size_t>(out.geom.voxels()));
    const auto& s = vol.geom.shape;
    parallel_for(target, [&](int64_t z) {
        const double cz = detail::resample_coord(static_cast<int>(z), s[2], target);
        const int z0 = std::clamp(static_cast<int>(std::floor(cz)), 0, s[2] - 1);
        const int z1 = std::min(z0 + 1, s[2] - 1);
        const double fz = std::clamp(cz - z0, 0.0, 1.0);
        for (int y = 0; y < target; ++y) {
            const double cy = detail::resample_coord(y, s[1], target);
            const int y0 = std::clamp(static_cast<int>(std::floor(cy)), 0, s[1] - 1);
            const int y1 = std::min(y0 + 1, s[1] - 1);
            const double fy = std::clamp(cy - y0, 0.0, 1.0);
            for (int x = 0; x < target; ++x) {
                const double cx = detail::resample_coord(x, s[0], target);
                const int x0 = std::clamp(static_cast<int>(std::floor(cx)), 0, s[0] - 1);
                const int x1 = std::min(x0 + 1, s[0] - 1);
                const double fx = std::clamp(cx - x0, 0.0, 1.0);
                const double v00 = vol.at(x0, y0, z0) * (1 - fx) + vol.at(x1, y0, z0) * fx;
                const double v10 = vol.at(x0, y1, z0) * (1 - fx) + vol.at(x1, y1, z0) * fx;
                const double v01 = vol.at(x0, y0, z1) * (1 - fx) + vol.at(x1, y0, z1) * fx;
                const double v11 = vol.at(x0, y1, z1) * (1 - fx) + vol.at(x1, y1, z1) * fx;
                const double v0 = v00 * (1 - fy) + v10 * fy;
                const double v1 = v01 * (1 - fy) + v11 * fy;
                out.at(x, y, static_cast<int>(z)) =
                    static_cast<float>(v0 * (1 - fz) + v1 * fz);
            }
        }
    });
    return out;
}

/// Nearest-neighbor resize for label volumes; never introduces new labels.
inline LabelVolume resize_labels(const LabelVolume& lab, int target) {
    lab.validate();
    LONGCT_REQUIRE(target >= 1, "resize: target must be >= 1");
    LabelVolume out;
    out.geom = detail::resized_geometry(lab.geom, target);
    out.labels.resize(static_cast<size_t>(out.geom.voxels()));
    const auto& s = lab.geom.shape;
    parallel_for(target, [&](int64_t z) {
        const int zi = std::clamp(
            static_cast<int>(std::lround(detail::resample_coord(static_cast<int>(z), s[2], target))),
            0, s[2] - 1);
        for (int y = 0; y < target; ++y) {
            const int yi = std::clamp(
                static_cast<int>(std::lround(detail::resample_coord(y, s[1], target))), 0,
                s[1] - 1);
            for (int x = 0; x < target; ++x) {
                const int xi = std::clamp(
                    static_cast<int>(std::lround(detail::resample_coord(x, s[0], target))),
                    0, s[0] - 1);
                out.at(x, y, static_cast<int>(z)) = lab.at(xi, yi, zi);
            }
        }
    });
    return out;
}

enum class ResizeKind { Intensity, Label };

enum class View { Axial = 0, Coronal = 1, Sagittal = 2 };

inline const char* view_name(View v) {
    switch (v) {
        case View::Axial: return "axial";
        case View::Coronal: return "coronal";
        case View::Sagittal: return "sagittal";
    }
    return "invalid";
}

/// Slice axis per view: axial slices stack along z, coronal along y,
/// sagittal along x.
inline int view_axis(View v) {
    switch (v) {
        case View::Axial: return 2;
        case View::Coronal: return 1;
        case View::Sagittal: return 0;
    }
    return 2;
}

struct Slice2D {
    int index = 0;
    int width = 0;
    int height = 0;
    std::vector<float> pix;  // row-major, width fastest

    float at(int u, int v) const { return pix[static_cast<size_t>(v) * width + u]; }
    float& at(int u, int v) { return pix[static_cast<size_t>(v) * width + u]; }
};

struct SliceStack {
    View view = View::Axial;
    std::vector<Slice2D> slices;   // one per index along the view axis
    std::vector<int> kept_indices; // indices surviving empty-slice removal
};

/// Extract one 2D slice along the view axis. In-plane axes keep the
/// remaining (x,y,z) order: axial -> (x,y), coronal -> (x,z), sagittal -> (y,z).
inline Slice2D extract_slice(const Volume3D& vol, View view, int index) {
    const auto& s = vol.geom.shape;
    Slice2D sl;
    sl.index = index;
    switch (view) {
        case View::Axial:
            sl.width = s[0]; sl.height = s[1];
            sl.pix.resize(static_cast<size_t>(sl.width) * sl.height);
            for (int y = 0; y < s[1]; ++y)
                for (int x = 0; x < s[0]; ++x) sl.at(x, y) = vol.at(x, y, index);
            break;
        case View::Coronal:
            sl.width = s[0]; sl.height = s[2];
            sl.pix.resize(static_cast<size_t>(sl.width) * sl.height);
            for (int z = 0; z < s[2]; ++z)
                for (int x = 0; x < s[0]; ++x) sl.at(x, z) = vol.at(x, index, z);
            break;
        case View::Sagittal:
            sl.width = s[1]; sl.height = s[2];
            sl.pix.resize(static_cast<size_t>(sl.width) * sl.height);
            for (int z = 0; z < s[2]; ++z)
                for (int y = 0; y < s[1]; ++y) sl.at(y, z) = vol.at(index, y, z);
            break;
    }
    return sl;
}

/// One 2D label slice with the same in-plane axis mapping as extract_slice.
struct LabelSlice2D {
    int index = 0;
    int width = 0;
    int height = 0;
    std::vector<uint8_t> labels;

    uint8_t at(int u, int v) const {
        return labels[static_cast<size_t>(v) * width + u];
    }
};

inline LabelSlice2D extract_label_slice(const LabelVolume& lab, View view, int index) {
    const auto& s = lab.geom.shape;
    LabelSlice2D sl;
    sl.index = index;
    switch (view) {
        case View::Axial:
            sl.width = s[0]; sl.height = s[1];
            sl.labels.resize(static_cast<size_t>(sl.width) * sl.height);
            for (int y = 0; y < s[1]; ++y)
                for (int x = 0; x < s[0]; ++x)
                    sl.labels[static_cast<size_t>(y) * sl.width + x] = lab.at(x, y, index);
            break;
        case View::Coronal:
            sl.width = s[0]; sl.height = s[2];
            sl.labels.resize(static_cast<size_t>(sl.width) * sl.height);
            for (int z = 0; z < s[2]; ++z)
                for (int x = 0; x < s[0]; ++x)
                    sl.labels[static_cast<size_t>(z) * sl.width + x] = lab.at(x, index, z);
            break;
        case View::Sagittal:
            sl.width = s[1]; sl.height = s[2];
            sl.labels.resize(static_cast<size_t>(sl.width) * sl.height);
            for (int z = 0; z < s[2]; ++z)
                for (int y = 0; y < s[1]; ++y)
                    sl.labels[static_cast<size_t>(z) * sl.width + y] = lab.at(index, y, z);
            break;
    }
    return sl;
}

/// Slice the volume along one view axis and flag empty slices: a slice whose
/// (max - min) variation is below empty_eps is excluded from kept_indices.
inline SliceStack extract_slices(const Volume3D& vol, View view,
                                 const PreprocessConfig& cfg) {
    vol.validate();
    SliceStack st;
    st.view = view;
    const int n = vol.geom.shape[view_axis(view)];
    st.slices.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Slice2D sl = extract_slice(vol, view, i);
        float lo = sl.pix[0], hi = sl.pix[0];
        for (float v : sl.pix) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo >= cfg.empty_eps) st.kept_indices.push_back(i);
        st.slices.push_back(std::move(sl));
    }
    return st;
}

/// Both timepoints of a consecutive pair after crop -> clip/normalize ->
/// resize, on a single shared grid so they are ready for registration.
struct ProcessedPair {
    std::string patient_id;
    int pair_index = 0;
    int day0 = 0, day1 = 0;
    Volume3D ct0, ct1;
    LabelVolume lung0, lung1;
    std::optional<LabelVolume> path0, path1;
};

/// Preprocess a consecutive timepoint pair. The crop box is the union of the
/// two lung-mask boxes so that both outputs share one grid; clipping,
/// normalization and resizing then run per volume in the order of the
/// processing chain. Deterministic for fixed inputs and config.
inline ProcessedPair preprocess_pair(const Timepoint& reference,
                                     const Timepoint& followup,
                                     const PreprocessConfig& cfg) {
    cfg.validate();
    LONGCT_REQUIRE(check_geometry(reference.ct.geom, followup.ct.geom),
                   "preprocess_pair: timepoints must share the raw grid");
    LONGCT_REQUIRE(check_geometry(reference.ct.geom, reference.lung_mask.geom),
                   "preprocess_pair: reference CT/mask geometry differ");
    LONGCT_REQUIRE(check_geometry(followup.ct.geom, followup.lung_mask.geom),
                   "preprocess_pair: follow-up CT/mask geometry differ");

    const BBox b0 = foreground_bbox(reference.lung_mask, cfg.crop_margin);
    const BBox b1 = foreground_bbox(followup.lung_mask, cfg.crop_margin);
    BBox box;
    for (int d = 0; d < 3; ++d) {
        box.lo[d] = std::min(b0.lo[d], b1.lo[d]);
        box.hi[d] = std::max(b0.hi[d], b1.hi[d]);
    }

    auto process_ct = [&](const Volume3D& ct) {
        return resize_intensity(clip_and_normalize(crop_volume(ct, box), cfg),
                                cfg.target_size);
    };
    auto process_labels = [&](const LabelVolume& lab) {
        return resize_labels(crop_labels(lab, box), cfg.target_size);
    };

    ProcessedPair out;
    out.day0 = reference.acquisition_day;
    out.day1 = followup.acquisition_day;
    out.ct0 = process_ct(reference.ct);
    out.ct1 = process_ct(followup.ct);
    out.lung0 = process_labels(reference.lung_mask);
    out.lung1 = process_labels(followup.lung_mask);
    if (reference.pathology) out.path0 = process_labels(*reference.pathology);
    if (followup.pathology) out.path1 = process_labels(*followup.pathology);
    return out;
}

}  // namespace longct
