#pragma once

#include <array>
#include <string>
#include <vector>

#include "longct/io/nifti.hpp"
#include "longct/nn/model.hpp"
#include "longct/registration/registration.hpp"

namespace longct {

/// Per-voxel class probabilities over a volume grid, class-major storage.
struct ProbabilityVolume {
    GridGeometry geom;
    int n_classes = ClassMap::kNumClasses;
    std::vector<float> p;  // p[cls * voxels + voxel]

    ProbabilityVolume() = default;
    ProbabilityVolume(const GridGeometry& g, int classes)
        : geom(g), n_classes(classes),
          p(static_cast<size_t>(g.voxels()) * classes, 0.0f) {}

    float at(int cls, int64_t voxel) const {
        return p[static_cast<size_t>(cls) * static_cast<size_t>(geom.voxels()) +
                 static_cast<size_t>(voxel)];
    }
    float& at(int cls, int64_t voxel) {
        return p[static_cast<size_t>(cls) * static_cast<size_t>(geom.voxels()) +
                 static_cast<size_t>(voxel)];
    }

    void validate(float tol = 1e-5f) const {
        const int64_t n = geom.voxels();
        for (int64_t i = 0; i < n; ++i) {
            float sum = 0.0f;
            for (int c = 0; c < n_classes; ++c) {
                const float v = at(c, i);
                LONGCT_REQUIRE(v >= -1e-7f && v <= 1.0f + 1e-6f,
                               "ProbabilityVolume: entry outside [0,1]");
                sum += v;
            }
            LONGCT_REQUIRE(std::fabs(sum - 1.0f) <= tol,
                           "ProbabilityVolume: probabilities do not sum to 1");
        }
    }
};

namespace fusion_detail {

/// Voxel index of pixel (u,v) in slice `index` of a view.
inline int64_t voxel_of(const GridGeometry& g, View view, int index, int u, int v) {
    switch (view) {
        case View::Axial: return g.index(u, v, index);
        case View::Coronal: return g.index(u, index, v);
        case View::Sagittal: return g.index(index, u, v);
    }
    return 0;
}

}  // namespace fusion_detail

/// Run the model over every kept slice of one view and stack the per-slice
/// probabilities back into a volume. Empty (removed) slices receive the
/// background-certain vector.
inline ProbabilityVolume predict_view(FCDenseNet<float>& model,
                                      const RegisteredPair& pair, int target_tp,
                                      View view, float empty_eps = 1e-5f,
                                      int batch_size = 8) {
    LONGCT_REQUIRE(target_tp == 0 || target_tp == 1,
                   "predict_view: target timepoint must be 0 or 1");
    const bool longitudinal =
        model.config().variant == ModelConfig::Variant::Longitudinal;
    const Volume3D& target = target_tp == 1 ? pair.x1 : pair.x0_reg;
    const Volume3D& other = target_tp == 1 ? pair.x0_reg : pair.x1;
    LONGCT_REQUIRE(check_geometry(target.geom, other.geom),
                   "predict_view: pair volumes must share one grid");

    PreprocessConfig pp;
    pp.empty_eps = empty_eps;
    const SliceStack stack = extract_slices(target, view, pp);

    ProbabilityVolume out(target.geom, model.config().n_classes);
    // Background-certain fill for every voxel; kept slices overwrite it.
    const int64_t nvox = target.geom.voxels();
    for (int64_t i = 0; i < nvox; ++i) out.at(ClassMap::kBackground, i) = 1.0f;

    const auto& kept = stack.kept_indices;
    for (size_t off = 0; off < kept.size(); off += static_cast<size_t>(batch_size)) {
        const int bs = static_cast<int>(
            std::min(kept.size() - off, static_cast<size_t>(batch_size)));
        const Slice2D& first = stack.slices[static_cast<size_t>(kept[off])];
        Tensor<float> input(bs, model.config().in_channels, first.height, first.width);
        for (int r = 0; r < bs; ++r) {
            const int idx = kept[off + static_cast<size_t>(r)];
            const Slice2D& st = stack.slices[static_cast<size_t>(idx)];
            if (longitudinal) {
                const Slice2D so = extract_slice(other, view, idx);
                std::copy(so.pix.begin(), so.pix.end(), input.channel(r, 0));
                std::copy(st.pix.begin(), st.pix.end(), input.channel(r, 1));
            } else {
                std::copy(st.pix.begin(), st.pix.end(), input.channel(r, 0));
            }
        }
        const Tensor<float> probs = model.forward(input, /*training=*/false);
        for (int r = 0; r < bs; ++r) {
            const int idx = kept[off + static_cast<size_t>(r)];
            for (int c = 0; c < probs.c; ++c) {
                const float* src = probs.channel(r, c);
                for (int v = 0; v < probs.h; ++v)
                    for (int u = 0; u < probs.w; ++u)
                        out.at(c, fusion_detail::voxel_of(target.geom, view, idx, u, v)) =
                            src[static_cast<int64_t>(v) * probs.w + u];
            }
        }
    }
    model.clear_cache();
    return out;
}

/// Unweighted per-voxel mean of the three orthogonal-view predictions.
inline ProbabilityVolume fuse_views(const ProbabilityVolume& axial,
                                    const ProbabilityVolume& coronal,
                                    const ProbabilityVolume& sagittal) {
    LONGCT_REQUIRE(check_geometry(axial.geom, coronal.geom) &&
                       check_geometry(axial.geom, sagittal.geom),
                   "fuse_views: geometries differ");
    LONGCT_REQUIRE(axial.n_classes == coronal.n_classes &&
                       axial.n_classes == sagittal.n_classes,
                   "fuse_views: class counts differ");
    ProbabilityVolume out(axial.geom, axial.n_classes);
    for (size_t i = 0; i < out.p.size(); ++i)
        out.p[i] = (axial.p[i] + coronal.p[i] + sagittal.p[i]) / 3.0f;
    return out;
}

/// Per-voxel argmax; exact ties resolve to the lowest class index.
inline LabelVolume labelize(const ProbabilityVolume& prob) {
    LabelVolume out(prob.geom);
    const int64_t n = prob.geom.voxels();
    parallel_for(n, [&](int64_t i) {
        int best = 0;
        float best_p = prob.at(0, i);
        for (int c = 1; c < prob.n_classes; ++c) {
            const float v = prob.at(c, i);
            if (v > best_p) {
                best_p = v;
                best = c;
            }
        }
        out.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
    });
    return out;
}

struct SegmentedPair {
    LabelVolume seg0;  // reference segmentation, in follow-up space
    LabelVolume seg1;  // follow-up segmentation
    ProbabilityVolume prob0, prob1;
};

/// Full 2.5D inference for one registered pair: three views per target
/// timepoint, fused and argmax-labelled.
inline SegmentedPair segment_pair(FCDenseNet<float>& model, const RegisteredPair& pair,
                                  float empty_eps = 1e-5f, int batch_size = 8) {
    SegmentedPair out;
    for (int tp = 0; tp < 2; ++tp) {
        ProbabilityVolume ax = predict_view(model, pair, tp, View::Axial, empty_eps,
                                            batch_size);
        ProbabilityVolume co = predict_view(model, pair, tp, View::Coronal, empty_eps,
                                            batch_size);
        ProbabilityVolume sa = predict_view(model, pair, tp, View::Sagittal, empty_eps,
                                            batch_size);
        ProbabilityVolume fused = fuse_views(ax, co, sa);
        if (tp == 0) {
            out.seg0 = labelize(fused);
            out.prob0 = std::move(fused);
        } else {
            out.seg1 = labelize(fused);
            out.prob1 = std::move(fused);
        }
    }
    return out;
}

/// Probability volumes are stored as float32 vector fields over classes.
inline void save_probability_volume(const std::string& path,
                                    const ProbabilityVolume& prob) {
    nifti::Header h = nifti::make_header(prob.geom, nifti::kFloat32, 32, prob.n_classes);
    nifti::write_file(path, h, prob.p.data(), prob.p.size() * 4);
}

}  // namespace longct
