#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "longct/core/geometry.hpp"

namespace longct {

/// Scalar 3D grid. Holds Hounsfield units before normalization and
/// dimensionless [0,1] intensities afterwards.
struct Volume3D {
    GridGeometry geom;
    std::vector<float> data;
    std::map<std::string, std::string> meta;

    Volume3D() = default;
    explicit Volume3D(const GridGeometry& g, float fill = 0.0f)
        : geom(g), data(static_cast<size_t>(g.voxels()), fill) {}

    float at(int x, int y, int z) const {
        return data[static_cast<size_t>(geom.index(x, y, z))];
    }
    float& at(int x, int y, int z) {
        return data[static_cast<size_t>(geom.index(x, y, z))];
    }

    void validate() const {
        geom.validate();
        LONGCT_REQUIRE(data.size() == static_cast<size_t>(geom.voxels()),
                       "Volume3D: data size does not match shape");
    }
};

/// Fixed five-class pathology taxonomy shared across the project.
struct ClassMap {
    enum : uint8_t {
        kBackground = 0,
        kHealthyLung = 1,
        kGGO = 2,
        kConsolidation = 3,
        kPleuralEffusion = 4,
    };
    static constexpr int kNumClasses = 5;

    static const char* name(int cls) {
        switch (cls) {
            case kBackground: return "background";
            case kHealthyLung: return "HL";
            case kGGO: return "GGO";
            case kConsolidation: return "CONS";
            case kPleuralEffusion: return "PLEFF";
            default: return "invalid";
        }
    }

    /// Binary consolidation projection: CONS -> 1, everything else -> 0.
    static uint8_t to_consolidation(uint8_t label) {
        return label == kConsolidation ? 1 : 0;
    }
};

/// Per-voxel integer labels on the same lattice as a paired Volume3D.
/// Lung masks are the binary special case (labels in {0,1}).
struct LabelVolume {
    GridGeometry geom;
    std::vector<uint8_t> labels;

    LabelVolume() = default;
    explicit LabelVolume(const GridGeometry& g, uint8_t fill = 0)
        : geom(g), labels(static_cast<size_t>(g.voxels()), fill) {}

    uint8_t at(int x, int y, int z) const {
        return labels[static_cast<size_t>(geom.index(x, y, z))];
    }
    uint8_t& at(int x, int y, int z) {
        return labels[static_cast<size_t>(geom.index(x, y, z))];
    }

    void validate() const {
        geom.validate();
        LONGCT_REQUIRE(labels.size() == static_cast<size_t>(geom.voxels()),
                       "LabelVolume: label size does not match shape");
        for (uint8_t v : labels)
            LONGCT_REQUIRE(v < ClassMap::kNumClasses,
                           "LabelVolume: label outside 0..4");
    }

    int64_t count(uint8_t cls) const {
        int64_t n = 0;
        for (uint8_t v : labels) n += (v == cls);
        return n;
    }
};

/// Project a label volume onto the binary consolidation map. In the output
/// encoding 1 means consolidation, so a map whose alphabet is already {0,1}
/// is a consolidation map and is returned unchanged; five-class maps send
/// CONS to 1 and everything else to 0. This makes the projection idempotent.
inline LabelVolume consolidation_projection(const LabelVolume& in) {
    bool already_binary = true;
    for (uint8_t v : in.labels) {
        if (v > 1) {
            already_binary = false;
            break;
        }
    }
    if (already_binary) return in;
    LabelVolume out(in.geom);
    for (size_t i = 0; i < in.labels.size(); ++i)
        out.labels[i] = ClassMap::to_consolidation(in.labels[i]);
    return out;
}

}  // namespace longct
