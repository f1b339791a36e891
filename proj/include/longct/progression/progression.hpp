#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "longct/core/volume.hpp"
#include "longct/io/nifti.hpp"

namespace longct {

/// Binary consolidation map: 1 where the label is CONS, 0 elsewhere.
inline LabelVolume consolidation_map(const LabelVolume& labels) {
    LabelVolume out(labels.geom);
    for (size_t i = 0; i < labels.labels.size(); ++i)
        out.labels[i] = labels.labels[i] == ClassMap::kConsolidation ? 1 : 0;
    return out;
}

/// Voxelwise consolidation change between two aligned timepoints:
/// +1 progression (new consolidation), -1 recovery, 0 unchanged.
struct ProgressionMap {
    GridGeometry geom;
    std::vector<int8_t> delta;

    int8_t at(int x, int y, int z) const {
        return delta[static_cast<size_t>(geom.index(x, y, z))];
    }
};

inline ProgressionMap progression_map(const LabelVolume& con0, const LabelVolume& con1) {
    LONGCT_REQUIRE(check_geometry(con0.geom, con1.geom),
                   "progression_map: geometries differ");
    for (uint8_t v : con0.labels)
        LONGCT_REQUIRE(v <= 1, "progression_map: reference map is not binary");
    for (uint8_t v : con1.labels)
        LONGCT_REQUIRE(v <= 1, "progression_map: follow-up map is not binary");
    ProgressionMap out;
    out.geom = con1.geom;
    out.delta.resize(con1.labels.size());
    for (size_t i = 0; i < con1.labels.size(); ++i)
        out.delta[i] = static_cast<int8_t>(static_cast<int>(con1.labels[i]) -
                                           static_cast<int>(con0.labels[i]));
    return out;
}

/// Pairwise progression quantities in milliliters.
struct ProgressionReport {
    std::string patient_id;
    int pair_index = 0;
    int64_t progressed_voxels = 0;
    int64_t recovered_voxels = 0;
    double progressed_ml = 0.0;
    double recovered_ml = 0.0;
    double net_change_ml = 0.0;  // progressed - recovered
    double cons_volume_t0_ml = 0.0;
    double cons_volume_t1_ml = 0.0;
};

/// Count signed voxels and convert through the voxel volume (mm^3 -> mL).
inline ProgressionReport quantify(const ProgressionMap& map) {
    ProgressionReport r;
    for (int8_t v : map.delta) {
        if (v > 0) ++r.progressed_voxels;
        else if (v < 0) ++r.recovered_voxels;
    }
    const double voxel_ml = map.geom.voxel_volume_mm3() / 1000.0;
    r.progressed_ml = static_cast<double>(r.progressed_voxels) * voxel_ml;
    r.recovered_ml = static_cast<double>(r.recovered_voxels) * voxel_ml;
    r.net_change_ml = r.progressed_ml - r.recovered_ml;
    return r;
}

/// Full pair analysis from two aligned segmentations.
inline ProgressionReport analyze_progression(const LabelVolume& seg0_registered,
                                             const LabelVolume& seg1,
                                             ProgressionMap* map_out = nullptr) {
    const LabelVolume con0 = consolidation_map(seg0_registered);
    const LabelVolume con1 = consolidation_map(seg1);
    ProgressionMap map = progression_map(con0, con1);
    ProgressionReport r = quantify(map);
    const double voxel_ml = map.geom.voxel_volume_mm3() / 1000.0;
    r.cons_volume_t0_ml = static_cast<double>(con0.count(1)) * voxel_ml;
    r.cons_volume_t1_ml = static_cast<double>(con1.count(1)) * voxel_ml;
    if (map_out) *map_out = std::move(map);
    return r;
}

inline nlohmann::ordered_json report_to_json(const ProgressionReport& r) {
    return {{"patient_id", r.patient_id},
            {"pair_index", r.pair_index},
            {"progressed_voxels", r.progressed_voxels},
            {"recovered_voxels", r.recovered_voxels},
            {"progressed_ml", r.progressed_ml},
            {"recovered_ml", r.recovered_ml},
            {"net_change_ml", r.net_change_ml},
            {"cons_volume_t0_ml", r.cons_volume_t0_ml},
            {"cons_volume_t1_ml", r.cons_volume_t1_ml}};
}

/// Human-readable table for one or more reports.
inline std::string report_table(const std::vector<ProgressionReport>& reports) {
    std::ostringstream os;
    os << "patient        pair  cons_t0[mL]  cons_t1[mL]  progressed[mL]  "
          "recovered[mL]  net[mL]\n";
    char line[256];
    for (const auto& r : reports) {
        std::snprintf(line, sizeof(line),
                      "%-14s %4d  %11.3f  %11.3f  %14.3f  %13.3f  %7.3f\n",
                      r.patient_id.c_str(), r.pair_index, r.cons_volume_t0_ml,
                      r.cons_volume_t1_ml, r.progressed_ml, r.recovered_ml,
                      r.net_change_ml);
        os << line;
    }
    return os.str();
}

inline void save_progression_map(const std::string& path, const ProgressionMap& map) {
    save_int8(path, map.geom, map.delta);
}

}  // namespace longct
