#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "longct/core/volume.hpp"

namespace longct {

/// One acquisition of a patient: CT, lung mask and (when annotated) the
/// five-class pathology mask. acquisition_day counts days since the first
/// scan of the study.
struct Timepoint {
    int timepoint_index = 0;
    int acquisition_day = 0;
    Volume3D ct;
    LabelVolume lung_mask;
    std::optional<LabelVolume> pathology;
};

/// All longitudinal scans of one patient, ordered by acquisition day.
struct Study {
    std::string patient_id;
    std::vector<Timepoint> timepoints;

    void validate() const {
        LONGCT_REQUIRE(timepoints.size() >= 2,
                       "Study '" + patient_id +
                           "': longitudinal studies need at least 2 timepoints");
        LONGCT_REQUIRE(timepoints.front().acquisition_day == 0,
                       "Study '" + patient_id + "': first acquisition_day must be 0");
        for (size_t i = 1; i < timepoints.size(); ++i)
            LONGCT_REQUIRE(
                timepoints[i].acquisition_day > timepoints[i - 1].acquisition_day,
                "Study '" + patient_id +
                    "': acquisition days must be strictly ascending");
    }
};

/// Consecutive (reference, follow-up) timepoint pairs: (t_i, t_{i+1}) for
/// i = 0..n-2, in order. Throws for non-longitudinal studies.
inline std::vector<std::pair<const Timepoint*, const Timepoint*>>
consecutive_pairs(const Study& study) {
    LONGCT_REQUIRE(study.timepoints.size() >= 2,
                   "consecutive_pairs: study '" + study.patient_id +
                       "' has fewer than 2 timepoints");
    std::vector<std::pair<const Timepoint*, const Timepoint*>> pairs;
    pairs.reserve(study.timepoints.size() - 1);
    for (size_t i = 0; i + 1 < study.timepoints.size(); ++i)
        pairs.emplace_back(&study.timepoints[i], &study.timepoints[i + 1]);
    return pairs;
}

}  // namespace longct
