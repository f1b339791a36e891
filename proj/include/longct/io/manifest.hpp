#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "longct/core/study.hpp"
#include "longct/io/nifti.hpp"

namespace longct {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open JSON file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

inline void save_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open JSON file for writing: " + path);
    out << j.dump(2) << "\n";
}

/// File locations of one timepoint; paths are relative to the manifest file.
struct TimepointEntry {
    int timepoint_index = 0;
    int acquisition_day = 0;
    std::string ct;
    std::string lung_mask;
    std::string pathology;  // empty when not annotated
    std::map<std::string, std::string> meta;
};

struct StudyManifest {
    std::string patient_id;
    std::vector<TimepointEntry> timepoints;
};

/// Dataset manifest: all studies plus disjoint patient-level splits.
struct DatasetManifest {
    std::vector<StudyManifest> studies;
    std::map<std::string, std::vector<std::string>> splits;

    const StudyManifest& find(const std::string& patient_id) const {
        for (const auto& s : studies)
            if (s.patient_id == patient_id) return s;
        throw Error("patient not in manifest: " + patient_id);
    }
};

inline json to_json(const StudyManifest& m) {
    json j;
    j["patient_id"] = m.patient_id;
    j["timepoints"] = json::array();
    for (const auto& t : m.timepoints) {
        json tj;
        tj["timepoint_index"] = t.timepoint_index;
        tj["acquisition_day"] = t.acquisition_day;
        tj["ct"] = t.ct;
        tj["lung_mask"] = t.lung_mask;
        if (!t.pathology.empty()) tj["pathology"] = t.pathology;
        if (!t.meta.empty()) tj["meta"] = t.meta;
        j["timepoints"].push_back(tj);
    }
    return j;
}

inline StudyManifest study_manifest_from_json(const json& j) {
    StudyManifest m;
    m.patient_id = j.at("patient_id").get<std::string>();
    for (const auto& tj : j.at("timepoints")) {
        TimepointEntry t;
        t.timepoint_index = tj.at("timepoint_index").get<int>();
        t.acquisition_day = tj.at("acquisition_day").get<int>();
        t.ct = tj.at("ct").get<std::string>();
        t.lung_mask = tj.at("lung_mask").get<std::string>();
        if (tj.contains("pathology")) t.pathology = tj.at("pathology").get<std::string>();
        if (tj.contains("meta"))
            t.meta = tj.at("meta").get<std::map<std::string, std::string>>();
        m.timepoints.push_back(t);
    }
    return m;
}

inline void save_dataset_manifest(const std::string& path, const DatasetManifest& d) {
    json j;
    j["studies"] = json::array();
    for (const auto& s : d.studies) j["studies"].push_back(to_json(s));
    j["splits"] = d.splits;
    save_json(path, j);
}

inline DatasetManifest load_dataset_manifest(const std::string& path) {
    json j = load_json(path);
    DatasetManifest d;
    for (const auto& sj : j.at("studies"))
        d.studies.push_back(study_manifest_from_json(sj));
    if (j.contains("splits"))
        d.splits = j.at("splits")
                       .get<std::map<std::string, std::vector<std::string>>>();
    return d;
}

/// Materialize a study from its manifest; relative paths resolve against
/// base_dir (normally the manifest file's directory).
inline Study load_study(const StudyManifest& m, const std::string& base_dir) {
    auto resolve = [&](const std::string& p) {
        fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (fs::path(base_dir) / fp).string();
    };
    Study s;
    s.patient_id = m.patient_id;
    for (const auto& te : m.timepoints) {
        Timepoint tp;
        tp.timepoint_index = te.timepoint_index;
        tp.acquisition_day = te.acquisition_day;
        tp.ct = load_volume(resolve(te.ct));
        tp.ct.meta = te.meta;
        tp.lung_mask = load_labels(resolve(te.lung_mask));
        if (!te.pathology.empty()) tp.pathology = load_labels(resolve(te.pathology));
        s.timepoints.push_back(std::move(tp));
    }
    s.validate();
    return s;
}

}  // namespace longct
