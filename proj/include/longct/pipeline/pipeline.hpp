#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "longct/eval/evaluation.hpp"
#include "longct/io/manifest.hpp"
#include "longct/phantom/phantom.hpp"
#include "longct/train/trainer.hpp"
#include "longct/util/hash.hpp"

namespace longct {

/// Full pipeline settings: one nested config per stage plus the global seed.
/// Presets resolve every default; JSON config files override single fields.
struct PipelineConfig {
    std::string preset = "desk";
    uint64_t seed = 1234;
    std::string out_root = "out";
    bool save_probabilities = false;
    bool save_plots = false;

    PhantomConfig phantom;
    PreprocessConfig preprocess;
    RegistrationConfig registration;
    ModelConfig model;  // longitudinal; the static baseline derives from it
    TrainConfig train;

    /// Desk preset: everything sized so the full pipeline runs on a laptop
    /// CPU. Phantom grids are 64^3 and training subsamples slices.
    static PipelineConfig desk() {
        PipelineConfig c;
        c.preset = "desk";
        c.phantom.grid_size = 64;
        c.phantom.n_studies = 14;
        c.phantom.n_train = 8;
        c.phantom.n_val = 2;
        c.phantom.n_test = 4;
        c.preprocess.target_size = 64;
        c.train.batch_size = 8;
        c.train.slice_stride = 2;
        return c;
    }

    /// Paper-scale preset: the published preprocessing/training constants
    /// (300^3 grids, 12/4/22 patient split). Intended for users with real
    /// data or large compute; not exercised by the test suite.
    static PipelineConfig paper_scale() {
        PipelineConfig c;
        c.preset = "paper-scale";
        c.phantom.grid_size = 128;
        c.phantom.n_studies = 38;
        c.phantom.n_train = 12;
        c.phantom.n_val = 4;
        c.phantom.n_test = 22;
        c.preprocess.target_size = 300;
        c.train.batch_size = 8;
        c.train.slice_stride = 1;
        return c;
    }

    static PipelineConfig from_preset(const std::string& name) {
        if (name == "desk") return desk();
        if (name == "paper-scale") return paper_scale();
        throw Error("unknown preset: " + name + " (expected desk or paper-scale)");
    }

    /// Derive per-stage seeds from the global seed and build the static
    /// variant of the model config.
    void resolve() {
        phantom.seed = hash_combine(seed, 0x706861ULL);
        train.seed = hash_combine(seed, 0x747261ULL);
        model.variant = ModelConfig::Variant::Longitudinal;
        model.in_channels = 2;
        train.empty_eps = preprocess.empty_eps;
    }

    ModelConfig static_model() const {
        ModelConfig m = model;
        m.variant = ModelConfig::Variant::Static;
        m.in_channels = 1;
        return m;
    }

    uint64_t model_init_seed(bool longitudinal) const {
        return hash_combine(seed, longitudinal ? 0x6c6f6eULL : 0x737461ULL);
    }

    void validate() const {
        phantom.validate();
        preprocess.validate();
        registration.validate();
        model.validate();
        train.validate();
        LONGCT_REQUIRE(!out_root.empty(), "PipelineConfig: out_root is empty");
    }
};

// --- JSON round trip (partial configs override preset defaults) -----------

inline nlohmann::ordered_json pipeline_config_to_json(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["preset"] = c.preset;
    j["seed"] = c.seed;
    j["out_root"] = c.out_root;
    j["save_probabilities"] = c.save_probabilities;
    j["save_plots"] = c.save_plots;
    j["phantom"] = {{"grid_size", c.phantom.grid_size},
                    {"n_studies", c.phantom.n_studies},
                    {"n_train", c.phantom.n_train},
                    {"n_val", c.phantom.n_val},
                    {"n_test", c.phantom.n_test},
                    {"timepoints_per_study", c.phantom.timepoints_per_study},
                    {"lesion_count_min", c.phantom.lesion_count_min},
                    {"lesion_count_max", c.phantom.lesion_count_max},
                    {"ggo_rate_min", c.phantom.ggo_rate_min},
                    {"ggo_rate_max", c.phantom.ggo_rate_max},
                    {"cons_rate_min", c.phantom.cons_rate_min},
                    {"cons_rate_max", c.phantom.cons_rate_max},
                    {"pleff_rate_min", c.phantom.pleff_rate_min},
                    {"pleff_rate_max", c.phantom.pleff_rate_max},
                    {"deform_amplitude", c.phantom.deform_amplitude},
                    {"deform_max_freq", c.phantom.deform_max_freq},
                    {"deform_modes", c.phantom.deform_modes},
                    {"noise_sigma", c.phantom.noise_sigma},
                    {"spacing_mm", c.phantom.spacing_mm}};
    j["preprocess"] = {{"clip_lo", c.preprocess.clip_lo},
                       {"clip_hi", c.preprocess.clip_hi},
                       {"target_size", c.preprocess.target_size},
                       {"empty_eps", c.preprocess.empty_eps},
                       {"crop_margin", c.preprocess.crop_margin}};
    j["registration"] = {{"control_grid_points", c.registration.control_grid_points},
                         {"pyramid_levels", c.registration.pyramid_levels},
                         {"metric_sigma", c.registration.metric_sigma},
                         {"max_iterations", c.registration.max_iterations},
                         {"convergence_tol", c.registration.convergence_tol}};
    nlohmann::ordered_json mj;
    to_json(mj, c.model);
    j["model"] = mj;
    std::vector<std::string> view_names;
    for (View v : c.train.views) view_names.push_back(view_name(v));
    j["train"] = {{"lr0", c.train.lr0},
                  {"decay_factor", c.train.decay_factor},
                  {"decay_every", c.train.decay_every},
                  {"decay_per_iteration", c.train.decay_per_iteration},
                  {"max_epochs", c.train.max_epochs},
                  {"early_stop_patience", c.train.early_stop_patience},
                  {"batch_size", c.train.batch_size},
                  {"slice_stride", c.train.slice_stride},
                  {"views", view_names}};
    return j;
}

inline void apply_pipeline_json(const nlohmann::json& j, PipelineConfig& c) {
    auto get = [](const nlohmann::json& src, const char* key, auto& dst) {
        if (src.contains(key)) src.at(key).get_to(dst);
    };
    get(j, "seed", c.seed);
    get(j, "out_root", c.out_root);
    get(j, "save_probabilities", c.save_probabilities);
    get(j, "save_plots", c.save_plots);
    if (j.contains("phantom")) {
        const auto& p = j.at("phantom");
        get(p, "grid_size", c.phantom.grid_size);
        get(p, "n_studies", c.phantom.n_studies);
        get(p, "n_train", c.phantom.n_train);
        get(p, "n_val", c.phantom.n_val);
        get(p, "n_test", c.phantom.n_test);
        get(p, "timepoints_per_study", c.phantom.timepoints_per_study);
        get(p, "lesion_count_min", c.phantom.lesion_count_min);
        get(p, "lesion_count_max", c.phantom.lesion_count_max);
        get(p, "ggo_rate_min", c.phantom.ggo_rate_min);
        get(p, "ggo_rate_max", c.phantom.ggo_rate_max);
        get(p, "cons_rate_min", c.phantom.cons_rate_min);
        get(p, "cons_rate_max", c.phantom.cons_rate_max);
        get(p, "pleff_rate_min", c.phantom.pleff_rate_min);
        get(p, "pleff_rate_max", c.phantom.pleff_rate_max);
        get(p, "deform_amplitude", c.phantom.deform_amplitude);
        get(p, "deform_max_freq", c.phantom.deform_max_freq);
        get(p, "deform_modes", c.phantom.deform_modes);
        get(p, "noise_sigma", c.phantom.noise_sigma);
        get(p, "spacing_mm", c.phantom.spacing_mm);
    }
    if (j.contains("preprocess")) {
        const auto& p = j.at("preprocess");
        get(p, "clip_lo", c.preprocess.clip_lo);
        get(p, "clip_hi", c.preprocess.clip_hi);
        get(p, "target_size", c.preprocess.target_size);
        get(p, "empty_eps", c.preprocess.empty_eps);
        get(p, "crop_margin", c.preprocess.crop_margin);
    }
    if (j.contains("registration")) {
        const auto& p = j.at("registration");
        get(p, "control_grid_points", c.registration.control_grid_points);
        get(p, "pyramid_levels", c.registration.pyramid_levels);
        get(p, "metric_sigma", c.registration.metric_sigma);
        get(p, "max_iterations", c.registration.max_iterations);
        get(p, "convergence_tol", c.registration.convergence_tol);
    }
    if (j.contains("model")) {
        const auto& p = j.at("model");
        get(p, "n_classes", c.model.n_classes);
        get(p, "first_conv_filters", c.model.first_conv_filters);
        get(p, "growth_rate", c.model.growth_rate);
        get(p, "down_blocks", c.model.down_blocks);
        get(p, "up_blocks", c.model.up_blocks);
        get(p, "bottleneck_layers", c.model.bottleneck_layers);
        get(p, "dropout", c.model.dropout);
    }
    if (j.contains("train")) {
        const auto& p = j.at("train");
        get(p, "lr0", c.train.lr0);
        get(p, "decay_factor", c.train.decay_factor);
        get(p, "decay_every", c.train.decay_every);
        get(p, "decay_per_iteration", c.train.decay_per_iteration);
        get(p, "max_epochs", c.train.max_epochs);
        get(p, "early_stop_patience", c.train.early_stop_patience);
        get(p, "batch_size", c.train.batch_size);
        get(p, "slice_stride", c.train.slice_stride);
        if (p.contains("views")) {
            c.train.views.clear();
            for (const auto& vn : p.at("views")) {
                const std::string name = vn.get<std::string>();
                if (name == "axial") c.train.views.push_back(View::Axial);
                else if (name == "coronal") c.train.views.push_back(View::Coronal);
                else if (name == "sagittal") c.train.views.push_back(View::Sagittal);
                else throw Error("unknown view in config: " + name);
            }
        }
    }
}

/// Load a pipeline config: preset defaults, then JSON overrides, then the
/// explicit seed/out overrides used by the CLI.
inline PipelineConfig load_pipeline_config(const std::string& config_path,
                                           const std::string& preset) {
    PipelineConfig c = PipelineConfig::from_preset(preset);
    if (!config_path.empty()) {
        const nlohmann::json j = load_json(config_path);
        if (j.contains("preset") &&
            j.at("preset").get<std::string>() != c.preset)
            c = PipelineConfig::from_preset(j.at("preset").get<std::string>());
        apply_pipeline_json(j, c);
    }
    return c;
}

/// Structured version/build record.
inline nlohmann::ordered_json version_info(const std::string& preset = "desk") {
    return {{"version", kVersion},
            {"checkpoint_format_version", kCheckpointFormatVersion},
            {"transform_format_version", kTransformFormatVersion},
            {"preset", preset}};
}

// --------------------------------------------------------------------------
// pair manifests shared by the stages and the CLI
// --------------------------------------------------------------------------

struct PairEntry {
    std::string patient_id;
    int pair_index = 0;
    std::string split;  // train / val / test
    int day0 = 0, day1 = 0;
    std::map<std::string, std::string> files;  // role -> path relative to manifest
};

inline void save_pair_manifest(const std::string& path,
                               const std::vector<PairEntry>& pairs) {
    nlohmann::ordered_json j;
    j["pairs"] = nlohmann::ordered_json::array();
    for (const auto& p : pairs)
        j["pairs"].push_back({{"patient_id", p.patient_id},
                              {"pair_index", p.pair_index},
                              {"split", p.split},
                              {"day0", p.day0},
                              {"day1", p.day1},
                              {"files", p.files}});
    save_json(path, j);
}

inline std::vector<PairEntry> load_pair_manifest(const std::string& path) {
    const nlohmann::json j = load_json(path);
    std::vector<PairEntry> out;
    for (const auto& pj : j.at("pairs")) {
        PairEntry p;
        p.patient_id = pj.at("patient_id").get<std::string>();
        p.pair_index = pj.at("pair_index").get<int>();
        p.split = pj.at("split").get<std::string>();
        p.day0 = pj.at("day0").get<int>();
        p.day1 = pj.at("day1").get<int>();
        p.files = pj.at("files").get<std::map<std::string, std::string>>();
        out.push_back(p);
    }
    return out;
}

inline std::string resolve_rel(const std::string& manifest_path,
                               const std::string& rel) {
    fs::path p(rel);
    if (p.is_absolute()) return p.lexically_normal().string();
    return (fs::path(manifest_path).parent_path() / p).lexically_normal().string();
}

/// Materialize a registered pair from a registered-pairs manifest entry.
inline RegisteredPair load_registered_pair(const std::string& manifest_path,
                                           const PairEntry& e) {
    RegisteredPair p;
    p.patient_id = e.patient_id;
    p.pair_index = e.pair_index;
    p.x0_reg = load_volume(resolve_rel(manifest_path, e.files.at("x0_reg")));
    p.x1 = load_volume(resolve_rel(manifest_path, e.files.at("x1")));
    p.lung0_reg = load_labels(resolve_rel(manifest_path, e.files.at("lung0_reg")));
    p.lung1 = load_labels(resolve_rel(manifest_path, e.files.at("lung1")));
    if (e.files.count("y0_reg"))
        p.y0_reg = load_labels(resolve_rel(manifest_path, e.files.at("y0_reg")));
    if (e.files.count("y1"))
        p.y1 = load_labels(resolve_rel(manifest_path, e.files.at("y1")));
    if (e.files.count("transform"))
        p.transform = load_transform(resolve_rel(manifest_path, e.files.at("transform")));
    return p;
}

// --------------------------------------------------------------------------
// stage framework: config-fingerprinted, content-addressed caching
// --------------------------------------------------------------------------

class StageRunner {
public:
    StageRunner(const std::string& out_root, bool verbose = true)
        : root_(out_root), verbose_(verbose) {
        fs::create_directories(root_);
    }

    /// Run (or skip) one stage. `fn` receives the stage directory and
    /// returns the produced artifact files relative to it. A stage is
    /// skipped when nothing upstream ran, its fingerprint matches and every
    /// recorded artifact hash still matches the files on disk.
    void run_stage(const std::string& name, const std::string& fingerprint,
                   const std::function<std::vector<std::string>(const fs::path&)>& fn) {
        const fs::path dir = root_ / name;
        const fs::path manifest = dir / "stage.json";
        if (!upstream_ran_ && cache_valid(manifest, fingerprint)) {
            if (verbose_) std::cout << "[" << name << "] cached, skipping\n";
            collect_outputs(name, manifest);
            return;
        }
        if (verbose_) std::cout << "[" << name << "] running\n";
        upstream_ran_ = true;
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::vector<std::string> outputs;
        try {
            outputs = fn(dir);
        } catch (const std::exception& e) {
            std::ofstream marker(dir / "FAILED");
            marker << e.what() << "\n";
            throw Error("stage " + name + " failed: " + e.what());
        }
        nlohmann::ordered_json j;
        j["stage"] = name;
        j["fingerprint"] = fingerprint;
        j["outputs"] = nlohmann::ordered_json::object();
        for (const auto& rel : outputs)
            j["outputs"][rel] = hash_file((dir / rel).string());
        save_json(manifest.string(), j);
        collect_outputs(name, manifest);
    }

    /// Hash of one stage's recorded outputs, for downstream fingerprints.
    std::string outputs_digest(const std::string& name) const {
        auto it = stage_outputs_.find(name);
        if (it == stage_outputs_.end()) return "none";
        Fnv64 h;
        for (const auto& [rel, hash] : it->second) h.update(rel).update(hash);
        return h.hex();
    }

    const std::map<std::string, std::string>& outputs(const std::string& name) const {
        static const std::map<std::string, std::string> empty;
        auto it = stage_outputs_.find(name);
        return it == stage_outputs_.end() ? empty : it->second;
    }

    /// Merged path -> hash map of every stage artifact (relative to root).
    nlohmann::ordered_json artifact_manifest() const {
        nlohmann::ordered_json j;
        for (const auto& [stage, outs] : stage_outputs_)
            for (const auto& [rel, hash] : outs) j[stage + "/" + rel] = hash;
        return j;
    }

    const fs::path& root() const { return root_; }
    bool anything_ran() const { return upstream_ran_; }

private:
    bool cache_valid(const fs::path& manifest, const std::string& fingerprint) const {
        if (!fs::exists(manifest)) return false;
        nlohmann::json j;
        try {
            j = load_json(manifest.string());
        } catch (...) {
            return false;
        }
        if (!j.contains("fingerprint") ||
            j.at("fingerprint").get<std::string>() != fingerprint)
            return false;
        const fs::path dir = manifest.parent_path();
        for (const auto& [rel, hash] : j.at("outputs").items()) {
            const fs::path f = dir / rel;
            if (!fs::exists(f)) return false;
            if (hash_file(f.string()) != hash.get<std::string>()) return false;
        }
        return true;
    }

    void collect_outputs(const std::string& name, const fs::path& manifest) {
        const nlohmann::json j = load_json(manifest.string());
        std::map<std::string, std::string> outs;
        for (const auto& [rel, hash] : j.at("outputs").items())
            outs[rel] = hash.get<std::string>();
        stage_outputs_[name] = std::move(outs);
    }

    fs::path root_;
    bool verbose_;
    bool upstream_ran_ = false;
    std::map<std::string, std::map<std::string, std::string>> stage_outputs_;
};

// --------------------------------------------------------------------------
// stage implementations (also used standalone by the CLI subcommands)
// --------------------------------------------------------------------------

/// Generate the phantom dataset into a directory; returns artifact paths.
inline std::vector<std::string> write_phantom_dataset(const PhantomConfig& cfg,
                                                      const fs::path& dir) {
    cfg.validate();
    std::vector<std::string> outputs;
    DatasetManifest manifest;
    for (int i = 0; i < cfg.n_studies; ++i) {
        const PhantomStudy ps = generate_study(cfg, i);
        StudyManifest sm;
        sm.patient_id = ps.study.patient_id;
        for (const auto& tp : ps.study.timepoints) {
            const std::string stem =
                ps.study.patient_id + "_t" + std::to_string(tp.timepoint_index);
            TimepointEntry te;
            te.timepoint_index = tp.timepoint_index;
            te.acquisition_day = tp.acquisition_day;
            te.ct = stem + "_ct.nii";
            te.lung_mask = stem + "_lung.nii";
            te.pathology = stem + "_path.nii";
            te.meta = tp.ct.meta;
            save_volume((dir / te.ct).string(), tp.ct, VolumeDType::Int16);
            save_labels((dir / te.lung_mask).string(), tp.lung_mask);
            save_labels((dir / te.pathology).string(), *tp.pathology);
            outputs.push_back(te.ct);
            outputs.push_back(te.lung_mask);
            outputs.push_back(te.pathology);
            sm.timepoints.push_back(te);
        }
        for (size_t k = 0; k < ps.gt_displacements.size(); ++k) {
            const std::string f =
                ps.study.patient_id + "_u" + std::to_string(k) + ".nii";
            save_vector_field((dir / f).string(), ps.gt_displacements[k].geom,
                              ps.gt_displacements[k].u);
            outputs.push_back(f);
        }
        manifest.studies.push_back(std::move(sm));
    }
    manifest.splits = phantom_splits(cfg);
    save_dataset_manifest((dir / "dataset.json").string(), manifest);
    outputs.push_back("dataset.json");
    return outputs;
}

/// Preprocess every consecutive pair of every study in a dataset manifest.
inline std::vector<std::string> write_preprocessed_pairs(
    const std::string& dataset_manifest_path, const PreprocessConfig& cfg,
    const fs::path& dir) {
    cfg.validate();
    // Accept either a dataset manifest or a single-study manifest.
    DatasetManifest ds;
    {
        const nlohmann::json j = load_json(dataset_manifest_path);
        if (j.contains("studies")) ds = load_dataset_manifest(dataset_manifest_path);
        else ds.studies.push_back(study_manifest_from_json(j));
    }
    const std::string base =
        fs::path(dataset_manifest_path).parent_path().string();
    auto split_of = [&](const std::string& pid) -> std::string {
        for (const auto& [split, ids] : ds.splits)
            for (const auto& id : ids)
                if (id == pid) return split;
        return "unsplit";
    };

    std::vector<std::string> outputs;
    std::vector<PairEntry> entries;
    for (const auto& sm : ds.studies) {
        const Study study = load_study(sm, base);
        const auto pairs = consecutive_pairs(study);
        for (size_t k = 0; k < pairs.size(); ++k) {
            const ProcessedPair pp =
                preprocess_pair(*pairs[k].first, *pairs[k].second, cfg);
            const std::string stem = study.patient_id + "_p" + std::to_string(k);
            PairEntry e;
            e.patient_id = study.patient_id;
            e.pair_index = static_cast<int>(k);
            e.split = split_of(study.patient_id);
            e.day0 = pairs[k].first->acquisition_day;
            e.day1 = pairs[k].second->acquisition_day;
            auto put_vol = [&](const std::string& role, const Volume3D& v) {
                const std::string f = stem + "_" + role + ".nii";
                save_volume((dir / f).string(), v, VolumeDType::Float32);
                e.files[role] = f;
                outputs.push_back(f);
            };
            auto put_lab = [&](const std::string& role, const LabelVolume& v) {
                const std::string f = stem + "_" + role + ".nii";
                save_labels((dir / f).string(), v);
                e.files[role] = f;
                outputs.push_back(f);
            };
            put_vol("ct0", pp.ct0);
            put_vol("ct1", pp.ct1);
            put_lab("lung0", pp.lung0);
            put_lab("lung1", pp.lung1);
            if (pp.path0) put_lab("path0", *pp.path0);
            if (pp.path1) put_lab("path1", *pp.path1);
            entries.push_back(std::move(e));
        }
    }
    save_pair_manifest((dir / "pairs.json").string(), entries);
    outputs.push_back("pairs.json");
    return outputs;
}

/// Register every preprocessed pair and write the registered volumes.
inline std::vector<std::string> write_registered_pairs(
    const std::string& pairs_manifest_path, const RegistrationConfig& cfg,
    const fs::path& dir) {
    cfg.validate();
    const auto entries = load_pair_manifest(pairs_manifest_path);
    std::vector<std::string> outputs;
    std::vector<PairEntry> reg_entries;
    for (const auto& e : entries) {
        ProcessedPair pp;
        pp.patient_id = e.patient_id;
        pp.pair_index = e.pair_index;
        pp.ct0 = load_volume(resolve_rel(pairs_manifest_path, e.files.at("ct0")));
        pp.ct1 = load_volume(resolve_rel(pairs_manifest_path, e.files.at("ct1")));
        pp.lung0 = load_labels(resolve_rel(pairs_manifest_path, e.files.at("lung0")));
        pp.lung1 = load_labels(resolve_rel(pairs_manifest_path, e.files.at("lung1")));
        if (e.files.count("path0"))
            pp.path0 = load_labels(resolve_rel(pairs_manifest_path, e.files.at("path0")));
        if (e.files.count("path1"))
            pp.path1 = load_labels(resolve_rel(pairs_manifest_path, e.files.at("path1")));

        const RegisteredPair rp = register_pair(pp, cfg);
        const std::string stem = e.patient_id + "_p" + std::to_string(e.pair_index);
        PairEntry re = e;
        re.files.clear();
        auto put = [&](const std::string& role, const std::string& f) {
            re.files[role] = f;
            outputs.push_back(f);
        };
        save_transform((dir / (stem + "_transform.lbsp")).string(), rp.transform);
        put("transform", stem + "_transform.lbsp");
        save_volume((dir / (stem + "_x0reg.nii")).string(), rp.x0_reg,
                    VolumeDType::Float32);
        put("x0_reg", stem + "_x0reg.nii");
        save_volume((dir / (stem + "_x1.nii")).string(), rp.x1, VolumeDType::Float32);
        put("x1", stem + "_x1.nii");
        save_labels((dir / (stem + "_lung0reg.nii")).string(), rp.lung0_reg);
        put("lung0_reg", stem + "_lung0reg.nii");
        save_labels((dir / (stem + "_lung1.nii")).string(), rp.lung1);
        put("lung1", stem + "_lung1.nii");
        if (rp.y0_reg) {
            save_labels((dir / (stem + "_y0reg.nii")).string(), *rp.y0_reg);
            put("y0_reg", stem + "_y0reg.nii");
        }
        if (rp.y1) {
            save_labels((dir / (stem + "_y1.nii")).string(), *rp.y1);
            put("y1", stem + "_y1.nii");
        }
        reg_entries.push_back(std::move(re));
    }
    save_pair_manifest((dir / "registered.json").string(), reg_entries);
    outputs.push_back("registered.json");
    return outputs;
}

inline std::vector<RegisteredPair> load_split_pairs(const std::string& manifest_path,
                                                    const std::string& split) {
    std::vector<RegisteredPair> out;
    for (const auto& e : load_pair_manifest(manifest_path))
        if (split.empty() || e.split == split)
            out.push_back(load_registered_pair(manifest_path, e));
    return out;
}

struct PipelineResult {
    int exit_code = 0;
    std::string failed_stage;
    std::string message;
};

/// Execute the full pipeline: phantom -> preprocess -> register -> train
/// (longitudinal + static) -> infer -> progress -> evaluate. Stages are
/// skipped when their fingerprint and artifacts are intact; once a stage
/// runs, every downstream stage runs too.
inline PipelineResult run_pipeline(PipelineConfig cfg, bool verbose = true) {
    cfg.resolve();
    cfg.validate();
    StageRunner runner(cfg.out_root, verbose);
    const nlohmann::ordered_json cfg_json = pipeline_config_to_json(cfg);
    auto fingerprint = [&](const std::string& section,
                           const std::vector<std::string>& upstream) {
        Fnv64 h;
        h.update(section);
        h.update(cfg_json.dump());
        for (const auto& u : upstream) h.update(runner.outputs_digest(u));
        return h.hex();
    };

    std::string current;
    try {
        current = "phantom";
        runner.run_stage("phantom", fingerprint("phantom", {}), [&](const fs::path& dir) {
            return write_phantom_dataset(cfg.phantom, dir);
        });

        current = "preprocess";
        runner.run_stage(
            "preprocess", fingerprint("preprocess", {"phantom"}),
            [&](const fs::path& dir) {
                return write_preprocessed_pairs(
                    (runner.root() / "phantom" / "dataset.json").string(),
                    cfg.preprocess, dir);
            });

        current = "register";
        runner.run_stage(
            "register", fingerprint("register", {"preprocess"}),
            [&](const fs::path& dir) {
                return write_registered_pairs(
                    (runner.root() / "preprocess" / "pairs.json").string(),
                    cfg.registration, dir);
            });

        const std::string reg_manifest =
            (runner.root() / "register" / "registered.json").string();

        current = "train";
        runner.run_stage("train", fingerprint("train", {"register"}), [&](const fs::path& dir) {
            const auto train_pairs = load_split_pairs(reg_manifest, "train");
            const auto val_pairs = load_split_pairs(reg_manifest, "val");
            std::vector<std::string> outputs;
            for (const bool longitudinal : {true, false}) {
                const ModelConfig mc =
                    longitudinal ? cfg.model : cfg.static_model();
                FCDenseNet<float> model(mc, cfg.model_init_seed(longitudinal));
                if (verbose)
                    std::cout << "  training " << mc.variant_name() << " ("
                              << model.count_parameters() << " parameters)\n";
                const TrainHistory hist = train(model, train_pairs, val_pairs,
                                                cfg.train, dir.string(), verbose);
                const std::string ckpt = std::string(mc.variant_name()) + ".ckpt";
                save_checkpoint((dir / ckpt).string(), model);
                outputs.push_back(ckpt);
                // History carries wall-clock times; logged, not hashed.
                save_json((dir / (std::string(mc.variant_name()) + "_history.json"))
                              .string(),
                          history_to_json(hist));
            }
            return outputs;
        });

        current = "infer";
        runner.run_stage("infer", fingerprint("infer", {"register", "train"}), [&](const fs::path& dir) {
            const auto test_pairs = load_split_pairs(reg_manifest, "test");
            std::vector<std::string> outputs;
            for (const char* variant : {"longitudinal", "static"}) {
                FCDenseNet<float> model = load_checkpoint<float>(
                    (runner.root() / "train" / (std::string(variant) + ".ckpt"))
                        .string());
                for (const auto& pair : test_pairs) {
                    const SegmentedPair seg = segment_pair(
                        model, pair, cfg.preprocess.empty_eps, cfg.train.batch_size);
                    const std::string stem = pair.patient_id + "_p" +
                                             std::to_string(pair.pair_index) + "_" +
                                             variant;
                    save_labels((dir / (stem + "_seg0.nii")).string(), seg.seg0);
                    save_labels((dir / (stem + "_seg1.nii")).string(), seg.seg1);
                    outputs.push_back(stem + "_seg0.nii");
                    outputs.push_back(stem + "_seg1.nii");
                    if (cfg.save_probabilities) {
                        save_probability_volume((dir / (stem + "_prob0.nii")).string(),
                                                seg.prob0);
                        save_probability_volume((dir / (stem + "_prob1.nii")).string(),
                                                seg.prob1);
                        outputs.push_back(stem + "_prob0.nii");
                        outputs.push_back(stem + "_prob1.nii");
                    }
                }
            }
            return outputs;
        });

        current = "progress";
        runner.run_stage("progress", fingerprint("progress", {"infer"}), [&](const fs::path& dir) {
            const auto entries = load_pair_manifest(reg_manifest);
            std::vector<std::string> outputs;
            std::vector<ProgressionReport> reports;
            for (const auto& e : entries) {
                if (e.split != "test") continue;
                const std::string stem =
                    e.patient_id + "_p" + std::to_string(e.pair_index);
                const LabelVolume seg0 = load_labels(
                    (runner.root() / "infer" / (stem + "_longitudinal_seg0.nii"))
                        .string());
                const LabelVolume seg1 = load_labels(
                    (runner.root() / "infer" / (stem + "_longitudinal_seg1.nii"))
                        .string());
                ProgressionMap map;
                ProgressionReport r = analyze_progression(seg0, seg1, &map);
                r.patient_id = e.patient_id;
                r.pair_index = e.pair_index;
                save_progression_map((dir / (stem + "_prog.nii")).string(), map);
                outputs.push_back(stem + "_prog.nii");
                reports.push_back(std::move(r));
            }
            nlohmann::ordered_json rj = nlohmann::ordered_json::array();
            for (const auto& r : reports) rj.push_back(report_to_json(r));
            save_json((dir / "reports.json").string(), rj);
            outputs.push_back("reports.json");
            std::ofstream table(dir / "reports.txt");
            table << report_table(reports);
            table.close();
            outputs.push_back("reports.txt");
            return outputs;
        });

        current = "evaluate";
        runner.run_stage("evaluate", fingerprint("evaluate", {"register", "infer"}), [&](const fs::path& dir) {
            const auto entries = load_pair_manifest(reg_manifest);
            std::vector<std::string> outputs;
            std::map<std::string, EvalResult> results;
            for (const char* variant : {"longitudinal", "static"}) {
                EvalResult result;
                result.variant = variant;
                for (const auto& e : entries) {
                    if (e.split != "test") continue;
                    const RegisteredPair pair = load_registered_pair(reg_manifest, e);
                    const std::string stem =
                        e.patient_id + "_p" + std::to_string(e.pair_index) + "_" +
                        variant;
                    SegmentedPair seg;
                    seg.seg0 =
                        load_labels((runner.root() / "infer" / (stem + "_seg0.nii")).string());
                    seg.seg1 =
                        load_labels((runner.root() / "infer" / (stem + "_seg1.nii")).string());
                    result.pairs.push_back(evaluate_pair(seg, pair));
                    if (cfg.save_plots && std::string(variant) == "longitudinal") {
                        const auto curve =
                            per_slice_dice(seg.seg1, *pair.y1, ClassMap::kConsolidation);
                        const std::string svg = stem + "_cons_dice.svg";
                        std::ofstream f(dir / svg);
                        f << dice_curve_svg(curve, stem + " per-slice CONS Dice");
                        outputs.push_back(svg);
                    }
                }
                eval_detail::finalize(result);
                const std::string jf = std::string("eval_") + variant + ".json";
                save_json((dir / jf).string(), eval_to_json(result));
                outputs.push_back(jf);
                std::ofstream tf(dir / (std::string("eval_") + variant + ".txt"));
                tf << eval_table(result);
                tf.close();
                outputs.push_back(std::string("eval_") + variant + ".txt");
                results[variant] = std::move(result);
            }
            nlohmann::ordered_json cmp;
            const double lc = results["longitudinal"].mean_dice_for(ClassMap::kConsolidation);
            const double sc = results["static"].mean_dice_for(ClassMap::kConsolidation);
            cmp["longitudinal_mean_cons_dice"] = lc;
            cmp["static_mean_cons_dice"] = sc;
            cmp["longitudinal_beats_static"] = lc >= sc;
            save_json((dir / "comparison.json").string(), cmp);
            outputs.push_back("comparison.json");
            return outputs;
        });

        save_json((runner.root() / "artifacts.json").string(),
                  runner.artifact_manifest());
    } catch (const std::exception& e) {
        PipelineResult r;
        r.exit_code = 3;
        r.failed_stage = current;
        r.message = e.what();
        return r;
    }
    return {};
}

}  // namespace longct
