// Command-line front end for the longitudinal CT analysis pipeline.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "longct/pipeline/pipeline.hpp"

namespace {

using namespace longct;

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitStageFailure = 3;

struct CommonOpts {
    std::string config_path;
    std::string preset = "desk";
    uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file (overrides preset)");
    cmd->add_option("--preset", o.preset, "Configuration preset (desk|paper-scale)");
    cmd->add_option("--seed", o.seed, "Global seed override")
        ->each([&o](const std::string&) { o.seed_set = true; });
}

PipelineConfig resolve_config(const CommonOpts& o) {
    PipelineConfig cfg = load_pipeline_config(o.config_path, o.preset);
    if (o.seed_set) cfg.seed = o.seed;
    cfg.resolve();
    return cfg;
}

/// Only CPU execution is implemented; the device hook exists for parity
/// with accelerator-aware deployments.
void check_device() {
    const char* dev = std::getenv("LONGCT_DEVICE");
    if (dev && std::string(dev) != "" && std::string(dev) != "cpu")
        throw Error(std::string("LONGCT_DEVICE=") + dev +
                    " is not available in this build (only cpu)");
}

struct TimepointFiles {
    Volume3D ct;
    LabelVolume lung;
    std::optional<LabelVolume> path;
};

TimepointFiles load_prefix(const std::string& prefix) {
    TimepointFiles t;
    t.ct = load_volume(prefix + "_ct.nii");
    t.lung = load_labels(prefix + "_lung.nii");
    if (fs::exists(prefix + "_path.nii")) t.path = load_labels(prefix + "_path.nii");
    return t;
}

std::pair<std::string, std::string> split_pair_arg(const std::string& arg) {
    const auto comma = arg.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 >= arg.size())
        throw Error("--pair expects two comma-separated prefixes, got: " + arg);
    return {arg.substr(0, comma), arg.substr(comma + 1)};
}

int run_cli(int argc, char** argv) {
    CLI::App app{"longct: longitudinal chest-CT registration, segmentation and "
                 "progression analysis"};
    app.require_subcommand(1);

    // phantom
    auto* cmd_phantom = app.add_subcommand("phantom", "Generate a synthetic dataset");
    CommonOpts phantom_opts;
    std::string phantom_out;
    add_common(cmd_phantom, phantom_opts);
    cmd_phantom->add_option("--out", phantom_out, "Output directory")->required();

    // preprocess
    auto* cmd_pre = app.add_subcommand("preprocess", "Preprocess all study pairs");
    CommonOpts pre_opts;
    std::string pre_manifest, pre_out;
    add_common(cmd_pre, pre_opts);
    cmd_pre->add_option("--manifest", pre_manifest, "Dataset manifest JSON")->required();
    cmd_pre->add_option("--out", pre_out, "Output directory")->required();

    // register
    auto* cmd_reg = app.add_subcommand("register", "Register one preprocessed pair");
    CommonOpts reg_opts;
    std::string reg_pair, reg_out;
    add_common(cmd_reg, reg_opts);
    cmd_reg->add_option("--pair", reg_pair,
                        "Reference,follow-up timepoint prefixes (each expands to "
                        "<prefix>_ct.nii, <prefix>_lung.nii[, <prefix>_path.nii])")
        ->required();
    cmd_reg->add_option("--out", reg_out, "Output directory")->required();

    // train
    auto* cmd_train = app.add_subcommand("train", "Train a segmentation model");
    CommonOpts train_opts;
    std::string train_manifest, train_out, train_variant = "longitudinal";
    add_common(cmd_train, train_opts);
    cmd_train->add_option("--manifest", train_manifest, "Registered-pairs manifest JSON")
        ->required();
    cmd_train->add_option("--out", train_out, "Checkpoint directory")->required();
    cmd_train->add_option("--variant", train_variant, "longitudinal|static");

    // infer
    auto* cmd_infer = app.add_subcommand("infer", "Segment one registered pair");
    CommonOpts infer_opts;
    std::string infer_ckpt, infer_pair, infer_out;
    bool infer_probs = false;
    add_common(cmd_infer, infer_opts);
    cmd_infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required();
    cmd_infer->add_option("--pair", infer_pair,
                          "Registered reference,follow-up prefixes")
        ->required();
    cmd_infer->add_option("--out", infer_out, "Output directory")->required();
    cmd_infer->add_flag("--probs", infer_probs, "Also write fused probability volumes");

    // progress
    auto* cmd_prog = app.add_subcommand("progress", "Quantify consolidation change");
    std::string prog_seg0, prog_seg1, prog_out;
    cmd_prog->add_option("--seg0", prog_seg0, "Reference segmentation (registered)")
        ->required();
    cmd_prog->add_option("--seg1", prog_seg1, "Follow-up segmentation")->required();
    cmd_prog->add_option("--out", prog_out, "Output directory")->required();

    // evaluate
    auto* cmd_eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on a manifest");
    CommonOpts eval_opts;
    std::string eval_ckpt, eval_manifest, eval_out, eval_split = "test";
    bool eval_plots = false;
    add_common(cmd_eval, eval_opts);
    cmd_eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
    cmd_eval->add_option("--manifest", eval_manifest, "Registered-pairs manifest JSON")
        ->required();
    cmd_eval->add_option("--out", eval_out, "Report path prefix")->required();
    cmd_eval->add_option("--split", eval_split, "Split to evaluate (default test)");
    cmd_eval->add_flag("--plots", eval_plots, "Emit per-slice Dice curves as SVG");

    // run
    auto* cmd_run = app.add_subcommand("run", "Run the full pipeline");
    CommonOpts run_opts;
    std::string run_out;
    add_common(cmd_run, run_opts);
    cmd_run->add_option("--out", run_out, "Output root (overrides config)");

    // version
    auto* cmd_version = app.add_subcommand("version", "Print version/build info");
    CommonOpts version_opts;
    add_common(cmd_version, version_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            app.exit(e);
            return kExitOk;
        }
        std::cerr << e.what() << "\n";
        return kExitConfigError;
    }

    // Configuration phase: failures here are config errors (exit 2).
    PipelineConfig cfg;
    const CommonOpts* active = nullptr;
    try {
        check_device();
        if (cmd_phantom->parsed()) active = &phantom_opts;
        else if (cmd_pre->parsed()) active = &pre_opts;
        else if (cmd_reg->parsed()) active = &reg_opts;
        else if (cmd_train->parsed()) active = &train_opts;
        else if (cmd_infer->parsed()) active = &infer_opts;
        else if (cmd_eval->parsed()) active = &eval_opts;
        else if (cmd_run->parsed()) active = &run_opts;
        else if (cmd_version->parsed()) active = &version_opts;
        if (active) cfg = resolve_config(*active);
        if (cmd_train->parsed() && train_variant != "longitudinal" &&
            train_variant != "static")
            throw Error("--variant must be longitudinal or static");
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    }

    // Execution phase: failures are stage failures (exit 3).
    try {
        if (cmd_version->parsed()) {
            std::cout << version_info(cfg.preset).dump(2) << "\n";
            return kExitOk;
        }
        if (cmd_phantom->parsed()) {
            fs::create_directories(phantom_out);
            write_phantom_dataset(cfg.phantom, phantom_out);
            std::cout << "wrote phantom dataset to " << phantom_out << "\n";
            return kExitOk;
        }
        if (cmd_pre->parsed()) {
            fs::create_directories(pre_out);
            write_preprocessed_pairs(pre_manifest, cfg.preprocess, pre_out);
            std::cout << "wrote preprocessed pairs to " << pre_out << "\n";
            return kExitOk;
        }
        if (cmd_reg->parsed()) {
            const auto [ref_prefix, fup_prefix] = split_pair_arg(reg_pair);
            const TimepointFiles ref = load_prefix(ref_prefix);
            const TimepointFiles fup = load_prefix(fup_prefix);
            ProcessedPair pp;
            pp.patient_id = fs::path(ref_prefix).filename().string();
            pp.ct0 = ref.ct;
            pp.ct1 = fup.ct;
            pp.lung0 = ref.lung;
            pp.lung1 = fup.lung;
            pp.path0 = ref.path;
            pp.path1 = fup.path;
            const RegisteredPair rp = register_pair(pp, cfg.registration);
            fs::create_directories(reg_out);
            const std::string stem =
                (fs::path(reg_out) / fs::path(ref_prefix).filename()).string();
            save_transform(stem + "_transform.lbsp", rp.transform);
            save_volume(stem + "_reg_t0_ct.nii", rp.x0_reg, VolumeDType::Float32);
            save_labels(stem + "_reg_t0_lung.nii", rp.lung0_reg);
            if (rp.y0_reg) save_labels(stem + "_reg_t0_path.nii", *rp.y0_reg);
            save_volume(stem + "_reg_t1_ct.nii", rp.x1, VolumeDType::Float32);
            save_labels(stem + "_reg_t1_lung.nii", rp.lung1);
            if (rp.y1) save_labels(stem + "_reg_t1_path.nii", *rp.y1);
            std::cout << "registered pair written with prefix " << stem << "\n";
            return kExitOk;
        }
        if (cmd_train->parsed()) {
            const auto train_pairs = load_split_pairs(train_manifest, "train");
            const auto val_pairs = load_split_pairs(train_manifest, "val");
            const bool longitudinal = train_variant == "longitudinal";
            const ModelConfig mc = longitudinal ? cfg.model : cfg.static_model();
            FCDenseNet<float> model(mc, cfg.model_init_seed(longitudinal));
            std::cout << "training " << mc.variant_name() << " model ("
                      << model.count_parameters() << " parameters) on "
                      << train_pairs.size() << " pairs\n";
            fs::create_directories(train_out);
            const TrainHistory hist =
                train(model, train_pairs, val_pairs, cfg.train, train_out);
            const std::string ckpt =
                (fs::path(train_out) / (train_variant + ".ckpt")).string();
            save_checkpoint(ckpt, model);
            save_json((fs::path(train_out) / (train_variant + "_history.json")).string(),
                      history_to_json(hist));
            std::cout << "best epoch " << hist.best_epoch << " (val loss "
                      << hist.best_val << "); checkpoint at " << ckpt << "\n";
            return kExitOk;
        }
        if (cmd_infer->parsed()) {
            const auto [t0_prefix, t1_prefix] = split_pair_arg(infer_pair);
            FCDenseNet<float> model = load_checkpoint<float>(infer_ckpt);
            RegisteredPair pair;
            pair.patient_id = fs::path(t0_prefix).filename().string();
            pair.x0_reg = load_volume(t0_prefix + "_ct.nii");
            pair.x1 = load_volume(t1_prefix + "_ct.nii");
            pair.lung0_reg = load_labels(t0_prefix + "_lung.nii");
            pair.lung1 = load_labels(t1_prefix + "_lung.nii");
            const SegmentedPair seg =
                segment_pair(model, pair, cfg.preprocess.empty_eps, cfg.train.batch_size);
            fs::create_directories(infer_out);
            const std::string stem =
                (fs::path(infer_out) / fs::path(t0_prefix).filename()).string();
            save_labels(stem + "_seg0.nii", seg.seg0);
            save_labels(stem + "_seg1.nii", seg.seg1);
            if (infer_probs) {
                save_probability_volume(stem + "_prob0.nii", seg.prob0);
                save_probability_volume(stem + "_prob1.nii", seg.prob1);
            }
            std::cout << "segmentations written with prefix " << stem << "\n";
            return kExitOk;
        }
        if (cmd_prog->parsed()) {
            const LabelVolume seg0 = load_labels(prog_seg0);
            const LabelVolume seg1 = load_labels(prog_seg1);
            ProgressionMap map;
            ProgressionReport r = analyze_progression(seg0, seg1, &map);
            r.patient_id = fs::path(prog_seg0).stem().string();
            fs::create_directories(prog_out);
            save_progression_map((fs::path(prog_out) / "progression_map.nii").string(),
                                 map);
            save_json((fs::path(prog_out) / "report.json").string(), report_to_json(r));
            std::ofstream table(fs::path(prog_out) / "report.txt");
            table << report_table({r});
            table.close();
            std::cout << report_table({r});
            return kExitOk;
        }
        if (cmd_eval->parsed()) {
            FCDenseNet<float> model = load_checkpoint<float>(eval_ckpt);
            const auto pairs = load_split_pairs(eval_manifest, eval_split);
            LONGCT_REQUIRE(!pairs.empty(),
                           "no pairs with split '" + eval_split + "' in manifest");
            const EvalResult result = evaluate_model(
                model, pairs, cfg.preprocess.empty_eps, cfg.train.batch_size);
            save_json(eval_out + ".json", eval_to_json(result));
            std::ofstream table(eval_out + ".txt");
            table << eval_table(result);
            table.close();
            if (eval_plots) {
                for (const auto& pair : pairs) {
                    const SegmentedPair seg = segment_pair(
                        model, pair, cfg.preprocess.empty_eps, cfg.train.batch_size);
                    const auto curve =
                        per_slice_dice(seg.seg1, *pair.y1, ClassMap::kConsolidation);
                    std::ofstream svg(eval_out + "_" + pair.patient_id + "_cons.svg");
                    svg << dice_curve_svg(curve, pair.patient_id + " per-slice CONS Dice");
                }
            }
            std::cout << eval_table(result);
            return kExitOk;
        }
        if (cmd_run->parsed()) {
            if (!run_out.empty()) cfg.out_root = run_out;
            const PipelineResult result = run_pipeline(cfg);
            if (result.exit_code != 0) {
                std::cerr << "pipeline failed at stage " << result.failed_stage << ": "
                          << result.message << "\n";
                return kExitStageFailure;
            }
            std::cout << "pipeline complete; artifacts in " << cfg.out_root << "\n";
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStageFailure;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(argc, argv); }
