#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "longct/pipeline/pipeline.hpp"

using namespace longct;
namespace fs = std::filesystem;

#ifndef LONGCT_CLI_PATH
#define LONGCT_CLI_PATH ""
#endif

namespace {

/// Smallest configuration that still runs the whole pipeline.
PipelineConfig tiny_pipeline(const std::string& out) {
    PipelineConfig cfg = PipelineConfig::desk();
    cfg.out_root = out;
    cfg.seed = 99;
    cfg.phantom.grid_size = 32;
    cfg.phantom.n_studies = 3;
    cfg.phantom.n_train = 1;
    cfg.phantom.n_val = 1;
    cfg.phantom.n_test = 1;
    cfg.phantom.deform_amplitude = 1.5;
    cfg.preprocess.target_size = 32;
    cfg.registration.max_iterations = 10;
    cfg.model.first_conv_filters = 8;
    cfg.model.growth_rate = 4;
    cfg.model.down_blocks = {1, 1};
    cfg.model.up_blocks = {1, 1};
    cfg.model.bottleneck_layers = 1;
    cfg.train.max_epochs = 2;
    cfg.train.early_stop_patience = 1;
    cfg.train.batch_size = 4;
    cfg.train.slice_stride = 8;
    cfg.train.views = {View::Axial};
    return cfg;
}

fs::file_time_type mtime(const fs::path& p) { return fs::last_write_time(p); }

}  // namespace

TEST_CASE("presets resolve and validate") {
    PipelineConfig desk = PipelineConfig::desk();
    desk.resolve();
    CHECK_NOTHROW(desk.validate());
    CHECK(desk.preprocess.target_size == 64);
    CHECK(desk.phantom.n_train == 8);

    PipelineConfig paper = PipelineConfig::paper_scale();
    paper.resolve();
    CHECK_NOTHROW(paper.validate());
    CHECK(paper.preprocess.target_size == 300);
    CHECK(paper.phantom.n_train == 12);
    CHECK(paper.phantom.n_val == 4);
    CHECK(paper.phantom.n_test == 22);

    CHECK_THROWS_AS(PipelineConfig::from_preset("nope"), Error);

    // per-stage seeds derive from the global seed
    PipelineConfig a = PipelineConfig::desk();
    a.seed = 1;
    a.resolve();
    PipelineConfig b = PipelineConfig::desk();
    b.seed = 2;
    b.resolve();
    CHECK(a.phantom.seed != b.phantom.seed);
    CHECK(a.train.seed != b.train.seed);
    CHECK(a.phantom.seed != a.train.seed);
}

TEST_CASE("config JSON round trip preserves fields") {
    PipelineConfig cfg = tiny_pipeline("somewhere");
    cfg.train.lr0 = 5e-4;
    cfg.phantom.noise_sigma = 12.5;
    const nlohmann::ordered_json j = pipeline_config_to_json(cfg);

    PipelineConfig back = PipelineConfig::desk();
    apply_pipeline_json(j, back);
    CHECK(back.train.lr0 == 5e-4);
    CHECK(back.phantom.noise_sigma == 12.5);
    CHECK(back.phantom.grid_size == 32);
    CHECK(back.model.down_blocks == std::vector<int>{1, 1});
    CHECK(back.train.views.size() == 1);

    // partial configs override only their keys
    PipelineConfig part = PipelineConfig::desk();
    apply_pipeline_json(nlohmann::json::parse(R"({"train": {"lr0": 0.01}})"), part);
    CHECK(part.train.lr0 == 0.01);
    CHECK(part.preprocess.target_size == 64);  // untouched
}

TEST_CASE("version info is stable and carries format versions") {
    const auto a = version_info("desk");
    const auto b = version_info("desk");
    CHECK(a == b);
    CHECK(a.at("checkpoint_format_version").get<int>() == kCheckpointFormatVersion);
    CHECK(a.at("transform_format_version").get<int>() == kTransformFormatVersion);
    CHECK(a.at("preset").get<std::string>() == "desk");
    CHECK(version_info("paper-scale").at("preset").get<std::string>() == "paper-scale");
}

TEST_CASE("pipeline runs, caches, and invalidates corrupted artifacts") {
    const fs::path root = fs::temp_directory_path() / "longct_test_pipeline";
    fs::remove_all(root);
    const PipelineConfig cfg = tiny_pipeline((root / "run").string());

    // first run executes every stage
    const PipelineResult r1 = run_pipeline(cfg, /*verbose=*/false);
    REQUIRE(r1.exit_code == 0);
    const fs::path out = root / "run";
    CHECK(fs::exists(out / "artifacts.json"));
    CHECK(fs::exists(out / "evaluate" / "comparison.json"));
    CHECK(fs::exists(out / "progress" / "reports.json"));
    CHECK(fs::exists(out / "train" / "longitudinal.ckpt"));

    // unchanged config: every stage is skipped (artifacts untouched)
    const auto t_phantom = mtime(out / "phantom" / "dataset.json");
    const auto t_train = mtime(out / "train" / "longitudinal.ckpt");
    const auto t_eval = mtime(out / "evaluate" / "comparison.json");
    const PipelineResult r2 = run_pipeline(cfg, false);
    REQUIRE(r2.exit_code == 0);
    CHECK(mtime(out / "phantom" / "dataset.json") == t_phantom);
    CHECK(mtime(out / "train" / "longitudinal.ckpt") == t_train);
    CHECK(mtime(out / "evaluate" / "comparison.json") == t_eval);

    // corrupting a cached artifact reruns its stage and everything after
    {
        std::ofstream f(out / "register" / "registered.json", std::ios::app);
        f << " ";
    }
    const PipelineResult r3 = run_pipeline(cfg, false);
    REQUIRE(r3.exit_code == 0);
    CHECK(mtime(out / "phantom" / "dataset.json") == t_phantom);  // upstream intact
    CHECK(mtime(out / "train" / "longitudinal.ckpt") != t_train);
    CHECK(mtime(out / "evaluate" / "comparison.json") != t_eval);

    // a changed config fingerprint also invalidates
    PipelineConfig cfg2 = cfg;
    cfg2.phantom.noise_sigma += 1.0;
    const auto t_phantom2 = mtime(out / "phantom" / "dataset.json");
    const PipelineResult r4 = run_pipeline(cfg2, false);
    REQUIRE(r4.exit_code == 0);
    CHECK(mtime(out / "phantom" / "dataset.json") != t_phantom2);

    fs::remove_all(root);
}

TEST_CASE("two fresh runs with one seed produce identical artifact hashes") {
    const fs::path root = fs::temp_directory_path() / "longct_test_determinism";
    fs::remove_all(root);
    PipelineConfig a = tiny_pipeline((root / "a").string());
    PipelineConfig b = tiny_pipeline((root / "b").string());
    REQUIRE(run_pipeline(a, false).exit_code == 0);
    REQUIRE(run_pipeline(b, false).exit_code == 0);
    const nlohmann::json ja = load_json((root / "a" / "artifacts.json").string());
    const nlohmann::json jb = load_json((root / "b" / "artifacts.json").string());
    CHECK(ja == jb);
    CHECK(!ja.empty());
    fs::remove_all(root);
}

#if defined(LONGCT_HAS_CLI)
TEST_CASE("CLI exit codes: 0 ok, 2 config error, 3 stage failure") {
    const std::string cli = LONGCT_CLI_PATH;
    REQUIRE(fs::exists(cli));
    auto run = [&](const std::string& args) {
        const int status = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run("version") == 0);
    CHECK(run("version --preset nope") == 2);          // unknown preset
    CHECK(run("definitely-not-a-subcommand") == 2);    // parse error
    CHECK(run("progress --seg0 /nonexistent.nii --seg1 /nonexistent.nii --out /tmp/longct_cli_prog") == 3);

    // device selection hook: only cpu is available
    const int status = std::system(
        ("LONGCT_DEVICE=cuda " + cli + " version >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(status) == 2);
}
#endif
