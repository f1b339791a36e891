#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "longct/phantom/phantom.hpp"
#include "longct/pipeline/pipeline.hpp"

using namespace longct;
namespace fs = std::filesystem;

namespace {

PhantomConfig small_config() {
    PhantomConfig cfg;
    cfg.grid_size = 48;
    cfg.n_studies = 4;
    cfg.n_train = 2;
    cfg.n_val = 1;
    cfg.n_test = 1;
    cfg.deform_amplitude = 2.5;
    cfg.noise_sigma = 15.0;
    cfg.seed = 321;
    return cfg;
}

}  // namespace

TEST_CASE("same (seed, index) reproduces the study bit-identically") {
    const PhantomConfig cfg = small_config();
    const PhantomStudy a = generate_study(cfg, 1);
    const PhantomStudy b = generate_study(cfg, 1);
    REQUIRE(a.study.timepoints.size() == b.study.timepoints.size());
    for (size_t t = 0; t < a.study.timepoints.size(); ++t) {
        CHECK(a.study.timepoints[t].ct.data == b.study.timepoints[t].ct.data);
        CHECK(a.study.timepoints[t].lung_mask.labels ==
              b.study.timepoints[t].lung_mask.labels);
        CHECK(a.study.timepoints[t].pathology->labels ==
              b.study.timepoints[t].pathology->labels);
    }
    REQUIRE(a.gt_displacements.size() == b.gt_displacements.size());
    CHECK(a.gt_displacements[0].u == b.gt_displacements[0].u);

    // a different study index gives different anatomy
    const PhantomStudy c = generate_study(cfg, 2);
    CHECK(a.study.timepoints[0].ct.data != c.study.timepoints[0].ct.data);
}

TEST_CASE("zero deformation and zero evolution give identical timepoints up to noise") {
    PhantomConfig cfg = small_config();
    cfg.deform_amplitude = 1e-9;  // validate() needs > 0 modes; amplitude ~ 0
    cfg.ggo_rate_min = cfg.ggo_rate_max = 1.0;
    cfg.cons_rate_min = cfg.cons_rate_max = 1.0;
    cfg.pleff_rate_min = cfg.pleff_rate_max = 1.0;
    cfg.noise_sigma = 0.0;
    const PhantomStudy s = generate_study(cfg, 0);
    const auto& t0 = s.study.timepoints[0];
    const auto& t1 = s.study.timepoints[1];
    int64_t diff = 0;
    for (size_t i = 0; i < t0.ct.data.size(); ++i)
        diff += std::fabs(t0.ct.data[i] - t1.ct.data[i]) > 1e-3f;
    // identical up to sub-voxel rounding of the (negligible) deformation
    CHECK(diff == 0);
    CHECK(t0.lung_mask.labels == t1.lung_mask.labels);
    CHECK(t0.pathology->labels == t1.pathology->labels);
}

TEST_CASE("lesion evolution tracks the configured rate") {
    PhantomConfig cfg = small_config();
    cfg.grid_size = 64;
    cfg.deform_amplitude = 1e-9;  // isolate evolution from motion
    cfg.noise_sigma = 0.0;
    cfg.lesion_count_min = cfg.lesion_count_max = 1;  // one CONS lesion
    cfg.cons_rate_min = cfg.cons_rate_max = 1.25;     // radius factor
    const PhantomStudy s = generate_study(cfg, 0);
    const int64_t n0 = s.study.timepoints[0].pathology->count(ClassMap::kConsolidation);
    const int64_t n1 = s.study.timepoints[1].pathology->count(ClassMap::kConsolidation);
    REQUIRE(n0 > 50);  // lesion must be resolvable
    const double measured = static_cast<double>(n1) / static_cast<double>(n0);
    const double analytic = 1.25 * 1.25 * 1.25;  // volume scales with radius^3
    CHECK(std::fabs(measured - analytic) / analytic < 0.15);
}

TEST_CASE("generated HU values stay in the clipping window up to noise tails") {
    PhantomConfig cfg = small_config();
    const PhantomStudy s = generate_study(cfg, 3);
    int64_t out_of_window = 0;
    for (const auto& tp : s.study.timepoints)
        for (float v : tp.ct.data) {
            CHECK(v > -1024.0f - 8 * cfg.noise_sigma);
            CHECK(v < 600.0f + 8 * cfg.noise_sigma);
            out_of_window += (v < -1024.0f || v > 600.0f);
        }
    // the noise tails must actually exercise the clipping path
    CHECK(out_of_window > 0);
}

TEST_CASE("pathology stays inside the lung except pleural effusion") {
    PhantomConfig cfg = small_config();
    for (int idx = 0; idx < 3; ++idx) {
        const PhantomStudy s = generate_study(cfg, idx);
        for (const auto& tp : s.study.timepoints) {
            const auto& lung = tp.lung_mask.labels;
            const auto& path = tp.pathology->labels;
            for (size_t i = 0; i < path.size(); ++i) {
                if (path[i] == ClassMap::kHealthyLung || path[i] == ClassMap::kGGO ||
                    path[i] == ClassMap::kConsolidation)
                    CHECK(lung[i] == 1);
                if (path[i] == ClassMap::kPleuralEffusion) CHECK(lung[i] == 0);
            }
        }
    }
}

TEST_CASE("ground-truth displacement fields are smooth") {
    PhantomConfig cfg = small_config();
    const PhantomStudy s = generate_study(cfg, 1);
    const DisplacementField& f = s.gt_displacements[0];
    const double bound = cfg.max_displacement_gradient() * 1.05;  // numeric slack
    const int n = cfg.grid_size;
    double max_grad = 0.0, max_disp = 0.0;
    for (int z = 0; z < n - 1; ++z)
        for (int y = 0; y < n - 1; ++y)
            for (int x = 0; x < n - 1; ++x) {
                const Vec3 u = f.at(x, y, z);
                max_disp = std::max({max_disp, std::fabs(u.x), std::fabs(u.y),
                                     std::fabs(u.z)});
                const Vec3 ux = f.at(x + 1, y, z) - u;
                const Vec3 uy = f.at(x, y + 1, z) - u;
                const Vec3 uz = f.at(x, y, z + 1) - u;
                for (const Vec3& g : {ux, uy, uz})
                    max_grad = std::max({max_grad, std::fabs(g.x), std::fabs(g.y),
                                         std::fabs(g.z)});
            }
    CHECK(max_grad < bound);
    CHECK(max_disp <= cfg.deform_amplitude + 1e-9);
    CHECK(max_disp > 0.2 * cfg.deform_amplitude);  // deformation is real
}

TEST_CASE("splits are disjoint and sized as configured") {
    PhantomConfig cfg = small_config();
    cfg.n_studies = 10;
    cfg.n_train = 6;
    cfg.n_val = 2;
    cfg.n_test = 2;
    const auto splits = phantom_splits(cfg);
    CHECK(splits.at("train").size() == 6);
    CHECK(splits.at("val").size() == 2);
    CHECK(splits.at("test").size() == 2);
    std::set<std::string> seen;
    for (const auto& [name, ids] : splits)
        for (const auto& id : ids) CHECK(seen.insert(id).second);
    CHECK(seen.size() == 10);
}

TEST_CASE("three-timepoint studies have two pairs and ascending days") {
    PhantomConfig cfg = small_config();
    cfg.timepoints_per_study = 3;
    const PhantomStudy s = generate_study(cfg, 0);
    CHECK(s.study.timepoints.size() == 3);
    CHECK(s.gt_displacements.size() == 2);
    CHECK_NOTHROW(s.study.validate());
    CHECK(consecutive_pairs(s.study).size() == 2);
}

TEST_CASE("written dataset round-trips through the manifest loader") {
    const fs::path dir = fs::temp_directory_path() / "longct_test_phantom";
    fs::remove_all(dir);
    fs::create_directories(dir);
    PhantomConfig cfg = small_config();
    cfg.n_studies = 2;
    cfg.n_train = 1;
    cfg.n_val = 1;
    cfg.n_test = 0;
    write_phantom_dataset(cfg, dir);

    const DatasetManifest m = load_dataset_manifest((dir / "dataset.json").string());
    REQUIRE(m.studies.size() == 2);
    const Study s = load_study(m.studies[0], dir.string());
    CHECK(s.timepoints.size() == 2);
    CHECK(s.timepoints[0].pathology.has_value());

    // int16 quantization aside, the stored CT matches the generator
    const PhantomStudy gen = generate_study(cfg, 0);
    for (size_t i = 0; i < 100; ++i)
        CHECK(std::fabs(s.timepoints[0].ct.data[i] - gen.study.timepoints[0].ct.data[i]) <=
              0.5f);

    // displacement field file exists and loads with the right geometry
    GridGeometry fg;
    const auto u = load_vector_field((dir / "phantom_0_u0.nii").string(), &fg);
    CHECK(fg.shape == std::array<int, 3>{48, 48, 48});
    CHECK(u.size() == static_cast<size_t>(fg.voxels()) * 3);
    fs::remove_all(dir);
}
