#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "longct/phantom/phantom.hpp"
#include "longct/train/trainer.hpp"

using namespace longct;

namespace {

ModelConfig tiny_model(bool longitudinal) {
    ModelConfig c;
    c.variant = longitudinal ? ModelConfig::Variant::Longitudinal
                             : ModelConfig::Variant::Static;
    c.in_channels = longitudinal ? 2 : 1;
    c.first_conv_filters = 8;
    c.growth_rate = 4;
    c.down_blocks = {1, 1};
    c.up_blocks = {1, 1};
    c.bottleneck_layers = 1;
    c.dropout = 0.1;
    return c;
}

/// One registered phantom pair at a small grid, identity registration
/// (the ground-truth alignment is irrelevant for trainer mechanics).
RegisteredPair small_pair(uint64_t seed, const std::string& pid, int grid = 32) {
    PhantomConfig cfg;
    cfg.grid_size = grid;
    cfg.n_studies = 1;
    cfg.n_train = 1;
    cfg.n_val = 0;
    cfg.n_test = 0;
    cfg.deform_amplitude = 1.5;
    cfg.noise_sigma = 10.0;
    cfg.seed = seed;
    const PhantomStudy ps = generate_study(cfg, 0);
    PreprocessConfig pp;
    pp.target_size = grid;
    const ProcessedPair pair =
        preprocess_pair(ps.study.timepoints[0], ps.study.timepoints[1], pp);
    RegisteredPair r;
    r.patient_id = pid;
    r.pair_index = 0;
    r.x0_reg = pair.ct0;
    r.x1 = pair.ct1;
    r.lung0_reg = pair.lung0;
    r.lung1 = pair.lung1;
    r.y0_reg = pair.path0;
    r.y1 = pair.path1;
    return r;
}

}  // namespace

TEST_CASE("learning-rate schedule follows the published step decay") {
    TrainConfig cfg;
    CHECK(lr_schedule(0, cfg) == Catch::Approx(1e-4));
    CHECK(lr_schedule(49, cfg) == Catch::Approx(1e-4));
    CHECK(lr_schedule(50, cfg) == Catch::Approx(1e-5));
    CHECK(lr_schedule(99, cfg) == Catch::Approx(1e-5));
    CHECK_THROWS_AS(lr_schedule(-1, cfg), Error);

    // piecewise constant, non-increasing, strictly positive
    double prev = lr_schedule(0, cfg);
    for (int e = 1; e < 200; ++e) {
        const double lr = lr_schedule(e, cfg);
        CHECK(lr > 0.0);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("early stopping matches the simulated trace") {
    // patience 5, val losses [1.0, .9, .9, .9, .9, .9, .9]: best at epoch 2,
    // five non-improving epochs after it, stop after epoch 7.
    EarlyStopper stopper(5);
    const double vals[] = {1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9};
    int epochs_run = 0;
    for (double v : vals) {
        stopper.observe(v);
        ++epochs_run;
        if (stopper.should_stop()) break;
    }
    CHECK(epochs_run == 7);
    CHECK(stopper.best_epoch() == 1);  // 0-based
    CHECK(stopper.best() == 0.9);

    // strictly-lower comparison: equal loss does not reset patience
    EarlyStopper s2(2);
    s2.observe(0.5);
    s2.observe(0.5);
    s2.observe(0.5);
    CHECK(s2.should_stop());
}

TEST_CASE("training samples pair two targets per common kept slice") {
    const RegisteredPair pair = small_pair(42, "p0");
    TrainConfig cfg;
    cfg.views = {View::Axial};
    cfg.slice_stride = 1;

    PreprocessConfig pp;
    pp.empty_eps = cfg.empty_eps;
    const SliceStack s0 = extract_slices(pair.x0_reg, View::Axial, pp);
    const SliceStack s1 = extract_slices(pair.x1, View::Axial, pp);
    std::vector<int> common;
    std::set_intersection(s0.kept_indices.begin(), s0.kept_indices.end(),
                          s1.kept_indices.begin(), s1.kept_indices.end(),
                          std::back_inserter(common));
    REQUIRE(!common.empty());

    const auto samples =
        make_training_samples({pair}, cfg.views, cfg, 0, /*shuffle=*/false);
    CHECK(samples.size() == 2 * common.size());
    for (size_t i = 0; i < samples.size(); i += 2) {
        CHECK(samples[i].target_tp == 1);
        CHECK(samples[i + 1].target_tp == 0);
        CHECK(samples[i].slice == samples[i + 1].slice);
    }

    // three views: three times the per-view count (same kept sets per view
    // is not guaranteed, so just check totals match a manual recount)
    TrainConfig cfg3;
    const auto samples3 =
        make_training_samples({pair}, cfg3.views, cfg3, 0, false);
    size_t expected = 0;
    for (View view : cfg3.views) {
        const SliceStack a = extract_slices(pair.x0_reg, view, pp);
        const SliceStack b = extract_slices(pair.x1, view, pp);
        std::vector<int> c;
        std::set_intersection(a.kept_indices.begin(), a.kept_indices.end(),
                              b.kept_indices.begin(), b.kept_indices.end(),
                              std::back_inserter(c));
        expected += 2 * c.size();
    }
    CHECK(samples3.size() == expected);
}

TEST_CASE("kept-index intersection excludes one-sided slices") {
    RegisteredPair pair = small_pair(43, "p1");
    // Flatten a slice of x0_reg only: it must disappear from the stream.
    TrainConfig cfg;
    cfg.views = {View::Axial};
    PreprocessConfig pp;
    const SliceStack s0 = extract_slices(pair.x0_reg, View::Axial, pp);
    REQUIRE(!s0.kept_indices.empty());
    const int victim = s0.kept_indices[s0.kept_indices.size() / 2];
    const auto before = make_training_samples({pair}, cfg.views, cfg, 0, false);
    for (int y = 0; y < pair.x0_reg.geom.shape[1]; ++y)
        for (int x = 0; x < pair.x0_reg.geom.shape[0]; ++x)
            pair.x0_reg.at(x, y, victim) = 0.25f;
    const auto after = make_training_samples({pair}, cfg.views, cfg, 0, false);
    CHECK(after.size() == before.size() - 2);
    for (const auto& s : after) CHECK(s.slice != victim);
}

TEST_CASE("slice stride subsamples the stream") {
    const RegisteredPair pair = small_pair(44, "p2");
    TrainConfig cfg;
    cfg.views = {View::Axial};
    const auto full = make_training_samples({pair}, cfg.views, cfg, 0, false);
    cfg.slice_stride = 2;
    const auto strided = make_training_samples({pair}, cfg.views, cfg, 0, false);
    CHECK(strided.size() >= full.size() / 2 - 2);
    CHECK(strided.size() <= full.size() / 2 + 2);
}

TEST_CASE("shuffling is deterministic per (seed, epoch)") {
    const RegisteredPair pair = small_pair(45, "p3");
    TrainConfig cfg;
    const auto a = make_training_samples({pair}, cfg.views, cfg, 3, true);
    const auto b = make_training_samples({pair}, cfg.views, cfg, 3, true);
    const auto c = make_training_samples({pair}, cfg.views, cfg, 4, true);
    REQUIRE(a.size() == b.size());
    bool same_ab = true, same_ac = true;
    for (size_t i = 0; i < a.size(); ++i) {
        same_ab &= a[i].slice == b[i].slice && a[i].view == b[i].view &&
                   a[i].target_tp == b[i].target_tp;
        same_ac &= a[i].slice == c[i].slice && a[i].view == c[i].view;
    }
    CHECK(same_ab);
    CHECK_FALSE(same_ac);  // different epoch, different order
}

TEST_CASE("patient-level split leakage is rejected") {
    const RegisteredPair p = small_pair(46, "shared");
    FCDenseNet<float> model(tiny_model(true), 1);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.early_stop_patience = 1;
    CHECK_THROWS_AS(train(model, {p}, {p}, cfg), Error);
}

TEST_CASE("two runs with the same seed give identical histories") {
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.early_stop_patience = 1;
    cfg.batch_size = 4;
    cfg.slice_stride = 6;
    cfg.views = {View::Axial};
    cfg.seed = 2024;

    const RegisteredPair tr = small_pair(47, "t0");
    const RegisteredPair va = small_pair(48, "v0");

    FCDenseNet<float> m1(tiny_model(true), 5);
    const TrainHistory h1 = train(m1, {tr}, {va}, cfg);
    FCDenseNet<float> m2(tiny_model(true), 5);
    const TrainHistory h2 = train(m2, {tr}, {va}, cfg);

    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (size_t e = 0; e < h1.epochs.size(); ++e) {
        CHECK(h1.epochs[e].train_loss.total == h2.epochs[e].train_loss.total);
        CHECK(h1.epochs[e].val_loss.total == h2.epochs[e].val_loss.total);
        CHECK(h1.epochs[e].lr == h2.epochs[e].lr);
    }
    CHECK(h1.best_epoch == h2.best_epoch);
    // identical final weights
    for (size_t p = 0; p < m1.parameters().size(); ++p)
        CHECK(m1.parameters()[p].value.v == m2.parameters()[p].value.v);

    // respects max_epochs and records the best epoch consistently
    CHECK(h1.epochs.size() <= static_cast<size_t>(cfg.max_epochs));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : h1.epochs) best = std::min(best, e.val_loss.total);
    CHECK(h1.best_val == best);
}

TEST_CASE("overfit smoke test: loss collapses on a single pair") {
    // Small single-view setup; an expressive-enough tiny model must drive
    // the training loss below 10% of its starting value.
    TrainConfig cfg;
    cfg.max_epochs = 200;
    cfg.early_stop_patience = 199;
    cfg.batch_size = 4;
    cfg.slice_stride = 8;
    cfg.views = {View::Axial};
    cfg.lr0 = 1e-3;
    cfg.decay_every = 1000;
    cfg.seed = 7;

    ModelConfig mc = tiny_model(true);
    mc.dropout = 0.0;
    FCDenseNet<float> model(mc, 11);
    const RegisteredPair pair = small_pair(49, "solo");
    const TrainHistory h = train(model, {pair}, {}, cfg);
    REQUIRE(!h.epochs.empty());
    const double initial = h.epochs.front().train_loss.total;
    const double final = h.epochs.back().train_loss.total;
    INFO("initial " << initial << " final " << final);
    CHECK(final < 0.1 * initial);
}
