#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "longct/losses/losses.hpp"
#include "longct/util/rng.hpp"

using namespace longct;

namespace {

// Independent scalar oracles: explicit loops, no shared code with the
// implementations under test.
double mse_oracle(const Tensor<double>& a, const Tensor<double>& b) {
    double sum = 0.0;
    int64_t n = 0;
    for (size_t i = 0; i < a.v.size(); ++i, ++n) {
        const double d = a.v[i] - b.v[i];
        sum += d * d;
    }
    return sum / static_cast<double>(n);
}

double seg_oracle(const Tensor<double>& p0, const Tensor<double>& g0,
                  const Tensor<double>& p1, const Tensor<double>& g1) {
    return mse_oracle(p0, g0) + mse_oracle(p1, g1);
}

double prog_oracle(const Tensor<double>& p0c, const Tensor<double>& p1c,
                   const Tensor<double>& g0c, const Tensor<double>& g1c) {
    double sum = 0.0;
    for (size_t i = 0; i < p0c.v.size(); ++i) {
        const double d = (g1c.v[i] - g0c.v[i]) - (p1c.v[i] - p0c.v[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(p0c.v.size());
}

Tensor<double> random_map(int n, int c, int h, int w, uint64_t seed) {
    Tensor<double> t(n, c, h, w);
    Rng rng(seed);
    for (auto& v : t.v) v = rng.uniform();
    return t;
}

Tensor<double> random_binary(int n, int c, int h, int w, uint64_t seed) {
    Tensor<double> t(n, c, h, w);
    Rng rng(seed);
    for (auto& v : t.v) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

Tensor<double> random_simplex(int n, int c, int h, int w, uint64_t seed) {
    Tensor<double> t(n, c, h, w);
    Rng rng(seed);
    const int64_t plane = t.plane();
    for (int in = 0; in < n; ++in)
        for (int64_t i = 0; i < plane; ++i) {
            double sum = 0;
            for (int ch = 0; ch < c; ++ch) {
                const double v = rng.uniform() + 1e-6;
                t.channel(in, ch)[i] = v;
                sum += v;
            }
            for (int ch = 0; ch < c; ++ch) t.channel(in, ch)[i] /= sum;
        }
    return t;
}

}  // namespace

TEST_CASE("seg_loss basics") {
    const Tensor<double> g0 = random_binary(1, 2, 1, 1, 1);
    // pred equal to gt at both timepoints -> 0
    CHECK(seg_loss(g0, g0, g0, g0) == 0.0);

    // single pixel, 2 classes, gt (1,0), pred (0.5,0.5), other timepoint
    // perfect: ((0.5)^2 + (0.5)^2)/2 = 0.25
    Tensor<double> gt(1, 2, 1, 1), pred(1, 2, 1, 1);
    gt.v = {1.0, 0.0};
    pred.v = {0.5, 0.5};
    CHECK(seg_loss(pred, gt, gt, gt) == Catch::Approx(0.25).margin(1e-12));

    Tensor<double> wrong(1, 2, 2, 1);
    CHECK_THROWS_AS(seg_loss(wrong, gt, gt, gt), Error);
}

TEST_CASE("prog_loss basics") {
    Tensor<double> g0(1, 1, 1, 1), g1(1, 1, 1, 1), p0(1, 1, 1, 1), p1(1, 1, 1, 1);

    // perfect predictions -> 0
    g0.v = {0.0};
    g1.v = {1.0};
    p0.v = {0.0};
    p1.v = {1.0};
    CHECK(prog_loss(p0, p1, g0, g1) == 0.0);

    // gt diff = 1 (new consolidation), predicted diff = 0 -> 1.0
    p1.v = {0.0};
    CHECK(prog_loss(p0, p1, g0, g1) == Catch::Approx(1.0));

    // identical constant bias at both timepoints cancels exactly
    const Tensor<double> gb0 = random_binary(1, 1, 8, 8, 7);
    const Tensor<double> gb1 = random_binary(1, 1, 8, 8, 8);
    Tensor<double> pb0 = gb0, pb1 = gb1;
    for (auto& v : pb0.v) v += 0.3;
    for (auto& v : pb1.v) v += 0.3;
    CHECK(prog_loss(pb0, pb1, gb0, gb1) == 0.0);
    // while the segmentation loss sees the bias
    CHECK(mse(pb0, gb0) > 0.0);
}

TEST_CASE("prog_loss is invariant under adding any constant field to both maps") {
    const Tensor<double> g0 = random_binary(1, 1, 8, 8, 11);
    const Tensor<double> g1 = random_binary(1, 1, 8, 8, 12);
    const Tensor<double> p0 = random_map(1, 1, 8, 8, 13);
    const Tensor<double> p1 = random_map(1, 1, 8, 8, 14);
    const Tensor<double> field = random_map(1, 1, 8, 8, 15);
    const double base = prog_loss(p0, p1, g0, g1);
    Tensor<double> q0 = p0, q1 = p1;
    for (size_t i = 0; i < field.v.size(); ++i) {
        q0.v[i] += field.v[i];
        q1.v[i] += field.v[i];
    }
    CHECK(prog_loss(q0, q1, g0, g1) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("prog_loss is symmetric under simultaneous timepoint swap") {
    const Tensor<double> g0 = random_binary(1, 1, 8, 8, 21);
    const Tensor<double> g1 = random_binary(1, 1, 8, 8, 22);
    const Tensor<double> p0 = random_map(1, 1, 8, 8, 23);
    const Tensor<double> p1 = random_map(1, 1, 8, 8, 24);
    CHECK(prog_loss(p0, p1, g0, g1) == Catch::Approx(prog_loss(p1, p0, g1, g0)));
}

TEST_CASE("total_loss is the exact sum of its parts") {
    const Tensor<double> g0 = random_binary(1, 5, 4, 4, 31);
    const Tensor<double> g1 = random_binary(1, 5, 4, 4, 32);
    const Tensor<double> p0 = random_simplex(1, 5, 4, 4, 33);
    const Tensor<double> p1 = random_simplex(1, 5, 4, 4, 34);
    const Tensor<double> p0c = extract_channel(p0, 3);
    const Tensor<double> p1c = extract_channel(p1, 3);
    const Tensor<double> g0c = extract_channel(g0, 3);
    const Tensor<double> g1c = extract_channel(g1, 3);

    const LossBreakdown lb = total_loss(p0, g0, p1, g1, p0c, p1c, g0c, g1c, true);
    CHECK(lb.total == lb.seg + lb.prog);  // same-precision addition, exact
    CHECK(lb.seg >= 0.0);
    CHECK(lb.prog >= 0.0);

    // static baseline: prog omitted
    const LossBreakdown st = total_loss(p0, g0, p1, g1, p0c, p1c, g0c, g1c, false);
    CHECK(st.prog == 0.0);
    CHECK(st.total == st.seg);

    // seg=0, prog=0 -> total 0
    const LossBreakdown zero = total_loss(g0, g0, g1, g1, g0c, g1c, g0c, g1c, true);
    CHECK(zero.total == 0.0);

    // additivity example: 0.25 + 1.0 = 1.25
    CHECK(LossBreakdown::make(0.25, 1.0).total == 1.25);
}

TEST_CASE("vectorized losses match the scalar oracle on 100 random instances") {
    for (int inst = 0; inst < 100; ++inst) {
        const uint64_t s = 1000 + static_cast<uint64_t>(inst) * 10;
        const Tensor<double> p0 = random_simplex(1, 5, 8, 8, s);
        const Tensor<double> p1 = random_simplex(1, 5, 8, 8, s + 1);
        const Tensor<double> g0 = random_binary(1, 5, 8, 8, s + 2);
        const Tensor<double> g1 = random_binary(1, 5, 8, 8, s + 3);
        const Tensor<double> p0c = extract_channel(p0, 3);
        const Tensor<double> p1c = extract_channel(p1, 3);
        const Tensor<double> g0c = extract_channel(g0, 3);
        const Tensor<double> g1c = extract_channel(g1, 3);

        CHECK(seg_loss(p0, g0, p1, g1) ==
              Catch::Approx(seg_oracle(p0, g0, p1, g1)).margin(1e-6));
        CHECK(prog_loss(p0c, p1c, g0c, g1c) ==
              Catch::Approx(prog_oracle(p0c, p1c, g0c, g1c)).margin(1e-6));
        const LossBreakdown lb = total_loss(p0, g0, p1, g1, p0c, p1c, g0c, g1c, true);
        CHECK(lb.total == Catch::Approx(seg_oracle(p0, g0, p1, g1) +
                                        prog_oracle(p0c, p1c, g0c, g1c))
                              .margin(1e-6));
    }
}

TEST_CASE("loss gradients match finite differences") {
    const Tensor<double> g0 = random_binary(1, 5, 4, 4, 41);
    const Tensor<double> g1 = random_binary(1, 5, 4, 4, 42);
    Tensor<double> p0 = random_simplex(1, 5, 4, 4, 43);
    Tensor<double> p1 = random_simplex(1, 5, 4, 4, 44);

    Tensor<double> d0(1, 5, 4, 4), d1(1, 5, 4, 4);
    mse_grad(p0, g0, 1.0, d0);
    mse_grad(p1, g1, 1.0, d1);
    Tensor<double> p0c = extract_channel(p0, 3);
    Tensor<double> p1c = extract_channel(p1, 3);
    const Tensor<double> g0c = extract_channel(g0, 3);
    const Tensor<double> g1c = extract_channel(g1, 3);
    Tensor<double> dp0c(1, 1, 4, 4), dp1c(1, 1, 4, 4);
    prog_loss_grad(p0c, p1c, g0c, g1c, 1.0, dp0c, dp1c);
    add_channel_grad(d0, dp0c, 3);
    add_channel_grad(d1, dp1c, 3);

    auto objective = [&]() {
        return seg_loss(p0, g0, p1, g1) +
               prog_loss(extract_channel(p0, 3), extract_channel(p1, 3), g0c, g1c);
    };
    const double h = 1e-6;
    Rng pick(55);
    for (int rep = 0; rep < 40; ++rep) {
        const size_t i = static_cast<size_t>(pick.below(p0.v.size()));
        Tensor<double>& target = rep % 2 == 0 ? p0 : p1;
        const Tensor<double>& grad = rep % 2 == 0 ? d0 : d1;
        const double orig = target.v[i];
        target.v[i] = orig + h;
        const double lp = objective();
        target.v[i] = orig - h;
        const double lm = objective();
        target.v[i] = orig;
        const double fd = (lp - lm) / (2 * h);
        CHECK(grad.v[i] == Catch::Approx(fd).margin(1e-6));
    }
}
