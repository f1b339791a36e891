#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "longct/infer/fusion.hpp"
#include "longct/progression/progression.hpp"

namespace longct {

/// Dice coefficient 2|P∩G| / (|P|+|G|) for one class; 1.0 when both sets
/// are empty.
inline double dice(const LabelVolume& pred, const LabelVolume& gt, int cls) {
    LONGCT_REQUIRE(check_geometry(pred.geom, gt.geom), "dice: geometries differ");
    int64_t np = 0, ng = 0, inter = 0;
    for (size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] == cls;
        const bool g = gt.labels[i] == cls;
        np += p;
        ng += g;
        inter += p && g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

/// Per-pair evaluation record. Pathology classes are indexed 1..4
/// (HL, GGO, CONS, PLEFF); array slot = class - 1.
struct PairEval {
    std::string patient_id;
    int pair_index = 0;
    std::array<double, 4> dice_t0{};
    std::array<double, 4> dice_t1{};
    double progressed_err_ml = 0.0;
    double recovered_err_ml = 0.0;
    double net_err_ml = 0.0;
};

struct EvalResult {
    std::string variant;
    std::vector<PairEval> pairs;
    std::array<double, 4> mean_dice{};  // over all evaluated volumes
    std::array<double, 4> std_dice{};
    double mean_progressed_err_ml = 0.0;
    double mean_net_err_ml = 0.0;
    std::vector<std::string> warnings;

    double mean_dice_for(int cls) const { return mean_dice[static_cast<size_t>(cls - 1)]; }
};

namespace eval_detail {

inline void finalize(EvalResult& r) {
    for (int c = 0; c < 4; ++c) {
        double sum = 0.0;
        int64_t n = 0;
        for (const auto& p : r.pairs) {
            sum += p.dice_t0[static_cast<size_t>(c)] + p.dice_t1[static_cast<size_t>(c)];
            n += 2;
        }
        const double mean = n ? sum / static_cast<double>(n) : 0.0;
        double var = 0.0;
        for (const auto& p : r.pairs) {
            var += (p.dice_t0[static_cast<size_t>(c)] - mean) *
                   (p.dice_t0[static_cast<size_t>(c)] - mean);
            var += (p.dice_t1[static_cast<size_t>(c)] - mean) *
                   (p.dice_t1[static_cast<size_t>(c)] - mean);
        }
        r.mean_dice[static_cast<size_t>(c)] = mean;
        r.std_dice[static_cast<size_t>(c)] = n ? std::sqrt(var / static_cast<double>(n)) : 0.0;
    }
    double perr = 0.0, nerr = 0.0;
    for (const auto& p : r.pairs) {
        perr += p.progressed_err_ml;
        nerr += p.net_err_ml;
    }
    const double np = r.pairs.empty() ? 1.0 : static_cast<double>(r.pairs.size());
    r.mean_progressed_err_ml = perr / np;
    r.mean_net_err_ml = nerr / np;
}

}  // namespace eval_detail

/// Evaluate one segmented pair against its ground truth (t0 compared in
/// registered follow-up space).
inline PairEval evaluate_pair(const SegmentedPair& seg, const RegisteredPair& pair) {
    LONGCT_REQUIRE(pair.y0_reg && pair.y1, "evaluate_pair: missing ground truth");
    PairEval e;
    e.patient_id = pair.patient_id;
    e.pair_index = pair.pair_index;
    for (int cls = 1; cls <= 4; ++cls) {
        e.dice_t0[static_cast<size_t>(cls - 1)] = dice(seg.seg0, *pair.y0_reg, cls);
        e.dice_t1[static_cast<size_t>(cls - 1)] = dice(seg.seg1, *pair.y1, cls);
    }
    const ProgressionReport pred = analyze_progression(seg.seg0, seg.seg1);
    const ProgressionReport truth = analyze_progression(*pair.y0_reg, *pair.y1);
    e.progressed_err_ml = std::fabs(pred.progressed_ml - truth.progressed_ml);
    e.recovered_err_ml = std::fabs(pred.recovered_ml - truth.recovered_ml);
    e.net_err_ml = std::fabs(pred.net_change_ml - truth.net_change_ml);
    return e;
}

/// Segment and evaluate every pair that carries ground truth; pairs without
/// annotations are skipped with a warning record.
inline EvalResult evaluate_model(FCDenseNet<float>& model,
                                 const std::vector<RegisteredPair>& pairs,
                                 float empty_eps = 1e-5f, int batch_size = 8) {
    EvalResult result;
    result.variant = model.config().variant_name();
    for (const auto& pair : pairs) {
        if (!pair.y0_reg || !pair.y1) {
            result.warnings.push_back("pair " + pair.patient_id + "#" +
                                      std::to_string(pair.pair_index) +
                                      ": missing ground truth, skipped");
            continue;
        }
        const SegmentedPair seg = segment_pair(model, pair, empty_eps, batch_size);
        result.pairs.push_back(evaluate_pair(seg, pair));
    }
    eval_detail::finalize(result);
    return result;
}

inline nlohmann::ordered_json eval_to_json(const EvalResult& r) {
    nlohmann::ordered_json j;
    j["variant"] = r.variant;
    j["mean_dice"] = {{"HL", r.mean_dice[0]},
                      {"GGO", r.mean_dice[1]},
                      {"CONS", r.mean_dice[2]},
                      {"PLEFF", r.mean_dice[3]}};
    j["std_dice"] = {{"HL", r.std_dice[0]},
                     {"GGO", r.std_dice[1]},
                     {"CONS", r.std_dice[2]},
                     {"PLEFF", r.std_dice[3]}};
    j["mean_progressed_err_ml"] = r.mean_progressed_err_ml;
    j["mean_net_err_ml"] = r.mean_net_err_ml;
    j["warnings"] = r.warnings;
    j["pairs"] = nlohmann::ordered_json::array();
    for (const auto& p : r.pairs) {
        j["pairs"].push_back({{"patient_id", p.patient_id},
                              {"pair_index", p.pair_index},
                              {"dice_t0", p.dice_t0},
                              {"dice_t1", p.dice_t1},
                              {"progressed_err_ml", p.progressed_err_ml},
                              {"recovered_err_ml", p.recovered_err_ml},
                              {"net_err_ml", p.net_err_ml}});
    }
    return j;
}

inline std::string eval_table(const EvalResult& r) {
    std::ostringstream os;
    os << "variant: " << r.variant << "\n";
    os << "class   mean_dice  std_dice\n";
    const char* names[4] = {"HL", "GGO", "CONS", "PLEFF"};
    char line[128];
    for (int c = 0; c < 4; ++c) {
        std::snprintf(line, sizeof(line), "%-7s %9.4f %9.4f\n", names[c],
                      r.mean_dice[static_cast<size_t>(c)],
                      r.std_dice[static_cast<size_t>(c)]);
        os << line;
    }
    std::snprintf(line, sizeof(line), "mean |progression error|: %.3f mL\n",
                  r.mean_progressed_err_ml);
    os << line;
    return os.str();
}

/// Minimal SVG line plot of per-slice Dice values (axial slices, one class).
inline std::string dice_curve_svg(const std::vector<double>& values,
                                  const std::string& title) {
    const int w = 640, h = 240, margin = 30;
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
       << "'>\n<rect width='100%' height='100%' fill='white'/>\n"
       << "<text x='10' y='16' font-size='12'>" << title << "</text>\n";
    if (values.size() > 1) {
        os << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' points='";
        for (size_t i = 0; i < values.size(); ++i) {
            const double x = margin + (w - 2.0 * margin) * static_cast<double>(i) /
                                          static_cast<double>(values.size() - 1);
            const double y = h - margin - (h - 2.0 * margin) * values[i];
            os << x << "," << y << " ";
        }
        os << "'/>\n";
    }
    os << "<line x1='" << margin << "' y1='" << h - margin << "' x2='" << w - margin
       << "' y2='" << h - margin << "' stroke='black'/>\n"
       << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin
       << "' y2='" << h - margin << "' stroke='black'/>\n</svg>\n";
    return os.str();
}

/// Per-axial-slice Dice values for one class (used by the optional plots).
inline std::vector<double> per_slice_dice(const LabelVolume& pred,
                                          const LabelVolume& gt, int cls) {
    LONGCT_REQUIRE(check_geometry(pred.geom, gt.geom), "per_slice_dice: geometry");
    std::vector<double> out;
    const auto& s = pred.geom.shape;
    for (int z = 0; z < s[2]; ++z) {
        int64_t np = 0, ng = 0, inter = 0;
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[0]; ++x) {
                const bool p = pred.at(x, y, z) == cls;
                const bool g = gt.at(x, y, z) == cls;
                np += p;
                ng += g;
                inter += p && g;
            }
        out.push_back(np + ng == 0 ? 1.0
                                   : 2.0 * static_cast<double>(inter) /
                                         static_cast<double>(np + ng));
    }
    return out;
}

}  // namespace longct
