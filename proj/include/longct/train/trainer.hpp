#pragma once

#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "longct/losses/losses.hpp"
#include "longct/nn/adam.hpp"
#include "longct/nn/checkpoint.hpp"
#include "longct/registration/registration.hpp"

namespace longct {

/// Optimization schedule: Adam at lr0 with step decay, early stopping on the
/// validation loss, view-mixed batching over registered longitudinal pairs.
struct TrainConfig {
    double lr0 = 1e-4;
    double decay_factor = 0.1;
    int decay_every = 50;  // epochs (or iterations when decay_per_iteration)
    bool decay_per_iteration = false;
    int max_epochs = 100;
    int early_stop_patience = 5;
    int batch_size = 8;
    uint64_t seed = 42;
    std::vector<View> views{View::Axial, View::Coronal, View::Sagittal};
    int slice_stride = 1;  // take every n-th common kept slice
    float empty_eps = 1e-5f;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;

    void validate() const {
        LONGCT_REQUIRE(lr0 > 0 && decay_factor > 0 && decay_every > 0,
                       "TrainConfig: schedule values must be positive");
        LONGCT_REQUIRE(max_epochs > 0 && early_stop_patience > 0 && batch_size > 0,
                       "TrainConfig: epoch/batch values must be positive");
        LONGCT_REQUIRE(early_stop_patience < max_epochs,
                       "TrainConfig: patience must be below max_epochs");
        LONGCT_REQUIRE(batch_size % 2 == 0,
                       "TrainConfig: batch_size must be even (paired samples)");
        LONGCT_REQUIRE(!views.empty() && slice_stride >= 1,
                       "TrainConfig: need at least one view and stride >= 1");
    }
};

/// Piecewise-constant step decay: lr0 * decay^floor(epoch / decay_every).
inline double lr_schedule(int epoch, const TrainConfig& cfg) {
    LONGCT_REQUIRE(epoch >= 0, "lr_schedule: epoch must be >= 0");
    return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

/// Early-stopping state machine: stop once the validation loss has not
/// dropped below the best seen for `patience` consecutive epochs.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Returns true when this epoch sets a new best.
    bool observe(double val_loss) {
        ++epoch_;
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epoch_;
            bad_ = 0;
            return true;
        }
        ++bad_;
        return false;
    }

    bool should_stop() const { return bad_ >= patience_; }
    int best_epoch() const { return best_epoch_; }
    double best() const { return best_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = -1;
    int bad_ = 0;
    int epoch_ = -1;
};

/// One (input -> target) training example: a slice of one pair/view with a
/// chosen target timepoint. Samples come in adjacent (target t1, target t0)
/// couples so the progression loss can pair them inside a batch.
struct TrainSample {
    int pair_idx = 0;
    View view = View::Axial;
    int slice = 0;
    int target_tp = 1;
};

/// Expand registered pairs into the per-epoch sample stream. For every pair,
/// view and slice index kept in BOTH timepoints' slice stacks this emits two
/// samples ([X0_reg, X1] -> Y1 then [X1, X0_reg] -> Y0_reg). Order is
/// shuffled deterministically from (cfg.seed, epoch) at couple granularity.
inline std::vector<TrainSample> make_training_samples(
    const std::vector<RegisteredPair>& pairs, const std::vector<View>& views,
    const TrainConfig& cfg, int epoch, bool shuffle,
    std::vector<std::string>* warnings = nullptr) {
    struct Unit {
        int pair_idx;
        View view;
        int slice;
    };
    PreprocessConfig pp;
    pp.empty_eps = cfg.empty_eps;
    std::vector<Unit> units;
    for (size_t pi = 0; pi < pairs.size(); ++pi) {
        const auto& pair = pairs[pi];
        bool any = false;
        for (View view : views) {
            const SliceStack s0 = extract_slices(pair.x0_reg, view, pp);
            const SliceStack s1 = extract_slices(pair.x1, view, pp);
            std::vector<int> common;
            std::set_intersection(s0.kept_indices.begin(), s0.kept_indices.end(),
                                  s1.kept_indices.begin(), s1.kept_indices.end(),
                                  std::back_inserter(common));
            for (size_t i = 0; i < common.size();
                 i += static_cast<size_t>(cfg.slice_stride)) {
                units.push_back({static_cast<int>(pi), view, common[i]});
                any = true;
            }
        }
        if (!any && warnings)
            warnings->push_back("pair " + pair.patient_id + "#" +
                                std::to_string(pair.pair_index) +
                                ": no overlapping kept slices, skipped");
    }
    if (shuffle) {
        Rng rng(hash_combine(cfg.seed, static_cast<uint64_t>(epoch) + 0x5e5eULL));
        rng.shuffle(units);
    }
    std::vector<TrainSample> samples;
    samples.reserve(units.size() * 2);
    for (const auto& u : units) {
        samples.push_back({u.pair_idx, u.view, u.slice, 1});
        samples.push_back({u.pair_idx, u.view, u.slice, 0});
    }
    return samples;
}

namespace train_detail {

inline void fill_input_row(const RegisteredPair& pair, const TrainSample& s,
                           bool longitudinal, Tensor<float>& batch, int row) {
    const Volume3D& target = s.target_tp == 1 ? pair.x1 : pair.x0_reg;
    const Volume3D& other = s.target_tp == 1 ? pair.x0_reg : pair.x1;
    const Slice2D st = extract_slice(target, s.view, s.slice);
    if (longitudinal) {
        const Slice2D so = extract_slice(other, s.view, s.slice);
        std::copy(so.pix.begin(), so.pix.end(), batch.channel(row, 0));
        std::copy(st.pix.begin(), st.pix.end(), batch.channel(row, 1));
    } else {
        std::copy(st.pix.begin(), st.pix.end(), batch.channel(row, 0));
    }
}

inline void fill_onehot_row(const RegisteredPair& pair, const TrainSample& s,
                            Tensor<float>& onehot, int row) {
    const LabelVolume& gt = s.target_tp == 1 ? *pair.y1 : *pair.y0_reg;
    const LabelSlice2D sl = extract_label_slice(gt, s.view, s.slice);
    const int64_t plane = onehot.plane();
    for (int64_t i = 0; i < plane; ++i) {
        const uint8_t cls = sl.labels[static_cast<size_t>(i)];
        onehot.channel(row, cls)[i] = 1.0f;
    }
}

/// Rows start, start+2, start+4, ... as their own tensor.
inline Tensor<float> gather_rows(const Tensor<float>& x, int start) {
    Tensor<float> y(x.n / 2, x.c, x.h, x.w);
    const int64_t chunk = static_cast<int64_t>(x.c) * x.plane();
    for (int i = 0; i < y.n; ++i)
        std::copy_n(x.sample(start + 2 * i), chunk, y.sample(i));
    return y;
}

inline void scatter_rows_add(Tensor<float>& dst, const Tensor<float>& src, int start) {
    const int64_t chunk = static_cast<int64_t>(dst.c) * dst.plane();
    for (int i = 0; i < src.n; ++i) {
        float* d = dst.sample(start + 2 * i);
        const float* s = src.sample(i);
        for (int64_t k = 0; k < chunk; ++k) d[k] += s[k];
    }
}

struct BatchResult {
    LossBreakdown loss;
    int units = 0;
};

/// Loss and probability-space gradient for one interleaved batch.
inline BatchResult batch_loss_and_grad(const Tensor<float>& probs,
                                       const Tensor<float>& onehot,
                                       bool longitudinal, Tensor<float>* dprobs) {
    BatchResult out;
    out.units = probs.n / 2;
    const Tensor<float> pred1 = gather_rows(probs, 0);
    const Tensor<float> pred0 = gather_rows(probs, 1);
    const Tensor<float> gt1 = gather_rows(onehot, 0);
    const Tensor<float> gt0 = gather_rows(onehot, 1);

    const double seg = seg_loss(pred0, gt0, pred1, gt1);
    double prog = 0.0;

    Tensor<float> d1(pred1.n, pred1.c, pred1.h, pred1.w);
    Tensor<float> d0(pred0.n, pred0.c, pred0.h, pred0.w);
    if (dprobs) {
        mse_grad(pred1, gt1, 1.0, d1);
        mse_grad(pred0, gt0, 1.0, d0);
    }

    if (longitudinal) {
        const Tensor<float> p1c = extract_channel(pred1, ClassMap::kConsolidation);
        const Tensor<float> p0c = extract_channel(pred0, ClassMap::kConsolidation);
        const Tensor<float> g1c = extract_channel(gt1, ClassMap::kConsolidation);
        const Tensor<float> g0c = extract_channel(gt0, ClassMap::kConsolidation);
        prog = prog_loss(p0c, p1c, g0c, g1c);
        if (dprobs) {
            Tensor<float> dp0c(p0c.n, 1, p0c.h, p0c.w);
            Tensor<float> dp1c(p1c.n, 1, p1c.h, p1c.w);
            prog_loss_grad(p0c, p1c, g0c, g1c, 1.0, dp0c, dp1c);
            add_channel_grad(d1, dp1c, ClassMap::kConsolidation);
            add_channel_grad(d0, dp0c, ClassMap::kConsolidation);
        }
    }
    if (dprobs) {
        *dprobs = Tensor<float>(probs.n, probs.c, probs.h, probs.w);
        scatter_rows_add(*dprobs, d1, 0);
        scatter_rows_add(*dprobs, d0, 1);
    }
    out.loss = LossBreakdown::make(seg, prog);
    return out;
}

}  // namespace train_detail

struct EpochRecord {
    int epoch = 0;
    LossBreakdown train_loss;
    LossBreakdown val_loss;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::string> warnings;
};

inline nlohmann::ordered_json history_to_json(const TrainHistory& h) {
    nlohmann::ordered_json j;
    j["best_epoch"] = h.best_epoch;
    j["best_val"] = h.best_val;
    j["warnings"] = h.warnings;
    j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : h.epochs)
        j["epochs"].push_back({{"epoch", e.epoch},
                               {"train_seg", e.train_loss.seg},
                               {"train_prog", e.train_loss.prog},
                               {"train_total", e.train_loss.total},
                               {"val_seg", e.val_loss.seg},
                               {"val_prog", e.val_loss.prog},
                               {"val_total", e.val_loss.total},
                               {"lr", e.lr},
                               {"wall_seconds", e.wall_seconds}});
    return j;
}

/// Train a model on registered pairs. Returns the history; the model is left
/// holding the weights of the best-validation epoch. When diag_dir is given,
/// a per-step loss log (step, seg, prog, total, lr) is appended there and a
/// diagnostic checkpoint is written if the loss turns non-finite. Fully
/// reproducible for a fixed seed on a single device.
inline TrainHistory train(FCDenseNet<float>& model,
                          const std::vector<RegisteredPair>& train_pairs,
                          const std::vector<RegisteredPair>& val_pairs,
                          const TrainConfig& cfg, const std::string& diag_dir = "",
                          bool verbose = false) {
    cfg.validate();
    const bool longitudinal =
        model.config().variant == ModelConfig::Variant::Longitudinal;
    LONGCT_REQUIRE(!train_pairs.empty(), "train: no training pairs");
    for (const auto& p : train_pairs)
        LONGCT_REQUIRE(p.y0_reg && p.y1, "train: pair " + p.patient_id +
                                             " is missing pathology ground truth");
    for (const auto& p : val_pairs)
        LONGCT_REQUIRE(p.y0_reg && p.y1, "train: validation pair " + p.patient_id +
                                             " is missing pathology ground truth");
    {
        std::set<std::string> train_ids, val_ids;
        for (const auto& p : train_pairs) train_ids.insert(p.patient_id);
        for (const auto& p : val_pairs) val_ids.insert(p.patient_id);
        for (const auto& id : val_ids)
            LONGCT_REQUIRE(train_ids.count(id) == 0,
                           "train: patient " + id + " appears in both splits");
    }

    Adam<float> opt(model, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    EarlyStopper stopper(cfg.early_stop_patience);
    TrainHistory history;

    std::ofstream step_log;
    if (!diag_dir.empty()) {
        std::filesystem::create_directories(diag_dir);
        step_log.open(diag_dir + "/" + model.config().variant_name() +
                      "_steps.jsonl");
    }

    std::vector<std::vector<float>> best_params;
    std::vector<std::vector<float>> best_buffers;
    auto snapshot = [&]() {
        best_params.clear();
        best_buffers.clear();
        for (const auto& p : model.parameters()) best_params.push_back(p.value.v);
        for (const auto& b : model.buffers()) best_buffers.push_back(b.value);
    };
    auto restore = [&]() {
        if (best_params.empty()) return;
        for (size_t i = 0; i < best_params.size(); ++i)
            model.parameters()[i].value.v = best_params[i];
        for (size_t i = 0; i < best_buffers.size(); ++i)
            model.buffers()[i].value = best_buffers[i];
    };

    auto diverged = [&](double value, int epoch) {
        if (std::isfinite(value)) return;
        if (!diag_dir.empty()) {
            std::filesystem::create_directories(diag_dir);
            save_checkpoint(diag_dir + "/diverged.ckpt", model);
        }
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                    (diag_dir.empty() ? "" : "; diagnostic checkpoint in " + diag_dir));
    };

    auto run_split = [&](const std::vector<RegisteredPair>& pairs, int epoch,
                         bool training) {
        const auto samples = make_training_samples(
            pairs, cfg.views, cfg, epoch, /*shuffle=*/training,
            training && epoch == 0 ? &history.warnings : nullptr);
        double sum_seg = 0, sum_prog = 0;
        int64_t total_units = 0;
        int64_t step = static_cast<int64_t>(epoch) * 1000000;
        for (size_t off = 0; off < samples.size(); off += static_cast<size_t>(cfg.batch_size)) {
            const int bs = static_cast<int>(
                std::min(samples.size() - off, static_cast<size_t>(cfg.batch_size)));
            const Slice2D probe = extract_slice(
                pairs[static_cast<size_t>(samples[off].pair_idx)].x1, samples[off].view,
                samples[off].slice);
            Tensor<float> input(bs, model.config().in_channels, probe.height,
                                probe.width);
            Tensor<float> onehot(bs, model.config().n_classes, probe.height,
                                 probe.width);
            for (int r = 0; r < bs; ++r) {
                const TrainSample& s = samples[off + static_cast<size_t>(r)];
                const RegisteredPair& pair = pairs[static_cast<size_t>(s.pair_idx)];
                train_detail::fill_input_row(pair, s, longitudinal, input, r);
                train_detail::fill_onehot_row(pair, s, onehot, r);
            }
            Tensor<float> probs = model.forward(
                input, training, hash_combine(cfg.seed, static_cast<uint64_t>(step)));
            Tensor<float> dprobs;
            const auto res = train_detail::batch_loss_and_grad(
                probs, onehot, longitudinal, training ? &dprobs : nullptr);
            diverged(res.loss.total, epoch);
            if (training) {
                model.zero_grad();
                model.backward(dprobs);
                const double lr = cfg.decay_per_iteration
                                      ? cfg.lr0 * std::pow(cfg.decay_factor,
                                                           opt.steps() / cfg.decay_every)
                                      : lr_schedule(epoch, cfg);
                opt.step(lr);
                if (step_log.is_open())
                    step_log << "{\"step\":" << opt.steps() << ",\"seg\":"
                             << res.loss.seg << ",\"prog\":" << res.loss.prog
                             << ",\"total\":" << res.loss.total << ",\"lr\":" << lr
                             << "}\n";
            }
            sum_seg += res.loss.seg * res.units;
            sum_prog += res.loss.prog * res.units;
            total_units += res.units;
            ++step;
        }
        model.clear_cache();
        if (total_units == 0) return LossBreakdown{};
        return LossBreakdown::make(sum_seg / static_cast<double>(total_units),
                                   sum_prog / static_cast<double>(total_units));
    };

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const LossBreakdown train_loss = run_split(train_pairs, epoch, true);
        const LossBreakdown val_loss =
            val_pairs.empty() ? train_loss : run_split(val_pairs, epoch, false);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        rec.val_loss = val_loss;
        rec.lr = lr_schedule(epoch, cfg);
        rec.wall_seconds = wall;
        history.epochs.push_back(rec);
        if (verbose) {
            std::printf(
                "  epoch %3d  train %.5f (seg %.5f prog %.5f)  val %.5f  lr %.1e  "
                "%.1fs\n",
                epoch, train_loss.total, train_loss.seg, train_loss.prog,
                val_loss.total, rec.lr, wall);
            std::fflush(stdout);
        }

        if (stopper.observe(val_loss.total)) snapshot();
        if (stopper.should_stop()) break;
    }
    restore();
    history.best_epoch = stopper.best_epoch();
    history.best_val = stopper.best();
    return history;
}

}  // namespace longct
