#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crib/augment.hpp"
#include "crib/descriptor.hpp"
#include "crib/errors.hpp"
#include "crib/manifest.hpp"
#include "crib/metrics.hpp"
#include "crib/model.hpp"
#include "crib/optim.hpp"
#include "crib/patch_store.hpp"
#include "crib/rng.hpp"
#include "crib/tiling.hpp"

namespace crib {

// --- Dataset view over tiled artifacts ---------------------------------------

struct PatchMeta {
    int i = 0;
    int j = 0;
    double tissue_fraction = 0.0;
    double annotated_fraction = 0.0;
    int label = 0;
};

struct ScanData {
    std::string scan_id;
    std::string scanner_id;
    bool is_primary = false;
    std::string store_path;
    std::vector<PatchMeta> patches; // coverage-filtered
};

struct SlideData {
    std::string slide_id;
    std::string patient_id;
    std::string cohort_id;
    Role role = Role::Train;
    int label = 0;
    bool borderline = false;
    std::vector<ScanData> scans; // primary first

    const ScanData& primary() const {
        for (const auto& s : scans)
            if (s.is_primary) return s;
        throw InvariantError("slide " + slide_id + ": no primary scan data");
    }
};

struct Dataset {
    std::vector<SlideData> slides;
};

// Opens every referenced patch store once; reads are pread-based and safe
// to share across fold workers.
class PatchPixels {
public:
    explicit PatchPixels(const Dataset& ds) {
        for (const auto& slide : ds.slides)
            for (const auto& scan : slide.scans)
                if (!readers_.count(scan.store_path))
                    readers_.emplace(scan.store_path,
                                     std::make_unique<patch_store::Reader>(scan.store_path));
    }

    Image load(const ScanData& scan, const PatchMeta& patch) const {
        auto it = readers_.find(scan.store_path);
        if (it == readers_.end()) throw MissingInputError("store not opened: " + scan.store_path);
        const std::string key = std::to_string(patch.i) + "_" + std::to_string(patch.j);
        return decode_png_rgb(it->second->read(key));
    }

private:
    std::map<std::string, std::unique_ptr<patch_store::Reader>> readers_;
};

// --- Configuration ---------------------------------------------------------------

struct TrainRunConfig {
    int patch_epochs = 8;
    int slide_epochs = 32;
    int patch_batch = 64;
    int slide_batch = 1; // one bag per step
    int max_bag_size = 2200;
    int folds = 10;
    std::uint64_t seed = 7;
    AugmentOptions augment;
    std::vector<std::string> withhold_pixel_cohorts;

    void validate() const {
        if (patch_epochs < 0 || slide_epochs < 0) throw InvariantError("train: negative epochs");
        if (patch_batch < 1 || max_bag_size < 1) throw InvariantError("train: bad batch/bag size");
        if (folds < 2) throw InvariantError("train: folds must be >= 2");
    }
};

struct FoldCheckpoint {
    int fold = 0;
    int best_epoch = 0; // 1-based; 0 = never evaluated
    double holdout_kappa = 0.0;
    ModelParams params;
};

struct HoldoutScore {
    std::string slide_id;
    double score = 0.5;
    int label = 0;
};

struct CalibrationParams {
    double a = 1.0;
    double b = 0.0;

    double apply(double raw) const { return sigmoid(a * raw + b); }
};

// --- Helpers -----------------------------------------------------------------------

// Uniform subsample without replacement when a bag exceeds the cap.
inline std::vector<std::size_t> subsample_bag(std::size_t bag_size, std::size_t max_size,
                                              rng::Stream& st) {
    std::vector<std::size_t> idx(bag_size);
    std::iota(idx.begin(), idx.end(), 0);
    if (bag_size <= max_size) return idx;
    st.shuffle(idx);
    idx.resize(max_size);
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace train_detail {

struct FoldSlides {
    std::vector<std::size_t> train;   // indices into dataset.slides
    std::vector<std::size_t> holdout; // same-fold training-role slides
};

inline FoldSlides split_fold(const Dataset& ds, const FoldAssignment& folds, int fold) {
    FoldSlides out;
    for (std::size_t s = 0; s < ds.slides.size(); ++s) {
        const auto& slide = ds.slides[s];
        if (slide.role != Role::Train) continue;
        if (folds.fold_of(slide.patient_id) == fold) out.holdout.push_back(s);
        else out.train.push_back(s);
    }
    // Patient-level leakage guard.
    std::set<std::string> train_patients, holdout_patients;
    for (auto s : out.train) train_patients.insert(ds.slides[s].patient_id);
    for (auto s : out.holdout) holdout_patients.insert(ds.slides[s].patient_id);
    for (const auto& p : holdout_patients)
        if (train_patients.count(p))
            throw InvariantError("fold " + std::to_string(fold) + ": patient " + p +
                                 " leaks between train and holdout");
    return out;
}

inline Descriptor descriptor_of(const Image& img) { return patch_descriptor(img); }

inline Vec to_vec(const Descriptor& d) { return Vec(d.begin(), d.end()); }

// Identity-view descriptors for a scan's kept patches (used for holdout
// evaluation and calibration scoring; computed once and cached per fold).
inline std::vector<Vec> plain_bag_descriptors(const PatchPixels& pixels, const ScanData& scan) {
    std::vector<Vec> out;
    out.reserve(scan.patches.size());
    for (const auto& patch : scan.patches)
        out.push_back(to_vec(descriptor_of(pixels.load(scan, patch))));
    return out;
}

} // namespace train_detail

// --- Step 1: fully supervised patch-level classifier --------------------------------

// Trains encoder + patch head on pixel-derived patch labels from the
// fold's training slides (primary scans; cohorts without pixel annotations
// are withheld). Weighted BCE, AdamW, OneCycle schedule.
inline ModelParams train_patch_classifier(const Dataset& ds, const PatchPixels& pixels,
                                          const FoldAssignment& folds, int fold,
                                          const TrainRunConfig& cfg) {
    cfg.validate();
    const auto split = train_detail::split_fold(ds, folds, fold);

    struct PatchRef {
        std::size_t slide;
        std::size_t patch;
        int label;
    };
    std::vector<PatchRef> refs;
    for (auto s : split.train) {
        const auto& slide = ds.slides[s];
        if (std::find(cfg.withhold_pixel_cohorts.begin(), cfg.withhold_pixel_cohorts.end(),
                      slide.cohort_id) != cfg.withhold_pixel_cohorts.end())
            continue;
        const auto& scan = slide.primary();
        for (std::size_t k = 0; k < scan.patches.size(); ++k)
            refs.push_back({s, k, scan.patches[k].label});
    }
    if (refs.empty())
        throw InvariantError("fold " + std::to_string(fold) + ": no patches available for step 1");

    std::size_t n_pos = 0;
    for (const auto& r : refs) n_pos += r.label != 0;
    if (n_pos == 0 || n_pos == refs.size())
        throw InvariantError("fold " + std::to_string(fold) +
                             ": patch labels are single-class (positives " + std::to_string(n_pos) +
                             " of " + std::to_string(refs.size()) + ")");
    const double pos_weight =
        static_cast<double>(refs.size() - n_pos) / static_cast<double>(n_pos);

    ModelParams params = init_params(rng::derive_key(cfg.seed, "step1/init", static_cast<std::uint64_t>(fold)));
    if (cfg.patch_epochs == 0) return params;

    auto opt = OptimizerState::make(OptimizerKind::AdamW, 1e-2);
    const long steps_per_epoch =
        static_cast<long>((refs.size() + static_cast<std::size_t>(cfg.patch_batch) - 1) /
                          static_cast<std::size_t>(cfg.patch_batch));
    const long total_steps = steps_per_epoch * cfg.patch_epochs;
    long step = 0;

    std::vector<std::size_t> order(refs.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.patch_epochs; ++epoch) {
        auto shuffle_st = rng::stream(cfg.seed, "step1/shuffle", static_cast<std::uint64_t>(fold),
                                      static_cast<std::uint64_t>(epoch));
        shuffle_st.shuffle(order);
        auto aug_st = rng::stream(cfg.seed, "step1/aug", static_cast<std::uint64_t>(fold),
                                  static_cast<std::uint64_t>(epoch));
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.patch_batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.patch_batch));
            ModelParams grads = zeros_like(params);
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const auto& ref = refs[order[b]];
                const auto& slide = ds.slides[ref.slide];
                const auto& scan = slide.primary();
                Image img = pixels.load(scan, scan.patches[ref.patch]);
                img = augment_patch(img, cfg.augment, aug_st);
                const Vec d = train_detail::to_vec(patch_descriptor(img));
                PatchForward fwd = patch_forward(params, d);
                const double dlogit =
                    weighted_bce_dlogit(fwd.prob, ref.label, pos_weight) * inv_batch;
                patch_backward(params, fwd, dlogit, grads);
            }
            const double lr = onecycle_lr(step, steps_per_epoch, total_steps);
            optimizer_step(opt, params, grads, lr);
            ++step;
        }
    }
    return params;
}

// --- Step 2: weakly supervised slide-level MIL --------------------------------------

struct SlideMilResult {
    FoldCheckpoint checkpoint;
    std::vector<HoldoutScore> holdout_scores; // scored at the selected epoch
};

// Transfers step-1 encoder weights into a fresh MIL model, then trains it
// with RAdam at constant lr. Per epoch: one scan per slide chosen at
// random, alternating disjoint patch sets per forward pass, bags capped at
// max_bag_size, checkpoint selected by holdout Cohen's kappa at 0.5.
inline SlideMilResult train_slide_mil(const Dataset& ds, const PatchPixels& pixels,
                                      const FoldAssignment& folds, int fold,
                                      const ModelParams& patch_weights, const TrainRunConfig& cfg) {
    cfg.validate();
    const auto split = train_detail::split_fold(ds, folds, fold);
    if (split.train.empty() || split.holdout.empty())
        throw InvariantError("fold " + std::to_string(fold) + ": empty train or holdout slide set");

    std::size_t n_pos = 0;
    for (auto s : split.train) n_pos += ds.slides[s].label != 0;
    if (n_pos == 0 || n_pos == split.train.size())
        throw InvariantError("fold " + std::to_string(fold) + ": slide labels are single-class");
    const double pos_weight =
        static_cast<double>(split.train.size() - n_pos) / static_cast<double>(n_pos);

    ModelParams params = init_params(rng::derive_key(cfg.seed, "step2/init", static_cast<std::uint64_t>(fold)));
    // Encoder transfer; attention and slide head keep their fresh init.
    params.enc_w1 = patch_weights.enc_w1;
    params.enc_b1 = patch_weights.enc_b1;
    params.enc_ln1_g = patch_weights.enc_ln1_g;
    params.enc_ln1_b = patch_weights.enc_ln1_b;
    params.enc_w2 = patch_weights.enc_w2;
    params.enc_b2 = patch_weights.enc_b2;
    params.enc_ln2_g = patch_weights.enc_ln2_g;
    params.enc_ln2_b = patch_weights.enc_ln2_b;

    // Holdout bags are deterministic (identity view, all patches), so the
    // descriptors are computed once per fold.
    std::vector<std::vector<Vec>> holdout_bags;
    std::vector<int> holdout_labels;
    for (auto s : split.holdout) {
        holdout_bags.push_back(train_detail::plain_bag_descriptors(pixels, ds.slides[s].primary()));
        holdout_labels.push_back(ds.slides[s].label);
    }

    auto holdout_eval = [&](const ModelParams& p) {
        std::vector<int> preds;
        std::vector<double> scores;
        for (const auto& bag : holdout_bags) {
            if (bag.empty()) {
                preds.push_back(0);
                scores.push_back(0.0);
                continue;
            }
            const double prob = slide_forward(p, bag).prob;
            scores.push_back(prob);
            preds.push_back(prob >= 0.5 ? 1 : 0);
        }
        return std::make_pair(cohens_kappa(preds, holdout_labels).value, scores);
    };

    auto opt = OptimizerState::make(OptimizerKind::RAdam, 1e-5);
    const double lr = 3e-5;

    SlideMilResult result;
    result.checkpoint.fold = fold;
    result.checkpoint.params = params;
    result.checkpoint.best_epoch = 0;
    result.checkpoint.holdout_kappa = -2.0;

    long forward_counter = 0; // alternates the disjoint patch sets
    std::vector<std::size_t> order = split.train;
    for (int epoch = 1; epoch <= cfg.slide_epochs; ++epoch) {
        auto order_st = rng::stream(cfg.seed, "step2/order", static_cast<std::uint64_t>(fold),
                                    static_cast<std::uint64_t>(epoch));
        order_st.shuffle(order);
        for (auto s : order) {
            const auto& slide = ds.slides[s];
            // Scan randomisation: one digitisation per slide per epoch.
            std::size_t scan_idx = 0;
            if (slide.scans.size() > 1) {
                auto scan_st = rng::stream(cfg.seed, "step2/scan", slide.slide_id,
                                           static_cast<std::uint64_t>(fold),
                                           static_cast<std::uint64_t>(epoch));
                scan_idx = scan_st.uniform_int(slide.scans.size());
            }
            const auto& scan = slide.scans[scan_idx];

            // Alternate the two non-overlapping pattern sets per forward pass.
            std::vector<std::size_t> even, odd;
            for (std::size_t k = 0; k < scan.patches.size(); ++k) {
                const auto& pm = scan.patches[k];
                if (pm.i % 2 == 0 && pm.j % 2 == 0) even.push_back(k);
                else if (pm.i % 2 == 1 && pm.j % 2 == 1) odd.push_back(k);
            }
            const bool use_even = (forward_counter++ % 2) == 0;
            std::vector<std::size_t>* chosen = use_even ? &even : &odd;
            if (chosen->empty()) chosen = use_even ? &odd : &even;
            if (chosen->empty()) {
                std::cerr << "warning: slide " << slide.slide_id << " scan " << scan.scan_id
                          << " has no usable patch set, skipped\n";
                continue;
            }

            auto bag_st = rng::stream(cfg.seed, "step2/bag", slide.slide_id,
                                      static_cast<std::uint64_t>(fold),
                                      static_cast<std::uint64_t>(epoch));
            auto keep = subsample_bag(chosen->size(), static_cast<std::size_t>(cfg.max_bag_size), bag_st);

            auto aug_st = rng::stream(cfg.seed, "step2/aug", slide.slide_id,
                                      static_cast<std::uint64_t>(fold),
                                      static_cast<std::uint64_t>(epoch));
            std::vector<Vec> bag;
            bag.reserve(keep.size());
            for (auto k : keep) {
                Image img = pixels.load(scan, scan.patches[(*chosen)[k]]);
                img = augment_patch(img, cfg.augment, aug_st);
                bag.push_back(train_detail::to_vec(patch_descriptor(img)));
            }

            auto drop_st = rng::stream(cfg.seed, "step2/dropout", slide.slide_id,
                                       static_cast<std::uint64_t>(fold),
                                       static_cast<std::uint64_t>(epoch));
            Vec mask(kHeadHidden);
            for (auto& m : mask) m = drop_st.bernoulli(1.0 - kDropoutRate) ? 1.0 : 0.0;

            SlideForward fwd = slide_forward(params, bag, &mask);
            ModelParams grads = slide_backward(params, fwd, slide.label, pos_weight);
            optimizer_step(opt, params, grads, lr);
        }

        const auto [kappa, scores] = holdout_eval(params);
        if (kappa > result.checkpoint.holdout_kappa) {
            result.checkpoint.holdout_kappa = kappa;
            result.checkpoint.best_epoch = epoch;
            result.checkpoint.params = params;
            result.holdout_scores.clear();
            for (std::size_t h = 0; h < split.holdout.size(); ++h)
                result.holdout_scores.push_back(
                    {ds.slides[split.holdout[h]].slide_id, scores[h], holdout_labels[h]});
        }
    }

    if (cfg.slide_epochs == 0) {
        const auto [kappa, scores] = holdout_eval(params);
        result.checkpoint.holdout_kappa = kappa;
        for (std::size_t h = 0; h < split.holdout.size(); ++h)
            result.holdout_scores.push_back(
                {ds.slides[split.holdout[h]].slide_id, scores[h], holdout_labels[h]});
    }
    return result;
}

// --- Platt scaling ----------------------------------------------------------------

// Maximum-likelihood logistic fit p = sigmoid(a*s + b) on held-out scores,
// by damped Newton iteration.
inline CalibrationParams fit_platt(const std::vector<double>& scores, const std::vector<int>& labels,
                                   bool* warned_nonpositive_slope = nullptr) {
    if (scores.size() != labels.size() || scores.empty())
        throw InvariantError("fit_platt: need equal-length nonempty inputs");
    const long n_pos = std::count(labels.begin(), labels.end(), 1);
    if (n_pos == 0 || static_cast<std::size_t>(n_pos) == labels.size())
        throw InvariantError("fit_platt: both classes required in the held-out scores");

    double a = 0.0, b = 0.0;
    auto nll = [&](double aa, double bb) {
        double acc = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double z = aa * scores[i] + bb;
            // log(1 + exp(z)) - y*z, numerically stable
            const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            acc += softplus - (labels[i] ? z : 0.0);
        }
        return acc;
    };

    double current = nll(a, b);
    for (int iter = 0; iter < 100; ++iter) {
        double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double p = sigmoid(a * scores[i] + b);
            const double e = p - (labels[i] ? 1.0 : 0.0);
            const double w = std::max(p * (1.0 - p), 1e-12);
            ga += e * scores[i];
            gb += e;
            haa += w * scores[i] * scores[i];
            hab += w * scores[i];
            hbb += w;
        }
        if (std::sqrt(ga * ga + gb * gb) < 1e-10) break;
        const double det = haa * hbb - hab * hab;
        double da, db;
        if (std::abs(det) > 1e-18) {
            da = (hbb * ga - hab * gb) / det;
            db = (haa * gb - hab * ga) / det;
        } else {
            da = ga;
            db = gb;
        }
        double scale = 1.0;
        for (int damp = 0; damp < 60; ++damp) {
            const double trial = nll(a - scale * da, b - scale * db);
            if (trial <= current + 1e-15) {
                a -= scale * da;
                b -= scale * db;
                current = trial;
                break;
            }
            scale *= 0.5;
        }
    }

    if (warned_nonpositive_slope) *warned_nonpositive_slope = a <= 0.0;
    CalibrationParams out;
    out.a = a;
    out.b = b;
    return out;
}

} // namespace crib
