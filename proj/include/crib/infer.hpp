#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "crib/augment.hpp"
#include "crib/errors.hpp"
#include "crib/model.hpp"
#include "crib/rng.hpp"
#include "crib/train.hpp"

namespace crib {

struct InferConfig {
    int n_views = 5;
    bool calibrate = true;      // map the ensemble mean through the Platt sigmoid
    bool threshold_raw = false; // classify on the raw mean instead
    double operating_point = 0.5;
    std::uint64_t seed = 7;
};

struct SlidePrediction {
    std::string slide_id;
    std::string scan_id;
    double raw_score = 0.0;        // arithmetic mean of the score matrix
    double calibrated_score = 0.0;
    int label = 0;
    std::vector<std::vector<double>> scores; // [model][view]
};

inline int classify(double score, double operating_point = 0.5) {
    return score >= operating_point ? 1 : 0;
}

// Mean in a canonical (sorted) summation order, so the result is exactly
// invariant under model/view permutations.
inline double matrix_mean(const std::vector<std::vector<double>>& scores) {
    std::vector<double> flat;
    for (const auto& row : scores) flat.insert(flat.end(), row.begin(), row.end());
    if (flat.empty()) throw InvariantError("matrix_mean: empty score matrix");
    std::sort(flat.begin(), flat.end());
    double acc = 0.0;
    for (double v : flat) acc += v;
    return acc / static_cast<double>(flat.size());
}

// Frozen-model ensemble inference over one scan's bag: all extracted
// patches, n_views TTA views (view 0 identity), soft voting across the
// model x view matrix, optional Platt calibration, 0.5 operating point.
inline SlidePrediction ensemble_predict(const std::string& slide_id, const ScanData& scan,
                                        const PatchPixels& pixels,
                                        const std::vector<ModelParams>& checkpoints,
                                        const CalibrationParams& platt, const InferConfig& cfg) {
    if (checkpoints.empty()) throw InvariantError("ensemble_predict: no checkpoints");
    if (scan.patches.empty())
        throw InvariantError("ensemble_predict: scan " + scan.scan_id + " has no patches");

    std::vector<Image> patch_images;
    patch_images.reserve(scan.patches.size());
    for (const auto& pm : scan.patches) patch_images.push_back(pixels.load(scan, pm));

    const auto views = make_tta_views(cfg.n_views, rng::derive_key(cfg.seed, "infer/tta", scan.scan_id));

    SlidePrediction pred;
    pred.slide_id = slide_id;
    pred.scan_id = scan.scan_id;
    pred.scores.assign(checkpoints.size(), std::vector<double>(views.size(), 0.0));

    for (std::size_t v = 0; v < views.size(); ++v) {
        std::vector<Vec> bag;
        bag.reserve(patch_images.size());
        for (const auto& img : patch_images) {
            const Image viewed = apply_view(img, views[v]);
            const Descriptor d = patch_descriptor(viewed);
            bag.emplace_back(d.begin(), d.end());
        }
        for (std::size_t m = 0; m < checkpoints.size(); ++m)
            pred.scores[m][v] = slide_forward(checkpoints[m], bag).prob;
    }

    pred.raw_score = matrix_mean(pred.scores);
    pred.calibrated_score = cfg.calibrate ? platt.apply(pred.raw_score) : pred.raw_score;
    pred.label = classify(cfg.threshold_raw ? pred.raw_score : pred.calibrated_score,
                          cfg.operating_point);
    return pred;
}

} // namespace crib
