#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "crib/errors.hpp"
#include "crib/rng.hpp"

namespace crib {

struct MetricEstimate {
    std::string name;
    double value = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n_bootstrap = 1000;
    std::uint64_t seed = 0;
    bool defined = true; // false when the metric is degenerate on the data
    int redraws = 0;     // resamples redrawn because the metric was undefined
};

struct ConfusionMatrix {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    long total() const { return tp + fp + tn + fn; }
};

inline ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw InvariantError("confusion: need equal-length nonempty inputs");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i]) (preds[i] ? cm.tp : cm.fn) += 1;
        else (preds[i] ? cm.fp : cm.tn) += 1;
    }
    return cm;
}

struct SensSpec {
    double sensitivity = 0.0;
    double specificity = 0.0;
    bool sensitivity_defined = false;
    bool specificity_defined = false;
};

inline SensSpec sensitivity_specificity(const ConfusionMatrix& cm) {
    SensSpec out;
    if (cm.tp + cm.fn > 0) {
        out.sensitivity = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
        out.sensitivity_defined = true;
    }
    if (cm.tn + cm.fp > 0) {
        out.specificity = static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
        out.specificity_defined = true;
    }
    return out;
}

// Mann-Whitney AUC via average ranks. Tie groups contribute exactly half
// credit, so the result equals the O(n^2) pair-count definition bit for bit.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw InvariantError("roc_auc: need equal-length nonempty inputs");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::size_t n_pos = 0;
    for (int y : labels) n_pos += y != 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw InvariantError("roc_auc: both classes required");

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double numerator =
        rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0);
    return numerator / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

// Stepwise ROC curve at descending distinct thresholds (plot-ready; the
// trapezoid over these points integrates to the tie-aware AUC).
inline std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double n_pos = 0, n_neg = 0;
    for (int y : labels) (y ? n_pos : n_neg) += 1;

    std::vector<RocPoint> points;
    points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    double tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] ? tp : fp) += 1;
            ++i;
        }
        points.push_back({s, n_neg > 0 ? fp / n_neg : 0.0, n_pos > 0 ? tp / n_pos : 0.0});
    }
    return points;
}

struct KappaResult {
    double value = 0.0;
    bool degenerate = false;
};

// Non-weighted binary Cohen's kappa: (p_o - p_e) / (1 - p_e) with marginal
// chance agreement. Two constant raters that agree return 1; two constant
// raters in general are flagged degenerate.
inline KappaResult cohens_kappa(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty())
        throw InvariantError("cohens_kappa: need equal-length nonempty inputs");
    const double n = static_cast<double>(a.size());
    double n11 = 0, n00 = 0, a1 = 0, b1 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        n11 += (a[i] && b[i]) ? 1 : 0;
        n00 += (!a[i] && !b[i]) ? 1 : 0;
        a1 += a[i] ? 1 : 0;
        b1 += b[i] ? 1 : 0;
    }
    const double po = (n11 + n00) / n;
    const double pa1 = a1 / n, pb1 = b1 / n;
    const double pe = pa1 * pb1 + (1.0 - pa1) * (1.0 - pb1);
    KappaResult out;
    if (pe == 1.0) {
        out.value = po == 1.0 ? 1.0 : 0.0;
        out.degenerate = po != 1.0;
        return out;
    }
    out.value = (po - pe) / (1.0 - pe);
    return out;
}

// --- Bootstrap -----------------------------------------------------------------

// Percentile-bootstrap 95% CI by slide-level resampling with replacement.
// The metric closure receives resample indices and may return nullopt for
// degenerate resamples, which are redrawn (counted in `redraws`). Each
// resample draws from its own (seed, index)-derived stream, so serial and
// parallel evaluation orders agree.
inline MetricEstimate bootstrap_ci(
    const std::string& name,
    const std::function<std::optional<double>(const std::vector<std::size_t>&)>& metric,
    std::size_t n_items, int n_bootstrap, std::uint64_t seed,
    std::vector<double>* out_resample_values = nullptr) {
    if (n_items == 0) throw InvariantError("bootstrap_ci: empty data");

    MetricEstimate est;
    est.name = name;
    est.n_bootstrap = n_bootstrap;
    est.seed = seed;

    std::vector<std::size_t> identity(n_items);
    std::iota(identity.begin(), identity.end(), 0);
    const auto full = metric(identity);
    if (!full.has_value()) {
        est.defined = false;
        return est;
    }
    est.value = *full;

    std::vector<double> values(static_cast<std::size_t>(n_bootstrap));
    int redraws = 0;
    bool all_defined = true;
    for (int r = 0; r < n_bootstrap; ++r) {
        auto st = rng::stream(seed, "bootstrap", static_cast<std::uint64_t>(r));
        std::optional<double> v;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::vector<std::size_t> idx(n_items);
            for (auto& i : idx) i = static_cast<std::size_t>(st.uniform_int(n_items));
            v = metric(idx);
            if (v.has_value()) break;
            ++redraws;
        }
        if (!v.has_value()) {
            all_defined = false;
            break;
        }
        values[static_cast<std::size_t>(r)] = *v;
    }
    est.redraws = redraws;
    if (!all_defined) {
        est.defined = false;
        return est;
    }
    if (out_resample_values) *out_resample_values = values;

    std::sort(values.begin(), values.end());
    auto nearest_rank = [&](double q) {
        const auto rank = static_cast<std::size_t>(
            std::ceil(q * static_cast<double>(n_bootstrap)));
        return values[std::min<std::size_t>(values.size() - 1, std::max<std::size_t>(rank, 1) - 1)];
    };
    est.ci_low = nearest_rank(0.025);
    est.ci_high = nearest_rank(0.975);
    return est;
}

// --- Calibration ------------------------------------------------------------------

struct CalibrationBin {
    double bin_center = 0.0;
    double mean_predicted = 0.0;
    double observed_frequency = 0.0;
    std::size_t count = 0;
};

// Equal-width bins over [0,1]; empty bins are emitted with count 0.
inline std::vector<CalibrationBin> calibration_curve(const std::vector<double>& scores,
                                                     const std::vector<int>& labels, int bins = 10) {
    if (scores.size() != labels.size()) throw InvariantError("calibration_curve: length mismatch");
    if (bins < 1) throw InvariantError("calibration_curve: bins must be >= 1");
    std::vector<CalibrationBin> out(static_cast<std::size_t>(bins));
    std::vector<double> sum_pred(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> sum_label(static_cast<std::size_t>(bins), 0.0);
    for (int b = 0; b < bins; ++b)
        out[static_cast<std::size_t>(b)].bin_center = (b + 0.5) / static_cast<double>(bins);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] < 0.0 || scores[i] > 1.0)
            throw InvariantError("calibration_curve: scores must lie in [0,1]");
        const auto b = std::min<std::size_t>(static_cast<std::size_t>(bins) - 1,
                                             static_cast<std::size_t>(scores[i] * bins));
        out[b].count += 1;
        sum_pred[b] += scores[i];
        sum_label[b] += labels[i];
    }
    for (std::size_t b = 0; b < out.size(); ++b) {
        if (out[b].count == 0) continue;
        out[b].mean_predicted = sum_pred[b] / static_cast<double>(out[b].count);
        out[b].observed_frequency = sum_label[b] / static_cast<double>(out[b].count);
    }
    return out;
}

// --- Rater panels ------------------------------------------------------------------

struct RaterPanel {
    std::vector<std::string> rater_ids;
    std::vector<std::vector<int>> calls; // calls[r][s], all raters over the same slides
    int model_index = -1;                // excluded as a comparator when >= 0
    int reference_index = -1;

    void validate() const {
        if (calls.size() != rater_ids.size()) throw InvariantError("rater panel: ids/calls mismatch");
        for (const auto& c : calls)
            if (c.size() != calls.front().size())
                throw InvariantError("rater panel: raters cover different slide sets");
    }
};

inline std::vector<std::vector<KappaResult>> pairwise_kappa_matrix(const RaterPanel& panel) {
    panel.validate();
    const std::size_t R = panel.calls.size();
    std::vector<std::vector<KappaResult>> m(R, std::vector<KappaResult>(R));
    for (std::size_t i = 0; i < R; ++i) {
        m[i][i] = {1.0, false};
        for (std::size_t j = i + 1; j < R; ++j) {
            m[i][j] = cohens_kappa(panel.calls[i], panel.calls[j]);
            m[j][i] = m[i][j];
        }
    }
    return m;
}

// Mean pairwise kappa of `target` against the human raters only: the model
// never appears as a comparator, for its own mean or anyone else's.
inline MetricEstimate mean_pairwise_kappa(const RaterPanel& panel, int target, int n_bootstrap,
                                          std::uint64_t seed) {
    panel.validate();
    const auto R = static_cast<int>(panel.calls.size());
    if (target < 0 || target >= R) throw InvariantError("mean_pairwise_kappa: bad target");
    std::vector<int> comparators;
    for (int r = 0; r < R; ++r)
        if (r != target && r != panel.model_index) comparators.push_back(r);
    if (comparators.empty()) throw InvariantError("mean_pairwise_kappa: no comparators");

    const std::size_t n_slides = panel.calls.front().size();
    auto metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        double acc = 0.0;
        std::vector<int> a(idx.size()), b(idx.size());
        for (int c : comparators) {
            for (std::size_t s = 0; s < idx.size(); ++s) {
                a[s] = panel.calls[static_cast<std::size_t>(target)][idx[s]];
                b[s] = panel.calls[static_cast<std::size_t>(c)][idx[s]];
            }
            const auto k = cohens_kappa(a, b);
            if (k.degenerate) return std::nullopt;
            acc += k.value;
        }
        return acc / static_cast<double>(comparators.size());
    };
    auto est = bootstrap_ci("mean_pairwise_kappa/" + panel.rater_ids[static_cast<std::size_t>(target)],
                            metric, n_slides, n_bootstrap, seed);
    return est;
}

// Cross-scanner reproducibility: scanners act as raters over the shared
// slides; every scanner is a valid comparator.
inline RaterPanel scanner_panel(const std::vector<std::string>& scanner_ids,
                                const std::vector<std::vector<int>>& calls) {
    RaterPanel panel;
    panel.rater_ids = scanner_ids;
    panel.calls = calls;
    panel.model_index = -1;
    return panel;
}

// --- Fisher's exact test --------------------------------------------------------------

// Two-sided p: the total hypergeometric probability of all tables with the
// observed margins whose probability does not exceed the observed table's
// (with 1e-12 slack), computed with log-gamma.
inline double fisher_exact(long a, long b, long c, long d) {
    if (a < 0 || b < 0 || c < 0 || d < 0) throw InvariantError("fisher_exact: negative count");
    const long r1 = a + b, r2 = c + d, c1 = a + c, n = a + b + c + d;
    if (n == 0) return 1.0;

    auto log_choose = [](long nn, long kk) {
        return std::lgamma(static_cast<double>(nn) + 1.0) - std::lgamma(static_cast<double>(kk) + 1.0) -
               std::lgamma(static_cast<double>(nn - kk) + 1.0);
    };
    const double log_denom = log_choose(n, c1);
    auto pmf = [&](long x) {
        return std::exp(log_choose(r1, x) + log_choose(r2, c1 - x) - log_denom);
    };

    const long x_lo = std::max(0L, c1 - r2);
    const long x_hi = std::min(r1, c1);
    const double p_obs = pmf(a);
    double p = 0.0;
    bool all_included = true;
    for (long x = x_lo; x <= x_hi; ++x) {
        const double px = pmf(x);
        if (px <= p_obs + 1e-12) p += px;
        else all_included = false;
    }
    // Observed table at the mode: the sum spans the whole support, which is
    // exactly 1 by definition.
    if (all_included) return 1.0;
    return std::min(1.0, p);
}

// --- Borderline-case analysis ------------------------------------------------------------

struct BorderlineAnalysis {
    long fp_total = 0, fp_borderline = 0;
    long tn_total = 0, tn_borderline = 0;
    double fp_borderline_rate = 0.0;
    double tn_borderline_rate = 0.0;
    double fisher_p = 1.0;
};

// Among reference-negative slides, compares the prevalence of borderline
// cases between the false-positive and true-negative groups.
inline BorderlineAnalysis borderline_analysis(const std::vector<int>& preds,
                                              const std::vector<int>& labels,
                                              const std::vector<int>& borderline) {
    if (preds.size() != labels.size() || preds.size() != borderline.size())
        throw InvariantError("borderline_analysis: length mismatch");
    BorderlineAnalysis out;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i]) continue; // borderline is only meaningful on negatives
        if (preds[i]) {
            out.fp_total += 1;
            out.fp_borderline += borderline[i] ? 1 : 0;
        } else {
            out.tn_total += 1;
            out.tn_borderline += borderline[i] ? 1 : 0;
        }
    }
    if (out.fp_total > 0)
        out.fp_borderline_rate = static_cast<double>(out.fp_borderline) / static_cast<double>(out.fp_total);
    if (out.tn_total > 0)
        out.tn_borderline_rate = static_cast<double>(out.tn_borderline) / static_cast<double>(out.tn_total);
    out.fisher_p = fisher_exact(out.fp_borderline, out.fp_total - out.fp_borderline,
                                out.tn_borderline, out.tn_total - out.tn_borderline);
    return out;
}

} // namespace crib
