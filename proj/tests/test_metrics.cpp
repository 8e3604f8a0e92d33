#include <gtest/gtest.h>

#include <cmath>

#include "crib/metrics.hpp"
#include "crib/rng.hpp"

using namespace crib;

namespace {

// O(n^2) pair-count oracle for the Mann-Whitney AUC.
double auc_pair_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double num = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    return num / static_cast<double>(pairs);
}

// Direct-formula kappa oracle.
double kappa_oracle(const std::vector<int>& a, const std::vector<int>& b) {
    const double n = static_cast<double>(a.size());
    double agree = 0, a1 = 0, b1 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        agree += a[i] == b[i];
        a1 += a[i];
        b1 += b[i];
    }
    const double po = agree / n;
    const double pe = (a1 / n) * (b1 / n) + (1 - a1 / n) * (1 - b1 / n);
    return (po - pe) / (1 - pe);
}

// Exact hypergeometric enumeration with integer binomials (margins <= 30
// keep every product well inside double precision).
double fisher_oracle(long a, long b, long c, long d) {
    auto choose = [](long n, long k) {
        double r = 1.0;
        for (long i = 0; i < k; ++i) r = r * static_cast<double>(n - i) / static_cast<double>(i + 1);
        return r;
    };
    const long r1 = a + b, r2 = c + d, c1 = a + c, n = a + b + c + d;
    if (n == 0) return 1.0;
    const double denom = choose(n, c1);
    auto pmf = [&](long x) { return choose(r1, x) * choose(r2, c1 - x) / denom; };
    const double p_obs = pmf(a);
    double p = 0.0;
    bool all_included = true;
    for (long x = std::max(0L, c1 - r2); x <= std::min(r1, c1); ++x) {
        if (pmf(x) <= p_obs + 1e-12) p += pmf(x);
        else all_included = false;
    }
    return all_included ? 1.0 : std::min(1.0, p);
}

TEST(Confusion, CountsAndRates) {
    auto cm = confusion({1, 1, 0, 1, 0, 0, 1}, {1, 1, 1, 0, 0, 0, 0});
    EXPECT_EQ(cm.tp, 2);
    EXPECT_EQ(cm.fn, 1);
    EXPECT_EQ(cm.fp, 2);
    EXPECT_EQ(cm.tn, 2);

    // tp=2, fn=1, tn=3, fp=1 -> sens 2/3, spec 3/4
    auto ss = sensitivity_specificity({2, 1, 3, 1});
    EXPECT_DOUBLE_EQ(ss.sensitivity, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(ss.specificity, 3.0 / 4.0);
}

TEST(Confusion, PerfectAndDegenerate) {
    auto ss = sensitivity_specificity(confusion({1, 0, 1}, {1, 0, 1}));
    EXPECT_DOUBLE_EQ(ss.sensitivity, 1.0);
    EXPECT_DOUBLE_EQ(ss.specificity, 1.0);

    // All-positive predictions on mixed labels -> specificity 0.
    auto ss2 = sensitivity_specificity(confusion({1, 1, 1, 1}, {1, 0, 1, 0}));
    EXPECT_DOUBLE_EQ(ss2.specificity, 0.0);

    // Single-class labels -> flagged undefined, not silently 0.
    auto ss3 = sensitivity_specificity(confusion({1, 0}, {1, 1}));
    EXPECT_TRUE(ss3.sensitivity_defined);
    EXPECT_FALSE(ss3.specificity_defined);
}

TEST(Auc, TrivialCases) {
    EXPECT_DOUBLE_EQ(roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}), 0.5);
    EXPECT_DOUBLE_EQ(roc_auc({0.9, 0.4, 0.6, 0.2}, {1, 1, 0, 0}), 0.75);
    EXPECT_THROW(roc_auc({0.1, 0.2}, {1, 1}), InvariantError);
}

TEST(Auc, MatchesPairCountOracleExactly) {
    auto st = rng::stream(17, "auctest");
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + st.uniform_int(199);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // Quantized scores force plenty of ties.
            scores[i] = std::floor(st.uniform() * 20.0) / 20.0;
            labels[i] = st.bernoulli(0.4) ? 1 : 0;
            (labels[i] ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        ASSERT_EQ(roc_auc(scores, labels), auc_pair_oracle(scores, labels)) << "trial " << trial;
    }
}

TEST(Auc, InvariantUnderStrictlyIncreasingTransforms) {
    auto st = rng::stream(18, "auctrans");
    std::vector<double> scores(150);
    std::vector<int> labels(150);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = std::floor(st.uniform() * 50.0) / 50.0;
        labels[i] = i % 3 == 0 ? 1 : 0;
    }
    const double base = roc_auc(scores, labels);
    auto apply = [&](auto fn) {
        std::vector<double> t(scores.size());
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = fn(scores[i]);
        return roc_auc(t, labels);
    };
    EXPECT_EQ(base, apply([](double s) { return 3.0 * s + 1.0; }));
    EXPECT_EQ(base, apply([](double s) { return s * s * s; }));
    EXPECT_EQ(base, apply([](double s) { return 1.0 / (1.0 + std::exp(-(2.0 * s - 1.0))); }));
}

TEST(Kappa, TrivialAndDerivedCases) {
    EXPECT_DOUBLE_EQ(cohens_kappa({1, 0, 1, 0}, {1, 0, 1, 0}).value, 1.0);

    // p_o = 2/3, p_e = 1/2 -> kappa = 1/3
    auto k = cohens_kappa({1, 1, 1, 0, 0, 0}, {1, 1, 0, 0, 0, 1});
    EXPECT_NEAR(k.value, 1.0 / 3.0, 1e-15);
    EXPECT_FALSE(k.degenerate);

    // Matching marginals with p_o = p_e -> 0.
    auto z = cohens_kappa({1, 1, 0, 0}, {1, 0, 1, 0});
    EXPECT_DOUBLE_EQ(z.value, 0.0);
}

TEST(Kappa, PropertiesAndDegeneracy) {
    auto st = rng::stream(19, "kappatest");
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + st.uniform_int(60);
        std::vector<int> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = st.bernoulli(0.5);
            b[i] = st.bernoulli(0.5);
        }
        auto kab = cohens_kappa(a, b);
        auto kba = cohens_kappa(b, a);
        EXPECT_DOUBLE_EQ(kab.value, kba.value);
        if (!kab.degenerate) {
            EXPECT_NEAR(kab.value, kappa_oracle(a, b), 1e-12);
            EXPECT_GE(kab.value, -1.0 - 1e-12);
            EXPECT_LE(kab.value, 1.0 + 1e-12);
        }
        bool both = std::count(a.begin(), a.end(), 1) > 0 &&
                    std::count(a.begin(), a.end(), 0) > 0;
        if (both) EXPECT_DOUBLE_EQ(cohens_kappa(a, a).value, 1.0);
    }
    // Both raters constant and agreeing: p_e = 1 and p_o = 1 -> kappa 1.
    EXPECT_DOUBLE_EQ(cohens_kappa({1, 1}, {1, 1}).value, 1.0);
    EXPECT_FALSE(cohens_kappa({1, 1}, {1, 1}).degenerate);
    // Constant but opposite raters: p_e = 0, plain zero agreement.
    EXPECT_DOUBLE_EQ(cohens_kappa({1, 1}, {0, 0}).value, 0.0);
}

TEST(Bootstrap, ConstantMetricGivesPointInterval) {
    auto est = bootstrap_ci(
        "const", [](const std::vector<std::size_t>&) { return std::optional<double>(0.8); }, 50, 1000, 3);
    EXPECT_DOUBLE_EQ(est.value, 0.8);
    EXPECT_DOUBLE_EQ(est.ci_low, 0.8);
    EXPECT_DOUBLE_EQ(est.ci_high, 0.8);
}

TEST(Bootstrap, DeterministicPerSeed) {
    auto st = rng::stream(4, "boottest");
    std::vector<double> data(100);
    for (auto& v : data) v = st.uniform();
    auto metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        double acc = 0;
        for (auto i : idx) acc += data[i];
        return acc / static_cast<double>(idx.size());
    };
    auto a = bootstrap_ci("mean", metric, data.size(), 1000, 42);
    auto b = bootstrap_ci("mean", metric, data.size(), 1000, 42);
    EXPECT_EQ(a.ci_low, b.ci_low);
    EXPECT_EQ(a.ci_high, b.ci_high);
    auto c = bootstrap_ci("mean", metric, data.size(), 1000, 43);
    EXPECT_NE(a.ci_low, c.ci_low);
}

TEST(Bootstrap, UniformMeanMatchesNormalApproximation) {
    auto st = rng::stream(5, "bootuniform");
    std::vector<double> data(500);
    for (auto& v : data) v = st.uniform();
    double mean = 0;
    for (double v : data) mean += v;
    mean /= static_cast<double>(data.size());
    double var = 0;
    for (double v : data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(data.size() - 1);

    auto metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        double acc = 0;
        for (auto i : idx) acc += data[i];
        return acc / static_cast<double>(idx.size());
    };
    auto est = bootstrap_ci("mean", metric, data.size(), 1000, 6);
    const double normal_width = 2.0 * 1.959963985 * std::sqrt(var / static_cast<double>(data.size()));
    const double boot_width = est.ci_high - est.ci_low;
    EXPECT_NEAR(boot_width, normal_width, 0.1 * normal_width);
    EXPECT_LE(est.ci_low, est.value);
    EXPECT_GE(est.ci_high, est.value);
}

TEST(Bootstrap, EndpointsAreOrderStatistics) {
    auto st = rng::stream(7, "bootorder");
    std::vector<double> data(80);
    for (auto& v : data) v = st.uniform();
    auto metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        double acc = 0;
        for (auto i : idx) acc += data[i];
        return acc / static_cast<double>(idx.size());
    };
    std::vector<double> resamples;
    auto est = bootstrap_ci("mean", metric, data.size(), 1000, 8, &resamples);
    ASSERT_EQ(resamples.size(), 1000u);
    std::sort(resamples.begin(), resamples.end());
    EXPECT_DOUBLE_EQ(est.ci_low, resamples[24]);   // ceil(0.025*1000) = 25 -> index 24
    EXPECT_DOUBLE_EQ(est.ci_high, resamples[974]); // ceil(0.975*1000) = 975 -> index 974
}

TEST(Bootstrap, RedrawsUndefinedResamples) {
    // Metric undefined unless the resample contains index 0.
    auto metric = [](const std::vector<std::size_t>& idx) -> std::optional<double> {
        for (auto i : idx)
            if (i == 0) return 1.0;
        return std::nullopt;
    };
    auto est = bootstrap_ci("picky", metric, 3, 200, 9);
    EXPECT_TRUE(est.defined);
    EXPECT_GT(est.redraws, 0);
}

TEST(Calibration, BernoulliSyntheticWithinTolerance) {
    auto st = rng::stream(11, "caltest");
    std::vector<double> scores(2000);
    std::vector<int> labels(2000);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = st.uniform();
        labels[i] = st.bernoulli(scores[i]) ? 1 : 0;
    }
    auto bins = calibration_curve(scores, labels, 10);
    ASSERT_EQ(bins.size(), 10u);
    for (const auto& b : bins) {
        ASSERT_GT(b.count, 0u);
        EXPECT_LE(std::abs(b.observed_frequency - b.mean_predicted), 0.1)
            << "bin at " << b.bin_center;
    }
}

TEST(Calibration, EdgeCases) {
    auto bins = calibration_curve(std::vector<double>(5, 0.999), std::vector<int>(5, 1), 10);
    ASSERT_EQ(bins.size(), 10u);
    for (int b = 0; b < 9; ++b) EXPECT_EQ(bins[static_cast<std::size_t>(b)].count, 0u);
    EXPECT_EQ(bins[9].count, 5u);
    EXPECT_DOUBLE_EQ(bins[9].observed_frequency, 1.0);

    auto empty = calibration_curve({}, {}, 10);
    ASSERT_EQ(empty.size(), 10u);
    for (const auto& b : empty) EXPECT_EQ(b.count, 0u);
}

TEST(RaterPanels, IdenticalRatersAllOnes) {
    RaterPanel panel;
    panel.rater_ids = {"p1", "p2", "p3"};
    panel.calls = {{1, 0, 1, 0}, {1, 0, 1, 0}, {1, 0, 1, 0}};
    auto m = pairwise_kappa_matrix(panel);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(m[i][j].value, 1.0);
    auto est = mean_pairwise_kappa(panel, 0, 200, 12);
    EXPECT_DOUBLE_EQ(est.value, 1.0);
}

TEST(RaterPanels, MatrixSymmetry) {
    auto st = rng::stream(13, "panel");
    RaterPanel panel;
    for (int r = 0; r < 5; ++r) {
        panel.rater_ids.push_back("r" + std::to_string(r));
        std::vector<int> calls(40);
        for (auto& c : calls) c = st.bernoulli(0.4);
        panel.calls.push_back(std::move(calls));
    }
    auto m = pairwise_kappa_matrix(panel);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(m[i][j].value, m[j][i].value);
}

TEST(RaterPanels, MeanMatchesBruteForceAndExcludesModel) {
    // Three pathologists with planted agreement plus a model rater.
    RaterPanel panel;
    panel.rater_ids = {"p1", "p2", "p3", "model"};
    panel.calls = {
        {1, 1, 0, 0, 1, 0, 1, 0, 1, 1},
        {1, 0, 0, 0, 1, 0, 1, 1, 1, 1},
        {0, 1, 0, 1, 1, 0, 1, 0, 1, 0},
        {1, 1, 0, 0, 1, 1, 1, 0, 1, 1},
    };
    panel.model_index = 3;

    // Brute force: mean over pathologist comparators only.
    auto k01 = kappa_oracle(panel.calls[0], panel.calls[1]);
    auto k02 = kappa_oracle(panel.calls[0], panel.calls[2]);
    auto k03 = kappa_oracle(panel.calls[0], panel.calls[3]);
    auto est_p1 = mean_pairwise_kappa(panel, 0, 100, 14);
    EXPECT_NEAR(est_p1.value, (k01 + k02) / 2.0, 1e-12);
    EXPECT_NE(est_p1.value, (k01 + k02 + k03) / 3.0);

    // The model's own mean runs against all three pathologists.
    auto k30 = kappa_oracle(panel.calls[3], panel.calls[0]);
    auto k31 = kappa_oracle(panel.calls[3], panel.calls[1]);
    auto k32 = kappa_oracle(panel.calls[3], panel.calls[2]);
    auto est_model = mean_pairwise_kappa(panel, 3, 100, 15);
    EXPECT_NEAR(est_model.value, (k30 + k31 + k32) / 3.0, 1e-12);
}

TEST(CrossScanner, IdenticalPredictionsAndSingleFlip) {
    std::vector<int> base(71, 0);
    for (int i = 0; i < 19; ++i) base[static_cast<std::size_t>(i)] = 1;
    auto panel = scanner_panel({"s1", "s2"}, {base, base});
    auto m = pairwise_kappa_matrix(panel);
    EXPECT_DOUBLE_EQ(m[0][1].value, 1.0);

    // One flipped prediction out of 71 with 19 positives: direct formula.
    auto flipped = base;
    flipped[0] = 0; // 19 pos -> 18 pos
    auto panel2 = scanner_panel({"s1", "s2"}, {base, flipped});
    auto m2 = pairwise_kappa_matrix(panel2);
    EXPECT_NEAR(m2[0][1].value, kappa_oracle(base, flipped), 1e-15);
}

TEST(Fisher, KnownValues) {
    EXPECT_NEAR(fisher_exact(2, 0, 0, 2), 1.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(fisher_exact(3, 4, 3, 4), 1.0); // identical rows
    EXPECT_DOUBLE_EQ(fisher_exact(0, 0, 0, 0), 1.0);
    EXPECT_THROW(fisher_exact(-1, 0, 0, 0), InvariantError);
}

TEST(Fisher, MatchesEnumerationOracle) {
    auto st = rng::stream(21, "fishertest");
    for (int trial = 0; trial < 400; ++trial) {
        const long a = static_cast<long>(st.uniform_int(16));
        const long b = static_cast<long>(st.uniform_int(16));
        const long c = static_cast<long>(st.uniform_int(16));
        const long d = static_cast<long>(st.uniform_int(16));
        EXPECT_NEAR(fisher_exact(a, b, c, d), fisher_oracle(a, b, c, d), 1e-12)
            << a << "," << b << "," << c << "," << d;
    }
}

TEST(Borderline, NoBorderlineSlides) {
    auto r = borderline_analysis({1, 0, 0, 1}, {1, 0, 0, 1}, {0, 0, 0, 0});
    EXPECT_DOUBLE_EQ(r.fp_borderline_rate, 0.0);
    EXPECT_DOUBLE_EQ(r.tn_borderline_rate, 0.0);
    EXPECT_DOUBLE_EQ(r.fisher_p, 1.0);
}

TEST(Borderline, EnrichedFalsePositivesGiveSmallP) {
    // 6 FPs all borderline, 12 TNs none borderline.
    std::vector<int> preds, labels, borderline;
    for (int i = 0; i < 6; ++i) {
        preds.push_back(1);
        labels.push_back(0);
        borderline.push_back(1);
    }
    for (int i = 0; i < 12; ++i) {
        preds.push_back(0);
        labels.push_back(0);
        borderline.push_back(0);
    }
    auto r = borderline_analysis(preds, labels, borderline);
    EXPECT_DOUBLE_EQ(r.fp_borderline_rate, 1.0);
    EXPECT_DOUBLE_EQ(r.tn_borderline_rate, 0.0);
    EXPECT_LT(r.fisher_p, 0.05);
    EXPECT_NEAR(r.fisher_p, fisher_oracle(6, 0, 0, 12), 1e-12);
}

TEST(RocPoints, StartsAtOriginEndsAtOne) {
    auto pts = roc_points({0.9, 0.7, 0.7, 0.2}, {1, 1, 0, 0});
    EXPECT_DOUBLE_EQ(pts.front().fpr, 0.0);
    EXPECT_DOUBLE_EQ(pts.front().tpr, 0.0);
    EXPECT_DOUBLE_EQ(pts.back().fpr, 1.0);
    EXPECT_DOUBLE_EQ(pts.back().tpr, 1.0);
    // Trapezoid over emitted points equals the tie-aware AUC.
    double auc = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        auc += 0.5 * (pts[i].tpr + pts[i - 1].tpr) * (pts[i].fpr - pts[i - 1].fpr);
    EXPECT_NEAR(auc, roc_auc({0.9, 0.7, 0.7, 0.2}, {1, 1, 0, 0}), 1e-15);
}

} // namespace
