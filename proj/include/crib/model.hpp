#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crib/descriptor.hpp"
#include "crib/errors.hpp"
#include "crib/rng.hpp"

namespace crib {

inline constexpr int kEncHidden = 64;
inline constexpr int kFeatureDim = 32;
inline constexpr int kAttnDim = 16;
inline constexpr int kHeadHidden = 128;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kDropoutRate = 0.1;
inline constexpr double kProbClamp = 1e-7;

using Vec = std::vector<double>;

struct Mat {
    int rows = 0;
    int cols = 0;
    Vec v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// All trainable weights: encoder MLP (40 -> 64 -> 32, layer norm + ReLU),
// a patch head, gated-attention pooling, and the slide head
// (32 -> 128 -> 1, layer norm + ReLU + dropout).
struct ModelParams {
    Mat enc_w1{kEncHidden, kDescriptorDim};
    Vec enc_b1 = Vec(kEncHidden, 0.0);
    Vec enc_ln1_g = Vec(kEncHidden, 1.0);
    Vec enc_ln1_b = Vec(kEncHidden, 0.0);
    Mat enc_w2{kFeatureDim, kEncHidden};
    Vec enc_b2 = Vec(kFeatureDim, 0.0);
    Vec enc_ln2_g = Vec(kFeatureDim, 1.0);
    Vec enc_ln2_b = Vec(kFeatureDim, 0.0);

    Vec patch_w = Vec(kFeatureDim, 0.0);
    Vec patch_b = Vec(1, 0.0);

    Mat attn_v{kAttnDim, kFeatureDim};
    Mat attn_u{kAttnDim, kFeatureDim};
    Vec attn_w = Vec(kAttnDim, 0.0);

    Mat head_w1{kHeadHidden, kFeatureDim};
    Vec head_b1 = Vec(kHeadHidden, 0.0);
    Vec head_ln_g = Vec(kHeadHidden, 1.0);
    Vec head_ln_b = Vec(kHeadHidden, 0.0);
    Vec head_w2 = Vec(kHeadHidden, 0.0);
    Vec head_b2 = Vec(1, 0.0);
};

struct NamedParam {
    std::string name;
    Vec* data;
    std::vector<std::uint32_t> dims;
};

// Canonical parameter ordering shared by the optimizer, the checkpoint
// format, and the gradient checker.
inline std::vector<NamedParam> param_table(ModelParams& p) {
    auto mat = [](const char* n, Mat& m) {
        return NamedParam{n, &m.v,
                          {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}};
    };
    auto vec = [](const char* n, Vec& v) {
        return NamedParam{n, &v, {static_cast<std::uint32_t>(v.size())}};
    };
    return {
        mat("enc.fc1.w", p.enc_w1),   vec("enc.fc1.b", p.enc_b1),
        vec("enc.ln1.g", p.enc_ln1_g), vec("enc.ln1.b", p.enc_ln1_b),
        mat("enc.fc2.w", p.enc_w2),   vec("enc.fc2.b", p.enc_b2),
        vec("enc.ln2.g", p.enc_ln2_g), vec("enc.ln2.b", p.enc_ln2_b),
        vec("patch_head.w", p.patch_w), vec("patch_head.b", p.patch_b),
        mat("attn.V", p.attn_v),      mat("attn.U", p.attn_u),
        vec("attn.w", p.attn_w),
        mat("slide_head.fc1.w", p.head_w1), vec("slide_head.fc1.b", p.head_b1),
        vec("slide_head.ln.g", p.head_ln_g), vec("slide_head.ln.b", p.head_ln_b),
        vec("slide_head.fc2.w", p.head_w2), vec("slide_head.fc2.b", p.head_b2),
    };
}

inline ModelParams zeros_like(ModelParams p) {
    for (auto& np : param_table(p)) std::fill(np.data->begin(), np.data->end(), 0.0);
    return p;
}

inline void check_finite(const ModelParams& p) {
    auto& mut = const_cast<ModelParams&>(p);
    for (auto& np : param_table(mut))
        for (double v : *np.data)
            if (!std::isfinite(v)) throw InvariantError("non-finite parameter in " + np.name);
}

// Glorot-uniform linear weights; layer-norm gains start at one.
inline ModelParams init_params(std::uint64_t seed) {
    ModelParams p;
    auto st = rng::Stream(rng::derive_key(seed, "model/init"));
    auto fill_mat = [&st](Mat& m) {
        const double lim = std::sqrt(6.0 / (m.rows + m.cols));
        for (auto& v : m.v) v = st.uniform(-lim, lim);
    };
    auto fill_vec = [&st](Vec& v, int fan_in) {
        const double lim = std::sqrt(6.0 / (fan_in + 1));
        for (auto& x : v) x = st.uniform(-lim, lim);
    };
    fill_mat(p.enc_w1);
    fill_mat(p.enc_w2);
    fill_mat(p.attn_v);
    fill_mat(p.attn_u);
    fill_vec(p.attn_w, kAttnDim);
    fill_vec(p.patch_w, kFeatureDim);
    fill_mat(p.head_w1);
    fill_vec(p.head_w2, kHeadHidden);
    return p;
}

// --- Layer primitives with caches for the hand-derived backward pass -------

namespace nn_detail {

struct LnCache {
    Vec xhat;
    double inv_sigma = 0.0;
};

inline Vec layer_norm(const Vec& x, const Vec& g, const Vec& b, LnCache& cache) {
    const std::size_t n = x.size();
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    cache.inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.xhat.resize(n);
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        cache.xhat[i] = (x[i] - mu) * cache.inv_sigma;
        y[i] = g[i] * cache.xhat[i] + b[i];
    }
    return y;
}

// Gradient through y = g * xhat + b with xhat = (x - mu) / sigma.
inline Vec layer_norm_backward(const Vec& dy, const Vec& g, const LnCache& cache, Vec& dg, Vec& db) {
    const std::size_t n = dy.size();
    Vec dxhat(n);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dg[i] += dy[i] * cache.xhat[i];
        db[i] += dy[i];
        dxhat[i] = dy[i] * g[i];
        mean_dxhat += dxhat[i];
        mean_dxhat_xhat += dxhat[i] * cache.xhat[i];
    }
    mean_dxhat /= static_cast<double>(n);
    mean_dxhat_xhat /= static_cast<double>(n);
    Vec dx(n);
    for (std::size_t i = 0; i < n; ++i)
        dx[i] = cache.inv_sigma * (dxhat[i] - mean_dxhat - cache.xhat[i] * mean_dxhat_xhat);
    return dx;
}

inline Vec linear(const Mat& w, const Vec& b, const Vec& x) {
    Vec y(static_cast<std::size_t>(w.rows));
    for (int r = 0; r < w.rows; ++r) {
        double acc = b[static_cast<std::size_t>(r)];
        const double* wr = w.v.data() + static_cast<std::size_t>(r) * w.cols;
        for (int c = 0; c < w.cols; ++c) acc += wr[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
}

// Accumulates dW, db and returns dx.
inline Vec linear_backward(const Mat& w, const Vec& x, const Vec& dy, Mat& dw, Vec& db) {
    Vec dx(static_cast<std::size_t>(w.cols), 0.0);
    for (int r = 0; r < w.rows; ++r) {
        const double dyr = dy[static_cast<std::size_t>(r)];
        db[static_cast<std::size_t>(r)] += dyr;
        double* dwr = dw.v.data() + static_cast<std::size_t>(r) * w.cols;
        const double* wr = w.v.data() + static_cast<std::size_t>(r) * w.cols;
        for (int c = 0; c < w.cols; ++c) {
            dwr[c] += dyr * x[static_cast<std::size_t>(c)];
            dx[static_cast<std::size_t>(c)] += wr[c] * dyr;
        }
    }
    return dx;
}

} // namespace nn_detail

// --- Encoder ----------------------------------------------------------------

struct EncoderCache {
    Vec x;       // input descriptor
    Vec a1, n1, h1;
    Vec a2, n2, f;
    nn_detail::LnCache ln1, ln2;
};

inline Vec encoder_forward(const ModelParams& p, const Vec& x, EncoderCache& cache) {
    using namespace nn_detail;
    cache.x = x;
    cache.a1 = linear(p.enc_w1, p.enc_b1, x);
    cache.n1 = layer_norm(cache.a1, p.enc_ln1_g, p.enc_ln1_b, cache.ln1);
    cache.h1.resize(cache.n1.size());
    for (std::size_t i = 0; i < cache.n1.size(); ++i) cache.h1[i] = std::max(0.0, cache.n1[i]);
    cache.a2 = linear(p.enc_w2, p.enc_b2, cache.h1);
    cache.n2 = layer_norm(cache.a2, p.enc_ln2_g, p.enc_ln2_b, cache.ln2);
    cache.f.resize(cache.n2.size());
    for (std::size_t i = 0; i < cache.n2.size(); ++i) cache.f[i] = std::max(0.0, cache.n2[i]);
    return cache.f;
}

inline void encoder_backward(const ModelParams& p, const EncoderCache& cache, Vec df,
                             ModelParams& grads) {
    using namespace nn_detail;
    for (std::size_t i = 0; i < df.size(); ++i)
        if (cache.n2[i] <= 0.0) df[i] = 0.0;
    Vec da2 = layer_norm_backward(df, p.enc_ln2_g, cache.ln2, grads.enc_ln2_g, grads.enc_ln2_b);
    Vec dh1 = linear_backward(p.enc_w2, cache.h1, da2, grads.enc_w2, grads.enc_b2);
    for (std::size_t i = 0; i < dh1.size(); ++i)
        if (cache.n1[i] <= 0.0) dh1[i] = 0.0;
    Vec da1 = layer_norm_backward(dh1, p.enc_ln1_g, cache.ln1, grads.enc_ln1_g, grads.enc_ln1_b);
    linear_backward(p.enc_w1, cache.x, da1, grads.enc_w1, grads.enc_b1);
}

// --- Patch head ---------------------------------------------------------------

struct PatchForward {
    EncoderCache enc;
    double logit = 0.0;
    double prob = 0.5;
};

inline PatchForward patch_forward(const ModelParams& p, const Vec& descriptor) {
    PatchForward out;
    const Vec f = encoder_forward(p, descriptor, out.enc);
    double acc = p.patch_b[0];
    for (int i = 0; i < kFeatureDim; ++i) acc += p.patch_w[static_cast<std::size_t>(i)] * f[static_cast<std::size_t>(i)];
    out.logit = acc;
    out.prob = sigmoid(acc);
    return out;
}

inline void patch_backward(const ModelParams& p, const PatchForward& fwd, double dlogit,
                           ModelParams& grads) {
    Vec df(kFeatureDim);
    for (int i = 0; i < kFeatureDim; ++i) {
        grads.patch_w[static_cast<std::size_t>(i)] += dlogit * fwd.enc.f[static_cast<std::size_t>(i)];
        df[static_cast<std::size_t>(i)] = dlogit * p.patch_w[static_cast<std::size_t>(i)];
    }
    grads.patch_b[0] += dlogit;
    encoder_backward(p, fwd.enc, std::move(df), grads);
}

// --- Gated attention ----------------------------------------------------------

struct AttentionOutput {
    Vec weights; // a_k, softmax-normalised
    Vec z;       // pooled slide feature
};

struct AttentionCache {
    std::vector<Vec> vh; // tanh(V h_k)
    std::vector<Vec> uh; // sigmoid(U h_k)
    Vec scores;          // e_k = w^T (vh ⊙ uh)
};

// a_k = softmax_k( w^T( tanh(V h_k) ⊙ sigmoid(U h_k) ) ); z = sum a_k h_k.
inline AttentionOutput gated_attention_pool(const ModelParams& p, const std::vector<Vec>& features,
                                            AttentionCache* cache = nullptr) {
    const std::size_t K = features.size();
    if (K == 0) throw InvariantError("gated_attention_pool: empty bag");

    AttentionOutput out;
    out.weights.resize(K);
    Vec scores(K);
    AttentionCache local;
    AttentionCache& c = cache ? *cache : local;
    c.vh.resize(K);
    c.uh.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        Vec v = nn_detail::linear(p.attn_v, Vec(kAttnDim, 0.0), features[k]);
        Vec u = nn_detail::linear(p.attn_u, Vec(kAttnDim, 0.0), features[k]);
        for (auto& x : v) x = std::tanh(x);
        for (auto& x : u) x = sigmoid(x);
        double e = 0.0;
        for (int i = 0; i < kAttnDim; ++i)
            e += p.attn_w[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(i)];
        scores[k] = e;
        c.vh[k] = std::move(v);
        c.uh[k] = std::move(u);
    }
    c.scores = scores;

    const double max_e = *std::max_element(scores.begin(), scores.end());
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        out.weights[k] = std::exp(scores[k] - max_e);
        denom += out.weights[k];
    }
    for (auto& a : out.weights) a /= denom;

    out.z.assign(kFeatureDim, 0.0);
    for (std::size_t k = 0; k < K; ++k)
        for (int i = 0; i < kFeatureDim; ++i)
            out.z[static_cast<std::size_t>(i)] += out.weights[k] * features[k][static_cast<std::size_t>(i)];
    return out;
}

// Backward through pooling: dz and da flow into per-patch feature grads and
// the attention parameters.
inline std::vector<Vec> attention_backward(const ModelParams& p, const std::vector<Vec>& features,
                                           const AttentionOutput& att, const AttentionCache& cache,
                                           const Vec& dz, ModelParams& grads) {
    const std::size_t K = features.size();
    std::vector<Vec> dfeat(K, Vec(kFeatureDim, 0.0));

    // z = sum a_k h_k
    Vec da(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        for (int i = 0; i < kFeatureDim; ++i) {
            dfeat[k][static_cast<std::size_t>(i)] += att.weights[k] * dz[static_cast<std::size_t>(i)];
            da[k] += features[k][static_cast<std::size_t>(i)] * dz[static_cast<std::size_t>(i)];
        }
    }

    // Softmax: de_k = a_k (da_k - sum_j a_j da_j)
    double dot = 0.0;
    for (std::size_t k = 0; k < K; ++k) dot += att.weights[k] * da[k];
    Vec de(K);
    for (std::size_t k = 0; k < K; ++k) de[k] = att.weights[k] * (da[k] - dot);

    // e_k = w^T (vh ⊙ uh)
    for (std::size_t k = 0; k < K; ++k) {
        for (int i = 0; i < kAttnDim; ++i) {
            const double vh = cache.vh[k][static_cast<std::size_t>(i)];
            const double uh = cache.uh[k][static_cast<std::size_t>(i)];
            grads.attn_w[static_cast<std::size_t>(i)] += de[k] * vh * uh;
            const double dvh = de[k] * p.attn_w[static_cast<std::size_t>(i)] * uh;
            const double duh = de[k] * p.attn_w[static_cast<std::size_t>(i)] * vh;
            const double dpre_v = dvh * (1.0 - vh * vh);
            const double dpre_u = duh * uh * (1.0 - uh);
            for (int j = 0; j < kFeatureDim; ++j) {
                grads.attn_v.at(i, j) += dpre_v * features[k][static_cast<std::size_t>(j)];
                grads.attn_u.at(i, j) += dpre_u * features[k][static_cast<std::size_t>(j)];
                dfeat[k][static_cast<std::size_t>(j)] +=
                    dpre_v * p.attn_v.at(i, j) + dpre_u * p.attn_u.at(i, j);
            }
        }
    }
    return dfeat;
}

// --- Slide head ----------------------------------------------------------------

struct SlideHeadCache {
    Vec z, a1, n1, q, d;
    nn_detail::LnCache ln;
    const Vec* dropout_mask = nullptr; // null = inference (no dropout)
    double logit = 0.0;
};

inline double slide_head_forward(const ModelParams& p, const Vec& z, const Vec* dropout_mask,
                                 SlideHeadCache& cache) {
    using namespace nn_detail;
    cache.z = z;
    cache.dropout_mask = dropout_mask;
    cache.a1 = linear(p.head_w1, p.head_b1, z);
    cache.n1 = layer_norm(cache.a1, p.head_ln_g, p.head_ln_b, cache.ln);
    cache.q.resize(cache.n1.size());
    for (std::size_t i = 0; i < cache.n1.size(); ++i) cache.q[i] = std::max(0.0, cache.n1[i]);
    cache.d = cache.q;
    if (dropout_mask) {
        const double keep = 1.0 - kDropoutRate;
        for (std::size_t i = 0; i < cache.d.size(); ++i)
            cache.d[i] = (*dropout_mask)[i] != 0.0 ? cache.d[i] / keep : 0.0;
    }
    double acc = p.head_b2[0];
    for (int i = 0; i < kHeadHidden; ++i)
        acc += p.head_w2[static_cast<std::size_t>(i)] * cache.d[static_cast<std::size_t>(i)];
    cache.logit = acc;
    return acc;
}

inline Vec slide_head_backward(const ModelParams& p, const SlideHeadCache& cache, double dlogit,
                               ModelParams& grads) {
    using namespace nn_detail;
    Vec dd(kHeadHidden);
    for (int i = 0; i < kHeadHidden; ++i) {
        grads.head_w2[static_cast<std::size_t>(i)] += dlogit * cache.d[static_cast<std::size_t>(i)];
        dd[static_cast<std::size_t>(i)] = dlogit * p.head_w2[static_cast<std::size_t>(i)];
    }
    grads.head_b2[0] += dlogit;
    if (cache.dropout_mask) {
        const double keep = 1.0 - kDropoutRate;
        for (std::size_t i = 0; i < dd.size(); ++i)
            dd[i] = (*cache.dropout_mask)[i] != 0.0 ? dd[i] / keep : 0.0;
    }
    for (std::size_t i = 0; i < dd.size(); ++i)
        if (cache.n1[i] <= 0.0) dd[i] = 0.0;
    Vec da1 = layer_norm_backward(dd, p.head_ln_g, cache.ln, grads.head_ln_g, grads.head_ln_b);
    return linear_backward(p.head_w1, cache.z, da1, grads.head_w1, grads.head_b1);
}

// --- Whole-slide forward/backward ------------------------------------------------

struct SlideForward {
    std::vector<EncoderCache> enc;
    std::vector<Vec> features;
    AttentionOutput attention;
    AttentionCache attn_cache;
    SlideHeadCache head;
    double prob = 0.5;
};

// descriptors: one per patch in the bag. dropout_mask (kHeadHidden entries
// of 0/1) enables training-mode dropout; null runs inference mode.
inline SlideForward slide_forward(const ModelParams& p, const std::vector<Vec>& descriptors,
                                  const Vec* dropout_mask = nullptr) {
    SlideForward out;
    const std::size_t K = descriptors.size();
    if (K == 0) throw InvariantError("slide_forward: empty bag");
    out.enc.resize(K);
    out.features.resize(K);
    for (std::size_t k = 0; k < K; ++k)
        out.features[k] = encoder_forward(p, descriptors[k], out.enc[k]);
    out.attention = gated_attention_pool(p, out.features, &out.attn_cache);
    const double logit = slide_head_forward(p, out.attention.z, dropout_mask, out.head);
    out.prob = sigmoid(logit);
    return out;
}

// Loss = -[pos_weight * y * log p + (1-y) * log(1-p)] with p clamped away
// from 0/1 for the loss value; the gradient uses the exact sigmoid form.
inline double weighted_bce(double p, int y, double pos_weight) {
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    return -(pos_weight * y * std::log(pc) + (1 - y) * std::log(1.0 - pc));
}

inline double weighted_bce_dlogit(double p, int y, double pos_weight) {
    return pos_weight * y * (p - 1.0) + (1 - y) * p;
}

inline ModelParams slide_backward(const ModelParams& p, const SlideForward& fwd, int label,
                                  double pos_weight) {
    ModelParams grads = zeros_like(p);
    const double dlogit = weighted_bce_dlogit(fwd.prob, label, pos_weight);
    const Vec dz = slide_head_backward(p, fwd.head, dlogit, grads);
    const auto dfeat = attention_backward(p, fwd.features, fwd.attention, fwd.attn_cache, dz, grads);
    for (std::size_t k = 0; k < fwd.features.size(); ++k)
        encoder_backward(p, fwd.enc[k], dfeat[k], grads);
    return grads;
}

} // namespace crib
