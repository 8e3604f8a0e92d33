#pragma once

#include <cmath>
#include <string>

#include "crib/errors.hpp"
#include "crib/model.hpp"

namespace crib {

enum class OptimizerKind : std::uint8_t { AdamW = 0, RAdam = 1 };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::AdamW ? "adamw" : "radam"; }

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::AdamW;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    long step = 0;
    ModelParams m; // first moments
    ModelParams v; // second moments

    static OptimizerState make(OptimizerKind kind, double weight_decay) {
        OptimizerState s;
        s.kind = kind;
        s.weight_decay = weight_decay;
        s.m = zeros_like(ModelParams{});
        s.v = zeros_like(ModelParams{});
        return s;
    }
};

// One update over every parameter. AdamW applies decoupled weight decay;
// RAdam adds variance rectification and falls back to SGD-with-momentum
// while the rectification term is undefined (rho_t <= 4, i.e. the first
// four steps at beta2 = 0.999).
inline void optimizer_step(OptimizerState& state, ModelParams& params, ModelParams& grads, double lr) {
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double b1 = state.beta1, b2 = state.beta2;
    const double bias1 = 1.0 - std::pow(b1, t);
    const double bias2 = 1.0 - std::pow(b2, t);

    bool rectified = true;
    double r_t = 1.0;
    if (state.kind == OptimizerKind::RAdam) {
        const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
        const double b2t = std::pow(b2, t);
        const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
        if (rho_t > 4.0) {
            r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                            ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        } else {
            rectified = false;
        }
    }

    auto ps = param_table(params);
    auto gs = param_table(grads);
    auto ms = param_table(state.m);
    auto vs = param_table(state.v);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Vec& p = *ps[i].data;
        const Vec& g = *gs[i].data;
        Vec& m = *ms[i].data;
        Vec& v = *vs[i].data;
        if (p.size() != g.size()) throw InvariantError("optimizer_step: shape mismatch in " + ps[i].name);
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (!std::isfinite(g[j])) throw InvariantError("non-finite gradient in " + ps[i].name);
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double mhat = m[j] / bias1;
            double update;
            if (state.kind == OptimizerKind::AdamW || rectified) {
                const double vhat = v[j] / bias2;
                update = r_t * mhat / (std::sqrt(vhat) + state.eps);
            } else {
                update = mhat;
            }
            p[j] -= lr * update + lr * state.weight_decay * p[j];
        }
    }
}

// OneCycle schedule: half-cosine ramp lr_start -> lr_peak over the first
// epoch's steps, then cosine annealing lr_peak -> lr_end.
inline double onecycle_lr(long step, long warmup_steps, long total_steps, double lr_start = 1e-5,
                          double lr_peak = 1e-4, double lr_end = 1e-6) {
    if (step < 0 || step > total_steps) throw InvariantError("onecycle_lr: step out of range");
    if (warmup_steps <= 0) warmup_steps = 1;
    if (step <= warmup_steps) {
        const double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
        return lr_start + (lr_peak - lr_start) * 0.5 * (1.0 - std::cos(M_PI * t));
    }
    const double t = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(std::max<long>(1, total_steps - warmup_steps));
    return lr_end + (lr_peak - lr_end) * 0.5 * (1.0 + std::cos(M_PI * t));
}

} // namespace crib
