#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "octflow/errors.hpp"

namespace octflow {

struct AdamConfig {
    double lr = 1e-5; // reference default; callers override per run
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment arrays mirror the parameter arrays entry by entry.
template <typename T>
struct AdamState {
    std::int64_t t = 0;
    AdamConfig cfg;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    static AdamState fresh(const std::vector<std::vector<T>>& like, const AdamConfig& cfg) {
        AdamState s;
        s.cfg = cfg;
        s.m.reserve(like.size());
        s.v.reserve(like.size());
        for (const auto& a : like) {
            s.m.emplace_back(a.size(), T{0});
            s.v.emplace_back(a.size(), T{0});
        }
        return s;
    }
};

// One bias-corrected Adam step over an ordered set of parameter arrays.
// `params` entries are mutated in place; moment math runs in double.
template <typename T>
void adam_update(std::vector<T*> params, const std::vector<std::size_t>& counts,
                 const std::vector<std::vector<T>>& grads, AdamState<T>& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw ShapeError("adam_update: array count mismatch (params " +
                         std::to_string(params.size()) + ", grads " +
                         std::to_string(grads.size()) + ", state " +
                         std::to_string(state.m.size()) + ")");
    }
    state.t += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    const double lr = state.cfg.lr, eps = state.cfg.eps;

    for (std::size_t a = 0; a < params.size(); ++a) {
        if (grads[a].size() != counts[a] || state.m[a].size() != counts[a]) {
            throw ShapeError("adam_update: array " + std::to_string(a) + " count mismatch");
        }
        T* p = params[a];
        const T* g = grads[a].data();
        T* m = state.m[a].data();
        T* v = state.v[a].data();
        for (std::size_t i = 0; i < counts[a]; ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

} // namespace octflow
