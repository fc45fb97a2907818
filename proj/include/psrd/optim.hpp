#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "psrd/net.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

struct OptimConfig {
    Real lr = Real(0.01);
    Real momentum = Real(0.9);  // the alternative 0.7 is a config choice
    Real weight_decay = Real(1e-4);
    int epochs = 12;
    std::uint64_t seed = 7;

    void validate() const {
        if (lr <= Real(0)) throw ConfigError("optimizer: lr must be positive");
        if (momentum < Real(0) || momentum >= Real(1)) throw ConfigError("optimizer: momentum must lie in [0, 1)");
        if (weight_decay < Real(0)) throw ConfigError("optimizer: weight_decay must be nonnegative");
        if (epochs < 0) throw ConfigError("optimizer: epochs must be nonnegative");
    }
};

/// Per-parameter velocity buffers, keyed like the ParamSet.
struct SgdState {
    std::map<std::string, std::vector<Real>> velocity;
};

/// Momentum SGD with L2 decay folded into the gradient:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// A non-finite gradient aborts with the offending parameter's name.
inline void sgd_step(ParamSet& params, SgdState& state, const OptimConfig& opt, Real lr) {
    for (auto& [name, t] : params.tensors) {
        if (!t.requires_grad()) continue;
        auto& v = state.velocity[name];
        if (v.empty()) v.assign(static_cast<std::size_t>(t.numel()), Real(0));
        Real* g = t.grad();
        Real* p = t.data();
        const std::int64_t n = t.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(g[i])) {
                throw NumericError("non-finite gradient in parameter " + name);
            }
            const Real step = opt.momentum * v[static_cast<std::size_t>(i)] + g[i] + opt.weight_decay * p[i];
            v[static_cast<std::size_t>(i)] = step;
            p[i] -= lr * step;
        }
    }
}

inline void sgd_step(ParamSet& params, SgdState& state, const OptimConfig& opt) {
    sgd_step(params, state, opt, opt.lr);
}

}  // namespace psrd
