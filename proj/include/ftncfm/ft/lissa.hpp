#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "ftncfm/diffcore/objective.hpp"

namespace ftncfm::ft {

using diff::ParamVector;

struct LissaConfig {
    std::size_t depth = 50;
    double damping = 0.01;
    std::size_t batch_size = 32;
    double scale = 10.0;

    void validate() const {
        require(depth >= 1, "LiSSA depth must be at least 1");
        require(damping > 0.0, "LiSSA damping must be positive");
        require(scale > 0.0, "LiSSA scale must be positive");
        require(batch_size >= 1, "LiSSA batch size must be positive");
    }
};

// Estimate of (H + damping I)^-1 v:
//   r_0 = v,  r_{j+1} = v + (I - (H_j + damping I) / scale) r_j,  result r_J / scale
// where H_j is the Hessian on a minibatch drawn without replacement (the whole
// dataset when batch_size >= N).
template <diff::DifferentiableModel M>
ParamVector lissa_ihvp(const M& model, const ParamVector& params, std::span<const typename M::Example> data,
                       const ParamVector& v, const LissaConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    require(!data.empty(), "LiSSA needs a nonempty dataset");
    require(v.same_layout(params), "LiSSA: v does not match the parameter layout");

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const bool full = cfg.batch_size >= data.size();
    const auto full_batch = full ? model.collate(data, order) : typename M::Batch{};

    ParamVector r = v;
    for (std::size_t j = 0; j < cfg.depth; ++j) {
        ParamVector hv;
        if (full) {
            hv = diff::hvp(model, params, full_batch, r);
        } else {
            std::shuffle(order.begin(), order.end(), rng);
            auto idx = std::span<const std::size_t>(order).first(cfg.batch_size);
            hv = diff::hvp(model, params, model.collate(data, idx), r);
        }
        hv.axpy(cfg.damping, r);
        // r <- v + r - hv / scale
        r.axpy(-1.0 / cfg.scale, hv);
        r += v;
        if (!r.all_finite()) throw NumericError("LiSSA iterate became non-finite; increase the scale", "iteration " + std::to_string(j));
    }
    r *= 1.0 / cfg.scale;
    return r;
}

} // namespace ftncfm::ft
