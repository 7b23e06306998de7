#pragma once

// Frequency sampler psi: noise (n_z) -> frequency vector (d), three linear
// layers each followed by layer normalization, leaky rectifiers after the
// first two and tanh after the last. Outputs are multiplied by freq_scale.

#include <random>

#include "ftncfm/diffcore/mlp.hpp"
#include "ftncfm/diffcore/params.hpp"

namespace ftncfm::ncfm {

using diff::Index;
using diff::Matrix;
using diff::ParamVector;
using diff::Tape;
using diff::Var;

class SamplerNet {
public:
    SamplerNet(Index output_dim, Index noise_dim = 16, double freq_scale = 1.0, Index hidden = 64)
        : noise_dim_(noise_dim), freq_scale_(freq_scale) {
        require(noise_dim > 0 && output_dim > 0, "sampler dimensions must be positive");
        require(freq_scale > 0.0, "frequency scale must be positive");
        diff::ParamLayout::Builder b;
        net_ = diff::Mlp("psi", noise_dim,
                         {diff::linear(hidden), diff::layer_norm(), diff::leaky_relu_layer(), diff::linear(hidden),
                          diff::layer_norm(), diff::leaky_relu_layer(), diff::linear(output_dim), diff::layer_norm(),
                          diff::tanh_layer()},
                         b);
        layout_ = b.build();
    }

    const diff::LayoutPtr& layout() const noexcept { return layout_; }
    Index noise_dim() const noexcept { return noise_dim_; }
    Index output_dim() const noexcept { return net_.output_dim(); }
    double freq_scale() const noexcept { return freq_scale_; }

    template <class Rng>
    ParamVector initial_params(Rng& rng) const {
        ParamVector p(layout_);
        net_.initialize(p, rng);
        return p;
    }

    Matrix noise(std::size_t n, std::uint64_t seed) const {
        require(n >= 1, "need at least one frequency");
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        Matrix z(static_cast<Index>(n), noise_dim_);
        for (Index i = 0; i < z.rows(); ++i)
            for (Index j = 0; j < z.cols(); ++j) z(i, j) = normal(rng);
        return z;
    }

    Var frequencies(std::span<const Var> params, const Var& z) const {
        return diff::scale(net_.forward(params, z), freq_scale_);
    }

    Matrix frequencies(const ParamVector& params, const Matrix& z) const {
        Tape tape;
        auto p = diff::bind(tape, params, false);
        return frequencies(p, tape.constant(z)).value();
    }

    Matrix sample_frequencies(const ParamVector& params, std::size_t n, std::uint64_t seed) const {
        return frequencies(params, noise(n, seed));
    }

private:
    Index noise_dim_;
    double freq_scale_;
    diff::Mlp net_;
    diff::LayoutPtr layout_;
};

} // namespace ftncfm::ncfm
