#pragma once

// Minimax distillation: the sampler ascends the CF gap, the synthetic set
// descends it. Real features are fixed; batches are drawn with replacement in
// proportion to the influence weights.

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "ftncfm/ncfm/cf.hpp"
#include "ftncfm/ncfm/sampler.hpp"
#include "ftncfm/representation/synthetic.hpp"

namespace ftncfm::ncfm {

struct DistillConfig {
    double eta = 0.05;
    std::size_t n_frequencies = 64;
    std::size_t steps = 2000;
    double generator_step = 10.0;
    double sampler_step = 0.01;
    std::size_t sampler_updates = 1;
    std::size_t real_batch = 256;
    bool exact = false; // use every real feature with its normalized weight
    Index noise_dim = 16;
    double freq_scale = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(eta > 0.0 && eta <= 1.0, "eta must lie in (0, 1]");
        require(n_frequencies >= 1, "need at least one frequency per step");
        require(sampler_updates >= 1, "need at least one sampler update per step");
        require(real_batch >= 1, "real batch size must be positive");
        require(generator_step >= 0.0 && sampler_step >= 0.0, "step sizes must be nonnegative");
    }
};

inline std::size_t coreset_size(double eta, std::size_t n) {
    require(eta > 0.0 && eta <= 1.0, "eta must lie in (0, 1]");
    require(eta * static_cast<double>(n) >= 1.0 - 1e-12, "eta * N is below one sample");
    return static_cast<std::size_t>(std::ceil(eta * static_cast<double>(n) - 1e-9));
}

// Draws indices with replacement in proportion to nonnegative weights.
class WeightedSampler {
public:
    explicit WeightedSampler(std::span<const double> weights) : dist_(weights.begin(), weights.end()) {
        double total = 0.0;
        for (double w : weights) {
            require(w >= 0.0 && std::isfinite(w), "sampling weights must be finite and nonnegative");
            total += w;
        }
        require(total > 0.0, "sampling weights are all zero");
    }

    template <class Rng>
    std::vector<std::size_t> draw(Rng& rng, std::size_t n) {
        std::vector<std::size_t> out(n);
        for (auto& i : out) i = dist_(rng);
        return out;
    }

private:
    std::discrete_distribution<std::size_t> dist_;
};

struct MinimaxResult {
    std::vector<Matrix> blocks; // the optimized synthetic tensors
    ParamVector sampler;
    std::vector<double> curve; // discrepancy seen by each generator step
};

// features(tape, leaves) maps the synthetic tensors to an M x d feature matrix.
using FeatureFn = std::function<Var(Tape&, std::span<const Var>)>;

inline MinimaxResult run_minimax(const Matrix& real, std::span<const double> weights, std::vector<Matrix> blocks,
                                 const FeatureFn& features, const DistillConfig& cfg) {
    cfg.validate();
    require(real.rows() > 0 && static_cast<Index>(weights.size()) == real.rows(),
            "distill: one weight per real feature");
    const SamplerNet sampler(real.cols(), cfg.noise_dim, cfg.freq_scale);
    std::mt19937_64 rng(cfg.seed);
    MinimaxResult out;
    out.sampler = sampler.initial_params(rng);
    WeightedSampler draw(weights);

    Matrix exact_w;
    if (cfg.exact) {
        double total = 0.0;
        for (double w : weights) total += w;
        exact_w.resize(1, real.rows());
        for (Index i = 0; i < real.rows(); ++i) exact_w(0, i) = weights[static_cast<std::size_t>(i)] / total;
    }

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Matrix batch;
        Matrix bw;
        if (cfg.exact) {
            batch = real;
            bw = exact_w;
        } else {
            const auto idx = draw.draw(rng, cfg.real_batch);
            batch.resize(static_cast<Index>(idx.size()), real.cols());
            for (std::size_t r = 0; r < idx.size(); ++r) batch.row(static_cast<Index>(r)) = real.row(static_cast<Index>(idx[r]));
            bw = Matrix::Constant(1, batch.rows(), 1.0 / static_cast<double>(batch.rows()));
        }
        const Matrix z = sampler.noise(cfg.n_frequencies, rng());

        Matrix syn;
        {
            Tape tape;
            std::vector<Var> leaves;
            for (const auto& b : blocks) leaves.push_back(tape.constant(b));
            syn = features(tape, leaves).value();
        }

        for (std::size_t u = 0; u < cfg.sampler_updates; ++u) {
            Tape tape;
            auto sp = diff::bind(tape, out.sampler, true);
            Var t = sampler.frequencies(sp, tape.constant(z));
            Var loss = cf_discrepancy(tape.constant(batch), bw, tape.constant(syn), t);
            auto g = tape.grad(loss, sp);
            out.sampler.axpy(cfg.sampler_step, diff::flatten(out.sampler.layout(), g));
        }

        Tape tape;
        Var t = tape.constant(sampler.frequencies(out.sampler, z));
        std::vector<Var> leaves;
        for (const auto& b : blocks) leaves.push_back(tape.variable(b));
        Var loss = cf_discrepancy(tape.constant(batch), bw, features(tape, leaves), t);
        if (!std::isfinite(loss.scalar())) throw TrainingError("distillation discrepancy became non-finite", step);
        auto g = tape.grad(loss, leaves);
        for (std::size_t k = 0; k < blocks.size(); ++k) blocks[k] -= cfg.generator_step * g[k].value();
        for (const auto& b : blocks)
            if (!b.allFinite()) throw TrainingError("synthetic samples became non-finite", step);
        if (!out.sampler.all_finite()) throw TrainingError("sampler parameters became non-finite", step);
        out.curve.push_back(loss.scalar());
    }
    out.blocks = std::move(blocks);
    return out;
}

inline Matrix gaussian_matrix(std::mt19937_64& rng, Index rows, Index cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

struct FeatureCoreset {
    Matrix features;
    ParamVector sampler;
    std::vector<double> curve;
};

// Feature-space mode: the synthetic set is a free M x d matrix.
inline FeatureCoreset distill_features(const Matrix& real, std::span<const double> weights, std::size_t m,
                                       const DistillConfig& cfg) {
    require(m >= 1, "coreset must hold at least one sample");
    std::mt19937_64 init(cfg.seed ^ 0x5DEECE66Dull);
    std::vector<Matrix> blocks{gaussian_matrix(init, static_cast<Index>(m), real.cols())};
    auto r = run_minimax(real, weights, std::move(blocks),
                         [](Tape&, std::span<const Var> leaves) { return leaves[0]; }, cfg);
    return {std::move(r.blocks[0]), std::move(r.sampler), std::move(r.curve)};
}

struct SyntheticCoreset {
    std::vector<rep::SyntheticSample> samples;
    ParamVector sampler;
    std::vector<double> curve;
};

inline std::vector<rep::SyntheticSample> gaussian_coreset(std::size_t m, Index action_width, std::uint64_t seed) {
    std::mt19937_64 init(seed ^ 0x5DEECE66Dull);
    rep::SyntheticBatch b{gaussian_matrix(init, rep::kSlots * static_cast<Index>(m), rep::kSceneFields),
                          gaussian_matrix(init, static_cast<Index>(m), rep::kInstrDim),
                          gaussian_matrix(init, static_cast<Index>(m), action_width)};
    return rep::unstack(b);
}

// Raw-sample mode: synthetic samples pass through the frozen encoders.
// Returns ceil(eta * N) samples.
inline SyntheticCoreset distill(const Matrix& real_features, std::span<const double> weights,
                                const rep::Encoders& enc, const DistillConfig& cfg) {
    cfg.validate();
    const std::size_t m = coreset_size(cfg.eta, static_cast<std::size_t>(real_features.rows()));
    const auto init = gaussian_coreset(m, enc.stack.action_width(), cfg.seed);
    if (cfg.steps == 0) return {init, ParamVector(), {}};
    const rep::SyntheticBatch b = rep::stack(init);
    std::vector<Matrix> blocks{b.scene, b.instr, b.action};
    auto features = [&enc](Tape& tape, std::span<const Var> leaves) {
        auto p = diff::bind(tape, enc.params, false);
        return rep::featurize_synthetic(enc.stack, p, leaves[0], leaves[1], leaves[2]);
    };
    auto r = run_minimax(real_features, weights, std::move(blocks), features, cfg);
    return {rep::unstack({r.blocks[0], r.blocks[1], r.blocks[2]}), std::move(r.sampler), std::move(r.curve)};
}

} // namespace ftncfm::ncfm
