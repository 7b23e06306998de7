#pragma once

// Empirical characteristic-function gap between weighted real features and
// uniformly weighted synthetic features, averaged over sampled frequencies.

#include <cmath>
#include <span>
#include <vector>

#include "ftncfm/diffcore/tape.hpp"

namespace ftncfm::ncfm {

using diff::Index;
using diff::Matrix;
using diff::Var;

struct CfDiscrepancy {
    double value = 0.0;
    std::vector<double> per_frequency;
};

namespace detail {
inline double phase(const Matrix& t, Index f, const Matrix& h, Index i) {
    double s = 0.0;
    for (Index k = 0; k < h.cols(); ++k) s += t(f, k) * h(i, k);
    return s;
}

inline void check_shapes(const Matrix& real, const Matrix& syn, const Matrix& freqs) {
    require(real.rows() > 0 && syn.rows() > 0 && freqs.rows() > 0, "cf_discrepancy: empty input");
    require(real.cols() == syn.cols() && real.cols() == freqs.cols(), "cf_discrepancy: dimensions differ");
}

struct Cf {
    double re = 0.0;
    double im = 0.0;
};

inline Cf uniform_cf(const Matrix& h, const Matrix& t, Index f) {
    Cf c;
    for (Index i = 0; i < h.rows(); ++i) {
        const double p = phase(t, f, h, i);
        c.re += std::cos(p);
        c.im += std::sin(p);
    }
    const auto n = static_cast<double>(h.rows());
    return {c.re / n, c.im / n};
}

inline CfDiscrepancy assemble(const std::vector<Cf>& real, const std::vector<Cf>& syn) {
    CfDiscrepancy out;
    out.per_frequency.resize(real.size());
    double total = 0.0;
    for (std::size_t f = 0; f < real.size(); ++f) {
        const double dr = real[f].re - syn[f].re, di = real[f].im - syn[f].im;
        out.per_frequency[f] = dr * dr + di * di;
        total += out.per_frequency[f];
    }
    out.value = total / static_cast<double>(real.size());
    return out;
}
} // namespace detail

// Weights are divided by their maximum before use, so equal weights enter as
// exactly 1 and the weighted statistic coincides with the plain mean.
inline CfDiscrepancy cf_discrepancy(const Matrix& real, std::span<const double> weights, const Matrix& syn,
                                    const Matrix& freqs) {
    detail::check_shapes(real, syn, freqs);
    require(static_cast<Index>(weights.size()) == real.rows(), "cf_discrepancy: one weight per real feature");
    double wmax = 0.0;
    for (double w : weights) {
        require(w >= 0.0 && std::isfinite(w), "cf_discrepancy: weights must be finite and nonnegative");
        wmax = std::max(wmax, w);
    }
    require(wmax > 0.0, "cf_discrepancy: all weights are zero");
    std::vector<double> w(weights.size());
    double wsum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = weights[i] / wmax;
        wsum += w[i];
    }

    std::vector<detail::Cf> rcf(static_cast<std::size_t>(freqs.rows())), scf(rcf.size());
    for (Index f = 0; f < freqs.rows(); ++f) {
        detail::Cf c;
        for (Index i = 0; i < real.rows(); ++i) {
            const double p = detail::phase(freqs, f, real, i);
            c.re += w[static_cast<std::size_t>(i)] * std::cos(p);
            c.im += w[static_cast<std::size_t>(i)] * std::sin(p);
        }
        rcf[static_cast<std::size_t>(f)] = {c.re / wsum, c.im / wsum};
        scf[static_cast<std::size_t>(f)] = detail::uniform_cf(syn, freqs, f);
    }
    return detail::assemble(rcf, scf);
}

// The unweighted objective, written without any weights.
inline CfDiscrepancy cf_discrepancy_unweighted(const Matrix& real, const Matrix& syn, const Matrix& freqs) {
    detail::check_shapes(real, syn, freqs);
    std::vector<detail::Cf> rcf(static_cast<std::size_t>(freqs.rows())), scf(rcf.size());
    for (Index f = 0; f < freqs.rows(); ++f) {
        rcf[static_cast<std::size_t>(f)] = detail::uniform_cf(real, freqs, f);
        scf[static_cast<std::size_t>(f)] = detail::uniform_cf(syn, freqs, f);
    }
    return detail::assemble(rcf, scf);
}

// Differentiable form. real: B x d, syn: M x d, freqs: F x d, weights
// (1 x B) normalized to sum to one.
inline Var cf_discrepancy(const Var& real, const Matrix& weights, const Var& syn, const Var& freqs) {
    using namespace diff;
    require(weights.rows() == 1 && weights.cols() == real.rows(), "cf_discrepancy: weights must be 1 x B");
    Tape& tape = real.tape();
    Var ft = transpose(freqs);
    Var pr = matmul(real, ft); // B x F
    Var ps = matmul(syn, ft);  // M x F
    Var w = tape.constant(weights);
    Var u = tape.constant(Matrix::Constant(1, syn.rows(), 1.0 / static_cast<double>(syn.rows())));
    Var dre = sub(matmul(w, cos(pr)), matmul(u, cos(ps)));
    Var dim = sub(matmul(w, sin(pr)), matmul(u, sin(ps)));
    return scale(add(sum(square(dre)), sum(square(dim))), 1.0 / static_cast<double>(freqs.rows()));
}

} // namespace ftncfm::ncfm
