#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ftncfm/diffcore/objective.hpp"

namespace testing {

using ftncfm::diff::Matrix;
using ftncfm::diff::ParamVector;

// max_i |a_i - b_i| / max(1, |b_i|), but scaled by the largest |b| so tiny
// entries do not dominate.
inline double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double denom = std::max(1e-8, b.cwiseAbs().maxCoeff());
    return (a - b).cwiseAbs().maxCoeff() / denom;
}

inline ParamVector central_difference(const std::function<double(const ParamVector&)>& f, const ParamVector& p,
                                      double h = 1e-5) {
    ParamVector g = p.zeros_like();
    ParamVector q = p;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double orig = q[i];
        q[i] = orig + h;
        const double fp = f(q);
        q[i] = orig - h;
        const double fm = f(q);
        q[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
    return m;
}

inline ParamVector random_like(std::mt19937_64& rng, const ParamVector& p, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    ParamVector out = p.zeros_like();
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = n(rng);
    return out;
}

// Ranks starting at 1; ties share their average rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
        i = j + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks(a), rb = ranks(b);
    const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
    const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
    const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
    return xc.dot(yc) / std::sqrt(xc.squaredNorm() * yc.squaredNorm());
}

} // namespace testing
