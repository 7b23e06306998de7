#pragma once

#include <cmath>
#include <limits>
#include <span>

#include <boost/math/distributions/students_t.hpp>

#include "ftncfm/common/errors.hpp"

namespace ftncfm::harness {

struct PairedResult {
    double mean_diff = 0.0;
    double t = 0.0;
    double p = 1.0;          // two-sided
    bool degenerate = false; // the differences have zero variance
};

// Paired t-test on a - b. With zero-variance differences the statistic is
// undefined: p is 1 when the mean difference is 0 and 0 otherwise (read it as
// "below 1e-12"), and `degenerate` is set.
inline PairedResult paired_compare(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "paired_compare: vectors differ in length");
    require(a.size() >= 2, "paired_compare: need at least two pairs");
    const auto n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    PairedResult r;
    r.mean_diff = mean;
    const double sd = std::sqrt(ss / (n - 1.0));
    if (sd == 0.0 || sd <= 1e-15 * std::abs(mean)) {
        r.degenerate = true;
        if (mean == 0.0) return r;
        r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
        r.p = 0.0;
        return r;
    }
    r.t = mean / (sd / std::sqrt(n));
    boost::math::students_t dist(n - 1.0);
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

} // namespace ftncfm::harness
