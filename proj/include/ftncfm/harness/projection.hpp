#pragma once

// 2-D PCA of feature vectors for plotting.

#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ftncfm/common/files.hpp"
#include "ftncfm/diffcore/params.hpp"

namespace ftncfm::harness {

using diff::Index;
using diff::Matrix;

// Top two principal axes as columns (d x 2), largest variance first. Each axis
// is signed so that its largest-magnitude entry is positive.
inline Matrix principal_axes(const Matrix& x) {
    require(x.rows() >= 3, "projection needs at least three points");
    require(x.cols() >= 2, "projection needs at least two dimensions");
    const Matrix centered = x.rowwise() - x.colwise().mean();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed", "projection");
    Matrix axes(x.cols(), 2);
    for (Index k = 0; k < 2; ++k) {
        Eigen::VectorXd v = eig.eigenvectors().col(x.cols() - 1 - k);
        Index arg = 0;
        for (Index i = 1; i < v.size(); ++i)
            if (std::abs(v[i]) > std::abs(v[arg]) + 1e-12) arg = i;
        if (v[arg] < 0.0) v = -v;
        axes.col(k) = v;
    }
    return axes;
}

inline Matrix project_2d(const Matrix& x) {
    return (x.rowwise() - x.colwise().mean()) * principal_axes(x);
}

inline std::string projection_csv(const Matrix& points, std::span<const double> weights,
                                  std::span<const std::string> sources) {
    require(points.cols() == 2, "projection_csv: points must be 2-D");
    require(static_cast<Index>(weights.size()) == points.rows() && weights.size() == sources.size(),
            "projection_csv: one weight and one source per point");
    std::ostringstream os;
    os << "x,y,weight,source\n";
    for (Index i = 0; i < points.rows(); ++i)
        os << format_sig(points(i, 0)) << ',' << format_sig(points(i, 1)) << ','
           << format_sig(weights[static_cast<std::size_t>(i)]) << ',' << sources[static_cast<std::size_t>(i)] << '\n';
    return os.str();
}

inline void export_projection(const Matrix& features, std::span<const double> weights,
                              std::span<const std::string> sources, const std::filesystem::path& path) {
    write_text(path, projection_csv(project_2d(features), weights, sources));
}

} // namespace ftncfm::harness
