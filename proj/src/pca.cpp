#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gsem/error.hpp"
#include "gsem/query.hpp"

namespace gsem {

FeatureImage pca_visualize(const FeatureImage& feats, const Mask& mask) {
    if (!mask.same_shape(feats.height, feats.width)) throw ShapeError("pca_visualize: mask shape mismatch");
    std::vector<std::size_t> pixels;
    for (std::size_t p = 0; p < mask.size(); ++p)
        if (mask.data[p]) pixels.push_back(p);
    if (pixels.size() < 3) throw UsageError("pca_visualize: need at least 3 masked pixels");

    const auto m = static_cast<Eigen::Index>(pixels.size());
    const Eigen::Index d = feats.channels;
    MatX x(m, d);
    for (Eigen::Index i = 0; i < m; ++i) x.row(i) = Eigen::Map<const VecX>(feats.pixel(pixels[i]), d).transpose();
    x.rowwise() -= x.colwise().mean();

    // Principal directions from the smaller of the D x D covariance and the
    // M x M Gram matrix; both share the nonzero spectrum.
    MatX dirs(d, 3);
    dirs.setZero();
    VecX values = VecX::Zero(3);
    if (d <= m) {
        Eigen::SelfAdjointEigenSolver<MatX> es(x.transpose() * x);
        for (int c = 0; c < 3 && c < d; ++c) {
            values[c] = es.eigenvalues()[d - 1 - c];
            dirs.col(c) = es.eigenvectors().col(d - 1 - c);
        }
    } else {
        Eigen::SelfAdjointEigenSolver<MatX> es(x * x.transpose());
        for (int c = 0; c < 3 && c < m; ++c) {
            values[c] = es.eigenvalues()[m - 1 - c];
            const VecX v = x.transpose() * es.eigenvectors().col(m - 1 - c);
            const double n = v.norm();
            if (n > 0.0) dirs.col(c) = v / n;
        }
    }
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());

    FeatureImage out(feats.height, feats.width, 3);
    for (int c = 0; c < 3; ++c) {
        if (!(values[c] > 1e-12 * scale)) continue;  // rank deficit: channel stays zero
        Eigen::Index big = 0;
        dirs.col(c).cwiseAbs().maxCoeff(&big);
        if (dirs(big, c) < 0.0) dirs.col(c) = -dirs.col(c);
        const VecX proj = x * dirs.col(c);
        const double lo = proj.minCoeff(), hi = proj.maxCoeff();
        if (!(hi - lo > 0.0)) continue;
        for (Eigen::Index i = 0; i < m; ++i) out.pixel(pixels[i])[c] = (proj[i] - lo) / (hi - lo);
    }
    return out;
}

}  // namespace gsem
