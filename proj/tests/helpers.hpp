#pragma once

// Small random scenes shared by the unit tests.

#include <cstdint>
#include <random>

#include "gsem/field.hpp"
#include "gsem/image.hpp"

namespace gsem::testing {

// Camera at the origin looking down +z with the principal point on a pixel.
inline Camera axis_camera(int size, double focal = 0.0) {
    Camera cam;
    cam.fx = cam.fy = focal > 0.0 ? focal : size;
    cam.cx = cam.cy = size / 2;
    cam.width = cam.height = size;
    return cam;
}

// n gaussians inside the frustum of axis_camera(size), depth in [2, 4].
inline GaussianField random_field(int n, int feat_dim, std::uint64_t seed, double scale_lo = 0.05,
                                  double scale_hi = 0.3) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    GaussianField f;
    f.feat_dim = feat_dim;
    for (int i = 0; i < n; ++i) {
        SemanticGaussian g = make_gaussian(feat_dim, 0);
        const double z = 2.0 + 2.0 * u(rng);
        g.point = Vec3((u(rng) - 0.5) * z * 0.9, (u(rng) - 0.5) * z * 0.9, z);
        g.rotation = Vec4(nd(rng), nd(rng), nd(rng), nd(rng)).normalized();
        g.scale = Vec3(scale_lo + (scale_hi - scale_lo) * u(rng), scale_lo + (scale_hi - scale_lo) * u(rng),
                       scale_lo + (scale_hi - scale_lo) * u(rng));
        g.opacity = 0.1 + 0.85 * u(rng);
        g.sh.col(0) = Vec3(u(rng), u(rng), u(rng));
        for (int k = 0; k < feat_dim; ++k) {
            g.feat_region[k] = nd(rng);
            g.feat_context[k] = nd(rng);
        }
        f.gaussians.push_back(std::move(g));
    }
    return f;
}

// Many small gaussians spread over depth 2..8, same recipe as `gsem bench`.
inline GaussianField bench_field(int n, int feat_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    GaussianField f;
    f.feat_dim = feat_dim;
    f.gaussians.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SemanticGaussian g = make_gaussian(feat_dim, 0);
        const double z = 2.0 + 6.0 * u(rng);
        g.point = Vec3((u(rng) - 0.5) * z, (u(rng) - 0.5) * z, z);
        g.rotation = Vec4(nd(rng), nd(rng), nd(rng), nd(rng)).normalized();
        g.scale = Vec3(0.005 + 0.02 * u(rng), 0.005 + 0.02 * u(rng), 0.005 + 0.02 * u(rng));
        g.opacity = 0.3 + 0.6 * u(rng);
        g.sh.col(0) = Vec3(u(rng), u(rng), u(rng));
        for (int k = 0; k < feat_dim; ++k) {
            g.feat_region[k] = nd(rng);
            g.feat_context[k] = nd(rng);
        }
        f.gaussians.push_back(std::move(g));
    }
    return f;
}

inline FeatureImage random_image(int h, int w, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    FeatureImage img(h, w, c);
    for (auto& v : img.data) v = nd(rng);
    return img;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace gsem::testing
