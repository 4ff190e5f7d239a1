#include "gsem/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gsem/parallel.hpp"
#include "raster_internal.hpp"

namespace gsem {

std::optional<Splat2D> project_gaussian(const SemanticGaussian& g, const Camera& cam, int sh_degree,
                                        ProjectionStats* stats) {
    const Vec3 mu = center(g);
    const Mat3 w = cam.rotation();
    const Vec3 t = w * mu + cam.translation();
    if (t.z() <= cam.near) {
        if (stats) ++stats->culled_near;
        return std::nullopt;
    }
    if (t.z() > cam.far) {
        if (stats) ++stats->culled_far;
        return std::nullopt;
    }

    const double inv_z = 1.0 / t.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx * inv_z, 0.0, -cam.fx * t.x() * inv_z * inv_z, 0.0, cam.fy * inv_z,
        -cam.fy * t.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> jw = jac * w;
    Mat2 cov2 = jw * build_covariance(g.rotation, g.scale) * jw.transpose();
    cov2(0, 0) += kConicDilation;
    cov2(1, 1) += kConicDilation;
    const double a = cov2(0, 0);
    const double b = 0.5 * (cov2(0, 1) + cov2(1, 0));
    const double c = cov2(1, 1);
    const double det = a * c - b * b;
    if (!(det > 0.0) || !std::isfinite(det)) {
        if (stats) ++stats->culled_singular;
        return std::nullopt;
    }

    Splat2D s;
    s.mean2d = Vec2(cam.fx * t.x() * inv_z + cam.cx, cam.fy * t.y() * inv_z + cam.cy);
    s.conic = Vec3(c / det, -b / det, a / det);
    const double mid = 0.5 * (a + c);
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    s.radius = kRadiusSigmas * std::sqrt(lambda_max);
    if (s.mean2d.x() + s.radius < 0.0 || s.mean2d.x() - s.radius > cam.width - 1 ||
        s.mean2d.y() + s.radius < 0.0 || s.mean2d.y() - s.radius > cam.height - 1) {
        if (stats) ++stats->culled_offscreen;
        return std::nullopt;
    }
    s.depth = t.z();
    s.opacity = g.opacity;
    s.color = eval_sh(g.sh, (mu - cam.position()).normalized(), sh_degree);
    return s;
}

namespace {

struct TileGrid {
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> lists;  // per tile: positions in depth order
};

// Inclusive pixel range a splat may touch along one axis.
inline bool pixel_span(double mean, double radius, int extent, int& lo, int& hi) {
    lo = std::max(0, static_cast<int>(std::ceil(mean - radius)));
    hi = std::min(extent - 1, static_cast<int>(std::floor(mean + radius)));
    return lo <= hi;
}

TileGrid bin_splats(const std::vector<Splat2D>& sorted, int width, int height) {
    TileGrid grid;
    grid.tiles_x = (width + kTileSize - 1) / kTileSize;
    grid.tiles_y = (height + kTileSize - 1) / kTileSize;
    grid.lists.resize(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& s = sorted[i];
        int x0, x1, y0, y1;
        if (!pixel_span(s.mean2d.x(), s.radius, width, x0, x1)) continue;
        if (!pixel_span(s.mean2d.y(), s.radius, height, y0, y1)) continue;
        for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty) {
            for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx) {
                grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(static_cast<std::uint32_t>(i));
            }
        }
    }
    return grid;
}

}  // namespace

RenderOutput render(const GaussianField& field, const Camera& cam, const RenderOptions& opts) {
    detail::check_render_inputs(field, cam, opts);
    const int threads = resolve_threads(opts.threads);
    const int feat_dim = field.feat_dim;
    const int nch = detail::channel_count(feat_dim);
    const auto n = static_cast<std::int64_t>(field.size());

    RenderOutput out = detail::allocate_output(cam, feat_dim);

    // Projection is independent per gaussian.
    std::vector<std::optional<Splat2D>> projected(field.size());
    std::size_t c_near = 0, c_far = 0, c_off = 0, c_sing = 0;
#pragma omp parallel for schedule(static) num_threads(threads) reduction(+ : c_near, c_far, c_off, c_sing)
    for (std::int64_t i = 0; i < n; ++i) {
        ProjectionStats local;
        projected[i] = project_gaussian(field.gaussians[i], cam, field.sh_degree, &local);
        if (projected[i]) projected[i]->source_index = static_cast<std::uint32_t>(i);
        c_near += local.culled_near;
        c_far += local.culled_far;
        c_off += local.culled_offscreen;
        c_sing += local.culled_singular;
    }
    out.stats = {c_near, c_far, c_off, c_sing};

    std::vector<Splat2D> sorted;
    sorted.reserve(field.size());
    for (auto& p : projected) {
        if (p) sorted.push_back(*p);
    }
    std::sort(sorted.begin(), sorted.end(), [](const Splat2D& a, const Splat2D& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.source_index < b.source_index;
    });

    std::vector<double> channels(sorted.size() * nch);
    const auto m = static_cast<std::int64_t>(sorted.size());
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::int64_t i = 0; i < m; ++i) {
        detail::pack_channels(sorted[i], field.gaussians[sorted[i].source_index], feat_dim, channels.data() + i * nch);
    }

    const TileGrid grid = bin_splats(sorted, cam.width, cam.height);
    std::vector<std::vector<Contribution>> per_pixel;
    if (opts.cache) per_pixel.resize(out.alpha.size());

    const auto tile_count = static_cast<std::int64_t>(grid.lists.size());
#pragma omp parallel num_threads(threads)
    {
        std::vector<double> acc(nch);
#pragma omp for schedule(dynamic, 1)
        for (std::int64_t t = 0; t < tile_count; ++t) {
            const auto& list = grid.lists[t];
            const int tx = static_cast<int>(t % grid.tiles_x);
            const int ty = static_cast<int>(t / grid.tiles_x);
            const int row_end = std::min(cam.height, (ty + 1) * kTileSize);
            const int col_end = std::min(cam.width, (tx + 1) * kTileSize);
            for (int row = ty * kTileSize; row < row_end; ++row) {
                for (int col = tx * kTileSize; col < col_end; ++col) {
                    const std::size_t p = out.alpha.index(row, col);
                    const double x = col, y = row;
                    std::fill(acc.begin(), acc.end(), 0.0);
                    double trans = 1.0, wsum = 0.0;
                    std::uint32_t used = 0;
                    for (const auto pos : list) {
                        const Splat2D& s = sorted[pos];
                        if (!s.covers(x, y)) continue;
                        const double dx = x - s.mean2d.x();
                        const double dy = y - s.mean2d.y();
                        const double power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
                        const double a = s.opacity * std::exp(std::min(power, 0.0));
                        if (a < kAlphaSkip) continue;
                        const double w = a * trans;
                        const double* ch = channels.data() + static_cast<std::size_t>(pos) * nch;
                        for (int c = 0; c < nch; ++c) acc[c] += w * ch[c];
                        if (opts.cache) per_pixel[p].push_back({s.source_index, w, a, trans});
                        wsum += w;
                        trans *= 1.0 - a;
                        ++used;
                        if (trans < kTransmittanceStop) break;
                    }
                    detail::store_pixel(out, p, acc.data(), feat_dim, wsum, trans, used, opts.background);
                }
            }
        }
    }

    if (opts.cache) out.cache = detail::flatten_cache(cam.height, cam.width, field.size(), per_pixel);
    return out;
}

Mask loss_mask_from_alpha(const ScalarMap& alpha, double tau) {
    Mask mask(alpha.height, alpha.width, 0);
    for (std::size_t i = 0; i < alpha.size(); ++i) mask.data[i] = alpha.data[i] >= tau ? 1 : 0;
    return mask;
}

}  // namespace gsem
