#include "gsem/grad.hpp"

#include <vector>

#include "gsem/error.hpp"
#include "gsem/parallel.hpp"

namespace gsem {

namespace {

// Entry indices of every contribution, grouped by gaussian, each group in
// row-major pixel order.
struct InvertedIndex {
    std::vector<std::size_t> offsets;  // n + 1
    std::vector<std::size_t> entries;  // entry index into ForwardCache::entries
    std::vector<std::size_t> pixels;   // pixel of each listed entry
};

InvertedIndex invert(const ForwardCache& cache, std::size_t n) {
    InvertedIndex inv;
    inv.offsets.assign(n + 1, 0);
    for (const auto& e : cache.entries) ++inv.offsets[e.source + 1];
    for (std::size_t i = 0; i < n; ++i) inv.offsets[i + 1] += inv.offsets[i];
    std::vector<std::size_t> cursor(inv.offsets.begin(), inv.offsets.end() - 1);
    inv.entries.resize(cache.entries.size());
    inv.pixels.resize(cache.entries.size());
    const std::size_t pixel_count = cache.offsets.size() - 1;
    for (std::size_t p = 0; p < pixel_count; ++p) {
        for (std::size_t e = cache.begin(p); e < cache.end(p); ++e) {
            const auto slot = cursor[cache.entries[e].source]++;
            inv.entries[slot] = e;
            inv.pixels[slot] = p;
        }
    }
    return inv;
}

void check_upstream(const FeatureImage& up, const ForwardCache& cache, int feat_dim, const char* name) {
    if (up.height != cache.height || up.width != cache.width || up.channels != feat_dim) {
        throw ShapeError(std::string("render_backward: ") + name + " upstream has shape " + std::to_string(up.height) +
                         "x" + std::to_string(up.width) + "x" + std::to_string(up.channels) + ", expected " +
                         std::to_string(cache.height) + "x" + std::to_string(cache.width) + "x" +
                         std::to_string(feat_dim));
    }
}

}  // namespace

FeatureGrad render_backward(const GaussianField& field, const RenderOutput& forward, const FeatureImage& upstream_region,
                            const FeatureImage& upstream_context, const BackwardOptions& opts) {
    if (!forward.cache) throw UsageError("render_backward: forward pass was run without RenderOptions::cache");
    const ForwardCache& cache = *forward.cache;
    if (cache.gaussian_count != field.size()) {
        throw UsageError("render_backward: cached forward state belongs to a field of different size");
    }
    const int k_dim = field.feat_dim;
    check_upstream(upstream_region, cache, k_dim, "region");
    check_upstream(upstream_context, cache, k_dim, "context");
    if (opts.upstream_alpha && !opts.upstream_alpha->same_shape(cache.height, cache.width)) {
        throw ShapeError("render_backward: alpha upstream shape mismatch");
    }

    const int threads = resolve_threads(opts.threads);
    const std::size_t n = field.size();
    FeatureGrad grad = FeatureGrad::zeros(n, k_dim);
    const InvertedIndex inv = invert(cache, n);

    // Per-entry opacity partials, each pixel owns its own entries.
    std::vector<double> d_alpha_entry;
    if (opts.opacity) {
        d_alpha_entry.assign(cache.entries.size(), 0.0);
        const auto pixel_count = static_cast<std::int64_t>(cache.offsets.size() - 1);
#pragma omp parallel for schedule(dynamic, 64) num_threads(threads)
        for (std::int64_t p = 0; p < pixel_count; ++p) {
            const std::size_t b = cache.begin(p), e = cache.end(p);
            if (b == e) continue;
            const double* ur = upstream_region.pixel(p);
            const double* uc = upstream_context.pixel(p);
            const double ua = opts.upstream_alpha ? opts.upstream_alpha->data[p] : 0.0;
            // behind: sum over later entries of v_i a_i prod(1 - a_j), j strictly between
            double behind = 0.0;
            for (std::size_t idx = e; idx-- > b;) {
                const Contribution& c = cache.entries[idx];
                const auto& g = field.gaussians[c.source];
                const double v = g.feat_region.dot(Eigen::Map<const VecX>(ur, k_dim)) +
                                 g.feat_context.dot(Eigen::Map<const VecX>(uc, k_dim)) + ua;
                const double gauss = g.opacity > 0.0 ? c.alpha / g.opacity : 0.0;
                d_alpha_entry[idx] = gauss * c.transmittance * (v - behind);
                behind = c.alpha * v + (1.0 - c.alpha) * behind;
            }
        }
    }

    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 16) num_threads(threads)
    for (std::int64_t i = 0; i < count; ++i) {
        VecX dr = VecX::Zero(k_dim);
        VecX dc = VecX::Zero(k_dim);
        double dop = 0.0;
        for (std::size_t s = inv.offsets[i]; s < inv.offsets[i + 1]; ++s) {
            const std::size_t e = inv.entries[s];
            const std::size_t p = inv.pixels[s];
            const double w = cache.entries[e].weight;
            dr += w * Eigen::Map<const VecX>(upstream_region.pixel(p), k_dim);
            dc += w * Eigen::Map<const VecX>(upstream_context.pixel(p), k_dim);
            if (opts.opacity) dop += d_alpha_entry[e];
        }
        grad.d_feat_region.row(i) = dr.transpose();
        grad.d_feat_context.row(i) = dc.transpose();
        grad.d_opacity[i] = dop;
    }
    return grad;
}

}  // namespace gsem
