#pragma once

#include <vector>

#include "gsem/error.hpp"
#include "gsem/raster.hpp"

namespace gsem::detail {

inline void check_render_inputs(const GaussianField& field, const Camera& cam, const RenderOptions& opts) {
    if (opts.expected_feat_dim > 0 && opts.expected_feat_dim != field.feat_dim) {
        throw ShapeError("render: field has " + std::to_string(field.feat_dim) + " feature channels, options expect " +
                         std::to_string(opts.expected_feat_dim));
    }
    cam.validate();
}

inline RenderOutput allocate_output(const Camera& cam, int feat_dim) {
    RenderOutput out;
    out.rgb = FeatureImage(cam.height, cam.width, 3);
    out.feat_region = FeatureImage(cam.height, cam.width, feat_dim);
    out.feat_context = FeatureImage(cam.height, cam.width, feat_dim);
    out.alpha = ScalarMap(cam.height, cam.width, 0.0);
    out.transmittance = ScalarMap(cam.height, cam.width, 1.0);
    out.per_pixel_count = CountMap(cam.height, cam.width, 0);
    return out;
}

// Channel layout of one composited record: rgb(3), region(K), context(K).
inline int channel_count(int feat_dim) { return 3 + 2 * feat_dim; }

inline void pack_channels(const Splat2D& s, const SemanticGaussian& g, int feat_dim, double* dst) {
    dst[0] = s.color[0];
    dst[1] = s.color[1];
    dst[2] = s.color[2];
    for (int k = 0; k < feat_dim; ++k) dst[3 + k] = g.feat_region[k];
    for (int k = 0; k < feat_dim; ++k) dst[3 + feat_dim + k] = g.feat_context[k];
}

// Writes the accumulated channels of pixel p into the output images.
inline void store_pixel(RenderOutput& out, std::size_t p, const double* acc, int feat_dim, double weight_sum,
                        double transmittance, std::uint32_t n, const Vec3& background) {
    double* rgb = out.rgb.pixel(p);
    for (int c = 0; c < 3; ++c) rgb[c] = acc[c] + transmittance * background[c];
    double* fr = out.feat_region.pixel(p);
    double* fc = out.feat_context.pixel(p);
    for (int k = 0; k < feat_dim; ++k) {
        fr[k] = acc[3 + k];
        fc[k] = acc[3 + feat_dim + k];
    }
    out.alpha.data[p] = weight_sum;
    out.transmittance.data[p] = transmittance;
    out.per_pixel_count.data[p] = n;
}

inline ForwardCache flatten_cache(int height, int width, std::size_t gaussians,
                                  std::vector<std::vector<Contribution>>& per_pixel) {
    ForwardCache cache;
    cache.height = height;
    cache.width = width;
    cache.gaussian_count = gaussians;
    cache.offsets.resize(per_pixel.size() + 1, 0);
    for (std::size_t p = 0; p < per_pixel.size(); ++p) cache.offsets[p + 1] = cache.offsets[p] + per_pixel[p].size();
    cache.entries.reserve(cache.offsets.back());
    for (auto& v : per_pixel) {
        cache.entries.insert(cache.entries.end(), v.begin(), v.end());
        std::vector<Contribution>().swap(v);
    }
    return cache;
}

}  // namespace gsem::detail
