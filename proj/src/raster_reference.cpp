#include <algorithm>
#include <cmath>

#include "gsem/raster.hpp"
#include "raster_internal.hpp"

namespace gsem {

RenderOutput render_reference(const GaussianField& field, const Camera& cam, const RenderOptions& opts) {
    detail::check_render_inputs(field, cam, opts);
    const int feat_dim = field.feat_dim;
    const int nch = detail::channel_count(feat_dim);
    RenderOutput out = detail::allocate_output(cam, feat_dim);

    std::vector<Splat2D> splats;
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (auto s = project_gaussian(field.gaussians[i], cam, field.sh_degree, &out.stats)) {
            s->source_index = static_cast<std::uint32_t>(i);
            splats.push_back(*s);
        }
    }

    std::vector<std::vector<Contribution>> per_pixel;
    if (opts.cache) per_pixel.resize(out.alpha.size());

    std::vector<std::size_t> hits;
    std::vector<double> acc(nch), ch(nch);
    for (int row = 0; row < cam.height; ++row) {
        for (int col = 0; col < cam.width; ++col) {
            const double x = col, y = row;
            hits.clear();
            for (std::size_t i = 0; i < splats.size(); ++i) {
                if (splats[i].covers(x, y)) hits.push_back(i);
            }
            std::sort(hits.begin(), hits.end(), [&](std::size_t a, std::size_t b) {
                if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
                return splats[a].source_index < splats[b].source_index;
            });

            std::fill(acc.begin(), acc.end(), 0.0);
            double trans = 1.0, wsum = 0.0;
            std::uint32_t used = 0;
            for (const auto i : hits) {
                const Splat2D& s = splats[i];
                const double dx = x - s.mean2d.x();
                const double dy = y - s.mean2d.y();
                const double power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
                const double a = s.opacity * std::exp(std::min(power, 0.0));
                if (a < kAlphaSkip) continue;
                const double w = a * trans;
                detail::pack_channels(s, field.gaussians[s.source_index], feat_dim, ch.data());
                for (int c = 0; c < nch; ++c) acc[c] += w * ch[c];
                if (opts.cache) per_pixel[out.alpha.index(row, col)].push_back({s.source_index, w, a, trans});
                wsum += w;
                trans *= 1.0 - a;
                ++used;
                if (trans < kTransmittanceStop) break;
            }
            detail::store_pixel(out, out.alpha.index(row, col), acc.data(), feat_dim, wsum, trans, used,
                                opts.background);
        }
    }

    if (opts.cache) out.cache = detail::flatten_cache(cam.height, cam.width, field.size(), per_pixel);
    return out;
}

}  // namespace gsem
