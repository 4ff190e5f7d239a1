#include "gsem/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <tuple>

#include "gsem/error.hpp"
#include "gsem/grad.hpp"
#include "gsem/raster.hpp"

namespace gsem {

double gradient_rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

namespace {

enum class Param { feat_region, feat_context, opacity, codec_region, codec_context };

const char* param_name(Param p) {
    switch (p) {
        case Param::feat_region: return "feat_region";
        case Param::feat_context: return "feat_context";
        case Param::opacity: return "opacity";
        case Param::codec_region: return "codec_region";
        case Param::codec_context: return "codec_context";
    }
    return "?";
}

FeatureImage random_weights(int h, int w, int k, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    FeatureImage img(h, w, k);
    for (auto& v : img.data) v = u(rng);
    return img;
}

double linear_loss(const RenderOutput& r, const FeatureImage& wr, const FeatureImage& wc) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.feat_region.data.size(); ++i) s += wr.data[i] * r.feat_region.data[i];
    for (std::size_t i = 0; i < r.feat_context.data.size(); ++i) s += wc.data[i] * r.feat_context.data[i];
    return s;
}

double& codec_coord(MlpCodec& codec, std::size_t index) {
    for (auto& l : codec.layers) {
        const auto nw = static_cast<std::size_t>(l.weight.size());
        if (index < nw) return l.weight.data()[index];
        index -= nw;
        const auto nb = static_cast<std::size_t>(l.bias.size());
        if (index < nb) return l.bias.data()[index];
        index -= nb;
    }
    throw UsageError("grad_check: codec coordinate out of range");
}

double codec_grad_coord(const std::vector<DenseLayer>& g, std::size_t index) {
    for (const auto& l : g) {
        const auto nw = static_cast<std::size_t>(l.weight.size());
        if (index < nw) return l.weight.data()[index];
        index -= nw;
        const auto nb = static_cast<std::size_t>(l.bias.size());
        if (index < nb) return l.bias.data()[index];
        index -= nb;
    }
    return 0.0;
}

// Sign pattern of every hidden ReLU pre-activation over the masked pixels.
void append_relu_pattern(const RenderOutput& r, const CodecPair& codecs, const Mask& mask, std::vector<std::uint32_t>& bits) {
    const std::pair<const MlpCodec*, const FeatureImage*> branches[] = {{&codecs.region, &r.feat_region},
                                                                         {&codecs.context, &r.feat_context}};
    for (const auto& [codec_ptr, img_ptr] : branches) {
        const MlpCodec& codec = *codec_ptr;
        const FeatureImage& img = *img_ptr;
        std::vector<std::size_t> pixels;
        for (std::size_t p = 0; p < mask.size(); ++p)
            if (mask.data[p]) pixels.push_back(p);
        MatX in(img.channels, static_cast<Eigen::Index>(pixels.size()));
        for (std::size_t j = 0; j < pixels.size(); ++j)
            in.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const VecX>(img.pixel(pixels[j]), img.channels);
        CodecTape tape;
        codec_forward(codec, in, &tape);
        for (std::size_t l = 0; l + 1 < tape.pre.size(); ++l)
            for (Eigen::Index i = 0; i < tape.pre[l].size(); ++i) bits.push_back(tape.pre[l].data()[i] > 0.0);
    }
}

}  // namespace

GradCheckReport grad_check(const GaussianField& field, const Camera& cam, const GradCheckSpec& spec, double step,
                           double tolerance) {
    if (!(step > 0.0)) throw UsageError("grad_check: step must be positive");
    const bool cosine = spec.kind == CheckLoss::cosine;
    if (cosine && (spec.codecs == nullptr || spec.view == nullptr)) {
        throw UsageError("grad_check: cosine loss needs codecs and a supervision view");
    }
    const Camera& camera = cosine ? spec.view->camera : cam;
    const int k = field.feat_dim;
    std::mt19937_64 rng(spec.seed);

    FeatureImage wr = spec.weight_region, wc = spec.weight_context;
    if (!cosine) {
        if (wr.data.empty()) wr = random_weights(camera.height, camera.width, k, rng);
        if (wc.data.empty()) wc = random_weights(camera.height, camera.width, k, rng);
    }

    RenderOptions ropts;
    ropts.expected_feat_dim = k;
    // The pattern records where the loss is only piecewise smooth: how many
    // splats each pixel composites (skip and stop thresholds) and, for the
    // cosine loss, the codec ReLU signs.
    auto loss_of = [&](const GaussianField& f, const CodecPair* codecs, std::vector<std::uint32_t>& pattern) {
        const RenderOutput r = render(f, camera, ropts);
        pattern = r.per_pixel_count.data;
        if (!cosine) return linear_loss(r, wr, wc);
        append_relu_pattern(r, *codecs, spec.view->loss_mask, pattern);
        return total_semantic_loss(r, *codecs, *spec.view).loss;
    };

    FeatureGrad fg;
    std::vector<DenseLayer> g_codec_r, g_codec_c;
    if (cosine) {
        const SupervisionView* views[] = {spec.view};
        auto obj = semantic_objective(field, *spec.codecs, views, spec.include_opacity);
        fg = std::move(obj.field_grad);
        g_codec_r = std::move(obj.d_codec_region);
        g_codec_c = std::move(obj.d_codec_context);
    } else {
        RenderOptions cached = ropts;
        cached.cache = true;
        const RenderOutput r = render(field, camera, cached);
        BackwardOptions bopts;
        bopts.opacity = spec.include_opacity;
        fg = render_backward(field, r, wr, wc, bopts);
    }

    std::vector<std::pair<Param, std::size_t>> coords;
    const std::size_t nk = field.size() * static_cast<std::size_t>(k);
    for (std::size_t i = 0; i < nk; ++i) coords.emplace_back(Param::feat_region, i);
    for (std::size_t i = 0; i < nk; ++i) coords.emplace_back(Param::feat_context, i);
    if (spec.include_opacity)
        for (std::size_t i = 0; i < field.size(); ++i) coords.emplace_back(Param::opacity, i);
    if (cosine && spec.include_codecs) {
        for (std::size_t i = 0; i < spec.codecs->region.parameter_count(); ++i) coords.emplace_back(Param::codec_region, i);
        for (std::size_t i = 0; i < spec.codecs->context.parameter_count(); ++i) coords.emplace_back(Param::codec_context, i);
    }
    // Visit coordinates in a seeded order; a coordinate whose +-step straddles a
    // non-smooth point is skipped and the next one is taken.
    if (coords.size() > spec.max_coords) std::shuffle(coords.begin(), coords.end(), rng);

    GradCheckReport report;
    report.tolerance = tolerance;
    for (const auto& [param, index] : coords) {
        if (report.entries.size() >= spec.max_coords) break;
        GaussianField f = field;
        CodecPair codecs = cosine ? *spec.codecs : CodecPair{};
        double* slot = nullptr;
        double analytic = 0.0;
        const std::size_t gi = index / static_cast<std::size_t>(k);
        const int ki = static_cast<int>(index % static_cast<std::size_t>(k));
        switch (param) {
            case Param::feat_region:
                slot = &f.gaussians[gi].feat_region[ki];
                analytic = fg.d_feat_region(static_cast<Eigen::Index>(gi), ki);
                break;
            case Param::feat_context:
                slot = &f.gaussians[gi].feat_context[ki];
                analytic = fg.d_feat_context(static_cast<Eigen::Index>(gi), ki);
                break;
            case Param::opacity:
                slot = &f.gaussians[index].opacity;
                analytic = fg.d_opacity[static_cast<Eigen::Index>(index)];
                break;
            case Param::codec_region:
                slot = &codec_coord(codecs.region, index);
                analytic = codec_grad_coord(g_codec_r, index);
                break;
            case Param::codec_context:
                slot = &codec_coord(codecs.context, index);
                analytic = codec_grad_coord(g_codec_c, index);
                break;
        }
        const double x0 = *slot;
        std::vector<std::uint32_t> pattern_p, pattern_m;
        *slot = x0 + step;
        const double lp = loss_of(f, &codecs, pattern_p);
        *slot = x0 - step;
        const double lm = loss_of(f, &codecs, pattern_m);
        if (pattern_p != pattern_m) {
            ++report.nonsmooth_skipped;
            continue;
        }
        const double numeric = (lp - lm) / (2.0 * step);
        report.entries.push_back({param_name(param), index, analytic, numeric, gradient_rel_error(analytic, numeric)});
    }
    std::sort(report.entries.begin(), report.entries.end(), [](const GradCheckEntry& a, const GradCheckEntry& b) {
        return std::tie(a.param, a.index) < std::tie(b.param, b.index);
    });
    for (std::size_t i = 0; i < report.entries.size(); ++i) {
        const GradCheckEntry& e = report.entries[i];
        report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
        if (!(e.rel_error <= tolerance)) report.failures.push_back(i);
    }
    return report;
}

}  // namespace gsem
