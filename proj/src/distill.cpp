#include "gsem/distill.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gsem/error.hpp"

namespace gsem {

void SupervisionView::validate() const {
    camera.validate();
    const int h = camera.height, w = camera.width;
    if (target_region.height != h || target_region.width != w || target_context.height != h ||
        target_context.width != w) {
        throw ShapeError("supervision view: target size differs from camera");
    }
    if (target_region.channels != target_context.channels) {
        throw ShapeError("supervision view: region and context targets differ in dimension");
    }
    if (!loss_mask.same_shape(h, w)) throw ShapeError("supervision view: loss mask size differs from camera");
}

CosineLoss cosine_loss(const Eigen::Ref<const VecX>& pred, const Eigen::Ref<const VecX>& target) {
    if (pred.size() != target.size()) throw ShapeError("cosine_loss: dimension mismatch");
    CosineLoss out;
    out.d_pred = VecX::Zero(pred.size());
    const double tn = target.norm();
    if (tn == 0.0) {
        out.excluded = true;
        return out;
    }
    const double raw_pn = pred.norm();
    const bool floored = raw_pn < kCosineNormFloor;
    const double pn = floored ? kCosineNormFloor : raw_pn;
    const double dot = pred.dot(target);
    const double cos = dot / (pn * tn);
    out.loss = 1.0 - cos;
    // d cos / d pred = t / (|p||t|) - (p.t) p / (|p|^3 |t|); the floor makes |p| a constant
    out.d_pred = -target / (pn * tn);
    if (!floored) out.d_pred += (dot / (pn * pn * pn * tn)) * pred;
    return out;
}

namespace {

std::vector<DenseLayer> zeros_like(const MlpCodec& codec) {
    std::vector<DenseLayer> g;
    for (const auto& l : codec.layers) g.push_back({MatX::Zero(l.weight.rows(), l.weight.cols()), VecX::Zero(l.bias.size())});
    return g;
}

void add_into(std::vector<DenseLayer>& acc, const std::vector<DenseLayer>& g) {
    for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i].weight += g[i].weight;
        acc[i].bias += g[i].bias;
    }
}

std::vector<std::size_t> masked_pixels(const Mask& mask) {
    std::vector<std::size_t> idx;
    for (std::size_t p = 0; p < mask.size(); ++p)
        if (mask.data[p]) idx.push_back(p);
    return idx;
}

struct BranchTerms {
    double sum = 0.0;
    std::size_t excluded = 0;
    std::vector<DenseLayer> d_codec;
};

// One branch of one view: decode masked pixels, cosine against targets,
// backprop with every per-pixel gradient multiplied by `scale`.
BranchTerms branch_terms(const FeatureImage& rendered, const MlpCodec& codec, const FeatureImage& target,
                         const std::vector<std::size_t>& pixels, double scale, FeatureImage& d_render) {
    BranchTerms out;
    if (pixels.empty()) {
        out.d_codec = zeros_like(codec);
        return out;
    }
    const auto m = static_cast<Eigen::Index>(pixels.size());
    MatX x(rendered.channels, m);
    for (Eigen::Index j = 0; j < m; ++j) x.col(j) = Eigen::Map<const VecX>(rendered.pixel(pixels[j]), rendered.channels);
    CodecTape tape;
    const MatX y = codec_forward(codec, x, &tape);
    MatX up(y.rows(), m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto cl = cosine_loss(y.col(j), Eigen::Map<const VecX>(target.pixel(pixels[j]), target.channels));
        if (cl.excluded) ++out.excluded;
        out.sum += cl.loss;
        up.col(j) = scale * cl.d_pred;
    }
    auto back = codec_backward(codec, tape, up);
    out.d_codec = std::move(back.grad);
    for (Eigen::Index j = 0; j < m; ++j) {
        Eigen::Map<VecX>(d_render.pixel(pixels[j]), d_render.channels) = back.d_input.col(j);
    }
    return out;
}

void check_dims(const RenderOutput& rendered, const CodecPair& codecs, const SupervisionView& view) {
    const int k = rendered.feat_region.channels;
    if (codecs.region.in_dim() != k || codecs.context.in_dim() != k) {
        throw ShapeError("semantic loss: codec input dimension differs from rendered feature dimension");
    }
    if (codecs.region.out_dim() != view.target_region.channels ||
        codecs.context.out_dim() != view.target_context.channels) {
        throw ShapeError("semantic loss: codec output dimension differs from supervision dimension");
    }
    if (view.target_region.height != rendered.feat_region.height || view.target_region.width != rendered.feat_region.width ||
        !view.loss_mask.same_shape(rendered.feat_region.height, rendered.feat_region.width)) {
        throw ShapeError("semantic loss: supervision size differs from rendered size");
    }
}

struct ViewTerms {
    double sum = 0.0;
    std::size_t excluded = 0;
    std::vector<DenseLayer> d_region, d_context;
    FeatureImage d_render_region, d_render_context;
};

ViewTerms view_terms(const RenderOutput& rendered, const CodecPair& codecs, const SupervisionView& view,
                     const std::vector<std::size_t>& pixels, double scale) {
    check_dims(rendered, codecs, view);
    const int h = rendered.feat_region.height, w = rendered.feat_region.width, k = rendered.feat_region.channels;
    ViewTerms t;
    t.d_render_region = FeatureImage(h, w, k);
    t.d_render_context = FeatureImage(h, w, k);
    auto r = branch_terms(rendered.feat_region, codecs.region, view.target_region, pixels, scale, t.d_render_region);
    auto c = branch_terms(rendered.feat_context, codecs.context, view.target_context, pixels, scale,
                          t.d_render_context);
    t.sum = r.sum + c.sum;
    t.excluded = r.excluded + c.excluded;
    t.d_region = std::move(r.d_codec);
    t.d_context = std::move(c.d_codec);
    return t;
}

}  // namespace

SemanticLoss total_semantic_loss(const RenderOutput& rendered, const CodecPair& codecs, const SupervisionView& view) {
    const auto pixels = masked_pixels(view.loss_mask);
    const double scale = pixels.empty() ? 0.0 : 1.0 / static_cast<double>(pixels.size());
    auto t = view_terms(rendered, codecs, view, pixels, scale);
    SemanticLoss out;
    out.masked_pixels = pixels.size();
    out.empty_mask = pixels.empty();
    out.loss = t.sum * scale;
    out.excluded_targets = t.excluded;
    out.d_codec_region = std::move(t.d_region);
    out.d_codec_context = std::move(t.d_context);
    out.d_render_region = std::move(t.d_render_region);
    out.d_render_context = std::move(t.d_render_context);
    return out;
}

SemanticObjective semantic_objective(const GaussianField& field, const CodecPair& codecs,
                                     std::span<const SupervisionView* const> views, bool opacity_grad, int threads) {
    SemanticObjective obj;
    obj.field_grad = FeatureGrad::zeros(field.size(), field.feat_dim);
    obj.d_codec_region = zeros_like(codecs.region);
    obj.d_codec_context = zeros_like(codecs.context);

    std::vector<std::vector<std::size_t>> pixels;
    std::size_t total = 0;
    for (const auto* v : views) {
        pixels.push_back(masked_pixels(v->loss_mask));
        total += pixels.back().size();
    }
    obj.masked_pixels = total;
    if (total == 0) return obj;
    const double scale = 1.0 / static_cast<double>(total);

    RenderOptions ropts;
    ropts.cache = true;
    ropts.threads = threads;
    ropts.expected_feat_dim = codecs.region.in_dim();
    BackwardOptions bopts;
    bopts.opacity = opacity_grad;
    bopts.threads = threads;

    double sum = 0.0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const RenderOutput rendered = render(field, views[i]->camera, ropts);
        auto t = view_terms(rendered, codecs, *views[i], pixels[i], scale);
        sum += t.sum;
        obj.excluded_targets += t.excluded;
        add_into(obj.d_codec_region, t.d_region);
        add_into(obj.d_codec_context, t.d_context);
        const FeatureGrad g = render_backward(field, rendered, t.d_render_region, t.d_render_context, bopts);
        obj.field_grad.d_feat_region += g.d_feat_region;
        obj.field_grad.d_feat_context += g.d_feat_context;
        obj.field_grad.d_opacity += g.d_opacity;
    }
    obj.loss = sum * scale;
    return obj;
}

void FitConfig::validate() const {
    if (iterations < 0) throw UsageError("fit: iterations must be >= 0");
    if (!(feature_lr > 0.0) || !(codec_lr > 0.0)) throw UsageError("fit: learning rates must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw UsageError("fit: betas must lie in (0, 1)");
    if (!(eps > 0.0)) throw UsageError("fit: eps must be positive");
    if (views_per_step <= 0) throw UsageError("fit: views_per_step must be positive");
    if (init_sigma < 0.0) throw UsageError("fit: init_sigma must be >= 0");
}

CodecPair init_codecs(int feat_dim, int embed_dim, const FitConfig& cfg) {
    return {MlpCodec::init(feat_dim, cfg.codec_hidden, embed_dim, cfg.seed * 2 + 1),
            MlpCodec::init(feat_dim, cfg.codec_hidden, embed_dim, cfg.seed * 2 + 2)};
}

namespace {

// Adam moments for one parameter block, updated in place.
struct AdamSlot {
    Eigen::ArrayXd m, v;

    template <typename Param, typename Grad>
    void step(Param& param, const Grad& grad, double lr, const FitConfig& cfg, int t) {
        auto p = param.reshaped();
        const auto g = grad.reshaped().array();
        if (m.size() == 0) {
            m = Eigen::ArrayXd::Zero(p.size());
            v = Eigen::ArrayXd::Zero(p.size());
        }
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
        const double c1 = 1.0 - std::pow(cfg.beta1, t);
        const double c2 = 1.0 - std::pow(cfg.beta2, t);
        p.array() -= lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
    }
};

}  // namespace

FitResult fit_semantics(const GaussianField& field, std::span<const SupervisionView> views, const FitConfig& cfg) {
    if (views.empty()) throw UsageError("fit: at least one supervision view is required");
    return fit_semantics(field, views, cfg, init_codecs(field.feat_dim, views.front().target_region.channels, cfg));
}

FitResult fit_semantics(const GaussianField& field, std::span<const SupervisionView> views, const FitConfig& cfg,
                        CodecPair initial) {
    cfg.validate();
    if (views.empty()) throw UsageError("fit: at least one supervision view is required");
    for (const auto& v : views) v.validate();
    initial.region.validate();
    initial.context.validate();

    FitResult res{field, std::move(initial), {}};
    if (cfg.iterations == 0) return res;

    const auto n = static_cast<Eigen::Index>(field.size());
    const int k = field.feat_dim;
    MatX feat_r(n, k), feat_c(n, k);
    VecX opacity(n);
    if (cfg.reinit_features) {
        std::mt19937_64 rng(cfg.seed);
        std::normal_distribution<double> noise(0.0, cfg.init_sigma);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) feat_r(i, j) = noise(rng);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) feat_c(i, j) = noise(rng);
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            feat_r.row(i) = field.gaussians[i].feat_region.transpose();
            feat_c.row(i) = field.gaussians[i].feat_context.transpose();
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) opacity[i] = field.gaussians[i].opacity;

    auto write_back = [&] {
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& g = res.field.gaussians[i];
            g.feat_region = feat_r.row(i).transpose();
            g.feat_context = feat_c.row(i).transpose();
            if (cfg.train_opacity) g.opacity = opacity[i];
        }
    };
    write_back();

    AdamSlot slot_r, slot_c, slot_op;
    std::vector<AdamSlot> slots_codec_r(2 * res.codecs.region.layers.size());
    std::vector<AdamSlot> slots_codec_c(2 * res.codecs.context.layers.size());

    const std::size_t per_step = std::min<std::size_t>(cfg.views_per_step, views.size());
    std::vector<const SupervisionView*> batch(per_step);
    res.loss_history.reserve(cfg.iterations);

    for (int it = 0; it < cfg.iterations; ++it) {
        for (std::size_t j = 0; j < per_step; ++j) batch[j] = &views[(it * per_step + j) % views.size()];
        const SemanticObjective obj = semantic_objective(res.field, res.codecs, batch, cfg.train_opacity, cfg.threads);
        if (!std::isfinite(obj.loss)) {
            throw NumericError("fit: loss became non-finite at iteration " + std::to_string(it));
        }
        res.loss_history.push_back(obj.loss);
        if (cfg.progress && cfg.log_every > 0 && it % cfg.log_every == 0) cfg.progress(it, obj.loss);

        const int t = it + 1;
        slot_r.step(feat_r, obj.field_grad.d_feat_region, cfg.feature_lr, cfg, t);
        slot_c.step(feat_c, obj.field_grad.d_feat_context, cfg.feature_lr, cfg, t);
        if (cfg.train_opacity) {
            slot_op.step(opacity, obj.field_grad.d_opacity, cfg.feature_lr, cfg, t);
            opacity = opacity.cwiseMax(0.0).cwiseMin(1.0);
        }
        for (std::size_t l = 0; l < res.codecs.region.layers.size(); ++l) {
            slots_codec_r[2 * l].step(res.codecs.region.layers[l].weight, obj.d_codec_region[l].weight, cfg.codec_lr, cfg, t);
            slots_codec_r[2 * l + 1].step(res.codecs.region.layers[l].bias, obj.d_codec_region[l].bias, cfg.codec_lr, cfg, t);
        }
        for (std::size_t l = 0; l < res.codecs.context.layers.size(); ++l) {
            slots_codec_c[2 * l].step(res.codecs.context.layers[l].weight, obj.d_codec_context[l].weight, cfg.codec_lr, cfg, t);
            slots_codec_c[2 * l + 1].step(res.codecs.context.layers[l].bias, obj.d_codec_context[l].bias, cfg.codec_lr, cfg, t);
        }
        write_back();
    }
    return res;
}

}  // namespace gsem
