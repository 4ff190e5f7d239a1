#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gsem/distill.hpp"
#include "gsem/error.hpp"
#include "gsem/gradcheck.hpp"
#include "gsem/synthlab.hpp"
#include "helpers.hpp"

using namespace gsem;
using gsem::testing::axis_camera;
using gsem::testing::random_field;
using gsem::testing::random_image;

namespace {

MlpCodec identity_codec(int n) {
    MlpCodec c;
    c.layers.push_back({MatX::Identity(n, n), VecX::Zero(n)});
    return c;
}

RenderOutput features_only(const FeatureImage& region, const FeatureImage& context) {
    RenderOutput r;
    r.feat_region = region;
    r.feat_context = context;
    r.alpha = ScalarMap(region.height, region.width, 1.0);
    return r;
}

SupervisionView view_of(const FeatureImage& tr, const FeatureImage& tc, const Mask& mask) {
    SupervisionView v;
    v.camera = axis_camera(tr.width);
    v.camera.height = tr.height;
    v.target_region = tr;
    v.target_context = tc;
    v.loss_mask = mask;
    return v;
}

bool same_geometry(const GaussianField& a, const GaussianField& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.gaussians[i];
        const auto& y = b.gaussians[i];
        if (x.point != y.point || x.offset != y.offset || x.rotation != y.rotation || x.scale != y.scale ||
            x.sh != y.sh || x.opacity != y.opacity)
            return false;
    }
    return true;
}

}  // namespace

TEST(CosineLoss, IdenticalOrthogonalAntipodal) {
    VecX t(3);
    t << 1.0, 2.0, -0.5;
    EXPECT_NEAR(cosine_loss(t, t).loss, 0.0, 1e-15);
    VecX o(3);
    o << 2.0, -1.0, 0.0;
    EXPECT_NEAR(cosine_loss(o, t).loss, 1.0, 1e-15);
    EXPECT_NEAR(cosine_loss(-t, t).loss, 2.0, 1e-15);
}

TEST(CosineLoss, ZeroTargetExcluded) {
    const CosineLoss c = cosine_loss(VecX::Ones(3), VecX::Zero(3));
    EXPECT_TRUE(c.excluded);
    EXPECT_EQ(c.loss, 0.0);
    EXPECT_EQ(c.d_pred.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CosineLoss, ZeroPredictionUsesNormFloor) {
    const CosineLoss c = cosine_loss(VecX::Zero(3), VecX::Ones(3));
    EXPECT_FALSE(c.excluded);
    EXPECT_NEAR(c.loss, 1.0, 1e-15);
    EXPECT_TRUE(c.d_pred.allFinite());
}

TEST(CosineLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        VecX p(5), q(5);
        for (int i = 0; i < 5; ++i) {
            p[i] = n(rng);
            q[i] = n(rng);
        }
        const CosineLoss c = cosine_loss(p, q);
        for (int i = 0; i < 5; ++i) {
            VecX a = p, b = p;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            const double numeric = (cosine_loss(a, q).loss - cosine_loss(b, q).loss) / 2e-6;
            EXPECT_LE(gradient_rel_error(c.d_pred[i], numeric), 1e-6);
        }
    }
}

TEST(SemanticLoss, ExactTargetsGiveZero) {
    const FeatureImage r = random_image(3, 4, 5, 1), c = random_image(3, 4, 5, 2);
    const CodecPair codecs{identity_codec(5), identity_codec(5)};
    const SemanticLoss l = total_semantic_loss(features_only(r, c), codecs, view_of(r, c, Mask(3, 4, 1)));
    EXPECT_NEAR(l.loss, 0.0, 1e-14);
    EXPECT_EQ(l.masked_pixels, 12u);
}

TEST(SemanticLoss, EmptyMaskGivesZero) {
    const FeatureImage r = random_image(3, 4, 5, 1), c = random_image(3, 4, 5, 2);
    const CodecPair codecs{identity_codec(5), identity_codec(5)};
    const SemanticLoss l =
        total_semantic_loss(features_only(r, c), codecs, view_of(random_image(3, 4, 5, 3), c, Mask(3, 4, 0)));
    EXPECT_EQ(l.loss, 0.0);
    EXPECT_TRUE(l.empty_mask);
    for (double v : l.d_render_region.data) EXPECT_EQ(v, 0.0);
}

TEST(SemanticLoss, SinglePixelHalfCosineOnBothBranches) {
    FeatureImage pred(1, 1, 2), target(1, 1, 2);
    pred.data = {1.0, 0.0};
    target.data = {0.5, std::sqrt(3.0) / 2.0};
    const CodecPair codecs{identity_codec(2), identity_codec(2)};
    const SemanticLoss l = total_semantic_loss(features_only(pred, pred), codecs, view_of(target, target, Mask(1, 1, 1)));
    EXPECT_NEAR(l.loss, 1.0, 1e-15);
}

TEST(SemanticLoss, MaskedPixelMean) {
    // two masked pixels with losses (0+0) and (1+1): mean is 1
    FeatureImage pred(1, 3, 2), target(1, 3, 2);
    pred.data = {1, 0, 1, 0, 5, 5};
    target.data = {1, 0, 0, 1, -7, 3};
    Mask m(1, 3, 1);
    m.data[2] = 0;
    const CodecPair codecs{identity_codec(2), identity_codec(2)};
    const SemanticLoss l = total_semantic_loss(features_only(pred, pred), codecs, view_of(target, target, m));
    EXPECT_NEAR(l.loss, 1.0, 1e-15);
    EXPECT_EQ(l.masked_pixels, 2u);
}

TEST(SemanticLoss, ZeroTargetsCounted) {
    FeatureImage pred(1, 2, 2, 1.0), target(1, 2, 2, 0.0);
    target.data = {1, 1, 0, 0};
    const CodecPair codecs{identity_codec(2), identity_codec(2)};
    const SemanticLoss l = total_semantic_loss(features_only(pred, pred), codecs, view_of(target, target, Mask(1, 2, 1)));
    EXPECT_EQ(l.excluded_targets, 2u);  // one per branch
    EXPECT_NEAR(l.loss, 0.0, 1e-14);
}

TEST(SemanticLoss, SwappingBranchesLeavesLossUnchanged) {
    const FeatureImage fr = random_image(4, 4, 3, 1), fc = random_image(4, 4, 3, 2);
    const FeatureImage tr = random_image(4, 4, 6, 3), tc = random_image(4, 4, 6, 4);
    const CodecPair codecs{MlpCodec::init(3, {8}, 6, 1), MlpCodec::init(3, {8}, 6, 2)};
    const CodecPair swapped{codecs.context, codecs.region};
    const double a = total_semantic_loss(features_only(fr, fc), codecs, view_of(tr, tc, Mask(4, 4, 1))).loss;
    const double b = total_semantic_loss(features_only(fc, fr), swapped, view_of(tc, tr, Mask(4, 4, 1))).loss;
    EXPECT_NEAR(a, b, 1e-14);
}

TEST(SemanticLoss, ShapeMismatchIsShapeError) {
    const FeatureImage r = random_image(3, 4, 5, 1);
    const CodecPair codecs{identity_codec(4), identity_codec(4)};
    EXPECT_THROW(total_semantic_loss(features_only(r, r), codecs, view_of(r, r, Mask(3, 4, 1))), ShapeError);
}

TEST(Fit, SingleGaussianConvergesToClassEmbedding) {
    GaussianField f;
    f.feat_dim = 4;
    SemanticGaussian g = make_gaussian(4, 0);
    g.point = Vec3(0, 0, 3);
    g.scale = Vec3(0.3, 0.3, 0.3);
    g.opacity = 0.9;
    f.gaussians.push_back(g);
    const Camera cam = axis_camera(16);
    const std::vector<std::string> names{"chair"};
    const EmbeddingDictionary dict = make_embeddings(names, 8, 3);
    FeatureImage target(16, 16, 8);
    for (std::size_t p = 0; p < target.pixel_count(); ++p)
        Eigen::Map<VecX>(target.pixel(p), 8) = dict.vectors[0];
    SupervisionView v;
    v.camera = cam;
    v.target_region = target;
    v.target_context = target;
    v.loss_mask = loss_mask_from_alpha(render(f, cam).alpha, 0.5);
    ASSERT_GT(count(v.loss_mask), 0u);
    FitConfig cfg;
    cfg.iterations = 500;
    cfg.threads = 1;
    const std::vector<SupervisionView> views{v};
    const FitResult r = fit_semantics(f, views, cfg);
    ASSERT_EQ(r.loss_history.size(), 500u);
    EXPECT_LT(r.loss_history.back(), 1e-3);
}

TEST(Fit, ZeroIterationsReturnsFieldUnchanged) {
    const GaussianField f = random_field(10, 3, 4);
    SupervisionView v;
    v.camera = axis_camera(8);
    v.target_region = random_image(8, 8, 5, 1);
    v.target_context = random_image(8, 8, 5, 2);
    v.loss_mask = Mask(8, 8, 1);
    FitConfig cfg;
    cfg.iterations = 0;
    const std::vector<SupervisionView> views{v};
    const FitResult r = fit_semantics(f, views, cfg);
    EXPECT_TRUE(r.loss_history.empty());
    ASSERT_EQ(r.field.size(), f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        EXPECT_EQ(r.field.gaussians[i].feat_region, f.gaussians[i].feat_region);
        EXPECT_EQ(r.field.gaussians[i].feat_context, f.gaussians[i].feat_context);
    }
    EXPECT_TRUE(same_geometry(r.field, f));
}

TEST(Fit, ConfigValidation) {
    FitConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.feature_lr = 0.0;
    EXPECT_THROW(cfg.validate(), UsageError);
    cfg = FitConfig{};
    cfg.beta1 = 1.0;
    EXPECT_THROW(cfg.validate(), UsageError);
    cfg = FitConfig{};
    cfg.iterations = -1;
    EXPECT_THROW(cfg.validate(), UsageError);
    const std::vector<SupervisionView> none;
    EXPECT_THROW(fit_semantics(random_field(2, 2, 1), none, FitConfig{}), UsageError);
}

TEST(Fit, DivergenceIsNumericError) {
    const GaussianField f = random_field(10, 3, 4);
    SupervisionView v;
    v.camera = axis_camera(8);
    v.target_region = random_image(8, 8, 5, 1);
    v.target_context = random_image(8, 8, 5, 2);
    v.target_region.data[0] = NAN;
    v.loss_mask = Mask(8, 8, 1);
    FitConfig cfg;
    cfg.iterations = 3;
    const std::vector<SupervisionView> views{v};
    try {
        fit_semantics(f, views, cfg);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
    }
}

class SceneFit : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        SceneSpec spec;
        spec.seed = 7;
        scene_ = new SyntheticScene(make_scene(spec));
        dict_ = new EmbeddingDictionary(make_embeddings(scene_->classes, spec.embed_dim, spec.seed));
        views_ = new std::vector<SupervisionView>;
        for (int v = 0; v < 4; ++v)
            views_->push_back(make_supervision_view(scene_->cameras[v], scene_->labels[v], *dict_, scene_->classes, 2));
        FitConfig cfg;
        cfg.iterations = 2000;
        cfg.seed = 7;
        cfg.threads = 1;
        fit_ = new FitResult(fit_semantics(scene_->field, *views_, cfg));
    }
    static void TearDownTestSuite() {
        delete scene_;
        delete dict_;
        delete views_;
        delete fit_;
    }
    static SyntheticScene* scene_;
    static EmbeddingDictionary* dict_;
    static std::vector<SupervisionView>* views_;
    static FitResult* fit_;
};

SyntheticScene* SceneFit::scene_ = nullptr;
EmbeddingDictionary* SceneFit::dict_ = nullptr;
std::vector<SupervisionView>* SceneFit::views_ = nullptr;
FitResult* SceneFit::fit_ = nullptr;

TEST_F(SceneFit, GeometryUntouched) { EXPECT_TRUE(same_geometry(fit_->field, scene_->field)); }

TEST_F(SceneFit, LossDecreasesOnAverage) {
    const auto& h = fit_->loss_history;
    const std::size_t q = h.size() / 4;
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
        first += h[i];
        last += h[h.size() - q + i];
    }
    EXPECT_LT(last, first);
}

TEST_F(SceneFit, HeldOutDecodedFeaturesMatchClassEmbeddings) {
    // masked pixels pooled over both held-out views, per branch
    for (int branch = 0; branch < 2; ++branch) {
        const MlpCodec& codec = branch ? fit_->codecs.context : fit_->codecs.region;
        std::size_t masked = 0, good = 0;
        for (int v = 4; v < 6; ++v) {
            RenderOptions o;
            o.threads = 1;
            const RenderOutput r = render(fit_->field, scene_->cameras[v], o);
            const LabelMap& gt = scene_->labels[v];
            const FeatureImage dec = decode(codec, branch ? r.feat_context : r.feat_region, true);
            for (std::size_t p = 0; p < gt.size(); ++p) {
                if (gt.data[p] == 0) continue;
                ++masked;
                const VecX& e = dict_->vectors[gt.data[p] - 1];
                if (Eigen::Map<const VecX>(dec.pixel(p), dec.channels).dot(e) >= 0.95) ++good;
            }
        }
        ASSERT_GT(masked, 0u);
        EXPECT_GE(static_cast<double>(good), 0.9 * masked) << "branch " << branch;
    }
}

TEST(Fit, FirstLossIsDeterministic) {
    SceneSpec spec;
    spec.seed = 3;
    spec.gaussians_per_cluster = 8;
    const SyntheticScene s = make_scene(spec);
    const EmbeddingDictionary d = make_embeddings(s.classes, spec.embed_dim, 3);
    std::vector<SupervisionView> views;
    for (int v = 0; v < 2; ++v) views.push_back(make_supervision_view(s.cameras[v], s.labels[v], d, s.classes, 1));
    FitConfig cfg;
    cfg.iterations = 5;
    cfg.seed = 11;
    const FitResult a = fit_semantics(s.field, views, cfg);
    const FitResult b = fit_semantics(s.field, views, cfg);
    EXPECT_EQ(a.loss_history, b.loss_history);
    cfg.threads = 1;
    const FitResult c = fit_semantics(s.field, views, cfg);
    EXPECT_EQ(a.loss_history, c.loss_history);
}

TEST(Fit, CosineObjectivePassesGradCheck) {
    SceneSpec spec;
    spec.seed = 5;
    spec.gaussians_per_cluster = 6;
    spec.image_size = 16;
    spec.embed_dim = 8;
    spec.feat_dim = 4;
    const SyntheticScene s = make_scene(spec);
    const EmbeddingDictionary d = make_embeddings(s.classes, spec.embed_dim, 5);
    const SupervisionView view = make_supervision_view(s.cameras[0], s.labels[0], d, s.classes, 1);
    GaussianField f = s.field;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 0.5);
    for (auto& g : f.gaussians)
        for (int k = 0; k < 4; ++k) {
            g.feat_region[k] = n(rng);
            g.feat_context[k] = n(rng);
        }
    FitConfig cfg;
    const CodecPair codecs = init_codecs(4, 8, cfg);
    GradCheckSpec gs;
    gs.kind = CheckLoss::cosine;
    gs.codecs = &codecs;
    gs.view = &view;
    const GradCheckReport r = grad_check(f, view.camera, gs, 1e-4, 1e-4);
    EXPECT_TRUE(r.passed()) << r.max_rel_error;
}
