#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gsem/error.hpp"
#include "gsem/raster.hpp"
#include "helpers.hpp"

using namespace gsem;
using gsem::testing::axis_camera;
using gsem::testing::max_abs_diff;
using gsem::testing::random_field;

namespace {

SemanticGaussian splat_on_axis(double z, double opacity, const VecX& feat, double scale = 0.05) {
    SemanticGaussian g = make_gaussian(static_cast<int>(feat.size()), 0);
    g.point = Vec3(0, 0, z);
    g.scale = Vec3(scale, scale, scale);
    g.opacity = opacity;
    g.feat_region = feat;
    g.feat_context = -feat;
    return g;
}

RenderOptions threads(int n) {
    RenderOptions o;
    o.threads = n;
    return o;
}

}  // namespace

TEST(Projection, IsotropicOnAxisCovariance) {
    const double f = 100.0, s = 0.2, z = 4.0;
    Camera cam = axis_camera(256, f);
    cam.cx = cam.cy = 128.0;
    SemanticGaussian g = make_gaussian(1, 0);
    g.point = Vec3(0, 0, z);
    g.scale = Vec3(s, s, s);
    const auto sp = project_gaussian(g, cam, 0);
    ASSERT_TRUE(sp);
    const double var = std::pow(f * s / z, 2);
    // conic is the inverse of the dilated covariance diag(var + 0.3)
    EXPECT_NEAR(sp->conic[0], 1.0 / (var + kConicDilation), 1e-12);
    EXPECT_NEAR(sp->conic[1], 0.0, 1e-15);
    EXPECT_NEAR(sp->conic[2], 1.0 / (var + kConicDilation), 1e-12);
    EXPECT_NEAR(sp->radius, 3.0 * std::sqrt(var + kConicDilation), 1e-12);
    EXPECT_EQ(sp->mean2d, Vec2(128.0, 128.0));
    EXPECT_EQ(sp->depth, z);
}

TEST(Projection, NearFarAndOffscreenCulls) {
    const Camera cam = axis_camera(32);
    ProjectionStats st;
    SemanticGaussian g = make_gaussian(1, 0);
    g.point = Vec3(0, 0, cam.near);
    EXPECT_FALSE(project_gaussian(g, cam, 0, &st));
    EXPECT_EQ(st.culled_near, 1u);
    g.point = Vec3(0, 0, -1);
    EXPECT_FALSE(project_gaussian(g, cam, 0, &st));
    EXPECT_EQ(st.culled_near, 2u);
    g.point = Vec3(0, 0, cam.far + 1);
    EXPECT_FALSE(project_gaussian(g, cam, 0, &st));
    EXPECT_EQ(st.culled_far, 1u);
    g.point = Vec3(50, 0, 2);
    g.scale = Vec3(0.01, 0.01, 0.01);
    EXPECT_FALSE(project_gaussian(g, cam, 0, &st));
    EXPECT_EQ(st.culled_offscreen, 1u);
    EXPECT_EQ(st.total(), 4u);
}

TEST(Render, EmptyFieldIsBlack) {
    GaussianField f;
    f.feat_dim = 4;
    const RenderOutput r = render(f, axis_camera(20));
    for (double v : r.rgb.data) EXPECT_EQ(v, 0.0);
    for (double v : r.feat_region.data) EXPECT_EQ(v, 0.0);
    for (double v : r.feat_context.data) EXPECT_EQ(v, 0.0);
    for (double v : r.alpha.data) EXPECT_EQ(v, 0.0);
    for (auto c : r.per_pixel_count.data) EXPECT_EQ(c, 0u);
    EXPECT_EQ(r.feat_region.channels, 4);
    EXPECT_EQ(r.rgb.channels, 3);
}

TEST(Render, BackgroundOnlyAffectsRgb) {
    GaussianField f;
    f.feat_dim = 2;
    RenderOptions o;
    o.background = Vec3(0.2, 0.4, 0.6);
    const RenderOutput r = render(f, axis_camera(8), o);
    EXPECT_NEAR(r.rgb.at(3, 3)[1], 0.4, 1e-15);
    for (double v : r.feat_region.data) EXPECT_EQ(v, 0.0);
}

TEST(Render, SingleSplatAtMean) {
    VecX feat(3);
    feat << 1.0, -2.0, 0.5;
    GaussianField f;
    f.feat_dim = 3;
    f.gaussians.push_back(splat_on_axis(3.0, 0.8, feat));
    const Camera cam = axis_camera(32);
    const RenderOutput r = render(f, cam);
    const auto px = r.feat_region.at(16, 16);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(px[k], 0.8 * feat[k], 1e-15);
    EXPECT_NEAR(r.feat_context.at(16, 16)[0], -0.8, 1e-15);
    EXPECT_NEAR(r.alpha(16, 16), 0.8, 1e-15);
    EXPECT_EQ(r.per_pixel_count(16, 16), 1u);
}

TEST(Render, TwoCoincidentSplats) {
    VecX front(2), back(2);
    front << 1.0, 0.0;
    back << 0.0, 1.0;
    GaussianField f;
    f.feat_dim = 2;
    // listed back first: the depth sort must put the near one in front
    f.gaussians.push_back(splat_on_axis(2.5, 0.5, back));
    f.gaussians.push_back(splat_on_axis(2.0, 0.5, front));
    const RenderOutput r = render(f, axis_camera(32));
    const auto px = r.feat_region.at(16, 16);
    EXPECT_NEAR(px[0], 0.5, 1e-15);
    EXPECT_NEAR(px[1], 0.25, 1e-15);
    EXPECT_NEAR(r.alpha(16, 16), 0.75, 1e-15);
    EXPECT_NEAR(r.transmittance(16, 16), 0.25, 1e-15);
}

TEST(Render, EqualDepthTieBreaksBySourceIndex) {
    VecX a(1), b(1);
    a << 1.0;
    b << 10.0;
    GaussianField f;
    f.feat_dim = 1;
    f.gaussians.push_back(splat_on_axis(2.0, 0.5, a));
    f.gaussians.push_back(splat_on_axis(2.0, 0.5, b));
    const RenderOutput r = render(f, axis_camera(32));
    EXPECT_NEAR(r.feat_region.at(16, 16)[0], 0.5 * 1.0 + 0.25 * 10.0, 1e-14);
}

TEST(Render, OpaqueSplatStopsCompositing) {
    VecX a(1), b(1);
    a << 1.0;
    b << 5.0;
    GaussianField f;
    f.feat_dim = 1;
    f.gaussians.push_back(splat_on_axis(2.0, 1.0, a));
    f.gaussians.push_back(splat_on_axis(3.0, 1.0, b));
    const RenderOutput r = render(f, axis_camera(32));
    EXPECT_EQ(r.per_pixel_count(16, 16), 1u);
    EXPECT_EQ(r.feat_region.at(16, 16)[0], 1.0);
    EXPECT_EQ(r.alpha(16, 16), 1.0);
}

TEST(Render, ChannelMismatchIsShapeError) {
    GaussianField f = random_field(3, 4, 1);
    RenderOptions o;
    o.expected_feat_dim = 5;
    EXPECT_THROW(render(f, axis_camera(16), o), ShapeError);
    EXPECT_THROW(render_reference(f, axis_camera(16), o), ShapeError);
}

TEST(Render, WeightsPlusTransmittanceIsOne) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GaussianField f = random_field(200, 2, seed);
        const RenderOutput r = render(f, axis_camera(32));
        for (std::size_t p = 0; p < r.alpha.size(); ++p) {
            ASSERT_NEAR(r.alpha.data[p] + r.transmittance.data[p], 1.0, 1e-12);
            ASSERT_GE(r.alpha.data[p], 0.0);
            ASSERT_LE(r.alpha.data[p], 1.0);
        }
    }
}

TEST(Render, UncoveredPixelsAreEmpty) {
    const GaussianField f = random_field(5, 3, 9, 0.02, 0.05);
    const RenderOutput r = render(f, axis_camera(48));
    std::size_t empty = 0;
    for (std::size_t p = 0; p < r.alpha.size(); ++p) {
        if (r.per_pixel_count.data[p] != 0) continue;
        ++empty;
        EXPECT_EQ(r.alpha.data[p], 0.0);
        for (int k = 0; k < 3; ++k) {
            EXPECT_EQ(r.feat_region.pixel(p)[k], 0.0);
            EXPECT_EQ(r.feat_context.pixel(p)[k], 0.0);
        }
    }
    EXPECT_GT(empty, 0u);
}

TEST(Render, InvariantToGaussianOrder) {
    GaussianField f = random_field(100, 4, 21);
    const RenderOutput a = render(f, axis_camera(32));
    std::mt19937_64 rng(4);
    std::shuffle(f.gaussians.begin(), f.gaussians.end(), rng);
    const RenderOutput b = render(f, axis_camera(32));
    EXPECT_LE(max_abs_diff(a.feat_region.data, b.feat_region.data), 1e-5);
    EXPECT_LE(max_abs_diff(a.feat_context.data, b.feat_context.data), 1e-5);
    EXPECT_LE(max_abs_diff(a.rgb.data, b.rgb.data), 1e-5);
    EXPECT_LE(max_abs_diff(a.alpha.data, b.alpha.data), 1e-5);
}

TEST(Render, TiledMatchesReference) {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const GaussianField f = random_field(50, 5, seed);
        const Camera cam = axis_camera(32);
        const RenderOutput a = render(f, cam);
        const RenderOutput b = render_reference(f, cam);
        ASSERT_LE(max_abs_diff(a.rgb.data, b.rgb.data), 1e-5);
        ASSERT_LE(max_abs_diff(a.feat_region.data, b.feat_region.data), 1e-5);
        ASSERT_LE(max_abs_diff(a.feat_context.data, b.feat_context.data), 1e-5);
        ASSERT_LE(max_abs_diff(a.alpha.data, b.alpha.data), 1e-5);
        ASSERT_EQ(a.per_pixel_count, b.per_pixel_count);
    }
}

TEST(Render, ReferenceCacheMatchesTiledCache) {
    const GaussianField f = random_field(30, 2, 8);
    RenderOptions o;
    o.cache = true;
    const RenderOutput a = render(f, axis_camera(24), o);
    const RenderOutput b = render_reference(f, axis_camera(24), o);
    ASSERT_TRUE(a.cache && b.cache);
    EXPECT_EQ(a.cache->offsets, b.cache->offsets);
    ASSERT_EQ(a.cache->entries.size(), b.cache->entries.size());
    for (std::size_t i = 0; i < a.cache->entries.size(); ++i) {
        EXPECT_EQ(a.cache->entries[i].source, b.cache->entries[i].source);
        EXPECT_NEAR(a.cache->entries[i].weight, b.cache->entries[i].weight, 1e-12);
    }
}

TEST(Render, BitwiseIndependentOfWorkerCount) {
    const GaussianField f = random_field(400, 8, 5);
    const Camera cam = axis_camera(70);  // not a multiple of the tile size
    const RenderOutput one = render(f, cam, threads(1));
    for (int n : {2, 3, 4, 7}) {
        const RenderOutput many = render(f, cam, threads(n));
        EXPECT_EQ(one.rgb, many.rgb);
        EXPECT_EQ(one.feat_region, many.feat_region);
        EXPECT_EQ(one.feat_context, many.feat_context);
        EXPECT_EQ(one.alpha, many.alpha);
        EXPECT_EQ(one.per_pixel_count, many.per_pixel_count);
    }
}

TEST(Render, AlphaMonotoneInOpacity) {
    GaussianField f = random_field(40, 2, 31);
    const Camera cam = axis_camera(32);
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> pix(0, 31);
    std::uniform_int_distribution<std::size_t> pick(0, f.size() - 1);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t i = pick(rng);
        const RenderOutput base = render(f, cam);
        GaussianField g = f;
        g.gaussians[i].opacity = std::min(1.0, g.gaussians[i].opacity + 0.2);
        const RenderOutput up = render(g, cam);
        for (int k = 0; k < 10; ++k) {
            const int row = pix(rng), col = pix(rng);
            EXPECT_GE(up.alpha(row, col), base.alpha(row, col) - 1e-15);
        }
    }
}

TEST(LossMask, ThresholdsAlpha) {
    ScalarMap a(2, 2, 1.0);
    EXPECT_EQ(count(loss_mask_from_alpha(a, 0.5)), 4u);
    a = ScalarMap(2, 2, 0.0);
    EXPECT_EQ(count(loss_mask_from_alpha(a, 0.5)), 0u);
    a = ScalarMap(2, 2, 0.7);
    a(1, 0) = 0.49;
    const Mask m = loss_mask_from_alpha(a, 0.5);
    EXPECT_EQ(m(1, 0), 0);
    EXPECT_EQ(m(0, 0), 1);
    a(1, 0) = 0.5;
    EXPECT_EQ(loss_mask_from_alpha(a, 0.5)(1, 0), 1);
}
