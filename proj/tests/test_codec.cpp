#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gsem/codec.hpp"
#include "gsem/error.hpp"
#include "gsem/gradcheck.hpp"
#include "helpers.hpp"

using namespace gsem;
using gsem::testing::random_image;

namespace {

MlpCodec identity_codec(int n) {
    MlpCodec c;
    c.layers.push_back({MatX::Identity(n, n), VecX::Zero(n)});
    return c;
}

// Per-pixel oracle written with plain loops, no Eigen products.
std::vector<double> naive_decode(const MlpCodec& codec, const FeatureImage& in) {
    std::vector<double> out;
    for (std::size_t p = 0; p < in.pixel_count(); ++p) {
        std::vector<double> x(in.pixel(p), in.pixel(p) + in.channels);
        for (std::size_t l = 0; l < codec.layers.size(); ++l) {
            const auto& L = codec.layers[l];
            std::vector<double> y(static_cast<std::size_t>(L.weight.rows()));
            for (Eigen::Index r = 0; r < L.weight.rows(); ++r) {
                double s = L.bias[r];
                for (Eigen::Index c = 0; c < L.weight.cols(); ++c) s += L.weight(r, c) * x[static_cast<std::size_t>(c)];
                y[static_cast<std::size_t>(r)] = (l + 1 < codec.layers.size()) ? std::max(0.0, s) : s;
            }
            x = std::move(y);
        }
        out.insert(out.end(), x.begin(), x.end());
    }
    return out;
}

// sum of upstream . decode(codec, in)
double dot_loss(const MlpCodec& codec, const MatX& in, const MatX& up) {
    return (codec_forward(codec, in).array() * up.array()).sum();
}

double& param(MlpCodec& c, std::size_t idx) {
    for (auto& l : c.layers) {
        if (idx < static_cast<std::size_t>(l.weight.size())) return l.weight.data()[idx];
        idx -= static_cast<std::size_t>(l.weight.size());
        if (idx < static_cast<std::size_t>(l.bias.size())) return l.bias.data()[idx];
        idx -= static_cast<std::size_t>(l.bias.size());
    }
    throw std::out_of_range("param");
}

double grad_param(const std::vector<DenseLayer>& g, std::size_t idx) {
    for (const auto& l : g) {
        if (idx < static_cast<std::size_t>(l.weight.size())) return l.weight.data()[idx];
        idx -= static_cast<std::size_t>(l.weight.size());
        if (idx < static_cast<std::size_t>(l.bias.size())) return l.bias.data()[idx];
        idx -= static_cast<std::size_t>(l.bias.size());
    }
    throw std::out_of_range("grad");
}

MlpCodec with_random_bias(MlpCodec c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.5);
    for (auto& l : c.layers)
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = n(rng);
    return c;
}

}  // namespace

TEST(Codec, IdentityLayerCopiesInput) {
    const FeatureImage in = random_image(3, 5, 6, 1);
    const FeatureImage out = decode(identity_codec(6), in);
    EXPECT_EQ(out.data, in.data);
    EXPECT_EQ(out.channels, 6);
}

TEST(Codec, ZeroParametersGiveZeroOutput) {
    MlpCodec c = MlpCodec::init(4, {7}, 5, 1);
    for (auto& l : c.layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
    const FeatureImage out = decode(c, random_image(4, 4, 4, 2));
    for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(Codec, MatchesNaiveOracle) {
    const MlpCodec c = with_random_bias(MlpCodec::init(8, {12}, 5, 3), 4);
    const FeatureImage in = random_image(4, 4, 8, 5);
    const FeatureImage out = decode(c, in);
    const auto ref = naive_decode(c, in);
    ASSERT_EQ(out.data.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.data[i], ref[i], 1e-6);
}

TEST(Codec, NormalizedDecodeHasUnitPixels) {
    const MlpCodec c = with_random_bias(MlpCodec::init(3, {8}, 4, 1), 2);
    const FeatureImage out = decode(c, random_image(5, 5, 3, 9), true);
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
        EXPECT_NEAR(Eigen::Map<const VecX>(out.pixel(p), 4).norm(), 1.0, 1e-12);
    }
}

TEST(Codec, ChannelMismatchIsShapeError) {
    EXPECT_THROW(decode(identity_codec(4), random_image(2, 2, 3, 1)), ShapeError);
}

TEST(Codec, ValidateChecksChaining) {
    MlpCodec c = MlpCodec::init(4, {6}, 3, 1);
    EXPECT_NO_THROW(c.validate());
    c.layers[1].weight = MatX::Zero(3, 5);
    EXPECT_THROW(c.validate(), ShapeError);
    c = MlpCodec::init(4, {6}, 3, 1);
    c.layers[0].bias[0] = NAN;
    EXPECT_THROW(c.validate(), ShapeError);
}

TEST(Codec, XavierInitRangeAndDeterminism) {
    const MlpCodec a = MlpCodec::init(16, {64}, 32, 7);
    const MlpCodec b = MlpCodec::init(16, {64}, 32, 7);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, MlpCodec::init(16, {64}, 32, 8));
    EXPECT_EQ(a.in_dim(), 16);
    EXPECT_EQ(a.out_dim(), 32);
    EXPECT_EQ(a.parameter_count(), 16u * 64 + 64 + 64 * 32 + 32);
    const double lim0 = std::sqrt(6.0 / (16 + 64));
    EXPECT_LE(a.layers[0].weight.cwiseAbs().maxCoeff(), lim0);
    EXPECT_GT(a.layers[0].weight.cwiseAbs().maxCoeff(), 0.8 * lim0);
    EXPECT_EQ(a.layers[0].bias.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CodecBackward, ZeroUpstream) {
    const MlpCodec c = with_random_bias(MlpCodec::init(4, {8}, 3, 1), 1);
    const FeatureImage in = random_image(3, 3, 4, 2);
    const DecodeBackward b = decode_backward(c, in, FeatureImage(3, 3, 3));
    for (double v : b.d_input.data) EXPECT_EQ(v, 0.0);
    for (const auto& l : b.grad) {
        EXPECT_EQ(l.weight.cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(CodecBackward, IdentityPassesUpstreamToInput) {
    const FeatureImage in = random_image(2, 3, 5, 1), up = random_image(2, 3, 5, 2);
    const DecodeBackward b = decode_backward(identity_codec(5), in, up);
    EXPECT_EQ(b.d_input.data, up.data);
}

TEST(CodecBackward, EmptyTapeIsUsageError) {
    const MlpCodec c = MlpCodec::init(2, {}, 2, 1);
    EXPECT_THROW(codec_backward(c, CodecTape{}, MatX::Zero(2, 1)), UsageError);
}

TEST(CodecBackward, FiniteDifferencesOnTenShapes) {
    const std::vector<std::vector<int>> hidden = {{}, {8}, {16}, {64}, {8, 8}, {32, 16}, {64, 8},
                                                  {8, 16, 32}, {16, 16, 16}, {64, 32, 8}};
    std::uint64_t seed = 0;
    for (const auto& h : hidden) {
        ++seed;
        const int in_dim = 3 + static_cast<int>(seed % 4), out_dim = 4 + static_cast<int>(seed % 3);
        const MlpCodec c = with_random_bias(MlpCodec::init(in_dim, h, out_dim, seed), seed + 100);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, 1.0);
        MatX in(in_dim, 6), up(out_dim, 6);
        for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = n(rng);
        for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = n(rng);
        CodecTape tape;
        codec_forward(c, in, &tape);
        const CodecBackward b = codec_backward(c, tape, up);
        const double step = 1e-4;

        std::uniform_int_distribution<std::size_t> pick(0, c.parameter_count() - 1);
        for (int t = 0; t < 20; ++t) {
            const std::size_t idx = pick(rng);
            MlpCodec p = c, m = c;
            param(p, idx) += step;
            param(m, idx) -= step;
            const double numeric = (dot_loss(p, in, up) - dot_loss(m, in, up)) / (2 * step);
            // piecewise-linear network: a kink inside +-step shows up as a jump, skip those
            CodecTape tp, tm;
            codec_forward(p, in, &tp);
            codec_forward(m, in, &tm);
            bool kink = false;
            for (std::size_t l = 0; l + 1 < tp.pre.size(); ++l)
                kink |= ((tp.pre[l].array() > 0) != (tm.pre[l].array() > 0)).any();
            if (kink) continue;
            EXPECT_LE(gradient_rel_error(grad_param(b.grad, idx), numeric), 1e-4) << "shape " << seed;
        }
        for (Eigen::Index i = 0; i < in.size(); ++i) {
            MatX p = in, m = in;
            p.data()[i] += step;
            m.data()[i] -= step;
            const double numeric = (dot_loss(c, p, up) - dot_loss(c, m, up)) / (2 * step);
            CodecTape tp, tm;
            codec_forward(c, p, &tp);
            codec_forward(c, m, &tm);
            bool kink = false;
            for (std::size_t l = 0; l + 1 < tp.pre.size(); ++l)
                kink |= ((tp.pre[l].array() > 0) != (tm.pre[l].array() > 0)).any();
            if (kink) continue;
            EXPECT_LE(gradient_rel_error(b.d_input.data()[i], numeric), 1e-4) << "shape " << seed;
        }
    }
}

TEST(Codec, PixelPermutationPermutesOutput) {
    const MlpCodec c = with_random_bias(MlpCodec::init(4, {16}, 6, 2), 3);
    const FeatureImage in = random_image(1, 20, 4, 4);
    std::vector<int> perm(20);
    for (int i = 0; i < 20; ++i) perm[i] = (i * 7) % 20;
    FeatureImage shuffled = in;
    for (int i = 0; i < 20; ++i)
        std::copy(in.pixel(perm[i]), in.pixel(perm[i]) + 4, shuffled.pixel(i));
    const FeatureImage a = decode(c, in), b = decode(c, shuffled);
    for (int i = 0; i < 20; ++i)
        for (int k = 0; k < 6; ++k) EXPECT_EQ(b.pixel(i)[k], a.pixel(perm[i])[k]);
}
