#include "gsem/codec.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gsem/error.hpp"

namespace gsem {

std::size_t MlpCodec::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

void MlpCodec::validate() const {
    if (layers.empty()) throw ShapeError("codec: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight.rows() == 0 || l.weight.cols() == 0) throw ShapeError("codec: empty layer " + std::to_string(i));
        if (l.bias.size() != l.weight.rows()) throw ShapeError("codec: bias length mismatch in layer " + std::to_string(i));
        if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows()) {
            throw ShapeError("codec: layer " + std::to_string(i) + " input does not match previous output");
        }
        if (!l.weight.allFinite() || !l.bias.allFinite()) throw ShapeError("codec: non-finite parameters");
    }
}

MlpCodec MlpCodec::init(int in_dim, const std::vector<int>& hidden, int out_dim, std::uint64_t seed) {
    if (in_dim <= 0 || out_dim <= 0) throw UsageError("codec: dimensions must be positive");
    std::vector<int> dims{in_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out_dim);

    std::mt19937_64 rng(seed);
    MlpCodec codec;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        if (dims[i + 1] <= 0) throw UsageError("codec: hidden widths must be positive");
        const double limit = std::sqrt(6.0 / (dims[i] + dims[i + 1]));
        std::uniform_real_distribution<double> u(-limit, limit);
        DenseLayer l{MatX(dims[i + 1], dims[i]), VecX::Zero(dims[i + 1])};
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
        codec.layers.push_back(std::move(l));
    }
    return codec;
}

MatX codec_forward(const MlpCodec& codec, const MatX& in, CodecTape* tape) {
    if (codec.layers.empty()) throw ShapeError("codec: no layers");
    if (in.rows() != codec.in_dim()) {
        throw ShapeError("codec: input has " + std::to_string(in.rows()) + " channels, codec expects " +
                         std::to_string(codec.in_dim()));
    }
    if (tape) {
        tape->inputs.clear();
        tape->pre.clear();
    }
    MatX x = in;
    for (std::size_t i = 0; i < codec.layers.size(); ++i) {
        const auto& l = codec.layers[i];
        MatX z = l.weight * x;
        z.colwise() += l.bias;
        if (tape) {
            tape->inputs.push_back(x);
            tape->pre.push_back(z);
        }
        if (i + 1 < codec.layers.size()) z = z.cwiseMax(0.0);
        x = std::move(z);
    }
    return x;
}

CodecBackward codec_backward(const MlpCodec& codec, const CodecTape& tape, const MatX& upstream) {
    if (tape.empty()) throw UsageError("codec_backward: no forward activations recorded");
    if (tape.inputs.size() != codec.layers.size()) throw UsageError("codec_backward: tape does not match codec depth");
    if (upstream.rows() != codec.out_dim() || upstream.cols() != tape.inputs.front().cols()) {
        throw ShapeError("codec_backward: upstream shape mismatch");
    }
    CodecBackward out;
    out.grad.resize(codec.layers.size());
    MatX delta = upstream;
    for (std::size_t i = codec.layers.size(); i-- > 0;) {
        if (i + 1 < codec.layers.size()) delta = delta.cwiseProduct((tape.pre[i].array() > 0.0).cast<double>().matrix());
        out.grad[i].weight = delta * tape.inputs[i].transpose();
        out.grad[i].bias = delta.rowwise().sum();
        delta = codec.layers[i].weight.transpose() * delta;
    }
    out.d_input = std::move(delta);
    return out;
}

namespace {

Eigen::Map<const MatX> as_columns(const FeatureImage& img) {
    return {img.data.data(), img.channels, static_cast<Eigen::Index>(img.pixel_count())};
}

}  // namespace

FeatureImage decode(const MlpCodec& codec, const FeatureImage& feats, bool normalize) {
    if (feats.channels != codec.in_dim()) {
        throw ShapeError("decode: image has " + std::to_string(feats.channels) + " channels, codec expects " +
                         std::to_string(codec.in_dim()));
    }
    const MatX out = codec_forward(codec, as_columns(feats));
    FeatureImage img(feats.height, feats.width, codec.out_dim());
    Eigen::Map<MatX>(img.data.data(), img.channels, static_cast<Eigen::Index>(img.pixel_count())) = out;
    if (normalize) {
        for (std::size_t p = 0; p < img.pixel_count(); ++p) {
            Eigen::Map<VecX> v(img.pixel(p), img.channels);
            v /= std::max(v.norm(), 1e-8);
        }
    }
    return img;
}

DecodeBackward decode_backward(const MlpCodec& codec, const FeatureImage& feats, const FeatureImage& upstream) {
    if (upstream.height != feats.height || upstream.width != feats.width || upstream.channels != codec.out_dim()) {
        throw ShapeError("decode_backward: upstream shape mismatch");
    }
    CodecTape tape;
    codec_forward(codec, as_columns(feats), &tape);
    auto back = codec_backward(codec, tape, as_columns(upstream));
    DecodeBackward out{std::move(back.grad), FeatureImage(feats.height, feats.width, feats.channels)};
    Eigen::Map<MatX>(out.d_input.data.data(), feats.channels, static_cast<Eigen::Index>(feats.pixel_count())) =
        back.d_input;
    return out;
}

}  // namespace gsem
