#pragma once

#include <cstdint>
#include <vector>

#include "gsem/field.hpp"
#include "gsem/image.hpp"

namespace gsem {

struct DenseLayer {
    MatX weight;  // out x in
    VecX bias;    // out

    friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
        return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() && a.weight == b.weight &&
               a.bias.size() == b.bias.size() && a.bias == b.bias;
    }
};

/// Fully connected decompression network K -> ... -> D, ReLU after every
/// layer except the last.
struct MlpCodec {
    std::vector<DenseLayer> layers;

    int in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
    int out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
    std::size_t parameter_count() const;

    /// Throws ShapeError when layers do not chain or entries are non-finite.
    void validate() const;

    /// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero bias.
    static MlpCodec init(int in_dim, const std::vector<int>& hidden, int out_dim, std::uint64_t seed);

    friend bool operator==(const MlpCodec&, const MlpCodec&) = default;
};

/// The region and context networks.
struct CodecPair {
    MlpCodec region;
    MlpCodec context;
};

/// Activations recorded by forward() for codec_backward().
struct CodecTape {
    std::vector<MatX> inputs;  // input of each layer; inputs[0] is the network input
    std::vector<MatX> pre;     // pre-activation output of each layer

    bool empty() const { return inputs.empty(); }
};

/// Columns are samples: in is in_dim x P, result is out_dim x P.
MatX codec_forward(const MlpCodec& codec, const MatX& in, CodecTape* tape = nullptr);

struct CodecBackward {
    std::vector<DenseLayer> grad;  // same shapes as the codec layers
    MatX d_input;                  // in_dim x P
};

/// Backprop of dL/d(output) (out_dim x P). Throws UsageError on an empty tape.
CodecBackward codec_backward(const MlpCodec& codec, const CodecTape& tape, const MatX& upstream);

/// Per-pixel decode of an H x W x in_dim image. With normalize set, every
/// output pixel is L2-normalized (1e-8 norm floor).
FeatureImage decode(const MlpCodec& codec, const FeatureImage& feats, bool normalize = false);

/// Image form of codec_backward: returns parameter gradients and an
/// H x W x in_dim input gradient.
struct DecodeBackward {
    std::vector<DenseLayer> grad;
    FeatureImage d_input;
};
DecodeBackward decode_backward(const MlpCodec& codec, const FeatureImage& feats, const FeatureImage& upstream);

}  // namespace gsem
