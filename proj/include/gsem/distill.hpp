#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gsem/codec.hpp"
#include "gsem/field.hpp"
#include "gsem/grad.hpp"
#include "gsem/image.hpp"
#include "gsem/raster.hpp"

namespace gsem {

inline constexpr double kCosineNormFloor = 1e-8;

/// One rendering view with its two D-dimensional supervision maps.
struct SupervisionView {
    Camera camera;
    FeatureImage target_region;
    FeatureImage target_context;
    Mask loss_mask;

    void validate() const;
};

struct CosineLoss {
    double loss = 0.0;  // 1 - cos(pred, target), in [0, 2]
    VecX d_pred;        // d loss / d pred
    bool excluded = false;  // zero-norm target: contributes nothing
};

CosineLoss cosine_loss(const Eigen::Ref<const VecX>& pred, const Eigen::Ref<const VecX>& target);

/// Masked-pixel mean of L_R + L_C for one rendered view, with gradients
/// w.r.t. both codecs and the rendered K-dim feature maps.
struct SemanticLoss {
    double loss = 0.0;
    std::size_t masked_pixels = 0;
    std::size_t excluded_targets = 0;
    bool empty_mask = false;
    std::vector<DenseLayer> d_codec_region;
    std::vector<DenseLayer> d_codec_context;
    FeatureImage d_render_region;
    FeatureImage d_render_context;
};

SemanticLoss total_semantic_loss(const RenderOutput& rendered, const CodecPair& codecs, const SupervisionView& view);

/// Loss and full gradient (field features, optional opacity, both codecs)
/// over a batch of views; the loss is the mean over every masked pixel of the
/// batch.
struct SemanticObjective {
    double loss = 0.0;
    std::size_t masked_pixels = 0;
    std::size_t excluded_targets = 0;
    FeatureGrad field_grad;
    std::vector<DenseLayer> d_codec_region;
    std::vector<DenseLayer> d_codec_context;
};

SemanticObjective semantic_objective(const GaussianField& field, const CodecPair& codecs,
                                     std::span<const SupervisionView* const> views, bool opacity_grad = false,
                                     int threads = 0);

struct FitConfig {
    int iterations = 2000;
    double feature_lr = 5e-3;
    double codec_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    bool train_opacity = false;
    int log_every = 0;
    int views_per_step = 2;
    std::vector<int> codec_hidden{64};
    double init_sigma = 0.01;
    bool reinit_features = true;
    int threads = 0;
    std::function<void(int, double)> progress;  // called every log_every iterations

    void validate() const;
};

struct FitResult {
    GaussianField field;
    CodecPair codecs;
    std::vector<double> loss_history;
};

/// Adam on per-gaussian features (and opacity when enabled) plus both codecs;
/// geometry is never touched. Views are consumed round-robin, views_per_step
/// at a time. Throws NumericError with the iteration index if the loss
/// becomes non-finite.
FitResult fit_semantics(const GaussianField& field, std::span<const SupervisionView> views, const FitConfig& cfg);
FitResult fit_semantics(const GaussianField& field, std::span<const SupervisionView> views, const FitConfig& cfg,
                        CodecPair initial);

/// Codecs initialized the way fit_semantics does for a given config.
CodecPair init_codecs(int feat_dim, int embed_dim, const FitConfig& cfg);

}  // namespace gsem
