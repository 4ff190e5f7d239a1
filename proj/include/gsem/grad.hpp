#pragma once

#include "gsem/field.hpp"
#include "gsem/image.hpp"
#include "gsem/raster.hpp"

namespace gsem {

/// Per-gaussian gradients of a scalar loss. Rows follow the field order.
struct FeatureGrad {
    MatX d_feat_region;   // N x K
    MatX d_feat_context;  // N x K
    VecX d_opacity;       // N, zero when opacity gradients are disabled

    static FeatureGrad zeros(std::size_t n, int feat_dim) {
        return {MatX::Zero(static_cast<Eigen::Index>(n), feat_dim), MatX::Zero(static_cast<Eigen::Index>(n), feat_dim),
                VecX::Zero(static_cast<Eigen::Index>(n))};
    }
};

struct BackwardOptions {
    bool opacity = false;
    int threads = 0;
    const ScalarMap* upstream_alpha = nullptr;  // optional dL/dalpha per pixel
};

/// Gradients of a loss given dL/d(rendered feature) images (H x W x K each).
/// Requires a forward render with RenderOptions::cache set; throws
/// UsageError otherwise. Feature gradients are exact since compositing is
/// linear in the features. The opacity gradient differentiates the
/// transmittance recurrence and treats the skip/stop thresholds as fixed.
/// Sums run per gaussian in row-major pixel order, so the result does not
/// depend on the worker count.
FeatureGrad render_backward(const GaussianField& field, const RenderOutput& forward, const FeatureImage& upstream_region,
                            const FeatureImage& upstream_context, const BackwardOptions& opts = {});

}  // namespace gsem
