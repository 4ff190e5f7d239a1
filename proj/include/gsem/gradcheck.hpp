#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsem/codec.hpp"
#include "gsem/distill.hpp"
#include "gsem/field.hpp"

namespace gsem {

enum class CheckLoss {
    linear,  // sum over pixels of <weight, rendered feature> for both branches
    cosine,  // masked-mean cosine objective through both codecs
};

struct GradCheckSpec {
    CheckLoss kind = CheckLoss::linear;
    // Linear weights (H x W x K). Left empty, they are drawn from `seed`.
    FeatureImage weight_region;
    FeatureImage weight_context;
    // Cosine objective inputs; the camera of `view` replaces the camera argument.
    const CodecPair* codecs = nullptr;
    const SupervisionView* view = nullptr;

    bool include_opacity = false;
    bool include_codecs = true;
    std::size_t max_coords = 64;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::string param;  // "feat_region", "feat_context", "opacity", "codec_region", "codec_context"
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    std::vector<std::size_t> failures;  // indices into entries
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    // Coordinates replaced because +-step changed a pixel's composited splat
    // count or a codec ReLU sign, where central differences are meaningless.
    std::size_t nonsmooth_skipped = 0;

    bool passed() const { return failures.empty(); }
};

/// |a - n| / max(|a|, |n|, 1e-6).
double gradient_rel_error(double analytic, double numeric);

/// Analytic vs central-difference gradients on a deterministic subsample of at
/// most spec.max_coords parameters. Failures are reported, not thrown. Entries
/// are sorted by (param, index).
GradCheckReport grad_check(const GaussianField& field, const Camera& cam, const GradCheckSpec& spec, double step,
                           double tolerance);

}  // namespace gsem
