#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "gsem/field.hpp"
#include "gsem/image.hpp"

namespace gsem {

inline constexpr int kTileSize = 16;
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kConicDilation = 0.3;
inline constexpr double kRadiusSigmas = 3.0;

/// A gaussian projected to the image plane. Features stay in the field and
/// are addressed through source_index.
struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Vec3 conic = Vec3::Zero();  // inverse 2D covariance, (a, b, c) of [[a b] [b c]]
    double depth = 0.0;
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    double radius = 0.0;
    std::uint32_t source_index = 0;

    /// The splat is composited at a pixel only inside its bounding square.
    bool covers(double x, double y) const {
        return std::abs(x - mean2d.x()) <= radius && std::abs(y - mean2d.y()) <= radius;
    }
};

struct ProjectionStats {
    std::size_t culled_near = 0;
    std::size_t culled_far = 0;
    std::size_t culled_offscreen = 0;
    std::size_t culled_singular = 0;

    std::size_t total() const { return culled_near + culled_far + culled_offscreen + culled_singular; }
};

/// EWA projection of one gaussian. Returns nullopt when culled; the reason is
/// counted in `stats` if given. The camera is assumed valid.
std::optional<Splat2D> project_gaussian(const SemanticGaussian& g, const Camera& cam, int sh_degree,
                                        ProjectionStats* stats = nullptr);

struct RenderOptions {
    Vec3 background = Vec3::Zero();  // RGB only; features always composite over zero
    int threads = 0;                 // 0 = default parallelism
    bool cache = false;              // keep per-pixel contributions for the backward pass
    int expected_feat_dim = 0;       // when > 0, must equal the field's feat_dim
};

/// One composited term at one pixel.
struct Contribution {
    std::uint32_t source = 0;   // index into the field
    double weight = 0.0;        // alpha * G * T
    double alpha = 0.0;         // alpha * G
    double transmittance = 0.0; // T before this splat
};

/// Per-pixel contribution lists, CSR layout in row-major pixel order.
struct ForwardCache {
    int height = 0;
    int width = 0;
    std::size_t gaussian_count = 0;
    std::vector<std::size_t> offsets;  // pixel_count + 1
    std::vector<Contribution> entries;

    std::size_t begin(std::size_t p) const { return offsets[p]; }
    std::size_t end(std::size_t p) const { return offsets[p + 1]; }
};

struct RenderOutput {
    FeatureImage rgb;
    FeatureImage feat_region;
    FeatureImage feat_context;
    ScalarMap alpha;
    ScalarMap transmittance;  // final T per pixel
    CountMap per_pixel_count;
    ProjectionStats stats;
    std::optional<ForwardCache> cache;
};

/// Tile-based, depth-sorted front-to-back compositing of RGB and both
/// feature branches. Output is bitwise independent of the worker count.
RenderOutput render(const GaussianField& field, const Camera& cam, const RenderOptions& opts = {});

/// Serial brute force: for each pixel, all projected splats are sorted and
/// composited with the same per-pixel rules. Kept as the test oracle and the
/// benchmark baseline.
RenderOutput render_reference(const GaussianField& field, const Camera& cam, const RenderOptions& opts = {});

/// alpha(p) >= tau.
Mask loss_mask_from_alpha(const ScalarMap& alpha, double tau);

}  // namespace gsem
