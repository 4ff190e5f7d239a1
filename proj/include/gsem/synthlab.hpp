#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gsem/distill.hpp"
#include "gsem/field.hpp"
#include "gsem/image.hpp"
#include "gsem/query.hpp"

namespace gsem {

// Affinity of every canonical vector to every class vector. At 0 all
// non-matching features score exactly 0.5, which is the default threshold,
// so the generator keeps the canonicals slightly correlated with the
// classes the way real text embeddings are.
inline constexpr double kDefaultCanonicalAffinity = 0.2;
inline constexpr int kDefaultCanonicalCount = 4;

struct SceneSpec {
    std::vector<std::string> classes{"chair", "table", "lamp"};
    int clusters_per_class = 1;
    int gaussians_per_cluster = 24;
    double extent = 1.0;  // clusters lie in [-extent, extent]^2
    int feat_dim = 16;    // K
    int embed_dim = 32;   // D
    std::uint64_t seed = 0;

    int views = 6;
    int image_size = 40;
    double cluster_radius = 0.25;
    double opacity_min = 0.7;
    double opacity_max = 0.95;
    std::vector<std::string> distractors;  // dictionary-only names
    int canonical_count = kDefaultCanonicalCount;
    double canonical_affinity = kDefaultCanonicalAffinity;

    void validate() const;
};

struct SyntheticScene {
    GaussianField field;
    std::vector<Camera> cameras;
    std::vector<LabelMap> labels;     // 0 = unlabeled, k = classes[k - 1]
    std::vector<LabelMap> instances;  // 0 = none, c = cluster c - 1
    std::vector<std::string> classes;
    std::vector<std::uint16_t> cluster_class;  // class label of each cluster
};

/// Non-overlapping labeled gaussian clusters viewed from a ring of cameras.
/// Labels are the per-pixel argmax of composited class indicators, 0 where
/// alpha < 0.5. All values are float-representable. Throws PlacementError
/// when a cluster cannot be placed in 1000 attempts.
SyntheticScene make_scene(const SceneSpec& spec);

/// Gram-Schmidt orthonormal class vectors and canonical vectors. Canonical
/// vectors are c_j = a * sum(e_k) + sqrt(1 - a^2 n) v_j with v_j orthonormal
/// to every class vector, so each has dot product `canonical_affinity` with
/// every class vector (exactly orthogonal at 0).
EmbeddingDictionary make_embeddings(std::span<const std::string> names, int dim, std::uint64_t seed,
                                    int canonical_count = kDefaultCanonicalCount,
                                    double canonical_affinity = kDefaultCanonicalAffinity);

/// Label k gets the embedding of classes[k - 1]; label 0 gets zero. The
/// mask plane marks labeled pixels.
FeatureImage region_supervision(const LabelMap& gt, const EmbeddingDictionary& dict,
                                std::span<const std::string> classes);

/// Box-blurred region supervision pooled (mean) within each region and
/// filled back. Regions default to the connected components of gt.
FeatureImage context_supervision(const LabelMap& gt, const EmbeddingDictionary& dict,
                                 std::span<const std::string> classes, int blur_radius,
                                 const LabelMap* regions = nullptr);

/// Replaces floor(rate * n) of the n regions (seeded choice) with the
/// embedding of a different dictionary entry. Regions default to the
/// connected components of gt.
FeatureImage corrupt_supervision(const FeatureImage& feats, const LabelMap& gt, double rate,
                                 const EmbeddingDictionary& dict, std::span<const std::string> classes,
                                 std::uint64_t seed, const LabelMap* regions = nullptr);

/// Corrupts exactly the listed region ids. The replacement entry depends only
/// on (seed, region id), so a fixed id set corrupts consistently across views.
FeatureImage corrupt_regions(const FeatureImage& feats, const LabelMap& gt, const LabelMap& regions,
                             std::span<const std::uint16_t> region_ids, const EmbeddingDictionary& dict,
                             std::span<const std::string> classes, std::uint64_t seed);

/// Region + context supervision for one camera, loss mask = labeled pixels.
SupervisionView make_supervision_view(const Camera& camera, const LabelMap& gt, const EmbeddingDictionary& dict,
                                      std::span<const std::string> classes, int blur_radius);

/// Embedding index (argmax cosine over dictionary entries) of each pixel;
/// -1 for zero vectors.
Grid<int> classify_pixels(const FeatureImage& feats, const EmbeddingDictionary& dict);

}  // namespace gsem
