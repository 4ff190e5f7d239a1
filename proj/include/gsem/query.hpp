#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsem/codec.hpp"
#include "gsem/field.hpp"
#include "gsem/image.hpp"
#include "gsem/raster.hpp"

namespace gsem {

inline constexpr double kDefaultThreshold = 0.5;

/// Named unit embeddings plus the canonical set used to regularize scores.
struct EmbeddingDictionary {
    int dim = 0;
    std::vector<std::string> names;
    std::vector<VecX> vectors;
    std::vector<VecX> canonical;

    std::size_t size() const { return names.size(); }
    std::optional<std::size_t> find(const std::string& name) const;
    const VecX& lookup(const std::string& name) const;  // LookupError when absent

    /// Lengths, unit norms (1e-6) and a non-empty canonical set.
    void validate() const;
};

/// min_i exp(f.q) / (exp(f.q) + exp(f.c_i)) with f normalized (1e-8 floor).
double relevancy_score(const Eigen::Ref<const VecX>& feat, const Eigen::Ref<const VecX>& query,
                       std::span<const VecX> canonical);

/// Per-pixel relevancy of a decoded D-channel image.
ScalarMap relevancy_map(const FeatureImage& decoded, const VecX& query, std::span<const VecX> canonical);

enum class Branch { region, context, mean };
enum class Strategy { ours, mean, fixed_region, fixed_context, upper_bound };

const char* to_string(Branch b);
const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& s);  // UsageError on unknown names

struct QueryResult {
    ScalarMap relevancy_region;
    ScalarMap relevancy_context;
    ScalarMap relevancy_mean;  // score of the average of the two decoded features
    Branch selected = Branch::region;
    Mask mask;
    int argmax_row = -1;
    int argmax_col = -1;
    double max_score = 0.0;
    double max_region = 0.0;
    double max_context = 0.0;
    bool empty = false;  // loss mask had no pixels
};

/// Pixels of `map` with score >= threshold inside the loss mask.
Mask threshold_map(const ScalarMap& map, double threshold, const Mask& loss_mask);

/// Max over the loss mask; first pixel in row-major order wins ties. Returns
/// false when the mask is empty.
bool masked_argmax(const ScalarMap& map, const Mask& loss_mask, int& row, int& col, double& value);

/// Scores both branches of an already decoded pair of images.
QueryResult query_decoded(const FeatureImage& decoded_region, const FeatureImage& decoded_context, const VecX& query,
                          std::span<const VecX> canonical, double threshold, const Mask& loss_mask);

/// Decodes both rendered branches, scores them against the named query and
/// selects the branch with the higher masked maximum (ties go to region).
QueryResult query_view(const RenderOutput& rendered, const CodecPair& codecs, const EmbeddingDictionary& dict,
                       const std::string& query_name, double threshold, const Mask& loss_mask);

struct StrategyResult {
    ScalarMap map;
    Branch branch = Branch::region;
};

/// Effective relevancy map under a branch strategy. upper_bound needs `gt`
/// and picks the branch whose thresholded map has the higher IoU (ties to
/// region). `mean` uses mean_map when given, else the per-pixel score average.
StrategyResult select_branch_strategy(const ScalarMap& region, const ScalarMap& context, Strategy strategy,
                                      double threshold, const Mask& loss_mask, const Mask* gt = nullptr,
                                      const ScalarMap* mean_map = nullptr);

/// Top-3 PCA of the masked pixels mapped to RGB in [0, 1]; unmasked pixels
/// are black. Needs at least 3 masked pixels.
FeatureImage pca_visualize(const FeatureImage& feats, const Mask& mask);

}  // namespace gsem
