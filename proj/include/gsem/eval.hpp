#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gsem/codec.hpp"
#include "gsem/distill.hpp"
#include "gsem/field.hpp"
#include "gsem/image.hpp"
#include "gsem/query.hpp"
#include "gsem/synthlab.hpp"

namespace gsem {

/// IoU gap between branches below which a query does not count toward the
/// strategy hit-rate.
inline constexpr double kHitRateGap = 0.05;

struct EvalView {
    std::string scene_id;
    int view_index = 0;
    Camera camera;
    LabelMap gt;     // 0 = unlabeled, k = classes[k - 1]
    Mask loss_mask;  // empty: pixels with rendered alpha >= 0.5
};

struct EvalRecord {
    std::string scene_id;
    int view_index = 0;
    std::string query;
    double iou = 0.0;
    bool localized = false;
    Branch branch = Branch::region;
    Strategy strategy = Strategy::ours;
    double threshold = kDefaultThreshold;
    double iou_region = 0.0;   // fixed-branch IoUs, kept for hit-rate analysis
    double iou_context = 0.0;
    double max_score = 0.0;
};

struct Aggregates {
    std::size_t count = 0;
    bool defined = false;  // false when there are no records
    double miou = 0.0;
    double la = 0.0;  // percent
};

/// Arithmetic means over records; recomputed from scratch on every call.
Aggregates aggregate(std::span<const EvalRecord> records);

struct EvalOptions {
    double threshold = kDefaultThreshold;
    std::vector<Strategy> strategies{Strategy::ours};
    int threads = 0;
};

struct EvalResult {
    std::vector<EvalRecord> records;  // sorted by (scene, view, query, strategy)
    std::vector<std::string> warnings;

    std::vector<EvalRecord> for_strategy(Strategy s) const;
    Aggregates aggregates(Strategy s) const;
};

/// Renders each view once and runs every query under every strategy. A query
/// whose class is absent from a view's gt (under the loss mask) is skipped
/// with a warning. Queries must exist in the dictionary (LookupError) and in
/// `classes` (UsageError).
EvalResult evaluate_scene(const GaussianField& field, const CodecPair& codecs, const EmbeddingDictionary& dict,
                          std::span<const EvalView> views, std::span<const std::string> classes,
                          std::span<const std::string> queries, const EvalOptions& opts = {});

/// Same protocol on D-dim feature images that are already decoded, e.g. the
/// 2D supervision maps themselves.
EvalResult evaluate_features(const FeatureImage& region, const FeatureImage& context, const LabelMap& gt,
                             const Mask& loss_mask, const EmbeddingDictionary& dict,
                             std::span<const std::string> classes, std::span<const std::string> queries,
                             const EvalOptions& opts, const std::string& scene_id, int view_index);

struct StrategyRow {
    Strategy strategy = Strategy::ours;
    Aggregates agg;
};

struct StrategyReport {
    std::vector<StrategyRow> rows;
    std::size_t hit_denominator = 0;  // records with |iou_region - iou_context| > gap
    std::size_t hits = 0;             // ... where ours picked the upper_bound branch
    std::optional<double> hit_rate;   // percent; empty when the denominator is 0

    const Aggregates& of(Strategy s) const;
};

/// Per-strategy table and the ours-vs-upper_bound hit-rate. Every strategy
/// must cover the same (scene, view, query) keys, otherwise UsageError; the
/// hit-rate needs both ours and upper_bound records.
StrategyReport strategy_report(std::span<const EvalRecord> records, double gap = kHitRateGap);

/// Fraction of labeled held-out pixels whose decoded feature (one branch) has
/// its dictionary-cosine argmax at the pixel's gt class.
double decode_accuracy(const GaussianField& field, const MlpCodec& codec, Branch branch,
                       const EmbeddingDictionary& dict, std::span<const std::string> classes, const EvalView& view,
                       int threads = 0);

/// Synthetic scene -> dictionary -> supervision -> fit -> evaluation.
struct PipelineConfig {
    SceneSpec scene;
    int train_views = 4;  // the first cameras supervise, the rest are held out
    int blur_radius = 2;
    double region_corruption = 0.0;  // per-view independent region corruption
    double context_corruption = 0.0;
    std::uint64_t corruption_seed = 1;
    FitConfig fit;
    EvalOptions eval;
    std::vector<std::string> queries;  // empty: every class

    void validate() const;
};

struct PipelineResult {
    SyntheticScene scene;
    EmbeddingDictionary dict;
    std::vector<SupervisionView> train;
    std::vector<EvalView> held_out;
    FitResult fit;
    EvalResult eval;
};

std::vector<EvalView> eval_views(const SyntheticScene& scene, std::span<const int> view_indices,
                                 const std::string& scene_id);

PipelineResult run_pipeline(const PipelineConfig& cfg);

enum class SweepAxis { threshold, feat_dim };
const char* to_string(SweepAxis a);
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepRow {
    double value = 0.0;
    std::vector<StrategyRow> rows;
};

/// threshold: one pipeline fit, re-evaluated per value. feat_dim: one full
/// pipeline per value. Empty `values` is a UsageError.
std::vector<SweepRow> sweep(SweepAxis axis, std::span<const double> values, const PipelineConfig& cfg);

void write_records_csv(std::ostream& os, std::span<const EvalRecord> records);
void write_strategy_csv(std::ostream& os, const StrategyReport& report);
void write_sweep_csv(std::ostream& os, SweepAxis axis, std::span<const SweepRow> rows);

}  // namespace gsem
