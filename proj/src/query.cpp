#include "gsem/query.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gsem/error.hpp"
#include "gsem/metrics.hpp"

namespace gsem {

std::optional<std::size_t> EmbeddingDictionary::find(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
}

const VecX& EmbeddingDictionary::lookup(const std::string& name) const {
    const auto i = find(name);
    if (!i) throw LookupError("dictionary: no entry named '" + name + "'");
    return vectors[*i];
}

void EmbeddingDictionary::validate() const {
    if (dim <= 0) throw ShapeError("dictionary: dim must be positive");
    if (names.size() != vectors.size()) throw ShapeError("dictionary: names and vectors differ in count");
    if (canonical.empty()) throw ShapeError("dictionary: canonical set is empty");
    auto check = [&](const VecX& v, const std::string& what) {
        if (v.size() != dim) throw ShapeError("dictionary: " + what + " has length " + std::to_string(v.size()));
        if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-6) throw ShapeError("dictionary: " + what + " is not unit norm");
    };
    for (std::size_t i = 0; i < names.size(); ++i) check(vectors[i], "entry '" + names[i] + "'");
    for (std::size_t i = 0; i < canonical.size(); ++i) check(canonical[i], "canonical " + std::to_string(i));
}

double relevancy_score(const Eigen::Ref<const VecX>& feat, const Eigen::Ref<const VecX>& query,
                       std::span<const VecX> canonical) {
    if (canonical.empty()) throw UsageError("relevancy_score: empty canonical set");
    const double norm = std::max(feat.norm(), 1e-8);
    const double fq = feat.dot(query) / norm;
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& c : canonical) worst = std::max(worst, feat.dot(c) / norm);
    // exp(fq) / (exp(fq) + exp(fc)) is smallest for the largest canonical affinity
    return 1.0 / (1.0 + std::exp(worst - fq));
}

ScalarMap relevancy_map(const FeatureImage& decoded, const VecX& query, std::span<const VecX> canonical) {
    if (decoded.channels != query.size()) throw ShapeError("relevancy_map: feature and query dimensions differ");
    ScalarMap out(decoded.height, decoded.width, 0.0);
    for (std::size_t p = 0; p < decoded.pixel_count(); ++p) {
        out.data[p] = relevancy_score(Eigen::Map<const VecX>(decoded.pixel(p), decoded.channels), query, canonical);
    }
    return out;
}

const char* to_string(Branch b) {
    switch (b) {
        case Branch::region: return "region";
        case Branch::context: return "context";
        case Branch::mean: return "mean";
    }
    return "?";
}

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::ours: return "ours";
        case Strategy::mean: return "mean";
        case Strategy::fixed_region: return "fixed_region";
        case Strategy::fixed_context: return "fixed_context";
        case Strategy::upper_bound: return "upper_bound";
    }
    return "?";
}

Strategy parse_strategy(const std::string& s) {
    for (auto st : {Strategy::ours, Strategy::mean, Strategy::fixed_region, Strategy::fixed_context, Strategy::upper_bound}) {
        if (s == to_string(st)) return st;
    }
    throw UsageError("unknown strategy '" + s + "' (ours|mean|fixed_region|fixed_context|upper_bound)");
}

Mask threshold_map(const ScalarMap& map, double threshold, const Mask& loss_mask) {
    if (!loss_mask.same_shape(map.height, map.width)) throw ShapeError("threshold_map: mask shape mismatch");
    Mask out(map.height, map.width, 0);
    for (std::size_t p = 0; p < map.size(); ++p) out.data[p] = (loss_mask.data[p] && map.data[p] >= threshold) ? 1 : 0;
    return out;
}

bool masked_argmax(const ScalarMap& map, const Mask& loss_mask, int& row, int& col, double& value) {
    if (!loss_mask.same_shape(map.height, map.width)) throw ShapeError("masked_argmax: mask shape mismatch");
    bool found = false;
    for (std::size_t p = 0; p < map.size(); ++p) {
        if (!loss_mask.data[p]) continue;
        if (!found || map.data[p] > value) {
            value = map.data[p];
            row = static_cast<int>(p / map.width);
            col = static_cast<int>(p % map.width);
            found = true;
        }
    }
    return found;
}

QueryResult query_decoded(const FeatureImage& decoded_region, const FeatureImage& decoded_context, const VecX& query,
                          std::span<const VecX> canonical, double threshold, const Mask& loss_mask) {
    QueryResult res;
    res.relevancy_region = relevancy_map(decoded_region, query, canonical);
    res.relevancy_context = relevancy_map(decoded_context, query, canonical);
    if (decoded_region.height != decoded_context.height || decoded_region.width != decoded_context.width ||
        decoded_region.channels != decoded_context.channels) {
        throw ShapeError("query_decoded: branch images differ in shape");
    }
    FeatureImage mean(decoded_region.height, decoded_region.width, decoded_region.channels);
    for (std::size_t p = 0; p < mean.pixel_count(); ++p) {
        const Eigen::Map<const VecX> r(decoded_region.pixel(p), mean.channels), c(decoded_context.pixel(p), mean.channels);
        Eigen::Map<VecX>(mean.pixel(p), mean.channels) = 0.5 * (r + c);
    }
    res.relevancy_mean = relevancy_map(mean, query, canonical);
    int rr = -1, rc = -1, cr = -1, cc = -1;
    const bool any = masked_argmax(res.relevancy_region, loss_mask, rr, rc, res.max_region);
    masked_argmax(res.relevancy_context, loss_mask, cr, cc, res.max_context);
    if (!any) {
        res.empty = true;
        res.mask = Mask(loss_mask.height, loss_mask.width, 0);
        return res;
    }
    const bool region = res.max_region >= res.max_context;
    res.selected = region ? Branch::region : Branch::context;
    res.argmax_row = region ? rr : cr;
    res.argmax_col = region ? rc : cc;
    res.max_score = region ? res.max_region : res.max_context;
    res.mask = threshold_map(region ? res.relevancy_region : res.relevancy_context, threshold, loss_mask);
    return res;
}

QueryResult query_view(const RenderOutput& rendered, const CodecPair& codecs, const EmbeddingDictionary& dict,
                       const std::string& query_name, double threshold, const Mask& loss_mask) {
    const VecX& query = dict.lookup(query_name);
    if (!(threshold > 0.0 && threshold <= 1.0)) throw UsageError("query_view: threshold must lie in (0, 1]");
    if (!loss_mask.same_shape(rendered.alpha.height, rendered.alpha.width)) {
        throw ShapeError("query_view: loss mask shape mismatch");
    }
    return query_decoded(decode(codecs.region, rendered.feat_region), decode(codecs.context, rendered.feat_context),
                         query, dict.canonical, threshold, loss_mask);
}

StrategyResult select_branch_strategy(const ScalarMap& region, const ScalarMap& context, Strategy strategy,
                                      double threshold, const Mask& loss_mask, const Mask* gt,
                                      const ScalarMap* mean_map) {
    if (region.height != context.height || region.width != context.width) {
        throw ShapeError("select_branch_strategy: map shapes differ");
    }
    switch (strategy) {
        case Strategy::fixed_region: return {region, Branch::region};
        case Strategy::fixed_context: return {context, Branch::context};
        case Strategy::mean: {
            if (mean_map) {
                if (!mean_map->same_shape(region.height, region.width)) throw ShapeError("select_branch_strategy: mean map shape");
                return {*mean_map, Branch::mean};
            }
            StrategyResult r{region, Branch::mean};
            for (std::size_t p = 0; p < r.map.size(); ++p) r.map.data[p] = 0.5 * (region.data[p] + context.data[p]);
            return r;
        }
        case Strategy::ours: {
            int row, col;
            double mr = 0.0, mc = 0.0;
            masked_argmax(region, loss_mask, row, col, mr);
            masked_argmax(context, loss_mask, row, col, mc);
            return mr >= mc ? StrategyResult{region, Branch::region} : StrategyResult{context, Branch::context};
        }
        case Strategy::upper_bound: {
            if (gt == nullptr) throw UsageError("select_branch_strategy: upper_bound needs a ground-truth mask");
            const double ir = iou(threshold_map(region, threshold, loss_mask), *gt, loss_mask);
            const double ic = iou(threshold_map(context, threshold, loss_mask), *gt, loss_mask);
            return ir >= ic ? StrategyResult{region, Branch::region} : StrategyResult{context, Branch::context};
        }
    }
    throw UsageError("select_branch_strategy: unknown strategy");
}

}  // namespace gsem
