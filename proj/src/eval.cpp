#include "gsem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <tuple>

#include "gsem/error.hpp"
#include "gsem/metrics.hpp"
#include "gsem/raster.hpp"

namespace gsem {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr double kCoverageAlpha = 0.5;

Mask effective_loss_mask(const EvalView& view, const RenderOutput& out) {
    if (view.loss_mask.data.empty()) return loss_mask_from_alpha(out.alpha, kCoverageAlpha);
    if (!view.loss_mask.same_shape(out.alpha.height, out.alpha.width)) {
        throw ShapeError("evaluate: loss mask shape differs from the camera");
    }
    return view.loss_mask;
}

Mask class_mask(const LabelMap& gt, int label) {
    Mask m(gt.height, gt.width, 0);
    for (std::size_t p = 0; p < gt.size(); ++p) m.data[p] = gt.data[p] == label ? 1 : 0;
    return m;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

using RecordKey = std::tuple<std::string, int, std::string>;

RecordKey key_of(const EvalRecord& r) { return {r.scene_id, r.view_index, r.query}; }

}  // namespace

Aggregates aggregate(std::span<const EvalRecord> records) {
    Aggregates a;
    a.count = records.size();
    if (records.empty()) return a;
    a.defined = true;
    double iou_sum = 0.0;
    std::size_t hits = 0;
    for (const auto& r : records) {
        iou_sum += r.iou;
        hits += r.localized;
    }
    a.miou = iou_sum / static_cast<double>(records.size());
    a.la = 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
    return a;
}

std::vector<EvalRecord> EvalResult::for_strategy(Strategy s) const {
    std::vector<EvalRecord> out;
    for (const auto& r : records)
        if (r.strategy == s) out.push_back(r);
    return out;
}

Aggregates EvalResult::aggregates(Strategy s) const {
    const auto rs = for_strategy(s);
    return aggregate(rs);
}

namespace {

std::vector<int> query_labels(const EmbeddingDictionary& dict, std::span<const std::string> classes,
                              std::span<const std::string> queries) {
    std::vector<int> labels;
    for (const auto& q : queries) {
        dict.lookup(q);
        const auto it = std::find(classes.begin(), classes.end(), q);
        if (it == classes.end()) throw UsageError("evaluate: query '" + q + "' is not a ground-truth class");
        labels.push_back(static_cast<int>(it - classes.begin()) + 1);
    }
    return labels;
}

void check_options(const EvalOptions& opts) {
    if (!(opts.threshold > 0.0 && opts.threshold <= 1.0)) throw UsageError("evaluate: threshold must lie in (0, 1]");
    if (opts.strategies.empty()) throw UsageError("evaluate: no strategies requested");
}

void sort_records(std::vector<EvalRecord>& records) {
    std::stable_sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
        return std::tie(a.scene_id, a.view_index, a.query, a.strategy) <
               std::tie(b.scene_id, b.view_index, b.query, b.strategy);
    });
}

void evaluate_view(const FeatureImage& dec_region, const FeatureImage& dec_context, const LabelMap& gt_labels,
                   const Mask& loss, const EmbeddingDictionary& dict, std::span<const std::string> queries,
                   std::span<const int> labels, const EvalOptions& opts, const std::string& scene_id, int view_index,
                   EvalResult& res) {
    if (!gt_labels.same_shape(dec_region.height, dec_region.width) || !loss.same_shape(gt_labels.height, gt_labels.width)) {
        throw ShapeError("evaluate: gt or loss mask shape differs from the features in view " + std::to_string(view_index));
    }
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const Mask gt = class_mask(gt_labels, labels[qi]);
        bool present = false;
        for (std::size_t p = 0; p < gt.size() && !present; ++p) present = gt.data[p] && loss.data[p];
        if (!present) {
            res.warnings.push_back("scene " + scene_id + " view " + std::to_string(view_index) + ": class '" +
                                   queries[qi] + "' absent, skipped");
            continue;
        }
        const QueryResult qr =
            query_decoded(dec_region, dec_context, dict.lookup(queries[qi]), dict.canonical, opts.threshold, loss);
        const double ir = iou(threshold_map(qr.relevancy_region, opts.threshold, loss), gt, loss);
        const double ic = iou(threshold_map(qr.relevancy_context, opts.threshold, loss), gt, loss);
        for (Strategy s : opts.strategies) {
            const StrategyResult sr = select_branch_strategy(qr.relevancy_region, qr.relevancy_context, s,
                                                             opts.threshold, loss, &gt, &qr.relevancy_mean);
            EvalRecord rec;
            rec.scene_id = scene_id;
            rec.view_index = view_index;
            rec.query = queries[qi];
            rec.strategy = s;
            rec.branch = sr.branch;
            rec.threshold = opts.threshold;
            rec.iou_region = ir;
            rec.iou_context = ic;
            rec.iou = iou(threshold_map(sr.map, opts.threshold, loss), gt, loss);
            int row = -1, col = -1;
            masked_argmax(sr.map, loss, row, col, rec.max_score);
            rec.localized = localization_accuracy(row, col, gt);
            res.records.push_back(std::move(rec));
        }
    }
}

}  // namespace

EvalResult evaluate_scene(const GaussianField& field, const CodecPair& codecs, const EmbeddingDictionary& dict,
                          std::span<const EvalView> views, std::span<const std::string> classes,
                          std::span<const std::string> queries, const EvalOptions& opts) {
    check_options(opts);
    const std::vector<int> labels = query_labels(dict, classes, queries);
    EvalResult res;
    if (queries.empty()) return res;
    RenderOptions ro;
    ro.threads = opts.threads;
    for (const auto& view : views) {
        const RenderOutput out = render(field, view.camera, ro);
        const Mask loss = effective_loss_mask(view, out);
        evaluate_view(decode(codecs.region, out.feat_region), decode(codecs.context, out.feat_context), view.gt, loss,
                      dict, queries, labels, opts, view.scene_id, view.view_index, res);
    }
    sort_records(res.records);
    return res;
}

EvalResult evaluate_features(const FeatureImage& region, const FeatureImage& context, const LabelMap& gt,
                             const Mask& loss_mask, const EmbeddingDictionary& dict,
                             std::span<const std::string> classes, std::span<const std::string> queries,
                             const EvalOptions& opts, const std::string& scene_id, int view_index) {
    check_options(opts);
    const std::vector<int> labels = query_labels(dict, classes, queries);
    EvalResult res;
    evaluate_view(region, context, gt, loss_mask, dict, queries, labels, opts, scene_id, view_index, res);
    sort_records(res.records);
    return res;
}

const Aggregates& StrategyReport::of(Strategy s) const {
    for (const auto& r : rows)
        if (r.strategy == s) return r.agg;
    throw UsageError(std::string("strategy report: no rows for '") + to_string(s) + "'");
}

StrategyReport strategy_report(std::span<const EvalRecord> records, double gap) {
    std::map<Strategy, std::vector<EvalRecord>> by;
    for (const auto& r : records) by[r.strategy].push_back(r);

    StrategyReport rep;
    std::optional<std::set<RecordKey>> keys;
    for (const auto& [s, rs] : by) {
        std::set<RecordKey> k;
        for (const auto& r : rs)
            if (!k.insert(key_of(r)).second) throw UsageError("strategy report: duplicate record for one strategy");
        if (keys && *keys != k) throw UsageError("strategy report: strategies cover different record sets");
        keys = std::move(k);
        rep.rows.push_back({s, aggregate(rs)});
    }

    const auto ours = by.find(Strategy::ours);
    const auto ub = by.find(Strategy::upper_bound);
    if (ours == by.end() || ub == by.end()) return rep;
    std::map<RecordKey, const EvalRecord*> ub_by_key;
    for (const auto& r : ub->second) ub_by_key[key_of(r)] = &r;
    for (const auto& r : ours->second) {
        if (!(std::abs(r.iou_region - r.iou_context) > gap)) continue;
        ++rep.hit_denominator;
        rep.hits += ub_by_key.at(key_of(r))->branch == r.branch;
    }
    if (rep.hit_denominator > 0) {
        rep.hit_rate = 100.0 * static_cast<double>(rep.hits) / static_cast<double>(rep.hit_denominator);
    }
    return rep;
}

double decode_accuracy(const GaussianField& field, const MlpCodec& codec, Branch branch,
                       const EmbeddingDictionary& dict, std::span<const std::string> classes, const EvalView& view,
                       int threads) {
    if (branch == Branch::mean) throw UsageError("decode_accuracy: pick the region or context branch");
    std::vector<int> dict_index;
    for (const auto& c : classes) {
        const auto i = dict.find(c);
        if (!i) throw LookupError("decode_accuracy: class '" + c + "' missing from dictionary");
        dict_index.push_back(static_cast<int>(*i));
    }
    RenderOptions ro;
    ro.threads = threads;
    const RenderOutput out = render(field, view.camera, ro);
    if (!view.gt.same_shape(out.alpha.height, out.alpha.width)) throw ShapeError("decode_accuracy: gt shape mismatch");
    const Grid<int> cls =
        classify_pixels(decode(codec, branch == Branch::region ? out.feat_region : out.feat_context), dict);
    std::size_t total = 0, correct = 0;
    for (std::size_t p = 0; p < view.gt.size(); ++p) {
        const int label = view.gt.data[p];
        if (label == 0 || (!view.loss_mask.data.empty() && !view.loss_mask.data[p])) continue;
        if (label > static_cast<int>(classes.size())) throw ShapeError("decode_accuracy: label outside class list");
        ++total;
        correct += cls.data[p] == dict_index[label - 1];
    }
    if (total == 0) throw UsageError("decode_accuracy: view has no labeled pixels");
    return static_cast<double>(correct) / static_cast<double>(total);
}

void PipelineConfig::validate() const {
    scene.validate();
    fit.validate();
    if (train_views < 1 || train_views > scene.views) throw UsageError("pipeline: train_views must lie in [1, views]");
    if (blur_radius < 0) throw UsageError("pipeline: blur_radius must be >= 0");
    for (double r : {region_corruption, context_corruption}) {
        if (!(r >= 0.0 && r <= 1.0)) throw UsageError("pipeline: corruption rates must lie in [0, 1]");
    }
}

std::vector<EvalView> eval_views(const SyntheticScene& scene, std::span<const int> view_indices,
                                 const std::string& scene_id) {
    std::vector<EvalView> out;
    for (int i : view_indices) {
        if (i < 0 || i >= static_cast<int>(scene.cameras.size())) throw UsageError("eval_views: view index out of range");
        EvalView v;
        v.scene_id = scene_id;
        v.view_index = i;
        v.camera = scene.cameras[i];
        v.gt = scene.labels[i];
        out.push_back(std::move(v));
    }
    return out;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    PipelineResult res;
    res.scene = make_scene(cfg.scene);
    std::vector<std::string> names = cfg.scene.classes;
    names.insert(names.end(), cfg.scene.distractors.begin(), cfg.scene.distractors.end());
    res.dict = make_embeddings(names, cfg.scene.embed_dim, cfg.scene.seed, cfg.scene.canonical_count,
                               cfg.scene.canonical_affinity);
    const auto& classes = res.scene.classes;
    for (int i = 0; i < cfg.train_views; ++i) {
        SupervisionView v = make_supervision_view(res.scene.cameras[i], res.scene.labels[i], res.dict, classes,
                                                  cfg.blur_radius);
        const std::uint64_t s = splitmix(cfg.corruption_seed ^ splitmix(static_cast<std::uint64_t>(i)));
        if (cfg.region_corruption > 0.0) {
            v.target_region = corrupt_supervision(v.target_region, res.scene.labels[i], cfg.region_corruption, res.dict,
                                                  classes, s);
        }
        if (cfg.context_corruption > 0.0) {
            v.target_context = corrupt_supervision(v.target_context, res.scene.labels[i], cfg.context_corruption,
                                                   res.dict, classes, splitmix(s));
        }
        res.train.push_back(std::move(v));
    }
    std::vector<int> held;
    for (int i = cfg.train_views; i < cfg.scene.views; ++i) held.push_back(i);
    if (held.empty()) {
        for (int i = 0; i < cfg.train_views; ++i) held.push_back(i);
    }
    res.held_out = eval_views(res.scene, held, "synth-" + std::to_string(cfg.scene.seed));

    res.fit = fit_semantics(res.scene.field, res.train, cfg.fit);
    const std::vector<std::string>& queries = cfg.queries.empty() ? classes : cfg.queries;
    res.eval = evaluate_scene(res.fit.field, res.fit.codecs, res.dict, res.held_out, classes, queries, cfg.eval);
    return res;
}

const char* to_string(SweepAxis a) { return a == SweepAxis::threshold ? "threshold" : "feat_dim"; }

SweepAxis parse_sweep_axis(const std::string& s) {
    if (s == "threshold") return SweepAxis::threshold;
    if (s == "feat_dim") return SweepAxis::feat_dim;
    throw UsageError("unknown sweep axis '" + s + "' (threshold|feat_dim)");
}

namespace {

std::vector<StrategyRow> rows_of(const EvalResult& e, std::span<const Strategy> strategies) {
    std::vector<StrategyRow> rows;
    for (Strategy s : strategies) rows.push_back({s, e.aggregates(s)});
    return rows;
}

}  // namespace

std::vector<SweepRow> sweep(SweepAxis axis, std::span<const double> values, const PipelineConfig& cfg) {
    if (values.empty()) throw UsageError("sweep: no values");
    std::vector<SweepRow> out;
    if (axis == SweepAxis::threshold) {
        for (double v : values) {
            if (!(v > 0.0 && v <= 1.0)) throw UsageError("sweep: thresholds must lie in (0, 1]");
        }
        PipelineConfig c = cfg;
        c.eval.threshold = values[0];
        const PipelineResult base = run_pipeline(c);
        const std::vector<std::string>& queries = cfg.queries.empty() ? base.scene.classes : cfg.queries;
        for (double v : values) {
            EvalOptions eo = cfg.eval;
            eo.threshold = v;
            const EvalResult e = evaluate_scene(base.fit.field, base.fit.codecs, base.dict, base.held_out,
                                                base.scene.classes, queries, eo);
            out.push_back({v, rows_of(e, cfg.eval.strategies)});
        }
        return out;
    }
    for (double v : values) {
        if (!(v >= 1.0) || v != std::floor(v)) throw UsageError("sweep: feat_dim values must be positive integers");
    }
    for (double v : values) {
        PipelineConfig c = cfg;
        c.scene.feat_dim = static_cast<int>(v);
        const PipelineResult r = run_pipeline(c);
        out.push_back({v, rows_of(r.eval, cfg.eval.strategies)});
    }
    return out;
}

void write_records_csv(std::ostream& os, std::span<const EvalRecord> records) {
    os << "scene_id,view,query,strategy,threshold,branch,iou,localized,iou_region,iou_context,max_score\n";
    for (const auto& r : records) {
        os << r.scene_id << ',' << r.view_index << ',' << r.query << ',' << to_string(r.strategy) << ','
           << fmt(r.threshold) << ',' << to_string(r.branch) << ',' << fmt(r.iou) << ',' << (r.localized ? 1 : 0)
           << ',' << fmt(r.iou_region) << ',' << fmt(r.iou_context) << ',' << fmt(r.max_score) << '\n';
    }
}

void write_strategy_csv(std::ostream& os, const StrategyReport& report) {
    os << "strategy,records,miou,la_percent,hit_denominator,hit_rate_percent\n";
    const std::string hr = report.hit_rate ? fmt(*report.hit_rate) : "NA";
    for (const auto& row : report.rows) {
        os << to_string(row.strategy) << ',' << row.agg.count << ',' << (row.agg.defined ? fmt(row.agg.miou) : "NA")
           << ',' << (row.agg.defined ? fmt(row.agg.la) : "NA") << ',' << report.hit_denominator << ',' << hr << '\n';
    }
}

void write_sweep_csv(std::ostream& os, SweepAxis axis, std::span<const SweepRow> rows) {
    os << "axis,value,strategy,records,miou,la_percent\n";
    for (const auto& r : rows) {
        for (const auto& s : r.rows) {
            os << to_string(axis) << ',' << fmt(r.value) << ',' << to_string(s.strategy) << ',' << s.agg.count << ','
               << (s.agg.defined ? fmt(s.agg.miou) : "NA") << ',' << (s.agg.defined ? fmt(s.agg.la) : "NA") << '\n';
        }
    }
}

}  // namespace gsem
