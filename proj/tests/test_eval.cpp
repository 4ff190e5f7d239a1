#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gsem/error.hpp"
#include "gsem/eval.hpp"
#include "gsem/metrics.hpp"
#include "gsem/synthlab.hpp"

using namespace gsem;

namespace {

Mask random_mask(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Mask m(h, w);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng() % 2);
    return m;
}

EvalRecord rec(const std::string& q, Strategy s, double iou_v, bool loc, Branch b = Branch::region, double ir = 0.0,
               double ic = 0.0) {
    EvalRecord r;
    r.scene_id = "s";
    r.query = q;
    r.strategy = s;
    r.iou = iou_v;
    r.localized = loc;
    r.branch = b;
    r.iou_region = ir;
    r.iou_context = ic;
    return r;
}

PipelineConfig small_pipeline() {
    PipelineConfig cfg;
    cfg.scene.seed = 7;
    cfg.scene.gaussians_per_cluster = 12;
    cfg.scene.image_size = 32;
    cfg.fit.iterations = 300;
    cfg.fit.seed = 7;
    cfg.fit.threads = 1;
    cfg.eval.threads = 1;
    cfg.eval.strategies = {Strategy::ours, Strategy::fixed_region, Strategy::upper_bound};
    return cfg;
}

}  // namespace

TEST(Iou, Examples) {
    const Mask full(4, 4, 1);
    Mask gt(4, 4, 0);
    for (int c = 0; c < 4; ++c) gt(1, c) = gt(2, c) = 1;
    EXPECT_EQ(iou(gt, gt, full), 1.0);
    Mask disjoint(4, 4, 0);
    disjoint(0, 0) = 1;
    EXPECT_EQ(iou(disjoint, gt, full), 0.0);
    Mask half(4, 4, 0);
    for (int c = 0; c < 4; ++c) half(1, c) = 1;
    EXPECT_EQ(iou(half, gt, full), 0.5);
}

TEST(Iou, EmptyUnionIsOneAndMaskApplies) {
    const Mask none(3, 3, 0);
    EXPECT_EQ(iou(none, none, Mask(3, 3, 1)), 1.0);
    Mask p(3, 3, 0), m(3, 3, 1);
    p(0, 0) = 1;
    m(0, 0) = 0;
    EXPECT_EQ(iou(p, none, m), 1.0);  // the only disagreement is outside the loss mask
}

TEST(Iou, SymmetricAndSelfOne) {
    const Mask m = random_mask(8, 8, 1);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Mask a = random_mask(8, 8, 10 + s), b = random_mask(8, 8, 50 + s);
        EXPECT_EQ(iou(a, b, m), iou(b, a, m));
        EXPECT_EQ(iou(a, a, Mask(8, 8, 1)), 1.0);
    }
}

TEST(Iou, ShapeMismatch) { EXPECT_THROW(iou(Mask(2, 2), Mask(2, 3), Mask(2, 2)), ShapeError); }

TEST(Localization, Examples) {
    Mask gt(3, 3, 0);
    gt(1, 1) = 1;
    EXPECT_TRUE(localization_accuracy(1, 1, gt));
    EXPECT_FALSE(localization_accuracy(0, 1, gt));
    EXPECT_FALSE(localization_accuracy(1, 1, Mask(3, 3, 0)));
    EXPECT_THROW(localization_accuracy(3, 0, gt), UsageError);
}

TEST(Psnr, Examples) {
    FeatureImage a(4, 4, 3, 0.2), b(4, 4, 3, 0.2);
    const Mask m(4, 4, 1);
    EXPECT_EQ(psnr(a, b, m), 99.0);
    FeatureImage zero(4, 4, 3, 0.0), one(4, 4, 3, 1.0);
    EXPECT_NEAR(psnr(zero, one, m), 0.0, 1e-12);
    FeatureImage c(4, 4, 3, 0.3);
    EXPECT_NEAR(psnr(a, c, m), 20.0, 1e-9);  // difference 0.1 everywhere, MSE 0.01
    EXPECT_THROW(psnr(a, b, Mask(4, 4, 0)), UsageError);
}

TEST(Aggregate, MatchesBruteForce) {
    std::vector<EvalRecord> rs;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double sum = 0.0;
    int loc = 0;
    for (int i = 0; i < 37; ++i) {
        const bool l = u(rng) > 0.4;
        rs.push_back(rec("q" + std::to_string(i), Strategy::ours, u(rng), l));
        sum += rs.back().iou;
        loc += l;
    }
    const Aggregates a = aggregate(rs);
    EXPECT_TRUE(a.defined);
    EXPECT_EQ(a.count, 37u);
    EXPECT_NEAR(a.miou, sum / 37.0, 1e-15);
    EXPECT_NEAR(a.la, 100.0 * loc / 37.0, 1e-12);
    EXPECT_FALSE(aggregate({}).defined);
}

TEST(StrategyReport, HitRateUndefinedWhenBranchesTie) {
    std::vector<EvalRecord> rs{rec("a", Strategy::ours, 0.5, true, Branch::region, 0.50, 0.52),
                               rec("a", Strategy::upper_bound, 0.52, true, Branch::context, 0.50, 0.52)};
    const StrategyReport r = strategy_report(rs);
    EXPECT_EQ(r.hit_denominator, 0u);
    EXPECT_FALSE(r.hit_rate.has_value());
    std::ostringstream os;
    write_strategy_csv(os, r);
    EXPECT_NE(os.str().find("NA"), std::string::npos);
}

TEST(StrategyReport, HitRateHundredWhenChoicesAgree) {
    std::vector<EvalRecord> rs;
    for (int i = 0; i < 5; ++i) {
        const Branch b = i % 2 ? Branch::context : Branch::region;
        const double ir = i % 2 ? 0.2 : 0.9, ic = i % 2 ? 0.8 : 0.1;
        rs.push_back(rec("q" + std::to_string(i), Strategy::ours, std::max(ir, ic), true, b, ir, ic));
        rs.push_back(rec("q" + std::to_string(i), Strategy::upper_bound, std::max(ir, ic), true, b, ir, ic));
    }
    const StrategyReport r = strategy_report(rs);
    EXPECT_EQ(r.hit_denominator, 5u);
    EXPECT_EQ(r.hits, 5u);
    ASSERT_TRUE(r.hit_rate.has_value());
    EXPECT_EQ(*r.hit_rate, 100.0);
}

TEST(StrategyReport, MismatchedRecordSetsRejected) {
    std::vector<EvalRecord> rs{rec("a", Strategy::ours, 0.5, true), rec("b", Strategy::upper_bound, 0.5, true)};
    EXPECT_THROW(strategy_report(rs), UsageError);
    std::vector<EvalRecord> dup{rec("a", Strategy::ours, 0.5, true), rec("a", Strategy::ours, 0.6, true)};
    EXPECT_THROW(strategy_report(dup), UsageError);
}

TEST(Sweep, AxisNames) {
    EXPECT_EQ(parse_sweep_axis("threshold"), SweepAxis::threshold);
    EXPECT_EQ(parse_sweep_axis("feat_dim"), SweepAxis::feat_dim);
    EXPECT_THROW(parse_sweep_axis("lr"), UsageError);
}

TEST(Sweep, EmptyAndInvalidValuesRejected) {
    const PipelineConfig cfg = small_pipeline();
    EXPECT_THROW(sweep(SweepAxis::threshold, std::vector<double>{}, cfg), UsageError);
    EXPECT_THROW(sweep(SweepAxis::threshold, std::vector<double>{1.5}, cfg), UsageError);
    EXPECT_THROW(sweep(SweepAxis::feat_dim, std::vector<double>{2.5}, cfg), UsageError);
}

class Pipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() { result_ = new PipelineResult(run_pipeline(small_pipeline())); }
    static void TearDownTestSuite() { delete result_; }
    static PipelineResult* result_;
};
PipelineResult* Pipeline::result_ = nullptr;

TEST_F(Pipeline, RecordsSortedAndComplete) {
    const auto& rs = result_->eval.records;
    // 2 held-out views x 3 classes x 3 strategies, minus classes absent from a view
    EXPECT_GT(rs.size(), 0u);
    EXPECT_EQ(rs.size() % 3, 0u);
    for (std::size_t i = 1; i < rs.size(); ++i) {
        const auto& a = rs[i - 1];
        const auto& b = rs[i];
        EXPECT_TRUE(std::tie(a.scene_id, a.view_index, a.query, a.strategy) <
                    std::tie(b.scene_id, b.view_index, b.query, b.strategy));
    }
    for (const auto& r : rs) {
        EXPECT_GE(r.iou, 0.0);
        EXPECT_LE(r.iou, 1.0);
    }
}

TEST_F(Pipeline, UpperBoundDominatesFixedRegion) {
    const auto ub = result_->eval.aggregates(Strategy::upper_bound);
    const auto fr = result_->eval.aggregates(Strategy::fixed_region);
    EXPECT_GE(ub.miou, fr.miou);
    const auto ubr = result_->eval.for_strategy(Strategy::upper_bound);
    const auto frr = result_->eval.for_strategy(Strategy::fixed_region);
    ASSERT_EQ(ubr.size(), frr.size());
    for (std::size_t i = 0; i < ubr.size(); ++i) EXPECT_GE(ubr[i].iou, frr[i].iou);
}

TEST_F(Pipeline, ZeroQueriesGiveUndefinedAggregates) {
    const std::vector<std::string> none;
    EvalOptions o;
    o.threads = 1;
    const EvalResult e = evaluate_scene(result_->fit.field, result_->fit.codecs, result_->dict, result_->held_out,
                                        result_->scene.classes, none, o);
    EXPECT_TRUE(e.records.empty());
    EXPECT_FALSE(e.aggregates(Strategy::ours).defined);
}

TEST_F(Pipeline, UnknownQueriesRejected) {
    const std::vector<std::string> bad{"zebra"};
    EXPECT_THROW(evaluate_scene(result_->fit.field, result_->fit.codecs, result_->dict, result_->held_out,
                                result_->scene.classes, bad, EvalOptions{}),
                 LookupError);
}

TEST_F(Pipeline, AbsentClassSkippedWithWarning) {
    std::vector<EvalView> views = result_->held_out;
    for (auto& v : views)
        for (auto& l : v.gt.data)
            if (l == 1) l = 0;  // remove the first class from the ground truth
    const std::vector<std::string> q{result_->scene.classes[0]};
    EvalOptions o;
    o.threads = 1;
    const EvalResult e =
        evaluate_scene(result_->fit.field, result_->fit.codecs, result_->dict, views, result_->scene.classes, q, o);
    EXPECT_TRUE(e.records.empty());
    EXPECT_EQ(e.warnings.size(), views.size());
}

TEST_F(Pipeline, SingleThresholdSweepMatchesEvaluation) {
    PipelineConfig cfg = small_pipeline();
    const std::vector<double> one{0.5};
    const auto rows = sweep(SweepAxis::threshold, one, cfg);
    ASSERT_EQ(rows.size(), 1u);
    const StrategyReport rep = strategy_report(result_->eval.records);
    ASSERT_EQ(rows[0].rows.size(), rep.rows.size());
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
        EXPECT_EQ(rows[0].rows[i].strategy, rep.rows[i].strategy);
        EXPECT_EQ(rows[0].rows[i].agg.miou, rep.rows[i].agg.miou);
        EXPECT_EQ(rows[0].rows[i].agg.la, rep.rows[i].agg.la);
    }
    std::ostringstream os;
    write_sweep_csv(os, SweepAxis::threshold, rows);
    EXPECT_EQ(os.str().rfind("axis,value,strategy,records,miou,la_percent\n", 0), 0u);
}

TEST_F(Pipeline, RecordsCsvHasHeaderAndOneLinePerRecord) {
    std::ostringstream os;
    write_records_csv(os, result_->eval.records);
    const std::string s = os.str();
    EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')), result_->eval.records.size() + 1);
    EXPECT_EQ(s.rfind("scene_id,view,query,strategy,threshold,branch,iou,localized", 0), 0u);
}

TEST_F(Pipeline, DecodeAccuracyOnHeldOutViews) {
    for (const auto& v : result_->held_out) {
        const double a = decode_accuracy(result_->fit.field, result_->fit.codecs.region, Branch::region,
                                         result_->dict, result_->scene.classes, v, 1);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
    EXPECT_THROW(decode_accuracy(result_->fit.field, result_->fit.codecs.region, Branch::mean, result_->dict,
                                 result_->scene.classes, result_->held_out[0], 1),
                 UsageError);
}

TEST(EvaluateFeatures, PerfectSupervisionScoresOne) {
    SceneSpec spec;
    spec.seed = 2;
    const SyntheticScene s = make_scene(spec);
    const EmbeddingDictionary d = make_embeddings(s.classes, spec.embed_dim, 2);
    const FeatureImage r = region_supervision(s.labels[0], d, s.classes);
    EvalOptions o;
    o.strategies = {Strategy::ours, Strategy::upper_bound};
    const EvalResult e =
        evaluate_features(r, r, s.labels[0], labeled_mask(s.labels[0]), d, s.classes, s.classes, o, "x", 0);
    ASSERT_FALSE(e.records.empty());
    for (const auto& rec : e.records) {
        EXPECT_EQ(rec.iou, 1.0);
        EXPECT_TRUE(rec.localized);
    }
}
