// gsem: command-line front end for the semantic gaussian field engine.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gsem/codec.hpp"
#include "gsem/distill.hpp"
#include "gsem/error.hpp"
#include "gsem/eval.hpp"
#include "gsem/gradcheck.hpp"
#include "gsem/io.hpp"
#include "gsem/parallel.hpp"
#include "gsem/query.hpp"
#include "gsem/raster.hpp"
#include "gsem/synthlab.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gsem;

namespace {

constexpr const char* kToolVersion = "1.0.0";

enum Exit { kOk = 0, kUsage = 1, kFormat = 2, kNumeric = 3 };

// Flags shared by every subcommand.
struct Common {
    int threads = 0;
    std::uint64_t seed = 0;
};

// Records what a run read and how it was configured; written next to outputs.
class Manifest {
public:
    explicit Manifest(CLI::App* sub) : sub_(sub), start_(std::chrono::steady_clock::now()) {}

    void input(const fs::path& p) { inputs_[p.string()] = io::digest(io::read_file(p)); }
    void output(const fs::path& p) { outputs_.push_back(p.filename().string()); }

    void write(const fs::path& dir, const Common& common) const {
        json j;
        j["subcommand"] = sub_->get_name();
        j["tool_version"] = kToolVersion;
        j["seed"] = common.seed;
        j["threads"] = resolve_threads(common.threads);
        json flags = json::object();
        for (const CLI::Option* opt : sub_->get_options()) {
            if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
            std::string name = opt->get_name();
            while (!name.empty() && name.front() == '-') name.erase(name.begin());
            if (opt->count() > 0) {
                const auto& r = opt->results();
                if (opt->get_expected_max() > 1) {
                    flags[name] = r;
                } else {
                    flags[name] = r.empty() ? std::string() : r.back();
                }
            } else {
                flags[name] = opt->get_default_str();
            }
        }
        j["flags"] = flags;
        j["inputs"] = inputs_;
        j["outputs"] = outputs_;
        j["duration_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        io::write_text(dir / "manifest.json", j.dump(2) + "\n");
    }

private:
    CLI::App* sub_;
    std::chrono::steady_clock::time_point start_;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> outputs_;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--threads", c.threads, "Worker count, 0 = available parallelism")->capture_default_str();
    sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

std::string two_digits(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d", i);
    return buf;
}

// ---- scene directories -------------------------------------------------------------------------

struct SceneDir {
    fs::path root;
    fs::path field() const { return root / "field.gsem"; }
    fs::path dict() const { return root / "dict.json"; }
    fs::path index() const { return root / "scene.json"; }
    fs::path camera(int v) const { return root / "cameras" / ("view_" + two_digits(v) + ".json"); }
    fs::path labels(int v) const { return root / "labels" / ("view_" + two_digits(v) + ".glbl"); }
    fs::path region(int v) const { return root / "supervision" / ("region_" + two_digits(v) + ".fmap"); }
    fs::path context(int v) const { return root / "supervision" / ("context_" + two_digits(v) + ".fmap"); }
};

struct SceneIndex {
    std::vector<std::string> classes;
    std::vector<int> train;
    std::vector<int> held_out;
};

SceneIndex read_index(const SceneDir& dir) {
    const std::string text = io::read_text(dir.index());
    json j;
    try {
        j = json::parse(text);
        SceneIndex idx;
        idx.classes = j.at("classes").get<std::vector<std::string>>();
        idx.train = j.at("train_views").get<std::vector<int>>();
        idx.held_out = j.at("held_out_views").get<std::vector<int>>();
        return idx;
    } catch (const json::parse_error& e) {
        throw FormatError("scene.json: " + std::string(e.what()), e.byte);
    } catch (const json::exception& e) {
        throw FormatError("scene.json: " + std::string(e.what()), 0);
    }
}

// ---- synth -------------------------------------------------------------------------------------

struct SynthArgs {
    int classes = 3;
    std::vector<std::string> names;
    int clusters_per_class = 1;
    int gaussians_per_cluster = 24;
    int distractors = 0;
    int feat_dim = 16;
    int embed_dim = 32;
    int views = 6;
    int train_views = 4;
    int image_size = 40;
    int blur_radius = 2;
    double canonical_affinity = kDefaultCanonicalAffinity;
    double region_corruption = 0.0;
    double context_corruption = 0.0;
    std::string out;
};

std::vector<std::string> class_names(const SynthArgs& a) {
    if (!a.names.empty()) return a.names;
    static const char* kDefault[] = {"chair", "table", "lamp", "sofa", "bed", "desk", "shelf", "plant", "monitor", "door"};
    std::vector<std::string> out;
    for (int i = 0; i < a.classes; ++i) {
        out.push_back(i < 10 ? std::string(kDefault[i]) : "class" + std::to_string(i));
    }
    return out;
}

int run_synth(const SynthArgs& a, const Common& c, Manifest& m) {
    if (a.classes <= 0 && a.names.empty()) throw UsageError("synth: --classes must be positive");
    if (a.train_views < 1 || a.train_views > a.views) throw UsageError("synth: --train-views must lie in [1, views]");
    SceneSpec spec;
    spec.classes = class_names(a);
    spec.clusters_per_class = a.clusters_per_class;
    spec.gaussians_per_cluster = a.gaussians_per_cluster;
    spec.feat_dim = a.feat_dim;
    spec.embed_dim = a.embed_dim;
    spec.views = a.views;
    spec.image_size = a.image_size;
    spec.seed = c.seed;
    spec.canonical_affinity = a.canonical_affinity;
    for (int i = 0; i < a.distractors; ++i) spec.distractors.push_back("distractor" + std::to_string(i));
    spec.validate();
    const SyntheticScene scene = make_scene(spec);
    std::vector<std::string> names = spec.classes;
    names.insert(names.end(), spec.distractors.begin(), spec.distractors.end());
    const EmbeddingDictionary dict =
        make_embeddings(names, spec.embed_dim, spec.seed, spec.canonical_count, spec.canonical_affinity);

    const SceneDir dir{a.out};
    fs::create_directories(dir.root / "cameras");
    fs::create_directories(dir.root / "labels");
    fs::create_directories(dir.root / "supervision");
    io::save_field(dir.field(), scene.field);
    io::save_dictionary(dir.dict(), dict);
    for (int v = 0; v < spec.views; ++v) {
        io::save_camera(dir.camera(v), scene.cameras[v]);
        io::save_label_map(dir.labels(v), scene.labels[v]);
        SupervisionView sv = make_supervision_view(scene.cameras[v], scene.labels[v], dict, scene.classes, a.blur_radius);
        if (a.region_corruption > 0.0) {
            sv.target_region = corrupt_supervision(sv.target_region, scene.labels[v], a.region_corruption, dict,
                                                   scene.classes, c.seed * 7919 + static_cast<std::uint64_t>(v));
        }
        if (a.context_corruption > 0.0) {
            sv.target_context = corrupt_supervision(sv.target_context, scene.labels[v], a.context_corruption, dict,
                                                    scene.classes, c.seed * 7927 + static_cast<std::uint64_t>(v));
        }
        sv.target_region.mask = sv.loss_mask;
        sv.target_context.mask = sv.loss_mask;
        io::save_feature_image(dir.region(v), sv.target_region);
        io::save_feature_image(dir.context(v), sv.target_context);
    }
    json idx;
    idx["classes"] = scene.classes;
    std::vector<int> train, held;
    for (int v = 0; v < spec.views; ++v) (v < a.train_views ? train : held).push_back(v);
    idx["train_views"] = train;
    idx["held_out_views"] = held;
    idx["image_size"] = spec.image_size;
    idx["seed"] = spec.seed;
    io::write_text(dir.index(), idx.dump(2) + "\n");
    m.output(dir.field());
    m.output(dir.dict());
    m.output(dir.index());
    m.write(dir.root, c);
    std::cout << "synth: " << scene.field.size() << " gaussians, " << spec.views << " views, " << scene.classes.size()
              << " classes -> " << dir.root.string() << "\n";
    return kOk;
}

// ---- fit ---------------------------------------------------------------------------------------

struct FitArgs {
    std::string scene;
    std::string field;  // overrides <scene>/field.gsem
    std::vector<int> views;  // overrides the scene's training views
    FitConfig cfg;
    std::string out;
};

std::vector<SupervisionView> load_views(const SceneDir& dir, const std::vector<int>& views, Manifest& m) {
    std::vector<SupervisionView> out;
    for (int v : views) {
        SupervisionView sv;
        m.input(dir.camera(v));
        m.input(dir.region(v));
        m.input(dir.context(v));
        sv.camera = io::load_camera(dir.camera(v));
        sv.target_region = io::load_feature_image(dir.region(v));
        sv.target_context = io::load_feature_image(dir.context(v));
        sv.loss_mask = sv.target_region.has_mask() ? sv.target_region.mask
                                                   : Mask(sv.target_region.height, sv.target_region.width, 1);
        sv.target_region.mask = {};
        sv.target_context.mask = {};
        sv.validate();
        out.push_back(std::move(sv));
    }
    return out;
}

int run_fit(FitArgs& a, const Common& c, Manifest& m) {
    a.cfg.seed = c.seed;
    a.cfg.threads = c.threads;
    a.cfg.validate();
    const SceneDir dir{a.scene};
    const SceneIndex idx = read_index(dir);
    const fs::path field_path = a.field.empty() ? dir.field() : fs::path(a.field);
    m.input(field_path);
    const GaussianField field = io::load_field(field_path);
    const auto views = load_views(dir, a.views.empty() ? idx.train : a.views, m);
    if (a.cfg.log_every > 0) {
        a.cfg.progress = [](int it, double loss) {
            std::cerr << "iter " << it << " loss " << std::setprecision(6) << loss << "\n";
        };
    }
    const FitResult r = fit_semantics(field, views, a.cfg);

    fs::create_directories(a.out);
    const fs::path out{a.out};
    io::save_field(out / "field.gsem", r.field);
    io::save_codec(out / "codec_region.gmlp", r.codecs.region);
    io::save_codec(out / "codec_context.gmlp", r.codecs.context);
    std::ostringstream csv;
    csv << "iteration,loss\n";
    for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", r.loss_history[i]);
        csv << i << ',' << buf << '\n';
    }
    io::write_text(out / "loss.csv", csv.str());
    for (const char* f : {"field.gsem", "codec_region.gmlp", "codec_context.gmlp", "loss.csv"}) m.output(out / f);
    m.write(out, c);
    if (!r.loss_history.empty()) {
        std::cout << "fit: " << r.loss_history.size() << " iterations, loss " << r.loss_history.front() << " -> "
                  << r.loss_history.back() << "\n";
    } else {
        std::cout << "fit: 0 iterations, field unchanged\n";
    }
    return kOk;
}

// ---- render ------------------------------------------------------------------------------------

struct RenderArgs {
    std::string field;
    std::string camera;
    std::vector<double> background{0.0, 0.0, 0.0};
    bool pca = false;
    std::string out;
};

FeatureImage alpha_image(const ScalarMap& alpha) {
    FeatureImage img(alpha.height, alpha.width, 3);
    for (std::size_t p = 0; p < alpha.size(); ++p)
        for (int ch = 0; ch < 3; ++ch) img.pixel(p)[ch] = alpha.data[p];
    return img;
}

int run_render(const RenderArgs& a, const Common& c, Manifest& m) {
    if (a.background.size() != 3) throw UsageError("render: --background takes 3 values");
    m.input(a.field);
    m.input(a.camera);
    const GaussianField field = io::load_field(a.field);
    const Camera cam = io::load_camera(a.camera);
    RenderOptions ro;
    ro.threads = c.threads;
    ro.background = Vec3(a.background[0], a.background[1], a.background[2]);
    const RenderOutput r = render(field, cam, ro);

    const fs::path out{a.out};
    fs::create_directories(out);
    io::write_png(out / "rgb.png", r.rgb);
    io::write_png(out / "alpha.png", alpha_image(r.alpha));
    io::save_feature_image(out / "feat_region.fmap", r.feat_region);
    io::save_feature_image(out / "feat_context.fmap", r.feat_context);
    FeatureImage alpha(r.alpha.height, r.alpha.width, 1);
    alpha.data = r.alpha.data;
    io::save_feature_image(out / "alpha.fmap", alpha);
    for (const char* f : {"rgb.png", "alpha.png", "feat_region.fmap", "feat_context.fmap", "alpha.fmap"}) m.output(out / f);
    if (a.pca) {
        const Mask mask = loss_mask_from_alpha(r.alpha, 0.5);
        if (count(mask) < 3) {
            std::cerr << "render: fewer than 3 covered pixels, PCA image skipped\n";
        } else {
            io::write_png(out / "pca_region.png", pca_visualize(r.feat_region, mask));
            io::write_png(out / "pca_context.png", pca_visualize(r.feat_context, mask));
            m.output(out / "pca_region.png");
            m.output(out / "pca_context.png");
        }
    }
    m.write(out, c);
    const auto& s = r.stats;
    std::cout << "render: " << cam.width << "x" << cam.height << ", " << field.size() << " gaussians, culled "
              << s.total() << " (near " << s.culled_near << ", far " << s.culled_far << ", offscreen "
              << s.culled_offscreen << ", singular " << s.culled_singular << ")\n";
    return kOk;
}

// ---- query -------------------------------------------------------------------------------------

struct QueryArgs {
    std::string field;
    std::string camera;
    std::string model;  // directory holding codec_region.gmlp / codec_context.gmlp
    std::string codec_region;
    std::string codec_context;
    std::string dict;
    std::string text;
    double threshold = kDefaultThreshold;
    std::string strategy = "ours";
    std::string labels;  // ground truth, needed by upper_bound
    std::string mask;    // loss mask source: "alpha" or a GLBL path whose nonzero pixels are valid
    std::string out;
};

CodecPair load_codecs(const std::string& model, const std::string& region, const std::string& context, Manifest& m) {
    fs::path r = region, cx = context;
    if (!model.empty()) {
        if (r.empty()) r = fs::path(model) / "codec_region.gmlp";
        if (cx.empty()) cx = fs::path(model) / "codec_context.gmlp";
    }
    if (r.empty() || cx.empty()) throw UsageError("codecs: give --model DIR or both --codec-region and --codec-context");
    m.input(r);
    m.input(cx);
    return {io::load_codec(r), io::load_codec(cx)};
}

FeatureImage scalar_image(const ScalarMap& map) {
    FeatureImage img(map.height, map.width, 1);
    img.data = map.data;
    return img;
}

int run_query(const QueryArgs& a, const Common& c, Manifest& m) {
    if (!(a.threshold > 0.0 && a.threshold <= 1.0)) throw UsageError("query: --threshold must lie in (0, 1]");
    const Strategy strategy = parse_strategy(a.strategy);
    m.input(a.field);
    m.input(a.camera);
    m.input(a.dict);
    const GaussianField field = io::load_field(a.field);
    const Camera cam = io::load_camera(a.camera);
    const EmbeddingDictionary dict = io::load_dictionary(a.dict);
    const CodecPair codecs = load_codecs(a.model, a.codec_region, a.codec_context, m);
    dict.lookup(a.text);

    RenderOptions ro;
    ro.threads = c.threads;
    const RenderOutput r = render(field, cam, ro);
    Mask loss;
    if (a.mask.empty() || a.mask == "alpha") {
        loss = loss_mask_from_alpha(r.alpha, 0.5);
    } else {
        m.input(a.mask);
        loss = labeled_mask(io::load_label_map(a.mask));
    }
    if (!loss.same_shape(cam.height, cam.width)) throw ShapeError("query: loss mask shape differs from the camera");
    const QueryResult q = query_view(r, codecs, dict, a.text, a.threshold, loss);

    Mask gt;
    if (!a.labels.empty()) {
        m.input(a.labels);
        const LabelMap labels = io::load_label_map(a.labels);
        if (!labels.same_shape(cam.height, cam.width)) throw ShapeError("query: label map shape differs from the camera");
        // label k is dictionary entry k - 1, which is how synth orders classes
        const auto label = static_cast<std::uint16_t>(*dict.find(a.text) + 1);
        gt = Mask(labels.height, labels.width, 0);
        for (std::size_t p = 0; p < labels.size(); ++p) gt.data[p] = labels.data[p] == label ? 1 : 0;
    } else if (strategy == Strategy::upper_bound) {
        throw UsageError("query: --strategy upper_bound needs --labels");
    }
    const StrategyResult sr = select_branch_strategy(q.relevancy_region, q.relevancy_context, strategy, a.threshold,
                                                     loss, gt.data.empty() ? nullptr : &gt, &q.relevancy_mean);
    const Mask mask = threshold_map(sr.map, a.threshold, loss);
    int row = -1, col = -1;
    double max_score = 0.0;
    const bool any = masked_argmax(sr.map, loss, row, col, max_score);

    const fs::path out{a.out};
    fs::create_directories(out);
    io::write_png(out / "mask.png", mask);
    io::save_feature_image(out / "relevancy_region.fmap", scalar_image(q.relevancy_region));
    io::save_feature_image(out / "relevancy_context.fmap", scalar_image(q.relevancy_context));
    json s;
    s["query"] = a.text;
    s["strategy"] = to_string(strategy);
    s["threshold"] = a.threshold;
    s["branch"] = to_string(sr.branch);
    s["max_score"] = max_score;
    s["max_region"] = q.max_region;
    s["max_context"] = q.max_context;
    s["argmax"] = any ? json::array({row, col}) : json(nullptr);
    s["mask_pixels"] = count(mask);
    s["empty_loss_mask"] = q.empty;
    io::write_text(out / "summary.json", s.dump(2) + "\n");
    for (const char* f : {"mask.png", "relevancy_region.fmap", "relevancy_context.fmap", "summary.json"}) m.output(out / f);
    m.write(out, c);
    std::cout << s.dump() << "\n";
    return kOk;
}

// ---- eval --------------------------------------------------------------------------------------

struct EvalArgs {
    std::string scene;
    std::string model;
    std::vector<int> views;  // default: held-out views (all views if none are held out)
    std::vector<std::string> queries;
    double threshold = kDefaultThreshold;
    std::vector<std::string> strategies{"ours", "mean", "fixed_region", "fixed_context", "upper_bound"};
    std::string out;
};

int run_eval(const EvalArgs& a, const Common& c, Manifest& m) {
    const SceneDir dir{a.scene};
    m.input(dir.index());
    const SceneIndex idx = read_index(dir);
    const fs::path model{a.model};
    m.input(model / "field.gsem");
    m.input(dir.dict());
    const GaussianField field = io::load_field(model / "field.gsem");
    const CodecPair codecs = load_codecs(a.model, "", "", m);
    const EmbeddingDictionary dict = io::load_dictionary(dir.dict());

    std::vector<int> view_ids = a.views;
    if (view_ids.empty()) view_ids = idx.held_out.empty() ? idx.train : idx.held_out;
    std::vector<EvalView> views;
    for (int v : view_ids) {
        m.input(dir.camera(v));
        m.input(dir.labels(v));
        EvalView ev;
        ev.scene_id = dir.root.filename().string();
        ev.view_index = v;
        ev.camera = io::load_camera(dir.camera(v));
        ev.gt = io::load_label_map(dir.labels(v));
        views.push_back(std::move(ev));
    }
    EvalOptions eo;
    eo.threshold = a.threshold;
    eo.threads = c.threads;
    eo.strategies.clear();
    for (const auto& s : a.strategies) eo.strategies.push_back(parse_strategy(s));
    const std::vector<std::string>& queries = a.queries.empty() ? idx.classes : a.queries;
    const EvalResult e = evaluate_scene(field, codecs, dict, views, idx.classes, queries, eo);
    for (const auto& w : e.warnings) std::cerr << "warning: " << w << "\n";

    const fs::path out{a.out};
    fs::create_directories(out);
    std::ostringstream rec, agg;
    write_records_csv(rec, e.records);
    const StrategyReport rep = strategy_report(e.records);
    write_strategy_csv(agg, rep);
    io::write_text(out / "records.csv", rec.str());
    io::write_text(out / "aggregates.csv", agg.str());
    m.output(out / "records.csv");
    m.output(out / "aggregates.csv");
    m.write(out, c);
    std::cout << agg.str();
    return kOk;
}

// ---- sweep -------------------------------------------------------------------------------------

struct SweepArgs {
    std::string axis = "threshold";
    std::vector<double> values;
    SynthArgs synth;
    int iterations = 2000;
    std::vector<std::string> strategies{"ours", "mean", "fixed_region", "fixed_context", "upper_bound"};
    double threshold = kDefaultThreshold;
    std::string out;
};

int run_sweep(SweepArgs& a, const Common& c, Manifest& m) {
    const SweepAxis axis = parse_sweep_axis(a.axis);
    std::vector<double> values = a.values;
    if (values.empty()) {
        values = axis == SweepAxis::threshold ? std::vector<double>{0.2, 0.4, 0.5, 0.7}
                                              : std::vector<double>{8, 12, 16, 18};
    }
    PipelineConfig cfg;
    cfg.scene.classes = class_names(a.synth);
    cfg.scene.clusters_per_class = a.synth.clusters_per_class;
    cfg.scene.gaussians_per_cluster = a.synth.gaussians_per_cluster;
    cfg.scene.feat_dim = a.synth.feat_dim;
    cfg.scene.embed_dim = a.synth.embed_dim;
    cfg.scene.views = a.synth.views;
    cfg.scene.image_size = a.synth.image_size;
    cfg.scene.seed = c.seed;
    cfg.scene.canonical_affinity = a.synth.canonical_affinity;
    for (int i = 0; i < a.synth.distractors; ++i) cfg.scene.distractors.push_back("distractor" + std::to_string(i));
    cfg.train_views = a.synth.train_views;
    cfg.blur_radius = a.synth.blur_radius;
    cfg.region_corruption = a.synth.region_corruption;
    cfg.context_corruption = a.synth.context_corruption;
    cfg.corruption_seed = c.seed + 1;
    cfg.fit.iterations = a.iterations;
    cfg.fit.seed = c.seed;
    cfg.fit.threads = c.threads;
    cfg.eval.threads = c.threads;
    cfg.eval.threshold = a.threshold;
    cfg.eval.strategies.clear();
    for (const auto& s : a.strategies) cfg.eval.strategies.push_back(parse_strategy(s));

    const auto rows = sweep(axis, values, cfg);
    const fs::path out{a.out};
    fs::create_directories(out);
    std::ostringstream csv;
    write_sweep_csv(csv, axis, rows);
    io::write_text(out / "sweep.csv", csv.str());
    m.output(out / "sweep.csv");
    m.write(out, c);
    std::cout << csv.str();
    return kOk;
}

// ---- gradcheck ---------------------------------------------------------------------------------

struct GradArgs {
    std::string field;
    std::string camera;
    std::string loss = "cosine";
    int gaussians = 20;
    int feat_dim = 4;
    int embed_dim = 6;
    int size = 16;
    double step = 1e-4;
    double tolerance = 1e-4;
    bool opacity = false;
    std::size_t max_coords = 64;
    std::string out;
};

int run_gradcheck(const GradArgs& a, const Common& c, Manifest& m) {
    if (!(a.step > 0.0)) throw UsageError("gradcheck: --step must be positive");
    GaussianField field;
    Camera cam;
    if (!a.field.empty()) {
        if (a.camera.empty()) throw UsageError("gradcheck: --field needs --camera");
        m.input(a.field);
        m.input(a.camera);
        field = io::load_field(a.field);
        cam = io::load_camera(a.camera);
    } else {
        // small random scene in front of a camera at the origin looking down +z
        std::mt19937_64 rng(c.seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> n(0.0, 1.0);
        field.feat_dim = a.feat_dim;
        for (int i = 0; i < a.gaussians; ++i) {
            SemanticGaussian g = make_gaussian(a.feat_dim, 0);
            const double z = 2.0 + 2.0 * u(rng);
            g.point = Vec3((u(rng) - 0.5) * z * 0.8, (u(rng) - 0.5) * z * 0.8, z);
            g.rotation = Vec4(n(rng), n(rng), n(rng), n(rng)).normalized();
            g.scale = Vec3(0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng));
            g.opacity = 0.2 + 0.7 * u(rng);
            g.sh.col(0) = Vec3(u(rng), u(rng), u(rng));
            for (int k = 0; k < a.feat_dim; ++k) {
                g.feat_region[k] = n(rng);
                g.feat_context[k] = n(rng);
            }
            field.gaussians.push_back(std::move(g));
        }
        cam.fx = cam.fy = a.size;
        cam.cx = cam.cy = a.size / 2.0;
        cam.width = cam.height = a.size;
    }

    GradCheckSpec spec;
    spec.seed = c.seed;
    spec.include_opacity = a.opacity;
    spec.max_coords = a.max_coords;
    CodecPair codecs;
    SupervisionView view;
    if (a.loss == "linear") {
        spec.kind = CheckLoss::linear;
    } else if (a.loss == "cosine") {
        spec.kind = CheckLoss::cosine;
        codecs.region = MlpCodec::init(field.feat_dim, {8}, a.embed_dim, c.seed + 1);
        codecs.context = MlpCodec::init(field.feat_dim, {8}, a.embed_dim, c.seed + 2);
        std::mt19937_64 rng(c.seed + 3);
        std::normal_distribution<double> n(0.0, 1.0);
        // nonzero biases keep decoded features away from the zero-norm kink of the cosine
        for (MlpCodec* codec : {&codecs.region, &codecs.context})
            for (auto& layer : codec->layers)
                for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.5 * n(rng);
        view.camera = cam;
        view.target_region = FeatureImage(cam.height, cam.width, a.embed_dim);
        view.target_context = FeatureImage(cam.height, cam.width, a.embed_dim);
        for (auto& v : view.target_region.data) v = n(rng);
        for (auto& v : view.target_context.data) v = n(rng);
        RenderOptions ro;
        ro.threads = c.threads;
        view.loss_mask = loss_mask_from_alpha(render(field, cam, ro).alpha, 0.05);
        spec.codecs = &codecs;
        spec.view = &view;
    } else {
        throw UsageError("gradcheck: --loss must be linear or cosine");
    }
    const GradCheckReport rep = grad_check(field, cam, spec, a.step, a.tolerance);

    std::ostringstream table;
    table << std::left << std::setw(16) << "param" << std::setw(8) << "index" << std::setw(16) << "analytic"
          << std::setw(16) << "numeric" << "rel_error\n";
    for (const auto& e : rep.entries) {
        table << std::left << std::setw(16) << e.param << std::setw(8) << e.index << std::setw(16)
              << std::setprecision(8) << e.analytic << std::setw(16) << e.numeric << std::setprecision(3) << e.rel_error
              << "\n";
    }
    table << "coords " << rep.entries.size() << ", non-smooth skipped " << rep.nonsmooth_skipped << ", failures " << rep.failures.size() << ", max rel error "
          << std::setprecision(3) << rep.max_rel_error << ", tolerance " << rep.tolerance << "\n";
    std::cout << table.str();
    if (!a.out.empty()) {
        const fs::path out{a.out};
        fs::create_directories(out);
        io::write_text(out / "gradcheck.txt", table.str());
        m.output(out / "gradcheck.txt");
        m.write(out, c);
    }
    if (!rep.passed()) {
        std::cerr << "gradcheck: FAILED\n";
        return kNumeric;
    }
    return kOk;
}

// ---- bench -------------------------------------------------------------------------------------

struct BenchArgs {
    std::vector<int> gaussians{10000, 100000};
    int size = 256;
    int feat_dim = 16;
    std::vector<int> threads;  // default: 1 and the available parallelism
    int fit_iterations = 20;
    int repeats = 3;
    bool reference = false;
    std::string out;
};

GaussianField bench_field(int n, int feat_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    GaussianField f;
    f.feat_dim = feat_dim;
    f.gaussians.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SemanticGaussian g = make_gaussian(feat_dim, 0);
        const double z = 2.0 + 6.0 * u(rng);
        g.point = Vec3((u(rng) - 0.5) * z, (u(rng) - 0.5) * z, z);
        g.rotation = Vec4(nd(rng), nd(rng), nd(rng), nd(rng)).normalized();
        g.scale = Vec3(0.005 + 0.02 * u(rng), 0.005 + 0.02 * u(rng), 0.005 + 0.02 * u(rng));
        g.opacity = 0.3 + 0.6 * u(rng);
        g.sh.col(0) = Vec3(u(rng), u(rng), u(rng));
        for (int k = 0; k < feat_dim; ++k) {
            g.feat_region[k] = nd(rng);
            g.feat_context[k] = nd(rng);
        }
        f.gaussians.push_back(std::move(g));
    }
    return f;
}

template <typename F>
double best_ms(int repeats, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

int run_bench(const BenchArgs& a, const Common& c, Manifest& m) {
    std::vector<int> threads = a.threads;
    if (threads.empty()) {
        threads.push_back(1);
        if (default_threads() > 1) threads.push_back(default_threads());
    }
    Camera cam;
    cam.fx = cam.fy = a.size;
    cam.cx = cam.cy = a.size / 2.0;
    cam.width = cam.height = a.size;

    std::ostringstream csv;
    csv << "kind,gaussians,size,feat_dim,threads,ms,identical_to_1_thread\n";
    std::cout << std::left << std::setw(10) << "kind" << std::setw(11) << "gaussians" << std::setw(8) << "threads"
              << std::setw(12) << "ms" << "identical\n";
    for (int n : a.gaussians) {
        const GaussianField field = bench_field(n, a.feat_dim, c.seed);
        RenderOptions base;
        base.threads = 1;
        const RenderOutput ref = render(field, cam, base);
        auto row = [&](const char* kind, int t, double ms, const char* same) {
            csv << kind << ',' << n << ',' << a.size << ',' << a.feat_dim << ',' << t << ',' << ms << ',' << same << '\n';
            std::cout << std::left << std::setw(10) << kind << std::setw(11) << n << std::setw(8) << t << std::setw(12)
                      << std::fixed << std::setprecision(2) << ms << std::defaultfloat << same << "\n";
        };
        if (a.reference) {
            RenderOutput r;
            const double ms = best_ms(1, [&] { r = render_reference(field, cam, base); });
            row("reference", 1, ms, r.feat_region == ref.feat_region && r.rgb == ref.rgb ? "yes" : "no");
        }
        for (int t : threads) {
            RenderOptions ro;
            ro.threads = t;
            RenderOutput r;
            const double ms = best_ms(a.repeats, [&] { r = render(field, cam, ro); });
            const bool same = r.rgb == ref.rgb && r.feat_region == ref.feat_region && r.feat_context == ref.feat_context &&
                              r.alpha == ref.alpha;
            row("render", t, ms, same ? "yes" : "no");
        }
    }
    if (a.fit_iterations > 0) {
        SceneSpec spec;
        spec.seed = c.seed;
        const SyntheticScene scene = make_scene(spec);
        const EmbeddingDictionary dict = make_embeddings(scene.classes, spec.embed_dim, spec.seed);
        std::vector<SupervisionView> views;
        for (int v = 0; v < 4; ++v) {
            views.push_back(make_supervision_view(scene.cameras[v], scene.labels[v], dict, scene.classes, 2));
        }
        for (int t : threads) {
            FitConfig fc;
            fc.iterations = a.fit_iterations;
            fc.seed = c.seed;
            fc.threads = t;
            const double ms = best_ms(1, [&] { fit_semantics(scene.field, views, fc); });
            csv << "fit," << scene.field.size() << ',' << spec.image_size << ',' << spec.feat_dim << ',' << t << ','
                << ms << ",\n";
            std::cout << std::left << std::setw(10) << "fit" << std::setw(11) << scene.field.size() << std::setw(8) << t
                      << std::setw(12) << std::fixed << std::setprecision(2) << ms << std::defaultfloat << "("
                      << a.fit_iterations << " iterations, " << ms / 1000.0 << " s)\n";
        }
    }
    if (!a.out.empty()) {
        const fs::path out{a.out};
        fs::create_directories(out);
        io::write_text(out / "bench.csv", csv.str());
        m.output(out / "bench.csv");
        m.write(out, c);
    }
    return kOk;
}

void add_synth_flags(CLI::App* s, SynthArgs& a) {
    s->add_option("--classes", a.classes, "Number of classes (default names chair, table, lamp, ...)")->capture_default_str();
    s->add_option("--class-names", a.names, "Explicit class names, overrides --classes");
    s->add_option("--clusters-per-class", a.clusters_per_class, "Clusters per class")->capture_default_str();
    s->add_option("--gaussians-per-cluster", a.gaussians_per_cluster, "Gaussians per cluster")->capture_default_str();
    s->add_option("--distractors", a.distractors, "Dictionary-only entries")->capture_default_str();
    s->add_option("--feat-dim", a.feat_dim, "Low-dimensional feature size K")->capture_default_str();
    s->add_option("--embed-dim", a.embed_dim, "Embedding size D")->capture_default_str();
    s->add_option("--views", a.views, "Cameras on the ring")->capture_default_str();
    s->add_option("--train-views", a.train_views, "Leading cameras used for supervision")->capture_default_str();
    s->add_option("--image-size", a.image_size, "Square image size in pixels")->capture_default_str();
    s->add_option("--blur-radius", a.blur_radius, "Box blur radius of the context supervision")->capture_default_str();
    s->add_option("--canonical-affinity", a.canonical_affinity, "Dot product of canonicals with every entry")
        ->capture_default_str();
    s->add_option("--region-corruption", a.region_corruption, "Fraction of regions corrupted per view, region branch")
        ->capture_default_str();
    s->add_option("--context-corruption", a.context_corruption, "Same for the context branch")->capture_default_str();
}

void add_fit_flags(CLI::App* s, FitConfig& f) {
    s->add_option("--iterations", f.iterations, "Optimizer steps")->capture_default_str();
    s->add_option("--feature-lr", f.feature_lr, "Adam learning rate for gaussian features")->capture_default_str();
    s->add_option("--codec-lr", f.codec_lr, "Adam learning rate for codec weights")->capture_default_str();
    s->add_option("--beta1", f.beta1, "Adam beta1")->capture_default_str();
    s->add_option("--beta2", f.beta2, "Adam beta2")->capture_default_str();
    s->add_option("--eps", f.eps, "Adam epsilon")->capture_default_str();
    s->add_flag("--train-opacity", f.train_opacity, "Also optimize opacity");
    s->add_option("--log-every", f.log_every, "Print the loss every N iterations (0 = quiet)")->capture_default_str();
    s->add_option("--views-per-step", f.views_per_step, "Views per optimizer step")->capture_default_str();
    s->add_option("--hidden", f.codec_hidden, "Codec hidden layer widths")->capture_default_str();
    s->add_option("--init-sigma", f.init_sigma, "Std-dev of the feature initialization")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic gaussian field engine: synthesize, fit, render, query and evaluate."};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    Common common;
    SynthArgs synth;
    FitArgs fit;
    RenderArgs rnd;
    QueryArgs qry;
    EvalArgs ev;
    SweepArgs sw;
    GradArgs gc;
    BenchArgs bn;

    auto* s_synth = app.add_subcommand("synth", "Generate a labeled synthetic scene directory");
    add_common(s_synth, common);
    add_synth_flags(s_synth, synth);
    s_synth->add_option("--out", synth.out, "Scene directory")->required();

    auto* s_fit = app.add_subcommand("fit", "Distill features and codecs from a scene's supervision");
    add_common(s_fit, common);
    s_fit->add_option("--scene", fit.scene, "Scene directory from synth")->required();
    s_fit->add_option("--field", fit.field, "Field to fit (default <scene>/field.gsem)");
    s_fit->add_option("--views", fit.views, "Supervision views (default: the scene's training views)");
    add_fit_flags(s_fit, fit.cfg);
    s_fit->add_option("--out", fit.out, "Model directory")->required();

    auto* s_render = app.add_subcommand("render", "Render RGB, feature maps and alpha for one camera");
    add_common(s_render, common);
    s_render->add_option("--field", rnd.field, "Field file (GSEM)")->required();
    s_render->add_option("--camera", rnd.camera, "Camera JSON")->required();
    s_render->add_option("--background", rnd.background, "RGB background")->expected(3)->capture_default_str();
    s_render->add_flag("--pca", rnd.pca, "Also write PCA visualizations of both feature maps");
    s_render->add_option("--out", rnd.out, "Output directory")->required();

    auto* s_query = app.add_subcommand("query", "Open-vocabulary query of one rendered view");
    add_common(s_query, common);
    s_query->add_option("--field", qry.field, "Field file (GSEM)")->required();
    s_query->add_option("--camera", qry.camera, "Camera JSON")->required();
    s_query->add_option("--model,--codecs", qry.model, "Directory with codec_region.gmlp and codec_context.gmlp");
    s_query->add_option("--codec-region", qry.codec_region, "Region codec (GMLP)");
    s_query->add_option("--codec-context", qry.codec_context, "Context codec (GMLP)");
    s_query->add_option("--dict", qry.dict, "Dictionary JSON")->required();
    s_query->add_option("--text", qry.text, "Dictionary entry to query")->required();
    s_query->add_option("--threshold", qry.threshold, "Relevancy threshold")->capture_default_str();
    s_query->add_option("--strategy", qry.strategy, "ours|mean|fixed_region|fixed_context|upper_bound")
        ->capture_default_str();
    s_query->add_option("--labels", qry.labels, "Ground-truth label map (GLBL), label k = dictionary entry k");
    s_query->add_option("--mask", qry.mask, "Loss mask: 'alpha' (default) or a GLBL whose nonzero pixels count");
    s_query->add_option("--out", qry.out, "Output directory")->required();

    auto* s_eval = app.add_subcommand("eval", "mIoU / localization tables for a fitted scene");
    add_common(s_eval, common);
    s_eval->add_option("--scene", ev.scene, "Scene directory from synth")->required();
    s_eval->add_option("--model", ev.model, "Model directory from fit")->required();
    s_eval->add_option("--views", ev.views, "Evaluation views (default: held-out views)");
    s_eval->add_option("--queries", ev.queries, "Class names to query (default: all classes)");
    s_eval->add_option("--threshold", ev.threshold, "Relevancy threshold")->capture_default_str();
    s_eval->add_option("--strategies", ev.strategies, "Branch strategies")->capture_default_str();
    s_eval->add_option("--out", ev.out, "Output directory")->required();

    auto* s_sweep = app.add_subcommand("sweep", "Threshold or feature-dimension sweep on a synthetic pipeline");
    add_common(s_sweep, common);
    s_sweep->add_option("--axis", sw.axis, "threshold|feat_dim")->capture_default_str();
    s_sweep->add_option("--values", sw.values, "Sweep values (default 0.2 0.4 0.5 0.7 or 8 12 16 18)");
    add_synth_flags(s_sweep, sw.synth);
    s_sweep->add_option("--iterations", sw.iterations, "Optimizer steps per fit")->capture_default_str();
    s_sweep->add_option("--threshold", sw.threshold, "Threshold for feat_dim sweeps")->capture_default_str();
    s_sweep->add_option("--strategies", sw.strategies, "Branch strategies")->capture_default_str();
    s_sweep->add_option("--out", sw.out, "Output directory")->required();

    auto* s_grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    add_common(s_grad, common);
    s_grad->add_option("--field", gc.field, "Field file (default: random scene)");
    s_grad->add_option("--camera", gc.camera, "Camera JSON (with --field)");
    s_grad->add_option("--loss", gc.loss, "linear|cosine")->capture_default_str();
    s_grad->add_option("--gaussians", gc.gaussians, "Random scene size")->capture_default_str();
    s_grad->add_option("--feat-dim", gc.feat_dim, "Random scene K")->capture_default_str();
    s_grad->add_option("--embed-dim", gc.embed_dim, "Codec output size for the cosine loss")->capture_default_str();
    s_grad->add_option("--size", gc.size, "Random scene image size")->capture_default_str();
    s_grad->add_option("--step", gc.step, "Central-difference step")->capture_default_str();
    s_grad->add_option("--tolerance", gc.tolerance, "Relative error tolerance")->capture_default_str();
    s_grad->add_flag("--opacity", gc.opacity, "Include opacity gradients");
    s_grad->add_option("--max-coords", gc.max_coords, "Checked coordinates")->capture_default_str();
    s_grad->add_option("--out", gc.out, "Optional report directory");

    auto* s_bench = app.add_subcommand("bench", "Render and fit timing table");
    add_common(s_bench, common);
    s_bench->add_option("--gaussians", bn.gaussians, "Field sizes")->capture_default_str();
    s_bench->add_option("--size", bn.size, "Square image size")->capture_default_str();
    s_bench->add_option("--feat-dim", bn.feat_dim, "K")->capture_default_str();
    s_bench->add_option("--worker-counts", bn.threads, "Worker counts to time (default 1 and --threads)");
    s_bench->add_option("--fit-iterations", bn.fit_iterations, "Fit iterations to time (0 = skip)")->capture_default_str();
    s_bench->add_option("--repeats", bn.repeats, "Repeats per render timing (best is kept)")->capture_default_str();
    s_bench->add_flag("--reference", bn.reference, "Also time the brute-force reference renderer");
    s_bench->add_option("--out", bn.out, "Optional directory for bench.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        Manifest m(sub);
        if (sub == s_bench && bn.threads.empty() && common.threads > 0) bn.threads = {1, common.threads};
        if (sub == s_synth) return run_synth(synth, common, m);
        if (sub == s_fit) return run_fit(fit, common, m);
        if (sub == s_render) return run_render(rnd, common, m);
        if (sub == s_query) return run_query(qry, common, m);
        if (sub == s_eval) return run_eval(ev, common, m);
        if (sub == s_sweep) return run_sweep(sw, common, m);
        if (sub == s_grad) return run_gradcheck(gc, common, m);
        if (sub == s_bench) return run_bench(bn, common, m);
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kFormat;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
