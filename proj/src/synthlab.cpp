#include "gsem/synthlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include "gsem/error.hpp"
#include "gsem/raster.hpp"

namespace gsem {

namespace {

double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

template <typename Derived>
void quantize(Eigen::MatrixBase<Derived>& m) {
    m = m.unaryExpr([](double v) { return quantize(v); });
}

// Stateless 64-bit mix so per-region choices do not depend on visit order.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Vec4 random_unit_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec4 q;
    do {
        q = Vec4(n(rng), n(rng), n(rng), n(rng));
    } while (q.norm() < 1e-6);
    q.normalize();
    if (q[0] < 0.0) q = -q;
    return q;
}

std::vector<int> class_to_dict_index(const EmbeddingDictionary& dict, std::span<const std::string> classes) {
    std::vector<int> out;
    for (const auto& c : classes) {
        const auto i = dict.find(c);
        if (!i) throw LookupError("synthlab: class '" + c + "' missing from the dictionary");
        out.push_back(static_cast<int>(*i));
    }
    return out;
}

void check_labels(const LabelMap& gt, std::size_t class_count) {
    for (auto v : gt.data) {
        if (v > class_count) throw ShapeError("synthlab: label " + std::to_string(v) + " exceeds class count");
    }
}

}  // namespace

void SceneSpec::validate() const {
    if (classes.empty()) throw UsageError("scene: at least one class is required");
    if (clusters_per_class <= 0 || gaussians_per_cluster <= 0) throw UsageError("scene: counts must be positive");
    if (!(extent > 0.0) || !(cluster_radius > 0.0)) throw UsageError("scene: extent and cluster radius must be positive");
    if (!(opacity_min > 0.0 && opacity_min <= opacity_max && opacity_max <= 1.0)) {
        throw UsageError("scene: opacity range must satisfy 0 < min <= max <= 1");
    }
    if (feat_dim <= 0) throw UsageError("scene: K must be positive");
    if (embed_dim < static_cast<int>(classes.size())) throw UsageError("scene: D must be at least the class count");
    if (views <= 0 || image_size <= 0) throw UsageError("scene: views and image size must be positive");
}

SyntheticScene make_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    SyntheticScene scene;
    scene.classes = spec.classes;
    const int n_classes = static_cast<int>(spec.classes.size());
    const int n_clusters = n_classes * spec.clusters_per_class;

    std::vector<Vec3> class_color;
    for (int c = 0; c < n_classes; ++c) class_color.emplace_back(uniform(0.15, 0.9), uniform(0.15, 0.9), uniform(0.15, 0.9));

    std::vector<Vec3> centers;
    const double min_gap = 2.2 * spec.cluster_radius;
    for (int c = 0; c < n_clusters; ++c) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            const Vec3 cand(uniform(-spec.extent, spec.extent), uniform(-spec.extent, spec.extent),
                            uniform(0.0, 0.3 * spec.extent));
            placed = std::all_of(centers.begin(), centers.end(), [&](const Vec3& o) { return (o - cand).norm() >= min_gap; });
            if (placed) centers.push_back(cand);
        }
        if (!placed) {
            throw PlacementError("make_scene: could not place cluster " + std::to_string(c) + " without overlap in 1000 attempts");
        }
        scene.cluster_class.push_back(static_cast<std::uint16_t>(c % n_classes + 1));
    }

    constexpr double kY00 = 0.28209479177387814;
    GaussianField& field = scene.field;
    field.feat_dim = spec.feat_dim;
    field.sh_degree = 0;
    field.meta["generator"] = "synthlab";
    field.meta["seed"] = std::to_string(spec.seed);
    std::vector<int> owner;  // cluster of each gaussian
    const double r = spec.cluster_radius;
    for (int c = 0; c < n_clusters; ++c) {
        for (int j = 0; j < spec.gaussians_per_cluster; ++j) {
            SemanticGaussian g = make_gaussian(spec.feat_dim, 0);
            Vec3 u;
            do {
                u = Vec3(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
            } while (u.squaredNorm() > 1.0);
            g.point = centers[c] + 0.55 * r * u;
            g.offset = Vec3(uniform(-0.02, 0.02), uniform(-0.02, 0.02), uniform(-0.02, 0.02)) * r;
            g.rotation = random_unit_quaternion(rng);
            g.scale = Vec3(uniform(0.25, 0.45), uniform(0.25, 0.45), uniform(0.25, 0.45)) * r;
            g.opacity = uniform(spec.opacity_min, spec.opacity_max);
            g.sh.col(0) = class_color[scene.cluster_class[c] - 1] / kY00;
            quantize(g.point);
            quantize(g.offset);
            quantize(g.rotation);
            quantize(g.scale);
            quantize(g.sh);
            g.opacity = quantize(g.opacity);
            field.gaussians.push_back(std::move(g));
            owner.push_back(c);
        }
    }

    const double ring = 3.0 * spec.extent;
    const double height = 1.8 * spec.extent;
    const double focal = 1.1 * spec.image_size;
    for (int v = 0; v < spec.views; ++v) {
        const double theta = 2.0 * std::numbers::pi * v / spec.views + uniform(-0.1, 0.1);
        const Vec3 eye(ring * std::cos(theta), ring * std::sin(theta), height + uniform(-0.1, 0.1) * spec.extent);
        scene.cameras.push_back(Camera::look_at(eye, Vec3(0.0, 0.0, 0.1 * spec.extent), Vec3(0.0, 0.0, 1.0), focal,
                                                spec.image_size, spec.image_size, 0.05, 100.0));
    }

    // Ground truth from composited one-hot indicators: class in the region
    // branch, cluster in the context branch.
    GaussianField indicator = field;
    indicator.feat_dim = std::max(n_classes, n_clusters);
    for (std::size_t i = 0; i < indicator.size(); ++i) {
        auto& g = indicator.gaussians[i];
        g.feat_region = VecX::Zero(indicator.feat_dim);
        g.feat_context = VecX::Zero(indicator.feat_dim);
        g.feat_region[scene.cluster_class[owner[i]] - 1] = 1.0;
        g.feat_context[owner[i]] = 1.0;
    }
    RenderOptions ropts;
    ropts.threads = 1;
    for (const auto& cam : scene.cameras) {
        const RenderOutput out = render(indicator, cam, ropts);
        LabelMap labels(cam.height, cam.width, 0), inst(cam.height, cam.width, 0);
        for (std::size_t p = 0; p < labels.size(); ++p) {
            if (out.alpha.data[p] < 0.5) continue;
            const double* fr = out.feat_region.pixel(p);
            const double* fc = out.feat_context.pixel(p);
            labels.data[p] = static_cast<std::uint16_t>(std::max_element(fr, fr + n_classes) - fr + 1);
            inst.data[p] = static_cast<std::uint16_t>(std::max_element(fc, fc + n_clusters) - fc + 1);
        }
        scene.labels.push_back(std::move(labels));
        scene.instances.push_back(std::move(inst));
    }
    return scene;
}

EmbeddingDictionary make_embeddings(std::span<const std::string> names, int dim, std::uint64_t seed,
                                    int canonical_count, double canonical_affinity) {
    const int n = static_cast<int>(names.size());
    if (canonical_count <= 0) throw UsageError("make_embeddings: canonical count must be positive");
    if (dim < n + canonical_count) {
        throw UsageError("make_embeddings: D = " + std::to_string(dim) + " is smaller than " + std::to_string(n) +
                         " entries + " + std::to_string(canonical_count) + " canonical vectors");
    }
    if (canonical_affinity < 0.0 || canonical_affinity * canonical_affinity * n > 1.0) {
        throw UsageError("make_embeddings: canonical affinity must satisfy 0 <= a and a^2 * n <= 1");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<VecX> basis;
    for (int i = 0; i < n + canonical_count; ++i) {
        VecX v(dim);
        for (int d = 0; d < dim; ++d) v[d] = normal(rng);
        // two Gram-Schmidt passes keep the pairwise dots at rounding level
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) v -= v.dot(b) * b;
        v.normalize();
        basis.push_back(std::move(v));
    }

    EmbeddingDictionary dict;
    dict.dim = dim;
    VecX sum = VecX::Zero(dim);
    for (int i = 0; i < n; ++i) {
        dict.names.push_back(names[i]);
        dict.vectors.push_back(basis[i]);
        sum += basis[i];
    }
    const double rest = std::sqrt(std::max(0.0, 1.0 - canonical_affinity * canonical_affinity * n));
    for (int j = 0; j < canonical_count; ++j) {
        VecX c = canonical_affinity * sum + rest * basis[n + j];
        c.normalize();
        dict.canonical.push_back(std::move(c));
    }
    return dict;
}

FeatureImage region_supervision(const LabelMap& gt, const EmbeddingDictionary& dict,
                                std::span<const std::string> classes) {
    check_labels(gt, classes.size());
    const auto index = class_to_dict_index(dict, classes);
    FeatureImage img(gt.height, gt.width, dict.dim);
    img.mask = labeled_mask(gt);
    for (std::size_t p = 0; p < gt.size(); ++p) {
        if (gt.data[p] == 0) continue;
        Eigen::Map<VecX>(img.pixel(p), dict.dim) = dict.vectors[index[gt.data[p] - 1]];
    }
    return img;
}

FeatureImage context_supervision(const LabelMap& gt, const EmbeddingDictionary& dict,
                                 std::span<const std::string> classes, int blur_radius, const LabelMap* regions) {
    if (blur_radius < 0) throw UsageError("context_supervision: blur radius must be >= 0");
    const FeatureImage dense = region_supervision(gt, dict, classes);
    const int h = gt.height, w = gt.width, d = dict.dim;

    FeatureImage blurred(h, w, d);
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            Eigen::Map<VecX> out(blurred.pixel(gt.index(row, col)), d);
            int n = 0;
            for (int rr = std::max(0, row - blur_radius); rr <= std::min(h - 1, row + blur_radius); ++rr) {
                for (int cc = std::max(0, col - blur_radius); cc <= std::min(w - 1, col + blur_radius); ++cc) {
                    out += Eigen::Map<const VecX>(dense.pixel(gt.index(rr, cc)), d);
                    ++n;
                }
            }
            out /= n;
        }
    }

    const LabelMap own = regions ? LabelMap{} : connected_regions(gt);
    const LabelMap& reg = regions ? *regions : own;
    if (!reg.same_shape(h, w)) throw ShapeError("context_supervision: region map shape mismatch");

    std::map<std::uint16_t, std::pair<VecX, int>> pooled;
    for (std::size_t p = 0; p < gt.size(); ++p) {
        if (gt.data[p] == 0 || reg.data[p] == 0) continue;
        auto [it, fresh] = pooled.try_emplace(reg.data[p], VecX::Zero(d), 0);
        it->second.first += Eigen::Map<const VecX>(blurred.pixel(p), d);
        ++it->second.second;
    }
    FeatureImage out(h, w, d);
    out.mask = dense.mask;
    for (std::size_t p = 0; p < gt.size(); ++p) {
        if (gt.data[p] == 0 || reg.data[p] == 0) continue;
        const auto& [s, n] = pooled.at(reg.data[p]);
        Eigen::Map<VecX>(out.pixel(p), d) = s / n;
    }
    return out;
}

FeatureImage corrupt_regions(const FeatureImage& feats, const LabelMap& gt, const LabelMap& regions,
                             std::span<const std::uint16_t> region_ids, const EmbeddingDictionary& dict,
                             std::span<const std::string> classes, std::uint64_t seed) {
    if (!gt.same_shape(feats.height, feats.width) || !regions.same_shape(feats.height, feats.width)) {
        throw ShapeError("corrupt_regions: map shapes differ from the feature image");
    }
    if (feats.channels != dict.dim) throw ShapeError("corrupt_regions: feature dimension differs from dictionary");
    if (dict.size() < 2) throw UsageError("corrupt_regions: need at least two dictionary entries");
    check_labels(gt, classes.size());
    const auto index = class_to_dict_index(dict, classes);

    FeatureImage out = feats;
    if (region_ids.empty()) return out;
    std::map<std::uint16_t, int> replacement;
    for (std::size_t p = 0; p < gt.size(); ++p) {
        const auto id = regions.data[p];
        if (gt.data[p] == 0 || id == 0) continue;
        if (std::find(region_ids.begin(), region_ids.end(), id) == region_ids.end()) continue;
        auto it = replacement.find(id);
        if (it == replacement.end()) {
            const int own = index[gt.data[p] - 1];
            // uniform over the other entries
            int pick = static_cast<int>(mix(seed ^ mix(id)) % (dict.size() - 1));
            if (pick >= own) ++pick;
            it = replacement.emplace(id, pick).first;
        }
        Eigen::Map<VecX>(out.pixel(p), dict.dim) = dict.vectors[it->second];
    }
    return out;
}

FeatureImage corrupt_supervision(const FeatureImage& feats, const LabelMap& gt, double rate,
                                 const EmbeddingDictionary& dict, std::span<const std::string> classes,
                                 std::uint64_t seed, const LabelMap* regions) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw UsageError("corrupt_supervision: rate must lie in [0, 1]");
    const LabelMap own = regions ? LabelMap{} : connected_regions(gt);
    const LabelMap& reg = regions ? *regions : own;

    std::vector<std::uint16_t> ids;
    for (std::size_t p = 0; p < reg.size(); ++p) {
        if (reg.data[p] != 0 && gt.data[p] != 0) ids.push_back(reg.data[p]);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const auto n_corrupt = static_cast<std::size_t>(std::floor(rate * static_cast<double>(ids.size()) + 1e-9));
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(n_corrupt);
    return corrupt_regions(feats, gt, reg, ids, dict, classes, seed);
}

SupervisionView make_supervision_view(const Camera& camera, const LabelMap& gt, const EmbeddingDictionary& dict,
                                      std::span<const std::string> classes, int blur_radius) {
    SupervisionView v;
    v.camera = camera;
    v.target_region = region_supervision(gt, dict, classes);
    v.target_context = context_supervision(gt, dict, classes, blur_radius);
    v.loss_mask = labeled_mask(gt);
    return v;
}

Grid<int> classify_pixels(const FeatureImage& feats, const EmbeddingDictionary& dict) {
    if (feats.channels != dict.dim) throw ShapeError("classify_pixels: dimension mismatch");
    Grid<int> out(feats.height, feats.width, -1);
    for (std::size_t p = 0; p < feats.pixel_count(); ++p) {
        const Eigen::Map<const VecX> f(feats.pixel(p), feats.channels);
        if (f.norm() == 0.0) continue;
        int best = -1;
        double best_dot = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < dict.size(); ++i) {
            const double d = f.dot(dict.vectors[i]);
            if (d > best_dot) {
                best_dot = d;
                best = static_cast<int>(i);
            }
        }
        out.data[p] = best;
    }
    return out;
}

}  // namespace gsem
