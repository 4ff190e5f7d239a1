#include "gsem/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "gsem/error.hpp"
#include "json.hpp"

namespace gsem::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

using json = nlohmann::ordered_json;

constexpr std::uint32_t kMaxDim = 1u << 20;

class Writer {
public:
    void magic(const char* m) { bytes_.insert(bytes_.end(), m, m + 4); }
    void u16(std::uint16_t v) { put(&v, sizeof v); }
    void u32(std::uint32_t v) { put(&v, sizeof v); }
    void u64(std::uint64_t v) { put(&v, sizeof v); }
    void f32(double v) {
        const float f = static_cast<float>(v);
        put(&f, sizeof f);
    }
    void raw(const void* p, std::size_t n) { put(p, n); }
    Bytes take() { return std::move(bytes_); }

private:
    void put(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    Bytes bytes_;
};

class Reader {
public:
    Reader(const Bytes& b, std::string what) : b_(b), what_(std::move(what)) {}

    void magic(const char* m) {
        need(4);
        if (std::memcmp(b_.data() + pos_, m, 4) != 0) fail(std::string("bad magic, expected '") + m + "'");
        pos_ += 4;
    }
    std::uint16_t u16() { return get<std::uint16_t>(); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f32() { return static_cast<double>(get<float>()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    const std::uint8_t* take(std::size_t n) {
        need(n);
        const auto* p = b_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::size_t pos() const { return pos_; }
    std::size_t size() const { return b_.size(); }

    // Exact payload size check, reported before any payload is read.
    void expect_total(std::size_t expected) const {
        if (b_.size() != expected) {
            throw FormatError(what_ + ": expected " + std::to_string(expected) + " bytes, got " +
                                  std::to_string(b_.size()),
                              std::min(expected, b_.size()));
        }
    }
    void expect_end() const {
        if (pos_ != b_.size()) {
            throw FormatError(what_ + ": " + std::to_string(b_.size() - pos_) + " trailing bytes", pos_);
        }
    }
    [[noreturn]] void fail(const std::string& msg) const { throw FormatError(what_ + ": " + msg, pos_); }

private:
    void need(std::size_t n) const {
        if (n > b_.size() - pos_) {
            throw FormatError(what_ + ": truncated, need " + std::to_string(pos_ + n) + " bytes, got " +
                                  std::to_string(b_.size()),
                              b_.size());
        }
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    const Bytes& b_;
    std::string what_;
    std::size_t pos_ = 0;
};

// a * b with overflow detection against the size_t range
bool mul_ok(std::size_t a, std::size_t b, std::size_t& out) {
    if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) return false;
    out = a * b;
    return true;
}

std::size_t field_record_floats(std::uint32_t feat_dim, std::uint32_t sh_degree) {
    return 3 + 3 + 4 + 3 + 1 + 3 * static_cast<std::size_t>(sh_coeff_count(static_cast<int>(sh_degree))) +
           2 * static_cast<std::size_t>(feat_dim);
}

constexpr std::uint32_t kFieldFlagMeta = 1;

}  // namespace

Bytes encode_field(const GaussianField& field) {
    field.validate();
    Writer w;
    w.magic("GSEM");
    w.u32(kFieldVersion);
    w.u64(field.size());
    w.u32(static_cast<std::uint32_t>(field.feat_dim));
    w.u32(static_cast<std::uint32_t>(field.sh_degree));
    w.u32(field.meta.empty() ? 0u : kFieldFlagMeta);
    w.u32(0);  // reserved
    for (const auto& g : field.gaussians) {
        for (int i = 0; i < 3; ++i) w.f32(g.point[i]);
        for (int i = 0; i < 3; ++i) w.f32(g.offset[i]);
        for (int i = 0; i < 4; ++i) w.f32(g.rotation[i]);
        for (int i = 0; i < 3; ++i) w.f32(g.scale[i]);
        w.f32(g.opacity);
        for (int c = 0; c < 3; ++c)
            for (Eigen::Index j = 0; j < g.sh.cols(); ++j) w.f32(g.sh(c, j));
        for (int k = 0; k < field.feat_dim; ++k) w.f32(g.feat_region[k]);
        for (int k = 0; k < field.feat_dim; ++k) w.f32(g.feat_context[k]);
    }
    if (!field.meta.empty()) {
        w.u32(static_cast<std::uint32_t>(field.meta.size()));
        for (const auto& [k, v] : field.meta) {
            w.u32(static_cast<std::uint32_t>(k.size()));
            w.raw(k.data(), k.size());
            w.u32(static_cast<std::uint32_t>(v.size()));
            w.raw(v.data(), v.size());
        }
    }
    return w.take();
}

GaussianField decode_field(const Bytes& bytes, SanitizeReport* report) {
    Reader r(bytes, "field");
    r.magic("GSEM");
    if (const auto v = r.u32(); v != kFieldVersion) r.fail("unsupported version " + std::to_string(v));
    const std::uint64_t count = r.u64();
    const std::uint32_t feat_dim = r.u32();
    const std::uint32_t sh_degree = r.u32();
    const std::uint32_t flags = r.u32();
    r.u32();  // reserved
    if (feat_dim == 0 || feat_dim > kMaxDim) r.fail("feat_dim " + std::to_string(feat_dim) + " out of range");
    if (sh_degree > static_cast<std::uint32_t>(kMaxShDegree)) r.fail("sh_degree " + std::to_string(sh_degree) + " > 3");
    if ((flags & ~kFieldFlagMeta) != 0) r.fail("unknown flags");

    const std::size_t record = field_record_floats(feat_dim, sh_degree) * 4;
    std::size_t payload = 0;
    if (count > std::numeric_limits<std::size_t>::max() || !mul_ok(static_cast<std::size_t>(count), record, payload) ||
        payload > std::numeric_limits<std::size_t>::max() - kFieldHeaderBytes) {
        r.fail("gaussian count " + std::to_string(count) + " overflows");
    }
    if (!(flags & kFieldFlagMeta)) {
        r.expect_total(kFieldHeaderBytes + payload);
    } else if (bytes.size() < kFieldHeaderBytes + payload) {
        throw FormatError("field: truncated payload, expected at least " + std::to_string(kFieldHeaderBytes + payload) +
                              " bytes, got " + std::to_string(bytes.size()),
                          bytes.size());
    }

    GaussianField field;
    field.feat_dim = static_cast<int>(feat_dim);
    field.sh_degree = static_cast<int>(sh_degree);
    field.gaussians.reserve(static_cast<std::size_t>(count));
    const int coeffs = sh_coeff_count(field.sh_degree);
    for (std::uint64_t i = 0; i < count; ++i) {
        SemanticGaussian g = make_gaussian(field.feat_dim, field.sh_degree);
        for (int k = 0; k < 3; ++k) g.point[k] = r.f32();
        for (int k = 0; k < 3; ++k) g.offset[k] = r.f32();
        for (int k = 0; k < 4; ++k) g.rotation[k] = r.f32();
        for (int k = 0; k < 3; ++k) g.scale[k] = r.f32();
        g.opacity = r.f32();
        for (int c = 0; c < 3; ++c)
            for (int j = 0; j < coeffs; ++j) g.sh(c, j) = r.f32();
        for (int k = 0; k < field.feat_dim; ++k) g.feat_region[k] = r.f32();
        for (int k = 0; k < field.feat_dim; ++k) g.feat_context[k] = r.f32();
        field.gaussians.push_back(std::move(g));
    }
    if (flags & kFieldFlagMeta) {
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::string key = r.str(r.u32());
            field.meta[key] = r.str(r.u32());
        }
    }
    r.expect_end();
    for (const auto& g : field.gaussians) {
        if (!g.point.allFinite() || !g.offset.allFinite() || !g.rotation.allFinite() || !g.scale.allFinite() ||
            !std::isfinite(g.opacity) || !g.sh.allFinite() || !g.feat_region.allFinite() || !g.feat_context.allFinite()) {
            throw FormatError("field: non-finite value in payload", kFieldHeaderBytes);
        }
        if (g.rotation.norm() == 0.0) throw FormatError("field: zero quaternion in payload", kFieldHeaderBytes);
    }
    const SanitizeReport rep = sanitize(field);
    if (report) *report = rep;
    return field;
}

Bytes encode_codec(const MlpCodec& codec) {
    codec.validate();
    Writer w;
    w.magic("GMLP");
    w.u32(kCodecVersion);
    w.u32(static_cast<std::uint32_t>(codec.layers.size()));
    for (const auto& l : codec.layers) {
        w.u32(static_cast<std::uint32_t>(l.weight.rows()));
        w.u32(static_cast<std::uint32_t>(l.weight.cols()));
        for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < l.weight.cols(); ++j) w.f32(l.weight(i, j));
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f32(l.bias[i]);
    }
    return w.take();
}

MlpCodec decode_codec(const Bytes& bytes) {
    Reader r(bytes, "codec");
    r.magic("GMLP");
    if (const auto v = r.u32(); v != kCodecVersion) r.fail("unsupported version " + std::to_string(v));
    const std::uint32_t n_layers = r.u32();
    if (n_layers == 0 || n_layers > 1024) r.fail("layer count " + std::to_string(n_layers) + " out of range");
    MlpCodec codec;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        const std::uint32_t out = r.u32();
        const std::uint32_t in = r.u32();
        if (out == 0 || in == 0 || out > kMaxDim || in > kMaxDim) r.fail("layer dimensions out of range");
        if (l > 0 && in != codec.layers.back().weight.rows()) r.fail("layer " + std::to_string(l) + " does not chain");
        const std::size_t need = (static_cast<std::size_t>(out) * in + out) * 4;
        if (need > r.size() - r.pos()) {
            throw FormatError("codec: truncated layer " + std::to_string(l) + ", need " + std::to_string(r.pos() + need) +
                                  " bytes, got " + std::to_string(r.size()),
                              r.size());
        }
        DenseLayer layer{MatX(out, in), VecX(out)};
        for (std::uint32_t i = 0; i < out; ++i)
            for (std::uint32_t j = 0; j < in; ++j) layer.weight(i, j) = r.f32();
        for (std::uint32_t i = 0; i < out; ++i) layer.bias[i] = r.f32();
        codec.layers.push_back(std::move(layer));
    }
    r.expect_end();
    try {
        codec.validate();
    } catch (const ShapeError& e) {
        throw FormatError(std::string("codec: ") + e.what(), 0);
    }
    return codec;
}

Bytes encode_feature_image(const FeatureImage& img) {
    Writer w;
    w.magic("FMAP");
    w.u32(static_cast<std::uint32_t>(img.height));
    w.u32(static_cast<std::uint32_t>(img.width));
    w.u32(static_cast<std::uint32_t>(img.channels));
    for (double v : img.data) w.f32(v);
    if (img.has_mask()) {
        if (!img.mask.same_shape(img.height, img.width)) throw ShapeError("feature image: mask shape mismatch");
        for (auto m : img.mask.data) {
            const std::uint8_t b = m ? 1 : 0;
            w.raw(&b, 1);
        }
    }
    return w.take();
}

FeatureImage decode_feature_image(const Bytes& bytes) {
    Reader r(bytes, "feature image");
    r.magic("FMAP");
    const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
    if (h > kMaxDim || w > kMaxDim || c > kMaxDim) r.fail("dimensions out of range");
    std::size_t pixels = 0, values = 0, data_bytes = 0;
    if (!mul_ok(h, w, pixels) || !mul_ok(pixels, c, values) || !mul_ok(values, 4, data_bytes) ||
        data_bytes > std::numeric_limits<std::size_t>::max() - 16 - pixels) {
        r.fail("dimensions overflow");
    }
    const std::size_t bare = 16 + data_bytes;
    const std::size_t with_mask = bare + pixels;
    if (bytes.size() != bare && bytes.size() != with_mask) {
        throw FormatError("feature image: expected " + std::to_string(bare) + " or " + std::to_string(with_mask) +
                              " bytes, got " + std::to_string(bytes.size()),
                          std::min(bytes.size(), bare));
    }
    FeatureImage img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (auto& v : img.data) v = r.f32();
    if (bytes.size() == with_mask && pixels > 0) {
        img.mask = Mask(static_cast<int>(h), static_cast<int>(w), 0);
        const std::uint8_t* m = r.take(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
            if (m[p] > 1) throw FormatError("feature image: mask byte not 0/1", 16 + data_bytes + p);
            img.mask.data[p] = m[p];
        }
    }
    r.expect_end();
    return img;
}

Bytes encode_label_map(const LabelMap& labels) {
    Writer w;
    w.magic("GLBL");
    w.u32(static_cast<std::uint32_t>(labels.height));
    w.u32(static_cast<std::uint32_t>(labels.width));
    for (auto v : labels.data) w.u16(v);
    return w.take();
}

LabelMap decode_label_map(const Bytes& bytes) {
    Reader r(bytes, "label map");
    r.magic("GLBL");
    const std::uint32_t h = r.u32(), w = r.u32();
    if (h > kMaxDim || w > kMaxDim) r.fail("dimensions out of range");
    std::size_t pixels = 0;
    if (!mul_ok(h, w, pixels)) r.fail("dimensions overflow");
    r.expect_total(12 + 2 * pixels);
    LabelMap labels(static_cast<int>(h), static_cast<int>(w), 0);
    for (auto& v : labels.data) v = r.u16();
    return labels;
}

namespace {

template <typename T>
T json_get(const json& j, const char* key) {
    if (!j.contains(key)) throw FormatError(std::string("json: missing key '") + key + "'", 0);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("json: bad value for '") + key + "': " + e.what(), 0);
    }
}

json parse_json(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string(what) + ": " + e.what(), e.byte);
    }
}

}  // namespace

std::string encode_camera(const Camera& cam) {
    json j;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["near"] = cam.near;
    j["far"] = cam.far;
    std::vector<double> m(16);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m[r * 4 + c] = cam.world_to_camera(r, c);
    j["world_to_camera"] = m;
    return j.dump(2) + "\n";
}

Camera decode_camera(const std::string& text) {
    const json j = parse_json(text, "camera");
    if (!j.is_object()) throw FormatError("camera: expected a JSON object", 0);
    Camera cam;
    cam.fx = json_get<double>(j, "fx");
    cam.fy = json_get<double>(j, "fy");
    cam.cx = json_get<double>(j, "cx");
    cam.cy = json_get<double>(j, "cy");
    cam.width = json_get<int>(j, "width");
    cam.height = json_get<int>(j, "height");
    cam.near = json_get<double>(j, "near");
    cam.far = json_get<double>(j, "far");
    const auto m = json_get<std::vector<double>>(j, "world_to_camera");
    if (m.size() != 16) throw FormatError("camera: world_to_camera must have 16 values", 0);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = m[r * 4 + c];
    try {
        cam.validate();
    } catch (const UsageError& e) {
        throw FormatError(e.what(), 0);
    }
    return cam;
}

std::string encode_dictionary(const EmbeddingDictionary& dict) {
    json j;
    j["dim"] = dict.dim;
    json entries = json::object();
    for (std::size_t i = 0; i < dict.size(); ++i) {
        entries[dict.names[i]] = std::vector<double>(dict.vectors[i].data(), dict.vectors[i].data() + dict.vectors[i].size());
    }
    j["entries"] = entries;
    json canon = json::array();
    for (const auto& c : dict.canonical) canon.push_back(std::vector<double>(c.data(), c.data() + c.size()));
    j["canonical"] = canon;
    return j.dump() + "\n";
}

EmbeddingDictionary decode_dictionary(const std::string& text) {
    const json j = parse_json(text, "dictionary");
    if (!j.is_object()) throw FormatError("dictionary: expected a JSON object", 0);
    EmbeddingDictionary dict;
    dict.dim = json_get<int>(j, "dim");
    if (!j.contains("entries") || !j["entries"].is_object()) throw FormatError("dictionary: 'entries' must be an object", 0);
    auto to_vec = [](const std::vector<double>& v) { return VecX(Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()))); };
    for (const auto& [name, value] : j["entries"].items()) {
        try {
            dict.names.push_back(name);
            dict.vectors.push_back(to_vec(value.get<std::vector<double>>()));
        } catch (const json::exception& e) {
            throw FormatError("dictionary: bad entry '" + name + "': " + e.what(), 0);
        }
    }
    for (const auto& c : json_get<std::vector<std::vector<double>>>(j, "canonical")) dict.canonical.push_back(to_vec(c));
    try {
        dict.validate();
    } catch (const ShapeError& e) {
        throw FormatError(e.what(), 0);
    }
    return dict;
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open '" + path.string() + "' for reading");
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError("write to '" + path.string() + "' failed");
}

std::string read_text(const std::filesystem::path& path) {
    const Bytes b = read_file(path);
    return std::string(b.begin(), b.end());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, Bytes(text.begin(), text.end()));
}

std::string digest(const Bytes& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace gsem::io
