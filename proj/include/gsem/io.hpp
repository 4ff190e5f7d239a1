#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gsem/codec.hpp"
#include "gsem/field.hpp"
#include "gsem/image.hpp"
#include "gsem/query.hpp"

// Binary formats are little-endian; see docs/formats.md for byte layouts.
// Reals are stored as IEEE-754 binary32, so saving rounds to float and
// load(save(x)) is bitwise stable from the first save on.

namespace gsem::io {

inline constexpr std::uint32_t kFieldVersion = 1;
inline constexpr std::uint32_t kCodecVersion = 1;
inline constexpr std::size_t kFieldHeaderBytes = 32;

using Bytes = std::vector<std::uint8_t>;

Bytes encode_field(const GaussianField& field);
/// Throws FormatError (with byte offset) on bad magic/version/size.
/// Applies sanitize() to the decoded field.
GaussianField decode_field(const Bytes& bytes, SanitizeReport* report = nullptr);

Bytes encode_codec(const MlpCodec& codec);
MlpCodec decode_codec(const Bytes& bytes);

Bytes encode_feature_image(const FeatureImage& img);
FeatureImage decode_feature_image(const Bytes& bytes);

Bytes encode_label_map(const LabelMap& labels);
LabelMap decode_label_map(const Bytes& bytes);

std::string encode_camera(const Camera& cam);
Camera decode_camera(const std::string& json);

std::string encode_dictionary(const EmbeddingDictionary& dict);
/// Validates unit norms on load.
EmbeddingDictionary decode_dictionary(const std::string& json);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

inline void save_field(const std::filesystem::path& p, const GaussianField& f) { write_file(p, encode_field(f)); }
inline GaussianField load_field(const std::filesystem::path& p) { return decode_field(read_file(p)); }
inline void save_codec(const std::filesystem::path& p, const MlpCodec& c) { write_file(p, encode_codec(c)); }
inline MlpCodec load_codec(const std::filesystem::path& p) { return decode_codec(read_file(p)); }
inline void save_feature_image(const std::filesystem::path& p, const FeatureImage& i) {
    write_file(p, encode_feature_image(i));
}
inline FeatureImage load_feature_image(const std::filesystem::path& p) { return decode_feature_image(read_file(p)); }
inline void save_label_map(const std::filesystem::path& p, const LabelMap& l) { write_file(p, encode_label_map(l)); }
inline LabelMap load_label_map(const std::filesystem::path& p) { return decode_label_map(read_file(p)); }
inline void save_camera(const std::filesystem::path& p, const Camera& c) { write_text(p, encode_camera(c)); }
inline Camera load_camera(const std::filesystem::path& p) { return decode_camera(read_text(p)); }
inline void save_dictionary(const std::filesystem::path& p, const EmbeddingDictionary& d) {
    write_text(p, encode_dictionary(d));
}
inline EmbeddingDictionary load_dictionary(const std::filesystem::path& p) { return decode_dictionary(read_text(p)); }

/// 8-bit RGB PNG of an H x W x 3 image in [0, 1] (values are clamped).
void write_png(const std::filesystem::path& path, const FeatureImage& rgb);
/// 8-bit grayscale PNG, 255 where the mask is set.
void write_png(const std::filesystem::path& path, const Mask& mask);

/// 64-bit FNV-1a digest, hex encoded; used by run manifests.
std::string digest(const Bytes& bytes);

}  // namespace gsem::io
