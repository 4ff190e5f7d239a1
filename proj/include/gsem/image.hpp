#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gsem {

/// Dense H x W raster of one scalar per pixel, row-major.
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }
    T& operator()(int row, int col) { return data[index(row, col)]; }
    const T& operator()(int row, int col) const { return data[index(row, col)]; }
    bool same_shape(int h, int w) const { return height == h && width == w; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using Mask = Grid<std::uint8_t>;  // 0 / 1
using LabelMap = Grid<std::uint16_t>;
using ScalarMap = Grid<double>;
using CountMap = Grid<std::uint32_t>;

/// H x W x C raster, channel-last, with an optional validity mask.
struct FeatureImage {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;
    Mask mask;  // empty (0 x 0) when absent

    FeatureImage() = default;
    FeatureImage(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
    bool has_mask() const { return !mask.data.empty(); }

    double* pixel(std::size_t p) { return data.data() + p * channels; }
    const double* pixel(std::size_t p) const { return data.data() + p * channels; }
    std::span<double> at(int row, int col) {
        return {pixel(static_cast<std::size_t>(row) * width + col), static_cast<std::size_t>(channels)};
    }
    std::span<const double> at(int row, int col) const {
        return {pixel(static_cast<std::size_t>(row) * width + col), static_cast<std::size_t>(channels)};
    }

    friend bool operator==(const FeatureImage&, const FeatureImage&) = default;
};

/// Mask of pixels with a nonzero label.
Mask labeled_mask(const LabelMap& labels);

std::size_t count(const Mask& mask);

/// 4-connected components of equal nonzero labels; 0 stays 0, components are
/// numbered 1.. in row-major discovery order.
LabelMap connected_regions(const LabelMap& labels);

}  // namespace gsem
