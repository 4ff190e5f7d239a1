#include "gsem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gsem/error.hpp"

namespace gsem {

double iou(const Mask& pred, const Mask& gt, const Mask& loss_mask) {
    if (!pred.same_shape(gt.height, gt.width) || !loss_mask.same_shape(gt.height, gt.width)) {
        throw ShapeError("iou: mask shapes differ");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t p = 0; p < gt.size(); ++p) {
        if (!loss_mask.data[p]) continue;
        const bool a = pred.data[p] != 0, b = gt.data[p] != 0;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

bool localization_accuracy(int row, int col, const Mask& gt) {
    if (row < 0 || col < 0 || row >= gt.height || col >= gt.width) {
        throw UsageError("localization_accuracy: pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                         ") outside " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    return gt(row, col) != 0;
}

double psnr(const FeatureImage& a, const FeatureImage& b, const Mask& loss_mask) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels || a.channels != 3) {
        throw ShapeError("psnr: images must be matching H x W x 3");
    }
    if (!loss_mask.same_shape(a.height, a.width)) throw ShapeError("psnr: mask shape mismatch");
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < loss_mask.size(); ++p) {
        if (!loss_mask.data[p]) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = a.pixel(p)[c] - b.pixel(p)[c];
            se += d * d;
        }
        n += 3;
    }
    if (n == 0) throw UsageError("psnr: empty loss mask");
    const double mse = se / static_cast<double>(n);
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace gsem
