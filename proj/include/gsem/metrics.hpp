#pragma once

#include "gsem/image.hpp"

namespace gsem {

inline constexpr double kPsnrCap = 99.0;

/// |pred & gt & m| / |(pred | gt) & m|; 1.0 when the masked union is empty.
double iou(const Mask& pred, const Mask& gt, const Mask& loss_mask);

/// True iff the pixel lies inside gt. Out-of-bounds pixels are a UsageError.
bool localization_accuracy(int row, int col, const Mask& gt);

/// 10 log10(1 / MSE) over masked pixels and all channels, capped at 99 dB.
/// Images are H x W x 3 in [0, 1]; an empty mask is a UsageError.
double psnr(const FeatureImage& a, const FeatureImage& b, const Mask& loss_mask);

}  // namespace gsem
