#pragma once

#include "mpol/types.hpp"

namespace mpol {

/// Affine map sending `lo` to -1 and `hi` to +1. Throws ParameterError when hi <= lo.
template <typename Scalar>
IntensityTensor<Scalar> rescale_to_signed_unit(const IntensityTensor<Scalar>& in, double lo = 0.0, double hi = 1.0);

/// Inverse of rescale_to_signed_unit.
template <typename Scalar>
IntensityTensor<Scalar> rescale_to_unit(const IntensityTensor<Scalar>& in, double lo = 0.0, double hi = 1.0);

inline constexpr double kDefaultReflectionThreshold = 0.98;

/// false wherever any channel reaches `threshold` (near-saturated reflections).
template <typename Scalar>
PixelMask mask_reflections(const IntensityTensor<Scalar>& in, double threshold = kDefaultReflectionThreshold);

/// Tissue/background separation: I_11 > bg_threshold, followed by a 3x3-cross
/// opening (one erosion, one dilation) with mirrored borders.
template <typename Scalar>
PixelMask compute_roi(const IntensityTensor<Scalar>& in, double bg_threshold);

PixelMask erode_cross(const PixelMask& mask);
PixelMask dilate_cross(const PixelMask& mask);

}  // namespace mpol
