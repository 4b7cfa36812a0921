#pragma once

#include "mpol/diffusion/sampling.hpp"
#include "mpol/parallel.hpp"

#include <functional>
#include <vector>

namespace mpol::diffusion {

/// One tile of a frame, in frame coordinates.
struct PatchRect {
    Index y0 = 0, x0 = 0, height = 0, width = 0;
};

/// Tile layout for a frame: origins advance by patch - overlap and the last
/// tile along each axis is pinned to the frame edge. Axes shorter than the
/// patch get a single tile spanning the axis.
class PatchPlan {
public:
    PatchPlan(Index height, Index width, Index patch = 128, Index overlap = 16);

    Index height() const { return height_; }
    Index width() const { return width_; }
    Index patch() const { return patch_; }
    Index overlap() const { return overlap_; }
    Index size() const { return static_cast<Index>(rows_.size() * cols_.size()); }
    PatchRect rect(Index tile) const;

    /// Unnormalised blend weight of `tile` at tile-local pixel (y, x): linear
    /// ramps over the overlap on sides shared with a neighbour, 1 elsewhere.
    double weight(Index tile, Index y, Index x) const;
    /// Sum of unnormalised weights over all tiles covering each frame pixel.
    ScalarMap<double> weight_sum() const;

private:
    double axis_weight(const std::vector<Index>& origins, Index k, Index extent, Index i) const;

    Index height_, width_, patch_, overlap_;
    std::vector<Index> rows_, cols_;
};

using PatchOp = std::function<Image(const Image& tile, Index tile_index, const PatchRect& rect)>;

/// Applies `op` to every tile (in parallel) and blends the results with
/// normalised ramp weights. Accumulation runs in tile order, so the result
/// does not depend on the worker count.
Image patchwise_apply(const Image& frame, const PatchOp& op, Index patch = 128, Index overlap = 16,
                      const Execution& exec = {});

IntensityTensor<float> patchwise_apply(const IntensityTensor<float>& frame, const PatchOp& op, Index patch = 128,
                                       Index overlap = 16, const Execution& exec = {});

/// Single-pass denoising tile by tile. Each tile draws its noise from a seed
/// derived from options.seed and the tile index. clamp_events sums the
/// per-tile counts.
DenoiseResult denoise_patchwise(const IntensityTensor<float>& input, const EpsilonPredictor& model,
                                const DiffusionSchedule& schedule, const PixelMask& mask,
                                const DenoiseOptions& options = {}, Index patch = 128, Index overlap = 16,
                                const Execution& exec = {});

}  // namespace mpol::diffusion
