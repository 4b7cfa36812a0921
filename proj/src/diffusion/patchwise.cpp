#include "mpol/diffusion/patchwise.hpp"

#include "mpol/error.hpp"
#include "mpol/masks.hpp"

#include <algorithm>
#include <atomic>
#include <string>

namespace mpol::diffusion {
namespace {

std::vector<Index> tile_origins(Index extent, Index patch, Index overlap) {
    if (extent <= patch) return {0};
    std::vector<Index> origins;
    const Index stride = patch - overlap;
    for (Index o = 0; o + patch < extent; o += stride) origins.push_back(o);
    origins.push_back(extent - patch);
    return origins;
}

Image extract(const Image& frame, const PatchRect& r) {
    Image tile(r.height, r.width, frame.channels());
    for (Index c = 0; c < frame.channels(); ++c)
        tile.plane(c) = frame.plane(c).block(r.y0, r.x0, r.height, r.width);
    return tile;
}

}  // namespace

PatchPlan::PatchPlan(Index height, Index width, Index patch, Index overlap)
    : height_(height), width_(width), patch_(patch), overlap_(overlap) {
    if (patch < 1 || overlap < 0 || overlap >= patch) {
        throw ParameterError("patch tiling needs 0 <= overlap < patch, got patch " + std::to_string(patch) +
                             ", overlap " + std::to_string(overlap));
    }
    if (height < 1 || width < 1) throw ParameterError("patch tiling needs a non-empty frame");
    rows_ = tile_origins(height, patch, overlap);
    cols_ = tile_origins(width, patch, overlap);
}

PatchRect PatchPlan::rect(Index tile) const {
    const auto ncols = static_cast<Index>(cols_.size());
    const Index ty = tile / ncols, tx = tile % ncols;
    return {rows_[static_cast<std::size_t>(ty)], cols_[static_cast<std::size_t>(tx)], std::min(patch_, height_),
            std::min(patch_, width_)};
}

double PatchPlan::axis_weight(const std::vector<Index>& origins, Index k, Index extent, Index i) const {
    const auto ku = static_cast<std::size_t>(k);
    const Index len = std::min(patch_, extent);
    double w = 1.0;
    if (ku > 0) {
        const Index shared = origins[ku - 1] + len - origins[ku];
        w = std::min(w, static_cast<double>(i + 1) / static_cast<double>(shared + 1));
    }
    if (ku + 1 < origins.size()) {
        const Index shared = origins[ku] + len - origins[ku + 1];
        w = std::min(w, static_cast<double>(len - i) / static_cast<double>(shared + 1));
    }
    return w;
}

double PatchPlan::weight(Index tile, Index y, Index x) const {
    const auto ncols = static_cast<Index>(cols_.size());
    return axis_weight(rows_, tile / ncols, height_, y) * axis_weight(cols_, tile % ncols, width_, x);
}

ScalarMap<double> PatchPlan::weight_sum() const {
    ScalarMap<double> sum = ScalarMap<double>::Zero(height_, width_);
    for (Index t = 0; t < size(); ++t) {
        const PatchRect r = rect(t);
        for (Index y = 0; y < r.height; ++y)
            for (Index x = 0; x < r.width; ++x) sum(r.y0 + y, r.x0 + x) += weight(t, y, x);
    }
    return sum;
}

Image patchwise_apply(const Image& frame, const PatchOp& op, Index patch, Index overlap, const Execution& exec) {
    const PatchPlan plan(frame.height(), frame.width(), patch, overlap);
    std::vector<Image> results(static_cast<std::size_t>(plan.size()));
    parallel_items(plan.size(), exec, [&](Index t) {
        const PatchRect r = plan.rect(t);
        Image out = op(extract(frame, r), t, r);
        if (out.height() != r.height || out.width() != r.width) throw FormatError("patch operator changed the tile extent");
        results[static_cast<std::size_t>(t)] = std::move(out);
    });

    const Index channels = results.front().channels();
    Eigen::ArrayXXd acc = Eigen::ArrayXXd::Zero(channels, frame.pixels());
    const ScalarMap<double> weight_sum = plan.weight_sum();
    for (Index t = 0; t < plan.size(); ++t) {
        const Image& tile = results[static_cast<std::size_t>(t)];
        if (tile.channels() != channels) throw FormatError("patch operator output channels differ between tiles");
        const PatchRect r = plan.rect(t);
        for (Index y = 0; y < r.height; ++y)
            for (Index x = 0; x < r.width; ++x) {
                const Index p = (r.y0 + y) * frame.width() + r.x0 + x;
                const double w = plan.weight(t, y, x) / weight_sum(r.y0 + y, r.x0 + x);
                acc.col(p) += w * tile.planes().col(y * r.width + x).cast<double>();
            }
    }
    Image out(frame.height(), frame.width(), channels);
    out.planes() = acc.cast<float>();
    return out;
}

IntensityTensor<float> patchwise_apply(const IntensityTensor<float>& frame, const PatchOp& op, Index patch,
                                       Index overlap, const Execution& exec) {
    return IntensityTensor<float>(patchwise_apply(frame.data, op, patch, overlap, exec), frame.range);
}

DenoiseResult denoise_patchwise(const IntensityTensor<float>& input, const EpsilonPredictor& model,
                                const DiffusionSchedule& schedule, const PixelMask& mask, const DenoiseOptions& options,
                                Index patch, Index overlap, const Execution& exec) {
    if (mask.rows() != input.height() || mask.cols() != input.width()) {
        throw FormatError("mask extent differs from the intensity frame");
    }
    std::atomic<Index> clamps{0};
    const IntensityTensor<float> unit = input.range == RangeState::Unit ? input : rescale_to_unit(input);
    auto op = [&](const Image& tile, Index index, const PatchRect& r) {
        DenoiseOptions local = options;
        local.seed = mix_seed(options.seed, static_cast<std::uint64_t>(index));
        const PixelMask tile_mask = mask.block(r.y0, r.x0, r.height, r.width);
        DenoiseResult res = denoise_single_pass(IntensityTensor<float>(tile, RangeState::Unit), model, schedule,
                                                tile_mask, local);
        clamps += res.clamp_events;
        return std::move(res.intensities.data);
    };
    DenoiseResult result{patchwise_apply(unit, op, patch, overlap, exec), 0};
    result.clamp_events = clamps.load();
    // Blending mixes neighbouring tiles; restore masked pixels exactly.
    auto& planes = result.intensities.data.planes();
    for (Index p = 0; p < planes.cols(); ++p)
        if (!mask.data()[p]) planes.col(p) = unit.data.planes().col(p);
    return result;
}

}  // namespace mpol::diffusion
