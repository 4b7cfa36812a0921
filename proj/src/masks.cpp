#include "mpol/masks.hpp"

#include "mpol/border.hpp"
#include "mpol/error.hpp"

#include <cmath>

namespace mpol {
namespace {

template <typename Scalar>
void require_unit_range(const IntensityTensor<Scalar>& in, const char* op) {
    if (in.range != RangeState::Unit) {
        throw ParameterError(std::string(op) + " expects intensities in the [0,1] range state");
    }
}

template <bool Erode>
PixelMask morph_cross(const PixelMask& m) {
    const Index h = m.rows(), w = m.cols();
    PixelMask out(h, w);
    for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
            const bool n = m(mirror_index(y - 1, h), x), s = m(mirror_index(y + 1, h), x);
            const bool wst = m(y, mirror_index(x - 1, w)), e = m(y, mirror_index(x + 1, w));
            out(y, x) = Erode ? (m(y, x) && n && s && wst && e) : (m(y, x) || n || s || wst || e);
        }
    }
    return out;
}

}  // namespace

template <typename Scalar>
IntensityTensor<Scalar> rescale_to_signed_unit(const IntensityTensor<Scalar>& in, double lo, double hi) {
    if (!(hi > lo)) throw ParameterError("degenerate rescale range: hi must exceed lo");
    const double scale = 2.0 / (hi - lo);
    IntensityTensor<Scalar> out = in;
    out.data.planes() = ((in.data.planes().template cast<double>() - lo) * scale - 1.0).template cast<Scalar>();
    out.range = RangeState::SignedUnit;
    return out;
}

template <typename Scalar>
IntensityTensor<Scalar> rescale_to_unit(const IntensityTensor<Scalar>& in, double lo, double hi) {
    if (!(hi > lo)) throw ParameterError("degenerate rescale range: hi must exceed lo");
    const double scale = (hi - lo) / 2.0;
    IntensityTensor<Scalar> out = in;
    out.data.planes() = ((in.data.planes().template cast<double>() + 1.0) * scale + lo).template cast<Scalar>();
    out.range = RangeState::Unit;
    return out;
}

template <typename Scalar>
PixelMask mask_reflections(const IntensityTensor<Scalar>& in, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ParameterError("reflection threshold must lie in (0, 1]");
    require_unit_range(in, "mask_reflections");
    const auto peak = in.data.planes().colwise().maxCoeff();
    PixelMask mask(in.height(), in.width());
    for (Index p = 0; p < in.data.pixels(); ++p) mask.data()[p] = static_cast<double>(peak(p)) < threshold;
    return mask;
}

PixelMask erode_cross(const PixelMask& mask) { return morph_cross<true>(mask); }
PixelMask dilate_cross(const PixelMask& mask) { return morph_cross<false>(mask); }

template <typename Scalar>
PixelMask compute_roi(const IntensityTensor<Scalar>& in, double bg_threshold) {
    if (!std::isfinite(bg_threshold)) throw ParameterError("background threshold must be finite");
    require_unit_range(in, "compute_roi");
    const PixelMask raw = in.data.plane(channel_index(0, 0)).template cast<double>() > bg_threshold;
    return dilate_cross(erode_cross(raw));
}

#define MPOL_INSTANTIATE(S)                                                                       \
    template IntensityTensor<S> rescale_to_signed_unit<S>(const IntensityTensor<S>&, double, double); \
    template IntensityTensor<S> rescale_to_unit<S>(const IntensityTensor<S>&, double, double);        \
    template PixelMask mask_reflections<S>(const IntensityTensor<S>&, double);                        \
    template PixelMask compute_roi<S>(const IntensityTensor<S>&, double);
MPOL_INSTANTIATE(float)
MPOL_INSTANTIATE(double)
#undef MPOL_INSTANTIATE

}  // namespace mpol
