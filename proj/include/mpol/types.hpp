#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace mpol {

using Index = Eigen::Index;

template <typename Scalar>
using ScalarMap = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// true = pixel participates in processing and evaluation.
using PixelMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel status bits carried next to derived quantities.
using FlagMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace flags {
inline constexpr std::uint8_t kInvalidCalibration = 1u << 0;
inline constexpr std::uint8_t kNonPositiveIntensity = 1u << 1;  // M11 <= 0
inline constexpr std::uint8_t kDiattenuationClamped = 1u << 2;
inline constexpr std::uint8_t kDegenerate = 1u << 3;            // det(m') ~ 0
inline constexpr std::uint8_t kAzimuthUndefined = 1u << 4;
inline constexpr std::uint8_t kRetardanceClamped = 1u << 5;
inline constexpr std::uint8_t kMasked = 1u << 6;                // excluded by the caller
inline constexpr std::uint8_t kInvalidating =
    kInvalidCalibration | kNonPositiveIntensity | kDegenerate | kMasked;
}  // namespace flags

/// true where none of `bits` is set.
inline PixelMask flags_clear(const FlagMap& f, std::uint8_t bits) {
    return f.unaryExpr([bits](std::uint8_t v) { return (v & bits) == 0; });
}

/// A stack of equally sized 2D planes stored structure-of-arrays: one row of
/// `planes()` per channel, each row holding H*W pixels in row-major order.
template <typename Scalar>
class ImageStack {
public:
    using Planes = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using PlaneMap = Eigen::Map<ScalarMap<Scalar>>;
    using ConstPlaneMap = Eigen::Map<const ScalarMap<Scalar>>;

    ImageStack() = default;
    ImageStack(Index height, Index width, Index channels)
        : height_(height), width_(width), planes_(channels, height * width) {}
    ImageStack(Index height, Index width, Index channels, Scalar fill)
        : ImageStack(height, width, channels) {
        planes_.setConstant(fill);
    }

    Index height() const { return height_; }
    Index width() const { return width_; }
    Index channels() const { return planes_.rows(); }
    Index pixels() const { return height_ * width_; }

    Planes& planes() { return planes_; }
    const Planes& planes() const { return planes_; }

    PlaneMap plane(Index c) { return PlaneMap(planes_.row(c).data(), height_, width_); }
    ConstPlaneMap plane(Index c) const {
        return ConstPlaneMap(planes_.row(c).data(), height_, width_);
    }

    Scalar& at(Index c, Index y, Index x) { return planes_(c, y * width_ + x); }
    Scalar at(Index c, Index y, Index x) const { return planes_(c, y * width_ + x); }

    bool same_extent(const ImageStack& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    template <typename Other>
    ImageStack<Other> cast() const {
        ImageStack<Other> out(height_, width_, channels());
        out.planes() = planes_.template cast<Other>();
        return out;
    }

    bool operator==(const ImageStack& other) const {
        return height_ == other.height_ && width_ == other.width_ &&
               channels() == other.channels() && (planes_ == other.planes_).all();
    }

private:
    Index height_ = 0;
    Index width_ = 0;
    Planes planes_;
};

enum class RangeState { Unit, SignedUnit };

inline constexpr Index kPolarChannels = 16;

/// 16 polarisation-state intensities per pixel. Channel 4*i + j holds analyser
/// state i and generator state j (zero-based here, 1-based in the usual I_ij naming).
template <typename Scalar>
struct IntensityTensor {
    ImageStack<Scalar> data;
    RangeState range = RangeState::Unit;

    IntensityTensor() = default;
    IntensityTensor(Index height, Index width) : data(height, width, kPolarChannels, Scalar(0)) {}
    explicit IntensityTensor(ImageStack<Scalar> stack, RangeState r = RangeState::Unit);

    Index height() const { return data.height(); }
    Index width() const { return data.width(); }

    template <typename Other>
    IntensityTensor<Other> cast() const {
        return IntensityTensor<Other>(data.template cast<Other>(), range);
    }
};

inline constexpr Index channel_index(int analyser, int generator) {
    return 4 * analyser + generator;
}

}  // namespace mpol

#include "mpol/error.hpp"

namespace mpol {

template <typename Scalar>
IntensityTensor<Scalar>::IntensityTensor(ImageStack<Scalar> stack, RangeState r)
    : data(std::move(stack)), range(r) {
    if (data.channels() != kPolarChannels) {
        throw FormatError("intensity tensor needs 16 channels, got " +
                          std::to_string(data.channels()));
    }
}

}  // namespace mpol
