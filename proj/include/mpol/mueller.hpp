#pragma once

#include "mpol/parallel.hpp"
#include "mpol/types.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

namespace mpol {

using Matrix4 = Eigen::Matrix4d;
using Matrix4List = std::vector<Matrix4, Eigen::aligned_allocator<Matrix4>>;

inline constexpr double kDefaultConditionCap = 1e6;

/// Analyser (A) and generator (G) matrices of the polarimeter, either one
/// matrix broadcast over the frame or one per pixel, with inverses and
/// condition numbers computed once at construction.
class CalibrationField {
public:
    CalibrationField() = default;

    /// Single broadcast calibration.
    CalibrationField(const Matrix4& analyser, const Matrix4& generator, double cond_cap = kDefaultConditionCap);

    /// Per-pixel calibration. Either list may hold a single matrix, which is broadcast.
    CalibrationField(Index height, Index width, Matrix4List analyser, Matrix4List generator,
                     double cond_cap = kDefaultConditionCap);

    bool is_global() const { return height_ == 0; }
    Index height() const { return height_; }
    Index width() const { return width_; }
    bool compatible_with(Index height, Index width) const {
        return is_global() || (height == height_ && width == width_);
    }

    /// Storage slot for pixel (y, x); always 0 for a global calibration.
    Index slot(Index y, Index x) const { return is_global() ? 0 : y * width_ + x; }
    Index slots() const { return static_cast<Index>(analyser_.size()); }

    const Matrix4& analyser(Index slot) const { return analyser_[static_cast<std::size_t>(slot)]; }
    const Matrix4& generator(Index slot) const { return generator_[static_cast<std::size_t>(slot)]; }
    /// Zero for invalid slots.
    const Matrix4& analyser_inverse(Index slot) const { return analyser_inv_[static_cast<std::size_t>(slot)]; }
    const Matrix4& generator_inverse(Index slot) const { return generator_inv_[static_cast<std::size_t>(slot)]; }
    double analyser_condition(Index slot) const { return cond_analyser_[static_cast<std::size_t>(slot)]; }
    double generator_condition(Index slot) const { return cond_generator_[static_cast<std::size_t>(slot)]; }
    bool valid(Index slot) const { return valid_[static_cast<std::size_t>(slot)] != 0; }
    double condition_cap() const { return cond_cap_; }

private:
    void prepare();

    Index height_ = 0;
    Index width_ = 0;
    double cond_cap_ = kDefaultConditionCap;
    Matrix4List analyser_, generator_, analyser_inv_, generator_inv_;
    std::vector<double> cond_analyser_, cond_generator_;
    std::vector<std::uint8_t> valid_;
};

/// 2-norm condition number; +inf for singular matrices.
double condition_number(const Matrix4& m);

/// Reads [4,4] or [H,W,4,4] containers. Wrong shapes raise FormatError; a
/// missing file raises IoError. Singular or ill-conditioned pixels are
/// flagged invalid, not rejected.
CalibrationField load_calibration(const std::filesystem::path& analyser_path,
                                  const std::filesystem::path& generator_path,
                                  double cond_cap = kDefaultConditionCap);

void save_calibration(const CalibrationField& cal, const std::filesystem::path& analyser_path,
                      const std::filesystem::path& generator_path);

CalibrationField identity_calibration();

/// Four generator states at the vertices of a tetrahedron on the Poincare
/// sphere, analysed with the same states. Each row of A and column of G is a
/// Stokes vector scaled by 1/2, so physical Mueller matrices with M11 <= 1
/// render to intensities in [0, 1].
CalibrationField tetrahedral_calibration();

/// Per-pixel 4x4 Mueller coefficients, stored as 16 planes. Channel
/// 4*(r-1) + (c-1) holds M_rc.
template <typename Scalar>
struct MuellerField {
    ImageStack<Scalar> coeffs;
    FlagMap flags;

    MuellerField() = default;
    MuellerField(Index height, Index width)
        : coeffs(height, width, 16, Scalar(0)), flags(FlagMap::Zero(height, width)) {}

    Index height() const { return coeffs.height(); }
    Index width() const { return coeffs.width(); }
    PixelMask valid() const { return flags_clear(flags, flags::kInvalidating); }

    Eigen::Matrix<Scalar, 4, 4> pixel(Index y, Index x) const;
    void set_pixel(Index y, Index x, const Eigen::Matrix<Scalar, 4, 4>& m);

    template <typename Other>
    MuellerField<Other> cast() const {
        MuellerField<Other> out;
        out.coeffs = coeffs.template cast<Other>();
        out.flags = flags;
        return out;
    }
};

/// M = A^-1 I G^-1 per pixel, with I reshaped so that row = analyser state.
template <typename Scalar>
MuellerField<Scalar> compute_mueller(const IntensityTensor<Scalar>& intensities, const CalibrationField& cal,
                                     const Execution& exec = {});

/// I = A M G per pixel, flattened back to 16 channels.
template <typename Scalar>
IntensityTensor<Scalar> forward_intensities(const MuellerField<Scalar>& mueller, const CalibrationField& cal,
                                            const Execution& exec = {});

/// Divides each pixel by its M11; pixels with M11 <= 0 are flagged and left untouched.
template <typename Scalar>
MuellerField<Scalar> normalize_mueller(const MuellerField<Scalar>& mueller, const Execution& exec = {});

template <typename Scalar>
Eigen::Matrix<Scalar, 4, 4> MuellerField<Scalar>::pixel(Index y, Index x) const {
    Eigen::Matrix<Scalar, 4, 4> m;
    const Index p = y * width() + x;
    for (Index k = 0; k < 16; ++k) m(k / 4, k % 4) = coeffs.planes()(k, p);
    return m;
}

template <typename Scalar>
void MuellerField<Scalar>::set_pixel(Index y, Index x, const Eigen::Matrix<Scalar, 4, 4>& m) {
    const Index p = y * width() + x;
    for (Index k = 0; k < 16; ++k) coeffs.planes()(k, p) = m(k / 4, k % 4);
}

}  // namespace mpol
