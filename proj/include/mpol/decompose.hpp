#pragma once

#include "mpol/mueller.hpp"

#include <algorithm>
#include <limits>

namespace mpol {

template <typename Scalar>
using Matrix3T = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Matrix4T = Eigen::Matrix<Scalar, 4, 4>;
using SignMap = Eigen::Array<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Below this |det m'| a pixel is treated as fully depolarising.
inline constexpr double kDegenerateDeterminant = 1e-12;
/// Below this magnitude for both M_R24 and M_R43 the azimuth is undefined.
inline constexpr double kIsotropicThreshold = 1e-12;

/// Largest diattenuation kept by the decomposition: 1 - 1e-9, or a few ulps
/// below one where the scalar type cannot represent that.
template <typename Scalar>
constexpr Scalar max_diattenuation() {
    const double margin = std::max(1e-9, 8.0 * static_cast<double>(std::numeric_limits<Scalar>::epsilon()));
    return static_cast<Scalar>(1.0 - margin);
}

/// One pixel of the product decomposition M = M_Delta * M_R * M_D.
template <typename Scalar>
struct PixelFactors {
    Matrix4T<Scalar> depolarizer;
    Matrix4T<Scalar> retarder;
    Matrix4T<Scalar> diattenuator;
    std::uint8_t flags = 0;
    std::int8_t sign = 1;  ///< sign of det(m')
};

/// Eigenvalues of a symmetric 3x3 matrix in descending order, closed form
/// (trigonometric solution of the characteristic cubic).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> symmetric_eigenvalues(const Matrix3T<Scalar>& a);

/// Lu-Chipman decomposition of one normalized Mueller matrix.
template <typename Scalar>
PixelFactors<Scalar> decompose_pixel(const Matrix4T<Scalar>& m);

template <typename Scalar>
struct DecomposedField {
    ImageStack<Scalar> depolarizer;
    ImageStack<Scalar> retarder;
    ImageStack<Scalar> diattenuator;
    FlagMap flags;
    SignMap sign;

    Index height() const { return retarder.height(); }
    Index width() const { return retarder.width(); }
    PixelMask valid() const { return flags_clear(flags, flags::kInvalidating); }
    PixelFactors<Scalar> pixel(Index y, Index x) const;
};

/// Scalar polarimetric maps. R and phi are in degrees.
template <typename Scalar>
struct PolarParamMaps {
    ScalarMap<Scalar> diattenuation;
    ScalarMap<Scalar> depolarization;
    ScalarMap<Scalar> retardance;
    ScalarMap<Scalar> azimuth;
    FlagMap flags;

    PixelMask valid() const { return flags_clear(flags, flags::kInvalidating); }
    Index count(std::uint8_t flag) const { return (!flags_clear(flags, flag)).count(); }
};

template <typename Scalar>
DecomposedField<Scalar> lu_chipman(const MuellerField<Scalar>& normalized, const Execution& exec = {});

// Per-pixel map formulas, shared by the staged and the fused paths.
template <typename Scalar>
Scalar diattenuation_of(const Matrix4T<Scalar>& diattenuator);
template <typename Scalar>
Scalar depolarization_of(const Matrix4T<Scalar>& depolarizer);
/// Degrees in [0, 180]; sets kRetardanceClamped in `flag_out` when the arccos argument left [-1, 1].
template <typename Scalar>
Scalar retardance_of(const Matrix4T<Scalar>& retarder, std::uint8_t& flag_out);
/// Degrees in [0, 180); sets kAzimuthUndefined for isotropic retarders (value 0).
template <typename Scalar>
Scalar azimuth_of(const Matrix4T<Scalar>& retarder, std::uint8_t& flag_out);

template <typename Scalar>
ScalarMap<Scalar> diattenuation_map(const DecomposedField<Scalar>& dec);
template <typename Scalar>
ScalarMap<Scalar> depolarization_map(const DecomposedField<Scalar>& dec);
/// Clamp events are reported through `clamp_count` when non-null.
template <typename Scalar>
ScalarMap<Scalar> retardance_map(const DecomposedField<Scalar>& dec, Index* clamp_count = nullptr);
/// Isotropic pixels are marked in `undefined` when non-null.
template <typename Scalar>
ScalarMap<Scalar> azimuth_map(const DecomposedField<Scalar>& dec, PixelMask* undefined = nullptr);

/// The four maps from a decomposed field, with flags merged.
template <typename Scalar>
PolarParamMaps<Scalar> polar_maps(const DecomposedField<Scalar>& dec);

/// Intensities to maps: compute_mueller, then normalize, decompose and map
/// every pixel in one fused sweep. Pixels where `mask` is false are still
/// computed but flagged kMasked. Invalid pixels read 0 in every map.
template <typename Scalar>
PolarParamMaps<Scalar> derive_all(const IntensityTensor<Scalar>& intensities, const CalibrationField& cal,
                                  const Execution& exec = {});
template <typename Scalar>
PolarParamMaps<Scalar> derive_all(const IntensityTensor<Scalar>& intensities, const CalibrationField& cal,
                                  const PixelMask& mask, const Execution& exec = {});

}  // namespace mpol
