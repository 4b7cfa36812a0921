#pragma once

#include "mpol/decompose.hpp"
#include "mpol/mueller.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mpol {

enum class RegionKind { Background, FibreTract, LesionCore, Infiltration };
enum class RegionShape { Full, Rect, Ellipse };
enum class AzimuthKind { Constant, Flow, Random };
enum class NoiseKind { Gaussian, HeavyTailed };

/// Pixel-space footprint. Rect uses (y0, x0, height, width); Ellipse uses the
/// centre (cy, cx) and radii (ry, rx).
struct RegionGeometry {
    RegionShape shape = RegionShape::Full;
    double y0 = 0, x0 = 0, height = 0, width = 0;
    double cy = 0, cx = 0, ry = 0, rx = 0;

    bool contains(Index y, Index x) const;
};

/// Azimuth in degrees. Flow: base + amplitude * sin(2 pi (x cos g + y sin g) / period)
/// with g = direction. jitter adds i.i.d. Gaussian scatter (std, degrees) on top.
struct AzimuthField {
    AzimuthKind kind = AzimuthKind::Constant;
    double base_deg = 0.0;
    double amplitude_deg = 0.0;
    double period_px = 64.0;
    double direction_deg = 0.0;
    double jitter_deg = 0.0;
};

struct RegionSpec {
    RegionKind kind = RegionKind::Background;
    RegionGeometry geometry;
    AzimuthField azimuth;
    double albedo = 0.5;                 ///< M11, in (0, 1]
    double retardance_deg = 0.0;         ///< [0, 180]
    double diattenuation = 0.0;          ///< [0, 1)
    double diattenuation_axis_deg = 0.0;
    std::array<double, 3> depolarizer{1.0, 1.0, 1.0};  ///< each in (0, 1]
};

struct NoiseSpec {
    double sigma = 0.02;
    NoiseKind kind = NoiseKind::Gaussian;
    int shots = 8;  ///< high-quality frames average this many acquisitions
};

/// Regions are painted in list order, later ones on top; together they must
/// cover every pixel.
struct PhantomSpec {
    Index height = 128;
    Index width = 128;
    std::vector<RegionSpec> regions;
    NoiseSpec noise;

    void validate() const;
};

/// Background, a fibre tract with a smooth flow field, an infiltration zone and
/// a lesion core with random azimuth.
PhantomSpec default_phantom_spec(Index height = 128, Index width = 128);

PhantomSpec phantom_spec_from_json(const std::string& text);
std::string phantom_spec_to_json(const PhantomSpec& spec);

using LabelMap = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Phantom {
    MuellerField<double> mueller;
    PolarParamMaps<double> truth;
    LabelMap labels;  ///< index into spec.regions

    PixelMask region_mask(Index region) const { return labels == static_cast<std::int32_t>(region); }
};

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Elementary Mueller matrices, angles in degrees.
Matrix4T<double> linear_retarder(double retardance_deg, double azimuth_deg);
Matrix4T<double> linear_diattenuator(double diattenuation, double axis_deg);
Matrix4T<double> diagonal_depolarizer(const std::array<double, 3>& diagonal);
/// albedo * M_Delta * M_R * M_D for one region at one azimuth.
Matrix4T<double> compose_mueller(const RegionSpec& region, double azimuth_deg);

template <typename Scalar>
struct NoisyIntensities {
    IntensityTensor<Scalar> intensities;
    Index clamp_events = 0;
};

/// Adds zero-mean noise of standard deviation sigma (Gaussian, or Student-t
/// with 8 degrees of freedom rescaled to that variance) and clamps to [0, 1].
/// sigma = 0 returns the input unchanged.
template <typename Scalar>
NoisyIntensities<Scalar> add_acquisition_noise(const IntensityTensor<Scalar>& clean, double sigma, NoiseKind kind,
                                               std::uint64_t seed);

/// Mean of `shots` independently noised copies of `clean`.
template <typename Scalar>
NoisyIntensities<Scalar> acquire(const IntensityTensor<Scalar>& clean, const NoiseSpec& noise, int shots,
                                 std::uint64_t seed);

/// Writes `count` phantom pairs, the calibration (analyser.mpac, generator.mpac)
/// and manifest.json into `out_dir`; returns the manifest path. Per pair: lq,
/// hq, ground-truth maps (H x W x 4: D, Delta, R, phi), ground-truth Mueller
/// field, labels.
std::filesystem::path emit_dataset(const PhantomSpec& spec, int count, const std::filesystem::path& out_dir,
                                   std::uint64_t seed);

}  // namespace mpol
