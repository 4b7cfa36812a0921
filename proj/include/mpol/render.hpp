#pragma once

#include "mpol/types.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mpol {

/// Binary 16-bit PGM (P5, big-endian samples). Values map affinely from
/// [lo, hi] to [0, 65535] with clamping; lo == hi renders mid-gray.
std::string render_gray(const ScalarMap<double>& map, double lo, double hi);

/// Binary 8-bit PPM (P6). Hue follows twice the axial angle (degrees), so 0 and
/// 180 share a colour; saturation is 1 and value is 1 on valid pixels, 0 elsewhere.
std::string render_azimuth(const ScalarMap<double>& phi_deg, const PixelMask& valid);

struct PortableImage {
    Index width = 0, height = 0, channels = 0;
    int max_value = 0;
    std::vector<std::uint16_t> samples;  ///< row-major, interleaved
};

/// Reads binary P5/P6 data as written above.
PortableImage parse_portable_image(const std::string& bytes);

/// HSV with s = 1 to 8-bit RGB.
std::array<std::uint8_t, 3> hue_to_rgb(double hue_deg, double value);

}  // namespace mpol
