#include "mpol/render.hpp"

#include "mpol/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mpol {

std::string render_gray(const ScalarMap<double>& map, double lo, double hi) {
    if (!(hi >= lo)) throw ParameterError("render range needs max >= min");
    std::ostringstream out;
    out << "P5\n" << map.cols() << ' ' << map.rows() << "\n65535\n";
    std::string header = out.str();
    std::string bytes(header);
    bytes.reserve(header.size() + static_cast<std::size_t>(map.size()) * 2);
    for (Index i = 0; i < map.size(); ++i) {
        std::uint16_t level = 32768;
        if (hi > lo) {
            const double unit = std::clamp((map.data()[i] - lo) / (hi - lo), 0.0, 1.0);
            level = static_cast<std::uint16_t>(std::lround(unit * 65535.0));
        }
        bytes.push_back(static_cast<char>(level >> 8));
        bytes.push_back(static_cast<char>(level & 0xFF));
    }
    return bytes;
}

std::array<std::uint8_t, 3> hue_to_rgb(double hue_deg, double value) {
    double h = std::fmod(hue_deg, 360.0);
    if (h < 0) h += 360.0;
    const double sector = h / 60.0;
    const double x = 1.0 - std::abs(std::fmod(sector, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(sector) % 6) {
        case 0: r = 1; g = x; break;
        case 1: r = x; g = 1; break;
        case 2: g = 1; b = x; break;
        case 3: g = x; b = 1; break;
        case 4: r = x; b = 1; break;
        default: r = 1; b = x; break;
    }
    auto level = [value](double c) { return static_cast<std::uint8_t>(std::lround(255.0 * c * value)); };
    return {level(r), level(g), level(b)};
}

std::string render_azimuth(const ScalarMap<double>& phi_deg, const PixelMask& valid) {
    if (valid.rows() != phi_deg.rows() || valid.cols() != phi_deg.cols()) {
        throw FormatError("validity mask extent differs from the azimuth map");
    }
    std::ostringstream out;
    out << "P6\n" << phi_deg.cols() << ' ' << phi_deg.rows() << "\n255\n";
    std::string bytes = out.str();
    for (Index i = 0; i < phi_deg.size(); ++i) {
        const auto rgb = hue_to_rgb(2.0 * phi_deg.data()[i], valid.data()[i] ? 1.0 : 0.0);
        for (auto c : rgb) bytes.push_back(static_cast<char>(c));
    }
    return bytes;
}

PortableImage parse_portable_image(const std::string& bytes) {
    std::istringstream in(bytes);
    std::string magic;
    PortableImage img;
    in >> magic >> img.width >> img.height >> img.max_value;
    if (!in || (magic != "P5" && magic != "P6")) throw FormatError("not a binary PGM/PPM image");
    in.get();
    img.channels = magic == "P5" ? 1 : 3;
    const bool wide = img.max_value > 255;
    const auto count = static_cast<std::size_t>(img.width * img.height * img.channels);
    const auto offset = static_cast<std::size_t>(in.tellg());
    if (bytes.size() != offset + count * (wide ? 2 : 1)) throw FormatError("image payload has the wrong length");
    img.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (wide) {
            img.samples[i] = static_cast<std::uint16_t>((std::uint8_t(bytes[offset + 2 * i]) << 8) |
                                                        std::uint8_t(bytes[offset + 2 * i + 1]));
        } else {
            img.samples[i] = std::uint8_t(bytes[offset + i]);
        }
    }
    return img;
}

}  // namespace mpol
