#include "mpol/container.hpp"

#include "mpol/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace mpol {
namespace {

constexpr char kMagic[4] = {'M', 'P', 'A', 'C'};

std::size_t element_count(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        if (e < 0) throw FormatError("negative extent in shape");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
    using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    auto bits = std::bit_cast<Bits>(value);
    for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

template <typename T>
T read_le(const std::uint8_t* p) {
    using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<Bits>(p[b]) << (8 * b);
    return std::bit_cast<T>(bits);
}

template <typename T>
std::vector<T> read_payload(const std::uint8_t* p, std::size_t count) {
    std::vector<T> values(count);
    if constexpr (std::endian::native == std::endian::little) {
        if (count) std::memcpy(values.data(), p, count * sizeof(T));
    } else {
        for (std::size_t i = 0; i < count; ++i) values[i] = read_le<T>(p + i * sizeof(T));
    }
    return values;
}

}  // namespace

ArrayField::ArrayField(std::vector<std::int64_t> shape, std::vector<float> values,
                       std::vector<std::string> labels)
    : shape_(std::move(shape)), data_(std::move(values)), labels_(std::move(labels)) {
    check_extent();
}

ArrayField::ArrayField(std::vector<std::int64_t> shape, std::vector<double> values,
                       std::vector<std::string> labels)
    : shape_(std::move(shape)), data_(std::move(values)), labels_(std::move(labels)) {
    check_extent();
}

void ArrayField::check_extent() const {
    if (element_count(shape_) != size()) {
        throw FormatError("shape holds " + std::to_string(element_count(shape_)) +
                          " values but " + std::to_string(size()) + " were given");
    }
}

std::size_t ArrayField::size() const {
    return std::visit([](const auto& v) { return v.size(); }, data_);
}

double ArrayField::value(std::size_t i) const {
    return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data_);
}

bool ArrayField::all_finite() const {
    return std::visit(
        [](const auto& v) {
            return std::all_of(v.begin(), v.end(), [](auto x) { return std::isfinite(x); });
        },
        data_);
}

bool ArrayField::identical(const ArrayField& other) const {
    if (shape_ != other.shape_ || labels_ != other.labels_ || dtype() != other.dtype()) return false;
    return std::visit(
        [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            const auto& w = std::get<V>(other.data_);
            return v.size() == w.size() &&
                   (v.empty() || std::memcmp(v.data(), w.data(), v.size() * sizeof(v[0])) == 0);
        },
        data_);
}

std::vector<std::uint8_t> encode_array_container(const ArrayField& field) {
    nlohmann::ordered_json header;
    header["dtype"] = field.dtype() == DType::F32 ? "f32" : "f64";
    header["shape"] = field.shape();
    header["order"] = "row-major";
    header["endian"] = "LE";
    if (!field.labels().empty()) header["labels"] = field.labels();
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    const std::size_t width = field.dtype() == DType::F32 ? 4 : 8;
    out.reserve(8 + text.size() + field.size() * width);
    append_le(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    std::visit([&](const auto& v) { for (auto x : v) append_le(out, x); }, field.storage());
    return out;
}

ArrayField decode_array_container(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("not an MPAC container (bad magic)");
    }
    const auto header_len = read_le<std::uint32_t>(bytes.data() + 4);
    if (bytes.size() < 8 + static_cast<std::size_t>(header_len)) {
        throw CorruptionError("MPAC header truncated");
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("MPAC header is not valid JSON: ") + e.what());
    }
    if (!header.is_object() || !header.contains("dtype") || !header.contains("shape")) {
        throw FormatError("MPAC header lacks dtype or shape");
    }
    if (header.value("order", "row-major") != "row-major") throw UnsupportedError("only row-major order is supported");
    if (header.value("endian", "LE") != "LE") throw UnsupportedError("only little-endian payloads are supported");

    std::vector<std::int64_t> shape;
    std::vector<std::string> labels;
    try {
        shape = header.at("shape").get<std::vector<std::int64_t>>();
        if (header.contains("labels")) labels = header.at("labels").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("MPAC header field has the wrong type: ") + e.what());
    }

    const std::string dtype = header.at("dtype").is_string() ? header.at("dtype").get<std::string>() : "";
    const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (width == 0) throw UnsupportedError("unsupported dtype '" + dtype + "'");

    const std::size_t count = element_count(shape);
    const std::size_t payload = bytes.size() - 8 - header_len;
    if (payload != count * width) {
        throw CorruptionError("MPAC payload has " + std::to_string(payload) + " bytes, header requires " +
                              std::to_string(count * width));
    }
    const std::uint8_t* p = bytes.data() + 8 + header_len;
    if (width == 4) return ArrayField(std::move(shape), read_payload<float>(p, count), std::move(labels));
    return ArrayField(std::move(shape), read_payload<double>(p, count), std::move(labels));
}

ArrayField load_array_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto field = decode_array_container(bytes);
    if (!field.all_finite()) throw FormatError(path.string() + " holds non-finite values");
    return field;
}

void save_array_container(const ArrayField& field, const std::filesystem::path& path) {
    const auto bytes = encode_array_container(field);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename Scalar>
ArrayField to_array_field(const ImageStack<Scalar>& stack, std::vector<std::string> labels) {
    const Index h = stack.height(), w = stack.width(), c = stack.channels();
    std::vector<Scalar> values(static_cast<std::size_t>(h * w * c));
    for (Index p = 0; p < h * w; ++p)
        for (Index k = 0; k < c; ++k) values[static_cast<std::size_t>(p * c + k)] = stack.planes()(k, p);
    return ArrayField({h, w, c}, std::move(values), std::move(labels));
}

template <typename Scalar>
ImageStack<Scalar> image_stack_from(const ArrayField& field) {
    const auto& s = field.shape();
    if (s.size() != 3 && s.size() != 2) {
        throw FormatError("expected an [H, W, C] or [H, W] container, got rank " + std::to_string(s.size()));
    }
    const Index h = s[0], w = s[1], c = s.size() == 3 ? s[2] : 1;
    ImageStack<Scalar> stack(h, w, c);
    for (Index p = 0; p < h * w; ++p)
        for (Index k = 0; k < c; ++k)
            stack.planes()(k, p) = static_cast<Scalar>(field.value(static_cast<std::size_t>(p * c + k)));
    return stack;
}

template <typename Scalar>
ArrayField to_array_field(const ScalarMap<Scalar>& map, std::vector<std::string> labels) {
    std::vector<Scalar> values(map.data(), map.data() + map.size());
    return ArrayField({map.rows(), map.cols()}, std::move(values), std::move(labels));
}

template <typename Scalar>
ScalarMap<Scalar> scalar_map_from(const ArrayField& field) {
    const auto& s = field.shape();
    if (s.size() != 2) throw FormatError("expected a 2D map, got rank " + std::to_string(s.size()));
    ScalarMap<Scalar> map(s[0], s[1]);
    for (Index i = 0; i < map.size(); ++i) map.data()[i] = static_cast<Scalar>(field.value(static_cast<std::size_t>(i)));
    return map;
}

ArrayField mask_to_array_field(const PixelMask& mask) {
    return to_array_field<float>(mask.cast<float>(), {"mask"});
}

PixelMask mask_from(const ArrayField& field) {
    return scalar_map_from<float>(field) != 0.0f;
}

template ArrayField to_array_field<float>(const ImageStack<float>&, std::vector<std::string>);
template ArrayField to_array_field<double>(const ImageStack<double>&, std::vector<std::string>);
template ImageStack<float> image_stack_from<float>(const ArrayField&);
template ImageStack<double> image_stack_from<double>(const ArrayField&);
template ArrayField to_array_field<float>(const ScalarMap<float>&, std::vector<std::string>);
template ArrayField to_array_field<double>(const ScalarMap<double>&, std::vector<std::string>);
template ScalarMap<float> scalar_map_from<float>(const ArrayField&);
template ScalarMap<double> scalar_map_from<double>(const ArrayField&);

}  // namespace mpol
