#pragma once

#include "mpol/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mpol {

enum class DType { F32, F64 };

/// Dense row-major array of 32- or 64-bit floats with optional per-axis labels.
/// This is the in-memory face of an MPAC container file.
class ArrayField {
public:
    using Storage = std::variant<std::vector<float>, std::vector<double>>;

    ArrayField() = default;
    ArrayField(std::vector<std::int64_t> shape, std::vector<float> values,
               std::vector<std::string> labels = {});
    ArrayField(std::vector<std::int64_t> shape, std::vector<double> values,
               std::vector<std::string> labels = {});

    const std::vector<std::int64_t>& shape() const { return shape_; }
    const std::vector<std::string>& labels() const { return labels_; }
    void set_labels(std::vector<std::string> labels) { labels_ = std::move(labels); }

    DType dtype() const { return std::holds_alternative<std::vector<float>>(data_) ? DType::F32 : DType::F64; }
    std::size_t size() const;
    std::size_t rank() const { return shape_.size(); }

    const Storage& storage() const { return data_; }
    const std::vector<float>& f32() const { return std::get<std::vector<float>>(data_); }
    const std::vector<double>& f64() const { return std::get<std::vector<double>>(data_); }

    /// Value i converted to double regardless of dtype.
    double value(std::size_t i) const;
    bool all_finite() const;

    /// Bit-level equality of shape, dtype, labels and payload.
    bool identical(const ArrayField& other) const;

private:
    void check_extent() const;

    std::vector<std::int64_t> shape_;
    Storage data_ = std::vector<float>{};
    std::vector<std::string> labels_;
};

ArrayField load_array_container(const std::filesystem::path& path);
void save_array_container(const ArrayField& field, const std::filesystem::path& path);

/// In-memory codec, exposed for tests and for embedding containers in other streams.
std::vector<std::uint8_t> encode_array_container(const ArrayField& field);
ArrayField decode_array_container(const std::vector<std::uint8_t>& bytes);

// Conversions between containers and the image types. Image stacks are stored
// channel-last ([H, W, C]) on disk and planar in memory.

template <typename Scalar>
ArrayField to_array_field(const ImageStack<Scalar>& stack, std::vector<std::string> labels = {});
template <typename Scalar>
ImageStack<Scalar> image_stack_from(const ArrayField& field);

template <typename Scalar>
ArrayField to_array_field(const ScalarMap<Scalar>& map, std::vector<std::string> labels = {});
template <typename Scalar>
ScalarMap<Scalar> scalar_map_from(const ArrayField& field);

/// Masks are stored as f32 0/1 maps.
ArrayField mask_to_array_field(const PixelMask& mask);
PixelMask mask_from(const ArrayField& field);

}  // namespace mpol
