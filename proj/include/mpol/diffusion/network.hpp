#pragma once

#include "mpol/diffusion/sampling.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mpol::diffusion {

/// Names of the two graph inputs a layer may reference.
inline constexpr std::string_view kImageInput = "input";
inline constexpr std::string_view kTimeInput = "timestep";

struct WeightRef {
    std::size_t offset = 0;
    std::size_t count = 0;
    std::vector<Index> shape;
};

struct LayerRecord {
    std::string id;
    std::string kind;
    std::map<std::string, double> params;
    std::vector<std::string> inputs;
    std::map<std::string, WeightRef> weights;
};

/// Convolutional ε-predictor described by a `.pddn.json` graph and a float32
/// blob. Layers: conv2d, group_norm, silu, downsample, upsample, skip_concat,
/// residual_block, time_embedding. Inference runs in float32; the object is
/// immutable after construction and safe to share across threads.
class ConvNetPredictor final : public EpsilonPredictor {
public:
    /// Parses and validates a manifest; throws ModelError naming the layer at fault.
    ConvNetPredictor(std::string_view manifest_json, std::vector<float> blob);
    ~ConvNetPredictor() override;
    ConvNetPredictor(ConvNetPredictor&&) noexcept;
    ConvNetPredictor& operator=(ConvNetPredictor&&) noexcept;

    Image predict(const Image& x, int t) const override;
    Index size_multiple() const override { return size_multiple_; }

    const std::vector<LayerRecord>& layers() const { return layers_; }
    Index input_channels() const { return input_channels_; }
    Index output_channels() const { return output_channels_; }

private:
    struct Plan;

    std::vector<LayerRecord> layers_;
    std::vector<float> blob_;
    Index input_channels_ = 16;
    Index output_channels_ = 16;
    Index size_multiple_ = 1;
    std::unique_ptr<Plan> plan_;
};

/// Loads "<name>.pddn.json" and its blob container (the "blob" field, or
/// "<name>.pddn.blob" next to the manifest).
ConvNetPredictor load_weight_manifest(const std::filesystem::path& manifest_path);

/// A one-layer network whose 3x3 kernels pass every channel through
/// unchanged, so predict(x, t) == x. Returns the manifest text and the blob.
std::pair<std::string, std::vector<float>> identity_delta_manifest(Index channels = 16);

}  // namespace mpol::diffusion
