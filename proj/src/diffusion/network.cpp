#include "mpol/diffusion/network.hpp"

#include "mpol/border.hpp"
#include "mpol/container.hpp"
#include "mpol/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace mpol::diffusion {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXf>;

enum class Kind { Conv2d, GroupNorm, Silu, Downsample, Upsample, SkipConcat, ResidualBlock, TimeEmbedding };

constexpr int kImageNode = -1;
constexpr int kTimeNode = -2;
constexpr Index kPixelChunk = 4096;

Kind parse_kind(const std::string& id, const std::string& kind) {
    static const std::unordered_map<std::string, Kind> kinds = {
        {"conv2d", Kind::Conv2d},         {"group_norm", Kind::GroupNorm},
        {"silu", Kind::Silu},             {"downsample", Kind::Downsample},
        {"upsample", Kind::Upsample},     {"skip_concat", Kind::SkipConcat},
        {"residual_block", Kind::ResidualBlock}, {"time_embedding", Kind::TimeEmbedding}};
    auto it = kinds.find(kind);
    if (it == kinds.end()) throw ModelError("layer '" + id + "': unknown kind '" + kind + "'");
    return it->second;
}

[[noreturn]] void fail(const LayerRecord& layer, const std::string& what) {
    throw ModelError("layer '" + layer.id + "': " + what);
}

Index int_param(const LayerRecord& layer, const std::string& name, std::optional<Index> fallback = std::nullopt) {
    auto it = layer.params.find(name);
    if (it == layer.params.end()) {
        if (fallback) return *fallback;
        fail(layer, "missing parameter '" + name + "'");
    }
    const double v = it->second;
    if (v != std::floor(v) || v < 1) fail(layer, "parameter '" + name + "' must be a positive integer");
    return static_cast<Index>(v);
}

// Forward helpers. Feature maps are ImageStack<float>: channels x (H*W).

Image conv2d(const Image& in, const float* weight, const float* bias, Index cout, Index k, Index stride) {
    const Index cin = in.channels(), h = in.height(), w = in.width();
    const Index oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride, pad = k / 2;
    const ConstMatrixMap wmat(weight, cout, cin * k * k);
    const ConstVectorMap b(bias, cout);
    Image out(oh, ow, cout);
    auto dst = out.planes().matrix();
    RowMatrix cols(cin * k * k, std::min(kPixelChunk, oh * ow));
    for (Index begin = 0; begin < oh * ow; begin += kPixelChunk) {
        const Index n = std::min(kPixelChunk, oh * ow - begin);
        for (Index ci = 0; ci < cin; ++ci)
            for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx) {
                    float* row = cols.row((ci * k + ky) * k + kx).data();
                    for (Index j = 0; j < n; ++j) {
                        const Index oy = (begin + j) / ow, ox = (begin + j) % ow;
                        row[j] = in.at(ci, mirror_index(oy * stride + ky - pad, h), mirror_index(ox * stride + kx - pad, w));
                    }
                }
        dst.middleCols(begin, n).noalias() = wmat * cols.leftCols(n);
        dst.middleCols(begin, n).colwise() += b;
    }
    return out;
}

Image group_norm(const Image& in, Index groups, const float* gamma, const float* beta, double eps) {
    const Index per = in.channels() / groups;
    Image out(in.height(), in.width(), in.channels());
    for (Index g = 0; g < groups; ++g) {
        const auto block = in.planes().middleRows(g * per, per).cast<double>();
        const double mean = block.mean();
        const double var = (block - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + eps);
        for (Index c = g * per; c < (g + 1) * per; ++c) {
            out.planes().row(c) =
                ((in.planes().row(c).cast<double>() - mean) * (inv * gamma[c]) + double(beta[c])).cast<float>();
        }
    }
    return out;
}

Image silu(const Image& in) {
    Image out(in.height(), in.width(), in.channels());
    out.planes() = in.planes() / (1.0f + (-in.planes()).exp());
    return out;
}

Image upsample_nearest(const Image& in) {
    Image out(in.height() * 2, in.width() * 2, in.channels());
    for (Index c = 0; c < in.channels(); ++c)
        for (Index y = 0; y < out.height(); ++y)
            for (Index x = 0; x < out.width(); ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
    return out;
}

Image dense(const Image& v, const float* weight, const float* bias, Index out_dim) {
    const ConstMatrixMap wmat(weight, out_dim, v.channels());
    Image out(1, 1, out_dim);
    out.planes().matrix().col(0) = wmat * v.planes().matrix().col(0) + ConstVectorMap(bias, out_dim);
    return out;
}

Image sinusoidal_embedding(int t, Index dim) {
    const Index half = dim / 2;
    Image out(1, 1, dim);
    const double scale = half > 1 ? std::log(10000.0) / static_cast<double>(half - 1) : 0.0;
    for (Index k = 0; k < half; ++k) {
        const double arg = t * std::exp(-scale * static_cast<double>(k));
        out.planes()(k, 0) = static_cast<float>(std::sin(arg));
        out.planes()(half + k, 0) = static_cast<float>(std::cos(arg));
    }
    return out;
}

}  // namespace

struct ConvNetPredictor::Plan {
    struct Node {
        Kind kind;
        std::vector<int> inputs;               // node index, kImageNode or kTimeNode
        std::map<std::string, const float*> w;  // resolved against blob_ at call time via offsets
        std::map<std::string, std::size_t> offsets;
        Index in_channels = 0, out_channels = 0, groups = 1, kernel = 3, dim = 0, hidden = 0;
        double eps = 1e-5;
    };
    std::vector<Node> nodes;     // in layer order
    std::vector<int> order;      // topological order
    int output = -1;
    std::vector<int> last_use;   // topological position after which a node's value can be freed
};

ConvNetPredictor::~ConvNetPredictor() = default;
ConvNetPredictor::ConvNetPredictor(ConvNetPredictor&&) noexcept = default;
ConvNetPredictor& ConvNetPredictor::operator=(ConvNetPredictor&&) noexcept = default;

ConvNetPredictor::ConvNetPredictor(std::string_view manifest_json, std::vector<float> blob)
    : blob_(std::move(blob)), plan_(std::make_unique<Plan>()) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(manifest_json);
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("manifest is not valid JSON: ") + e.what());
    }
    try {
        input_channels_ = doc.value("input_channels", Index(16));
        output_channels_ = doc.value("output_channels", Index(16));
        for (const auto& l : doc.at("layers")) {
            LayerRecord rec;
            rec.id = l.at("id").get<std::string>();
            rec.kind = l.at("kind").get<std::string>();
            if (l.contains("params"))
                for (const auto& [k, v] : l.at("params").items()) rec.params[k] = v.get<double>();
            if (l.contains("inputs")) rec.inputs = l.at("inputs").get<std::vector<std::string>>();
            if (l.contains("weights"))
                for (const auto& [name, ref] : l.at("weights").items())
                    rec.weights[name] = WeightRef{ref.at("offset").get<std::size_t>(), ref.at("count").get<std::size_t>(),
                                                  ref.at("shape").get<std::vector<Index>>()};
            layers_.push_back(std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("manifest schema violation: ") + e.what());
    }
    if (input_channels_ != 16 || output_channels_ != 16) throw ModelError("network must map 16 channels to 16 channels");
    if (layers_.empty()) throw ModelError("manifest has no layers");

    // Resolve ids.
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& id = layers_[i].id;
        if (id == kImageInput || id == kTimeInput) fail(layers_[i], "id is reserved");
        if (!index.emplace(id, static_cast<int>(i)).second) fail(layers_[i], "duplicate id");
    }
    auto& nodes = plan_->nodes;
    nodes.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& layer = layers_[i];
        nodes[i].kind = parse_kind(layer.id, layer.kind);
        for (const auto& in : layer.inputs) {
            if (in == kImageInput) nodes[i].inputs.push_back(kImageNode);
            else if (in == kTimeInput) nodes[i].inputs.push_back(kTimeNode);
            else if (auto it = index.find(in); it != index.end()) nodes[i].inputs.push_back(it->second);
            else fail(layer, "unknown input '" + in + "'");
        }
    }
    plan_->output = doc.contains("output") ? [&] {
        auto it = index.find(doc.at("output").get<std::string>());
        if (it == index.end()) throw ModelError("manifest output names an unknown layer");
        return it->second;
    }() : static_cast<int>(layers_.size()) - 1;

    // Topological order (Kahn); leftovers sit on a cycle.
    std::vector<int> pending(nodes.size(), 0);
    std::vector<std::vector<int>> consumers(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (int in : nodes[i].inputs)
            if (in >= 0) {
                ++pending[i];
                consumers[static_cast<std::size_t>(in)].push_back(static_cast<int>(i));
            }
    std::deque<int> ready;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (pending[i] == 0) ready.push_back(static_cast<int>(i));
    while (!ready.empty()) {
        const int n = ready.front();
        ready.pop_front();
        plan_->order.push_back(n);
        for (int c : consumers[static_cast<std::size_t>(n)])
            if (--pending[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
    }
    if (plan_->order.size() != nodes.size()) {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (pending[i] > 0) fail(layers_[i], "graph contains a cycle through this layer");
    }

    // Shape inference and weight checks.
    struct Info {
        bool vector = false;
        Index channels = 0;
        int depth = 0;
    };
    std::vector<Info> info(nodes.size());
    int max_depth = 0;
    auto input_info = [&](int in) -> Info {
        if (in == kImageNode) return {false, input_channels_, 0};
        if (in == kTimeNode) return {true, 0, 0};
        return info[static_cast<std::size_t>(in)];
    };
    for (int n : plan_->order) {
        const auto& layer = layers_[static_cast<std::size_t>(n)];
        auto& node = nodes[static_cast<std::size_t>(n)];
        auto expect_inputs = [&](std::size_t count) {
            if (node.inputs.size() != count) fail(layer, "expects " + std::to_string(count) + " input(s)");
        };
        auto expect_map = [&](int in, Index channels) -> Info {
            if (in == kTimeNode) fail(layer, "the timestep cannot feed a spatial layer");
            Info i = input_info(in);
            if (i.vector) fail(layer, "expects a feature map input");
            if (channels > 0 && i.channels != channels) {
                fail(layer, "input has " + std::to_string(i.channels) + " channels, expected " + std::to_string(channels));
            }
            return i;
        };
        auto weight = [&](const std::string& name, std::vector<Index> shape) {
            auto it = layer.weights.find(name);
            if (it == layer.weights.end()) fail(layer, "missing weight '" + name + "'");
            const WeightRef& ref = it->second;
            std::size_t expected = 1;
            for (Index e : shape) expected *= static_cast<std::size_t>(e);
            if (ref.shape != shape || ref.count != expected) fail(layer, "weight '" + name + "' has the wrong shape");
            if (ref.offset + ref.count > blob_.size()) fail(layer, "weight '" + name + "' references a missing blob range");
            node.offsets[name] = ref.offset;
        };
        Info out;
        switch (node.kind) {
            case Kind::Conv2d: {
                expect_inputs(1);
                node.in_channels = int_param(layer, "in_channels");
                node.out_channels = int_param(layer, "out_channels");
                node.kernel = int_param(layer, "kernel_size", Index(3));
                if (node.kernel != 3 && node.kernel != 1) fail(layer, "kernel_size must be 1 or 3");
                out = expect_map(node.inputs[0], node.in_channels);
                weight("weight", {node.out_channels, node.in_channels, node.kernel, node.kernel});
                weight("bias", {node.out_channels});
                out.channels = node.out_channels;
                break;
            }
            case Kind::GroupNorm: {
                expect_inputs(1);
                node.in_channels = node.out_channels = int_param(layer, "channels");
                node.groups = int_param(layer, "groups");
                if (layer.params.count("eps")) node.eps = layer.params.at("eps");
                if (node.in_channels % node.groups != 0) fail(layer, "groups must divide channels");
                out = expect_map(node.inputs[0], node.in_channels);
                weight("gamma", {node.in_channels});
                weight("beta", {node.in_channels});
                break;
            }
            case Kind::Silu:
                expect_inputs(1);
                if (node.inputs[0] == kTimeNode) fail(layer, "the timestep must pass through time_embedding first");
                out = input_info(node.inputs[0]);
                break;
            case Kind::Downsample:
            case Kind::Upsample: {
                expect_inputs(1);
                node.in_channels = node.out_channels = int_param(layer, "channels");
                out = expect_map(node.inputs[0], node.in_channels);
                weight("weight", {node.out_channels, node.in_channels, 3, 3});
                weight("bias", {node.out_channels});
                out.depth += node.kind == Kind::Downsample ? 1 : -1;
                if (out.depth < 0) fail(layer, "upsampling above the input resolution");
                max_depth = std::max(max_depth, out.depth);
                break;
            }
            case Kind::SkipConcat: {
                if (node.inputs.size() < 2) fail(layer, "expects at least two inputs");
                out = expect_map(node.inputs[0], 0);
                for (std::size_t k = 1; k < node.inputs.size(); ++k) {
                    const Info i = expect_map(node.inputs[k], 0);
                    if (i.depth != out.depth) fail(layer, "concatenated inputs differ in resolution");
                    out.channels += i.channels;
                }
                break;
            }
            case Kind::ResidualBlock: {
                expect_inputs(2);
                node.in_channels = int_param(layer, "in_channels");
                node.out_channels = int_param(layer, "out_channels");
                node.groups = int_param(layer, "groups");
                if (node.in_channels % node.groups || node.out_channels % node.groups) fail(layer, "groups must divide channels");
                out = expect_map(node.inputs[0], node.in_channels);
                const Info temb = input_info(node.inputs[1]);
                if (!temb.vector || node.inputs[1] == kTimeNode) fail(layer, "second input must be a time embedding");
                node.dim = temb.channels;
                weight("norm1.gamma", {node.in_channels});
                weight("norm1.beta", {node.in_channels});
                weight("conv1.weight", {node.out_channels, node.in_channels, 3, 3});
                weight("conv1.bias", {node.out_channels});
                weight("time.weight", {node.out_channels, node.dim});
                weight("time.bias", {node.out_channels});
                weight("norm2.gamma", {node.out_channels});
                weight("norm2.beta", {node.out_channels});
                weight("conv2.weight", {node.out_channels, node.out_channels, 3, 3});
                weight("conv2.bias", {node.out_channels});
                if (node.in_channels != node.out_channels) {
                    weight("skip.weight", {node.out_channels, node.in_channels, 1, 1});
                    weight("skip.bias", {node.out_channels});
                }
                out.channels = node.out_channels;
                break;
            }
            case Kind::TimeEmbedding: {
                expect_inputs(1);
                if (node.inputs[0] != kTimeNode) fail(layer, "input must be the timestep");
                node.dim = int_param(layer, "dim");
                node.hidden = int_param(layer, "hidden");
                node.out_channels = int_param(layer, "out", doc.value("time_embed_dim", Index(0)) > 0
                                                                 ? std::optional<Index>(doc.at("time_embed_dim").get<Index>())
                                                                 : std::nullopt);
                if (node.dim % 2 != 0) fail(layer, "sinusoid dimension must be even");
                weight("fc1.weight", {node.hidden, node.dim});
                weight("fc1.bias", {node.hidden});
                weight("fc2.weight", {node.out_channels, node.hidden});
                weight("fc2.bias", {node.out_channels});
                out = {true, node.out_channels, 0};
                break;
            }
        }
        info[static_cast<std::size_t>(n)] = out;
    }
    const Info& result = info[static_cast<std::size_t>(plan_->output)];
    if (result.vector || result.channels != output_channels_ || result.depth != 0) {
        fail(layers_[static_cast<std::size_t>(plan_->output)], "output must be a full-resolution map with " +
                                                                  std::to_string(output_channels_) + " channels");
    }
    size_multiple_ = Index(1) << max_depth;

    plan_->last_use.assign(nodes.size(), -1);
    for (std::size_t pos = 0; pos < plan_->order.size(); ++pos)
        for (int in : nodes[static_cast<std::size_t>(plan_->order[pos])].inputs)
            if (in >= 0) plan_->last_use[static_cast<std::size_t>(in)] = static_cast<int>(pos);
}

Image ConvNetPredictor::predict(const Image& x, int t) const {
    if (x.channels() != input_channels_) throw FormatError("predictor input must have 16 channels");
    if (x.height() % size_multiple_ || x.width() % size_multiple_) {
        throw FormatError("predictor input extent must be a multiple of " + std::to_string(size_multiple_));
    }
    const auto& nodes = plan_->nodes;
    std::vector<Image> values(nodes.size());
    auto w = [&](const Plan::Node& node, const char* name) { return blob_.data() + node.offsets.at(name); };
    auto value = [&](int in) -> const Image& { return in == kImageNode ? x : values[static_cast<std::size_t>(in)]; };

    for (std::size_t pos = 0; pos < plan_->order.size(); ++pos) {
        const int n = plan_->order[pos];
        const auto& node = nodes[static_cast<std::size_t>(n)];
        Image out;
        switch (node.kind) {
            case Kind::Conv2d:
                out = conv2d(value(node.inputs[0]), w(node, "weight"), w(node, "bias"), node.out_channels, node.kernel, 1);
                break;
            case Kind::GroupNorm:
                out = group_norm(value(node.inputs[0]), node.groups, w(node, "gamma"), w(node, "beta"), node.eps);
                break;
            case Kind::Silu:
                out = silu(value(node.inputs[0]));
                break;
            case Kind::Downsample:
                out = conv2d(value(node.inputs[0]), w(node, "weight"), w(node, "bias"), node.out_channels, 3, 2);
                break;
            case Kind::Upsample:
                out = conv2d(upsample_nearest(value(node.inputs[0])), w(node, "weight"), w(node, "bias"),
                             node.out_channels, 3, 1);
                break;
            case Kind::SkipConcat: {
                Index channels = 0;
                const Image& first = value(node.inputs[0]);
                for (int in : node.inputs) {
                    if (!value(in).same_extent(first)) throw FormatError("skip_concat inputs differ in extent");
                    channels += value(in).channels();
                }
                out = Image(first.height(), first.width(), channels);
                Index row = 0;
                for (int in : node.inputs) {
                    out.planes().middleRows(row, value(in).channels()) = value(in).planes();
                    row += value(in).channels();
                }
                break;
            }
            case Kind::ResidualBlock: {
                const Image& in = value(node.inputs[0]);
                const Image& temb = value(node.inputs[1]);
                Image h = conv2d(silu(group_norm(in, node.groups, w(node, "norm1.gamma"), w(node, "norm1.beta"), node.eps)),
                                 w(node, "conv1.weight"), w(node, "conv1.bias"), node.out_channels, 3, 1);
                const Image shift = dense(silu(temb), w(node, "time.weight"), w(node, "time.bias"), node.out_channels);
                h.planes().colwise() += shift.planes().col(0);
                h = conv2d(silu(group_norm(h, node.groups, w(node, "norm2.gamma"), w(node, "norm2.beta"), node.eps)),
                           w(node, "conv2.weight"), w(node, "conv2.bias"), node.out_channels, 3, 1);
                if (node.in_channels != node.out_channels) {
                    h.planes() += conv2d(in, w(node, "skip.weight"), w(node, "skip.bias"), node.out_channels, 1, 1).planes();
                } else {
                    h.planes() += in.planes();
                }
                out = std::move(h);
                break;
            }
            case Kind::TimeEmbedding: {
                const Image hidden = silu(dense(sinusoidal_embedding(t, node.dim), w(node, "fc1.weight"), w(node, "fc1.bias"), node.hidden));
                out = dense(hidden, w(node, "fc2.weight"), w(node, "fc2.bias"), node.out_channels);
                break;
            }
        }
        values[static_cast<std::size_t>(n)] = std::move(out);
        for (int in : node.inputs)
            if (in >= 0 && in != plan_->output && plan_->last_use[static_cast<std::size_t>(in)] == static_cast<int>(pos))
                values[static_cast<std::size_t>(in)] = Image();
    }
    return std::move(values[static_cast<std::size_t>(plan_->output)]);
}

ConvNetPredictor load_weight_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    std::stringstream text;
    text << in.rdbuf();

    std::filesystem::path blob_path;
    try {
        const auto doc = nlohmann::json::parse(text.str());
        if (doc.contains("blob")) blob_path = manifest_path.parent_path() / doc.at("blob").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (blob_path.empty()) {
        std::string name = manifest_path.filename().string();
        const std::string suffix = ".json";
        if (name.size() > suffix.size() && name.ends_with(suffix)) name.resize(name.size() - suffix.size());
        blob_path = manifest_path.parent_path() / (name + ".blob");
    }
    if (!std::filesystem::exists(blob_path)) throw ModelError("weight blob not found: " + blob_path.string());
    const ArrayField blob = load_array_container(blob_path);
    if (blob.dtype() != DType::F32) throw ModelError("weight blob must hold float32 values");
    return ConvNetPredictor(text.str(), blob.f32());
}

std::pair<std::string, std::vector<float>> identity_delta_manifest(Index channels) {
    const auto c = static_cast<std::size_t>(channels);
    std::vector<float> blob(c * c * 9 + c, 0.0f);
    for (std::size_t o = 0; o < c; ++o) blob[(o * c + o) * 9 + 4] = 1.0f;
    const nlohmann::json layer = {
        {"id", "delta"},
        {"kind", "conv2d"},
        {"params", {{"in_channels", channels}, {"out_channels", channels}, {"kernel_size", 3}}},
        {"inputs", {std::string(kImageInput)}},
        {"weights",
         {{"weight", {{"offset", 0}, {"count", c * c * 9}, {"shape", {channels, channels, 3, 3}}}},
          {"bias", {{"offset", c * c * 9}, {"count", c}, {"shape", {channels}}}}}}};
    const nlohmann::json doc = {{"layers", {layer}},
                                {"input_channels", channels},
                                {"output_channels", channels},
                                {"time_embed_dim", 0},
                                {"output", "delta"}};
    return {doc.dump(2), std::move(blob)};
}

}  // namespace mpol::diffusion
