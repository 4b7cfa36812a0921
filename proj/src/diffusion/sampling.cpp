#include "mpol/diffusion/sampling.hpp"

#include "mpol/border.hpp"
#include "mpol/error.hpp"
#include "mpol/masks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace mpol::diffusion {
namespace {

void require_time_point(int t, int lo, const DiffusionSchedule& schedule, const char* op) {
    if (t < lo || t > schedule.steps()) {
        throw ParameterError(std::string(op) + ": time-point " + std::to_string(t) + " outside [" +
                             std::to_string(lo) + ", " + std::to_string(schedule.steps()) + "]");
    }
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_extent(b) || a.channels() != b.channels()) {
        throw FormatError(std::string(what) + " does not match the image state shape");
    }
}

// a * x + b * y evaluated per element in double.
Image combine(const Image& x, double a, const Image& y, double b) {
    Image out(x.height(), x.width(), x.channels());
    out.planes() = (a * x.planes().cast<double>() + b * y.planes().cast<double>()).cast<float>();
    return out;
}

Image pad_mirror(const Image& in, Index h, Index w) {
    Image out(h, w, in.channels());
    for (Index c = 0; c < in.channels(); ++c)
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x)
                out.at(c, y, x) = in.at(c, mirror_index(y, in.height()), mirror_index(x, in.width()));
    return out;
}

Image crop(const Image& in, Index h, Index w) {
    Image out(h, w, in.channels());
    for (Index c = 0; c < in.channels(); ++c) out.plane(c) = in.plane(c).topLeftCorner(h, w);
    return out;
}

Image predict_padded(const EpsilonPredictor& model, const Image& x, int t) {
    const Index m = std::max<Index>(1, model.size_multiple());
    const Index h = (x.height() + m - 1) / m * m, w = (x.width() + m - 1) / m * m;
    Image eps = (h == x.height() && w == x.width()) ? model.predict(x, t)
                                                    : crop(model.predict(pad_mirror(x, h, w), t), x.height(), x.width());
    require_same_shape(x, eps, "predictor output");
    return eps;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

NoiseSample draw_noise(Index height, Index width, Index channels, std::uint64_t seed) {
    NoiseSample sample{Image(height, width, channels), seed};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    auto& p = sample.values.planes();
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(normal(rng));
    return sample;
}

Image forward_sample(const Image& x0, int t, const Image& eps, const DiffusionSchedule& schedule) {
    require_time_point(t, 0, schedule, "forward_sample");
    require_same_shape(x0, eps, "noise sample");
    const double ab = schedule.alpha_bar(t);
    if (t == 0) return x0;
    return combine(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

Image forward_step(const Image& x_prev, int t, const Image& eps, const DiffusionSchedule& schedule) {
    require_time_point(t, 1, schedule, "forward_step");
    require_same_shape(x_prev, eps, "noise sample");
    const double b = schedule.beta(t);
    return combine(x_prev, std::sqrt(1.0 - b), eps, std::sqrt(b));
}

ReverseMoments reverse_moments(const Image& x_t, int t, const EpsilonPredictor& model,
                               const DiffusionSchedule& schedule) {
    require_time_point(t, 1, schedule, "reverse_step");
    const Image eps_hat = predict_padded(model, x_t, t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
    const double eps_coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
    return {combine(x_t, inv_sqrt_alpha, eps_hat, -inv_sqrt_alpha * eps_coef), schedule.posterior_variance(t)};
}

Image reverse_step(const Image& x_t, int t, const EpsilonPredictor& model, const DiffusionSchedule& schedule,
                   const Image& eps) {
    ReverseMoments moments = reverse_moments(x_t, t, model, schedule);
    if (moments.variance == 0.0) return std::move(moments.mean);
    require_same_shape(x_t, eps, "noise sample");
    Image out(x_t.height(), x_t.width(), x_t.channels());
    out.planes() = (moments.mean.planes().cast<double>() + std::sqrt(moments.variance) * eps.planes().cast<double>())
                       .cast<float>();
    return out;
}

DenoiseResult denoise_single_pass(const IntensityTensor<float>& input, const EpsilonPredictor& model,
                                  const DiffusionSchedule& schedule, const PixelMask& mask,
                                  const DenoiseOptions& options) {
    require_time_point(options.t_infer, 1, schedule, "denoise_single_pass");
    if (mask.rows() != input.height() || mask.cols() != input.width()) {
        throw FormatError("mask extent differs from the intensity frame");
    }
    const IntensityTensor<float> signed_in =
        input.range == RangeState::SignedUnit ? input : rescale_to_signed_unit(input);
    const IntensityTensor<float> pass_through = input.range == RangeState::Unit ? input : rescale_to_unit(input);

    Image x = signed_in.data;
    for (int t = options.t_infer; t >= 1; --t) {
        Image eps;
        if (schedule.posterior_variance(t) > 0.0) {
            eps = draw_noise(x.height(), x.width(), x.channels(), mix_seed(options.seed, static_cast<std::uint64_t>(t))).values;
        }
        x = reverse_step(x, t, model, schedule, eps);
    }

    DenoiseResult result{rescale_to_unit(IntensityTensor<float>(std::move(x), RangeState::SignedUnit)), 0};
    auto& planes = result.intensities.data.planes();
    for (Index p = 0; p < planes.cols(); ++p) {
        if (!mask.data()[p]) {
            planes.col(p) = pass_through.data.planes().col(p);
            continue;
        }
        for (Index c = 0; c < planes.rows(); ++c) {
            float& v = planes(c, p);
            if (v < 0.0f || v > 1.0f) {
                v = std::clamp(v, 0.0f, 1.0f);
                ++result.clamp_events;
            }
        }
    }
    return result;
}

double estimate_noise_sigma(const Image& image, const PixelMask& mask) {
    std::vector<double> diffs;
    for (Index c = 0; c < image.channels(); ++c)
        for (Index y = 0; y < image.height(); ++y)
            for (Index x = 0; x + 1 < image.width(); ++x)
                if (mask(y, x) && mask(y, x + 1)) diffs.push_back(double(image.at(c, y, x + 1)) - image.at(c, y, x));
    if (diffs.empty()) throw UndefinedResultError("noise estimate needs at least two adjacent unmasked pixels");
    auto median = [](std::vector<double>& v) {
        auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
        std::nth_element(v.begin(), mid, v.end());
        return *mid;
    };
    const double center = median(diffs);
    for (auto& d : diffs) d = std::abs(d - center);
    return 1.4826 * median(diffs) / std::sqrt(2.0);
}

}  // namespace mpol::diffusion
