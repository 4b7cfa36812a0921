#pragma once

#include "mpol/diffusion/schedule.hpp"
#include "mpol/parallel.hpp"
#include "mpol/types.hpp"

#include <cstdint>

namespace mpol::diffusion {

using Image = ImageStack<float>;

/// I.i.d. standard normal draws shaped like an image state.
struct NoiseSample {
    Image values;
    std::uint64_t seed = 0;
};

NoiseSample draw_noise(Index height, Index width, Index channels, std::uint64_t seed);

/// Stateless seed mixing (splitmix64), used to derive per-tile and per-step seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Estimates the noise ε contained in a diffused state x_t.
class EpsilonPredictor {
public:
    virtual ~EpsilonPredictor() = default;
    virtual Image predict(const Image& x, int t) const = 0;
    /// Spatial extents handed to predict() must be multiples of this.
    virtual Index size_multiple() const { return 1; }
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, for 0 <= t <= T.
Image forward_sample(const Image& x0, int t, const Image& eps, const DiffusionSchedule& schedule);

/// One Markov step: x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps, for 1 <= t <= T.
Image forward_step(const Image& x_prev, int t, const Image& eps, const DiffusionSchedule& schedule);

struct ReverseMoments {
    Image mean;
    double variance = 0.0;
};

/// mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t), variance = posterior variance.
ReverseMoments reverse_moments(const Image& x_t, int t, const EpsilonPredictor& model,
                               const DiffusionSchedule& schedule);

/// Draws x_{t-1} = mu + sqrt(posterior variance) eps. At t = 1 the result is mu.
Image reverse_step(const Image& x_t, int t, const EpsilonPredictor& model, const DiffusionSchedule& schedule,
                   const Image& eps);

struct DenoiseOptions {
    int t_infer = 1;
    std::uint64_t seed = 0;
};

struct DenoiseResult {
    IntensityTensor<float> intensities;  ///< [0, 1] range state
    Index clamp_events = 0;
};

/// Treats the (rescaled) intensities as x_{t_infer} and runs the reverse chain
/// down to t = 0, then maps back to [0, 1] with clamping. Pixels where `mask`
/// is false are passed through; for [0, 1] inputs they are copied bit-exactly.
DenoiseResult denoise_single_pass(const IntensityTensor<float>& input, const EpsilonPredictor& model,
                                  const DiffusionSchedule& schedule, const PixelMask& mask,
                                  const DenoiseOptions& options = {});

/// Robust noise std estimate from horizontal pixel differences (MAD), in the
/// units of the input.
double estimate_noise_sigma(const Image& image, const PixelMask& mask);

}  // namespace mpol::diffusion
