#pragma once

#include "mpol/parallel.hpp"
#include "mpol/types.hpp"

#include <span>
#include <vector>

namespace mpol {

/// Per-pixel, per-channel mean of the shots, accumulated in double in shot order.
template <typename Scalar>
IntensityTensor<Scalar> multishot_average(std::span<const IntensityTensor<Scalar>> shots);

/// Channel-wise k x k median with mirrored borders. k must be odd.
template <typename Scalar>
ImageStack<Scalar> median_filter(const ImageStack<Scalar>& in, int k = 3, const Execution& exec = {});

/// Unit-sum sampled Gaussian of odd width k.
std::vector<double> gaussian_kernel(int k, double sigma);

/// Separable channel-wise Gaussian blur with mirrored borders.
template <typename Scalar>
ImageStack<Scalar> gaussian_blur(const ImageStack<Scalar>& in, int k = 5, double sigma = 1.0,
                                 const Execution& exec = {});

inline constexpr double kDefaultDiffusionStep = 0.125;

/// Perona-Malik diffusion, g(|grad|) = exp(-(|grad| / conductance)^2), explicit
/// Euler on the 4-neighbour stencil. Mirrored borders make the boundary flux
/// zero, so each channel's total intensity is conserved.
template <typename Scalar>
ImageStack<Scalar> grad_aniso_diffusion(const ImageStack<Scalar>& in, int steps = 5, double conductance = 1.0,
                                        double dt = kDefaultDiffusionStep, const Execution& exec = {});

template <typename Scalar>
IntensityTensor<Scalar> median_filter(const IntensityTensor<Scalar>& in, int k = 3, const Execution& exec = {}) {
    return IntensityTensor<Scalar>(median_filter(in.data, k, exec), in.range);
}

template <typename Scalar>
IntensityTensor<Scalar> gaussian_blur(const IntensityTensor<Scalar>& in, int k = 5, double sigma = 1.0,
                                      const Execution& exec = {}) {
    return IntensityTensor<Scalar>(gaussian_blur(in.data, k, sigma, exec), in.range);
}

template <typename Scalar>
IntensityTensor<Scalar> grad_aniso_diffusion(const IntensityTensor<Scalar>& in, int steps = 5,
                                             double conductance = 1.0, double dt = kDefaultDiffusionStep,
                                             const Execution& exec = {}) {
    return IntensityTensor<Scalar>(grad_aniso_diffusion(in.data, steps, conductance, dt, exec), in.range);
}

}  // namespace mpol
