#include "mpol/filters.hpp"

#include "mpol/border.hpp"
#include "mpol/error.hpp"

#include <algorithm>
#include <cmath>

namespace mpol {
namespace {

void require_odd(int k, const char* what) {
    if (k < 1 || k % 2 == 0) throw ParameterError(std::string(what) + " kernel width must be odd and positive");
}

}  // namespace

template <typename Scalar>
IntensityTensor<Scalar> multishot_average(std::span<const IntensityTensor<Scalar>> shots) {
    if (shots.empty()) throw ParameterError("multishot_average needs at least one shot");
    const auto& first = shots.front();
    Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(first.data.channels(), first.data.pixels());
    for (const auto& shot : shots) {
        if (!shot.data.same_extent(first.data) || shot.data.channels() != first.data.channels()) {
            throw FormatError("shots differ in shape");
        }
        sum += shot.data.planes().template cast<double>();
    }
    IntensityTensor<Scalar> out = first;
    out.data.planes() = (sum / static_cast<double>(shots.size())).template cast<Scalar>();
    return out;
}

template <typename Scalar>
ImageStack<Scalar> median_filter(const ImageStack<Scalar>& in, int k, const Execution& exec) {
    require_odd(k, "median");
    const Index h = in.height(), w = in.width(), r = k / 2;
    ImageStack<Scalar> out(h, w, in.channels());
    parallel_items(in.channels(), exec, [&](Index c) {
        const auto src = in.plane(c);
        auto dst = out.plane(c);
        std::vector<Scalar> window(static_cast<std::size_t>(k * k));
        for (Index y = 0; y < h; ++y) {
            for (Index x = 0; x < w; ++x) {
                std::size_t n = 0;
                for (Index dy = -r; dy <= r; ++dy)
                    for (Index dx = -r; dx <= r; ++dx)
                        window[n++] = src(mirror_index(y + dy, h), mirror_index(x + dx, w));
                auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
                std::nth_element(window.begin(), mid, window.end());
                dst(y, x) = *mid;
            }
        }
    });
    return out;
}

std::vector<double> gaussian_kernel(int k, double sigma) {
    require_odd(k, "gaussian");
    if (!(sigma > 0.0)) throw ParameterError("gaussian sigma must be positive");
    std::vector<double> kernel(static_cast<std::size_t>(k));
    const int r = k / 2;
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        kernel[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        total += kernel[static_cast<std::size_t>(i + r)];
    }
    for (auto& v : kernel) v /= total;
    return kernel;
}

template <typename Scalar>
ImageStack<Scalar> gaussian_blur(const ImageStack<Scalar>& in, int k, double sigma, const Execution& exec) {
    const auto kernel = gaussian_kernel(k, sigma);
    const Index h = in.height(), w = in.width(), r = k / 2;
    ImageStack<Scalar> out(h, w, in.channels());
    parallel_items(in.channels(), exec, [&](Index c) {
        const auto src = in.plane(c);
        Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp(h, w);
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
                double acc = 0.0;
                for (Index i = -r; i <= r; ++i) acc += kernel[static_cast<std::size_t>(i + r)] * src(y, mirror_index(x + i, w));
                tmp(y, x) = acc;
            }
        auto dst = out.plane(c);
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
                double acc = 0.0;
                for (Index i = -r; i <= r; ++i) acc += kernel[static_cast<std::size_t>(i + r)] * tmp(mirror_index(y + i, h), x);
                dst(y, x) = static_cast<Scalar>(acc);
            }
    });
    return out;
}

template <typename Scalar>
ImageStack<Scalar> grad_aniso_diffusion(const ImageStack<Scalar>& in, int steps, double conductance, double dt,
                                        const Execution& exec) {
    if (steps < 0) throw ParameterError("diffusion step count must be non-negative");
    if (!(conductance > 0.0)) throw ParameterError("conductance must be positive");
    if (!(dt > 0.0 && dt <= 0.25)) throw ParameterError("diffusion time step must lie in (0, 0.25] for stability");
    const Index h = in.height(), w = in.width();
    const double inv_k2 = 1.0 / (conductance * conductance);
    ImageStack<Scalar> out(h, w, in.channels());
    parallel_items(in.channels(), exec, [&](Index c) {
        using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Plane u = in.plane(c).template cast<double>();
        Plane next(h, w);
        auto flux = [inv_k2](double diff) { return std::exp(-diff * diff * inv_k2) * diff; };
        for (int s = 0; s < steps; ++s) {
            for (Index y = 0; y < h; ++y)
                for (Index x = 0; x < w; ++x) {
                    const double v = u(y, x);
                    const double sum = flux(u(mirror_index(y - 1, h), x) - v) + flux(u(mirror_index(y + 1, h), x) - v) +
                                       flux(u(y, mirror_index(x - 1, w)) - v) + flux(u(y, mirror_index(x + 1, w)) - v);
                    next(y, x) = v + dt * sum;
                }
            u.swap(next);
        }
        out.plane(c) = u.template cast<Scalar>();
    });
    return out;
}

#define MPOL_INSTANTIATE(S)                                                                                   \
    template IntensityTensor<S> multishot_average<S>(std::span<const IntensityTensor<S>>);                    \
    template ImageStack<S> median_filter<S>(const ImageStack<S>&, int, const Execution&);                     \
    template ImageStack<S> gaussian_blur<S>(const ImageStack<S>&, int, double, const Execution&);             \
    template ImageStack<S> grad_aniso_diffusion<S>(const ImageStack<S>&, int, double, double, const Execution&);
MPOL_INSTANTIATE(float)
MPOL_INSTANTIATE(double)
#undef MPOL_INSTANTIATE

}  // namespace mpol
