#include "mpol/diffusion/schedule.hpp"

#include "mpol/error.hpp"

#include <cmath>
#include <string>

namespace mpol::diffusion {

DiffusionSchedule::DiffusionSchedule(std::vector<double> betas) {
    if (betas.empty()) throw ParameterError("schedule needs at least one time-point");
    const std::size_t n = betas.size();
    beta_.assign(n + 1, 0.0);
    alpha_.assign(n + 1, 1.0);
    alpha_bar_.assign(n + 1, 1.0);
    posterior_var_.assign(n + 1, 0.0);
    for (std::size_t t = 1; t <= n; ++t) {
        const double b = betas[t - 1];
        if (!(b > 0.0 && b < 1.0)) throw ParameterError("beta(" + std::to_string(t) + ") must lie in (0, 1)");
        if (t > 1 && b < beta_[t - 1]) throw ParameterError("beta schedule must be non-decreasing");
        beta_[t] = b;
        alpha_[t] = 1.0 - b;
        alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
        posterior_var_[t] = (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]) * b;
    }
}

DiffusionSchedule build_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ParameterError("schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ParameterError("schedule requires 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
    return DiffusionSchedule(std::move(betas));
}

int estimate_time_point(const DiffusionSchedule& schedule, double noise_variance) {
    if (!(noise_variance >= 0.0)) throw ParameterError("noise variance must be non-negative");
    int best = 1;
    double best_gap = std::abs((1.0 - schedule.alpha_bar(1)) - noise_variance);
    for (int t = 2; t <= schedule.steps(); ++t) {
        const double gap = std::abs((1.0 - schedule.alpha_bar(t)) - noise_variance);
        if (gap < best_gap) {
            best = t;
            best_gap = gap;
        }
    }
    return best;
}

}  // namespace mpol::diffusion
