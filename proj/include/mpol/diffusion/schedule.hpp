#pragma once

#include <vector>

namespace mpol::diffusion {

inline constexpr int kDefaultTimePoints = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

/// Variance schedule of the forward Markov chain, indexed by time-point t.
/// Index 0 of the per-step tables is a placeholder; alpha_bar(0) = 1.
class DiffusionSchedule {
public:
    DiffusionSchedule() = default;
    explicit DiffusionSchedule(std::vector<double> betas);

    int steps() const { return static_cast<int>(beta_.size()) - 1; }
    double beta(int t) const { return beta_.at(static_cast<std::size_t>(t)); }
    double alpha(int t) const { return alpha_.at(static_cast<std::size_t>(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t)); }
    /// (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t); zero at t = 1.
    double posterior_variance(int t) const { return posterior_var_.at(static_cast<std::size_t>(t)); }

private:
    std::vector<double> beta_, alpha_, alpha_bar_, posterior_var_;
};

/// Linear beta ramp from beta_start (t = 1) to beta_end (t = T).
DiffusionSchedule build_schedule(int steps = kDefaultTimePoints, double beta_start = kDefaultBetaStart,
                                 double beta_end = kDefaultBetaEnd);

/// Time-point whose forward noise variance 1 - alpha_bar(t) is closest to
/// `noise_variance` (in the [-1, 1] intensity scale).
int estimate_time_point(const DiffusionSchedule& schedule, double noise_variance);

}  // namespace mpol::diffusion
