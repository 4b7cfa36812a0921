#include "generators.hpp"

#include "mpol/diffusion/sampling.hpp"
#include "mpol/diffusion/schedule.hpp"
#include "mpol/error.hpp"
#include "mpol/masks.hpp"

#include <doctest.h>

#include <cmath>

using namespace mpol;
using namespace mpol::diffusion;
using mpol::testing::Rng;

namespace {

class ZeroPredictor final : public EpsilonPredictor {
public:
    Image predict(const Image& x, int) const override { return Image(x.height(), x.width(), x.channels(), 0.0f); }
};

// Knows the clean image, so it returns the exact noise implied by x_t.
class OraclePredictor final : public EpsilonPredictor {
public:
    OraclePredictor(Image clean, const DiffusionSchedule& s) : clean_(std::move(clean)), schedule_(s) {}
    Image predict(const Image& x, int t) const override {
        const double ab = schedule_.alpha_bar(t);
        Image out(x.height(), x.width(), x.channels());
        out.planes() = ((x.planes().cast<double>() - std::sqrt(ab) * clean_.planes().cast<double>()) / std::sqrt(1.0 - ab))
                           .cast<float>();
        return out;
    }

private:
    Image clean_;
    const DiffusionSchedule& schedule_;
};

// Requires even extents and records what it was handed.
class EvenPredictor final : public EpsilonPredictor {
public:
    mutable Index seen_h = 0, seen_w = 0;
    Image predict(const Image& x, int) const override {
        seen_h = x.height();
        seen_w = x.width();
        if (x.height() % 4 || x.width() % 4) throw ModelError("odd extent");
        return Image(x.height(), x.width(), x.channels(), 0.0f);
    }
    Index size_multiple() const override { return 4; }
};

double mse(const Image& a, const Image& b) {
    return (a.planes().cast<double>() - b.planes().cast<double>()).square().mean();
}

}  // namespace

TEST_CASE("linear schedule tables") {
    const auto s = build_schedule();
    REQUIRE(s.steps() == 1000);
    CHECK(s.beta(1) == doctest::Approx(1e-4));
    CHECK(s.beta(1000) == doctest::Approx(0.02));
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.posterior_variance(1) == 0.0);
    double prod = 1;
    for (int t = 1; t <= 1000; ++t) {
        prod *= 1.0 - s.beta(t);
        CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
        CHECK(s.alpha(t) == doctest::Approx(1.0 - s.beta(t)));
        if (t > 1) {
            CHECK(s.beta(t) >= s.beta(t - 1));
            CHECK(s.posterior_variance(t) < s.beta(t));
            CHECK(s.posterior_variance(t) > 0.0);
        }
    }
    CHECK(s.alpha_bar(1000) < 1e-4);
    CHECK(s.beta(1) / std::sqrt(1.0 - s.alpha_bar(1)) == doctest::Approx(0.01));
    CHECK_THROWS_AS(build_schedule(0), ParameterError);
    CHECK_THROWS_AS(build_schedule(10, 0.1, 0.05), ParameterError);
    CHECK_THROWS_AS(DiffusionSchedule({0.1, 0.05}), ParameterError);
}

TEST_CASE("seed mixing and noise draws are deterministic") {
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
    CHECK(mix_seed(1, 2) != mix_seed(1, 3));
    CHECK(mix_seed(1, 2) != mix_seed(2, 2));
    const auto a = draw_noise(8, 8, 2, 42), b = draw_noise(8, 8, 2, 42), c = draw_noise(8, 8, 2, 43);
    CHECK(a.values == b.values);
    CHECK_FALSE(a.values == c.values);
}

TEST_CASE("forward marginal has the closed-form moments") {
    const auto s = build_schedule();
    const Image x0(64, 64, 16, 0.5f);
    for (int t : {1, 10, 250, 1000}) {
        const Image xt = forward_sample(x0, t, draw_noise(64, 64, 16, 100 + static_cast<std::uint64_t>(t)).values, s);
        const auto v = xt.planes().cast<double>();
        const double mean = v.mean();
        const double var = (v - mean).square().mean();
        const double n = static_cast<double>(v.size());
        const double sd = std::sqrt(1.0 - s.alpha_bar(t));
        CHECK(std::abs(mean - std::sqrt(s.alpha_bar(t)) * 0.5) < 5.0 * sd / std::sqrt(n));
        CHECK(var == doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(0.05));
    }
    CHECK(forward_sample(x0, 0, x0, s) == x0);
    CHECK_THROWS_AS(forward_sample(x0, 1001, x0, s), ParameterError);
}

TEST_CASE("chained forward steps match the one-shot marginal in distribution") {
    const auto s = build_schedule(50, 1e-3, 0.05);
    Rng rng(40);
    Image x0(64, 64, 4);
    for (Index i = 0; i < x0.planes().size(); ++i) x0.planes().data()[i] = static_cast<float>(rng.uniform(-1, 1));
    Image x = x0;
    for (int t = 1; t <= 50; ++t) x = forward_step(x, t, draw_noise(64, 64, 4, 500 + static_cast<std::uint64_t>(t)).values, s);
    // Residual against the scaled mean should be zero-mean with variance 1 - alpha_bar.
    const auto residual = x.planes().cast<double>() - std::sqrt(s.alpha_bar(50)) * x0.planes().cast<double>();
    const double n = static_cast<double>(residual.size());
    const double var = residual.square().mean();
    CHECK(std::abs(residual.mean()) < 5.0 * std::sqrt((1.0 - s.alpha_bar(50)) / n));
    CHECK(var == doctest::Approx(1.0 - s.alpha_bar(50)).epsilon(0.05));
}

TEST_CASE("reverse moments follow the closed form") {
    const auto s = build_schedule();
    Rng rng(41);
    Image x(5, 6, 3), clean(5, 6, 3);
    for (Index i = 0; i < x.planes().size(); ++i) {
        x.planes().data()[i] = static_cast<float>(rng.uniform(-1, 1));
        clean.planes().data()[i] = static_cast<float>(rng.uniform(-1, 1));
    }
    const OraclePredictor oracle(clean, s);
    for (int t : {1, 2, 37, 1000}) {
        const auto m = reverse_moments(x, t, oracle, s);
        const Image eps = oracle.predict(x, t);
        for (Index i = 0; i < x.planes().size(); ++i) {
            const double expected = (x.planes().data()[i] - s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t)) * eps.planes().data()[i]) /
                                    std::sqrt(s.alpha(t));
            CHECK(m.mean.planes().data()[i] == doctest::Approx(expected).epsilon(1e-5));
        }
        CHECK(m.variance == s.posterior_variance(t));
    }
    // At t = 1 with the exact noise the mean is the clean image.
    const Image x1 = forward_sample(clean, 1, draw_noise(5, 6, 3, 9).values, s);
    CHECK((reverse_moments(x1, 1, oracle, s).mean.planes() - clean.planes()).abs().maxCoeff() < 1e-5f);
}

TEST_CASE("reverse step at t = 1 is deterministic and ignores the noise") {
    const auto s = build_schedule();
    const ZeroPredictor zero;
    const Image x(4, 4, 2, 0.25f);
    const Image a = reverse_step(x, 1, zero, s, Image());
    const Image b = reverse_step(x, 1, zero, s, draw_noise(4, 4, 2, 3).values);
    CHECK(a == b);
    CHECK(a.at(0, 0, 0) == doctest::Approx(0.25 / std::sqrt(1.0 - 1e-4)));
    CHECK_THROWS_AS(reverse_step(x, 2, zero, s, Image(3, 3, 2)), FormatError);
}

TEST_CASE("oracle reverse chain moves toward the clean image") {
    const auto s = build_schedule();
    Rng rng(42);
    Image clean(32, 32, 2);
    for (Index i = 0; i < clean.planes().size(); ++i) clean.planes().data()[i] = static_cast<float>(rng.uniform(-0.8, 0.8));
    const OraclePredictor oracle(clean, s);
    const int start = 200;
    Image x = forward_sample(clean, start, draw_noise(32, 32, 2, 7).values, s);
    double previous = mse(x, clean);
    for (int t = start; t >= 1; --t) {
        x = reverse_step(x, t, oracle, s, draw_noise(32, 32, 2, 1000 + static_cast<std::uint64_t>(t)).values);
        if (t % 50 == 1) {
            const double now = mse(x, clean);
            CHECK(now < previous);
            previous = now;
        }
    }
    CHECK(mse(x, clean) < 1e-8);
}

TEST_CASE("predictor inputs are mirror-padded to the size multiple and cropped back") {
    const auto s = build_schedule();
    const EvenPredictor even;
    const Image x(5, 7, 1, 0.1f);
    const auto m = reverse_moments(x, 1, even, s);
    CHECK(even.seen_h == 8);
    CHECK(even.seen_w == 8);
    CHECK(m.mean.height() == 5);
    CHECK(m.mean.width() == 7);
}

TEST_CASE("single-pass denoise: zero predictor, masking and clamping") {
    const auto s = build_schedule();
    const ZeroPredictor zero;
    Rng rng(43);
    IntensityTensor<float> in(mpol::testing::random_stack<float>(rng, 6, 5, 16, 0.1, 0.9));
    in.data.at(3, 0, 0) = 1.0f;
    PixelMask mask = PixelMask::Constant(6, 5, true);
    mask(2, 2) = false;
    const auto out = denoise_single_pass(in, zero, s, mask, {1, 0});
    const double scale = 1.0 / std::sqrt(1.0 - 1e-4);
    for (Index y = 0; y < 6; ++y)
        for (Index x = 0; x < 5; ++x)
            for (Index c = 0; c < 16; ++c) {
                const float v = out.intensities.data.at(c, y, x);
                if (!mask(y, x)) {
                    CHECK(v == in.data.at(c, y, x));
                } else if (y == 0 && x == 0 && c == 3) {
                    CHECK(v == 1.0f);
                } else {
                    const double expected = ((2.0 * in.data.at(c, y, x) - 1.0) * scale + 1.0) / 2.0;
                    CHECK(v == doctest::Approx(expected).epsilon(1e-5));
                }
            }
    // Only the saturated value leaves [0, 1].
    CHECK(out.clamp_events == 1);
    CHECK(out.intensities.range == RangeState::Unit);
    CHECK_THROWS_AS(denoise_single_pass(in, zero, s, PixelMask::Constant(2, 2, true)), FormatError);
    CHECK_THROWS_AS(denoise_single_pass(in, zero, s, mask, {0, 0}), ParameterError);
}

TEST_CASE("multi-step denoise is reproducible from its seed") {
    const auto s = build_schedule();
    const ZeroPredictor zero;
    Rng rng(44);
    IntensityTensor<float> in(mpol::testing::random_stack<float>(rng, 8, 8, 16, 0.3, 0.7));
    const PixelMask mask = PixelMask::Constant(8, 8, true);
    const auto a = denoise_single_pass(in, zero, s, mask, {5, 11});
    const auto b = denoise_single_pass(in, zero, s, mask, {5, 11});
    const auto c = denoise_single_pass(in, zero, s, mask, {5, 12});
    CHECK(a.intensities.data == b.intensities.data);
    CHECK_FALSE(a.intensities.data == c.intensities.data);
}

TEST_CASE("noise estimators") {
    Rng rng(45);
    Image noisy(128, 128, 2, 0.0f);
    for (Index i = 0; i < noisy.planes().size(); ++i) noisy.planes().data()[i] = static_cast<float>(0.3 + rng.normal(0, 0.05));
    PixelMask mask = PixelMask::Constant(128, 128, true);
    CHECK(estimate_noise_sigma(noisy, mask) == doctest::Approx(0.05).epsilon(0.05));
    CHECK_THROWS_AS(estimate_noise_sigma(noisy, PixelMask::Constant(128, 128, false)), UndefinedResultError);

    const auto s = build_schedule();
    for (int t : {1, 3, 40, 600}) CHECK(estimate_time_point(s, 1.0 - s.alpha_bar(t)) == t);
    CHECK(estimate_time_point(s, 0.0) == 1);
    CHECK(estimate_time_point(s, 5.0) == 1000);
    CHECK_THROWS_AS(estimate_time_point(s, -1.0), ParameterError);
}
