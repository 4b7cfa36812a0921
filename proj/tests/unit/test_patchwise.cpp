#include "generators.hpp"

#include "mpol/diffusion/network.hpp"
#include "mpol/diffusion/patchwise.hpp"
#include "mpol/error.hpp"

#include <doctest.h>

#include <set>

using namespace mpol;
using namespace mpol::diffusion;
using mpol::testing::Rng;

namespace {

class ZeroPredictor final : public EpsilonPredictor {
public:
    Image predict(const Image& x, int) const override { return Image(x.height(), x.width(), x.channels(), 0.0f); }
};

Image crop(const Image& frame, const PatchRect& r) {
    Image out(r.height, r.width, frame.channels());
    for (Index c = 0; c < frame.channels(); ++c) out.plane(c) = frame.plane(c).block(r.y0, r.x0, r.height, r.width);
    return out;
}

}  // namespace

TEST_CASE("full-frame plan covers every pixel with positive weight") {
    const PatchPlan plan(512, 384, 128, 16);
    std::set<Index> ys, xs;
    ScalarMap<int> cover = ScalarMap<int>::Zero(512, 384);
    for (Index t = 0; t < plan.size(); ++t) {
        const PatchRect r = plan.rect(t);
        CHECK(r.height == 128);
        CHECK(r.width == 128);
        CHECK(r.y0 >= 0);
        CHECK(r.x0 >= 0);
        CHECK(r.y0 + r.height <= 512);
        CHECK(r.x0 + r.width <= 384);
        ys.insert(r.y0);
        xs.insert(r.x0);
        cover.block(r.y0, r.x0, r.height, r.width) += 1;
    }
    CHECK(ys == std::set<Index>{0, 112, 224, 336, 384});
    CHECK(xs == std::set<Index>{0, 112, 224, 256});
    CHECK(plan.size() == 20);
    CHECK(cover.minCoeff() >= 1);
    const auto sum = plan.weight_sum();
    CHECK(sum.minCoeff() > 0.0);

    // weight_sum agrees with summing the per-tile weights directly.
    ScalarMap<double> direct = ScalarMap<double>::Zero(512, 384);
    for (Index t = 0; t < plan.size(); ++t) {
        const PatchRect r = plan.rect(t);
        for (Index y = 0; y < r.height; ++y)
            for (Index x = 0; x < r.width; ++x) direct(r.y0 + y, r.x0 + x) += plan.weight(t, y, x);
    }
    CHECK((direct - sum).abs().maxCoeff() < 1e-12);

    ScalarMap<double> normalized = ScalarMap<double>::Zero(512, 384);
    for (Index t = 0; t < plan.size(); ++t) {
        const PatchRect r = plan.rect(t);
        for (Index y = 0; y < r.height; ++y)
            for (Index x = 0; x < r.width; ++x)
                normalized(r.y0 + y, r.x0 + x) += plan.weight(t, y, x) / sum(r.y0 + y, r.x0 + x);
    }
    CHECK((normalized - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("ramp weights") {
    const PatchPlan plan(352, 128, 128, 16);
    REQUIRE(plan.size() == 3);
    // Top tile: full weight on its outer edge, ramp toward the shared side.
    CHECK(plan.weight(0, 0, 0) == 1.0);
    CHECK(plan.weight(0, 127, 64) == doctest::Approx(1.0 / 17.0));
    CHECK(plan.weight(0, 64, 0) == 1.0);
    // Middle tile ramps up from both shared sides.
    CHECK(plan.weight(1, 0, 10) == doctest::Approx(1.0 / 17.0));
    CHECK(plan.weight(1, 64, 10) == 1.0);
    for (Index t = 0; t < plan.size(); ++t)
        for (Index y = 0; y < 128; ++y) {
            const double w = plan.weight(t, y, 5);
            CHECK(w > 0.0);
            CHECK(w <= 1.0);
        }
}

TEST_CASE("plan preconditions and small frames") {
    CHECK_THROWS_AS(PatchPlan(64, 64, 16, 16), ParameterError);
    CHECK_THROWS_AS(PatchPlan(64, 64, 0, 0), ParameterError);
    const PatchPlan small(50, 70, 128, 16);
    REQUIRE(small.size() == 1);
    const PatchRect r = small.rect(0);
    CHECK(r.height == 50);
    CHECK(r.width == 70);
    const PatchPlan tall(300, 40, 128, 16);
    CHECK(tall.size() == 3);
    CHECK(tall.rect(2).y0 == 172);
    CHECK(tall.rect(2).width == 40);
}

TEST_CASE("identity and coordinate ops reproduce the frame") {
    Rng rng(60);
    const Image frame = mpol::testing::random_stack<float>(rng, 200, 150, 3, -1, 1);
    const Image same = patchwise_apply(frame, [](const Image& tile, Index, const PatchRect&) { return tile; }, 64, 12);
    CHECK((same.planes() - frame.planes()).abs().maxCoeff() <= 1e-7f);

    const Image ys = patchwise_apply(
        frame,
        [](const Image& tile, Index, const PatchRect& r) {
            Image out(tile.height(), tile.width(), 1);
            for (Index y = 0; y < tile.height(); ++y) out.plane(0).row(y).setConstant(static_cast<float>(r.y0 + y));
            return out;
        },
        64, 12);
    for (Index y = 0; y < 200; ++y) CHECK((ys.plane(0).row(y) - static_cast<float>(y)).abs().maxCoeff() <= 1e-4f * (y + 1));
}

TEST_CASE("blending is independent of the worker count") {
    Rng rng(61);
    const Image frame = mpol::testing::random_stack<float>(rng, 180, 140, 2, -1, 1);
    const PatchOp op = [](const Image& tile, Index index, const PatchRect&) {
        Image out = tile;
        out.planes() = out.planes() * 0.5f + 0.01f * static_cast<float>(index);
        return out;
    };
    const Image ref = patchwise_apply(frame, op, 64, 16, Execution{1, 1});
    for (int threads : {2, 3, 8}) CHECK(patchwise_apply(frame, op, 64, 16, Execution{threads, 1}) == ref);
}

TEST_CASE("each tile sees the frame region it covers") {
    Rng rng(62);
    const Image frame = mpol::testing::random_stack<float>(rng, 100, 90, 1, 0, 1);
    patchwise_apply(
        frame,
        [&](const Image& tile, Index, const PatchRect& r) {
            CHECK(tile == crop(frame, r));
            return tile;
        },
        48, 8);
}

TEST_CASE("patchwise denoising: single tile equals the whole-frame pass") {
    const auto s = build_schedule();
    const ZeroPredictor zero;
    Rng rng(63);
    IntensityTensor<float> in(mpol::testing::random_stack<float>(rng, 40, 30, 16, 0.1, 0.9));
    const PixelMask mask = PixelMask::Constant(40, 30, true);
    const auto whole = denoise_single_pass(in, zero, s, mask, {1, 5});
    const auto tiled = denoise_patchwise(in, zero, s, mask, {1, 5}, 128, 16);
    CHECK((whole.intensities.data.planes() - tiled.intensities.data.planes()).abs().maxCoeff() <= 1e-7f);
}

TEST_CASE("patchwise denoising restores masked pixels and is thread-deterministic") {
    const auto s = build_schedule();
    auto [text, blob] = identity_delta_manifest();
    const ConvNetPredictor net(text, blob);
    Rng rng(64);
    IntensityTensor<float> in(mpol::testing::random_stack<float>(rng, 96, 80, 16, 0.05, 0.95));
    PixelMask mask = PixelMask::Constant(96, 80, true);
    mask.block(10, 10, 5, 7).setConstant(false);
    const auto ref = denoise_patchwise(in, net, s, mask, {3, 9}, 48, 8, Execution{1, 16});
    for (int threads : {2, 4}) {
        const auto out = denoise_patchwise(in, net, s, mask, {3, 9}, 48, 8, Execution{threads, 16});
        CHECK(out.intensities.data == ref.intensities.data);
        CHECK(out.clamp_events == ref.clamp_events);
    }
    for (Index y = 10; y < 15; ++y)
        for (Index x = 10; x < 17; ++x)
            for (Index c = 0; c < 16; ++c) CHECK(ref.intensities.data.at(c, y, x) == in.data.at(c, y, x));
    CHECK(ref.intensities.data.planes().minCoeff() >= 0.0f);
    CHECK(ref.intensities.data.planes().maxCoeff() <= 1.0f);
    const auto other_seed = denoise_patchwise(in, net, s, mask, {3, 10}, 48, 8);
    CHECK_FALSE(other_seed.intensities.data == ref.intensities.data);
}
