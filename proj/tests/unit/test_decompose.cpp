#include "generators.hpp"

#include "mpol/decompose.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

using namespace mpol;
using mpol::testing::Rng;

namespace {

double max_abs(const Matrix4& a) { return a.cwiseAbs().maxCoeff(); }

MuellerField<double> field_of(const std::vector<Matrix4>& pixels, Index w) {
    const Index h = static_cast<Index>(pixels.size()) / w;
    MuellerField<double> f(h, w);
    for (Index i = 0; i < h * w; ++i) f.set_pixel(i / w, i % w, pixels[static_cast<std::size_t>(i)]);
    return f;
}

}  // namespace

TEST_CASE("closed-form symmetric eigenvalues match the iterative solver") {
    Rng rng(20);
    for (int k = 0; k < 500; ++k) {
        Eigen::Matrix3d a;
        for (int i = 0; i < 9; ++i) a.data()[i] = rng.uniform(-2, 2);
        a = (a + a.transpose()).eval();
        if (k % 5 == 0) a = a * a.transpose();  // positive semidefinite
        Eigen::Vector3d expected = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(a).eigenvalues().reverse();
        const Eigen::Vector3d got = symmetric_eigenvalues<double>(a);
        CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(got(0) >= got(1));
        CHECK(got(1) >= got(2));
    }
    const Eigen::Vector3d repeated = symmetric_eigenvalues<double>(Eigen::Matrix3d::Identity() * 0.3);
    CHECK((repeated.array() - 0.3).abs().maxCoeff() < 1e-15);
}

TEST_CASE("decomposition recovers composed factors") {
    Rng rng(21);
    for (int k = 0; k < 300; ++k) {
        const auto c = mpol::testing::random_composed(rng, 0.9, k % 2 == 1);
        const auto f = decompose_pixel<double>(c.m);
        CHECK(max_abs(f.diattenuator - c.diattenuator) < 1e-8);
        CHECK(max_abs(f.retarder - c.retarder) < 1e-8);
        CHECK(max_abs(f.depolarizer - c.depolarizer) < 1e-8);
        CHECK(max_abs(f.depolarizer * f.retarder * f.diattenuator - c.m) < 1e-10);
        CHECK(f.flags == 0);
        CHECK(f.sign == 1);
    }
}

TEST_CASE("factors are physical: retarder orthogonal, depolariser block symmetric") {
    Rng rng(22);
    for (int k = 0; k < 100; ++k) {
        const auto c = mpol::testing::random_composed(rng);
        const auto f = decompose_pixel<double>(c.m);
        const Eigen::Matrix3d mr = f.retarder.block<3, 3>(1, 1);
        CHECK(max_abs(Matrix4(f.retarder.transpose() * f.retarder) - Matrix4::Identity()) < 1e-10);
        CHECK(mr.determinant() == doctest::Approx(1.0).epsilon(1e-10));
        const Eigen::Matrix3d md = f.depolarizer.block<3, 3>(1, 1);
        CHECK((md - md.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("scalar map formulas") {
    Rng rng(23);
    for (int k = 0; k < 200; ++k) {
        const auto c = mpol::testing::random_composed(rng);
        const auto f = decompose_pixel<double>(c.m);
        std::uint8_t flag = 0;
        CHECK(diattenuation_of<double>(f.diattenuator) == doctest::Approx(c.diattenuation).epsilon(1e-9));
        CHECK(depolarization_of<double>(f.depolarizer) == doctest::Approx(c.depolarization).epsilon(1e-9));
        CHECK(std::abs(retardance_of<double>(f.retarder, flag) - c.retardance_deg) < 1e-5);
        CHECK(std::abs(mpol::testing::axial_difference(azimuth_of<double>(f.retarder, flag), c.azimuth_deg)) < 1e-5);
        CHECK(flag == 0);
    }
}

TEST_CASE("azimuth sweep over a full half-turn, including 90 degrees") {
    for (int deg = 0; deg < 180; deg += 5) {
        std::uint8_t flag = 0;
        const double phi = azimuth_of<double>(linear_retarder(70.0, deg), flag);
        CHECK(flag == 0);
        CHECK(phi >= 0.0);
        CHECK(phi < 180.0);
        CHECK(std::abs(phi - deg) < 1e-9);
    }
}

TEST_CASE("isotropic retarder leaves the azimuth undefined") {
    std::uint8_t flag = 0;
    CHECK(azimuth_of<double>(Matrix4::Identity(), flag) == 0.0);
    CHECK(flag == flags::kAzimuthUndefined);
    flag = 0;
    CHECK(retardance_of<double>(Matrix4::Identity(), flag) == 0.0);
    CHECK(flag == 0);
}

TEST_CASE("retardance argument outside [-1, 1] is clamped and flagged") {
    Matrix4 m = Matrix4::Identity();
    m(1, 1) = m(2, 2) = 1.0 + 1e-9;
    std::uint8_t flag = 0;
    CHECK(retardance_of<double>(m, flag) == 0.0);
    CHECK(flag == flags::kRetardanceClamped);
}

TEST_CASE("near-unit diattenuation is clamped and flagged") {
    Matrix4 m = Matrix4::Zero();
    m(0, 0) = 1.0;
    m(0, 1) = 1.0;  // D = 1, ideal polariser row
    m(1, 0) = 1.0;
    m(1, 1) = 1.0;
    const auto f = decompose_pixel<double>(m);
    CHECK((f.flags & flags::kDiattenuationClamped) != 0);
    CHECK(diattenuation_of<double>(f.diattenuator) <= max_diattenuation<double>() + 1e-15);
    CHECK(f.diattenuator.allFinite());
    CHECK(max_diattenuation<float>() < 1.0f);
}

TEST_CASE("fully depolarising pixels are flagged degenerate") {
    Matrix4 m = Matrix4::Zero();
    m(0, 0) = 1.0;
    const auto f = decompose_pixel<double>(m);
    CHECK((f.flags & flags::kDegenerate) != 0);
    CHECK(f.depolarizer.allFinite());
    CHECK(f.retarder.allFinite());
}

TEST_CASE("negative determinant is recorded in the sign") {
    Matrix4 m = Matrix4::Identity();
    m(3, 3) = -0.5;
    const auto f = decompose_pixel<double>(m);
    CHECK(f.sign == -1);
    CHECK(max_abs(f.depolarizer * f.retarder * f.diattenuator - m) < 1e-12);
}

TEST_CASE("field-level maps agree with per-pixel formulas") {
    Rng rng(24);
    std::vector<Matrix4> pixels;
    std::vector<mpol::testing::ComposedMueller> truth;
    for (int k = 0; k < 24; ++k) {
        truth.push_back(mpol::testing::random_composed(rng));
        pixels.push_back(truth.back().m);
    }
    const auto dec = lu_chipman(field_of(pixels, 6));
    const auto maps = polar_maps(dec);
    for (Index i = 0; i < 24; ++i) {
        const auto& t = truth[static_cast<std::size_t>(i)];
        CHECK(maps.diattenuation(i / 6, i % 6) == doctest::Approx(t.diattenuation).epsilon(1e-9));
        CHECK(maps.depolarization(i / 6, i % 6) == doctest::Approx(t.depolarization).epsilon(1e-9));
        CHECK(std::abs(maps.retardance(i / 6, i % 6) - t.retardance_deg) < 1e-5);
        CHECK(std::abs(mpol::testing::axial_difference(maps.azimuth(i / 6, i % 6), t.azimuth_deg)) < 1e-5);
    }
    CHECK(maps.valid().all());
    Index clamps = -1;
    PixelMask undefined;
    CHECK((retardance_map(dec, &clamps) == maps.retardance).all());
    CHECK((azimuth_map(dec, &undefined) == maps.azimuth).all());
    CHECK(clamps == 0);
    CHECK(undefined.count() == 0);
}

TEST_CASE("fused derivation is bit-identical to the staged pipeline") {
    Rng rng(25);
    const CalibrationField cal = tetrahedral_calibration();
    const auto m = mpol::testing::random_mueller_field(rng, 17, 13);
    auto in = forward_intensities(m, cal);
    in.data.planes() += 1e-3 * mpol::testing::random_stack<double>(rng, 17, 13, 16, -1, 1).planes();
    const auto in_f = in.cast<float>();

    auto staged = [&](const auto& x) { return polar_maps(lu_chipman(normalize_mueller(compute_mueller(x, cal)))); };
    const auto fused = derive_all(in, cal);
    const auto ref = staged(in);
    CHECK((fused.diattenuation == ref.diattenuation).all());
    CHECK((fused.depolarization == ref.depolarization).all());
    CHECK((fused.retardance == ref.retardance).all());
    CHECK((fused.azimuth == ref.azimuth).all());
    CHECK((fused.flags == ref.flags).all());

    const auto fused_f = derive_all(in_f, cal);
    const auto ref_f = staged(in_f);
    CHECK((fused_f.azimuth == ref_f.azimuth).all());
    CHECK((fused_f.retardance == ref_f.retardance).all());
}

TEST_CASE("derive_all is deterministic across tiles and threads and honours the mask") {
    Rng rng(26);
    const CalibrationField cal = tetrahedral_calibration();
    const auto in = forward_intensities(mpol::testing::random_mueller_field(rng, 40, 33), cal).cast<float>();
    PixelMask mask = PixelMask::Constant(40, 33, true);
    mask(3, 4) = false;
    const auto ref = derive_all(in, cal, mask, Execution{1, 1});
    for (int threads : {1, 2, 3})
        for (Index tile : {8, 32, 128}) {
            const auto out = derive_all(in, cal, mask, Execution{threads, tile});
            CHECK((out.azimuth == ref.azimuth).all());
            CHECK((out.retardance == ref.retardance).all());
            CHECK((out.diattenuation == ref.diattenuation).all());
            CHECK((out.depolarization == ref.depolarization).all());
            CHECK((out.flags == ref.flags).all());
        }
    CHECK((ref.flags(3, 4) & flags::kMasked) != 0);
    CHECK(ref.azimuth(3, 4) == 0.0f);
    CHECK(ref.valid().count() == 40 * 33 - 1);
}

TEST_CASE("non-positive intensity pixels are invalid and zero in every map") {
    IntensityTensor<double> in(2, 2);
    in.data.planes().setConstant(0.25);
    for (Index c = 0; c < 16; ++c) in.data.at(c, 1, 0) = 0.0;
    const auto maps = derive_all(in, tetrahedral_calibration());
    CHECK((maps.flags(1, 0) & flags::kNonPositiveIntensity) != 0);
    CHECK(maps.retardance(1, 0) == 0.0);
    CHECK(maps.count(flags::kNonPositiveIntensity) == 1);
}
