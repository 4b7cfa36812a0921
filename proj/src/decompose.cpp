#include "mpol/decompose.hpp"

#include "mpol/error.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mpol {

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> symmetric_eigenvalues(const Matrix3T<Scalar>& a) {
    using std::acos, std::cos, std::sqrt;
    const Scalar off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    Eigen::Matrix<Scalar, 3, 1> ev;
    if (off == Scalar(0)) {
        ev << a(0, 0), a(1, 1), a(2, 2);
        std::sort(ev.data(), ev.data() + 3, std::greater<Scalar>());
        return ev;
    }
    const Scalar q = a.trace() / Scalar(3);
    const Scalar d0 = a(0, 0) - q, d1 = a(1, 1) - q, d2 = a(2, 2) - q;
    const Scalar p = sqrt((d0 * d0 + d1 * d1 + d2 * d2 + Scalar(2) * off) / Scalar(6));
    Matrix3T<Scalar> b = a;
    b.diagonal().array() -= q;
    b /= p;
    const Scalar r = std::clamp(b.determinant() / Scalar(2), Scalar(-1), Scalar(1));
    const Scalar angle = acos(r) / Scalar(3);
    const Scalar third = Scalar(2) * std::numbers::pi_v<Scalar> / Scalar(3);
    ev(0) = q + Scalar(2) * p * cos(angle);
    ev(2) = q + Scalar(2) * p * cos(angle + third);
    ev(1) = Scalar(3) * q - ev(0) - ev(2);
    return ev;
}

template <typename Scalar>
PixelFactors<Scalar> decompose_pixel(const Matrix4T<Scalar>& m) {
    using std::sqrt, std::abs;
    using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
    using Mat3 = Matrix3T<Scalar>;
    PixelFactors<Scalar> out;

    // Diattenuator from the first row.
    Vec3 d = m.template block<1, 3>(0, 1).transpose();
    Scalar dnorm = d.norm();
    if (dnorm > max_diattenuation<Scalar>()) {
        d *= max_diattenuation<Scalar>() / dnorm;
        dnorm = max_diattenuation<Scalar>();
        out.flags |= flags::kDiattenuationClamped;
    }
    const Scalar root = sqrt(Scalar(1) - dnorm * dnorm);
    // (1 - root) * d^ d^T written as d d^T / (1 + root), which stays exact at D = 0.
    const Mat3 m_d = root * Mat3::Identity() + (d * d.transpose()) / (Scalar(1) + root);
    out.diattenuator.setZero();
    out.diattenuator(0, 0) = Scalar(1);
    out.diattenuator.template block<1, 3>(0, 1) = d.transpose();
    out.diattenuator.template block<3, 1>(1, 0) = d;
    out.diattenuator.template block<3, 3>(1, 1) = m_d;

    // Closed-form inverse: M_D^-1 = [1, -d^T; -d, m_d] / (1 - D^2).
    Matrix4T<Scalar> d_inv;
    d_inv(0, 0) = Scalar(1);
    d_inv.template block<1, 3>(0, 1) = -d.transpose();
    d_inv.template block<3, 1>(1, 0) = -d;
    d_inv.template block<3, 3>(1, 1) = m_d;
    d_inv /= (Scalar(1) - dnorm * dnorm);

    const Matrix4T<Scalar> m_prime = m * d_inv;
    const Vec3 polarizance = m_prime.template block<3, 1>(1, 0);
    const Mat3 mp = m_prime.template block<3, 3>(1, 1);

    const Scalar det = mp.determinant();
    out.sign = det < Scalar(0) ? std::int8_t(-1) : std::int8_t(1);
    const bool degenerate = !(abs(det) >= static_cast<Scalar>(kDegenerateDeterminant));
    if (degenerate) out.flags |= flags::kDegenerate;

    // m_Delta = s [X + k2 I]^-1 [k1 X + k3 I], the signed square root of X = m' m'^T.
    const Mat3 x = mp * mp.transpose();
    const Vec3 lambda = symmetric_eigenvalues<Scalar>(x).cwiseMax(Scalar(0));
    const Vec3 sl = lambda.cwiseSqrt();
    const Scalar k1 = sl(0) + sl(1) + sl(2);
    const Scalar k2 = sl(0) * sl(1) + sl(1) * sl(2) + sl(2) * sl(0);
    const Scalar k3 = abs(det);
    const Mat3 lhs = x + k2 * Mat3::Identity();
    const Mat3 rhs = k1 * x + k3 * Mat3::Identity();
    const Scalar s = static_cast<Scalar>(out.sign);

    Mat3 m_delta, m_r;
    if (!degenerate) {
        m_delta = s * (lhs.inverse() * rhs);
        m_r = m_delta.inverse() * mp;
    } else {
        m_delta = s * (Eigen::CompleteOrthogonalDecomposition<Mat3>(lhs).pseudoInverse() * rhs);
        m_r = Eigen::CompleteOrthogonalDecomposition<Mat3>(m_delta).pseudoInverse() * mp;
    }

    out.depolarizer.setZero();
    out.depolarizer(0, 0) = Scalar(1);
    out.depolarizer.template block<3, 1>(1, 0) = polarizance;
    out.depolarizer.template block<3, 3>(1, 1) = m_delta;

    out.retarder.setZero();
    out.retarder(0, 0) = Scalar(1);
    out.retarder.template block<3, 3>(1, 1) = m_r;
    return out;
}

template <typename Scalar>
Scalar diattenuation_of(const Matrix4T<Scalar>& md) {
    return std::sqrt(md(0, 1) * md(0, 1) + md(0, 2) * md(0, 2) + md(0, 3) * md(0, 3));
}

template <typename Scalar>
Scalar depolarization_of(const Matrix4T<Scalar>& mdelta) {
    // Trace over the 3x3 depolarising block, so that the identity reads 0.
    const Scalar trace = mdelta(1, 1) + mdelta(2, 2) + mdelta(3, 3);
    return Scalar(1) - std::abs(trace) / Scalar(3);
}

template <typename Scalar>
Scalar retardance_of(const Matrix4T<Scalar>& mr, std::uint8_t& flag_out) {
    const Scalar a = mr(1, 1) + mr(2, 2);
    const Scalar b = mr(2, 1) - mr(1, 2);
    Scalar arg = std::sqrt(a * a + b * b) - Scalar(1);
    if (arg > Scalar(1) || arg < Scalar(-1)) {
        arg = std::clamp(arg, Scalar(-1), Scalar(1));
        flag_out |= flags::kRetardanceClamped;
    }
    return std::acos(arg) * (Scalar(180) / std::numbers::pi_v<Scalar>);
}

template <typename Scalar>
Scalar azimuth_of(const Matrix4T<Scalar>& mr, std::uint8_t& flag_out) {
    const Scalar r24 = mr(1, 3), r43 = mr(3, 2);
    const auto tiny = static_cast<Scalar>(kIsotropicThreshold);
    if (std::abs(r24) < tiny && std::abs(r43) < tiny) {
        flag_out |= flags::kAzimuthUndefined;
        return Scalar(0);
    }
    Scalar phi = Scalar(0.5) * std::atan2(r24, r43) * (Scalar(180) / std::numbers::pi_v<Scalar>);
    if (phi < Scalar(0)) phi += Scalar(180);
    if (phi >= Scalar(180)) phi = Scalar(0);  // -0.0...01 + 180 rounds to 180
    return phi;
}

template <typename Scalar>
PixelFactors<Scalar> DecomposedField<Scalar>::pixel(Index y, Index x) const {
    PixelFactors<Scalar> f;
    const Index p = y * width() + x;
    for (Index k = 0; k < 16; ++k) {
        f.depolarizer(k / 4, k % 4) = depolarizer.planes()(k, p);
        f.retarder(k / 4, k % 4) = retarder.planes()(k, p);
        f.diattenuator(k / 4, k % 4) = diattenuator.planes()(k, p);
    }
    f.flags = flags(y, x);
    f.sign = sign(y, x);
    return f;
}

namespace {

template <typename Scalar>
Matrix4T<Scalar> gather(const ImageStack<Scalar>& stack, Index p) {
    Matrix4T<Scalar> m;
    for (Index k = 0; k < 16; ++k) m(k / 4, k % 4) = stack.planes()(k, p);
    return m;
}

template <typename Scalar>
void scatter(ImageStack<Scalar>& stack, Index p, const Matrix4T<Scalar>& m) {
    for (Index k = 0; k < 16; ++k) stack.planes()(k, p) = m(k / 4, k % 4);
}

template <typename Scalar>
void write_maps(PolarParamMaps<Scalar>& maps, Index p, const PixelFactors<Scalar>& f, std::uint8_t flags_in) {
    std::uint8_t fl = flags_in | f.flags;
    Scalar d = diattenuation_of(f.diattenuator);
    Scalar delta = depolarization_of(f.depolarizer);
    Scalar r = retardance_of(f.retarder, fl);
    Scalar phi = azimuth_of(f.retarder, fl);
    if (fl & flags::kInvalidating) d = delta = r = phi = Scalar(0);
    maps.diattenuation.data()[p] = d;
    maps.depolarization.data()[p] = delta;
    maps.retardance.data()[p] = r;
    maps.azimuth.data()[p] = phi;
    maps.flags.data()[p] = fl;
}

template <typename Scalar>
PolarParamMaps<Scalar> allocate_maps(Index h, Index w) {
    PolarParamMaps<Scalar> maps;
    maps.diattenuation.resize(h, w);
    maps.depolarization.resize(h, w);
    maps.retardance.resize(h, w);
    maps.azimuth.resize(h, w);
    maps.flags = FlagMap::Zero(h, w);
    return maps;
}

}  // namespace

template <typename Scalar>
DecomposedField<Scalar> lu_chipman(const MuellerField<Scalar>& normalized, const Execution& exec) {
    const Index h = normalized.height(), w = normalized.width();
    DecomposedField<Scalar> dec;
    dec.depolarizer = ImageStack<Scalar>(h, w, 16);
    dec.retarder = ImageStack<Scalar>(h, w, 16);
    dec.diattenuator = ImageStack<Scalar>(h, w, 16);
    dec.flags = normalized.flags;
    dec.sign = SignMap::Ones(h, w);
    parallel_rows(h, exec, [&](Index y0, Index y1) {
        for (Index p = y0 * w; p < y1 * w; ++p) {
            const auto f = decompose_pixel<Scalar>(gather(normalized.coeffs, p));
            scatter(dec.depolarizer, p, f.depolarizer);
            scatter(dec.retarder, p, f.retarder);
            scatter(dec.diattenuator, p, f.diattenuator);
            dec.flags.data()[p] |= f.flags;
            dec.sign.data()[p] = f.sign;
        }
    });
    return dec;
}

template <typename Scalar>
ScalarMap<Scalar> diattenuation_map(const DecomposedField<Scalar>& dec) {
    ScalarMap<Scalar> out(dec.height(), dec.width());
    for (Index p = 0; p < out.size(); ++p) out.data()[p] = diattenuation_of(gather(dec.diattenuator, p));
    return out;
}

template <typename Scalar>
ScalarMap<Scalar> depolarization_map(const DecomposedField<Scalar>& dec) {
    ScalarMap<Scalar> out(dec.height(), dec.width());
    for (Index p = 0; p < out.size(); ++p) out.data()[p] = depolarization_of(gather(dec.depolarizer, p));
    return out;
}

template <typename Scalar>
ScalarMap<Scalar> retardance_map(const DecomposedField<Scalar>& dec, Index* clamp_count) {
    ScalarMap<Scalar> out(dec.height(), dec.width());
    Index clamps = 0;
    for (Index p = 0; p < out.size(); ++p) {
        std::uint8_t fl = 0;
        out.data()[p] = retardance_of(gather(dec.retarder, p), fl);
        clamps += (fl & flags::kRetardanceClamped) ? 1 : 0;
    }
    if (clamp_count) *clamp_count = clamps;
    return out;
}

template <typename Scalar>
ScalarMap<Scalar> azimuth_map(const DecomposedField<Scalar>& dec, PixelMask* undefined) {
    ScalarMap<Scalar> out(dec.height(), dec.width());
    if (undefined) undefined->setConstant(dec.height(), dec.width(), false);
    for (Index p = 0; p < out.size(); ++p) {
        std::uint8_t fl = 0;
        out.data()[p] = azimuth_of(gather(dec.retarder, p), fl);
        if (undefined) undefined->data()[p] = (fl & flags::kAzimuthUndefined) != 0;
    }
    return out;
}

template <typename Scalar>
PolarParamMaps<Scalar> polar_maps(const DecomposedField<Scalar>& dec) {
    auto maps = allocate_maps<Scalar>(dec.height(), dec.width());
    for (Index p = 0; p < dec.flags.size(); ++p) {
        PixelFactors<Scalar> f;
        f.depolarizer = gather(dec.depolarizer, p);
        f.retarder = gather(dec.retarder, p);
        f.diattenuator = gather(dec.diattenuator, p);
        f.flags = 0;
        write_maps(maps, p, f, dec.flags.data()[p]);
    }
    return maps;
}

template <typename Scalar>
PolarParamMaps<Scalar> derive_all(const IntensityTensor<Scalar>& intensities, const CalibrationField& cal,
                                  const PixelMask& mask, const Execution& exec) {
    const Index h = intensities.height(), w = intensities.width();
    if (mask.rows() != h || mask.cols() != w) throw FormatError("mask extent differs from the intensity frame");
    MuellerField<Scalar> mueller = compute_mueller(intensities, cal, exec);
    for (Index p = 0; p < mask.size(); ++p)
        if (!mask.data()[p]) mueller.flags.data()[p] |= flags::kMasked;

    auto maps = allocate_maps<Scalar>(h, w);
    parallel_rows(h, exec, [&](Index y0, Index y1) {
        for (Index p = y0 * w; p < y1 * w; ++p) {
            std::uint8_t fl = mueller.flags.data()[p];
            Matrix4T<Scalar> m = gather(mueller.coeffs, p);
            const Scalar m11 = m(0, 0);
            if (m11 > Scalar(0)) {
                for (Index k = 0; k < 16; ++k) m(k / 4, k % 4) = m(k / 4, k % 4) / m11;
            } else {
                fl |= flags::kNonPositiveIntensity;
            }
            write_maps(maps, p, decompose_pixel<Scalar>(m), fl);
        }
    });
    return maps;
}

template <typename Scalar>
PolarParamMaps<Scalar> derive_all(const IntensityTensor<Scalar>& intensities, const CalibrationField& cal,
                                  const Execution& exec) {
    return derive_all(intensities, cal, PixelMask::Constant(intensities.height(), intensities.width(), true), exec);
}

#define MPOL_INSTANTIATE(S)                                                                             \
    template Eigen::Matrix<S, 3, 1> symmetric_eigenvalues<S>(const Matrix3T<S>&);                       \
    template PixelFactors<S> decompose_pixel<S>(const Matrix4T<S>&);                                    \
    template struct DecomposedField<S>;                                                                 \
    template S diattenuation_of<S>(const Matrix4T<S>&);                                                 \
    template S depolarization_of<S>(const Matrix4T<S>&);                                                \
    template S retardance_of<S>(const Matrix4T<S>&, std::uint8_t&);                                     \
    template S azimuth_of<S>(const Matrix4T<S>&, std::uint8_t&);                                        \
    template DecomposedField<S> lu_chipman<S>(const MuellerField<S>&, const Execution&);                \
    template ScalarMap<S> diattenuation_map<S>(const DecomposedField<S>&);                              \
    template ScalarMap<S> depolarization_map<S>(const DecomposedField<S>&);                             \
    template ScalarMap<S> retardance_map<S>(const DecomposedField<S>&, Index*);                         \
    template ScalarMap<S> azimuth_map<S>(const DecomposedField<S>&, PixelMask*);                        \
    template PolarParamMaps<S> polar_maps<S>(const DecomposedField<S>&);                                \
    template PolarParamMaps<S> derive_all<S>(const IntensityTensor<S>&, const CalibrationField&, const PixelMask&, \
                                             const Execution&);                                         \
    template PolarParamMaps<S> derive_all<S>(const IntensityTensor<S>&, const CalibrationField&, const Execution&);
MPOL_INSTANTIATE(float)
MPOL_INSTANTIATE(double)
#undef MPOL_INSTANTIATE

}  // namespace mpol
