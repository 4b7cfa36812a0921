#include "mpol/mueller.hpp"

#include "mpol/container.hpp"
#include "mpol/error.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace mpol {

double condition_number(const Matrix4& m) {
    Eigen::JacobiSVD<Matrix4> svd(m);
    const auto& s = svd.singularValues();
    if (!s.allFinite() || s(3) <= 0.0) return std::numeric_limits<double>::infinity();
    return s(0) / s(3);
}

CalibrationField::CalibrationField(const Matrix4& analyser, const Matrix4& generator, double cond_cap)
    : cond_cap_(cond_cap), analyser_{analyser}, generator_{generator} {
    prepare();
}

CalibrationField::CalibrationField(Index height, Index width, Matrix4List analyser, Matrix4List generator,
                                   double cond_cap)
    : height_(height), width_(width), cond_cap_(cond_cap) {
    const auto pixels = static_cast<std::size_t>(height * width);
    auto expand = [&](Matrix4List list, const char* what) {
        if (list.size() == 1) return Matrix4List(pixels, list.front());
        if (list.size() != pixels) {
            throw FormatError(std::string(what) + " calibration holds " + std::to_string(list.size()) +
                              " matrices for a " + std::to_string(height) + "x" + std::to_string(width) + " frame");
        }
        return list;
    };
    analyser_ = expand(std::move(analyser), "analyser");
    generator_ = expand(std::move(generator), "generator");
    prepare();
}

void CalibrationField::prepare() {
    if (!(cond_cap_ >= 1.0)) throw ParameterError("condition-number cap must be >= 1");
    const std::size_t n = analyser_.size();
    analyser_inv_.assign(n, Matrix4::Zero());
    generator_inv_.assign(n, Matrix4::Zero());
    cond_analyser_.assign(n, 0.0);
    cond_generator_.assign(n, 0.0);
    valid_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        cond_analyser_[i] = condition_number(analyser_[i]);
        cond_generator_[i] = condition_number(generator_[i]);
        if (cond_analyser_[i] > cond_cap_ || cond_generator_[i] > cond_cap_) continue;
        analyser_inv_[i] = analyser_[i].fullPivLu().inverse();
        generator_inv_[i] = generator_[i].fullPivLu().inverse();
        valid_[i] = 1;
    }
}

namespace {

struct MatrixSet {
    Index height = 0, width = 0;
    Matrix4List matrices;
};

MatrixSet read_matrices(const std::filesystem::path& path, const char* what) {
    if (!std::filesystem::exists(path)) throw IoError(std::string(what) + " calibration not found: " + path.string());
    const ArrayField field = load_array_container(path);
    const auto& s = field.shape();
    MatrixSet set;
    if (s == std::vector<std::int64_t>{4, 4}) {
        set.matrices.resize(1);
    } else if (s.size() == 4 && s[2] == 4 && s[3] == 4) {
        set.height = s[0];
        set.width = s[1];
        set.matrices.resize(static_cast<std::size_t>(s[0] * s[1]));
    } else {
        throw FormatError(std::string(what) + " calibration must have shape [4,4] or [H,W,4,4]");
    }
    for (std::size_t m = 0; m < set.matrices.size(); ++m)
        for (Index k = 0; k < 16; ++k) set.matrices[m](k / 4, k % 4) = field.value(m * 16 + static_cast<std::size_t>(k));
    return set;
}

ArrayField write_matrices(const CalibrationField& cal, bool analyser) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(cal.slots()) * 16);
    for (Index s = 0; s < cal.slots(); ++s) {
        const Matrix4& m = analyser ? cal.analyser(s) : cal.generator(s);
        for (Index k = 0; k < 16; ++k) values.push_back(m(k / 4, k % 4));
    }
    std::vector<std::int64_t> shape = cal.is_global() ? std::vector<std::int64_t>{4, 4}
                                                      : std::vector<std::int64_t>{cal.height(), cal.width(), 4, 4};
    return ArrayField(std::move(shape), std::move(values), {analyser ? "analyser" : "generator"});
}

}  // namespace

CalibrationField load_calibration(const std::filesystem::path& analyser_path,
                                  const std::filesystem::path& generator_path, double cond_cap) {
    MatrixSet a = read_matrices(analyser_path, "analyser");
    MatrixSet g = read_matrices(generator_path, "generator");
    if (a.matrices.size() == 1 && g.matrices.size() == 1) {
        return CalibrationField(a.matrices.front(), g.matrices.front(), cond_cap);
    }
    const MatrixSet& framed = a.matrices.size() > 1 ? a : g;
    if (a.matrices.size() > 1 && g.matrices.size() > 1 && (a.height != g.height || a.width != g.width)) {
        throw FormatError("analyser and generator calibrations cover different frames");
    }
    return CalibrationField(framed.height, framed.width, std::move(a.matrices), std::move(g.matrices), cond_cap);
}

void save_calibration(const CalibrationField& cal, const std::filesystem::path& analyser_path,
                      const std::filesystem::path& generator_path) {
    save_array_container(write_matrices(cal, true), analyser_path);
    save_array_container(write_matrices(cal, false), generator_path);
}

CalibrationField identity_calibration() { return CalibrationField(Matrix4::Identity(), Matrix4::Identity()); }

CalibrationField tetrahedral_calibration() {
    const double r = 1.0 / std::sqrt(3.0);
    Matrix4 states;  // columns are Stokes vectors
    states << 1, 1, 1, 1,
              r, r, -r, -r,
              r, -r, r, -r,
              r, -r, -r, r;
    const Matrix4 generator = 0.5 * states;
    const Matrix4 analyser = 0.5 * states.transpose();
    return CalibrationField(analyser, generator);
}

namespace {

template <typename Scalar>
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;

// out.row(o)[p] = sum_k weights(o, k) * in.row(k)[p] for a contiguous pixel range,
// accumulated in ascending k. The same order is used for every tile and thread.
template <typename Scalar>
void apply_pixel_operator(const Eigen::Matrix<Scalar, 16, 16>& weights,
                          const typename ImageStack<Scalar>::Planes& in,
                          typename ImageStack<Scalar>::Planes& out, Index begin, Index count) {
    for (Index o = 0; o < 16; ++o) {
        auto dst = out.row(o).segment(begin, count);
        dst = weights(o, 0) * in.row(0).segment(begin, count);
        for (Index k = 1; k < 16; ++k) dst += weights(o, k) * in.row(k).segment(begin, count);
    }
}

// Coefficients of X -> L X R as a 16x16 operator on row-major flattened 4x4 matrices.
template <typename Scalar>
Eigen::Matrix<Scalar, 16, 16> sandwich_operator(const Matrix4& left, const Matrix4& right) {
    Eigen::Matrix<Scalar, 16, 16> k;
    for (Index r = 0; r < 4; ++r)
        for (Index c = 0; c < 4; ++c)
            for (Index i = 0; i < 4; ++i)
                for (Index j = 0; j < 4; ++j) k(4 * r + c, 4 * i + j) = static_cast<Scalar>(left(r, i) * right(j, c));
    return k;
}

template <typename Scalar>
void sandwich_field(const ImageStack<Scalar>& in, ImageStack<Scalar>& out, const CalibrationField& cal,
                    bool inverse, const Execution& exec) {
    const Index w = in.width();
    if (cal.is_global()) {
        const auto k = inverse ? sandwich_operator<Scalar>(cal.analyser_inverse(0), cal.generator_inverse(0))
                               : sandwich_operator<Scalar>(cal.analyser(0), cal.generator(0));
        parallel_rows(in.height(), exec, [&](Index y0, Index y1) {
            apply_pixel_operator<Scalar>(k, in.planes(), out.planes(), y0 * w, (y1 - y0) * w);
        });
        return;
    }
    parallel_rows(in.height(), exec, [&](Index y0, Index y1) {
        for (Index p = y0 * w; p < y1 * w; ++p) {
            const Index slot = p;
            const Mat4<Scalar> left = (inverse ? cal.analyser_inverse(slot) : cal.analyser(slot)).template cast<Scalar>();
            const Mat4<Scalar> right = (inverse ? cal.generator_inverse(slot) : cal.generator(slot)).template cast<Scalar>();
            Mat4<Scalar> x;
            for (Index k = 0; k < 16; ++k) x(k / 4, k % 4) = in.planes()(k, p);
            const Mat4<Scalar> y = (left * x).eval() * right;
            for (Index k = 0; k < 16; ++k) out.planes()(k, p) = y(k / 4, k % 4);
        }
    });
}

void require_compatible(const CalibrationField& cal, Index h, Index w) {
    if (cal.slots() == 0) throw CalibrationError("calibration is empty");
    if (!cal.compatible_with(h, w)) {
        throw FormatError("calibration covers " + std::to_string(cal.height()) + "x" + std::to_string(cal.width()) +
                          " pixels but the frame is " + std::to_string(h) + "x" + std::to_string(w));
    }
}

}  // namespace

template <typename Scalar>
MuellerField<Scalar> compute_mueller(const IntensityTensor<Scalar>& intensities, const CalibrationField& cal,
                                     const Execution& exec) {
    if (intensities.range != RangeState::Unit) throw ParameterError("compute_mueller expects [0,1] intensities");
    const Index h = intensities.height(), w = intensities.width();
    require_compatible(cal, h, w);
    MuellerField<Scalar> out(h, w);
    sandwich_field(intensities.data, out.coeffs, cal, true, exec);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
            if (!cal.valid(cal.slot(y, x))) out.flags(y, x) |= flags::kInvalidCalibration;
    return out;
}

template <typename Scalar>
IntensityTensor<Scalar> forward_intensities(const MuellerField<Scalar>& mueller, const CalibrationField& cal,
                                            const Execution& exec) {
    const Index h = mueller.height(), w = mueller.width();
    require_compatible(cal, h, w);
    IntensityTensor<Scalar> out(h, w);
    sandwich_field(mueller.coeffs, out.data, cal, false, exec);
    return out;
}

template <typename Scalar>
MuellerField<Scalar> normalize_mueller(const MuellerField<Scalar>& mueller, const Execution& exec) {
    MuellerField<Scalar> out = mueller;
    const Index w = mueller.width();
    parallel_rows(mueller.height(), exec, [&](Index y0, Index y1) {
        for (Index p = y0 * w; p < y1 * w; ++p) {
            const Scalar m11 = mueller.coeffs.planes()(0, p);
            if (!(m11 > Scalar(0))) {
                out.flags.data()[p] |= flags::kNonPositiveIntensity;
                continue;
            }
            for (Index k = 0; k < 16; ++k) out.coeffs.planes()(k, p) = mueller.coeffs.planes()(k, p) / m11;
        }
    });
    return out;
}

#define MPOL_INSTANTIATE(S)                                                                                  \
    template MuellerField<S> compute_mueller<S>(const IntensityTensor<S>&, const CalibrationField&, const Execution&); \
    template IntensityTensor<S> forward_intensities<S>(const MuellerField<S>&, const CalibrationField&, const Execution&); \
    template MuellerField<S> normalize_mueller<S>(const MuellerField<S>&, const Execution&);
MPOL_INSTANTIATE(float)
MPOL_INSTANTIATE(double)
#undef MPOL_INSTANTIATE

}  // namespace mpol
