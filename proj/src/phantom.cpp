#include "mpol/phantom.hpp"

#include "mpol/container.hpp"
#include "mpol/diffusion/sampling.hpp"
#include "mpol/error.hpp"
#include "mpol/filters.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace mpol {

NLOHMANN_JSON_SERIALIZE_ENUM(RegionKind, {{RegionKind::Background, "background"},
                                          {RegionKind::FibreTract, "fibre-tract"},
                                          {RegionKind::LesionCore, "lesion-core"},
                                          {RegionKind::Infiltration, "infiltration"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RegionShape, {{RegionShape::Full, "full"},
                                           {RegionShape::Rect, "rect"},
                                           {RegionShape::Ellipse, "ellipse"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AzimuthKind, {{AzimuthKind::Constant, "constant"},
                                           {AzimuthKind::Flow, "flow"},
                                           {AzimuthKind::Random, "random"}})
NLOHMANN_JSON_SERIALIZE_ENUM(NoiseKind, {{NoiseKind::Gaussian, "gaussian"}, {NoiseKind::HeavyTailed, "heavy-tailed"}})

// Missing keys keep their defaults.
template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) j.at(key).get_to(field);
}

void to_json(nlohmann::json& j, const RegionGeometry& v) {
    j = nlohmann::json{{"shape", v.shape}, {"y0", v.y0}, {"x0", v.x0}, {"height", v.height}, {"width", v.width}, {"cy", v.cy}, {"cx", v.cx}, {"ry", v.ry}, {"rx", v.rx}};
}

void from_json(const nlohmann::json& j, RegionGeometry& v) {
    read_field(j, "shape", v.shape);
    read_field(j, "y0", v.y0);
    read_field(j, "x0", v.x0);
    read_field(j, "height", v.height);
    read_field(j, "width", v.width);
    read_field(j, "cy", v.cy);
    read_field(j, "cx", v.cx);
    read_field(j, "ry", v.ry);
    read_field(j, "rx", v.rx);
}

void to_json(nlohmann::json& j, const AzimuthField& v) {
    j = nlohmann::json{{"kind", v.kind}, {"base_deg", v.base_deg}, {"amplitude_deg", v.amplitude_deg}, {"period_px", v.period_px}, {"direction_deg", v.direction_deg}, {"jitter_deg", v.jitter_deg}};
}

void from_json(const nlohmann::json& j, AzimuthField& v) {
    read_field(j, "kind", v.kind);
    read_field(j, "base_deg", v.base_deg);
    read_field(j, "amplitude_deg", v.amplitude_deg);
    read_field(j, "period_px", v.period_px);
    read_field(j, "direction_deg", v.direction_deg);
    read_field(j, "jitter_deg", v.jitter_deg);
}

void to_json(nlohmann::json& j, const RegionSpec& v) {
    j = nlohmann::json{{"kind", v.kind}, {"geometry", v.geometry}, {"azimuth", v.azimuth}, {"albedo", v.albedo}, {"retardance_deg", v.retardance_deg}, {"diattenuation", v.diattenuation}, {"diattenuation_axis_deg", v.diattenuation_axis_deg}, {"depolarizer", v.depolarizer}};
}

void from_json(const nlohmann::json& j, RegionSpec& v) {
    read_field(j, "kind", v.kind);
    read_field(j, "geometry", v.geometry);
    read_field(j, "azimuth", v.azimuth);
    read_field(j, "albedo", v.albedo);
    read_field(j, "retardance_deg", v.retardance_deg);
    read_field(j, "diattenuation", v.diattenuation);
    read_field(j, "diattenuation_axis_deg", v.diattenuation_axis_deg);
    read_field(j, "depolarizer", v.depolarizer);
}

void to_json(nlohmann::json& j, const NoiseSpec& v) {
    j = nlohmann::json{{"sigma", v.sigma}, {"kind", v.kind}, {"shots", v.shots}};
}

void from_json(const nlohmann::json& j, NoiseSpec& v) {
    read_field(j, "sigma", v.sigma);
    read_field(j, "kind", v.kind);
    read_field(j, "shots", v.shots);
}

void to_json(nlohmann::json& j, const PhantomSpec& v) {
    j = nlohmann::json{{"height", v.height}, {"width", v.width}, {"regions", v.regions}, {"noise", v.noise}};
}

void from_json(const nlohmann::json& j, PhantomSpec& v) {
    read_field(j, "height", v.height);
    read_field(j, "width", v.width);
    read_field(j, "regions", v.regions);
    read_field(j, "noise", v.noise);
}

namespace {

constexpr double kDegree = std::numbers::pi / 180.0;

double wrap_axial(double deg) {
    double w = std::fmod(deg, 180.0);
    if (w < 0.0) w += 180.0;
    return w >= 180.0 ? 0.0 : w;
}

std::string pair_name(int k, const char* what) {
    std::ostringstream s;
    s << "pair_" << std::setw(4) << std::setfill('0') << k << '_' << what << ".mpac";
    return s.str();
}

}  // namespace

bool RegionGeometry::contains(Index y, Index x) const {
    const double py = static_cast<double>(y), px = static_cast<double>(x);
    switch (shape) {
        case RegionShape::Full:
            return true;
        case RegionShape::Rect:
            return py >= y0 && py < y0 + height && px >= x0 && px < x0 + width;
        case RegionShape::Ellipse: {
            const double dy = (py - cy) / ry, dx = (px - cx) / rx;
            return dy * dy + dx * dx <= 1.0;
        }
    }
    return false;
}

void PhantomSpec::validate() const {
    if (height < 1 || width < 1) throw ParameterError("phantom extent must be positive");
    if (regions.empty()) throw ParameterError("phantom needs at least one region");
    for (std::size_t k = 0; k < regions.size(); ++k) {
        const RegionSpec& r = regions[k];
        const std::string where = "region " + std::to_string(k) + ": ";
        if (!(r.albedo > 0.0 && r.albedo <= 1.0)) throw ParameterError(where + "albedo must lie in (0, 1]");
        if (!(r.retardance_deg >= 0.0 && r.retardance_deg <= 180.0))
            throw ParameterError(where + "retardance must lie in [0, 180] degrees");
        if (!(r.diattenuation >= 0.0 && r.diattenuation < 1.0))
            throw ParameterError(where + "diattenuation must lie in [0, 1)");
        for (double d : r.depolarizer)
            if (!(d > 0.0 && d <= 1.0)) throw ParameterError(where + "depolariser diagonal must lie in (0, 1]");
        if (r.azimuth.kind == AzimuthKind::Flow && !(r.azimuth.period_px > 0.0))
            throw ParameterError(where + "flow period must be positive");
        if (!(r.azimuth.jitter_deg >= 0.0)) throw ParameterError(where + "jitter must be non-negative");
        const auto& g = r.geometry;
        if (g.shape == RegionShape::Rect && !(g.height > 0.0 && g.width > 0.0))
            throw ParameterError(where + "rectangle extent must be positive");
        if (g.shape == RegionShape::Ellipse && !(g.ry > 0.0 && g.rx > 0.0))
            throw ParameterError(where + "ellipse radii must be positive");
    }
    if (!(noise.sigma >= 0.0)) throw ParameterError("noise sigma must be non-negative");
    if (noise.shots < 1) throw ParameterError("shot count must be at least 1");
}

PhantomSpec default_phantom_spec(Index height, Index width) {
    const double h = static_cast<double>(height), w = static_cast<double>(width);
    PhantomSpec spec;
    spec.height = height;
    spec.width = width;

    RegionSpec background;
    background.kind = RegionKind::Background;
    background.albedo = 0.45;
    background.retardance_deg = 20.0;
    background.azimuth = {AzimuthKind::Constant, 10.0};
    background.diattenuation = 0.05;
    background.depolarizer = {0.5, 0.5, 0.4};

    RegionSpec fibre;
    fibre.kind = RegionKind::FibreTract;
    fibre.geometry.shape = RegionShape::Rect;
    fibre.geometry.y0 = h / 8;
    fibre.geometry.x0 = w / 16;
    fibre.geometry.height = 3 * h / 4;
    fibre.geometry.width = 7 * w / 16;
    fibre.albedo = 0.6;
    fibre.retardance_deg = 60.0;
    fibre.azimuth = {AzimuthKind::Flow, 45.0, 20.0, h / 2, 90.0, 0.0};
    fibre.diattenuation = 0.1;
    fibre.diattenuation_axis_deg = 30.0;
    fibre.depolarizer = {0.8, 0.8, 0.7};

    RegionSpec infiltration;
    infiltration.kind = RegionKind::Infiltration;
    infiltration.geometry.shape = RegionShape::Ellipse;
    infiltration.geometry.cy = h / 2;
    infiltration.geometry.cx = 3 * w / 4;
    infiltration.geometry.ry = 3 * h / 8;
    infiltration.geometry.rx = 7 * w / 32;
    infiltration.albedo = 0.55;
    infiltration.retardance_deg = 40.0;
    infiltration.azimuth = {AzimuthKind::Flow, 120.0, 15.0, h / 3, 0.0, 12.0};
    infiltration.diattenuation = 0.08;
    infiltration.diattenuation_axis_deg = 100.0;
    infiltration.depolarizer = {0.65, 0.65, 0.55};

    RegionSpec lesion;
    lesion.kind = RegionKind::LesionCore;
    lesion.geometry.shape = RegionShape::Ellipse;
    lesion.geometry.cy = h / 2;
    lesion.geometry.cx = 3 * w / 4;
    lesion.geometry.ry = h / 5;
    lesion.geometry.rx = w / 8;
    lesion.albedo = 0.5;
    lesion.retardance_deg = 30.0;
    lesion.azimuth = {AzimuthKind::Random};
    lesion.diattenuation = 0.05;
    lesion.diattenuation_axis_deg = 0.0;
    lesion.depolarizer = {0.5, 0.5, 0.4};

    spec.regions = {background, fibre, infiltration, lesion};
    return spec;
}

PhantomSpec phantom_spec_from_json(const std::string& text) {
    try {
        PhantomSpec spec = nlohmann::json::parse(text).get<PhantomSpec>();
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("phantom spec: ") + e.what());
    }
}

std::string phantom_spec_to_json(const PhantomSpec& spec) { return nlohmann::json(spec).dump(2); }

Matrix4T<double> linear_retarder(double retardance_deg, double azimuth_deg) {
    const double c = std::cos(2 * azimuth_deg * kDegree), s = std::sin(2 * azimuth_deg * kDegree);
    const double cd = std::cos(retardance_deg * kDegree), sd = std::sin(retardance_deg * kDegree);
    Matrix4T<double> m = Matrix4T<double>::Zero();
    m(0, 0) = 1.0;
    m(1, 1) = c * c + s * s * cd;
    m(1, 2) = c * s * (1 - cd);
    m(1, 3) = s * sd;
    m(2, 1) = c * s * (1 - cd);
    m(2, 2) = s * s + c * c * cd;
    m(2, 3) = -c * sd;
    m(3, 1) = -s * sd;
    m(3, 2) = c * sd;
    m(3, 3) = cd;
    return m;
}

Matrix4T<double> linear_diattenuator(double diattenuation, double axis_deg) {
    const Eigen::Vector3d d =
        diattenuation * Eigen::Vector3d(std::cos(2 * axis_deg * kDegree), std::sin(2 * axis_deg * kDegree), 0.0);
    const double root = std::sqrt(1.0 - diattenuation * diattenuation);
    Matrix4T<double> m;
    m(0, 0) = 1.0;
    m.block<1, 3>(0, 1) = d.transpose();
    m.block<3, 1>(1, 0) = d;
    m.block<3, 3>(1, 1) = root * Eigen::Matrix3d::Identity();
    if (diattenuation > 0.0) m.block<3, 3>(1, 1) += (1.0 - root) * d * d.transpose() / (diattenuation * diattenuation);
    return m;
}

Matrix4T<double> diagonal_depolarizer(const std::array<double, 3>& diagonal) {
    return Eigen::Vector4d(1.0, diagonal[0], diagonal[1], diagonal[2]).asDiagonal();
}

Matrix4T<double> compose_mueller(const RegionSpec& region, double azimuth_deg) {
    return region.albedo * diagonal_depolarizer(region.depolarizer) *
           linear_retarder(region.retardance_deg, azimuth_deg) *
           linear_diattenuator(region.diattenuation, region.diattenuation_axis_deg);
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Index h = spec.height, w = spec.width;
    Phantom out;
    out.labels = LabelMap::Constant(h, w, -1);
    for (std::size_t k = 0; k < spec.regions.size(); ++k)
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x)
                if (spec.regions[k].geometry.contains(y, x)) out.labels(y, x) = static_cast<std::int32_t>(k);
    if ((out.labels < 0).any()) throw ParameterError("phantom regions do not cover the whole image");

    out.mueller = MuellerField<double>(h, w);
    auto& truth = out.truth;
    truth.diattenuation.resize(h, w);
    truth.depolarization.resize(h, w);
    truth.retardance.resize(h, w);
    truth.azimuth.resize(h, w);
    truth.flags = FlagMap::Zero(h, w);

    std::vector<std::mt19937_64> rngs;
    for (std::size_t k = 0; k < spec.regions.size(); ++k) rngs.emplace_back(diffusion::mix_seed(seed, k));
    std::uniform_real_distribution<double> uniform(0.0, 180.0);
    std::normal_distribution<double> normal;

    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            const auto k = static_cast<std::size_t>(out.labels(y, x));
            const RegionSpec& r = spec.regions[k];
            const AzimuthField& a = r.azimuth;
            double phi = a.base_deg;
            if (a.kind == AzimuthKind::Flow) {
                const double g = a.direction_deg * kDegree;
                phi += a.amplitude_deg *
                       std::sin(2 * std::numbers::pi * (double(x) * std::cos(g) + double(y) * std::sin(g)) / a.period_px);
            } else if (a.kind == AzimuthKind::Random) {
                phi = uniform(rngs[k]);
            }
            if (a.jitter_deg > 0.0) phi += a.jitter_deg * normal(rngs[k]);
            phi = wrap_axial(phi);

            out.mueller.set_pixel(y, x, compose_mueller(r, phi));
            truth.diattenuation(y, x) = r.diattenuation;
            truth.depolarization(y, x) = 1.0 - std::abs(r.depolarizer[0] + r.depolarizer[1] + r.depolarizer[2]) / 3.0;
            truth.retardance(y, x) = r.retardance_deg;
            if (r.retardance_deg == 0.0 || r.retardance_deg == 180.0) {
                truth.azimuth(y, x) = 0.0;
                truth.flags(y, x) = flags::kAzimuthUndefined;
            } else {
                truth.azimuth(y, x) = phi;
            }
        }
    return out;
}

template <typename Scalar>
NoisyIntensities<Scalar> add_acquisition_noise(const IntensityTensor<Scalar>& clean, double sigma, NoiseKind kind,
                                               std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw ParameterError("noise sigma must be non-negative");
    NoisyIntensities<Scalar> out{clean, 0};
    if (sigma == 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    constexpr double dof = 8.0;
    std::student_t_distribution<double> student(dof);
    const double t_scale = sigma * std::sqrt((dof - 2.0) / dof);
    auto& planes = out.intensities.data.planes();
    for (Index i = 0; i < planes.size(); ++i) {
        const double n = kind == NoiseKind::Gaussian ? normal(rng) : t_scale * student(rng);
        double v = static_cast<double>(planes.data()[i]) + n;
        if (v < 0.0 || v > 1.0) {
            v = std::clamp(v, 0.0, 1.0);
            ++out.clamp_events;
        }
        planes.data()[i] = static_cast<Scalar>(v);
    }
    return out;
}

template <typename Scalar>
NoisyIntensities<Scalar> acquire(const IntensityTensor<Scalar>& clean, const NoiseSpec& noise, int shots,
                                 std::uint64_t seed) {
    if (shots < 1) throw ParameterError("shot count must be at least 1");
    std::vector<IntensityTensor<Scalar>> frames;
    Index clamps = 0;
    for (int s = 0; s < shots; ++s) {
        auto shot = add_acquisition_noise(clean, noise.sigma, noise.kind, diffusion::mix_seed(seed, static_cast<std::uint64_t>(s)));
        clamps += shot.clamp_events;
        frames.push_back(std::move(shot.intensities));
    }
    return {multishot_average<Scalar>(frames), clamps};
}

std::filesystem::path emit_dataset(const PhantomSpec& spec, int count, const std::filesystem::path& out_dir,
                                   std::uint64_t seed) {
    spec.validate();
    if (count < 1) throw ParameterError("dataset count must be at least 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const CalibrationField cal = tetrahedral_calibration();
    save_calibration(cal, out_dir / "analyser.mpac", out_dir / "generator.mpac");

    nlohmann::json manifest;
    manifest["spec"] = spec;
    manifest["calibration"] = {{"analyser", "analyser.mpac"}, {"generator", "generator.mpac"}};
    manifest["pairs"] = nlohmann::json::array();
    for (int k = 0; k < count; ++k) {
        const std::uint64_t pair_seed = diffusion::mix_seed(seed, static_cast<std::uint64_t>(k));
        const Phantom ph = generate_phantom(spec, pair_seed);
        const IntensityTensor<float> clean = forward_intensities(ph.mueller, cal).cast<float>();
        // LQ and HQ draw from separate seed streams.
        const auto lq = add_acquisition_noise(clean, spec.noise.sigma, spec.noise.kind, diffusion::mix_seed(pair_seed, 0));
        const auto hq = acquire(clean, spec.noise, spec.noise.shots, diffusion::mix_seed(pair_seed, 1));

        ImageStack<float> maps(spec.height, spec.width, 4);
        maps.plane(0) = ph.truth.diattenuation.cast<float>();
        maps.plane(1) = ph.truth.depolarization.cast<float>();
        maps.plane(2) = ph.truth.retardance.cast<float>();
        maps.plane(3) = ph.truth.azimuth.cast<float>();
        ScalarMap<float> labels = ph.labels.cast<float>();

        const std::string names[] = {pair_name(k, "lq"), pair_name(k, "hq"), pair_name(k, "gt_maps"),
                                     pair_name(k, "gt_mueller"), pair_name(k, "labels")};
        save_array_container(to_array_field(lq.intensities.data, {"y", "x", "channel"}), out_dir / names[0]);
        save_array_container(to_array_field(hq.intensities.data, {"y", "x", "channel"}), out_dir / names[1]);
        save_array_container(to_array_field(maps, {"y", "x", "D,Delta,R,phi"}), out_dir / names[2]);
        save_array_container(to_array_field(ph.mueller.coeffs.cast<float>(), {"y", "x", "M"}), out_dir / names[3]);
        save_array_container(to_array_field(labels, {"y", "x"}), out_dir / names[4]);

        manifest["pairs"].push_back({{"pair_id", k},
                                     {"lq_path", names[0]},
                                     {"hq_path", names[1]},
                                     {"gt_paths", {names[2], names[3]}},
                                     {"labels_path", names[4]},
                                     {"seed", pair_seed}});
    }
    const auto path = out_dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << manifest.dump(2) << '\n';
    return path;
}

template NoisyIntensities<float> add_acquisition_noise(const IntensityTensor<float>&, double, NoiseKind, std::uint64_t);
template NoisyIntensities<double> add_acquisition_noise(const IntensityTensor<double>&, double, NoiseKind,
                                                        std::uint64_t);
template NoisyIntensities<float> acquire(const IntensityTensor<float>&, const NoiseSpec&, int, std::uint64_t);
template NoisyIntensities<double> acquire(const IntensityTensor<double>&, const NoiseSpec&, int, std::uint64_t);

}  // namespace mpol
