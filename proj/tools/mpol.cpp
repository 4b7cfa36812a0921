// mpol: command-line front end for the polarimetric pipeline.

#include "mpol/bench.hpp"
#include "mpol/container.hpp"
#include "mpol/decompose.hpp"
#include "mpol/diffusion/network.hpp"
#include "mpol/diffusion/patchwise.hpp"
#include "mpol/error.hpp"
#include "mpol/filters.hpp"
#include "mpol/masks.hpp"
#include "mpol/metrics.hpp"
#include "mpol/mueller.hpp"
#include "mpol/phantom.hpp"
#include "mpol/render.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace mpol;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kCalibration = 3, kModel = 4 };

struct UsageError : Error {
    using Error::Error;
};

struct Common {
    int threads = 0;
    Index tile = 64;

    Execution exec() const { return {threads, tile}; }
};

void add_common(CLI::App& cmd, Common& common) {
    cmd.add_option("--threads", common.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    cmd.add_option("--tile", common.tile, "Rows per work item")->check(CLI::PositiveNumber);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

CalibrationField load_calibration_or_fail(const fs::path& a, const fs::path& g, double cap) {
    try {
        return load_calibration(a, g, cap);
    } catch (const CalibrationError&) {
        throw;
    } catch (const Error& e) {
        throw CalibrationError(e.what());
    }
}

IntensityTensor<float> load_intensities(const fs::path& path) {
    return IntensityTensor<float>(image_stack_from<float>(load_array_container(path)), RangeState::Unit);
}

template <typename Scalar>
ScalarMap<double> as_double(const ScalarMap<Scalar>& m) {
    return m.template cast<double>();
}

// derive -------------------------------------------------------------------

struct DeriveArgs {
    fs::path input, cal_a, cal_g, out;
    double mask_threshold = kDefaultReflectionThreshold;
    double cond_cap = kDefaultConditionCap;
    Common common;
};

template <typename Scalar>
void derive_typed(const ArrayField& field, const CalibrationField& cal, const DeriveArgs& args) {
    const IntensityTensor<Scalar> in(image_stack_from<Scalar>(field), RangeState::Unit);
    const PixelMask mask = mask_reflections(in, args.mask_threshold);
    const PolarParamMaps<Scalar> maps = derive_all(in, cal, mask, args.common.exec());
    fs::create_directories(args.out);
    save_array_container(to_array_field(maps.diattenuation, {"y", "x"}), args.out / "D.mpac");
    save_array_container(to_array_field(maps.depolarization, {"y", "x"}), args.out / "Delta.mpac");
    save_array_container(to_array_field(maps.retardance, {"y", "x"}), args.out / "R.mpac");
    save_array_container(to_array_field(maps.azimuth, {"y", "x"}), args.out / "phi.mpac");
    save_array_container(mask_to_array_field(maps.valid()), args.out / "mask.mpac");
    save_array_container(to_array_field(ScalarMap<float>(maps.flags.template cast<float>()), {"y", "x"}),
                         args.out / "flags.mpac");
}

int run_derive(const DeriveArgs& args) {
    const ArrayField field = load_array_container(args.input);
    const CalibrationField cal = load_calibration_or_fail(args.cal_a, args.cal_g, args.cond_cap);
    if (field.dtype() == DType::F64) {
        derive_typed<double>(field, cal, args);
    } else {
        derive_typed<float>(field, cal, args);
    }
    return kOk;
}

// denoise ------------------------------------------------------------------

struct DenoiseArgs {
    std::vector<fs::path> inputs;
    fs::path out, model;
    std::string filter;
    int t_infer = 1;
    bool auto_t = false;
    std::uint64_t seed = 0;
    double sigma = 1.0;
    Index patch = 128, overlap = 16;
    double mask_threshold = kDefaultReflectionThreshold;
    Common common;
};

IntensityTensor<float> apply_filter(const std::string& filter, const std::vector<IntensityTensor<float>>& inputs,
                                    double sigma, const Execution& exec) {
    if (filter != "avg" && inputs.size() != 1) throw UsageError("only --filter avg accepts several inputs");
    if (filter == "medf") return median_filter(inputs.front(), 3, exec);
    if (filter == "gblr") return gaussian_blur(inputs.front(), 5, sigma, exec);
    if (filter == "grad") return grad_aniso_diffusion(inputs.front(), 5, 1.0, kDefaultDiffusionStep, exec);
    if (filter == "avg") return multishot_average<float>(inputs);
    throw UsageError("unknown filter '" + filter + "'");
}

int run_denoise(const DenoiseArgs& args) {
    if (args.model.empty() == args.filter.empty()) throw UsageError("select exactly one of --model and --filter");
    std::vector<IntensityTensor<float>> inputs;
    for (const auto& p : args.inputs) inputs.push_back(load_intensities(p));
    const PixelMask mask = mask_reflections(inputs.front(), args.mask_threshold);
    const Execution exec = args.common.exec();

    IntensityTensor<float> out;
    if (!args.model.empty()) {
        if (inputs.size() != 1) throw UsageError("model denoising takes a single input");
        const auto model = diffusion::load_weight_manifest(args.model);
        const auto schedule = diffusion::build_schedule();
        diffusion::DenoiseOptions options{args.t_infer, args.seed};
        if (args.auto_t) {
            const auto signed_in = rescale_to_signed_unit(inputs.front());
            const double s = diffusion::estimate_noise_sigma(signed_in.data, mask);
            options.t_infer = diffusion::estimate_time_point(schedule, s * s);
        }
        auto result = diffusion::denoise_patchwise(inputs.front(), model, schedule, mask, options, args.patch,
                                                   args.overlap, exec);
        std::cerr << "t_infer " << options.t_infer << ", clamp events " << result.clamp_events << '\n';
        out = std::move(result.intensities);
    } else {
        out = apply_filter(args.filter, inputs, args.sigma, exec);
        auto& planes = out.data.planes();
        for (Index p = 0; p < planes.cols(); ++p)
            if (!mask.data()[p]) planes.col(p) = inputs.front().data.planes().col(p);
    }
    save_array_container(to_array_field(out.data, {"y", "x", "channel"}), args.out);
    return kOk;
}

// bench --------------------------------------------------------------------

struct BenchArgs {
    std::string shape = "patch", stage = "all";
    int repeats = 30, warmups = 3;
    fs::path model, out;
    std::uint64_t seed = 0;
    Common common;
};

int run_bench_cmd(const BenchArgs& args) {
    const Index h = args.shape == "full" ? 512 : 128, w = args.shape == "full" ? 384 : 128;
    const std::vector<long long> shape{h, w, 16};
    const CalibrationField cal = tetrahedral_calibration();
    const Phantom ph = generate_phantom(default_phantom_spec(h, w), args.seed);
    const IntensityTensor<float> clean = forward_intensities(ph.mueller, cal).cast<float>();
    const IntensityTensor<float> in = add_acquisition_noise(clean, 0.02, NoiseKind::Gaussian, args.seed).intensities;
    const PixelMask mask = mask_reflections(in);
    const Execution exec = args.common.exec();

    std::optional<diffusion::ConvNetPredictor> model;
    if (!args.model.empty()) {
        model.emplace(diffusion::load_weight_manifest(args.model));
    } else {
        auto [text, blob] = diffusion::identity_delta_manifest();
        model.emplace(text, std::move(blob));
    }
    const auto schedule = diffusion::build_schedule();
    const diffusion::DenoiseOptions options{1, args.seed};

    auto denoise = [&] { return diffusion::denoise_patchwise(in, *model, schedule, mask, options, 128, 16, exec); };
    auto derive = [&](const IntensityTensor<float>& x) { return derive_all(x, cal, mask, exec); };

    std::vector<BenchResult> results;
    if (args.stage == "denoising" || args.stage == "all")
        results.push_back(run_bench("denoising", shape, args.repeats, args.warmups, [&] { (void)denoise(); }));
    if (args.stage == "derivation" || args.stage == "all")
        results.push_back(run_bench("derivation", shape, args.repeats, args.warmups, [&] { (void)derive(in); }));
    if (args.stage == "total" || args.stage == "all")
        results.push_back(run_bench("total", shape, args.repeats, args.warmups,
                                    [&] { (void)derive(denoise().intensities); }));

    std::string text;
    if (results.size() == 1) {
        text = results.front().to_json() + "\n";
    } else {
        nlohmann::json all = nlohmann::json::array();
        for (const auto& r : results) all.push_back(nlohmann::json::parse(r.to_json()));
        text = all.dump(2) + "\n";
    }
    write_text(args.out, text);
    return kOk;
}

// render -------------------------------------------------------------------

struct RenderArgs {
    fs::path input, out, mask;
    std::string kind = "gray";
    std::optional<double> lo, hi;
};

int run_render(const RenderArgs& args) {
    const ArrayField field = load_array_container(args.input);
    if (field.rank() != 2 && !(field.rank() == 3 && field.shape()[2] == 1)) {
        throw FormatError("render needs a 2D map, got rank " + std::to_string(field.rank()));
    }
    ArrayField flat = field.rank() == 2 ? field : [&] {
        std::vector<double> values(field.size());
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = field.value(i);
        return ArrayField({field.shape()[0], field.shape()[1]}, std::move(values));
    }();
    const ScalarMap<double> map = scalar_map_from<double>(flat);
    if (args.kind == "gray") {
        const double lo = args.lo.value_or(map.minCoeff()), hi = args.hi.value_or(map.maxCoeff());
        write_text(args.out, render_gray(map, lo, hi));
    } else if (args.kind == "azimuth") {
        PixelMask valid = map.isFinite();
        if (!args.mask.empty()) valid = valid && mask_from(load_array_container(args.mask));
        write_text(args.out, render_azimuth(map, valid));
    } else {
        throw UsageError("unknown render kind '" + args.kind + "'");
    }
    return kOk;
}

// phantom ------------------------------------------------------------------

struct PhantomArgs {
    fs::path out, spec;
    int count = 1;
    std::uint64_t seed = 0;
    Index height = 128, width = 128;
    std::optional<double> sigma;
    std::optional<std::string> noise;
    std::optional<int> shots;
};

int run_phantom(const PhantomArgs& args) {
    PhantomSpec spec =
        args.spec.empty() ? default_phantom_spec(args.height, args.width) : phantom_spec_from_json(read_text(args.spec));
    if (args.sigma) spec.noise.sigma = *args.sigma;
    if (args.shots) spec.noise.shots = *args.shots;
    if (args.noise) {
        if (*args.noise == "gaussian") spec.noise.kind = NoiseKind::Gaussian;
        else if (*args.noise == "heavy-tailed") spec.noise.kind = NoiseKind::HeavyTailed;
        else throw UsageError("unknown noise kind '" + *args.noise + "'");
    }
    std::cout << emit_dataset(spec, args.count, args.out, args.seed).string() << '\n';
    return kOk;
}

// report -------------------------------------------------------------------

struct ReportArgs {
    fs::path manifest, model, candidate, reference, mask, out;
    std::string filter, format = "csv", quantity = "map", modality = "candidate";
    std::uint64_t seed = 0;
    Common common;
};

PolarParamMaps<double> maps_from_stack(const ImageStack<double>& stack) {
    if (stack.channels() != 4) throw FormatError("ground-truth maps need 4 channels");
    PolarParamMaps<double> maps;
    maps.diattenuation = stack.plane(0);
    maps.depolarization = stack.plane(1);
    maps.retardance = stack.plane(2);
    maps.azimuth = stack.plane(3);
    maps.flags = FlagMap::Zero(stack.height(), stack.width());
    return maps;
}

QualityMaps score_inputs(const IntensityTensor<float>& in, const CalibrationField& cal, const PixelMask& mask,
                         const Execution& exec) {
    QualityMaps q;
    const IntensityTensor<double> wide = in.cast<double>();
    q.intensities = wide.data;
    q.mueller = compute_mueller(wide, cal, exec).coeffs;
    q.maps = derive_all(wide, cal, mask, exec);
    return q;
}

int run_report(const ReportArgs& args) {
    QualityReport report;
    const Execution exec = args.common.exec();
    if (!args.manifest.empty()) {
        const auto doc = nlohmann::json::parse(read_text(args.manifest));
        const fs::path dir = args.manifest.parent_path();
        const CalibrationField cal = load_calibration_or_fail(dir / doc.at("calibration").at("analyser").get<std::string>(),
                                                              dir / doc.at("calibration").at("generator").get<std::string>(),
                                                              kDefaultConditionCap);
        std::optional<diffusion::ConvNetPredictor> model;
        if (!args.model.empty()) model.emplace(diffusion::load_weight_manifest(args.model));
        if (model && !args.filter.empty()) throw UsageError("select at most one of --model and --filter");
        const auto schedule = diffusion::build_schedule();

        for (const auto& pair : doc.at("pairs")) {
            const auto lq = load_intensities(dir / pair.at("lq_path").get<std::string>());
            const auto hq = load_intensities(dir / pair.at("hq_path").get<std::string>());
            const auto gt_paths = pair.at("gt_paths").get<std::vector<std::string>>();
            QualityMaps reference;
            reference.intensities = hq.data.cast<double>();
            reference.maps = maps_from_stack(image_stack_from<double>(load_array_container(dir / gt_paths.at(0))));
            reference.mueller = image_stack_from<double>(load_array_container(dir / gt_paths.at(1)));

            const PixelMask reflections = mask_reflections(lq);
            std::vector<QualityPair> pairs{{"LQ", score_inputs(lq, cal, reflections, exec), reference}};
            if (model || !args.filter.empty()) {
                IntensityTensor<float> denoised;
                std::string name;
                if (model) {
                    const diffusion::DenoiseOptions options{1, diffusion::mix_seed(args.seed, pair.at("seed").get<std::uint64_t>())};
                    denoised = diffusion::denoise_patchwise(lq, *model, schedule, reflections, options, 128, 16, exec).intensities;
                    name = "PDDN";
                } else {
                    denoised = apply_filter(args.filter, {lq}, 1.0, exec);
                    name = args.filter == "medf" ? "MEDF" : args.filter == "gblr" ? "GBLR" : args.filter == "grad" ? "GRAD" : "AVG";
                }
                pairs.push_back({name, score_inputs(denoised, cal, reflections, exec), reference});
            }
            PixelMask mask = reflections;
            for (const auto& p : pairs) mask = mask && p.candidate.maps->valid();
            const QualityReport part = quality_report(pairs, mask);
            report.records.insert(report.records.end(), part.records.begin(), part.records.end());
        }
    } else {
        if (args.candidate.empty() || args.reference.empty())
            throw UsageError("report needs --manifest, or --candidate with --reference");
        const ScalarMap<double> a = scalar_map_from<double>(load_array_container(args.candidate));
        const ScalarMap<double> ref = scalar_map_from<double>(load_array_container(args.reference));
        if (a.rows() != ref.rows() || a.cols() != ref.cols()) throw FormatError("candidate and reference differ in shape");
        const PixelMask mask = args.mask.empty() ? PixelMask::Constant(ref.rows(), ref.cols(), true)
                                                 : mask_from(load_array_container(args.mask));
        const bool angular = args.quantity == "R" || args.quantity == "phi";
        QualityRecord rec{args.modality, args.quantity, rmse(a, ref, mask, angular), npsnr(a, ref, mask, angular),
                          100.0 * ssim(a, ref, mask), mask.count()};
        report.records.push_back(rec);
    }
    report.summarize();
    if (args.format == "csv") write_text(args.out, report.to_csv());
    else if (args.format == "json") write_text(args.out, report.to_json() + "\n");
    else throw UsageError("unknown format '" + args.format + "'");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mueller polarimetric image toolkit"};
    app.require_subcommand(1);

    DeriveArgs derive;
    auto* derive_cmd = app.add_subcommand("derive", "Intensities to D, Delta, R and phi maps");
    derive_cmd->add_option("--in", derive.input, "Intensity container [H, W, 16]")->required();
    derive_cmd->add_option("--cal-a", derive.cal_a, "Analyser calibration container")->required();
    derive_cmd->add_option("--cal-g", derive.cal_g, "Generator calibration container")->required();
    derive_cmd->add_option("--out", derive.out, "Output directory")->required();
    derive_cmd->add_option("--mask-threshold", derive.mask_threshold, "Reflection threshold on [0, 1] intensities");
    derive_cmd->add_option("--cond-cap", derive.cond_cap, "Largest accepted calibration condition number");
    add_common(*derive_cmd, derive.common);

    DenoiseArgs denoise;
    auto* denoise_cmd = app.add_subcommand("denoise", "Denoise an intensity container");
    denoise_cmd->add_option("--in", denoise.inputs, "Input container(s); several only with --filter avg")->required();
    denoise_cmd->add_option("--out", denoise.out, "Output container")->required();
    denoise_cmd->add_option("--model", denoise.model, "Weight manifest (.pddn.json)");
    denoise_cmd->add_option("--filter", denoise.filter, "Classical filter")
        ->check(CLI::IsMember({"medf", "gblr", "grad", "avg"}));
    denoise_cmd->add_option("--t-infer", denoise.t_infer, "Starting time-point for model denoising")
        ->check(CLI::PositiveNumber);
    denoise_cmd->add_flag("--auto-t", denoise.auto_t, "Pick the time-point from the estimated noise level");
    denoise_cmd->add_option("--seed", denoise.seed, "Seed for stochastic reverse steps");
    denoise_cmd->add_option("--sigma", denoise.sigma, "Gaussian blur sigma (gblr)");
    denoise_cmd->add_option("--patch", denoise.patch, "Model tile extent")->check(CLI::PositiveNumber);
    denoise_cmd->add_option("--overlap", denoise.overlap, "Model tile overlap")->check(CLI::NonNegativeNumber);
    denoise_cmd->add_option("--mask-threshold", denoise.mask_threshold, "Reflection threshold");
    add_common(*denoise_cmd, denoise.common);

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "Time denoising and derivation on synthetic data");
    bench_cmd->add_option("--shape", bench.shape, "patch (128x128) or full (512x384)")
        ->check(CLI::IsMember({"patch", "full"}));
    bench_cmd->add_option("--stage", bench.stage)->check(CLI::IsMember({"denoising", "derivation", "total", "all"}));
    bench_cmd->add_option("--repeats", bench.repeats)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--warmups", bench.warmups)->check(CLI::NonNegativeNumber);
    bench_cmd->add_option("--model", bench.model, "Weight manifest; default is a pass-through network");
    bench_cmd->add_option("--seed", bench.seed);
    bench_cmd->add_option("--out", bench.out, "JSON output file (default stdout)");
    add_common(*bench_cmd, bench.common);

    RenderArgs render;
    auto* render_cmd = app.add_subcommand("render", "Render a 2D map to PGM or PPM");
    render_cmd->add_option("--in", render.input)->required();
    render_cmd->add_option("--out", render.out)->required();
    render_cmd->add_option("--kind", render.kind)->check(CLI::IsMember({"gray", "azimuth"}));
    render_cmd->add_option("--min", render.lo);
    render_cmd->add_option("--max", render.hi);
    render_cmd->add_option("--mask", render.mask, "Validity mask for azimuth rendering");

    PhantomArgs phantom;
    auto* phantom_cmd = app.add_subcommand("phantom", "Write a synthetic phantom dataset");
    phantom_cmd->add_option("--out", phantom.out)->required();
    phantom_cmd->add_option("--count", phantom.count)->check(CLI::PositiveNumber);
    phantom_cmd->add_option("--seed", phantom.seed);
    phantom_cmd->add_option("--spec", phantom.spec, "Phantom spec JSON");
    phantom_cmd->add_option("--height", phantom.height)->check(CLI::PositiveNumber);
    phantom_cmd->add_option("--width", phantom.width)->check(CLI::PositiveNumber);
    phantom_cmd->add_option("--sigma", phantom.sigma, "Acquisition noise std");
    phantom_cmd->add_option("--noise", phantom.noise, "gaussian or heavy-tailed");
    phantom_cmd->add_option("--shots", phantom.shots, "Shots averaged for HQ frames");

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "Image quality scores");
    report_cmd->add_option("--manifest", report.manifest, "Dataset manifest from `mpol phantom`");
    report_cmd->add_option("--filter", report.filter)->check(CLI::IsMember({"medf", "gblr", "grad"}));
    report_cmd->add_option("--model", report.model);
    report_cmd->add_option("--candidate", report.candidate, "Candidate map container");
    report_cmd->add_option("--reference", report.reference, "Reference map container");
    report_cmd->add_option("--mask", report.mask);
    report_cmd->add_option("--quantity", report.quantity, "Quantity tag; R and phi are scored as angles");
    report_cmd->add_option("--modality", report.modality);
    report_cmd->add_option("--seed", report.seed);
    report_cmd->add_option("--format", report.format)->check(CLI::IsMember({"csv", "json"}));
    report_cmd->add_option("--out", report.out, "Output file (default stdout)");
    add_common(*report_cmd, report.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*derive_cmd) return run_derive(derive);
        if (*denoise_cmd) return run_denoise(denoise);
        if (*bench_cmd) return run_bench_cmd(bench);
        if (*render_cmd) return run_render(render);
        if (*phantom_cmd) return run_phantom(phantom);
        if (*report_cmd) return run_report(report);
    } catch (const CalibrationError& e) {
        std::cerr << "calibration error: " << e.what() << '\n';
        return kCalibration;
    } catch (const ModelError& e) {
        std::cerr << "model error: " << e.what() << '\n';
        return kModel;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kUsage;
}
