#include "mpol/container.hpp"
#include "mpol/metrics.hpp"
#include "mpol/render.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace mpol;

namespace {

const fs::path kFixtures = MPOL_FIXTURE_DIR;

struct Run {
    int code = -1;
    std::string out;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

class Workspace {
public:
    Workspace() : dir_(fs::temp_directory_path() / "mpol_cli_test") {
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    ~Workspace() { fs::remove_all(dir_); }

    fs::path operator/(const std::string& name) const { return dir_ / name; }

    Run run(const std::string& args) const {
        const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd = std::string("\"") + MPOL_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                                err.string() + "\"";
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
    }

private:
    fs::path dir_;
};

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Rows of a report CSV keyed by (modality, quantity).
std::map<std::pair<std::string, std::string>, std::vector<std::vector<std::string>>> parse_csv(const std::string& text) {
    std::map<std::pair<std::string, std::string>, std::vector<std::vector<std::string>>> rows;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows[{cells.at(0), cells.at(1)}].push_back(cells);
    }
    return rows;
}

double median_column(const std::vector<std::vector<std::string>>& rows, std::size_t column) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(std::stod(r.at(column)));
    return median(v);
}

}  // namespace

TEST_CASE("phantom, derive and determinism across tiles") {
    Workspace ws;
    const Run ph = ws.run("phantom --out " + q(ws / "data") + " --count 2 --height 40 --width 36 --seed 4");
    REQUIRE(ph.code == 0);
    CHECK(ph.out.find("manifest.json") != std::string::npos);
    const std::string common = "derive --in " + q(ws / "data/pair_0000_lq.mpac") + " --cal-a " + q(ws / "data/analyser.mpac") +
                               " --cal-g " + q(ws / "data/generator.mpac");
    REQUIRE(ws.run(common + " --out " + q(ws / "a") + " --tile 8 --threads 1").code == 0);
    REQUIRE(ws.run(common + " --out " + q(ws / "b") + " --tile 128 --threads 3").code == 0);
    for (const char* name : {"D.mpac", "Delta.mpac", "R.mpac", "phi.mpac", "mask.mpac", "flags.mpac"}) {
        CHECK(fs::exists(ws / "a" / name));
        CHECK(slurp(ws / "a" / name) == slurp(ws / "b" / name));
    }
    const ArrayField phi = load_array_container(ws / "a/phi.mpac");
    CHECK(phi.shape() == std::vector<std::int64_t>{40, 36});
}

TEST_CASE("noise-free derive reproduces the ground truth") {
    Workspace ws;
    REQUIRE(ws.run("phantom --out " + q(ws / "data") + " --height 32 --width 32 --sigma 0 --seed 1").code == 0);
    REQUIRE(ws.run("derive --in " + q(ws / "data/pair_0000_hq.mpac") + " --cal-a " + q(ws / "data/analyser.mpac") +
                   " --cal-g " + q(ws / "data/generator.mpac") + " --out " + q(ws / "maps"))
                .code == 0);
    const auto truth = image_stack_from<double>(load_array_container(ws / "data/pair_0000_gt_maps.mpac"));
    const auto mask = mask_from(load_array_container(ws / "maps/mask.mpac"));
    const auto depol = scalar_map_from<double>(load_array_container(ws / "maps/Delta.mpac"));
    const auto retard = scalar_map_from<double>(load_array_container(ws / "maps/R.mpac"));
    REQUIRE(mask.count() > 0);
    double worst_delta = 0, worst_r = 0;
    for (Index y = 0; y < 32; ++y)
        for (Index x = 0; x < 32; ++x) {
            if (!mask(y, x)) continue;
            worst_delta = std::max(worst_delta, std::abs(depol(y, x) - truth.at(1, y, x)));
            worst_r = std::max(worst_r, std::abs(retard(y, x) - truth.at(2, y, x)));
        }
    // Float32 intensities limit the agreement.
    CHECK(worst_delta < 1e-3);
    CHECK(worst_r < 0.1);
}

TEST_CASE("exit codes") {
    Workspace ws;
    REQUIRE(ws.run("phantom --out " + q(ws / "data") + " --height 16 --width 16").code == 0);
    const std::string in = " --in " + q(ws / "data/pair_0000_lq.mpac");
    CHECK(ws.run("derive" + in + " --cal-a " + q(ws / "missing.mpac") + " --cal-g " + q(ws / "data/generator.mpac") +
                 " --out " + q(ws / "o"))
              .code == 3);
    CHECK(ws.run("derive --in " + q(ws / "nothing.mpac") + " --cal-a " + q(ws / "data/analyser.mpac") + " --cal-g " +
                 q(ws / "data/generator.mpac") + " --out " + q(ws / "o"))
              .code == 2);
    CHECK(ws.run("denoise" + in + " --out " + q(ws / "x.mpac") + " --filter medf --model " +
                 q(kFixtures / "identity.pddn.json"))
              .code == 2);
    CHECK(ws.run("denoise" + in + " --out " + q(ws / "x.mpac")).code == 2);
    CHECK(ws.run("no-such-command").code == 2);
    CHECK(ws.run("").code == 2);
    std::ofstream(ws / "bad.pddn.json") << R"({"layers": [{"id": "a", "kind": "attention", "inputs": ["input"]}]})";
    CHECK(ws.run("denoise" + in + " --out " + q(ws / "x.mpac") + " --model " + q(ws / "bad.pddn.json")).code == 4);
}

TEST_CASE("median filter leaves a constant image unchanged") {
    Workspace ws;
    save_array_container(ArrayField({12, 10, 16}, std::vector<float>(12 * 10 * 16, 0.375f)), ws / "flat.mpac");
    REQUIRE(ws.run("denoise --in " + q(ws / "flat.mpac") + " --out " + q(ws / "out.mpac") + " --filter medf").code == 0);
    CHECK(image_stack_from<float>(load_array_container(ws / "out.mpac")) ==
          image_stack_from<float>(load_array_container(ws / "flat.mpac")));
}

TEST_CASE("model denoising matches the independent reference") {
    Workspace ws;
    REQUIRE(ws.run("denoise --in " + q(kFixtures / "parity_fixture/denoise_input.mpac") + " --out " + q(ws / "out.mpac") +
                   " --model " + q(kFixtures / "tiny_unet.pddn.json") + " --t-infer 1")
                .code == 0);
    const auto got = image_stack_from<double>(load_array_container(ws / "out.mpac"));
    const auto ref = image_stack_from<double>(load_array_container(kFixtures / "parity_fixture/denoise_reference.mpac"));
    REQUIRE(got.same_extent(ref));
    CHECK((got.planes() - ref.planes()).abs().maxCoeff() <= 1e-4);
}

TEST_CASE("report: rows per quantity, shape mismatch and SSIM(phi) improvement") {
    Workspace ws;
    REQUIRE(ws.run("phantom --out " + q(ws / "data") + " --count 4 --height 64 --width 64 --seed 12").code == 0);
    const Run rep = ws.run("report --manifest " + q(ws / "data/manifest.json") + " --filter gblr --format csv");
    REQUIRE(rep.code == 0);
    const auto rows = parse_csv(rep.out);
    for (const char* quantity : {"I", "M", "D", "Delta", "R", "phi"}) {
        CHECK(rows.at({"LQ", quantity}).size() == 4);
        CHECK(rows.at({"GBLR", quantity}).size() == 4);
    }
    const double lq = median_column(rows.at({"LQ", "phi"}), 4);
    const double gblr = median_column(rows.at({"GBLR", "phi"}), 4);
    CHECK(gblr > lq);

    const Run json = ws.run("report --manifest " + q(ws / "data/manifest.json") + " --format json");
    REQUIRE(json.code == 0);
    const auto doc = nlohmann::json::parse(json.out);
    CHECK(doc.at("records").size() == 4 * 6);
    CHECK(doc.at("quartiles").size() == 6);

    save_array_container(ArrayField({4, 5}, std::vector<double>(20, 1.0)), ws / "small.mpac");
    save_array_container(ArrayField({5, 5}, std::vector<double>(25, 1.0)), ws / "other.mpac");
    CHECK(ws.run("report --candidate " + q(ws / "small.mpac") + " --reference " + q(ws / "other.mpac")).code == 2);
}

TEST_CASE("end-to-end: gblr denoising then derivation improves phi SSIM") {
    Workspace ws;
    REQUIRE(ws.run("phantom --out " + q(ws / "data") + " --height 96 --width 96 --seed 21").code == 0);
    const std::string cal = " --cal-a " + q(ws / "data/analyser.mpac") + " --cal-g " + q(ws / "data/generator.mpac");
    REQUIRE(ws.run("denoise --in " + q(ws / "data/pair_0000_lq.mpac") + " --out " + q(ws / "gblr.mpac") + " --filter gblr")
                .code == 0);
    REQUIRE(ws.run("derive --in " + q(ws / "data/pair_0000_lq.mpac") + cal + " --out " + q(ws / "lq")).code == 0);
    REQUIRE(ws.run("derive --in " + q(ws / "gblr.mpac") + cal + " --out " + q(ws / "gblr")).code == 0);

    const auto truth = image_stack_from<double>(load_array_container(ws / "data/pair_0000_gt_maps.mpac"));
    ArrayField truth_phi({96, 96}, std::vector<double>(truth.plane(3).data(), truth.plane(3).data() + 96 * 96));
    save_array_container(truth_phi, ws / "truth_phi.mpac");
    auto score = [&](const std::string& dir) {
        const Run r = ws.run("report --candidate " + q(ws / dir / "phi.mpac") + " --reference " + q(ws / "truth_phi.mpac") +
                             " --mask " + q(ws / "lq/mask.mpac") + " --quantity phi --format csv");
        REQUIRE(r.code == 0);
        const auto rows = parse_csv(r.out);
        REQUIRE(rows.size() == 1);
        return std::stod(rows.begin()->second.at(0).at(4));
    };
    CHECK(score("gblr") > score("lq"));
}

TEST_CASE("render gray and azimuth") {
    Workspace ws;
    save_array_container(ArrayField({3, 4}, std::vector<double>(12, 2.5)), ws / "flat.mpac");
    REQUIRE(ws.run("render --in " + q(ws / "flat.mpac") + " --out " + q(ws / "flat.pgm")).code == 0);
    const PortableImage flat = parse_portable_image(slurp(ws / "flat.pgm"));
    CHECK(flat.width == 4);
    CHECK(flat.height == 3);
    for (auto s : flat.samples) CHECK(s == 32768);

    std::vector<double> ramp(12);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = 0.1 * static_cast<double>(i);
    save_array_container(ArrayField({3, 4}, ramp), ws / "ramp.mpac");
    REQUIRE(ws.run("render --in " + q(ws / "ramp.mpac") + " --out " + q(ws / "ramp.pgm") + " --min 0 --max 1").code == 0);
    const PortableImage img = parse_portable_image(slurp(ws / "ramp.pgm"));
    for (std::size_t i = 0; i < ramp.size(); ++i) {
        const double expected = std::clamp(ramp[i], 0.0, 1.0) * 65535.0;
        CHECK(std::abs(img.samples[i] - expected) <= 1.0);
    }

    save_array_container(ArrayField({1, 2}, std::vector<double>{0.0, 180.0}), ws / "phi.mpac");
    REQUIRE(ws.run("render --kind azimuth --in " + q(ws / "phi.mpac") + " --out " + q(ws / "phi.ppm")).code == 0);
    const PortableImage hue = parse_portable_image(slurp(ws / "phi.ppm"));
    CHECK(hue.channels == 3);
    CHECK(std::equal(hue.samples.begin(), hue.samples.begin() + 3, hue.samples.begin() + 3));

    save_array_container(ArrayField({2, 2, 16}, std::vector<float>(64, 0.5f)), ws / "stack.mpac");
    CHECK(ws.run("render --in " + q(ws / "stack.mpac") + " --out " + q(ws / "s.pgm")).code == 2);
}

TEST_CASE("bench JSON, single repeat and frame scaling") {
    Workspace ws;
    const Run one = ws.run("bench --stage derivation --repeats 1 --warmups 0");
    REQUIRE(one.code == 0);
    const auto doc = nlohmann::json::parse(one.out);
    CHECK(doc.at("stage") == "derivation");
    CHECK(doc.at("shape") == nlohmann::json::array({128, 128, 16}));
    CHECK(doc.at("sd_ms") == 0.0);
    CHECK(doc.at("samples").size() == 1);

    const Run all = ws.run("bench --repeats 2 --warmups 0 --out " + q(ws / "bench.json"));
    REQUIRE(all.code == 0);
    const auto stages = nlohmann::json::parse(slurp(ws / "bench.json"));
    REQUIRE(stages.size() == 3);
    CHECK(stages[0].at("stage") == "denoising");
    CHECK(stages[2].at("stage") == "total");

    const auto patch = nlohmann::json::parse(ws.run("bench --stage derivation --repeats 5 --warmups 1").out);
    const auto full = nlohmann::json::parse(ws.run("bench --stage derivation --shape full --repeats 5 --warmups 1").out);
    CHECK(full.at("shape") == nlohmann::json::array({512, 384, 16}));
    const double ratio = full.at("mean_ms").get<double>() / patch.at("mean_ms").get<double>();
    const double pixels = (512.0 * 384.0) / (128.0 * 128.0);
    CHECK(ratio > pixels / 3.0);
    CHECK(ratio < pixels * 3.0);
}
