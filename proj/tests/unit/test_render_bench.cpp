#include "mpol/bench.hpp"
#include "mpol/error.hpp"
#include "mpol/render.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

using namespace mpol;

TEST_CASE("gray rendering maps the window onto 16 bits") {
    ScalarMap<double> map(2, 3);
    map << 0.0, 0.5, 1.0, -1.0, 2.0, 0.25;
    const std::string bytes = render_gray(map, 0.0, 1.0);
    CHECK(bytes.rfind("P5\n3 2\n65535\n", 0) == 0);
    const PortableImage img = parse_portable_image(bytes);
    CHECK(img.width == 3);
    CHECK(img.height == 2);
    CHECK(img.channels == 1);
    CHECK(img.max_value == 65535);
    REQUIRE(img.samples.size() == 6);
    CHECK(img.samples[0] == 0);
    CHECK(img.samples[1] == 32768);
    CHECK(img.samples[2] == 65535);
    CHECK(img.samples[3] == 0);
    CHECK(img.samples[4] == 65535);
    CHECK(img.samples[5] == 16384);
    // Big-endian: the high byte of the third sample comes first.
    const std::size_t header = std::string("P5\n3 2\n65535\n").size();
    CHECK(static_cast<unsigned char>(bytes[header + 4]) == 0xFF);

    const PortableImage flat = parse_portable_image(render_gray(map, 0.3, 0.3));
    for (auto s : flat.samples) CHECK(s == 32768);
}

TEST_CASE("azimuth rendering is periodic in 180 degrees and blanks invalid pixels") {
    ScalarMap<double> phi(1, 4);
    phi << 0.0, 179.999999, 45.0, 90.0;
    PixelMask valid(1, 4);
    valid << true, true, true, false;
    const PortableImage img = parse_portable_image(render_azimuth(phi, valid));
    CHECK(img.channels == 3);
    CHECK(img.max_value == 255);
    REQUIRE(img.samples.size() == 12);
    for (int c = 0; c < 3; ++c) CHECK(img.samples[static_cast<std::size_t>(c)] == img.samples[static_cast<std::size_t>(3 + c)]);
    CHECK(img.samples[0] == 255);  // hue 0 is red
    CHECK(img.samples[1] == 0);
    CHECK(img.samples[7] == 255);  // 45 degrees doubles to hue 90
    CHECK(img.samples[9] == 0);
    CHECK(img.samples[10] == 0);
    CHECK(img.samples[11] == 0);
}

TEST_CASE("hue wheel") {
    CHECK(hue_to_rgb(0, 1) == std::array<std::uint8_t, 3>{255, 0, 0});
    CHECK(hue_to_rgb(120, 1) == std::array<std::uint8_t, 3>{0, 255, 0});
    CHECK(hue_to_rgb(240, 1) == std::array<std::uint8_t, 3>{0, 0, 255});
    CHECK(hue_to_rgb(360, 1) == hue_to_rgb(0, 1));
    CHECK(hue_to_rgb(60, 0) == std::array<std::uint8_t, 3>{0, 0, 0});
}

TEST_CASE("portable image parsing rejects bad input") {
    CHECK_THROWS_AS(parse_portable_image("P3\n1 1\n255\n"), FormatError);
    CHECK_THROWS_AS(parse_portable_image("P5\n4 4\n255\nab"), FormatError);
}

TEST_CASE("bench statistics") {
    BenchResult r;
    r.samples = {1.0, 2.0, 3.0, 4.0};
    summarize(r);
    CHECK(r.mean_ms == doctest::Approx(2.5));
    CHECK(r.sd_ms == doctest::Approx(std::sqrt(5.0 / 3.0)));
    r.samples = {7.0};
    summarize(r);
    CHECK(r.sd_ms == 0.0);

    int calls = 0;
    const BenchResult b = run_bench("derivation", {128, 128, 16}, 3, 2, [&] { ++calls; });
    CHECK(calls == 5);
    CHECK(b.samples.size() == 3);
    CHECK(b.mean_ms >= 0.0);
    const auto doc = nlohmann::json::parse(b.to_json());
    CHECK(doc.at("stage") == "derivation");
    CHECK(doc.at("shape") == nlohmann::json::array({128, 128, 16}));
    CHECK(doc.at("repeats") == 3);
    CHECK(doc.at("warmups") == 2);
    CHECK(doc.contains("mean_ms"));
    CHECK(doc.contains("sd_ms"));
    CHECK_THROWS_AS(run_bench("total", {1}, 0, 0, [] {}), ParameterError);
}
