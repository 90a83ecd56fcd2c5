#include <doctest.h>

#include <cmath>

#include "tts/common.hpp"
#include "tts/report.hpp"

using namespace tts;
using namespace tts::report;

TEST_CASE("mos aggregation matches hand-computed values") {
    CHECK(aggregate_mos({5, 5, 5}, "x").formatted == "5.00 ± 0.00");
    auto e = aggregate_mos({5, 4, 5, 4, 4, 5}, "y");
    CHECK(e.mean == doctest::Approx(4.5));
    CHECK(e.stddev == doctest::Approx(0.5));
    CHECK(e.formatted == "4.50 ± 0.50");
    CHECK_THROWS_AS(aggregate_mos({}, "none"), DataError);
}

TEST_CASE("mos format matches the published layout") {
    // same shape as published entries like "4.59 ± 0.68"
    auto e = aggregate_mos({5, 5, 4, 5, 4, 5, 5, 4, 5, 4}, "frozen_encoder");
    REQUIRE(e.formatted.size() >= 11);
    CHECK(e.formatted[1] == '.');
    CHECK(e.formatted.substr(4, 4) == " ± "); // space, 2-byte sign, space
    CHECK(e.formatted[e.formatted.size() - 3] == '.');
}

TEST_CASE("ratings csv parsing and validation") {
    const std::string csv =
        "utterance_id,listener_id,score,system\n"
        "u1,l1,5,sysA\n"
        "u1,l2,4,sysA\n"
        "u1,l3,5,sysA\n"
        "u2,l1,4,sysB\n";
    auto set = ratings_from_csv(csv);
    REQUIRE(set.ratings.size() == 4);
    CHECK(set.ratings[0].score == 5);
    CHECK_THROWS_AS(ratings_from_csv("u1,l1,6,sys\n"), DataError);
    CHECK_THROWS_AS(ratings_from_csv("u1,l1,abc,sys\n"), DataError);
    CHECK_THROWS_AS(ratings_from_csv("u1,l1,5\n"), DataError);

    auto report = mos_report(set);
    CHECK(report.total_ratings == 4);
    REQUIRE(report.entries.size() == 2);
    CHECK(report.entries[0].system == "sysA");
    // u2 has a single listener: flagged, not dropped
    REQUIRE(report.under_rated.size() == 1);
    CHECK(report.under_rated[0] == "u2");
    const auto text_block = format_mos_report(report);
    CHECK(text_block.find("4.67 ± 0.47") != std::string::npos); // sysA: 14/3
    CHECK(text_block.find("total ratings: 4") != std::string::npos);
    CHECK(text_block.find("fewer than 3 listeners") != std::string::npos);
}

TEST_CASE("pgm round trip preserves geometry and payload") {
    Pgm img;
    img.width = 7;
    img.height = 3;
    img.pixels.resize(21);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(i * 3);
    }
    auto bytes = pgm_bytes(img);
    CHECK(bytes.rfind("P5\n7 3\n255\n", 0) == 0);
    auto back = pgm_from_bytes(bytes);
    CHECK(back.width == 7);
    CHECK(back.height == 3);
    CHECK(back.pixels == img.pixels);
    CHECK_THROWS_AS(pgm_from_bytes("P2\n1 1\n255\n "), DataError);
    CHECK_THROWS_AS(pgm_from_bytes(bytes.substr(0, bytes.size() - 1)), DataError);
}

TEST_CASE("alignment plot geometry and intensity") {
    // 10 steps x 5 positions -> 10 wide, 5 tall at scale 1
    std::vector<double> att(10 * 5, 0.0);
    for (int s = 0; s < 10; ++s) {
        att[static_cast<std::size_t>(s * 5 + (s / 2))] = 1.0;
    }
    auto img = render_alignment(att, 10, 5);
    CHECK(img.width == 10);
    CHECK(img.height == 5);
    // diagonal ridge: the bright pixel per column moves monotonically down
    int prev_row = -1;
    for (int s = 0; s < 10; ++s) {
        int best_row = 0;
        int best = -1;
        for (int p = 0; p < 5; ++p) {
            const int v = img.pixels[static_cast<std::size_t>(p * img.width + s)];
            if (v > best) {
                best = v;
                best_row = p;
            }
        }
        CHECK(best_row >= prev_row);
        prev_row = best_row;
    }

    // uniform attention renders at constant intensity
    std::vector<double> uniform(12 * 4, 0.25);
    auto flat = render_alignment(uniform, 12, 4);
    for (auto px : flat.pixels) {
        CHECK(px == flat.pixels[0]);
    }

    auto scaled = render_alignment(att, 10, 5, 3);
    CHECK(scaled.width == 30);
    CHECK(scaled.height == 15);

    CHECK_THROWS_AS(render_alignment({}, 0, 0), DataError);
}

TEST_CASE("spectrogram plot: width equals frames, tone appears as a band") {
    dsp::MelSpectrogram constant;
    constant.frames = 9;
    constant.channels = 80;
    constant.data.assign(9 * 80, -3.0);
    auto flat = render_spectrogram(constant);
    CHECK(flat.width == 9);
    CHECK(flat.height == 80);
    for (auto px : flat.pixels) {
        CHECK(px == flat.pixels[0]);
    }

    // synthetic tone mel: one hot channel per frame
    dsp::MelSpectrogram mel;
    mel.frames = 12;
    mel.channels = 80;
    mel.data.assign(12 * 80, std::log(1e-5));
    const std::int64_t hot = 33;
    for (std::int64_t f = 0; f < mel.frames; ++f) {
        mel.data[static_cast<std::size_t>(f * 80 + hot)] = 1.0;
    }
    auto img = render_spectrogram(mel);
    const std::int64_t hot_row = 80 - 1 - hot; // channel 0 renders at the bottom
    for (std::int64_t f = 0; f < mel.frames; ++f) {
        CHECK(img.pixels[static_cast<std::size_t>(hot_row * img.width + f)] == 255);
        CHECK(img.pixels[static_cast<std::size_t>((hot_row + 5) * img.width + f)] == 0);
    }
}
