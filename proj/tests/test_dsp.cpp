#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tts/audio.hpp"
#include "tts/common.hpp"
#include "tts/dsp.hpp"
#include "tts/rng.hpp"

using namespace tts;
using audio::Waveform;

namespace {

Waveform make_tone(double freq_hz, double seconds, int rate = 16000, double amp = 0.5) {
    Waveform w;
    w.sample_rate_hz = rate;
    const auto n = static_cast<std::size_t>(seconds * rate);
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        w.samples[i] = amp * std::sin(2.0 * 3.14159265358979323846 * freq_hz * i / rate);
    }
    return w;
}

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string wav_with_samples(const std::vector<std::int16_t>& pcm, int rate, int channels) {
    std::string out = "RIFF";
    const std::uint32_t data_len = static_cast<std::uint32_t>(pcm.size() * 2);
    put_u32(out, 36 + data_len);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u32(out, 1u | (static_cast<std::uint32_t>(channels) << 16));
    put_u32(out, static_cast<std::uint32_t>(rate));
    put_u32(out, static_cast<std::uint32_t>(rate * channels * 2));
    put_u32(out, static_cast<std::uint32_t>(channels * 2) | (16u << 16));
    out += "data";
    put_u32(out, data_len);
    for (auto v : pcm) {
        out.push_back(static_cast<char>(v & 0xff));
        out.push_back(static_cast<char>((v >> 8) & 0xff));
    }
    return out;
}

} // namespace

TEST_CASE("wav sample scaling") {
    auto w = audio::parse_wav(wav_with_samples({16384, -32768, 32767}, 16000, 1));
    CHECK(w.samples[0] == doctest::Approx(0.5));
    CHECK(w.samples[1] == doctest::Approx(-1.0));
    CHECK(w.samples[2] < 1.0);
    for (double s : w.samples) {
        CHECK(s >= -1.0);
        CHECK(s < 1.0);
    }
}

TEST_CASE("wav stereo downmix is the channel mean") {
    auto w = audio::parse_wav(wav_with_samples({1000, 3000, -2000, 2000}, 16000, 2));
    REQUIRE(w.samples.size() == 2);
    CHECK(w.samples[0] == doctest::Approx(2000.0 / 32768.0));
    CHECK(w.samples[1] == doctest::Approx(0.0));
}

TEST_CASE("wav format rejections carry diagnostics") {
    // float format tag
    std::string f = wav_with_samples({0, 0}, 16000, 1);
    f[20] = 3; // format tag -> IEEE float
    CHECK_THROWS_WITH_AS(audio::parse_wav(f), doctest::Contains("PCM"), DataError);

    std::string truncated = wav_with_samples({0, 0, 0, 0}, 16000, 1);
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(audio::parse_wav(truncated), DataError);

    CHECK_THROWS_AS(audio::parse_wav("not a wav at all"), DataError);
}

TEST_CASE("load_wav resamples an 8 kHz tone to 16 kHz") {
    auto tone = make_tone(440.0, 1.0, 8000);
    const auto path = tmp_path("tone8k.wav");
    audio::save_wav(tone, path);
    auto w = audio::load_wav(path);
    CHECK(w.sample_rate_hz == 16000);
    CHECK(w.samples.size() == 16000);
    const double peak = dsp::dominant_frequency_hz(w.samples, 16000);
    CHECK(std::fabs(peak - 440.0) <= 16000.0 / 16384.0); // within one bin
    std::filesystem::remove(path);
}

TEST_CASE("wav save/load round trip is exact for 16-bit content") {
    Rng rng(4);
    Waveform w;
    w.sample_rate_hz = 16000;
    for (int i = 0; i < 5000; ++i) {
        const auto q = static_cast<std::int16_t>(rng.uniform_int(65536) - 32768);
        w.samples.push_back(q / 32768.0);
    }
    const auto path = tmp_path("roundtrip.wav");
    audio::save_wav(w, path);
    auto r = audio::load_wav(path);
    REQUIRE(r.samples.size() == w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        CHECK(r.samples[i] == w.samples[i]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("resample identity and DC preservation") {
    auto tone = make_tone(440.0, 0.25);
    auto same = audio::resample(tone, 16000);
    CHECK(same.samples == tone.samples);

    Waveform dc;
    dc.sample_rate_hz = 22050;
    dc.samples.assign(22050, 0.25);
    auto r = audio::resample(dc, 16000);
    CHECK(r.samples.size() == 16000);
    for (std::size_t i = 200; i + 200 < r.samples.size(); ++i) {
        CHECK(std::fabs(r.samples[i] - 0.25) < 1e-3);
    }
}

TEST_CASE("resample preserves tone frequency 22050 -> 16000") {
    auto tone = make_tone(440.0, 1.0, 22050);
    auto r = audio::resample(tone, 16000);
    CHECK(r.samples.size() == 16000);
    const double peak = dsp::dominant_frequency_hz(r.samples, 16000);
    CHECK(std::fabs(peak - 440.0) <= 2.0);
}

TEST_CASE("stft frame counts") {
    Waveform w;
    w.samples.assign(16000, 0.0);
    std::int64_t frames = 0;
    auto mag = dsp::stft_magnitude(w, &frames);
    CHECK(frames == 80);
    for (double m : mag) {
        CHECK(m == 0.0);
    }
    w.samples.assign(800, 0.1);
    dsp::stft_magnitude(w, &frames);
    CHECK(frames == 1);
    w.samples.assign(799, 0.1);
    CHECK_THROWS_AS(dsp::stft_magnitude(w, &frames), std::invalid_argument);
}

TEST_CASE("stft frame-count law for randomized lengths") {
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const std::int64_t n = 800 + static_cast<std::int64_t>(rng.uniform_int(1000000 - 800 + 1));
        CHECK(dsp::stft_frame_count(n) == (n - 800) / 192 + 1);
    }
}

TEST_CASE("mel scale formula and round trip") {
    CHECK(dsp::mel_hz(0.0) == doctest::Approx(0.0));
    CHECK(dsp::mel_hz(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
    CHECK(dsp::mel_hz(700.0) == doctest::Approx(781.17).epsilon(1e-4));
    CHECK(dsp::hz_mel(dsp::mel_hz(3456.7)) == doctest::Approx(3456.7).epsilon(1e-9));
    CHECK_THROWS_AS(dsp::mel_hz(-1.0), std::invalid_argument);
    CHECK_THROWS_AS(dsp::hz_mel(-1.0), std::invalid_argument);
}

TEST_CASE("mel filterbank invariants") {
    auto fb = dsp::make_mel_filterbank();
    CHECK(fb.channels == 80);
    CHECK(fb.bins == 513);
    for (double w : fb.weights) {
        CHECK(w >= 0.0);
    }
    for (std::int64_t c = 0; c < fb.channels; ++c) {
        double mx = 0.0;
        for (std::int64_t k = 0; k < fb.bins; ++k) {
            mx = std::max(mx, fb.at(c, k));
        }
        CHECK(mx > 0.0);
        CHECK(mx <= 1.0);
        if (c > 0) {
            CHECK(fb.center_freqs_hz[static_cast<std::size_t>(c)] >
                  fb.center_freqs_hz[static_cast<std::size_t>(c - 1)]);
        }
    }
    // closed-band coverage: every bin with frequency in [f_min, f_max] has
    // positive column sum
    const double bin_hz = 16000.0 / 1024.0;
    for (std::int64_t k = 0; k < fb.bins; ++k) {
        const double f = k * bin_hz;
        if (f >= fb.f_min_hz && f <= fb.f_max_hz) {
            double cs = 0.0;
            for (std::int64_t c = 0; c < fb.channels; ++c) {
                cs += fb.at(c, k);
            }
            CHECK(cs > 0.0);
        }
    }
}

TEST_CASE("mel spectrogram of silence hits the log floor") {
    Waveform w;
    w.samples.assign(16000, 0.0);
    auto fb = dsp::make_mel_filterbank();
    auto mel = dsp::mel_spectrogram(w, fb);
    CHECK(mel.frames == 80);
    CHECK(mel.channels == 80);
    const double expect = std::log(1e-5);
    CHECK(expect == doctest::Approx(-11.5129).epsilon(1e-4));
    for (double v : mel.data) {
        CHECK(v == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("mel spectrogram log-linearity under amplitude scaling") {
    auto tone = make_tone(440.0, 0.5);
    auto half = tone;
    for (auto& s : half.samples) {
        s *= 0.5;
    }
    auto fb = dsp::make_mel_filterbank();
    auto m1 = dsp::mel_spectrogram(tone, fb);
    auto m2 = dsp::mel_spectrogram(half, fb);
    const double floor_val = std::log(1e-5);
    int compared = 0;
    for (std::size_t i = 0; i < m1.data.size(); ++i) {
        if (m2.data[i] > floor_val + 1e-9) { // unclamped in both
            CHECK(std::fabs((m1.data[i] - m2.data[i]) - std::log(2.0)) < 1e-9);
            ++compared;
        }
    }
    CHECK(compared > 100);
}

TEST_CASE("mel spectrogram translation covariance by one hop") {
    auto tone = make_tone(523.25, 0.4);
    Rng rng(12);
    for (auto& s : tone.samples) {
        s += 0.01 * rng.normal(); // break exact periodicity
    }
    auto fb = dsp::make_mel_filterbank();
    auto m1 = dsp::mel_spectrogram(tone, fb);
    Waveform shifted;
    shifted.sample_rate_hz = tone.sample_rate_hz;
    shifted.samples.assign(tone.samples.begin() + 192, tone.samples.end());
    auto m2 = dsp::mel_spectrogram(shifted, fb);
    REQUIRE(m2.frames == m1.frames - 1);
    for (std::int64_t f = 0; f < m2.frames; ++f) {
        for (std::int64_t c = 0; c < 80; ++c) {
            CHECK(std::fabs(m2.at(f, c) - m1.at(f + 1, c)) < 1e-6);
        }
    }
}

TEST_CASE("griffin-lim reconstructs a tone") {
    auto tone = make_tone(440.0, 0.5);
    auto fb = dsp::make_mel_filterbank();
    auto mel = dsp::mel_spectrogram(tone, fb);
    auto result = dsp::griffin_lim(mel, fb, 60);
    REQUIRE(result.residuals.size() == 60);
    for (std::size_t i = 1; i < result.residuals.size(); ++i) {
        CHECK(result.residuals[i] <= result.residuals[i - 1] + 1e-6);
    }
    CHECK(result.residuals.back() < 0.1);
    CHECK(result.waveform.samples.size() == static_cast<std::size_t>((mel.frames - 1) * 192 + 800));
    double gl_peak = 0.0;
    for (double s : result.waveform.samples) {
        gl_peak = std::max(gl_peak, std::fabs(s));
    }
    CHECK(gl_peak == doctest::Approx(0.95));
    // the 80-channel mel quantization smears the tone by a few Hz; this is a
    // sanity bound, not a precision claim
    const double peak = dsp::dominant_frequency_hz(result.waveform.samples, 16000);
    CHECK(std::fabs(peak - 440.0) <= 10.0);
    CHECK_THROWS_AS(dsp::griffin_lim(mel, fb, 0), std::invalid_argument);
}

TEST_CASE("mel file format round trip and rejections") {
    auto tone = make_tone(440.0, 0.3);
    auto fb = dsp::make_mel_filterbank();
    auto mel = dsp::mel_spectrogram(tone, fb);
    const auto bytes = dsp::mel_bytes(mel);
    CHECK(bytes.substr(0, 4) == "MEL1");
    auto back = dsp::mel_from_bytes(bytes);
    CHECK(back.frames == mel.frames);
    CHECK(back.channels == mel.channels);
    CHECK(dsp::mel_bytes(back) == bytes);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(dsp::mel_from_bytes(bad), DataError);
    CHECK_THROWS_AS(dsp::mel_from_bytes(bytes.substr(0, bytes.size() - 2)), DataError);
}
