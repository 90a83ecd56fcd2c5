#include <doctest.h>

#include <cmath>

#include "tts/flow.hpp"
#include "tts/linalg.hpp"
#include "tts/pipeline.hpp"

using namespace tts;
using flow::FlowConfig;
using flow::FlowModel;

namespace {

FlowConfig toy_config() {
    FlowConfig c;
    c.n_flows = 2;
    c.n_group = 4;
    c.n_early_every = 0; // no early outputs at this scale
    c.wn_layers = 2;
    c.wn_channels = 6;
    c.wn_kernel = 3;
    c.mel_channels = 4;
    c.hop = 8;
    return c;
}

dsp::MelSpectrogram flat_mel(std::int64_t frames, std::int64_t channels, std::int64_t hop,
                             double value = 0.1) {
    dsp::MelSpectrogram mel;
    mel.frames = frames;
    mel.channels = channels;
    mel.hop_samples = hop;
    mel.data.assign(static_cast<std::size_t>(frames * channels), value);
    return mel;
}

void make_identity_mixing(FlowModel& m) {
    for (std::int64_t k = 0; k < m.cfg.n_flows; ++k) {
        auto& w = m.store.at("flow.step" + std::to_string(k) + ".mixing.weight");
        const std::int64_t n = w->rows();
        std::fill(w->value.begin(), w->value.end(), 0.0);
        for (std::int64_t i = 0; i < n; ++i) {
            w->value[static_cast<std::size_t>(i * n + i)] = 1.0;
        }
    }
}

std::vector<double> random_audio(std::int64_t n, Rng& rng) {
    std::vector<double> a(static_cast<std::size_t>(n));
    for (auto& v : a) {
        v = 0.3 * rng.normal();
    }
    return a;
}

} // namespace

TEST_CASE("identity-initialized flow maps audio to itself with zero log-det") {
    auto cfg = FlowConfig{};
    cfg.wn_channels = 8;
    cfg.wn_layers = 2;
    cfg.mel_channels = 8;
    auto m = FlowModel::init(cfg, 5);
    make_identity_mixing(m); // coupling ends are already zero-initialized
    Rng rng(6);
    auto audio = random_audio(cfg.n_group * 12, rng);
    auto mel = flat_mel(1 + (12 * cfg.n_group) / cfg.hop, cfg.mel_channels, cfg.hop);
    auto out = m.forward(audio, mel);
    REQUIRE(out.z->size() == static_cast<std::int64_t>(audio.size()));
    for (std::size_t i = 0; i < audio.size(); ++i) {
        CHECK(out.z->value[i] == doctest::Approx(audio[i]).epsilon(1e-12));
    }
    CHECK(out.log_det->scalar() == doctest::Approx(0.0));

    // inverse of z reproduces the unsqueezed input exactly
    auto back = m.inverse(out.z->value, mel);
    for (std::size_t i = 0; i < audio.size(); ++i) {
        CHECK(back[i] == doctest::Approx(audio[i]).epsilon(1e-12));
    }
}

TEST_CASE("log-det of a scaled identity mixing matches the closed form") {
    auto cfg = FlowConfig{};
    cfg.n_flows = 1;
    cfg.n_early_every = 0;
    cfg.wn_channels = 8;
    cfg.wn_layers = 1;
    cfg.mel_channels = 8;
    auto m = FlowModel::init(cfg, 7);
    auto& w = m.store.at("flow.step0.mixing.weight");
    std::fill(w->value.begin(), w->value.end(), 0.0);
    for (std::int64_t i = 0; i < 8; ++i) {
        w->value[static_cast<std::size_t>(i * 8 + i)] = 2.0;
    }
    const std::int64_t positions = 16;
    Rng rng(8);
    auto audio = random_audio(positions * cfg.n_group, rng);
    auto mel = flat_mel(1 + (positions * cfg.n_group) / cfg.hop, cfg.mel_channels, cfg.hop);
    auto out = m.forward(audio, mel);
    CHECK(out.log_det->scalar() ==
          doctest::Approx(static_cast<double>(positions) * 8.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("round trip bijectivity across random models, 20 seeds") {
    FlowConfig cfg; // desk defaults: 4 flows, 8 group, early outputs on
    cfg.wn_channels = 16;
    cfg.wn_layers = 2;
    cfg.mel_channels = 8;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto m = FlowModel::init(cfg, seed);
        // make the couplings act nontrivially
        for (std::int64_t k = 0; k < cfg.n_flows; ++k) {
            auto& w = m.store.at("flow.step" + std::to_string(k) + ".wn.end.weight");
            Rng wr(seed * 31 + static_cast<std::uint64_t>(k));
            for (auto& v : w->value) {
                v = 0.3 * wr.normal();
            }
        }
        Rng rng(seed + 100);
        auto audio = random_audio(1024, rng);
        auto mel = flat_mel(1 + 1024 / cfg.hop, cfg.mel_channels, cfg.hop, -0.2);
        auto fwd = m.forward(audio, mel);
        auto back = m.inverse(fwd.z->value, mel);
        double worst = 0.0;
        for (std::size_t i = 0; i < audio.size(); ++i) {
            worst = std::max(worst, std::fabs(back[i] - audio[i]));
        }
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("forward rejects bad geometry and singular mixing carries the flow index") {
    FlowConfig cfg;
    cfg.wn_channels = 8;
    cfg.wn_layers = 1;
    cfg.mel_channels = 8;
    auto m = FlowModel::init(cfg, 9);
    auto mel = flat_mel(2, cfg.mel_channels, cfg.hop);
    Rng rng(10);
    CHECK_THROWS_AS(m.forward(random_audio(13, rng), mel), std::invalid_argument);
    // audio longer than the mel covers
    CHECK_THROWS_AS(m.forward(random_audio(8 * 1000, rng), mel), std::invalid_argument);

    auto& w = m.store.at("flow.step2.mixing.weight");
    std::fill(w->value.begin(), w->value.end(), 0.0);
    CHECK(!m.mixing_invertible());
    auto audio = random_audio(cfg.n_group * 24, rng);
    auto mel2 = flat_mel(1 + (24 * cfg.n_group) / cfg.hop, cfg.mel_channels, cfg.hop);
    CHECK_THROWS_WITH_AS(m.forward(audio, mel2), doctest::Contains("step 2"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(m.inverse(random_audio(cfg.n_group * 24, rng), mel2),
                         doctest::Contains("step 2"), std::runtime_error);
}

TEST_CASE("config validation guards the early-output schedule") {
    FlowConfig bad;
    bad.n_group = 4;
    bad.n_early_every = 1;
    bad.n_early_size = 2; // exhausts the channels by the third flow
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    FlowConfig odd;
    odd.n_group = 7;
    CHECK_THROWS_AS(odd.validate(), std::invalid_argument);
    CHECK(FlowConfig{}.channel_schedule() == std::vector<std::int64_t>{8, 8, 6, 6});
}

TEST_CASE("nll closed-form values") {
    auto cfg = toy_config();
    auto m = FlowModel::init(cfg, 11);
    flow::FlowForward out;
    out.z = ad::zeros({8, cfg.n_group});
    out.log_det = ad::zeros({1});
    CHECK(m.nll(out, 1.0)->scalar() == doctest::Approx(0.0));
    out.z = ad::full({8, cfg.n_group}, 1.0);
    CHECK(m.nll(out, 1.0)->scalar() == doctest::Approx(0.5));
    CHECK_THROWS_AS(m.nll(out, 0.0), std::invalid_argument);
}

TEST_CASE("nll gradient check on a toy flow") {
    auto cfg = toy_config();
    auto m = FlowModel::init(cfg, 13);
    // nontrivial couplings
    for (std::int64_t k = 0; k < cfg.n_flows; ++k) {
        auto& w = m.store.at("flow.step" + std::to_string(k) + ".wn.end.weight");
        Rng wr(200 + static_cast<std::uint64_t>(k));
        for (auto& v : w->value) {
            v = 0.2 * wr.normal();
        }
    }
    Rng rng(14);
    const std::int64_t n = cfg.n_group * 6;
    auto audio = random_audio(n, rng);
    auto mel = flat_mel(1 + n / cfg.hop, cfg.mel_channels, cfg.hop, 0.3);
    auto f = [&] {
        auto out = m.forward(audio, mel);
        return m.nll(out, cfg.sigma);
    };
    Rng pick(15);
    CHECK(ad::grad_check_sampled(f, m.store.trainable(), 120, pick, 1e-5) < 1e-4);
}

TEST_CASE("brute-force jacobian determinant matches the accumulated log-det") {
    auto cfg = toy_config();
    cfg.n_group = 2;
    cfg.n_flows = 2;
    auto m = FlowModel::init(cfg, 17);
    for (std::int64_t k = 0; k < cfg.n_flows; ++k) {
        auto& w = m.store.at("flow.step" + std::to_string(k) + ".wn.end.weight");
        Rng wr(300 + static_cast<std::uint64_t>(k));
        for (auto& v : w->value) {
            v = 0.4 * wr.normal();
        }
    }
    Rng rng(18);
    const std::int64_t n = 8; // 4 positions x 2 channels
    auto audio = random_audio(n, rng);
    auto mel = flat_mel(1 + n / cfg.hop, cfg.mel_channels, cfg.hop, 0.2);

    auto z_of = [&](const std::vector<double>& a) {
        ad::NoGrad ng;
        return m.forward(a, mel).z->value;
    };
    const double eps = 1e-6;
    std::vector<double> jac(static_cast<std::size_t>(n * n));
    for (std::int64_t j = 0; j < n; ++j) {
        auto up = audio, down = audio;
        up[static_cast<std::size_t>(j)] += eps;
        down[static_cast<std::size_t>(j)] -= eps;
        const auto zu = z_of(up), zd = z_of(down);
        for (std::int64_t i = 0; i < n; ++i) {
            jac[static_cast<std::size_t>(i * n + j)] =
                (zu[static_cast<std::size_t>(i)] - zd[static_cast<std::size_t>(i)]) / (2 * eps);
        }
    }
    double logdet_fd, sign;
    REQUIRE(la::log_abs_det(jac, n, logdet_fd, sign));
    const double logdet_model = m.forward(audio, mel).log_det->scalar();
    CHECK(std::exp(logdet_model) ==
          doctest::Approx(std::exp(logdet_fd)).epsilon(0.01));
}

TEST_CASE("synthesize is seeded, length-exact, and honors sigma zero") {
    FlowConfig cfg;
    cfg.wn_channels = 8;
    cfg.wn_layers = 1;
    cfg.mel_channels = 8;
    auto m = FlowModel::init(cfg, 19);
    auto mel = flat_mel(5, cfg.mel_channels, cfg.hop, -0.3);
    mel.sample_rate_hz = 16000;
    Rng r1(77), r2(77), r3(78);
    auto w1 = m.synthesize(mel, 0.6, r1);
    auto w2 = m.synthesize(mel, 0.6, r2);
    auto w3 = m.synthesize(mel, 0.6, r3);
    CHECK(w1.samples.size() == static_cast<std::size_t>(mel.frames * cfg.hop));
    CHECK(w1.samples == w2.samples);
    CHECK(w1.samples != w3.samples);

    Rng r4(1), r5(2);
    auto m0a = m.synthesize(mel, 0.0, r4);
    auto m0b = m.synthesize(mel, 0.0, r5);
    CHECK(m0a.samples == m0b.samples); // z = 0 regardless of the stream
}

TEST_CASE("likelihood training fits a tone and keeps the flow invertible") {
    // desk config scaled down in channel count for test speed
    FlowConfig cfg;
    cfg.wn_channels = 16;
    cfg.wn_layers = 2;
    cfg.mel_channels = 80;
    auto fb = dsp::make_mel_filterbank();
    audio::Waveform tone;
    tone.sample_rate_hz = 16000;
    tone.samples.resize(3200); // 0.2 s
    for (std::size_t i = 0; i < tone.samples.size(); ++i) {
        tone.samples[i] = 0.4 * std::sin(2.0 * 3.14159265358979 * 440.0 * i / 16000.0);
    }
    auto mel = dsp::mel_spectrogram(tone, fb);
    pipeline::AdamSettings adam;
    adam.learning_rate = 1e-3;
    auto result = pipeline::train_flow(cfg, {{tone.samples, mel}}, 300, 1024, adam, 21);
    REQUIRE(result.losses.size() == 300);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 20; ++i) {
        early += result.losses[static_cast<std::size_t>(i)];
        late += result.losses[result.losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(late < early);
    CHECK(result.model.mixing_invertible());

    // bijectivity still holds at the trained checkpoint
    const std::vector<double> segment(tone.samples.begin(), tone.samples.begin() + 1024);
    auto fwd = result.model.forward(segment, mel);
    auto back = result.model.inverse(fwd.z->value, mel);
    double worst = 0.0;
    for (std::size_t i = 0; i < segment.size(); ++i) {
        worst = std::max(worst, std::fabs(back[i] - segment[i]));
    }
    CHECK(worst < 1e-8);
}
