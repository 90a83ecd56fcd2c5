#include <doctest.h>

#include <cmath>

#include "tts/acoustic.hpp"
#include "tts/ops.hpp"

using namespace tts;
using namespace tts::acoustic;
using ad::TensorPtr;

namespace {

text::Vocabulary toy_vocab() {
    return text::build_vocabulary({"abc"}, "roman");
}

// batchnorm eval paths need recorded statistics; hand-constructed models
// get neutral ones
void seed_bn_stats(params::ParameterArchive& store) {
    for (const auto& n : store.order()) {
        if (n.ends_with(".running_count")) {
            store.at(n)->value[0] = 1.0;
        }
    }
}

void zero_all(params::ParameterArchive& store) {
    for (const auto& n : store.order()) {
        auto& t = store.at(n);
        std::fill(t->value.begin(), t->value.end(), 0.0);
        if (n.ends_with(".bn.running_var")) {
            std::fill(t->value.begin(), t->value.end(), 1.0);
        }
    }
    seed_bn_stats(store);
}

ad::TensorPtr random_mel(std::int64_t s, std::int64_t channels, Rng& rng) {
    return ad::randn({s, channels}, rng, 0.5, false);
}

} // namespace

TEST_CASE("encoder output has the documented extents") {
    AcousticConfig cfg; // full-scale encoder, slim decoder to keep it light
    cfg.dec_lstm_units = 32;
    cfg.prenet_units = 16;
    cfg.attn_dim = 8;
    cfg.attn_location_filters = 4;
    cfg.attn_location_kernel = 7;
    cfg.postnet_layers = 2;
    cfg.postnet_filters = 16;
    auto v = toy_vocab();
    auto m = AcousticModel::init(cfg, v, 1);
    Rng rng(2);
    auto ids = text::encode("abcabca", v); // 7 codepoints
    ids.pop_back();                        // drop EOS to pin T = 7
    auto enc = m.encode_text(ids, true, rng);
    CHECK(enc->shape == ad::Shape{7, 512});
}

TEST_CASE("encoder is deterministic in eval mode and rejects bad ids") {
    auto v = toy_vocab();
    auto m = AcousticModel::init(AcousticConfig::shrunken(), v, 3);
    seed_bn_stats(m.store);
    Rng r1(5), r2(5);
    auto ids = text::encode("abca", v);
    auto e1 = m.encode_text(ids, false, r1);
    auto e2 = m.encode_text(ids, false, r2);
    CHECK(e1->value == e2->value);
    CHECK_THROWS_AS(m.encode_text({999}, false, r1), std::invalid_argument);
}

TEST_CASE("encoder gradients flow only into encoder parameters") {
    auto v = toy_vocab();
    auto m = AcousticModel::init(AcousticConfig::shrunken(), v, 7);
    Rng rng(8);
    auto ids = text::encode("abc", v);
    auto y = ad::sum(m.encode_text(ids, true, rng));
    ad::backward(y);
    for (const auto& n : m.store.order()) {
        const auto& t = m.store.at(n);
        const bool touched = !t->grad.empty();
        if (touched) {
            CHECK(n.rfind("encoder.", 0) == 0);
        }
    }
}

TEST_CASE("encoder gradient check on a toy config") {
    auto v = toy_vocab();
    auto m = AcousticModel::init(AcousticConfig::shrunken(), v, 11);
    Rng data_rng(12);
    auto ids = text::encode("abca", v); // 4 codepoints + EOS
    auto target = ad::randn({5, m.cfg.enc_blstm_units}, data_rng, 1.0, false);
    auto f = [&] {
        Rng rng(99); // fixed so dropout masks repeat across evaluations
        return ad::mse(m.encode_text(ids, true, rng), target);
    };
    for (const char* name : {"encoder.embedding.weight", "encoder.conv0.weight",
                             "encoder.blstm.fw.w_x", "encoder.blstm.bw.bias"}) {
        CHECK(ad::grad_check(f, m.store.at(name), 1e-5) < 1e-4);
    }
}

TEST_CASE("attention with zero parameters is uniform") {
    auto v = toy_vocab();
    auto m = AcousticModel::init(AcousticConfig::shrunken(), v, 13);
    zero_all(m.store);
    const std::int64_t t_len = 5;
    Rng rng(14);
    auto enc = ad::randn({t_len, m.cfg.enc_blstm_units}, rng, 1.0, false);
    auto enc_proj = ad::linear(enc, m.store.at("decoder.attention.memory.weight"));
    AttentionState st{ad::zeros({t_len}), ad::zeros({t_len}), ad::zeros({m.cfg.enc_blstm_units})};
    auto query = ad::randn({m.cfg.dec_lstm_units}, rng, 1.0, false);
    auto [w, ctx] = m.attention_step(query, enc, enc_proj, st);
    for (double x : w->value) {
        CHECK(x == doctest::Approx(1.0 / t_len));
    }
    CHECK(ctx->size() == m.cfg.enc_blstm_units);
}

TEST_CASE("attention weights are a distribution across random parameters, 100 seeds") {
    auto v = toy_vocab();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto m = AcousticModel::init(AcousticConfig::shrunken(), v, seed);
        Rng rng(seed + 1000);
        const std::int64_t t_len = 1 + static_cast<std::int64_t>(rng.uniform_int(9));
        auto enc = ad::randn({t_len, m.cfg.enc_blstm_units}, rng, 2.0, false);
        auto enc_proj = ad::linear(enc, m.store.at("decoder.attention.memory.weight"));
        AttentionState st{ad::zeros({t_len}), ad::zeros({t_len}),
                          ad::zeros({m.cfg.enc_blstm_units})};
        auto query = ad::randn({m.cfg.dec_lstm_units}, rng, 2.0, false);
        auto [w, ctx] = m.attention_step(query, enc, enc_proj, st);
        double total = 0.0;
        for (double x : w->value) {
            CHECK(x >= 0.0);
            total += x;
        }
        CHECK(std::fabs(total - 1.0) < 1e-6);
        // cumulative weights track the running sum
        for (std::int64_t i = 0; i < t_len; ++i) {
            CHECK(st.cum_weights->value[static_cast<std::size_t>(i)] ==
                  doctest::Approx(w->value[static_cast<std::size_t>(i)]));
        }
    }
}

TEST_CASE("saturated energies give a one-hot context") {
    Rng rng(21);
    const std::int64_t t_len = 6, dim = 8, k = 3;
    auto enc = ad::randn({t_len, dim}, rng, 1.0, false);
    std::vector<double> e(t_len, 0.0);
    e[k] = 20.0;
    auto w = ad::softmax(ad::make_tensor({t_len}, e), 0);
    auto ctx = ad::vecmat(w, enc);
    for (std::int64_t j = 0; j < dim; ++j) {
        CHECK(std::fabs(ctx->value[static_cast<std::size_t>(j)] -
                        enc->value[static_cast<std::size_t>(k * dim + j)]) < 1e-6);
    }
}

TEST_CASE("decode_step shapes, zero-network output, determinism") {
    auto v = toy_vocab();
    auto cfg = AcousticConfig::shrunken();
    cfg.prenet_dropout_at_infer = false;
    auto m = AcousticModel::init(cfg, v, 23);
    zero_all(m.store);
    const std::int64_t t_len = 4;
    Rng rng(24);
    auto enc = ad::randn({t_len, cfg.enc_blstm_units}, rng, 1.0, false);
    auto enc_proj = ad::linear(enc, m.store.at("decoder.attention.memory.weight"));
    AttentionState attn{ad::zeros({t_len}), ad::zeros({t_len}), ad::zeros({cfg.enc_blstm_units})};
    DecoderState dec{ad::zeros({cfg.dec_lstm_units}), ad::zeros({cfg.dec_lstm_units}),
                     ad::zeros({cfg.dec_lstm_units}), ad::zeros({cfg.dec_lstm_units})};
    auto prev = ad::zeros({cfg.mel_channels});
    auto [frame, stop] = m.decode_step(prev, enc, enc_proj, attn, dec, false, rng);
    CHECK(frame->shape == ad::Shape{cfg.mel_channels});
    CHECK(stop->shape == ad::Shape{1});
    for (double x : frame->value) {
        CHECK(x == doctest::Approx(0.0));
    }
    CHECK(stop->value[0] == doctest::Approx(0.0));

    // determinism with dropout disabled
    auto m2 = AcousticModel::init(cfg, v, 25);
    seed_bn_stats(m2.store);
    Rng ra(1), rb(2); // different streams must not matter when dropout is off
    AttentionState a1{ad::zeros({t_len}), ad::zeros({t_len}), ad::zeros({cfg.enc_blstm_units})};
    AttentionState a2{ad::zeros({t_len}), ad::zeros({t_len}), ad::zeros({cfg.enc_blstm_units})};
    DecoderState d1{ad::zeros({cfg.dec_lstm_units}), ad::zeros({cfg.dec_lstm_units}),
                    ad::zeros({cfg.dec_lstm_units}), ad::zeros({cfg.dec_lstm_units})};
    DecoderState d2 = d1;
    auto enc_proj2 = ad::linear(enc, m2.store.at("decoder.attention.memory.weight"));
    auto [f1, s1] = m2.decode_step(prev, enc, enc_proj2, a1, d1, false, ra);
    auto [f2, s2] = m2.decode_step(prev, enc, enc_proj2, a2, d2, false, rb);
    CHECK(f1->value == f2->value);
    CHECK(s1->value == s2->value);
}

TEST_CASE("teacher forcing: attention rows are distributions, residual law holds") {
    auto v = toy_vocab();
    auto m = AcousticModel::init(AcousticConfig::shrunken(), v, 29);
    Rng rng(30);
    auto ids = text::encode("abcab", v);
    auto target = random_mel(9, m.cfg.mel_channels, rng);
    auto out = m.forward_teacher_forced(ids, target, true, rng);
    REQUIRE(out.steps == 9);
    REQUIRE(out.enc_positions == static_cast<std::int64_t>(ids.size()));
    REQUIRE(out.attention.size() == static_cast<std::size_t>(out.steps * out.enc_positions));
    for (std::int64_t s = 0; s < out.steps; ++s) {
        double total = 0.0;
        for (std::int64_t t = 0; t < out.enc_positions; ++t) {
            const double w = out.attention[static_cast<std::size_t>(s * out.enc_positions + t)];
            CHECK(w >= 0.0);
            total += w;
        }
        CHECK(std::fabs(total - 1.0) < 1e-6);
    }
    // cumulative attention mass equals the number of steps
    double mass = 0.0;
    for (double w : out.attention) {
        mass += w;
    }
    CHECK(std::fabs(mass - static_cast<double>(out.steps)) < 1e-4);

    // post = pre + postnet(pre), elementwise
    auto residual = m.postnet(out.pre_mel, true, rng);
    for (std::size_t i = 0; i < out.post_mel->value.size(); ++i) {
        CHECK(out.post_mel->value[i] ==
              doctest::Approx(out.pre_mel->value[i] + residual->value[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(m.forward_teacher_forced(ids, ad::zeros({1, 3}), true, rng),
                    std::invalid_argument);
}

TEST_CASE("loss on perfect predictions is tiny, unit deviation gives 2.0") {
    auto v = toy_vocab();
    auto m = AcousticModel::init(AcousticConfig::shrunken(), v, 31);
    const std::int64_t s_len = 6;
    Rng rng(32);
    auto target = random_mel(s_len, m.cfg.mel_channels, rng);
    AcousticOutput perfect;
    perfect.steps = s_len;
    perfect.pre_mel = target;
    perfect.post_mel = target;
    std::vector<double> logits(s_len, -20.0);
    logits.back() = 20.0;
    perfect.stop_logits = ad::make_tensor({s_len}, logits);
    CHECK(m.loss(perfect, target)->scalar() < 1e-8 + 2e-9);

    AcousticOutput unit;
    unit.steps = s_len;
    unit.pre_mel = ad::full({s_len, m.cfg.mel_channels}, 1.0);
    unit.post_mel = ad::full({s_len, m.cfg.mel_channels}, 1.0);
    unit.stop_logits = ad::make_tensor({s_len}, logits);
    auto zero_target = ad::zeros({s_len, m.cfg.mel_channels});
    CHECK(m.loss(unit, zero_target)->scalar() == doctest::Approx(2.0).epsilon(1e-7));

    AcousticOutput bad = perfect;
    bad.pre_mel = ad::zeros({s_len + 1, m.cfg.mel_channels});
    CHECK_THROWS_AS(m.loss(bad, target), std::invalid_argument);
}

TEST_CASE("full-model gradient check on the shrunken config") {
    auto v = toy_vocab();
    auto cfg = AcousticConfig::shrunken();
    cfg.mel_channels = 8; // keeps finite differencing cheap
    auto m = AcousticModel::init(cfg, v, 37);
    Rng data_rng(38);
    auto ids = text::encode("abca", v);
    auto target = random_mel(5, cfg.mel_channels, data_rng);
    auto f = [&] {
        Rng rng(7); // fixed dropout stream per evaluation
        auto out = m.forward_teacher_forced(ids, target, true, rng);
        return m.loss(out, target);
    };
    Rng pick(39);
    const double err = ad::grad_check_sampled(f, m.store.trainable(), 160, pick, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("teacher-forced loss decreases over a short training run") {
    auto v = toy_vocab();
    auto cfg = AcousticConfig::shrunken();
    cfg.mel_channels = 8;
    auto m = AcousticModel::init(cfg, v, 41);
    Rng data_rng(42);
    auto ids = text::encode("abcba", v);
    auto target = random_mel(7, cfg.mel_channels, data_rng);
    Rng rng(43);
    auto trainable = m.store.trainable();
    double first = 0.0, last = 0.0;
    const double lr = 1e-2;
    for (int step = 0; step < 60; ++step) {
        for (auto& t : trainable) {
            t->grad.clear();
        }
        auto out = m.forward_teacher_forced(ids, target, true, rng);
        auto l = m.loss(out, target);
        if (step == 0) {
            first = l->scalar();
        }
        last = l->scalar();
        ad::backward(l);
        for (auto& t : trainable) {
            if (t->grad.empty()) {
                continue;
            }
            for (std::size_t i = 0; i < t->value.size(); ++i) {
                t->value[i] -= lr * t->grad[i];
            }
        }
    }
    CHECK(last < first);
}

TEST_CASE("infer halts at the step cap and flags truncation") {
    auto v = toy_vocab();
    auto cfg = AcousticConfig::shrunken();
    cfg.max_decoder_steps = 5;
    auto m = AcousticModel::init(cfg, v, 47);
    zero_all(m.store); // stop logit stays 0, sigmoid 0.5, never above threshold
    Rng rng(48);
    auto out = m.infer(text::encode("abc", v), rng);
    CHECK(out.steps == 5);
    CHECK(out.halt == HaltReason::max_steps);
}

TEST_CASE("infer halts immediately on a forced stop logit") {
    auto v = toy_vocab();
    auto m = AcousticModel::init(AcousticConfig::shrunken(), v, 49);
    zero_all(m.store);
    m.store.at("decoder.stop_proj.bias")->value[0] = 20.0;
    Rng rng(50);
    auto out = m.infer(text::encode("abc", v), rng);
    CHECK(out.steps == 1);
    CHECK(out.halt == HaltReason::stop_token);
}

TEST_CASE("infer can feed back post-net frames when configured") {
    auto v = toy_vocab();
    auto cfg = AcousticConfig::shrunken();
    cfg.max_decoder_steps = 6;
    cfg.infer_feed_postnet = true;
    auto m = AcousticModel::init(cfg, v, 53);
    seed_bn_stats(m.store);
    m.store.at("decoder.stop_proj.bias")->value[0] = -20.0; // never fires
    Rng rng(54);
    auto out = m.infer(text::encode("abc", v), rng);
    CHECK(out.steps == 6);
    CHECK(out.post_mel->shape == ad::Shape{6, cfg.mel_channels});
}
