#include "tts/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tts/common.hpp"
#include "tts/linalg.hpp"

namespace tts::flow {

using namespace tts::ad;

void FlowConfig::validate() const {
    if (n_flows < 1 || n_group < 2 || n_group % 2 != 0) {
        throw std::invalid_argument("flow config: n_group must be even and positive");
    }
    if (wn_layers < 1 || wn_channels < 1 || wn_kernel < 1 || wn_kernel % 2 == 0) {
        throw std::invalid_argument("flow config: bad conditioning net settings");
    }
    if (mel_channels < 1 || hop < 1) {
        throw std::invalid_argument("flow config: bad mel geometry");
    }
    if (sigma <= 0) {
        throw std::invalid_argument("flow config: sigma must be positive");
    }
    channel_schedule(); // throws when early outputs exhaust the channels
}

std::vector<std::int64_t> FlowConfig::channel_schedule() const {
    std::vector<std::int64_t> sched;
    std::int64_t remaining = n_group;
    for (std::int64_t k = 0; k < n_flows; ++k) {
        if (k > 0 && n_early_every > 0 && k % n_early_every == 0) {
            if (n_early_size >= remaining) {
                throw std::invalid_argument(
                    "flow config: early output size must stay below the remaining channels");
            }
            remaining -= n_early_size;
        }
        if (remaining < 2 || remaining % 2 != 0) {
            throw std::invalid_argument("flow config: remaining channels must stay even and >= 2");
        }
        sched.push_back(remaining);
    }
    return sched;
}

nlohmann::ordered_json FlowConfig::to_json() const {
    nlohmann::ordered_json j;
    j["n_flows"] = n_flows;
    j["n_group"] = n_group;
    j["n_early_every"] = n_early_every;
    j["n_early_size"] = n_early_size;
    j["wn_layers"] = wn_layers;
    j["wn_channels"] = wn_channels;
    j["wn_kernel"] = wn_kernel;
    j["mel_channels"] = mel_channels;
    j["hop"] = hop;
    j["sigma"] = sigma;
    return j;
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j) {
    FlowConfig c;
    auto get = [&](const char* k, auto& field) {
        if (j.contains(k)) {
            field = j.at(k).get<std::decay_t<decltype(field)>>();
        }
    };
    get("n_flows", c.n_flows);
    get("n_group", c.n_group);
    get("n_early_every", c.n_early_every);
    get("n_early_size", c.n_early_size);
    get("wn_layers", c.wn_layers);
    get("wn_channels", c.wn_channels);
    get("wn_kernel", c.wn_kernel);
    get("mel_channels", c.mel_channels);
    get("hop", c.hop);
    get("sigma", c.sigma);
    c.validate();
    return c;
}

FlowModel FlowModel::init(const FlowConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    FlowModel m;
    m.cfg = cfg;
    auto& s = m.store;
    const auto sched = cfg.channel_schedule();
    const std::int64_t ch = cfg.wn_channels;
    for (std::int64_t k = 0; k < cfg.n_flows; ++k) {
        const std::int64_t c = sched[static_cast<std::size_t>(k)];
        const std::int64_t na = c / 2;
        const std::int64_t nb = c - na;
        const std::string p = "flow.step" + std::to_string(k);
        s.put(p + ".mixing.weight",
              make_tensor({c, c}, la::random_orthonormal(c, rng), true));
        s.put(p + ".wn.start.weight", xavier_uniform({ch, na}, na, ch, rng));
        s.put(p + ".wn.start.bias", zeros({ch}, true));
        for (std::int64_t l = 0; l < cfg.wn_layers; ++l) {
            const std::string lp = p + ".wn.layer" + std::to_string(l);
            s.put(lp + ".in.weight",
                  xavier_uniform({2 * ch, ch, cfg.wn_kernel}, ch * cfg.wn_kernel,
                                 2 * ch * cfg.wn_kernel, rng));
            s.put(lp + ".in.bias", zeros({2 * ch}, true));
            s.put(lp + ".cond.weight",
                  xavier_uniform({2 * ch, cfg.mel_channels}, cfg.mel_channels, 2 * ch, rng));
            s.put(lp + ".cond.bias", zeros({2 * ch}, true));
            const std::int64_t rs_out = (l < cfg.wn_layers - 1) ? 2 * ch : ch;
            s.put(lp + ".res_skip.weight", xavier_uniform({rs_out, ch}, ch, rs_out, rng));
            s.put(lp + ".res_skip.bias", zeros({rs_out}, true));
        }
        // zero-initialized output layer: the whole flow starts as identity
        // up to the orthonormal mixing
        s.put(p + ".wn.end.weight", zeros({2 * nb, ch}, true));
        s.put(p + ".wn.end.bias", zeros({2 * nb}, true));
    }
    s.metadata["kind"] = "flow";
    s.metadata["config"] = cfg.to_json();
    s.metadata["seed"] = seed;
    s.metadata["steps"] = 0;
    return m;
}

FlowModel FlowModel::from_archive(params::ParameterArchive archive) {
    if (!archive.metadata.contains("kind") || archive.metadata["kind"] != "flow") {
        throw DataError("checkpoint is not a flow-vocoder archive");
    }
    FlowModel m;
    m.cfg = FlowConfig::from_json(archive.metadata.at("config"));
    m.store = std::move(archive);
    if (!m.mixing_invertible()) {
        throw DataError("flow checkpoint holds a singular mixing matrix");
    }
    return m;
}

bool FlowModel::mixing_invertible() const {
    for (std::int64_t k = 0; k < cfg.n_flows; ++k) {
        const auto& w = store.at("flow.step" + std::to_string(k) + ".mixing.weight");
        double ld, sign;
        if (!la::log_abs_det(w->value, w->rows(), ld, sign) || std::exp(ld) < 1e-8) {
            return false;
        }
    }
    return true;
}

ad::TensorPtr FlowModel::conditioning(const dsp::MelSpectrogram& mel,
                                      std::int64_t positions) const {
    if (mel.channels != cfg.mel_channels) {
        throw std::invalid_argument("flow conditioning: mel has " + std::to_string(mel.channels) +
                                    " channels, config expects " +
                                    std::to_string(cfg.mel_channels));
    }
    std::vector<double> cond(static_cast<std::size_t>(positions * cfg.mel_channels));
    for (std::int64_t t = 0; t < positions; ++t) {
        const std::int64_t sample = t * cfg.n_group;
        const std::int64_t frame = sample / cfg.hop;
        if (frame >= mel.frames) {
            throw std::invalid_argument("flow conditioning: audio extends past the mel (sample " +
                                        std::to_string(sample) + ", " +
                                        std::to_string(mel.frames) + " frames)");
        }
        std::copy_n(mel.data.data() + frame * mel.channels, cfg.mel_channels,
                    cond.data() + t * cfg.mel_channels);
    }
    return make_tensor({positions, cfg.mel_channels}, std::move(cond), false);
}

std::pair<ad::TensorPtr, ad::TensorPtr> FlowModel::wn(std::int64_t k, const ad::TensorPtr& xa,
                                                      const ad::TensorPtr& cond) const {
    const std::string p = "flow.step" + std::to_string(k);
    const std::int64_t ch = cfg.wn_channels;
    auto h = linear(xa, store.at(p + ".wn.start.weight"), store.at(p + ".wn.start.bias"));
    TensorPtr skip_total;
    for (std::int64_t l = 0; l < cfg.wn_layers; ++l) {
        const std::string lp = p + ".wn.layer" + std::to_string(l);
        const std::int64_t dilation = std::int64_t{1} << l;
        auto g = conv1d(h, store.at(lp + ".in.weight"), dilation * (cfg.wn_kernel - 1) / 2,
                        dilation);
        g = add_rows(g, store.at(lp + ".in.bias"));
        g = add(g, linear(cond, store.at(lp + ".cond.weight"), store.at(lp + ".cond.bias")));
        auto gate = mul(tanh_op(slice(g, 1, 0, ch)), sigmoid(slice(g, 1, ch, ch)));
        auto rs = linear(gate, store.at(lp + ".res_skip.weight"), store.at(lp + ".res_skip.bias"));
        TensorPtr skip;
        if (l < cfg.wn_layers - 1) {
            h = add(h, slice(rs, 1, 0, ch));
            skip = slice(rs, 1, ch, ch);
        } else {
            skip = rs;
        }
        skip_total = skip_total ? add(skip_total, skip) : skip;
    }
    auto out = linear(skip_total, store.at(p + ".wn.end.weight"), store.at(p + ".wn.end.bias"));
    const std::int64_t nb = out->cols() / 2;
    return {slice(out, 1, 0, nb), slice(out, 1, nb, nb)};
}

FlowForward FlowModel::forward_squeezed(const ad::TensorPtr& squeezed,
                                        const ad::TensorPtr& cond) const {
    if (squeezed->rank() != 2 || squeezed->cols() != cfg.n_group) {
        throw std::invalid_argument("flow forward: squeezed audio must be [P x " +
                                    std::to_string(cfg.n_group) + "], got " +
                                    shape_str(squeezed->shape));
    }
    const std::int64_t positions = squeezed->rows();
    const auto sched = cfg.channel_schedule();
    auto x = squeezed;
    std::vector<TensorPtr> early;
    TensorPtr log_det = zeros({1});
    for (std::int64_t k = 0; k < cfg.n_flows; ++k) {
        if (k > 0 && cfg.n_early_every > 0 && k % cfg.n_early_every == 0) {
            early.push_back(slice(x, 1, 0, cfg.n_early_size));
            x = slice(x, 1, cfg.n_early_size, x->cols() - cfg.n_early_size);
        }
        const std::string p = "flow.step" + std::to_string(k);
        const auto& w = store.at(p + ".mixing.weight");
        TensorPtr ld;
        try {
            ld = log_abs_det(w);
        } catch (const std::runtime_error&) {
            throw std::runtime_error("flow step " + std::to_string(k) +
                                     ": singular mixing matrix");
        }
        x = linear(x, w);
        log_det = add(log_det, scale(ld, static_cast<double>(positions)));
        const std::int64_t c = sched[static_cast<std::size_t>(k)];
        const std::int64_t na = c / 2;
        auto xa = slice(x, 1, 0, na);
        auto xb = slice(x, 1, na, c - na);
        auto [log_s, shift] = wn(k, xa, cond);
        auto yb = add(mul(xb, exp_op(log_s)), shift);
        log_det = add(log_det, sum(log_s));
        x = concat({xa, yb}, 1);
    }
    early.push_back(x);
    FlowForward out;
    out.z = concat(early, 1);
    out.log_det = log_det;
    return out;
}

FlowForward FlowModel::forward(const std::vector<double>& audio,
                               const dsp::MelSpectrogram& mel) const {
    if (audio.empty() || static_cast<std::int64_t>(audio.size()) % cfg.n_group != 0) {
        throw std::invalid_argument("flow forward: audio length " +
                                    std::to_string(audio.size()) +
                                    " is not divisible by the group size " +
                                    std::to_string(cfg.n_group));
    }
    const std::int64_t positions = static_cast<std::int64_t>(audio.size()) / cfg.n_group;
    auto squeezed = make_tensor({positions, cfg.n_group}, audio, false);
    return forward_squeezed(squeezed, conditioning(mel, positions));
}

std::vector<double> FlowModel::inverse(const std::vector<double>& z,
                                       const dsp::MelSpectrogram& mel) const {
    if (z.empty() || static_cast<std::int64_t>(z.size()) % cfg.n_group != 0) {
        throw std::invalid_argument("flow inverse: z length is not divisible by the group size");
    }
    NoGrad ng;
    const std::int64_t positions = static_cast<std::int64_t>(z.size()) / cfg.n_group;
    auto cond = conditioning(mel, positions);
    auto zt = make_tensor({positions, cfg.n_group}, z, false);

    // re-split z into the early chunks and the final block
    const auto sched = cfg.channel_schedule();
    std::vector<std::int64_t> early_sizes;
    for (std::int64_t k = 0; k < cfg.n_flows; ++k) {
        if (k > 0 && cfg.n_early_every > 0 && k % cfg.n_early_every == 0) {
            early_sizes.push_back(cfg.n_early_size);
        }
    }
    std::vector<TensorPtr> early;
    std::int64_t off = 0;
    for (auto sz : early_sizes) {
        early.push_back(slice(zt, 1, off, sz));
        off += sz;
    }
    auto x = slice(zt, 1, off, cfg.n_group - off);

    for (std::int64_t k = cfg.n_flows - 1; k >= 0; --k) {
        const std::int64_t c = sched[static_cast<std::size_t>(k)];
        const std::int64_t na = c / 2;
        auto xa = slice(x, 1, 0, na);
        auto yb = slice(x, 1, na, c - na);
        auto [log_s, shift] = wn(k, xa, cond);
        auto xb = mul(sub(yb, shift), exp_op(scale(log_s, -1.0)));
        x = concat({xa, xb}, 1);
        const auto& w = store.at("flow.step" + std::to_string(k) + ".mixing.weight");
        std::vector<double> w_inv;
        if (!la::invert(w->value, c, w_inv)) {
            throw std::runtime_error("flow step " + std::to_string(k) +
                                     ": singular mixing matrix");
        }
        x = linear(x, make_tensor({c, c}, std::move(w_inv), false));
        if (k > 0 && cfg.n_early_every > 0 && k % cfg.n_early_every == 0) {
            x = concat({early.back(), x}, 1);
            early.pop_back();
        }
    }
    return x->value;
}

ad::TensorPtr FlowModel::nll(const FlowForward& out, double sigma) const {
    if (sigma <= 0) {
        throw std::invalid_argument("flow nll: sigma must be positive");
    }
    const double n = static_cast<double>(out.z->size());
    auto quad = scale(sum(mul(out.z, out.z)), 1.0 / (2.0 * sigma * sigma));
    return scale(sub(quad, out.log_det), 1.0 / n);
}

audio::Waveform FlowModel::synthesize(const dsp::MelSpectrogram& mel, double sigma_infer,
                                      Rng& rng) const {
    if (sigma_infer < 0 || sigma_infer > 1.0) {
        throw std::invalid_argument("flow synthesize: sigma_infer must lie in [0, 1]");
    }
    const std::int64_t samples = mel.frames * cfg.hop;
    if (samples % cfg.n_group != 0) {
        throw std::invalid_argument("flow synthesize: hop is not divisible by the group size");
    }
    std::vector<double> z(static_cast<std::size_t>(samples));
    for (auto& v : z) {
        v = sigma_infer * rng.normal();
    }
    auto audio_out = inverse(z, mel);
    audio::Waveform w;
    w.sample_rate_hz = mel.sample_rate_hz;
    w.samples = std::move(audio_out);
    for (auto& s : w.samples) {
        s = std::clamp(s, -1.0, 1.0 - 1.0 / 32768.0);
    }
    return w;
}

} // namespace tts::flow
