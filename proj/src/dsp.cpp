#include "tts/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tts/common.hpp"

namespace tts::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> hann_window(std::int64_t n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
    }
    return w;
}

} // namespace

void fft(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) {
        throw std::invalid_argument("fft: size must be a power of two, got " + std::to_string(n));
    }
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(a[i], a[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) {
            x /= static_cast<double>(n);
        }
    }
}

double mel_hz(double f_hz) {
    if (f_hz < 0) {
        throw std::invalid_argument("mel_hz: negative frequency");
    }
    return 2595.0 * std::log10(1.0 + f_hz / 700.0);
}

double hz_mel(double mel) {
    if (mel < 0) {
        throw std::invalid_argument("hz_mel: negative mel value");
    }
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank make_mel_filterbank(std::int64_t channels, std::int64_t n_fft, int sample_rate_hz,
                                  double f_min, double f_max) {
    if (channels < 2 || f_min < 0 || f_max <= f_min ||
        f_max > sample_rate_hz / 2.0 + 1e-9) {
        throw std::invalid_argument("make_mel_filterbank: bad parameters");
    }
    MelFilterbank fb;
    fb.channels = channels;
    fb.bins = n_fft / 2 + 1;
    fb.f_min_hz = f_min;
    fb.f_max_hz = f_max;
    fb.weights.assign(static_cast<std::size_t>(fb.channels * fb.bins), 0.0);
    // peaks equally spaced in mel over [f_min, f_max] inclusive; the edge
    // channels are half-triangles so the closed band has no coverage holes
    const double mel_lo = mel_hz(f_min);
    const double mel_hi = mel_hz(f_max);
    fb.center_freqs_hz.resize(static_cast<std::size_t>(channels));
    for (std::int64_t c = 0; c < channels; ++c) {
        fb.center_freqs_hz[static_cast<std::size_t>(c)] =
            hz_mel(mel_lo + (mel_hi - mel_lo) * static_cast<double>(c) / (channels - 1));
    }
    const double bin_hz = static_cast<double>(sample_rate_hz) / static_cast<double>(n_fft);
    for (std::int64_t c = 0; c < channels; ++c) {
        const double peak = fb.center_freqs_hz[static_cast<std::size_t>(c)];
        const double left = (c == 0) ? peak : fb.center_freqs_hz[static_cast<std::size_t>(c - 1)];
        const double right =
            (c == channels - 1) ? peak : fb.center_freqs_hz[static_cast<std::size_t>(c + 1)];
        for (std::int64_t k = 0; k < fb.bins; ++k) {
            const double f = k * bin_hz;
            if (f < f_min || f > f_max) {
                continue;
            }
            const double rise = (c == 0) ? 1.0 : (f - left) / (peak - left);
            const double fall = (c == channels - 1) ? 1.0 : (right - f) / (right - peak);
            const double wgt = std::min(1.0, std::min(rise, fall));
            if (wgt > 0) {
                fb.weights[static_cast<std::size_t>(c * fb.bins + k)] = wgt;
            }
        }
    }
    return fb;
}

std::int64_t stft_frame_count(std::int64_t samples, std::int64_t frame_length, std::int64_t hop) {
    if (samples < frame_length) {
        throw std::invalid_argument("stft: input of " + std::to_string(samples) +
                                    " samples is shorter than one frame (" +
                                    std::to_string(frame_length) + ")");
    }
    return (samples - frame_length) / hop + 1;
}

std::vector<double> stft_magnitude(const audio::Waveform& w, std::int64_t* out_frames,
                                   std::int64_t hop) {
    const std::int64_t n = static_cast<std::int64_t>(w.samples.size());
    const std::int64_t frames = stft_frame_count(n, kFrameLength, hop);
    const std::int64_t bins = kNFft / 2 + 1;
    static const std::vector<double> window = hann_window(kFrameLength);
    std::vector<double> mag(static_cast<std::size_t>(frames * bins));
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(kNFft));
    for (std::int64_t f = 0; f < frames; ++f) {
        const std::int64_t start = f * hop;
        for (std::int64_t i = 0; i < kFrameLength; ++i) {
            buf[static_cast<std::size_t>(i)] = w.samples[static_cast<std::size_t>(start + i)] *
                                               window[static_cast<std::size_t>(i)];
        }
        std::fill(buf.begin() + kFrameLength, buf.end(), std::complex<double>(0.0, 0.0));
        fft(buf, false);
        for (std::int64_t k = 0; k < bins; ++k) {
            mag[static_cast<std::size_t>(f * bins + k)] = std::abs(buf[static_cast<std::size_t>(k)]);
        }
    }
    if (out_frames) {
        *out_frames = frames;
    }
    return mag;
}

MelSpectrogram mel_spectrogram(const audio::Waveform& w, const MelFilterbank& fb,
                               std::int64_t hop) {
    if (fb.bins != kNFft / 2 + 1) {
        throw std::invalid_argument("mel_spectrogram: filterbank bins do not match FFT size");
    }
    std::int64_t frames = 0;
    const auto mag = stft_magnitude(w, &frames, hop);
    MelSpectrogram mel;
    mel.frames = frames;
    mel.channels = fb.channels;
    mel.hop_samples = hop;
    mel.sample_rate_hz = w.sample_rate_hz;
    mel.data.assign(static_cast<std::size_t>(frames * fb.channels), 0.0);
    for (std::int64_t f = 0; f < frames; ++f) {
        const double* mrow = mag.data() + f * fb.bins;
        for (std::int64_t c = 0; c < fb.channels; ++c) {
            const double* wrow = fb.weights.data() + c * fb.bins;
            double acc = 0.0;
            for (std::int64_t k = 0; k < fb.bins; ++k) {
                acc += wrow[k] * mrow[k];
            }
            mel.data[static_cast<std::size_t>(f * fb.channels + c)] =
                std::log(std::max(acc, kLogFloor));
        }
    }
    return mel;
}

namespace {

// least-squares overlap-add inverse of the zero-padded Hann STFT
audio::Waveform istft(const std::vector<std::complex<double>>& spec, std::int64_t frames,
                      std::int64_t bins, std::int64_t hop, int sample_rate_hz) {
    static const std::vector<double> window = hann_window(kFrameLength);
    const std::int64_t out_n = (frames - 1) * hop + kFrameLength;
    std::vector<double> num(static_cast<std::size_t>(out_n), 0.0);
    std::vector<double> den(static_cast<std::size_t>(out_n), 0.0);
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(kNFft));
    for (std::int64_t f = 0; f < frames; ++f) {
        for (std::int64_t k = 0; k < bins; ++k) {
            buf[static_cast<std::size_t>(k)] = spec[static_cast<std::size_t>(f * bins + k)];
        }
        for (std::int64_t k = bins; k < kNFft; ++k) {
            buf[static_cast<std::size_t>(k)] =
                std::conj(buf[static_cast<std::size_t>(kNFft - k)]);
        }
        fft(buf, true);
        const std::int64_t start = f * hop;
        for (std::int64_t i = 0; i < kFrameLength; ++i) {
            const double wv = window[static_cast<std::size_t>(i)];
            num[static_cast<std::size_t>(start + i)] +=
                wv * buf[static_cast<std::size_t>(i)].real();
            den[static_cast<std::size_t>(start + i)] += wv * wv;
        }
    }
    audio::Waveform out;
    out.sample_rate_hz = sample_rate_hz;
    out.samples.resize(static_cast<std::size_t>(out_n));
    for (std::int64_t i = 0; i < out_n; ++i) {
        out.samples[static_cast<std::size_t>(i)] =
            num[static_cast<std::size_t>(i)] / std::max(den[static_cast<std::size_t>(i)], 1e-12);
    }
    return out;
}

} // namespace

namespace {

// Sinusoidal lobe dictionary for the mel pseudo-inverse: atoms are Hann-800
// window lobes positioned on a quarter-bin frequency grid. Fitting lobes
// instead of raw bins keeps the recovered magnitudes consistent with what a
// windowed signal can actually produce.
struct LobeDictionary {
    static constexpr int kOversample = 4;
    static constexpr int kHalfWidthBins = 4;
    std::int64_t atoms = 0;
    std::vector<std::vector<std::pair<int, double>>> mel_cols; // atom -> (channel, weight)
    std::vector<double> mel_col_norm;
    std::vector<std::vector<std::pair<std::int64_t, double>>> bin_cols; // atom -> (bin, kernel)
};

LobeDictionary build_lobe_dictionary(const MelFilterbank& fb) {
    const int q = LobeDictionary::kOversample;
    const int hw = LobeDictionary::kHalfWidthBins;
    // window magnitude response at quarter-bin offsets, via oversampled FFT
    std::vector<std::complex<double>> wspec(static_cast<std::size_t>(kNFft * q), 0.0);
    for (std::int64_t i = 0; i < kFrameLength; ++i) {
        wspec[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / kFrameLength);
    }
    fft(wspec, false);
    const double w0 = std::abs(wspec[0]);
    LobeDictionary d;
    d.atoms = fb.bins * q;
    d.mel_cols.resize(static_cast<std::size_t>(d.atoms));
    d.mel_col_norm.resize(static_cast<std::size_t>(d.atoms));
    d.bin_cols.resize(static_cast<std::size_t>(d.atoms));
    std::vector<double> ch(static_cast<std::size_t>(fb.channels));
    for (std::int64_t j = 0; j < d.atoms; ++j) {
        std::fill(ch.begin(), ch.end(), 0.0);
        const std::int64_t kc = j / q;
        for (std::int64_t k = std::max<std::int64_t>(0, kc - hw);
             k <= std::min<std::int64_t>(fb.bins - 1, kc + hw + 1); ++k) {
            const std::int64_t qoff = std::abs(k * q - j);
            if (qoff > hw * q) {
                continue;
            }
            const double v = std::abs(wspec[static_cast<std::size_t>(qoff)]) / w0;
            if (v <= 1e-6) {
                continue;
            }
            d.bin_cols[static_cast<std::size_t>(j)].push_back({k, v});
            for (std::int64_t c = 0; c < fb.channels; ++c) {
                const double w = fb.at(c, k);
                if (w > 0) {
                    ch[static_cast<std::size_t>(c)] += w * v;
                }
            }
        }
        double norm_sq = 0.0;
        for (std::int64_t c = 0; c < fb.channels; ++c) {
            const double a = ch[static_cast<std::size_t>(c)];
            if (a > 1e-12) {
                d.mel_cols[static_cast<std::size_t>(j)].push_back({static_cast<int>(c), a});
                norm_sq += a * a;
            }
        }
        d.mel_col_norm[static_cast<std::size_t>(j)] = std::sqrt(std::max(norm_sq, 1e-300));
    }
    return d;
}

// Greedy sparse non-negative fit of one mel frame onto lobe atoms, refined
// with multiplicative least-squares updates on the active set.
void invert_mel_frame(const LobeDictionary& d, const std::vector<double>& m, double* spectrum) {
    constexpr int kMaxAtoms = 64;
    constexpr int kRefine = 6;
    const std::int64_t channels = static_cast<std::int64_t>(m.size());
    double m_norm_sq = 0.0;
    for (double v : m) {
        m_norm_sq += v * v;
    }
    std::vector<double> resid = m;
    std::vector<double> model(static_cast<std::size_t>(channels), 0.0);
    std::vector<std::int64_t> active;
    std::vector<double> coeff(static_cast<std::size_t>(d.atoms), 0.0);
    for (int pick = 0; pick < kMaxAtoms; ++pick) {
        std::int64_t best = -1;
        double best_score = 0.0;
        for (std::int64_t j = 0; j < d.atoms; ++j) {
            double s = 0.0;
            for (const auto& [c, w] : d.mel_cols[static_cast<std::size_t>(j)]) {
                s += w * resid[static_cast<std::size_t>(c)];
            }
            s /= d.mel_col_norm[static_cast<std::size_t>(j)];
            if (s > best_score) {
                best_score = s;
                best = j;
            }
        }
        if (best < 0 || best_score <= 0.0) {
            break;
        }
        if (coeff[static_cast<std::size_t>(best)] == 0.0) {
            active.push_back(best);
            coeff[static_cast<std::size_t>(best)] =
                best_score / d.mel_col_norm[static_cast<std::size_t>(best)] * 0.5 + 1e-12;
        }
        for (int it = 0; it < kRefine; ++it) {
            std::fill(model.begin(), model.end(), 0.0);
            for (std::int64_t j : active) {
                const double l = coeff[static_cast<std::size_t>(j)];
                if (l <= 0) {
                    continue;
                }
                for (const auto& [c, w] : d.mel_cols[static_cast<std::size_t>(j)]) {
                    model[static_cast<std::size_t>(c)] += w * l;
                }
            }
            for (std::int64_t j : active) {
                double num = 0.0, den = 0.0;
                for (const auto& [c, w] : d.mel_cols[static_cast<std::size_t>(j)]) {
                    num += w * m[static_cast<std::size_t>(c)];
                    den += w * model[static_cast<std::size_t>(c)];
                }
                if (den > 1e-12) {
                    coeff[static_cast<std::size_t>(j)] *= num / den;
                }
            }
        }
        std::fill(model.begin(), model.end(), 0.0);
        for (std::int64_t j : active) {
            const double l = coeff[static_cast<std::size_t>(j)];
            if (l <= 0) {
                continue;
            }
            for (const auto& [c, w] : d.mel_cols[static_cast<std::size_t>(j)]) {
                model[static_cast<std::size_t>(c)] += w * l;
            }
        }
        double r_norm_sq = 0.0;
        for (std::int64_t c = 0; c < channels; ++c) {
            resid[static_cast<std::size_t>(c)] =
                m[static_cast<std::size_t>(c)] - model[static_cast<std::size_t>(c)];
            r_norm_sq += resid[static_cast<std::size_t>(c)] * resid[static_cast<std::size_t>(c)];
        }
        if (r_norm_sq < 1e-6 * m_norm_sq) {
            break;
        }
    }
    for (std::int64_t j : active) {
        const double l = coeff[static_cast<std::size_t>(j)];
        if (l <= 0) {
            continue;
        }
        for (const auto& [k, v] : d.bin_cols[static_cast<std::size_t>(j)]) {
            spectrum[k] += v * l;
        }
    }
}

} // namespace

GriffinLimResult griffin_lim(const MelSpectrogram& mel, const MelFilterbank& fb, int iterations) {
    if (iterations < 1) {
        throw std::invalid_argument("griffin_lim: iterations must be >= 1");
    }
    if (mel.channels != fb.channels) {
        throw std::invalid_argument("griffin_lim: mel channels do not match filterbank");
    }
    const std::int64_t frames = mel.frames;
    const std::int64_t bins = fb.bins;
    const LobeDictionary dict = build_lobe_dictionary(fb);
    std::vector<double> target(static_cast<std::size_t>(frames * bins), 0.0);
    std::vector<double> mrow(static_cast<std::size_t>(fb.channels));
    double target_norm_sq = 0.0;
    for (std::int64_t f = 0; f < frames; ++f) {
        for (std::int64_t c = 0; c < fb.channels; ++c) {
            mrow[static_cast<std::size_t>(c)] = std::exp(mel.at(f, c));
        }
        double* srow = target.data() + f * bins;
        invert_mel_frame(dict, mrow, srow);
        for (std::int64_t k = 0; k < bins; ++k) {
            target_norm_sq += srow[k] * srow[k];
        }
    }
    const double target_norm = std::sqrt(std::max(target_norm_sq, 1e-300));

    // deterministic phase init: per-frame spectral peaks get an integrated
    // phase advance at their interpolated frequency, neighbors in the same
    // lobe are locked to the peak phase
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(frames * bins));
    {
        std::vector<double> prev_phase(static_cast<std::size_t>(bins), 0.0);
        std::vector<double> phase(static_cast<std::size_t>(bins));
        for (std::int64_t f = 0; f < frames; ++f) {
            const double* srow = target.data() + f * bins;
            std::fill(phase.begin(), phase.end(), 0.0);
            for (std::int64_t k = 1; k + 1 < bins; ++k) {
                if (srow[k] > srow[k - 1] && srow[k] >= srow[k + 1] && srow[k] > 1e-8) {
                    const double denom = srow[k - 1] - 2 * srow[k] + srow[k + 1];
                    double off = (denom != 0.0) ? 0.5 * (srow[k - 1] - srow[k + 1]) / denom : 0.0;
                    off = std::clamp(off, -0.5, 0.5);
                    const double advance =
                        2.0 * kPi * (static_cast<double>(k) + off) * mel.hop_samples / kNFft;
                    const double pk = prev_phase[static_cast<std::size_t>(k)] + advance;
                    phase[static_cast<std::size_t>(k)] = pk;
                    for (std::int64_t j = k - 1; j >= 0 && srow[j] < srow[j + 1]; --j) {
                        phase[static_cast<std::size_t>(j)] = pk;
                    }
                    for (std::int64_t j = k + 1; j < bins && srow[j] < srow[j - 1]; ++j) {
                        phase[static_cast<std::size_t>(j)] = pk;
                    }
                }
            }
            for (std::int64_t k = 0; k < bins; ++k) {
                spec[static_cast<std::size_t>(f * bins + k)] =
                    std::polar(target[static_cast<std::size_t>(f * bins + k)],
                               phase[static_cast<std::size_t>(k)]);
            }
            prev_phase = phase;
        }
    }
    GriffinLimResult result;
    audio::Waveform x = istft(spec, frames, bins, mel.hop_samples, mel.sample_rate_hz);
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(kNFft));
    static const std::vector<double> window = hann_window(kFrameLength);
    for (int it = 0; it < iterations; ++it) {
        double err_sq = 0.0;
        for (std::int64_t f = 0; f < frames; ++f) {
            const std::int64_t start = f * mel.hop_samples;
            for (std::int64_t i = 0; i < kFrameLength; ++i) {
                buf[static_cast<std::size_t>(i)] =
                    x.samples[static_cast<std::size_t>(start + i)] *
                    window[static_cast<std::size_t>(i)];
            }
            std::fill(buf.begin() + kFrameLength, buf.end(), std::complex<double>(0.0, 0.0));
            fft(buf, false);
            for (std::int64_t k = 0; k < bins; ++k) {
                const auto v = buf[static_cast<std::size_t>(k)];
                const double m = std::abs(v);
                const double t = target[static_cast<std::size_t>(f * bins + k)];
                err_sq += (m - t) * (m - t);
                // keep the phase, impose the target magnitude
                spec[static_cast<std::size_t>(f * bins + k)] =
                    (m > 1e-12) ? v * (t / m) : std::complex<double>(t, 0.0);
            }
        }
        result.residuals.push_back(std::sqrt(err_sq) / target_norm);
        x = istft(spec, frames, bins, mel.hop_samples, mel.sample_rate_hz);
    }
    double peak = 0.0;
    for (double s : x.samples) {
        peak = std::max(peak, std::fabs(s));
    }
    if (peak > 1e-12) {
        const double g = 0.95 / peak;
        for (auto& s : x.samples) {
            s *= g;
        }
    }
    result.waveform = std::move(x);
    return result;
}

std::string mel_bytes(const MelSpectrogram& mel) {
    std::string out;
    out.reserve(12 + mel.data.size() * 4);
    out += "MEL1";
    put_u32(out, static_cast<std::uint32_t>(mel.frames));
    put_u32(out, static_cast<std::uint32_t>(mel.channels));
    for (double v : mel.data) {
        put_f32(out, static_cast<float>(v));
    }
    return out;
}

MelSpectrogram mel_from_bytes(const std::string& bytes) {
    ByteReader r(bytes.data(), bytes.size());
    if (r.bytes(4) != "MEL1") {
        throw DataError("bad mel file magic (expected MEL1)");
    }
    MelSpectrogram mel;
    mel.frames = r.u32();
    mel.channels = r.u32();
    const std::size_t n = static_cast<std::size_t>(mel.frames) *
                          static_cast<std::size_t>(mel.channels);
    mel.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        mel.data[i] = static_cast<double>(r.f32());
    }
    if (r.remaining() != 0) {
        throw DataError("trailing bytes in mel file");
    }
    return mel;
}

void save_mel(const MelSpectrogram& mel, const std::string& path) {
    write_file(path, mel_bytes(mel));
}

MelSpectrogram load_mel(const std::string& path) {
    return mel_from_bytes(read_file(path));
}

double dominant_frequency_hz(const std::vector<double>& samples, int sample_rate_hz,
                             std::int64_t n_fft) {
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(n_fft),
                                          std::complex<double>(0.0, 0.0));
    const std::int64_t n = std::min<std::int64_t>(static_cast<std::int64_t>(samples.size()), n_fft);
    for (std::int64_t i = 0; i < n; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
        buf[static_cast<std::size_t>(i)] = samples[static_cast<std::size_t>(i)] * w;
    }
    fft(buf, false);
    std::int64_t best = 1;
    double best_mag = 0.0;
    for (std::int64_t k = 1; k <= n_fft / 2; ++k) {
        const double m = std::abs(buf[static_cast<std::size_t>(k)]);
        if (m > best_mag) {
            best_mag = m;
            best = k;
        }
    }
    return static_cast<double>(best) * sample_rate_hz / static_cast<double>(n_fft);
}

} // namespace tts::dsp
