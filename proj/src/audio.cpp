#include "tts/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tts/common.hpp"

namespace tts::audio {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint16_t rd_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t rd_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

// zeroth-order modified Bessel function, power series
double bessel_i0(double x) {
    double sum = 1.0;
    double term = 1.0;
    const double half_x = x / 2.0;
    for (int k = 1; k < 64; ++k) {
        term *= (half_x / k) * (half_x / k);
        sum += term;
        if (term < 1e-16 * sum) {
            break;
        }
    }
    return sum;
}

} // namespace

Waveform parse_wav(const std::string& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0) {
        throw DataError("not a RIFF/WAVE file");
    }
    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::uint32_t data_len = 0;
    std::size_t off = 12;
    while (off + 8 <= n) {
        const char* id = reinterpret_cast<const char*>(p + off);
        const std::uint32_t len = rd_u32(p + off + 4);
        const std::size_t body = off + 8;
        if (body + len > n) {
            throw DataError("truncated wav chunk '" + std::string(id, 4) + "'");
        }
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) {
                throw DataError("wav fmt chunk too short");
            }
            format = rd_u16(p + body);
            channels = rd_u16(p + body + 2);
            rate = rd_u32(p + body + 4);
            bits = rd_u16(p + body + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = p + body;
            data_len = len;
        }
        off = body + len + (len & 1); // chunks are word-aligned
    }
    if (!have_fmt || data == nullptr) {
        throw DataError("wav file missing fmt or data chunk");
    }
    if (format != 1) {
        throw DataError("unsupported wav format tag " + std::to_string(format) +
                        " (only PCM is accepted)");
    }
    if (bits != 16) {
        throw DataError("unsupported wav bit depth " + std::to_string(bits) +
                        " (only 16-bit PCM is accepted)");
    }
    if (channels != 1 && channels != 2) {
        throw DataError("unsupported wav channel count " + std::to_string(channels));
    }
    if (rate == 0) {
        throw DataError("wav sample rate is zero");
    }
    const std::size_t frame_bytes = 2u * channels;
    if (data_len % frame_bytes != 0) {
        throw DataError("wav data chunk is not a whole number of frames");
    }
    const std::size_t frames = data_len / frame_bytes;
    Waveform w;
    w.sample_rate_hz = static_cast<int>(rate);
    w.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
            const std::uint16_t raw = rd_u16(data + i * frame_bytes + 2u * c);
            acc += static_cast<double>(static_cast<std::int16_t>(raw));
        }
        w.samples[i] = acc / channels / 32768.0;
    }
    return w;
}

Waveform load_wav(const std::string& path) {
    Waveform w = parse_wav(read_file(path));
    if (w.sample_rate_hz != kCanonicalRateHz) {
        w = resample(w, kCanonicalRateHz);
    }
    return w;
}

std::string wav_bytes(const Waveform& w) {
    const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVE";
    out += "fmt ";
    put_u32(out, 16);
    // PCM, mono
    put_u32(out, 1u | (1u << 16));
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2u); // byte rate
    // block align 2, bits 16
    put_u32(out, 2u | (16u << 16));
    out += "data";
    put_u32(out, data_len);
    for (double s : w.samples) {
        double scaled = std::round(s * 32768.0);
        scaled = std::clamp(scaled, -32768.0, 32767.0);
        const auto v = static_cast<std::int16_t>(scaled);
        out.push_back(static_cast<char>(v & 0xff));
        out.push_back(static_cast<char>((v >> 8) & 0xff));
    }
    return out;
}

void save_wav(const Waveform& w, const std::string& path) {
    write_file(path, wav_bytes(w));
}

Waveform resample(const Waveform& w, int target_hz) {
    if (target_hz <= 0 || w.sample_rate_hz <= 0) {
        throw DataError("resample: sample rates must be positive");
    }
    if (target_hz == w.sample_rate_hz) {
        return w;
    }
    const std::int64_t src_n = static_cast<std::int64_t>(w.samples.size());
    const double ratio = static_cast<double>(target_hz) / w.sample_rate_hz;
    const std::int64_t out_n = static_cast<std::int64_t>(std::llround(src_n * ratio));
    Waveform out;
    out.sample_rate_hz = target_hz;
    out.samples.assign(static_cast<std::size_t>(out_n), 0.0);
    if (src_n == 0 || out_n == 0) {
        return out;
    }
    // prototype low-pass: 64 taps at the output rate, stretched by the
    // decimation factor when downsampling
    const double stretch = std::max(1.0, 1.0 / ratio);
    const double half_width = 32.0 * stretch;
    const double cutoff = 0.5 * std::min(1.0, ratio); // cycles per input sample
    const double beta = 8.0;
    const double i0_beta = bessel_i0(beta);
    for (std::int64_t i = 0; i < out_n; ++i) {
        // exact rational input position avoids drift on long signals
        const std::int64_t num = i * w.sample_rate_hz;
        const std::int64_t whole = num / target_hz;
        const double frac = static_cast<double>(num % target_hz) / target_hz;
        const double center = static_cast<double>(whole) + frac;
        const std::int64_t lo = static_cast<std::int64_t>(std::ceil(center - half_width));
        const std::int64_t hi = static_cast<std::int64_t>(std::floor(center + half_width));
        double acc = 0.0, norm = 0.0;
        for (std::int64_t m = std::max<std::int64_t>(lo, 0); m <= std::min(hi, src_n - 1); ++m) {
            const double u = static_cast<double>(m) - center;
            const double r = u / half_width;
            const double win = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
            const double a = 2.0 * cutoff * u;
            const double sinc = (a == 0.0) ? 1.0 : std::sin(kPi * a) / (kPi * a);
            const double h = 2.0 * cutoff * sinc * win;
            acc += h * w.samples[static_cast<std::size_t>(m)];
            norm += h;
        }
        out.samples[static_cast<std::size_t>(i)] = (std::fabs(norm) > 1e-12) ? acc / norm : 0.0;
    }
    for (auto& s : out.samples) {
        s = std::clamp(s, -1.0, 1.0 - 1.0 / 32768.0);
    }
    return out;
}

} // namespace tts::audio
