#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tts::audio {

constexpr int kCanonicalRateHz = 16000;

/// Mono audio, samples in [-1, 1).
struct Waveform {
    std::vector<double> samples;
    int sample_rate_hz = kCanonicalRateHz;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate_hz;
    }
};

/// Parse a RIFF/WAVE buffer. Accepts 16-bit PCM, mono or stereo; stereo is
/// downmixed by channel mean. No resampling here.
Waveform parse_wav(const std::string& bytes);

/// Load a 16-bit PCM wav file and normalize to canonical form: mono,
/// resampled to 16 kHz. Rejects non-PCM, other bit depths, truncated files.
Waveform load_wav(const std::string& path);

/// Serialize as 16-bit PCM mono, little-endian.
std::string wav_bytes(const Waveform& w);
void save_wav(const Waveform& w, const std::string& path);

/// Band-limited rational resampling (polyphase windowed-sinc prototype,
/// 64 taps at the output rate, Kaiser beta 8). Output length is
/// round(len * target / source).
Waveform resample(const Waveform& w, int target_hz);

} // namespace tts::audio
