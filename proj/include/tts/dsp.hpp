#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "tts/audio.hpp"

namespace tts::dsp {

// Front-end geometry: 50 ms frames, 12 ms hop at 16 kHz, FFT padded to the
// next power of two. The hop is configurable because the literature wobbles
// between 12 and 12.5 ms; 192 samples is the default here.
constexpr std::int64_t kFrameLength = 800;
constexpr std::int64_t kDefaultHop = 192;
constexpr std::int64_t kNFft = 1024;
constexpr std::int64_t kMelChannels = 80;
constexpr double kLogFloor = 1e-5;

/// In-place radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& a, bool inverse);

/// frames x 80 log-mel matrix plus the geometry it was computed with.
struct MelSpectrogram {
    std::int64_t frames = 0;
    std::int64_t channels = kMelChannels;
    std::vector<double> data; // row-major [frames x channels]
    std::int64_t frame_length_samples = kFrameLength;
    std::int64_t hop_samples = kDefaultHop;
    int sample_rate_hz = audio::kCanonicalRateHz;

    double at(std::int64_t f, std::int64_t c) const {
        return data[static_cast<std::size_t>(f * channels + c)];
    }
};

/// 80 x (n_fft/2 + 1) non-negative triangular filterbank on the HTK mel
/// scale. Peaks are normalized to 1 and placed from f_min to f_max
/// inclusive, so every bin in [f_min, f_max] has positive coverage.
struct MelFilterbank {
    std::int64_t channels = kMelChannels;
    std::int64_t bins = kNFft / 2 + 1;
    std::vector<double> weights; // row-major [channels x bins]
    double f_min_hz = 0.0;
    double f_max_hz = 8000.0;
    std::vector<double> center_freqs_hz;

    double at(std::int64_t c, std::int64_t k) const {
        return weights[static_cast<std::size_t>(c * bins + k)];
    }
};

double mel_hz(double f_hz);
double hz_mel(double mel);

MelFilterbank make_mel_filterbank(std::int64_t channels = kMelChannels,
                                  std::int64_t n_fft = kNFft,
                                  int sample_rate_hz = audio::kCanonicalRateHz,
                                  double f_min = 0.0, double f_max = 8000.0);

std::int64_t stft_frame_count(std::int64_t samples, std::int64_t frame_length = kFrameLength,
                              std::int64_t hop = kDefaultHop);

/// Magnitude STFT: Hann window, no center padding, frame zero-padded to
/// n_fft. Output is [frames x (n_fft/2+1)] row-major. Rejects input shorter
/// than one frame.
std::vector<double> stft_magnitude(const audio::Waveform& w, std::int64_t* out_frames,
                                   std::int64_t hop = kDefaultHop);

MelSpectrogram mel_spectrogram(const audio::Waveform& w, const MelFilterbank& fb,
                               std::int64_t hop = kDefaultHop);

struct GriffinLimResult {
    audio::Waveform waveform;
    std::vector<double> residuals; // spectral convergence error per iteration
};

/// Phase reconstruction from a log-mel matrix: mel -> linear magnitude via
/// the normalized filterbank transpose, then iterative Griffin-Lim with
/// deterministic zero-phase init. Output peak-normalized to 0.95.
GriffinLimResult griffin_lim(const MelSpectrogram& mel, const MelFilterbank& fb, int iterations);

// "MEL1" container: magic, u32 frames, u32 channels, row-major f32 payload.
std::string mel_bytes(const MelSpectrogram& mel);
MelSpectrogram mel_from_bytes(const std::string& bytes);
void save_mel(const MelSpectrogram& mel, const std::string& path);
MelSpectrogram load_mel(const std::string& path);

/// Test utility: dominant-frequency estimate via zero-padded Hann FFT.
double dominant_frequency_hz(const std::vector<double>& samples, int sample_rate_hz,
                             std::int64_t n_fft = 16384);

} // namespace tts::dsp
