#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tts/dsp.hpp"

namespace tts::report {

struct Rating {
    std::string utterance_id;
    std::string listener_id;
    int score = 0; // integral, 1..5
    std::string system;
};

struct RatingSet {
    std::vector<Rating> ratings;
};

/// CSV `utterance_id,listener_id,score,system`, optional header line.
RatingSet ratings_from_csv(const std::string& body);
RatingSet load_ratings(const std::string& path);

struct MosEntry {
    std::string system;
    std::int64_t count = 0;
    double mean = 0.0;
    double stddev = 0.0; // population
    std::string formatted; // "M.MM ± S.SS"
};

struct MosReport {
    std::vector<MosEntry> entries; // sorted by system name
    std::int64_t total_ratings = 0;
    // utterances rated by fewer than 3 listeners (flagged, never dropped)
    std::vector<std::string> under_rated;
};

MosEntry aggregate_mos(const std::vector<int>& scores, const std::string& system);
MosReport mos_report(const RatingSet& ratings);

/// Table-style text block, one "system  mean ± std" row per system.
std::string format_mos_report(const MosReport& report);

// P5 (binary) PGM heatmaps.
struct Pgm {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> pixels; // row-major, top row first
};

std::string pgm_bytes(const Pgm& image);
Pgm pgm_from_bytes(const std::string& bytes);

/// Attention matrix [steps x positions], linear intensity in [0, max];
/// decoder steps run along x, encoder positions along y. Rejects empty
/// matrices.
Pgm render_alignment(const std::vector<double>& attention, std::int64_t steps,
                     std::int64_t positions, int pixel_scale = 1);
void plot_alignment(const std::vector<double>& attention, std::int64_t steps,
                    std::int64_t positions, const std::string& path, int pixel_scale = 1);

/// Mel heatmap, min-max normalized per image; frames along x, channels
/// along y with channel 0 at the bottom.
Pgm render_spectrogram(const dsp::MelSpectrogram& mel, int pixel_scale = 1);
void plot_spectrogram(const dsp::MelSpectrogram& mel, const std::string& path,
                      int pixel_scale = 1);

} // namespace tts::report
