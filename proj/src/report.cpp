#include "tts/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "tts/common.hpp"

namespace tts::report {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

RatingSet ratings_from_csv(const std::string& body) {
    RatingSet set;
    std::size_t pos = 0, line_no = 0;
    while (pos < body.size()) {
        std::size_t end = body.find('\n', pos);
        if (end == std::string::npos) {
            end = body.size();
        }
        std::string line = body.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line_no == 1 && line.rfind("utterance_id", 0) == 0) {
            continue; // header
        }
        auto fields = split(line, ',');
        if (fields.size() != 4) {
            throw DataError("ratings line " + std::to_string(line_no) +
                            ": expected utterance_id,listener_id,score,system");
        }
        Rating r;
        r.utterance_id = fields[0];
        r.listener_id = fields[1];
        try {
            std::size_t used = 0;
            r.score = std::stoi(fields[2], &used);
            if (used != fields[2].size()) {
                throw std::invalid_argument("trailing characters");
            }
        } catch (const std::exception&) {
            throw DataError("ratings line " + std::to_string(line_no) + ": score '" + fields[2] +
                            "' is not an integer");
        }
        if (r.score < 1 || r.score > 5) {
            throw DataError("ratings line " + std::to_string(line_no) + ": score " +
                            std::to_string(r.score) + " outside the 1-5 scale");
        }
        r.system = fields[3];
        set.ratings.push_back(std::move(r));
    }
    return set;
}

RatingSet load_ratings(const std::string& path) {
    return ratings_from_csv(read_file(path));
}

MosEntry aggregate_mos(const std::vector<int>& scores, const std::string& system) {
    if (scores.empty()) {
        throw DataError("aggregate_mos: no ratings for system '" + system + "'");
    }
    MosEntry e;
    e.system = system;
    e.count = static_cast<std::int64_t>(scores.size());
    double sum = 0.0;
    for (int s : scores) {
        sum += s;
    }
    e.mean = sum / static_cast<double>(scores.size());
    double var = 0.0;
    for (int s : scores) {
        var += (s - e.mean) * (s - e.mean);
    }
    var /= static_cast<double>(scores.size()); // population variance
    e.stddev = std::sqrt(var);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", e.mean, e.stddev);
    e.formatted = buf;
    return e;
}

MosReport mos_report(const RatingSet& ratings) {
    if (ratings.ratings.empty()) {
        throw DataError("mos_report: empty rating set");
    }
    std::map<std::string, std::vector<int>> by_system;
    std::map<std::string, std::set<std::string>> listeners_by_utterance;
    for (const auto& r : ratings.ratings) {
        by_system[r.system].push_back(r.score);
        listeners_by_utterance[r.utterance_id].insert(r.listener_id);
    }
    MosReport report;
    report.total_ratings = static_cast<std::int64_t>(ratings.ratings.size());
    for (const auto& [system, scores] : by_system) {
        report.entries.push_back(aggregate_mos(scores, system));
    }
    for (const auto& [utt, listeners] : listeners_by_utterance) {
        if (listeners.size() < 3) {
            report.under_rated.push_back(utt);
        }
    }
    return report;
}

std::string format_mos_report(const MosReport& report) {
    std::size_t width = std::string("System").size();
    for (const auto& e : report.entries) {
        width = std::max(width, e.system.size());
    }
    std::string out;
    out += "MOS by training strategy (mean ± population std, 1-5 scale)\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-*s  %s\n", static_cast<int>(width), "System", "MOS");
    out += line;
    out += std::string(width + 2 + 12, '-') + "\n";
    for (const auto& e : report.entries) {
        std::snprintf(line, sizeof line, "%-*s  %s  (n=%lld)\n", static_cast<int>(width),
                      e.system.c_str(), e.formatted.c_str(),
                      static_cast<long long>(e.count));
        out += line;
    }
    std::snprintf(line, sizeof line, "total ratings: %lld\n",
                  static_cast<long long>(report.total_ratings));
    out += line;
    if (!report.under_rated.empty()) {
        out += "flagged utterances with fewer than 3 listeners:";
        for (const auto& u : report.under_rated) {
            out += " " + u;
        }
        out += "\n";
    }
    return out;
}

std::string pgm_bytes(const Pgm& image) {
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                      "\n255\n";
    out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    return out;
}

Pgm pgm_from_bytes(const std::string& bytes) {
    if (bytes.rfind("P5\n", 0) != 0) {
        throw DataError("not a binary PGM (P5) file");
    }
    std::size_t pos = 3;
    auto read_int = [&]() {
        while (pos < bytes.size() && (bytes[pos] == ' ' || bytes[pos] == '\n')) {
            ++pos;
        }
        std::size_t start = pos;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            ++pos;
        }
        if (start == pos) {
            throw DataError("malformed PGM header");
        }
        return std::stoll(bytes.substr(start, pos - start));
    };
    Pgm img;
    img.width = read_int();
    img.height = read_int();
    const auto maxval = read_int();
    if (maxval != 255) {
        throw DataError("unsupported PGM max value");
    }
    ++pos; // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(img.width * img.height);
    if (bytes.size() - pos != need) {
        throw DataError("PGM payload size mismatch");
    }
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

Pgm render_alignment(const std::vector<double>& attention, std::int64_t steps,
                     std::int64_t positions, int pixel_scale) {
    if (steps < 1 || positions < 1 ||
        attention.size() != static_cast<std::size_t>(steps * positions)) {
        throw DataError("render_alignment: empty or inconsistent attention matrix");
    }
    if (pixel_scale < 1) {
        throw DataError("render_alignment: pixel scale must be positive");
    }
    double mx = 0.0;
    for (double w : attention) {
        mx = std::max(mx, w);
    }
    Pgm img;
    img.width = steps * pixel_scale;
    img.height = positions * pixel_scale;
    img.pixels.assign(static_cast<std::size_t>(img.width * img.height), 0);
    for (std::int64_t s = 0; s < steps; ++s) {
        for (std::int64_t p = 0; p < positions; ++p) {
            const double w = attention[static_cast<std::size_t>(s * positions + p)];
            const auto v = static_cast<std::uint8_t>(
                std::lround(255.0 * (mx > 0 ? w / mx : 0.0)));
            for (int dy = 0; dy < pixel_scale; ++dy) {
                for (int dx = 0; dx < pixel_scale; ++dx) {
                    const std::int64_t x = s * pixel_scale + dx;
                    const std::int64_t y = p * pixel_scale + dy;
                    img.pixels[static_cast<std::size_t>(y * img.width + x)] = v;
                }
            }
        }
    }
    return img;
}

void plot_alignment(const std::vector<double>& attention, std::int64_t steps,
                    std::int64_t positions, const std::string& path, int pixel_scale) {
    write_file(path, pgm_bytes(render_alignment(attention, steps, positions, pixel_scale)));
}

Pgm render_spectrogram(const dsp::MelSpectrogram& mel, int pixel_scale) {
    if (mel.frames < 1 || mel.channels < 1) {
        throw DataError("render_spectrogram: empty mel");
    }
    if (pixel_scale < 1) {
        throw DataError("render_spectrogram: pixel scale must be positive");
    }
    double lo = mel.data[0], hi = mel.data[0];
    for (double v : mel.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;
    Pgm img;
    img.width = mel.frames * pixel_scale;
    img.height = mel.channels * pixel_scale;
    img.pixels.assign(static_cast<std::size_t>(img.width * img.height), 0);
    for (std::int64_t f = 0; f < mel.frames; ++f) {
        for (std::int64_t c = 0; c < mel.channels; ++c) {
            const double v = mel.at(f, c);
            const auto px = static_cast<std::uint8_t>(
                std::lround(255.0 * (span > 0 ? (v - lo) / span : 0.0)));
            // channel 0 at the bottom of the image
            const std::int64_t row = mel.channels - 1 - c;
            for (int dy = 0; dy < pixel_scale; ++dy) {
                for (int dx = 0; dx < pixel_scale; ++dx) {
                    const std::int64_t x = f * pixel_scale + dx;
                    const std::int64_t y = row * pixel_scale + dy;
                    img.pixels[static_cast<std::size_t>(y * img.width + x)] = px;
                }
            }
        }
    }
    return img;
}

void plot_spectrogram(const dsp::MelSpectrogram& mel, const std::string& path, int pixel_scale) {
    write_file(path, pgm_bytes(render_spectrogram(mel, pixel_scale)));
}

} // namespace tts::report
