#include "tts/corpus.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "tts/common.hpp"

namespace fs = std::filesystem;

namespace tts::corpus {

std::string Manifest::audio_path(std::size_t index) const {
    const auto& rel = items.at(index).audio;
    if (base_dir.empty()) {
        return rel;
    }
    return (fs::path(base_dir) / rel).string();
}

std::vector<std::string> Manifest::texts() const {
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        out.push_back(it.text);
    }
    return out;
}

std::string manifest_text(const Manifest& m) {
    nlohmann::ordered_json header;
    header["manifest_version"] = 1;
    header["corpus"] = m.corpus;
    header["script"] = m.script;
    std::string out = header.dump() + "\n";
    for (const auto& it : m.items) {
        nlohmann::ordered_json rec;
        rec["audio"] = it.audio;
        rec["text"] = it.text;
        rec["duration_s"] = it.duration_s;
        out += rec.dump() + "\n";
    }
    return out;
}

Manifest manifest_from_text(const std::string& body, const std::string& base_dir) {
    Manifest m;
    m.base_dir = base_dir;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t end = body.find('\n', pos);
        if (end == std::string::npos) {
            end = body.size();
        }
        const std::string line = body.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.empty()) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (line_no == 1) {
            if (!rec.contains("manifest_version") || rec["manifest_version"] != 1) {
                throw DataError("manifest header missing or has unsupported version");
            }
            m.corpus = rec.value("corpus", "");
            m.script = rec.value("script", "");
            continue;
        }
        ManifestItem it;
        it.audio = rec.at("audio").get<std::string>();
        it.text = rec.at("text").get<std::string>();
        it.duration_s = rec.at("duration_s").get<double>();
        m.items.push_back(std::move(it));
    }
    if (line_no == 0) {
        throw DataError("empty manifest");
    }
    return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
    write_file(path, manifest_text(m));
}

Manifest load_manifest(const std::string& path) {
    return manifest_from_text(read_file(path), fs::path(path).parent_path().string());
}

namespace {

std::string indexed_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu.wav", i);
    return std::string(buf);
}

} // namespace

IngestResult ingest(const std::string& raw_dir, const std::string& transcript_tsv,
                    const std::string& out_dir, const std::string& corpus,
                    const std::string& script) {
    const std::string tsv = read_file(transcript_tsv);
    const fs::path target_dir = fs::path(out_dir) / corpus;
    fs::create_directories(target_dir);

    IngestResult result;
    result.manifest.corpus = corpus;
    result.manifest.script = script;
    result.manifest.base_dir = target_dir.string();

    std::size_t pos = 0, line_no = 0, accepted = 0;
    while (pos < tsv.size()) {
        std::size_t end = tsv.find('\n', pos);
        if (end == std::string::npos) {
            end = tsv.size();
        }
        std::string line = tsv.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            result.skipped++;
            result.skip_log.push_back("line " + std::to_string(line_no) + ": no tab separator");
            continue;
        }
        const std::string rel = line.substr(0, tab);
        const std::string normalized = text::normalize(line.substr(tab + 1));
        if (normalized.empty()) {
            result.skipped++;
            result.skip_log.push_back("line " + std::to_string(line_no) + ": empty transcript");
            continue;
        }
        audio::Waveform w;
        try {
            w = audio::load_wav((fs::path(raw_dir) / rel).string());
        } catch (const std::exception& e) {
            result.skipped++;
            result.skip_log.push_back("line " + std::to_string(line_no) + " (" + rel +
                                      "): " + e.what());
            continue;
        }
        const std::string name = indexed_name(accepted);
        audio::save_wav(w, (target_dir / name).string());
        ManifestItem item;
        item.audio = name;
        item.text = normalized;
        item.duration_s = static_cast<double>(w.samples.size()) / audio::kCanonicalRateHz;
        result.manifest.items.push_back(std::move(item));
        ++accepted;
    }
    save_manifest(result.manifest, (target_dir / "manifest.jsonl").string());
    return result;
}

audio::Waveform stub_tts(const std::string& normalized_text) {
    if (normalized_text.empty()) {
        throw DataError("stub_tts: empty text");
    }
    const auto cps = text::utf8_decode(normalized_text);
    constexpr std::int64_t kSegment = 1600; // 100 ms at 16 kHz
    constexpr std::int64_t kFade = 80;      // 5 ms
    constexpr double kAmp = 0.3;
    const std::int64_t n = static_cast<std::int64_t>(cps.size()) * kSegment;
    auto tone_at = [&](std::size_t seg, std::int64_t sample) {
        const double freq = 200.0 + static_cast<double>(cps[seg] % 64) * 20.0;
        return kAmp * std::sin(2.0 * 3.14159265358979323846 * freq * sample / 16000.0);
    };
    audio::Waveform w;
    w.sample_rate_hz = audio::kCanonicalRateHz;
    w.samples.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        w.samples[static_cast<std::size_t>(i)] =
            tone_at(static_cast<std::size_t>(i / kSegment), i);
    }
    // linear cross-fades centered on interior boundaries
    for (std::size_t seg = 1; seg < cps.size(); ++seg) {
        const std::int64_t b = static_cast<std::int64_t>(seg) * kSegment;
        for (std::int64_t j = 0; j < kFade; ++j) {
            const std::int64_t idx = b - kFade / 2 + j;
            const double a = (static_cast<double>(j) + 0.5) / kFade;
            w.samples[static_cast<std::size_t>(idx)] =
                (1.0 - a) * tone_at(seg - 1, idx) + a * tone_at(seg, idx);
        }
    }
    return w;
}

audio::Waveform StubClient::synthesize(const std::string& txt, const std::string&) {
    return stub_tts(text::normalize(txt));
}

audio::Waveform HttpClient::synthesize(const std::string& txt, const std::string& voice) {
    httplib::Client cli(base_url_);
    cli.set_read_timeout(30, 0);
    nlohmann::json req;
    req["text"] = txt;
    req["voice"] = voice;
    auto res = cli.Post("/synthesize", req.dump(), "application/json");
    if (!res) {
        throw DataError("synthesize request failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw DataError("synthesize request returned status " + std::to_string(res->status));
    }
    audio::Waveform w = audio::parse_wav(res->body);
    if (w.sample_rate_hz != audio::kCanonicalRateHz) {
        w = audio::resample(w, audio::kCanonicalRateHz);
    }
    return w;
}

std::unique_ptr<SynthClient> make_client(const std::string& spec) {
    if (spec == "stub") {
        return std::make_unique<StubClient>();
    }
    return std::make_unique<HttpClient>(spec);
}

SynthesisResult generate_synthetic(const std::vector<std::string>& texts, SynthClient& client,
                                   const std::string& out_dir, const std::string& corpus,
                                   const std::string& script, const std::string& voice,
                                   int max_in_flight, int attempts, double backoff_base_s) {
    if (texts.empty()) {
        throw DataError("generate_synthetic: no texts");
    }
    const fs::path target_dir = fs::path(out_dir) / corpus;
    fs::create_directories(target_dir);

    struct Slot {
        bool ok = false;
        std::string error;
        double duration_s = 0.0;
        std::string normalized;
    };
    std::vector<Slot> slots(texts.size());
    std::atomic<std::size_t> next{0};
    std::mutex io_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= texts.size()) {
                return;
            }
            Slot& slot = slots[i];
            slot.normalized = text::normalize(texts[i]);
            for (int attempt = 0; attempt < attempts; ++attempt) {
                try {
                    if (slot.normalized.empty()) {
                        throw DataError("empty text after normalization");
                    }
                    audio::Waveform w = client.synthesize(slot.normalized, voice);
                    slot.duration_s =
                        static_cast<double>(w.samples.size()) / audio::kCanonicalRateHz;
                    std::lock_guard<std::mutex> lock(io_mutex);
                    audio::save_wav(w, (target_dir / indexed_name(i)).string());
                    slot.ok = true;
                    break;
                } catch (const std::exception& e) {
                    slot.error = e.what();
                    if (attempt + 1 < attempts) {
                        const auto delay = std::chrono::duration<double>(
                            backoff_base_s * std::pow(2.0, attempt));
                        std::this_thread::sleep_for(delay);
                    }
                }
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(max_in_flight,
                                                    static_cast<int>(texts.size())));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }

    SynthesisResult result;
    result.manifest.corpus = corpus;
    result.manifest.script = script;
    result.manifest.base_dir = target_dir.string();
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (slots[i].ok) {
            ManifestItem item;
            item.audio = indexed_name(i);
            item.text = slots[i].normalized;
            item.duration_s = slots[i].duration_s;
            result.manifest.items.push_back(std::move(item));
        } else {
            result.failures.push_back({i, texts[i], slots[i].error});
        }
    }
    if (result.failures.size() * 2 > texts.size()) {
        throw DataError("synthetic generation failed for " +
                        std::to_string(result.failures.size()) + " of " +
                        std::to_string(texts.size()) + " items");
    }
    save_manifest(result.manifest, (target_dir / "manifest.jsonl").string());
    return result;
}

bool ValidationReport::all_passed() const {
    for (const auto& c : checks) {
        if (c.failed > 0) {
            return false;
        }
    }
    return true;
}

nlohmann::ordered_json ValidationReport::to_json() const {
    nlohmann::ordered_json j;
    j["checks"] = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
        nlohmann::ordered_json cj;
        cj["name"] = c.name;
        cj["passed"] = c.passed;
        cj["failed"] = c.failed;
        cj["details"] = c.details;
        j["checks"].push_back(cj);
    }
    j["all_passed"] = all_passed();
    return j;
}

ValidationReport validate(const Manifest& m, const text::Vocabulary* target_vocab) {
    ValidationReport report;
    CheckResult paths{"audio_path_exists", 0, 0, {}};
    CheckResult loads{"audio_loads_canonical", 0, 0, {}};
    CheckResult durations{"duration_matches_samples", 0, 0, {}};
    CheckResult texts_ok{"text_non_empty", 0, 0, {}};
    CheckResult coverage{"vocabulary_coverage", 0, 0, {}};
    for (std::size_t i = 0; i < m.items.size(); ++i) {
        const auto& item = m.items[i];
        const std::string path = m.audio_path(i);
        if (!fs::exists(path)) {
            paths.failed++;
            paths.details.push_back("missing file: " + path);
            continue;
        }
        paths.passed++;
        audio::Waveform w;
        try {
            w = audio::load_wav(path);
            if (w.sample_rate_hz != audio::kCanonicalRateHz) {
                throw DataError("not at canonical rate");
            }
            loads.passed++;
        } catch (const std::exception& e) {
            loads.failed++;
            loads.details.push_back(path + ": " + e.what());
            continue;
        }
        const double actual = static_cast<double>(w.samples.size()) / audio::kCanonicalRateHz;
        if (std::fabs(actual - item.duration_s) <= 1e-3) {
            durations.passed++;
        } else {
            durations.failed++;
            durations.details.push_back(path + ": manifest says " +
                                        std::to_string(item.duration_s) + " s, file has " +
                                        std::to_string(actual) + " s");
        }
        if (item.text.empty()) {
            texts_ok.failed++;
            texts_ok.details.push_back("item " + std::to_string(i) + " has empty text");
        } else {
            texts_ok.passed++;
        }
        if (target_vocab) {
            std::vector<std::uint32_t> missing;
            for (auto cp : text::utf8_decode(item.text)) {
                if (target_vocab->index_of(cp) < 0) {
                    missing.push_back(cp);
                }
            }
            if (missing.empty()) {
                coverage.passed++;
            } else {
                coverage.failed++;
                std::string detail = "item " + std::to_string(i) + " has uncovered codepoints:";
                for (auto cp : missing) {
                    detail += " U+" + to_hex(cp).substr(12);
                }
                coverage.details.push_back(detail);
            }
        }
    }
    report.checks = {paths, loads, durations, texts_ok};
    if (target_vocab) {
        report.checks.push_back(coverage);
    }
    return report;
}

} // namespace tts::corpus
