#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tts/audio.hpp"
#include "tts/text.hpp"

namespace tts::corpus {

struct ManifestItem {
    std::string audio; // relative to the manifest's directory
    std::string text;  // normalized
    double duration_s = 0.0;
};

struct Manifest {
    std::string corpus;
    std::string script;
    std::vector<ManifestItem> items;
    std::string base_dir; // set on load; not serialized

    std::string audio_path(std::size_t index) const;
    std::vector<std::string> texts() const;
};

// JSON-lines on disk: a header record, then one record per item.
std::string manifest_text(const Manifest& m);
Manifest manifest_from_text(const std::string& body, const std::string& base_dir);
void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

struct IngestResult {
    Manifest manifest;
    std::int64_t skipped = 0;
    std::vector<std::string> skip_log;
};

/// Read `relative_path<TAB>text` lines, canonicalize audio to 16 kHz 16-bit
/// mono under out_dir/<corpus>/, and emit a manifest. Unreadable audio is
/// skipped and logged; empty transcripts are rejected per item.
IngestResult ingest(const std::string& raw_dir, const std::string& transcript_tsv,
                    const std::string& out_dir, const std::string& corpus,
                    const std::string& script);

/// Deterministic stand-in for an out-of-the-box TTS voice: one 100 ms sine
/// per codepoint at 200 + (cp mod 64) * 20 Hz, amplitude 0.3, with 5 ms
/// linear cross-fades at segment boundaries.
audio::Waveform stub_tts(const std::string& normalized_text);

class SynthClient {
public:
    virtual ~SynthClient() = default;
    virtual audio::Waveform synthesize(const std::string& txt, const std::string& voice) = 0;
};

class StubClient : public SynthClient {
public:
    audio::Waveform synthesize(const std::string& txt, const std::string& voice) override;
};

/// POST {base_url}/synthesize with JSON {"text":..., "voice":...}; the
/// response body is a WAV file.
class HttpClient : public SynthClient {
public:
    explicit HttpClient(std::string base_url) : base_url_(std::move(base_url)) {}
    audio::Waveform synthesize(const std::string& txt, const std::string& voice) override;

private:
    std::string base_url_;
};

std::unique_ptr<SynthClient> make_client(const std::string& spec); // "stub" or a URL

struct SynthFailure {
    std::size_t index = 0;
    std::string txt;
    std::string error;
};

struct SynthesisResult {
    Manifest manifest;
    std::vector<SynthFailure> failures;
};

/// Generate a synthetic corpus: bounded-parallel requests with per-item
/// retry (3 attempts, exponential backoff), canonical wavs written under
/// out_dir/<corpus>/, manifest order matching the request order. Throws if
/// more than half the items fail.
SynthesisResult generate_synthetic(const std::vector<std::string>& texts, SynthClient& client,
                                   const std::string& out_dir, const std::string& corpus,
                                   const std::string& script, const std::string& voice = "default",
                                   int max_in_flight = 4, int attempts = 3,
                                   double backoff_base_s = 0.5);

struct CheckResult {
    std::string name;
    std::int64_t passed = 0;
    std::int64_t failed = 0;
    std::vector<std::string> details;
};

struct ValidationReport {
    std::vector<CheckResult> checks;
    bool all_passed() const;
    nlohmann::ordered_json to_json() const;
};

/// Read-only invariant checks: paths exist and load, rates are canonical,
/// durations match, texts are non-empty, and (optionally) every codepoint
/// is covered by a target vocabulary.
ValidationReport validate(const Manifest& m, const text::Vocabulary* target_vocab = nullptr);

} // namespace tts::corpus
