#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "tts/common.hpp"
#include "tts/corpus.hpp"
#include "tts/dsp.hpp"

using namespace tts;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

audio::Waveform tone(double freq, double secs, int rate) {
    audio::Waveform w;
    w.sample_rate_hz = rate;
    w.samples.resize(static_cast<std::size_t>(secs * rate));
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = 0.4 * std::sin(2.0 * 3.14159265358979 * freq * i / rate);
    }
    return w;
}

} // namespace

TEST_CASE("stub tts: segment length, dominant frequency, determinism") {
    auto ab = corpus::stub_tts("ab");
    CHECK(ab.samples.size() == 3200); // 2 x 100 ms at 16 kHz
    CHECK(ab.sample_rate_hz == 16000);

    auto a = corpus::stub_tts("a");
    // 'a' = 97, 97 mod 64 = 33 -> 200 + 660 = 860 Hz
    const double peak = dsp::dominant_frequency_hz(a.samples, 16000, 4096);
    CHECK(std::fabs(peak - 860.0) <= 16000.0 / 4096.0);

    CHECK(corpus::stub_tts("ab").samples == ab.samples);
    CHECK_THROWS_AS(corpus::stub_tts(""), DataError);
}

TEST_CASE("manifest round trips through its file form") {
    corpus::Manifest m;
    m.corpus = "toy";
    m.script = "roman";
    m.items = {{"000000.wav", "hello", 1.5}, {"000001.wav", "there", 0.75}};
    auto body = corpus::manifest_text(m);
    auto back = corpus::manifest_from_text(body, "/tmp/x");
    CHECK(back.corpus == "toy");
    CHECK(back.script == "roman");
    REQUIRE(back.items.size() == 2);
    CHECK(back.items[1].text == "there");
    CHECK(back.audio_path(0) == "/tmp/x/000000.wav");
    CHECK(corpus::manifest_text(back) == body);
    CHECK_THROWS_AS(corpus::manifest_from_text("", ""), DataError);
    CHECK_THROWS_AS(corpus::manifest_from_text("{\"no\":\"header\"}\n", ""), DataError);
}

TEST_CASE("ingest canonicalizes, skips broken audio, and is idempotent") {
    auto raw = fresh_dir("ingest_raw");
    auto out = fresh_dir("ingest_out");
    audio::save_wav(tone(440, 0.5, 22050), (raw / "a.wav").string());
    audio::save_wav(tone(523, 0.25, 16000), (raw / "b.wav").string());
    write_file((raw / "broken.wav").string(), "not audio");
    write_file((raw / "list.tsv").string(),
               "a.wav\tfirst  utterance\nbroken.wav\tbad file\nb.wav\tsecond one\n"
               "a.wav\t \n");

    auto result = corpus::ingest(raw.string(), (raw / "list.tsv").string(), out.string(), "toy",
                                 "roman");
    CHECK(result.manifest.items.size() == 2);
    CHECK(result.skipped == 2); // broken audio + empty transcript
    CHECK(result.manifest.items[0].text == "first utterance");
    auto prepared = audio::load_wav((out / "toy" / "000000.wav").string());
    CHECK(prepared.sample_rate_hz == 16000);
    CHECK(prepared.samples.size() == 8000);

    const auto manifest_path = out / "toy" / "manifest.jsonl";
    const auto first_bytes = read_file(manifest_path.string());
    auto again = corpus::ingest(raw.string(), (raw / "list.tsv").string(), out.string(), "toy",
                                "roman");
    CHECK(read_file(manifest_path.string()) == first_bytes);
    CHECK(again.manifest.items.size() == 2);

    fs::remove_all(raw);
    fs::remove_all(out);
}

TEST_CASE("synthetic generation with the stub is reproducible and ordered") {
    auto out1 = fresh_dir("synth_out1");
    auto out2 = fresh_dir("synth_out2");
    std::vector<std::string> texts;
    for (int i = 0; i < 30; ++i) {
        texts.push_back("item " + std::to_string(i));
    }
    corpus::StubClient client;
    auto r1 = corpus::generate_synthetic(texts, client, out1.string(), "synthetic", "roman");
    CHECK(r1.manifest.items.size() == 30);
    CHECK(r1.failures.empty());
    for (std::size_t i = 0; i < r1.manifest.items.size(); ++i) {
        CHECK(r1.manifest.items[i].text == text::normalize(texts[i]));
        auto w = audio::load_wav(r1.manifest.audio_path(i));
        CHECK(w.sample_rate_hz == 16000);
    }
    auto r2 = corpus::generate_synthetic(texts, client, out2.string(), "synthetic", "roman");
    for (std::size_t i = 0; i < texts.size(); ++i) {
        CHECK(read_file(r1.manifest.audio_path(i)) == read_file(r2.manifest.audio_path(i)));
    }
    CHECK(corpus::manifest_text(r1.manifest) == corpus::manifest_text(r2.manifest));
    fs::remove_all(out1);
    fs::remove_all(out2);
}

namespace {

class FlakyClient : public corpus::SynthClient {
public:
    audio::Waveform synthesize(const std::string& txt, const std::string& voice) override {
        if (txt == "item 7") {
            throw DataError("simulated failure");
        }
        return stub_.synthesize(txt, voice);
    }

private:
    corpus::StubClient stub_;
};

} // namespace

TEST_CASE("partial failure is recorded without sinking the run") {
    auto out = fresh_dir("synth_partial");
    std::vector<std::string> texts;
    for (int i = 0; i < 30; ++i) {
        texts.push_back("item " + std::to_string(i));
    }
    FlakyClient client;
    auto r = corpus::generate_synthetic(texts, client, out.string(), "synthetic", "roman",
                                        "default", 2, 2, 0.0);
    CHECK(r.manifest.items.size() == 29);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].index == 7);
    CHECK(r.failures[0].error == "simulated failure");
    fs::remove_all(out);
}

TEST_CASE("whole run fails when most items fail") {
    auto out = fresh_dir("synth_doomed");
    class DoomedClient : public corpus::SynthClient {
    public:
        audio::Waveform synthesize(const std::string&, const std::string&) override {
            throw DataError("down");
        }
    };
    DoomedClient client;
    CHECK_THROWS_AS(corpus::generate_synthetic({"a", "b", "c"}, client, out.string(), "x", "roman",
                                               "default", 1, 1, 0.0),
                    DataError);
    fs::remove_all(out);
}

TEST_CASE("http client speaks the wire protocol against a live server") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/synthesize", [&](const httplib::Request& req, httplib::Response& res) {
        auto j = nlohmann::json::parse(req.body);
        hits++;
        auto w = corpus::stub_tts(text::normalize(j.at("text").get<std::string>()));
        res.set_content(audio::wav_bytes(w), "audio/wav");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    corpus::HttpClient client("http://127.0.0.1:" + std::to_string(port));
    auto w = client.synthesize("hi", "default");
    CHECK(w.samples.size() == 3200);
    // the wire carries 16-bit PCM, so compare after quantization
    CHECK(audio::wav_bytes(w) == audio::wav_bytes(corpus::stub_tts("hi")));
    CHECK(hits == 1);

    server.stop();
    server_thread.join();
}

TEST_CASE("validate reports per-check results and never mutates") {
    auto out = fresh_dir("validate_dir");
    std::vector<std::string> texts = {"ab", "cd"};
    corpus::StubClient client;
    auto r = corpus::generate_synthetic(texts, client, out.string(), "v", "roman");
    auto report = corpus::validate(r.manifest);
    CHECK(report.all_passed());

    // a missing file is reported with its path
    auto broken = r.manifest;
    broken.items.push_back({"missing.wav", "zz", 1.0});
    auto bad = corpus::validate(broken);
    CHECK(!bad.all_passed());
    bool found = false;
    for (const auto& c : bad.checks) {
        for (const auto& d : c.details) {
            if (d.find("missing.wav") != std::string::npos) {
                found = true;
            }
        }
    }
    CHECK(found);

    // vocabulary coverage warning names the uncovered codepoint
    auto vocab = text::build_vocabulary({"ab"}, "roman");
    auto cover = corpus::validate(r.manifest, &vocab);
    CHECK(!cover.all_passed());
    bool has_cov = false;
    for (const auto& c : cover.checks) {
        if (c.name == "vocabulary_coverage") {
            CHECK(c.failed == 1); // "cd" is uncovered
            has_cov = true;
        }
    }
    CHECK(has_cov);
    fs::remove_all(out);
}
