#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tts::text {

// UTF-8 <-> codepoint helpers. Invalid sequences are rejected.
std::vector<std::uint32_t> utf8_decode(const std::string& s);
std::string utf8_encode(const std::vector<std::uint32_t>& cps);
std::string utf8_encode_one(std::uint32_t cp);

/// NFC normalization over a focused repertoire (Latin-1 precomposed forms
/// and Devanagari nukta compositions, with the standard composition
/// exclusions), then whitespace collapsed to single spaces and trimmed.
std::string normalize(const std::string& s);

/// Ordered grapheme inventory. Index 0 and 1 are reserved for PAD and EOS;
/// real entries are unique codepoints in ascending order starting at 2.
struct Vocabulary {
    static constexpr std::int64_t kPad = 0;
    static constexpr std::int64_t kEos = 1;

    std::string script;
    std::vector<std::uint32_t> entries;

    std::int64_t size() const { return static_cast<std::int64_t>(entries.size()) + 2; }
    std::int64_t index_of(std::uint32_t cp) const; // -1 when absent
    std::uint32_t codepoint_at(std::int64_t index) const;
    bool covers(const std::string& normalized_text) const;
};

Vocabulary build_vocabulary(const std::vector<std::string>& corpus_texts,
                            const std::string& script);

/// Codepoint-by-codepoint lookup; unknown codepoints are dropped and
/// counted; EOS appended. Rejects text that becomes empty after drops.
std::vector<std::int64_t> encode(const std::string& txt, const Vocabulary& v,
                                 std::int64_t* dropped = nullptr);

std::string decode(const std::vector<std::int64_t>& ids, const Vocabulary& v);

// File form: header line "VOCAB 1 <script>", then one codepoint per line.
std::string vocabulary_text(const Vocabulary& v);
Vocabulary vocabulary_from_text(const std::string& body);
void save_vocabulary(const Vocabulary& v, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

/// FNV-1a over the serialized file form; the checkpoint surgery guard.
std::uint64_t vocabulary_fingerprint(const Vocabulary& v);

} // namespace tts::text
