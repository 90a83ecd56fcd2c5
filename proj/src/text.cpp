#include "tts/text.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "tts/common.hpp"

namespace tts::text {

namespace {

// Canonical decompositions for the scripts this pipeline works with:
// Latin-1 precomposed letters and the Devanagari nukta forms. U+0958..U+095F
// are composition exclusions: they decompose but must not recompose.
struct Decomp {
    std::uint32_t cp, base, mark;
};

constexpr Decomp kDecompositions[] = {
    {0x00C0, 0x0041, 0x0300}, {0x00C1, 0x0041, 0x0301}, {0x00C2, 0x0041, 0x0302},
    {0x00C3, 0x0041, 0x0303}, {0x00C4, 0x0041, 0x0308}, {0x00C5, 0x0041, 0x030A},
    {0x00C7, 0x0043, 0x0327}, {0x00C8, 0x0045, 0x0300}, {0x00C9, 0x0045, 0x0301},
    {0x00CA, 0x0045, 0x0302}, {0x00CB, 0x0045, 0x0308}, {0x00CC, 0x0049, 0x0300},
    {0x00CD, 0x0049, 0x0301}, {0x00CE, 0x0049, 0x0302}, {0x00CF, 0x0049, 0x0308},
    {0x00D1, 0x004E, 0x0303}, {0x00D2, 0x004F, 0x0300}, {0x00D3, 0x004F, 0x0301},
    {0x00D4, 0x004F, 0x0302}, {0x00D5, 0x004F, 0x0303}, {0x00D6, 0x004F, 0x0308},
    {0x00D9, 0x0055, 0x0300}, {0x00DA, 0x0055, 0x0301}, {0x00DB, 0x0055, 0x0302},
    {0x00DC, 0x0055, 0x0308}, {0x00DD, 0x0059, 0x0301},
    {0x00E0, 0x0061, 0x0300}, {0x00E1, 0x0061, 0x0301}, {0x00E2, 0x0061, 0x0302},
    {0x00E3, 0x0061, 0x0303}, {0x00E4, 0x0061, 0x0308}, {0x00E5, 0x0061, 0x030A},
    {0x00E7, 0x0063, 0x0327}, {0x00E8, 0x0065, 0x0300}, {0x00E9, 0x0065, 0x0301},
    {0x00EA, 0x0065, 0x0302}, {0x00EB, 0x0065, 0x0308}, {0x00EC, 0x0069, 0x0300},
    {0x00ED, 0x0069, 0x0301}, {0x00EE, 0x0069, 0x0302}, {0x00EF, 0x0069, 0x0308},
    {0x00F1, 0x006E, 0x0303}, {0x00F2, 0x006F, 0x0300}, {0x00F3, 0x006F, 0x0301},
    {0x00F4, 0x006F, 0x0302}, {0x00F5, 0x006F, 0x0303}, {0x00F6, 0x006F, 0x0308},
    {0x00F9, 0x0075, 0x0300}, {0x00FA, 0x0075, 0x0301}, {0x00FB, 0x0075, 0x0302},
    {0x00FC, 0x0075, 0x0308}, {0x00FD, 0x0079, 0x0301}, {0x00FF, 0x0079, 0x0308},
    {0x0929, 0x0928, 0x093C}, {0x0931, 0x0930, 0x093C}, {0x0934, 0x0933, 0x093C},
    {0x0958, 0x0915, 0x093C}, {0x0959, 0x0916, 0x093C}, {0x095A, 0x0917, 0x093C},
    {0x095B, 0x091C, 0x093C}, {0x095C, 0x0921, 0x093C}, {0x095D, 0x0922, 0x093C},
    {0x095E, 0x092B, 0x093C}, {0x095F, 0x092F, 0x093C},
};

bool is_composition_exclusion(std::uint32_t cp) {
    return cp >= 0x0958 && cp <= 0x095F;
}

int combining_class(std::uint32_t cp) {
    if (cp >= 0x0300 && cp <= 0x0314) {
        return 230;
    }
    if (cp == 0x0327) {
        return 202;
    }
    if (cp == 0x093C) {
        return 7;
    }
    return 0;
}

const Decomp* find_decomposition(std::uint32_t cp) {
    for (const auto& d : kDecompositions) {
        if (d.cp == cp) {
            return &d;
        }
    }
    return nullptr;
}

std::uint32_t compose_pair(std::uint32_t base, std::uint32_t mark) {
    for (const auto& d : kDecompositions) {
        if (d.base == base && d.mark == mark && !is_composition_exclusion(d.cp)) {
            return d.cp;
        }
    }
    return 0;
}

std::vector<std::uint32_t> nfc(const std::vector<std::uint32_t>& in) {
    // decompose (table entries are terminal after one step)
    std::vector<std::uint32_t> seq;
    seq.reserve(in.size());
    for (auto cp : in) {
        if (const Decomp* d = find_decomposition(cp)) {
            seq.push_back(d->base);
            seq.push_back(d->mark);
        } else {
            seq.push_back(cp);
        }
    }
    // canonical ordering of adjacent combining marks
    for (std::size_t i = 1; i < seq.size(); ++i) {
        std::size_t j = i;
        while (j > 0) {
            const int a = combining_class(seq[j - 1]);
            const int b = combining_class(seq[j]);
            if (a > b && b > 0) {
                std::swap(seq[j - 1], seq[j]);
                --j;
            } else {
                break;
            }
        }
    }
    // compose
    std::vector<std::uint32_t> out;
    out.reserve(seq.size());
    std::ptrdiff_t last_starter = -1;
    int last_cc = 0;
    for (auto cp : seq) {
        const int cc = combining_class(cp);
        const bool adjacent = last_starter >= 0 &&
                              out.size() == static_cast<std::size_t>(last_starter) + 1;
        if (last_starter >= 0 && (last_cc == 0 ? adjacent : last_cc < cc)) {
            if (std::uint32_t comp = compose_pair(out[static_cast<std::size_t>(last_starter)], cp)) {
                out[static_cast<std::size_t>(last_starter)] = comp;
                continue;
            }
        }
        if (cc == 0) {
            last_starter = static_cast<std::ptrdiff_t>(out.size());
        }
        out.push_back(cp);
        last_cc = cc;
    }
    return out;
}

bool is_space(std::uint32_t cp) {
    return cp == 0x20 || cp == 0x09 || cp == 0x0A || cp == 0x0B || cp == 0x0C || cp == 0x0D;
}

} // namespace

std::vector<std::uint32_t> utf8_decode(const std::string& s) {
    std::vector<std::uint32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::uint32_t cp = 0;
        int extra = 0;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            cp = b0 & 0x1F;
            extra = 1;
        } else if ((b0 & 0xF0) == 0xE0) {
            cp = b0 & 0x0F;
            extra = 2;
        } else if ((b0 & 0xF8) == 0xF0) {
            cp = b0 & 0x07;
            extra = 3;
        } else {
            throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
        }
        if (i + static_cast<std::size_t>(extra) >= s.size()) {
            throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
        }
        for (int k = 1; k <= extra; ++k) {
            const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
            if ((b & 0xC0) != 0x80) {
                throw DataError("invalid UTF-8 continuation byte at offset " +
                                std::to_string(i + static_cast<std::size_t>(k)));
            }
            cp = (cp << 6) | (b & 0x3F);
        }
        static constexpr std::uint32_t kMin[4] = {0, 0x80, 0x800, 0x10000};
        if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            throw DataError("invalid UTF-8 codepoint at offset " + std::to_string(i));
        }
        out.push_back(cp);
        i += 1 + static_cast<std::size_t>(extra);
    }
    return out;
}

std::string utf8_encode_one(std::uint32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        s.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return s;
}

std::string utf8_encode(const std::vector<std::uint32_t>& cps) {
    std::string s;
    for (auto cp : cps) {
        s += utf8_encode_one(cp);
    }
    return s;
}

std::string normalize(const std::string& s) {
    auto cps = nfc(utf8_decode(s));
    std::vector<std::uint32_t> out;
    out.reserve(cps.size());
    bool pending_space = false;
    for (auto cp : cps) {
        if (is_space(cp)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(0x20);
            pending_space = false;
        }
        out.push_back(cp);
    }
    return utf8_encode(out);
}

std::int64_t Vocabulary::index_of(std::uint32_t cp) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), cp);
    if (it != entries.end() && *it == cp) {
        return static_cast<std::int64_t>(it - entries.begin()) + 2;
    }
    return -1;
}

std::uint32_t Vocabulary::codepoint_at(std::int64_t index) const {
    if (index < 2 || index >= size()) {
        throw std::invalid_argument("vocabulary index " + std::to_string(index) +
                                    " has no codepoint");
    }
    return entries[static_cast<std::size_t>(index - 2)];
}

bool Vocabulary::covers(const std::string& normalized_text) const {
    for (auto cp : utf8_decode(normalized_text)) {
        if (index_of(cp) < 0) {
            return false;
        }
    }
    return true;
}

Vocabulary build_vocabulary(const std::vector<std::string>& corpus_texts,
                            const std::string& script) {
    if (corpus_texts.empty()) {
        throw DataError("build_vocabulary: empty corpus");
    }
    std::set<std::uint32_t> uniq;
    for (const auto& t : corpus_texts) {
        for (auto cp : utf8_decode(normalize(t))) {
            uniq.insert(cp);
        }
    }
    if (uniq.empty()) {
        throw DataError("build_vocabulary: corpus contains no codepoints");
    }
    Vocabulary v;
    v.script = script;
    v.entries.assign(uniq.begin(), uniq.end());
    return v;
}

std::vector<std::int64_t> encode(const std::string& txt, const Vocabulary& v,
                                 std::int64_t* dropped) {
    std::vector<std::int64_t> ids;
    std::int64_t drop_count = 0;
    for (auto cp : utf8_decode(txt)) {
        const auto idx = v.index_of(cp);
        if (idx < 0) {
            ++drop_count;
        } else {
            ids.push_back(idx);
        }
    }
    if (dropped) {
        *dropped = drop_count;
    }
    if (ids.empty()) {
        throw DataError("encode: text is empty after dropping out-of-vocabulary codepoints");
    }
    ids.push_back(Vocabulary::kEos);
    return ids;
}

std::string decode(const std::vector<std::int64_t>& ids, const Vocabulary& v) {
    std::string s;
    for (auto id : ids) {
        if (id == Vocabulary::kEos || id == Vocabulary::kPad) {
            continue;
        }
        s += utf8_encode_one(v.codepoint_at(id));
    }
    return s;
}

std::string vocabulary_text(const Vocabulary& v) {
    std::string s = "VOCAB 1 " + v.script + "\n";
    for (auto cp : v.entries) {
        s += utf8_encode_one(cp);
        s += '\n';
    }
    return s;
}

Vocabulary vocabulary_from_text(const std::string& body) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : body) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) {
        lines.push_back(cur);
    }
    if (lines.empty() || lines[0].rfind("VOCAB 1 ", 0) != 0) {
        throw DataError("vocabulary file missing 'VOCAB 1 <script>' header");
    }
    Vocabulary v;
    v.script = lines[0].substr(8);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cps = utf8_decode(lines[i]);
        if (cps.size() != 1) {
            throw DataError("vocabulary line " + std::to_string(i + 1) +
                            " must hold exactly one codepoint");
        }
        if (!v.entries.empty() && cps[0] <= v.entries.back()) {
            throw DataError("vocabulary entries must be strictly ascending (line " +
                            std::to_string(i + 1) + ")");
        }
        v.entries.push_back(cps[0]);
    }
    return v;
}

void save_vocabulary(const Vocabulary& v, const std::string& path) {
    write_file(path, vocabulary_text(v));
}

Vocabulary load_vocabulary(const std::string& path) {
    return vocabulary_from_text(read_file(path));
}

std::uint64_t vocabulary_fingerprint(const Vocabulary& v) {
    return fnv1a64(vocabulary_text(v));
}

} // namespace tts::text
