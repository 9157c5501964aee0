#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

/// Small string helpers and the natural-language tokenizer shared across the toolkit.
namespace sparqlgen::text {

inline char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c; }

inline std::string lower_ascii(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out.push_back(ascii_lower(c));
    return out;
}

/// Marker tokens (`<sep>`, `<mask>`, `<<dbo:Person>>`, `<1>`, ...) are atomic: never split, never case-folded.
inline bool is_marker(std::string_view tok) {
    return tok.size() >= 3 && tok.front() == '<' && tok.back() == '>';
}

inline bool is_wrapped_kb(std::string_view tok) {
    return tok.size() > 4 && tok.substr(0, 2) == "<<" && tok.substr(tok.size() - 2) == ">>";
}

inline std::string wrap_kb(std::string_view kb_token) {
    return "<<" + std::string(kb_token) + ">>";
}

/// Inverse of wrap_kb; non-wrapped tokens pass through unchanged.
inline std::string unwrap_kb(std::string_view tok) {
    if (is_wrapped_kb(tok)) return std::string(tok.substr(2, tok.size() - 4));
    return std::string(tok);
}

inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
        size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\n' && s[i] != '\r') ++i;
        if (i > start) out.emplace_back(s.substr(start, i - start));
    }
    return out;
}

template <typename Seq>
inline std::string join(const Seq& tokens, std::string_view sep = " ") {
    std::string out;
    bool first = true;
    for (const auto& t : tokens) {
        if (!first) out += sep;
        out += t;
        first = false;
    }
    return out;
}

inline bool is_detachable_punct(char c) {
    switch (c) {
        case '?': case '!': case '.': case ',': case ';': case ':':
        case '"': case '\'': case '(': case ')': case '[': case ']':
            return true;
        default:
            return false;
    }
}

/// NL tokenization: whitespace split, punctuation detached from word ends, ASCII lowercasing.
/// Marker tokens pass through whole; inner punctuation (don't, state-of-the-art) is preserved.
inline std::vector<std::string> tokenize_nl(std::string_view s) {
    std::vector<std::string> out;
    for (const std::string& raw : split_ws(s)) {
        if (is_marker(raw)) {
            out.push_back(raw);
            continue;
        }
        size_t lo = 0, hi = raw.size();
        std::vector<std::string> lead, trail;
        while (lo < hi && is_detachable_punct(raw[lo])) lead.emplace_back(1, raw[lo++]);
        while (hi > lo && is_detachable_punct(raw[hi - 1])) trail.emplace_back(1, raw[--hi]);
        for (auto& p : lead) out.push_back(std::move(p));
        if (hi > lo) out.push_back(lower_ascii(std::string_view(raw).substr(lo, hi - lo)));
        for (auto it = trail.rbegin(); it != trail.rend(); ++it) out.push_back(std::move(*it));
    }
    return out;
}

/// Stable 64-bit FNV-1a hash; used for cache keys, config hashes, and subset digests.
inline uint64_t fnv1a(std::string_view s, uint64_t seed = 14695981039346656037ull) {
    uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[size_t(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace sparqlgen::text
