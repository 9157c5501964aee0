#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sparqlgen/text.hpp"

/// SPARQL-side tokenization and token typing: split query text into atomic tokens,
/// classify each into {Uri, FakeUri, SVocab, Fct, Lit, Var, Unk}, detect fake URIs
/// against a KB-membership oracle, and reassemble tokens into executable text.
namespace sparqlgen::sparqltok {

enum class TokenTypeLabel { Uri, FakeUri, SVocab, Fct, Lit, Var, Unk };

inline const char* label_name(TokenTypeLabel t) {
    switch (t) {
        case TokenTypeLabel::Uri: return "Uri";
        case TokenTypeLabel::FakeUri: return "FakeUri";
        case TokenTypeLabel::SVocab: return "SVocab";
        case TokenTypeLabel::Fct: return "Fct";
        case TokenTypeLabel::Lit: return "Lit";
        case TokenTypeLabel::Var: return "Var";
        case TokenTypeLabel::Unk: return "Unk";
    }
    return "Unk";
}

struct SparqlToken {
    std::string text;
    TokenTypeLabel type = TokenTypeLabel::Unk;
};

/// Keyword/function inventories driving SVocab vs Fct decisions. Classification of
/// keywords is case-insensitive; URIs stay case-sensitive. The sets can be extended
/// from a JSON config ({"keywords":[...], "functions":[...]}) by the pipeline layer.
struct ClassifierConfig {
    std::set<std::string> keywords;
    std::set<std::string> functions;

    static const ClassifierConfig& defaults() {
        static const ClassifierConfig cfg = [] {
            ClassifierConfig c;
            c.keywords = {
                "select", "ask", "describe", "construct", "distinct", "reduced", "where",
                "limit", "offset", "order", "by", "asc", "desc", "group", "having",
                "union", "optional", "minus", "values", "prefix", "base", "from", "named",
                "as", "a", "bind", "service", "graph", "exists", "not", "in", "using",
                "{", "}", ".", ";",
            };
            // `filter` sits here rather than with the keywords: the error-taxonomy
            // examples label the filter/where confusion a function-class error.
            c.functions = {
                "=",  "!=", "<",  ">",  "<=", ">=", "+", "-", "*", "/", "!", "&&", "||",
                "(",  ")",  ",",  "filter", "str", "ucase", "lcase", "concat", "contains",
                "lang", "langmatches", "datatype", "bound", "sameterm", "isiri", "isuri",
                "isblank", "isliteral", "isnumeric", "regex", "substr", "strlen",
                "strstarts", "strends", "replace", "abs", "round", "ceil", "floor",
                "rand", "now", "year", "month", "day", "hours", "minutes", "seconds",
                "count", "sum", "min", "max", "avg", "sample", "group_concat",
            };
            return c;
        }();
        return cfg;
    }
};

/// Prefix → namespace table; expands prefixed names to absolute IRIs.
class PrefixTable {
public:
    PrefixTable() = default;

    static PrefixTable defaults() {
        PrefixTable t;
        t.set("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#");
        t.set("rdfs", "http://www.w3.org/2000/01/rdf-schema#");
        t.set("xsd", "http://www.w3.org/2001/XMLSchema#");
        t.set("owl", "http://www.w3.org/2002/07/owl#");
        t.set("foaf", "http://xmlns.com/foaf/0.1/");
        t.set("dct", "http://purl.org/dc/terms/");
        t.set("dbr", "http://dbpedia.org/resource/");
        t.set("dbo", "http://dbpedia.org/ontology/");
        t.set("dbp", "http://dbpedia.org/property/");
        t.set("dbc", "http://dbpedia.org/resource/Category:");
        t.set("wd", "http://www.wikidata.org/entity/");
        t.set("wdt", "http://www.wikidata.org/prop/direct/");
        t.set("p", "http://www.wikidata.org/prop/");
        t.set("ps", "http://www.wikidata.org/prop/statement/");
        t.set("pq", "http://www.wikidata.org/prop/qualifier/");
        return t;
    }

    void set(const std::string& prefix, const std::string& ns) { table_[prefix] = ns; }

    const std::map<std::string, std::string>& entries() const { return table_; }

    /// Expand one term to an absolute IRI. `<...>` is unbracketed; `pfx:local` is
    /// expanded when the prefix is known; anything else passes through unchanged.
    std::string expand(const std::string& term) const {
        if (term.size() >= 2 && term.front() == '<' && term.back() == '>')
            return term.substr(1, term.size() - 2);
        size_t colon = term.find(':');
        if (colon != std::string::npos) {
            auto it = table_.find(term.substr(0, colon));
            if (it != table_.end()) return it->second + term.substr(colon + 1);
        }
        return term;
    }

private:
    std::map<std::string, std::string> table_;
};

/// KB-membership oracle. Three modes: trusting (no oracle: URI-shaped → Uri),
/// a fixed token set (default: union of K over the dataset), or a probe function
/// (endpoint ASK verification) memoized per token behind a reader/writer lock.
class KbMembership {
public:
    static KbMembership trust_all() { return KbMembership(Mode::TrustAll); }

    static KbMembership from_set(std::set<std::string> uris) {
        KbMembership kb(Mode::Set);
        kb.known_ = std::move(uris);
        return kb;
    }

    static KbMembership with_probe(std::function<bool(const std::string&)> probe) {
        KbMembership kb(Mode::Probe);
        kb.state_ = std::make_shared<ProbeState>();
        kb.state_->probe = std::move(probe);
        return kb;
    }

    bool contains(const std::string& uri_token) const {
        switch (mode_) {
            case Mode::TrustAll: return true;
            case Mode::Set: return known_.count(uri_token) > 0;
            case Mode::Probe: {
                {
                    std::shared_lock lock(state_->mu);
                    auto it = state_->cache.find(uri_token);
                    if (it != state_->cache.end()) return it->second;
                }
                std::unique_lock lock(state_->mu);
                auto it = state_->cache.find(uri_token);
                if (it != state_->cache.end()) return it->second;
                bool v = state_->probe(uri_token);
                state_->cache.emplace(uri_token, v);
                return v;
            }
        }
        return false;
    }

private:
    enum class Mode { TrustAll, Set, Probe };
    explicit KbMembership(Mode m) : mode_(m) {}

    struct ProbeState {
        std::function<bool(const std::string&)> probe;
        mutable std::shared_mutex mu;
        std::map<std::string, bool> cache;
    };

    Mode mode_;
    std::set<std::string> known_;
    std::shared_ptr<ProbeState> state_;
};

namespace detail {

inline bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool is_word_char(char c) { return is_alpha(c) || is_digit(c) || c == '_' || c == '-'; }
inline bool is_local_char(char c) {
    return is_alpha(c) || is_digit(c) || c == '_' || c == '-' || c == '.' || c == '%' ||
           c == '#' || c == '/' || c == '~' || c == '\'';
}

}  // namespace detail

/// True for `<...>`, plain http(s) IRIs, and prefixed names including truncated
/// prefixes like "w:Pq31" (which is how malformed generations get caught as FakeUri).
inline bool uri_shaped(std::string_view tok) {
    if (tok.empty()) return false;
    if (tok.front() == '<' && tok.back() == '>' && tok.size() >= 3 && tok[1] != '<') return true;
    if (tok.rfind("http://", 0) == 0 || tok.rfind("https://", 0) == 0) return true;
    if (!detail::is_alpha(tok.front())) return false;
    size_t i = 1;
    while (i < tok.size() && detail::is_word_char(tok[i])) ++i;
    if (i >= tok.size() || tok[i] != ':') return false;
    for (size_t j = i + 1; j < tok.size(); ++j)
        if (detail::is_ws(tok[j]) || tok[j] == '"') return false;
    return true;
}

inline bool numeric_shaped(std::string_view tok) {
    size_t i = 0;
    if (i < tok.size() && (tok[i] == '-' || tok[i] == '+')) ++i;
    size_t digits = 0;
    while (i < tok.size() && detail::is_digit(tok[i])) ++i, ++digits;
    if (i < tok.size() && tok[i] == '.') {
        ++i;
        while (i < tok.size() && detail::is_digit(tok[i])) ++i, ++digits;
    }
    return digits > 0 && i == tok.size();
}

inline bool date_shaped(std::string_view tok) {
    if (tok.size() < 10) return false;
    for (int k : {0, 1, 2, 3, 5, 6, 8, 9})
        if (!detail::is_digit(tok[size_t(k)])) return false;
    if (tok[4] != '-' || tok[7] != '-') return false;
    return tok.size() == 10 || tok[10] == 'T';
}

inline bool literal_shaped(std::string_view tok) {
    if (tok.empty()) return false;
    if (tok.front() == '"' || tok.front() == '\'') return true;
    if (numeric_shaped(tok) || date_shaped(tok)) return true;
    std::string low = text::lower_ascii(tok);
    return low == "true" || low == "false";
}

/// Tokenize SPARQL text. Lenient: never requires a full parse; prefixed and full
/// URIs, quoted strings (with @lang / ^^datatype suffixes), variables, and numbers
/// are single tokens; braces, dots, parentheses, and operators are individual tokens.
/// Throws on an unterminated string literal, reporting the character offset.
inline std::vector<std::string> tokenize_query(std::string_view q) {
    using namespace detail;
    std::vector<std::string> out;
    size_t i = 0;
    const size_t n = q.size();

    auto scan_iri_ref = [&](size_t start) -> size_t {
        // returns one-past-'>' or start (not an IRI ref)
        size_t j = start + 1;
        while (j < n && !is_ws(q[j]) && q[j] != '>') ++j;
        return (j < n && q[j] == '>') ? j + 1 : start;
    };

    while (i < n) {
        char c = q[i];
        if (is_ws(c)) {
            ++i;
            continue;
        }
        if (c == '#') {  // comment to end of line
            while (i < n && q[i] != '\n') ++i;
            continue;
        }
        if (c == '<') {
            size_t end = scan_iri_ref(i);
            if (end != i) {
                out.emplace_back(q.substr(i, end - i));
                i = end;
                continue;
            }
            if (i + 1 < n && q[i + 1] == '=') {
                out.emplace_back("<=");
                i += 2;
            } else {
                out.emplace_back("<");
                ++i;
            }
            continue;
        }
        if (c == '"' || c == '\'') {
            char quote = c;
            size_t start = i;
            ++i;
            while (i < n && q[i] != quote) {
                if (q[i] == '\\' && i + 1 < n) ++i;
                ++i;
            }
            if (i >= n) throw std::runtime_error("unterminated string literal at offset " + std::to_string(start));
            ++i;  // closing quote
            if (i < n && q[i] == '@') {
                ++i;
                while (i < n && (is_alpha(q[i]) || is_digit(q[i]) || q[i] == '-')) ++i;
            } else if (i + 1 < n && q[i] == '^' && q[i + 1] == '^') {
                i += 2;
                if (i < n && q[i] == '<') {
                    size_t end = scan_iri_ref(i);
                    i = (end != i) ? end : i;
                } else {
                    while (i < n && is_local_char(q[i])) ++i;
                    if (i < n && q[i] == ':') {
                        ++i;
                        while (i < n && is_local_char(q[i])) ++i;
                    }
                }
            }
            out.emplace_back(q.substr(start, i - start));
            continue;
        }
        if (c == '?' || c == '$') {
            size_t start = i++;
            while (i < n && (is_alpha(q[i]) || is_digit(q[i]) || q[i] == '_')) ++i;
            out.emplace_back(q.substr(start, i - start));
            continue;
        }
        if (is_digit(c) || ((c == '-' || c == '+') && i + 1 < n && is_digit(q[i + 1]))) {
            size_t start = i;
            if (c == '-' || c == '+') ++i;
            while (i < n && is_digit(q[i])) ++i;
            if (i + 1 < n && q[i] == '.' && is_digit(q[i + 1])) {
                ++i;
                while (i < n && is_digit(q[i])) ++i;
            }
            out.emplace_back(q.substr(start, i - start));
            continue;
        }
        if (is_alpha(c) || c == '_') {
            size_t start = i;
            while (i < n && is_word_char(q[i])) ++i;
            if (i < n && q[i] == ':') {  // prefixed name (possibly truncated prefix)
                ++i;
                while (i < n && is_local_char(q[i])) ++i;
                std::string tok(q.substr(start, i - start));
                while (tok.size() > 1 && tok.back() == '.') {  // "dbr:X." → name + dot
                    tok.pop_back();
                    --i;
                }
                out.push_back(std::move(tok));
                continue;
            }
            std::string word(q.substr(start, i - start));
            if ((word == "http" || word == "https") && i + 2 < n && q.substr(i, 3) == "://") {
                while (i < n && !is_ws(q[i]) && q[i] != '"' && q[i] != '<' && q[i] != '{' &&
                       q[i] != '}' && q[i] != '(' && q[i] != ')')
                    ++i;
                std::string iri(q.substr(start, i - start));
                while (iri.size() > 1 && (iri.back() == '.' || iri.back() == ',')) {
                    iri.pop_back();
                    --i;
                }
                out.push_back(std::move(iri));
                continue;
            }
            out.push_back(std::move(word));
            continue;
        }
        if (i + 1 < n) {  // two-char operators
            std::string_view two = q.substr(i, 2);
            if (two == "!=" || two == ">=" || two == "&&" || two == "||" || two == "^^") {
                out.emplace_back(two);
                i += 2;
                continue;
            }
        }
        out.emplace_back(1, c);
        ++i;
    }
    return out;
}

/// Classify one token. Total: every token gets exactly one label; tokens that fit
/// nowhere fall to Unk and are reported through `warn` when provided.
inline TokenTypeLabel classify_token(const std::string& token, const KbMembership& kb,
                                     const ClassifierConfig& cfg = ClassifierConfig::defaults(),
                                     std::vector<std::string>* warn = nullptr) {
    if (token == "<unk>") return TokenTypeLabel::Unk;
    std::string low = text::lower_ascii(token);
    if (cfg.keywords.count(low)) return TokenTypeLabel::SVocab;
    if (cfg.functions.count(low)) return TokenTypeLabel::Fct;
    if ((token.front() == '?' || token.front() == '$') && token.size() > 1) return TokenTypeLabel::Var;
    if (literal_shaped(token)) return TokenTypeLabel::Lit;
    if (uri_shaped(token)) return kb.contains(token) ? TokenTypeLabel::Uri : TokenTypeLabel::FakeUri;
    if (warn) warn->push_back("unclassifiable token '" + token + "' labelled Unk");
    return TokenTypeLabel::Unk;
}

inline std::vector<SparqlToken> classify_query(const std::vector<std::string>& tokens,
                                               const KbMembership& kb,
                                               const ClassifierConfig& cfg = ClassifierConfig::defaults(),
                                               std::vector<std::string>* warn = nullptr) {
    std::vector<SparqlToken> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back({t, classify_token(t, kb, cfg, warn)});
    return out;
}

/// True iff the token is URI-shaped but unknown to the KB. Non-URI-shaped input is an error.
inline bool is_fake_uri(const std::string& token, const KbMembership& kb) {
    if (!uri_shaped(token)) throw std::invalid_argument("is_fake_uri: token is not URI-shaped: " + token);
    return !kb.contains(token);
}

/// Reassemble tokens into query text: single spaces, tokens untouched.
template <typename Seq>
inline std::string detokenize(const Seq& tokens) {
    std::string out;
    bool first = true;
    for (const auto& t : tokens) {
        if (!first) out += ' ';
        if constexpr (requires { t.text; })
            out += t.text;
        else
            out += t;
        first = false;
    }
    return out;
}

/// Fallback English label of a KB token: URI local name with underscores → spaces,
/// literals reduced to their lexical form; lowercased either way.
inline std::string local_label(std::string_view kb_token) {
    std::string s(kb_token);
    if (!s.empty() && (s.front() == '"' || s.front() == '\'')) {
        char quote = s.front();
        size_t end = s.rfind(quote);
        s = (end > 0) ? s.substr(1, end - 1) : s.substr(1);
    } else if (!s.empty() && s.front() == '<' && s.back() == '>') {
        s = s.substr(1, s.size() - 2);
        size_t cut = s.find_last_of("/#");
        if (cut != std::string::npos) s = s.substr(cut + 1);
    } else {
        size_t colon = s.find(':');
        if (colon != std::string::npos && uri_shaped(s)) s = s.substr(colon + 1);
        size_t cut = s.find_last_of("/#");
        if (cut != std::string::npos) s = s.substr(cut + 1);
    }
    for (char& c : s)
        if (c == '_') c = ' ';
    return text::lower_ascii(s);
}

}  // namespace sparqlgen::sparqltok
