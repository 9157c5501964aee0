#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparqlgen/corpus.hpp"
#include "sparqlgen/sparqltok.hpp"
#include "sparqlgen/text.hpp"

/// The three generation-time vocabularies: W (natural-language words), S (query
/// structure tokens: keywords, functions, variables), K (knowledge-base URIs and
/// literals, maskable and copyable), plus reserved control symbols.
namespace sparqlgen::vocab {

inline constexpr const char* kMask = "<mask>";
inline constexpr const char* kUnk = "<unk>";
inline constexpr const char* kSep = "<sep>";
inline constexpr const char* kBos = "<s>";
inline constexpr const char* kEos = "</s>";

/// One annotated training example: the question token stream with KB spans, and
/// the gold query token stream.
struct AnnotatedEntry {
    std::string entry_id;
    corpus::AnnotatedQuestion question;
    std::vector<std::string> query_tokens;
};

class TriVocabulary {
public:
    TriVocabulary() { rebuild_index(); }

    TriVocabulary(std::vector<std::string> w, std::vector<std::string> s, std::vector<std::string> k)
        : w_(std::move(w)), s_(std::move(s)), k_(std::move(k)) {
        std::sort(w_.begin(), w_.end());
        std::sort(s_.begin(), s_.end());
        std::sort(k_.begin(), k_.end());
        rebuild_index();
    }

    const std::vector<std::string>& w_tokens() const { return w_; }
    const std::vector<std::string>& s_tokens() const { return s_; }
    const std::vector<std::string>& k_tokens() const { return k_; }
    const std::vector<std::string>& reserved() const { return reserved_; }

    size_t size() const { return reserved_.size() + w_.size() + s_.size() + k_.size(); }
    int mask_id() const { return 0; }
    int unk_id() const { return 1; }
    int sep_id() const { return 2; }
    int bos_id() const { return 3; }
    int eos_id() const { return 4; }
    size_t w_begin() const { return reserved_.size(); }
    size_t s_begin() const { return reserved_.size() + w_.size(); }
    size_t k_begin() const { return reserved_.size() + w_.size() + s_.size(); }

    bool in_w(const std::string& t) const { return in_range(t, w_begin(), s_begin()); }
    bool in_s(const std::string& t) const { return in_range(t, s_begin(), k_begin()); }
    bool in_k(const std::string& t) const { return in_range(t, k_begin(), size()); }
    bool is_reserved(const std::string& t) const { return in_range(t, 0, w_begin()); }

    /// Token id, or the <unk> id when absent.
    int id_or_unk(const std::string& t) const {
        auto it = index_.find(t);
        return it == index_.end() ? unk_id() : it->second;
    }

    /// Token id; -1 when absent.
    int id_of(const std::string& t) const {
        auto it = index_.find(t);
        return it == index_.end() ? -1 : it->second;
    }

    const std::string& token(size_t id) const {
        if (id >= size())
            throw std::out_of_range("token id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(size()));
        if (id < w_begin()) return reserved_[id];
        if (id < s_begin()) return w_[id - w_begin()];
        if (id < k_begin()) return s_[id - s_begin()];
        return k_[id - k_begin()];
    }

private:
    bool in_range(const std::string& t, size_t lo, size_t hi) const {
        auto it = index_.find(t);
        return it != index_.end() && size_t(it->second) >= lo && size_t(it->second) < hi;
    }

    void rebuild_index() {
        index_.clear();
        for (size_t i = 0; i < size(); ++i) index_.emplace(token(i), int(i));
        if (index_.size() != size()) throw std::runtime_error("vocabulary contains duplicate tokens");
    }

    std::vector<std::string> reserved_{kMask, kUnk, kSep, kBos, kEos};
    std::vector<std::string> w_, s_, k_;
    std::unordered_map<std::string, int> index_;
};

/// Assemble W/S/K from annotated training entries. Query tokens must classify
/// into structure (S) or KB (K) space; question tokens outside KB spans feed W.
/// Structure and KB tokens take priority over W on surface collisions, keeping
/// the three sets disjoint.
inline TriVocabulary build_vocabularies(
    const std::vector<AnnotatedEntry>& train,
    const sparqltok::KbMembership& kb = sparqltok::KbMembership::trust_all(),
    const sparqltok::ClassifierConfig& cfg = sparqltok::ClassifierConfig::defaults()) {
    using sparqltok::TokenTypeLabel;
    std::set<std::string> w, s, k;
    static const std::set<std::string> reserved = {kMask, kUnk, kSep, kBos, kEos};

    for (const auto& e : train) {
        for (const auto& tok : e.query_tokens) {
            TokenTypeLabel ty = sparqltok::classify_token(tok, kb, cfg);
            switch (ty) {
                case TokenTypeLabel::SVocab:
                case TokenTypeLabel::Fct:
                case TokenTypeLabel::Var: s.insert(tok); break;
                case TokenTypeLabel::Uri:
                case TokenTypeLabel::FakeUri:
                case TokenTypeLabel::Lit: k.insert(tok); break;
                default:
                    throw std::runtime_error("query token '" + tok +
                                             "' fits neither the structure nor the KB vocabulary");
            }
        }
        std::set<size_t> span_positions;
        for (const auto& [pos, kb_token] : e.question.kb_spans) {
            span_positions.insert(pos);
            k.insert(kb_token);
        }
        for (size_t i = 0; i < e.question.tokens.size(); ++i) {
            if (span_positions.count(i)) continue;
            const std::string& tok = e.question.tokens[i];
            if (reserved.count(tok)) continue;
            w.insert(tok);
        }
    }
    for (const auto& t : s) w.erase(t);
    for (const auto& t : k) w.erase(t);
    return TriVocabulary({w.begin(), w.end()}, {s.begin(), s.end()}, {k.begin(), k.end()});
}

struct VocabStats {
    struct Per {
        size_t total = 0, train = 0, validation = 0, test = 0, oov = 0;
    };
    Per w, s, k;
};

/// Distinct-token counts per vocabulary and split, with OOV = distinct test
/// tokens absent from the training split.
inline VocabStats compute_oov(
    const std::vector<AnnotatedEntry>& train, const std::vector<AnnotatedEntry>& validation,
    const std::vector<AnnotatedEntry>& test,
    const sparqltok::KbMembership& kb = sparqltok::KbMembership::trust_all(),
    const sparqltok::ClassifierConfig& cfg = sparqltok::ClassifierConfig::defaults()) {
    using sparqltok::TokenTypeLabel;
    struct Sets {
        std::set<std::string> w, s, k;
    };
    static const std::set<std::string> reserved = {kMask, kUnk, kSep, kBos, kEos};
    auto collect = [&](const std::vector<AnnotatedEntry>& part) {
        Sets out;
        for (const auto& e : part) {
            for (const auto& tok : e.query_tokens) {
                TokenTypeLabel ty = sparqltok::classify_token(tok, kb, cfg);
                if (ty == TokenTypeLabel::SVocab || ty == TokenTypeLabel::Fct ||
                    ty == TokenTypeLabel::Var)
                    out.s.insert(tok);
                else
                    out.k.insert(tok);
            }
            std::set<size_t> spans;
            for (const auto& [pos, kb_token] : e.question.kb_spans) {
                spans.insert(pos);
                out.k.insert(kb_token);
            }
            for (size_t i = 0; i < e.question.tokens.size(); ++i)
                if (!spans.count(i) && !reserved.count(e.question.tokens[i]))
                    out.w.insert(e.question.tokens[i]);
        }
        for (const auto& t : out.s) out.w.erase(t);
        for (const auto& t : out.k) out.w.erase(t);
        return out;
    };
    Sets tr = collect(train), va = collect(validation), te = collect(test);
    auto fill = [](VocabStats::Per& p, const std::set<std::string>& a, const std::set<std::string>& b,
                   const std::set<std::string>& c) {
        std::set<std::string> all = a;
        all.insert(b.begin(), b.end());
        all.insert(c.begin(), c.end());
        p.total = all.size();
        p.train = a.size();
        p.validation = b.size();
        p.test = c.size();
        p.oov = 0;
        for (const auto& t : c)
            if (!a.count(t)) ++p.oov;
    };
    VocabStats st;
    fill(st.w, tr.w, va.w, te.w);
    fill(st.s, tr.s, va.s, te.s);
    fill(st.k, tr.k, va.k, te.k);
    return st;
}

/// Encoder input after masking: every KB span replaced by the shared mask
/// symbol, with the original tokens kept aside as copy candidates.
struct MaskedInput {
    std::vector<std::string> tokens;
    std::vector<std::pair<size_t, std::string>> candidates;  // (input position, KB token)
};

/// Replace each KB span with the mask symbol. KB tokens never seen at training
/// time stay usable: they ride along in the candidate list instead of needing a
/// vocabulary id. A span token that already belongs to W, S, or the reserved set
/// cannot be treated as a KB element and raises an error.
inline MaskedInput mask_kb_tokens(const corpus::AnnotatedQuestion& q, const TriVocabulary& vocab) {
    MaskedInput out;
    out.tokens = q.tokens;
    for (const auto& [pos, kb_token] : q.kb_spans) {
        if (pos >= out.tokens.size())
            throw std::runtime_error("kb_span position " + std::to_string(pos) + " out of range");
        if (!vocab.in_k(kb_token) &&
            (vocab.in_w(kb_token) || vocab.in_s(kb_token) || vocab.is_reserved(kb_token)))
            throw std::runtime_error("kb_span token '" + kb_token +
                                     "' collides with a non-KB vocabulary entry");
        out.tokens[pos] = kMask;
        out.candidates.emplace_back(pos, kb_token);
    }
    return out;
}

inline std::vector<int> encode(const std::vector<std::string>& tokens, const TriVocabulary& v) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(v.id_or_unk(t));
    return ids;
}

inline std::vector<std::string> decode(const std::vector<int>& ids, const TriVocabulary& v) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0) throw std::out_of_range("negative token id");
        out.push_back(v.token(size_t(id)));
    }
    return out;
}

inline void save_vocab(const std::string& path, const TriVocabulary& v) {
    nlohmann::json j;
    j["w"] = v.w_tokens();
    j["s"] = v.s_tokens();
    j["k"] = v.k_tokens();
    j["reserved"] = {{"mask", kMask}, {"unk", kUnk}, {"sep", kSep}, {"bos", kBos}, {"eos", kEos}};
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write vocabulary file: " + path);
    f << j.dump(2) << "\n";
}

inline TriVocabulary load_vocab(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open vocabulary file: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    auto vec = [&](const char* key) {
        std::vector<std::string> out;
        for (const auto& t : j.at(key)) out.push_back(t.get<std::string>());
        return out;
    };
    return TriVocabulary(vec("w"), vec("s"), vec("k"));
}

/// Canonical serialization of a masked token stream, for grouping identical
/// encoder inputs (e.g. the template-collapse count).
inline std::string masked_key(const MaskedInput& m) {
    std::string s;
    for (const auto& t : m.tokens) {
        s += t;
        s += '\x1f';
    }
    return s;
}

}  // namespace sparqlgen::vocab
