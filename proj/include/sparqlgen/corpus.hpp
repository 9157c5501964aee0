#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparqlgen/answers.hpp"
#include "sparqlgen/rng.hpp"
#include "sparqlgen/sparqltok.hpp"
#include "sparqlgen/text.hpp"

/// Dataset model: question/query entries, global templates with numbered
/// placeholders, the three question annotation schemes, and prompt export.
namespace sparqlgen::corpus {

using nlohmann::json;

enum class Scheme { RawQuestion, TagWithin, TagEnd };

inline const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::RawQuestion: return "raw";
        case Scheme::TagWithin: return "tag-within";
        default: return "tag-end";
    }
}

inline Scheme scheme_from_name(const std::string& name) {
    std::string n = text::lower_ascii(name);
    if (n == "raw" || n == "raw-question") return Scheme::RawQuestion;
    if (n == "tag-within" || n == "within") return Scheme::TagWithin;
    if (n == "tag-end" || n == "end") return Scheme::TagEnd;
    throw std::invalid_argument("unknown annotation scheme: " + name);
}

struct Entry {
    std::string id;
    std::string question;
    std::optional<std::string> reformulated_question;
    std::string query;
    std::optional<std::string> template_id;
    std::optional<answers::AnswerSet> gold_answers;
};

struct GlobalTemplate {
    std::string id;
    std::string question_template;
    std::string query_template;
};

struct Binding {
    std::string kb_token;  // URI or literal as it appears in the query
    std::string nl_label;  // surface words used in the question
};
using Bindings = std::map<int, Binding>;

struct AnnotatedQuestion {
    Scheme scheme = Scheme::RawQuestion;
    std::vector<std::string> tokens;
    std::vector<std::pair<size_t, std::string>> kb_spans;  // (token position, bare KB token)
};

struct AnnotationWarning {
    std::string entry_id;
    std::string message;
};

// ---------------------------------------------------------------------------
// placeholders

/// "<3>" → 3; anything else → nullopt.
inline std::optional<int> placeholder_index(const std::string& tok) {
    if (tok.size() < 3 || tok.front() != '<' || tok.back() != '>') return std::nullopt;
    int v = 0;
    for (size_t i = 1; i + 1 < tok.size(); ++i) {
        if (!sparqltok::detail::is_digit(tok[i])) return std::nullopt;
        v = v * 10 + (tok[i] - '0');
    }
    return v;
}

inline std::set<int> placeholder_indices(const std::string& template_text) {
    std::set<int> out;
    for (const auto& tok : text::split_ws(template_text))
        if (auto idx = placeholder_index(tok)) out.insert(*idx);
    return out;
}

/// Enforce equal, contiguous-from-1 placeholder index sets on both sides.
inline void validate_template(const GlobalTemplate& t) {
    std::set<int> q = placeholder_indices(t.question_template);
    std::set<int> s = placeholder_indices(t.query_template);
    if (q != s)
        throw std::runtime_error("template " + t.id +
                                 ": question and query placeholder sets differ");
    int expect = 1;
    for (int idx : q)
        if (idx != expect++)
            throw std::runtime_error("template " + t.id +
                                     ": placeholder indices not contiguous from 1");
}

// ---------------------------------------------------------------------------
// JSONL persistence

inline json answers_to_json(const answers::AnswerSet& a) {
    using K = answers::AnswerSet::Kind;
    json j;
    if (a.kind == K::Boolean) {
        j["kind"] = "boolean";
        j["value"] = a.boolean;
    } else if (a.kind == K::Error) {
        j["kind"] = "error";
        j["detail"] = a.error_detail;
    } else {
        j["kind"] = "bindings";
        j["values"] = a.values;  // std::set serializes sorted
    }
    return j;
}

inline answers::AnswerSet answers_from_json(const json& j) {
    using A = answers::AnswerSet;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "boolean") return A::ask(j.at("value").get<bool>());
    if (kind == "error") return A::error(j.value("detail", std::string{}));
    if (kind == "bindings") {
        std::set<std::string> vals;
        for (const auto& v : j.at("values")) vals.insert(v.get<std::string>());
        return A::bindings(std::move(vals));
    }
    throw std::runtime_error("unknown answer kind: " + kind);
}

inline json entry_to_json(const Entry& e) {
    json j;
    j["id"] = e.id;
    j["question"] = e.question;
    j["query"] = e.query;
    if (e.reformulated_question) j["reformulated_question"] = *e.reformulated_question;
    if (e.template_id) j["template_id"] = *e.template_id;
    if (e.gold_answers) j["answers"] = answers_to_json(*e.gold_answers);
    return j;
}

inline Entry entry_from_json(const json& j) {
    Entry e;
    e.id = j.contains("id") ? j.at("id").get<std::string>() : "";
    e.question = j.at("question").get<std::string>();
    e.query = j.at("query").get<std::string>();
    if (j.contains("reformulated_question"))
        e.reformulated_question = j.at("reformulated_question").get<std::string>();
    if (j.contains("template_id")) e.template_id = j.at("template_id").get<std::string>();
    if (j.contains("answers")) e.gold_answers = answers_from_json(j.at("answers"));
    return e;
}

inline std::vector<Entry> parse_dataset(std::istream& in, const std::string& origin) {
    std::vector<Entry> out;
    std::set<std::string> ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Entry e;
        try {
            json j = json::parse(line);
            e = entry_from_json(j);
        } catch (const std::exception& ex) {
            throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                     ": malformed record: " + ex.what());
        }
        if (e.question.empty() || e.query.empty())
            throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                     ": record missing question or query text");
        if (!e.id.empty() && !ids.insert(e.id).second)
            throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                     ": duplicate entry id '" + e.id + "'");
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<Entry> load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open dataset file: " + path);
    return parse_dataset(f, path);
}

inline void save_dataset(const std::string& path, const std::vector<Entry>& entries) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write dataset file: " + path);
    for (const auto& e : entries) f << entry_to_json(e).dump() << "\n";
}

inline std::vector<GlobalTemplate> load_templates(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open template file: " + path);
    std::vector<GlobalTemplate> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            json j = json::parse(line);
            GlobalTemplate t{j.at("id").get<std::string>(),
                             j.at("question_template").get<std::string>(),
                             j.at("query_template").get<std::string>()};
            validate_template(t);
            out.push_back(std::move(t));
        } catch (const std::exception& ex) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return out;
}

inline void save_templates(const std::string& path, const std::vector<GlobalTemplate>& ts) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write template file: " + path);
    for (const auto& t : ts) {
        json j{{"id", t.id},
               {"question_template", t.question_template},
               {"query_template", t.query_template}};
        f << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// template instantiation

/// Fill every numbered placeholder: NL label into the question side, KB token
/// into the query side.
inline Entry instantiate_template(const GlobalTemplate& tmpl, const Bindings& bindings) {
    std::set<int> needed = placeholder_indices(tmpl.question_template);
    std::set<int> query_side = placeholder_indices(tmpl.query_template);
    needed.insert(query_side.begin(), query_side.end());
    std::vector<int> missing;
    for (int idx : needed)
        if (!bindings.count(idx)) missing.push_back(idx);
    if (!missing.empty()) {
        std::string list;
        for (int idx : missing) list += (list.empty() ? "" : ", ") + std::to_string(idx);
        throw std::runtime_error("template " + tmpl.id + ": missing bindings for placeholders " +
                                 list);
    }
    auto fill = [&](const std::string& tpl, bool query_side_fill) {
        std::vector<std::string> out;
        for (const auto& tok : text::split_ws(tpl)) {
            if (auto idx = placeholder_index(tok)) {
                const Binding& b = bindings.at(*idx);
                out.push_back(query_side_fill ? b.kb_token : b.nl_label);
            } else {
                out.push_back(tok);
            }
        }
        return text::join(out);
    };
    Entry e;
    e.question = fill(tmpl.question_template, false);
    e.query = fill(tmpl.query_template, true);
    e.template_id = tmpl.id;
    return e;
}

// ---------------------------------------------------------------------------
// annotation schemes

inline AnnotatedQuestion annotate_raw(const Entry& entry) {
    AnnotatedQuestion a;
    a.scheme = Scheme::RawQuestion;
    a.tokens = text::tokenize_nl(entry.question);
    return a;
}

/// First position where `needle` occurs as a contiguous subsequence of
/// `haystack`, at or after `from`.
inline std::optional<size_t> locate_subsequence(const std::vector<std::string>& haystack,
                                                const std::vector<std::string>& needle,
                                                size_t from = 0) {
    if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
    for (size_t i = from; i + needle.size() <= haystack.size(); ++i) {
        bool ok = true;
        for (size_t k = 0; k < needle.size() && ok; ++k) ok = haystack[i + k] == needle[k];
        if (ok) return i;
    }
    return std::nullopt;
}

/// Replace each placeholder's surface words with the bound KB token wrapped as
/// <<token>>. The output surface follows the question template; the entry's own
/// question is used to verify every label is actually present.
inline AnnotatedQuestion annotate_tag_within(const Entry& entry, const GlobalTemplate& tmpl,
                                             const Bindings& bindings) {
    std::vector<std::string> question_toks = text::tokenize_nl(entry.question);
    for (const auto& [idx, b] : bindings) {
        std::vector<std::string> label_toks = text::tokenize_nl(b.nl_label);
        if (!locate_subsequence(question_toks, label_toks))
            throw std::runtime_error("entry " + entry.id + ": placeholder <" +
                                     std::to_string(idx) + "> label '" + b.nl_label +
                                     "' not locatable in question");
    }
    AnnotatedQuestion a;
    a.scheme = Scheme::TagWithin;
    for (const auto& word : text::split_ws(tmpl.question_template)) {
        if (auto idx = placeholder_index(word)) {
            auto it = bindings.find(*idx);
            if (it == bindings.end())
                throw std::runtime_error("entry " + entry.id + ": no binding for placeholder <" +
                                         std::to_string(*idx) + ">");
            a.kb_spans.emplace_back(a.tokens.size(), it->second.kb_token);
            a.tokens.push_back(text::wrap_kb(it->second.kb_token));
        } else {
            for (auto& t : text::tokenize_nl(word)) a.tokens.push_back(std::move(t));
        }
    }
    return a;
}

/// Append each KB element after the question as: <sep> <<token>> label-words,
/// in an order drawn deterministically from `seed`.
inline AnnotatedQuestion annotate_tag_end(const Entry& entry,
                                          const std::vector<std::pair<std::string, std::string>>& kb_elements,
                                          uint64_t seed,
                                          std::vector<AnnotationWarning>* warnings = nullptr) {
    AnnotatedQuestion a;
    a.scheme = Scheme::TagEnd;
    a.tokens = text::tokenize_nl(entry.question);
    if (kb_elements.empty()) {
        if (warnings)
            warnings->push_back({entry.id, "tag-end annotation requested with empty KB element list"});
        return a;
    }
    std::vector<size_t> order(kb_elements.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::Rng gen(seed);
    gen.shuffle(order);
    for (size_t i : order) {
        const auto& [kb_token, label] = kb_elements[i];
        a.tokens.push_back("<sep>");
        a.kb_spans.emplace_back(a.tokens.size(), kb_token);
        a.tokens.push_back(text::wrap_kb(kb_token));
        for (auto& t : text::tokenize_nl(text::lower_ascii(label))) a.tokens.push_back(std::move(t));
    }
    return a;
}

inline AnnotatedQuestion annotate(const Entry& entry, Scheme scheme, const GlobalTemplate& tmpl,
                                  const Bindings& bindings, uint64_t seed,
                                  std::vector<AnnotationWarning>* warnings = nullptr) {
    switch (scheme) {
        case Scheme::RawQuestion: return annotate_raw(entry);
        case Scheme::TagWithin: return annotate_tag_within(entry, tmpl, bindings);
        default: {
            std::vector<std::pair<std::string, std::string>> elems;
            for (const auto& [idx, b] : bindings) elems.emplace_back(b.kb_token, b.nl_label);
            return annotate_tag_end(entry, elems, seed, warnings);
        }
    }
}

/// Scheme-specific well-formedness checks, usable as a test oracle.
inline void validate_annotation(const AnnotatedQuestion& a) {
    if (a.scheme == Scheme::RawQuestion && !a.kb_spans.empty())
        throw std::runtime_error("raw-question annotation must carry no kb_spans");
    size_t prev = 0;
    bool first = true;
    for (const auto& [pos, kb_token] : a.kb_spans) {
        if (pos >= a.tokens.size())
            throw std::runtime_error("kb_span position " + std::to_string(pos) + " out of range");
        const std::string& t = a.tokens[pos];
        if (t != kb_token && t != text::wrap_kb(kb_token))
            throw std::runtime_error("kb_span token mismatch at position " + std::to_string(pos) +
                                     ": '" + t + "' vs '" + kb_token + "'");
        if (!first && pos <= prev) throw std::runtime_error("kb_span positions not increasing");
        prev = pos;
        first = false;
        if (a.scheme == Scheme::TagEnd) {
            bool sep_before = false;
            for (size_t i = 0; i < pos; ++i)
                if (a.tokens[i] == "<sep>") sep_before = true;
            if (!sep_before)
                throw std::runtime_error("tag-end KB element at position " + std::to_string(pos) +
                                         " lacks a preceding <sep>");
        }
    }
}

// ---------------------------------------------------------------------------
// binding derivation and template recovery

/// Recover the bindings of an entry known (or suspected) to instantiate `tmpl`:
/// KB tokens from aligning the query against the query template, labels from
/// aligning the question against the question template.
inline Bindings derive_bindings(const Entry& entry, const GlobalTemplate& tmpl) {
    Bindings out;

    std::vector<std::string> qt = sparqltok::tokenize_query(tmpl.query_template);
    std::vector<std::string> qq = sparqltok::tokenize_query(entry.query);
    if (qt.size() != qq.size())
        throw std::runtime_error("entry " + entry.id + ": query does not fit template " + tmpl.id +
                                 " (token count " + std::to_string(qq.size()) + " vs " +
                                 std::to_string(qt.size()) + ")");
    for (size_t i = 0; i < qt.size(); ++i) {
        if (auto idx = placeholder_index(qt[i])) {
            auto it = out.find(*idx);
            if (it != out.end() && it->second.kb_token != qq[i])
                throw std::runtime_error("entry " + entry.id + ": placeholder <" +
                                         std::to_string(*idx) + "> bound to conflicting tokens");
            out[*idx].kb_token = qq[i];
        } else if (qt[i] != qq[i]) {
            throw std::runtime_error("entry " + entry.id + ": query does not fit template " +
                                     tmpl.id + " at token " + std::to_string(i));
        }
    }

    // Match the question against the question template: anchored walk where each
    // placeholder greedily takes the shortest span that lets the rest match.
    std::vector<std::string> st = text::tokenize_nl(tmpl.question_template);
    std::vector<std::string> qn = text::tokenize_nl(entry.question);
    std::map<int, std::string> labels;
    std::function<bool(size_t, size_t)> walk = [&](size_t si, size_t qi) -> bool {
        if (si == st.size()) return qi == qn.size();
        if (auto idx = placeholder_index(st[si])) {
            for (size_t len = 1; qi + len <= qn.size(); ++len) {
                std::vector<std::string> span(qn.begin() + long(qi), qn.begin() + long(qi + len));
                std::string label = text::join(span);
                auto it = labels.find(*idx);
                if (it != labels.end() && it->second != label) continue;
                bool fresh = it == labels.end();
                if (fresh) labels[*idx] = label;
                if (walk(si + 1, qi + len)) return true;
                if (fresh) labels.erase(*idx);
            }
            return false;
        }
        if (qi < qn.size() && st[si] == qn[qi]) return walk(si + 1, qi + 1);
        return false;
    };
    if (!walk(0, 0))
        throw std::runtime_error("entry " + entry.id + ": question does not fit template " +
                                 tmpl.id);
    for (auto& [idx, label] : labels) {
        auto it = out.find(idx);
        if (it == out.end())
            throw std::runtime_error("entry " + entry.id + ": placeholder <" + std::to_string(idx) +
                                     "> appears only in the question template");
        it->second.nl_label = label;
    }
    for (auto& [idx, b] : out)
        if (b.nl_label.empty()) b.nl_label = sparqltok::local_label(b.kb_token);
    return out;
}

struct RecoveredEntry {
    std::string template_id;
    Bindings bindings;
};

struct RecoveryResult {
    std::vector<GlobalTemplate> templates;
    std::map<std::string, RecoveredEntry> by_entry_id;
    std::vector<std::string> flagged_ids;  // entries no recovered template explains
};

/// Group entries by their query skeleton (KB tokens replaced with indexed
/// placeholders), then derive one question template per group from an entry
/// whose KB labels are all locatable in its question surface.
inline RecoveryResult recover_templates(const std::vector<Entry>& entries,
                                        const sparqltok::KbMembership& kb = sparqltok::KbMembership::trust_all(),
                                        const sparqltok::ClassifierConfig& cfg = sparqltok::ClassifierConfig::defaults()) {
    using sparqltok::TokenTypeLabel;
    RecoveryResult res;
    struct Group {
        GlobalTemplate tmpl;          // question_template filled lazily
        bool question_side_known = false;
        std::vector<size_t> members;  // indices into entries
    };
    std::map<std::string, Group> groups;  // query skeleton → group

    for (size_t ei = 0; ei < entries.size(); ++ei) {
        const Entry& e = entries[ei];
        std::vector<std::string> toks = sparqltok::tokenize_query(e.query);
        std::map<std::string, int> index_of;
        std::vector<std::string> skel;
        for (const auto& t : toks) {
            TokenTypeLabel ty = sparqltok::classify_token(t, kb, cfg);
            bool is_k = ty == TokenTypeLabel::Uri || ty == TokenTypeLabel::FakeUri ||
                        ty == TokenTypeLabel::Lit;
            if (is_k) {
                auto [it, fresh] = index_of.emplace(t, int(index_of.size()) + 1);
                (void)fresh;
                skel.push_back("<" + std::to_string(it->second) + ">");
            } else {
                skel.push_back(t);
            }
        }
        std::string key = text::join(skel);
        auto [git, fresh] = groups.emplace(key, Group{});
        if (fresh) {
            git->second.tmpl.id = "t" + std::to_string(groups.size());
            git->second.tmpl.query_template = key;
        }
        git->second.members.push_back(ei);
    }

    for (auto& [key, g] : groups) {
        // derive the question template from the first member whose labels all locate
        for (size_t ei : g.members) {
            if (g.question_side_known) break;
            const Entry& e = entries[ei];
            // align the query side only; labels are located manually below
            Bindings probe;
            try {
                std::vector<std::string> qt = sparqltok::tokenize_query(g.tmpl.query_template);
                std::vector<std::string> qq = sparqltok::tokenize_query(e.query);
                for (size_t i = 0; i < qt.size(); ++i)
                    if (auto idx = placeholder_index(qt[i])) probe[*idx].kb_token = qq[i];
            } catch (const std::exception&) {
                continue;
            }
            std::vector<std::string> q_toks = text::tokenize_nl(e.question);
            std::vector<bool> taken(q_toks.size(), false);
            std::map<int, std::pair<size_t, size_t>> spans;  // idx → (start, len)
            bool ok = true;
            for (auto& [idx, b] : probe) {
                std::vector<std::string> label = text::tokenize_nl(sparqltok::local_label(b.kb_token));
                std::optional<size_t> at;
                for (size_t from = 0; ok; ) {
                    at = locate_subsequence(q_toks, label, from);
                    if (!at) break;
                    bool clash = false;
                    for (size_t k = *at; k < *at + label.size(); ++k) clash |= taken[k];
                    if (!clash) break;
                    from = *at + 1;
                }
                if (!at || label.empty()) {
                    ok = false;
                    break;
                }
                for (size_t k = *at; k < *at + label.size(); ++k) taken[k] = true;
                spans[idx] = {*at, label.size()};
            }
            if (!ok) continue;
            std::vector<std::string> out_toks;
            for (size_t i = 0; i < q_toks.size();) {
                bool replaced = false;
                for (auto& [idx, span] : spans) {
                    if (span.first == i) {
                        out_toks.push_back("<" + std::to_string(idx) + ">");
                        i += span.second;
                        replaced = true;
                        break;
                    }
                }
                if (!replaced) out_toks.push_back(q_toks[i++]);
            }
            g.tmpl.question_template = text::join(out_toks);
            g.question_side_known = true;
        }
        if (!g.question_side_known) {
            for (size_t ei : g.members) res.flagged_ids.push_back(entries[ei].id);
            continue;
        }
        res.templates.push_back(g.tmpl);
        for (size_t ei : g.members) {
            try {
                Bindings b = derive_bindings(entries[ei], g.tmpl);
                res.by_entry_id[entries[ei].id] = {g.tmpl.id, std::move(b)};
            } catch (const std::exception&) {
                res.flagged_ids.push_back(entries[ei].id);
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// prompt export

enum class PromptMode { Standard, Instruction };

/// Text fed to an instruction-tuned generator. Standard mode is the bare
/// annotated question; instruction mode (tag-end only) prefixes a task
/// description enumerating the candidate KB elements.
inline std::string build_instruction_prompt(const Entry& entry, const AnnotatedQuestion& annotated,
                                            PromptMode mode) {
    (void)entry;
    if (mode == PromptMode::Standard) return text::join(annotated.tokens);
    if (annotated.scheme != Scheme::TagEnd)
        throw std::invalid_argument("instruction prompts require a tag-end annotated question");
    std::string uris;
    for (const auto& [pos, kb_token] : annotated.kb_spans) {
        if (!uris.empty()) uris += ", ";
        uris += text::wrap_kb(kb_token);
    }
    // question body = tokens before the first <sep>
    std::vector<std::string> body;
    for (const auto& t : annotated.tokens) {
        if (t == "<sep>") break;
        body.push_back(t);
    }
    std::string prompt;
    prompt += "### Instruction:\n";
    prompt += "Translate the question into a SPARQL query over the knowledge base. ";
    prompt += "Build the query using exactly these knowledge-base elements: " + uris + ".\n";
    prompt += "### Input:\n";
    prompt += text::join(body) + "\n";
    prompt += "### Output:\n";
    return prompt;
}

// ---------------------------------------------------------------------------
// enrichment bookkeeping

/// Keep entries whose gold answers are non-empty (a false ASK still counts);
/// second member is the retention ratio, defined as 1.0 on empty input.
inline std::pair<std::vector<Entry>, double> filter_nonempty(const std::vector<Entry>& entries) {
    std::vector<Entry> subset;
    for (const auto& e : entries) {
        if (!e.gold_answers)
            throw std::runtime_error("entry " + e.id + " has no gold answers; enrich the dataset first");
        if (e.gold_answers->nonempty()) subset.push_back(e);
    }
    double retention = entries.empty() ? 1.0 : double(subset.size()) / double(entries.size());
    return {std::move(subset), retention};
}

enum class QuestionVariant { Original, Reformulated };

inline const std::string& select_question_variant(const Entry& e, QuestionVariant v) {
    if (v == QuestionVariant::Original) return e.question;
    if (!e.reformulated_question)
        throw std::runtime_error("entry " + e.id + " has no reformulated question");
    return *e.reformulated_question;
}

}  // namespace sparqlgen::corpus
