#pragma once

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparqlgen/answers.hpp"
#include "sparqlgen/sparqltok.hpp"
#include "sparqlgen/text.hpp"

/// In-process triple store with a brute-force evaluator for the restricted query
/// shapes the toolkit emits: SELECT [DISTINCT] (vars | COUNT), ASK (braced or not),
/// basic graph patterns, and simple FILTER conditions. Serves as the endpoint
/// module's fixture mode; no network involved.
namespace sparqlgen::graph {

struct Triple {
    std::string s, p, o;
};

struct ParsedLiteral {
    std::string lexical;
    std::string lang;
    std::string datatype;  // as written (prefixed or <...>)
};

/// Split a quoted literal token into lexical form and decorations.
inline ParsedLiteral parse_literal_token(const std::string& tok) {
    ParsedLiteral out;
    if (tok.empty() || (tok.front() != '"' && tok.front() != '\'')) {
        out.lexical = tok;
        return out;
    }
    char quote = tok.front();
    size_t i = 1;
    std::string lex;
    while (i < tok.size() && tok[i] != quote) {
        if (tok[i] == '\\' && i + 1 < tok.size()) ++i;
        lex += tok[i++];
    }
    out.lexical = lex;
    ++i;  // closing quote
    if (i < tok.size() && tok[i] == '@') {
        out.lang = tok.substr(i + 1);
    } else if (i + 1 < tok.size() && tok[i] == '^' && tok[i + 1] == '^') {
        out.datatype = tok.substr(i + 2);
    }
    return out;
}

/// Canonical string of one query/graph term given a prefix table.
inline std::string canonical_term(const std::string& tok, const sparqltok::PrefixTable& prefixes) {
    if (tok.empty()) return tok;
    if (tok.front() == '"' || tok.front() == '\'') {
        ParsedLiteral lit = parse_literal_token(tok);
        std::string dt = lit.datatype.empty() ? "" : prefixes.expand(lit.datatype);
        return answers::canonical_value(lit.lexical, false, lit.lang, dt);
    }
    if (tok == "a") return prefixes.expand("rdf:type");
    if (sparqltok::uri_shaped(tok)) return prefixes.expand(tok);
    return tok;  // numbers, booleans: lexical form is canonical
}

/// Lexical part of a canonical string (decorations stripped), for FILTER comparisons.
inline std::string lexical_part(const std::string& canonical) {
    size_t dt = canonical.find("^^");
    std::string s = (dt == std::string::npos) ? canonical : canonical.substr(0, dt);
    size_t at = s.rfind('@');
    if (at != std::string::npos && at + 1 < s.size()) {
        bool lang_like = true;
        for (size_t i = at + 1; i < s.size(); ++i) {
            char c = s[i];
            if (!(sparqltok::detail::is_alpha(c) || sparqltok::detail::is_digit(c) || c == '-'))
                lang_like = false;
        }
        if (lang_like) s = s.substr(0, at);
    }
    return s;
}

struct QuerySolutions {
    bool is_boolean = false;
    bool boolean = false;
    std::vector<std::string> projected;                 // projection order
    std::vector<std::map<std::string, std::string>> rows;  // var → canonical value
};

class FixtureGraph {
public:
    FixtureGraph() = default;

    void add(std::string s, std::string p, std::string o) {
        triples_.push_back({std::move(s), std::move(p), std::move(o)});
    }

    size_t size() const { return triples_.size(); }
    const std::vector<Triple>& triples() const { return triples_; }

    /// Parse the line format "term term term ." with '#' comments.
    static FixtureGraph parse(const std::string& body) {
        FixtureGraph g;
        std::istringstream in(body);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::vector<std::string> toks = sparqltok::tokenize_query(line);
            if (!toks.empty() && toks.back() == ".") toks.pop_back();
            if (toks.empty()) continue;
            if (toks.size() != 3)
                throw std::runtime_error("graph line " + std::to_string(line_no) +
                                         ": expected 3 terms, got " + std::to_string(toks.size()));
            g.add(toks[0], toks[1], toks[2]);
        }
        return g;
    }

    static FixtureGraph load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open graph file: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write graph file: " + path);
        for (const auto& t : triples_) f << t.s << " " << t.p << " " << t.o << " .\n";
    }

    /// True when the term occurs in any triple position. The term may be given
    /// in prefixed or full form; both sides are canonicalized before comparing.
    bool mentions(const std::string& term, const sparqltok::PrefixTable& prefixes) const {
        const std::string canonical = canonical_term(term, prefixes);
        for (const auto& t : triples_)
            if (canonical_term(t.s, prefixes) == canonical || canonical_term(t.p, prefixes) == canonical ||
                canonical_term(t.o, prefixes) == canonical)
                return true;
        return false;
    }

    /// Evaluate one query by brute force. Throws std::runtime_error on shapes the
    /// mini-grammar does not cover; callers that need failure-as-data catch it.
    QuerySolutions evaluate(const std::string& query, const sparqltok::PrefixTable& prefixes) const {
        Parser p(sparqltok::tokenize_query(query));
        Parsed q = p.parse();

        std::vector<std::array<std::string, 3>> facts;
        facts.reserve(triples_.size());
        for (const auto& t : triples_)
            facts.push_back({canonical_term(t.s, prefixes), canonical_term(t.p, prefixes),
                             canonical_term(t.o, prefixes)});

        // canonicalize pattern constants once
        for (auto& pat : q.patterns)
            for (auto& term : pat)
                if (!is_var(term)) term = canonical_term(term, prefixes);
        for (auto& f : q.filters) f.value = canonical_term(f.value, prefixes);

        std::set<std::string> seen;
        std::vector<std::map<std::string, std::string>> assignments;
        std::map<std::string, std::string> bound;
        match(q, facts, 0, bound, seen, assignments);

        QuerySolutions out;
        if (q.is_ask) {
            out.is_boolean = true;
            out.boolean = !assignments.empty();
            return out;
        }
        if (q.count_mode) {
            std::set<std::string> distinct_vals;
            size_t n = 0;
            for (auto& a : assignments) {
                if (q.count_var == "*" || q.count_var.empty()) {
                    ++n;
                    distinct_vals.insert(serialize_row(a));
                    continue;
                }
                auto it = a.find(q.count_var);
                if (it == a.end()) continue;
                ++n;
                distinct_vals.insert(it->second);
            }
            size_t value = q.count_distinct ? distinct_vals.size() : n;
            std::map<std::string, std::string> row;
            std::string var = q.count_alias.empty() ? "count" : q.count_alias;
            row[var] = std::to_string(value) + "^^http://www.w3.org/2001/XMLSchema#integer";
            out.projected = {var};
            out.rows = {row};
            return out;
        }
        std::vector<std::string> proj = q.projected;
        if (proj.empty() && !assignments.empty())
            for (const auto& [k, v] : assignments.front()) proj.push_back(k);
        std::set<std::string> row_seen;
        for (auto& a : assignments) {
            std::map<std::string, std::string> row;
            for (const auto& v : proj) {
                auto it = a.find(v);
                if (it != a.end()) row[v] = it->second;
            }
            std::string key = serialize_row(row);
            if (row_seen.insert(key).second) out.rows.push_back(std::move(row));
        }
        out.projected = proj;
        if (q.limit >= 0 && out.rows.size() > size_t(q.limit)) out.rows.resize(size_t(q.limit));
        return out;
    }

    static std::string serialize_row(const std::map<std::string, std::string>& row) {
        std::string s;
        for (const auto& [k, v] : row) {
            s += k;
            s += '\x1f';
            s += v;
            s += '\x1e';
        }
        return s;
    }

private:
    struct Filter {
        std::string var;
        std::string op;  // "=", "!=", "<", ">", "<=", ">=", "contains"
        std::string value;
    };
    struct Parsed {
        bool is_ask = false;
        bool distinct = false;
        bool count_mode = false;
        bool count_distinct = false;
        std::string count_var;
        std::string count_alias;
        std::vector<std::string> projected;
        std::vector<std::array<std::string, 3>> patterns;
        std::vector<Filter> filters;
        long limit = -1;
    };

    static bool is_var(const std::string& t) {
        return t.size() > 1 && (t[0] == '?' || t[0] == '$');
    }

    class Parser {
    public:
        explicit Parser(std::vector<std::string> toks) : toks_(std::move(toks)) {}

        Parsed parse() {
            Parsed q;
            std::string head = lower_at(0);
            if (head == "select") {
                ++i_;
                parse_projection(q);
                if (lower_at(i_) == "where") ++i_;
                expect("{");
                parse_patterns(q, true);
                if (lower_at(i_) == "limit") {
                    ++i_;
                    q.limit = std::stol(at(i_++));
                }
            } else if (head == "ask") {
                q.is_ask = true;
                ++i_;
                if (lower_at(i_) == "where") ++i_;
                bool braced = (at(i_) == "{");
                if (braced) ++i_;
                parse_patterns(q, braced);
            } else {
                throw std::runtime_error("unsupported query form: expected SELECT or ASK");
            }
            return q;
        }

    private:
        const std::string& at(size_t i) const {
            static const std::string empty;
            return i < toks_.size() ? toks_[i] : empty;
        }
        std::string lower_at(size_t i) const { return text::lower_ascii(at(i)); }
        void expect(const std::string& t) {
            if (at(i_) != t) throw std::runtime_error("expected '" + t + "' near token " + std::to_string(i_));
            ++i_;
        }

        void parse_projection(Parsed& q) {
            if (lower_at(i_) == "distinct" || lower_at(i_) == "reduced") {
                q.distinct = true;
                ++i_;
            }
            while (i_ < toks_.size()) {
                std::string low = lower_at(i_);
                if (low == "where" || at(i_) == "{") break;
                if (low == "count") {
                    q.count_mode = true;
                    ++i_;
                    expect("(");
                    if (lower_at(i_) == "distinct") {
                        q.count_distinct = true;
                        ++i_;
                    }
                    if (is_var(at(i_)))
                        q.count_var = at(i_++).substr(1);  // matcher keys are bare names
                    else if (at(i_) == "*")
                        q.count_var = at(i_++);
                    expect(")");
                    if (lower_at(i_) == "as") {
                        ++i_;
                        q.count_alias = at(i_++);
                        if (!q.count_alias.empty() && q.count_alias[0] == '?')
                            q.count_alias = q.count_alias.substr(1);
                    }
                } else if (is_var(at(i_))) {
                    q.projected.push_back(at(i_).substr(1));
                    ++i_;
                } else if (at(i_) == "(" || at(i_) == ")") {
                    ++i_;  // tolerate aggregate wrapping parens
                } else if (at(i_) == "*") {
                    ++i_;
                } else {
                    throw std::runtime_error("unsupported projection token: " + at(i_));
                }
            }
        }

        void parse_patterns(Parsed& q, bool braced) {
            while (i_ < toks_.size()) {
                if (at(i_) == "}") {
                    ++i_;
                    return;
                }
                if (at(i_) == ".") {
                    ++i_;
                    continue;
                }
                if (lower_at(i_) == "filter") {
                    ++i_;
                    parse_filter(q);
                    continue;
                }
                if (!braced && lower_at(i_) == "limit") return;
                std::string s = take_term();
                std::string p = take_term();
                std::string o = take_term();
                q.patterns.push_back({s, p, o});
            }
            if (braced) throw std::runtime_error("unterminated group pattern: missing '}'");
        }

        void parse_filter(Parsed& q) {
            Filter f;
            bool outer_paren = false;
            if (at(i_) == "(") {
                outer_paren = true;
                ++i_;
            }
            if (lower_at(i_) == "contains" || lower_at(i_) == "strstarts" || lower_at(i_) == "regex") {
                f.op = lower_at(i_);
                ++i_;
                expect("(");
                f.var = strip_sigil(at(i_++));
                expect(",");
                f.value = at(i_++);
                expect(")");
            } else {
                f.var = strip_sigil(at(i_++));
                f.op = at(i_++);
                f.value = at(i_++);
            }
            if (outer_paren) expect(")");
            static const std::set<std::string> ops = {"=", "!=", "<", ">", "<=", ">=",
                                                      "contains", "strstarts", "regex"};
            if (!ops.count(f.op)) throw std::runtime_error("unsupported filter operator: " + f.op);
            q.filters.push_back(std::move(f));
        }

        std::string take_term() {
            if (i_ >= toks_.size()) throw std::runtime_error("truncated triple pattern");
            std::string t = at(i_++);
            if (is_var(t)) return "?" + t.substr(1);
            return t;
        }

        static std::string strip_sigil(const std::string& v) {
            return (v.size() > 1 && (v[0] == '?' || v[0] == '$')) ? v.substr(1) : v;
        }

        std::vector<std::string> toks_;
        size_t i_ = 0;
    };

    static bool numeric(const std::string& s, double& out) {
        if (s.empty()) return false;
        char* end = nullptr;
        out = std::strtod(s.c_str(), &end);
        return end == s.c_str() + s.size();
    }

    static bool filter_holds(const Filter& f, const std::map<std::string, std::string>& bound) {
        auto it = bound.find(f.var);
        if (it == bound.end()) return false;
        std::string lhs = lexical_part(it->second);
        std::string rhs = lexical_part(f.value);
        if (f.op == "contains") return lhs.find(rhs) != std::string::npos;
        if (f.op == "strstarts") return lhs.rfind(rhs, 0) == 0;
        if (f.op == "regex") return lhs.find(rhs) != std::string::npos;  // substring approximation
        double a = 0, b = 0;
        int cmp;
        if (numeric(lhs, a) && numeric(rhs, b))
            cmp = (a < b) ? -1 : (a > b) ? 1 : 0;
        else
            cmp = lhs.compare(rhs) < 0 ? -1 : (lhs == rhs ? 0 : 1);
        if (f.op == "=") return cmp == 0;
        if (f.op == "!=") return cmp != 0;
        if (f.op == "<") return cmp < 0;
        if (f.op == ">") return cmp > 0;
        if (f.op == "<=") return cmp <= 0;
        return cmp >= 0;  // ">="
    }

    static void match(const Parsed& q, const std::vector<std::array<std::string, 3>>& facts,
                      size_t pat_idx, std::map<std::string, std::string>& bound,
                      std::set<std::string>& seen,
                      std::vector<std::map<std::string, std::string>>& out) {
        if (pat_idx == q.patterns.size()) {
            for (const auto& f : q.filters)
                if (!filter_holds(f, bound)) return;
            std::string key = FixtureGraph::serialize_row(bound);
            if (seen.insert(key).second) out.push_back(bound);
            return;
        }
        const auto& pat = q.patterns[pat_idx];
        for (const auto& fact : facts) {
            std::vector<std::pair<std::string, std::string>> added;
            bool ok = true;
            for (int k = 0; k < 3 && ok; ++k) {
                const std::string& term = pat[size_t(k)];
                const std::string& val = fact[size_t(k)];
                if (is_var(term)) {
                    std::string name = term.substr(1);
                    auto it = bound.find(name);
                    if (it == bound.end()) {
                        bound[name] = val;
                        added.emplace_back(name, val);
                    } else if (it->second != val) {
                        ok = false;
                    }
                } else if (term != val) {
                    ok = false;
                }
            }
            if (ok) match(q, facts, pat_idx + 1, bound, seen, out);
            for (auto& [name, _] : added) bound.erase(name);
        }
    }

    std::vector<Triple> triples_;
};

/// Project query solutions onto an AnswerSet: single-variable rows become bare
/// canonical strings; multi-variable rows become "name=value" tuples joined in
/// sorted variable order.
inline answers::AnswerSet to_answer_set(const QuerySolutions& sol) {
    using answers::AnswerSet;
    if (sol.is_boolean) return AnswerSet::ask(sol.boolean);
    std::set<std::string> values;
    for (const auto& row : sol.rows) {
        if (row.empty()) continue;
        if (row.size() == 1) {
            values.insert(row.begin()->second);
        } else {
            std::string tuple;
            for (const auto& [k, v] : row) {  // std::map iterates in sorted key order
                if (!tuple.empty()) tuple += "|";
                tuple += k + "=" + v;
            }
            values.insert(tuple);
        }
    }
    return AnswerSet::bindings(std::move(values));
}

}  // namespace sparqlgen::graph
