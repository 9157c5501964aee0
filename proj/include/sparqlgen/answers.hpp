#pragma once

#include <set>
#include <string>
#include <utility>

namespace sparqlgen::answers {

/// One endpoint result, normalized. kind=bindings carries a set of canonical value
/// strings (duplicates collapsed); kind=boolean carries an ASK result and an empty
/// value set; kind=error records the failure as data so evaluation never aborts.
struct AnswerSet {
    enum class Kind { Bindings, Boolean, Error };

    Kind kind = Kind::Bindings;
    std::set<std::string> values;
    bool boolean = false;
    std::string error_detail;

    static AnswerSet bindings(std::set<std::string> v) {
        AnswerSet a;
        a.kind = Kind::Bindings;
        a.values = std::move(v);
        return a;
    }
    static AnswerSet ask(bool b) {
        AnswerSet a;
        a.kind = Kind::Boolean;
        a.boolean = b;
        return a;
    }
    static AnswerSet error(std::string detail) {
        AnswerSet a;
        a.kind = Kind::Error;
        a.error_detail = std::move(detail);
        return a;
    }

    /// Non-empty per the evaluation filter: any boolean counts (a false ASK is still
    /// an answer); bindings count when the set is non-empty; errors never count.
    bool nonempty() const {
        if (kind == Kind::Boolean) return true;
        if (kind == Kind::Bindings) return !values.empty();
        return false;
    }

    bool operator==(const AnswerSet& o) const {
        if (kind != o.kind) return false;
        if (kind == Kind::Boolean) return boolean == o.boolean;
        if (kind == Kind::Bindings) return values == o.values;
        return error_detail == o.error_detail;
    }
};

/// Canonical string for one RDF term: IRIs as absolute IRI text, literals as their
/// lexical form with language tag / datatype IRI decorations preserved, so typed and
/// plain variants stay distinct ("42^^...#integer" vs "42").
inline std::string canonical_value(const std::string& lexical_or_iri, bool is_iri,
                                   const std::string& lang = "", const std::string& datatype = "") {
    if (is_iri) return lexical_or_iri;
    std::string out = lexical_or_iri;
    if (!lang.empty()) out += "@" + lang;
    if (!datatype.empty()) out += "^^" + datatype;
    return out;
}

}  // namespace sparqlgen::answers
