#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparqlgen/metrics.hpp"
#include "sparqlgen/sparqltok.hpp"

/// Token-level diagnosis of generated queries: align each prediction against
/// its reference, classify both sides of every mismatch, and accumulate a
/// reference-type × predicted-type confusion grid.
namespace sparqlgen::erroranalysis {

using sparqltok::TokenTypeLabel;

struct EditOp {
    enum class Kind { Match, Substitute, Insert, Delete };
    Kind kind;
    long ref_idx;   // -1 for Insert
    long pred_idx;  // -1 for Delete
};

struct Alignment {
    std::vector<EditOp> ops;
    size_t cost = 0;           // substitutions + insertions + deletions
    size_t substitutions = 0;  // substitutions only
};

/// Minimal unit-cost edit alignment. Among minimal-cost alignments the one
/// with the fewest substitutions wins — equivalently, the one that keeps the
/// most tokens matched, which is how a human reads two queries side by side
/// (a dropped keyword stays a deletion instead of being absorbed into a chain
/// of substitutions). When token type labels are supplied, remaining ties
/// prefer the fewest cross-type substitutions, so a swapped entity pairs with
/// the entity that replaced it rather than with an unrelated nearby token.
/// Whatever ties remain resolve by a fixed traceback order, so the result is
/// deterministic.
inline Alignment align(const std::vector<std::string>& ref, const std::vector<std::string>& pred,
                       const std::vector<TokenTypeLabel>* ref_labels = nullptr,
                       const std::vector<TokenTypeLabel>* pred_labels = nullptr) {
    const size_t m = ref.size(), n = pred.size();
    const bool typed = ref_labels && pred_labels;
    struct Cell {
        uint32_t cost, subs, xsubs;
    };
    auto better = [](Cell a, Cell b) {
        if (a.cost != b.cost) return a.cost < b.cost;
        if (a.subs != b.subs) return a.subs < b.subs;
        return a.xsubs < b.xsubs;
    };
    // cross-type penalty for substituting ref[i-1] with pred[j-1]
    auto cross = [&](size_t i, size_t j) -> uint32_t {
        return typed && (*ref_labels)[i - 1] != (*pred_labels)[j - 1] ? 1 : 0;
    };
    std::vector<std::vector<Cell>> dp(m + 1, std::vector<Cell>(n + 1));
    for (size_t i = 0; i <= m; ++i) dp[i][0] = {uint32_t(i), 0, 0};
    for (size_t j = 0; j <= n; ++j) dp[0][j] = {uint32_t(j), 0, 0};
    for (size_t i = 1; i <= m; ++i) {
        for (size_t j = 1; j <= n; ++j) {
            uint32_t sub = ref[i - 1] == pred[j - 1] ? 0 : 1;
            Cell best{dp[i - 1][j - 1].cost + sub, dp[i - 1][j - 1].subs + sub,
                      dp[i - 1][j - 1].xsubs + (sub ? cross(i, j) : 0)};
            Cell del{dp[i - 1][j].cost + 1, dp[i - 1][j].subs, dp[i - 1][j].xsubs};
            Cell ins{dp[i][j - 1].cost + 1, dp[i][j - 1].subs, dp[i][j - 1].xsubs};
            if (better(del, best)) best = del;
            if (better(ins, best)) best = ins;
            dp[i][j] = best;
        }
    }
    Alignment out;
    out.cost = dp[m][n].cost;
    out.substitutions = dp[m][n].subs;
    size_t i = m, j = n;
    std::vector<EditOp> rev;
    while (i > 0 || j > 0) {
        Cell here = dp[i][j];
        if (i > 0 && j > 0) {
            uint32_t sub = ref[i - 1] == pred[j - 1] ? 0 : 1;
            if (here.cost == dp[i - 1][j - 1].cost + sub &&
                here.subs == dp[i - 1][j - 1].subs + sub &&
                here.xsubs == dp[i - 1][j - 1].xsubs + (sub ? cross(i, j) : 0)) {
                rev.push_back({sub ? EditOp::Kind::Substitute : EditOp::Kind::Match, long(i - 1),
                               long(j - 1)});
                --i;
                --j;
                continue;
            }
        }
        if (i > 0 && here.cost == dp[i - 1][j].cost + 1 && here.subs == dp[i - 1][j].subs &&
            here.xsubs == dp[i - 1][j].xsubs) {
            rev.push_back({EditOp::Kind::Delete, long(i - 1), -1});
            --i;
            continue;
        }
        rev.push_back({EditOp::Kind::Insert, -1, long(j - 1)});
        --j;
    }
    out.ops.assign(rev.rbegin(), rev.rend());
    return out;
}

// ---------------------------------------------------------------------------
// confusion grid

/// Reference-side rows (a gold query never carries a fake URI) and
/// predicted-side columns.
inline constexpr std::array<TokenTypeLabel, 6> kRefTypes = {
    TokenTypeLabel::Uri,  TokenTypeLabel::SVocab, TokenTypeLabel::Fct,
    TokenTypeLabel::Lit,  TokenTypeLabel::Var,    TokenTypeLabel::Unk};
inline constexpr std::array<TokenTypeLabel, 7> kPredTypes = {
    TokenTypeLabel::Uri, TokenTypeLabel::FakeUri, TokenTypeLabel::SVocab, TokenTypeLabel::Fct,
    TokenTypeLabel::Lit, TokenTypeLabel::Var,     TokenTypeLabel::Unk};

inline size_t ref_index(TokenTypeLabel t) {
    for (size_t i = 0; i < kRefTypes.size(); ++i)
        if (kRefTypes[i] == t) return i;
    if (t == TokenTypeLabel::FakeUri) return 0;  // fold: reference URIs are trusted
    throw std::invalid_argument("unmapped reference token type");
}

inline size_t pred_index(TokenTypeLabel t) {
    for (size_t i = 0; i < kPredTypes.size(); ++i)
        if (kPredTypes[i] == t) return i;
    throw std::invalid_argument("unmapped predicted token type");
}

struct ErrorMatrix {
    std::array<std::array<size_t, 7>, 6> counts{};  // [ref type][pred type], substitutions only
    std::array<size_t, 7> insertions{};             // by predicted type
    std::array<size_t, 6> deletions{};              // by reference type

    size_t substitution_total() const {
        size_t s = 0;
        for (const auto& row : counts)
            for (size_t c : row) s += c;
        return s;
    }
    size_t insertion_total() const {
        size_t s = 0;
        for (size_t c : insertions) s += c;
        return s;
    }
    size_t deletion_total() const {
        size_t s = 0;
        for (size_t c : deletions) s += c;
        return s;
    }
    size_t total_errors() const { return substitution_total() + insertion_total() + deletion_total(); }

    void merge(const ErrorMatrix& other) {
        for (size_t r = 0; r < counts.size(); ++r)
            for (size_t c = 0; c < counts[r].size(); ++c) counts[r][c] += other.counts[r][c];
        for (size_t c = 0; c < insertions.size(); ++c) insertions[c] += other.insertions[c];
        for (size_t r = 0; r < deletions.size(); ++r) deletions[r] += other.deletions[r];
    }

    /// Row-normalized substitution percentages; an empty row is all zeros.
    std::array<double, 7> row_percentages(size_t r) const {
        std::array<double, 7> out{};
        size_t row_total = 0;
        for (size_t c : counts[r]) row_total += c;
        if (row_total == 0) return out;
        for (size_t c = 0; c < out.size(); ++c)
            out[c] = 100.0 * double(counts[r][c]) / double(row_total);
        return out;
    }

    /// Share of errors attributable to each reference type (substitutions plus
    /// deletions; insertions have no reference side).
    std::array<double, 6> summary_percentages() const {
        std::array<double, 6> out{};
        size_t denom = substitution_total() + deletion_total();
        if (denom == 0) return out;
        for (size_t r = 0; r < out.size(); ++r) {
            size_t row_total = deletions[r];
            for (size_t c : counts[r]) row_total += c;
            out[r] = 100.0 * double(row_total) / double(denom);
        }
        return out;
    }
};

/// Accumulate the confusion grid over aligned token-sequence pairs. Reference
/// tokens are classified with a trusting membership oracle; predicted tokens
/// use the supplied one so hallucinated URIs surface as FakeUri.
inline ErrorMatrix error_matrix_from_tokens(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs,
    const sparqltok::KbMembership& kb = sparqltok::KbMembership::trust_all(),
    const sparqltok::ClassifierConfig& cfg = sparqltok::ClassifierConfig::defaults()) {
    static const sparqltok::KbMembership trusted = sparqltok::KbMembership::trust_all();
    ErrorMatrix m;
    for (const auto& [ref, pred] : pairs) {
        std::vector<TokenTypeLabel> ref_labels, pred_labels;
        ref_labels.reserve(ref.size());
        pred_labels.reserve(pred.size());
        for (const auto& t : ref) ref_labels.push_back(sparqltok::classify_token(t, trusted, cfg));
        for (const auto& t : pred) pred_labels.push_back(sparqltok::classify_token(t, kb, cfg));
        Alignment a = align(ref, pred, &ref_labels, &pred_labels);
        for (const auto& op : a.ops) {
            switch (op.kind) {
                case EditOp::Kind::Match: break;
                case EditOp::Kind::Substitute:
                    ++m.counts[ref_index(ref_labels[size_t(op.ref_idx)])]
                              [pred_index(pred_labels[size_t(op.pred_idx)])];
                    break;
                case EditOp::Kind::Insert:
                    ++m.insertions[pred_index(pred_labels[size_t(op.pred_idx)])];
                    break;
                case EditOp::Kind::Delete:
                    ++m.deletions[ref_index(ref_labels[size_t(op.ref_idx)])];
                    break;
            }
        }
    }
    return m;
}

/// Same, from raw query text (both sides must tokenize).
inline ErrorMatrix error_matrix(const std::vector<std::pair<std::string, std::string>>& pairs,
                                const sparqltok::KbMembership& kb = sparqltok::KbMembership::trust_all(),
                                const sparqltok::ClassifierConfig& cfg = sparqltok::ClassifierConfig::defaults()) {
    std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> toks;
    toks.reserve(pairs.size());
    for (const auto& [ref, pred] : pairs)
        toks.emplace_back(sparqltok::tokenize_query(ref), sparqltok::tokenize_query(pred));
    return error_matrix_from_tokens(toks, kb, cfg);
}

inline nlohmann::json alignment_to_json(const std::vector<std::string>& ref,
                                        const std::vector<std::string>& pred, const Alignment& a) {
    nlohmann::json ops = nlohmann::json::array();
    for (const auto& op : a.ops) {
        const char* kind = op.kind == EditOp::Kind::Match        ? "match"
                           : op.kind == EditOp::Kind::Substitute ? "substitute"
                           : op.kind == EditOp::Kind::Insert     ? "insert"
                                                                 : "delete";
        nlohmann::json o{{"op", kind}};
        if (op.ref_idx >= 0) {
            o["ref_idx"] = op.ref_idx;
            o["ref"] = ref[size_t(op.ref_idx)];
        }
        if (op.pred_idx >= 0) {
            o["pred_idx"] = op.pred_idx;
            o["pred"] = pred[size_t(op.pred_idx)];
        }
        ops.push_back(std::move(o));
    }
    return nlohmann::json{{"cost", a.cost}, {"ops", std::move(ops)}};
}

inline nlohmann::json matrix_to_json(const ErrorMatrix& m) {
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& row : m.counts) counts.push_back(row);
    return nlohmann::json{
        {"counts", std::move(counts)}, {"insertions", m.insertions}, {"deletions", m.deletions}};
}

inline ErrorMatrix matrix_from_json(const nlohmann::json& j) {
    ErrorMatrix m;
    const auto& counts = j.at("counts");
    for (size_t r = 0; r < m.counts.size(); ++r)
        for (size_t c = 0; c < m.counts[r].size(); ++c)
            m.counts[r][c] = counts.at(r).at(c).get<size_t>();
    for (size_t c = 0; c < m.insertions.size(); ++c)
        m.insertions[c] = j.at("insertions").at(c).get<size_t>();
    for (size_t r = 0; r < m.deletions.size(); ++r)
        m.deletions[r] = j.at("deletions").at(r).get<size_t>();
    return m;
}

// ---------------------------------------------------------------------------
// rendering

struct RenderedReport {
    std::string markdown;
    std::string csv;
};

inline long pct(double v) { return std::lround(v); }

/// Confusion grid + overall per-reference-type distribution + headline metric
/// line, in Markdown and CSV. Percentages print in integer style.
inline RenderedReport render_report(const ErrorMatrix& m, const metrics::RunReport& run) {
    using sparqltok::label_name;
    RenderedReport out;

    std::string md;
    md += "## Error distribution (% per reference row)\n\n";
    md += "| Ref \\ Pred |";
    for (auto t : kPredTypes) md += std::string(" ") + label_name(t) + " |";
    md += "\n|---|";
    for (size_t c = 0; c < kPredTypes.size(); ++c) md += "---:|";
    md += "\n";
    for (size_t r = 0; r < kRefTypes.size(); ++r) {
        auto row = m.row_percentages(r);
        md += std::string("| ") + label_name(kRefTypes[r]) + " |";
        for (double v : row) md += " " + std::to_string(pct(v)) + " |";
        md += "\n";
    }
    md += "\nInsertions by predicted type:";
    for (size_t c = 0; c < kPredTypes.size(); ++c)
        md += std::string(" ") + label_name(kPredTypes[c]) + "=" + std::to_string(m.insertions[c]);
    md += "\nDeletions by reference type:";
    for (size_t r = 0; r < kRefTypes.size(); ++r)
        md += std::string(" ") + label_name(kRefTypes[r]) + "=" + std::to_string(m.deletions[r]);
    md += "\n\nOverall error distribution by reference type:";
    auto summary = m.summary_percentages();
    for (size_t r = 0; r < kRefTypes.size(); ++r) {
        md += std::string(" ") + label_name(kRefTypes[r]) + " " + std::to_string(pct(summary[r])) + "%";
        if (r + 1 < kRefTypes.size()) md += " --";
    }
    md += "\n\nBLEU: " + std::to_string(pct(run.bleu)) + "% -- ANSWER ACC: " +
          std::to_string(pct(run.accuracy * 100.0)) + "% -- ANSWER F1: " +
          std::to_string(pct(run.f1 * 100.0)) + "%\n";
    if (run.incomplete) md += "\n(warning: endpoint unavailable, answer metrics incomplete)\n";
    out.markdown = md;

    std::string csv;
    csv += "ref_type";
    for (auto t : kPredTypes) csv += std::string(",") + label_name(t);
    csv += "\n";
    for (size_t r = 0; r < kRefTypes.size(); ++r) {
        auto row = m.row_percentages(r);
        csv += label_name(kRefTypes[r]);
        for (double v : row) csv += "," + std::to_string(pct(v));
        csv += "\n";
    }
    csv += "insertions";
    for (size_t c = 0; c < kPredTypes.size(); ++c) csv += "," + std::to_string(m.insertions[c]);
    csv += "\ndeletions";
    for (size_t r = 0; r < kRefTypes.size(); ++r) csv += "," + std::to_string(m.deletions[r]);
    csv += "\nsummary_ref_type";
    for (auto t : kRefTypes) csv += std::string(",") + label_name(t);
    csv += "\nsummary_percent";
    for (size_t r = 0; r < kRefTypes.size(); ++r) csv += "," + std::to_string(pct(summary[r]));
    csv += "\nmetric,BLEU,Acc.,F1\nvalue," + std::to_string(pct(run.bleu)) + "," +
           std::to_string(pct(run.accuracy * 100.0)) + "," + std::to_string(pct(run.f1 * 100.0)) +
           "\n";
    out.csv = csv;
    return out;
}

}  // namespace sparqlgen::erroranalysis
