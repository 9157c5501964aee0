#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparqlgen/answers.hpp"
#include "sparqlgen/corpus.hpp"
#include "sparqlgen/endpoint.hpp"
#include "sparqlgen/sparqltok.hpp"
#include "sparqlgen/text.hpp"

/// Evaluation metrics: corpus BLEU over query token sequences, answer accuracy
/// and answer F1 over normalized answer sets, and multi-seed aggregation.
namespace sparqlgen::metrics {

using answers::AnswerSet;

namespace detail {

/// n-gram counts keyed by the joined token string.
inline std::unordered_map<std::string, size_t> ngram_counts(const std::vector<std::string>& toks,
                                                            size_t n) {
    std::unordered_map<std::string, size_t> out;
    if (toks.size() < n) return out;
    for (size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key;
        for (size_t k = 0; k < n; ++k) {
            key += toks[i + k];
            key += '\x1f';
        }
        ++out[key];
    }
    return out;
}

struct BleuTallies {
    size_t matched[4] = {0, 0, 0, 0};
    size_t total[4] = {0, 0, 0, 0};
    size_t pred_len = 0;
    size_t ref_len = 0;

    void add_pair(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
        pred_len += pred.size();
        ref_len += ref.size();
        for (size_t n = 1; n <= 4; ++n) {
            auto pc = ngram_counts(pred, n);
            auto rc = ngram_counts(ref, n);
            for (const auto& [gram, cnt] : pc) {
                total[n - 1] += cnt;
                auto it = rc.find(gram);
                if (it != rc.end()) matched[n - 1] += std::min(cnt, it->second);
            }
        }
    }

    /// Geometric mean of the clipped precisions over all orders that occur,
    /// times the brevity penalty. Any zero precision among occurring orders
    /// zeroes the score. Returns a percentage.
    double score(double smoothing_eps = 0.0) const {
        if (pred_len == 0) return 0.0;
        double log_sum = 0.0;
        size_t orders = 0;
        for (size_t n = 0; n < 4; ++n) {
            if (total[n] == 0) continue;
            ++orders;
            double p = (double(matched[n]) + smoothing_eps) / (double(total[n]) + smoothing_eps);
            if (p <= 0.0) return 0.0;
            log_sum += std::log(p);
        }
        if (orders == 0) return 0.0;
        double geo = std::exp(log_sum / double(orders));
        double bp = pred_len >= ref_len
                        ? 1.0
                        : std::exp(1.0 - double(ref_len) / double(pred_len));
        return 100.0 * bp * geo;
    }
};

}  // namespace detail

/// Corpus-level BLEU-4 (uniform weights, brevity penalty) as a percentage.
inline double corpus_bleu(const std::vector<std::vector<std::string>>& preds,
                          const std::vector<std::vector<std::string>>& refs) {
    if (preds.size() != refs.size())
        throw std::invalid_argument("corpus_bleu: prediction/reference count mismatch");
    detail::BleuTallies t;
    for (size_t i = 0; i < preds.size(); ++i) t.add_pair(preds[i], refs[i]);
    return t.score();
}

/// Single-pair diagnostic BLEU with additive smoothing (never degenerates to
/// zero from one missing n-gram order).
inline double sentence_bleu(const std::vector<std::string>& pred,
                            const std::vector<std::string>& ref, double eps = 0.1) {
    detail::BleuTallies t;
    t.add_pair(pred, ref);
    return t.score(eps);
}

/// Exact-match comparison: kinds equal and payloads equal. A prediction that
/// failed at the endpoint is always wrong.
inline bool answer_accuracy(const AnswerSet& pred, const AnswerSet& gold) {
    using K = AnswerSet::Kind;
    if (pred.kind == K::Error) return false;
    if (pred.kind != gold.kind) return false;
    if (pred.kind == K::Boolean) return pred.boolean == gold.boolean;
    return pred.values == gold.values;
}

/// Set-overlap F1; booleans score 1 on equality and 0 otherwise; error or empty
/// predictions score 0.
inline double answer_f1(const AnswerSet& pred, const AnswerSet& gold) {
    using K = AnswerSet::Kind;
    if (pred.kind == K::Error) return 0.0;
    if (pred.kind == K::Boolean || gold.kind == K::Boolean)
        return answer_accuracy(pred, gold) ? 1.0 : 0.0;
    if (pred.values.empty() || gold.values.empty()) return 0.0;
    size_t inter = 0;
    for (const auto& v : pred.values) inter += gold.values.count(v);
    if (inter == 0) return 0.0;
    double precision = double(inter) / double(pred.values.size());
    double recall = double(inter) / double(gold.values.size());
    return 2.0 * precision * recall / (precision + recall);
}

struct EntryScore {
    std::string entry_id;
    double bleu = 0.0;        // smoothed sentence BLEU, diagnostic only
    bool answer_correct = false;
    double answer_f1 = 0.0;
};

struct RunReport {
    double bleu = 0.0;       // corpus BLEU percentage
    double accuracy = 0.0;   // fraction in [0,1]
    double f1 = 0.0;         // mean per-entry F1 in [0,1]
    size_t entry_count = 0;
    double retention = 1.0;
    bool incomplete = false;  // endpoint batch failure: answer metrics missing
    std::string subset_digest;
    std::vector<EntryScore> per_entry;
    std::vector<double> seed_bleu, seed_accuracy, seed_f1;  // filled by aggregation
};

/// Order-insensitive digest of the evaluated entry ids, used to refuse
/// aggregation across different test subsets.
inline std::string subset_digest(const std::vector<corpus::Entry>& entries) {
    std::set<std::string> ids;
    for (const auto& e : entries) ids.insert(e.id);
    std::string joined;
    for (const auto& id : ids) {
        joined += id;
        joined += '\n';
    }
    return text::hex64(text::fnv1a(joined));
}

/// Score one run: corpus BLEU against the gold query tokens, then execute each
/// predicted query and compare answer sets. entries must already be enriched
/// and non-empty-filtered. If the endpoint itself is down, BLEU is still
/// reported and the result is flagged incomplete instead of aborting.
inline RunReport evaluate_run(const std::vector<std::vector<std::string>>& predictions,
                              const std::vector<corpus::Entry>& entries,
                              const endpoint::Client& client, double retention = 1.0) {
    if (predictions.size() != entries.size())
        throw std::invalid_argument("evaluate_run: " + std::to_string(predictions.size()) +
                                    " predictions for " + std::to_string(entries.size()) +
                                    " entries");
    RunReport rep;
    rep.entry_count = entries.size();
    rep.retention = retention;
    rep.subset_digest = subset_digest(entries);

    std::vector<std::vector<std::string>> refs;
    refs.reserve(entries.size());
    for (const auto& e : entries) refs.push_back(sparqltok::tokenize_query(e.query));
    rep.bleu = corpus_bleu(predictions, refs);

    for (size_t i = 0; i < entries.size(); ++i) {
        EntryScore s;
        s.entry_id = entries[i].id;
        s.bleu = sentence_bleu(predictions[i], refs[i]);
        rep.per_entry.push_back(s);
    }

    AnswerSet probe = client.execute("ASK { }");
    if (probe.kind == AnswerSet::Kind::Error) {
        rep.incomplete = true;
        return rep;
    }

    std::vector<std::string> pred_queries;
    pred_queries.reserve(predictions.size());
    for (const auto& toks : predictions) pred_queries.push_back(sparqltok::detokenize(toks));
    std::vector<AnswerSet> pred_answers = client.execute_many(pred_queries);

    size_t correct = 0;
    double f1_sum = 0.0;
    for (size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].gold_answers)
            throw std::runtime_error("entry " + entries[i].id + " has no gold answers");
        const AnswerSet& gold = *entries[i].gold_answers;
        bool ok = answer_accuracy(pred_answers[i], gold);
        double f1 = answer_f1(pred_answers[i], gold);
        rep.per_entry[i].answer_correct = ok;
        rep.per_entry[i].answer_f1 = f1;
        correct += ok ? 1 : 0;
        f1_sum += f1;
    }
    if (!entries.empty()) {
        rep.accuracy = double(correct) / double(entries.size());
        rep.f1 = f1_sum / double(entries.size());
    }
    return rep;
}

/// Arithmetic mean over same-subset runs; the per-seed values are retained.
inline RunReport aggregate_runs(const std::vector<RunReport>& runs) {
    if (runs.empty()) throw std::invalid_argument("aggregate_runs: no runs given");
    for (const auto& r : runs) {
        if (r.subset_digest != runs.front().subset_digest || r.entry_count != runs.front().entry_count)
            throw std::runtime_error("aggregate_runs: runs cover different test subsets");
    }
    RunReport out;
    out.entry_count = runs.front().entry_count;
    out.retention = runs.front().retention;
    out.subset_digest = runs.front().subset_digest;
    for (const auto& r : runs) {
        out.bleu += r.bleu;
        out.accuracy += r.accuracy;
        out.f1 += r.f1;
        out.incomplete = out.incomplete || r.incomplete;
        out.seed_bleu.push_back(r.bleu);
        out.seed_accuracy.push_back(r.accuracy);
        out.seed_f1.push_back(r.f1);
    }
    out.bleu /= double(runs.size());
    out.accuracy /= double(runs.size());
    out.f1 /= double(runs.size());
    return out;
}

inline nlohmann::json report_to_json(const RunReport& r) {
    nlohmann::json j;
    j["bleu"] = r.bleu;
    j["accuracy"] = r.accuracy;
    j["f1"] = r.f1;
    j["entry_count"] = r.entry_count;
    j["retention"] = r.retention;
    j["incomplete"] = r.incomplete;
    j["subset_digest"] = r.subset_digest;
    if (!r.seed_bleu.empty()) {
        j["seed_bleu"] = r.seed_bleu;
        j["seed_accuracy"] = r.seed_accuracy;
        j["seed_f1"] = r.seed_f1;
    }
    return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
    RunReport r;
    r.bleu = j.at("bleu").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.entry_count = j.at("entry_count").get<size_t>();
    r.retention = j.value("retention", 1.0);
    r.incomplete = j.value("incomplete", false);
    r.subset_digest = j.value("subset_digest", "");
    if (j.contains("seed_bleu")) {
        for (const auto& v : j.at("seed_bleu")) r.seed_bleu.push_back(v.get<double>());
        for (const auto& v : j.at("seed_accuracy")) r.seed_accuracy.push_back(v.get<double>());
        for (const auto& v : j.at("seed_f1")) r.seed_f1.push_back(v.get<double>());
    }
    return r;
}

/// Per-entry scores as JSON Lines, for downstream error analysis.
inline std::string per_entry_jsonl(const RunReport& r) {
    std::string out;
    for (const auto& s : r.per_entry) {
        nlohmann::json j{{"id", s.entry_id},
                         {"bleu", s.bleu},
                         {"answer_correct", s.answer_correct},
                         {"answer_f1", s.answer_f1}};
        out += j.dump();
        out += "\n";
    }
    return out;
}

}  // namespace sparqlgen::metrics
