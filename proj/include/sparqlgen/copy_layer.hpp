#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparqlgen/autodiff.hpp"
#include "sparqlgen/vocab.hpp"

/// The copy-mechanism decoding layer: a learned gate mixes the decoder's
/// generation distribution over the structure vocabulary with a copy
/// distribution over the KB candidates present in the masked input. Copying is
/// structurally restricted to input candidates, so an absent KB token can never
/// receive probability mass.
namespace sparqlgen::copynet {

/// Learned gate weights; must match the decoder logit dimension.
struct CopyHead {
    std::vector<double> B;
};

/// Unique candidate tokens of one masked input, each with the input positions
/// where it occurs (a URI may be masked at several positions).
struct CandidateTable {
    std::vector<std::string> tokens;               // unique, in first-appearance order
    std::vector<std::vector<size_t>> positions;    // parallel to tokens

    static CandidateTable from(const std::vector<std::pair<size_t, std::string>>& candidates) {
        CandidateTable t;
        std::map<std::string, size_t> index;
        for (const auto& [pos, tok] : candidates) {
            auto it = index.find(tok);
            if (it == index.end()) {
                index.emplace(tok, t.tokens.size());
                t.tokens.push_back(tok);
                t.positions.push_back({pos});
            } else {
                t.positions[it->second].push_back(pos);
            }
        }
        return t;
    }

    bool empty() const { return tokens.empty(); }
    size_t size() const { return tokens.size(); }

    std::vector<size_t> flat_positions() const {
        std::vector<size_t> out;
        for (const auto& ps : positions) out.insert(out.end(), ps.begin(), ps.end());
        return out;
    }
};

// ---------------------------------------------------------------------------
// pure numeric path (used by decoding and by property tests)

/// σ(dec_logits · B); strictly inside (0,1).
inline double copy_gate(const std::vector<double>& dec_logits, const CopyHead& head) {
    if (dec_logits.size() != head.B.size())
        throw std::invalid_argument("copy_gate: logit dimension " +
                                    std::to_string(dec_logits.size()) + " does not match |B| " +
                                    std::to_string(head.B.size()));
    double dot = 0.0;
    for (size_t i = 0; i < head.B.size(); ++i) dot += dec_logits[i] * head.B[i];
    return 1.0 / (1.0 + std::exp(-dot));
}

/// Numerically stable softmax.
inline std::vector<double> stable_softmax(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    if (x.empty()) return out;
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double sum = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

/// Generation distribution over the structure vocabulary.
inline std::vector<double> generation_distribution(const std::vector<double>& dec_logits) {
    return stable_softmax(dec_logits);
}

struct CopyDistributionResult {
    std::vector<double> p_c;      // per unique candidate token; empty when no candidates
    bool empty_candidates = true; // forces the combined step to use p_G alone
};

/// Softmax over the designated head's attention values at the candidate
/// positions, then per-token aggregation: a token masked at several positions
/// receives the sum of its positions' post-softmax mass.
inline CopyDistributionResult copy_distribution(const std::vector<double>& attention_row,
                                                const CandidateTable& candidates) {
    CopyDistributionResult out;
    if (candidates.empty()) return out;
    out.empty_candidates = false;
    std::vector<double> at;
    for (const auto& ps : candidates.positions)
        for (size_t p : ps) {
            if (p >= attention_row.size())
                throw std::out_of_range("candidate position " + std::to_string(p) +
                                        " outside attention row of length " +
                                        std::to_string(attention_row.size()));
            at.push_back(attention_row[p]);
        }
    std::vector<double> sm = stable_softmax(at);
    out.p_c.assign(candidates.size(), 0.0);
    size_t k = 0;
    for (size_t t = 0; t < candidates.size(); ++t)
        for (size_t i = 0; i < candidates.positions[t].size(); ++i) out.p_c[t] += sm[k++];
    return out;
}

/// Combined distribution over [ structure vocabulary | unique candidates ].
struct CopyDistribution {
    double p_copy = 0.0;
    std::vector<double> p_g;
    std::vector<double> p_c;
    std::vector<double> p_t;
};

/// p_t = p_copy · p_C + (1 − p_copy) · p_G, laid out as [S-space | candidates].
/// With no candidates the gate is bypassed and p_t = p_G exactly. Component
/// distributions whose sums are off by more than 1e-4 indicate corrupted
/// upstream state and raise an error.
inline CopyDistribution combine(const std::vector<double>& p_g, const CopyDistributionResult& pc,
                                double p_copy) {
    auto check_sum = [](const std::vector<double>& v, const char* what) {
        double s = 0.0;
        for (double x : v) {
            if (x < -1e-12) throw std::runtime_error(std::string(what) + " has negative mass");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-4)
            throw std::runtime_error(std::string(what) + " does not sum to 1 (got " +
                                     std::to_string(s) + ")");
    };
    if (p_copy < 0.0 || p_copy > 1.0) throw std::runtime_error("p_copy outside [0,1]");
    check_sum(p_g, "generation distribution");
    CopyDistribution out;
    out.p_g = p_g;
    out.p_copy = p_copy;
    if (pc.empty_candidates) {
        out.p_t = p_g;
        return out;
    }
    check_sum(pc.p_c, "copy distribution");
    out.p_c = pc.p_c;
    out.p_t.resize(p_g.size() + pc.p_c.size());
    for (size_t i = 0; i < p_g.size(); ++i) out.p_t[i] = (1.0 - p_copy) * p_g[i];
    for (size_t i = 0; i < pc.p_c.size(); ++i) out.p_t[p_g.size() + i] = p_copy * pc.p_c[i];
    return out;
}

/// Argmax with ties broken toward the lowest index.
inline size_t argmax_lowest(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("argmax of empty vector");
    size_t best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// tape path (training)

/// Differentiable combined distribution for one decoding step.
/// dec_logits: 1×|S-space|; attention_row: 1×L (already normalized over input
/// positions); B: |S-space|×1 gate weights. Returns p_t as a
/// 1×(|S-space| + |unique candidates|) tape variable.
inline ad::Tape::Var combined_step(ad::Tape& tape, ad::Tape::Var dec_logits,
                                   ad::Tape::Var attention_row, ad::Tape::Var B,
                                   const CandidateTable& candidates) {
    if (dec_logits.rows != 1) throw std::invalid_argument("combined_step: dec_logits must be 1×n");
    if (B.cols != 1 || B.rows != dec_logits.cols)
        throw std::invalid_argument("combined_step: B must be |logits|×1");
    ad::Tape::Var p_g = tape.softmax_rows(dec_logits);
    if (candidates.empty()) return p_g;

    ad::Tape::Var gate_logit = tape.matmul(dec_logits, B);      // 1×1
    ad::Tape::Var p_copy = tape.sigmoid(gate_logit);            // 1×1
    ad::Tape::Var keep = tape.add_const(tape.scale(p_copy, -1.0), 1.0);  // 1 − p_copy

    ad::Tape::Var at = tape.gather_cols(attention_row, candidates.flat_positions());
    ad::Tape::Var sm = tape.softmax_rows(at);                   // 1×P over candidate positions
    // aggregate duplicate tokens: 0/1 matrix (P × unique tokens)
    size_t total_positions = 0;
    for (const auto& ps : candidates.positions) total_positions += ps.size();
    ad::Tensor agg(total_positions, candidates.size());
    size_t k = 0;
    for (size_t t = 0; t < candidates.size(); ++t)
        for (size_t i = 0; i < candidates.positions[t].size(); ++i) agg.at(k++, t) = 1.0;
    ad::Tape::Var p_c = tape.matmul(sm, tape.input(std::move(agg)));  // 1×unique

    ad::Tape::Var left = tape.mul_scalar(p_g, keep);
    ad::Tape::Var right = tape.mul_scalar(p_c, p_copy);
    return tape.concat_cols(left, right);
}

/// Where a gold token lives in the combined layout: structure-vocabulary slot,
/// candidate slot, or nowhere (an annotation bug upstream).
struct TargetSlot {
    bool found = false;
    size_t index = 0;  // into the combined [S-space | candidates] vector
};

inline TargetSlot locate_target(const std::string& gold_token,
                                const std::map<std::string, size_t>& s_space_index,
                                const CandidateTable& candidates) {
    TargetSlot t;
    if (auto it = s_space_index.find(gold_token); it != s_space_index.end()) {
        t.found = true;
        t.index = it->second;
        return t;
    }
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (candidates.tokens[i] == gold_token) {
            t.found = true;
            t.index = s_space_index.size() + i;
            return t;
        }
    }
    return t;
}

}  // namespace sparqlgen::copynet
