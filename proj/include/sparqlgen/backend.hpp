#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparqlgen/autodiff.hpp"
#include "sparqlgen/rng.hpp"
#include "sparqlgen/vocab.hpp"

/// Encoder-decoder backends behind a narrow contract: per decoding step the
/// backend exposes raw logits over the structure-vocabulary space and one
/// normalized cross-attention row per head. The copy layer consumes exactly
/// that and nothing else, so backends are swappable.
namespace sparqlgen::backend {

struct BackendConfig {
    std::string kind = "toy-gru";
    size_t embed_dim = 48;
    size_t hidden_dim = 64;
    size_t attention_heads = 2;
    long designated_head = -1;  // -1 → last head
    double dropout = 0.0;       // recorded for parity with large presets; unused at toy scale
    uint64_t init_seed = 1;

    size_t copy_head_index() const {
        if (designated_head >= 0) return size_t(designated_head);
        return attention_heads - 1;
    }
};

/// What the previous output token was, for feeding the decoder input: a
/// structure-space row, the begin marker, or a copied KB token (all copied
/// tokens share one embedding — the decoder only needs to know "a copy
/// happened here", the identity lives in the candidate table).
struct PrevToken {
    enum class Kind { Bos, Structure, Copied };
    Kind kind = Kind::Bos;
    size_t s_index = 0;  // valid when kind == Structure
};

struct Encoded {
    std::vector<ad::Tape::Var> states;  // per input position, 1×H
    ad::Tape::Var matrix;               // L×H
    ad::Tape::Var last;                 // 1×H
    size_t length = 0;
};

struct StepOut {
    ad::Tape::Var logits;                        // 1×|S-space|, raw scores
    std::vector<ad::Tape::Var> attention_rows;   // per head, 1×L, each sums to 1
    ad::Tape::Var state;                         // decoder hidden after the step, 1×H
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual const BackendConfig& config() const = 0;
    virtual size_t s_space_size() const = 0;
    virtual std::vector<ad::Param*> params() = 0;
    virtual Encoded encode(ad::Tape& tape, const std::vector<int>& input_ids) = 0;
    virtual ad::Tape::Var initial_state(ad::Tape& tape, const Encoded& enc) = 0;
    virtual StepOut step(ad::Tape& tape, const Encoded& enc, ad::Tape::Var prev_state,
                         const PrevToken& prev) = 0;
};

namespace detail {

struct GruCell {
    ad::Param Wz, Wr, Wn;  // input→hidden
    ad::Param Uz, Ur, Un;  // hidden→hidden
    ad::Param bz, br, bn;

    GruCell() = default;
    GruCell(const std::string& prefix, size_t in_dim, size_t hidden)
        : Wz(prefix + ".Wz", in_dim, hidden), Wr(prefix + ".Wr", in_dim, hidden),
          Wn(prefix + ".Wn", in_dim, hidden), Uz(prefix + ".Uz", hidden, hidden),
          Ur(prefix + ".Ur", hidden, hidden), Un(prefix + ".Un", hidden, hidden),
          bz(prefix + ".bz", 1, hidden), br(prefix + ".br", 1, hidden),
          bn(prefix + ".bn", 1, hidden) {}

    void init(rng::Rng& gen, double scale) {
        for (ad::Param* p : params()) init_uniform(*p, gen, scale);
    }

    std::vector<ad::Param*> params() {
        return {&Wz, &Wr, &Wn, &Uz, &Ur, &Un, &bz, &br, &bn};
    }

    ad::Tape::Var step(ad::Tape& t, ad::Tape::Var x, ad::Tape::Var h) {
        ad::Tape::Var z = t.sigmoid(t.add(t.add(t.matmul(x, t.leaf(Wz)), t.matmul(h, t.leaf(Uz))),
                                          t.leaf(bz)));
        ad::Tape::Var r = t.sigmoid(t.add(t.add(t.matmul(x, t.leaf(Wr)), t.matmul(h, t.leaf(Ur))),
                                          t.leaf(br)));
        ad::Tape::Var n = t.tanh_op(t.add(
            t.add(t.matmul(x, t.leaf(Wn)), t.matmul(t.hadamard(r, h), t.leaf(Un))), t.leaf(bn)));
        // h' = (1−z)⊙h + z⊙n
        ad::Tape::Var one_minus_z = t.add_const(t.scale(z, -1.0), 1.0);
        return t.add(t.hadamard(one_minus_z, h), t.hadamard(z, n));
    }
};

}  // namespace detail

/// Small unidirectional GRU encoder-decoder with bilinear multi-head
/// cross-attention, written for desk-scale experiments. The decoder input
/// vocabulary is the structure space plus begin-of-sequence and the shared
/// copied-token embedding.
class ToyGruBackend : public Backend {
public:
    ToyGruBackend(BackendConfig cfg, size_t input_vocab_size, size_t s_space)
        : cfg_(std::move(cfg)), s_space_(s_space),
          emb_("emb", input_vocab_size, cfg_.embed_dim),
          dec_emb_("dec_emb", s_space + 2, cfg_.embed_dim),  // +BOS, +copied
          enc_("enc", cfg_.embed_dim, cfg_.hidden_dim),
          dec_("dec", cfg_.embed_dim, cfg_.hidden_dim),
          Wo_("Wo", cfg_.hidden_dim * (1 + cfg_.attention_heads), s_space),
          bo_("bo", 1, s_space) {
        if (cfg_.attention_heads < 1) throw std::invalid_argument("need at least one attention head");
        if (cfg_.copy_head_index() >= cfg_.attention_heads)
            throw std::invalid_argument("designated attention head out of range");
        for (size_t h = 0; h < cfg_.attention_heads; ++h)
            attn_.emplace_back("attn" + std::to_string(h), cfg_.hidden_dim, cfg_.hidden_dim);
        rng::Rng gen(cfg_.init_seed);
        double scale = 0.08;
        init_uniform(emb_, gen, scale);
        init_uniform(dec_emb_, gen, scale);
        enc_.init(gen, scale);
        dec_.init(gen, scale);
        for (auto& a : attn_) init_uniform(a, gen, scale);
        init_uniform(Wo_, gen, scale);
        init_uniform(bo_, gen, scale);
    }

    const BackendConfig& config() const override { return cfg_; }
    size_t s_space_size() const override { return s_space_; }

    std::vector<ad::Param*> params() override {
        std::vector<ad::Param*> out{&emb_, &dec_emb_, &Wo_, &bo_};
        for (ad::Param* p : enc_.params()) out.push_back(p);
        for (ad::Param* p : dec_.params()) out.push_back(p);
        for (auto& a : attn_) out.push_back(&a);
        return out;
    }

    Encoded encode(ad::Tape& tape, const std::vector<int>& input_ids) override {
        if (input_ids.empty()) throw std::invalid_argument("cannot encode an empty input");
        Encoded enc;
        enc.length = input_ids.size();
        ad::Tape::Var h = tape.input(ad::Tensor(1, cfg_.hidden_dim));
        for (int id : input_ids) {
            if (id < 0 || size_t(id) >= emb_.value.rows)
                throw std::out_of_range("input token id outside embedding table");
            ad::Tape::Var x = tape.row(emb_, size_t(id));
            h = enc_.step(tape, x, h);
            enc.states.push_back(h);
        }
        enc.matrix = tape.stack_rows(enc.states);
        enc.last = h;
        return enc;
    }

    ad::Tape::Var initial_state(ad::Tape& tape, const Encoded& enc) override {
        (void)tape;
        return enc.last;
    }

    StepOut step(ad::Tape& tape, const Encoded& enc, ad::Tape::Var prev_state,
                 const PrevToken& prev) override {
        size_t row;
        switch (prev.kind) {
            case PrevToken::Kind::Bos: row = s_space_; break;
            case PrevToken::Kind::Copied: row = s_space_ + 1; break;
            default:
                if (prev.s_index >= s_space_)
                    throw std::out_of_range("structure token index outside S-space");
                row = prev.s_index;
        }
        ad::Tape::Var x = tape.row(dec_emb_, row);
        ad::Tape::Var h = dec_.step(tape, x, prev_state);

        StepOut out;
        out.state = h;
        std::vector<ad::Tape::Var> ctx;
        for (auto& a : attn_) {
            ad::Tape::Var scores = tape.matmul(tape.matmul(h, tape.leaf(a)), enc.matrix, false, true);
            ad::Tape::Var attn = tape.softmax_rows(scores);  // 1×L
            out.attention_rows.push_back(attn);
            ctx.push_back(tape.matmul(attn, enc.matrix));    // 1×H
        }
        ad::Tape::Var feats = h;
        for (auto& c : ctx) feats = tape.concat_cols(feats, c);
        out.logits = tape.add(tape.matmul(feats, tape.leaf(Wo_)), tape.leaf(bo_));
        return out;
    }

private:
    BackendConfig cfg_;
    size_t s_space_;
    ad::Param emb_, dec_emb_;
    detail::GruCell enc_, dec_;
    std::vector<ad::Param> attn_;
    ad::Param Wo_, bo_;
};

inline std::unique_ptr<Backend> make_backend(const BackendConfig& cfg, size_t input_vocab_size,
                                             size_t s_space) {
    if (cfg.kind == "toy-gru") return std::make_unique<ToyGruBackend>(cfg, input_vocab_size, s_space);
    throw std::invalid_argument("unknown backend kind: " + cfg.kind +
                                " (this build ships the desk-scale 'toy-gru' backend; the large "
                                "presets configure it rather than selecting another architecture)");
}

}  // namespace sparqlgen::backend
