#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparqlgen/autodiff.hpp"
#include "sparqlgen/backend.hpp"
#include "sparqlgen/copy_layer.hpp"
#include "sparqlgen/metrics.hpp"
#include "sparqlgen/rng.hpp"
#include "sparqlgen/vocab.hpp"

/// Training and inference harness for copy-mechanism models: teacher-forced
/// negative log-likelihood over the combined distribution, plain SGD and Adam
/// with optional warmup/decay scheduling and gradient accumulation, checkpoint
/// + manifest persistence with resume, greedy decoding, and the three-seed
/// experiment protocol.
namespace sparqlgen::training {

// ---------------------------------------------------------------------------
// configuration

struct OptimizerConfig {
    std::string kind = "adam";  // "sgd" | "adam"
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::string scheduler = "none";  // "none" | "poly-warmup"
    size_t warmup_steps = 0;
    size_t total_steps = 0;  // required by poly-warmup
    double power = 1.0;
    double clip_norm = 0.0;  // 0 disables clipping
};

struct TrainConfig {
    size_t epochs = 10;
    size_t batch_size = 16;
    size_t grad_accum = 1;  // micro-batches per optimizer step
    uint64_t seed = 1;
    size_t max_output_len = 64;
    double loss_floor = 1e-12;  // inside log()
    OptimizerConfig opt;
    backend::BackendConfig backend;
    std::string checkpoint_dir;  // empty → no checkpoints

    nlohmann::json to_json() const {
        return nlohmann::json{
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"grad_accum", grad_accum},
            {"seed", seed},
            {"max_output_len", max_output_len},
            {"opt",
             {{"kind", opt.kind},
              {"lr", opt.lr},
              {"scheduler", opt.scheduler},
              {"warmup_steps", opt.warmup_steps},
              {"total_steps", opt.total_steps},
              {"power", opt.power},
              {"clip_norm", opt.clip_norm}}},
            {"backend",
             {{"kind", backend.kind},
              {"embed_dim", backend.embed_dim},
              {"hidden_dim", backend.hidden_dim},
              {"attention_heads", backend.attention_heads},
              {"designated_head", backend.designated_head},
              {"dropout", backend.dropout}}}};
    }
};

/// Hash of everything that determines a run's artifacts, for content-addressed
/// stages and resume-compatibility checks.
inline std::string config_hash(const TrainConfig& cfg, const std::string& extra = "") {
    return text::hex64(text::fnv1a(cfg.to_json().dump() + "\n" + extra));
}

// ---------------------------------------------------------------------------
// examples and model

/// One preprocessed example: masked encoder input ids, the candidate table
/// extracted from the mask positions, and the gold query token strings.
struct Example {
    std::string id;
    std::vector<int> input_ids;
    copynet::CandidateTable candidates;
    std::vector<std::string> gold_tokens;
};

inline Example make_example(const std::string& id, const vocab::MaskedInput& masked,
                            const std::vector<std::string>& gold_tokens,
                            const vocab::TriVocabulary& v) {
    Example e;
    e.id = id;
    e.input_ids = vocab::encode(masked.tokens, v);
    e.candidates = copynet::CandidateTable::from(masked.candidates);
    e.gold_tokens = gold_tokens;
    return e;
}

/// Backend plus copy head, with the generation space laid out as
/// [structure tokens in vocabulary order | end-of-sequence].
struct Model {
    std::unique_ptr<backend::Backend> net;
    ad::Param B;  // |S-space|×1 copy-gate weights
    std::vector<std::string> s_space_tokens;
    std::map<std::string, size_t> s_space_index;
    size_t eos_index = 0;

    size_t s_space() const { return s_space_tokens.size(); }
};

inline Model make_model(const vocab::TriVocabulary& v, backend::BackendConfig bcfg, uint64_t seed) {
    Model m;
    m.s_space_tokens = v.s_tokens();
    m.s_space_tokens.push_back(vocab::kEos);
    m.eos_index = m.s_space_tokens.size() - 1;
    for (size_t i = 0; i < m.s_space_tokens.size(); ++i) m.s_space_index[m.s_space_tokens[i]] = i;
    bcfg.init_seed = seed;
    m.net = backend::make_backend(bcfg, v.size(), m.s_space_tokens.size());
    m.B = ad::Param("copy.B", m.s_space_tokens.size(), 1);
    rng::Rng gen(seed ^ 0x9e3779b97f4a7c15ull);
    init_uniform(m.B, gen, 0.08);
    return m;
}

inline std::vector<ad::Param*> all_params(Model& m) {
    std::vector<ad::Param*> ps = m.net->params();
    ps.push_back(&m.B);
    return ps;
}

// ---------------------------------------------------------------------------
// forward pass

/// Teacher-forced forward for one example; appends the per-token −log p losses
/// (as 1×1 vars) to `step_losses`.
inline void forward_example(ad::Tape& tape, Model& model, const Example& ex, double loss_floor,
                            std::vector<ad::Tape::Var>& step_losses) {
    backend::Encoded enc = model.net->encode(tape, ex.input_ids);
    ad::Tape::Var state = model.net->initial_state(tape, enc);
    backend::PrevToken prev;  // BOS
    size_t copy_head = model.net->config().copy_head_index();
    ad::Tape::Var B = tape.leaf(model.B);

    std::vector<std::string> targets = ex.gold_tokens;
    targets.push_back(vocab::kEos);
    for (const std::string& gold : targets) {
        backend::StepOut so = model.net->step(tape, enc, state, prev);
        state = so.state;
        ad::Tape::Var p_t = copynet::combined_step(tape, so.logits, so.attention_rows[copy_head], B,
                                                   ex.candidates);
        copynet::TargetSlot slot = copynet::locate_target(gold, model.s_space_index, ex.candidates);
        if (!slot.found)
            throw std::runtime_error("entry " + ex.id + ": gold token '" + gold +
                                     "' is neither a structure token nor an input candidate");
        ad::Tape::Var p = tape.pick(p_t, 0, slot.index);
        ad::Tape::Var nll = tape.scale(tape.log_op(tape.add_const(p, loss_floor)), -1.0);
        step_losses.push_back(nll);

        if (slot.index < model.s_space()) {
            prev = {backend::PrevToken::Kind::Structure, slot.index};
        } else {
            prev = {backend::PrevToken::Kind::Copied, 0};
        }
    }
}

/// Mean −log p over every gold token in the batch, as a scalar tape var.
inline ad::Tape::Var batch_loss(ad::Tape& tape, Model& model, const std::vector<Example>& batch,
                                double loss_floor) {
    if (batch.empty()) throw std::invalid_argument("empty training batch");
    std::vector<ad::Tape::Var> losses;
    for (const Example& ex : batch) forward_example(tape, model, ex, loss_floor, losses);
    ad::Tape::Var sum = losses.front();
    for (size_t i = 1; i < losses.size(); ++i) sum = tape.add(sum, losses[i]);
    return tape.scale(sum, 1.0 / double(losses.size()));
}

/// One teacher-forced gradient step over a batch: zeroes gradients, runs
/// forward + backward, and returns the scalar loss. The caller owns the
/// optimizer update.
inline double train_step(Model& model, const std::vector<Example>& batch, double loss_floor = 1e-12) {
    for (ad::Param* p : all_params(model)) p->zero_grad();
    ad::Tape tape;
    ad::Tape::Var loss = batch_loss(tape, model, batch, loss_floor);
    tape.backward(loss);
    return tape.value(loss).at(0, 0);
}

/// Mean per-token NLL without touching gradients.
inline double evaluate_loss(Model& model, const std::vector<Example>& examples,
                            double loss_floor = 1e-12) {
    if (examples.empty()) return 0.0;
    double total = 0.0;
    size_t count = 0;
    for (const Example& ex : examples) {
        ad::Tape tape;
        std::vector<ad::Tape::Var> losses;
        forward_example(tape, model, ex, loss_floor, losses);
        for (auto& l : losses) {
            total += tape.value(l).at(0, 0);
            ++count;
        }
    }
    return count ? total / double(count) : 0.0;
}

// ---------------------------------------------------------------------------
// optimizers

class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, const std::vector<ad::Param*>& params) : cfg_(std::move(cfg)) {
        if (cfg_.kind != "sgd" && cfg_.kind != "adam")
            throw std::invalid_argument("unknown optimizer kind: " + cfg_.kind);
        if (cfg_.scheduler == "poly-warmup" && cfg_.total_steps == 0)
            throw std::invalid_argument("poly-warmup scheduler needs total_steps");
        for (ad::Param* p : params) {
            m_[p->name] = ad::Tensor(p->value.rows, p->value.cols);
            v_[p->name] = ad::Tensor(p->value.rows, p->value.cols);
        }
    }

    size_t step_count() const { return t_; }

    /// Current learning rate under the configured schedule.
    double lr_at(size_t step) const {
        double base = cfg_.lr;
        if (cfg_.scheduler == "none") return base;
        // polynomial decay with linear warmup
        if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps)
            return base * double(step + 1) / double(cfg_.warmup_steps);
        if (cfg_.total_steps <= cfg_.warmup_steps) return base;
        double progress = double(std::min(step, cfg_.total_steps) - cfg_.warmup_steps) /
                          double(cfg_.total_steps - cfg_.warmup_steps);
        return base * std::pow(1.0 - progress, cfg_.power);
    }

    /// Apply one update from the currently accumulated gradients.
    void step(const std::vector<ad::Param*>& params) {
        if (cfg_.clip_norm > 0.0) {
            double sq = 0.0;
            for (ad::Param* p : params)
                for (double g : p->grad.data) sq += g * g;
            double norm = std::sqrt(sq);
            if (norm > cfg_.clip_norm) {
                double scale = cfg_.clip_norm / norm;
                for (ad::Param* p : params)
                    for (double& g : p->grad.data) g *= scale;
            }
        }
        double lr = lr_at(t_);
        if (cfg_.kind == "sgd") {
            for (ad::Param* p : params)
                for (size_t i = 0; i < p->value.data.size(); ++i)
                    p->value.data[i] -= lr * p->grad.data[i];
        } else {
            double b1 = cfg_.beta1, b2 = cfg_.beta2;
            double bc1 = 1.0 - std::pow(b1, double(t_ + 1));
            double bc2 = 1.0 - std::pow(b2, double(t_ + 1));
            for (ad::Param* p : params) {
                ad::Tensor& m = m_.at(p->name);
                ad::Tensor& v = v_.at(p->name);
                for (size_t i = 0; i < p->value.data.size(); ++i) {
                    double g = p->grad.data[i];
                    m.data[i] = b1 * m.data[i] + (1.0 - b1) * g;
                    v.data[i] = b2 * v.data[i] + (1.0 - b2) * g * g;
                    double mhat = m.data[i] / bc1;
                    double vhat = v.data[i] / bc2;
                    p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                }
            }
        }
        ++t_;
    }

    nlohmann::json state_to_json() const {
        nlohmann::json j;
        j["t"] = t_;
        if (cfg_.kind == "adam") {
            nlohmann::json ms, vs;
            for (const auto& [name, m] : m_) ms[name] = m.data;
            for (const auto& [name, v] : v_) vs[name] = v.data;
            j["m"] = std::move(ms);
            j["v"] = std::move(vs);
        }
        return j;
    }

    void state_from_json(const nlohmann::json& j) {
        t_ = j.at("t").get<size_t>();
        if (cfg_.kind == "adam" && j.contains("m")) {
            for (auto& [name, m] : m_)
                if (j.at("m").contains(name))
                    m.data = j.at("m").at(name).get<std::vector<double>>();
            for (auto& [name, v] : v_)
                if (j.at("v").contains(name))
                    v.data = j.at("v").at(name).get<std::vector<double>>();
        }
    }

private:
    OptimizerConfig cfg_;
    size_t t_ = 0;
    std::map<std::string, ad::Tensor> m_, v_;
};

// ---------------------------------------------------------------------------
// checkpoints

inline nlohmann::json params_to_json(Model& model) {
    nlohmann::json j;
    for (ad::Param* p : all_params(model))
        j[p->name] = nlohmann::json{{"rows", p->value.rows}, {"cols", p->value.cols},
                                    {"data", p->value.data}};
    return j;
}

inline void params_from_json(Model& model, const nlohmann::json& j) {
    for (ad::Param* p : all_params(model)) {
        if (!j.contains(p->name)) throw std::runtime_error("checkpoint missing parameter " + p->name);
        const auto& pj = j.at(p->name);
        if (pj.at("rows").get<size_t>() != p->value.rows ||
            pj.at("cols").get<size_t>() != p->value.cols)
            throw std::runtime_error("checkpoint shape mismatch for parameter " + p->name);
        p->value.data = pj.at("data").get<std::vector<double>>();
    }
}

struct Checkpoint {
    size_t epoch = 0;
    double validation_loss = 0.0;
    uint64_t seed = 0;
    std::string config_hash;
};

inline void save_checkpoint(const std::string& path, Model& model, const Optimizer& opt,
                            const rng::Rng& epoch_rng, const Checkpoint& meta) {
    nlohmann::json j;
    j["epoch"] = meta.epoch;
    j["validation_loss"] = meta.validation_loss;
    j["seed"] = meta.seed;
    j["config_hash"] = meta.config_hash;
    j["rng_state"] = epoch_rng.save_state();
    j["params"] = params_to_json(model);
    j["optimizer"] = opt.state_to_json();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f << j.dump() << "\n";
    // sidecar manifest with just the run metadata
    nlohmann::json manifest{{"seed", meta.seed},
                            {"epoch", meta.epoch},
                            {"validation_loss", meta.validation_loss},
                            {"config_hash", meta.config_hash}};
    std::ofstream mf(path + ".manifest.json");
    mf << manifest.dump(2) << "\n";
}

inline std::optional<Checkpoint> load_checkpoint(const std::string& path, Model& model,
                                                 Optimizer& opt, rng::Rng& epoch_rng) {
    std::ifstream f(path);
    if (!f) return std::nullopt;
    nlohmann::json j = nlohmann::json::parse(f);
    Checkpoint meta;
    meta.epoch = j.at("epoch").get<size_t>();
    meta.validation_loss = j.at("validation_loss").get<double>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.config_hash = j.at("config_hash").get<std::string>();
    params_from_json(model, j.at("params"));
    opt.state_from_json(j.at("optimizer"));
    epoch_rng.load_state(j.at("rng_state").get<std::string>());
    return meta;
}

// ---------------------------------------------------------------------------
// training loop

struct EpochRecord {
    size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> epochs;
    double best_validation_loss = 0.0;
    size_t best_epoch = 0;
    bool resumed = false;
    std::string config_hash;
};

/// Train with per-epoch shuffling, gradient accumulation, validation-loss
/// tracking, and best/last checkpointing. If checkpoint_dir holds a "last"
/// checkpoint with a matching config hash, training resumes after its epoch.
inline TrainResult train(Model& model, const std::vector<Example>& train_set,
                         const std::vector<Example>& validation_set, const TrainConfig& cfg,
                         const std::string& hash_extra = "") {
    if (train_set.empty()) throw std::invalid_argument("empty training set");
    TrainResult result;
    result.config_hash = config_hash(cfg, hash_extra);
    std::vector<ad::Param*> params = all_params(model);
    Optimizer opt(cfg.opt, params);
    rng::Rng shuffle_rng(cfg.seed);
    size_t start_epoch = 0;
    result.best_validation_loss = std::numeric_limits<double>::infinity();

    std::string last_path, best_path;
    if (!cfg.checkpoint_dir.empty()) {
        std::filesystem::create_directories(cfg.checkpoint_dir);
        last_path = (std::filesystem::path(cfg.checkpoint_dir) / "last.ckpt.json").string();
        best_path = (std::filesystem::path(cfg.checkpoint_dir) / "best.ckpt.json").string();
        if (auto meta = load_checkpoint(last_path, model, opt, shuffle_rng)) {
            if (meta->config_hash == result.config_hash) {
                start_epoch = meta->epoch + 1;
                result.resumed = true;
                std::ifstream bf(best_path);
                if (bf) {
                    nlohmann::json bj = nlohmann::json::parse(bf);
                    result.best_validation_loss = bj.at("validation_loss").get<double>();
                    result.best_epoch = bj.at("epoch").get<size_t>();
                }
            } else {
                throw std::runtime_error(
                    "checkpoint config hash mismatch in " + cfg.checkpoint_dir +
                    "; remove stale checkpoints or change the output directory");
            }
        }
    }

    std::vector<size_t> order(train_set.size());

    for (size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // each epoch's batch order must be a function of the RNG state alone,
        // so a run resumed from a checkpoint replays the same batches
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t batches = 0;
        size_t cursor = 0;
        while (cursor < order.size()) {
            for (ad::Param* p : params) p->zero_grad();
            size_t micro_done = 0;
            double group_loss = 0.0;
            for (; micro_done < cfg.grad_accum && cursor < order.size(); ++micro_done) {
                std::vector<Example> batch;
                for (size_t b = 0; b < cfg.batch_size && cursor < order.size(); ++b, ++cursor)
                    batch.push_back(train_set[order[cursor]]);
                ad::Tape tape;
                ad::Tape::Var loss = batch_loss(tape, model, batch, cfg.loss_floor);
                tape.backward(loss);
                group_loss += tape.value(loss).at(0, 0);
            }
            if (micro_done > 1) {
                double inv = 1.0 / double(micro_done);
                for (ad::Param* p : params)
                    for (double& g : p->grad.data) g *= inv;
            }
            opt.step(params);
            epoch_loss += group_loss / double(micro_done);
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = batches ? epoch_loss / double(batches) : 0.0;
        rec.validation_loss = evaluate_loss(model, validation_set, cfg.loss_floor);
        result.epochs.push_back(rec);

        bool is_best = rec.validation_loss < result.best_validation_loss;
        if (is_best) {
            result.best_validation_loss = rec.validation_loss;
            result.best_epoch = epoch;
        }
        if (!cfg.checkpoint_dir.empty()) {
            Checkpoint meta{epoch, rec.validation_loss, cfg.seed, result.config_hash};
            save_checkpoint(last_path, model, opt, shuffle_rng, meta);
            if (is_best) save_checkpoint(best_path, model, opt, shuffle_rng, meta);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// decoding

struct DecodeResult {
    std::vector<std::string> tokens;  // copy-resolved surface tokens, no EOS
    bool truncated = false;
};

/// Greedy decoding: per step take the argmax of the combined distribution
/// (ties → lowest index); a candidate-slot argmax emits the original KB token.
inline DecodeResult greedy_decode(Model& model, const Example& ex, size_t max_len = 64) {
    DecodeResult out;
    ad::Tape tape;
    backend::Encoded enc = model.net->encode(tape, ex.input_ids);
    ad::Tape::Var state = model.net->initial_state(tape, enc);
    backend::PrevToken prev;
    size_t copy_head = model.net->config().copy_head_index();
    ad::Tape::Var B = tape.leaf(model.B);
    for (size_t step = 0; step < max_len; ++step) {
        backend::StepOut so = model.net->step(tape, enc, state, prev);
        state = so.state;
        ad::Tape::Var p_t = copynet::combined_step(tape, so.logits, so.attention_rows[copy_head], B,
                                                   ex.candidates);
        const ad::Tensor& dist = tape.value(p_t);
        size_t best = copynet::argmax_lowest(dist.data);
        if (best < model.s_space()) {
            if (best == model.eos_index) return out;
            out.tokens.push_back(model.s_space_tokens[best]);
            prev = {backend::PrevToken::Kind::Structure, best};
        } else {
            out.tokens.push_back(ex.candidates.tokens[best - model.s_space()]);
            prev = {backend::PrevToken::Kind::Copied, 0};
        }
    }
    out.truncated = true;
    return out;
}

// ---------------------------------------------------------------------------
// multi-seed experiments

struct SeedRun {
    uint64_t seed = 0;
    bool failed = false;
    std::string failure;
    TrainResult training;
    metrics::RunReport report;
    std::vector<std::vector<std::string>> predictions;
};

struct ExperimentResult {
    std::vector<SeedRun> runs;
    metrics::RunReport mean;  // over succeeded runs
    bool partial = false;     // some seed failed
};

/// Train/evaluate once per seed and average the reports. A failing seed is
/// recorded (with its error) without discarding the other seeds' results.
inline ExperimentResult run_experiment(
    const vocab::TriVocabulary& v, const std::vector<Example>& train_set,
    const std::vector<Example>& validation_set, const std::vector<Example>& test_set,
    const std::vector<corpus::Entry>& test_entries, const endpoint::Client& client,
    const TrainConfig& base_cfg, const std::vector<uint64_t>& seeds, double retention = 1.0,
    const std::string& hash_extra = "") {
    if (test_set.size() != test_entries.size())
        throw std::invalid_argument("test examples and entries differ in size");
    ExperimentResult result;
    std::vector<metrics::RunReport> ok_reports;
    for (uint64_t seed : seeds) {
        SeedRun run;
        run.seed = seed;
        try {
            TrainConfig cfg = base_cfg;
            cfg.seed = seed;
            if (!base_cfg.checkpoint_dir.empty())
                cfg.checkpoint_dir = (std::filesystem::path(base_cfg.checkpoint_dir) /
                                      ("seed-" + std::to_string(seed)))
                                         .string();
            Model model = make_model(v, cfg.backend, seed);
            run.training = train(model, train_set, validation_set, cfg, hash_extra);
            // evaluate the best-validation-loss model
            if (!cfg.checkpoint_dir.empty()) {
                std::string best = (std::filesystem::path(cfg.checkpoint_dir) / "best.ckpt.json").string();
                Optimizer tmp_opt(cfg.opt, all_params(model));
                rng::Rng tmp_rng(0);
                load_checkpoint(best, model, tmp_opt, tmp_rng);
            }
            for (const Example& ex : test_set)
                run.predictions.push_back(greedy_decode(model, ex, cfg.max_output_len).tokens);
            run.report = metrics::evaluate_run(run.predictions, test_entries, client, retention);
            ok_reports.push_back(run.report);
        } catch (const std::exception& ex) {
            run.failed = true;
            run.failure = ex.what();
            result.partial = true;
        }
        result.runs.push_back(std::move(run));
    }
    if (!ok_reports.empty()) result.mean = metrics::aggregate_runs(ok_reports);
    return result;
}

}  // namespace sparqlgen::training
