// Command-line toolkit: generate synthetic corpora, annotate questions, build
// vocabularies, enrich gold answers from an endpoint, train/decode copy-layer
// models, score predictions, and render error-analysis reports.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sparqlgen/corpus.hpp"
#include "sparqlgen/endpoint.hpp"
#include "sparqlgen/error_analysis.hpp"
#include "sparqlgen/metrics.hpp"
#include "sparqlgen/pipeline.hpp"
#include "sparqlgen/synthetic.hpp"
#include "sparqlgen/training.hpp"
#include "sparqlgen/vocab.hpp"

namespace fs = std::filesystem;
using namespace sparqlgen;

namespace {

std::vector<uint64_t> parse_seeds(const std::string& csv) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(csv);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) seeds.push_back(std::stoull(part));
    if (seeds.empty()) throw std::runtime_error("no seeds given");
    return seeds;
}

std::map<std::string, corpus::GlobalTemplate> template_index(const std::string& path) {
    std::map<std::string, corpus::GlobalTemplate> out;
    if (path.empty()) return out;
    for (auto& t : corpus::load_templates(path)) out[t.id] = t;
    return out;
}

std::map<std::string, corpus::Bindings> bindings_index(const std::string& path) {
    if (path.empty()) return {};
    return pipeline::load_bindings(path);
}

endpoint::Client make_client(endpoint::EndpointConfig cfg) {
    endpoint::apply_env_override(cfg);
    return endpoint::Client(std::move(cfg), sparqltok::PrefixTable::defaults());
}

void write_text(const fs::path& path, const std::string& body) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << body;
}

/// Predictions aligned to the given entries by id; missing ids are an error.
std::vector<std::vector<std::string>> align_predictions(
    const std::vector<pipeline::PredictionEntry>& preds,
    const std::vector<corpus::Entry>& entries) {
    std::map<std::string, const pipeline::PredictionEntry*> by_id;
    for (const auto& p : preds) by_id[p.id] = &p;
    std::vector<std::vector<std::string>> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        auto it = by_id.find(e.id);
        if (it == by_id.end()) throw std::runtime_error("no prediction for entry " + e.id);
        out.push_back(it->second->tokens);
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synthetic(const std::string& out_dir, uint64_t seed, size_t per_template_train,
                  size_t per_template_test) {
    synthetic::SyntheticConfig scfg;
    scfg.seed = seed;
    scfg.train_per_template = per_template_train;
    scfg.test_per_template = per_template_test;
    fs::create_directories(out_dir);
    pipeline::stage_synthetic(scfg, out_dir);
    std::cout << "synthetic corpus written to " << out_dir << "\n";
    return 0;
}

int cmd_annotate(const std::string& dataset, const std::string& scheme_name,
                 const std::string& templates_path, const std::string& bindings_path,
                 uint64_t seed, bool lenient, const std::string& out_path) {
    corpus::Scheme scheme = corpus::scheme_from_name(scheme_name);
    std::vector<corpus::Entry> entries = corpus::load_dataset(dataset);
    auto result = pipeline::annotate_dataset(entries, scheme, bindings_index(bindings_path),
                                             template_index(templates_path), seed, lenient);
    pipeline::save_annotations(out_path, result.entries);
    for (const auto& w : result.warnings)
        std::cerr << "warning: " << w.entry_id << ": " << w.message << "\n";
    for (const auto& e : result.errors) std::cerr << "skipped: " << e << "\n";
    std::cout << "annotated " << result.entries.size() << "/" << entries.size() << " entries ("
              << corpus::scheme_name(scheme) << ") -> " << out_path << "\n";
    return result.errors.empty() ? 0 : 1;
}

int cmd_vocab(const std::string& train, const std::string& train_ann,
              const std::string& validation, const std::string& validation_ann,
              const std::string& test, const std::string& test_ann, const std::string& out_path,
              const std::string& stats_path) {
    auto load_pair = [](const std::string& ds, const std::string& ann) {
        return pipeline::to_vocab_entries(corpus::load_dataset(ds),
                                          pipeline::load_annotations(ann));
    };
    std::vector<vocab::AnnotatedEntry> train_entries = load_pair(train, train_ann);
    vocab::TriVocabulary v = vocab::build_vocabularies(train_entries);
    vocab::save_vocab(out_path, v);
    std::cout << "vocabulary |W|=" << v.w_tokens().size() << " |S|=" << v.s_tokens().size()
              << " |K|=" << v.k_tokens().size() << " -> " << out_path << "\n";
    if (!stats_path.empty()) {
        std::vector<vocab::AnnotatedEntry> val_entries, test_entries;
        if (!validation.empty()) val_entries = load_pair(validation, validation_ann);
        if (!test.empty()) test_entries = load_pair(test, test_ann);
        vocab::VocabStats stats = vocab::compute_oov(train_entries, val_entries, test_entries);
        auto per = [](const vocab::VocabStats::Per& p) {
            return nlohmann::json{{"total", p.total},
                                  {"train", p.train},
                                  {"validation", p.validation},
                                  {"test", p.test},
                                  {"oov", p.oov}};
        };
        nlohmann::json j{{"w", per(stats.w)}, {"s", per(stats.s)}, {"k", per(stats.k)}};
        write_text(stats_path, j.dump(2) + "\n");
        std::cout << "stats -> " << stats_path << "\n";
    }
    return 0;
}

int cmd_enrich(const std::string& dataset, const std::string& endpoint_url,
               const std::string& cache_dir, const std::string& out_path) {
    endpoint::EndpointConfig cfg;
    cfg.url = endpoint_url;
    cfg.cache_dir = cache_dir;
    endpoint::Client client = make_client(cfg);
    std::vector<corpus::Entry> entries = corpus::load_dataset(dataset);
    endpoint::enrich_answers(entries, client);
    corpus::save_dataset(out_path, entries);
    std::cout << "enriched " << entries.size() << " entries -> " << out_path << "\n";
    return 0;
}

struct TrainArgs {
    std::string train, test, templates, bindings, out_dir;
    std::string scheme = "tag-within";
    std::string model = "toy";
    std::string profile = "synthetic";
    std::string seeds_csv = "1,2,3";
    std::string endpoint_url = "fixture://";
    size_t epochs = 0, batch_size = 0, grad_accum = 0;
    uint64_t annotation_seed = 13;
    double validation_fraction = 0.1;
    std::string config_path;
};

/// A bare config name (no path separator, not an existing file) resolves to
/// the bundled configs directory.
std::string resolve_config_path(const std::string& given) {
    if (given.empty() || fs::exists(given) || given.find('/') != std::string::npos) return given;
#ifdef SPARQLGEN_CONFIG_DIR
    fs::path bundled = fs::path(SPARQLGEN_CONFIG_DIR) / (given + ".json");
    if (fs::exists(bundled)) return bundled.string();
#endif
    return given;
}

pipeline::PipelineConfig resolve_pipeline_config(const TrainArgs& a, const CLI::App* cmd) {
    pipeline::PipelineConfig cfg;
    if (!a.config_path.empty()) cfg = pipeline::load_config(resolve_config_path(a.config_path));
    auto given = [&](const char* flag) { return cmd->count(flag) > 0; };
    if (given("--train") || cfg.train_path.empty()) cfg.train_path = a.train;
    if (given("--test") || cfg.test_path.empty()) cfg.test_path = a.test;
    if (given("--templates") || cfg.templates_path.empty()) cfg.templates_path = a.templates;
    if (given("--scheme")) cfg.scheme = corpus::scheme_from_name(a.scheme);
    if (given("--model")) cfg.model = a.model;
    if (given("--dataset")) cfg.dataset_profile = a.profile;
    if (given("--seeds")) cfg.seeds = parse_seeds(a.seeds_csv);
    if (given("--epochs")) cfg.epochs = a.epochs;
    if (given("--batch-size")) cfg.batch_size = a.batch_size;
    if (given("--grad-accum")) cfg.grad_accum = a.grad_accum;
    if (given("--endpoint")) cfg.endpoint.url = a.endpoint_url;
    if (given("--annotation-seed")) cfg.annotation_seed = a.annotation_seed;
    if (given("--validation-fraction")) cfg.validation_fraction = a.validation_fraction;
    if (given("--out") || cfg.out_dir.empty()) cfg.out_dir = a.out_dir;
    return cfg;
}

int cmd_train(const TrainArgs& args, const CLI::App* cmd) {
    pipeline::PipelineConfig cfg = resolve_pipeline_config(args, cmd);
    endpoint::apply_env_override(cfg.endpoint);

    pipeline::StageDir stage =
        pipeline::stage_dir(cfg.out_dir, "train", cfg.to_json().dump());
    if (!stage.fresh) {
        std::cout << "train stage up to date: " << stage.dir << "\n";
        return 0;
    }

    std::vector<corpus::Entry> train_entries = corpus::load_dataset(cfg.train_path);
    std::vector<corpus::Entry> test_entries = corpus::load_dataset(cfg.test_path);
    auto templates = template_index(cfg.templates_path);
    auto bindings = bindings_index(args.bindings);

    auto train_ann = pipeline::annotate_dataset(train_entries, cfg.scheme, bindings, templates,
                                                cfg.annotation_seed);
    auto test_ann = pipeline::annotate_dataset(test_entries, cfg.scheme, bindings, templates,
                                               cfg.annotation_seed);
    pipeline::save_annotations((stage.dir / "annotations-train.jsonl").string(),
                               train_ann.entries);
    pipeline::save_annotations((stage.dir / "annotations-test.jsonl").string(), test_ann.entries);

    vocab::TriVocabulary v =
        vocab::build_vocabularies(pipeline::to_vocab_entries(train_entries, train_ann.entries));
    vocab::save_vocab((stage.dir / "vocab.json").string(), v);

    auto all_train = pipeline::build_examples(train_entries, train_ann.entries, v);
    auto [train_ex, val_ex] =
        pipeline::split_validation(std::move(all_train), cfg.validation_fraction, 97);
    auto test_ex = pipeline::build_examples(test_entries, test_ann.entries, v);

    training::TrainConfig tc = pipeline::resolve_training(cfg);
    tc.checkpoint_dir = (stage.dir / "checkpoints").string();
    endpoint::Client client = make_client(cfg.endpoint);

    training::ExperimentResult result = training::run_experiment(
        v, train_ex, val_ex, test_ex, test_entries, client, tc, cfg.seeds, 1.0,
        cfg.to_json().dump());

    for (const training::SeedRun& run : result.runs) {
        if (run.failed) {
            std::cerr << "seed " << run.seed << " failed: " << run.failure << "\n";
            continue;
        }
        std::vector<pipeline::PredictionEntry> preds;
        for (size_t i = 0; i < run.predictions.size(); ++i)
            preds.push_back({test_entries[i].id, run.predictions[i], false});
        pipeline::save_predictions(
            (stage.dir / ("predictions-seed-" + std::to_string(run.seed) + ".jsonl")).string(),
            preds);
        write_text(stage.dir / ("report-seed-" + std::to_string(run.seed) + ".json"),
                   metrics::report_to_json(run.report).dump(2) + "\n");
        std::cout << "seed " << run.seed << ": BLEU " << run.report.bleu << " acc "
                  << run.report.accuracy << " f1 " << run.report.f1 << "\n";
    }
    if (!result.runs.empty() && !result.partial) {
        write_text(stage.dir / "report-mean.json",
                   metrics::report_to_json(result.mean).dump(2) + "\n");
        std::cout << "mean: BLEU " << result.mean.bleu << " acc " << result.mean.accuracy
                  << " f1 " << result.mean.f1 << "\n";
    }
    pipeline::write_stamp(stage, "train", cfg.to_json());
    std::cout << "artifacts in " << stage.dir << "\n";
    return result.partial ? 1 : 0;
}

int cmd_generate(const std::string& checkpoint, const std::string& vocab_path,
                 const std::string& dataset, const std::string& annotations,
                 const std::string& model_name, size_t max_len, uint64_t seed,
                 const std::string& out_path) {
    vocab::TriVocabulary v = vocab::load_vocab(vocab_path);
    auto mp = pipeline::model_presets().find(model_name);
    if (mp == pipeline::model_presets().end())
        throw std::runtime_error("unknown model preset: " + model_name);
    backend::BackendConfig bcfg;
    bcfg.dropout = mp->second.dropout;
    training::Model model = training::make_model(v, bcfg, seed);

    std::ifstream ck(checkpoint);
    if (!ck) throw std::runtime_error("cannot open checkpoint: " + checkpoint);
    nlohmann::json jc = nlohmann::json::parse(ck);
    training::params_from_json(model, jc.at("params"));

    std::vector<corpus::Entry> entries = corpus::load_dataset(dataset);
    auto anns = pipeline::load_annotations(annotations);
    auto examples = pipeline::build_examples(entries, anns, v);
    std::vector<pipeline::PredictionEntry> preds;
    for (size_t i = 0; i < examples.size(); ++i) {
        training::DecodeResult dr = training::greedy_decode(model, examples[i], max_len);
        preds.push_back({entries[i].id, dr.tokens, dr.truncated});
    }
    pipeline::save_predictions(out_path, preds);
    std::cout << "decoded " << preds.size() << " entries -> " << out_path << "\n";
    return 0;
}

int cmd_evaluate(const std::string& predictions, const std::string& dataset,
                 const std::string& endpoint_url, const std::string& cache_dir, bool keep_empty,
                 const std::string& out_path, const std::string& per_entry_path) {
    std::vector<pipeline::PredictionEntry> preds = pipeline::load_predictions(predictions);
    std::vector<corpus::Entry> entries = corpus::load_dataset(dataset);
    double retention = 1.0;
    if (!keep_empty) {
        auto [subset, r] = corpus::filter_nonempty(entries);
        entries = std::move(subset);
        retention = r;
    }
    endpoint::EndpointConfig cfg;
    cfg.url = endpoint_url;
    cfg.cache_dir = cache_dir;
    endpoint::Client client = make_client(cfg);
    metrics::RunReport report =
        metrics::evaluate_run(align_predictions(preds, entries), entries, client, retention);
    write_text(out_path, metrics::report_to_json(report).dump(2) + "\n");
    if (!per_entry_path.empty()) write_text(per_entry_path, metrics::per_entry_jsonl(report));
    std::cout << "BLEU " << report.bleu << " acc " << report.accuracy << " f1 " << report.f1
              << " retention " << report.retention << (report.incomplete ? " (incomplete)" : "")
              << " -> " << out_path << "\n";
    return 0;
}

int cmd_analyze(const std::string& predictions, const std::string& dataset,
                const std::string& endpoint_url, const std::string& kb_graph,
                const std::string& out_dir) {
    std::vector<pipeline::PredictionEntry> preds = pipeline::load_predictions(predictions);
    std::vector<corpus::Entry> entries = corpus::load_dataset(dataset);
    auto pred_tokens = align_predictions(preds, entries);

    sparqltok::KbMembership kb = sparqltok::KbMembership::trust_all();
    std::shared_ptr<endpoint::Client> client;
    if (!kb_graph.empty()) {
        endpoint::EndpointConfig cfg;
        cfg.url = "fixture://" + kb_graph;
        client = std::make_shared<endpoint::Client>(cfg, sparqltok::PrefixTable::defaults());
        kb = endpoint::make_probing_membership(client);
    } else if (!endpoint_url.empty()) {
        endpoint::EndpointConfig cfg;
        cfg.url = endpoint_url;
        client = std::make_shared<endpoint::Client>(cfg, sparqltok::PrefixTable::defaults());
        kb = endpoint::make_probing_membership(client);
    }

    fs::create_directories(out_dir);
    std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
    std::string alignments;
    for (size_t i = 0; i < entries.size(); ++i) {
        std::vector<std::string> ref = sparqltok::tokenize_query(entries[i].query);
        erroranalysis::Alignment a = erroranalysis::align(ref, pred_tokens[i]);
        nlohmann::json aj = erroranalysis::alignment_to_json(ref, pred_tokens[i], a);
        aj["id"] = entries[i].id;
        alignments += aj.dump() + "\n";
        pairs.emplace_back(std::move(ref), pred_tokens[i]);
    }
    erroranalysis::ErrorMatrix m = erroranalysis::error_matrix_from_tokens(pairs, kb);
    write_text(fs::path(out_dir) / "matrix.json",
               erroranalysis::matrix_to_json(m).dump(2) + "\n");
    write_text(fs::path(out_dir) / "alignments.jsonl", alignments);
    std::cout << "substitutions " << m.substitution_total() << ", insertions "
              << m.insertion_total() << ", deletions " << m.deletion_total() << " -> " << out_dir
              << "\n";
    return 0;
}

int cmd_report(const std::string& metrics_path, const std::string& matrix_path,
               const std::string& out_dir) {
    std::ifstream mf(metrics_path);
    if (!mf) throw std::runtime_error("cannot open metrics file: " + metrics_path);
    metrics::RunReport run = metrics::report_from_json(nlohmann::json::parse(mf));
    std::ifstream xf(matrix_path);
    if (!xf) throw std::runtime_error("cannot open matrix file: " + matrix_path);
    erroranalysis::ErrorMatrix m = erroranalysis::matrix_from_json(nlohmann::json::parse(xf));
    erroranalysis::RenderedReport rendered = erroranalysis::render_report(m, run);
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "report.md", rendered.markdown);
    write_text(fs::path(out_dir) / "report.csv", rendered.csv);
    std::cout << "report -> " << out_dir << "/report.{md,csv}\n";
    return 0;
}

int cmd_prompts(const std::string& dataset, const std::string& templates_path,
                const std::string& bindings_path, uint64_t seed, const std::string& mode_name,
                const std::string& out_path) {
    std::vector<corpus::Entry> entries = corpus::load_dataset(dataset);
    auto result = pipeline::annotate_dataset(entries, corpus::Scheme::TagEnd,
                                             bindings_index(bindings_path),
                                             template_index(templates_path), seed);
    corpus::PromptMode mode = mode_name == "standard" ? corpus::PromptMode::Standard
                                                      : corpus::PromptMode::Instruction;
    std::map<std::string, const corpus::AnnotatedQuestion*> by_id;
    for (const auto& a : result.entries) by_id[a.id] = &a.annotated;
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write prompts: " + out_path);
    for (const auto& e : entries) {
        nlohmann::json j{{"id", e.id},
                         {"prompt", corpus::build_instruction_prompt(e, *by_id.at(e.id), mode)},
                         {"completion", e.query}};
        f << j.dump() << "\n";
    }
    std::cout << "prompts (" << mode_name << ") -> " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural question-to-SPARQL toolkit: annotation, copy-mechanism training, "
                 "answer-based evaluation, and token-type error analysis"};
    app.require_subcommand(1);

    // synthetic
    std::string syn_out = "data/synthetic";
    uint64_t syn_seed = 7;
    size_t syn_train = 50, syn_test = 10;
    auto* syn = app.add_subcommand("synthetic", "Generate the synthetic corpus and fixture graph");
    syn->add_option("--out", syn_out, "Output directory");
    syn->add_option("--seed", syn_seed, "Generation seed");
    syn->add_option("--train-per-template", syn_train, "Training entries per template");
    syn->add_option("--test-per-template", syn_test, "Held-out entries per template");

    // annotate
    std::string ann_dataset, ann_scheme = "tag-within", ann_templates, ann_bindings, ann_out;
    uint64_t ann_seed = 13;
    bool ann_lenient = false;
    auto* ann = app.add_subcommand("annotate", "Annotate questions under a scheme");
    ann->add_option("--dataset", ann_dataset, "Dataset JSONL")->required();
    ann->add_option("--scheme", ann_scheme, "raw | tag-within | tag-end");
    ann->add_option("--templates", ann_templates, "Template JSONL");
    ann->add_option("--bindings", ann_bindings, "Per-entry binding JSON");
    ann->add_option("--seed", ann_seed, "Shuffle seed for tag-end");
    ann->add_flag("--lenient", ann_lenient, "Skip failing entries instead of aborting");
    ann->add_option("--out", ann_out, "Output annotations JSONL")->required();

    // vocab
    std::string voc_train, voc_train_ann, voc_val, voc_val_ann, voc_test, voc_test_ann, voc_out,
        voc_stats;
    auto* voc = app.add_subcommand("vocab", "Build vocabularies and OOV statistics");
    voc->add_option("--train", voc_train, "Training dataset JSONL")->required();
    voc->add_option("--train-annotations", voc_train_ann, "Training annotations")->required();
    voc->add_option("--validation", voc_val, "Validation dataset JSONL");
    voc->add_option("--validation-annotations", voc_val_ann, "Validation annotations");
    voc->add_option("--test", voc_test, "Test dataset JSONL");
    voc->add_option("--test-annotations", voc_test_ann, "Test annotations");
    voc->add_option("--out", voc_out, "Vocabulary JSON output")->required();
    voc->add_option("--stats", voc_stats, "OOV statistics JSON output");

    // enrich
    std::string enr_dataset, enr_endpoint, enr_cache, enr_out;
    auto* enr = app.add_subcommand("enrich", "Fill gold answers from an endpoint");
    enr->add_option("--dataset", enr_dataset, "Dataset JSONL")->required();
    enr->add_option("--endpoint", enr_endpoint, "Endpoint URL (http:// or fixture://path)")
        ->required();
    enr->add_option("--cache", enr_cache, "Response cache directory");
    enr->add_option("--out", enr_out, "Enriched dataset output")->required();

    // train
    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "Train models across seeds and evaluate");
    trn->add_option("--config", ta.config_path, "Pipeline config JSON");
    trn->add_option("--train", ta.train, "Training dataset JSONL");
    trn->add_option("--test", ta.test, "Test dataset JSONL");
    trn->add_option("--templates", ta.templates, "Template JSONL");
    trn->add_option("--bindings", ta.bindings, "Per-entry binding JSON");
    trn->add_option("--scheme", ta.scheme, "raw | tag-within | tag-end");
    trn->add_option("--model", ta.model, "Model preset (toy, convseq2seq, transformer, bart, t5)");
    trn->add_option("--dataset", ta.profile, "Dataset profile (synthetic, lcq1, lcq2, dbnqa)");
    trn->add_option("--seeds", ta.seeds_csv, "Comma-separated seeds");
    trn->add_option("--epochs", ta.epochs, "Override epochs");
    trn->add_option("--batch-size", ta.batch_size, "Override batch size");
    trn->add_option("--grad-accum", ta.grad_accum, "Gradient-accumulation micro-batches");
    trn->add_option("--endpoint", ta.endpoint_url, "Evaluation endpoint URL");
    trn->add_option("--annotation-seed", ta.annotation_seed, "Tag-end shuffle seed");
    trn->add_option("--validation-fraction", ta.validation_fraction, "Validation split fraction");
    trn->add_option("--out", ta.out_dir, "Artifact root directory");

    // generate
    std::string gen_ckpt, gen_vocab, gen_dataset, gen_ann, gen_model = "toy", gen_out;
    size_t gen_max_len = 64;
    uint64_t gen_seed = 1;
    auto* gen = app.add_subcommand("generate", "Greedy-decode a dataset with a checkpoint");
    gen->add_option("--checkpoint", gen_ckpt, "Checkpoint JSON")->required();
    gen->add_option("--vocab", gen_vocab, "Vocabulary JSON")->required();
    gen->add_option("--dataset", gen_dataset, "Dataset JSONL")->required();
    gen->add_option("--annotations", gen_ann, "Annotations JSONL")->required();
    gen->add_option("--model", gen_model, "Model preset");
    gen->add_option("--max-len", gen_max_len, "Decoding length cap");
    gen->add_option("--seed", gen_seed, "Model-construction seed");
    gen->add_option("--out", gen_out, "Predictions JSONL output")->required();

    // evaluate
    std::string ev_preds, ev_dataset, ev_endpoint, ev_cache, ev_out, ev_per_entry;
    bool ev_keep_empty = false;
    auto* ev = app.add_subcommand("evaluate", "Score predictions against gold answers");
    ev->add_option("--predictions", ev_preds, "Predictions JSONL")->required();
    ev->add_option("--dataset", ev_dataset, "Dataset JSONL with gold answers")->required();
    ev->add_option("--endpoint", ev_endpoint, "Endpoint URL")->required();
    ev->add_option("--cache", ev_cache, "Response cache directory");
    ev->add_flag("--keep-empty", ev_keep_empty, "Skip the non-empty gold-answer filter");
    ev->add_option("--out", ev_out, "Report JSON output")->required();
    ev->add_option("--per-entry", ev_per_entry, "Per-entry scores JSONL output");

    // analyze
    std::string an_preds, an_dataset, an_endpoint, an_graph, an_out;
    auto* an = app.add_subcommand("analyze", "Token-type error analysis of predictions");
    an->add_option("--predictions", an_preds, "Predictions JSONL")->required();
    an->add_option("--dataset", an_dataset, "Dataset JSONL")->required();
    an->add_option("--endpoint", an_endpoint, "Endpoint URL for URI verification");
    an->add_option("--kb-graph", an_graph, "Fixture graph file for URI verification");
    an->add_option("--out", an_out, "Output directory")->required();

    // report
    std::string rp_metrics, rp_matrix, rp_out;
    auto* rp = app.add_subcommand("report", "Render metric + error-matrix tables");
    rp->add_option("--metrics", rp_metrics, "Report JSON (from evaluate)")->required();
    rp->add_option("--matrix", rp_matrix, "Matrix JSON (from analyze)")->required();
    rp->add_option("--out", rp_out, "Output directory")->required();

    // prompts
    std::string pr_dataset, pr_templates, pr_bindings, pr_mode = "instruction", pr_out;
    uint64_t pr_seed = 13;
    auto* pr = app.add_subcommand("prompts", "Export instruction prompts for external tuning");
    pr->add_option("--dataset", pr_dataset, "Dataset JSONL")->required();
    pr->add_option("--templates", pr_templates, "Template JSONL");
    pr->add_option("--bindings", pr_bindings, "Per-entry binding JSON");
    pr->add_option("--seed", pr_seed, "Tag-end shuffle seed");
    pr->add_option("--mode", pr_mode, "instruction | standard");
    pr->add_option("--out", pr_out, "Prompts JSONL output")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (syn->parsed()) return cmd_synthetic(syn_out, syn_seed, syn_train, syn_test);
        if (ann->parsed())
            return cmd_annotate(ann_dataset, ann_scheme, ann_templates, ann_bindings, ann_seed,
                                ann_lenient, ann_out);
        if (voc->parsed())
            return cmd_vocab(voc_train, voc_train_ann, voc_val, voc_val_ann, voc_test,
                             voc_test_ann, voc_out, voc_stats);
        if (enr->parsed()) return cmd_enrich(enr_dataset, enr_endpoint, enr_cache, enr_out);
        if (trn->parsed()) return cmd_train(ta, trn);
        if (gen->parsed())
            return cmd_generate(gen_ckpt, gen_vocab, gen_dataset, gen_ann, gen_model, gen_max_len,
                                gen_seed, gen_out);
        if (ev->parsed())
            return cmd_evaluate(ev_preds, ev_dataset, ev_endpoint, ev_cache, ev_keep_empty, ev_out,
                                ev_per_entry);
        if (an->parsed()) return cmd_analyze(an_preds, an_dataset, an_endpoint, an_graph, an_out);
        if (rp->parsed()) return cmd_report(rp_metrics, rp_matrix, rp_out);
        if (pr->parsed())
            return cmd_prompts(pr_dataset, pr_templates, pr_bindings, pr_seed, pr_mode, pr_out);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
