#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sparqlgen/answers.hpp"
#include "sparqlgen/corpus.hpp"
#include "sparqlgen/graph.hpp"
#include "sparqlgen/sparqltok.hpp"
#include "sparqlgen/text.hpp"

/// SPARQL protocol client. Failures never throw out of execute(): every
/// rejection, timeout, or parse problem becomes an AnswerSet of kind=error so a
/// bad generated query can never abort an evaluation batch. URLs with the
/// fixture:// scheme evaluate against an in-process triple store instead of the
/// network.
namespace sparqlgen::endpoint {

using answers::AnswerSet;

struct EndpointConfig {
    std::string url;                    // http://..., or fixture://<graph file>
    double timeout_seconds = 30.0;
    int max_parallel = 4;
    int retry_attempts = 2;             // total tries per query
    double retry_backoff_seconds = 0.05;
    std::string cache_dir;              // empty disables the on-disk cache

    void validate() const {
        if (timeout_seconds <= 0) throw std::invalid_argument("endpoint timeout must be positive");
        if (max_parallel < 1) throw std::invalid_argument("max_parallel must be at least 1");
        if (retry_attempts < 1) throw std::invalid_argument("retry_attempts must be at least 1");
    }
};

/// Environment override for the endpoint URL, applied by the CLI layer.
inline void apply_env_override(EndpointConfig& cfg, const char* var = "SPARQLGEN_ENDPOINT") {
    if (const char* v = std::getenv(var); v && *v) cfg.url = v;
}

/// Standard SPARQL JSON results → AnswerSet. Single-variable rows keep just the
/// canonical value; multi-variable rows serialize as "name=value|name=value"
/// with names in sorted order.
inline AnswerSet normalize_answers(const std::string& payload) {
    try {
        nlohmann::json j = nlohmann::json::parse(payload);
        if (j.contains("boolean")) return AnswerSet::ask(j.at("boolean").get<bool>());
        std::set<std::string> values;
        const auto& bindings = j.at("results").at("bindings");
        for (const auto& row : bindings) {
            std::map<std::string, std::string> canon;  // sorted by variable name
            for (auto it = row.begin(); it != row.end(); ++it) {
                const auto& term = it.value();
                std::string type = term.value("type", "");
                std::string value = term.value("value", "");
                if (type == "uri") {
                    canon[it.key()] = answers::canonical_value(value, true);
                } else {
                    std::string lang = term.value("xml:lang", "");
                    std::string dt = term.value("datatype", "");
                    canon[it.key()] = answers::canonical_value(value, false, lang, dt);
                }
            }
            if (canon.empty()) continue;
            if (canon.size() == 1) {
                values.insert(canon.begin()->second);
            } else {
                std::string tuple;
                for (const auto& [k, v] : canon) {
                    if (!tuple.empty()) tuple += "|";
                    tuple += k + "=" + v;
                }
                values.insert(tuple);
            }
        }
        return AnswerSet::bindings(std::move(values));
    } catch (const std::exception& ex) {
        return AnswerSet::error(std::string("unparseable results payload: ") + ex.what());
    }
}

class Client {
public:
    explicit Client(EndpointConfig cfg,
                    sparqltok::PrefixTable prefixes = sparqltok::PrefixTable())
        : cfg_(std::move(cfg)), prefixes_(std::move(prefixes)) {
        cfg_.validate();
        if (cfg_.url.rfind("fixture://", 0) == 0) {
            std::string path = cfg_.url.substr(std::string("fixture://").size());
            if (!path.empty()) fixture_ = std::make_shared<graph::FixtureGraph>(graph::FixtureGraph::load(path));
        }
        if (!cfg_.cache_dir.empty()) std::filesystem::create_directories(cfg_.cache_dir);
    }

    /// Fixture-mode client over an in-memory graph (no file involved).
    Client(EndpointConfig cfg, graph::FixtureGraph g,
           sparqltok::PrefixTable prefixes = sparqltok::PrefixTable())
        : cfg_(std::move(cfg)), prefixes_(std::move(prefixes)),
          fixture_(std::make_shared<graph::FixtureGraph>(std::move(g))) {
        cfg_.validate();
        if (cfg_.url.empty()) cfg_.url = "fixture://inline";
        if (!cfg_.cache_dir.empty()) std::filesystem::create_directories(cfg_.cache_dir);
    }

    const EndpointConfig& config() const { return cfg_; }
    const sparqltok::PrefixTable& prefixes() const { return prefixes_; }
    bool fixture_mode() const { return fixture_ != nullptr; }
    const graph::FixtureGraph* fixture() const { return fixture_.get(); }

    /// Execute one query. Never throws; failures come back as kind=error.
    AnswerSet execute(const std::string& query) const {
        std::string key = cache_key(query);
        if (auto hit = memory_get(key)) return *hit;
        if (auto hit = disk_get(key, query)) {
            memory_put(key, *hit);
            return *hit;
        }
        AnswerSet result = perform(query);
        if (result.kind != AnswerSet::Kind::Error) {
            memory_put(key, result);
            disk_put(key, query, result);
        }
        return result;
    }

    /// Execute a batch with at most max_parallel requests in flight; results
    /// come back in input order.
    std::vector<AnswerSet> execute_many(const std::vector<std::string>& queries) const {
        std::vector<AnswerSet> out(queries.size());
        size_t workers = std::min<size_t>(size_t(cfg_.max_parallel), queries.size());
        if (workers <= 1) {
            for (size_t i = 0; i < queries.size(); ++i) out[i] = execute(queries[i]);
            return out;
        }
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < queries.size(); i = next.fetch_add(1))
                    out[i] = execute(queries[i]);
            });
        for (auto& t : pool) t.join();
        return out;
    }

    /// KB-membership probe usable by the token classifier: does the URI occur
    /// anywhere in the graph? Network errors count as present so that outages
    /// never mislabel genuine URIs as fake.
    bool probe_uri(const std::string& token) const {
        std::string iri = prefixes_.expand(token);
        if (fixture_) return fixture_->mentions(iri, prefixes_);
        std::string q = "ASK { { <" + iri + "> ?sg_p ?sg_o } UNION { ?sg_s <" + iri +
                        "> ?sg_o } UNION { ?sg_s ?sg_p <" + iri + "> } }";
        AnswerSet r = execute(q);
        if (r.kind == AnswerSet::Kind::Boolean) return r.boolean;
        return true;
    }

private:
    AnswerSet perform(const std::string& query) const {
        if (fixture_) {
            try {
                return graph::to_answer_set(fixture_->evaluate(query, prefixes_));
            } catch (const std::exception& ex) {
                return AnswerSet::error(ex.what());
            }
        }
        if (cfg_.url.rfind("http://", 0) != 0) {
            if (cfg_.url.rfind("https://", 0) == 0)
                return AnswerSet::error("https endpoints are not supported by this build; use http");
            return AnswerSet::error("unsupported endpoint url scheme: " + cfg_.url);
        }
        std::string base, path;
        split_url(cfg_.url, base, path);
        std::string last_error = "request failed";
        for (int attempt = 0; attempt < cfg_.retry_attempts; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::duration<double>(
                    cfg_.retry_backoff_seconds * double(attempt)));
            httplib::Client cli(base);
            auto secs = std::chrono::duration<double>(cfg_.timeout_seconds);
            cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(secs));
            cli.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(secs));
            cli.set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(secs));
            httplib::Params params{{"query", query}};
            httplib::Headers headers{{"Accept", "application/sparql-results+json"}};
            auto res = cli.Post(path, headers, params);
            if (!res) {
                last_error = "network failure: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_error = "endpoint returned HTTP " + std::to_string(res->status);
                continue;
            }
            return normalize_answers(res->body);
        }
        return AnswerSet::error(last_error);
    }

    static void split_url(const std::string& url, std::string& base, std::string& path) {
        size_t scheme = url.find("://");
        size_t slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        if (slash == std::string::npos) {
            base = url;
            path = "/";
        } else {
            base = url.substr(0, slash);
            path = url.substr(slash);
        }
    }

    std::string cache_key(const std::string& query) const {
        return text::hex64(text::fnv1a(cfg_.url + "\n" + query));
    }

    std::optional<AnswerSet> memory_get(const std::string& key) const {
        std::shared_lock lock(mem_mutex_);
        auto it = mem_cache_.find(key);
        if (it == mem_cache_.end()) return std::nullopt;
        return it->second;
    }

    void memory_put(const std::string& key, const AnswerSet& a) const {
        std::unique_lock lock(mem_mutex_);
        mem_cache_[key] = a;
    }

    std::optional<AnswerSet> disk_get(const std::string& key, const std::string& query) const {
        if (cfg_.cache_dir.empty()) return std::nullopt;
        std::filesystem::path p = std::filesystem::path(cfg_.cache_dir) / (key + ".json");
        std::ifstream f(p);
        if (!f) return std::nullopt;
        try {
            nlohmann::json j = nlohmann::json::parse(f);
            if (j.value("url", "") != cfg_.url || j.value("query", "") != query)
                return std::nullopt;  // hash collision; treat as miss
            return corpus::answers_from_json(j.at("answers"));
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    void disk_put(const std::string& key, const std::string& query, const AnswerSet& a) const {
        if (cfg_.cache_dir.empty()) return;
        std::unique_lock lock(disk_mutex_);
        std::filesystem::path dir(cfg_.cache_dir);
        std::filesystem::path tmp = dir / (key + ".tmp");
        std::filesystem::path dst = dir / (key + ".json");
        {
            std::ofstream f(tmp);
            if (!f) return;
            nlohmann::json j{{"url", cfg_.url}, {"query", query},
                             {"answers", corpus::answers_to_json(a)}};
            f << j.dump() << "\n";
        }
        std::error_code ec;
        std::filesystem::rename(tmp, dst, ec);
    }

    EndpointConfig cfg_;
    sparqltok::PrefixTable prefixes_;
    std::shared_ptr<graph::FixtureGraph> fixture_;
    mutable std::shared_mutex mem_mutex_;
    mutable std::map<std::string, AnswerSet> mem_cache_;
    mutable std::mutex disk_mutex_;
};

/// Fill each entry's gold answers from its gold query. A dead endpoint fails
/// the whole batch up front (before any entry is touched); per-query failures
/// after that are recorded on the affected entry only.
inline void enrich_answers(std::vector<corpus::Entry>& entries, const Client& client) {
    AnswerSet probe = client.execute("ASK { }");
    if (probe.kind == AnswerSet::Kind::Error)
        throw std::runtime_error("endpoint unreachable: " + probe.error_detail);
    std::vector<std::string> queries;
    queries.reserve(entries.size());
    for (const auto& e : entries) queries.push_back(e.query);
    std::vector<AnswerSet> results = client.execute_many(queries);
    for (size_t i = 0; i < entries.size(); ++i) entries[i].gold_answers = std::move(results[i]);
}

/// Membership oracle backed by endpoint probes, for fake-URI detection.
inline sparqltok::KbMembership make_probing_membership(std::shared_ptr<Client> client) {
    return sparqltok::KbMembership::with_probe(
        [client](const std::string& token) { return client->probe_uri(token); });
}

}  // namespace sparqlgen::endpoint
