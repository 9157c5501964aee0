#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparqlgen/corpus.hpp"
#include "sparqlgen/graph.hpp"
#include "sparqlgen/rng.hpp"
#include "sparqlgen/text.hpp"

/// Synthetic question/query generator: ten global templates over a small
/// closed-world knowledge base. Every entry's supporting triples are
/// materialized into a fixture graph before gold answers are computed, so
/// each generated query has a well-defined, non-empty result. Test entries
/// reuse the templates with held-out entity names (and held-out filter words),
/// which makes their KB tokens unseen at training time.
namespace sparqlgen::synthetic {

struct SyntheticConfig {
    size_t train_per_template = 50;
    size_t test_per_template = 10;
    uint64_t seed = 7;
    size_t held_out_entities = 20;  // tail of the entity pool reserved for test
};

struct SyntheticData {
    std::vector<corpus::GlobalTemplate> templates;
    std::vector<corpus::Entry> train;
    std::vector<corpus::Entry> test;
    std::map<std::string, corpus::Bindings> bindings_by_id;
    graph::FixtureGraph kb;
    std::set<std::string> kb_uris;  // prefixed URI tokens present in the graph
};

// ---------------------------------------------------------------------------
// vocabulary pools

struct PoolItem {
    std::string token;  // query-side KB token
    std::string label;  // question-side surface words
};

namespace detail {

inline const std::vector<std::string>& name_prefixes() {
    static const std::vector<std::string> v = {"north", "south", "east",  "west",  "new",
                                               "old",   "grand", "little", "upper", "lower"};
    return v;
}

inline const std::vector<std::string>& name_suffixes() {
    static const std::vector<std::string> v = {"haven", "field", "bridge", "port",  "wood",
                                               "lake",  "ridge", "brook",  "gate",  "mill"};
    return v;
}

inline std::string title_case(const std::string& w) {
    std::string out = w;
    if (!out.empty() && out[0] >= 'a' && out[0] <= 'z') out[0] = char(out[0] - 'a' + 'A');
    return out;
}

}  // namespace detail

/// 100 place entities: dbr:North_Haven ... labels "north haven" ...
inline std::vector<PoolItem> entity_pool() {
    std::vector<PoolItem> out;
    for (const auto& p : detail::name_prefixes())
        for (const auto& s : detail::name_suffixes())
            out.push_back({"dbr:" + detail::title_case(p) + "_" + detail::title_case(s),
                           p + " " + s});
    return out;
}

inline std::vector<PoolItem> property_pool() {
    std::vector<PoolItem> out;
    for (const std::string p : {"mayor", "region", "founder", "river", "owner", "architect",
                                "club", "office", "spouse"})
        out.push_back({"dbp:" + p, p});
    return out;
}

inline std::vector<PoolItem> class_pool() {
    std::vector<PoolItem> out;
    for (const std::string c : {"City", "Town", "Village", "Region", "Person", "Company"})
        out.push_back({"dbo:" + c, text::lower_ascii(c)});
    return out;
}

/// Words for the string-filter template; the tail is held out for test entries.
inline const std::vector<std::string>& filter_words() {
    static const std::vector<std::string> v = {
        "stone",  "iron",   "silver", "golden", "amber",  "crystal", "copper", "marble",
        "cedar",  "willow", "falcon", "meadow", "harbor", "summit",  "valley",  // train
        "quartz", "granite", "maple", "heron",  "tundra",                       // test
    };
    return v;
}

// ---------------------------------------------------------------------------
// grammar

enum class Role { Entity, Property, Class, Word };

struct TemplateSpec {
    corpus::GlobalTemplate tmpl;
    std::map<int, Role> roles;
};

inline std::vector<TemplateSpec> grammar() {
    auto t = [](std::string id, std::string q, std::string sparql,
                std::map<int, Role> roles) {
        return TemplateSpec{{std::move(id), std::move(q), std::move(sparql)}, std::move(roles)};
    };
    return {
        t("t1", "what is the <1> of <2> ?",
          "select distinct ?uri where { <2> <1> ?uri }",
          {{1, Role::Property}, {2, Role::Entity}}),
        t("t2", "who is the <1> of <2> ?",
          "select ?uri where { <2> <1> ?uri }",
          {{1, Role::Property}, {2, Role::Entity}}),
        t("t3", "is <1> the <2> of <3> ?",
          "ask where { <3> <2> <1> }",
          {{1, Role::Entity}, {2, Role::Property}, {3, Role::Entity}}),
        t("t4", "how many <2> does <1> have ?",
          "select count ( ?x ) where { <1> <2> ?x }",
          {{1, Role::Entity}, {2, Role::Property}}),
        t("t5", "who is the <1> whose <2> is <3> ?",
          "select distinct ?uri where { ?uri a <1> . ?uri <2> <3> }",
          {{1, Role::Class}, {2, Role::Property}, {3, Role::Entity}}),
        t("t6", "is <1> of type <2> ?",
          "ask where { <1> a <2> }",
          {{1, Role::Entity}, {2, Role::Class}}),
        t("t7", "which <1> has <2> equal to <3> ?",
          "select ?uri where { ?uri a <1> . ?uri <2> <3> }",
          {{1, Role::Class}, {2, Role::Property}, {3, Role::Entity}}),
        t("t8", "does <1> have some <2> ?",
          "ask where { <1> <2> ?x }",
          {{1, Role::Entity}, {2, Role::Property}}),
        t("t9", "list the <1> of <2> .",
          "select ?uri where { <2> <1> ?uri }",
          {{1, Role::Property}, {2, Role::Entity}}),
        t("t10", "give me <1> that contain the word <3> in their <2> .",
          "select distinct ?uri where { ?uri a <1> . ?uri <2> ?n . filter contains ( ?n , <3> ) }",
          {{1, Role::Class}, {2, Role::Property}, {3, Role::Word}}),
    };
}

// ---------------------------------------------------------------------------
// generation

namespace detail {

struct GenState {
    std::vector<PoolItem> entities, properties, classes;
    std::vector<std::string> words;
    size_t train_entity_count = 0;  // entities[0..N) usable for training bindings
    size_t train_word_count = 0;
    std::vector<size_t> entity_class;  // entity index → class index
    graph::FixtureGraph* kb = nullptr;
    rng::Rng* rng = nullptr;

    const PoolItem& pick_entity(bool test) {
        size_t lo = test ? train_entity_count : 0;
        size_t hi = test ? entities.size() : train_entity_count;
        return entities[lo + rng->below(hi - lo)];
    }
    const PoolItem& any_entity() { return entities[rng->below(entities.size())]; }
    const PoolItem& pick_property() { return properties[rng->below(properties.size())]; }
    const PoolItem& pick_class() { return classes[rng->below(classes.size())]; }
    std::string pick_word(bool test) {
        size_t lo = test ? train_word_count : 0;
        size_t hi = test ? words.size() : train_word_count;
        return words[lo + rng->below(hi - lo)];
    }
    /// A random entity carrying the given class (by index into classes).
    const PoolItem& entity_of_class(size_t class_idx) {
        std::vector<size_t> matching;
        for (size_t i = 0; i < entities.size(); ++i)
            if (entity_class[i] == class_idx) matching.push_back(i);
        return entities[matching[rng->below(matching.size())]];
    }
};

/// Draw bindings for one template instance and materialize its supporting
/// triples. `test` controls which side of the entity/word split is used.
inline corpus::Bindings draw_bindings(const TemplateSpec& spec, GenState& st, bool test) {
    corpus::Bindings b;
    const std::string& id = spec.tmpl.id;
    auto entity = [&](int slot) {
        const PoolItem& e = st.pick_entity(test);
        b[slot] = {e.token, e.label};
        return e.token;
    };
    auto property = [&](int slot) {
        const PoolItem& p = st.pick_property();
        b[slot] = {p.token, p.label};
        return p.token;
    };

    if (id == "t1" || id == "t2" || id == "t9") {
        std::string p = property(1);
        std::string e = entity(2);
        st.kb->add(e, p, st.any_entity().token);
    } else if (id == "t3") {
        std::string e1 = entity(1);
        std::string p = property(2);
        std::string e3 = entity(3);
        if (st.rng->below(2) == 0) st.kb->add(e3, p, e1);
    } else if (id == "t4") {
        std::string e = entity(1);
        std::string p = property(2);
        size_t n = 1 + st.rng->below(3);
        for (size_t k = 0; k < n; ++k) st.kb->add(e, p, st.any_entity().token);
    } else if (id == "t5" || id == "t7") {
        size_t ci = st.rng->below(st.classes.size());
        const PoolItem& c = st.classes[ci];
        b[1] = {c.token, c.label};
        std::string p = property(2);
        std::string e3 = entity(3);
        st.kb->add(st.entity_of_class(ci).token, p, e3);
    } else if (id == "t6") {
        entity(1);
        const PoolItem& c = st.pick_class();
        b[2] = {c.token, c.label};
        // truth value comes from the global class assignment; nothing to add
    } else if (id == "t8") {
        std::string e = entity(1);
        std::string p = property(2);
        if (st.rng->below(2) == 0) st.kb->add(e, p, st.any_entity().token);
    } else if (id == "t10") {
        size_t ci = st.rng->below(st.classes.size());
        const PoolItem& c = st.classes[ci];
        b[1] = {c.token, c.label};
        std::string p = property(2);
        std::string w = st.pick_word(test);
        b[3] = {"\"" + w + "\"", w};
        st.kb->add(st.entity_of_class(ci).token, p, "\"" + w + " quarter\"");
    } else {
        throw std::logic_error("unknown synthetic template: " + id);
    }
    return b;
}

inline std::string bindings_key(const corpus::Bindings& b) {
    std::string key;
    for (const auto& [idx, binding] : b)
        key += std::to_string(idx) + "=" + binding.kb_token + ";";
    return key;
}

}  // namespace detail

/// Generate the corpus: templates, train/test entries with gold answers, the
/// materialized fixture graph, and the set of URI tokens it mentions.
inline SyntheticData generate(const SyntheticConfig& cfg = {}) {
    SyntheticData data;
    std::vector<TemplateSpec> specs = grammar();
    for (const auto& s : specs) data.templates.push_back(s.tmpl);

    detail::GenState st;
    st.entities = entity_pool();
    st.properties = property_pool();
    st.classes = class_pool();
    st.words = filter_words();
    if (cfg.held_out_entities >= st.entities.size())
        throw std::invalid_argument("held_out_entities must leave training entities");
    st.train_entity_count = st.entities.size() - cfg.held_out_entities;
    st.train_word_count = st.words.size() - 5;
    rng::Rng gen(cfg.seed);
    st.rng = &gen;
    st.kb = &data.kb;

    // class memberships for every entity, fixed up front
    st.entity_class.resize(st.entities.size());
    for (size_t i = 0; i < st.entities.size(); ++i) {
        st.entity_class[i] = i % st.classes.size();
        data.kb.add(st.entities[i].token, "a", st.classes[st.entity_class[i]].token);
    }
    // ground every property in at least one triple so each pool URI is a
    // verifiable KB member regardless of which bindings the draw selects
    for (size_t i = 0; i < st.properties.size(); ++i)
        data.kb.add(st.entities[i].token, st.properties[i].token,
                    st.entities[(i + 1) % st.entities.size()].token);

    // draw all instances (materializing triples), then evaluate gold answers
    // against the finished graph so answers are consistent with the endpoint
    struct Pending {
        corpus::Entry entry;
        corpus::Bindings bindings;
        bool test = false;
    };
    std::vector<Pending> pending;
    for (const TemplateSpec& spec : specs) {
        std::set<std::string> used;
        auto emit = [&](bool test, size_t k) {
            corpus::Bindings b;
            for (int attempt = 0; attempt < 200; ++attempt) {
                b = detail::draw_bindings(spec, st, test);
                std::string key = detail::bindings_key(b);
                if (!used.count(key)) {
                    used.insert(key);
                    break;
                }
                // duplicate draw: the extra triples are harmless (set semantics)
            }
            corpus::Entry e = corpus::instantiate_template(spec.tmpl, b);
            e.id = spec.tmpl.id + (test ? "-test-" : "-train-") + std::to_string(k);
            pending.push_back({std::move(e), std::move(b), test});
        };
        for (size_t k = 0; k < cfg.train_per_template; ++k) emit(false, k);
        for (size_t k = 0; k < cfg.test_per_template; ++k) emit(true, k);
    }

    const auto& prefixes = sparqltok::PrefixTable::defaults();
    for (const auto& t : data.kb.triples()) {
        for (const std::string* term : {&t.s, &t.p, &t.o})
            if (sparqltok::uri_shaped(*term)) data.kb_uris.insert(*term);
    }
    for (Pending& p : pending) {
        graph::QuerySolutions sol = data.kb.evaluate(p.entry.query, prefixes);
        p.entry.gold_answers = graph::to_answer_set(sol);
        data.bindings_by_id[p.entry.id] = p.bindings;
        (p.test ? data.test : data.train).push_back(std::move(p.entry));
    }
    return data;
}

}  // namespace sparqlgen::synthetic
