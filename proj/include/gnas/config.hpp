#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gnas/chromosome.hpp"
#include "gnas/error.hpp"
#include "gnas/evolution.hpp"
#include "gnas/graph.hpp"
#include "gnas/gnn.hpp"

namespace gnas {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Run configuration

struct SynthDataset {
    std::size_t nodes = 300;
    std::size_t classes = 3;
    double homophily = 0.9;
    double feature_noise = 0.6;
    std::size_t avg_degree = 8;
    std::uint64_t seed = 0;
};

struct FileDataset {
    std::filesystem::path edges, features, labels;
    std::optional<std::filesystem::path> split_file;  // otherwise per-class split
    PerClassSplit per_class;
    LoadOptions load;
};

/// Inductive data: several graphs, each wholly train, val or test.
struct GraphsDataset {
    struct Entry {
        std::filesystem::path edges, features, labels;
        GraphRole role = GraphRole::train;
    };
    std::vector<Entry> graphs;
    LoadOptions load;
};

using DatasetSpec = std::variant<SynthDataset, FileDataset, GraphsDataset>;

struct RunConfig {
    DatasetSpec dataset = SynthDataset{};
    SearchSpace space;
    EvolutionConfig evolution;
    ModelOptions model;
    std::filesystem::path output = "gnas-out";
};

namespace detail {

/// Reads an object's keys one by one and rejects anything left over.
class ObjectReader {
public:
    ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ValidationError(where_ + ": expected an object");
    }
    ~ObjectReader() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (const auto& [key, _] : j_.items())
            if (!used_.count(key)) throw ValidationError(where_ + ": unknown key '" + key + "'");
    }

    const Json* find(const std::string& key) {
        used_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        if (const auto* v = find(key)) {
            try {
                out = v->get<T>();
            } catch (const nlohmann::json::exception&) {
                throw ValidationError(where_ + "." + key + ": wrong type");
            }
        }
    }

    void read_path(const std::string& key, std::filesystem::path& out, const std::filesystem::path& base) {
        std::string s;
        read(key, s);
        if (!s.empty()) out = resolve(s, base);
    }

    const std::string& where() const { return where_; }

    static std::filesystem::path resolve(const std::string& s, const std::filesystem::path& base) {
        std::filesystem::path p(s);
        return p.is_absolute() || base.empty() ? p : base / p;
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> used_;
};

template <typename E, typename Parse>
std::vector<E> parse_names(const Json& j, const std::string& where, Parse parse) {
    if (!j.is_array() || j.empty()) throw ValidationError(where + ": expected a nonempty list");
    std::vector<E> out;
    for (const auto& v : j) {
        if (!v.is_string()) throw ValidationError(where + ": expected names");
        const auto e = parse(v.get<std::string>());
        if (!e) throw ValidationError(where + ": unknown value '" + v.get<std::string>() + "'");
        out.push_back(*e);
    }
    return out;
}

template <typename E>
Json names_json(const std::vector<E>& values) {
    Json out = Json::array();
    for (auto v : values) out.push_back(std::string(to_string(v)));
    return out;
}

inline void read_load_options(ObjectReader& r, LoadOptions& load) {
    r.read("undirected", load.undirected);
    r.read("normalize_features", load.normalize_features);
}

inline GraphRole parse_role(const std::string& s, const std::string& where) {
    if (s == "train") return GraphRole::train;
    if (s == "val") return GraphRole::val;
    if (s == "test") return GraphRole::test;
    throw ValidationError(where + ": role must be train, val or test");
}

inline std::string_view role_name(GraphRole r) {
    return r == GraphRole::train ? "train" : r == GraphRole::val ? "val" : "test";
}

}  // namespace detail

inline DatasetSpec parse_dataset(const Json& j, const std::filesystem::path& base) {
    detail::ObjectReader r(j, "dataset");
    std::string kind = "synth";
    r.read("kind", kind);
    if (kind == "synth") {
        SynthDataset d;
        r.read("nodes", d.nodes);
        r.read("classes", d.classes);
        r.read("homophily", d.homophily);
        r.read("feature_noise", d.feature_noise);
        r.read("avg_degree", d.avg_degree);
        r.read("seed", d.seed);
        return d;
    }
    if (kind == "files") {
        FileDataset d;
        r.read_path("edges", d.edges, base);
        r.read_path("features", d.features, base);
        r.read_path("labels", d.labels, base);
        if (r.find("split")) {
            std::filesystem::path p;
            r.read_path("split", p, base);
            d.split_file = p;
        }
        if (const auto* pc = r.find("per_class")) {
            detail::ObjectReader s(*pc, "dataset.per_class");
            s.read("train", d.per_class.train_per_class);
            s.read("val", d.per_class.val_count);
            s.read("test", d.per_class.test_count);
            s.read("seed", d.per_class.seed);
        }
        detail::read_load_options(r, d.load);
        if (d.edges.empty() || d.features.empty() || d.labels.empty())
            throw ValidationError("dataset: 'files' needs edges, features and labels");
        return d;
    }
    if (kind == "graphs") {
        GraphsDataset d;
        const auto* list = r.find("graphs");
        if (!list || !list->is_array() || list->empty()) throw ValidationError("dataset.graphs: expected a nonempty list");
        for (std::size_t i = 0; i < list->size(); ++i) {
            const auto where = "dataset.graphs[" + std::to_string(i) + "]";
            detail::ObjectReader g((*list)[i], where);
            GraphsDataset::Entry e;
            g.read_path("edges", e.edges, base);
            g.read_path("features", e.features, base);
            g.read_path("labels", e.labels, base);
            std::string role = "train";
            g.read("role", role);
            e.role = detail::parse_role(role, where);
            if (e.edges.empty() || e.features.empty() || e.labels.empty())
                throw ValidationError(where + ": needs edges, features and labels");
            d.graphs.push_back(std::move(e));
        }
        detail::read_load_options(r, d.load);
        return d;
    }
    throw ValidationError("dataset.kind must be synth, files or graphs");
}

inline SearchSpace parse_search_space(const Json& j) {
    SearchSpace s;
    detail::ObjectReader r(j, "search_space");
    if (const auto* v = r.find("attention")) s.attention = detail::parse_names<Attention>(*v, "search_space.attention", parse_attention);
    if (const auto* v = r.find("aggregator")) s.aggregator = detail::parse_names<Aggregator>(*v, "search_space.aggregator", parse_aggregator);
    if (const auto* v = r.find("activation")) s.activation = detail::parse_names<Activation>(*v, "search_space.activation", parse_activation);
    r.read("heads", s.heads);
    r.read("hidden", s.hidden);
    r.read("dropout", s.dropout);
    r.read("weight_decay", s.weight_decay);
    r.read("learning_rate", s.learning_rate);
    s.validate();
    return s;
}

inline EvolutionConfig parse_evolution(const Json& j, EvolutionConfig e) {
    detail::ObjectReader r(j, "evolution");
    r.read("structure_population", e.structure_population);
    r.read("param_population", e.param_population);
    r.read("structure_generations", e.structure_generations);
    r.read("param_generations", e.param_generations);
    r.read("alpha", e.alpha);
    r.read("parents_struct", e.parents_struct);
    r.read("children_struct", e.children_struct);
    r.read("parents_param", e.parents_param);
    r.read("children_param", e.children_param);
    r.read("mutation_prob", e.mutation_prob);
    r.read("epochs", e.epochs);
    r.read("seed", e.seed);
    r.read("parallelism", e.parallelism);
    r.read("novelty_attempts", e.novelty_attempts);
    return e;
}

inline ModelOptions parse_model(const Json& j) {
    ModelOptions m;
    detail::ObjectReader r(j, "model");
    r.read("self_loops", m.self_loops);
    r.read("normalize_attention", m.normalize_attention);
    std::string opt = "adam";
    r.read("optimizer", opt);
    if (opt == "adam")
        m.optimizer = ad::OptimizerKind::adam;
    else if (opt == "sgd")
        m.optimizer = ad::OptimizerKind::sgd;
    else
        throw ValidationError("model.optimizer must be adam or sgd");
    return m;
}

/// `base` anchors relative dataset paths (normally the config file's folder).
inline RunConfig parse_run_config(const Json& j, const std::filesystem::path& base = {}) {
    RunConfig c;
    detail::ObjectReader r(j, "config");
    if (const auto* d = r.find("dataset")) c.dataset = parse_dataset(*d, base);
    std::string task = std::holds_alternative<GraphsDataset>(c.dataset) ? "inductive" : "transductive";
    r.read("task", task);
    if (task != "transductive" && task != "inductive") throw ValidationError("task must be transductive or inductive");
    if ((task == "inductive") != std::holds_alternative<GraphsDataset>(c.dataset))
        throw ValidationError("inductive tasks need a 'graphs' dataset and transductive tasks a single graph");
    c.evolution.depth = task == "inductive" ? 3 : 2;
    r.read("depth", c.evolution.depth);
    if (const auto* s = r.find("search_space")) c.space = parse_search_space(*s);
    if (const auto* e = r.find("evolution")) c.evolution = parse_evolution(*e, c.evolution);
    if (const auto* m = r.find("model")) c.model = parse_model(*m);
    std::string out;
    r.read("output", out);
    if (!out.empty()) c.output = detail::ObjectReader::resolve(out, base);
    c.evolution.validate();
    return c;
}

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(read_json_file(path), path.parent_path());
}

inline std::string task_name(const RunConfig& c) {
    return std::holds_alternative<GraphsDataset>(c.dataset) ? "inductive" : "transductive";
}

/// Every key spelled out, paths absolute: enough to re-run the search exactly.
inline Json to_json(const RunConfig& c) {
    Json j;
    Json d;
    auto abs = [](const std::filesystem::path& p) { return std::filesystem::absolute(p).lexically_normal().string(); };
    std::visit(
        [&](const auto& ds) {
            using T = std::decay_t<decltype(ds)>;
            if constexpr (std::is_same_v<T, SynthDataset>) {
                d = {{"kind", "synth"},           {"nodes", ds.nodes},           {"classes", ds.classes},
                     {"homophily", ds.homophily}, {"feature_noise", ds.feature_noise}, {"avg_degree", ds.avg_degree},
                     {"seed", ds.seed}};
            } else if constexpr (std::is_same_v<T, FileDataset>) {
                d = {{"kind", "files"}, {"edges", abs(ds.edges)}, {"features", abs(ds.features)}, {"labels", abs(ds.labels)}};
                if (ds.split_file) d["split"] = abs(*ds.split_file);
                d["per_class"] = {{"train", ds.per_class.train_per_class},
                                  {"val", ds.per_class.val_count},
                                  {"test", ds.per_class.test_count},
                                  {"seed", ds.per_class.seed}};
                d["undirected"] = ds.load.undirected;
                d["normalize_features"] = ds.load.normalize_features;
            } else {
                d = {{"kind", "graphs"}};
                d["graphs"] = Json::array();
                for (const auto& e : ds.graphs)
                    d["graphs"].push_back({{"edges", abs(e.edges)},
                                           {"features", abs(e.features)},
                                           {"labels", abs(e.labels)},
                                           {"role", detail::role_name(e.role)}});
                d["undirected"] = ds.load.undirected;
                d["normalize_features"] = ds.load.normalize_features;
            }
        },
        c.dataset);
    j["dataset"] = d;
    j["task"] = task_name(c);
    j["depth"] = c.evolution.depth;
    const auto& s = c.space;
    j["search_space"] = {{"attention", detail::names_json(s.attention)},
                         {"heads", s.heads},
                         {"aggregator", detail::names_json(s.aggregator)},
                         {"activation", detail::names_json(s.activation)},
                         {"hidden", s.hidden},
                         {"dropout", s.dropout},
                         {"weight_decay", s.weight_decay},
                         {"learning_rate", s.learning_rate}};
    const auto& e = c.evolution;
    j["evolution"] = {{"structure_population", e.structure_population},
                      {"param_population", e.param_population},
                      {"structure_generations", e.structure_generations},
                      {"param_generations", e.param_generations},
                      {"alpha", e.alpha},
                      {"parents_struct", e.parents_struct},
                      {"children_struct", e.children_struct},
                      {"parents_param", e.parents_param},
                      {"children_param", e.children_param},
                      {"mutation_prob", e.mutation_prob},
                      {"epochs", e.epochs},
                      {"seed", e.seed},
                      {"parallelism", e.parallelism},
                      {"novelty_attempts", e.novelty_attempts}};
    j["model"] = {{"self_loops", c.model.self_loops},
                  {"normalize_attention", c.model.normalize_attention},
                  {"optimizer", c.model.optimizer == ad::OptimizerKind::adam ? "adam" : "sgd"}};
    j["output"] = abs(c.output);
    return j;
}

// ---------------------------------------------------------------------------
// Datasets

/// Throws ValidationError naming the first dataset file that does not exist.
inline void check_dataset_files(const DatasetSpec& spec) {
    auto need = [](const std::filesystem::path& p) {
        if (!std::filesystem::is_regular_file(p)) throw ValidationError("dataset file not found: " + p.string());
    };
    if (const auto* f = std::get_if<FileDataset>(&spec)) {
        need(f->edges);
        need(f->features);
        need(f->labels);
        if (f->split_file) need(*f->split_file);
    } else if (const auto* g = std::get_if<GraphsDataset>(&spec)) {
        for (const auto& e : g->graphs) {
            need(e.edges);
            need(e.features);
            need(e.labels);
        }
    }
}

inline std::vector<Graph> load_dataset(const DatasetSpec& spec) {
    check_dataset_files(spec);
    std::vector<Graph> out;
    if (const auto* s = std::get_if<SynthDataset>(&spec)) {
        SynthOptions opts;
        opts.avg_degree = s->avg_degree;
        out.push_back(synth_graph(s->nodes, s->classes, s->homophily, s->feature_noise, s->seed, opts));
    } else if (const auto* f = std::get_if<FileDataset>(&spec)) {
        const SplitSpec split = f->split_file ? SplitSpec{read_split_file(*f->split_file)} : SplitSpec{f->per_class};
        out.push_back(load_graph(f->edges, f->features, f->labels, split, f->load));
    } else {
        const auto& g = std::get<GraphsDataset>(spec);
        GraphCollection c;
        for (const auto& e : g.graphs) {
            c.graphs.push_back(load_graph(e.edges, e.features, e.labels, FractionSplit{}, g.load));
            c.roles.push_back(e.role);
        }
        c.apply_roles();
        c.validate();
        out = std::move(c.graphs);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

template <typename T>
Json population_json(const Population<T>& pop) {
    Json out = Json::array();
    for (const auto& ind : pop) out.push_back({{"chromosome", ind.chromosome.canonical()}, {"fitness", ind.fitness}});
    return out;
}

inline Json history_json(const std::vector<HistoryRow>& rows) {
    Json out = Json::array();
    for (const auto& r : rows)
        out.push_back({{"generation", r.generation},
                       {"phase", std::string(to_string(r.phase))},
                       {"best_fitness", r.best_fitness},
                       {"mean_fitness", r.mean_fitness},
                       {"best_chromosome", r.best_chromosome}});
    return out;
}

}  // namespace detail

inline Json state_to_json(const SearchState& st) {
    Json j;
    j["generation"] = st.generation;
    j["structures"] = detail::population_json(st.structures);
    j["params"] = detail::population_json(st.params);
    Json cache = Json::array();
    for (const auto& [key, v] : st.cache.entries())
        cache.push_back({{"genome", key}, {"val", v.val}, {"test", v.test}, {"failed", v.failed}});
    j["cache"] = cache;
    j["rng"] = {{"key", st.rng_key}, {"counter", st.rng_counter}};
    j["history"] = detail::history_json(st.history);
    if (st.best.valid)
        j["best"] = {{"genome", st.best.genome.canonical()},
                     {"val", st.best.outcome.val},
                     {"test", st.best.outcome.test},
                     {"failed", st.best.outcome.failed}};
    j["best_so_far"] = st.best_so_far;
    j["evaluations"] = st.evaluations;
    return j;
}

inline SearchState state_from_json(const Json& j) {
    try {
        SearchState st;
        st.generation = j.at("generation").get<std::size_t>();
        for (const auto& ind : j.at("structures"))
            st.structures.push_back({parse_structure(ind.at("chromosome").get<std::string>()), ind.at("fitness").get<double>()});
        for (const auto& ind : j.at("params"))
            st.params.push_back({parse_params(ind.at("chromosome").get<std::string>()), ind.at("fitness").get<double>()});
        for (const auto& c : j.at("cache"))
            st.cache.insert(c.at("genome").get<std::string>(),
                            {c.at("val").get<double>(), c.at("test").get<double>(), c.at("failed").get<bool>()});
        st.rng_key = j.at("rng").at("key").get<std::uint64_t>();
        st.rng_counter = j.at("rng").at("counter").get<std::uint64_t>();
        for (const auto& r : j.at("history")) {
            const auto phase = r.at("phase").get<std::string>();
            if (phase != "param" && phase != "struct") throw ValidationError("bad phase '" + phase + "'");
            st.history.push_back({r.at("generation").get<std::size_t>(), phase == "param" ? Phase::param : Phase::structure,
                                  r.at("best_fitness").get<double>(), r.at("mean_fitness").get<double>(),
                                  r.at("best_chromosome").get<std::string>()});
        }
        if (j.contains("best")) {
            const auto& b = j.at("best");
            st.best = {parse_genome(b.at("genome").get<std::string>()),
                       {b.at("val").get<double>(), b.at("test").get<double>(), b.at("failed").get<bool>()},
                       true};
        }
        st.best_so_far = j.at("best_so_far").get<std::vector<double>>();
        st.evaluations = j.at("evaluations").get<std::size_t>();
        return st;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed checkpoint: ") + e.what());
    } catch (const ParseError& e) {
        throw ValidationError(std::string("malformed checkpoint: ") + e.what());
    }
}

struct Checkpoint {
    RunConfig config;
    SearchState state;
};

inline Json checkpoint_json(const RunConfig& config, const SearchState& st) {
    return {{"format", "gnas-checkpoint-1"}, {"config", to_json(config)}, {"state", state_to_json(st)}};
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    if (!j.is_object() || j.value("format", "") != "gnas-checkpoint-1")
        throw ValidationError(path.string() + ": not a checkpoint file");
    return {parse_run_config(j.at("config")), state_from_json(j.at("state"))};
}

/// Writes via a temporary file and rename so a crash never leaves a torn file.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << text;
        if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace gnas
