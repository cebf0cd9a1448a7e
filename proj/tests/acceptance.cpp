// Acceptance suite: one PASS/FAIL/SKIP line per criterion, exit 1 if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>

#include "gnas/cli.hpp"
#include "gnas/evolution.hpp"
#include "support/gradcheck.hpp"
#include "support/graphs.hpp"
#include "support/logreg.hpp"
#include "support/tempdir.hpp"

using namespace gnas;
using ad::Tensor;

namespace {

struct Verdict {
    enum Kind { pass, fail, skip } kind;
    std::string detail;
};

Verdict check(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
    std::ostringstream s;
    s.precision(digits);
    s << std::fixed << v;
    return s.str();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

Tensor random_tensor(ad::Shape shape, CounterRng& rng, double lo = -1, double hi = 1, bool grad = true) {
    std::vector<double> v(shape.size());
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(shape, std::move(v), grad);
}

Tensor project(const Tensor& out) {
    CounterRng rng(99);
    return ad::sum(ad::mul(out, random_tensor(out.shape(), rng, -1, 1, false)));
}

// ---------------------------------------------------------------------------
// 1. gradients

Verdict criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    CounterRng rng(2024);
    const std::vector<Index> src{0, 1, 2, 3, 4, 5, 0, 2, 1};
    const std::vector<Index> tgt{0, 0, 1, 1, 2, 3, 4, 4, 5};
    const auto a = random_tensor({6, 4}, rng), b = random_tensor({4, 3}, rng), c = random_tensor({6, 4}, rng);
    const auto s = random_tensor({9, 1}, rng), w = random_tensor({4, 1}, rng);
    const auto m = random_tensor({9, 4}, rng);
    ad::MlpWeights mlp{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)};
    const std::vector<std::int32_t> labels{0, 2, 1, 2, 0, 1};
    const std::vector<std::uint8_t> targets{1, 0, 1, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1, 0, 1};
    const std::vector<Index> rows{0, 2, 3, 5};

    std::vector<std::pair<std::string, std::pair<std::function<Tensor()>, std::vector<Tensor>>>> ops{
        {"matmul", {[&] { return project(ad::matmul(a, b)); }, {a, b}}},
        {"add", {[&] { return project(ad::add(a, c)); }, {a, c}}},
        {"mul", {[&] { return project(ad::mul(a, c)); }, {a, c}}},
        {"scale", {[&] { return project(ad::scale(a, -1.7)); }, {a}}},
        {"sum", {[&] { return ad::sum(ad::mul(a, a)); }, {a}}},
        {"concat_cols", {[&] { return project(ad::concat_cols({a, c})); }, {a, c}}},
        {"slice_cols", {[&] { return project(ad::slice_cols(a, 1, 2)); }, {a}}},
        {"mean_stack", {[&] { return project(ad::mean_stack({a, c})); }, {a, c}}},
        {"gather_rows", {[&] { return project(ad::gather_rows(a, src)); }, {a}}},
        {"scale_rows", {[&] { return project(ad::scale_rows(m, s)); }, {m, s}}},
        {"row_sum", {[&] { return project(ad::row_sum(a)); }, {a}}},
        {"row_cosine", {[&] { return project(ad::row_cosine(a, c)); }, {a, c}}},
        {"segment_softmax", {[&] { return project(ad::segment_softmax(s, tgt, 6)); }, {s}}},
        {"pair_tanh_scores", {[&] { return project(ad::pair_tanh_scores(a, w, src, tgt)); }, {a, w}}},
        {"dropout", {[&] {
                         CounterRng r(5);
                         return project(ad::dropout(a, 0.4, true, r));
                     },
                     {a}}},
        {"softmax_cross_entropy", {[&] { return ad::softmax_cross_entropy(ad::matmul(a, b), labels, rows); }, {a, b}}},
        {"sigmoid_cross_entropy", {[&] { return ad::sigmoid_cross_entropy(ad::matmul(a, b), targets, rows); }, {a, b}}},
    };
    for (const auto& [kind, name] : kActivationNames)
        ops.push_back({"activation:" + std::string(name),
                       {[&, k = kind] { return project(ad::activation(k, a)); }, {a}}});
    for (const auto& [kind, name] : kAggregatorNames) {
        std::vector<Tensor> leaves{m};
        if (kind == Aggregator::mlp) leaves.insert(leaves.end(), {mlp.hidden, mlp.out});
        ops.push_back({"neighbor_aggregate:" + std::string(name),
                       {[&, k = kind] { return project(ad::neighbor_aggregate(k, m, tgt, 6, &mlp)); }, leaves}});
        std::vector<Tensor> fused{a, s};
        if (kind == Aggregator::mlp) fused.insert(fused.end(), {mlp.hidden, mlp.out});
        ops.push_back({"message_aggregate:" + std::string(name),
                       {[&, k = kind] { return project(ad::message_aggregate(k, a, s, src, tgt, 6, &mlp)); }, fused}});
    }

    double worst_op = 0;
    std::string worst_op_name;
    for (const auto& [name, job] : ops) {
        const double e = testing::gradcheck(job.first, job.second);
        if (e > worst_op) worst_op = e, worst_op_name = name;
    }

    const auto g = testing::six_node_graph(4, 3, 2);
    const auto edges = build_edge_index(g, true);
    const auto train = g.nodes_in(Split::train);
    const std::vector<Index> train_rows(train.begin(), train.end());
    double worst_model = 0;
    std::string worst_pair;
    for (const auto& [att, att_name] : kAttentionNames) {
        for (const auto& [agg, agg_name] : kAggregatorNames) {
            StructureChromosome st{{{att, 2, agg, Activation::tanh, 3}, {att, 2, agg, Activation::tanh, 2}}};
            GnnModel model(st, 3, 2, {}, 11);
            CounterRng r;
            std::vector<Tensor> leaves;
            for (auto& e : model.params().entries()) leaves.push_back(e.tensor);
            const double e = testing::gradcheck(
                [&] { return ad::softmax_cross_entropy(model.forward(g, edges, {}, false, r), g.labels, train_rows); },
                leaves);
            if (e > worst_model) worst_model = e, worst_pair = std::string(att_name) + "/" + std::string(agg_name);
        }
    }
    const double secs = seconds_since(t0);
    return check(worst_op < 1e-4 && worst_model < 1e-3 && secs < 120,
                 std::to_string(ops.size()) + " op checks, worst rel err " + sci(worst_op) + " (" +
                     worst_op_name + "); 28 model pairs, worst " + sci(worst_model) + " (" + worst_pair +
                     "); " + fmt(secs, 1) + "s");
}

// ---------------------------------------------------------------------------
// 2. parameter fitness

Verdict criterion_param_fitness() {
    CounterRng rng(8);
    double worst = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const double alpha = rng.uniform();
        const std::size_t n = 1 + rng.index(30);
        std::vector<double> acc(n);
        for (auto& x : acc) x = rng.index(4) == 0 ? 0.0 : rng.uniform();
        // Brute force: best by pairwise dominance, mean summed in long double.
        double best = acc[0];
        for (std::size_t i = 0; i < n; ++i) {
            bool dominates = true;
            for (std::size_t j = 0; j < n; ++j) dominates = dominates && acc[i] >= acc[j];
            if (dominates) best = acc[i];
        }
        long double total = 0;
        for (double x : acc) total += x;
        const double expected = alpha * best + (1 - alpha) * static_cast<double>(total / n);
        worst = std::max(worst, std::fabs(param_fitness(acc, alpha) - expected));
    }
    return check(worst <= 1e-12, "100 instances, max abs diff " + sci(worst));
}

// ---------------------------------------------------------------------------
// 3. GA vs exhaustive enumeration

Verdict criterion_surrogate() {
    const auto t0 = std::chrono::steady_clock::now();
    const SearchSpace space;
    const std::size_t size = space.structure_space_size(1);
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const SurrogateFitness f(space, 1, seed);
        double optimum = -1;
        for (std::size_t code = 0; code < size; ++code) {
            StructureChromosome s;
            s.layers.resize(1);
            std::size_t r = code;
            for (std::size_t pos = 0; pos < kGenesPerLayer; ++pos) {
                const auto n = space.structure_choices(pos);
                set_structure_gene(s, pos, r % n, space);
                r /= n;
            }
            optimum = std::max(optimum, f(s));
        }
        EvolutionConfig c;  // defaults otherwise
        c.depth = 1;
        c.structure_generations = 30;
        c.seed = seed;
        const auto st = Search(space, c, f.evaluator()).run();
        hits += st.best.outcome.val == optimum;
    }
    const double secs = seconds_since(t0);
    return check(hits >= 18 && size == 9408 && secs < 60,
                 std::to_string(hits) + "/20 seeds found the optimum of " + std::to_string(size) + " chromosomes; " +
                     fmt(secs, 1) + "s");
}

// ---------------------------------------------------------------------------
// 4, 5, 7. desk search

struct DeskRun {
    SearchState state;
    std::string csv;
    double seconds = 0;
    std::size_t violations = 0;
    std::size_t audited = 0;
};

EvolutionConfig desk_config(std::size_t parallelism) {
    EvolutionConfig c;
    c.depth = 2;
    c.structure_population = 6;
    c.param_population = 4;
    c.structure_generations = 5;
    c.param_generations = 3;
    c.parents_struct = 6;
    c.children_struct = 4;
    c.parents_param = 4;
    c.children_param = 2;
    c.epochs = 100;
    c.seed = 123;
    c.parallelism = parallelism;
    return c;
}

const Graph& desk_graph() {
    static const Graph g = synth_graph(300, 3, 0.9, 0.6, 123);
    return g;
}

template <typename T>
std::multiset<std::string> canon_set(const Population<T>& pop) {
    std::multiset<std::string> out;
    for (const auto& ind : pop) out.insert(ind.chromosome.canonical());
    return out;
}

DeskRun desk_search(std::size_t parallelism) {
    DeskRun run;
    SearchHooks hooks;
    hooks.on_mating = [&](const Mating& m) {
        ++run.audited;
        const bool ok = m.phase == Phase::param
                            ? m.child.structure.canonical() == m.parent_a.structure.canonical() &&
                                  m.child.structure.canonical() == m.parent_b.structure.canonical()
                            : m.child.params.canonical() == m.parent_a.params.canonical() &&
                                  m.child.params.canonical() == m.parent_b.params.canonical();
        run.violations += !ok;
    };
    hooks.on_phase = [&](Phase p, const SearchState& before, const SearchState& after) {
        ++run.audited;
        const bool ok = p == Phase::param ? canon_set(before.structures) == canon_set(after.structures)
                                          : canon_set(before.params) == canon_set(after.params);
        run.violations += !ok;
    };
    const auto t0 = std::chrono::steady_clock::now();
    const std::span<const Graph> graphs(&desk_graph(), 1);
    run.state = Search(SearchSpace{}, desk_config(parallelism), training_evaluator(graphs, 100), hooks).run();
    run.seconds = seconds_since(t0);
    run.csv = history_csv(run.state.history);
    return run;
}

std::optional<DeskRun> g_desk_p1, g_desk_p4;

const DeskRun& desk(std::size_t parallelism) {
    auto& slot = parallelism == 1 ? g_desk_p1 : g_desk_p4;
    if (!slot) slot = desk_search(parallelism);
    return *slot;
}

Verdict criterion_desk_search() {
    const double oracle = testing::logistic_regression_accuracy(desk_graph(), Split::val);
    const auto& r = desk(4);
    const auto& bsf = r.state.best_so_far;
    bool monotone = bsf.size() == 5;
    for (std::size_t i = 1; i < bsf.size(); ++i) monotone = monotone && bsf[i] >= bsf[i - 1];
    const double best = r.state.best.outcome.val;
    std::string curve;
    for (double v : bsf) curve += (curve.empty() ? "" : ",") + fmt(v);
    return check(oracle >= 0.85 && monotone && best >= 0.85 && r.seconds < 900,
                 "LR oracle val " + fmt(oracle) + "; best-so-far [" + curve + "]; best val " + fmt(best) + " (" +
                     r.state.best.genome.canonical() + "); " + std::to_string(r.state.evaluations) +
                     " trainings in " + fmt(r.seconds, 1) + "s at parallelism 4");
}

Verdict criterion_determinism() {
    const auto& a = desk(1);
    const auto& b = desk(4);
    return check(a.csv == b.csv && !a.csv.empty(),
                 "history CSVs " + std::string(a.csv == b.csv ? "byte-identical" : "differ") + " (" +
                     std::to_string(a.csv.size()) + " bytes; parallelism 1 took " + fmt(a.seconds, 1) + "s)");
}

Verdict criterion_phase_isolation() {
    const auto& r = desk(4);
    return check(r.violations == 0 && r.audited > 0,
                 std::to_string(r.audited) + " matings and phases audited, " + std::to_string(r.violations) +
                     " violations");
}

// ---------------------------------------------------------------------------
// 6. Cora spot check

Verdict criterion_cora() {
    const char* dir = std::getenv("GNAS_CORA_DIR");
    if (!dir) return {Verdict::skip, "set GNAS_CORA_DIR to a folder with cora.edges, cora.features, cora.labels"};
    const std::filesystem::path root(dir);
    Json cfg;
    cfg["dataset"] = {{"kind", "files"},
                      {"edges", (root / "cora.edges").string()},
                      {"features", (root / "cora.features").string()},
                      {"labels", (root / "cora.labels").string()},
                      {"per_class", {{"train", 20}, {"val", 500}, {"test", 1000}, {"seed", 0}}}};
    if (std::filesystem::exists(root / "cora.split")) cfg["dataset"]["split"] = (root / "cora.split").string();
    testing::TempDir tmp;
    const auto path = tmp.write("cora.json", cfg.dump());
    const std::vector<std::string> args{"gnas_cli", "train-one", "--config", path.string(), "--genome",
                                        "gcn|1|sum|relu|16;gcn|1|sum|linear|7 :: 0.5,0.5|5e-4|1e-2",
                                        "--epochs", "200", "--repeats", "1"};
    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    std::ostringstream out, err;
    const auto t0 = std::chrono::steady_clock::now();
    const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    const double secs = seconds_since(t0);
    if (code != 0) return {Verdict::fail, "train-one exited " + std::to_string(code) + ": " + err.str()};
    const auto text = out.str();
    const auto pos = text.find(" test ");
    const double test = pos == std::string::npos ? 0.0 : std::atof(text.c_str() + pos + 6);
    return check(test >= 0.75 && secs < 180, "test accuracy " + fmt(test) + "; " + fmt(secs, 1) + "s");
}

// ---------------------------------------------------------------------------
// 8. crossover figures

Verdict criterion_crossover_figures() {
    const ParamChromosome pa{{0.1, 0.2}, 5e-4, 1e-3}, pb{{0.5, 0.6}, 4e-3, 1e-2};
    const auto [pc, pd] = crossover(pa, pb, 2);
    const bool params_ok = pc.canonical() == "0.1,0.2|4e-3|0.01" && pd.canonical() == "0.5,0.6|5e-4|1e-3";

    const auto sa = parse_structure("gat|2|sum|relu|16;gcn|4|mlp|tanh|32");
    const auto sb = parse_structure("cos|8|max-pooling|elu|64;linear|1|sum|relu6|128");
    const auto [sc, sd] = crossover(sa, sb, 4);
    const bool struct_ok = sc.canonical() == "gat|2|sum|relu|64;linear|1|sum|relu6|128" &&
                           sd.canonical() == "cos|8|max-pooling|elu|16;gcn|4|mlp|tanh|32";

    // Whole-genome forms keep the other half fixed.
    const Genome ga{sa, pa}, gb{sb, pb};
    const auto [g1, g2] = crossover_param(ga, gb, 2);
    const auto [g3, g4] = crossover_struct(ga, gb, 4);
    const bool fixed_ok = g1.structure == sa && g2.structure == sb && g3.params == pa && g4.params == pb;
    return check(params_ok && struct_ok && fixed_ok,
                 "point 2: " + pc.canonical() + " / " + pd.canonical() + "; point 4: " + sc.canonical() + " / " +
                     sd.canonical());
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    const std::vector<std::pair<int, std::pair<const char*, Verdict (*)()>>> criteria{
        {1, {"gradient correctness", criterion_gradients}},
        {2, {"parameter fitness oracle", criterion_param_fitness}},
        {3, {"GA vs exhaustive optimum", criterion_surrogate}},
        {4, {"end-to-end desk search", criterion_desk_search}},
        {5, {"determinism under parallelism", criterion_determinism}},
        {6, {"Cora GCN spot check", criterion_cora}},
        {7, {"phase isolation", criterion_phase_isolation}},
        {8, {"crossover figures", criterion_crossover_figures}},
    };
    int failures = 0;
    for (const auto& [id, entry] : criteria) {
        if (!only.empty() && !only.count(id)) continue;
        Verdict v;
        try {
            v = entry.second();
        } catch (const std::exception& e) {
            v = {Verdict::fail, std::string("exception: ") + e.what()};
        }
        const char* tag = v.kind == Verdict::pass ? "PASS" : v.kind == Verdict::fail ? "FAIL" : "SKIP";
        failures += v.kind == Verdict::fail;
        std::printf("%s criterion %d (%s): %s\n", tag, id, entry.first, v.detail.c_str());
        std::fflush(stdout);
    }
    return failures ? 1 : 0;
}
