#include <atomic>
#include <cmath>

#include <gtest/gtest.h>

#include "gnas/evolution.hpp"

namespace gnas {
namespace {

const SearchSpace kSpace{};

ParamChromosome P(std::vector<double> d, double wd, double lr) { return {std::move(d), wd, lr}; }

TEST(ParamFitness, Examples) {
    const std::vector<double> acc{0.8, 0.6};
    EXPECT_NEAR(param_fitness(acc, 0.6), 0.76, 1e-15);
    EXPECT_EQ(param_fitness(acc, 1.0), 0.8);
    EXPECT_NEAR(param_fitness(acc, 0.0), 0.7, 1e-15);
    EXPECT_EQ(param_fitness({}, 0.6), 0.0);
    const std::vector<double> failed{0.0, 0.0, 0.0};
    EXPECT_EQ(param_fitness(failed, 0.6), 0.0);
}

Population<ParamChromosome> params_with(std::vector<double> fitness) {
    Population<ParamChromosome> pop;
    for (std::size_t i = 0; i < fitness.size(); ++i)
        pop.push_back({P({kSpace.dropout[i % 7], 0.1}, 5e-4, 1e-3), fitness[i]});
    return pop;
}

TEST(Select, TopK) {
    const auto pop = params_with({0.9, 0.1, 0.5});
    const auto sel = select_parents(pop, 2);
    ASSERT_EQ(sel.size(), 2u);
    EXPECT_EQ(sel[0], pop[0]);
    EXPECT_EQ(sel[1], pop[2]);
    EXPECT_EQ(select_parents(pop, 3).size(), 3u);
    EXPECT_THROW(select_parents(pop, 4), ValidationError);
}

TEST(Select, TiesGoToSmallerCanonicalString) {
    Population<ParamChromosome> pop{{P({0.5}, 5e-4, 1e-2), 0.7}, {P({0.1}, 5e-4, 1e-2), 0.7}, {P({0.3}, 5e-4, 1e-2), 0.2}};
    const auto sel = select_parents(pop, 1);
    EXPECT_EQ(sel[0].chromosome.canonical(), "0.1|5e-4|0.01");
}

TEST(Crossover, ParameterFigureAtPoint2) {
    const auto a = P({0.1, 0.2}, 5e-4, 1e-3);
    const auto b = P({0.5, 0.6}, 4e-3, 1e-2);
    const auto [c, d] = crossover(a, b, 2);
    EXPECT_EQ(c, P({0.1, 0.2}, 4e-3, 1e-2));
    EXPECT_EQ(d, P({0.5, 0.6}, 5e-4, 1e-3));
    EXPECT_THROW(crossover(a, b, 0), ValidationError);
    EXPECT_THROW(crossover(a, b, 4), ValidationError);
    const auto [e, f] = crossover(a, a, 3);
    EXPECT_EQ(e, a);
    EXPECT_EQ(f, a);
}

TEST(Crossover, StructureFigureAtPoint4) {
    const auto a = parse_structure("gat|2|sum|relu|16;gcn|4|mlp|tanh|32");
    const auto b = parse_structure("cos|8|max-pooling|elu|64;linear|1|sum|relu6|128");
    const auto [c, d] = crossover(a, b, 4);
    EXPECT_EQ(c.canonical(), "gat|2|sum|relu|64;linear|1|sum|relu6|128");
    EXPECT_EQ(d.canonical(), "cos|8|max-pooling|elu|16;gcn|4|mlp|tanh|32");
    EXPECT_THROW(crossover(a, b, 10), ValidationError);
}

TEST(Crossover, PhaseContract) {
    const Genome a{parse_structure("gat|2|sum|relu|16;gcn|4|mlp|tanh|32"), P({0.1, 0.2}, 5e-4, 1e-3)};
    const Genome b{parse_structure("cos|8|max-pooling|elu|64;linear|1|sum|relu6|128"), P({0.5, 0.6}, 4e-3, 1e-2)};
    for (std::size_t point = 1; point < 4; ++point) {
        const auto [c, d] = crossover_param(a, b, point);
        EXPECT_EQ(c.structure, a.structure);
        EXPECT_EQ(d.structure, b.structure);
    }
    for (std::size_t point = 1; point < 10; ++point) {
        const auto [c, d] = crossover_struct(a, b, point);
        EXPECT_EQ(c.params, a.params);
        EXPECT_EQ(d.params, b.params);
    }
}

TEST(Mutate, ZeroProbabilityIsIdentity) {
    CounterRng rng(1);
    auto s = random_structure(kSpace, 2, rng);
    auto p = random_params(kSpace, 2, rng);
    const auto s0 = s;
    const auto p0 = p;
    EXPECT_EQ(mutate(s, 0.0, kSpace, rng), 0u);
    EXPECT_EQ(mutate(p, 0.0, kSpace, rng), 0u);
    EXPECT_EQ(s, s0);
    EXPECT_EQ(p, p0);
}

TEST(Mutate, ProbabilityOneChangesEveryGene) {
    CounterRng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto s = random_structure(kSpace, 2, rng);
        auto p = random_params(kSpace, 2, rng);
        const auto s0 = s;
        const auto p0 = p;
        mutate(s, 1.0, kSpace, rng);
        mutate(p, 1.0, kSpace, rng);
        for (std::size_t pos = 0; pos < s.gene_count(); ++pos)
            EXPECT_NE(structure_gene_choice(s, pos, kSpace), structure_gene_choice(s0, pos, kSpace));
        for (std::size_t pos = 0; pos < p.gene_count(); ++pos) EXPECT_NE(p.gene(pos), p0.gene(pos));
        check_in_space(s, kSpace);
        check_in_space(p, kSpace);
    }
}

TEST(Mutate, RateMatchesProbability) {
    CounterRng rng(3);
    std::size_t changed = 0, total = 0;
    while (total < 10000) {
        auto s = random_structure(kSpace, 2, rng);
        changed += mutate(s, 0.02, kSpace, rng);
        total += s.gene_count();
    }
    EXPECT_NEAR(static_cast<double>(changed) / static_cast<double>(total), 0.02, 0.005);
}

TEST(Mutate, GenomeMutationTouchesOnlyTheActivePhase) {
    CounterRng rng(4);
    const Genome g{random_structure(kSpace, 2, rng), random_params(kSpace, 2, rng)};
    const auto a = mutate(g, Phase::param, 1.0, kSpace, rng);
    EXPECT_EQ(a.structure, g.structure);
    EXPECT_NE(a.params, g.params);
    const auto b = mutate(g, Phase::structure, 1.0, kSpace, rng);
    EXPECT_EQ(b.params, g.params);
    EXPECT_NE(b.structure, g.structure);
}

TEST(Update, Elitism) {
    const auto pop = params_with({0.9, 0.1, 0.5});
    Population<ParamChromosome> worse{{P({0.6, 0.6}, 1e-3, 1e-3), 0.05}};
    EXPECT_EQ(update_population(pop, worse), select_parents(pop, 3));

    Population<ParamChromosome> better{{P({0.6, 0.6}, 1e-3, 1e-3), 0.3}};
    const auto up = update_population(pop, better);
    ASSERT_EQ(up.size(), 3u);
    EXPECT_EQ(up[2], better[0]);
    EXPECT_GE(up[0].fitness, 0.9);

    // a child equal to a member does not take a second slot
    Population<ParamChromosome> dup{{pop[0].chromosome, 0.9}};
    const auto same = update_population(pop, dup);
    EXPECT_EQ(same, select_parents(pop, 3));
}

TEST(Update, PropertyBestNeverDecreasesAndSizeIsConstant) {
    CounterRng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        Population<ParamChromosome> pop, kids;
        for (int i = 0; i < 6; ++i) pop.push_back({random_params(kSpace, 2, rng), rng.uniform()});
        for (int i = 0; i < 3; ++i) kids.push_back({random_params(kSpace, 2, rng), rng.uniform()});
        const auto up = update_population(pop, kids);
        EXPECT_EQ(up.size(), pop.size());
        EXPECT_GE(up[0].fitness, select_parents(pop, 1)[0].fitness);
    }
}

TEST(Children, NovelAndInSpace) {
    CounterRng rng(6);
    Population<StructureChromosome> parents;
    std::set<std::string> seen;
    for (int i = 0; i < 10; ++i) {
        parents.push_back({random_structure(kSpace, 2, rng), 0.0});
        seen.insert(parents.back().chromosome.canonical());
    }
    const auto kids = make_children(parents, 4, seen, 0.02, 50, kSpace, rng);
    ASSERT_EQ(kids.size(), 4u);
    std::set<std::string> keys;
    for (const auto& k : kids) {
        check_in_space(k, kSpace);
        EXPECT_FALSE(seen.count(k.canonical()));
        keys.insert(k.canonical());
    }
    EXPECT_EQ(keys.size(), 4u);

    // a single parent still yields a new child through forced mutation
    const Population<StructureChromosome> one{parents[0]};
    const auto solo = make_children(one, 1, seen, 0.0, 5, kSpace, rng);
    EXPECT_FALSE(seen.count(solo[0].canonical()));
}

TEST(Init, SizesMembershipDeterminism) {
    const Search search(kSpace, EvolutionConfig{}, SurrogateFitness(kSpace, 2, 1).evaluator());
    const auto a = search.initial_state();
    EXPECT_EQ(a.structures.size(), 20u);
    EXPECT_EQ(a.params.size(), 6u);
    for (const auto& s : a.structures) check_in_space(s.chromosome, kSpace);
    for (const auto& p : a.params) check_in_space(p.chromosome, kSpace);
    const auto b = search.initial_state();
    EXPECT_EQ(a.structures, b.structures);
    EXPECT_EQ(a.params, b.params);
}

TEST(Config, Validation) {
    EvolutionConfig c;
    EXPECT_NO_THROW(c.validate());
    c.children_struct = 11;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.parents_param = 7;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.parallelism = 0;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Cache, HitsDoNotReevaluate) {
    std::atomic<int> calls{0};
    Evaluator counting = [&](const Genome& g, std::uint64_t seed) {
        ++calls;
        return EvalOutcome{static_cast<double>(seed % 1000) / 1000.0, 0.0, false};
    };
    CounterRng rng(7);
    std::vector<Genome> batch;
    for (int i = 0; i < 5; ++i) batch.push_back({random_structure(kSpace, 2, rng), random_params(kSpace, 2, rng)});
    batch.push_back(batch[0]);
    FitnessCache cache;
    EXPECT_EQ(evaluate_batch(batch, cache, counting, 1, 3), 5u);
    EXPECT_EQ(calls.load(), 5);
    const auto first = cache.at(batch[2].canonical());
    EXPECT_EQ(evaluate_batch(batch, cache, counting, 1, 3), 0u);
    EXPECT_EQ(calls.load(), 5);
    EXPECT_EQ(cache.at(batch[2].canonical()), first);
}

TEST(Cache, EvaluatorErrorsPropagate) {
    Evaluator bad = [](const Genome&, std::uint64_t) -> EvalOutcome { throw std::runtime_error("boom"); };
    CounterRng rng(8);
    std::vector<Genome> batch{{random_structure(kSpace, 1, rng), random_params(kSpace, 1, rng)}};
    FitnessCache cache;
    EXPECT_THROW(evaluate_batch(batch, cache, bad, 1, 2), std::runtime_error);
}

EvolutionConfig small_config(std::uint64_t seed) {
    EvolutionConfig c;
    c.depth = 1;
    c.structure_generations = 8;
    c.param_generations = 3;
    c.seed = seed;
    return c;
}

TEST(Search, BestSoFarNonDecreasingAndSizesConstant) {
    const auto c = small_config(11);
    std::size_t phases = 0;
    SearchHooks hooks;
    hooks.on_phase = [&](Phase, const SearchState& before, const SearchState& after) {
        ++phases;
        EXPECT_EQ(after.structures.size(), c.structure_population);
        EXPECT_EQ(after.params.size(), c.param_population);
        for (const auto& s : after.structures) check_in_space(s.chromosome, kSpace);
        for (const auto& p : after.params) check_in_space(p.chromosome, kSpace);
        (void)before;
    };
    Search search(kSpace, c, SurrogateFitness(kSpace, 1, 3).evaluator(), hooks);
    const auto st = search.run();
    EXPECT_EQ(phases, 16u);
    EXPECT_EQ(st.generation, 8u);
    EXPECT_EQ(st.history.size(), 16u);
    ASSERT_EQ(st.best_so_far.size(), 8u);
    for (std::size_t i = 1; i < st.best_so_far.size(); ++i) EXPECT_GE(st.best_so_far[i], st.best_so_far[i - 1]);
}

TEST(Search, RandomSearchBaseline) {
    EvolutionConfig c;
    c.depth = 1;
    c.structure_generations = 1;
    c.param_generations = 0;
    c.children_struct = 0;
    c.children_param = 0;
    c.mutation_prob = 0.0;
    c.seed = 5;
    const SurrogateFitness f(kSpace, 1, 9);
    Search search(kSpace, c, f.evaluator());
    const auto init = search.initial_state();
    double best = 0;
    for (const auto& s : init.structures) best = std::max(best, f(s.chromosome));
    const auto st = search.run(init);
    EXPECT_EQ(st.best.outcome.val, best);
    std::set<std::string> pairs;
    for (const auto& s : init.structures)
        for (const auto& p : init.params) pairs.insert(Genome{s.chromosome, p.chromosome}.canonical());
    EXPECT_EQ(st.cache.size(), pairs.size());
}

TEST(Search, ParallelismDoesNotChangeHistory) {
    auto run = [](std::size_t parallelism) {
        auto c = small_config(21);
        c.parallelism = parallelism;
        return history_csv(Search(kSpace, c, SurrogateFitness(kSpace, 1, 4).evaluator()).run().history);
    };
    EXPECT_EQ(run(1), run(4));
}

TEST(Search, ParallelTrainingDoesNotChangeHistory) {
    const auto g = synth_graph(40, 2, 0.9, 0.6, 1);
    const std::span<const Graph> graphs(&g, 1);
    auto run = [&](std::size_t parallelism) {
        EvolutionConfig c;
        c.depth = 1;
        c.structure_population = 3;
        c.param_population = 2;
        c.parents_struct = 2;
        c.children_struct = 1;
        c.parents_param = 2;
        c.children_param = 1;
        c.structure_generations = 2;
        c.param_generations = 1;
        c.seed = 3;
        c.parallelism = parallelism;
        SearchSpace small;
        small.hidden = {4, 8};
        small.heads = {1, 2};
        return history_csv(Search(small, c, training_evaluator(graphs, 5)).run().history);
    };
    EXPECT_EQ(run(1), run(3));
}

TEST(Search, ResumeMatchesUninterruptedRun) {
    const auto c = small_config(31);
    const auto ev = SurrogateFitness(kSpace, 1, 5).evaluator();
    const auto full = Search(kSpace, c, ev).run();

    SearchHooks stop;
    stop.stop_after = 3;
    const auto partial = Search(kSpace, c, ev, stop).run();
    EXPECT_EQ(partial.generation, 3u);
    const auto resumed = Search(kSpace, c, ev).run(partial);
    EXPECT_EQ(history_csv(resumed.history), history_csv(full.history));
    EXPECT_EQ(resumed.best.genome, full.best.genome);
}

TEST(Search, PhaseIsolation) {
    std::size_t violations = 0, matings = 0;
    SearchHooks hooks;
    hooks.on_mating = [&](const Mating& m) {
        ++matings;
        if (m.phase == Phase::param) {
            violations += m.child.structure != m.parent_a.structure;
        } else {
            violations += m.child.params != m.parent_a.params;
        }
    };
    hooks.on_phase = [&](Phase phase, const SearchState& before, const SearchState& after) {
        if (phase == Phase::param)
            violations += before.structures != after.structures;
        else
            violations += before.params != after.params;
    };
    Search(kSpace, small_config(41), SurrogateFitness(kSpace, 1, 6).evaluator(), hooks).run();
    EXPECT_GT(matings, 0u);
    EXPECT_EQ(violations, 0u);
}

TEST(History, CsvRoundTrip) {
    auto c = small_config(51);
    c.depth = 2;
    const auto st = Search(kSpace, c, SurrogateFitness(kSpace, 2, 7).evaluator()).run();
    const auto csv = history_csv(st.history);
    EXPECT_EQ(parse_history_csv(csv), st.history);
    EXPECT_NE(csv.find("\""), std::string::npos);  // dropout lists contain commas
    EXPECT_THROW(parse_history_csv("nope\n"), ParseError);
}

}  // namespace
}  // namespace gnas
