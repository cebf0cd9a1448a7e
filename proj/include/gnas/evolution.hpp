#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gnas/chromosome.hpp"
#include "gnas/error.hpp"
#include "gnas/gnn.hpp"
#include "gnas/rng.hpp"
#include "gnas/text.hpp"

namespace gnas {

struct EvolutionConfig {
    std::size_t depth = 2;
    std::size_t structure_population = 20;  // N_s
    std::size_t param_population = 6;       // N_p
    std::size_t structure_generations = 50; // K_s
    std::size_t param_generations = 10;     // K_p
    double alpha = 0.6;
    std::size_t parents_struct = 10;
    std::size_t children_struct = 4;
    std::size_t parents_param = 4;
    std::size_t children_param = 2;
    double mutation_prob = 0.02;
    std::size_t epochs = 200;
    std::uint64_t seed = 0;
    std::size_t parallelism = 1;
    // Crossover retries before a duplicate child is forced to mutate.
    std::size_t novelty_attempts = 50;

    void validate() const {
        if (depth == 0) throw ValidationError("depth must be at least 1");
        if (structure_population == 0 || param_population == 0)
            throw ValidationError("population sizes must be positive");
        if (structure_generations == 0) throw ValidationError("structure_generations must be at least 1");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
        if (!(mutation_prob >= 0.0 && mutation_prob <= 1.0)) throw ValidationError("mutation_prob must lie in [0, 1]");
        if (parallelism == 0) throw ValidationError("parallelism must be at least 1");
        auto check = [](std::size_t children, std::size_t parents, std::size_t pop, const char* what) {
            if (parents > pop)
                throw ValidationError(std::string("parents_") + what + " (" + std::to_string(parents) +
                                      ") exceeds the population size (" + std::to_string(pop) + ")");
            if (children > parents)
                throw ValidationError(std::string("children_") + what + " (" + std::to_string(children) +
                                      ") exceeds parents_" + what + " (" + std::to_string(parents) + ")");
        };
        check(children_struct, parents_struct, structure_population, "struct");
        check(children_param, parents_param, param_population, "param");
    }
};

enum class Phase { param, structure };

inline std::string_view to_string(Phase p) { return p == Phase::param ? "param" : "struct"; }

// ---------------------------------------------------------------------------
// Fitness evaluation and caching

struct EvalOutcome {
    double val = 0.0;
    double test = 0.0;
    bool failed = false;

    friend bool operator==(const EvalOutcome&, const EvalOutcome&) = default;
};

/// Scores one (structure, params) pair. Must be safe to call concurrently.
using Evaluator = std::function<EvalOutcome(const Genome&, std::uint64_t seed)>;

/// Trains the pair on `graphs` for `epochs`; the caller keeps the graphs alive.
inline Evaluator training_evaluator(std::span<const Graph> graphs, std::size_t epochs, ModelOptions options = {}) {
    return [graphs, epochs, options](const Genome& g, std::uint64_t seed) {
        const auto c = build_and_train(g.structure, g.params, graphs, epochs, seed, options);
        return EvalOutcome{c.val_score, c.test_score, c.failed};
    };
}

/// Additive random fitness over structure genes, scaled to [0, 1]. Each
/// (position, choice) gets an independent U(0,1) contribution, so the
/// optimum is the per-position argmax and can also be found by enumeration.
class SurrogateFitness {
public:
    SurrogateFitness(const SearchSpace& space, std::size_t depth, std::uint64_t seed) : space_(space) {
        CounterRng rng(seed, "surrogate");
        table_.resize(depth * kGenesPerLayer);
        double lo = 0, hi = 0;
        for (std::size_t pos = 0; pos < table_.size(); ++pos) {
            table_[pos].resize(space.structure_choices(pos));
            for (auto& v : table_[pos]) v = rng.uniform();
            lo += *std::min_element(table_[pos].begin(), table_[pos].end());
            hi += *std::max_element(table_[pos].begin(), table_[pos].end());
        }
        offset_ = lo;
        range_ = hi > lo ? hi - lo : 1.0;
    }

    double operator()(const StructureChromosome& s) const {
        double total = 0;
        for (std::size_t pos = 0; pos < table_.size(); ++pos) {
            const auto choice = structure_gene_choice(s, pos, space_);
            if (!choice) throw ValidationError("surrogate: gene outside the search space");
            total += table_[pos][*choice];
        }
        return (total - offset_) / range_;
    }

    Evaluator evaluator() const {
        return [self = *this](const Genome& g, std::uint64_t) { return EvalOutcome{self(g.structure), 0.0, false}; };
    }

private:
    SearchSpace space_;
    std::vector<std::vector<double>> table_;
    double offset_ = 0;
    double range_ = 1;
};

/// Canonical genome string -> outcome. Hits replay the stored value exactly.
class FitnessCache {
public:
    std::optional<EvalOutcome> find(const std::string& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }
    const EvalOutcome& at(const std::string& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) throw ValidationError("no cached fitness for '" + key + "'");
        return it->second;
    }
    bool contains(const std::string& key) const { return entries_.count(key) != 0; }
    void insert(const std::string& key, EvalOutcome v) { entries_.insert_or_assign(key, v); }
    std::size_t size() const { return entries_.size(); }
    const std::map<std::string, EvalOutcome>& entries() const { return entries_; }

private:
    std::map<std::string, EvalOutcome> entries_;
};

/// Evaluates every genome missing from the cache, `parallelism` at a time.
/// The per-candidate seed depends only on (seed, genome), never on order.
/// Returns the number of new evaluations.
inline std::size_t evaluate_batch(const std::vector<Genome>& genomes, FitnessCache& cache, const Evaluator& evaluate,
                                  std::uint64_t seed, std::size_t parallelism) {
    std::vector<const Genome*> todo;
    std::vector<std::string> keys;
    std::set<std::string> queued;
    for (const auto& g : genomes) {
        auto key = g.canonical();
        if (cache.contains(key) || !queued.insert(key).second) continue;
        todo.push_back(&g);
        keys.push_back(std::move(key));
    }
    std::vector<EvalOutcome> results(todo.size());
    std::vector<std::exception_ptr> errors(todo.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < todo.size(); i = next++) {
            try {
                results[i] = evaluate(*todo[i], derive_seed(seed, keys[i]));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::min(parallelism, todo.size());
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (std::size_t i = 0; i < todo.size(); ++i) cache.insert(keys[i], results[i]);
    return todo.size();
}

// ---------------------------------------------------------------------------
// Fitness

/// alpha * best + (1 - alpha) * mean over the accuracies of one parameter
/// individual paired with every structure. Empty input scores 0.
inline double param_fitness(std::span<const double> accuracies, double alpha) {
    if (accuracies.empty()) return 0.0;
    const double best = *std::max_element(accuracies.begin(), accuracies.end());
    const double mean =
        std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
    return alpha * best + (1.0 - alpha) * mean;
}

// ---------------------------------------------------------------------------
// Populations

template <typename T>
struct Individual {
    T chromosome;
    double fitness = 0.0;

    friend bool operator==(const Individual&, const Individual&) = default;
};

template <typename T>
using Population = std::vector<Individual<T>>;

/// Fitter first; equal fitness falls back to the smaller canonical string.
template <typename T>
bool fitter(const Individual<T>& a, const Individual<T>& b) {
    if (a.fitness != b.fitness) return a.fitness > b.fitness;
    return a.chromosome.canonical() < b.chromosome.canonical();
}

template <typename T>
Population<T> select_parents(const Population<T>& population, std::size_t count) {
    if (count > population.size())
        throw ValidationError("cannot select " + std::to_string(count) + " parents from " +
                              std::to_string(population.size()) + " individuals");
    Population<T> sorted = population;
    std::stable_sort(sorted.begin(), sorted.end(), fitter<T>);
    sorted.resize(count);
    return sorted;
}

/// Elitist replacement: keep the fittest `population.size()` of the union.
/// Offspring identical to a member (or to an earlier offspring) are dropped so
/// a single chromosome cannot take several slots.
template <typename T>
Population<T> update_population(const Population<T>& population, const Population<T>& offspring) {
    Population<T> merged = population;
    std::set<std::string> present;
    for (const auto& ind : population) present.insert(ind.chromosome.canonical());
    for (const auto& child : offspring)
        if (present.insert(child.chromosome.canonical()).second) merged.push_back(child);
    std::stable_sort(merged.begin(), merged.end(), fitter<T>);
    merged.resize(population.size());
    return merged;
}

// ---------------------------------------------------------------------------
// Variation operators

inline void check_crossover_point(std::size_t point, std::size_t length) {
    if (point < 1 || point >= length)
        throw ValidationError("crossover point " + std::to_string(point) + " outside [1, " + std::to_string(length) +
                              ")");
}

/// Genes at positions >= point are exchanged.
inline std::pair<ParamChromosome, ParamChromosome> crossover(ParamChromosome a, ParamChromosome b, std::size_t point) {
    if (a.gene_count() != b.gene_count()) throw ValidationError("parameter strings differ in length");
    check_crossover_point(point, a.gene_count());
    for (std::size_t pos = point; pos < a.gene_count(); ++pos) std::swap(a.gene(pos), b.gene(pos));
    return {std::move(a), std::move(b)};
}

inline std::pair<StructureChromosome, StructureChromosome> crossover(StructureChromosome a, StructureChromosome b,
                                                                     std::size_t point) {
    if (a.gene_count() != b.gene_count()) throw ValidationError("structure strings differ in length");
    check_crossover_point(point, a.gene_count());
    for (std::size_t pos = point; pos < a.gene_count(); ++pos) swap_structure_gene(a, b, pos);
    return {std::move(a), std::move(b)};
}

/// Parameter-phase crossover on full genomes: structures stay with their owner.
inline std::pair<Genome, Genome> crossover_param(const Genome& a, const Genome& b, std::size_t point) {
    auto [pa, pb] = crossover(a.params, b.params, point);
    return {Genome{a.structure, std::move(pa)}, Genome{b.structure, std::move(pb)}};
}

inline std::pair<Genome, Genome> crossover_struct(const Genome& a, const Genome& b, std::size_t point) {
    auto [sa, sb] = crossover(a.structure, b.structure, point);
    return {Genome{std::move(sa), a.params}, Genome{std::move(sb), b.params}};
}

namespace detail {

/// Uniform draw from [0, choices) other than `current`.
inline std::size_t other_choice(std::optional<std::size_t> current, std::size_t choices, CounterRng& rng) {
    if (!current) return rng.index(choices);
    const auto k = rng.index(choices - 1);
    return k >= *current ? k + 1 : k;
}

}  // namespace detail

/// Each gene independently, with probability `prob`, takes a different value
/// from its candidate set. Genes with a single candidate never change.
/// Returns the number of genes changed.
inline std::size_t mutate(StructureChromosome& s, double prob, const SearchSpace& space, CounterRng& rng) {
    std::size_t changed = 0;
    for (std::size_t pos = 0; pos < s.gene_count(); ++pos) {
        if (!rng.bernoulli(prob)) continue;
        const auto n = space.structure_choices(pos);
        const auto current = structure_gene_choice(s, pos, space);
        if (n < 2 && current) continue;
        set_structure_gene(s, pos, detail::other_choice(current, n, rng), space);
        ++changed;
    }
    return changed;
}

inline std::size_t mutate(ParamChromosome& p, double prob, const SearchSpace& space, CounterRng& rng) {
    std::size_t changed = 0;
    for (std::size_t pos = 0; pos < p.gene_count(); ++pos) {
        if (!rng.bernoulli(prob)) continue;
        const auto n = space.param_choices(pos, p.dropout.size());
        const auto current = param_gene_choice(p, pos, space);
        if (n < 2 && current) continue;
        set_param_gene(p, pos, detail::other_choice(current, n, rng), space);
        ++changed;
    }
    return changed;
}

/// Phase-restricted mutation on a genome: only the active part can change.
inline Genome mutate(Genome g, Phase phase, double prob, const SearchSpace& space, CounterRng& rng) {
    if (phase == Phase::param)
        mutate(g.params, prob, space, rng);
    else
        mutate(g.structure, prob, space, rng);
    return g;
}

inline std::size_t gene_count(const StructureChromosome& s) { return s.gene_count(); }
inline std::size_t gene_count(const ParamChromosome& p) { return p.gene_count(); }

inline std::size_t choices_at(const StructureChromosome&, std::size_t pos, const SearchSpace& space) {
    return space.structure_choices(pos);
}
inline std::size_t choices_at(const ParamChromosome& p, std::size_t pos, const SearchSpace& space) {
    return space.param_choices(pos, p.dropout.size());
}

/// Changes exactly one gene (uniform position with at least two candidates).
template <typename T>
void mutate_one(T& c, const SearchSpace& space, CounterRng& rng) {
    std::vector<std::size_t> positions;
    for (std::size_t pos = 0; pos < gene_count(c); ++pos)
        if (choices_at(c, pos, space) > 1) positions.push_back(pos);
    if (positions.empty()) return;
    const auto pos = positions[rng.index(positions.size())];
    if constexpr (std::is_same_v<T, StructureChromosome>)
        set_structure_gene(c, pos, detail::other_choice(structure_gene_choice(c, pos, space), choices_at(c, pos, space), rng), space);
    else
        set_param_gene(c, pos, detail::other_choice(param_gene_choice(c, pos, space), choices_at(c, pos, space), rng), space);
}

/// Observer of every mating, for auditing. Parents and child are full genomes
/// in the phase they were produced.
struct Mating {
    Phase phase;
    Genome parent_a;
    Genome parent_b;
    Genome child;
};

/// Produces `count` children from `parents`. Each child is the first offspring
/// of a single-point crossover between two distinct random parents, then
/// mutated. A child already in `seen` (or already produced) is redrawn up to
/// `attempts` times, and if still a repeat it gets single-gene mutations.
template <typename T>
std::vector<T> make_children(const Population<T>& parents, std::size_t count, const std::set<std::string>& seen,
                             double mutation_prob, std::size_t attempts, const SearchSpace& space, CounterRng& rng,
                             const std::function<void(const T&, const T&, const T&)>& on_mating = {}) {
    std::vector<T> children;
    if (count == 0) return children;
    if (parents.empty()) throw ValidationError("no parents to mate");
    std::set<std::string> made;
    auto fresh = [&](const T& c) {
        const auto key = c.canonical();
        return !seen.count(key) && !made.count(key);
    };
    for (std::size_t k = 0; k < count; ++k) {
        const T* pa = nullptr;
        const T* pb = nullptr;
        T child;
        for (std::size_t attempt = 0; attempt <= attempts; ++attempt) {
            std::size_t i = rng.index(parents.size());
            std::size_t j = i;
            if (parents.size() > 1) {
                j = rng.index(parents.size() - 1);
                if (j >= i) ++j;
            }
            pa = &parents[i].chromosome;
            pb = &parents[j].chromosome;
            const auto length = gene_count(*pa);
            child = length > 1 ? crossover(*pa, *pb, 1 + rng.index(length - 1)).first : *pa;
            mutate(child, mutation_prob, space, rng);
            if (fresh(child)) break;
        }
        for (std::size_t tries = 0; !fresh(child) && tries < 4 * attempts; ++tries) mutate_one(child, space, rng);
        if (on_mating) on_mating(*pa, *pb, child);
        made.insert(child.canonical());
        children.push_back(std::move(child));
    }
    return children;
}

// ---------------------------------------------------------------------------
// Search state and driver

struct HistoryRow {
    std::size_t generation = 0;
    Phase phase = Phase::param;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    std::string best_chromosome;

    friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct BestRecord {
    Genome genome;
    EvalOutcome outcome;
    bool valid = false;
};

/// Everything needed to continue a run: populations, cache, RNG position,
/// history and the best pair evaluated so far.
struct SearchState {
    std::size_t generation = 0;  // completed outer generations
    Population<StructureChromosome> structures;
    Population<ParamChromosome> params;
    FitnessCache cache;
    std::uint64_t rng_key = 0;
    std::uint64_t rng_counter = 0;
    std::vector<HistoryRow> history;
    BestRecord best;
    std::vector<double> best_so_far;  // best validation score after each outer generation
    std::size_t evaluations = 0;      // trainings actually run (cache misses)
};

struct SearchHooks {
    std::function<void(const Mating&)> on_mating;
    /// Called with the state before and after each phase generation.
    std::function<void(Phase, const SearchState& before, const SearchState& after)> on_phase;
    /// Called after each completed outer generation (checkpointing, logging).
    std::function<void(const SearchState&)> on_generation;
    /// Stop cleanly once this many outer generations are complete.
    std::optional<std::size_t> stop_after;
};

class Search {
public:
    Search(SearchSpace space, EvolutionConfig config, Evaluator evaluator, SearchHooks hooks = {})
        : space_(std::move(space)), config_(config), evaluate_(std::move(evaluator)), hooks_(std::move(hooks)) {
        space_.validate();
        config_.validate();
    }

    /// Fresh random populations S_0 and P_0.
    SearchState initial_state() const {
        SearchState st;
        CounterRng rng(config_.seed, "population");
        for (std::size_t i = 0; i < config_.structure_population; ++i)
            st.structures.push_back({random_structure(space_, config_.depth, rng), 0.0});
        for (std::size_t j = 0; j < config_.param_population; ++j)
            st.params.push_back({random_params(space_, config_.depth, rng), 0.0});
        const CounterRng evo(config_.seed, "evolution");
        st.rng_key = evo.key();
        st.rng_counter = evo.counter();
        return st;
    }

    /// Runs outer generations until K_s (or the stop hook); resumable from
    /// any state this function has produced.
    SearchState run(SearchState st) {
        rebuild_seen(st);
        CounterRng rng(st.rng_key, st.rng_counter);
        while (st.generation < config_.structure_generations) {
            if (hooks_.stop_after && st.generation >= *hooks_.stop_after) break;
            const std::size_t g = st.generation + 1;

            // Parameter phase: P scored against the whole structure population.
            {
                const SearchState before = hooks_.on_phase ? st : SearchState{};
                score_params(st, st.params);
                for (std::size_t t = 0; t < config_.param_generations; ++t) {
                    const auto parents = select_parents(st.params, config_.parents_param);
                    const auto anchor = best_structure(st);
                    auto kids = make_children<ParamChromosome>(
                        parents, config_.children_param, seen_params_, config_.mutation_prob,
                        config_.novelty_attempts, space_, rng, [&](const auto& a, const auto& b, const auto& c) {
                            if (hooks_.on_mating)
                                hooks_.on_mating({Phase::param, {anchor, a}, {anchor, b}, {anchor, c}});
                        });
                    Population<ParamChromosome> offspring;
                    for (auto& k : kids) offspring.push_back({std::move(k), 0.0});
                    score_params(st, offspring);
                    st.params = update_population(st.params, offspring);
                }
                const auto& top = st.params.front();
                st.history.push_back({g, Phase::param, top.fitness, mean_fitness(st.params),
                                      Genome{best_structure_for(st, top.chromosome), top.chromosome}.canonical()});
                if (hooks_.on_phase) hooks_.on_phase(Phase::param, before, st);
            }

            // Structure phase: S scored with the winning parameter individual.
            {
                const SearchState before = hooks_.on_phase ? st : SearchState{};
                const auto best_param = st.params.front().chromosome;
                score_structures(st, st.structures, best_param);
                const auto parents = select_parents(st.structures, config_.parents_struct);
                auto kids = make_children<StructureChromosome>(
                    parents, config_.children_struct, seen_structures_, config_.mutation_prob,
                    config_.novelty_attempts, space_, rng, [&](const auto& a, const auto& b, const auto& c) {
                        if (hooks_.on_mating)
                            hooks_.on_mating({Phase::structure, {a, best_param}, {b, best_param}, {c, best_param}});
                    });
                Population<StructureChromosome> offspring;
                for (auto& k : kids) offspring.push_back({std::move(k), 0.0});
                score_structures(st, offspring, best_param);
                st.structures = update_population(st.structures, offspring);
                const auto& top = st.structures.front();
                st.history.push_back({g, Phase::structure, top.fitness, mean_fitness(st.structures),
                                      Genome{top.chromosome, best_param}.canonical()});
                if (hooks_.on_phase) hooks_.on_phase(Phase::structure, before, st);
            }

            st.generation = g;
            st.rng_key = rng.key();
            st.rng_counter = rng.counter();
            st.best_so_far.push_back(st.best.outcome.val);
            if (hooks_.on_generation) hooks_.on_generation(st);
        }
        return st;
    }

    SearchState run() { return run(initial_state()); }

    const SearchSpace& space() const { return space_; }
    const EvolutionConfig& config() const { return config_; }

private:
    template <typename T>
    static double mean_fitness(const Population<T>& pop) {
        double s = 0;
        for (const auto& ind : pop) s += ind.fitness;
        return s / static_cast<double>(pop.size());
    }

    void evaluate(SearchState& st, const std::vector<Genome>& genomes) {
        st.evaluations += evaluate_batch(genomes, st.cache, evaluate_, config_.seed, config_.parallelism);
        for (const auto& g : genomes) {
            const auto key = g.canonical();
            seen_structures_.insert(g.structure.canonical());
            seen_params_.insert(g.params.canonical());
            const auto& out = st.cache.at(key);
            if (!st.best.valid || out.val > st.best.outcome.val ||
                (out.val == st.best.outcome.val && key < st.best.genome.canonical())) {
                st.best = {g, out, true};
            }
        }
    }

    double accuracy(const SearchState& st, const StructureChromosome& s, const ParamChromosome& p) const {
        const auto& out = st.cache.at(Genome{s, p}.canonical());
        return out.failed ? 0.0 : out.val;
    }

    /// Eq. 8 fitness for each individual against the current structures.
    void score_params(SearchState& st, Population<ParamChromosome>& pop) {
        std::vector<Genome> batch;
        for (const auto& p : pop)
            for (const auto& s : st.structures) batch.push_back({s.chromosome, p.chromosome});
        evaluate(st, batch);
        for (auto& p : pop) {
            std::vector<double> acc;
            for (const auto& s : st.structures) acc.push_back(accuracy(st, s.chromosome, p.chromosome));
            p.fitness = param_fitness(acc, config_.alpha);
        }
    }

    void score_structures(SearchState& st, Population<StructureChromosome>& pop, const ParamChromosome& p) {
        std::vector<Genome> batch;
        for (const auto& s : pop) batch.push_back({s.chromosome, p});
        evaluate(st, batch);
        for (auto& s : pop) s.fitness = accuracy(st, s.chromosome, p);
    }

    /// The structure that scores highest with `p` (ties: smaller string).
    StructureChromosome best_structure_for(const SearchState& st, const ParamChromosome& p) const {
        const StructureChromosome* best = nullptr;
        double best_acc = -1;
        for (const auto& s : st.structures) {
            const double a = accuracy(st, s.chromosome, p);
            if (a > best_acc || (a == best_acc && s.chromosome.canonical() < best->canonical())) {
                best_acc = a;
                best = &s.chromosome;
            }
        }
        return *best;
    }

    static StructureChromosome best_structure(const SearchState& st) {
        return select_parents(st.structures, 1).front().chromosome;
    }

    void rebuild_seen(const SearchState& st) {
        seen_structures_.clear();
        seen_params_.clear();
        for (const auto& s : st.structures) seen_structures_.insert(s.chromosome.canonical());
        for (const auto& p : st.params) seen_params_.insert(p.chromosome.canonical());
        for (const auto& [key, out] : st.cache.entries()) {
            const auto sep = key.find(" :: ");
            if (sep == std::string::npos) continue;
            seen_structures_.insert(key.substr(0, sep));
            seen_params_.insert(key.substr(sep + 4));
        }
    }

    SearchSpace space_;
    EvolutionConfig config_;
    Evaluator evaluate_;
    SearchHooks hooks_;
    std::set<std::string> seen_structures_;
    std::set<std::string> seen_params_;
};

// ---------------------------------------------------------------------------
// History CSV

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Splits one CSV record, honoring double-quoted fields.
inline std::vector<std::string> csv_split(std::string_view line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

}  // namespace detail

inline constexpr std::string_view kHistoryHeader = "generation,phase,best_fitness,mean_fitness,best_chromosome";

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
    std::string out(kHistoryHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += std::to_string(r.generation) + "," + std::string(to_string(r.phase)) + "," +
               text::format_double(r.best_fitness) + "," + text::format_double(r.mean_fitness) + "," +
               detail::csv_field(r.best_chromosome) + "\n";
    }
    return out;
}

inline std::vector<HistoryRow> parse_history_csv(std::string_view csv) {
    std::vector<HistoryRow> rows;
    std::size_t line_no = 0;
    for (auto line : text::split(csv, '\n')) {
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != kHistoryHeader) throw ParseError("history", 1, "unexpected header");
            continue;
        }
        const auto f = detail::csv_split(line);
        if (f.size() != 5) throw ParseError("history", line_no, "expected 5 fields");
        HistoryRow r;
        const auto gen = text::parse_int(f[0]);
        const auto best = text::parse_double(f[2]);
        const auto mean = text::parse_double(f[3]);
        if (!gen || !best || !mean || (f[1] != "param" && f[1] != "struct"))
            throw ParseError("history", line_no, "malformed row");
        r.generation = static_cast<std::size_t>(*gen);
        r.phase = f[1] == "param" ? Phase::param : Phase::structure;
        r.best_fitness = *best;
        r.mean_fitness = *mean;
        r.best_chromosome = f[4];
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace gnas
