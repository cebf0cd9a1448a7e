#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gnas/config.hpp"
#include "gnas/evolution.hpp"

namespace gnas::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Set from a signal handler; the search stops at the next generation boundary.
inline std::atomic<bool>& interrupt_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

struct Interrupted : std::runtime_error {
    Interrupted() : std::runtime_error("interrupted") {}
};

/// Usage-level failures (bad flags, bad config) map to exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + p.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline Json report_json(const RunConfig& config, const SearchState& st, double wall_seconds) {
    Json j;
    if (st.best.valid) {
        j["best"] = {{"genome", st.best.genome.canonical()},
                     {"structure", st.best.genome.structure.canonical()},
                     {"params", st.best.genome.params.canonical()},
                     {"val", st.best.outcome.val},
                     {"test", st.best.outcome.test}};
    }
    j["generations"] = st.generation;
    j["evaluations"] = st.evaluations;
    j["best_so_far"] = st.best_so_far;
    j["history"] = detail::history_json(st.history);
    j["wall_clock_seconds"] = wall_seconds;
    j["seed"] = config.evolution.seed;
    j["config"] = to_json(config);
    return j;
}

struct SearchOutcome {
    SearchState state;
    bool complete = false;
};

/// Runs (or continues) a search, checkpointing after every generation and
/// writing report.json and history.csv into config.output once complete.
inline SearchOutcome run_search(const RunConfig& config, std::optional<SearchState> resume_from,
                                std::optional<std::size_t> stop_after, std::ostream& log, double prior_seconds = 0) {
    const auto graphs = load_dataset(config.dataset);
    std::filesystem::create_directories(config.output);
    const auto started = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return prior_seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    };
    const auto ckpt_path = config.output / "checkpoint.json";

    SearchHooks hooks;
    hooks.stop_after = stop_after;
    hooks.on_generation = [&](const SearchState& st) {
        auto ckpt = checkpoint_json(config, st);
        ckpt["elapsed_seconds"] = elapsed();
        write_text_atomic(ckpt_path, ckpt.dump(1) + "\n");
        log << "generation " << st.generation << "/" << config.evolution.structure_generations << "  best val "
            << text::format_double(st.best.outcome.val) << "  evaluations " << st.evaluations << "  elapsed "
            << static_cast<long>(elapsed()) << "s" << std::endl;
        if (interrupt_flag().load()) throw Interrupted();
    };

    Search search(config.space, config.evolution, training_evaluator(graphs, config.evolution.epochs, config.model),
                  hooks);
    SearchOutcome out;
    out.state = resume_from ? search.run(std::move(*resume_from)) : search.run();
    out.complete = out.state.generation >= config.evolution.structure_generations;
    if (!out.complete) {
        auto ckpt = checkpoint_json(config, out.state);
        ckpt["elapsed_seconds"] = elapsed();
        write_text_atomic(ckpt_path, ckpt.dump(1) + "\n");
        log << "stopped after generation " << out.state.generation << "; resume with --resume " << ckpt_path.string()
            << std::endl;
        return out;
    }
    write_text_atomic(config.output / "history.csv", history_csv(out.state.history));
    write_text_atomic(config.output / "report.json", report_json(config, out.state, elapsed()).dump(2) + "\n");
    log << "best " << out.state.best.genome.canonical() << "  val " << text::format_double(out.state.best.outcome.val)
        << "  test " << text::format_double(out.state.best.outcome.test) << std::endl;
    return out;
}

/// Applies a sweep value to a copy of the base config.
inline RunConfig sweep_cell(RunConfig base, const std::string& parameter, double value) {
    auto as_count = [&](const char* name) {
        if (!(value >= 1) || value != std::floor(value))
            throw ValidationError(std::string(name) + " values must be positive integers");
        return static_cast<std::size_t>(value);
    };
    if (parameter == "alpha") {
        base.evolution.alpha = value;
    } else if (parameter == "N_s") {
        base.evolution.structure_population = as_count("N_s");
        base.evolution.parents_struct = std::min(base.evolution.parents_struct, base.evolution.structure_population);
        base.evolution.children_struct = std::min(base.evolution.children_struct, base.evolution.parents_struct);
    } else if (parameter == "K_s") {
        base.evolution.structure_generations = as_count("K_s");
    } else {
        throw ValidationError("sweep parameter must be alpha, N_s or K_s");
    }
    base.evolution.validate();
    return base;
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& log = std::cerr) {
    CLI::App app{"Evolutionary architecture and hyperparameter search for graph neural networks"};
    app.require_subcommand(1);

    std::string config_path, out_dir, resume_path, genome_text, structure_text, params_text, sweep_param;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> parallelism, stop_after, epochs;
    std::size_t repeats = 5;
    std::vector<double> sweep_values;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", config_path, "JSON run configuration");
        if (needs_config) c->required();
        sub->add_option("--seed", seed, "overrides evolution.seed");
        sub->add_option("--parallelism", parallelism, "concurrent candidate trainings")->check(CLI::PositiveNumber);
        sub->add_option("--out", out_dir, "output directory (overrides config)");
    };

    auto* search = app.add_subcommand("search", "run the two-population search");
    add_common(search, true);
    search->add_option("--stop-after", stop_after, "stop after this many generations")->group("");

    auto* resume = app.add_subcommand("resume", "continue a search from its checkpoint");
    resume->add_option("--resume", resume_path, "checkpoint.json written by search")->required();
    resume->add_option("--parallelism", parallelism)->check(CLI::PositiveNumber);
    resume->add_option("--out", out_dir, "output directory (default: the checkpoint's)");
    resume->add_option("--stop-after", stop_after)->group("");

    auto* train = app.add_subcommand("train-one", "train and score a single architecture");
    add_common(train, true);
    train->add_option("--genome", genome_text, "\"<structure> :: <params>\"");
    train->add_option("--structure", structure_text, "e.g. gcn|1|sum|relu|16;gcn|1|sum|linear|7");
    train->add_option("--params", params_text, "e.g. 0.5,0.5|5e-4|1e-2");
    train->add_option("--epochs", epochs, "training epochs (default: evolution.epochs)");
    train->add_option("--repeats", repeats, "independent trainings, seeds seed..seed+repeats-1")
        ->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "one full search per value of alpha, N_s or K_s");
    add_common(sweep, true);
    sweep->add_option("--param", sweep_param, "alpha, N_s or K_s")->required()->check(CLI::IsMember({"alpha", "N_s", "K_s"}));
    sweep->add_option("--values", sweep_values, "comma-separated values")->required()->delimiter(',');

    auto* validate = app.add_subcommand("validate-config", "parse a configuration and check its files");
    validate->add_option("--config", config_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        log << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    auto load_config = [&] {
        auto c = load_run_config(config_path);
        if (seed) c.evolution.seed = *seed;
        if (parallelism) c.evolution.parallelism = *parallelism;
        if (!out_dir.empty()) c.output = out_dir;
        c.evolution.validate();
        return c;
    };

    try {
        if (*validate) {
            const auto c = load_config();
            check_dataset_files(c.dataset);
            log << "config ok: " << task_name(c) << ", depth " << c.evolution.depth << std::endl;
            return kExitOk;
        }
        if (*search) {
            const auto c = load_config();
            check_dataset_files(c.dataset);
            run_search(c, std::nullopt, stop_after, log);
            return kExitOk;
        }
        if (*resume) {
            const auto ckpt_json = read_json_file(resume_path);
            auto ckpt = load_checkpoint(resume_path);
            if (parallelism) ckpt.config.evolution.parallelism = *parallelism;
            if (!out_dir.empty()) ckpt.config.output = out_dir;
            check_dataset_files(ckpt.config.dataset);
            log << "resuming at generation " << ckpt.state.generation << std::endl;
            run_search(ckpt.config, std::move(ckpt.state), stop_after, log, ckpt_json.value("elapsed_seconds", 0.0));
            return kExitOk;
        }
        if (*train) {
            const auto c = load_config();
            if (genome_text.empty() == (structure_text.empty() && params_text.empty()))
                throw UsageError("give either --genome or both --structure and --params");
            if (genome_text.empty() && (structure_text.empty() || params_text.empty()))
                throw UsageError("--structure and --params go together");
            const auto genome = genome_text.empty()
                                    ? Genome{parse_structure(structure_text), parse_params(params_text)}
                                    : parse_genome(genome_text);
            const auto graphs = load_dataset(c.dataset);
            const std::size_t n_epochs = epochs.value_or(c.evolution.epochs);
            std::vector<double> vals, tests;
            for (std::size_t i = 0; i < repeats; ++i) {
                const auto r = build_and_train(genome.structure, genome.params, graphs, n_epochs, c.evolution.seed + i,
                                               c.model);
                if (r.failed) log << "run " << i << ": training diverged (non-finite loss)" << std::endl;
                vals.push_back(r.val_score);
                tests.push_back(r.test_score);
                out << "run " << i << " seed " << c.evolution.seed + i << " val " << text::format_double(r.val_score)
                    << " test " << text::format_double(r.test_score) << "\n";
            }
            auto stats = [](const std::vector<double>& v) {
                double m = 0, s = 0;
                for (double x : v) m += x;
                m /= static_cast<double>(v.size());
                for (double x : v) s += (x - m) * (x - m);
                return std::pair{m, std::sqrt(s / static_cast<double>(v.size()))};
            };
            const auto [vm, vs] = stats(vals);
            const auto [tm, ts] = stats(tests);
            out << "mean val " << text::format_double(vm) << " +- " << text::format_double(vs) << " test "
                << text::format_double(tm) << " +- " << text::format_double(ts) << "\n";
            return kExitOk;
        }
        if (*sweep) {
            const auto base = load_config();
            check_dataset_files(base.dataset);
            std::vector<RunConfig> cells;
            for (double v : sweep_values) cells.push_back(sweep_cell(base, sweep_param, v));
            std::filesystem::create_directories(base.output);
            std::string csv = "parameter,value,best_val,best_test,best_chromosome\n";
            for (std::size_t i = 0; i < cells.size(); ++i) {
                auto& cell = cells[i];
                cell.output = base.output / ("cell_" + std::to_string(i));
                std::filesystem::create_directories(cell.output);
                // Standalone config: `search --config cell_i/config.json` repeats this cell.
                write_text_atomic(cell.output / "config.json", to_json(cell).dump(2) + "\n");
                log << "sweep " << sweep_param << " = " << text::format_double(sweep_values[i]) << std::endl;
                const auto res = run_search(cell, std::nullopt, std::nullopt, log);
                csv += sweep_param + "," + text::format_double(sweep_values[i]) + "," +
                       text::format_double(res.state.best.outcome.val) + "," +
                       text::format_double(res.state.best.outcome.test) + "," +
                       detail::csv_field(res.state.best.genome.canonical()) + "\n";
            }
            write_text_atomic(base.output / "sweep.csv", csv);
            return kExitOk;
        }
    } catch (const Interrupted&) {
        log << "interrupted; checkpoint written" << std::endl;
        return kExitRuntime;
    } catch (const UsageError& e) {
        log << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidationError& e) {
        log << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        log << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace gnas::cli
