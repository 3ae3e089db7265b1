#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mprlab/errors.hpp"
#include "mprlab/io.hpp"
#include "mprlab/mpr.hpp"
#include "mprlab/pipeline.hpp"
#include "mprlab/regulation.hpp"
#include "mprlab/scenario.hpp"
#include "mprlab/sim.hpp"

// Command-line frontend: check, synth, simulate, mpr, demo. All file
// outputs are plain text (key = value) or CSV so runs diff cleanly; a
// fixed seed reproduces every byte.

namespace mprlab::cli {

namespace detail {

inline ScenarioSpec resolve_scenario(const std::string& name) {
    if (name == "linear") return scenario_linear_example();
    if (name == "pendulum") return scenario_pendulum();
    if (!std::filesystem::exists(name))
        throw StructuralError("cli: scenario '" + name + "' is neither builtin nor a file");
    return parse_scenario(read_text_file(name), std::filesystem::path(name).stem().string());
}

inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag_seed) {
    if (flag_seed) return *flag_seed;
    if (const char* env = std::getenv("MPRLAB_SEED")) return std::strtoull(env, nullptr, 10);
    return 0;
}

inline std::string mat_to_string(const Mat& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (i) out += "; ";
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ", ";
            out += format_double(m(i, j));
        }
    }
    return out;
}

inline std::filesystem::path prepare_outdir(const std::string& out) {
    std::filesystem::path dir(out);
    std::filesystem::create_directories(dir);
    return dir;
}

// window convention for steady-state metrics: second half of the run,
// which the period-8 exosystem divides evenly for the default 96 steps
inline StepRange steady_window(int steps) { return StepRange{steps / 2, steps}; }

inline SynthOptions synth_options(std::uint64_t seed, bool estimate_level) {
    SynthOptions opt;
    opt.estimate_level = estimate_level;
    opt.structure.chain.seed = seed;
    opt.lyapunov.seed = seed;
    return opt;
}

struct MprArtifacts {
    MprRun run;
    TrackingMetrics metrics;
    bool have_metrics = false;
};

inline MprArtifacts run_mpr(const SynthesisResult& synth, const ScenarioSpec& scenario,
                            int horizon, std::optional<double> umax, int steps,
                            std::optional<double> terminal_level) {
    MprConfig cfg;
    cfg.horizon = horizon;
    cfg.terminal = synth.law;
    if (umax) cfg.u_box = std::make_pair(-*umax, *umax);
    cfg.terminal_level = terminal_level;
    MprArtifacts art;
    art.run = mpr_run(synth.model, synth.running_cost, cfg, scenario.x0, scenario.w0, steps);
    if (!art.run.diverged) {
        art.metrics = steady_state_metrics(art.run.trajectory, steady_window(steps));
        art.have_metrics = true;
    }
    return art;
}

} // namespace detail

inline int run_cli(std::vector<std::string> args) {
    CLI::App app{"mprlab: output regulation via receding-horizon control"};
    app.require_subcommand(1);

    std::string scenario_name, out_dir = ".";
    std::optional<std::uint64_t> seed_flag;
    int degree = 0, steps = 96;
    std::string controller;
    std::optional<int> horizon_flag, terminal_degree_flag;
    std::optional<double> umax_flag, terminal_level_flag;

    auto add_common = [&](CLI::App* cmd, bool with_scenario = true) {
        if (with_scenario)
            cmd->add_option("scenario", scenario_name, "builtin name (linear, pendulum) or file path")
                ->required();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed_flag, "seed for sampled certificates (env MPRLAB_SEED)");
    };

    auto* check = app.add_subcommand("check", "verify the regulation hypotheses");
    add_common(check);

    auto* synth = app.add_subcommand("synth", "synthesize a terminal cost/feedback law");
    add_common(synth);
    synth->add_option("--degree", degree, "terminal cost degree (>= 2)")->required();

    auto* simulate = app.add_subcommand("simulate", "closed loop under the polynomial controller");
    add_common(simulate);
    simulate->add_option("--controller", controller, "linear or cubic")->required();
    simulate->add_option("--steps", steps, "number of closed-loop steps");

    auto* mpr_cmd = app.add_subcommand("mpr", "receding-horizon closed loop");
    add_common(mpr_cmd);
    mpr_cmd->add_option("--horizon", horizon_flag, "shooting horizon T");
    mpr_cmd->add_option("--terminal-degree", terminal_degree_flag, "terminal cost degree");
    mpr_cmd->add_option("--umax", umax_flag, "box constraint |u| <= umax");
    mpr_cmd->add_option("--terminal-level", terminal_level_flag, "enforce pi(x(T),w(T)) <= c*");
    mpr_cmd->add_option("--steps", steps, "number of closed-loop steps");

    auto* demo = app.add_subcommand("demo", "reproduce a worked example end to end");
    add_common(demo);

    try {
        std::reverse(args.begin(), args.end()); // CLI11 consumes from the back
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the message / help
        return e.get_exit_code() == 0 ? 0 : 64;
    }

    const std::uint64_t seed = detail::resolve_seed(seed_flag);

    try {
        const auto dir = detail::prepare_outdir(out_dir);

        if (*check) {
            const ScenarioSpec scenario = detail::resolve_scenario(scenario_name);
            SystemModel model = SystemModel::from_scenario(scenario, 2);
            StructureOptions sopt;
            sopt.chain.seed = seed;
            const StructureReport report = structure_report(model, sopt);
            std::cout << report.summary();
            write_text_file((dir / "structure.txt").string(),
                            key_values_to_string(report.to_key_values()));
            return report.all_ok() ? 0 : 1;
        }

        if (*synth) {
            const ScenarioSpec scenario = detail::resolve_scenario(scenario_name);
            const auto result = synthesize(scenario, degree, detail::synth_options(seed, true));
            write_text_file((dir / "structure.txt").string(),
                            key_values_to_string(result.report.to_key_values()));
            write_text_file((dir / "terminal.txt").string(),
                            result.law.to_string(scenario.dims.n, scenario.dims.k));
            std::cout << "synthesized degree-" << degree << " terminal law ("
                      << "level c* = " << format_double(result.law.level.value_or(0.0)) << ")\n";
            std::cout << "T = " << detail::mat_to_string(result.fbi.T) << "\n";
            std::cout << "L = " << detail::mat_to_string(result.fbi.L) << "\n";
            std::cout << "P = " << detail::mat_to_string(result.riccati.P) << "\n";
            std::cout << "K = " << detail::mat_to_string(result.riccati.K) << "\n";
            return 0;
        }

        if (*simulate) {
            const ScenarioSpec scenario = detail::resolve_scenario(scenario_name);
            int law_degree;
            if (controller == "linear")
                law_degree = 2;
            else if (controller == "cubic")
                law_degree = 4;
            else
                throw StructuralError("cli: --controller must be 'linear' or 'cubic'");
            const auto result = synthesize(scenario, law_degree, detail::synth_options(seed, false));
            const Trajectory tr =
                rollout_polynomial(result.model, result.law, scenario.x0, scenario.w0, steps);
            write_text_file((dir / "trajectory.csv").string(), trajectory_csv(tr));
            KeyValues kv;
            kv.emplace_back("controller", controller);
            kv.emplace_back("steps", std::to_string(steps));
            kv.emplace_back("diverged", tr.diverged ? "true" : "false");
            if (tr.diverged) {
                kv.emplace_back("diverged_step", std::to_string(tr.diverged_step));
            } else {
                const auto metrics = steady_state_metrics(tr, detail::steady_window(steps));
                for (auto& item : metrics_to_key_values(metrics)) kv.push_back(std::move(item));
            }
            write_text_file((dir / "metrics.txt").string(), key_values_to_string(kv));
            for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
            return 0;
        }

        if (*mpr_cmd) {
            const ScenarioSpec scenario = detail::resolve_scenario(scenario_name);
            const int horizon = horizon_flag.value_or(scenario.mpr.horizon);
            const int tdegree = terminal_degree_flag.value_or(scenario.mpr.degree);
            const std::optional<double> umax = umax_flag ? umax_flag : scenario.mpr.umax;
            const auto result = synthesize(scenario, tdegree, detail::synth_options(seed, false));
            const auto art =
                detail::run_mpr(result, scenario, horizon, umax, steps, terminal_level_flag);
            write_text_file((dir / "trajectory.csv").string(), trajectory_csv(art.run.trajectory));
            write_text_file((dir / "diagnostics.csv").string(), diagnostics_csv(art.run));
            KeyValues kv;
            kv.emplace_back("horizon", std::to_string(horizon));
            kv.emplace_back("terminal_degree", std::to_string(tdegree));
            kv.emplace_back("umax", umax ? format_double(*umax) : "none");
            kv.emplace_back("diverged", art.run.diverged ? "true" : "false");
            if (art.run.diverged) kv.emplace_back("diverged_step", std::to_string(art.run.diverged_step));
            if (art.have_metrics)
                for (auto& item : metrics_to_key_values(art.metrics)) kv.push_back(std::move(item));
            write_text_file((dir / "metrics.txt").string(), key_values_to_string(kv));
            for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
            return 0;
        }

        if (*demo) {
            if (scenario_name == "linear") {
                const ScenarioSpec scenario = scenario_linear_example();
                write_text_file((dir / "scenario.txt").string(), scenario_to_string(scenario));
                const auto result = synthesize(scenario, 2, detail::synth_options(seed, true));
                std::cout << result.report.summary();
                write_text_file((dir / "structure.txt").string(),
                                key_values_to_string(result.report.to_key_values()));
                KeyValues kv;
                kv.emplace_back("T", detail::mat_to_string(result.fbi.T));
                kv.emplace_back("L", detail::mat_to_string(result.fbi.L));
                kv.emplace_back("P", detail::mat_to_string(result.riccati.P));
                kv.emplace_back("K", detail::mat_to_string(result.riccati.K));
                kv.emplace_back("level", format_double(result.law.level.value_or(0.0)));
                write_text_file((dir / "solution.txt").string(), key_values_to_string(kv));
                write_text_file((dir / "terminal_deg2.txt").string(),
                                result.law.to_string(scenario.dims.n, scenario.dims.k));
                for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";

                // closed loop from a displaced state; with the exact
                // terminal cost this coincides with u = -x3 - w1
                const auto art = detail::run_mpr(result, [&] {
                    ScenarioSpec s = scenario;
                    s.x0 = {0.3, -0.1, 0.2};
                    return s;
                }(), 4, std::nullopt, 20, std::nullopt);
                write_text_file((dir / "mpr_traj.csv").string(),
                                trajectory_csv(art.run.trajectory));
                write_text_file((dir / "mpr_diag.csv").string(), diagnostics_csv(art.run));
                return 0;
            }
            if (scenario_name == "pendulum") {
                const ScenarioSpec scenario = scenario_pendulum();
                write_text_file((dir / "scenario.txt").string(), scenario_to_string(scenario));
                const auto deg2 = synthesize(scenario, 2, detail::synth_options(seed, true));
                const auto deg4 = synthesize(scenario, 4, detail::synth_options(seed, true));
                std::cout << deg2.report.summary();
                write_text_file((dir / "structure.txt").string(),
                                key_values_to_string(deg2.report.to_key_values()));
                write_text_file((dir / "terminal_deg2.txt").string(),
                                deg2.law.to_string(scenario.dims.n, scenario.dims.k));
                write_text_file((dir / "terminal_deg4.txt").string(),
                                deg4.law.to_string(scenario.dims.n, scenario.dims.k));

                const int sim_steps = 96;
                KeyValues kv;
                for (const auto& [name, res] :
                     {std::make_pair(std::string("linear"), &deg2),
                      std::make_pair(std::string("cubic"), &deg4)}) {
                    const Trajectory tr = rollout_polynomial(res->model, res->law, scenario.x0,
                                                             scenario.w0, sim_steps);
                    write_text_file((dir / ("sim_" + name + ".csv")).string(), trajectory_csv(tr));
                    if (tr.diverged) {
                        kv.emplace_back(name + "_diverged_step", std::to_string(tr.diverged_step));
                    } else {
                        const auto metrics =
                            steady_state_metrics(tr, detail::steady_window(sim_steps));
                        kv.emplace_back(name + "_steady_state_avg_error",
                                        format_double(metrics.steady_state_avg_error));
                        kv.emplace_back(name + "_max_abs_u", format_double(metrics.max_abs_u));
                    }
                }
                // the polynomial laws hold only at reduced reference
                // amplitude on this system; record that comparison too
                for (const auto& [name, res] :
                     {std::make_pair(std::string("linear"), &deg2),
                      std::make_pair(std::string("cubic"), &deg4)}) {
                    const Trajectory tr = rollout_polynomial(res->model, res->law, scenario.x0,
                                                             {0.3, 0.0}, sim_steps);
                    write_text_file((dir / ("sim_" + name + "_amp03.csv")).string(),
                                    trajectory_csv(tr));
                    if (!tr.diverged) {
                        const auto metrics =
                            steady_state_metrics(tr, detail::steady_window(sim_steps));
                        kv.emplace_back(name + "_amp03_steady_state_avg_error",
                                        format_double(metrics.steady_state_avg_error));
                    }
                }
                write_text_file((dir / "sim_metrics.txt").string(), key_values_to_string(kv));
                for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";

                // receding horizon from the state where both polynomial laws fail
                ScenarioSpec hard = scenario;
                hard.x0 = {2.0, 0.0};
                KeyValues mpr_kv;
                const auto free_run = detail::run_mpr(deg4, hard, 4, std::nullopt, 96, std::nullopt);
                write_text_file((dir / "mpr.csv").string(), trajectory_csv(free_run.run.trajectory));
                write_text_file((dir / "mpr_diag.csv").string(), diagnostics_csv(free_run.run));
                mpr_kv.emplace_back("mpr_diverged", free_run.run.diverged ? "true" : "false");
                if (free_run.have_metrics) {
                    mpr_kv.emplace_back("mpr_steady_state_avg_error",
                                        format_double(free_run.metrics.steady_state_avg_error));
                    mpr_kv.emplace_back("mpr_max_abs_u", format_double(free_run.metrics.max_abs_u));
                }
                const auto boxed_run = detail::run_mpr(deg4, hard, 4, 2.0, 96, std::nullopt);
                write_text_file((dir / "mpr_constrained.csv").string(),
                                trajectory_csv(boxed_run.run.trajectory));
                write_text_file((dir / "mpr_constrained_diag.csv").string(),
                                diagnostics_csv(boxed_run.run));
                mpr_kv.emplace_back("constrained_diverged",
                                    boxed_run.run.diverged ? "true" : "false");
                if (boxed_run.have_metrics) {
                    mpr_kv.emplace_back("constrained_steady_state_avg_error",
                                        format_double(boxed_run.metrics.steady_state_avg_error));
                    mpr_kv.emplace_back("constrained_max_abs_u",
                                        format_double(boxed_run.metrics.max_abs_u));
                }
                write_text_file((dir / "mpr_metrics.txt").string(), key_values_to_string(mpr_kv));
                for (const auto& [k, v] : mpr_kv) std::cout << k << " = " << v << "\n";
                return 0;
            }
            throw StructuralError("cli: demo expects 'linear' or 'pendulum'");
        }
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 64;
    } catch (const StructureCheckFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << e.report.summary();
        return 1;
    } catch (const RelativeDegreeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const StructuralError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 64;
    } catch (const Error& e) { // synthesis / numeric / rollout failures
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

inline int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(std::move(args));
}

} // namespace mprlab::cli
