#pragma once

#include <optional>
#include <string>
#include <utility>

#include "mprlab/errors.hpp"
#include "mprlab/model.hpp"
#include "mprlab/mpr.hpp"
#include "mprlab/regulation.hpp"
#include "mprlab/scenario.hpp"
#include "mprlab/terminal.hpp"

// End-to-end synthesis: structural gate, tracking-manifold series,
// transverse LQR, higher-degree corrections, assembled terminal law.

namespace mprlab {

// The regulation hypotheses did not hold; carries the report so callers
// can show it.
class StructureCheckFailure : public Error {
public:
    StructureCheckFailure(const std::string& msg, StructureReport report)
        : Error(msg), report(std::move(report)) {}
    StructureReport report;
};

struct SynthOptions {
    bool estimate_level = false; // sample a Lyapunov level c* for the law
    LyapunovMode level_mode = LyapunovMode::feedback;
    double w_bound = 1.0;
    LyapunovOptions lyapunov;
    StructureOptions structure;
};

struct SynthesisResult {
    SystemModel model;
    StructureReport report;
    OutputChain chain;
    RunningCost running_cost;
    LinearData lin;
    FbiSolution fbi;
    QuadCost quad_cost;
    RiccatiSolution riccati;
    TerminalLaw law;
};

inline SynthesisResult synthesize(const ScenarioSpec& scenario, int cost_degree,
                                  const SynthOptions& opt = {}) {
    if (cost_degree < 2) throw StructuralError("pipeline: cost degree must be >= 2");
    const int cap = cost_degree;
    SystemModel model = SystemModel::from_scenario(scenario, cap);

    StructureReport report = structure_report(model, opt.structure);
    if (!report.all_ok()) {
        std::string which;
        if (!report.exo_neutral) which += " exo_neutral";
        if (!report.linearly_minimum_phase) which += " linearly_minimum_phase";
        if (!report.stabilizable) which += " stabilizable";
        throw StructureCheckFailure("pipeline: regulation hypotheses violated:" + which, report);
    }

    OutputChain chain = build_output_chain(model, opt.structure.max_r, opt.structure.chain);
    RunningCost rc = RunningCost::make(model, chain);
    LinearData lin = linearize(model);
    FbiSolution fbi = solve_fbi(model, cost_degree - 1);
    QuadCost qc = transverse_quadratic_cost(lin, chain.relative_degree);
    RiccatiSolution ric = solve_dare(lin, qc);
    AlbrekhtSolver albrekht(model, fbi, ric, qc, rc.l);
    albrekht.advance_to_cost_degree(cost_degree);
    TerminalLaw law = assemble_terminal(model, fbi, ric, albrekht, cost_degree);
    if (opt.estimate_level)
        law.level = estimate_lyapunov_region(model, law, opt.level_mode, opt.w_bound, opt.lyapunov);

    return SynthesisResult{std::move(model), std::move(report),  std::move(chain),
                           std::move(rc),    std::move(lin),     std::move(fbi),
                           std::move(qc),    std::move(ric),     std::move(law)};
}

} // namespace mprlab
