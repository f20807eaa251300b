//! Command dispatch. Every command returns the artifacts it produced as
//! in-memory files; writing them is left to the caller.

use std::fmt::Write as _;

use qbsde::generators::make_custom_generator;
use qbsde::maximize::{
    closed_form_y0, merton_strategy, optimal_strategy, perturbation_family, value_function, verify_r_process,
    StrategyProcess, UtilitySpec,
};
use qbsde::solver::{solve, Backend, BSDEProblem, DiscreteSolution};
use qbsde::transform::ConvolutionGrid;
use qbsde::verify::{self, Status, SuiteSettings, TheoremId, TheoremReport};
use qbsde::{simulate_paths, ConstraintSet, MarketModel, Terminal};
use serde_json::{json, Value};

use crate::config::{Command, ExperimentConfig};
use crate::CliError;

/// Everything a run writes, plus whether an applicable check failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub results: Value,
    /// `(file name, CSV body without the hash header)`.
    pub tables: Vec<(String, String)>,
    /// `(file name, JSON value)` for per-check reports.
    pub reports: Vec<(String, Value)>,
    pub check_failed: bool,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.command {
        Command::Solve => run_solve(cfg),
        Command::Maximize => run_maximize(cfg),
        Command::Verify => run_verify(cfg),
        Command::Ladder => run_ladder(cfg),
    }
}

struct Built {
    model: MarketModel,
    set: ConstraintSet,
    problem: BSDEProblem,
    closed_form: Option<f64>,
}

fn build_problem(cfg: &ExperimentConfig, n_steps: usize) -> Result<Built, CliError> {
    let model = cfg.model.build()?;
    let set = cfg.constraint_set()?;
    let (problem, closed_form) = match (&cfg.generator, &cfg.utility) {
        (Some(g), _) => {
            let f = make_custom_generator(&model, &g.driver)?;
            let b = Terminal::from_spec(&g.terminal, model.dim())?;
            (BSDEProblem::eq1(model.clone(), f, b, n_steps), None)
        }
        (None, Some(u)) => {
            let spec = u.spec();
            (spec.problem(&model, &set, n_steps)?, closed_form_y0(&spec, &model, &set)?)
        }
        (None, None) => unreachable!("validated configs carry a generator or a utility"),
    };
    let mut problem = problem.with_backend(cfg.numerics.backend).with_regression(cfg.numerics.regression());
    problem.picard = cfg.numerics.picard();
    Ok(Built { model, set, problem, closed_form })
}

fn solution_summary(sol: &DiscreteSolution) -> Value {
    json!({
        "Y0": sol.y0,
        "Z0": sol.z0.as_slice(),
        "n_steps": sol.n_steps(),
        "backend": sol.backend,
        "Y0_std_err": sol.regression.as_ref().map(|r| r.y0_std_err),
        "diagnostics": sol.diagnostics,
    })
}

fn fmt_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

/// `step,t,node,w...,y,z...` for every stored value.
fn solution_table(sol: &DiscreteSolution) -> String {
    let d = sol.dim;
    let mut out = String::new();
    let mut header = vec!["step".to_string(), "t".into(), "node".into()];
    header.extend((0..d).map(|c| format!("w{c}")));
    header.push("y".into());
    header.extend((0..d).map(|c| format!("z{c}")));
    fmt_row(&mut out, &header);
    let n = sol.n_steps();
    if let Some(l) = &sol.lattice {
        for i in 0..=n {
            for j in 0..=i {
                let z = if i < n { l.z[i][j].to_string() } else { String::new() };
                fmt_row(
                    &mut out,
                    &[i.to_string(), sol.times[i].to_string(), j.to_string(), l.node_state(i, j).to_string(), l.y[i][j].to_string(), z],
                );
            }
        }
    } else if let Some(r) = &sol.regression {
        for i in 0..=n {
            for (p, y) in r.sample_y[i].iter().enumerate() {
                let mut row = vec![i.to_string(), sol.times[i].to_string(), p.to_string()];
                row.extend(r.sample_w[i][p * d..(p + 1) * d].iter().map(|w| w.to_string()));
                row.push(y.to_string());
                if i < n {
                    row.extend(r.sample_z[i][p * d..(p + 1) * d].iter().map(|z| z.to_string()));
                } else {
                    row.extend((0..d).map(|_| String::new()));
                }
                fmt_row(&mut out, &row);
            }
        }
    }
    out
}

fn strategy_table(strategy: &StrategyProcess, sol: &DiscreteSolution) -> String {
    let d = sol.dim;
    let mut out = String::new();
    let mut header = vec!["step".to_string(), "t".into(), "node".into()];
    header.extend((0..d).map(|c| format!("w{c}")));
    header.extend((0..d).map(|c| format!("nu{c}")));
    fmt_row(&mut out, &header);
    for (i, row) in strategy.values.iter().enumerate() {
        for (j, nu) in row.iter().enumerate() {
            let w: Vec<f64> = match (&sol.lattice, &sol.regression) {
                (Some(l), _) => vec![l.node_state(i, j)],
                (None, Some(r)) => r.sample_w[i][j * d..(j + 1) * d].to_vec(),
                _ => unreachable!("solution carries data"),
            };
            let mut cells = vec![i.to_string(), strategy.times[i].to_string(), j.to_string()];
            cells.extend(w.iter().map(|x| x.to_string()));
            cells.extend(nu.iter().map(|x| x.to_string()));
            fmt_row(&mut out, &cells);
        }
    }
    out
}

fn run_solve(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let built = build_problem(cfg, cfg.numerics.n_steps)?;
    let sol = solve(&built.problem)?;
    let mut results = solution_summary(&sol);
    results["problem"] = json!(built.problem.name());
    results["closed_form_Y0"] = json!(built.closed_form);
    results["bounds"] = json!(built.problem.bounds());
    results["energy_constant"] = json!(built.problem.energy_constant());
    let [b, e] = verify::check_prop1(&built.problem, &sol)?;
    let check_failed = b.failed() || e.failed();
    results["checks"] = json!([summary(&b), summary(&e)]);
    Ok(Outcome {
        results,
        tables: vec![("solution.csv".into(), solution_table(&sol))],
        reports: Vec::new(),
        check_failed,
    })
}

fn run_maximize(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let u: UtilitySpec = cfg.utility.as_ref().expect("validated").spec();
    let built = build_problem(cfg, cfg.numerics.n_steps)?;
    let sol = solve(&built.problem)?;
    let v0 = value_function(&u, &sol)?;
    let strategy = optimal_strategy(&u, &sol, &built.model, &built.set)?;
    let admissibility = strategy.admissibility.clone().expect("optimal strategies carry a report");
    let mut check_failed = !admissibility.pass;
    let mut results = solution_summary(&sol);
    results["V0"] = json!(v0);
    results["closed_form_Y0"] = json!(built.closed_form);
    results["closed_form_V0"] = json!(built.closed_form.map(|y| u.compose(u.x, y)).transpose()?);
    results["units"] = json!(u.units());
    results["strategy_t0"] = json!(strategy.values[0][0].as_slice());
    results["merton_strategy"] = json!(merton_strategy(&u, &built.model).map(|p| p.to_vec()));
    results["admissibility"] = json!(admissibility);
    results["bounds"] = json!(built.problem.bounds());
    if let Some(m) = &cfg.martingale {
        let bundle = simulate_paths(&built.model, m.n_paths, m.wealth_steps, cfg.numerics.seed)?;
        let family = perturbation_family(&strategy, &built.set, &built.model, m.delta);
        let n = m.wealth_steps;
        let pairs = [(0, n), (0, n / 2), (n / 2, n)];
        let report = verify_r_process(&u, &strategy, &family, &sol, &bundle, &built.model, &pairs)?;
        check_failed |= !report.pass;
        results["martingale"] = json!(report);
    }
    let mut tables = vec![("solution.csv".into(), solution_table(&sol))];
    tables.push(("strategy.csv".into(), strategy_table(&strategy, &sol)));
    Ok(Outcome { results, tables, reports: Vec::new(), check_failed })
}

fn summary(r: &TheoremReport) -> Value {
    json!({
        "theorem_id": r.theorem_id,
        "status": r.status,
        "worst_slack": r.worst_slack,
        "tolerance": r.tolerance,
    })
}

fn run_verify(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let v = cfg.verify.as_ref().expect("resolved");
    let settings = SuiteSettings { n_steps: cfg.numerics.n_steps, restarts: v.restarts, ladder_steps: v.ladder_steps };
    let reports = verify::run_suite(&v.theorems, settings)?;
    let mut per_id = Vec::new();
    let mut summaries = Vec::new();
    let mut check_failed = false;
    for id in TheoremId::ALL.iter().filter(|id| v.theorems.contains(id)) {
        let mine: Vec<&TheoremReport> = reports.iter().filter(|r| r.theorem_id == *id).collect();
        let count = |s: Status| mine.iter().filter(|r| r.status == s).count();
        let worst = mine
            .iter()
            .filter(|r| r.status != Status::NotApplicable)
            .map(|r| r.worst_slack - r.tolerance)
            .fold(f64::NEG_INFINITY, f64::max);
        check_failed |= count(Status::Fail) > 0;
        summaries.push(json!({
            "theorem_id": id,
            "instances": mine.len(),
            "pass": count(Status::Pass),
            "fail": count(Status::Fail),
            "not_applicable": count(Status::NotApplicable),
            "worst_margin": worst.is_finite().then_some(worst),
        }));
        per_id.push((format!("verify_{}.json", id.as_str()), json!(mine)));
    }
    let mut table = String::from("theorem_id,instance,status,worst_slack,tolerance\n");
    for (k, r) in reports.iter().enumerate() {
        let status = serde_json::to_value(r.status).expect("serialises");
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            r.theorem_id.as_str(),
            k,
            status.as_str().expect("string"),
            r.worst_slack,
            r.tolerance
        );
    }
    Ok(Outcome {
        results: json!({ "n_steps": settings.n_steps, "theorems": summaries }),
        tables: vec![("verify.csv".into(), table)],
        reports: per_id,
        check_failed,
    })
}

fn run_ladder(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let l = cfg.ladder.as_ref().expect("resolved");
    let model = cfg.model.build()?;
    let xi = Terminal::from_spec(&l.terminal, 1)?;
    let g = verify::quadratic_eq2(l.gamma, xi);
    let amp = g.terminal.sup_norm().max(1.0);
    let grid = ConvolutionGrid::uniform((-amp, amp), &[(-l.v_max, l.v_max)], l.grid_points)?;
    let ladder = verify::build_ladder(&g, &model, &l.n_list, &grid)?;
    let report = verify::check_stability_ladder(&ladder, &model, cfg.numerics.n_steps, Some(&g), &grid)?;
    let mut table = String::from("n,sup_gap,energy_gap\n");
    for (k, n) in l.n_list.iter().enumerate() {
        let gap = report.components.get(&format!("gap_{k}"));
        let energy = report.components.get(&format!("energy_{k}"));
        let cell = |v: Option<&f64>| v.map_or(String::new(), |x| x.to_string());
        let _ = writeln!(table, "{n},{},{}", cell(gap), cell(energy));
    }
    Ok(Outcome {
        results: json!({ "report": summary(&report), "components": report.components, "notes": report.notes }),
        tables: vec![("ladder.csv".into(), table)],
        reports: vec![("verify_prop3_stability.json".into(), json!([report]))],
        check_failed: report.failed(),
    })
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_steps: usize,
    pub y0: f64,
    pub error: f64,
}

/// `Y_0` for each `N`; errors against the closed form when one exists, else
/// against the finest `N`.
pub fn convergence(cfg: &ExperimentConfig, n_list: &[usize]) -> Result<(Vec<ConvergenceRow>, &'static str), CliError> {
    if cfg.numerics.backend != Backend::Lattice {
        return Err(CliError::Config(vec![crate::config::Issue {
            path: "numerics.backend".into(),
            message: "convergence tables need the lattice backend".into(),
        }]));
    }
    if !matches!(cfg.command, Command::Solve | Command::Maximize) {
        return Err(CliError::Config(vec![crate::config::Issue {
            path: "command".into(),
            message: "convergence tables need a solve or maximize config".into(),
        }]));
    }
    let runs: Vec<(usize, f64, Option<f64>)> = n_list
        .iter()
        .map(|n| {
            let built = build_problem(cfg, *n)?;
            Ok((*n, solve(&built.problem)?.y0, built.closed_form))
        })
        .collect::<Result<_, CliError>>()?;
    let (reference, label) = match runs[0].2 {
        Some(cf) => (cf, "closed_form"),
        None => (runs.last().expect("non-empty").1, "finest"),
    };
    let rows = runs.into_iter().map(|(n, y0, _)| ConvergenceRow { n_steps: n, y0, error: (y0 - reference).abs() }).collect();
    Ok((rows, label))
}

pub fn convergence_table(rows: &[ConvergenceRow], reference: &str) -> String {
    let mut out = format!("N,Y0,error_vs_{reference}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.n_steps, r.y0, r.error);
    }
    out
}
