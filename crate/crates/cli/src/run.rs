use std::path::Path;

use mfc_core::fbsde::{fbsde_residual_check, picard_solve, riccati_oracle_lq1d};
use mfc_core::model::{validate_assumptions, Partition, ProblemSpec};
use mfc_core::pontryagin::projected_gradient_descent;
use mfc_core::rates::{control_rate_experiment, holder_experiment, value_rate_experiment, RateReport};
use mfc_core::sim::{cost_discrete, simulate_discrete, BrownianStore};
use serde_json::{json, Value};

use crate::config::{RateMetric, RunConfig};
use crate::output::{format_number, write_atomically, Artifact};
use crate::{CliError, Overrides, EXIT_OK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Validate,
    Solve,
    Optimize,
    Rates,
    Holder,
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialise")
}

fn validation(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Artifact, CliError> {
    let report = validate_assumptions(spec, cfg.validate.probes, cfg.seeds[0]);
    let value = to_json(&report);
    if !report.passed() {
        let failed: Vec<&str> = report.failures().iter().map(|c| c.clause.as_str()).collect();
        return Err(CliError::Validation { message: format!("clauses failed: {}", failed.join(", ")), report: value });
    }
    Ok(Artifact::json("validation.json", &value))
}

fn solve(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Artifact, CliError> {
    let part = Partition::uniform(spec.horizon(), cfg.grid.steps)?;
    let (m, seed) = (cfg.particles, cfg.seeds[0]);
    let store = BrownianStore::new(seed, spec.horizon(), cfg.grid.steps, spec.d())?;
    let sol = picard_solve(spec, &part, m, &store, &cfg.fbsde)?;
    let diagnostics = fbsde_residual_check(&sol, spec, &part)?;
    let control = sol.control_path()?;
    let traj = simulate_discrete(spec, &part, &control, m, &store)?;
    let (cost, cost_std) = cost_discrete(spec, &part, &traj, &control)?;
    // scalar problems: the fitted coefficient of Y on X at every node
    let slopes: Option<Vec<f64>> =
        (spec.n() == 1).then(|| sol.field.fits.iter().map(|f| f.slope(0, 0)).collect());
    let riccati = match &spec.lq {
        Some(lq) => {
            let r = riccati_oracle_lq1d(
                &lq.coeffs,
                &lq.terminal,
                spec.horizon(),
                spec.initial_law.mean()[0],
                spec.initial_law.variance()[0],
                4096,
            )?;
            let step = (r.times.len() - 1) / cfg.grid.steps.max(1);
            let exact: Vec<f64> = if (r.times.len() - 1) % cfg.grid.steps == 0 {
                (0..=cfg.grid.steps).map(|i| r.state_coef[i * step]).collect()
            } else {
                Vec::new()
            };
            json!({ "value": r.value, "state_coefficient": exact })
        }
        None => Value::Null,
    };
    Ok(Artifact::json(
        "solve.json",
        &json!({
            "problem": spec.name,
            "steps": cfg.grid.steps,
            "particles": m,
            "seed": seed,
            "iterations": sol.iterations,
            "field_change": sol.residual,
            "history": sol.history,
            "optimality_residual": sol.optimality_residual,
            "diagnostics": to_json(&diagnostics),
            "cost": cost,
            "cost_std": cost_std,
            "slopes": slopes,
            "riccati": riccati,
        }),
    ))
}

fn optimize(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Artifact, CliError> {
    let part = Partition::uniform(spec.horizon(), cfg.grid.steps)?;
    let seed = cfg.seeds[0];
    let base = cfg.grid.steps * cfg.optimizer.refinement;
    let store = BrownianStore::new(seed, spec.horizon(), base, spec.d())?;
    let res = projected_gradient_descent(spec, &part, cfg.particles, &store, &cfg.optimizer_config())?;
    Ok(Artifact::json(
        "summary.json",
        &json!({
            "problem": spec.name,
            "steps": cfg.grid.steps,
            "particles": cfg.particles,
            "seed": seed,
            "optimize": to_json(&res),
        }),
    ))
}

fn csv_rows(report: &RateReport, rows: &mut String) {
    for (j, l) in report.levels.iter().enumerate() {
        let mut push = |metric: &str, v: f64| {
            rows.push_str(&format!(
                "{j},{},{},{metric},{},{},{}\n",
                l.n,
                format_number(l.mesh),
                format_number(v),
                format_number(l.mc_std),
                format_number(l.wall_ms)
            ));
        };
        if report.metric == "value" {
            push("value", l.value);
            push("value-error", l.error);
        } else {
            push(&report.metric, l.value);
        }
    }
}

fn rates(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Vec<Artifact>, CliError> {
    let opt = cfg.optimizer_config();
    let mut csv = String::from("level,N,mesh,metric,value,mc_std,wall_ms\n");
    let mut summary = json!({ "problem": spec.name, "particles": cfg.particles, "seeds": cfg.seeds });
    if matches!(cfg.rates.metric, RateMetric::Value | RateMetric::Both) {
        let r = value_rate_experiment(spec, &cfg.grid.ladder, cfg.particles, &cfg.seeds, cfg.rates.mode, &opt)?;
        csv_rows(&r, &mut csv);
        summary["value"] = to_json(&r);
        summary["fitted_order"] = to_json(&r.fitted_order);
    }
    if matches!(cfg.rates.metric, RateMetric::Control | RateMetric::Both) {
        let r = control_rate_experiment(
            spec,
            &cfg.grid.ladder,
            cfg.particles,
            &cfg.seeds,
            cfg.rates.eps,
            cfg.grid.fine_factor,
            &opt,
        )?;
        csv_rows(&r, &mut csv);
        if summary.get("fitted_order").is_none() {
            summary["fitted_order"] = to_json(&r.fitted_order);
        }
        summary["control"] = to_json(&r);
    }
    Ok(vec![Artifact { name: "rates.csv".into(), contents: csv }, Artifact::json("summary.json", &summary)])
}

fn holder(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Artifact, CliError> {
    let grid = Partition::uniform(spec.horizon(), cfg.grid.steps)?;
    let h = holder_experiment(spec, &grid, cfg.particles, cfg.holder.p, cfg.seeds[0], &cfg.fbsde)?;
    Ok(Artifact::json(
        "summary.json",
        &json!({ "problem": spec.name, "particles": cfg.particles, "seed": cfg.seeds[0], "holder": to_json(&h) }),
    ))
}

/// Runs one subcommand and returns the artifacts it produces.
pub fn execute(sub: Subcommand, cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let spec = cfg.spec()?;
    let job = || -> Result<Vec<Artifact>, CliError> {
        let checked = validation(cfg, &spec)?;
        let mut out = vec![checked];
        match sub {
            Subcommand::Validate => {}
            Subcommand::Solve => out.push(solve(cfg, &spec)?),
            Subcommand::Optimize => out.push(optimize(cfg, &spec)?),
            Subcommand::Rates => out.extend(rates(cfg, &spec)?),
            Subcommand::Holder => out.push(holder(cfg, &spec)?),
        }
        Ok(out)
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?
            .install(job),
        None => job(),
    }
}

/// Loads the config, runs, publishes artifacts or an error record, and
/// returns the process exit code.
pub fn run_cli(sub: Subcommand, config: &Path, overrides: &Overrides) -> i32 {
    let mut out_dir = overrides.out.clone().unwrap_or_else(|| "out".into());
    let result = RunConfig::load(config).and_then(|mut cfg| {
        overrides.apply(&mut cfg)?;
        out_dir = cfg.output.dir.clone();
        execute(sub, &cfg)
    });
    let result = result.and_then(|artifacts| write_atomically(&out_dir, &artifacts));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let record = e.record();
            eprintln!("{}", serde_json::to_string(&record).expect("record serialises"));
            // best effort: the record itself is the only artifact of a failed run
            let _ = write_atomically(&out_dir, &[Artifact::json("error.json", &record)]);
            e.exit_code()
        }
    }
}
