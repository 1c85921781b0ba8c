//! Subcommand implementations. Each returns a JSON report and whether its assertions passed.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::cli::output::{read_trajectory, CsvSink};
use crate::cli::scenario::{load_scenario, Scenario};
use crate::cli::snapshot::{read_snapshot, write_atomic, write_snapshot, Sidecar};
use crate::cli::{Cli, Command, FlowArgs, Until};
use crate::diagnostics::{
    decay_check, dissipation_identity_error, envelope_check, growth_fit, DiagnosticsRecord,
};
use crate::error::{Error, Result};
use crate::flow::{FlowRunner, FlowState, Outcome};
use crate::grid::ScalarField;
use crate::hypothesis::{build_supersolution, check_hypotheses, superlevel_mask};
use crate::operators::stationary_residual;
use crate::spectral::dirichlet_eigen;

pub const TRAJECTORY: &str = "trajectory.csv";
pub const FINAL_FIELD: &str = "u_final.yflo";
pub const SUMMARY: &str = "summary.json";
pub const CHECKPOINT: &str = "checkpoint.yflo";
pub const CHECKPOINT_SIDECAR: &str = "checkpoint.yflc";

/// Energy may rise by at most this fraction of `1 + |E|` between records.
pub const ENERGY_TOL: f64 = 1e-10;

/// Runs one parsed command line.
pub fn execute(cli: &Cli) -> Result<(Value, bool)> {
    let common = match &cli.command {
        Command::Run(a) | Command::Resume(a) => &a.common,
        Command::Eigen(c) | Command::Check(c) | Command::Supersolution(c) | Command::Verify(c) => c,
    };
    if let Some(k) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let scenario = load_scenario(&common.scenario)?;
    let out = common.out.clone().unwrap_or_else(|| scenario.output.clone());
    fs::create_dir_all(&out)?;
    let (name, (report, passed)) = match &cli.command {
        Command::Run(a) => ("run", run_flow(&scenario, &out, a, false)?),
        Command::Resume(a) => ("resume", run_flow(&scenario, &out, a, true)?),
        Command::Eigen(_) => ("eigen", eigen(&scenario, &out)?),
        Command::Check(_) => ("check", check(&scenario)?),
        Command::Supersolution(_) => ("supersolution", supersolution(&scenario, &out)?),
        Command::Verify(_) => ("verify", verify(&scenario, &out)?),
    };
    let report = json!({
        "command": name,
        "scenario": scenario.name,
        "passed": passed,
        "report": report,
    });
    if !matches!(cli.command, Command::Run(_) | Command::Resume(_)) {
        write_json(&out.join(format!("{name}.json")), &report)?;
    }
    Ok((report, passed))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn write_checkpoint(out: &Path, runner: &FlowRunner, rows: u64) -> Result<()> {
    let s = runner.state();
    write_snapshot(&out.join(CHECKPOINT), &s.u)?;
    Sidecar {
        step: s.step,
        t: s.t,
        dt_last: s.dt_last,
        dissipation_cum: runner.dissipation_cum(),
        rows,
    }
    .write(&out.join(CHECKPOINT_SIDECAR))
}

fn summary(sc: &Scenario, state: &FlowState, outcome: Outcome, rows: u64, cum: f64) -> Result<Value> {
    Ok(json!({
        "name": sc.name,
        "outcome": outcome,
        "t": state.t,
        "step": state.step,
        "rows": rows,
        "min_u": state.u.min(),
        "max_u": state.u.max(),
        "stationary_residual": stationary_residual(&sc.background, &state.u)?,
        "dissipation_cum": cum,
    }))
}

fn run_flow(sc: &Scenario, out: &Path, args: &FlowArgs, resume: bool) -> Result<(Value, bool)> {
    let bg = &sc.background;
    let orders = sc.flow.lp_orders.clone();
    let csv_path = out.join(TRAJECTORY);
    let (mut runner, mut sink) = if resume {
        let side = Sidecar::read(&out.join(CHECKPOINT_SIDECAR))?;
        let u = read_snapshot(&out.join(CHECKPOINT))?;
        if **u.grid() != **bg.grid() {
            return Err(Error::GridMismatch);
        }
        let state = FlowState {
            u: ScalarField::new(bg.grid().clone(), u.into_values())?,
            t: side.t,
            step: side.step,
            dt_last: side.dt_last,
        };
        let runner = FlowRunner::resume(bg, sc.flow.clone(), state, side.dissipation_cum)?;
        (runner, CsvSink::reopen_truncated(&csv_path, &orders, side.rows)?)
    } else {
        let runner = FlowRunner::new(bg, sc.u0.clone(), sc.flow.clone())?;
        (runner, CsvSink::create(&csv_path, &orders)?)
    };
    if args.checkpoint_every == Some(0) {
        return Err(Error::InvalidArgument("--checkpoint-every must be positive".into()));
    }
    let start_step = runner.state().step;
    let mut flushed = 0;
    let outcome = loop {
        sink.append(&runner.records()[flushed..])?;
        flushed = runner.records().len();
        if let Some(outcome) = runner.stop_reason() {
            break outcome;
        }
        let (t, step) = (runner.state().t, runner.state().step);
        if args.until.is_some_and(|u: Until| u.reached(t, step)) {
            sink.flush()?;
            write_checkpoint(out, &runner, sink.rows())?;
            break Outcome::Stopped;
        }
        if let Some(every) = args.checkpoint_every {
            if step != start_step && step % every == 0 {
                sink.flush()?;
                write_checkpoint(out, &runner, sink.rows())?;
            }
        }
        if let Err(e) = runner.advance() {
            sink.append(&runner.records()[flushed..])?;
            sink.flush()?;
            let state = runner.state().clone();
            let cum = runner.dissipation_cum();
            write_snapshot(&out.join(FINAL_FIELD), &state.u)?;
            write_json(
                &out.join(SUMMARY),
                &summary(sc, &state, Outcome::Failed, sink.rows(), cum)?,
            )?;
            return Err(runner.fail(e));
        }
    };
    let cum = runner.dissipation_cum();
    let traj = runner.finish(outcome);
    sink.append(&traj.records[flushed..])?;
    sink.flush()?;
    write_snapshot(&out.join(FINAL_FIELD), &traj.final_state.u)?;
    let report = summary(sc, &traj.final_state, outcome, sink.rows(), cum)?;
    write_json(&out.join(SUMMARY), &report)?;
    Ok((report, true))
}

fn eigen(sc: &Scenario, out: &Path) -> Result<(Value, bool)> {
    let omega = superlevel_mask(&sc.background, sc.hypothesis.eps)?;
    let res = dirichlet_eigen(&sc.background, &omega, sc.hypothesis.eigen_tol)?;
    write_snapshot(&out.join("phi.yflo"), &res.phi)?;
    let lambda = if res.lambda.is_finite() { json!(res.lambda) } else { json!("inf") };
    Ok((
        json!({
            "eps": sc.hypothesis.eps,
            "omega_points": omega.count(),
            "lambda": lambda,
            "residual": res.residual,
            "iterations": res.iterations,
        }),
        true,
    ))
}

fn check(sc: &Scenario) -> Result<(Value, bool)> {
    let h = &sc.hypothesis;
    let omega = superlevel_mask(&sc.background, h.eps)?;
    let report = check_hypotheses(&sc.background, &omega, h.dilation, h.band)?;
    let passed = report.h1_holds && report.h2_holds == Some(true);
    let value = serde_json::to_value(&report).map_err(|e| Error::Io(e.into()))?;
    Ok((value, passed))
}

fn supersolution(sc: &Scenario, out: &Path) -> Result<(Value, bool)> {
    let h = &sc.hypothesis;
    let omega = superlevel_mask(&sc.background, h.eps)?;
    let cert = build_supersolution(&sc.background, &omega, h.dilation, h.band)?;
    write_snapshot(&out.join("ubar.yflo"), &cert.ubar)?;
    let mut value = serde_json::to_value(&cert).map_err(|e| Error::Io(e.into()))?;
    value["c_omega"] = json!(cert.c_omega(sc.background.exponent()));
    value["max_ubar"] = json!(cert.max_ubar());
    Ok((value, true))
}

fn energy_violations(records: &[DiagnosticsRecord]) -> Vec<usize> {
    records
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].energy > w[0].energy + ENERGY_TOL * (1.0 + w[0].energy.abs()))
        .map(|(i, _)| i + 1)
        .collect()
}

fn verify(sc: &Scenario, out: &Path) -> Result<(Value, bool)> {
    let bg = &sc.background;
    let records = read_trajectory(&out.join(TRAJECTORY))?;
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY))?)
        .map_err(|e| Error::Scenario(format!("{}: {e}", out.join(SUMMARY).display())))?;
    let outcome: Outcome = serde_json::from_value(summary["outcome"].clone())
        .map_err(|e| Error::Scenario(format!("summary outcome: {e}")))?;
    let d = &sc.diagnostics;
    let mut checks = Vec::new();

    let bad_energy = energy_violations(&records);
    checks.push(json!({
        "check": "energy_monotone",
        "passed": bad_energy.is_empty(),
        "violating_rows": bad_energy,
    }));

    let asserted = outcome != Outcome::BlowUp;
    match dissipation_identity_error(bg, &records) {
        Ok(err) => checks.push(json!({
            "check": "dissipation_identity",
            "passed": !asserted || err <= d.dissipation_tol,
            "asserted": asserted,
            "relative_error": err,
            "tolerance": d.dissipation_tol,
        })),
        Err(e) => checks.push(json!({
            "check": "dissipation_identity",
            "passed": !asserted,
            "asserted": asserted,
            "error": e.to_string(),
        })),
    }

    let ubar_max = if d.check_trap {
        let h = &sc.hypothesis;
        let omega = superlevel_mask(bg, h.eps)?;
        Some(build_supersolution(bg, &omega, h.dilation, h.band)?.max_ubar())
    } else {
        None
    };
    let env = envelope_check(bg, &records, ubar_max);
    let mut env_value = serde_json::to_value(&env).map_err(|e| Error::Io(e.into()))?;
    env_value["check"] = json!("envelopes");
    checks.push(env_value);

    let decay = decay_check(&records, &sc.flow.lp_orders, d.decay_threshold, outcome)?;
    let mut decay_value = serde_json::to_value(&decay).map_err(|e| Error::Io(e.into()))?;
    decay_value["check"] = json!("decay");
    checks.push(decay_value);

    if outcome == Outcome::BlowUp {
        match growth_fit(&records) {
            Ok(fit) => checks.push(json!({
                "check": "growth",
                "passed": d.growth_min.is_none_or(|m| fit.exponent >= m),
                "exponent": fit.exponent,
                "r_squared": fit.r_squared,
                "window": [fit.window.0, fit.window.1],
                "minimum": d.growth_min,
            })),
            Err(e) => checks.push(json!({
                "check": "growth",
                "passed": d.growth_min.is_none(),
                "error": e.to_string(),
            })),
        }
    }

    let passed = checks.iter().all(|c| c["passed"] == json!(true));
    Ok((json!({ "outcome": outcome, "records": records.len(), "checks": checks }), passed))
}
