//! Explicit time integration of `∂_t u = -((n-2)/4)(R_g - f) u`.

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::grid::{compensated_sum, ScalarField};
use crate::operators::{conformal_at, pow_real, Background};

/// Rejected attempts allowed per step before giving up.
pub const MAX_HALVINGS: u32 = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub u: ScalarField,
    pub t: f64,
    pub step: u64,
    /// Accepted step size that produced this state; 0 for initial data.
    pub dt_last: f64,
}

impl FlowState {
    pub fn initial(u: ScalarField) -> Result<Self> {
        u.check_positive()?;
        Ok(Self {
            u,
            t: 0.0,
            step: 0,
            dt_last: 0.0,
        })
    }
}

/// `[2, n/2, n²/(2(n-2))]`.
pub fn default_lp_orders(n: usize) -> Vec<f64> {
    let n = n as f64;
    vec![2.0, n / 2.0, n * n / (2.0 * (n - 2.0))]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub cfl_fraction: f64,
    pub t_max: f64,
    pub residual_stop: f64,
    pub blowup_ceiling: f64,
    pub record_every: u64,
    pub lp_orders: Vec<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            cfl_fraction: 0.9,
            t_max: 100.0,
            residual_stop: 1e-8,
            blowup_ceiling: 1e6,
            record_every: 1,
            lp_orders: default_lp_orders(3),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.cfl_fraction > 0.0 && self.cfl_fraction <= 1.0) {
            return bad("cfl_fraction must lie in (0, 1]");
        }
        for (name, v) in [
            ("t_max", self.t_max),
            ("residual_stop", self.residual_stop),
            ("blowup_ceiling", self.blowup_ceiling),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1");
        }
        if let Some(p) = self.lp_orders.iter().find(|&&p| !(p >= 1.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(format!("L^p order {p} below 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Converged,
    Timeout,
    BlowUp,
    /// Halted by an external limit before any stop condition fired.
    Stopped,
    Failed,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: FlowState,
    pub outcome: Outcome,
}

pub(crate) fn defect(bg: &Background, u: &[f64]) -> Vec<f64> {
    let grid = bg.grid();
    let inv_h2 = grid.inv_h2();
    let fv = bg.f().values();
    let e = bg.exponent();
    ScalarField::par_from_index(grid.clone(), |j| {
        conformal_at(bg, &inv_h2, u, j) - fv[j] * pow_real(u[j], e)
    })
    .into_values()
}

fn velocity_from_defect(bg: &Background, u: &[f64], d: &[f64]) -> Vec<f64> {
    let kappa = bg.flow_rate();
    let e = 1.0 - bg.exponent();
    ScalarField::par_from_index(bg.grid().clone(), |j| -kappa * pow_real(u[j], e) * d[j])
        .into_values()
}

/// `∂_t u = -((n-2)/4)(R_g - f) u`, evaluated as `-κ u^{1-N}(L u - f u^N)`.
pub fn velocity(bg: &Background, u: &ScalarField) -> Result<ScalarField> {
    bg.ensure_grid(u)?;
    u.check_positive()?;
    let d = defect(bg, u.values());
    Ok(ScalarField::from_raw(
        u.grid().clone(),
        velocity_from_defect(bg, u.values(), &d),
    ))
}

fn sup_residual_from_defect(bg: &Background, u: &[f64], d: &[f64]) -> f64 {
    let e = bg.exponent();
    u.iter()
        .zip(d)
        .map(|(&uj, &dj)| (pow_real(uj, -e) * dj).abs())
        .fold(0.0, f64::max)
}

fn stable_dt_from(bg: &Background, u: &[f64], residual_sup: f64, cfl_fraction: f64) -> f64 {
    let kappa = bg.flow_rate();
    let min_u = u.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = kappa * bg.c_n() * pow_real(min_u, 1.0 - bg.exponent());
    let stencil: f64 = bg.grid().inv_h2().iter().map(|c| 2.0 * c).sum();
    let diffusion = cfl_fraction / (stencil * d_max);
    let reaction_rate = kappa * residual_sup;
    if reaction_rate > 0.0 {
        diffusion.min(0.5 / reaction_rate)
    } else {
        diffusion
    }
}

/// Largest explicit step allowed at `u`.
pub fn stable_dt(bg: &Background, u: &ScalarField, cfl_fraction: f64) -> Result<f64> {
    bg.ensure_grid(u)?;
    u.check_positive()?;
    if !(cfl_fraction > 0.0 && cfl_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cfl_fraction must lie in (0, 1], got {cfl_fraction}"
        )));
    }
    let d = defect(bg, u.values());
    let sup = sup_residual_from_defect(bg, u.values(), &d);
    Ok(stable_dt_from(bg, u.values(), sup, cfl_fraction))
}

fn admissible(values: &[f64]) -> bool {
    values.iter().all(|&v| v > 0.0 && v.is_finite())
}

fn axpy(u: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    u.iter().zip(k).map(|(&x, &y)| x + a * y).collect()
}

fn rk4_attempt(bg: &Background, u: &[f64], k1: &[f64], dt: f64) -> Option<Vec<f64>> {
    let stage = |w: &[f64]| -> Option<Vec<f64>> {
        if !admissible(w) {
            return None;
        }
        let d = defect(bg, w);
        let k = velocity_from_defect(bg, w, &d);
        k.iter().all(|v| v.is_finite()).then_some(k)
    };
    let k2 = stage(&axpy(u, 0.5 * dt, k1))?;
    let k3 = stage(&axpy(u, 0.5 * dt, &k2))?;
    let k4 = stage(&axpy(u, dt, &k3))?;
    let sixth = dt / 6.0;
    let next: Vec<f64> = (0..u.len())
        .map(|j| u[j] + sixth * ((k1[j] + k4[j]) + 2.0 * (k2[j] + k3[j])))
        .collect();
    admissible(&next).then_some(next)
}

fn step_with_k1(bg: &Background, state: &FlowState, k1: &[f64], dt: f64) -> Result<FlowState> {
    let u = state.u.values();
    let mut h = dt;
    for halvings in 0..=MAX_HALVINGS {
        if let Some(next) = rk4_attempt(bg, u, k1, h) {
            return Ok(FlowState {
                u: ScalarField::from_raw(state.u.grid().clone(), next),
                t: state.t + h,
                step: state.step + 1,
                dt_last: h,
            });
        }
        if halvings < MAX_HALVINGS {
            h *= 0.5;
        }
    }
    Err(Error::PositivityCollapse {
        halvings: MAX_HALVINGS,
        state: Box::new(state.clone()),
    })
}

/// One classical RK4 step, halving `dt` on loss of positivity or finiteness.
pub fn step(bg: &Background, state: &FlowState, dt: f64) -> Result<FlowState> {
    bg.ensure_grid(&state.u)?;
    state.u.check_positive()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {dt}")));
    }
    let d = defect(bg, state.u.values());
    let k1 = velocity_from_defect(bg, state.u.values(), &d);
    step_with_k1(bg, state, &k1, dt)
}

/// `∫ (R_g - f)² dV_g = Σ d² u^{1-N} dV_{g_0}` from the defect `d = L u - f u^N`.
fn dissipation_rate(bg: &Background, u: &[f64], d: &[f64]) -> f64 {
    let e = 1.0 - bg.exponent();
    compensated_sum(u.iter().zip(d).map(|(&uj, &dj)| dj * dj * pow_real(uj, e)))
        * bg.grid().cell_volume()
}

/// Quantities derived from one state, shared by stepping and recording.
struct Evaluation {
    defect: Vec<f64>,
    residual_sup: f64,
    rate: f64,
}

impl Evaluation {
    fn of(bg: &Background, u: &[f64]) -> Self {
        let defect = defect(bg, u);
        Self {
            residual_sup: sup_residual_from_defect(bg, u, &defect),
            rate: dissipation_rate(bg, u, &defect),
            defect,
        }
    }
}

/// Step-by-step driver behind [`run`], exposed for checkpointing callers.
///
/// `dissipation_cum` is accumulated by the trapezoid rule over every accepted
/// step. A runner rebuilt with [`FlowRunner::resume`] from a saved state and
/// accumulator continues bitwise identically.
pub struct FlowRunner<'a> {
    bg: &'a Background,
    cfg: FlowConfig,
    state: FlowState,
    eval: Evaluation,
    dissipation_cum: f64,
    records: Vec<DiagnosticsRecord>,
}

impl<'a> FlowRunner<'a> {
    /// Starts at `t = 0` and records the initial state.
    pub fn new(bg: &'a Background, u0: ScalarField, cfg: FlowConfig) -> Result<Self> {
        let mut runner = Self::resume(bg, cfg, FlowState::initial(u0)?, 0.0)?;
        runner.push_record();
        Ok(runner)
    }

    /// Continues from `state` without recording it again.
    pub fn resume(
        bg: &'a Background,
        cfg: FlowConfig,
        state: FlowState,
        dissipation_cum: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        bg.ensure_grid(&state.u)?;
        state.u.check_positive()?;
        let eval = Evaluation::of(bg, state.u.values());
        Ok(Self {
            bg,
            cfg,
            state,
            eval,
            dissipation_cum,
            records: Vec::new(),
        })
    }

    pub fn state(&self) -> &FlowState {
        &self.state
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn dissipation_cum(&self) -> f64 {
        self.dissipation_cum
    }

    pub fn residual_sup(&self) -> f64 {
        self.eval.residual_sup
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    fn push_record(&mut self) {
        let rec = DiagnosticsRecord::from_defect(
            self.bg,
            &self.state,
            &self.eval.defect,
            &self.cfg.lp_orders,
            self.dissipation_cum,
        );
        self.records.push(rec);
    }

    /// Stop condition met by the current state, if any.
    pub fn stop_reason(&self) -> Option<Outcome> {
        if self.eval.residual_sup <= self.cfg.residual_stop {
            Some(Outcome::Converged)
        } else if self.state.u.max() >= self.cfg.blowup_ceiling {
            Some(Outcome::BlowUp)
        } else if self.state.t >= self.cfg.t_max {
            Some(Outcome::Timeout)
        } else {
            None
        }
    }

    /// Takes one step of size `stable_dt`; records if the cadence asks for it.
    pub fn advance(&mut self) -> Result<()> {
        let u = self.state.u.values();
        let dt = stable_dt_from(self.bg, u, self.eval.residual_sup, self.cfg.cfl_fraction);
        let k1 = velocity_from_defect(self.bg, u, &self.eval.defect);
        let next = step_with_k1(self.bg, &self.state, &k1, dt)?;
        let eval = Evaluation::of(self.bg, next.u.values());
        self.dissipation_cum += 0.5 * next.dt_last * (self.eval.rate + eval.rate);
        self.state = next;
        self.eval = eval;
        if self.state.step % self.cfg.record_every == 0 {
            self.push_record();
        }
        Ok(())
    }

    /// Closes the trajectory, recording the final state if it is not already the last record.
    pub fn finish(mut self, outcome: Outcome) -> Trajectory {
        let recorded = self
            .records
            .last()
            .is_some_and(|r| r.step == self.state.step);
        if !recorded && outcome != Outcome::Stopped {
            self.push_record();
        }
        Trajectory {
            records: self.records,
            final_state: self.state,
            outcome,
        }
    }

    /// Wraps a step error together with everything computed so far.
    pub fn fail(self, source: Error) -> Error {
        let partial = self.finish(Outcome::Failed);
        Error::StepFailed {
            source: Box::new(source),
            partial: Box::new(partial),
        }
    }
}

/// Integrates from `u0` until convergence, blow-up or `t_max`.
pub fn run(bg: &Background, u0: ScalarField, cfg: FlowConfig) -> Result<Trajectory> {
    let mut runner = FlowRunner::new(bg, u0, cfg)?;
    loop {
        if let Some(outcome) = runner.stop_reason() {
            return Ok(runner.finish(outcome));
        }
        if let Err(e) = runner.advance() {
            return Err(runner.fail(e));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::operators::{energy, scalar_curvature};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cube(size: usize, length: f64) -> Arc<GridSpec> {
        Arc::new(GridSpec::cube(3, size, length).unwrap())
    }

    fn smooth_u(g: &Arc<GridSpec>, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<([f64; 3], f64)> = (0..4)
            .map(|_| {
                let k = [
                    rng.gen_range(0..3) as f64,
                    rng.gen_range(0..3) as f64,
                    rng.gen_range(0..3) as f64,
                ];
                (k, rng.gen_range(-0.1..0.1))
            })
            .collect();
        let l = g.lengths()[0];
        ScalarField::from_fn(g.clone(), |x| {
            1.0 + modes
                .iter()
                .map(|(k, a)| {
                    let ph: f64 = (0..3).map(|i| k[i] * x[i]).sum::<f64>();
                    a * (2.0 * std::f64::consts::PI * ph / l).sin()
                })
                .sum::<f64>()
        })
        .unwrap()
    }

    #[test]
    fn velocity_constants() {
        let g = cube(6, 1.0);
        let one = ScalarField::constant(g.clone(), 1.0).unwrap();
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        assert!(velocity(&bg, &one).unwrap().values().iter().all(|&v| v == 0.0));
        let bg = Background::constant(g.clone(), -1.0, 1.0).unwrap();
        assert!(velocity(&bg, &one).unwrap().values().iter().all(|&v| v == 0.5));
        let zero = ScalarField::zeros(g);
        assert!(matches!(velocity(&bg, &zero), Err(Error::Positivity { .. })));
    }

    #[test]
    fn velocity_matches_both_forms() {
        let g = cube(8, 1.0);
        let u = smooth_u(&g, 3);
        let f = smooth_u(&g, 4).map(|v| 5.0 * (v - 1.0));
        let bg = Background::constant(g.clone(), -1.5, 0.0).unwrap().with_f(f).unwrap();
        let v = velocity(&bg, &u).unwrap();
        let rg = scalar_curvature(&bg, &u).unwrap();
        let lap = crate::operators::laplacian(&u);
        for j in 0..u.len() {
            let (uj, fj) = (u.values()[j], bg.f().values()[j]);
            let direct = -0.25 * (rg.values()[j] - fj) * uj;
            assert!((v.values()[j] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            let lhs = 5.0 * uj.powi(4) * v.values()[j];
            let rhs = 1.25 * (8.0 * lap.values()[j] + 1.5 * uj + fj * uj.powi(5));
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn stable_dt_formula() {
        let g = cube(16, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let one = ScalarField::constant(g.clone(), 1.0).unwrap();
        let dt = stable_dt(&bg, &one, 0.5).unwrap();
        assert!((dt - 0.5 / (6.0 * 256.0 * 2.0)).abs() <= 1e-18);
        let two = ScalarField::constant(g, 2.0).unwrap();
        let bg2 = Background::constant(two.grid().clone(), -16.0, -1.0).unwrap();
        // R_g = f at u = 2 with R0 = -16, so only the diffusion cap acts
        let dt2 = stable_dt(&bg2, &two, 0.5).unwrap();
        assert!((dt2 / dt - 16.0).abs() <= 1e-12);
        assert!(stable_dt(&bg, &one, 1.5).is_err());
    }

    #[test]
    fn stable_dt_reaction_cap() {
        let g = cube(4, 0.01);
        let bg = Background::constant(g.clone(), -1.0, 1.0).unwrap();
        let one = ScalarField::constant(g, 1.0).unwrap();
        let dt = stable_dt(&bg, &one, 1.0).unwrap();
        let diffusion = 1.0 / (6.0 / (0.0025f64 * 0.0025) * 2.0);
        assert_eq!(dt, diffusion.min(0.5 / (0.25 * 2.0)));
        let g = cube(4, 1000.0);
        let bg = Background::constant(g.clone(), -1.0, 1.0).unwrap();
        let one = ScalarField::constant(g, 1.0).unwrap();
        assert_eq!(stable_dt(&bg, &one, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn stable_dt_reevaluation() {
        let g = cube(8, 2.0);
        let u = smooth_u(&g, 11);
        let f = smooth_u(&g, 12).map(|v| 3.0 * (v - 1.0) - 0.5);
        let bg = Background::constant(g.clone(), -1.0, 0.0).unwrap().with_f(f).unwrap();
        let rg = scalar_curvature(&bg, &u).unwrap();
        let sup = rg
            .values()
            .iter()
            .zip(bg.f().values())
            .map(|(r, f)| (r - f).abs())
            .fold(0.0, f64::max);
        let dmax = u.values().iter().map(|&x| 2.0 * x.powi(-4)).fold(0.0, f64::max);
        let h = 2.0 / 8.0;
        let expected = (0.7 / (6.0 / (h * h) * dmax)).min(0.5 / (0.25 * sup));
        let dt = stable_dt(&bg, &u, 0.7).unwrap();
        assert!((dt - expected).abs() <= 1e-14 * expected);
    }

    #[test]
    fn stationary_step_is_identity() {
        let g = cube(6, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let s = FlowState::initial(ScalarField::constant(g, 1.0).unwrap()).unwrap();
        let next = step(&bg, &s, 0.01).unwrap();
        assert_eq!(next.u, s.u);
        assert_eq!(next.t, 0.01);
        assert_eq!(next.step, 1);
    }

    fn scalar_rhs(u: f64) -> f64 {
        -0.25 * (-u.powi(-4) + 1.0) * u
    }

    fn scalar_ode(u0: f64, t: f64, n: usize) -> f64 {
        let h = t / n as f64;
        let mut u = u0;
        for _ in 0..n {
            let k1 = scalar_rhs(u);
            let k2 = scalar_rhs(u + 0.5 * h * k1);
            let k3 = scalar_rhs(u + 0.5 * h * k2);
            let k4 = scalar_rhs(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        u
    }

    #[test]
    fn constant_data_matches_scalar_ode() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let mut s = FlowState::initial(ScalarField::constant(g, 2.0).unwrap()).unwrap();
        for _ in 0..50 {
            s = step(&bg, &s, 0.02).unwrap();
        }
        assert!((s.t - 1.0).abs() < 1e-12);
        let spread = s.u.max() - s.u.min();
        assert!(spread <= 1e-15);
        let oracle = scalar_ode(2.0, 1.0, 200_000);
        assert!((s.u.values()[0] - oracle).abs() <= 1e-8, "{} vs {oracle}", s.u.values()[0]);
    }

    #[test]
    fn step_halves_on_positivity_loss() {
        let g = cube(4, 1.0);
        // f hugely negative drives u to zero fast: big steps overshoot below 0
        let bg = Background::constant(g.clone(), -1.0, -1e4).unwrap();
        let s = FlowState::initial(ScalarField::constant(g, 1.0).unwrap()).unwrap();
        let next = step(&bg, &s, 1.0).unwrap();
        assert!(next.dt_last < 1.0);
        assert!(next.u.min() > 0.0);
    }

    #[test]
    fn step_collapse_is_reported() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1e300).unwrap();
        let s = FlowState::initial(ScalarField::constant(g, 1.0).unwrap()).unwrap();
        match step(&bg, &s, 1.0) {
            Err(Error::PositivityCollapse { halvings, state }) => {
                assert_eq!(halvings, MAX_HALVINGS);
                assert_eq!(state.step, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn run_stationary_converges_immediately() {
        let g = cube(6, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let traj = run(&bg, ScalarField::constant(g, 1.0).unwrap(), FlowConfig::default()).unwrap();
        assert_eq!(traj.outcome, Outcome::Converged);
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.final_state.t, 0.0);
    }

    #[test]
    fn run_constant_data_converges() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -2.0, -1.0).unwrap();
        let cfg = FlowConfig {
            record_every: 50,
            ..FlowConfig::default()
        };
        let traj = run(&bg, ScalarField::constant(g, 1.0).unwrap(), cfg).unwrap();
        assert_eq!(traj.outcome, Outcome::Converged);
        let target = 2f64.powf(0.25);
        assert!((traj.final_state.u.max() - target).abs() <= 1e-8);
        assert!(crate::operators::stationary_residual(&bg, &traj.final_state.u).unwrap() <= 1e-8 * target.powi(5));
        let last = traj.records.last().unwrap();
        assert_eq!(last.step, traj.final_state.step);
    }

    #[test]
    fn run_blows_up_with_positive_f() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, 1.0).unwrap();
        let cfg = FlowConfig {
            blowup_ceiling: 10.0,
            record_every: 100,
            ..FlowConfig::default()
        };
        let traj = run(&bg, ScalarField::constant(g, 1.0).unwrap(), cfg).unwrap();
        assert_eq!(traj.outcome, Outcome::BlowUp);
        assert!(traj.final_state.u.max() >= 10.0);
    }

    #[test]
    fn run_times_out() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let cfg = FlowConfig {
            t_max: 0.05,
            residual_stop: 1e-30,
            ..FlowConfig::default()
        };
        let traj = run(&bg, ScalarField::constant(g, 3.0).unwrap(), cfg).unwrap();
        assert_eq!(traj.outcome, Outcome::Timeout);
        assert!(traj.final_state.t >= 0.05);
    }

    #[test]
    fn resume_is_bitwise_invisible() {
        let g = cube(8, 2.0);
        let u0 = smooth_u(&g, 21);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let cfg = FlowConfig {
            t_max: 0.3,
            record_every: 7,
            ..FlowConfig::default()
        };
        let full = run(&bg, u0.clone(), cfg.clone()).unwrap();

        let mut first = FlowRunner::new(&bg, u0, cfg.clone()).unwrap();
        for _ in 0..30 {
            first.advance().unwrap();
        }
        let head = first.records().to_vec();
        let (state, cum) = (first.state().clone(), first.dissipation_cum());
        let mut second = FlowRunner::resume(&bg, cfg, state, cum).unwrap();
        let outcome = loop {
            if let Some(o) = second.stop_reason() {
                break o;
            }
            second.advance().unwrap();
        };
        let tail = second.finish(outcome);
        assert_eq!(tail.final_state, full.final_state);
        let mut joined = head;
        joined.extend(tail.records);
        assert_eq!(joined, full.records);
    }

    #[test]
    fn step_failure_keeps_partial_trajectory() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, 1.0).unwrap();
        let cfg = FlowConfig {
            record_every: 2,
            ..FlowConfig::default()
        };
        let mut runner = FlowRunner::new(&bg, ScalarField::constant(g, 1.0).unwrap(), cfg).unwrap();
        for _ in 0..3 {
            runner.advance().unwrap();
        }
        match runner.fail(Error::InvalidArgument("stop".into())) {
            Error::StepFailed { source, partial } => {
                assert!(matches!(*source, Error::InvalidArgument(_)));
                assert_eq!(partial.outcome, Outcome::Failed);
                let steps: Vec<u64> = partial.records.iter().map(|r| r.step).collect();
                assert_eq!(steps, vec![0, 2, 3]);
                assert_eq!(partial.final_state.step, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::default().validate().is_ok());
        for cfg in [
            FlowConfig { cfl_fraction: 0.0, ..FlowConfig::default() },
            FlowConfig { t_max: -1.0, ..FlowConfig::default() },
            FlowConfig { record_every: 0, ..FlowConfig::default() },
            FlowConfig { lp_orders: vec![0.5], ..FlowConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn energy_never_increases(seed in 0u64..1000, fshift in -1.0f64..0.5) {
            let g = cube(6, 2.0);
            let u = smooth_u(&g, seed);
            let f = smooth_u(&g, seed + 1).map(|v| 4.0 * (v - 1.0) + fshift);
            let bg = Background::constant(g.clone(), -1.0, 0.0).unwrap().with_f(f).unwrap();
            let mut s = FlowState::initial(u).unwrap();
            let mut e = energy(&bg, &s.u).unwrap();
            for _ in 0..20 {
                let dt = stable_dt(&bg, &s.u, 0.9).unwrap();
                s = step(&bg, &s, dt).unwrap();
                let e2 = energy(&bg, &s.u).unwrap();
                prop_assert!(e2 <= e + 1e-10 * (1.0 + e.abs()), "{e} -> {e2}");
                e = e2;
            }
        }
    }
}
