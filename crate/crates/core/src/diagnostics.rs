//! Identity checks, envelopes, decay and growth along trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{step, FlowState, Outcome};
use crate::grid::{compensated_sum, ScalarField, SubdomainMask};
use crate::operators::{energy, laplacian_g, pow_real, scalar_curvature, Background};

/// Slack on every envelope inequality.
pub const ENVELOPE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub dt: f64,
    pub step: u64,
    pub energy: f64,
    pub min_u: f64,
    pub max_u: f64,
    /// `∫ u^{2n/(n-2)} dV_{g_0}`.
    pub volume_g: f64,
    /// `max |R_g - f|`.
    pub residual_sup: f64,
    /// `(p, ∫ |R_g - f|^p dV_g)` per requested order.
    pub residual_lp: Vec<(f64, f64)>,
    /// Trapezoid accumulation of `∫ (R_g - f)² dV_g` in time.
    pub dissipation_cum: f64,
}

impl DiagnosticsRecord {
    pub fn capture(
        bg: &Background,
        state: &FlowState,
        lp_orders: &[f64],
        dissipation_cum: f64,
    ) -> Result<Self> {
        bg.ensure_grid(&state.u)?;
        state.u.check_positive()?;
        let d = crate::flow::defect(bg, state.u.values());
        Ok(Self::from_defect(bg, state, &d, lp_orders, dissipation_cum))
    }

    pub(crate) fn from_defect(
        bg: &Background,
        state: &FlowState,
        defect: &[f64],
        lp_orders: &[f64],
        dissipation_cum: f64,
    ) -> Self {
        let u = state.u.values();
        let e = bg.exponent();
        let ve = bg.volume_exponent();
        let cell = bg.grid().cell_volume();
        let vol: Vec<f64> = u.iter().map(|&x| pow_real(x, ve)).collect();
        let resid: Vec<f64> = u
            .iter()
            .zip(defect)
            .map(|(&x, &d)| (pow_real(x, -e) * d).abs())
            .collect();
        let residual_lp = lp_orders
            .iter()
            .map(|&p| {
                let s = compensated_sum(resid.iter().zip(&vol).map(|(&r, &v)| pow_real(r, p) * v));
                (p, s * cell)
            })
            .collect();
        Self {
            t: state.t,
            dt: state.dt_last,
            step: state.step,
            energy: energy(bg, &state.u).expect("accepted states are positive"),
            min_u: state.u.min(),
            max_u: state.u.max(),
            volume_g: compensated_sum(vol.iter().copied()) * cell,
            residual_sup: resid.iter().copied().fold(0.0, f64::max),
            residual_lp,
            dissipation_cum,
        }
    }

    /// `∫ |R_g - f|^p dV_g` if order `p` was recorded.
    pub fn residual_lp(&self, p: f64) -> Option<f64> {
        self.residual_lp
            .iter()
            .find(|(q, _)| (q - p).abs() <= 1e-12 * p.abs().max(1.0))
            .map(|&(_, v)| v)
    }
}

/// `|(E_0 - E_end) - ((n-2)/2) ∫∫ (R_g - f)² dV_g dt| / (|E_0 - E_end| + ε)`.
pub fn dissipation_identity_error(bg: &Background, records: &[DiagnosticsRecord]) -> Result<f64> {
    if records.len() < 10 {
        return Err(Error::TooShort {
            need: 10,
            got: records.len(),
        });
    }
    let first = &records[0];
    let last = &records[records.len() - 1];
    let drop = first.energy - last.energy;
    let predicted = 0.5 * (bg.dim() as f64 - 2.0) * (last.dissipation_cum - first.dissipation_cum);
    let err = (drop - predicted).abs();
    if err == 0.0 {
        return Ok(0.0);
    }
    Ok(err / (drop.abs() + f64::EPSILON))
}

/// `[s, step(s, dt), step(step(s, dt), dt)]`, the input to the window checks.
pub fn state_window(bg: &Background, state: &FlowState, dt: f64) -> Result<[FlowState; 3]> {
    let s1 = step(bg, state, dt)?;
    let s2 = step(bg, &s1, dt)?;
    Ok([state.clone(), s1, s2])
}

fn window_spacing(states: &[FlowState; 3]) -> Result<f64> {
    let first = states[1].t - states[0].t;
    let second = states[2].t - states[1].t;
    let scale = first.abs().max(second.abs());
    if !(first > 0.0) || (first - second).abs() > 1e-9 * scale {
        return Err(Error::UnequalSpacing { first, second });
    }
    Ok(0.5 * (first + second))
}

fn relative(lhs: f64, rhs: f64) -> f64 {
    let err = (lhs - rhs).abs();
    if err == 0.0 {
        0.0
    } else {
        err / rhs.abs().max(f64::MIN_POSITIVE)
    }
}

fn residual_field(bg: &Background, u: &ScalarField) -> Result<ScalarField> {
    scalar_curvature(bg, u)?.zip_map(bg.f(), |r, f| r - f)
}

/// Relative grid-`L²` mismatch in `∂_t R_g = (n-1) Δ_g(R_g - f) + R_g (R_g - f)`,
/// with a centred difference on the left.
pub fn curvature_evolution_error(bg: &Background, states: &[FlowState; 3]) -> Result<f64> {
    let dt = window_spacing(states)?;
    let r0 = scalar_curvature(bg, &states[0].u)?;
    let r2 = scalar_curvature(bg, &states[2].u)?;
    let mid = &states[1].u;
    let r1 = scalar_curvature(bg, mid)?;
    let w = r1.zip_map(bg.f(), |r, f| r - f)?;
    let lap = laplacian_g(bg, mid, &w)?;
    let n1 = bg.dim() as f64 - 1.0;
    let mut num = Vec::with_capacity(w.len());
    let mut den = Vec::with_capacity(w.len());
    for j in 0..w.len() {
        let lhs = (r2.values()[j] - r0.values()[j]) / (2.0 * dt);
        let rhs = n1 * lap.values()[j] + r1.values()[j] * w.values()[j];
        num.push((lhs - rhs).powi(2));
        den.push(rhs * rhs);
    }
    let num = compensated_sum(num).sqrt();
    let den = compensated_sum(den).sqrt();
    Ok(if num == 0.0 { 0.0 } else { num / den.max(f64::MIN_POSITIVE) })
}

fn lp_integral(bg: &Background, u: &ScalarField, w: &ScalarField, p: f64) -> f64 {
    let ve = bg.volume_exponent();
    compensated_sum(
        u.values()
            .iter()
            .zip(w.values())
            .map(|(&x, &r)| pow_real(r.abs(), p) * pow_real(x, ve)),
    ) * bg.grid().cell_volume()
}

/// Relative mismatch in the evolution law of `∫ |R_g - f|^p dV_g`.
///
/// The gradient term `∫ |∇_g |w|^{p/2}|² dV_g` is computed as
/// `Σ_faces u_j u_{j+e} (v_{j+e} - v_j)² / h²` with `v = sgn(w)|w|^{p/2}`.
/// Orders below 2 are refused when `|w|` comes close to zero.
pub fn lemma21_error(bg: &Background, states: &[FlowState; 3], p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("order p = {p} must exceed 1")));
    }
    let dt = window_spacing(states)?;
    let mid = &states[1].u;
    let w = residual_field(bg, mid)?;
    if p < 2.0 && w.values().iter().any(|v| v.abs() <= 1e-6 * w.max_abs()) {
        return Err(Error::InvalidArgument(format!(
            "|R_g - f| degenerates and order p = {p} < 2 is not differentiable there"
        )));
    }
    let i0 = lp_integral(bg, &states[0].u, &residual_field(bg, &states[0].u)?, p);
    let i2 = lp_integral(bg, &states[2].u, &residual_field(bg, &states[2].u)?, p);
    let lhs = (i2 - i0) / (2.0 * dt);

    let n = bg.dim() as f64;
    let grid = bg.grid();
    let cell = grid.cell_volume();
    let inv_h2 = grid.inv_h2();
    let (uv, wv, fv) = (mid.values(), w.values(), bg.f().values());
    let v: Vec<f64> = wv.iter().map(|&x| x.signum() * pow_real(x.abs(), 0.5 * p)).collect();
    let grad = compensated_sum((0..v.len()).flat_map(|j| {
        let (v, uv) = (&v, uv);
        inv_h2.iter().enumerate().map(move |(axis, &c)| {
            let k = grid.forward(j, axis);
            let dv = v[k] - v[j];
            uv[j] * uv[k] * dv * dv * c
        })
    })) * cell;
    let ve = bg.volume_exponent();
    let cubic = compensated_sum(
        (0..wv.len()).map(|j| wv[j] * pow_real(wv[j].abs(), p) * pow_real(uv[j], ve)),
    ) * cell;
    let forced = compensated_sum(
        (0..wv.len()).map(|j| fv[j] * pow_real(wv[j].abs(), p) * pow_real(uv[j], ve)),
    ) * cell;
    let rhs = -(4.0 * (n - 1.0) * (p - 1.0) / p) * grad + (p - 0.5 * n) * cubic + p * forced;
    Ok(relative(lhs, rhs))
}

/// `C_0 = (min|R_0| / max|f|)^{(n-2)/4}`, or `None` when `f ≡ 0`.
pub fn lower_envelope_constant(bg: &Background) -> Option<f64> {
    let min_r0 = bg.r0().values().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let max_f = bg.f().max_abs();
    (max_f > 0.0).then(|| (min_r0 / max_f).powf(0.25 * (bg.dim() as f64 - 2.0)))
}

/// `C_1 = ((n-2)/4)(max|R_0| + max|f|)`.
pub fn upper_envelope_constant(bg: &Background) -> f64 {
    0.25 * (bg.dim() as f64 - 2.0) * (bg.r0().max_abs() + bg.f().max_abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub step: u64,
    pub t: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub c0: Option<f64>,
    pub c1: f64,
    pub records_checked: usize,
    pub lower: Vec<Violation>,
    pub upper: Vec<Violation>,
    pub trap: Vec<Violation>,
    /// Slope of `log ∫|R_g - f|^{n²/(2(n-2))} dV_g` against `t`; informational.
    pub log_residual_slope: Option<f64>,
    pub passed: bool,
}

/// Checks both maximum-principle envelopes and, given `max ū`, the trap `u ≤ max ū`.
pub fn envelope_check(
    bg: &Background,
    records: &[DiagnosticsRecord],
    ubar_max: Option<f64>,
) -> EnvelopeReport {
    let c0 = lower_envelope_constant(bg);
    let c1 = upper_envelope_constant(bg);
    let mut report = EnvelopeReport {
        c0,
        c1,
        records_checked: records.len(),
        lower: Vec::new(),
        upper: Vec::new(),
        trap: Vec::new(),
        log_residual_slope: None,
        passed: true,
    };
    let Some(first) = records.first() else {
        return report;
    };
    let lower_bound = match c0 {
        Some(c0) => c0.min(first.min_u) - ENVELOPE_TOL,
        None => 0.0,
    };
    let base = first.max_u.max(1.0);
    for r in records {
        let lower_ok = match c0 {
            Some(_) => r.min_u >= lower_bound,
            None => r.min_u > 0.0,
        };
        if !lower_ok {
            report.lower.push(Violation {
                step: r.step,
                t: r.t,
                value: r.min_u,
                bound: lower_bound,
            });
        }
        let upper = base * (c1 * r.t).exp() + ENVELOPE_TOL;
        if !(r.max_u <= upper) {
            report.upper.push(Violation {
                step: r.step,
                t: r.t,
                value: r.max_u,
                bound: upper,
            });
        }
        if let Some(m) = ubar_max {
            if !(r.max_u <= m + ENVELOPE_TOL) {
                report.trap.push(Violation {
                    step: r.step,
                    t: r.t,
                    value: r.max_u,
                    bound: m + ENVELOPE_TOL,
                });
            }
        }
    }
    let n = bg.dim() as f64;
    let p = n * n / (2.0 * (n - 2.0));
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.residual_lp(p).filter(|&v| v > 0.0).map(|v| (r.t, v.ln())))
        .collect();
    report.log_residual_slope = least_squares(&pts).map(|(slope, _)| slope);
    report.passed = report.lower.is_empty() && report.upper.is_empty() && report.trap.is_empty();
    report
}

/// Slope and `R²` of the least-squares line through `pts`.
fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = compensated_sum(pts.iter().map(|p| p.0)) / m;
    let my = compensated_sum(pts.iter().map(|p| p.1)) / m;
    let sxx = compensated_sum(pts.iter().map(|p| (p.0 - mx).powi(2)));
    let sxy = compensated_sum(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    let syy = compensated_sum(pts.iter().map(|p| (p.1 - my).powi(2)));
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, r2))
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayOrder {
    pub p: f64,
    pub final_value: f64,
    pub below_threshold: bool,
    pub eventually_decreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub applicable: bool,
    pub threshold: f64,
    pub orders: Vec<DecayOrder>,
    pub passed: bool,
}

/// Relative growth tolerated between consecutive tail records.
pub const DECAY_RIPPLE: f64 = 0.05;

/// Final size and tail monotonicity of `∫ |R_g - f|^p dV_g` per order.
///
/// Blow-up and failed trajectories are reported as not applicable.
pub fn decay_check(
    records: &[DiagnosticsRecord],
    orders: &[f64],
    threshold: f64,
    outcome: Outcome,
) -> Result<DecayReport> {
    if matches!(outcome, Outcome::BlowUp | Outcome::Failed) {
        return Ok(DecayReport {
            applicable: false,
            threshold,
            orders: Vec::new(),
            passed: true,
        });
    }
    let last = records.last().ok_or(Error::TooShort { need: 1, got: 0 })?;
    let tail_start = records.len() - (records.len() / 4).max(2).min(records.len());
    let mut out = Vec::with_capacity(orders.len());
    for &p in orders {
        let final_value = last
            .residual_lp(p)
            .ok_or_else(|| Error::InvalidArgument(format!("order {p} was not recorded")))?;
        let tail: Vec<f64> = records[tail_start..]
            .iter()
            .map(|r| r.residual_lp(p).unwrap_or(f64::NAN))
            .collect();
        let eventually_decreasing = tail
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + DECAY_RIPPLE));
        out.push(DecayOrder {
            p,
            final_value,
            below_threshold: final_value < threshold,
            eventually_decreasing,
        });
    }
    let passed = out.iter().all(|o| o.below_threshold && o.eventually_decreasing);
    Ok(DecayReport {
        applicable: true,
        threshold,
        orders: out,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthFit {
    pub exponent: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Least-squares slope of `log max u` against `log t` over `[t_end/10, t_end]`.
pub fn growth_fit(records: &[DiagnosticsRecord]) -> Result<GrowthFit> {
    let last = records
        .last()
        .ok_or_else(|| Error::InsufficientSpan("no records".into()))?;
    let t_end = last.t;
    let t_start = t_end / 10.0;
    if !(t_end > 0.0) || records[0].t > t_start {
        return Err(Error::InsufficientSpan(format!(
            "records cover [{}, {t_end}], less than one decade",
            records[0].t
        )));
    }
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.t >= t_start && r.t > 0.0)
        .map(|r| (r.t.ln(), r.max_u.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientSpan(format!(
            "only {} records in [{t_start}, {t_end}]",
            pts.len()
        )));
    }
    let (exponent, r_squared) = least_squares(&pts)
        .ok_or_else(|| Error::InsufficientSpan("degenerate time samples".into()))?;
    Ok(GrowthFit {
        exponent,
        r_squared,
        window: (t_start, t_end),
        points: pts.len(),
    })
}

/// `∫_mask u^N φ dV_{g_0}` with `φ` rescaled to unit mass on `mask`.
pub fn weighted_mass(
    bg: &Background,
    u: &ScalarField,
    phi: &ScalarField,
    mask: &SubdomainMask,
) -> Result<f64> {
    bg.ensure_grid(u)?;
    bg.ensure_grid(phi)?;
    u.check_positive()?;
    let cell = bg.grid().cell_volume();
    let mass = compensated_sum(mask.indices().map(|j| phi.values()[j])) * cell;
    if !(mass != 0.0 && mass.is_finite()) {
        return Err(Error::InvalidArgument("weight has zero mass on the mask".into()));
    }
    let e = bg.exponent();
    let raw = compensated_sum(mask.indices().map(|j| pow_real(u.values()[j], e) * phi.values()[j]))
        * cell;
    Ok(raw / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, FlowConfig};
    use crate::grid::GridSpec;
    use std::sync::Arc;

    fn cube(size: usize, length: f64) -> Arc<GridSpec> {
        Arc::new(GridSpec::cube(3, size, length).unwrap())
    }

    fn record(t: f64, max_u: f64, lp: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            dt: 0.1,
            step: (t * 10.0) as u64,
            energy: 0.0,
            min_u: 1.0,
            max_u,
            volume_g: 1.0,
            residual_sup: lp,
            residual_lp: vec![(2.0, lp), (1.5, lp), (4.5, lp)],
            dissipation_cum: 0.0,
        }
    }

    #[test]
    fn capture_constant_state() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, 1.0).unwrap();
        let s = FlowState::initial(ScalarField::constant(g, 2.0).unwrap()).unwrap();
        let r = DiagnosticsRecord::capture(&bg, &s, &[2.0, 4.5], 0.0).unwrap();
        // R_g = -1/16, f = 1
        let w = 1.0 + 1.0 / 16.0;
        assert!((r.residual_sup - w).abs() < 1e-15);
        assert!((r.volume_g - 64.0).abs() < 1e-12);
        assert!((r.residual_lp(2.0).unwrap() - w * w * 64.0).abs() < 1e-11);
        assert!((r.residual_lp(4.5).unwrap() - w.powf(4.5) * 64.0).abs() < 1e-11);
        assert!(r.residual_lp(3.0).is_none());
    }

    #[test]
    fn stationary_trajectory_identities() {
        let g = cube(6, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let s = FlowState::initial(ScalarField::constant(g, 1.0).unwrap()).unwrap();
        let recs: Vec<_> = (0..10)
            .map(|_| DiagnosticsRecord::capture(&bg, &s, &[2.0], 0.0).unwrap())
            .collect();
        assert_eq!(dissipation_identity_error(&bg, &recs).unwrap(), 0.0);
        assert!(matches!(
            dissipation_identity_error(&bg, &recs[..5]),
            Err(Error::TooShort { need: 10, got: 5 })
        ));
        let w = state_window(&bg, &s, 0.01).unwrap();
        assert_eq!(curvature_evolution_error(&bg, &w).unwrap(), 0.0);
        assert_eq!(lemma21_error(&bg, &w, 2.0).unwrap(), 0.0);
        let env = envelope_check(&bg, &recs, Some(1.0));
        assert!(env.passed);
        let decay = decay_check(&recs, &[2.0], 1e-8, Outcome::Converged).unwrap();
        assert!(decay.passed);
        assert_eq!(decay.orders[0].final_value, 0.0);
    }

    #[test]
    fn unequal_window_is_rejected() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let s = FlowState::initial(ScalarField::constant(g, 2.0).unwrap()).unwrap();
        let s1 = step(&bg, &s, 0.01).unwrap();
        let s2 = step(&bg, &s1, 0.02).unwrap();
        assert!(matches!(
            curvature_evolution_error(&bg, &[s.clone(), s1.clone(), s2.clone()]),
            Err(Error::UnequalSpacing { .. })
        ));
        assert!(matches!(lemma21_error(&bg, &[s, s1, s2], 2.0), Err(Error::UnequalSpacing { .. })));
    }

    fn scalar_r(u: f64) -> f64 {
        -u.powi(-4)
    }

    #[test]
    fn constant_run_matches_scalar_identities() {
        // R0 = -1, f = -1, n = 3: R = -u^{-4}, dR/dt = R (R - f) for constant u
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let s = FlowState::initial(ScalarField::constant(g, 1.6).unwrap()).unwrap();
        let w = state_window(&bg, &s, 1e-3).unwrap();
        assert!(curvature_evolution_error(&bg, &w).unwrap() <= 1e-6);
        assert!(lemma21_error(&bg, &w, 2.0).unwrap() <= 1e-6);

        // independent scalar check of the p = 2 law
        let u = w[1].u.values()[0];
        let r = scalar_r(u);
        let rhs = (2.0 - 1.5) * (r + 1.0).powi(3) * u.powi(6) + 2.0 * -1.0 * (r + 1.0).powi(2) * u.powi(6);
        let i = |s: &FlowState| {
            let x = s.u.values()[0];
            (scalar_r(x) + 1.0).powi(2) * x.powi(6)
        };
        let lhs = (i(&w[2]) - i(&w[0])) / 2e-3;
        assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs());
    }

    #[test]
    fn lemma21_order_checks() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, -1.0).unwrap();
        let s = FlowState::initial(ScalarField::constant(g, 1.6).unwrap()).unwrap();
        let w = state_window(&bg, &s, 1e-3).unwrap();
        assert!(lemma21_error(&bg, &w, 1.0).is_err());
        // |w| is bounded away from zero here, so p = 1.5 is accepted
        assert!(lemma21_error(&bg, &w, 1.5).unwrap() <= 1e-6);
        let bg0 = Background::constant(s.u.grid().clone(), -1.0, -1.0).unwrap();
        let one = FlowState::initial(ScalarField::constant(s.u.grid().clone(), 1.0).unwrap()).unwrap();
        let w0 = state_window(&bg0, &one, 1e-3).unwrap();
        assert!(lemma21_error(&bg0, &w0, 1.5).is_err());
    }

    #[test]
    fn envelope_constants() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -2.0, -0.5).unwrap();
        assert!((lower_envelope_constant(&bg).unwrap() - 4f64.powf(0.25)).abs() < 1e-15);
        assert_eq!(upper_envelope_constant(&bg), 0.25 * 2.5);
        let bg0 = Background::constant(g, -2.0, 0.0).unwrap();
        assert!(lower_envelope_constant(&bg0).is_none());
    }

    #[test]
    fn envelope_reports_violations() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g, -1.0, 1.0).unwrap();
        // C1 = 0.5, C0 = 1
        let mut recs = vec![record(0.0, 1.0, 1.0), record(1.0, 1.5, 1.0), record(2.0, 3.0, 1.0)];
        recs[1].min_u = 0.5;
        let rep = envelope_check(&bg, &recs, Some(2.0));
        assert_eq!(rep.lower.len(), 1);
        assert_eq!(rep.upper.len(), 1);
        assert_eq!(rep.upper[0].step, 20);
        assert_eq!(rep.trap.len(), 1);
        assert!(!rep.passed);
        assert_eq!(rep.log_residual_slope, Some(0.0));
    }

    #[test]
    fn decay_report() {
        let recs: Vec<_> = (0..20).map(|k| record(k as f64, 1.0, 10f64.powi(-k))).collect();
        let rep = decay_check(&recs, &[2.0, 1.5, 4.5], 1e-8, Outcome::Converged).unwrap();
        assert!(rep.passed && rep.applicable);
        let rep = decay_check(&recs, &[2.0], 1e-30, Outcome::Converged).unwrap();
        assert!(!rep.passed);
        assert!(decay_check(&recs, &[3.0], 1e-8, Outcome::Timeout).is_err());
        let rep = decay_check(&recs, &[2.0], 1e-8, Outcome::BlowUp).unwrap();
        assert!(!rep.applicable);

        let mut rising = recs.clone();
        rising[18].residual_lp[0].1 = 1e-17;
        rising[19].residual_lp[0].1 = 1e-16;
        let rep = decay_check(&rising, &[2.0], 1e-8, Outcome::Converged).unwrap();
        assert!(!rep.orders[0].eventually_decreasing);
    }

    #[test]
    fn growth_fit_power_law() {
        let recs: Vec<_> = (0..=200)
            .map(|k| {
                let t = 0.1 * k as f64;
                record(t, 3.0 * t.max(1e-3).powf(0.3), 1.0)
            })
            .collect();
        let fit = growth_fit(&recs).unwrap();
        assert!((fit.exponent - 0.3).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.window, (2.0, 20.0));
        assert!(matches!(growth_fit(&recs[150..]), Err(Error::InsufficientSpan(_))));
        assert!(growth_fit(&[]).is_err());
    }

    #[test]
    fn weighted_mass_cases() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -1.0, 1.0).unwrap();
        let full = SubdomainMask::full(g.clone());
        let phi = ScalarField::constant(g.clone(), 3.0).unwrap();
        let one = ScalarField::constant(g.clone(), 1.0).unwrap();
        assert!((weighted_mass(&bg, &one, &phi, &full).unwrap() - 1.0).abs() < 1e-15);
        let two = ScalarField::constant(g.clone(), 2.0).unwrap();
        assert!((weighted_mass(&bg, &two, &phi, &full).unwrap() - 32.0).abs() < 1e-12);
        let zero = ScalarField::zeros(g.clone());
        assert!(weighted_mass(&bg, &one, &zero, &full).is_err());
        assert!(weighted_mass(&bg, &one, &phi, &SubdomainMask::empty(g)).is_err());
    }

    #[test]
    fn constant_data_dissipation_identity() {
        let g = cube(4, 1.0);
        let bg = Background::constant(g.clone(), -2.0, -1.0).unwrap();
        let cfg = FlowConfig {
            t_max: 2.0,
            residual_stop: 1e-30,
            ..FlowConfig::default()
        };
        let traj = run(&bg, ScalarField::constant(g, 1.0).unwrap(), cfg).unwrap();
        assert!(dissipation_identity_error(&bg, &traj.records).unwrap() <= 1e-4);
    }
}
