//! Sign conditions on `f` and the explicit supersolution they produce.
//!
//! For an open set `Ω` the two conditions are
//!
//! * (H1) `λ_Ω > 0` and `f < 0` on `M \ Ω`;
//! * (H2) `sup_Ω f ≤ C_Ω inf_{M\Ω} |f|`.
//!
//! The supersolution is `ū = δ (χ φ_0 + 1 - χ)` where `φ_0` is the principal
//! eigenfunction on an enlargement `D ⊃ Ω` and `χ` is a cutoff equal to one
//! on `Ω` and zero outside `D`. `L(ū) ≥ 0` on `Ω` as soon as
//! `δ^{N-1} sup_Ω f ≤ λ_D`, and off `Ω` as soon as
//! `δ^{N-1} inf_{M\Ω}|f| ≥ m_1 m_0^{-N}`; the window between the two bounds is
//! nonempty exactly when (H2) holds with `C_Ω = λ_D m_0^N / m_1`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, SubdomainMask};
use crate::operators::{conformal_op, pow_real, stationary_defect, Background};
use crate::spectral::dirichlet_eigen;

/// Default tolerance for the eigen solves behind the hypothesis checks.
pub const EIGEN_TOL: f64 = 1e-10;

/// Allowed negative excursion of `min L(ū)` when accepting a certificate.
pub const CERTIFICATE_TOL: f64 = 1e-9;

const REGULAR_VALUE_GAP: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    #[serde(skip)]
    pub omega: SubdomainMask,
    pub omega_points: usize,
    pub lambda_omega: f64,
    pub h1_holds: bool,
    /// `max f` over the complement of `Ω` (`-∞` if `Ω` is everything).
    pub max_f_complement: f64,
    /// `sup_Ω f` (`-∞` for empty `Ω`).
    pub sup_f_omega: f64,
    /// `inf_{M\Ω} |f|` (`+∞` if `Ω` is everything).
    pub inf_absf_complement: f64,
    pub c_omega: Option<f64>,
    pub h2_holds: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupersolutionCertificate {
    #[serde(skip)]
    pub ubar: ScalarField,
    pub delta: f64,
    pub m0: f64,
    pub m1: f64,
    pub lambda_d: f64,
    pub min_l_ubar: f64,
    pub delta_lo: f64,
    pub delta_hi: f64,
    pub sup_f_omega: f64,
    pub inf_absf_complement: f64,
    pub dilation: usize,
    pub band: usize,
}

impl SupersolutionCertificate {
    /// `C_Ω = λ_D m_0^N / m_1` for this construction.
    pub fn c_omega(&self, exponent: f64) -> f64 {
        self.lambda_d * pow_real(self.m0, exponent) / self.m1
    }

    pub fn max_ubar(&self) -> f64 {
        self.ubar.max()
    }
}

/// `Ω_ε = {f > -ε}`, with `ε` moved off the sampled values of `f`.
pub fn superlevel_mask(bg: &Background, eps: f64) -> Result<SubdomainMask> {
    Ok(superlevel_mask_with_eps(bg, eps)?.0)
}

/// As [`superlevel_mask`], also returning the threshold actually used.
pub fn superlevel_mask_with_eps(bg: &Background, eps: f64) -> Result<(SubdomainMask, f64)> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let f = bg.f().values();
    let mut level = eps;
    for _ in 0..64 {
        if f.iter().all(|&v| (v + level).abs() > REGULAR_VALUE_GAP) {
            break;
        }
        level += 2.0 * REGULAR_VALUE_GAP * level.max(1.0);
    }
    let mask = SubdomainMask::from_predicate(bg.grid().clone(), |i| f[i] > -level);
    Ok((mask, level))
}

fn f_extrema(bg: &Background, omega: &SubdomainMask) -> (f64, f64, f64) {
    let mut sup_in = f64::NEG_INFINITY;
    let mut max_out = f64::NEG_INFINITY;
    let mut inf_abs_out = f64::INFINITY;
    for (i, &v) in bg.f().values().iter().enumerate() {
        if omega.contains(i) {
            sup_in = sup_in.max(v);
        } else {
            max_out = max_out.max(v);
            inf_abs_out = inf_abs_out.min(v.abs());
        }
    }
    (sup_in, max_out, inf_abs_out)
}

/// Decides (H1) for `omega`; the (H2) fields are left unset.
pub fn check_h1(bg: &Background, omega: &SubdomainMask) -> Result<HypothesisReport> {
    let (sup_f_omega, max_f_complement, inf_absf_complement) = f_extrema(bg, omega);
    let lambda_omega = dirichlet_eigen(bg, omega, EIGEN_TOL)?.lambda;
    Ok(HypothesisReport {
        omega: omega.clone(),
        omega_points: omega.count(),
        lambda_omega,
        h1_holds: lambda_omega > 0.0 && max_f_complement < 0.0,
        max_f_complement,
        sup_f_omega,
        inf_absf_complement,
        c_omega: None,
        h2_holds: None,
    })
}

/// (H1) followed by (H2) through the supersolution construction.
pub fn check_hypotheses(
    bg: &Background,
    omega: &SubdomainMask,
    dilation: usize,
    band: usize,
) -> Result<HypothesisReport> {
    let mut report = check_h1(bg, omega)?;
    if !report.h1_holds {
        return Ok(report);
    }
    let parts = cutoff_construction(bg, omega, dilation, band)?;
    let c_omega = parts.lambda_d * pow_real(parts.m0, bg.exponent()) / parts.m1;
    report.c_omega = Some(c_omega);
    report.h2_holds = Some(report.sup_f_omega <= c_omega * report.inf_absf_complement);
    Ok(report)
}

/// Pieces of `ū / δ = χ φ_0 + 1 - χ` that do not depend on `f`.
struct Construction {
    profile: ScalarField,
    m0: f64,
    m1: f64,
    lambda_d: f64,
}

/// Quintic smoothstep, `C²` with flat ends.
fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

/// Cutoff equal to 1 on `core`, decaying to 0 over `band` cells of Euclidean
/// grid distance from `core`, and forced to 0 outside `outer`.
fn cutoff(core: &SubdomainMask, outer: &SubdomainMask, band: usize) -> ScalarField {
    let grid = core.grid().clone();
    let core_pts: Vec<Vec<usize>> = core.indices().map(|i| grid.coords(i)).collect();
    let sizes = grid.sizes().to_vec();
    let values = (0..grid.len())
        .map(|i| {
            if core.contains(i) {
                return 1.0;
            }
            if !outer.contains(i) || core_pts.is_empty() {
                return 0.0;
            }
            let c = grid.coords(i);
            let d2 = core_pts
                .iter()
                .map(|q| {
                    (0..c.len())
                        .map(|a| {
                            let d = c[a].abs_diff(q[a]);
                            let d = d.min(sizes[a] - d) as f64;
                            d * d
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            1.0 - smoothstep(d2.sqrt() / band as f64)
        })
        .collect();
    ScalarField::from_raw(grid, values)
}

fn cutoff_construction(
    bg: &Background,
    omega: &SubdomainMask,
    dilation: usize,
    band: usize,
) -> Result<Construction> {
    if dilation < 1 || band < 1 {
        return Err(Error::InvalidArgument(
            "dilation and band must both be at least 1".into(),
        ));
    }
    let grid = bg.grid().clone();
    if omega.is_empty() {
        let profile = ScalarField::constant(grid, 1.0)?;
        let m1 = conformal_op(bg, &profile)?.max_abs();
        return Ok(Construction {
            profile,
            m0: 1.0,
            m1,
            lambda_d: f64::INFINITY,
        });
    }
    let d = omega.dilate(dilation);
    let eig = dirichlet_eigen(bg, &d, EIGEN_TOL)?;
    if !(eig.lambda > 0.0) {
        return Err(Error::H1Violated(format!(
            "λ_D = {} on the dilated set D; use a smaller dilation",
            eig.lambda
        )));
    }
    // χ = 1 on Ω and on every stencil neighbour of Ω, so L(ū) = δ(λ_D φ_0) - f ū^N on Ω
    let core = omega.dilate(1);
    let chi = cutoff(&core, &d, band);
    let profile = chi.zip_map(&eig.phi, |c, p| c * p + 1.0 - c)?;
    let m0 = profile.min();
    let m1 = conformal_op(bg, &profile)?.max_abs();
    Ok(Construction {
        profile,
        m0,
        m1,
        lambda_d: eig.lambda,
    })
}

/// Builds and verifies `ū = δ (χ φ_0 + 1 - χ)` for `omega`.
pub fn build_supersolution(
    bg: &Background,
    omega: &SubdomainMask,
    dilation: usize,
    band: usize,
) -> Result<SupersolutionCertificate> {
    let (sup_f_omega, max_f_complement, inf_absf_complement) = f_extrema(bg, omega);
    if !(max_f_complement < 0.0) {
        return Err(Error::H1Violated(format!(
            "f reaches {max_f_complement} outside Ω"
        )));
    }
    let parts = cutoff_construction(bg, omega, dilation, band)?;
    let e = bg.exponent();
    let root = 1.0 / (e - 1.0);

    let delta_lo = (parts.m1 * pow_real(parts.m0, -e) / inf_absf_complement).powf(root);
    let delta_hi = if sup_f_omega > 0.0 {
        (parts.lambda_d / sup_f_omega).powf(root)
    } else {
        f64::INFINITY
    };
    let c_omega = parts.lambda_d * pow_real(parts.m0, e) / parts.m1;
    if delta_lo > delta_hi {
        return Err(Error::H2Violated {
            delta_lo,
            delta_hi,
            c_omega,
        });
    }
    let delta = if delta_hi.is_infinite() {
        2.0 * delta_lo
    } else if delta_lo == 0.0 {
        0.5 * delta_hi
    } else {
        (delta_lo * delta_hi).sqrt()
    };

    let ubar = parts.profile.scale(delta);
    let min_l_ubar = verify_supersolution(bg, &ubar)?;
    if min_l_ubar < -CERTIFICATE_TOL {
        return Err(Error::CertificateRejected {
            min_l_ubar,
            tolerance: CERTIFICATE_TOL,
        });
    }
    Ok(SupersolutionCertificate {
        ubar,
        delta,
        m0: parts.m0,
        m1: parts.m1,
        lambda_d: parts.lambda_d,
        min_l_ubar,
        delta_lo,
        delta_hi,
        sup_f_omega,
        inf_absf_complement,
        dilation,
        band,
    })
}

/// `min (-c_n Δū + R_0 ū - f ū^N)`; nonnegative iff `ū` is a supersolution.
pub fn verify_supersolution(bg: &Background, ubar: &ScalarField) -> Result<f64> {
    Ok(stationary_defect(bg, ubar)?.min())
}
