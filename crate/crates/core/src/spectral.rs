//! Principal Dirichlet eigenpair of `L = -c_n Δ + R_0` on a masked subdomain.
//!
//! Points outside the mask are pinned to zero, which is the discrete
//! Dirichlet condition: the restricted operator keeps only the couplings
//! between mask points. The restricted matrix is symmetric, and adding the
//! shift `σ = 1 - min_Ω R_0` makes it positive definite with smallest
//! eigenvalue at least 1, so each inverse-iteration step is a plain CG solve.
//! Because `A + σI` is then a nonsingular M-matrix its inverse is
//! nonnegative, and iterating from the mask indicator keeps every iterate
//! nonnegative (up to solver round-off).

use crate::error::{Error, Result};
use crate::grid::{ScalarField, SubdomainMask};
use crate::operators::{dirichlet_form, Background};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct EigenResult {
    /// First Dirichlet eigenvalue; `+∞` for an empty mask.
    pub lambda: f64,
    /// Eigenfunction with `max φ = 1`, zero outside the mask.
    pub phi: ScalarField,
    /// `max |L φ - λ φ|` over the mask.
    pub residual: f64,
    pub iterations: usize,
}

impl EigenResult {
    pub fn is_empty_domain(&self) -> bool {
        self.lambda == f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub cg_rel_tol: f64,
}

impl EigenOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            max_iterations: 5000,
            cg_rel_tol: 1e-13,
        }
    }
}

/// The operator restricted to mask points, in compact numbering.
pub(crate) struct MaskedOperator {
    points: Vec<usize>,
    neighbours: Vec<usize>,
    diag: Vec<f64>,
    off: Vec<f64>,
    dim: usize,
}

impl MaskedOperator {
    pub(crate) fn new(bg: &Background, mask: &SubdomainMask) -> Self {
        let grid = bg.grid();
        let dim = grid.dim();
        let mut compact = vec![NONE; grid.len()];
        let points: Vec<usize> = mask.indices().collect();
        for (k, &p) in points.iter().enumerate() {
            compact[p] = k;
        }
        let inv_h2 = grid.inv_h2();
        let off: Vec<f64> = inv_h2.iter().map(|c| -bg.c_n() * c).collect();
        let lap_diag: f64 = inv_h2.iter().map(|c| 2.0 * bg.c_n() * c).sum();
        let mut neighbours = Vec::with_capacity(points.len() * 2 * dim);
        let mut diag = Vec::with_capacity(points.len());
        for &p in &points {
            for axis in 0..dim {
                neighbours.push(compact[grid.forward(p, axis)]);
                neighbours.push(compact[grid.backward(p, axis)]);
            }
            diag.push(lap_diag + bg.r0().values()[p]);
        }
        Self {
            points,
            neighbours,
            diag,
            off,
            dim,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.points.len()
    }

    /// `y = (A + shift I) x`.
    pub(crate) fn apply(&self, x: &[f64], shift: f64, y: &mut [f64]) {
        let stride = 2 * self.dim;
        for (k, yk) in y.iter_mut().enumerate() {
            let nb = &self.neighbours[k * stride..(k + 1) * stride];
            let mut acc = (self.diag[k] + shift) * x[k];
            for axis in 0..self.dim {
                let mut s = 0.0;
                if nb[2 * axis] != NONE {
                    s += x[nb[2 * axis]];
                }
                if nb[2 * axis + 1] != NONE {
                    s += x[nb[2 * axis + 1]];
                }
                acc += self.off[axis] * s;
            }
            *yk = acc;
        }
    }

    fn scatter(&self, bg: &Background, x: &[f64]) -> ScalarField {
        let mut values = vec![0.0; bg.grid().len()];
        for (&p, &v) in self.points.iter().zip(x) {
            values[p] = v;
        }
        ScalarField::from_raw(bg.grid().clone(), values)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients for `(A + shift I) x = b` down to `|r| ≤ target`, warm-started from `x`.
fn conjugate_gradient(
    op: &MaskedOperator,
    shift: f64,
    b: &[f64],
    x: &mut [f64],
    target: f64,
    max_iter: usize,
) {
    let m = b.len();
    let mut ax = vec![0.0; m];
    op.apply(x, shift, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; m];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= target {
            break;
        }
        op.apply(&p, shift, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for k in 0..m {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..m {
            p[k] = r[k] + beta * p[k];
        }
    }
}

/// Rayleigh quotient and `max |A x - ρ x|` for a compact vector.
fn rayleigh_residual(op: &MaskedOperator, x: &[f64], ax: &mut [f64]) -> (f64, f64) {
    op.apply(x, 0.0, ax);
    let rho = dot(x, ax) / dot(x, x);
    let residual = x
        .iter()
        .zip(ax.iter())
        .map(|(xi, ai)| (ai - rho * xi).abs())
        .fold(0.0, f64::max);
    (rho, residual)
}

fn normalize_max(x: &mut [f64]) {
    let (mut best, mut arg) = (0.0f64, 0usize);
    for (k, v) in x.iter().enumerate() {
        if v.abs() > best {
            best = v.abs();
            arg = k;
        }
    }
    let scale = x[arg];
    for v in x.iter_mut() {
        *v /= scale;
    }
}

/// First Dirichlet eigenpair on `mask` with residual at most `tol`.
pub fn dirichlet_eigen(bg: &Background, mask: &SubdomainMask, tol: f64) -> Result<EigenResult> {
    dirichlet_eigen_with(bg, mask, EigenOptions::with_tol(tol))
}

pub fn dirichlet_eigen_with(
    bg: &Background,
    mask: &SubdomainMask,
    opts: EigenOptions,
) -> Result<EigenResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eigen tolerance must be positive, got {}",
            opts.tol
        )));
    }
    if mask.grid() != bg.grid() && **mask.grid() != **bg.grid() {
        return Err(Error::GridMismatch);
    }
    if mask.is_empty() {
        return Ok(EigenResult {
            lambda: f64::INFINITY,
            phi: ScalarField::zeros(bg.grid().clone()),
            residual: 0.0,
            iterations: 0,
        });
    }

    let op = MaskedOperator::new(bg, mask);
    let m = op.len();
    let min_r0 = op
        .points
        .iter()
        .map(|&p| bg.r0().values()[p])
        .fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min_r0;
    let max_cg = 50 * m + 1000;

    let mut x = vec![1.0; m];
    let mut ax = vec![0.0; m];
    let (mut rho, mut residual) = rayleigh_residual(&op, &x, &mut ax);
    let mut best = residual;
    let mut iterations = 0;
    while residual > opts.tol {
        if iterations >= opts.max_iterations {
            return Err(Error::EigenNotConverged {
                iterations,
                best_residual: best,
            });
        }
        iterations += 1;
        let b = x.clone();
        let warm = 1.0 / (rho + shift).max(1.0);
        for v in x.iter_mut() {
            *v *= warm;
        }
        let b_max = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let target = (opts.cg_rel_tol * dot(&b, &b).sqrt())
            .min(0.1 * opts.tol * b_max / (rho + shift).max(1.0));
        conjugate_gradient(&op, shift, &b, &mut x, target, max_cg);
        normalize_max(&mut x);
        (rho, residual) = rayleigh_residual(&op, &x, &mut ax);
        best = best.min(residual);
    }

    // round-off can leave tiny negative entries where φ is nearly zero
    if x.iter().any(|&v| v < 0.0) {
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        normalize_max(&mut x);
        (rho, residual) = rayleigh_residual(&op, &x, &mut ax);
    }

    Ok(EigenResult {
        lambda: rho,
        phi: op.scatter(bg, &x),
        residual,
        iterations,
    })
}

/// `∫ c_n|∇w|² + R_0 w² / ∫ w²` for `w` supported in `mask`.
pub fn rayleigh_quotient(bg: &Background, w: &ScalarField, mask: &SubdomainMask) -> Result<f64> {
    bg.ensure_grid(w)?;
    if let Some(index) = (0..w.len()).find(|&i| !mask.contains(i) && w.values()[i] != 0.0) {
        return Err(Error::InvalidArgument(format!(
            "test function is nonzero outside the mask at index {index}"
        )));
    }
    let mass = crate::grid::integrate(&w.map(|v| v * v))?;
    if mass == 0.0 {
        return Err(Error::InvalidArgument("zero test function".into()));
    }
    Ok(dirichlet_form(bg, w)? / mass)
}
