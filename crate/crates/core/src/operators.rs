//! Background data and discrete operators of the conformal problem.
//!
//! All stencils are second-order central differences on the periodic grid.
//! Conventions used throughout, with `N = (n+2)/(n-2)`:
//!
//! * `L w = -c_n Δw + R_0 w`, the conformal Laplacian;
//! * `R_g = u^{-N} L u` for `g = u^{4/(n-2)} g_0`;
//! * `Δ_g w = u^{-(N+1)} div(u² ∇w)` with the face coefficient `u_j u_{j+e}`;
//! * `E(u) = ∫ c_n|∇u|² + R_0 u² - ((n-2)/n) f u^{N+1}` with forward differences.
//!
//! With these choices `∇E = 2 (L u - f u^N) dV_{g_0}` holds exactly on the grid,
//! so the semi-discrete flow is an exact gradient flow of the discrete energy.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, GridSpec, ScalarField};

/// `x^e`, through `powi` when the exponent is a small integer.
#[inline]
pub fn pow_real(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() <= 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// Background metric data: `R_0 < 0` and the prescribed curvature `f`.
#[derive(Debug, Clone)]
pub struct Background {
    grid: Arc<GridSpec>,
    r0: ScalarField,
    f: ScalarField,
    c_n: f64,
    exponent: f64,
}

impl Background {
    pub fn new(r0: ScalarField, f: ScalarField) -> Result<Self> {
        r0.ensure_same_grid(&f)?;
        r0.check_finite()?;
        f.check_finite()?;
        if let Some(index) = r0.values().iter().position(|&v| v >= 0.0) {
            return Err(Error::NonNegativeBackground {
                index,
                value: r0.values()[index],
            });
        }
        let grid = r0.grid().clone();
        let n = grid.dim() as f64;
        Ok(Self {
            grid,
            r0,
            f,
            c_n: 4.0 * (n - 1.0) / (n - 2.0),
            exponent: (n + 2.0) / (n - 2.0),
        })
    }

    /// Both `R_0` and `f` constant.
    pub fn constant(grid: Arc<GridSpec>, r0: f64, f: f64) -> Result<Self> {
        Self::new(
            ScalarField::constant(grid.clone(), r0)?,
            ScalarField::constant(grid, f)?,
        )
    }

    /// Same `R_0`, different prescribed curvature.
    pub fn with_f(&self, f: ScalarField) -> Result<Self> {
        Self::new(self.r0.clone(), f)
    }

    /// Same `f`, different background curvature.
    pub fn with_r0(&self, r0: ScalarField) -> Result<Self> {
        Self::new(r0, self.f.clone())
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn r0(&self) -> &ScalarField {
        &self.r0
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// `c_n = 4(n-1)/(n-2)`.
    pub fn c_n(&self) -> f64 {
        self.c_n
    }

    /// `N = (n+2)/(n-2)`.
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// `2n/(n-2) = N + 1`, the power of `u` in `dV_g`.
    pub fn volume_exponent(&self) -> f64 {
        self.exponent + 1.0
    }

    /// `(n-2)/4`, the rate in `∂_t u = -((n-2)/4)(R_g - f) u`.
    pub fn flow_rate(&self) -> f64 {
        (self.dim() as f64 - 2.0) / 4.0
    }

    pub(crate) fn ensure_grid(&self, w: &ScalarField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, w.grid()) || *self.grid == **w.grid() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

#[inline]
pub(crate) fn laplacian_at(grid: &GridSpec, inv_h2: &[f64], w: &[f64], j: usize) -> f64 {
    let wj = w[j];
    let mut acc = 0.0;
    for (axis, &c) in inv_h2.iter().enumerate() {
        let wf = w[grid.forward(j, axis)];
        let wb = w[grid.backward(j, axis)];
        acc += ((wf - wj) - (wj - wb)) * c;
    }
    acc
}

#[inline]
pub(crate) fn conformal_at(bg: &Background, inv_h2: &[f64], w: &[f64], j: usize) -> f64 {
    -bg.c_n * laplacian_at(&bg.grid, inv_h2, w, j) + bg.r0.values()[j] * w[j]
}

/// Periodic 2n+1 point Laplacian of `g_0`.
pub fn laplacian(w: &ScalarField) -> ScalarField {
    let grid = w.grid().clone();
    let inv_h2 = grid.inv_h2();
    let values = w.values();
    ScalarField::par_from_index(grid.clone(), |j| laplacian_at(&grid, &inv_h2, values, j))
}

/// `L w = -c_n Δw + R_0 w`.
pub fn conformal_op(bg: &Background, w: &ScalarField) -> Result<ScalarField> {
    bg.ensure_grid(w)?;
    let inv_h2 = bg.grid.inv_h2();
    let values = w.values();
    Ok(ScalarField::par_from_index(bg.grid.clone(), |j| {
        conformal_at(bg, &inv_h2, values, j)
    }))
}

/// `R_g = u^{-N} L u`.
pub fn scalar_curvature(bg: &Background, u: &ScalarField) -> Result<ScalarField> {
    bg.ensure_grid(u)?;
    u.check_positive()?;
    let inv_h2 = bg.grid.inv_h2();
    let uv = u.values();
    let e = bg.exponent;
    Ok(ScalarField::par_from_index(bg.grid.clone(), |j| {
        pow_real(uv[j], -e) * conformal_at(bg, &inv_h2, uv, j)
    }))
}

#[inline]
pub(crate) fn laplacian_g_at(
    grid: &GridSpec,
    inv_h2: &[f64],
    u: &[f64],
    w: &[f64],
    j: usize,
    volume_exponent: f64,
) -> f64 {
    let (uj, wj) = (u[j], w[j]);
    let mut acc = 0.0;
    for (axis, &c) in inv_h2.iter().enumerate() {
        let f = grid.forward(j, axis);
        let b = grid.backward(j, axis);
        acc += ((uj * u[f]) * (w[f] - wj) - (uj * u[b]) * (wj - w[b])) * c;
    }
    pow_real(uj, -volume_exponent) * acc
}

/// Laplacian of the conformal metric, `Δ_g w = u^{-2n/(n-2)} div(u² ∇w)`.
///
/// The face value of `u²` is `u_j u_{j+e}`. This keeps the operator
/// symmetric in `L²(dV_g)` and makes the semi-discrete evolution of `R_g`
/// reproduce `∂_t R_g = (n-1) Δ_g(R_g - f) + R_g (R_g - f)` term by term.
pub fn laplacian_g(bg: &Background, u: &ScalarField, w: &ScalarField) -> Result<ScalarField> {
    bg.ensure_grid(u)?;
    bg.ensure_grid(w)?;
    u.check_positive()?;
    let inv_h2 = bg.grid.inv_h2();
    let (uv, wv) = (u.values(), w.values());
    let ve = bg.volume_exponent();
    Ok(ScalarField::par_from_index(bg.grid.clone(), |j| {
        laplacian_g_at(&bg.grid, &inv_h2, uv, wv, j, ve)
    }))
}

/// Per-point `Σ_i ((w_{j+e_i} - w_j)/h_i)²`.
pub fn forward_gradient_sq(w: &ScalarField) -> ScalarField {
    let grid = w.grid().clone();
    let inv_h2 = grid.inv_h2();
    let wv = w.values();
    ScalarField::par_from_index(grid.clone(), |j| {
        let mut acc = 0.0;
        for (axis, &c) in inv_h2.iter().enumerate() {
            let d = wv[grid.forward(j, axis)] - wv[j];
            acc += d * d * c;
        }
        acc
    })
}

/// `∫ c_n|∇w|² + R_0 w² dV_{g_0}`, the numerator of the Rayleigh quotient.
pub fn dirichlet_form(bg: &Background, w: &ScalarField) -> Result<f64> {
    bg.ensure_grid(w)?;
    w.check_finite()?;
    let grad = forward_gradient_sq(w);
    let r0 = bg.r0.values();
    let sum = compensated_sum(
        grad.values()
            .iter()
            .zip(w.values())
            .zip(r0)
            .map(|((&g, &v), &r)| bg.c_n * g + r * v * v),
    );
    Ok(sum * bg.grid.cell_volume())
}

/// `E(u) = ∫ c_n|∇u|² + R_0 u² - ((n-2)/n) f u^{2n/(n-2)} dV_{g_0}`.
pub fn energy(bg: &Background, u: &ScalarField) -> Result<f64> {
    bg.ensure_grid(u)?;
    u.check_positive()?;
    let n = bg.dim() as f64;
    let weight = (n - 2.0) / n;
    let ve = bg.volume_exponent();
    let grad = forward_gradient_sq(u);
    let sum = compensated_sum((0..u.len()).map(|j| {
        let uj = u.values()[j];
        bg.c_n * grad.values()[j] + bg.r0.values()[j] * uj * uj
            - weight * bg.f.values()[j] * pow_real(uj, ve)
    }));
    Ok(sum * bg.grid.cell_volume())
}

/// Pointwise `L u - f u^N`; zero exactly where `u` solves the stationary equation.
pub fn stationary_defect(bg: &Background, u: &ScalarField) -> Result<ScalarField> {
    bg.ensure_grid(u)?;
    u.check_positive()?;
    let inv_h2 = bg.grid.inv_h2();
    let uv = u.values();
    let fv = bg.f.values();
    let e = bg.exponent;
    Ok(ScalarField::par_from_index(bg.grid.clone(), |j| {
        conformal_at(bg, &inv_h2, uv, j) - fv[j] * pow_real(uv[j], e)
    }))
}

/// `max |L u - f u^N|`.
pub fn stationary_residual(bg: &Background, u: &ScalarField) -> Result<f64> {
    Ok(stationary_defect(bg, u)?.max_abs())
}
