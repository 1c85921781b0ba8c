//! Periodic structured grids, grid functions and masks.
//!
//! A [`GridSpec`] discretizes the flat torus `∏ [0, L_i)` with `sizes[i]`
//! points per axis, point `j` sitting at `x = j * h`. Values are stored
//! row-major (last axis fastest). Every integral is a cell sum with the
//! cell volume `∏ h_i`, accumulated in index order with compensated
//! summation so results do not depend on how pointwise work was scheduled.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Minimum number of points handed to one rayon task.
pub(crate) const PAR_MIN_LEN: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    sizes: Vec<usize>,
    lengths: Vec<f64>,
    spacings: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl GridSpec {
    pub fn new(sizes: Vec<usize>, lengths: Vec<f64>) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be at least 3, got {}",
                sizes.len()
            )));
        }
        if lengths.len() != sizes.len() {
            return Err(Error::InvalidGrid(format!(
                "{} sizes but {} lengths",
                sizes.len(),
                lengths.len()
            )));
        }
        if let Some(s) = sizes.iter().find(|&&s| s < 4) {
            return Err(Error::InvalidGrid(format!("axis size {s} is below 4")));
        }
        if let Some(l) = lengths.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidGrid(format!("axis length {l} is not positive")));
        }
        let spacings = sizes
            .iter()
            .zip(&lengths)
            .map(|(&s, &l)| l / s as f64)
            .collect();
        let mut strides = vec![1usize; sizes.len()];
        for axis in (0..sizes.len() - 1).rev() {
            strides[axis] = strides[axis + 1] * sizes[axis + 1];
        }
        let len = sizes.iter().product();
        Ok(Self {
            sizes,
            lengths,
            spacings,
            strides,
            len,
        })
    }

    /// `n`-dimensional cube with `size` points and period `length` per axis.
    pub fn cube(n: usize, size: usize, length: f64) -> Result<Self> {
        Self::new(vec![size; n], vec![length; n])
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Background volume element of one cell, `∏ h_i`.
    pub fn cell_volume(&self) -> f64 {
        self.spacings.iter().product()
    }

    pub fn total_volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        self.sizes
            .iter()
            .zip(&self.strides)
            .map(|(&s, &st)| (index / st) % s)
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.strides)
            .zip(&self.sizes)
            .map(|((&c, &st), &s)| (c % s) * st)
            .sum()
    }

    pub fn position(&self, index: usize) -> Vec<f64> {
        self.coords(index)
            .iter()
            .zip(&self.spacings)
            .map(|(&c, &h)| c as f64 * h)
            .collect()
    }

    /// Periodic neighbour of `index` one step forward (`+e_axis`).
    #[inline]
    pub fn forward(&self, index: usize, axis: usize) -> usize {
        let stride = self.strides[axis];
        let size = self.sizes[axis];
        if (index / stride) % size == size - 1 {
            index + stride - size * stride
        } else {
            index + stride
        }
    }

    /// Periodic neighbour of `index` one step backward (`-e_axis`).
    #[inline]
    pub fn backward(&self, index: usize, axis: usize) -> usize {
        let stride = self.strides[axis];
        let size = self.sizes[axis];
        if (index / stride) % size == 0 {
            index + size * stride - stride
        } else {
            index - stride
        }
    }

    pub(crate) fn inv_h2(&self) -> Vec<f64> {
        self.spacings.iter().map(|h| 1.0 / (h * h)).collect()
    }
}

/// Neumaier-compensated sum in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_positive(values: &[f64]) -> Result<()> {
    match values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(index) => Err(Error::Positivity {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// One real value per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<GridSpec>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<GridSpec>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    /// Skips the finiteness scan; callers validate where it matters.
    pub(crate) fn from_raw(grid: Arc<GridSpec>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Arc<GridSpec>, value: f64) -> Result<Self> {
        let len = grid.len();
        Self::new(grid, vec![value; len])
    }

    pub fn zeros(grid: Arc<GridSpec>) -> Self {
        let len = grid.len();
        Self::from_raw(grid, vec![0.0; len])
    }

    /// Evaluates `f` at every grid position.
    pub fn from_fn(grid: Arc<GridSpec>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.position(i))).collect();
        Self::new(grid, values)
    }

    /// Pointwise evaluation by index, spread over the rayon pool.
    pub(crate) fn par_from_index(
        grid: Arc<GridSpec>,
        f: impl Fn(usize) -> f64 + Sync + Send,
    ) -> Self {
        let mut values = vec![0.0; grid.len()];
        values
            .par_iter_mut()
            .with_min_len(PAR_MIN_LEN)
            .enumerate()
            .for_each(|(i, v)| *v = f(i));
        Self::from_raw(grid, values)
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn ensure_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_grid(other)?;
        Ok(Self::from_raw(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the first non-positive (or non-finite) value, if any.
    pub fn check_positive(&self) -> Result<()> {
        check_positive(&self.values)
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.values)
    }
}

/// `∫_M w dV_{g_0}` as a compensated cell sum.
pub fn integrate(w: &ScalarField) -> Result<f64> {
    w.check_finite()?;
    Ok(compensated_sum(w.values.iter().copied()) * w.grid.cell_volume())
}

/// `(∫ |w|^p weight dV_{g_0})^{1/p}`.
pub fn lp_norm(w: &ScalarField, weight: &ScalarField, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("lp order {p} is below 1")));
    }
    w.ensure_same_grid(weight)?;
    w.check_finite()?;
    weight.check_finite()?;
    if let Some(index) = weight.values.iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "negative weight {} at index {index}",
            weight.values[index]
        )));
    }
    let sum = compensated_sum(
        w.values
            .iter()
            .zip(&weight.values)
            .map(|(&a, &b)| a.abs().powf(p) * b),
    );
    Ok((sum * w.grid.cell_volume()).powf(1.0 / p))
}

/// Boolean selection of grid points; a point is inside iff flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainMask {
    grid: Arc<GridSpec>,
    inside: Vec<bool>,
}

impl SubdomainMask {
    pub fn new(grid: Arc<GridSpec>, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: inside.len(),
            });
        }
        Ok(Self { grid, inside })
    }

    pub fn empty(grid: Arc<GridSpec>) -> Self {
        let len = grid.len();
        Self {
            grid,
            inside: vec![false; len],
        }
    }

    pub fn full(grid: Arc<GridSpec>) -> Self {
        let len = grid.len();
        Self {
            grid,
            inside: vec![true; len],
        }
    }

    pub fn from_predicate(grid: Arc<GridSpec>, pred: impl Fn(usize) -> bool) -> Self {
        let inside = (0..grid.len()).map(pred).collect();
        Self { grid, inside }
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn contains(&self, index: usize) -> bool {
        self.inside[index]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.inside.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.inside.iter().all(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.inside
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn complement(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            inside: self.inside.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &SubdomainMask) -> bool {
        self.inside
            .iter()
            .zip(&other.inside)
            .all(|(&a, &b)| !a || b)
    }

    /// Outside points adjacent (along an axis) to an inside point.
    pub fn boundary(&self) -> Self {
        let g = &self.grid;
        Self::from_predicate(g.clone(), |i| {
            !self.inside[i]
                && (0..g.dim()).any(|a| self.inside[g.forward(i, a)] || self.inside[g.backward(i, a)])
        })
    }

    /// Grows the mask by `r` cells in Chebyshev distance, wrapping periodically.
    pub fn dilate(&self, r: usize) -> Self {
        if r == 0 {
            return self.clone();
        }
        let g = &self.grid;
        let mut current = self.inside.clone();
        // the Chebyshev ball is a product of intervals, so dilate one axis at a time
        for axis in 0..g.dim() {
            let reach = r.min(g.sizes()[axis] / 2);
            let mut next = current.clone();
            for (i, flag) in next.iter_mut().enumerate() {
                if *flag {
                    continue;
                }
                let (mut fwd, mut bwd) = (i, i);
                for _ in 0..reach {
                    fwd = g.forward(fwd, axis);
                    bwd = g.backward(bwd, axis);
                    if current[fwd] || current[bwd] {
                        *flag = true;
                        break;
                    }
                }
            }
            current = next;
        }
        Self {
            grid: self.grid.clone(),
            inside: current,
        }
    }

    /// Indicator field of the mask.
    pub fn indicator(&self) -> ScalarField {
        ScalarField::from_raw(
            self.grid.clone(),
            self.inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }
}

/// Free-standing form of [`SubdomainMask::dilate`].
pub fn dilate(mask: &SubdomainMask, r: usize) -> SubdomainMask {
    mask.dilate(r)
}
