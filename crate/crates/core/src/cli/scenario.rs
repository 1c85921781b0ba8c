//! Scenario files: TOML with `[grid]`, `[r0]`, `[f]`, `[u0]`, `[flow]`,
//! `[diagnostics]` and `[hypothesis]` sections.
//!
//! ```toml
//! name = "trapped-bump"
//! seed = 7
//! output = "out/trapped"
//!
//! [grid]
//! n = 3
//! sizes = [16, 16, 16]
//! lengths = [4.0, 4.0, 4.0]
//!
//! [r0]
//! constant = -1.0
//!
//! [f]
//! base = -1.0
//! bumps = [{ center = [2.0, 2.0, 2.0], width = 0.35, amplitude = 1.02 }]
//!
//! [u0]
//! supersolution = 0.5
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cli::snapshot::read_snapshot;
use crate::error::{Error, Result};
use crate::flow::{default_lp_orders, FlowConfig};
use crate::grid::{GridSpec, ScalarField};
use crate::hypothesis::{build_supersolution, superlevel_mask, EIGEN_TOL};
use crate::operators::Background;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

/// One way of realizing a field on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant {
        constant: f64,
    },
    /// `base + Σ amplitude·exp(-|x - center|²/(2 width²))`, distances taken on the torus,
    /// plus optional seeded uniform noise in `[-jitter, jitter]`.
    Bumps {
        base: f64,
        #[serde(default)]
        bumps: Vec<Bump>,
        #[serde(default)]
        jitter: f64,
    },
    /// A stored field, optionally multiplied by `scale`.
    Snapshot {
        snapshot: PathBuf,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale · ū` for the certified supersolution of the scenario (initial data only).
    Supersolution {
        supersolution: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub sizes: Vec<usize>,
    pub lengths: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub cfl_fraction: f64,
    pub t_max: f64,
    pub residual_stop: f64,
    pub blowup_ceiling: f64,
    pub record_every: u64,
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            cfl_fraction: d.cfl_fraction,
            t_max: d.t_max,
            residual_stop: d.residual_stop,
            blowup_ceiling: d.blowup_ceiling,
            record_every: d.record_every,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub decay_threshold: f64,
    pub dissipation_tol: f64,
    /// Lower bound asserted on the growth exponent of blow-up runs.
    pub growth_min: Option<f64>,
    /// Also check `u ≤ max ū` against the certified supersolution.
    pub check_trap: bool,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            decay_threshold: 1e-8,
            dissipation_tol: 1e-2,
            growth_min: None,
            check_trap: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesisSection {
    /// `Ω = {f > -eps}`.
    pub eps: f64,
    pub dilation: usize,
    pub band: usize,
    pub eigen_tol: f64,
}

impl Default for HypothesisSection {
    fn default() -> Self {
        Self {
            eps: 0.5,
            dilation: 2,
            band: 2,
            eigen_tol: EIGEN_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub grid: GridSection,
    pub r0: FieldSpec,
    pub f: FieldSpec,
    pub u0: FieldSpec,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub hypothesis: HypothesisSection,
}

/// A validated scenario with every field realized on its grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub output: PathBuf,
    pub background: Background,
    pub u0: ScalarField,
    pub flow: FlowConfig,
    pub diagnostics: DiagnosticsSection,
    pub hypothesis: HypothesisSection,
}

fn scenario_err(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

fn periodic_sq_dist(x: &[f64], c: &[f64], lengths: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .zip(lengths)
        .map(|((&xi, &ci), &l)| {
            let d = (xi - ci).rem_euclid(l);
            let d = d.min(l - d);
            d * d
        })
        .sum()
}

fn realize(
    name: &str,
    spec: &FieldSpec,
    grid: &Arc<GridSpec>,
    base_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<ScalarField> {
    match spec {
        FieldSpec::Constant { constant } => ScalarField::constant(grid.clone(), *constant),
        FieldSpec::Bumps {
            base,
            bumps,
            jitter,
        } => {
            for (k, b) in bumps.iter().enumerate() {
                if b.center.len() != grid.dim() {
                    return Err(scenario_err(format!(
                        "{name}.bumps[{k}].center has {} coordinates, grid has dimension {}",
                        b.center.len(),
                        grid.dim()
                    )));
                }
                if !(b.width > 0.0) {
                    return Err(scenario_err(format!("{name}.bumps[{k}].width must be positive")));
                }
            }
            if !(*jitter >= 0.0) {
                return Err(scenario_err(format!("{name}.jitter must be nonnegative")));
            }
            let lengths = grid.lengths().to_vec();
            let mut field = ScalarField::from_fn(grid.clone(), |x| {
                base + bumps
                    .iter()
                    .map(|b| {
                        let r2 = periodic_sq_dist(x, &b.center, &lengths);
                        b.amplitude * (-r2 / (2.0 * b.width * b.width)).exp()
                    })
                    .sum::<f64>()
            })?;
            if *jitter > 0.0 {
                let noise: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-*jitter..=*jitter)).collect();
                field = ScalarField::new(grid.clone(), noise)?.zip_map(&field, |a, b| a + b)?;
            }
            Ok(field)
        }
        FieldSpec::Snapshot { snapshot, scale } => {
            let path = base_dir.join(snapshot);
            let field = read_snapshot(&path)?;
            if **field.grid() != **grid {
                return Err(scenario_err(format!(
                    "{name}: snapshot {} lives on a different grid",
                    path.display()
                )));
            }
            let field = ScalarField::new(grid.clone(), field.into_values())?;
            Ok(if *scale == 1.0 { field } else { field.scale(*scale) })
        }
        FieldSpec::Supersolution { .. } => Err(scenario_err(format!(
            "{name}: a supersolution spec is only allowed for u0"
        ))),
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| scenario_err(e.to_string()))
    }

    /// Realizes and validates every field; relative paths resolve against `base_dir`.
    pub fn realize(&self, base_dir: &Path) -> Result<Scenario> {
        let g = &self.grid;
        if g.sizes.len() != g.n || g.lengths.len() != g.n {
            return Err(scenario_err(format!(
                "grid.n = {} but {} sizes and {} lengths given",
                g.n,
                g.sizes.len(),
                g.lengths.len()
            )));
        }
        let grid = Arc::new(GridSpec::new(g.sizes.clone(), g.lengths.clone())?);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let r0 = realize("r0", &self.r0, &grid, base_dir, &mut rng)?;
        if let Some(i) = r0.values().iter().position(|&v| !(v < 0.0)) {
            return Err(scenario_err(format!(
                "R0 not negative at index {i} (value {})",
                r0.values()[i]
            )));
        }
        let f = realize("f", &self.f, &grid, base_dir, &mut rng)?;
        let background = Background::new(r0, f)?;
        let h = &self.hypothesis;
        let u0 = match &self.u0 {
            FieldSpec::Supersolution { supersolution } => {
                let omega = superlevel_mask(&background, h.eps)?;
                build_supersolution(&background, &omega, h.dilation, h.band)?
                    .ubar
                    .scale(*supersolution)
            }
            spec => realize("u0", spec, &grid, base_dir, &mut rng)?,
        };
        if let Some(i) = u0.values().iter().position(|&v| !(v > 0.0)) {
            return Err(scenario_err(format!(
                "u0 not positive at index {i} (value {})",
                u0.values()[i]
            )));
        }
        let fl = &self.flow;
        let flow = FlowConfig {
            cfl_fraction: fl.cfl_fraction,
            t_max: fl.t_max,
            residual_stop: fl.residual_stop,
            blowup_ceiling: fl.blowup_ceiling,
            record_every: fl.record_every,
            lp_orders: default_lp_orders(g.n),
        };
        flow.validate()?;
        let output = base_dir.join(
            self.output
                .clone()
                .unwrap_or_else(|| PathBuf::from("out").join(&self.name)),
        );
        Ok(Scenario {
            name: self.name.clone(),
            seed: self.seed,
            output,
            background,
            u0,
            flow,
            diagnostics: self.diagnostics.clone(),
            hypothesis: self.hypothesis.clone(),
        })
    }
}

/// Reads, realizes and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| scenario_err(format!("{}: {e}", path.display())))?;
    let file = ScenarioFile::parse(&text)
        .map_err(|e| scenario_err(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    file.realize(base)
}
