//! Jump diffusion paths on a uniform grid.
//!
//! The state follows
//!
//! ```text
//! dX_t = b(X_t) dt + σ(X_t) dB_t + γ(X_{t-}) d𝔷_t,   𝔷_t = Z_t - 𝔠_ζ λ t,
//! ```
//!
//! with `Z` a compound Poisson process of intensity `λ`. The Euler recursion
//! aggregates all jumps falling in `(t_l, t_{l+1}]` into one increment and
//! subtracts the compensator `𝔠_ζ λ Δ` deterministically at every step.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::path_stream;

pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Distribution of the jump sizes `ζ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum JumpLaw {
    Normal { mean: f64, std_dev: f64 },
    /// Every jump has the same size.
    Constant { size: f64 },
}

impl JumpLaw {
    pub const STANDARD_NORMAL: JumpLaw = JumpLaw::Normal {
        mean: 0.0,
        std_dev: 1.0,
    };

    /// `𝔠_ζ = E ζ`
    pub fn first_moment(&self) -> f64 {
        match *self {
            JumpLaw::Normal { mean, .. } => mean,
            JumpLaw::Constant { size } => size,
        }
    }

    /// `𝔠_{ζ²} = E ζ²`
    pub fn second_moment(&self) -> f64 {
        match *self {
            JumpLaw::Normal { mean, std_dev } => mean * mean + std_dev * std_dev,
            JumpLaw::Constant { size } => size * size,
        }
    }

    /// `𝔠_{ζ⁴} = E ζ⁴`
    pub fn fourth_moment(&self) -> f64 {
        match *self {
            JumpLaw::Normal { mean, std_dev } => {
                let (m2, s2) = (mean * mean, std_dev * std_dev);
                m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2
            }
            JumpLaw::Constant { size } => size.powi(4),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            JumpLaw::Normal { mean, std_dev } if mean.is_finite() && std_dev.is_finite() && std_dev >= 0.0 => Ok(()),
            JumpLaw::Constant { size } if size.is_finite() => Ok(()),
            _ => Err(Error::param(format!("invalid jump law {self:?}"))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpLaw::Normal { mean, std_dev } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std_dev * z
            }
            JumpLaw::Constant { size } => size,
        }
    }
}

/// Jump epochs and sizes of one compound Poisson trajectory on `(0, T]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpTrain {
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
}

impl JumpTrain {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sum of jump sizes in each grid interval `(t_l, t_{l+1}]`.
    pub fn aggregate(&self, grid: &TimeGrid) -> Vec<f64> {
        let mut out = vec![0.0; grid.steps];
        let dt = grid.dt();
        for (&t, &z) in self.times.iter().zip(&self.sizes) {
            // Epoch t lies in (t_l, t_{l+1}] for l = ⌈t/Δ⌉ - 1.
            let l = ((t / dt).ceil() as usize).saturating_sub(1).min(grid.steps - 1);
            out[l] += z;
        }
        out
    }
}

/// Samples a compound Poisson jump train with intensity `intensity` on `(0, horizon]`.
pub fn sample_compound_poisson<R: Rng + ?Sized>(
    intensity: f64,
    horizon: f64,
    law: &JumpLaw,
    rng: &mut R,
) -> Result<JumpTrain> {
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return Err(Error::param(format!("jump intensity must be >= 0, got {intensity}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::param(format!("horizon must be > 0, got {horizon}")));
    }
    law.validate()?;
    let mean = intensity * horizon;
    if mean == 0.0 {
        return Ok(JumpTrain::default());
    }
    let poisson = Poisson::new(mean).map_err(|e| Error::param(format!("poisson({mean}): {e}")))?;
    let count = poisson.sample(rng) as usize;
    // Uniform on (0, T]: 1 - U with U in [0, 1).
    let mut times: Vec<f64> = (0..count)
        .map(|_| horizon * (1.0 - rng.random::<f64>()))
        .collect();
    times.sort_by(f64::total_cmp);
    let sizes = (0..count).map(|_| law.sample(rng)).collect();
    Ok(JumpTrain { times, sizes })
}

/// Uniform grid `t_l = l T / n`, `l = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        let g = Self { horizon, steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.steps == 0 {
            return Err(Error::param("grid needs at least one step"));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn node(&self, l: usize) -> f64 {
        l as f64 * self.horizon / self.steps as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|l| self.node(l))
    }
}

/// Coefficients and jump law of a scalar jump diffusion.
#[derive(Clone)]
pub struct SdeModel {
    pub name: String,
    pub builtin_id: Option<u8>,
    pub drift: Coefficient,
    pub diffusion: Coefficient,
    pub jump_coef: Coefficient,
    pub x0: f64,
    pub intensity: f64,
    pub jump_law: JumpLaw,
    /// `‖σ‖_∞` when known.
    pub diffusion_sup: Option<f64>,
    /// `‖γ‖_∞` when known.
    pub jump_coef_sup: Option<f64>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("builtin_id", &self.builtin_id)
            .field("x0", &self.x0)
            .field("intensity", &self.intensity)
            .field("jump_law", &self.jump_law)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    pub fn new(
        name: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64) -> f64 + Send + Sync + 'static,
        jump_coef: impl Fn(f64) -> f64 + Send + Sync + 'static,
        x0: f64,
    ) -> Self {
        Self {
            name: name.into(),
            builtin_id: None,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            jump_coef: Arc::new(jump_coef),
            x0,
            intensity: 0.0,
            jump_law: JumpLaw::STANDARD_NORMAL,
            diffusion_sup: None,
            jump_coef_sup: None,
        }
    }

    pub fn with_jumps(mut self, intensity: f64, jump_law: JumpLaw) -> Self {
        self.intensity = intensity;
        self.jump_law = jump_law;
        self
    }

    pub fn with_sup_norms(mut self, diffusion_sup: f64, jump_coef_sup: f64) -> Self {
        self.diffusion_sup = Some(diffusion_sup);
        self.jump_coef_sup = Some(jump_coef_sup);
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x0.is_finite() {
            return Err(Error::param("initial state must be finite"));
        }
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return Err(Error::param(format!("jump intensity must be >= 0, got {}", self.intensity)));
        }
        self.jump_law.validate()
    }

    /// Noise level `‖σ‖²_∞ + λ 𝔠_{ζ²} ‖γ‖²_∞`, when both sup norms are known.
    pub fn noise_bound(&self) -> Option<f64> {
        let s = self.diffusion_sup?;
        let g = self.jump_coef_sup?;
        Some(s * s + self.intensity * self.jump_law.second_moment() * g * g)
    }
}

/// Returns one of the three reference models.
///
/// All use `x0 = 0.5`, `λ = 0.5`, standard normal jumps and `γ ≡ 1`:
/// 1. `b(x) = -x`, `σ ≡ 0.5`
/// 2. `b(x) = 0.5 √(1 + x²)`, `σ ≡ 0.5`
/// 3. `b(x) = 0.5 √(1 + x²)`, `σ(x) = 0.5 (1 + cos² x)`
pub fn builtin_model(id: u8) -> Result<SdeModel> {
    let model = match id {
        1 => SdeModel::new("model-1 (linear/additive)", |x| -x, |_| 0.5, |_| 1.0, 0.5).with_sup_norms(0.5, 1.0),
        2 => SdeModel::new(
            "model-2 (nonlinear/additive)",
            |x| 0.5 * (1.0 + x * x).sqrt(),
            |_| 0.5,
            |_| 1.0,
            0.5,
        )
        .with_sup_norms(0.5, 1.0),
        3 => SdeModel::new(
            "model-3 (nonlinear/multiplicative)",
            |x| 0.5 * (1.0 + x * x).sqrt(),
            |x| {
                let c = x.cos();
                0.5 * (1.0 + c * c)
            },
            |_| 1.0,
            0.5,
        )
        .with_sup_norms(1.0, 1.0),
        _ => return Err(Error::param(format!("unknown model id {id}; expected 1, 2 or 3"))),
    };
    Ok(SdeModel {
        builtin_id: Some(id),
        ..model.with_jumps(0.5, JumpLaw::STANDARD_NORMAL)
    })
}

/// One trajectory sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub values: Vec<f64>,
    pub jump_count: usize,
}

/// Simulates one path, drawing the jump train first and then the Gaussian increments.
pub fn simulate_path<R: Rng + ?Sized>(model: &SdeModel, grid: &TimeGrid, rng: &mut R) -> Result<Path> {
    model.validate()?;
    grid.validate()?;
    let jumps = sample_compound_poisson(model.intensity, grid.horizon, &model.jump_law, rng)?;
    let jump_increments = jumps.aggregate(grid);
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let compensator = model.jump_law.first_moment() * model.intensity * dt;

    let mut values = Vec::with_capacity(grid.steps + 1);
    let mut x = model.x0;
    values.push(x);
    for (l, dz) in jump_increments.iter().enumerate() {
        let xi: f64 = StandardNormal.sample(rng);
        x += (model.drift)(x) * dt + (model.diffusion)(x) * sqrt_dt * xi + (model.jump_coef)(x) * (dz - compensator);
        if !x.is_finite() {
            return Err(Error::SimulationDiverged { path: None, step: l + 1 });
        }
        values.push(x);
    }
    Ok(Path {
        values,
        jump_count: jumps.len(),
    })
}

/// `N` independent paths stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: TimeGrid,
    seed: u64,
    n_paths: usize,
    values: Vec<f64>,
    jump_counts: Option<Vec<usize>>,
}

impl PathBundle {
    /// Assembles a bundle from raw paths, each of length `grid.steps + 1`.
    pub fn from_paths(grid: TimeGrid, seed: u64, paths: Vec<Vec<f64>>) -> Result<Self> {
        grid.validate()?;
        if paths.is_empty() {
            return Err(Error::param("a bundle needs at least one path"));
        }
        let width = grid.steps + 1;
        if let Some(i) = paths.iter().position(|p| p.len() != width) {
            return Err(Error::param(format!(
                "path {i} has {} values, expected {width}",
                paths[i].len()
            )));
        }
        Ok(Self {
            grid,
            seed,
            n_paths: paths.len(),
            values: paths.concat(),
            jump_counts: None,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.grid.steps + 1;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn paths(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.grid.steps + 1)
    }

    /// Per-path jump counts, known only for freshly simulated bundles.
    pub fn jump_counts(&self) -> Option<&[usize]> {
        self.jump_counts.as_deref()
    }

    /// `N T`
    pub fn total_time(&self) -> f64 {
        self.n_paths as f64 * self.grid.horizon
    }

    /// Bundle with paths subsampled to every `factor`-th grid node.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.grid.steps.is_multiple_of(factor) {
            return Err(Error::param(format!(
                "subsampling factor {factor} must divide the step count {}",
                self.grid.steps
            )));
        }
        let grid = TimeGrid::new(self.grid.horizon, self.grid.steps / factor)?;
        let paths = self.paths().map(|p| p.iter().step_by(factor).copied().collect()).collect();
        let mut out = Self::from_paths(grid, self.seed, paths)?;
        out.jump_counts = self.jump_counts.clone();
        Ok(out)
    }
}

/// Simulates `n_paths` independent paths; path `i` uses stream `i` of `seed`.
///
/// The output does not depend on the size of the rayon pool.
pub fn simulate_bundle(model: &SdeModel, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::param("number of paths must be >= 1"));
    }
    model.validate()?;
    grid.validate()?;
    let paths: Vec<Path> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_stream(seed, i as u64);
            simulate_path(model, grid, &mut rng).map_err(|e| match e {
                Error::SimulationDiverged { step, .. } => Error::SimulationDiverged { path: Some(i), step },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let jump_counts = paths.iter().map(|p| p.jump_count).collect();
    let mut bundle = PathBundle::from_paths(*grid, seed, paths.into_iter().map(|p| p.values).collect())?;
    bundle.jump_counts = Some(jump_counts);
    Ok(bundle)
}
