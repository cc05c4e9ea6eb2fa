//! Off-grid greedy super-resolution denoiser.
//!
//! Each row is modelled as a few spectral lines `Σ_k c_k a(f_k)` with
//! continuous frequencies. The greedy fit is discontinuous in its input, so
//! AMP uses a Monte Carlo smoothed version and estimates the summed Jacobian
//! with randomized one-entry probes.

mod greedy;
mod smoothing;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use greedy::{
    circular_distance, cost_gradient, cost_hessian, greedy_denoise, least_squares_prune, merge_duplicates,
    newton_refine, residual_cost, select_atom, wrap, GreedySolver, Peak, MERGE_TOL,
};
pub use smoothing::{mc_jacobian_sum, probe_draws, smoothed_eval, smoothing_direction};

use super::{Denoiser, Level, RowOutput};
use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    /// Selection grid has `grid_oversample · M` points.
    pub grid_oversample: usize,
    /// Newton iterations per refinement.
    pub newton_max_iters: usize,
    /// Stop refining when the Newton step norm falls below this.
    pub newton_tol: f64,
    /// Backtracking factor for the Newton step length.
    pub step_shrink: f64,
    /// Backtracking attempts per Newton iteration.
    pub max_halvings: usize,
    /// Maximum number of spectral lines per row.
    pub max_atoms: usize,
    /// Amplitude pruning threshold as a multiple of `λ`.
    pub prune_rel: f64,
    /// Stop once `‖r‖² ≤ res_tol_factor · M · σ²`.
    pub res_tol_factor: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            grid_oversample: 16,
            newton_max_iters: 15,
            newton_tol: 1e-8,
            step_shrink: 0.5,
            max_halvings: 10,
            max_atoms: 16,
            prune_rel: 1.0,
            res_tol_factor: 1.2,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.grid_oversample < 2 {
            return bad("grid_oversample must be >= 2");
        }
        if !(self.newton_tol > 0.0) {
            return bad("newton_tol must be positive");
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("step_shrink must lie in (0, 1)");
        }
        if self.max_atoms == 0 {
            return bad("max_atoms must be >= 1");
        }
        if !(self.prune_rel > 0.0) || !(self.res_tol_factor > 0.0) {
            return bad("prune_rel and res_tol_factor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Smoothing draws per evaluation.
    pub j1: usize,
    /// Probe draws per Jacobian column.
    pub j2: usize,
    /// Smoothing standard deviation as a multiple of `λ`.
    pub smooth_rel: f64,
    /// Probe step as a multiple of `λ`.
    pub fd_rel: f64,
    pub seed: u64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { j1: 2, j2: 1, smooth_rel: 0.1, fd_rel: 0.01, seed: 0 }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j1 == 0 || self.j2 == 0 {
            return Err(Error::Config("j1 and j2 must be >= 1".into()));
        }
        if !(self.smooth_rel >= 0.0) || !(self.fd_rel > 0.0) {
            return Err(Error::Config("smooth_rel must be >= 0 and fd_rel > 0".into()));
        }
        Ok(())
    }

    /// Smoothing standard deviation `r` at this level.
    pub fn radius(&self, level: Level) -> f64 {
        self.smooth_rel * level.lambda
    }

    /// Probe step `ε` at this level; falls back to the noise level (or a
    /// fixed small step) when the threshold is zero.
    pub fn probe_step(&self, level: Level) -> f64 {
        let base = if level.lambda > 0.0 {
            level.lambda
        } else if level.sigma > 0.0 {
            level.sigma
        } else {
            1e-4
        };
        self.fd_rel * base
    }
}

/// Working set of the greedy fit: lines, amplitudes, and the residual
/// `x̃ − Φ(f) c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<C64>,
    pub residual: Array1<C64>,
}

impl SpectralEstimate {
    pub fn empty(x: ArrayView1<C64>) -> Self {
        Self { frequencies: Vec::new(), amplitudes: Vec::new(), residual: x.to_owned() }
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// `Φ(f) c`.
    pub fn reconstruction(&self) -> Array1<C64> {
        let m = self.residual.len();
        let mut out = Array1::from_elem(m, ZERO);
        for (&f, &c) in self.frequencies.iter().zip(&self.amplitudes) {
            out.scaled_add(c, &crate::scenario::steering_unchecked(f, m));
        }
        out
    }
}

/// Smoothed greedy denoiser with a probe-estimated Jacobian.
#[derive(Debug, Clone)]
pub struct SrDenoiser {
    pub solver: GreedySolver,
    pub smoothing: SmoothingConfig,
}

/// One user's smoothed output and (optionally) Jacobian estimate.
struct UserTerms {
    estimate: Array1<C64>,
    jacobian: Option<Array2<C64>>,
}

impl SrDenoiser {
    pub fn new(m: usize, greedy: GreedyConfig, smoothing: SmoothingConfig) -> Result<Self> {
        smoothing.validate()?;
        Ok(Self { solver: GreedySolver::new(m, greedy)?, smoothing })
    }

    /// Unsmoothed greedy output.
    pub fn greedy(&self, x: ArrayView1<C64>, level: Level) -> Result<Array1<C64>> {
        Ok(self.solver.fit(x, level)?.reconstruction())
    }

    fn user_terms(&self, x: ArrayView1<C64>, level: Level, key: u64, with_jacobian: bool) -> Result<UserTerms> {
        let m = x.len();
        if m != self.solver.n_antennas() {
            return Err(Error::Dimension(format!("input length {m} != M = {}", self.solver.n_antennas())));
        }
        let s = &self.smoothing;
        let radius = s.radius(level);
        let j1 = if radius == 0.0 { 1 } else { s.j1 };
        let prune = self.solver.cfg.prune_rel * level.lambda;

        // base points, outputs, and correlation bounds
        let mut points = Vec::with_capacity(j1);
        let mut outputs = Vec::with_capacity(j1);
        let mut bounds = Vec::with_capacity(j1);
        for j in 0..j1 {
            let y = if radius == 0.0 {
                x.to_owned()
            } else {
                &x + &smoothing_direction(s.seed, key, j, m).mapv(|z| z * radius)
            };
            bounds.push(self.solver.correlation_bound(y.view()));
            outputs.push(self.greedy(y.view(), level)?);
            points.push(y);
        }
        let inv = C64::new(1.0 / j1 as f64, 0.0);
        let mut estimate = Array1::from_elem(m, ZERO);
        for o in &outputs {
            estimate += o;
        }
        estimate *= inv;
        if !with_jacobian {
            return Ok(UserTerms { estimate, jacobian: None });
        }

        let eps = s.probe_step(level);
        let draws = probe_draws(s.seed, key, m, s.j2);
        let mut jac = Array2::from_elem((m, m), ZERO);
        let shift = 1.0 / (m as f64).sqrt();
        for col in 0..m {
            for k in 0..s.j2 {
                let d = draws[col * s.j2 + k];
                let mut diff = Array1::from_elem(m, ZERO);
                let mut touched = false;
                for j in 0..j1 {
                    // a one-entry perturbation moves every correlation by at
                    // most ε|d|/√M, so a point provably below the pruning
                    // threshold stays at the zero output
                    if bounds[j] + eps * d.norm() * shift < prune {
                        continue;
                    }
                    let mut y = points[j].clone();
                    y[col] += d * eps;
                    diff += &(self.greedy(y.view(), level)? - &outputs[j]);
                    touched = true;
                }
                if touched {
                    let w = d.conj() * inv / (eps * s.j2 as f64);
                    jac.index_axis_mut(Axis(1), col).scaled_add(w, &diff);
                }
            }
        }
        Ok(UserTerms { estimate, jacobian: Some(jac) })
    }
}

impl Denoiser for SrDenoiser {
    fn name(&self) -> &'static str {
        "samp"
    }

    fn denoise(&self, x: ArrayView1<C64>, level: Level, key: u64) -> Result<Array1<C64>> {
        Ok(self.user_terms(x, level, key, false)?.estimate)
    }

    fn jacobian(&self, x: ArrayView1<C64>, level: Level, key: u64) -> Result<Array2<C64>> {
        Ok(self.user_terms(x, level, key, true)?.jacobian.expect("requested"))
    }

    fn denoise_rows(&self, inputs: ArrayView2<C64>, level: Level) -> Result<RowOutput> {
        let (n, m) = inputs.dim();
        let parts = par::try_map_indexed(n, |i| self.user_terms(inputs.row(i), level, i as u64, true))?;
        let mut estimate = Array2::from_elem((n, m), ZERO);
        let mut jacobian_sum = Array2::from_elem((m, m), ZERO);
        for (i, t) in parts.into_iter().enumerate() {
            estimate.row_mut(i).assign(&t.estimate);
            jacobian_sum += &t.jacobian.expect("requested");
        }
        Ok(RowOutput { estimate, jacobian_sum })
    }
}
