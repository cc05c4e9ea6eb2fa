//! Vector AMP with a pluggable row denoiser.
//!
//! Starting from `X⁰ = 0`, `R⁰ = Y`, each iteration forms the matched-filter
//! rows `X̃ = U^H R + X`, denoises them at threshold `λ_t = τ σ_t` (times the
//! denoiser's threshold scale), and updates the residual with the Onsager
//! correction `(1/Q) R (Σ_n ∂η/∂x̃_n)^T`. The transpose appears because rows
//! of `R` are indexed by pilot symbol and columns by antenna, while the
//! Jacobian acts on column vectors of antenna values.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::denoise::{Denoiser, Level};
use crate::error::{Error, Result};
use crate::linalg::{frob_norm, hermitian_t, is_finite, C64, ZERO};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpConfig {
    /// Threshold multiplier `τ` in `λ_t = τ σ_t`.
    pub tau: f64,
    pub max_iters: usize,
    /// Stop when `‖X^{t+1} − X^t‖_F / ‖X^t‖_F` falls below this.
    pub conv_tol: f64,
    /// Abort when `σ_t` exceeds this multiple of `σ_0`.
    pub divergence_factor: f64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self { tau: 3.0, max_iters: 30, conv_tol: 1e-6, divergence_factor: 10.0 }
    }
}

impl AmpConfig {
    pub fn with_tau(tau: f64) -> Self {
        Self { tau, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.conv_tol > 0.0) {
            return Err(Error::Config("conv_tol must be positive".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// State after an iteration: estimate `X^t`, residual `R^t`, and the noise
/// level `σ_t = ‖R^t‖_F / √(MQ)` of that residual.
#[derive(Debug, Clone)]
pub struct AmpState {
    pub estimate: Array2<C64>,
    pub residual: Array2<C64>,
    pub iter: usize,
    pub sigma: f64,
    /// `‖X^t − X‖_F / ‖X‖_F` for `t = 0, 1, …` when a nonzero truth is known.
    pub nmse_history: Vec<f64>,
}

/// Per-iteration diagnostics; iteration `t` (from 1) maps `X^{t−1}` to `X^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `σ_{t−1}` used for the threshold.
    pub sigma: f64,
    pub lambda: f64,
    pub rel_change: f64,
    pub nmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AmpRun {
    pub state: AmpState,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
}

impl AmpRun {
    pub fn estimate(&self) -> &Array2<C64> {
        &self.state.estimate
    }

    pub fn iterations(&self) -> usize {
        self.state.iter
    }
}

/// `x̃_n = (U^H R)_n + x_n` for a single user: `R^T ū_n + x_n`.
pub fn matched_filter(r: ArrayView2<C64>, u_n: ArrayView1<C64>, x_n: ArrayView1<C64>) -> Result<Array1<C64>> {
    let (q, m) = r.dim();
    if u_n.len() != q || x_n.len() != m {
        return Err(Error::Dimension(format!(
            "matched filter: R is {q}×{m}, u_n has {}, x_n has {}",
            u_n.len(),
            x_n.len()
        )));
    }
    let mut out = x_n.to_owned();
    for (row, u) in r.rows().into_iter().zip(u_n.iter()) {
        out.scaled_add(u.conj(), &row);
    }
    Ok(out)
}

/// `X̃ = U^H R + X` for all users, with `U^H` precomputed.
pub fn matched_filter_all(u_h: ArrayView2<C64>, r: ArrayView2<C64>, x: ArrayView2<C64>) -> Result<Array2<C64>> {
    if u_h.ncols() != r.nrows() || u_h.nrows() != x.nrows() || r.ncols() != x.ncols() {
        return Err(Error::Dimension("matched filter: incompatible shapes".into()));
    }
    Ok(u_h.dot(&r) + &x)
}

/// `U X`, skipping all-zero rows of `X` when that saves work.
pub fn sparse_product(u: ArrayView2<C64>, x: ArrayView2<C64>) -> Array2<C64> {
    let rows: Vec<usize> = x
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|z| *z != ZERO))
        .map(|(i, _)| i)
        .collect();
    if rows.len() * 2 > x.nrows() {
        return u.dot(&x);
    }
    let uk = u.select(Axis(1), &rows);
    let xk = x.select(Axis(0), &rows);
    uk.dot(&xk)
}

/// `Y − U X_next + (1/Q) R_prev · jac_sum^T`.
pub fn onsager_residual(
    y: ArrayView2<C64>,
    u: ArrayView2<C64>,
    x_next: ArrayView2<C64>,
    r_prev: ArrayView2<C64>,
    jac_sum: ArrayView2<C64>,
) -> Result<Array2<C64>> {
    let (q, m) = y.dim();
    let n = u.ncols();
    if u.nrows() != q || x_next.dim() != (n, m) || r_prev.dim() != (q, m) || jac_sum.dim() != (m, m) {
        return Err(Error::Dimension("onsager residual: incompatible shapes".into()));
    }
    let mut r = y.to_owned() - sparse_product(u, x_next);
    let corr = r_prev.dot(&jac_sum.t());
    r.scaled_add(C64::new(1.0 / q as f64, 0.0), &corr);
    Ok(r)
}

fn relative_change(prev: ArrayView2<C64>, next: ArrayView2<C64>) -> f64 {
    let base = frob_norm(prev);
    let diff = prev.iter().zip(next.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    if base == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / base
    }
}

/// Runs AMP on a scenario, tracking NMSE against its truth.
pub fn run_amp(scenario: &Scenario, cfg: &AmpConfig, denoiser: &dyn Denoiser) -> Result<AmpRun> {
    run_amp_on(scenario.observation.view(), scenario.pilots.view(), Some(scenario.truth.view()), cfg, denoiser)
}

/// Runs AMP on raw data. `truth`, when given and nonzero, populates the NMSE
/// history.
pub fn run_amp_on(
    y: ArrayView2<C64>,
    u: ArrayView2<C64>,
    truth: Option<ArrayView2<C64>>,
    cfg: &AmpConfig,
    denoiser: &dyn Denoiser,
) -> Result<AmpRun> {
    cfg.validate()?;
    let (q, m) = y.dim();
    let n = u.ncols();
    if u.nrows() != q {
        return Err(Error::Dimension(format!("pilots have {} rows, observation has {q}", u.nrows())));
    }
    if let Some(t) = truth {
        if t.dim() != (n, m) {
            return Err(Error::Dimension("truth shape does not match N × M".into()));
        }
    }
    let truth_norm = truth.map(frob_norm).filter(|v| *v > 0.0);
    let nmse_of = |x: ArrayView2<C64>| -> Option<f64> {
        let (t, tn) = (truth?, truth_norm?);
        let d = x.iter().zip(t.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        Some(d / tn)
    };

    let u_h = hermitian_t(u);
    let scale = (m * q) as f64;
    let mut x = Array2::from_elem((n, m), ZERO);
    let mut r = y.to_owned();
    let mut sigma = frob_norm(r.view()) / scale.sqrt();
    let sigma0 = sigma;
    let mut nmse_history: Vec<f64> = nmse_of(x.view()).into_iter().collect();
    let mut trace = Vec::new();
    let mut converged = false;
    let threshold_scale = denoiser.threshold_scale(m);

    for t in 1..=cfg.max_iters {
        let lambda = cfg.tau * sigma * threshold_scale;
        let level = Level::new(sigma, lambda);
        let x_tilde = matched_filter_all(u_h.view(), r.view(), x.view())?;
        let out = denoiser.denoise_rows(x_tilde.view(), level)?;
        if !is_finite(out.estimate.view()) || !is_finite(out.jacobian_sum.view()) {
            return Err(Error::Diverged { iteration: t, reason: "non-finite denoiser output".into() });
        }
        let r_next = onsager_residual(y, u, out.estimate.view(), r.view(), out.jacobian_sum.view())?;
        let sigma_next = frob_norm(r_next.view()) / scale.sqrt();
        if !sigma_next.is_finite() {
            return Err(Error::Diverged { iteration: t, reason: "non-finite residual".into() });
        }
        if sigma_next > cfg.divergence_factor * sigma0 && sigma0 > 0.0 {
            return Err(Error::Diverged {
                iteration: t,
                reason: format!("sigma grew to {sigma_next:e} from {sigma0:e}"),
            });
        }
        let change = relative_change(x.view(), out.estimate.view());
        x = out.estimate;
        r = r_next;
        let nmse = nmse_of(x.view());
        if let Some(v) = nmse {
            nmse_history.push(v);
        }
        trace.push(IterationRecord { iteration: t, sigma, lambda, rel_change: change, nmse });
        sigma = sigma_next;
        if change < cfg.conv_tol {
            converged = true;
            break;
        }
    }
    let iter = trace.len();
    Ok(AmpRun {
        state: AmpState { estimate: x, residual: r, iter, sigma, nmse_history },
        trace,
        converged,
    })
}

/// Number of leading rows that are nonzero; used by tests and diagnostics.
pub fn support_size(x: ArrayView2<C64>) -> usize {
    x.rows().into_iter().filter(|r| r.iter().any(|z| *z != ZERO)).count()
}
