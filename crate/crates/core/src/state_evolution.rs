//! Monte Carlo state evolution.
//!
//! With `Θ₀ = (1/N) Σ_n x_n x_n^H` and `Σ_t = Θ_t/ω + σ_w² I` (`ω = Q/N`),
//! the recursion
//! `Θ_{t+1} = (1/N) Σ_n E[(η(x_n + Σ_t^{1/2} v) − x_n)(η(x_n + Σ_t^{1/2} v) − x_n)^H]`
//! predicts the per-iteration error covariance of AMP. The expectation is
//! estimated by sampling: all-zero rows share one pooled expectation, and
//! nonzero rows are evaluated individually (or on a uniform subsample).

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::amp::AmpConfig;
use crate::denoise::{Denoiser, Level};
use crate::error::{Error, Result};
use crate::linalg::{complex_normal, frob_norm, C64, ZERO};
use crate::par;
use crate::rng;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeParams {
    /// Noise draws per evaluated row.
    pub mc_samples: usize,
    /// Nonzero rows evaluated per step (all of them when fewer).
    pub user_subsample: usize,
    pub seed: u64,
}

impl Default for SeParams {
    fn default() -> Self {
        Self { mc_samples: 200, user_subsample: 500, seed: 0 }
    }
}

impl SeParams {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 || self.user_subsample == 0 {
            return Err(Error::Config("mc_samples and user_subsample must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StateEvolutionTrace {
    /// `Θ_0, Θ_1, …`.
    pub theta: Vec<Array2<C64>>,
    /// `Σ_t` paired with `Θ_t`.
    pub sigma: Vec<Array2<C64>>,
    /// `√(N Tr Θ_t / ‖X‖_F²)`.
    pub predicted_nmse: Vec<f64>,
    pub omega: f64,
    pub mc_samples: usize,
    pub user_subsample: usize,
}

impl StateEvolutionTrace {
    pub fn trace_theta(&self) -> Vec<f64> {
        self.theta.iter().map(|t| trace(t.view())).collect()
    }

    /// Writes `iteration,trace_theta,predicted_nmse` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "trace_theta", "predicted_nmse"])?;
        for (t, (tr, p)) in self.trace_theta().iter().zip(&self.predicted_nmse).enumerate() {
            out.write_record([t.to_string(), tr.to_string(), p.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn trace(a: ArrayView2<C64>) -> f64 {
    a.diag().iter().map(|z| z.re).sum()
}

/// `H` with `H H^H = S` for a Hermitian positive semidefinite `S`
/// (the Hermitian square root). Tolerances are relative to the largest
/// eigenvalue magnitude so the routine is unit-agnostic.
pub fn hermitian_sqrt(s: ArrayView2<C64>) -> Result<Array2<C64>> {
    let (m, m2) = s.dim();
    if m != m2 {
        return Err(Error::Dimension(format!("square matrix expected, got {m}×{m2}")));
    }
    let scale = s.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(Array2::from_elem((m, m), ZERO));
    }
    let asym = s.indexed_iter().map(|((i, j), v)| (v - s[[j, i]].conj()).norm()).fold(0.0, f64::max);
    if asym > 1e-8 * scale.max(1.0).min(scale * 1e8) {
        return Err(Error::NotHermitian(asym));
    }
    let mat = DMatrix::from_fn(m, m, |i, j| 0.5 * (s[[i, j]] + s[[j, i]].conj()));
    let eig = mat.symmetric_eigen();
    let top = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let worst = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if worst < -1e-10 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd(worst));
    }
    let v = &eig.eigenvectors;
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(Array2::from_shape_fn((m, m), |(i, j)| {
        (0..m).map(|k| v[(i, k)] * roots[k] * v[(j, k)].conj()).sum()
    }))
}

fn symmetrize(a: &mut Array2<C64>) {
    let m = a.nrows();
    for i in 0..m {
        a[[i, i]] = C64::new(a[[i, i]].re, 0.0);
        for j in (i + 1)..m {
            let v = 0.5 * (a[[i, j]] + a[[j, i]].conj());
            a[[i, j]] = v;
            a[[j, i]] = v.conj();
        }
    }
}

const ZERO_ROWS: u64 = u64::MAX;

/// Sum over draws of `e e^H` for `e = η(x + H v) − x`, `x` a fixed row.
fn row_error_sum(
    x: ndarray::ArrayView1<C64>,
    root: &Array2<C64>,
    denoiser: &dyn Denoiser,
    level: Level,
    draws: usize,
    seed: u64,
    label: u64,
) -> Result<Array2<C64>> {
    let m = x.len();
    let mut g = rng::stream(seed, &[label]);
    let v = Array2::from_shape_simple_fn((draws, m), || complex_normal(&mut g));
    // rows of v·H^T are (H v_i)^T
    let inputs = v.dot(&root.t()) + &x;
    let out = denoiser.denoise_batch(inputs.view(), level, rng::derive(seed, &[label]))?;
    let err = out - &x;
    // Σ_i e_i e_i^H as column vectors is E^T conj(E)
    Ok(err.t().dot(&err.mapv(|z| z.conj())))
}

/// One recursion step: `Θ_{t+1}` from the truth and `Σ_t`.
#[allow(clippy::too_many_arguments)]
pub fn se_step(
    truth: ArrayView2<C64>,
    sigma_t: ArrayView2<C64>,
    denoiser: &dyn Denoiser,
    tau: f64,
    params: &SeParams,
    step_seed: u64,
) -> Result<Array2<C64>> {
    params.validate()?;
    let (n, m) = truth.dim();
    if sigma_t.dim() != (m, m) {
        return Err(Error::Dimension("Σ_t must be M × M".into()));
    }
    let root = hermitian_sqrt(sigma_t)?;
    let sigma = (trace(sigma_t) / m as f64).max(0.0).sqrt();
    let level = Level::new(sigma, tau * sigma * denoiser.threshold_scale(m));

    let active: Vec<usize> = (0..n).filter(|&i| truth.row(i).iter().any(|z| *z != ZERO)).collect();
    let zero_count = n - active.len();
    let chosen: Vec<usize> = if active.len() > params.user_subsample {
        let mut g = rng::stream(step_seed, &[0x5AB5]);
        let mut idx: Vec<usize> = sample(&mut g, active.len(), params.user_subsample).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| active[i]).collect()
    } else {
        active.clone()
    };

    let mut theta = Array2::from_elem((m, m), ZERO);
    let parts = par::try_map_indexed(chosen.len(), |k| {
        let i = chosen[k];
        row_error_sum(truth.row(i), &root, denoiser, level, params.mc_samples, step_seed, i as u64)
    })?;
    if !chosen.is_empty() {
        let w = active.len() as f64 / (chosen.len() * params.mc_samples) as f64;
        for p in parts {
            theta.scaled_add(C64::new(w, 0.0), &p);
        }
    }
    if zero_count > 0 {
        // all zero rows share one expectation; give it the sampling budget
        // of the nonzero stratum (at least one row's worth)
        let draws = params.mc_samples * chosen.len().max(1).min(zero_count);
        let zero = ndarray::Array1::from_elem(m, ZERO);
        let p = row_error_sum(zero.view(), &root, denoiser, level, draws, step_seed, ZERO_ROWS)?;
        theta.scaled_add(C64::new(zero_count as f64 / draws as f64, 0.0), &p);
    }
    theta.mapv_inplace(|z| z / n as f64);
    symmetrize(&mut theta);
    Ok(theta)
}

/// `Σ = Θ/ω + σ_w² I`.
pub fn effective_noise(theta: ArrayView2<C64>, omega: f64, noise_var: f64) -> Array2<C64> {
    let mut s = theta.mapv(|z| z / omega);
    for i in 0..s.nrows() {
        s[[i, i]] += noise_var;
    }
    s
}

/// `Θ₀ = (1/N) Σ_n x_n x_n^H` with rows `x_n` treated as column vectors.
pub fn initial_theta(truth: ArrayView2<C64>) -> Array2<C64> {
    let n = truth.nrows() as f64;
    let mut t = truth.t().dot(&truth.mapv(|z| z.conj())) / C64::new(n, 0.0);
    symmetrize(&mut t);
    t
}

/// Runs `iterations` recursion steps for the scenario.
pub fn run_se(
    scenario: &Scenario,
    cfg: &AmpConfig,
    denoiser: &dyn Denoiser,
    params: &SeParams,
    iterations: usize,
) -> Result<StateEvolutionTrace> {
    run_se_on(
        scenario.truth.view(),
        scenario.pilot_len(),
        scenario.noise_var,
        cfg.tau,
        denoiser,
        params,
        iterations,
    )
}

pub fn run_se_on(
    truth: ArrayView2<C64>,
    pilot_len: usize,
    noise_var: f64,
    tau: f64,
    denoiser: &dyn Denoiser,
    params: &SeParams,
    iterations: usize,
) -> Result<StateEvolutionTrace> {
    params.validate()?;
    let n = truth.nrows();
    let omega = pilot_len as f64 / n as f64;
    let x_norm2 = frob_norm(truth).powi(2);
    let predict = |t: &Array2<C64>| -> f64 {
        let tr = trace(t.view()).max(0.0);
        if x_norm2 > 0.0 {
            (n as f64 * tr / x_norm2).sqrt()
        } else if tr == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let mut theta = vec![initial_theta(truth)];
    let mut sigma = vec![effective_noise(theta[0].view(), omega, noise_var)];
    let mut predicted = vec![predict(&theta[0])];
    for t in 0..iterations {
        let next = se_step(truth, sigma[t].view(), denoiser, tau, params, rng::derive(params.seed, &[t as u64]))?;
        sigma.push(effective_noise(next.view(), omega, noise_var));
        predicted.push(predict(&next));
        theta.push(next);
    }
    Ok(StateEvolutionTrace {
        theta,
        sigma,
        predicted_nmse: predicted,
        omega,
        mc_samples: params.mc_samples,
        user_subsample: params.user_subsample,
    })
}
