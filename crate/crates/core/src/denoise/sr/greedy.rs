//! Greedy off-grid spectral-line fitting.
//!
//! Each pass picks the fine-grid frequency best correlated with the residual,
//! refines every frequency in the working set by damped Newton descent on the
//! projection residual `‖P⊥(f) x̃‖²`, refits the amplitudes by least squares,
//! and prunes atoms whose amplitude falls below the threshold.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rustfft::{Fft, FftPlanner};

use super::{GreedyConfig, SpectralEstimate};
use crate::denoise::Level;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve, solve_spd, C64, ZERO};

/// Frequencies closer than this on the unit circle are treated as one atom.
pub const MERGE_TOL: f64 = 1e-9;

const CHOLESKY_TOL: f64 = 1e-13;

/// Distance between two frequencies on the unit circle.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Maps any real frequency into `[0, 1)`.
pub fn wrap(f: f64) -> f64 {
    let w = f.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Steering atom `e^{i2πmf}/√M` written into `out`.
fn fill_atom(f: f64, out: &mut [C64]) {
    let m = out.len();
    let scale = 1.0 / (m as f64).sqrt();
    for (k, v) in out.iter_mut().enumerate() {
        *v = C64::from_polar(scale, 2.0 * PI * k as f64 * f);
    }
}

fn has_duplicates(freqs: &[f64]) -> bool {
    for i in 0..freqs.len() {
        for j in (i + 1)..freqs.len() {
            if circular_distance(freqs[i], freqs[j]) < MERGE_TOL {
                return true;
            }
        }
    }
    false
}

/// Least-squares fit of `x̃` on the atoms at `freqs`.
#[derive(Debug, Clone)]
pub(crate) struct Fit {
    pub freqs: Vec<f64>,
    m: usize,
    /// Column-major `M × k` atom matrix.
    phi: Vec<C64>,
    /// Cholesky factor of the Gram matrix.
    chol: Vec<C64>,
    pub coeffs: Vec<C64>,
    pub residual: Vec<C64>,
    pub cost: f64,
}

impl Fit {
    pub fn new(freqs: &[f64], x: ArrayView1<C64>) -> Result<Self> {
        let m = x.len();
        let k = freqs.len();
        if k > m {
            return Err(Error::IllConditioned(format!("{k} atoms exceed {m} antennas")));
        }
        if has_duplicates(freqs) {
            return Err(Error::IllConditioned("duplicate frequencies".into()));
        }
        let mut phi = vec![ZERO; m * k];
        for (j, &f) in freqs.iter().enumerate() {
            fill_atom(f, &mut phi[j * m..(j + 1) * m]);
        }
        let mut chol = vec![ZERO; k * k];
        for i in 0..k {
            for j in 0..k {
                chol[i * k + j] = col_inner(&phi, m, i, &phi[j * m..(j + 1) * m]);
            }
        }
        if !cholesky_in_place(&mut chol, k, CHOLESKY_TOL) {
            return Err(Error::IllConditioned("singular steering Gram matrix".into()));
        }
        let rhs: Vec<C64> = (0..k).map(|i| col_inner(&phi, m, i, x.as_slice().unwrap_or(&x.to_vec()))).collect();
        let coeffs = cholesky_solve(&chol, k, &rhs);
        let mut residual: Vec<C64> = x.iter().copied().collect();
        for (j, c) in coeffs.iter().enumerate() {
            for (r, a) in residual.iter_mut().zip(&phi[j * m..(j + 1) * m]) {
                *r -= a * c;
            }
        }
        let cost = residual.iter().map(|z| z.norm_sqr()).sum();
        Ok(Self { freqs: freqs.to_vec(), m, phi, chol, coeffs, residual, cost })
    }

    fn k(&self) -> usize {
        self.freqs.len()
    }

    /// Column `j` of `T(f)`, the frequency derivative of atom `j`.
    fn derivative(&self, j: usize) -> Vec<C64> {
        let col = &self.phi[j * self.m..(j + 1) * self.m];
        col.iter().enumerate().map(|(mm, a)| a * C64::new(0.0, 2.0 * PI * mm as f64)).collect()
    }

    pub fn gradient(&self) -> Vec<f64> {
        (0..self.k())
            .map(|j| {
                let t = self.derivative(j);
                let rt: C64 = self.residual.iter().zip(&t).map(|(r, t)| r.conj() * t).sum();
                -2.0 * (self.coeffs[j] * rt).re
            })
            .collect()
    }

    /// `P⊥ v` for the current atom set.
    fn project_out(&self, v: &[C64]) -> Vec<C64> {
        let k = self.k();
        let u: Vec<C64> = (0..k).map(|i| col_inner(&self.phi, self.m, i, v)).collect();
        let w = cholesky_solve(&self.chol, k, &u);
        let mut out = v.to_vec();
        for (j, c) in w.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.phi[j * self.m..(j + 1) * self.m]) {
                *o -= a * c;
            }
        }
        out
    }

    /// Gauss–Newton Hessian `2 Re{(T^H P⊥ T)_{kl} c_l c_k^*}`, row-major.
    pub fn hessian(&self) -> Vec<f64> {
        let k = self.k();
        let t: Vec<Vec<C64>> = (0..k).map(|j| self.derivative(j)).collect();
        let pt: Vec<Vec<C64>> = t.iter().map(|tj| self.project_out(tj)).collect();
        let mut h = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                let g: C64 = t[a].iter().zip(&pt[b]).map(|(x, y)| x.conj() * y).sum();
                h[a * k + b] = 2.0 * (g * self.coeffs[b] * self.coeffs[a].conj()).re;
            }
        }
        // exact symmetry regardless of rounding
        for a in 0..k {
            for b in (a + 1)..k {
                let s = 0.5 * (h[a * k + b] + h[b * k + a]);
                h[a * k + b] = s;
                h[b * k + a] = s;
            }
        }
        h
    }

    pub fn into_estimate(self) -> SpectralEstimate {
        SpectralEstimate {
            frequencies: self.freqs,
            amplitudes: self.coeffs,
            residual: Array1::from(self.residual),
        }
    }
}

fn col_inner(phi: &[C64], m: usize, i: usize, v: &[C64]) -> C64 {
    phi[i * m..(i + 1) * m].iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// `‖P⊥(f) x̃‖²`.
pub fn residual_cost(freqs: &[f64], x: ArrayView1<C64>) -> Result<f64> {
    Ok(Fit::new(freqs, x)?.cost)
}

/// Exact gradient of [`residual_cost`] with respect to the frequencies.
pub fn cost_gradient(freqs: &[f64], x: ArrayView1<C64>) -> Result<Vec<f64>> {
    Ok(Fit::new(freqs, x)?.gradient())
}

/// Gauss–Newton approximation of the Hessian of [`residual_cost`].
pub fn cost_hessian(freqs: &[f64], x: ArrayView1<C64>) -> Result<Array2<f64>> {
    let k = freqs.len();
    let h = Fit::new(freqs, x)?.hessian();
    Ok(Array2::from_shape_vec((k, k), h).expect("k × k"))
}

/// Damped Newton refinement of all frequencies, started from `f0`.
///
/// Steps are halved until the cost strictly decreases; when no halving
/// helps, refinement stops at the current point. A Hessian that is not
/// positive definite after regularization is replaced by a gradient step of
/// length `1/‖K‖_F`.
pub fn newton_refine(f0: &[f64], x: ArrayView1<C64>, cfg: &GreedyConfig) -> Result<Vec<f64>> {
    Ok(refine_fit(Fit::new(f0, x)?, x, cfg)?.freqs)
}

pub(crate) fn refine_fit(mut fit: Fit, x: ArrayView1<C64>, cfg: &GreedyConfig) -> Result<Fit> {
    let k = fit.k();
    if k == 0 {
        return Ok(fit);
    }
    for _ in 0..cfg.newton_max_iters {
        let p = fit.gradient();
        let mut h = fit.hessian();
        let trace: f64 = (0..k).map(|i| h[i * k + i]).sum();
        let reg = 1e-10 * trace.abs() / k as f64;
        for i in 0..k {
            h[i * k + i] += reg;
        }
        let step = match solve_spd(&h, k, &p) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                let frob = h.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(frob > 0.0) {
                    break;
                }
                p.iter().map(|v| v / frob).collect()
            }
        };
        let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step_norm < cfg.newton_tol {
            break;
        }
        let mut mu = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<f64> = fit.freqs.iter().zip(&step).map(|(f, s)| wrap(f - mu * s)).collect();
            match Fit::new(&cand, x) {
                Ok(c) => {
                    if !c.cost.is_finite() {
                        return Err(Error::Diverged { iteration: 0, reason: "non-finite residual cost".into() });
                    }
                    if c.cost < fit.cost {
                        accepted = Some(c);
                        break;
                    }
                }
                Err(Error::IllConditioned(_)) => {}
                Err(e) => return Err(e),
            }
            mu *= cfg.step_shrink;
        }
        match accepted {
            Some(c) => fit = c,
            None => break,
        }
    }
    Ok(fit)
}

/// Merges frequencies closer than [`MERGE_TOL`] (keeping the first).
pub fn merge_duplicates(freqs: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(freqs.len());
    for &f in freqs {
        let f = wrap(f);
        if out.iter().all(|&g| circular_distance(f, g) >= MERGE_TOL) {
            out.push(f);
        }
    }
    out
}

/// Least-squares amplitudes on `freqs`, repeatedly removing atoms whose
/// amplitude magnitude is below `threshold` and refitting the survivors.
pub fn least_squares_prune(freqs: &[f64], x: ArrayView1<C64>, threshold: f64) -> Result<SpectralEstimate> {
    Ok(prune_fit(freqs, x, threshold)?.into_estimate_or(x))
}

/// Result of pruning: either a fit or nothing survived.
pub(crate) enum Pruned {
    Empty,
    Fit(Fit),
}

impl Pruned {
    fn into_estimate_or(self, x: ArrayView1<C64>) -> SpectralEstimate {
        match self {
            Pruned::Empty => SpectralEstimate::empty(x),
            Pruned::Fit(f) => f.into_estimate(),
        }
    }

    fn atoms(&self) -> usize {
        match self {
            Pruned::Empty => 0,
            Pruned::Fit(f) => f.k(),
        }
    }

    fn cost(&self, x: ArrayView1<C64>) -> f64 {
        match self {
            Pruned::Empty => x.iter().map(|z| z.norm_sqr()).sum(),
            Pruned::Fit(f) => f.cost,
        }
    }
}

pub(crate) fn prune_fit(freqs: &[f64], x: ArrayView1<C64>, threshold: f64) -> Result<Pruned> {
    let mut current = merge_duplicates(freqs);
    loop {
        if current.is_empty() {
            return Ok(Pruned::Empty);
        }
        let fit = match Fit::new(&current, x) {
            Ok(f) => f,
            Err(Error::IllConditioned(_)) => {
                // numerically coincident atoms that escaped the merge: drop the
                // later member of the closest pair and refit
                let (_, j) = closest_pair(&current);
                current.remove(j);
                continue;
            }
            Err(e) => return Err(e),
        };
        let keep: Vec<f64> = fit
            .freqs
            .iter()
            .zip(&fit.coeffs)
            .filter(|(_, c)| c.norm() >= threshold)
            .map(|(f, _)| *f)
            .collect();
        if keep.len() == current.len() {
            return Ok(Pruned::Fit(fit));
        }
        current = keep;
    }
}

fn closest_pair(freqs: &[f64]) -> (usize, usize) {
    let mut best = (0, freqs.len() - 1, f64::INFINITY);
    for i in 0..freqs.len() {
        for j in (i + 1)..freqs.len() {
            let d = circular_distance(freqs[i], freqs[j]);
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1)
}

/// Fine-grid correlation search with a cached FFT plan.
#[derive(Clone)]
pub struct GreedySolver {
    pub cfg: GreedyConfig,
    m: usize,
    grid: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GreedySolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreedySolver").field("cfg", &self.cfg).field("m", &self.m).finish()
    }
}

/// Grid correlation summary of one vector.
#[derive(Debug, Clone, Copy)]
pub struct Peak {
    /// Grid frequency of the largest correlation (lowest index on ties).
    pub frequency: f64,
    /// Largest correlation magnitude over the grid.
    pub grid_max: f64,
    /// Upper bound on the correlation magnitude over all of `[0, 1)`.
    pub bound: f64,
}

impl GreedySolver {
    pub fn new(m: usize, cfg: GreedyConfig) -> Result<Self> {
        cfg.validate()?;
        if m == 0 {
            return Err(Error::Dimension("greedy solver needs M >= 1".into()));
        }
        let grid = cfg.grid_oversample * m;
        let fft = FftPlanner::new().plan_fft_forward(grid);
        Ok(Self { cfg, m, grid, fft })
    }

    pub fn n_antennas(&self) -> usize {
        self.m
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    /// Factor bounding the off-grid maximum by the grid maximum. The centered
    /// correlation is a trigonometric sum with frequencies within
    /// `±(M−1)/2`, so by Bernstein's inequality it moves by at most
    /// `π(M−1)/G · max` between a point and its nearest grid node.
    fn bound_factor(&self) -> f64 {
        1.0 / (1.0 - PI * (self.m as f64 - 1.0) / (2.0 * self.grid as f64))
    }

    /// `|a(g/G)^H r|` over the grid, computed by one zero-padded FFT.
    pub fn peak(&self, r: ArrayView1<C64>) -> Option<Peak> {
        let mut buf = vec![ZERO; self.grid];
        for (b, v) in buf.iter_mut().zip(r.iter()) {
            *b = *v;
        }
        self.fft.process(&mut buf);
        let mut best = (0usize, -1.0f64);
        for (g, v) in buf.iter().enumerate() {
            let p = v.norm_sqr();
            if p > best.1 {
                best = (g, p);
            }
        }
        if !(best.1 > 0.0) {
            return None;
        }
        let grid_max = best.1.sqrt() / (self.m as f64).sqrt();
        Some(Peak {
            frequency: best.0 as f64 / self.grid as f64,
            grid_max,
            bound: grid_max * self.bound_factor(),
        })
    }

    /// Upper bound on `max_f |a(f)^H x|`; zero for the zero vector.
    pub fn correlation_bound(&self, x: ArrayView1<C64>) -> f64 {
        self.peak(x).map_or(0.0, |p| p.bound)
    }

    /// Runs the greedy fit at threshold `level.lambda` and residual target
    /// `res_tol_factor · M · σ²`.
    pub fn denoise(&self, x: ArrayView1<C64>, level: Level) -> Result<(Array1<C64>, SpectralEstimate)> {
        let est = self.fit(x, level)?;
        Ok((est.reconstruction(), est))
    }

    pub fn fit(&self, x: ArrayView1<C64>, level: Level) -> Result<SpectralEstimate> {
        if x.len() != self.m {
            return Err(Error::Dimension(format!("input length {} != M = {}", x.len(), self.m)));
        }
        let prune = self.cfg.prune_rel * level.lambda;
        let res_tol = self.cfg.res_tol_factor * self.m as f64 * level.sigma * level.sigma;
        let max_atoms = self.cfg.max_atoms.min(self.m);

        let mut current = Pruned::Empty;
        let mut cost = current.cost(x);
        if cost <= res_tol {
            return Ok(SpectralEstimate::empty(x));
        }
        let first = match self.peak(x) {
            Some(p) => p,
            None => return Ok(SpectralEstimate::empty(x)),
        };
        // Every single-atom amplitude is bounded by the correlation bound, so
        // when it is below the pruning threshold the first atom is always
        // pruned and the output is zero (checked at the top of the loop).
        let mut peak = Some(first);
        while current.atoms() < max_atoms {
            let Some(p) = peak else { break };
            // a line explaining less than the pruning threshold of the
            // residual cannot survive on its own
            if p.bound < prune {
                break;
            }
            let mut freqs = match &current {
                Pruned::Empty => Vec::new(),
                Pruned::Fit(f) => f.freqs.clone(),
            };
            if freqs.iter().any(|&g| circular_distance(g, p.frequency) < MERGE_TOL) {
                break;
            }
            freqs.push(p.frequency);
            let refined = match Fit::new(&freqs, x) {
                Ok(fit) => refine_fit(fit, x, &self.cfg)?,
                Err(Error::IllConditioned(_)) => break,
                Err(e) => return Err(e),
            };
            let next = prune_fit(&refined.freqs, x, prune)?;
            let next_cost = next.cost(x);
            if !(next_cost < cost) {
                break;
            }
            let grew = next.atoms() > current.atoms();
            current = next;
            cost = next_cost;
            if !grew || cost <= res_tol {
                break;
            }
            peak = match &current {
                Pruned::Fit(f) => self.peak(ArrayView1::from(&f.residual[..])),
                Pruned::Empty => None,
            };
        }
        Ok(current.into_estimate_or(x))
    }

    /// Selection step alone: the fine-grid frequency best correlated with `r`.
    pub fn select_atom(&self, r: ArrayView1<C64>) -> Option<f64> {
        self.peak(r).map(|p| p.frequency)
    }
}

/// Convenience wrapper building a [`GreedySolver`] for one call.
pub fn select_atom(r: ArrayView1<C64>, cfg: &GreedyConfig) -> Result<Option<f64>> {
    Ok(GreedySolver::new(r.len(), cfg.clone())?.select_atom(r))
}

/// Convenience wrapper building a [`GreedySolver`] for one call.
pub fn greedy_denoise(
    x: ArrayView1<C64>,
    level: Level,
    cfg: &GreedyConfig,
) -> Result<(Array1<C64>, SpectralEstimate)> {
    GreedySolver::new(x.len(), cfg.clone())?.denoise(x, level)
}
