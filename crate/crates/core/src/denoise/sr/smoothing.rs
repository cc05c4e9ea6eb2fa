//! Monte Carlo smoothing of a discontinuous denoiser and the probe estimator
//! of its summed Jacobian.
//!
//! The smoothed map averages the denoiser over `J₁` Gaussian perturbations
//! `b^j ~ CN(0, r² I)`. The Jacobian column `m` is estimated from one-entry
//! probes: for `d ~ CN(0, 1)`,
//! `E[d* (η(x̃ + ε d e_m) − η(x̃))] / ε → ∂η/∂x̃_m` as `ε → 0`, because
//! `E|d|² = 1` while `E[d*²] = 0` cancels the conjugate-derivative part.
//! All draws are keyed by `(seed, user, index)` and are independent of
//! scheduling.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::Result;
use crate::linalg::{complex_normal, C64, ZERO};
use crate::par;
use crate::rng;

const OFFSET_TAG: u64 = 0x5EED_0FF5;
const PROBE_TAG: u64 = 0x5EED_D1FF;

/// The `j`-th smoothing direction (unit variance) for user `key`.
pub fn smoothing_direction(seed: u64, key: u64, j: usize, m: usize) -> Array1<C64> {
    let mut r = rng::stream(seed, &[OFFSET_TAG, key, j as u64]);
    Array1::from_shape_simple_fn(m, || complex_normal(&mut r))
}

/// Probe draws `d^k_{m}` for user `key`: `j2` values per antenna, laid out
/// `[m][k]`.
pub fn probe_draws(seed: u64, key: u64, m: usize, j2: usize) -> Vec<C64> {
    let mut r = rng::stream(seed, &[PROBE_TAG, key]);
    (0..m * j2).map(|_| complex_normal(&mut r)).collect()
}

/// `(1/J₁) Σ_j η(x̃ + r b^j)` with the keyed directions `b^j`.
pub fn smoothed_eval<F>(x: ArrayView1<C64>, eta: F, j1: usize, radius: f64, seed: u64, key: u64) -> Result<Array1<C64>>
where
    F: Fn(ArrayView1<C64>) -> Result<Array1<C64>>,
{
    if radius == 0.0 {
        return eta(x);
    }
    let m = x.len();
    let mut acc = Array1::from_elem(m, ZERO);
    for j in 0..j1 {
        let y = &x + &smoothing_direction(seed, key, j, m).mapv(|z| z * radius);
        acc += &eta(y.view())?;
    }
    Ok(acc / C64::new(j1 as f64, 0.0))
}

/// Probe estimate of `Σ_n ∂η/∂x̃ (x̃_n)` for the rows of `inputs`; `eta`
/// receives the row index (its key) and the point to evaluate.
pub fn mc_jacobian_sum<F>(inputs: ArrayView2<C64>, eta: F, j2: usize, eps: f64, seed: u64) -> Result<Array2<C64>>
where
    F: Fn(usize, ArrayView1<C64>) -> Result<Array1<C64>> + Sync + Send,
{
    let (n, m) = inputs.dim();
    let parts = par::try_map_indexed(n, |i| {
        let x = inputs.row(i);
        let base = eta(i, x)?;
        let draws = probe_draws(seed, i as u64, m, j2);
        let mut jac = Array2::from_elem((m, m), ZERO);
        let mut y = x.to_owned();
        for col in 0..m {
            for k in 0..j2 {
                let d = draws[col * j2 + k];
                y[col] = x[col] + d * eps;
                let diff = eta(i, y.view())? - &base;
                let w = d.conj() / (eps * j2 as f64);
                jac.index_axis_mut(Axis(1), col).scaled_add(w, &diff);
            }
            y[col] = x[col];
        }
        Ok(jac)
    })?;
    let mut sum = Array2::from_elem((m, m), ZERO);
    for p in parts {
        sum += &p;
    }
    Ok(sum)
}
