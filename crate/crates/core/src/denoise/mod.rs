//! Row denoisers for vector AMP.
//!
//! A denoiser maps one matched-filter output `x̃ ∈ C^M` to an estimate and
//! supplies its Wirtinger Jacobian `∂η/∂x̃` (entry `(i, j)` is
//! `∂η_i/∂x̃_j`), which the engine sums over users for the Onsager term.

pub mod gst;
pub mod ht;
pub mod sr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::Result;
use crate::linalg::{C64, ZERO};
use crate::par;

pub use gst::{gst_denoise, gst_jacobian, GstDenoiser};
pub use ht::{build_dictionary, ht_denoise, ht_jacobian, Dictionary, HtDenoiser, HtParams};
pub use sr::{GreedyConfig, SmoothingConfig, SpectralEstimate, SrDenoiser};

/// Noise level handed to a denoiser for one AMP iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    /// Per-entry effective noise standard deviation.
    pub sigma: f64,
    /// Threshold `τ σ` scaled by [`Denoiser::threshold_scale`].
    pub lambda: f64,
}

impl Level {
    pub fn new(sigma: f64, lambda: f64) -> Self {
        Self { sigma, lambda }
    }
}

/// Denoised rows plus the summed Jacobian `Σ_n ∂η/∂x̃ (x̃_n)`.
#[derive(Debug, Clone)]
pub struct RowOutput {
    pub estimate: Array2<C64>,
    pub jacobian_sum: Array2<C64>,
}

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &'static str;

    /// Factor applied to `τ σ` to form the threshold. Group thresholds act on
    /// the norm of a whole row, so they scale with `√M`.
    fn threshold_scale(&self, _m: usize) -> f64 {
        1.0
    }

    /// `key` selects the random substream for randomized denoisers; it is
    /// ignored by deterministic ones.
    fn denoise(&self, x: ArrayView1<C64>, level: Level, key: u64) -> Result<Array1<C64>>;

    fn jacobian(&self, x: ArrayView1<C64>, level: Level, key: u64) -> Result<Array2<C64>>;

    /// Denoises every row of `inputs` without Jacobians; row `i` uses key
    /// `key_base + i`.
    fn denoise_batch(&self, inputs: ArrayView2<C64>, level: Level, key_base: u64) -> Result<Array2<C64>> {
        let (n, m) = inputs.dim();
        let rows = par::try_map_indexed(n, |i| self.denoise(inputs.row(i), level, key_base + i as u64))?;
        let mut out = Array2::from_elem((n, m), ZERO);
        for (i, row) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&row);
        }
        Ok(out)
    }

    /// Denoises every row of `inputs` (row `n` uses key `n`) and sums the
    /// Jacobians in row order.
    fn denoise_rows(&self, inputs: ArrayView2<C64>, level: Level) -> Result<RowOutput> {
        let (n, m) = inputs.dim();
        let parts = par::try_map_indexed(n, |i| {
            let x = inputs.row(i);
            Ok((self.denoise(x, level, i as u64)?, self.jacobian(x, level, i as u64)?))
        })?;
        let mut estimate = Array2::from_elem((n, m), ZERO);
        let mut jacobian_sum = Array2::from_elem((m, m), ZERO);
        for (i, (row, jac)) in parts.into_iter().enumerate() {
            estimate.row_mut(i).assign(&row);
            jacobian_sum += &jac;
        }
        Ok(RowOutput { estimate, jacobian_sum })
    }
}

/// Identity map; useful as a reference in tests and state-evolution checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn denoise(&self, x: ArrayView1<C64>, _level: Level, _key: u64) -> Result<Array1<C64>> {
        Ok(x.to_owned())
    }

    fn jacobian(&self, x: ArrayView1<C64>, _level: Level, _key: u64) -> Result<Array2<C64>> {
        Ok(Array2::from_diag_elem(x.len(), C64::new(1.0, 0.0)))
    }
}

/// Central-difference Wirtinger Jacobian `½(∂/∂x_re − i ∂/∂x_im)` of `f`
/// at `x` with step `h`.
pub fn finite_difference_jacobian<F>(f: F, x: ArrayView1<C64>, h: f64) -> Array2<C64>
where
    F: Fn(ArrayView1<C64>) -> Array1<C64>,
{
    let m = x.len();
    let mut out = Array2::from_elem((f(x).len(), m), ZERO);
    for j in 0..m {
        let probe = |delta: C64| {
            let mut y = x.to_owned();
            y[j] += delta;
            f(y.view())
        };
        let d_re = (probe(C64::new(h, 0.0)) - probe(C64::new(-h, 0.0))) / (2.0 * h);
        let d_im = (probe(C64::new(0.0, h)) - probe(C64::new(0.0, -h))) / (2.0 * h);
        let col = (d_re - d_im.mapv(|z| z * C64::i())) * 0.5;
        out.index_axis_mut(Axis(1), j).assign(&col);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_jacobian_of_holomorphic_map() {
        // η(x) = (2+i) x has Wirtinger Jacobian (2+i) I
        let x = Array1::from(vec![C64::new(0.3, -1.0), C64::new(2.0, 0.5)]);
        let k = C64::new(2.0, 1.0);
        let j = finite_difference_jacobian(|v| v.mapv(|z| z * k), x.view(), 1e-6);
        for ((a, b), v) in j.indexed_iter() {
            let want = if a == b { k } else { ZERO };
            assert!((v - want).norm() < 1e-8);
        }
    }

    #[test]
    fn fd_jacobian_ignores_antiholomorphic_part() {
        // η(x) = conj(x) has zero Wirtinger derivative ∂/∂x
        let x = Array1::from(vec![C64::new(0.3, -1.0)]);
        let j = finite_difference_jacobian(|v| v.mapv(|z| z.conj()), x.view(), 1e-6);
        assert!(j[[0, 0]].norm() < 1e-8);
    }
}
