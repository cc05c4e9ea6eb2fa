//! Group soft-thresholding: the proximal map of `λ‖x‖₂`, which zeroes a
//! whole row below the threshold and shrinks its norm by `λ` above it.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{Denoiser, Level, RowOutput};
use crate::error::Result;
use crate::linalg::{norm, C64, ZERO};
use crate::par;

/// `x̃ (‖x̃‖ − λ)/‖x̃‖` when `‖x̃‖ ≥ λ`, else zero. The zero input maps to zero.
pub fn gst_denoise(x: ArrayView1<C64>, lambda: f64) -> Array1<C64> {
    let r = norm(x);
    if r == 0.0 || r < lambda {
        return Array1::from_elem(x.len(), ZERO);
    }
    let gain = (r - lambda) / r;
    x.mapv(|z| z * gain)
}

/// `[(1 − λ/‖x̃‖) I + λ x̃ x̃^H / (2‖x̃‖³)] · 1{‖x̃‖ ≥ λ}`.
pub fn gst_jacobian(x: ArrayView1<C64>, lambda: f64) -> Array2<C64> {
    let m = x.len();
    let r = norm(x);
    let mut j = Array2::from_elem((m, m), ZERO);
    if r == 0.0 {
        // continuous extension: identity when nothing is subtracted
        if lambda == 0.0 {
            j.diag_mut().fill(C64::new(1.0, 0.0));
        }
        return j;
    }
    if r < lambda {
        return j;
    }
    add_gst_jacobian(&mut j, x, lambda, r);
    j
}

fn add_gst_jacobian(acc: &mut Array2<C64>, x: ArrayView1<C64>, lambda: f64, r: f64) {
    let m = x.len();
    let d = 1.0 - lambda / r;
    let w = lambda / (2.0 * r * r * r);
    for i in 0..m {
        let xi = x[i] * w;
        for k in 0..m {
            acc[[i, k]] += xi * x[k].conj();
        }
        acc[[i, i]] += d;
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GstDenoiser;

impl Denoiser for GstDenoiser {
    fn name(&self) -> &'static str {
        "gst"
    }

    fn threshold_scale(&self, m: usize) -> f64 {
        (m as f64).sqrt()
    }

    fn denoise(&self, x: ArrayView1<C64>, level: Level, _key: u64) -> Result<Array1<C64>> {
        Ok(gst_denoise(x, level.lambda))
    }

    fn jacobian(&self, x: ArrayView1<C64>, level: Level, _key: u64) -> Result<Array2<C64>> {
        Ok(gst_jacobian(x, level.lambda))
    }

    fn denoise_rows(&self, inputs: ArrayView2<C64>, level: Level) -> Result<RowOutput> {
        let (n, m) = inputs.dim();
        let lambda = level.lambda;
        let norms = par::map_indexed(n, |i| norm(inputs.row(i)));
        let mut estimate = Array2::from_elem((n, m), ZERO);
        let mut jacobian_sum = Array2::from_elem((m, m), ZERO);
        for (i, &r) in norms.iter().enumerate() {
            let x = inputs.row(i);
            if r == 0.0 {
                if lambda == 0.0 {
                    jacobian_sum.diag_mut().mapv_inplace(|z| z + 1.0);
                }
                continue;
            }
            if r < lambda {
                continue;
            }
            estimate.row_mut(i).assign(&x.mapv(|z| z * ((r - lambda) / r)));
            add_gst_jacobian(&mut jacobian_sum, x, lambda, r);
        }
        Ok(RowOutput { estimate, jacobian_sum })
    }
}
