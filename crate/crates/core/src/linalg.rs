//! Small complex linear-algebra helpers shared by the denoisers and the
//! engine. Large products go through `ndarray`'s GEMM; the routines here are
//! for the tiny Gram systems (at most a few dozen unknowns) of the greedy
//! denoiser.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);

/// Draws from CN(0, 1): independent real and imaginary parts of variance 1/2.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn norm_sqr(v: ArrayView1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(v: ArrayView1<C64>) -> f64 {
    norm_sqr(v).sqrt()
}

pub fn frob_norm(a: ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Conjugate transpose, materialized in standard layout.
pub fn hermitian_t(a: ArrayView2<C64>) -> Array2<C64> {
    let mut out = Array2::zeros((a.ncols(), a.nrows()));
    for ((i, j), v) in a.indexed_iter() {
        out[[j, i]] = v.conj();
    }
    out
}

/// `a^H b` for two vectors.
pub fn inner(a: ArrayView1<C64>, b: ArrayView1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Outer product `a b^H`.
pub fn outer(a: ArrayView1<C64>, b: ArrayView1<C64>) -> Array2<C64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j].conj())
}

pub fn is_finite(a: ArrayView2<C64>) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// In-place Cholesky factorization of a Hermitian positive definite matrix
/// stored row-major in `g` (`k × k`). On success the lower triangle holds `L`
/// with `g = L L^H`. Fails if a pivot is not positive relative to `rel_tol`
/// times the largest diagonal entry.
pub fn cholesky_in_place(g: &mut [C64], k: usize, rel_tol: f64) -> bool {
    let scale = (0..k).map(|i| g[i * k + i].re).fold(0.0_f64, f64::max);
    if k == 0 {
        return true;
    }
    if !(scale > 0.0) {
        return false;
    }
    for j in 0..k {
        let mut d = g[j * k + j].re;
        for p in 0..j {
            d -= g[j * k + p].norm_sqr();
        }
        if !(d > rel_tol * scale) {
            return false;
        }
        let d = d.sqrt();
        g[j * k + j] = C64::new(d, 0.0);
        for i in (j + 1)..k {
            let mut s = g[i * k + j];
            for p in 0..j {
                s -= g[i * k + p] * g[j * k + p].conj();
            }
            g[i * k + j] = s / d;
        }
    }
    true
}

/// Solves `L L^H x = b` given the factor from [`cholesky_in_place`].
pub fn cholesky_solve(l: &[C64], k: usize, b: &[C64]) -> Vec<C64> {
    let mut y = b.to_vec();
    for i in 0..k {
        let mut s = y[i];
        for p in 0..i {
            s -= l[i * k + p] * y[p];
        }
        y[i] = s / l[i * k + i].re;
    }
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in (i + 1)..k {
            s -= l[p * k + i].conj() * y[p];
        }
        y[i] = s / l[i * k + i].re;
    }
    y
}

/// Solves a small real symmetric positive definite system; `None` when the
/// matrix is not numerically positive definite.
pub fn solve_spd(a: &[f64], k: usize, b: &[f64]) -> Option<Vec<f64>> {
    let mut g: Vec<C64> = a.iter().map(|&v| C64::new(v, 0.0)).collect();
    if !cholesky_in_place(&mut g, k, 1e-14) {
        return None;
    }
    let rhs: Vec<C64> = b.iter().map(|&v| C64::new(v, 0.0)).collect();
    Some(cholesky_solve(&g, k, &rhs).into_iter().map(|z| z.re).collect())
}

/// Dense `a · b` for an `n × k` matrix and a length-`k` vector.
pub fn mat_vec(a: ArrayView2<C64>, x: ArrayView1<C64>) -> Array1<C64> {
    a.dot(&x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn cholesky_round_trip() {
        let mut r = rng::stream(3, &[]);
        let k = 5;
        let b = Array2::from_shape_fn((8, k), |_| complex_normal(&mut r));
        let g = hermitian_t(b.view()).dot(&b);
        let rhs: Vec<C64> = (0..k).map(|_| complex_normal(&mut r)).collect();
        let mut fac: Vec<C64> = g.iter().cloned().collect();
        assert!(cholesky_in_place(&mut fac, k, 1e-14));
        let x = cholesky_solve(&fac, k, &rhs);
        let back = g.dot(&Array1::from(x));
        for (a, b) in back.iter().zip(rhs.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_singular() {
        let mut g = vec![C64::new(1.0, 0.0); 4];
        assert!(!cholesky_in_place(&mut g, 2, 1e-12));
    }

    #[test]
    fn complex_normal_has_unit_variance() {
        let mut r = rng::stream(11, &[]);
        let n = 200_000;
        let (mut p, mut m2) = (0.0, C64::new(0.0, 0.0));
        for _ in 0..n {
            let z = complex_normal(&mut r);
            p += z.norm_sqr();
            m2 += z * z;
        }
        assert!((p / n as f64 - 1.0).abs() < 0.01);
        assert!((m2 / n as f64).norm() < 0.01);
    }
}
