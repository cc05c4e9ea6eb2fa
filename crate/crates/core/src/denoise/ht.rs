//! On-grid hard thresholding over an oversampled steering dictionary.
//!
//! The dictionary `A` holds unit-norm steering vectors on the grid
//! `f'_k = k / M̃`. For `M̃ = r M` with integer `r` the columns form a tight
//! frame, `A A^H = r I`, so synthesis is scaled by `M / M̃`; keeping every
//! coefficient then reproduces the input. The optional smoothing replaces the
//! indicator `1{|v| > λ}` by the Gaussian CDF `Φ((|v| − λ)/ε)`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{Denoiser, Level, RowOutput};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_t, C64, ZERO};
use crate::scenario::steering_unchecked;

#[derive(Debug, Clone)]
pub struct Dictionary {
    /// `M × M̃` steering atoms.
    pub atoms: Array2<C64>,
    /// `M̃ × M`, the conjugate transpose of `atoms`.
    atoms_h: Array2<C64>,
    /// `M̃ × M`, the transpose of `atoms` scaled by `M / M̃`.
    synth_t: Array2<C64>,
    pub grid_size: usize,
    pub oversample: f64,
}

impl Dictionary {
    pub fn n_antennas(&self) -> usize {
        self.atoms.nrows()
    }

    /// `M / M̃`.
    pub fn synthesis_gain(&self) -> f64 {
        self.n_antennas() as f64 / self.grid_size as f64
    }

    /// `A^H x̃`.
    pub fn analyze(&self, x: ArrayView1<C64>) -> Array1<C64> {
        self.atoms_h.dot(&x)
    }

    /// `(M/M̃) A v`.
    pub fn synthesize(&self, v: ArrayView1<C64>) -> Array1<C64> {
        self.synth_t.t().dot(&v)
    }
}

pub fn build_dictionary(m: usize, oversample: f64) -> Result<Dictionary> {
    if m == 0 {
        return Err(Error::Dimension("dictionary needs M >= 1".into()));
    }
    if !(oversample >= 1.0) || !oversample.is_finite() {
        return Err(Error::Config(format!("oversample must be >= 1, got {oversample}")));
    }
    let grid_size = ((oversample * m as f64).round() as usize).max(m);
    let mut atoms = Array2::from_elem((m, grid_size), ZERO);
    for k in 0..grid_size {
        atoms.index_axis_mut(Axis(1), k).assign(&steering_unchecked(k as f64 / grid_size as f64, m));
    }
    let atoms_h = hermitian_t(atoms.view());
    let gain = m as f64 / grid_size as f64;
    let synth_t = atoms.t().mapv(|z| z * gain);
    Ok(Dictionary { atoms, atoms_h, synth_t, grid_size, oversample })
}

#[derive(Debug, Clone)]
pub struct HtParams {
    pub dictionary: Dictionary,
    /// Smoothing width as a fraction of `λ`.
    pub smooth_eps: f64,
    pub smoothing_enabled: bool,
}

impl HtParams {
    pub fn new(dictionary: Dictionary) -> Self {
        Self { dictionary, smooth_eps: 0.05, smoothing_enabled: true }
    }

    pub fn hard(dictionary: Dictionary) -> Self {
        Self { dictionary, smooth_eps: 0.05, smoothing_enabled: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.smoothing_enabled && !(self.smooth_eps > 0.0) {
            return Err(Error::Config("smooth_eps must be positive when smoothing is enabled".into()));
        }
        Ok(())
    }

    fn width(&self, lambda: f64) -> Option<f64> {
        let eps = self.smooth_eps * lambda;
        (self.smoothing_enabled && eps > 0.0).then_some(eps)
    }

    /// Gain applied to a coefficient of magnitude `a`.
    fn gate(&self, a: f64, lambda: f64) -> f64 {
        match self.width(lambda) {
            Some(eps) => normal_cdf((a - lambda) / eps),
            None => {
                if a > lambda {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∂Ṽ/∂v` for a coefficient of magnitude `a` (real for this gate).
    fn gate_derivative(&self, a: f64, lambda: f64) -> f64 {
        match self.width(lambda) {
            Some(eps) => {
                let z = (a - lambda) / eps;
                normal_cdf(z) + a * normal_pdf(z) / (2.0 * eps)
            }
            None => self.gate(a, lambda),
        }
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Thresholded coefficients `𝕍(A^H x̃)` (or the smoothed version).
pub fn ht_coefficients(x: ArrayView1<C64>, lambda: f64, p: &HtParams) -> Array1<C64> {
    let mut v = p.dictionary.analyze(x);
    v.mapv_inplace(|z| z * p.gate(z.norm(), lambda));
    v
}

pub fn ht_denoise(x: ArrayView1<C64>, lambda: f64, p: &HtParams) -> Array1<C64> {
    p.dictionary.synthesize(ht_coefficients(x, lambda, p).view())
}

/// `(M/M̃) A diag(w) A^H` with `w` the gate derivative at each coefficient.
pub fn ht_jacobian(x: ArrayView1<C64>, lambda: f64, p: &HtParams) -> Array2<C64> {
    let v = p.dictionary.analyze(x);
    let w: Array1<f64> = v.mapv(|z| p.gate_derivative(z.norm(), lambda));
    weighted_gram(&p.dictionary, &w)
}

fn weighted_gram(d: &Dictionary, w: &Array1<f64>) -> Array2<C64> {
    let m = d.n_antennas();
    let mut scaled = d.atoms.clone();
    for (k, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
        let s = w[k] * d.synthesis_gain();
        col.mapv_inplace(|z| z * s);
        if w[k] == 0.0 {
            col.fill(ZERO);
        }
    }
    let out = scaled.dot(&d.atoms_h);
    debug_assert_eq!(out.dim(), (m, m));
    out
}

#[derive(Debug, Clone)]
pub struct HtDenoiser {
    pub params: HtParams,
}

impl HtDenoiser {
    pub fn new(params: HtParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl Denoiser for HtDenoiser {
    fn name(&self) -> &'static str {
        "ht"
    }

    fn denoise(&self, x: ArrayView1<C64>, level: Level, _key: u64) -> Result<Array1<C64>> {
        Ok(ht_denoise(x, level.lambda, &self.params))
    }

    fn jacobian(&self, x: ArrayView1<C64>, level: Level, _key: u64) -> Result<Array2<C64>> {
        Ok(ht_jacobian(x, level.lambda, &self.params))
    }

    fn denoise_batch(&self, inputs: ArrayView2<C64>, level: Level, _key_base: u64) -> Result<Array2<C64>> {
        let d = &self.params.dictionary;
        let mut coef = inputs.dot(&d.atoms_h.t());
        coef.mapv_inplace(|z| z * self.params.gate(z.norm(), level.lambda));
        Ok(coef.dot(&d.synth_t))
    }

    /// Batched form: one analysis GEMM, one synthesis GEMM, and a single
    /// weighted Gram product since `Σ_n A D_n A^H = A (Σ_n D_n) A^H`.
    fn denoise_rows(&self, inputs: ArrayView2<C64>, level: Level) -> Result<RowOutput> {
        let d = &self.params.dictionary;
        let lambda = level.lambda;
        // row n of `coef` is (A^H x̃_n)^T
        let mut coef = inputs.dot(&d.atoms_h.t());
        let mut weights = Array1::<f64>::zeros(d.grid_size);
        for mut row in coef.rows_mut() {
            for (k, z) in row.iter_mut().enumerate() {
                let a = z.norm();
                weights[k] += self.params.gate_derivative(a, lambda);
                *z *= self.params.gate(a, lambda);
            }
        }
        let estimate = coef.dot(&d.synth_t);
        let jacobian_sum = weighted_gram(d, &weights);
        Ok(RowOutput { estimate, jacobian_sum })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::finite_difference_jacobian;
    use crate::linalg::{complex_normal, norm};
    use crate::rng;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn max_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn critical_dictionary_is_unitary() {
        let d = build_dictionary(16, 1.0).unwrap();
        let g = d.atoms_h.dot(&d.atoms);
        assert!(max_diff(&g, &Array2::from_diag_elem(16, c(1.0, 0.0))) < 1e-12);
    }

    #[test]
    fn oversampled_dictionary_shape() {
        let d = build_dictionary(32, 4.0).unwrap();
        assert_eq!(d.grid_size, 128);
        assert_eq!(d.atoms.dim(), (32, 128));
        for col in d.atoms.columns() {
            assert!((norm(col) - 1.0).abs() < 1e-13);
        }
        // column k is the steering vector at k / M̃
        let a = steering_unchecked(37.0 / 128.0, 32);
        let corr = d.analyze(a.view());
        assert!((corr[37] - c(1.0, 0.0)).norm() < 1e-12);
        // Dirichlet kernel one grid step away
        let dirichlet = |x: f64| (PI * 32.0 * x).sin() / (32.0 * (PI * x).sin());
        assert!((corr[38].norm() - dirichlet(1.0 / 128.0).abs()).abs() < 1e-12);
        // tight frame
        let frame = d.atoms.dot(&d.atoms_h);
        assert!(max_diff(&frame, &Array2::from_diag_elem(32, c(4.0, 0.0))) < 1e-11);
    }

    #[test]
    fn rejects_undersampling() {
        assert!(build_dictionary(8, 0.5).is_err());
    }

    #[test]
    fn zero_and_large_threshold_give_zero() {
        let p = HtParams::hard(build_dictionary(8, 2.0).unwrap());
        let z = Array1::from_elem(8, ZERO);
        assert!(ht_denoise(z.view(), 0.1, &p).iter().all(|v| v.norm() == 0.0));
        let mut r = rng::stream(1, &[]);
        let x = Array1::from_shape_simple_fn(8, || complex_normal(&mut r));
        let big = p.dictionary.analyze(x.view()).iter().map(|z| z.norm()).fold(0.0, f64::max) + 1e-9;
        assert!(ht_denoise(x.view(), big, &p).iter().all(|v| v.norm() == 0.0));
        assert!(ht_jacobian(x.view(), big, &p).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn on_grid_atom_is_reproduced() {
        let p = HtParams::hard(build_dictionary(16, 1.0).unwrap());
        let x = steering_unchecked(5.0 / 16.0, 16).mapv(|z| z * c(1.5, -0.7));
        let y = ht_denoise(x.view(), 1.0, &p);
        assert!(norm((&y - &x).view()) < 1e-12);
    }

    #[test]
    fn on_grid_sparse_signal_exact_and_idempotent() {
        let m = 16;
        let p = HtParams::hard(build_dictionary(m, 1.0).unwrap());
        let mut r = rng::stream(4, &[]);
        for _ in 0..20 {
            let mut x = Array1::from_elem(m, ZERO);
            for _ in 0..3 {
                let k = r.random_range(0..m);
                let g = complex_normal(&mut r);
                let g = g / g.norm() * r.random_range(1.5..4.0);
                x.scaled_add(g, &steering_unchecked(k as f64 / m as f64, m));
            }
            let y = ht_denoise(x.view(), 1.0, &p);
            assert!(norm((&y - &x).view()) <= 1e-10);
            let noisy = &x + &Array1::from_shape_simple_fn(m, || complex_normal(&mut r) * 0.6);
            let once = ht_denoise(noisy.view(), 1.0, &p);
            let twice = ht_denoise(once.view(), 1.0, &p);
            assert!(norm((&once - &twice).view()) < 1e-12);
        }
    }

    #[test]
    fn zero_threshold_jacobian_is_identity_on_critical_grid() {
        let p = HtParams::hard(build_dictionary(8, 1.0).unwrap());
        let mut r = rng::stream(2, &[]);
        let x = Array1::from_shape_simple_fn(8, || complex_normal(&mut r));
        let j = ht_jacobian(x.view(), 0.0, &p);
        assert!(max_diff(&j, &Array2::from_diag_elem(8, c(1.0, 0.0))) < 1e-12);
    }

    #[test]
    fn hard_jacobian_is_hermitian_psd_and_matches_fd() {
        let p = HtParams::hard(build_dictionary(8, 2.0).unwrap());
        let mut r = rng::stream(3, &[]);
        let mut checked = 0;
        while checked < 20 {
            let x = Array1::from_shape_simple_fn(8, || complex_normal(&mut r));
            let lambda = 0.4;
            let v = p.dictionary.analyze(x.view());
            if v.iter().any(|z| (z.norm() - lambda).abs() < 1e-3) {
                continue;
            }
            let j = ht_jacobian(x.view(), lambda, &p);
            assert!(max_diff(&j, &hermitian_t(j.view())) < 1e-14);
            let eig = nalgebra::DMatrix::from_fn(8, 8, |a, b| j[[a, b]]).symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&e| e > -1e-12));
            let fd = finite_difference_jacobian(|y| ht_denoise(y, lambda, &p), x.view(), 1e-6);
            assert!(max_diff(&j, &fd) < 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn smoothed_jacobian_matches_fd() {
        let p = HtParams::new(build_dictionary(8, 2.0).unwrap());
        let mut r = rng::stream(5, &[]);
        for _ in 0..20 {
            let x = Array1::from_shape_simple_fn(8, || complex_normal(&mut r));
            let lambda = 0.5;
            let j = ht_jacobian(x.view(), lambda, &p);
            let fd = finite_difference_jacobian(|y| ht_denoise(y, lambda, &p), x.view(), 1e-7);
            let scale = j.iter().map(|z| z.norm()).fold(1.0, f64::max);
            assert!(max_diff(&j, &fd) <= 1e-4 * scale, "{}", max_diff(&j, &fd));
        }
    }

    #[test]
    fn smoothing_converges_to_hard_threshold() {
        let lambda = 1.0;
        let mags = [0.2, 0.5, 0.8, 0.9, 1.1, 1.2, 1.5, 3.0];
        let dict = build_dictionary(4, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for frac in [0.1, 0.01, 0.001] {
            let p = HtParams { dictionary: dict.clone(), smooth_eps: frac, smoothing_enabled: true };
            let hard = HtParams::hard(dict.clone());
            let err: f64 = mags
                .iter()
                .map(|&a| (p.gate(a, lambda) - hard.gate(a, lambda)).abs() * a)
                .fold(0.0, f64::max);
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn batch_matches_rows() {
        let p = HtParams::new(build_dictionary(8, 4.0).unwrap());
        let den = HtDenoiser::new(p.clone()).unwrap();
        let mut r = rng::stream(6, &[]);
        let x = Array2::from_shape_simple_fn((25, 8), || complex_normal(&mut r));
        let level = Level::new(0.3, 0.9);
        let out = den.denoise_rows(x.view(), level).unwrap();
        let mut sum = Array2::from_elem((8, 8), ZERO);
        for (i, row) in x.rows().into_iter().enumerate() {
            let y = ht_denoise(row, 0.9, &p);
            assert!(norm((&y - &out.estimate.row(i)).view()) < 1e-12);
            sum += &ht_jacobian(row, 0.9, &p);
        }
        assert!(max_diff(&sum, &out.jacobian_sum) < 1e-10);
        let batch = den.denoise_batch(x.view(), level, 0).unwrap();
        assert!(max_diff(&batch, &out.estimate) < 1e-14);
    }
}
