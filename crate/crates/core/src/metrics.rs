//! Activity detection from an estimate, NMSE, and ROC sweeps.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Rows whose ℓ1 norm is at most this fraction of the largest row norm count
/// as numerically zero when choosing the default threshold.
const ZERO_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub declared_active: Vec<bool>,
    pub threshold: f64,
    pub pfa: f64,
    pub pmd: f64,
    pub nmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub pfa: f64,
    pub pmd: f64,
}

/// Sum of entry magnitudes.
pub fn l1_norm(x: ArrayView1<C64>) -> f64 {
    x.iter().map(|z| z.norm()).sum()
}

pub fn row_l1_norms(x: ArrayView2<C64>) -> Vec<f64> {
    x.axis_iter(Axis(0)).map(l1_norm).collect()
}

/// A row is declared active when its ℓ1 norm strictly exceeds `threshold`.
pub fn detect(estimate: ArrayView2<C64>, threshold: f64) -> Vec<bool> {
    row_l1_norms(estimate).into_iter().map(|v| v > threshold).collect()
}

/// `‖X̂ − X‖_F / ‖X‖_F` (not squared).
pub fn nmse(estimate: ArrayView2<C64>, truth: ArrayView2<C64>) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(Error::Dimension(format!("estimate {:?} vs truth {:?}", estimate.dim(), truth.dim())));
    }
    let mut err = 0.0;
    let mut reference = 0.0;
    for (a, b) in estimate.iter().zip(truth.iter()) {
        err += (a - b).norm_sqr();
        reference += b.norm_sqr();
    }
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((err / reference).sqrt())
}

/// `(P_FA, P_MD)` with the denominators clamped to at least one.
pub fn error_rates(declared: &[bool], truth: &[bool]) -> (f64, f64) {
    assert_eq!(declared.len(), truth.len(), "activity vectors differ in length");
    let (mut fa, mut md, mut inactive, mut active) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &t) in declared.iter().zip(truth) {
        if t {
            active += 1;
            md += usize::from(!d);
        } else {
            inactive += 1;
            fa += usize::from(d);
        }
    }
    (fa as f64 / inactive.max(1) as f64, md as f64 / active.max(1) as f64)
}

/// Truth activity as the nonzero rows of `X`.
pub fn truth_activity(truth: ArrayView2<C64>) -> Vec<bool> {
    truth.axis_iter(Axis(0)).map(|r| r.iter().any(|z| *z != C64::new(0.0, 0.0))).collect()
}

/// Full evaluation at one threshold.
pub fn evaluate(estimate: ArrayView2<C64>, truth: ArrayView2<C64>, activity: &[bool], threshold: f64) -> Result<DetectionResult> {
    if activity.len() != estimate.nrows() {
        return Err(Error::Dimension("activity length differs from row count".into()));
    }
    let nmse = nmse(estimate, truth)?;
    let declared_active = detect(estimate, threshold);
    let (pfa, pmd) = error_rates(&declared_active, activity);
    Ok(DetectionResult { declared_active, threshold, pfa, pmd, nmse })
}

/// Error rates for every threshold of an ascending grid.
pub fn roc_sweep(estimate: ArrayView2<C64>, activity: &[bool], thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Config("ROC threshold grid must be sorted ascending".into()));
    }
    if activity.len() != estimate.nrows() {
        return Err(Error::Dimension("activity length differs from row count".into()));
    }
    let norms = row_l1_norms(estimate);
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let declared: Vec<bool> = norms.iter().map(|&v| v > threshold).collect();
            let (pfa, pmd) = error_rates(&declared, activity);
            RocPoint { threshold, pfa, pmd }
        })
        .collect())
}

/// Default operating threshold. The logarithms of the row ℓ1 norms above
/// `1e-6` of the largest are split into a low (noise) and a high (signal)
/// group by two-means clustering; the threshold is the geometric midpoint of
/// the gap between the groups. Rows at or below the floor always count as
/// inactive, so an estimate with a single nonzero cluster gets the floor. An
/// all-zero estimate gives `0`.
pub fn default_threshold(estimate: ArrayView2<C64>) -> f64 {
    let norms = row_l1_norms(estimate);
    let max = norms.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return 0.0;
    }
    let floor = ZERO_FLOOR * max;
    let mut logs: Vec<f64> = norms.iter().filter(|&&v| v > floor).map(|v| v.ln()).collect();
    logs.sort_by(f64::total_cmp);
    match two_means_split(&logs) {
        0 => floor,
        k => (0.5 * (logs[k - 1] + logs[k])).exp(),
    }
}

/// Index splitting sorted values into two groups with minimal within-group
/// sum of squares (`0` when all values are equal).
fn two_means_split(sorted: &[f64]) -> usize {
    let n = sorted.len();
    if n < 2 || sorted[0] == sorted[n - 1] {
        return 0;
    }
    let total: f64 = sorted.iter().sum();
    let total_sq: f64 = sorted.iter().map(|v| v * v).sum();
    let (mut best, mut best_cost) = (0, f64::INFINITY);
    let (mut s, mut sq) = (0.0, 0.0);
    for k in 1..n {
        s += sorted[k - 1];
        sq += sorted[k - 1] * sorted[k - 1];
        if sorted[k] == sorted[k - 1] {
            continue;
        }
        let (nl, nr) = (k as f64, (n - k) as f64);
        let cost = (sq - s * s / nl) + ((total_sq - sq) - (total - s).powi(2) / nr);
        if cost < best_cost {
            best_cost = cost;
            best = k;
        }
    }
    best
}

/// Log-spaced threshold grid spanning the nonzero row norms of the estimate,
/// with a leading `0` and a trailing `+∞`.
pub fn threshold_grid(estimate: ArrayView2<C64>, points: usize) -> Vec<f64> {
    let norms = row_l1_norms(estimate);
    let max = norms.iter().copied().fold(0.0, f64::max);
    let mut grid = vec![0.0];
    if max > 0.0 && points > 0 {
        let lo = (ZERO_FLOOR * max).ln();
        let hi = max.ln();
        let steps = points.max(2) - 1;
        for i in 0..=steps {
            grid.push((lo + (hi - lo) * i as f64 / steps as f64).exp());
        }
    }
    grid.push(f64::INFINITY);
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn example() -> (Array2<C64>, Vec<bool>) {
        let truth = array![[c(1.0, 0.0), c(0.0, 1.0)], [c(0.0, 0.0), c(0.0, 0.0)], [c(-2.0, 0.0), c(0.0, 0.0)]];
        let act = vec![true, false, true];
        (truth, act)
    }

    #[test]
    fn detect_is_strict() {
        let x = Array2::from_elem((3, 2), c(0.0, 0.0));
        assert_eq!(detect(x.view(), 0.0), vec![false; 3]);
        let (t, act) = example();
        assert_eq!(detect(t.view(), 0.0), act);
        assert_eq!(detect(t.view(), 2.0), vec![false, false, false]);
        assert_eq!(detect(t.view(), 1.99), vec![true, false, true]);
    }

    #[test]
    fn oracle_estimate_separates() {
        let (t, act) = example();
        let r = evaluate(t.view(), t.view(), &act, 1.0).unwrap();
        assert_eq!((r.pfa, r.pmd, r.nmse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn nmse_examples() {
        let (t, _) = example();
        let zero = Array2::from_elem(t.dim(), c(0.0, 0.0));
        assert_eq!(nmse(t.view(), t.view()).unwrap(), 0.0);
        assert!((nmse(zero.view(), t.view()).unwrap() - 1.0).abs() < 1e-15);
        let twice = t.mapv(|z| z * 2.0);
        assert!((nmse(twice.view(), t.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(nmse(t.view(), zero.view()), Err(Error::ZeroReference)));
    }

    #[test]
    fn rates_clamp_denominators() {
        assert_eq!(error_rates(&[true, true], &[true, true]), (0.0, 0.0));
        assert_eq!(error_rates(&[true, false], &[false, false]), (0.5, 0.0));
        assert_eq!(error_rates(&[], &[]), (0.0, 0.0));
    }

    #[test]
    fn roc_endpoints() {
        let (t, act) = example();
        let est = t.mapv(|z| z * 0.9) + Array2::from_elem(t.dim(), c(0.01, 0.0));
        let roc = roc_sweep(est.view(), &act, &[0.0, 0.5, f64::INFINITY]).unwrap();
        assert_eq!(roc[0].pfa, 1.0);
        assert_eq!((roc[1].pfa, roc[1].pmd), (0.0, 0.0));
        assert_eq!((roc[2].pfa, roc[2].pmd), (0.0, 1.0));
        assert!(roc_sweep(est.view(), &act, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn default_threshold_splits_groups() {
        let mut x = Array2::from_elem((5, 1), c(0.0, 0.0));
        x[[0, 0]] = c(100.0, 0.0);
        x[[1, 0]] = c(1e-3, 0.0);
        // only 1e-3 and 100 clear the 1e-4 floor: the gap midpoint is √0.1
        let s = default_threshold(x.view());
        assert!((s - 0.1f64.sqrt()).abs() < 1e-12, "{s}");
        x[[2, 0]] = c(2e-3, 0.0);
        x[[3, 0]] = c(50.0, 0.0);
        let s = default_threshold(x.view());
        assert!((s - (2e-3f64 * 50.0).sqrt()).abs() < 1e-12, "{s}");
        // a single cluster above the floor keeps every nonzero row
        let mut one = Array2::from_elem((4, 1), c(0.0, 0.0));
        one[[0, 0]] = c(3.0, 0.0);
        one[[1, 0]] = c(3.0, 0.0);
        assert_eq!(default_threshold(one.view()), 3e-6);
        assert_eq!(default_threshold(Array2::from_elem((3, 2), c(0.0, 0.0)).view()), 0.0);
        let (t, act) = example();
        assert_eq!(detect(t.view(), default_threshold(t.view())), act);
    }

    #[test]
    fn grid_is_sorted_with_open_ends() {
        let (t, _) = example();
        let g = threshold_grid(t.view(), 10);
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 0.0);
        assert!(g.last().unwrap().is_infinite());
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    fn estimate_strategy() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<bool>)> {
        (1usize..30).prop_flat_map(|n| {
            (prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), n * 2), prop::collection::vec(any::<bool>(), n))
        })
    }

    fn to_matrix(v: &[(f64, f64)]) -> Array2<C64> {
        Array2::from_shape_vec((v.len() / 2, 2), v.iter().map(|&(a, b)| c(a, b)).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn roc_is_monotone((vals, act) in estimate_strategy(), mut grid in prop::collection::vec(0.0f64..20.0, 1..20)) {
            grid.sort_by(f64::total_cmp);
            let x = to_matrix(&vals);
            let roc = roc_sweep(x.view(), &act, &grid).unwrap();
            for w in roc.windows(2) {
                prop_assert!(w[1].pfa <= w[0].pfa);
                prop_assert!(w[1].pmd >= w[0].pmd);
            }
        }

        #[test]
        fn detect_commutes_with_row_permutation((vals, _act) in estimate_strategy(), s in 0.0f64..10.0, shift in 0usize..30) {
            let x = to_matrix(&vals);
            let n = x.nrows();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let px = x.select(Axis(0), &perm);
            let d = detect(x.view(), s);
            let pd = detect(px.view(), s);
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(pd[i], d[p]);
            }
        }

        #[test]
        fn nmse_is_scale_invariant((vals, _act) in estimate_strategy(), scale in 0.01f64..100.0, shift in 1usize..30) {
            let x = to_matrix(&vals);
            // the reference is the estimate with its entries rotated
            let tv: Vec<(f64, f64)> = (0..vals.len()).map(|i| vals[(i + shift) % vals.len()]).collect();
            let t = to_matrix(&tv);
            prop_assume!(t.iter().any(|z| z.norm() > 1e-3));
            let a = nmse(x.view(), t.view()).unwrap();
            let b = nmse(x.mapv(|z| z * scale).view(), t.mapv(|z| z * scale).view()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
