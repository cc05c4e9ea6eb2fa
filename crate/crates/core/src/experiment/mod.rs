//! Seeded Monte Carlo experiments: every (sweep point, detector, trial)
//! triple gets a fresh scenario, an AMP run and its metrics, assembled into
//! an order-stable table.
//!
//! Seeds: the scenario of trial `t` at sweep index `i` uses
//! `derive(seed, [i, t])`, so all detectors see the same instance; each
//! detector's own randomness (S-AMP smoothing, SE sampling) uses
//! `derive(scenario_seed, [detector])`.

mod spec;
mod table;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

pub use spec::{parse_value, DetectorKind, ExperimentSpec, SweepVar};
pub use table::{load_table, read_table, save_rows, save_table, write_table, RocRecord, SeRecord, TrialRecord, CSV_HEADER};

use crate::amp::run_amp;
use crate::error::{Error, Result};
use crate::metrics::{default_threshold, evaluate, roc_sweep, threshold_grid};
use crate::par;
use crate::rng::derive;
use crate::scenario::{generate_scenario, Scenario, SystemConfig};
use crate::state_evolution::run_se;

/// Everything one experiment produced.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    /// Trial rows followed, per (sweep point, detector), by an aggregate row.
    pub rows: Vec<TrialRecord>,
    pub se: Vec<SeRecord>,
    pub roc: Vec<RocRecord>,
}

impl ExperimentOutput {
    pub fn trial_rows(&self) -> impl Iterator<Item = &TrialRecord> {
        self.rows.iter().filter(|r| !r.is_aggregate())
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &TrialRecord> {
        self.rows.iter().filter(|r| r.is_aggregate())
    }

    /// The aggregate row for one detector at one sweep value.
    pub fn aggregate(&self, detector: DetectorKind, sweep_value: f64) -> Option<&TrialRecord> {
        self.aggregates().find(|r| r.detector == detector.name() && r.sweep_value == sweep_value)
    }

    /// Writes the main table to `path` and, when present, the SE and ROC rows
    /// to `<path>.se.csv` and `<path>.roc.csv`.
    pub fn save(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let mut written = vec![path.to_path_buf()];
        save_table(&self.rows, path)?;
        if !self.se.is_empty() {
            let p = sibling(path, "se");
            save_rows(&self.se, &p)?;
            written.push(p);
        }
        if !self.roc.is_empty() {
            let p = sibling(path, "roc");
            save_rows(&self.roc, &p)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// `out.csv` → `out.<tag>.csv`.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

/// Seed of the scenario shared by all detectors at `(sweep_idx, trial)`.
pub fn scenario_seed(master: u64, sweep_idx: usize, trial: usize) -> u64 {
    derive(master, &[sweep_idx as u64, trial as u64])
}

/// Seed of a detector's own randomness on a given scenario.
pub fn detector_seed(scenario_seed: u64, detector: DetectorKind) -> u64 {
    derive(scenario_seed, &[detector.seed_label()])
}

/// Result of a single trial before it becomes a CSV row.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub se: Vec<SeRecord>,
    pub roc: Vec<RocRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    sweep_idx: usize,
    sweep_value: f64,
    detector: DetectorKind,
    trial: usize,
}

/// Runs one trial of `detector` on the scenario drawn from `seed`. AMP
/// failures (divergence) become a row with a non-`ok` status.
pub fn run_trial(
    spec: &ExperimentSpec,
    detector: DetectorKind,
    seed: u64,
    trial: usize,
    sweep_value: f64,
    with_se: bool,
) -> Result<TrialOutcome> {
    let system = SystemConfig { seed, ..spec.system.clone() };
    let scenario = generate_scenario(&system)?;
    run_trial_on(spec, &scenario, detector, trial, sweep_value, with_se)
}

/// [`run_trial`] on a given scenario; the scenario's own seed keys the
/// detector randomness.
pub fn run_trial_on(
    spec: &ExperimentSpec,
    scenario: &Scenario,
    detector: DetectorKind,
    trial: usize,
    sweep_value: f64,
    with_se: bool,
) -> Result<TrialOutcome> {
    let seed = scenario.config.seed;
    let dseed = detector_seed(seed, detector);
    let denoiser = spec.denoiser(detector, dseed)?;
    let amp = spec.amp_config(detector);
    let mut record = TrialRecord {
        sweep_var: spec.sweep_var.name().to_string(),
        sweep_value,
        detector: detector.name().to_string(),
        trial: trial as i64,
        seed,
        iters: 0,
        converged: false,
        nmse: f64::NAN,
        pfa: f64::NAN,
        pmd: f64::NAN,
        runtime_ms: 0.0,
        status: "ok".to_string(),
    };
    let start = Instant::now();
    let run = run_amp(scenario, &amp, denoiser.as_ref());
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    if spec.record_runtime {
        record.runtime_ms = elapsed;
    }
    let run = match run {
        Ok(run) => run,
        Err(Error::Diverged { iteration, .. }) => {
            record.iters = iteration;
            record.status = "diverged".into();
            return Ok(TrialOutcome { record, se: Vec::new(), roc: Vec::new() });
        }
        Err(e) => return Err(e),
    };
    record.iters = run.iterations();
    record.converged = run.converged;
    let estimate = run.estimate();
    let threshold = spec.threshold.unwrap_or_else(|| default_threshold(estimate.view()));
    match evaluate(estimate.view(), scenario.truth.view(), &scenario.activity, threshold) {
        Ok(det) => {
            record.nmse = det.nmse;
            record.pfa = det.pfa;
            record.pmd = det.pmd;
        }
        Err(Error::ZeroReference) => record.status = "no_active_users".into(),
        Err(e) => return Err(e),
    }

    let mut roc = Vec::new();
    if spec.roc_points > 0 {
        let grid = threshold_grid(estimate.view(), spec.roc_points);
        for p in roc_sweep(estimate.view(), &scenario.activity, &grid)? {
            roc.push(RocRecord {
                sweep_var: record.sweep_var.clone(),
                sweep_value,
                detector: record.detector.clone(),
                trial: record.trial,
                threshold: p.threshold,
                pfa: p.pfa,
                pmd: p.pmd,
            });
        }
    }

    let mut se = Vec::new();
    if with_se && record.status == "ok" {
        let trace = run_se(scenario, &amp, denoiser.as_ref(), &spec.se_params(dseed), run.iterations())?;
        for (t, (tr, p)) in trace.trace_theta().iter().zip(&trace.predicted_nmse).enumerate() {
            se.push(SeRecord {
                sweep_var: record.sweep_var.clone(),
                sweep_value,
                detector: record.detector.clone(),
                trial: record.trial,
                iteration: t,
                trace_theta: *tr,
                predicted_nmse: *p,
                empirical_nmse: run.state.nmse_history.get(t).copied().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(TrialOutcome { record, se, roc })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Mean over the successful trials of one (sweep point, detector) group;
/// diverged trials are excluded. The status carries the count, the sample
/// standard deviation of the NMSE, and the converged fraction.
pub fn aggregate(rows: &[TrialRecord]) -> Option<TrialRecord> {
    let first = rows.first()?;
    let ok: Vec<&TrialRecord> = rows.iter().filter(|r| r.status == "ok").collect();
    let pick = |f: fn(&TrialRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let nmse = pick(|r| r.nmse);
    let (mean_or_nan, n) = (|v: &[f64]| if v.is_empty() { f64::NAN } else { mean(v) }, ok.len());
    let iters = pick(|r| r.iters as f64);
    let conv_frac = if n == 0 { 0.0 } else { ok.iter().filter(|r| r.converged).count() as f64 / n as f64 };
    Some(TrialRecord {
        sweep_var: first.sweep_var.clone(),
        sweep_value: first.sweep_value,
        detector: first.detector.clone(),
        trial: -1,
        seed: 0,
        iters: if n == 0 { 0 } else { mean(&iters).round() as usize },
        converged: n > 0 && conv_frac == 1.0,
        nmse: mean_or_nan(&nmse),
        pfa: mean_or_nan(&pick(|r| r.pfa)),
        pmd: mean_or_nan(&pick(|r| r.pmd)),
        runtime_ms: mean_or_nan(&pick(|r| r.runtime_ms)),
        status: format!(
            "aggregate;n={n};diverged={};nmse_std={};converged_frac={conv_frac}",
            rows.iter().filter(|r| r.status == "diverged").count(),
            std_dev(&nmse)
        ),
    })
}

/// Runs the full grid on a pool of `spec.threads` workers. `progress` is
/// called with `(done, total)` after each trial finishes.
pub fn run_experiment_with_progress(spec: &ExperimentSpec, progress: &(dyn Fn(usize, usize) + Sync)) -> Result<ExperimentOutput> {
    spec.validate()?;
    let points = spec.sweep_points();
    let mut jobs = Vec::new();
    for (sweep_idx, (value, point)) in points.iter().enumerate() {
        for &detector in &spec.detectors {
            for trial in 0..point.trials_for(detector) {
                jobs.push(Job { sweep_idx, sweep_value: *value, detector, trial });
            }
        }
    }
    let total = jobs.len();
    let done = AtomicUsize::new(0);
    let outcomes = par::with_threads(spec.threads, || {
        par::try_map_indexed(total, |i| {
            let job = jobs[i];
            let point = &points[job.sweep_idx].1;
            let seed = scenario_seed(spec.system.seed, job.sweep_idx, job.trial);
            let with_se = spec.se_enabled && job.trial < spec.se_trials;
            let out = run_trial(point, job.detector, seed, job.trial, job.sweep_value, with_se);
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            out
        })
    })?;

    let mut output = ExperimentOutput::default();
    let mut group: Vec<TrialRecord> = Vec::new();
    let mut key = None;
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let k = (job.sweep_idx, job.detector);
        if key.is_some() && key != Some(k) {
            output.rows.extend(aggregate(&group));
            group.clear();
        }
        key = Some(k);
        group.push(outcome.record.clone());
        output.rows.push(outcome.record);
        output.se.extend(outcome.se);
        output.roc.extend(outcome.roc);
    }
    output.rows.extend(aggregate(&group));
    Ok(output)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_experiment_with_progress(spec, &|_, _| {})
}

/// Best `τ` for one detector from a `τ` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TauChoice {
    pub detector: DetectorKind,
    pub tau: f64,
    pub mean_nmse: f64,
}

/// Sweeps `τ` over `taus` and reports, per detector, the value with the
/// lowest mean NMSE among points where no trial diverged.
pub fn calibrate_tau(spec: &ExperimentSpec, taus: &[f64]) -> Result<(ExperimentOutput, Vec<TauChoice>)> {
    if taus.is_empty() {
        return Err(Error::Config("calibrate-tau needs at least one tau value".into()));
    }
    let sweep = ExperimentSpec { sweep_var: SweepVar::Tau, sweep_values: taus.to_vec(), ..spec.clone() };
    let out = run_experiment(&sweep)?;
    let mut choices = Vec::new();
    for &d in &spec.detectors {
        let best = out
            .aggregates()
            .filter(|r| r.detector == d.name() && r.nmse.is_finite() && r.status.contains(";diverged=0;"))
            .min_by(|a, b| a.nmse.total_cmp(&b.nmse));
        if let Some(b) = best {
            choices.push(TauChoice { detector: d, tau: b.sweep_value, mean_nmse: b.nmse });
        }
    }
    Ok((out, choices))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentSpec {
        ExperimentSpec {
            system: SystemConfig {
                n_users: 120,
                n_antennas: 8,
                pilot_len: 60,
                activity_prob: 0.1,
                paths_max: 2,
                snr_override_db: Some(30.0),
                seed: 5,
                ..SystemConfig::default()
            },
            trials: 2,
            max_iters: 20,
            se_mc_samples: 10,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn single_trial_gives_row_plus_aggregate() {
        let spec = ExperimentSpec { detectors: vec![DetectorKind::Gst], trials: 1, ..small() };
        let out = run_experiment(&spec).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].trial, 0);
        assert_eq!(out.rows[1].trial, -1);
        assert_eq!(out.rows[0].nmse, out.rows[1].nmse);
    }

    #[test]
    fn sweep_is_cartesian_and_ordered() {
        let spec = ExperimentSpec {
            sweep_var: SweepVar::M,
            sweep_values: vec![4.0, 8.0],
            detectors: vec![DetectorKind::Gst, DetectorKind::Ht],
            ..small()
        };
        let out = run_experiment(&spec).unwrap();
        assert_eq!(out.trial_rows().count(), 2 * 2 * 2);
        assert_eq!(out.aggregates().count(), 4);
        let order: Vec<(f64, String, i64)> = out.rows.iter().map(|r| (r.sweep_value, r.detector.clone(), r.trial)).collect();
        assert_eq!(order[0], (4.0, "gst".into(), 0));
        assert_eq!(order[2], (4.0, "gst".into(), -1));
        assert_eq!(order[3], (4.0, "ht".into(), 0));
        assert_eq!(order[6], (8.0, "gst".into(), 0));
        // detectors share the scenario of a trial
        assert_eq!(out.rows[0].seed, out.rows[3].seed);
        assert_ne!(out.rows[0].seed, out.rows[1].seed);
        assert_ne!(out.rows[0].seed, out.rows[6].seed);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let spec = ExperimentSpec { detectors: vec![DetectorKind::Gst, DetectorKind::Samp], roc_points: 4, ..small() };
        let a = run_experiment(&ExperimentSpec { threads: 1, ..spec.clone() }).unwrap();
        let b = run_experiment(&ExperimentSpec { threads: 3, ..spec }).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_table(&a.rows, &mut x).unwrap();
        write_table(&b.rows, &mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.roc, b.roc);
    }

    #[test]
    fn se_pairs_are_written() {
        let spec = ExperimentSpec { detectors: vec![DetectorKind::Gst], se_enabled: true, ..small() };
        let out = run_experiment(&spec).unwrap();
        let iters = out.rows[0].iters;
        assert_eq!(out.se.len(), iters + 1);
        assert!(out.se.iter().all(|r| r.trial == 0));
        assert!((out.se[0].predicted_nmse - 1.0).abs() < 1e-12);
        assert_eq!(out.se[0].empirical_nmse, 1.0);
    }

    #[test]
    fn aggregate_skips_diverged() {
        let mk = |status: &str, nmse: f64, conv: bool| TrialRecord {
            sweep_var: "none".into(),
            sweep_value: 0.0,
            detector: "gst".into(),
            trial: 0,
            seed: 1,
            iters: 10,
            converged: conv,
            nmse,
            pfa: 0.0,
            pmd: 0.0,
            runtime_ms: 0.0,
            status: status.into(),
        };
        let agg = aggregate(&[mk("ok", 0.1, true), mk("diverged", f64::NAN, false), mk("ok", 0.3, false)]).unwrap();
        assert!((agg.nmse - 0.2).abs() < 1e-15);
        assert!(agg.status.starts_with("aggregate;n=2;diverged=1;"));
        assert!(agg.status.ends_with("converged_frac=0.5"));
        assert!(!agg.converged);
        assert!(aggregate(&[]).is_none());
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("/tmp/out.csv"), "se"), PathBuf::from("/tmp/out.se.csv"));
        assert_eq!(sibling(Path::new("res"), "roc"), PathBuf::from("res.roc.csv"));
    }

    #[test]
    fn calibration_picks_lowest_nmse() {
        let spec = ExperimentSpec { detectors: vec![DetectorKind::Gst], trials: 1, ..small() };
        let (out, best) = calibrate_tau(&spec, &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(best.len(), 1);
        let min = out.aggregates().map(|r| r.nmse).fold(f64::INFINITY, f64::min);
        assert_eq!(best[0].mean_nmse, min);
        assert!(calibrate_tau(&spec, &[]).is_err());
    }
}
