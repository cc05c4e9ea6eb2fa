use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::amp::AmpConfig;
use crate::denoise::{build_dictionary, Denoiser, GreedyConfig, GstDenoiser, HtDenoiser, HtParams, SmoothingConfig, SrDenoiser};
use crate::error::{Error, Result};
use crate::scenario::SystemConfig;
use crate::state_evolution::SeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Gst,
    Ht,
    Samp,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Gst, DetectorKind::Ht, DetectorKind::Samp];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Gst => "gst",
            DetectorKind::Ht => "ht",
            DetectorKind::Samp => "samp",
        }
    }

    /// Label mixed into the detector's seed.
    pub(crate) fn seed_label(self) -> u64 {
        match self {
            DetectorKind::Gst => 1,
            DetectorKind::Ht => 2,
            DetectorKind::Samp => 3,
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gst" => Ok(DetectorKind::Gst),
            "ht" => Ok(DetectorKind::Ht),
            "samp" | "s-amp" | "sr" => Ok(DetectorKind::Samp),
            other => Err(Error::Config(format!("unknown detector {other:?} (expected gst, ht or samp)"))),
        }
    }
}

/// The quantity varied across sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    #[serde(rename = "none")]
    None,
    /// Antenna count `M`.
    M,
    /// Expected number of active users; sets `activity_prob = K / N`.
    K,
    /// Pilot length `Q`.
    Q,
    /// Per-antenna SNR override in dB.
    #[serde(rename = "snr_db")]
    SnrDb,
    /// Threshold multiplier `τ`, applied to every detector.
    #[serde(rename = "tau")]
    Tau,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::None => "none",
            SweepVar::M => "M",
            SweepVar::K => "K",
            SweepVar::Q => "Q",
            SweepVar::SnrDb => "snr_db",
            SweepVar::Tau => "tau",
        }
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "" => Ok(SweepVar::None),
            "M" | "m" => Ok(SweepVar::M),
            "K" | "k" => Ok(SweepVar::K),
            "Q" | "q" => Ok(SweepVar::Q),
            "snr_db" | "snr" => Ok(SweepVar::SnrDb),
            "tau" => Ok(SweepVar::Tau),
            other => Err(Error::Config(format!("unknown sweep variable {other:?}"))),
        }
    }
}

/// Everything needed to reproduce an experiment. Serialized as one flat
/// table: the [`SystemConfig`] keys sit next to the run options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub system: SystemConfig,
    pub detectors: Vec<DetectorKind>,
    pub tau_gst: f64,
    pub tau_ht: f64,
    pub tau_samp: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub divergence_factor: f64,
    pub ht_oversample: f64,
    pub ht_smooth_eps: f64,
    pub ht_smoothing: bool,
    pub samp_grid_oversample: usize,
    pub samp_max_atoms: usize,
    pub samp_prune_rel: f64,
    pub samp_res_tol_factor: f64,
    pub samp_j1: usize,
    pub samp_j2: usize,
    pub samp_smooth_rel: f64,
    pub samp_fd_rel: f64,
    pub se_enabled: bool,
    /// Trials per (sweep point, detector) that get a paired SE trace.
    pub se_trials: usize,
    pub se_mc_samples: usize,
    pub se_user_subsample: usize,
    pub sweep_var: SweepVar,
    pub sweep_values: Vec<f64>,
    /// Trials per sweep point for GST and HT.
    pub trials: usize,
    /// Trials per sweep point for S-AMP; `min(trials, 20)` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samp_trials: Option<usize>,
    /// Detection threshold `ς`; chosen per run when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// ROC grid size per trial; `0` disables the ROC file.
    pub roc_points: usize,
    /// Worker threads; `0` uses every available core.
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_path: Option<PathBuf>,
    /// Wall-clock runtimes in the CSV. Off by default so identical specs give
    /// byte-identical files.
    pub record_runtime: bool,
}

/// Keys that serialize only when set.
const OPTIONAL_KEYS: [&str; 4] = ["snr_override_db", "samp_trials", "threshold", "out_path"];

impl Default for ExperimentSpec {
    fn default() -> Self {
        let greedy = GreedyConfig::default();
        let smoothing = SmoothingConfig::default();
        let se = SeParams::default();
        let amp = AmpConfig::default();
        Self {
            system: SystemConfig { snr_override_db: Some(30.0), ..SystemConfig::default() },
            detectors: DetectorKind::ALL.to_vec(),
            tau_gst: 1.0,
            tau_ht: 3.0,
            tau_samp: 4.5,
            max_iters: amp.max_iters,
            conv_tol: amp.conv_tol,
            divergence_factor: amp.divergence_factor,
            ht_oversample: 4.0,
            ht_smooth_eps: 0.05,
            ht_smoothing: true,
            samp_grid_oversample: greedy.grid_oversample,
            samp_max_atoms: greedy.max_atoms,
            samp_prune_rel: greedy.prune_rel,
            samp_res_tol_factor: greedy.res_tol_factor,
            samp_j1: smoothing.j1,
            samp_j2: smoothing.j2,
            samp_smooth_rel: smoothing.smooth_rel,
            samp_fd_rel: smoothing.fd_rel,
            se_enabled: false,
            se_trials: 1,
            se_mc_samples: se.mc_samples,
            se_user_subsample: se.user_subsample,
            sweep_var: SweepVar::None,
            sweep_values: Vec::new(),
            trials: 100,
            samp_trials: None,
            threshold: None,
            roc_points: 0,
            threads: 0,
            out_path: None,
            record_runtime: false,
        }
    }
}

/// Parses a command-line value as a TOML value, falling back to a plain
/// string (`gst` rather than `"gst"`).
pub fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => {
            // comma lists of bare words, e.g. `gst,ht`
            if raw.contains(',') {
                toml::Value::Array(raw.split(',').map(|p| parse_value(p.trim())).collect())
            } else {
                toml::Value::String(raw.to_string())
            }
        }
    }
}

impl ExperimentSpec {
    /// Every key accepted in the flat config table.
    pub fn known_keys() -> Vec<String> {
        let table = toml::Table::try_from(ExperimentSpec::default()).expect("spec serializes to a table");
        let mut keys: Vec<String> = table.keys().cloned().collect();
        for k in OPTIONAL_KEYS {
            if !keys.iter().any(|e| e == k) {
                keys.push(k.to_string());
            }
        }
        keys.sort();
        keys
    }

    /// Builds a spec from a flat table, rejecting unknown keys.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let known = Self::known_keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {unknown:?}")));
        }
        // overlay on the serialized defaults so flattened fields keep the
        // experiment defaults; an optional key set to "none" is cleared
        let mut merged = toml::Table::try_from(ExperimentSpec::default()).expect("spec serializes to a table");
        for (k, v) in table {
            if OPTIONAL_KEYS.contains(&k.as_str()) && v.as_str() == Some("none") {
                merged.remove(&k);
            } else {
                merged.insert(k, v);
            }
        }
        let spec: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    /// Reads a config file (if any), applies `key=value` overrides on top,
    /// and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        Self::from_table(table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat spec always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.system.validate()?;
        if self.detectors.is_empty() {
            return bad("detector list is empty".into());
        }
        if self.trials == 0 || self.samp_trials == Some(0) {
            return bad("trials must be at least 1".into());
        }
        if self.sweep_var != SweepVar::None && self.sweep_values.is_empty() {
            return bad(format!("sweep over {} needs sweep_values", self.sweep_var.name()));
        }
        if let Some(v) = self.sweep_values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return bad(format!("sweep values must be positive and finite, got {v}"));
        }
        if matches!(self.sweep_var, SweepVar::M | SweepVar::Q) {
            if let Some(v) = self.sweep_values.iter().find(|v| v.fract() != 0.0) {
                return bad(format!("{} sweep values must be integers, got {v}", self.sweep_var.name()));
            }
        }
        if let Some(s) = self.threshold {
            if !(s >= 0.0) {
                return bad("threshold must be nonnegative".into());
            }
        }
        if self.se_enabled && self.se_trials == 0 {
            return bad("se_trials must be at least 1 when SE is enabled".into());
        }
        for p in self.points() {
            p.system.validate()?;
            for &d in &self.detectors {
                p.amp_config(d).validate()?;
            }
            p.greedy_config().validate()?;
            p.smoothing_config(0).validate()?;
            if self.detectors.contains(&DetectorKind::Ht) {
                HtParams { smoothing_enabled: p.ht_smoothing, smooth_eps: p.ht_smooth_eps, ..HtParams::new(build_dictionary(1, p.ht_oversample)?) }
                    .validate()?;
            }
        }
        self.se_params(0).validate()
    }

    pub fn tau(&self, d: DetectorKind) -> f64 {
        match d {
            DetectorKind::Gst => self.tau_gst,
            DetectorKind::Ht => self.tau_ht,
            DetectorKind::Samp => self.tau_samp,
        }
    }

    pub fn trials_for(&self, d: DetectorKind) -> usize {
        match d {
            DetectorKind::Samp => self.samp_trials.unwrap_or(self.trials.min(20)),
            _ => self.trials,
        }
    }

    pub fn amp_config(&self, d: DetectorKind) -> AmpConfig {
        AmpConfig { tau: self.tau(d), max_iters: self.max_iters, conv_tol: self.conv_tol, divergence_factor: self.divergence_factor }
    }

    pub fn greedy_config(&self) -> GreedyConfig {
        GreedyConfig {
            grid_oversample: self.samp_grid_oversample,
            max_atoms: self.samp_max_atoms,
            prune_rel: self.samp_prune_rel,
            res_tol_factor: self.samp_res_tol_factor,
            ..GreedyConfig::default()
        }
    }

    pub fn smoothing_config(&self, seed: u64) -> SmoothingConfig {
        SmoothingConfig { j1: self.samp_j1, j2: self.samp_j2, smooth_rel: self.samp_smooth_rel, fd_rel: self.samp_fd_rel, seed }
    }

    pub fn se_params(&self, seed: u64) -> SeParams {
        SeParams { mc_samples: self.se_mc_samples, user_subsample: self.se_user_subsample, seed }
    }

    /// Builds the denoiser for `d` at this spec's antenna count; `seed` keys
    /// the S-AMP smoothing draws.
    pub fn denoiser(&self, d: DetectorKind, seed: u64) -> Result<Box<dyn Denoiser>> {
        let m = self.system.n_antennas;
        Ok(match d {
            DetectorKind::Gst => Box::new(GstDenoiser),
            DetectorKind::Ht => {
                let params = HtParams {
                    smooth_eps: self.ht_smooth_eps,
                    smoothing_enabled: self.ht_smoothing,
                    ..HtParams::new(build_dictionary(m, self.ht_oversample)?)
                };
                Box::new(HtDenoiser::new(params)?)
            }
            DetectorKind::Samp => Box::new(SrDenoiser::new(m, self.greedy_config(), self.smoothing_config(seed))?),
        })
    }

    /// The spec specialized to one sweep value.
    pub fn at(&self, value: f64) -> ExperimentSpec {
        let mut s = self.clone();
        match self.sweep_var {
            SweepVar::None => {}
            SweepVar::M => s.system.n_antennas = value as usize,
            SweepVar::K => s.system.activity_prob = (value / s.system.n_users as f64).min(1.0),
            SweepVar::Q => s.system.pilot_len = value as usize,
            SweepVar::SnrDb => s.system.snr_override_db = Some(value),
            SweepVar::Tau => {
                s.tau_gst = value;
                s.tau_ht = value;
                s.tau_samp = value;
            }
        }
        s
    }

    /// `(value, specialized spec)` for every sweep point; one point with value
    /// `0` when nothing is swept.
    pub fn sweep_points(&self) -> Vec<(f64, ExperimentSpec)> {
        if self.sweep_var == SweepVar::None {
            return vec![(0.0, self.clone())];
        }
        self.sweep_values.iter().map(|&v| (v, self.at(v))).collect()
    }

    fn points(&self) -> Vec<ExperimentSpec> {
        self.sweep_points().into_iter().map(|(_, s)| s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let spec = ExperimentSpec { samp_trials: Some(7), threshold: Some(0.5), ..ExperimentSpec::default() };
        let text = spec.to_toml_string();
        assert!(!text.contains("[system]"));
        assert_eq!(ExperimentSpec::from_toml_str(&text).unwrap(), spec);
    }

    #[test]
    fn flat_keys_are_field_names() {
        let keys = ExperimentSpec::known_keys();
        for k in ["n_antennas", "snr_override_db", "tau_gst", "trials", "sweep_var", "out_path", "seed"] {
            assert!(keys.iter().any(|e| e == k), "{k}");
        }
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(ExperimentSpec::from_toml_str("bogus = 1"), Err(Error::Config(_))));
        assert!(ExperimentSpec::from_toml_str("trials = 0").is_err());
        assert!(ExperimentSpec::from_toml_str("detectors = []").is_err());
        assert!(ExperimentSpec::from_toml_str("detectors = [\"lasso\"]").is_err());
        assert!(ExperimentSpec::from_toml_str("sweep_var = \"M\"").is_err());
        assert!(ExperimentSpec::from_toml_str("sweep_var = \"M\"\nsweep_values = [16.5]").is_err());
        assert!(ExperimentSpec::from_toml_str("sweep_var = \"snr_db\"\nsweep_values = [-3.0]").is_err());
        assert!(ExperimentSpec::from_toml_str("tau_gst = -1.0").is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.toml");
        std::fs::write(&path, "trials = 5\nn_antennas = 16\n").unwrap();
        let spec = ExperimentSpec::load(Some(&path), &[("trials".into(), parse_value("9"))]).unwrap();
        assert_eq!((spec.trials, spec.system.n_antennas), (9, 16));
        let missing = ExperimentSpec::load(Some(&dir.path().join("nope.toml")), &[]);
        assert!(matches!(missing, Err(Error::Io(_))));
    }

    #[test]
    fn experiment_defaults_survive_flattening() {
        let spec = ExperimentSpec::from_toml_str("trials = 3").unwrap();
        assert_eq!(spec.system.snr_override_db, Some(30.0));
        let physical = ExperimentSpec::from_toml_str("snr_override_db = \"none\"").unwrap();
        assert_eq!(physical.system.snr_override_db, None);
        assert!(ExperimentSpec::from_toml_str("snr_override_db = \"loud\"").is_err());
    }

    #[test]
    fn value_parsing() {
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("2.5"), toml::Value::Float(2.5));
        assert_eq!(parse_value("true"), toml::Value::Boolean(true));
        assert_eq!(parse_value("gst"), toml::Value::String("gst".into()));
        assert_eq!(
            parse_value("gst,ht"),
            toml::Value::Array(vec![toml::Value::String("gst".into()), toml::Value::String("ht".into())])
        );
        assert_eq!(parse_value("[16, 32]"), toml::Value::Array(vec![toml::Value::Integer(16), toml::Value::Integer(32)]));
    }

    #[test]
    fn sweep_points_specialize() {
        let spec = ExperimentSpec {
            sweep_var: SweepVar::K,
            sweep_values: vec![50.0, 100.0],
            ..ExperimentSpec::default()
        };
        let pts = spec.sweep_points();
        assert_eq!(pts.len(), 2);
        assert!((pts[1].1.system.activity_prob - 0.05).abs() < 1e-15);
        let tau = ExperimentSpec { sweep_var: SweepVar::Tau, sweep_values: vec![2.0], ..ExperimentSpec::default() };
        let p = &tau.sweep_points()[0].1;
        assert_eq!((p.tau_gst, p.tau_ht, p.tau_samp), (2.0, 2.0, 2.0));
        assert_eq!(ExperimentSpec::default().sweep_points().len(), 1);
    }

    #[test]
    fn samp_trials_default_caps_at_twenty() {
        let spec = ExperimentSpec::default();
        assert_eq!(spec.trials_for(DetectorKind::Gst), 100);
        assert_eq!(spec.trials_for(DetectorKind::Samp), 20);
        let small = ExperimentSpec { trials: 3, ..spec };
        assert_eq!(small.trials_for(DetectorKind::Samp), 3);
    }

    #[test]
    fn detector_names_parse() {
        for d in DetectorKind::ALL {
            assert_eq!(d.name().parse::<DetectorKind>().unwrap(), d);
        }
        assert!("x".parse::<DetectorKind>().is_err());
    }
}
