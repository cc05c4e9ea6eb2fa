use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// System parameters for one synthetic uplink instance.
///
/// Powers are handled in milliwatts. The received per-path power is
/// `tx_power_dbm + pathloss_db`; the noise power is the thermal density
/// integrated over `bandwidth_hz`, unless `snr_override_db` pins it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_users: usize,
    pub n_antennas: usize,
    pub pilot_len: usize,
    pub activity_prob: f64,
    pub paths_min: usize,
    pub paths_max: usize,
    pub tx_power_dbm: f64,
    pub pathloss_db: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_override_db: Option<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_antennas: 32,
            pilot_len: 1000,
            activity_prob: 0.05,
            paths_min: 1,
            paths_max: 4,
            tx_power_dbm: 30.0,
            pathloss_db: -94.0,
            noise_psd_dbm_hz: -174.0,
            bandwidth_hz: 100e6,
            seed: 0,
            snr_override_db: None,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_users == 0 || self.n_antennas == 0 || self.pilot_len == 0 {
            return bad("n_users, n_antennas and pilot_len must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.activity_prob) {
            return bad("activity_prob must lie in [0, 1]");
        }
        if self.paths_min == 0 || self.paths_min > self.paths_max {
            return bad("need 1 <= paths_min <= paths_max");
        }
        if self.paths_max > self.n_antennas {
            return bad("paths_max must not exceed n_antennas");
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth_hz must be positive");
        }
        let finite = [self.tx_power_dbm, self.pathloss_db, self.noise_psd_dbm_hz];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("power figures must be finite");
        }
        if let Some(s) = self.snr_override_db {
            if s.is_nan() || s == f64::NEG_INFINITY {
                return bad("snr_override_db must be a number (+inf means noiseless)");
            }
        }
        Ok(())
    }

    /// Linear received power per unit-gain path after pathloss (mW).
    pub fn received_power(&self) -> f64 {
        db_to_linear(self.tx_power_dbm + self.pathloss_db)
    }

    /// Thermal noise power over the bandwidth (mW).
    pub fn thermal_noise_power(&self) -> f64 {
        db_to_linear(self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10())
    }

    /// Mean number of paths per active user.
    pub fn mean_paths(&self) -> f64 {
        0.5 * (self.paths_min + self.paths_max) as f64
    }

    /// Expected received signal power per antenna of an active user,
    /// `ρ E‖h‖² / M` with `E‖h‖² = E[L]` for unit-norm atoms and unit-variance
    /// gains (mW).
    pub fn per_antenna_signal_power(&self) -> f64 {
        self.received_power() * self.mean_paths() / self.n_antennas as f64
    }

    /// Link-budget SNR `ρ / σ_w²` in dB (per unit-gain path).
    pub fn link_snr_db(&self) -> f64 {
        10.0 * (self.received_power() / self.noise_variance()).log10()
    }

    /// Per-antenna SNR in dB: expected per-antenna signal power over `σ_w²`.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.per_antenna_signal_power() / self.noise_variance()).log10()
    }

    /// Noise variance `σ_w²` per received sample (mW). An SNR override is
    /// interpreted as the per-antenna SNR of [`Self::snr_db`].
    pub fn noise_variance(&self) -> f64 {
        match self.snr_override_db {
            Some(snr) => self.per_antenna_signal_power() / db_to_linear(snr),
            None => self.thermal_noise_power(),
        }
    }

    pub fn expected_active(&self) -> f64 {
        self.activity_prob * self.n_users as f64
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}
