//! Synthetic mmWave uplink instances: `Y = U X + Z` with multipath rows
//! `x_n = Σ_ℓ c_{n,ℓ} a(f_{n,ℓ})` for the active users.

mod config;
mod io;

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng;

pub use config::{db_to_linear, SystemConfig};
pub use io::{load_scenario, read_scenario, save_scenario, write_scenario, MAGIC};

use crate::error::{Error, Result};
use crate::linalg::{complex_normal, C64, ZERO};
use crate::rng;

/// Unit-norm uniform-linear-array response, element `m` equal to
/// `exp(j2π m f) / √M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(pub Array1<C64>);

impl SteeringVector {
    pub fn values(&self) -> &Array1<C64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<C64> {
        self.0
    }
}

pub fn steering(f: f64, m: usize) -> Result<SteeringVector> {
    if !(0.0..1.0).contains(&f) {
        return Err(Error::FrequencyOutOfRange(f));
    }
    if m == 0 {
        return Err(Error::Dimension("steering vector needs M >= 1".into()));
    }
    Ok(SteeringVector(steering_unchecked(f, m)))
}

/// Steering vector without range checks; `f` may be any real (the response
/// is 1-periodic in `f`).
pub fn steering_unchecked(f: f64, m: usize) -> Array1<C64> {
    let scale = 1.0 / (m as f64).sqrt();
    Array1::from_shape_fn(m, |k| C64::from_polar(scale, 2.0 * PI * k as f64 * f))
}

/// Maps an angle of arrival to a normalized spatial frequency in `[0, 1)`
/// using `f = d sin θ / (2 λ_w)`.
pub fn angle_to_frequency(theta_rad: f64, spacing: f64, wavelength: f64) -> f64 {
    (spacing * theta_rad.sin() / (2.0 * wavelength)).rem_euclid(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub frequency: f64,
    pub gain: C64,
}

/// One multipath channel draw together with its components.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub paths: Vec<Path>,
    pub h: Array1<C64>,
}

/// Synthesizes `Σ_ℓ c_ℓ a(f_ℓ)`.
pub fn synthesize(paths: &[Path], m: usize) -> Array1<C64> {
    let mut h = Array1::from_elem(m, ZERO);
    for p in paths {
        h.scaled_add(p.gain, &steering_unchecked(p.frequency, m));
    }
    h
}

/// Draws `L` paths with `c ~ CN(0,1)` and `f ~ U[0,1)`.
pub fn generate_channel<R: Rng + ?Sized>(rng: &mut R, paths: usize, m: usize) -> Result<ChannelDraw> {
    if paths == 0 || m == 0 {
        return Err(Error::Dimension("need L >= 1 and M >= 1".into()));
    }
    if paths > m {
        return Err(Error::TooManyPaths { paths, antennas: m });
    }
    let paths: Vec<Path> = (0..paths)
        .map(|_| {
            let frequency = rng.random::<f64>();
            let gain = complex_normal(rng);
            Path { frequency, gain }
        })
        .collect();
    let h = synthesize(&paths, m);
    Ok(ChannelDraw { paths, h })
}

/// QPSK pilots scaled so every entry has magnitude `1/√Q`.
pub fn generate_pilots<R: Rng + ?Sized>(rng: &mut R, q: usize, n: usize) -> Array2<C64> {
    let a = 1.0 / (2.0 * q as f64).sqrt();
    Array2::from_shape_simple_fn((q, n), || {
        let bits: u8 = rng.random();
        let re = if bits & 1 == 0 { a } else { -a };
        let im = if bits & 2 == 0 { a } else { -a };
        C64::new(re, im)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SystemConfig,
    /// `Q × N` pilot matrix.
    pub pilots: Array2<C64>,
    /// `N × M` ground truth, row `n` is `x_n^T`.
    pub truth: Array2<C64>,
    /// `Q × M` received block.
    pub observation: Array2<C64>,
    pub activity: Vec<bool>,
    /// Paths of every user; empty for inactive users. Gains include the
    /// received-power scaling.
    pub paths: Vec<Vec<Path>>,
    pub noise_var: f64,
}

impl Scenario {
    pub fn n_users(&self) -> usize {
        self.truth.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.truth.ncols()
    }

    pub fn pilot_len(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn active_count(&self) -> usize {
        self.activity.iter().filter(|&&a| a).count()
    }

    /// The noise realization `Y − U X`.
    pub fn noise(&self) -> Array2<C64> {
        &self.observation - &self.pilots.dot(&self.truth)
    }
}

/// Generates a scenario from `config.seed`.
pub fn generate_scenario(config: &SystemConfig) -> Result<Scenario> {
    generate_scenario_with_noise(config).map(|(s, _)| s)
}

/// Like [`generate_scenario`], also returning the exact noise draw `Z`.
pub fn generate_scenario_with_noise(config: &SystemConfig) -> Result<(Scenario, Array2<C64>)> {
    config.validate()?;
    let (n, m, q) = (config.n_users, config.n_antennas, config.pilot_len);
    let mut pilot_rng = rng::stream(config.seed, &[0]);
    let mut user_rng = rng::stream(config.seed, &[1]);
    let mut noise_rng = rng::stream(config.seed, &[2]);

    let pilots = generate_pilots(&mut pilot_rng, q, n);
    let amp = config.received_power().sqrt();

    let mut truth = Array2::from_elem((n, m), ZERO);
    let mut activity = vec![false; n];
    let mut paths = vec![Vec::new(); n];
    for user in 0..n {
        if user_rng.random::<f64>() >= config.activity_prob {
            continue;
        }
        activity[user] = true;
        let l = user_rng.random_range(config.paths_min..=config.paths_max);
        let draw = generate_channel(&mut user_rng, l, m)?;
        let scaled: Vec<Path> = draw
            .paths
            .iter()
            .map(|p| Path { frequency: p.frequency, gain: p.gain * amp })
            .collect();
        truth.row_mut(user).assign(&synthesize(&scaled, m));
        paths[user] = scaled;
    }

    let noise_var = config.noise_variance();
    let sd = noise_var.sqrt();
    let noise = Array2::from_shape_simple_fn((q, m), || complex_normal(&mut noise_rng) * sd);
    let observation = pilots.dot(&truth) + &noise;

    let scenario = Scenario { config: config.clone(), pilots, truth, observation, activity, paths, noise_var };
    Ok((scenario, noise))
}
