//! Compares the data-parallel core against a single worker.
//!
//! Both variants run the same code; the single-worker variant pins the rayon
//! pool to one thread and the pool variant uses every core. Building with
//! `--no-default-features` runs the pure sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

use ampdet::amp::{run_amp, AmpConfig};
use ampdet::denoise::{build_dictionary, Denoiser, GstDenoiser, HtDenoiser, HtParams, Level};
use ampdet::linalg::complex_normal;
use ampdet::{par, rng};
use ampdet::scenario::{generate_scenario, SystemConfig};

fn config() -> SystemConfig {
    SystemConfig { n_users: 1000, pilot_len: 500, n_antennas: 32, activity_prob: 0.05, seed: 11, ..SystemConfig::default() }
}

fn bench_rows(c: &mut Criterion) {
    let sc = generate_scenario(&config()).unwrap();
    let mut r = rng::stream(12, &[]);
    let inputs = &sc.truth + &Array2::from_shape_simple_fn(sc.truth.dim(), || complex_normal(&mut r) * 0.01);
    let level = Level::new(0.01, 0.03);
    let ht = HtDenoiser::new(HtParams::new(build_dictionary(32, 4.0).unwrap())).unwrap();
    let mut g = c.benchmark_group("denoise_rows");
    for (label, threads) in [("single", 1), ("pool", 0)] {
        g.bench_with_input(BenchmarkId::new("ht", label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || ht.denoise_rows(inputs.view(), level).unwrap()))
        });
    }
    g.finish();
}

fn bench_amp(c: &mut Criterion) {
    let sc = generate_scenario(&config()).unwrap();
    let cfg = AmpConfig::with_tau(1.0);
    let mut g = c.benchmark_group("amp_gst");
    g.sample_size(10);
    for (label, threads) in [("single", 1), ("pool", 0)] {
        g.bench_with_input(BenchmarkId::new("run", label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || run_amp(&sc, &cfg, &GstDenoiser).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_rows, bench_amp);
criterion_main!(benches);
