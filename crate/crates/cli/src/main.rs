use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ampdet::experiment::{
    calibrate_tau, parse_value, run_experiment_with_progress, run_trial_on, save_rows, DetectorKind, ExperimentOutput,
    ExperimentSpec, SweepVar,
};
use ampdet::scenario::{generate_scenario, load_scenario, save_scenario};
use ampdet::{Error, Result};

/// AMP activity detection and mmWave channel estimation simulator.
#[derive(Debug, Parser)]
#[command(name = "ampdet", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Debug, Args)]
struct Common {
    /// Flat TOML file keyed by experiment field names.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set n_antennas=64` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials per sweep point (GST/HT; S-AMP uses samp_trials).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output path.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated detectors: gst, ht, samp.
    #[arg(long, global = true, value_delimiter = ',')]
    detectors: Option<Vec<String>>,
    /// Suppress the progress line.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw one scenario and save it in the binary scenario format.
    Generate,
    /// Run all detectors at a single operating point.
    Run,
    /// Run all detectors over a sweep of one parameter.
    Sweep {
        /// Swept parameter: M, K, Q, snr_db or tau.
        #[arg(long)]
        var: Option<String>,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Pair one AMP run per detector with its state-evolution prediction.
    Se {
        /// Use a saved scenario instead of drawing one.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Sweep τ and report the value with the lowest mean NMSE per detector.
    CalibrateTau {
        /// Comma-separated τ candidates.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3,3.5,4,4.5,5")]
        taus: Vec<f64>,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

fn overrides(common: &Common) -> Result<Vec<(String, toml::Value)>> {
    let mut out = Vec::new();
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        out.push((k.trim().to_string(), parse_value(v.trim())));
    }
    if let Some(seed) = common.seed {
        out.push(("seed".into(), toml::Value::Integer(seed as i64)));
    }
    if let Some(t) = common.trials {
        out.push(("trials".into(), toml::Value::Integer(t as i64)));
    }
    if let Some(t) = common.threads {
        out.push(("threads".into(), toml::Value::Integer(t as i64)));
    }
    if let Some(p) = &common.out {
        out.push(("out_path".into(), toml::Value::String(p.to_string_lossy().into_owned())));
    }
    if let Some(ds) = &common.detectors {
        let list = ds.iter().map(|d| d.parse::<DetectorKind>().map(|k| toml::Value::String(k.name().into())));
        out.push(("detectors".into(), toml::Value::Array(list.collect::<Result<_>>()?)));
    }
    Ok(out)
}

fn out_path(spec: &ExperimentSpec, default: &str) -> PathBuf {
    spec.out_path.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn progress(quiet: bool) -> impl Fn(usize, usize) + Sync {
    move |done, total| {
        if !quiet {
            eprint!("\r{done}/{total} trials");
            if done == total {
                eprintln!();
            }
            let _ = std::io::stderr().flush();
        }
    }
}

fn report(out: &ExperimentOutput, path: &Path) -> Result<()> {
    for p in out.save(path)? {
        println!("wrote {}", p.display());
    }
    for r in out.aggregates() {
        println!("{}={} {:<4} mean nmse {:.5}  pfa {:.4}  pmd {:.4}  {}", r.sweep_var, r.sweep_value, r.detector, r.nmse, r.pfa, r.pmd, r.status);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let mut spec = ExperimentSpec::load(cli.common.config.as_deref(), &overrides(&cli.common)?)?;
    let quiet = cli.common.quiet;
    match cli.command {
        Command::Config => print!("{}", spec.to_toml_string()),
        Command::Generate => {
            let scenario = generate_scenario(&spec.system)?;
            let path = out_path(&spec, "scenario.bin");
            save_scenario(&scenario, &path)?;
            println!(
                "wrote {} (N={} M={} Q={} active={} noise_var={:e} snr_db={:.2})",
                path.display(),
                scenario.n_users(),
                scenario.n_antennas(),
                scenario.pilot_len(),
                scenario.active_count(),
                scenario.noise_var,
                spec.system.snr_db()
            );
        }
        Command::Run => {
            spec.sweep_var = SweepVar::None;
            let out = run_experiment_with_progress(&spec, &progress(quiet))?;
            report(&out, &out_path(&spec, "results.csv"))?;
        }
        Command::Sweep { var, values } => {
            if let Some(v) = var {
                spec.sweep_var = v.parse()?;
            }
            if let Some(v) = values {
                spec.sweep_values = v;
            }
            if spec.sweep_var == SweepVar::None {
                return Err(Error::Config("sweep needs a sweep variable (--var or sweep_var)".into()));
            }
            spec.validate()?;
            let out = run_experiment_with_progress(&spec, &progress(quiet))?;
            report(&out, &out_path(&spec, "sweep.csv"))?;
        }
        Command::Se { scenario } => {
            let scenario = match scenario {
                Some(p) => load_scenario(p)?,
                None => generate_scenario(&spec.system)?,
            };
            if scenario.n_antennas() != spec.system.n_antennas {
                spec.system.n_antennas = scenario.n_antennas();
            }
            let mut rows = Vec::new();
            for &d in &spec.detectors {
                let t = run_trial_on(&spec, &scenario, d, 0, 0.0, true)?;
                let last = t.se.last();
                println!(
                    "{:<4} iters {:>2} empirical nmse {:.5} predicted {:.5} ({})",
                    d.name(),
                    t.record.iters,
                    t.record.nmse,
                    last.map_or(f64::NAN, |r| r.predicted_nmse),
                    t.record.status
                );
                rows.extend(t.se);
            }
            let path = out_path(&spec, "se.csv");
            save_rows(&rows, &path)?;
            println!("wrote {}", path.display());
        }
        Command::CalibrateTau { taus } => {
            let (out, best) = calibrate_tau(&spec, &taus)?;
            report(&out, &out_path(&spec, "calibrate_tau.csv"))?;
            for b in best {
                println!("best tau for {}: {} (mean nmse {:.5})", b.detector, b.tau, b.mean_nmse);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Csv(_) | Error::Format(_) | Error::Truncated(_) | Error::Inconsistent(_) => 3,
        Error::Config(_) | Error::FrequencyOutOfRange(_) | Error::TooManyPaths { .. } | Error::Dimension(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
