//! Scenario orchestration: build the configuration, execute the requested
//! run, and write the output files atomically.

use crate::config::{parse_config_with, ConfigError, ParsedConfig};
use sqzsim::homodyne::phase_histogram_fit;
use sqzsim::lockloop::run_lock;
use sqzsim::scenario::{
    noise_budget_report, run_llo, run_tlo_reference, sweep_fiber_length, Mode, ScenarioConfig,
};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// What the CLI was asked to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Scenario(Mode),
    LockOnly,
    Sweep,
}

impl RunKind {
    pub fn parse(s: &str) -> Option<RunKind> {
        match s {
            "lock_only" => Some(RunKind::LockOnly),
            "sweep" => Some(RunKind::Sweep),
            other => Mode::parse(other).map(RunKind::Scenario),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunKind::Scenario(m) => m.label(),
            RunKind::LockOnly => "lock_only",
            RunKind::Sweep => "sweep",
        }
    }
}

/// Error type with a documented exit code per class:
/// 3 configuration, 4 domain, 5 infeasible calibration, 6 I/O.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Domain(sqzsim::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Infeasible(_)) => 5,
            CliError::Config(_) => 3,
            CliError::Domain(sqzsim::Error::Infeasible { .. }) => 5,
            CliError::Domain(_) => 4,
            CliError::Io(_) => 6,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<sqzsim::Error> for CliError {
    fn from(e: sqzsim::Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Record of one CLI invocation, written as `manifest.txt`.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config_source: String,
    pub scenario: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub produced: Vec<String>,
    pub runtime_s: f64,
    pub notices: Vec<String>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("config: {}\n", self.config_source));
        out.push_str(&format!("scenario: {}\n", self.scenario));
        out.push_str(&format!("seed: {}\n", self.seed));
        out.push_str(&format!("out_dir: {}\n", self.out_dir.display()));
        for f in &self.produced {
            out.push_str(&format!("produced: {f}\n"));
        }
        out.push_str(&format!("runtime_s: {:.3}\n", self.runtime_s));
        for n in &self.notices {
            out.push_str(&format!("{n}\n"));
        }
        out
    }
}

/// Overrides carried from the command line into the config resolution.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub duration: Option<f64>,
    pub pin_sigma: Option<f64>,
}

/// Write `contents` to `dir/name` atomically (temp file + rename).
fn write_atomic(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))
}

fn resolve_config(
    config_text: &str,
    kind: RunKind,
    seed: u64,
    overrides: Overrides,
) -> Result<(ScenarioConfig, Vec<String>), CliError> {
    let mode = match kind {
        RunKind::Scenario(m) => Some(m),
        // lock-only runs and sweeps borrow the 10 km chain defaults
        RunKind::LockOnly | RunKind::Sweep => Some(Mode::Llo10km),
    };
    let ParsedConfig {
        mut config,
        notices,
    } = parse_config_with(config_text, mode)?;
    config.seed = seed;
    if let Some(d) = overrides.duration {
        config.duration = d;
    }
    if let Some(s) = overrides.pin_sigma {
        config.pin_sigma = Some(s);
    }
    config.validate()?;
    Ok((config, notices))
}

/// Execute one run and write every artifact into `out_dir`.
/// Returns the manifest that was also written there.
pub fn run_scenario(
    kind: RunKind,
    config_text: &str,
    config_source: &str,
    seed: u64,
    out_dir: &Path,
    overrides: Overrides,
) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let (cfg, notices) = resolve_config(config_text, kind, seed, overrides)?;
    fs::create_dir_all(out_dir)?;

    let mut produced = Vec::new();
    match kind {
        RunKind::Scenario(Mode::TloScan) => {
            let run = run_tlo_reference(&cfg)?;
            write_atomic(out_dir, "psd.csv", &run.psd.to_csv())?;
            produced.push("psd.csv".to_string());
            let mut env = String::from("time_s,lo_phase_rad,band_db\n");
            for p in &run.envelope {
                env.push_str(&format!(
                    "{:.6},{:.6},{:.6}\n",
                    p.time_s, p.lo_phase_rad, p.band_db
                ));
            }
            write_atomic(out_dir, "envelope.csv", &env)?;
            produced.push("envelope.csv".to_string());
            write_atomic(out_dir, "report.txt", &run.report.render_text())?;
            produced.push("report.txt".to_string());
        }
        RunKind::Scenario(_) => {
            let run = run_llo(&cfg)?;
            write_atomic(out_dir, "psd.csv", &run.psd.to_csv())?;
            produced.push("psd.csv".to_string());
            write_atomic(out_dir, "phase_hist.csv", &run.histogram.to_csv())?;
            produced.push("phase_hist.csv".to_string());
            let mut report = run.report.render_text();
            report.push_str(&format!(
                "lock_acquired: {}\nhistogram_sigma_rad: {:.6}\n",
                run.lock.acquired, run.histogram.fit_sigma
            ));
            write_atomic(out_dir, "report.txt", &report)?;
            produced.push("report.txt".to_string());
        }
        RunKind::LockOnly => {
            let lock = run_lock(&cfg.lock, cfg.duration, cfg.seed)?;
            write_atomic(out_dir, "lock_trace.txt", &lock.trace_text(cfg.lock.loop_rate))?;
            produced.push("lock_trace.txt".to_string());
            let trace = &lock.phase_error_trace;
            let hist = phase_histogram_fit(&trace[trace.len() / 5..], None)?;
            write_atomic(out_dir, "phase_hist.csv", &hist.to_csv())?;
            produced.push("phase_hist.csv".to_string());
            let mut report = String::new();
            report.push_str("scenario: lock_only\n");
            report.push_str(&format!("residual_sigma_rad: {:.6}\n", lock.residual_sigma));
            report.push_str(&format!("acquired: {}\n", lock.acquired));
            report.push_str(&format!(
                "acquisition_time_s: {}\n",
                lock.acquisition_time
                    .map_or("none".to_string(), |t| format!("{t:.6}"))
            ));
            if let Some(gof) = hist.goodness {
                report.push_str(&format!(
                    "gaussian_fit: sigma={:.6} rad chi2={:.3} dof={} p={:.4}\n",
                    hist.fit_sigma, gof.chi2, gof.dof, gof.p_value
                ));
            }
            write_atomic(out_dir, "report.txt", &report)?;
            produced.push("report.txt".to_string());
        }
        RunKind::Sweep => {
            let lengths: Vec<f64> = (0..=20).map(|i| i as f64).collect();
            let points = sweep_fiber_length(&cfg, &lengths)?;
            let mut csv = String::from(
                "fiber_length_km,transmittance,sigma_rad,squeezing_db,antisqueezing_db\n",
            );
            for p in &points {
                csv.push_str(&format!(
                    "{:.3},{:.9},{:.9},{:.6},{:.6}\n",
                    p.fiber_length_km,
                    p.transmittance,
                    p.sigma_rad,
                    p.squeezing_db,
                    p.antisqueezing_db
                ));
            }
            write_atomic(out_dir, "sweep.csv", &csv)?;
            produced.push("sweep.csv".to_string());
            let report = noise_budget_report(&cfg)?;
            write_atomic(out_dir, "report.txt", &report.render_text())?;
            produced.push("report.txt".to_string());
        }
    }

    let manifest = RunManifest {
        config_source: config_source.to_string(),
        scenario: kind.label().to_string(),
        seed,
        out_dir: out_dir.to_path_buf(),
        produced: {
            let mut p = produced.clone();
            p.push("manifest.txt".to_string());
            p
        },
        runtime_s: start.elapsed().as_secs_f64(),
        notices,
    };
    write_atomic(out_dir, "manifest.txt", &manifest.render())?;
    Ok(manifest)
}
