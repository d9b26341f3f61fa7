//! Batch experiments driven by flat config files.
//!
//! Every experiment stages its outputs in memory and commits them only when
//! the run finished, so a failed run leaves no partial CSV behind.

pub mod config;
pub mod counterexample;
mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, ExperimentKind, NormChoice, RawConfig, RunSpec};
pub use counterexample::{closed_forms, counterexample_demo, CounterexampleRow};
pub use output::{emit_plot_script, read_rate_summary, OutputSet, RateSummary, Table, CSV_VERSION, RATE_COLUMNS};

use crate::error::Result;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; the working directory when unset.
    pub out_dir: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Rows recorded as failed.
    pub failures: usize,
    /// One line for the terminal.
    pub summary: String,
}

/// Wall-clock milliseconds per stage. Written to a separate
/// `<name>.timings.csv` so the result tables stay byte-reproducible.
#[derive(Debug, Default)]
pub(crate) struct Timings {
    stages: Vec<(String, f64)>,
}

impl Timings {
    pub(crate) fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        self.stages
            .push((stage.to_string(), start.elapsed().as_secs_f64() * 1e3));
        r
    }

    fn render(&self, cfg: &ExperimentConfig) -> String {
        let mut t = Table::new(&["config_hash", "stage", "ms"]);
        for (s, ms) in &self.stages {
            t.push(vec![cfg.hash.clone(), s.clone(), format!("{ms:.3}")]);
        }
        t.render(&cfg.name, &cfg.hash)
    }
}

/// Result of an experiment before anything touches the disk.
#[derive(Debug, Default)]
pub struct Staged {
    pub outputs: OutputSet,
    pub failures: usize,
    pub summary: String,
}

/// Runs a parsed config and returns its outputs without writing them.
/// Relative model paths were already resolved by the config loader.
pub fn stage(cfg: &ExperimentConfig) -> Result<Staged> {
    let mut timings = Timings::default();
    let mut staged = match cfg.kind {
        ExperimentKind::Norms => experiments::norms(cfg, &mut timings)?,
        ExperimentKind::Rate => experiments::rate(cfg, &mut timings)?,
        ExperimentKind::KlRate => experiments::kl_rate(cfg, &mut timings)?,
        ExperimentKind::Approximate => experiments::approximate(cfg, &mut timings)?,
        ExperimentKind::SynthesizeRbm => experiments::synthesize_rbm(cfg, &mut timings)?,
        ExperimentKind::Counterexample => experiments::counterexample(cfg, &mut timings)?,
        ExperimentKind::Eval => experiments::eval(cfg, &mut timings)?,
    };
    staged
        .outputs
        .add(format!("{}.timings.csv", cfg.output_name), timings.render(cfg));
    Ok(staged)
}

/// Stages `cfg` and commits its files to `out_dir`.
pub fn run_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let staged = stage(cfg)?;
    let files = staged.outputs.commit(out_dir)?;
    Ok(RunReport {
        files,
        failures: staged.failures,
        summary: staged.summary,
    })
}

/// Loads the config at `config_path` for subcommand `kind` and runs it.
pub fn run(kind: ExperimentKind, config_path: &Path, opts: &RunOptions) -> Result<RunReport> {
    let cfg = ExperimentConfig::load(config_path, kind, opts.seed_override)?;
    let out = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    run_config(&cfg, &out)
}
