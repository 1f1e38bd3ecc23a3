//! Config ingestion, experiment execution and result files.

pub mod config;
pub mod emit;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub use config::{echo_config, parse_config, ConfigError, ParsedConfig, SCHEMA_VERSION};
pub use emit::{
    emit_csv, emit_loglog_chart, emit_manifest, render_csv, render_loglog_chart, render_moment_csv, EmitError,
    RunManifest, CSV_HEADER,
};

use crate::harness::{run_dt_study, run_moment_audit, run_poc_study, HarnessError, StudyKind};

pub const THREADS_ENV: &str = "CHAOSKIT_THREADS";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot create output directory {path}: {source}")]
    OutputDir {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid {THREADS_ENV} value `{0}`")]
    Threads(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Threads(_) => EXIT_CONFIG,
            CliError::Harness(e) if e.is_divergence() => EXIT_DIVERGENCE,
            CliError::Harness(HarnessError::Config { .. }) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Csv,
    Report,
    #[default]
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
    fn report(self) -> bool {
        matches!(self, OutputFormat::Report | OutputFormat::Both)
    }
}

/// Thread count from `CHAOSKIT_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Threads(v)),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f` inside a rayon pool with `threads` workers, or the global pool for `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

pub fn read_config(path: &Path) -> Result<ParsedConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })?;
    Ok(parse_config(&text)?)
}

/// Executes the study named in the config.
pub fn run_experiment(parsed: &ParsedConfig) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let e = &parsed.experiment;
    let (reports, moment_audits) = match e.study {
        StudyKind::PocInN => (run_poc_study(e)?, Vec::new()),
        StudyKind::StrongInDt => (run_dt_study(e)?, Vec::new()),
        StudyKind::MomentAudit => (Vec::new(), run_moment_audit(e)?),
    };
    Ok(RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: echo_config(parsed),
        run_seeds: e.run_seeds(),
        reports,
        moment_audits,
        wall_clock_seconds: Some(start.elapsed().as_secs_f64()),
    })
}

/// Writes result files into `dir` and returns their paths.
pub fn write_outputs(
    manifest: &RunManifest,
    dir: &Path,
    format: OutputFormat,
    chart: bool,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::OutputDir { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    let mut put = |name: String, contents: String| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|source| EmitError::Io { path: path.display().to_string(), source })?;
        written.push(path);
        Ok(())
    };
    if format.csv() {
        if !manifest.reports.is_empty() {
            put("results.csv".into(), render_csv(&manifest.reports))?;
        }
        if !manifest.moment_audits.is_empty() {
            put("moments.csv".into(), render_moment_csv(&manifest.moment_audits))?;
        }
    }
    if format.report() {
        let mut stored = manifest.clone();
        stored.wall_clock_seconds = None;
        put("manifest.json".into(), stored.to_json())?;
    }
    if chart {
        for r in &manifest.reports {
            match render_loglog_chart(r) {
                Ok(svg) => put(format!("chart_{}_p{}.svg", r.study, r.p), svg)?,
                Err(EmitError::InsufficientRows(n)) => {
                    eprintln!("skipping chart for {} p={}: {n} plottable rows", r.study, r.p)
                }
                Err(other) => return Err(other.into()),
            }
        }
    }
    Ok(written)
}

/// Plain-text summary printed after a run.
pub fn summary(manifest: &RunManifest) -> String {
    let mut out = String::new();
    for r in &manifest.reports {
        out.push_str(&format!("{} p={}:", r.study, r.p));
        match r.fit {
            Some(f) => out.push_str(&format!(" slope {:.4} (r^2 {:.4})", f.slope, f.r_squared)),
            None => out.push_str(" no fit"),
        }
        if let Some(n) = &r.note {
            out.push_str(&format!(" [{n}]"));
        }
        out.push('\n');
    }
    for a in &manifest.moment_audits {
        out.push_str(&format!(
            "moment_audit p={}: max {:.6e}, all finite: {}\n",
            a.p,
            a.max_moment(),
            a.all_finite()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let c = CliError::Config(ConfigError { key: None, message: "x".into() });
        assert_eq!(c.exit_code(), EXIT_CONFIG);
        let d = CliError::Harness(HarnessError::Engine {
            seed: 0,
            particles: 1,
            steps: 1,
            source: crate::engine::EngineError::Divergence { particle: 0, step: 1 },
        });
        assert_eq!(d.exit_code(), EXIT_DIVERGENCE);
        assert_eq!(CliError::Threads("x".into()).exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn explicit_pool_size() {
        assert_eq!(with_threads(Some(2), rayon::current_num_threads), 2);
    }
}
