//! Convergence studies.
//!
//! A PoC study simulates a large proxy system and a ladder of smaller systems
//! under one [`NoisePlan`], so particle `i` of every system sees the same
//! initial state and Brownian path; the terminal coupled `L^p` error then
//! isolates the finite-`N` effect. A Δ-study does the same across step sizes,
//! with coarse increments assembled from the fine ones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, NoisePlan, RecordMode, Stepper, TimeGrid};
use crate::metrics::{
    empirical_moment, fit_rate, lp_coupled_error, mean_and_stderr, spearman, MetricsError, RateFit,
};
use crate::model::{build_scenario, Ensemble, ModelError, ModelSpec, DEFAULT_GAMMA, DEFAULT_TUPLE_BUDGET};

pub const DEFAULT_REPETITIONS: usize = 4;
pub const DEFAULT_HORIZON: f64 = 1.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: `{key}`: {message}")]
    Config { key: &'static str, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("simulation failed (seed {seed}, {particles} particles, {steps} steps): {source}")]
    Engine {
        seed: u64,
        particles: usize,
        steps: usize,
        #[source]
        source: EngineError,
    },
}

impl HarnessError {
    fn config(key: &'static str, message: impl Into<String>) -> Self {
        Self::Config { key, message: message.into() }
    }

    /// True when the failure is a non-finite state inside the time stepper.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Self::Engine { source: EngineError::Divergence { .. }, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyKind {
    /// Coupled error against a proxy system as the particle count grows.
    #[serde(rename = "poc_in_N")]
    PocInN,
    /// Coupled error against the finest step as the step size shrinks.
    #[serde(rename = "strong_in_dt")]
    StrongInDt,
    /// Terminal empirical moments across a step-size or particle-count ladder.
    #[serde(rename = "moment_audit")]
    MomentAudit,
}

impl StudyKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::PocInN => "poc_in_N",
            Self::StrongInDt => "strong_in_dt",
            Self::MomentAudit => "moment_audit",
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub d: usize,
    pub study: StudyKind,
    pub p_values: Vec<f64>,
    /// PoC ladder; for Δ-studies and Δ-audits, the single fixed particle count.
    pub particle_counts: Vec<usize>,
    pub proxy_count: Option<usize>,
    /// Step size of PoC studies; the reference (finest) step of Δ-studies.
    pub dt: f64,
    pub dt_ladder: Vec<f64>,
    pub horizon: f64,
    pub seeds: Vec<u64>,
    pub repetitions: usize,
    pub gamma: f64,
    pub tuple_budget: u64,
    /// Adds a row comparing the proxy with itself; its error must be zero.
    pub self_check: bool,
}

impl ExperimentConfig {
    /// PoC configuration with the defaults filled in.
    pub fn poc(scenario: &str, d: usize, particle_counts: Vec<usize>, proxy_count: usize, dt: f64) -> Self {
        Self {
            scenario: scenario.to_string(),
            d,
            study: StudyKind::PocInN,
            p_values: vec![2.0],
            particle_counts,
            proxy_count: Some(proxy_count),
            dt,
            dt_ladder: Vec::new(),
            horizon: DEFAULT_HORIZON,
            seeds: vec![0],
            repetitions: DEFAULT_REPETITIONS,
            gamma: DEFAULT_GAMMA,
            tuple_budget: DEFAULT_TUPLE_BUDGET,
            self_check: false,
        }
    }

    /// Δ-study with `particles` particles, reference step `dt`.
    pub fn strong_in_dt(scenario: &str, d: usize, particles: usize, dt: f64, dt_ladder: Vec<f64>) -> Self {
        Self {
            study: StudyKind::StrongInDt,
            particle_counts: vec![particles],
            proxy_count: None,
            dt_ladder,
            ..Self::poc(scenario, d, Vec::new(), 0, dt)
        }
    }

    pub fn moment_audit(scenario: &str, d: usize, particles: usize, dt_ladder: Vec<f64>) -> Self {
        let dt = dt_ladder.first().copied().unwrap_or(1.0);
        Self {
            study: StudyKind::MomentAudit,
            particle_counts: vec![particles],
            proxy_count: None,
            dt_ladder,
            ..Self::poc(scenario, d, Vec::new(), 0, dt)
        }
    }

    /// Master seeds of every repetition, in run order.
    pub fn run_seeds(&self) -> Vec<u64> {
        self.seeds
            .iter()
            .flat_map(|&s| (0..self.repetitions as u64).map(move |r| derive_seed(s, r)))
            .collect()
    }

    pub fn stepper(&self) -> Result<Stepper, HarnessError> {
        Stepper::tamed(self.gamma)
            .map(|s| s.with_tuple_budget(self.tuple_budget))
            .map_err(|e| HarnessError::config("gamma", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.d == 0 {
            return Err(HarnessError::config("d", "must be positive"));
        }
        if self.p_values.is_empty() {
            return Err(HarnessError::config("p_values", "must not be empty"));
        }
        if let Some(p) = self.p_values.iter().find(|p| !(p.is_finite() && **p >= 2.0)) {
            return Err(HarnessError::config("p_values", format!("every p must be at least 2, got {p}")));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(HarnessError::config("T", "must be positive"));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::config("repetitions", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds", "must not be empty"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 0.5) {
            return Err(HarnessError::config("gamma", "must lie in (0, 1/2]"));
        }
        steps_for(self.horizon, self.dt, "dt")?;
        match self.study {
            StudyKind::PocInN => {
                if self.particle_counts.is_empty() {
                    return Err(HarnessError::config("particle_counts", "must not be empty"));
                }
                if self.particle_counts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(HarnessError::config("particle_counts", "must be strictly ascending"));
                }
                if self.particle_counts[0] < 2 {
                    return Err(HarnessError::config("particle_counts", "every count must be at least 2"));
                }
                let proxy = self
                    .proxy_count
                    .ok_or_else(|| HarnessError::config("proxy_count", "required for poc_in_N"))?;
                let max = *self.particle_counts.last().expect("non-empty");
                if proxy <= max {
                    return Err(HarnessError::config(
                        "proxy_count",
                        format!("proxy_count must exceed every particle count ({proxy} <= {max})"),
                    ));
                }
            }
            StudyKind::StrongInDt | StudyKind::MomentAudit => {
                if self.particle_counts.len() != 1 || self.particle_counts[0] == 0 {
                    return Err(HarnessError::config(
                        "particle_counts",
                        "step-size ladders take exactly one positive particle count",
                    ));
                }
                if self.dt_ladder.is_empty() {
                    return Err(HarnessError::config("dt_ladder", "must not be empty"));
                }
                if self.dt_ladder.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(HarnessError::config("dt_ladder", "must be strictly ascending"));
                }
                for &dt in &self.dt_ladder {
                    steps_for(self.horizon, dt, "dt_ladder")?;
                }
                if self.study == StudyKind::StrongInDt {
                    let fine = steps_for(self.horizon, self.dt, "dt")?;
                    for &dt in &self.dt_ladder {
                        let m = steps_for(self.horizon, dt, "dt_ladder")?;
                        if fine % m != 0 {
                            return Err(HarnessError::config(
                                "dt_ladder",
                                format!("step {dt} does not nest in the reference step {}", self.dt),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// SplitMix64 mix of a base seed and a repetition index.
pub fn derive_seed(base: u64, repetition: u64) -> u64 {
    let mut z = base
        .wrapping_add(repetition.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of steps `T/Δ`, which must be a positive integer.
fn steps_for(horizon: f64, dt: f64, key: &'static str) -> Result<usize, HarnessError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HarnessError::config(key, format!("step size must be positive, got {dt}")));
    }
    let m = (horizon / dt).round();
    if m < 1.0 || (m * dt - horizon).abs() > 1e-12 * horizon || m > u32::MAX as f64 {
        return Err(HarnessError::config(key, format!("T/dt must be a positive integer (dt = {dt})")));
    }
    Ok(m as usize)
}

/// One ladder point of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    /// `N̄` for PoC studies, `Δ` for step-size studies.
    pub abscissa: f64,
    pub error_mean: f64,
    pub error_stderr: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub study: String,
    pub p: f64,
    pub rows: Vec<RateRow>,
    /// Absent when fewer than two rows carry a positive error.
    pub fit: Option<RateFit>,
    /// Rank correlation of abscissa against mean error over the fitted rows.
    pub spearman: Option<f64>,
    pub note: Option<String>,
}

impl RateReport {
    fn assemble(study: &str, p: f64, rows: Vec<RateRow>) -> Result<Self, HarnessError> {
        let fitted: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.error_mean > 0.0)
            .map(|r| (r.abscissa, r.error_mean))
            .collect();
        let (fit, note) = match fit_rate(&fitted) {
            Ok(fit) => (Some(fit), None),
            Err(MetricsError::Underdetermined) if fitted.is_empty() => {
                (None, Some("no measurable PoC error".to_string()))
            }
            Err(MetricsError::Underdetermined) => {
                (None, Some("fewer than two rows with positive error".to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let xs: Vec<f64> = fitted.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = fitted.iter().map(|p| p.1).collect();
        Ok(Self { study: study.to_string(), p, rows, fit, spearman: spearman(&xs, &ys), note })
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

fn simulate_terminal(
    stepper: &Stepper,
    model: &ModelSpec,
    particles: usize,
    grid: &TimeGrid,
    plan: &NoisePlan,
) -> Result<Ensemble, HarnessError> {
    stepper
        .simulate(model, particles, grid, plan, RecordMode::Terminal)
        .map(|t| t.into_terminal())
        .map_err(|source| HarnessError::Engine {
            seed: plan.master_seed(),
            particles,
            steps: grid.steps(),
            source,
        })
}

fn rows_from(abscissae: &[f64], samples: &[Vec<f64>]) -> Vec<RateRow> {
    abscissae
        .iter()
        .zip(samples)
        .map(|(&x, vals)| {
            let (mean, se) = mean_and_stderr(vals);
            RateRow { abscissa: x, error_mean: mean, error_stderr: se, reps: vals.len() }
        })
        .collect()
}

/// PoC study on the named scenario.
pub fn run_poc_study(config: &ExperimentConfig) -> Result<Vec<RateReport>, HarnessError> {
    let model = build_scenario(&config.scenario, config.d)?;
    poc_study(&model, config)
}

/// PoC study on an explicit model; `config.scenario` is used only as a label.
pub fn poc_study(model: &ModelSpec, config: &ExperimentConfig) -> Result<Vec<RateReport>, HarnessError> {
    config.validate()?;
    if config.study != StudyKind::PocInN {
        return Err(HarnessError::config("study", "expected poc_in_N"));
    }
    let stepper = config.stepper()?;
    let steps = steps_for(config.horizon, config.dt, "dt")?;
    let grid = TimeGrid::new(config.horizon, steps).map_err(|e| HarnessError::config("dt", e.to_string()))?;
    let proxy_count = config.proxy_count.expect("validated");
    let mut counts = config.particle_counts.clone();
    if config.self_check {
        counts.push(proxy_count);
    }
    // errors[p][count] -> one value per run
    let mut errors = vec![vec![Vec::new(); counts.len()]; config.p_values.len()];
    for seed in config.run_seeds() {
        let plan = NoisePlan::new(seed, steps, model.noise_dim(), config.horizon)
            .map_err(|e| HarnessError::config("dt", e.to_string()))?;
        let proxy = simulate_terminal(&stepper, model, proxy_count, &grid, &plan)?;
        for (c, &n) in counts.iter().enumerate() {
            let small = simulate_terminal(&stepper, model, n, &grid, &plan)?;
            for (k, &p) in config.p_values.iter().enumerate() {
                errors[k][c].push(lp_coupled_error(&small, &proxy, p)?);
            }
        }
    }
    let abscissae: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    config
        .p_values
        .iter()
        .zip(&errors)
        .map(|(&p, samples)| RateReport::assemble(config.study.label(), p, rows_from(&abscissae, samples)))
        .collect()
}

/// Strong step-size study on the named scenario.
pub fn run_dt_study(config: &ExperimentConfig) -> Result<Vec<RateReport>, HarnessError> {
    let model = build_scenario(&config.scenario, config.d)?;
    dt_study(&model, config)
}

pub fn dt_study(model: &ModelSpec, config: &ExperimentConfig) -> Result<Vec<RateReport>, HarnessError> {
    config.validate()?;
    if config.study != StudyKind::StrongInDt {
        return Err(HarnessError::config("study", "expected strong_in_dt"));
    }
    let stepper = config.stepper()?;
    let particles = config.particle_counts[0];
    let fine_steps = steps_for(config.horizon, config.dt, "dt")?;
    let fine_grid = TimeGrid::new(config.horizon, fine_steps).map_err(|e| HarnessError::config("dt", e.to_string()))?;
    let grids = config
        .dt_ladder
        .iter()
        .map(|&dt| {
            let m = steps_for(config.horizon, dt, "dt_ladder")?;
            TimeGrid::new(config.horizon, m).map_err(|e| HarnessError::config("dt_ladder", e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut errors = vec![vec![Vec::new(); grids.len()]; config.p_values.len()];
    for seed in config.run_seeds() {
        let plan = NoisePlan::new(seed, fine_steps, model.noise_dim(), config.horizon)
            .map_err(|e| HarnessError::config("dt", e.to_string()))?;
        let reference = simulate_terminal(&stepper, model, particles, &fine_grid, &plan)?;
        for (g, grid) in grids.iter().enumerate() {
            let coarse = simulate_terminal(&stepper, model, particles, grid, &plan)?;
            for (k, &p) in config.p_values.iter().enumerate() {
                errors[k][g].push(lp_coupled_error(&coarse, &reference, p)?);
            }
        }
    }
    config
        .p_values
        .iter()
        .zip(&errors)
        .map(|(&p, samples)| RateReport::assemble(config.study.label(), p, rows_from(&config.dt_ladder, samples)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    /// `Δ` for step-size audits, `N` otherwise.
    pub abscissa: f64,
    /// Mean over runs of the terminal `(1/N) Σ |X^i_T|^p`; non-finite when any run diverged.
    pub moment_mean: f64,
    pub moment_max: f64,
    pub reps: usize,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentAudit {
    pub p: f64,
    pub rows: Vec<MomentRow>,
}

impl MomentAudit {
    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.diverged_runs == 0 && r.moment_mean.is_finite() && r.moment_max.is_finite())
    }

    pub fn max_moment(&self) -> f64 {
        self.rows.iter().map(|r| r.moment_max).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn run_moment_audit(config: &ExperimentConfig) -> Result<Vec<MomentAudit>, HarnessError> {
    let model = build_scenario(&config.scenario, config.d)?;
    moment_audit(&model, config)
}

/// Terminal moments across the step-size ladder at the configured particle count.
///
/// Divergence is recorded per row rather than returned as an error.
pub fn moment_audit(model: &ModelSpec, config: &ExperimentConfig) -> Result<Vec<MomentAudit>, HarnessError> {
    config.validate()?;
    if config.study != StudyKind::MomentAudit {
        return Err(HarnessError::config("study", "expected moment_audit"));
    }
    let stepper = config.stepper()?;
    let particles = config.particle_counts[0];
    let seeds = config.run_seeds();
    let mut audits: Vec<MomentAudit> =
        config.p_values.iter().map(|&p| MomentAudit { p, rows: Vec::new() }).collect();
    for &dt in &config.dt_ladder {
        let steps = steps_for(config.horizon, dt, "dt_ladder")?;
        let grid = TimeGrid::new(config.horizon, steps).map_err(|e| HarnessError::config("dt_ladder", e.to_string()))?;
        let mut values = vec![Vec::new(); config.p_values.len()];
        let mut diverged = 0;
        for &seed in &seeds {
            let plan = NoisePlan::new(seed, steps, model.noise_dim(), config.horizon)
                .map_err(|e| HarnessError::config("dt_ladder", e.to_string()))?;
            match simulate_terminal(&stepper, model, particles, &grid, &plan) {
                Ok(ens) => {
                    for (k, &p) in config.p_values.iter().enumerate() {
                        values[k].push(empirical_moment(&ens, p)?);
                    }
                }
                Err(e) if e.is_divergence() => diverged += 1,
                Err(e) => return Err(e),
            }
        }
        for (audit, vals) in audits.iter_mut().zip(&values) {
            let (mean, max) = if diverged > 0 || vals.is_empty() {
                (f64::INFINITY, f64::INFINITY)
            } else {
                (
                    vals.iter().sum::<f64>() / vals.len() as f64,
                    vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            audit.rows.push(MomentRow {
                abscissa: dt,
                moment_mean: mean,
                moment_max: max,
                reps: seeds.len(),
                diverged_runs: diverged,
            });
        }
    }
    Ok(audits)
}
