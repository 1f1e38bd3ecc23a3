//! Tamed Euler–Maruyama for the interacting particle system.
//!
//! One step maps the time-`n` ensemble to
//!
//! ```text
//! X^i_{n+1} = X^i_n + ã(X^i_n) Δ + A(κ̂^N(X^i_n)) Δ + B(ζ̂^N(X^i_n)) ΔW^i_n,
//! ã(x) = a(x) / (1 + Δ^γ |a(x)|)
//! ```
//!
//! where every aggregate reads the frozen time-`n` ensemble. Particles are
//! updated in parallel; each particle's sums run sequentially in index order,
//! so the output does not depend on the number of worker threads.

pub mod noise;

use rayon::prelude::*;
use thiserror::Error;

pub use noise::{NoisePlan, ParticleStream, TimeGrid};

use crate::model::{
    check_tuple_budget, tame_in_place, CoefficientForm, Ensemble, ModelError, ModelSpec,
    DEFAULT_GAMMA, DEFAULT_TUPLE_BUDGET,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("time grid with {grid_steps} steps is not compatible with a noise plan of {fine_steps} fine steps")]
    IncompatibleGrid { grid_steps: usize, fine_steps: usize },
    #[error("non-finite state for particle {particle} at step {step}")]
    Divergence { particle: usize, step: usize },
}

/// Drift treatment in the explicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Taming {
    /// `a / (1 + Δ^γ |a|)`, `γ ∈ (0, 1/2]`.
    Tamed { gamma: f64 },
    /// Plain Euler–Maruyama; only sensible for globally Lipschitz drifts.
    Off,
}

/// Which ensembles a simulation keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordMode {
    #[default]
    Terminal,
    Full,
}

/// Explicit particle stepper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stepper {
    pub taming: Taming,
    /// Largest `N^q` a higher-order aggregate may enumerate.
    pub tuple_budget: u64,
}

impl Default for Stepper {
    fn default() -> Self {
        Self {
            taming: Taming::Tamed { gamma: DEFAULT_GAMMA },
            tuple_budget: DEFAULT_TUPLE_BUDGET,
        }
    }
}

impl Stepper {
    pub fn tamed(gamma: f64) -> Result<Self, EngineError> {
        if !(gamma > 0.0 && gamma <= 0.5) {
            return Err(EngineError::InvalidInput(format!(
                "taming exponent must lie in (0, 1/2], got {gamma}"
            )));
        }
        Ok(Self { taming: Taming::Tamed { gamma }, ..Self::default() })
    }

    pub fn untamed() -> Self {
        Self { taming: Taming::Off, ..Self::default() }
    }

    pub fn with_tuple_budget(mut self, budget: u64) -> Self {
        self.tuple_budget = budget;
        self
    }

    fn check_model(&self, model: &ModelSpec, n: usize, plan: &NoisePlan) -> Result<(), EngineError> {
        if plan.noise_dim() != model.noise_dim() {
            return Err(EngineError::InvalidInput(format!(
                "noise plan has {} components, model needs {}",
                plan.noise_dim(),
                model.noise_dim()
            )));
        }
        if let CoefficientForm::HigherOrder { q, .. } = model.interaction() {
            check_tuple_budget(n, *q, self.tuple_budget)?;
        }
        Ok(())
    }

    /// Advances `ens` by one step of `grid`.
    pub fn step(
        &self,
        ens: &Ensemble,
        model: &ModelSpec,
        grid: &TimeGrid,
        plan: &NoisePlan,
    ) -> Result<Ensemble, EngineError> {
        let ratio = grid.refinement(plan)?;
        if ens.dim() != model.state_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "ensemble state dimension",
                expected: model.state_dim(),
                found: ens.dim(),
            }
            .into());
        }
        let n = ens.time_index();
        if n >= grid.steps() {
            return Err(EngineError::InvalidInput(format!(
                "ensemble at step {n} is already at the end of a {}-step grid",
                grid.steps()
            )));
        }
        self.check_model(model, ens.particle_count(), plan)?;
        self.advance(ens, model, grid.step_size(), ratio, plan)
    }

    fn advance(
        &self,
        ens: &Ensemble,
        model: &ModelSpec,
        dt: f64,
        ratio: usize,
        plan: &NoisePlan,
    ) -> Result<Ensemble, EngineError> {
        let d = model.state_dim();
        let m0 = model.noise_dim();
        let n = ens.time_index();
        let taming_scale = match self.taming {
            Taming::Tamed { gamma } => Some(dt.powf(gamma)),
            Taming::Off => None,
        };
        let mut next = vec![0.0; ens.as_flat().len()];
        next.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
            let x = ens.particle(i);
            let mut drift = model.drift().apply(x);
            if let Some(scale) = taming_scale {
                tame_in_place(&mut drift, scale);
            }
            let mut mean_field = vec![0.0; d];
            let mut diffusion = vec![0.0; d * m0];
            model
                .interaction()
                .evaluate_into(x, ens, &mut mean_field, &mut diffusion);
            let mut dw = vec![0.0; m0];
            plan.increment_into(i, n, ratio, &mut dw);
            for k in 0..d {
                let noise: f64 = diffusion[k * m0..(k + 1) * m0]
                    .iter()
                    .zip(&dw)
                    .map(|(b, w)| b * w)
                    .sum();
                out[k] = x[k] + drift[k] * dt + mean_field[k] * dt + noise;
            }
        });
        if let Some(pos) = next.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::Divergence { particle: pos / d, step: n });
        }
        Ok(Ensemble::from_parts_unchecked(d, next, n + 1, dt))
    }

    /// Draws `N` initial states and runs the full grid.
    pub fn simulate(
        &self,
        model: &ModelSpec,
        particles: usize,
        grid: &TimeGrid,
        plan: &NoisePlan,
        mode: RecordMode,
    ) -> Result<Trajectory, EngineError> {
        if particles == 0 {
            return Err(EngineError::InvalidInput("particle count must be positive".into()));
        }
        self.check_model(model, particles, plan)?;
        let (ratio, dt) = match grid.steps() {
            0 => (0, grid.horizon()),
            _ => (grid.refinement(plan)?, grid.step_size()),
        };
        let mut current = initial_ensemble(model, particles, dt, plan);
        let mut kept = Vec::with_capacity(match mode {
            RecordMode::Full => grid.steps() + 1,
            RecordMode::Terminal => 1,
        });
        for _ in 0..grid.steps() {
            let next = self.advance(&current, model, dt, ratio, plan)?;
            if mode == RecordMode::Full {
                kept.push(current);
            }
            current = next;
        }
        kept.push(current);
        Ok(Trajectory { ensembles: kept, mode })
    }
}

/// Initial ensemble for `particles` particles; particle `i` reads only its own
/// initial-condition lane.
pub fn initial_ensemble(model: &ModelSpec, particles: usize, dt: f64, plan: &NoisePlan) -> Ensemble {
    let d = model.state_dim();
    let mut states = vec![0.0; particles * d];
    for (i, slot) in states.chunks_mut(d).enumerate() {
        let mut stream = plan.initial_stream(i);
        model.initial_law().sample_into(&mut stream, slot);
    }
    Ensemble::from_parts_unchecked(d, states, 0, dt)
}

/// Ensembles on the grid, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    ensembles: Vec<Ensemble>,
    mode: RecordMode,
}

impl Trajectory {
    pub fn mode(&self) -> RecordMode {
        self.mode
    }

    pub fn terminal(&self) -> &Ensemble {
        self.ensembles.last().expect("trajectory always holds the terminal ensemble")
    }

    pub fn into_terminal(mut self) -> Ensemble {
        self.ensembles.pop().expect("trajectory always holds the terminal ensemble")
    }

    pub fn ensembles(&self) -> &[Ensemble] {
        &self.ensembles
    }

    pub fn len(&self) -> usize {
        self.ensembles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ensembles.is_empty()
    }
}

/// One tamed step with the default stepper.
pub fn step(
    ens: &Ensemble,
    model: &ModelSpec,
    grid: &TimeGrid,
    plan: &NoisePlan,
) -> Result<Ensemble, EngineError> {
    Stepper::default().step(ens, model, grid, plan)
}

/// Full tamed simulation with the default stepper.
pub fn simulate(
    model: &ModelSpec,
    particles: usize,
    grid: &TimeGrid,
    plan: &NoisePlan,
    mode: RecordMode,
) -> Result<Trajectory, EngineError> {
    Stepper::default().simulate(model, particles, grid, plan, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_scenario, scalar_pair_kernel, FieldMap, InitialLaw};

    fn null_model(outer_drift: FieldMap) -> ModelSpec {
        ModelSpec::new(
            "null",
            1,
            1,
            FieldMap::zero(1, 1),
            CoefficientForm::SingleKernel {
                outer_drift,
                kernel_drift: scalar_pair_kernel(|_, y| y),
                outer_diff: FieldMap::zero(1, 1),
                kernel_diff: scalar_pair_kernel(|_, _| 0.0),
            },
            InitialLaw::standard_normal(),
        )
        .unwrap()
    }

    #[test]
    fn null_dynamics_only_advance_time() {
        let model = null_model(FieldMap::zero(1, 1));
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let plan = NoisePlan::new(1, 4, 1, 1.0).unwrap();
        let ens = Ensemble::new(1, vec![0.3, -2.0, 5.5], 0, 0.25).unwrap();
        let next = step(&ens, &model, &grid, &plan).unwrap();
        assert_eq!(next.as_flat(), ens.as_flat());
        assert_eq!(next.time_index(), 1);
    }

    #[test]
    fn constant_mean_field_drift() {
        let model = null_model(FieldMap::constant(1, vec![1.0]));
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let plan = NoisePlan::new(1, 2, 1, 1.0).unwrap();
        let ens = Ensemble::new(1, vec![1.0, 3.0], 0, 0.5).unwrap();
        let next = step(&ens, &model, &grid, &plan).unwrap();
        assert_eq!(next.as_flat(), &[1.5, 3.5]);
    }

    #[test]
    fn example1_step_is_reproducible() {
        let model = build_scenario("example1", 1).unwrap();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let plan = NoisePlan::new(99, 16, 1, 1.0).unwrap();
        let ens = initial_ensemble(&model, 32, grid.step_size(), &plan);
        let a = step(&ens, &model, &grid, &plan).unwrap();
        let b = step(&ens, &model, &grid, &plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_past_grid_end_rejected() {
        let model = null_model(FieldMap::zero(1, 1));
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let plan = NoisePlan::new(1, 2, 1, 1.0).unwrap();
        let ens = Ensemble::new(1, vec![0.0], 2, 0.5).unwrap();
        assert!(step(&ens, &model, &grid, &plan).is_err());
    }

    #[test]
    fn zero_steps_keep_initial_ensemble() {
        let model = build_scenario("example1", 1).unwrap();
        let grid = TimeGrid::new(1.0, 0).unwrap();
        let plan = NoisePlan::new(5, 1, 1, 1.0).unwrap();
        let traj = simulate(&model, 4, &grid, &plan, RecordMode::Full).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.terminal(), &initial_ensemble(&model, 4, 1.0, &plan));
        assert_eq!(traj.terminal().time_index(), 0);
    }

    #[test]
    fn single_particle_example1_runs() {
        let model = build_scenario("example1", 1).unwrap();
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let plan = NoisePlan::new(2, 64, 1, 1.0).unwrap();
        let traj = simulate(&model, 1, &grid, &plan, RecordMode::Terminal).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(traj.terminal().particle(0)[0].is_finite());
        assert_eq!(traj.terminal().time_index(), 64);
    }

    #[test]
    fn divergence_is_reported() {
        // untamed cubic growth from a large start blows up
        let model = ModelSpec::new(
            "blowup",
            1,
            1,
            FieldMap::elementwise(1, |x| x * x * x),
            CoefficientForm::SingleKernel {
                outer_drift: FieldMap::zero(1, 1),
                kernel_drift: scalar_pair_kernel(|_, _| 0.0),
                outer_diff: FieldMap::zero(1, 1),
                kernel_diff: scalar_pair_kernel(|_, _| 0.0),
            },
            InitialLaw::dirac(vec![10.0]),
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let plan = NoisePlan::new(1, 8, 1, 1.0).unwrap();
        let err = Stepper::untamed()
            .simulate(&model, 2, &grid, &plan, RecordMode::Terminal)
            .unwrap_err();
        assert!(matches!(err, EngineError::Divergence { particle: 0, .. }));
        // the tamed scheme stays finite on the same problem
        assert!(simulate(&model, 2, &grid, &plan, RecordMode::Terminal).is_ok());
    }

    #[test]
    fn higher_order_budget_enforced() {
        let model = build_scenario("example4", 1).unwrap();
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let plan = NoisePlan::new(1, 1, 1, 1.0).unwrap();
        let stepper = Stepper::default().with_tuple_budget(100);
        let err = stepper.simulate(&model, 11, &grid, &plan, RecordMode::Terminal).unwrap_err();
        assert!(matches!(err, EngineError::Model(ModelError::ResourceLimit { .. })));
        assert!(stepper.simulate(&model, 10, &grid, &plan, RecordMode::Terminal).is_ok());
    }
}
