//! McKean-Vlasov models: coefficients, kernels, scenarios.
//!
//! A model is `dX = a(X) dt + f(X, μ) dt + g(X, μ) dW` where `μ` is replaced by
//! the ensemble's empirical measure. The measure-dependent coefficients come in
//! three shapes ([`CoefficientForm`]): one kernel per coefficient, several
//! kernels combined by an outer map, or a single kernel integrated against a
//! `q`-fold product measure.

mod ensemble;
pub mod kernel;
pub mod scenarios;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use ensemble::Ensemble;
pub use kernel::{
    aggregate_higher, aggregate_higher_with_budget, aggregate_multi, aggregate_single,
    check_tuple_budget, pair_kernel, scalar_pair_kernel, tuple_count, tuple_kernel, PairKernel,
    TupleKernel, DEFAULT_TUPLE_BUDGET,
};
pub use scenarios::{build_scenario, ScenarioInfo, SCENARIOS};

use kernel::{pair_aggregate_into, tuple_aggregate_into};

type MapFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type SamplerFn = Arc<dyn Fn(&mut dyn NoiseSource, &mut [f64]) + Send + Sync>;

/// Default taming exponent `γ`.
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("particle index {index} out of range for {count} particles")]
    IndexOutOfRange { index: usize, count: usize },
    #[error(
        "order-{order} interaction over {particles} particles needs {} tuple evaluations per \
         aggregate, above the budget of {budget}; reduce the particle count or set the override",
        tuples.map_or_else(|| "more than 2^64".to_string(), |t| t.to_string())
    )]
    ResourceLimit {
        particles: usize,
        order: usize,
        tuples: Option<u64>,
        budget: u64,
    },
    #[error("unknown scenario `{0}` (expected one of example1, example2, example3, example4)")]
    UnknownScenario(String),
}

/// A map between flat real vectors with fixed input/output sizes.
///
/// Used for the drift `a`, the outer maps `A` and `B`, and any other
/// coefficient that is not integrated against the measure. Matrices are passed
/// row-major.
#[derive(Clone)]
pub struct FieldMap {
    in_dim: usize,
    out_dim: usize,
    f: MapFn,
}

impl FieldMap {
    pub fn new<F>(in_dim: usize, out_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { in_dim, out_dim, f: Arc::new(f) }
    }

    /// Applies `g` to every coordinate, the `φ(x) = (φ(x_i))` convention.
    pub fn elementwise<G>(dim: usize, g: G) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(dim, dim, move |x, out| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = g(*v);
            }
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, dim, |x, out| out.copy_from_slice(x))
    }

    pub fn constant(in_dim: usize, value: Vec<f64>) -> Self {
        let out_dim = value.len();
        Self::new(in_dim, out_dim, move |_, out| out.copy_from_slice(&value))
    }

    pub fn zero(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, |_, out| out.fill(0.0))
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        self.apply_into(x, &mut out);
        out
    }
}

impl fmt::Debug for FieldMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldMap({} -> {})", self.in_dim, self.out_dim)
    }
}

/// Source of i.i.d. variates handed to an initial-law sampler.
pub trait NoiseSource {
    fn next_standard_normal(&mut self) -> f64;
    /// Uniform on the open interval (0, 1).
    fn next_uniform(&mut self) -> f64;
}

/// Law of `x_0`, sampled independently for each particle.
#[derive(Clone)]
pub struct InitialLaw {
    label: String,
    sampler: SamplerFn,
}

impl InitialLaw {
    pub fn new<F>(label: impl Into<String>, sampler: F) -> Self
    where
        F: Fn(&mut dyn NoiseSource, &mut [f64]) + Send + Sync + 'static,
    {
        Self { label: label.into(), sampler: Arc::new(sampler) }
    }

    /// Independent `N(0, 1)` coordinates.
    pub fn standard_normal() -> Self {
        Self::new("N(0, I)", |src, out| {
            for v in out.iter_mut() {
                *v = src.next_standard_normal();
            }
        })
    }

    /// Deterministic start at `point`.
    pub fn dirac(point: Vec<f64>) -> Self {
        Self::new(format!("delta({point:?})"), move |_, out| out.copy_from_slice(&point))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sample_into(&self, src: &mut dyn NoiseSource, out: &mut [f64]) {
        (self.sampler)(src, out)
    }
}

impl fmt::Debug for InitialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InitialLaw({})", self.label)
    }
}

/// The measure-dependent drift `f(x, μ) = A(…)` and diffusion `g(x, μ) = B(…)`.
#[derive(Clone)]
pub enum CoefficientForm {
    /// `A(∫κ(x,y)μ(dy))`, `B(∫ζ(x,y)μ(dy))`.
    SingleKernel {
        outer_drift: FieldMap,
        kernel_drift: Arc<dyn PairKernel>,
        outer_diff: FieldMap,
        kernel_diff: Arc<dyn PairKernel>,
    },
    /// `A(∫κ_1 dμ, …, ∫κ_q dμ)`; the outer maps receive the aggregates
    /// concatenated in kernel order.
    MultiKernel {
        outer_drift: FieldMap,
        kernels_drift: Vec<Arc<dyn PairKernel>>,
        outer_diff: FieldMap,
        kernels_diff: Vec<Arc<dyn PairKernel>>,
    },
    /// `A(∫κ(x,y_1..y_q) μ(dy_1)…μ(dy_q))`.
    HigherOrder {
        q: usize,
        outer_drift: FieldMap,
        kernel_drift: Arc<dyn TupleKernel>,
        outer_diff: FieldMap,
        kernel_diff: Arc<dyn TupleKernel>,
    },
}

impl fmt::Debug for CoefficientForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SingleKernel { .. } => f.write_str("SingleKernel"),
            Self::MultiKernel { kernels_drift, kernels_diff, .. } => write!(
                f,
                "MultiKernel(q_drift={}, q_diff={})",
                kernels_drift.len(),
                kernels_diff.len()
            ),
            Self::HigherOrder { q, .. } => write!(f, "HigherOrder(q={q})"),
        }
    }
}

fn expect_dim(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { what, expected, found })
    }
}

impl CoefficientForm {
    /// Interaction order `q` of a higher-order form, 1 otherwise.
    pub fn tuple_order(&self) -> usize {
        match self {
            Self::HigherOrder { q, .. } => *q,
            _ => 1,
        }
    }

    fn validate(&self, d: usize, m0: usize) -> Result<(), ModelError> {
        let dm = d * m0;
        match self {
            Self::SingleKernel { outer_drift, kernel_drift, outer_diff, kernel_diff } => {
                expect_dim("drift kernel output", d, kernel_drift.out_dim())?;
                expect_dim("diffusion kernel output", dm, kernel_diff.out_dim())?;
                expect_dim("outer drift input", d, outer_drift.in_dim())?;
                expect_dim("outer drift output", d, outer_drift.out_dim())?;
                expect_dim("outer diffusion input", dm, outer_diff.in_dim())?;
                expect_dim("outer diffusion output", dm, outer_diff.out_dim())
            }
            Self::MultiKernel { outer_drift, kernels_drift, outer_diff, kernels_diff } => {
                if kernels_drift.is_empty() || kernels_diff.is_empty() {
                    return Err(ModelError::InvalidInput(
                        "multi-kernel form needs at least one kernel per coefficient".into(),
                    ));
                }
                for k in kernels_drift {
                    expect_dim("drift kernel output", d, k.out_dim())?;
                }
                for k in kernels_diff {
                    expect_dim("diffusion kernel output", dm, k.out_dim())?;
                }
                expect_dim("outer drift input", d * kernels_drift.len(), outer_drift.in_dim())?;
                expect_dim("outer drift output", d, outer_drift.out_dim())?;
                expect_dim("outer diffusion input", dm * kernels_diff.len(), outer_diff.in_dim())?;
                expect_dim("outer diffusion output", dm, outer_diff.out_dim())
            }
            Self::HigherOrder { q, outer_drift, kernel_drift, outer_diff, kernel_diff } => {
                if *q == 0 {
                    return Err(ModelError::InvalidInput(
                        "interaction order q must be at least 1".into(),
                    ));
                }
                expect_dim("drift kernel output", d, kernel_drift.out_dim())?;
                expect_dim("diffusion kernel output", dm, kernel_diff.out_dim())?;
                expect_dim("outer drift input", d, outer_drift.in_dim())?;
                expect_dim("outer drift output", d, outer_drift.out_dim())?;
                expect_dim("outer diffusion input", dm, outer_diff.in_dim())?;
                expect_dim("outer diffusion output", dm, outer_diff.out_dim())
            }
        }
    }

    /// Writes `A(…)` into `drift` (length d) and `B(…)` into `diffusion`
    /// (row-major d×m0) for the particle at `x` against `ens`.
    pub(crate) fn evaluate_into(
        &self,
        x: &[f64],
        ens: &Ensemble,
        drift: &mut [f64],
        diffusion: &mut [f64],
    ) {
        match self {
            Self::SingleKernel { outer_drift, kernel_drift, outer_diff, kernel_diff } => {
                let mut agg = vec![0.0; kernel_drift.out_dim()];
                pair_aggregate_into(kernel_drift.as_ref(), x, ens, &mut agg);
                outer_drift.apply_into(&agg, drift);
                let mut agg = vec![0.0; kernel_diff.out_dim()];
                pair_aggregate_into(kernel_diff.as_ref(), x, ens, &mut agg);
                outer_diff.apply_into(&agg, diffusion);
            }
            Self::MultiKernel { outer_drift, kernels_drift, outer_diff, kernels_diff } => {
                let agg = concat_aggregates(kernels_drift, x, ens);
                outer_drift.apply_into(&agg, drift);
                let agg = concat_aggregates(kernels_diff, x, ens);
                outer_diff.apply_into(&agg, diffusion);
            }
            Self::HigherOrder { q, outer_drift, kernel_drift, outer_diff, kernel_diff } => {
                let mut agg = vec![0.0; kernel_drift.out_dim()];
                tuple_aggregate_into(kernel_drift.as_ref(), *q, x, ens, &mut agg);
                outer_drift.apply_into(&agg, drift);
                let mut agg = vec![0.0; kernel_diff.out_dim()];
                tuple_aggregate_into(kernel_diff.as_ref(), *q, x, ens, &mut agg);
                outer_diff.apply_into(&agg, diffusion);
            }
        }
    }
}

fn concat_aggregates(kernels: &[Arc<dyn PairKernel>], x: &[f64], ens: &Ensemble) -> Vec<f64> {
    let total = kernels.iter().map(|k| k.out_dim()).sum();
    let mut agg = vec![0.0; total];
    let mut offset = 0;
    for k in kernels {
        let w = k.out_dim();
        pair_aggregate_into(k.as_ref(), x, ens, &mut agg[offset..offset + w]);
        offset += w;
    }
    agg
}

/// Constants from the standing assumptions; carried for tests, never enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionMeta {
    pub one_sided_lipschitz: f64,
    pub growth_exponent: f64,
    pub kernel_lipschitz: Vec<f64>,
}

/// A fully specified McKean–Vlasov model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    name: String,
    state_dim: usize,
    noise_dim: usize,
    drift: FieldMap,
    interaction: CoefficientForm,
    initial: InitialLaw,
    assumption_meta: Option<AssumptionMeta>,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        noise_dim: usize,
        drift: FieldMap,
        interaction: CoefficientForm,
        initial: InitialLaw,
    ) -> Result<Self, ModelError> {
        if state_dim == 0 || noise_dim == 0 {
            return Err(ModelError::InvalidInput(
                "state and noise dimensions must be positive".into(),
            ));
        }
        expect_dim("drift input", state_dim, drift.in_dim())?;
        expect_dim("drift output", state_dim, drift.out_dim())?;
        let a0 = drift.apply(&vec![0.0; state_dim]);
        if a0.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput("drift at the origin is not finite".into()));
        }
        interaction.validate(state_dim, noise_dim)?;
        Ok(Self {
            name: name.into(),
            state_dim,
            noise_dim,
            drift,
            interaction,
            initial,
            assumption_meta: None,
        })
    }

    pub fn with_assumptions(mut self, meta: AssumptionMeta) -> Self {
        self.assumption_meta = Some(meta);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn drift(&self) -> &FieldMap {
        &self.drift
    }

    pub fn interaction(&self) -> &CoefficientForm {
        &self.interaction
    }

    pub fn initial_law(&self) -> &InitialLaw {
        &self.initial
    }

    pub fn assumption_meta(&self) -> Option<&AssumptionMeta> {
        self.assumption_meta.as_ref()
    }
}

/// Measure-dependent coefficients evaluated at one particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    /// `A(…)`, length d.
    pub drift: Vec<f64>,
    /// `B(…)`, row-major d×m0.
    pub diffusion: Vec<f64>,
}

/// Evaluates `f(x^i, μ̂)` and `g(x^i, μ̂)` for particle `i` of `ens`.
pub fn eval_interaction(
    model: &ModelSpec,
    i: usize,
    ens: &Ensemble,
) -> Result<Interaction, ModelError> {
    expect_dim("ensemble state dimension", model.state_dim, ens.dim())?;
    ens.check_index(i)?;
    let d = model.state_dim;
    let mut drift = vec![0.0; d];
    let mut diffusion = vec![0.0; d * model.noise_dim];
    model
        .interaction
        .evaluate_into(ens.particle(i), ens, &mut drift, &mut diffusion);
    Ok(Interaction { drift, diffusion })
}

#[inline]
fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Tamed drift `a / (1 + Δ^γ |a|)` in place; `scale` is `Δ^γ`.
#[inline]
pub(crate) fn tame_in_place(a: &mut [f64], scale: f64) {
    let denom = 1.0 + scale * euclidean_norm(a);
    for v in a.iter_mut() {
        *v /= denom;
    }
}

/// Tamed drift `a / (1 + Δ^γ |a|)` with the Euclidean norm.
///
/// The result never exceeds `min(|a|, Δ^{-γ})` in norm.
pub fn tame_drift(a_value: &[f64], dt: f64, gamma: f64) -> Result<Vec<f64>, ModelError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ModelError::InvalidInput(format!("step size must be positive, got {dt}")));
    }
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(ModelError::InvalidInput(format!(
            "taming exponent must lie in (0, 1/2], got {gamma}"
        )));
    }
    if a_value.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidInput("drift value is not finite".into()));
    }
    let mut out = a_value.to_vec();
    tame_in_place(&mut out, dt.powf(gamma));
    Ok(out)
}
