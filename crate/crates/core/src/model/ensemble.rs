use super::ModelError;

/// Particle states at one time index, stored as `N` contiguous blocks of `d`
/// coordinates.
///
/// The ensemble doubles as the carrier of the empirical measure
/// `(1/N) Σ_j δ_{x^j}`; every aggregation over it includes the self term.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    states: Vec<f64>,
    time_index: usize,
    step_size: f64,
}

impl Ensemble {
    pub fn new(
        dim: usize,
        states: Vec<f64>,
        time_index: usize,
        step_size: f64,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidInput("state dimension must be positive".into()));
        }
        if states.is_empty() || !states.len().is_multiple_of(dim) {
            return Err(ModelError::DimensionMismatch {
                what: "ensemble states",
                expected: dim,
                found: states.len(),
            });
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(ModelError::InvalidInput(format!(
                "step size must be positive and finite, got {step_size}"
            )));
        }
        if let Some(pos) = states.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput(format!(
                "non-finite coordinate in particle {}",
                pos / dim
            )));
        }
        Ok(Self { dim, states, time_index, step_size })
    }

    /// Scalar ensemble convenience constructor (`d = 1`, time index 0, unit step).
    pub fn from_scalars(values: &[f64]) -> Result<Self, ModelError> {
        Self::new(1, values.to_vec(), 0, 1.0)
    }

    /// Builds an ensemble from per-particle vectors (time index 0, unit step).
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self, ModelError> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(ModelError::InvalidInput("ragged particle vectors".into()));
        }
        Self::new(dim, points.concat(), 0, 1.0)
    }

    pub(crate) fn from_parts_unchecked(
        dim: usize,
        states: Vec<f64>,
        time_index: usize,
        step_size: f64,
    ) -> Self {
        Self { dim, states, time_index, step_size }
    }

    pub fn particle_count(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// Physical time `n Δ`.
    pub fn time(&self) -> f64 {
        self.time_index as f64 * self.step_size
    }

    #[inline]
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.states.chunks_exact(self.dim)
    }

    /// Flat coordinate buffer, particle-major.
    pub fn as_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.states
    }

    /// First coordinate of every particle; used by the 1-D metrics.
    pub fn first_coordinates(&self) -> Vec<f64> {
        self.iter().map(|p| p[0]).collect()
    }

    pub fn check_index(&self, i: usize) -> Result<(), ModelError> {
        let n = self.particle_count();
        if i < n {
            Ok(())
        } else {
            Err(ModelError::IndexOutOfRange { index: i, count: n })
        }
    }
}
