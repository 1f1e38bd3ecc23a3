//! Counter-based Gaussian noise.
//!
//! Every standard normal the simulation consumes is `Φ^{-1}(U)` where `U` comes
//! from Philox4x32-10 applied to a counter built from
//! `(lane, particle, fine step, component)` under a key derived from the
//! master seed. Nothing is drawn sequentially from shared state, so the value
//! seen by particle `i` cannot depend on the particle count, the thread
//! schedule, or which time grid asked for it.

use statrs::function::erf::erfc_inv;

use super::EngineError;
use crate::model::NoiseSource;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Uniform on (0, 1) from the top 53 bits of a 64-bit word.
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal quantile.
#[inline]
pub fn standard_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Key lanes separating independent families of variates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
enum Lane {
    Brownian = 0,
    Initial = 1,
}

/// Immutable description of the Brownian paths shared by every simulation in a
/// coupled comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    master_seed: u64,
    fine_steps: usize,
    noise_dim: usize,
    horizon: f64,
}

impl NoisePlan {
    pub fn new(
        master_seed: u64,
        fine_steps: usize,
        noise_dim: usize,
        horizon: f64,
    ) -> Result<Self, EngineError> {
        if fine_steps == 0 || noise_dim == 0 {
            return Err(EngineError::InvalidInput(
                "noise plan needs a positive fine step count and noise dimension".into(),
            ));
        }
        if u32::try_from(fine_steps).is_err() {
            return Err(EngineError::InvalidInput("fine step count exceeds 2^32".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(EngineError::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { master_seed, fine_steps, noise_dim, horizon })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn fine_steps(&self) -> usize {
        self.fine_steps
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn fine_step_size(&self) -> f64 {
        self.horizon / self.fine_steps as f64
    }

    fn key(&self) -> [u32; 2] {
        [self.master_seed as u32, (self.master_seed >> 32) as u32]
    }

    #[inline]
    fn normal(&self, lane: Lane, particle: usize, index: u32, component: u32) -> f64 {
        let [a, b, _, _] = philox4x32_10(
            [component, index, particle as u32, lane as u32 | (((particle >> 32) as u32) << 1)],
            self.key(),
        );
        standard_normal_quantile(open_unit(u64::from(a) | (u64::from(b) << 32)))
    }

    /// `ΔW` of particle `i`, component `k`, over fine step `n`.
    #[inline]
    pub fn fine_increment(&self, i: usize, n: usize, k: usize) -> f64 {
        self.fine_step_size().sqrt() * self.normal(Lane::Brownian, i, n as u32, k as u32)
    }

    /// Sum of the fine increments `first..first + len`, split at the midpoint
    /// recursively; nested power-of-two grids agree bitwise.
    fn fine_sum(&self, i: usize, first: usize, len: usize, k: usize) -> f64 {
        if len == 1 {
            self.fine_increment(i, first, k)
        } else {
            let half = len / 2;
            self.fine_sum(i, first, half, k) + self.fine_sum(i, first + half, len - half, k)
        }
    }

    pub(crate) fn increment_into(&self, i: usize, n: usize, ratio: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.fine_sum(i, n * ratio, ratio, k);
        }
    }

    /// Increment of particle `i` over coarse step `n` of `grid`.
    pub fn brownian_increment(
        &self,
        i: usize,
        n: usize,
        grid: &TimeGrid,
    ) -> Result<Vec<f64>, EngineError> {
        let ratio = grid.refinement(self)?;
        if n >= grid.steps() {
            return Err(EngineError::InvalidInput(format!(
                "step index {n} outside a grid of {} steps",
                grid.steps()
            )));
        }
        let mut out = vec![0.0; self.noise_dim];
        self.increment_into(i, n, ratio, &mut out);
        Ok(out)
    }

    /// Variates reserved for the initial condition of particle `i`.
    pub fn initial_stream(&self, i: usize) -> ParticleStream<'_> {
        ParticleStream { plan: self, particle: i, next: 0 }
    }
}

/// Sequential view of one particle's initial-condition lane.
#[derive(Debug)]
pub struct ParticleStream<'a> {
    plan: &'a NoisePlan,
    particle: usize,
    next: u32,
}

impl ParticleStream<'_> {
    fn next_bits(&mut self) -> u64 {
        let [a, b, _, _] = philox4x32_10(
            [self.next, 0, self.particle as u32, Lane::Initial as u32 | (((self.particle >> 32) as u32) << 1)],
            self.plan.key(),
        );
        self.next += 1;
        u64::from(a) | (u64::from(b) << 32)
    }
}

impl NoiseSource for ParticleStream<'_> {
    fn next_standard_normal(&mut self) -> f64 {
        standard_normal_quantile(self.next_uniform())
    }

    fn next_uniform(&mut self) -> f64 {
        open_unit(self.next_bits())
    }
}

/// Uniform grid `t_n = nΔ`, `Δ = T/M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, EngineError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(EngineError::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Grid point `t_n`.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.step_size()
    }

    /// `δ_t = [t/Δ] Δ`, the grid point at or below `t`.
    pub fn floor_time(&self, t: f64) -> f64 {
        (t / self.step_size()).floor() * self.step_size()
    }

    /// Number of fine plan steps per grid step.
    pub fn refinement(&self, plan: &NoisePlan) -> Result<usize, EngineError> {
        let compatible = self.steps > 0
            && plan.fine_steps().is_multiple_of(self.steps)
            && plan.horizon() == self.horizon;
        if compatible {
            Ok(plan.fine_steps() / self.steps)
        } else {
            Err(EngineError::IncompatibleGrid {
                grid_steps: self.steps,
                fine_steps: plan.fine_steps(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32_10([0, 0, 0, 0], [0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn quantile_landmarks() {
        assert!(standard_normal_quantile(0.5).abs() < 1e-15);
        assert!((standard_normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((standard_normal_quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-11);
    }

    #[test]
    fn increments_are_deterministic() {
        let plan = NoisePlan::new(42, 8, 3, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let a = plan.brownian_increment(5, 3, &grid).unwrap();
        let b = plan.brownian_increment(5, 3, &grid).unwrap();
        assert_eq!(a, b);
        let other = NoisePlan::new(43, 8, 3, 1.0).unwrap();
        assert_ne!(a, other.brownian_increment(5, 3, &grid).unwrap());
    }

    #[test]
    fn unit_increment_moments() {
        let plan = NoisePlan::new(7, 1, 1, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| plan.brownian_increment(i, 0, &grid).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((0.98..=1.02).contains(&var), "variance {var}");
    }

    #[test]
    fn coarse_equals_sum_of_fine() {
        let plan = NoisePlan::new(11, 4, 2, 1.0).unwrap();
        let coarse = TimeGrid::new(1.0, 2).unwrap();
        let fine = TimeGrid::new(1.0, 4).unwrap();
        for i in 0..6 {
            for n in 0..2 {
                let c = plan.brownian_increment(i, n, &coarse).unwrap();
                let f0 = plan.brownian_increment(i, 2 * n, &fine).unwrap();
                let f1 = plan.brownian_increment(i, 2 * n + 1, &fine).unwrap();
                for k in 0..2 {
                    assert_eq!(c[k], f0[k] + f1[k]);
                }
            }
        }
    }

    #[test]
    fn nested_refinement_is_exact_across_levels() {
        let plan = NoisePlan::new(3, 64, 1, 2.0).unwrap();
        for m in [1usize, 2, 4, 8, 16, 32] {
            let coarse = TimeGrid::new(2.0, m).unwrap();
            let fine = TimeGrid::new(2.0, 2 * m).unwrap();
            for n in 0..m {
                let c = plan.brownian_increment(9, n, &coarse).unwrap()[0];
                let l = plan.brownian_increment(9, 2 * n, &fine).unwrap()[0];
                let r = plan.brownian_increment(9, 2 * n + 1, &fine).unwrap()[0];
                assert_eq!(c, l + r);
            }
        }
    }

    #[test]
    fn incompatible_grid_rejected() {
        let plan = NoisePlan::new(1, 6, 1, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        assert!(matches!(
            plan.brownian_increment(0, 0, &grid),
            Err(EngineError::IncompatibleGrid { grid_steps: 4, fine_steps: 6 })
        ));
        let other_horizon = TimeGrid::new(2.0, 3).unwrap();
        assert!(plan.brownian_increment(0, 0, &other_horizon).is_err());
    }

    #[test]
    fn floor_time_matches_grid_points() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        for n in 0..=8 {
            assert_eq!(grid.floor_time(grid.time(n)), grid.time(n));
        }
        assert_eq!(grid.floor_time(0.3), 0.25);
    }

    #[test]
    fn initial_lane_is_independent_of_brownian_lane() {
        let plan = NoisePlan::new(5, 1, 1, 1.0).unwrap();
        let mut s = plan.initial_stream(0);
        let z0 = s.next_standard_normal();
        let z1 = s.next_standard_normal();
        assert_ne!(z0, z1);
        let w = plan.fine_increment(0, 0, 0);
        assert_ne!(z0, w);
        let mut again = plan.initial_stream(0);
        assert_eq!(again.next_standard_normal(), z0);
    }
}
