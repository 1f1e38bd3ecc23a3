//! Built-in test models.
//!
//! All four share a superlinear dissipative drift (`x - x^3` or `x - x^5`,
//! componentwise) and start from independent standard normal coordinates.
//! Functions applied to vectors or matrices act entrywise.

use std::sync::Arc;

use super::{
    AssumptionMeta, CoefficientForm, Ensemble, FieldMap, InitialLaw,
    ModelError, ModelSpec, PairKernel, TupleKernel,
};

#[derive(Debug, Clone, Copy)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub form: &'static str,
    pub scalar_only: bool,
    pub description: &'static str,
}

pub const SCENARIOS: [ScenarioInfo; 4] = [
    ScenarioInfo {
        name: "example1",
        form: "single kernel",
        scalar_only: true,
        description: "scalar; a=x-x^3, A=logistic, kappa=atan(x+y), B=sin, zeta=sqrt(x^2+y^2)",
    },
    ScenarioInfo {
        name: "example2",
        form: "single kernel",
        scalar_only: false,
        description: "d-dim, d-dim noise; a=x-x^3, A=sin, kappa_k=sign(x_k)|x_k+y_k|, B=cos, \
                      zeta diagonal sqrt(x_k^2+y_k^2) with columns x_c off the diagonal",
    },
    ScenarioInfo {
        name: "example3",
        form: "multi kernel (q=2)",
        scalar_only: false,
        description: "d-dim, d-dim noise; a=x-x^5, A(u,v)=logistic(u-v), kappa1=atan(x+y), \
                      kappa2=atan(x-y), B(U,V)=sqrt(U^2+V^2), zeta1/zeta2 diagonal |x_k+-y_k|",
    },
    ScenarioInfo {
        name: "example4",
        form: "higher order (q=2)",
        scalar_only: true,
        description: "scalar; a=x-x^5, A=tanh, kappa=|x+y+z|, B=logistic, \
                      zeta=(x+y)/sqrt(1+x^2+y^2+z^2)",
    },
];

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sign with `sign(0) = 0`.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn polynomial_drift(d: usize, power: i32) -> FieldMap {
    FieldMap::elementwise(d, move |x| x - x.powi(power))
}

/// d×d matrix kernel whose diagonal is `diag(x_k, y_k)` and whose entry
/// `(r, c)`, `r ≠ c`, is `x_c`.
///
/// The off-diagonal aggregate of column `c` is the same running sum for every
/// row, so it is accumulated once and copied.
struct DiagonalColumnKernel<F> {
    d: usize,
    diag: F,
}

impl<F> PairKernel for DiagonalColumnKernel<F>
where
    F: Fn(f64, f64) -> f64 + Send + Sync,
{
    fn out_dim(&self) -> usize {
        self.d * self.d
    }

    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.d;
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = if r == c { (self.diag)(x[c], y[c]) } else { x[c] };
            }
        }
    }

    fn accumulate(&self, x: &[f64], ens: &Ensemble, acc: &mut [f64]) {
        let d = self.d;
        let anchor = |c: usize| ((c + 1) % d) * d + c;
        let shared = (0..d).all(|c| (0..d).filter(|&r| r != c).all(|r| acc[r * d + c] == acc[anchor(c)]));
        if !shared {
            let mut scratch = vec![0.0; d * d];
            for y in ens.iter() {
                self.eval(x, y, &mut scratch);
                for (a, s) in acc.iter_mut().zip(&scratch) {
                    *a += *s;
                }
            }
            return;
        }
        let mut diag: Vec<f64> = (0..d).map(|c| acc[c * d + c]).collect();
        let mut column: Vec<f64> = (0..d).map(|c| acc[anchor(c)]).collect();
        for y in ens.iter() {
            for c in 0..d {
                diag[c] += (self.diag)(x[c], y[c]);
                column[c] += x[c];
            }
        }
        for r in 0..d {
            for c in 0..d {
                acc[r * d + c] = if r == c { diag[c] } else { column[c] };
            }
        }
    }
}

/// Scalar kernel `κ(x, y, z)` for a second-order interaction.
struct ScalarTripleKernel<F> {
    f: F,
}

impl<F> TupleKernel for ScalarTripleKernel<F>
where
    F: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    fn out_dim(&self) -> usize {
        1
    }

    #[inline]
    fn eval(&self, x: &[f64], ys: &[&[f64]], out: &mut [f64]) {
        out[0] = (self.f)(x[0], ys[0][0], ys[1][0]);
    }

    fn accumulate(&self, x: &[f64], q: usize, ens: &Ensemble, acc: &mut [f64]) {
        debug_assert_eq!(q, 2, "scalar triple kernel is a second-order interaction");
        let xs = ens.as_flat();
        let x = x[0];
        let mut sum = acc[0];
        for &y in xs {
            for &z in xs {
                sum += (self.f)(x, y, z);
            }
        }
        acc[0] = sum;
    }
}

fn example1() -> Result<ModelSpec, ModelError> {
    let form = CoefficientForm::SingleKernel {
        outer_drift: FieldMap::elementwise(1, logistic),
        kernel_drift: super::scalar_pair_kernel(|x, y| (x + y).atan()),
        outer_diff: FieldMap::elementwise(1, f64::sin),
        kernel_diff: super::scalar_pair_kernel(|x, y| (x * x + y * y).sqrt()),
    };
    Ok(ModelSpec::new("example1", 1, 1, polynomial_drift(1, 3), form, InitialLaw::standard_normal())?
        .with_assumptions(AssumptionMeta {
            one_sided_lipschitz: 1.0,
            growth_exponent: 3.0,
            kernel_lipschitz: vec![0.25, 1.0, 1.0, 1.0],
        }))
}

fn example2(d: usize) -> Result<ModelSpec, ModelError> {
    let kernel_drift = super::pair_kernel(d, |x, y, out| {
        for k in 0..out.len() {
            out[k] = sign(x[k]) * (x[k] + y[k]).abs();
        }
    });
    let kernel_diff: Arc<dyn PairKernel> = Arc::new(DiagonalColumnKernel {
        d,
        diag: |x: f64, y: f64| (x * x + y * y).sqrt(),
    });
    let form = CoefficientForm::SingleKernel {
        outer_drift: FieldMap::elementwise(d, f64::sin),
        kernel_drift,
        outer_diff: FieldMap::elementwise(d * d, f64::cos),
        kernel_diff,
    };
    Ok(ModelSpec::new("example2", d, d, polynomial_drift(d, 3), form, InitialLaw::standard_normal())?
        .with_assumptions(AssumptionMeta {
            one_sided_lipschitz: 1.0,
            growth_exponent: 3.0,
            kernel_lipschitz: vec![1.0, 2.0, 1.0, 1.0],
        }))
}

fn example3(d: usize) -> Result<ModelSpec, ModelError> {
    let kappa1 = super::pair_kernel(d, |x, y, out| {
        for k in 0..out.len() {
            out[k] = (x[k] + y[k]).atan();
        }
    });
    let kappa2 = super::pair_kernel(d, |x, y, out| {
        for k in 0..out.len() {
            out[k] = (x[k] - y[k]).atan();
        }
    });
    let zeta1: Arc<dyn PairKernel> =
        Arc::new(DiagonalColumnKernel { d, diag: |x: f64, y: f64| (x + y).abs() });
    let zeta2: Arc<dyn PairKernel> =
        Arc::new(DiagonalColumnKernel { d, diag: |x: f64, y: f64| (x - y).abs() });
    // A acts on the difference of the two aggregates.
    let outer_drift = FieldMap::new(2 * d, d, move |u, out| {
        let (u1, u2) = u.split_at(d);
        for k in 0..d {
            out[k] = logistic(u1[k] - u2[k]);
        }
    });
    let dd = d * d;
    let outer_diff = FieldMap::new(2 * dd, dd, move |u, out| {
        let (u1, u2) = u.split_at(dd);
        for k in 0..dd {
            out[k] = (u1[k] * u1[k] + u2[k] * u2[k]).sqrt();
        }
    });
    let form = CoefficientForm::MultiKernel {
        outer_drift,
        kernels_drift: vec![kappa1, kappa2],
        outer_diff,
        kernels_diff: vec![zeta1, zeta2],
    };
    Ok(ModelSpec::new("example3", d, d, polynomial_drift(d, 5), form, InitialLaw::standard_normal())?
        .with_assumptions(AssumptionMeta {
            one_sided_lipschitz: 1.0,
            growth_exponent: 5.0,
            kernel_lipschitz: vec![0.25, 1.0, 1.0, 1.0],
        }))
}

fn example4() -> Result<ModelSpec, ModelError> {
    let kernel_drift: Arc<dyn TupleKernel> =
        Arc::new(ScalarTripleKernel { f: |x: f64, y: f64, z: f64| (x + y + z).abs() });
    let kernel_diff: Arc<dyn TupleKernel> = Arc::new(ScalarTripleKernel {
        f: |x: f64, y: f64, z: f64| (x + y) / (1.0 + x * x + y * y + z * z).sqrt(),
    });
    let form = CoefficientForm::HigherOrder {
        q: 2,
        outer_drift: FieldMap::elementwise(1, f64::tanh),
        kernel_drift,
        outer_diff: FieldMap::elementwise(1, logistic),
        kernel_diff,
    };
    Ok(ModelSpec::new("example4", 1, 1, polynomial_drift(1, 5), form, InitialLaw::standard_normal())?
        .with_assumptions(AssumptionMeta {
            one_sided_lipschitz: 1.0,
            growth_exponent: 5.0,
            kernel_lipschitz: vec![1.0, 1.0, 0.25, 2.0],
        }))
}

/// Builds one of the preset models by name.
pub fn build_scenario(name: &str, d: usize) -> Result<ModelSpec, ModelError> {
    let info = SCENARIOS
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| ModelError::UnknownScenario(name.to_string()))?;
    if info.scalar_only && d != 1 {
        return Err(ModelError::InvalidInput(format!("{name} is scalar; d must be 1, got {d}")));
    }
    if d == 0 {
        return Err(ModelError::InvalidInput("d must be positive".into()));
    }
    match name {
        "example1" => example1(),
        "example2" => example2(d),
        "example3" => example3(d),
        "example4" => example4(),
        _ => unreachable!("scenario table and builder disagree"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{aggregate_higher, aggregate_single, eval_interaction};

    /// Delegates `eval` only, so the trait's default accumulation is used.
    struct PlainPair<'a>(&'a dyn PairKernel);

    impl PairKernel for PlainPair<'_> {
        fn out_dim(&self) -> usize {
            self.0.out_dim()
        }
        fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
            self.0.eval(x, y, out)
        }
    }

    struct PlainTuple<'a>(&'a dyn TupleKernel);

    impl TupleKernel for PlainTuple<'_> {
        fn out_dim(&self) -> usize {
            self.0.out_dim()
        }
        fn eval(&self, x: &[f64], ys: &[&[f64]], out: &mut [f64]) {
            self.0.eval(x, ys, out)
        }
    }

    fn pseudo_points(n: usize, d: usize) -> Ensemble {
        let states = (0..n * d).map(|k| ((k as f64) * 0.7548776662).sin() * 2.3).collect();
        Ensemble::new(d, states, 0, 1.0).unwrap()
    }

    #[test]
    fn diagonal_column_override_matches_generic_bitwise() {
        for d in 1..=5 {
            let k = DiagonalColumnKernel { d, diag: |x: f64, y: f64| (x * x + y * y).sqrt() };
            let e = pseudo_points(13, d);
            for i in 0..13 {
                let fast = aggregate_single(&k, i, &e).unwrap();
                let plain = aggregate_single(&PlainPair(&k), i, &e).unwrap();
                assert_eq!(fast, plain, "d={d} i={i}");
            }
            // non-uniform starting accumulator takes the generic branch
            let mut acc: Vec<f64> = (0..d * d).map(|v| v as f64).collect();
            let mut expect = acc.clone();
            k.accumulate(e.particle(0), &e, &mut acc);
            PlainPair(&k).accumulate(e.particle(0), &e, &mut expect);
            assert_eq!(acc, expect);
        }
    }

    #[test]
    fn triple_override_matches_generic_bitwise() {
        let k = ScalarTripleKernel { f: |x: f64, y: f64, z: f64| (x + y) / (1.0 + x * x + y * y + z * z).sqrt() };
        let e = pseudo_points(9, 1);
        for i in 0..9 {
            assert_eq!(
                aggregate_higher(&k, 2, i, &e).unwrap(),
                aggregate_higher(&PlainTuple(&k), 2, i, &e).unwrap()
            );
        }
    }

    #[test]
    fn scenario_shapes() {
        let m = build_scenario("example1", 1).unwrap();
        assert_eq!((m.state_dim(), m.noise_dim()), (1, 1));
        assert!(matches!(m.interaction(), CoefficientForm::SingleKernel { .. }));
        assert_eq!(m.drift().apply(&[2.0]), vec![-6.0]);

        let m = build_scenario("example2", 4).unwrap();
        assert_eq!((m.state_dim(), m.noise_dim()), (4, 4));
        assert!(matches!(m.interaction(), CoefficientForm::SingleKernel { .. }));

        let m = build_scenario("example3", 3).unwrap();
        assert!(matches!(m.interaction(), CoefficientForm::MultiKernel { .. }));
        assert_eq!(m.drift().apply(&[2.0, 0.0, -1.0]), vec![-30.0, 0.0, 0.0]);

        let m = build_scenario("example4", 1).unwrap();
        assert_eq!(m.interaction().tuple_order(), 2);
    }

    #[test]
    fn scenario_rejections() {
        assert!(matches!(build_scenario("example9", 1), Err(ModelError::UnknownScenario(_))));
        assert!(build_scenario("example1", 2).is_err());
        assert!(build_scenario("example4", 3).is_err());
        assert!(build_scenario("example2", 0).is_err());
    }

    #[test]
    fn example1_coefficients_by_hand() {
        let m = build_scenario("example1", 1).unwrap();
        let e = Ensemble::from_scalars(&[0.5, -1.0]).unwrap();
        let out = eval_interaction(&m, 0, &e).unwrap();
        let kap = ((1.0f64).atan() + (-0.5f64).atan()) / 2.0;
        let zet = ((0.5f64 * 0.5 + 0.25).sqrt() + (0.25f64 + 1.0).sqrt()) / 2.0;
        assert!((out.drift[0] - 1.0 / (1.0 + (-kap).exp())).abs() < 1e-15);
        assert!((out.diffusion[0] - zet.sin()).abs() < 1e-15);
    }

    #[test]
    fn example2_coefficients_by_hand() {
        let m = build_scenario("example2", 2).unwrap();
        let e = Ensemble::from_points(&[vec![1.0, -2.0], vec![0.0, 3.0]]).unwrap();
        let out = eval_interaction(&m, 0, &e).unwrap();
        // κ_1 = sign(1)(|2| + |1|)/2 = 1.5, κ_2 = sign(-2)(|-4| + |1|)/2 = -2.5
        assert!((out.drift[0] - 1.5f64.sin()).abs() < 1e-15);
        assert!((out.drift[1] - (-2.5f64).sin()).abs() < 1e-15);
        let z11 = ((2.0f64).sqrt() + 1.0) / 2.0;
        let z22 = ((8.0f64).sqrt() + (13.0f64).sqrt()) / 2.0;
        let expect = [z11.cos(), (-2.0f64).cos(), 1.0f64.cos(), z22.cos()];
        for (a, b) in out.diffusion.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn example3_coefficients_by_hand() {
        let m = build_scenario("example3", 1).unwrap();
        let e = Ensemble::from_scalars(&[1.0, -0.5]).unwrap();
        let out = eval_interaction(&m, 1, &e).unwrap();
        let u1 = ((0.5f64).atan() + (-1.0f64).atan()) / 2.0;
        let u2 = ((-1.5f64).atan() + 0.0) / 2.0;
        assert!((out.drift[0] - 1.0 / (1.0 + (-(u1 - u2)).exp())).abs() < 1e-15);
        let z1: f64 = (0.5 + 1.0) / 2.0;
        let z2 = (1.5 + 0.0) / 2.0;
        assert!((out.diffusion[0] - (z1 * z1 + z2 * z2).sqrt()).abs() < 1e-15);
    }


    #[test]
    fn example4_coefficients_by_hand() {
        let m = build_scenario("example4", 1).unwrap();
        let xs = [0.3, -1.2];
        let e = Ensemble::from_scalars(&xs).unwrap();
        let out = eval_interaction(&m, 0, &e).unwrap();
        let x = xs[0];
        let mut k = 0.0;
        let mut z = 0.0;
        for &y in &xs {
            for &w in &xs {
                k += (x + y + w).abs();
                z += (x + y) / (1.0 + x * x + y * y + w * w).sqrt();
            }
        }
        assert!((out.drift[0] - (k / 4.0).tanh()).abs() < 1e-15);
        assert!((out.diffusion[0] - 1.0 / (1.0 + (-z / 4.0).exp())).abs() < 1e-15);
    }
}
