#![allow(dead_code)]

use chaoskit::model::{
    scalar_pair_kernel, CoefficientForm, FieldMap, InitialLaw, ModelSpec,
};

/// `dX = -X dt + X dW`, written as an interaction-free single-kernel model.
pub fn geometric_linear() -> ModelSpec {
    let interaction = CoefficientForm::SingleKernel {
        outer_drift: FieldMap::zero(1, 1),
        kernel_drift: scalar_pair_kernel(|_, _| 0.0),
        outer_diff: FieldMap::identity(1),
        kernel_diff: scalar_pair_kernel(|x, _| x),
    };
    ModelSpec::new(
        "geometric_linear",
        1,
        1,
        FieldMap::elementwise(1, |x| -x),
        interaction,
        InitialLaw::dirac(vec![1.0]),
    )
    .unwrap()
}

/// Brownian motion started from a standard normal sample; the kernels are ignored.
pub fn free_brownian() -> ModelSpec {
    let interaction = CoefficientForm::SingleKernel {
        outer_drift: FieldMap::zero(1, 1),
        kernel_drift: scalar_pair_kernel(|x, y| (x - y).sin()),
        outer_diff: FieldMap::constant(1, vec![1.0]),
        kernel_diff: scalar_pair_kernel(|x, y| x * y),
    };
    ModelSpec::new(
        "free_brownian",
        1,
        1,
        FieldMap::zero(1, 1),
        interaction,
        InitialLaw::standard_normal(),
    )
    .unwrap()
}

/// Every coefficient zero in dimension `d`.
pub fn frozen(d: usize) -> ModelSpec {
    let zero_pair = |out| chaoskit::model::pair_kernel(out, |_, _, o: &mut [f64]| o.fill(0.0));
    let interaction = CoefficientForm::SingleKernel {
        outer_drift: FieldMap::zero(d, d),
        kernel_drift: zero_pair(d),
        outer_diff: FieldMap::zero(d, d),
        kernel_diff: zero_pair(d),
    };
    ModelSpec::new("frozen", d, 1, FieldMap::zero(d, d), interaction, InitialLaw::standard_normal()).unwrap()
}
