mod common;

use chaoskit::engine::{NoisePlan, RecordMode, Stepper, TimeGrid};
use chaoskit::metrics::lp_coupled_error;
use chaoskit::model::build_scenario;

#[test]
fn shared_plan_couples_initial_states_and_increments() {
    let model = build_scenario("example1", 1).unwrap();
    let plan = NoisePlan::new(11, 16, 1, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let small = Stepper::default().simulate(&model, 4, &grid, &plan, RecordMode::Full).unwrap();
    let large = Stepper::default().simulate(&model, 8, &grid, &plan, RecordMode::Full).unwrap();
    for i in 0..4 {
        assert_eq!(small.ensembles()[0].particle(i), large.ensembles()[0].particle(i));
    }
    // the interaction makes later states differ
    assert_ne!(small.terminal().particle(0), large.terminal().particle(0));
}

#[test]
fn interaction_free_paths_do_not_depend_on_system_size() {
    let model = common::free_brownian();
    let plan = NoisePlan::new(5, 32, 1, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let small = Stepper::default().simulate(&model, 4, &grid, &plan, RecordMode::Full).unwrap();
    let large = Stepper::default().simulate(&model, 8, &grid, &plan, RecordMode::Full).unwrap();
    for (a, b) in small.ensembles().iter().zip(large.ensembles()) {
        for i in 0..4 {
            assert_eq!(a.particle(i), b.particle(i));
        }
    }
    let x0 = small.ensembles()[0].particle(1)[0];
    let w: f64 = (0..32).map(|n| plan.brownian_increment(1, n, &grid).unwrap()[0]).sum();
    assert!((small.terminal().particle(1)[0] - (x0 + w)).abs() < 1e-12);
}

#[test]
fn tamed_and_plain_schemes_agree_for_linear_drift() {
    let model = common::geometric_linear();
    let mut last = f64::INFINITY;
    for k in [4u32, 7, 10] {
        let m = 1usize << k;
        let plan = NoisePlan::new(3, m, 1, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, m).unwrap();
        let tamed = Stepper::default().simulate(&model, 64, &grid, &plan, RecordMode::Terminal).unwrap();
        let plain = Stepper::untamed().simulate(&model, 64, &grid, &plan, RecordMode::Terminal).unwrap();
        let gap = lp_coupled_error(tamed.terminal(), plain.terminal(), 2.0).unwrap();
        assert!(gap < last, "gap {gap} did not shrink (previous {last})");
        last = gap;
    }
    assert!(last < 0.05, "tamed and plain differ by {last} at dt = 2^-10");
}

#[test]
fn tamed_example1_moments_stay_bounded_over_long_horizon() {
    let model = build_scenario("example1", 1).unwrap();
    let plan = NoisePlan::new(8, 256, 1, 8.0).unwrap();
    let grid = TimeGrid::new(8.0, 256).unwrap();
    let traj = Stepper::default().simulate(&model, 32, &grid, &plan, RecordMode::Full).unwrap();
    for ens in traj.ensembles() {
        let m2 = chaoskit::metrics::empirical_moment(ens, 2.0).unwrap();
        assert!(m2.is_finite() && m2 < 10.0, "second moment {m2} at t = {}", ens.time());
    }
}
