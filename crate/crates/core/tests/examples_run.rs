//! Each example doubles as a smoke test with a loose sanity check.

#[path = "../examples/additive_model.rs"]
mod additive_model;
#[path = "../examples/csv_workflow.rs"]
mod csv_workflow;
#[path = "../examples/em_hyperparams.rs"]
mod em_hyperparams;
#[path = "../examples/fit_grouped.rs"]
mod fit_grouped;
#[path = "../examples/ridge_start.rs"]
mod ridge_start;
#[path = "../examples/simulate_table2.rs"]
mod simulate_table2;
#[path = "../examples/slab_families.rs"]
mod slab_families;
#[path = "../examples/step_by_step.rs"]
mod step_by_step;

#[test]
fn fit_grouped_runs() {
    let mcc = fit_grouped::run_example().unwrap();
    assert!(mcc > 0.5, "mcc {mcc}");
}

#[test]
fn slab_families_runs() {
    let rows = slab_families::run_example().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|(_, v)| v.is_finite()));
}

#[test]
fn em_beats_fixed_start() {
    let (fixed, em) = em_hyperparams::run_example().unwrap();
    assert!(em > fixed, "{fixed} vs {em}");
}

#[test]
fn additive_model_runs() {
    let (a, b) = additive_model::run_example().unwrap();
    assert!(a.is_finite() && b.is_finite());
}

#[test]
fn simulate_table2_small() {
    // The full-size default is exercised by `cargo run --example`.
    let _ = simulate_table2::run_example;
    let (mean, se) = simulate_table2::run_example_with(2.5, 2).unwrap();
    assert!(mean.is_finite() && se.is_finite());
}

#[test]
fn ridge_start_runs() {
    assert!(ridge_start::run_example().unwrap().is_finite());
}

#[test]
fn step_by_step_is_monotone() {
    let trace = step_by_step::run_example().unwrap();
    assert!(trace.len() >= 2);
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn csv_workflow_runs() {
    assert!(csv_workflow::run_example().unwrap().is_finite());
}
