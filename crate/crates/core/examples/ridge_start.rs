//! Cross-validated ridge path used to seed the variational means.

use gvssb::preprocess::{default_ridge_grid, ridge_init};
use gvssb::simbench::{gen_linear, preset, SimScenario};
use gvssb::{make_grouped_design, standardize};

pub fn run_example() -> gvssb::Result<f64> {
    let sc = SimScenario {
        n: 100,
        g: 40,
        ..preset("supp-table2", 2.0, 9)?
    };
    let data = gen_linear(&sc)?;
    let raw = make_grouped_design(&data.x, &sc.group_labels())?;
    let (design, y, _) = standardize(&raw, &data.y)?;
    let init = ridge_init(&design, &y, 10, &default_ridge_grid(), 0)?;
    println!(
        "p = {} > n = {}: chosen penalty {:.4}, CV error {:.4} over {} grid points",
        design.n_columns(),
        design.n(),
        init.penalty,
        init.cv_error.iter().cloned().fold(f64::INFINITY, f64::min),
        init.cv_error.len()
    );
    Ok(init.penalty)
}

#[allow(dead_code)]
fn main() -> gvssb::Result<()> {
    run_example().map(|_| ())
}
