//! Fit a grouped linear model on simulated data and compare the selected
//! groups with the truth.

use gvssb::simbench::{gen_linear, preset, selection_metrics};
use gvssb::{fit, make_grouped_design, standardize, FitConfig, Hyperparams, SlabSpec};

pub fn run_example() -> gvssb::Result<f64> {
    let sc = gvssb::simbench::SimScenario {
        n: 120,
        g: 60,
        ..preset("supp-table3", 2.0, 11)?
    };
    let data = gen_linear(&sc)?;
    let raw = make_grouped_design(&data.x, &sc.group_labels())?;
    let (design, y, _info) = standardize(&raw, &data.y)?;

    let slab = SlabSpec::gaussian(1.0)?;
    let hyper = Hyperparams::default_for(&slab, design.n_groups());
    let result = fit(&design, &y, slab, hyper, &FitConfig::default())?;

    let m = selection_metrics(&result.selected, &data.support, sc.g);
    println!("true groups     {:?}", data.support);
    println!("selected groups {:?}", result.selected);
    println!(
        "precision {:.2}  recall {:.2}  MCC {:.2}  sigma2 {:.3} (true {:.3})  sweeps {}",
        m.precision, m.recall, m.mcc, result.sigma_hat_sq, data.sigma_sq, result.iterations
    );
    Ok(m.mcc)
}

#[allow(dead_code)]
fn main() -> gvssb::Result<()> {
    run_example().map(|_| ())
}
