//! Driving the coordinate ascent by hand and watching the ELBO.

use gvssb::cavi::{initialize_state, CaviEngine};
use gvssb::simbench::{gen_linear, preset, SimScenario};
use gvssb::{make_grouped_design, standardize, FitConfig, Hyperparams, SlabSpec};

pub fn run_example() -> gvssb::Result<Vec<f64>> {
    let sc = SimScenario {
        n: 80,
        g: 30,
        ..preset("supp-table3", 1.5, 4)?
    };
    let data = gen_linear(&sc)?;
    let raw = make_grouped_design(&data.x, &sc.group_labels())?;
    let (design, y, _) = standardize(&raw, &data.y)?;

    let slab = SlabSpec::laplacian(1.0)?;
    let hyper = Hyperparams::default_for(&slab, design.n_groups());
    let config = FitConfig {
        em_enabled: false,
        ..FitConfig::default()
    };
    let state = initialize_state(&design, &y, &hyper, &config)?;
    let mut engine = CaviEngine::new(&design, &y, slab, hyper, state);

    let mut trace = vec![engine.elbo()?];
    for sweep in 0..8 {
        let stats = engine.sweep(sweep, &config)?;
        trace.push(stats.elbo);
        println!(
            "sweep {sweep}: ELBO {:.4}  dH {:.2e}  dsigma {:.2e}",
            stats.elbo, stats.delta_h, stats.delta_sigma
        );
    }
    Ok(trace)
}

#[allow(dead_code)]
fn main() -> gvssb::Result<()> {
    run_example().map(|_| ())
}
