//! Empirical-Bayes tuning of (λ, w) from a poor starting point.

use gvssb::simbench::{gen_linear, preset, selection_metrics, SimScenario};
use gvssb::{fit, make_grouped_design, standardize, FitConfig, Hyperparams, SlabSpec};

pub fn run_example() -> gvssb::Result<(f64, f64)> {
    let sc = SimScenario {
        n: 150,
        g: 100,
        ..preset("supp-table3", 2.0, 21)?
    };
    let data = gen_linear(&sc)?;
    let raw = make_grouped_design(&data.x, &sc.group_labels())?;
    let (design, y, _) = standardize(&raw, &data.y)?;

    let mut mcc = [0.0; 2];
    for (slot, em) in [false, true].into_iter().enumerate() {
        let slab = SlabSpec::laplacian(0.1)?;
        let hyper = Hyperparams {
            w: 0.5,
            ..Hyperparams::default_for(&slab, design.n_groups())
        };
        let config = FitConfig {
            em_enabled: em,
            ..FitConfig::default()
        };
        let r = fit(&design, &y, slab, hyper, &config)?;
        let m = selection_metrics(&r.selected, &data.support, sc.g);
        println!(
            "EM {:>5}: lambda {:.3} w {:.4}  selected {:>3}  MCC {:.2}",
            em,
            r.hyper.lambda,
            r.hyper.w,
            r.selected.len(),
            m.mcc
        );
        if em {
            for (i, (l, w)) in r.hyper_trace.iter().take(5).enumerate() {
                println!("   sweep {i}: lambda {l:.4} w {w:.4}");
            }
        }
        mcc[slot] = m.mcc;
    }
    Ok((mcc[0], mcc[1]))
}

#[allow(dead_code)]
fn main() -> gvssb::Result<()> {
    run_example().map(|_| ())
}
