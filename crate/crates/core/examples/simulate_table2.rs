//! Replication study on the n = G = 200 block-correlated design.
//!
//! `cargo run --release --example simulate_table2 -- 2.5 50` reproduces the
//! full 50-replication cell; the default is a quick 4-replication run.

use gvssb::simbench::{preset, run_linear_study, summarize};
use gvssb::{FitConfig, SlabSpec};

pub fn run_example_with(snr: f64, reps: usize) -> gvssb::Result<(f64, f64)> {
    let sc = preset("supp-table2", snr, 1)?;
    let rows = run_linear_study(&sc, reps, SlabSpec::gaussian(1.0)?, &FitConfig::default(), 0)?;
    let (mean, se) = summarize(&rows).expect("at least one replication");
    println!(
        "SNR {snr}: {reps} reps  MCC {:.3} (se {:.3})  log MSE {:.3} (se {:.3})  |s2/s2*-1| {:.3}",
        mean.mcc, se.mcc, mean.log_mse, se.log_mse, mean.sigma_rel_err
    );
    Ok((mean.mcc, mean.log_mse))
}

pub fn run_example() -> gvssb::Result<(f64, f64)> {
    run_example_with(2.5, 4)
}

#[allow(dead_code)]
fn main() -> gvssb::Result<()> {
    let mut args = std::env::args().skip(1);
    let snr = args.next().map_or(2.5, |s| s.parse().expect("snr"));
    let reps = args.next().map_or(4, |s| s.parse().expect("reps"));
    run_example_with(snr, reps).map(|_| ())
}
