//! The CLI workflow in-process: write CSVs, fit, save the report, predict.

use gvssb::cli::{cmd_fit, cmd_predict, write_matrix_csv, write_vector_csv, FitArgs, ModelFlags, PredictArgs};
use gvssb::simbench::{gen_linear, preset, SimScenario};

pub fn run_example() -> gvssb::Result<f64> {
    let dir = std::env::temp_dir().join(format!("gvssb-csv-workflow-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let sc = SimScenario {
        n: 100,
        g: 20,
        ..preset("supp-table3", 2.0, 2)?
    };
    let data = gen_linear(&sc)?;
    let names: Vec<String> = (1..=sc.n_columns()).map(|c| format!("x{c}")).collect();
    write_matrix_csv(&dir.join("x.csv"), &names, &data.x)?;
    write_vector_csv(&dir.join("y.csv"), "y", &data.y)?;
    let mut w = csv::Writer::from_path(dir.join("groups.csv"))?;
    w.write_record(["column", "group"])?;
    for (c, g) in names.iter().zip(sc.group_labels()) {
        w.write_record([c.as_str(), g.as_str()])?;
    }
    w.flush()?;

    let report = cmd_fit(&FitArgs {
        x: dir.join("x.csv"),
        y: dir.join("y.csv"),
        groups: Some(dir.join("groups.csv")),
        out: dir.join("fit.json"),
        model: ModelFlags {
            slab: "laplacian".into(),
            ..ModelFlags::default()
        },
    })?;
    println!("selected {:?}, sigma2 {:.3}", report.selected, report.sigma2_hat);

    let summary = cmd_predict(&PredictArgs {
        model: dir.join("fit.json"),
        sidecar: None,
        x: dir.join("x.csv"),
        truth: Some(dir.join("y.csv")),
        out: dir.join("pred.csv"),
    })?;
    let mse = summary.mse.unwrap_or(f64::NAN);
    println!("in-sample MSE {mse:.3} over {} rows", summary.rows);
    std::fs::remove_dir_all(&dir)?;
    Ok(mse)
}

#[allow(dead_code)]
fn main() -> gvssb::Result<()> {
    run_example().map(|_| ())
}
