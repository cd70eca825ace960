//! Command-line front end: CSV ingestion, fitting, prediction and
//! simulation sweeps.
//!
//! Each `cmd_*` function is callable in-process; the `gvssb` binary only
//! parses arguments and maps the outcome to an exit code.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::additive::{expand_additive, predict_additive_with, BasisInfo};
use crate::cavi::fit;
use crate::error::{GvssbError, Result};
use crate::preprocess::{standardize, StandardizationInfo};
use crate::simbench::{
    self, gen_linear, preset, run_additive_replication, run_linear_replication, run_parallel,
    AdditiveParams, SimScenario,
};
use crate::types::{
    make_grouped_design, FitConfig, FitResult, GroupedDesign, Hyperparams, SlabSpec,
};

#[derive(Debug, Parser)]
#[command(name = "gvssb", version, about = "Grouped variational spike-and-slab regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a grouped linear model from CSV files.
    Fit(FitArgs),
    /// Fit a sparse additive model with a B-spline expansion per covariate.
    AdditiveFit(AdditiveFitArgs),
    /// Run a simulation study and write per-replication metrics.
    Simulate(SimulateArgs),
    /// Predict from a saved report.
    Predict(PredictArgs),
}

/// Model and solver flags shared by the fitting commands.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelFlags {
    /// Slab family: gaussian, laplacian, t or cauchy.
    #[arg(long, default_value = "gaussian")]
    pub slab: String,
    /// Degrees of freedom for the t slab.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Initial slab hyperparameter λ.
    #[arg(long, default_value_t = 1.0)]
    pub lambda0: f64,
    /// Initial inclusion probability (default 1/G).
    #[arg(long)]
    pub w0: Option<f64>,
    /// Enable EM updates of (λ, w) (the default).
    #[arg(long, overrides_with = "no_em")]
    pub em: bool,
    /// Disable EM updates of (λ, w).
    #[arg(long, overrides_with = "em")]
    pub no_em: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_h: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_sigma: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Inclusion-probability cutoff for the selected set.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Default for ModelFlags {
    fn default() -> Self {
        Self {
            slab: "gaussian".into(),
            nu: None,
            lambda0: 1.0,
            w0: None,
            em: false,
            no_em: false,
            eps_h: 1e-3,
            eps_sigma: 1e-3,
            max_iter: 500,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl ModelFlags {
    pub fn slab_spec(&self) -> Result<SlabSpec> {
        SlabSpec::from_name(&self.slab, self.lambda0, self.nu)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            eps_h: self.eps_h,
            eps_sigma: self.eps_sigma,
            max_iter: self.max_iter,
            em_enabled: !self.no_em,
            selection_threshold: self.threshold,
            rng_seed: self.seed,
            ..FitConfig::default()
        }
    }

    pub fn hyperparams(&self, slab: &SlabSpec, n_groups: usize) -> Hyperparams {
        let mut hyper = Hyperparams::default_for(slab, n_groups);
        if let Some(w) = self.w0 {
            hyper.w = w;
        }
        hyper
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Design CSV with a header row.
    #[arg(long)]
    pub x: PathBuf,
    /// Response CSV with a single column.
    #[arg(long)]
    pub y: PathBuf,
    /// CSV mapping column name to group name; each column is its own group
    /// when omitted.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Clone, Args)]
pub struct AdditiveFitArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    /// Basis functions per covariate.
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Basis sidecar path (default: `<out>.basis.json`).
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// supp-table2, supp-table3, additive1 or additive2.
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of groups (or covariates for additive presets).
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Basis functions per covariate for additive presets.
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    /// Mixing weight (additive2) or AR correlation (additive1).
    #[arg(long)]
    pub corr: Option<f64>,
    /// Metrics CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write each linear replication's X, y and groups CSVs here.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Report written by `fit` or `additive-fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Basis sidecar for additive reports (default: `<model>.basis.json`).
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long)]
    pub x: PathBuf,
    /// Optional observed responses; adds a squared-error summary.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Linear,
    Additive,
}

/// Structured fit report. Coefficient maps are keyed by group name; `mu`
/// is on the raw covariate scale so that
/// `intercept + Σ_g γ_g x_gᵀ mu_g` reproduces the fitted values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: ReportKind,
    /// Group names in fit order.
    pub groups: Vec<String>,
    /// Column names of each group, in coefficient order.
    pub group_columns: BTreeMap<String, Vec<String>>,
    pub gamma: BTreeMap<String, f64>,
    pub mu: BTreeMap<String, Vec<f64>>,
    pub mu_standardized: BTreeMap<String, Vec<f64>>,
    pub intercept: f64,
    pub sigma2_hat: f64,
    pub selected: Vec<String>,
    pub elbo_trace: Vec<f64>,
    pub hyper_trace: Vec<(f64, f64)>,
    pub final_lambda: f64,
    pub final_w: f64,
    pub iterations: usize,
    pub converged: bool,
    pub config: ModelFlags,
    pub wall_time_ms: u64,
}

impl FitReport {
    /// γ and standardized μ in fit order.
    pub fn standardized_state(&self) -> (Vec<f64>, Vec<DVector<f64>>) {
        let gamma = self.groups.iter().map(|g| self.gamma[g]).collect();
        let mu = self
            .groups
            .iter()
            .map(|g| DVector::from_vec(self.mu_standardized[g].clone()))
            .collect();
        (gamma, mu)
    }
}

/// What the additive sidecar stores to rebuild the design at predict time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSidecar {
    pub basis: BasisInfo,
    pub standardization: StandardizationInfo,
}

fn parse_err(path: &Path, msg: String) -> GvssbError {
    GvssbError::InvalidInput(format!("{}: {msg}", path.display()))
}

/// Reads a numeric CSV with a header row.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(parse_err(
                path,
                format!("row {} has {} fields, header has {}", r + 1, rec.len(), names.len()),
            ));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(path, format!("row {}, column `{}`: `{field}` is not a number", r + 1, names[c]))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || names.is_empty() {
        return Err(parse_err(path, "no data rows".into()));
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows, names.len(), &values)))
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let (names, m) = read_matrix_csv(path)?;
    if names.len() != 1 {
        return Err(parse_err(
            path,
            format!("expected a single column, found {}", names.len()),
        ));
    }
    Ok(m.column(0).into_owned())
}

/// Reads `column,group` pairs and returns one group label per design column.
pub fn read_groups_csv(path: &Path, columns: &[String]) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut map = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(parse_err(path, "expected two fields: column,group".into()));
        }
        map.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
    }
    columns
        .iter()
        .map(|c| {
            map.get(c)
                .cloned()
                .ok_or_else(|| parse_err(path, format!("column `{c}` has no group")))
        })
        .collect()
}

pub fn write_matrix_csv(path: &Path, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector_csv(path: &Path, name: &str, v: &DVector<f64>) -> Result<()> {
    write_matrix_csv(path, &[name.to_string()], &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| {
        GvssbError::InvalidInput(format!("cannot open {}: {e}", path.display()))
    })?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Assembles the report from a fit on a standardized design.
/// `column_names` are in source column order.
pub fn build_report(
    kind: ReportKind,
    result: &FitResult,
    design: &GroupedDesign,
    info: &StandardizationInfo,
    column_names: &[String],
    flags: &ModelFlags,
    wall_time_ms: u64,
) -> FitReport {
    let groups = design.group_names().to_vec();
    let (intercept, _) =
        info.destandardize(&design.flatten_coefficients(&result.state.theta_hat()));
    let (_, raw_mu) = info.destandardize(&design.flatten_coefficients(&result.state.mu));
    let raw_mu = design.split_coefficients(&raw_mu);
    let mut gamma = BTreeMap::new();
    let mut mu = BTreeMap::new();
    let mut mu_std = BTreeMap::new();
    let mut group_columns = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        gamma.insert(g.clone(), result.state.gamma[i]);
        mu.insert(g.clone(), raw_mu[i].iter().copied().collect());
        mu_std.insert(g.clone(), result.state.mu[i].iter().copied().collect());
        group_columns.insert(
            g.clone(),
            design.columns(i).iter().map(|&c| column_names[c].clone()).collect(),
        );
    }
    FitReport {
        kind,
        selected: result.selected.iter().map(|&i| groups[i].clone()).collect(),
        groups,
        group_columns,
        gamma,
        mu,
        mu_standardized: mu_std,
        intercept,
        sigma2_hat: result.sigma_hat_sq,
        elbo_trace: result.elbo_trace.clone(),
        hyper_trace: result.hyper_trace.clone(),
        final_lambda: result.hyper.lambda,
        final_w: result.hyper.w,
        iterations: result.iterations,
        converged: result.converged,
        config: flags.clone(),
        wall_time_ms,
    }
}

/// Fits raw in-memory data; the library twin of `fit`.
pub fn fit_linear_data(
    x: &DMatrix<f64>,
    column_names: &[String],
    labels: &[String],
    y: &DVector<f64>,
    flags: &ModelFlags,
) -> Result<FitReport> {
    let start = Instant::now();
    let slab = flags.slab_spec()?;
    let raw = make_grouped_design(x, labels)?;
    let (design, yc, info) = standardize(&raw, y)?;
    let hyper = flags.hyperparams(&slab, design.n_groups());
    let result = fit(&design, &yc, slab, hyper, &flags.fit_config())?;
    Ok(build_report(
        ReportKind::Linear,
        &result,
        &design,
        &info,
        column_names,
        flags,
        start.elapsed().as_millis() as u64,
    ))
}

pub fn cmd_fit(args: &FitArgs) -> Result<FitReport> {
    let (names, x) = read_matrix_csv(&args.x)?;
    let y = read_vector_csv(&args.y)?;
    if y.len() != x.nrows() {
        return Err(GvssbError::DimensionMismatch(format!(
            "X has {} rows, y has {}",
            x.nrows(),
            y.len()
        )));
    }
    let labels = match &args.groups {
        Some(path) => read_groups_csv(path, &names)?,
        None => names.clone(),
    };
    let report = fit_linear_data(&x, &names, &labels, &y, &args.model)?;
    write_json(&args.out, &report)?;
    Ok(report)
}

pub fn default_sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".basis.json");
    PathBuf::from(s)
}

/// Additive fit on in-memory data; returns the report and sidecar.
pub fn fit_additive_data(
    x: &DMatrix<f64>,
    names: &[String],
    y: &DVector<f64>,
    d: usize,
    flags: &ModelFlags,
) -> Result<(FitReport, AdditiveSidecar)> {
    let start = Instant::now();
    let slab = flags.slab_spec()?;
    let (expanded, basis) = expand_additive(x, d, Some(names))?;
    let (design, yc, info) = standardize(&expanded, y)?;
    let hyper = flags.hyperparams(&slab, design.n_groups());
    let result = fit(&design, &yc, slab, hyper, &flags.fit_config())?;
    let column_names: Vec<String> = names
        .iter()
        .flat_map(|n| (1..=d).map(move |k| format!("{n}[{k}]")))
        .collect();
    let report = build_report(
        ReportKind::Additive,
        &result,
        &design,
        &info,
        &column_names,
        flags,
        start.elapsed().as_millis() as u64,
    );
    Ok((
        report,
        AdditiveSidecar {
            basis,
            standardization: info,
        },
    ))
}

pub fn cmd_additive_fit(args: &AdditiveFitArgs) -> Result<FitReport> {
    let (names, x) = read_matrix_csv(&args.x)?;
    let y = read_vector_csv(&args.y)?;
    if y.len() != x.nrows() {
        return Err(GvssbError::DimensionMismatch(format!(
            "X has {} rows, y has {}",
            x.nrows(),
            y.len()
        )));
    }
    let (report, sidecar) = fit_additive_data(&x, &names, &y, args.d, &args.model)?;
    write_json(&args.out, &report)?;
    let side = args.sidecar.clone().unwrap_or_else(|| default_sidecar(&args.out));
    write_json(&side, &sidecar)?;
    Ok(report)
}

/// Reorders the columns of `x` to match `expected`.
fn align_columns(names: &[String], x: &DMatrix<f64>, expected: &[String]) -> Result<DMatrix<f64>> {
    let idx: Vec<usize> = expected
        .iter()
        .map(|e| {
            names.iter().position(|n| n == e).ok_or_else(|| {
                GvssbError::DimensionMismatch(format!("new data lacks column `{e}`"))
            })
        })
        .collect::<Result<_>>()?;
    Ok(x.select_columns(&idx))
}

/// Predictions from a linear report on raw covariates.
pub fn predict_linear(report: &FitReport, names: &[String], x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut yhat = DVector::from_element(x.nrows(), report.intercept);
    for g in &report.groups {
        let cols = &report.group_columns[g];
        let block = align_columns(names, x, cols)?;
        let coef = DVector::from_vec(report.mu[g].clone());
        yhat.gemv(report.gamma[g], &block, &coef, 1.0);
    }
    Ok(yhat)
}

/// Summary printed by `predict` when observed responses are supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub rows: usize,
    pub mse: Option<f64>,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PredictSummary> {
    let report: FitReport = read_json(&args.model)?;
    let (names, x) = read_matrix_csv(&args.x)?;
    let yhat = match report.kind {
        ReportKind::Linear => predict_linear(&report, &names, &x)?,
        ReportKind::Additive => {
            let side = args.sidecar.clone().unwrap_or_else(|| default_sidecar(&args.model));
            if !side.exists() {
                return Err(GvssbError::InvalidInput(format!(
                    "basis sidecar {} not found; pass --sidecar with the file written by additive-fit",
                    side.display()
                )));
            }
            let sidecar: AdditiveSidecar = read_json(&side)?;
            let x = align_columns(&names, &x, &sidecar.basis.names)?;
            let (gamma, mu) = report.standardized_state();
            predict_additive_with(&gamma, &mu, &sidecar.basis, &sidecar.standardization, &x)?
        }
    };
    write_vector_csv(&args.out, "yhat", &yhat)?;
    let mse = match &args.truth {
        Some(path) => {
            let y = read_vector_csv(path)?;
            if y.len() != yhat.len() {
                return Err(GvssbError::DimensionMismatch(format!(
                    "truth has {} rows, predictions {}",
                    y.len(),
                    yhat.len()
                )));
            }
            Some(simbench::mean_sq_err(&yhat, &y))
        }
        None => None,
    };
    Ok(PredictSummary {
        rows: yhat.len(),
        mse,
    })
}

fn linear_scenario(args: &SimulateArgs) -> Result<SimScenario> {
    let mut sc = preset(&args.preset, args.snr, args.model.seed)?;
    if let Some(n) = args.n {
        sc.n = n;
    }
    if let Some(g) = args.g {
        sc.g = g;
    }
    if let Some(k) = args.k {
        sc.k = k;
    }
    sc.validate()?;
    Ok(sc)
}

fn dump_replication(dir: &Path, sc: &SimScenario) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let data = gen_linear(sc)?;
    let names: Vec<String> = (1..=sc.n_columns()).map(|c| format!("x{c}")).collect();
    let r = sc.replicate;
    write_matrix_csv(&dir.join(format!("rep{r}_x.csv")), &names, &data.x)?;
    write_vector_csv(&dir.join(format!("rep{r}_y.csv")), "y", &data.y)?;
    let mut w = csv::Writer::from_path(dir.join(format!("rep{r}_groups.csv")))?;
    w.write_record(["column", "group"])?;
    for (c, g) in names.iter().zip(sc.group_labels()) {
        w.write_record([c.as_str(), g.as_str()])?;
    }
    w.flush()?;
    let theta_names = vec!["theta".to_string()];
    write_matrix_csv(
        &dir.join(format!("rep{r}_theta.csv")),
        &theta_names,
        &DMatrix::from_column_slice(data.theta.len(), 1, data.theta.as_slice()),
    )?;
    Ok(())
}

/// Runs the study and returns the per-replication rows.
pub fn simulate_rows(args: &SimulateArgs) -> Result<Vec<simbench::ReplicationRow>> {
    let slab = args.model.slab_spec()?;
    let config = args.model.fit_config();
    let seed = args.model.seed;
    match args.preset.as_str() {
        "additive1" | "additive2" => {
            let example = if args.preset == "additive1" { 1 } else { 2 };
            let mut base = AdditiveParams::example2_default(seed, 0);
            base.snr = Some(args.snr);
            if let Some(n) = args.n {
                base.n = n;
            }
            if let Some(g) = args.g {
                base.p = g;
            }
            match (example, args.corr) {
                (1, Some(c)) => base.rho = c,
                (_, Some(c)) => base.t = c,
                _ => {}
            }
            run_parallel(args.reps, args.jobs, |r| {
                let params = AdditiveParams {
                    replicate: r,
                    ..base.clone()
                };
                run_additive_replication(example, &params, args.d, slab, &config)
            })
        }
        _ => {
            let base = linear_scenario(args)?;
            if let Some(dir) = &args.data_dir {
                for r in 0..args.reps as u64 {
                    dump_replication(dir, &SimScenario { replicate: r, ..base.clone() })?;
                }
            }
            run_parallel(args.reps, args.jobs, |r| {
                let sc = SimScenario {
                    replicate: r,
                    ..base.clone()
                };
                run_linear_replication(&sc, slab, &config)
            })
        }
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<simbench::ReplicationRow>> {
    let rows = simulate_rows(args)?;
    match &args.out {
        Some(path) => simbench::write_csv(&rows, BufWriter::new(File::create(path)?))?,
        None => simbench::write_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(rows)
}

/// Process exit status for a finished command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Converged => 0,
            Outcome::NotConverged => 2,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let converged = match cli.command {
        Command::Fit(a) => cmd_fit(&a)?.converged,
        Command::AdditiveFit(a) => cmd_additive_fit(&a)?.converged,
        Command::Simulate(a) => cmd_simulate(&a)?.iter().all(|r| r.converged == 1.0),
        Command::Predict(a) => {
            let summary = cmd_predict(&a)?;
            if let Some(mse) = summary.mse {
                println!("mean squared prediction error: {mse}");
            }
            true
        }
    };
    Ok(if converged {
        Outcome::Converged
    } else {
        Outcome::NotConverged
    })
}
