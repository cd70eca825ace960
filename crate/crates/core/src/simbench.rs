//! Simulation scenarios, replication runner and evaluation metrics.
//!
//! Every replication draws from its own ChaCha stream keyed by
//! `(seed, replicate)`, so results do not depend on thread count.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::{expand_additive, predict_additive};
use crate::cavi::fit;
use crate::error::{GvssbError, Result};
use crate::preprocess::standardize;
use crate::types::{make_grouped_design, FitConfig, FitResult, Hyperparams, SlabSpec};

/// Log-MSE floor used when the estimate is exact.
pub const LOG_MSE_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Correlation {
    /// Equicorrelated within groups, constant between groups.
    Block { within: f64, between: f64 },
    /// `ρ^{|i−j|}` across all columns.
    Ar { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoefLaw {
    Uniform { lo: f64, hi: f64 },
    Laplace { scale: f64 },
    Gaussian { sd: f64 },
    /// `0.5·N(−1, 0.25) + 0.5·N(1, 0.25)`.
    GaussianMixture,
    StudentT { df: f64 },
}

impl CoefLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            CoefLaw::Uniform { lo, hi } => rng.random_range(lo..=hi),
            CoefLaw::Laplace { scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            CoefLaw::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            CoefLaw::GaussianMixture => {
                let centre = if rng.random::<bool>() { 1.0 } else { -1.0 };
                centre + 0.5 * rng.sample::<f64, _>(StandardNormal)
            }
            CoefLaw::StudentT { df } => StudentT::new(df)
                .expect("validated degrees of freedom")
                .sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub g: usize,
    pub p_i: usize,
    pub k: usize,
    pub correlation: Correlation,
    pub snr: f64,
    pub coef_law: CoefLaw,
    pub seed: u64,
    /// Replication index; selects the RNG stream.
    pub replicate: u64,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GvssbError::InvalidInput(m));
        if self.n < 2 || self.g == 0 || self.p_i == 0 {
            return bad(format!(
                "need n >= 2, G >= 1, p_i >= 1 (got {}, {}, {})",
                self.n, self.g, self.p_i
            ));
        }
        if self.k > self.g {
            return bad(format!("k = {} exceeds G = {}", self.k, self.g));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return bad(format!("snr must be positive, got {}", self.snr));
        }
        match self.correlation {
            Correlation::Block { within, between } => {
                if !(within.abs() < 1.0 && between.abs() < 1.0) {
                    return bad("correlations must lie in (-1, 1)".into());
                }
            }
            Correlation::Ar { rho } => {
                if rho.abs() >= 1.0 {
                    return bad(format!("AR coefficient {rho} not in (-1, 1)"));
                }
            }
        }
        if let CoefLaw::StudentT { df } = self.coef_law {
            if df <= 0.0 {
                return bad(format!("t degrees of freedom must be positive, got {df}"));
            }
        }
        Ok(())
    }

    pub fn n_columns(&self) -> usize {
        self.g * self.p_i
    }

    pub fn group_labels(&self) -> Vec<String> {
        (0..self.n_columns())
            .map(|c| format!("g{}", c / self.p_i + 1))
            .collect()
    }
}

/// Named scenario from the replication tables: `supp-table2` (k = 10) or
/// `supp-table3` (k = 5), both `n = G = 200`, `p_i = 5`, ρ = 0.6 / 0.2,
/// Uniform[−0.5, 0.5] coefficients.
pub fn preset(name: &str, snr: f64, seed: u64) -> Result<SimScenario> {
    let k = match name {
        "supp-table2" => 10,
        "supp-table3" => 5,
        other => {
            return Err(GvssbError::InvalidInput(format!(
                "unknown preset `{other}` (expected supp-table2 or supp-table3)"
            )))
        }
    };
    let sc = SimScenario {
        n: 200,
        g: 200,
        p_i: 5,
        k,
        correlation: Correlation::Block {
            within: 0.6,
            between: 0.2,
        },
        snr,
        coef_law: CoefLaw::Uniform { lo: -0.5, hi: 0.5 },
        seed,
        replicate: 0,
    };
    sc.validate()?;
    Ok(sc)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_matrix<R: Rng>(rng: &mut R, n: usize, p: usize) -> DMatrix<f64> {
    // Row-major fill so draws do not depend on storage order.
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m[(i, j)] = normal(rng);
        }
    }
    m
}

fn block_correlation(p: usize, p_i: usize, within: f64, between: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            1.0
        } else if a / p_i == b / p_i {
            within
        } else {
            between
        }
    })
}

/// Rows i.i.d. `N(0, Σ)` for the given correlation structure.
pub fn gen_design<R: Rng>(
    rng: &mut R,
    n: usize,
    g: usize,
    p_i: usize,
    corr: Correlation,
) -> Result<DMatrix<f64>> {
    let p = g * p_i;
    match corr {
        Correlation::Block { within, between } if within >= between && between >= 0.0 => {
            // Factor form: shared, group and idiosyncratic components.
            let shared = normal_matrix(rng, n, 1);
            let group = normal_matrix(rng, n, g);
            let own = normal_matrix(rng, n, p);
            let (a, b, c) = (between.sqrt(), (within - between).sqrt(), (1.0 - within).sqrt());
            Ok(DMatrix::from_fn(n, p, |i, j| {
                a * shared[(i, 0)] + b * group[(i, j / p_i)] + c * own[(i, j)]
            }))
        }
        Correlation::Block { within, between } => {
            let l = block_correlation(p, p_i, within, between)
                .cholesky()
                .ok_or_else(|| {
                    GvssbError::NotPositiveDefinite("block correlation matrix".into())
                })?
                .l();
            Ok(normal_matrix(rng, n, p) * l.transpose())
        }
        Correlation::Ar { rho } => {
            let z = normal_matrix(rng, n, p);
            let mut x = z.clone();
            let s = (1.0 - rho * rho).sqrt();
            for j in 1..p {
                for i in 0..n {
                    x[(i, j)] = rho * x[(i, j - 1)] + s * z[(i, j)];
                }
            }
            Ok(x)
        }
    }
}

fn sample_variance(v: &DVector<f64>) -> f64 {
    let mean = v.mean();
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub theta: DVector<f64>,
    /// Sorted indices of the active groups.
    pub support: Vec<usize>,
    pub sigma_sq: f64,
}

/// Draws `(X, y, θ⋆, S⋆, σ⋆²)` with `σ⋆² = Var(Xθ⋆)/snr` on the sample.
pub fn gen_linear(sc: &SimScenario) -> Result<LinearData> {
    sc.validate()?;
    let mut rng = stream_rng(sc.seed, sc.replicate);
    let x = gen_design(&mut rng, sc.n, sc.g, sc.p_i, sc.correlation)?;
    let mut support = sample(&mut rng, sc.g, sc.k).into_vec();
    support.sort_unstable();
    let mut theta = DVector::zeros(sc.n_columns());
    for &gi in &support {
        for c in gi * sc.p_i..(gi + 1) * sc.p_i {
            theta[c] = sc.coef_law.sample(&mut rng);
        }
    }
    let signal = &x * &theta;
    let var = sample_variance(&signal);
    let sigma_sq = if var > 0.0 { var / sc.snr } else { 1.0 };
    let sd = sigma_sq.sqrt();
    let y = DVector::from_iterator(sc.n, signal.iter().map(|s| s + sd * normal(&mut rng)));
    Ok(LinearData {
        x,
        y,
        theta,
        support,
        sigma_sq,
    })
}

/// Parameters of the two additive-model examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveParams {
    pub n: usize,
    pub p: usize,
    /// AR correlation (example 1).
    pub rho: f64,
    /// Uniform mixing weight (example 2).
    pub t: f64,
    /// Target `Var(f)/σ⋆²`; `None` keeps `σ⋆ = 1`.
    pub snr: Option<f64>,
    pub n_test: usize,
    pub seed: u64,
    pub replicate: u64,
}

impl AdditiveParams {
    pub fn example2_default(seed: u64, replicate: u64) -> Self {
        Self {
            n: 200,
            p: 600,
            rho: 0.0,
            t: 0.5,
            snr: Some(0.5),
            n_test: 500,
            seed,
            replicate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
    /// Active covariates, always `{0, 1, 2, 3}`.
    pub active: Vec<usize>,
    pub sigma_sq: f64,
}

pub fn example1_component(j: usize, x: f64) -> f64 {
    match j {
        0 => 5.0 * x.sin(),
        1 => 2.0 * (x * x - 0.5),
        2 => x.exp(),
        3 => 3.0 * x,
        _ => 0.0,
    }
}

pub fn example2_component(j: usize, x: f64) -> f64 {
    let s = (2.0 * std::f64::consts::PI * x).sin();
    let c = (2.0 * std::f64::consts::PI * x).cos();
    match j {
        0 => 5.0 * x,
        1 => 3.0 * (2.0 * x - 1.0).powi(2),
        2 => 4.0 * s / (2.0 - s),
        3 => 6.0 * (0.1 * s + 0.2 * c + 0.3 * s * s + 0.4 * c.powi(3) + 0.5 * s.powi(3)),
        _ => 0.0,
    }
}

fn additive_covariates<R: Rng>(
    rng: &mut R,
    example: u8,
    n: usize,
    params: &AdditiveParams,
) -> Result<DMatrix<f64>> {
    match example {
        1 => gen_design(rng, n, params.p, 1, Correlation::Ar { rho: params.rho }),
        _ => {
            let t = params.t;
            let mut x = DMatrix::zeros(n, params.p);
            for i in 0..n {
                let u: f64 = rng.random();
                for j in 0..params.p {
                    let w: f64 = rng.random();
                    x[(i, j)] = (w + t * u) / (1.0 + t);
                }
            }
            Ok(x)
        }
    }
}

/// Draws training and test data for additive example 1 or 2.
pub fn gen_additive(example: u8, params: &AdditiveParams) -> Result<AdditiveData> {
    let f: fn(usize, f64) -> f64 = match example {
        1 => example1_component,
        2 => example2_component,
        other => {
            return Err(GvssbError::InvalidInput(format!(
                "unknown additive example {other} (expected 1 or 2)"
            )))
        }
    };
    if params.p < 4 || params.n < 2 {
        return Err(GvssbError::InvalidInput(
            "additive examples need p >= 4 and n >= 2".into(),
        ));
    }
    let mut rng = stream_rng(params.seed, params.replicate);
    let signal = |x: &DMatrix<f64>| {
        DVector::from_fn(x.nrows(), |i, _| (0..4).map(|j| f(j, x[(i, j)])).sum::<f64>())
    };
    let x = additive_covariates(&mut rng, example, params.n, params)?;
    let x_test = additive_covariates(&mut rng, example, params.n_test, params)?;
    let fx = signal(&x);
    let sigma_sq = match params.snr {
        Some(snr) if snr > 0.0 => sample_variance(&fx) / snr,
        Some(snr) => {
            return Err(GvssbError::InvalidInput(format!("snr must be positive, got {snr}")))
        }
        None => 1.0,
    };
    let sd = sigma_sq.sqrt();
    let y = fx.map(|v| v + sd * normal(&mut rng));
    let y_test = signal(&x_test).map(|v| v + sd * normal(&mut rng));
    Ok(AdditiveData {
        x,
        y,
        x_test,
        y_test,
        active: vec![0, 1, 2, 3],
        sigma_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_sets(selected: &[usize], truth: &[usize], g: usize) -> Self {
        let mut sel = vec![false; g];
        let mut tru = vec![false; g];
        selected.iter().for_each(|&i| sel[i] = true);
        truth.iter().for_each(|&i| tru[i] = true);
        let mut c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        for (s, t) in sel.into_iter().zip(tru) {
            match (s, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Matthews correlation; 0 when any margin is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (
            self.tp as f64,
            self.fp as f64,
            self.tn as f64,
            self.fn_ as f64,
        );
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if denom == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / denom.sqrt()
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
}

pub fn selection_metrics(selected: &[usize], truth: &[usize], g: usize) -> SelectionMetrics {
    let counts = ConfusionCounts::from_sets(selected, truth, g);
    SelectionMetrics {
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        mcc: counts.mcc(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationMetrics {
    pub log_mse: f64,
    pub sigma_rel_err: f64,
    pub pred_err: Option<f64>,
}

/// Mean squared error between two vectors.
pub fn mean_sq_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

/// `log(‖θ̂−θ⋆‖²/p)` floored at −745, `|σ̂²/σ⋆² − 1|`, and held-out MSE when
/// `(prediction, truth)` is given.
pub fn estimation_metrics(
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
    sigma_hat_sq: f64,
    sigma_star_sq: f64,
    test: Option<(&DVector<f64>, &DVector<f64>)>,
) -> EstimationMetrics {
    let mse = mean_sq_err(theta_hat, theta_star);
    let log_mse = if mse > 0.0 { mse.ln().max(LOG_MSE_FLOOR) } else { LOG_MSE_FLOOR };
    EstimationMetrics {
        log_mse,
        sigma_rel_err: (sigma_hat_sq / sigma_star_sq - 1.0).abs(),
        pred_err: test.map(|(pred, truth)| mean_sq_err(pred, truth)),
    }
}

/// One CSV row of a replication study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    /// Replication index, or `mean` / `se` for aggregate rows.
    pub rep: String,
    pub seed: u64,
    pub n: usize,
    pub g: usize,
    pub p_i: usize,
    pub k: usize,
    pub snr: f64,
    pub slab: String,
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub log_mse: f64,
    pub sigma_rel_err: f64,
    pub pred_err: Option<f64>,
    pub null_err: Option<f64>,
    pub iterations: f64,
    pub converged: f64,
}

pub fn slab_label(slab: &SlabSpec) -> String {
    match (slab.family, slab.nu) {
        (crate::types::SlabFamily::Gaussian, _) => "gaussian".into(),
        (crate::types::SlabFamily::Laplacian, _) => "laplacian".into(),
        (_, Some(1.0)) => "cauchy".into(),
        (_, Some(nu)) => format!("t{nu}"),
        (_, None) => "t".into(),
    }
}

/// Raw-scale posterior-mean coefficients in source column order.
pub fn raw_theta_hat(
    fit: &FitResult,
    design: &crate::types::GroupedDesign,
    info: &crate::preprocess::StandardizationInfo,
) -> DVector<f64> {
    info.destandardize(&design.flatten_coefficients(&fit.state.theta_hat()))
        .1
}

pub fn run_linear_replication(
    sc: &SimScenario,
    slab: SlabSpec,
    config: &FitConfig,
) -> Result<ReplicationRow> {
    let data = gen_linear(sc)?;
    let raw = make_grouped_design(&data.x, &sc.group_labels())?;
    let (design, y, info) = standardize(&raw, &data.y)?;
    let hyper = Hyperparams::default_for(&slab, design.n_groups());
    let label = slab_label(&slab);
    let result = fit(&design, &y, slab, hyper, config)?;
    let theta_hat = raw_theta_hat(&result, &design, &info);
    let sel = selection_metrics(&result.selected, &data.support, sc.g);
    let est = estimation_metrics(
        &theta_hat,
        &data.theta,
        result.sigma_hat_sq,
        data.sigma_sq,
        None,
    );
    Ok(ReplicationRow {
        rep: sc.replicate.to_string(),
        seed: sc.seed,
        n: sc.n,
        g: sc.g,
        p_i: sc.p_i,
        k: sc.k,
        snr: sc.snr,
        slab: label,
        precision: sel.precision,
        recall: sel.recall,
        mcc: sel.mcc,
        log_mse: est.log_mse,
        sigma_rel_err: est.sigma_rel_err,
        pred_err: None,
        null_err: None,
        iterations: result.iterations as f64,
        converged: if result.converged { 1.0 } else { 0.0 },
    })
}

/// Fits the additive pipeline on one draw and scores selection over
/// covariates plus held-out error against the training-mean predictor.
pub fn run_additive_replication(
    example: u8,
    params: &AdditiveParams,
    d: usize,
    slab: SlabSpec,
    config: &FitConfig,
) -> Result<ReplicationRow> {
    let data = gen_additive(example, params)?;
    let (expanded, basis) = expand_additive(&data.x, d, None)?;
    let (design, y, info) = standardize(&expanded, &data.y)?;
    let hyper = Hyperparams::default_for(&slab, design.n_groups());
    let label = slab_label(&slab);
    let result = fit(&design, &y, slab, hyper, config)?;
    let pred = predict_additive(&result, &basis, &info, &data.x_test)?;
    let null = DVector::from_element(data.y_test.len(), info.y_mean);
    let sel = selection_metrics(&result.selected, &data.active, params.p);
    let est = estimation_metrics(
        &DVector::zeros(1),
        &DVector::zeros(1),
        result.sigma_hat_sq,
        data.sigma_sq,
        Some((&pred, &data.y_test)),
    );
    Ok(ReplicationRow {
        rep: params.replicate.to_string(),
        seed: params.seed,
        n: params.n,
        g: params.p,
        p_i: d,
        k: 4,
        snr: params.snr.unwrap_or(f64::NAN),
        slab: label,
        precision: sel.precision,
        recall: sel.recall,
        mcc: sel.mcc,
        log_mse: f64::NAN,
        sigma_rel_err: est.sigma_rel_err,
        pred_err: est.pred_err,
        null_err: Some(mean_sq_err(&null, &data.y_test)),
        iterations: result.iterations as f64,
        converged: if result.converged { 1.0 } else { 0.0 },
    })
}

/// Runs `reps` replications of `job(replicate)` on `jobs` threads
/// (0 = rayon default). Output order follows the replicate index.
pub fn run_parallel<F>(reps: usize, jobs: usize, job: F) -> Result<Vec<ReplicationRow>>
where
    F: Fn(u64) -> Result<ReplicationRow> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| GvssbError::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| (0..reps as u64).into_par_iter().map(&job).collect())
}

pub fn run_linear_study(
    base: &SimScenario,
    reps: usize,
    slab: SlabSpec,
    config: &FitConfig,
    jobs: usize,
) -> Result<Vec<ReplicationRow>> {
    run_parallel(reps, jobs, |r| {
        let sc = SimScenario {
            replicate: r,
            ..base.clone()
        };
        run_linear_replication(&sc, slab, config)
    })
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregate `mean` and `se` rows over replications.
pub fn summarize(rows: &[ReplicationRow]) -> Option<(ReplicationRow, ReplicationRow)> {
    let first = rows.first()?;
    let col = |f: fn(&ReplicationRow) -> f64| {
        mean_se(&rows.iter().map(f).collect::<Vec<_>>())
    };
    let opt = |f: fn(&ReplicationRow) -> Option<f64>| {
        let v: Option<Vec<f64>> = rows.iter().map(f).collect();
        v.map(|v| mean_se(&v))
    };
    let fields = [
        col(|r| r.precision),
        col(|r| r.recall),
        col(|r| r.mcc),
        col(|r| r.log_mse),
        col(|r| r.sigma_rel_err),
        col(|r| r.iterations),
        col(|r| r.converged),
    ];
    let pred = opt(|r| r.pred_err);
    let null = opt(|r| r.null_err);
    let build = |label: &str, pick: fn((f64, f64)) -> f64| ReplicationRow {
        rep: label.to_string(),
        precision: pick(fields[0]),
        recall: pick(fields[1]),
        mcc: pick(fields[2]),
        log_mse: pick(fields[3]),
        sigma_rel_err: pick(fields[4]),
        iterations: pick(fields[5]),
        converged: pick(fields[6]),
        pred_err: pred.map(pick),
        null_err: null.map(pick),
        ..first.clone()
    };
    Some((build("mean", |m| m.0), build("se", |m| m.1)))
}

/// Writes replication rows followed by the aggregate rows.
pub fn write_csv<W: std::io::Write>(rows: &[ReplicationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if let Some((mean, se)) = summarize(rows) {
        w.serialize(mean)?;
        w.serialize(se)?;
    }
    w.flush()?;
    Ok(())
}
