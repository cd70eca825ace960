//! Coordinate-ascent variational inference for grouped spike-and-slab
//! regression.
//!
//! Each group update refreshes `(Σ_i, μ_i, γ_i)` and, for hierarchical slabs,
//! `κ_i`, then writes the new contribution back into the running residual
//! `r = Y − Σ_j γ_j X_j μ_j`. Every step is an exact coordinate maximizer of
//! the ELBO, so the bound never decreases at fixed hyperparameters.

use std::f64::consts::PI;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{GvssbError, Result};
use crate::preprocess::ridge_init;
use crate::slab::{self, LambdaStats};
use crate::types::{
    FitConfig, FitResult, GroupedDesign, Hyperparams, InitPolicy, SigmaUpdate, SlabFamily,
    SlabSpec, VariationalState,
};

/// Logit arguments are clamped to this magnitude before exponentiation.
pub const LOGIT_CLAMP: f64 = 700.0;

/// Lower bound on `v` so `q(σ²)` stays proper on a noiseless response.
pub const V_FLOOR: f64 = 1e-100;

/// Per-sweep convergence quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    /// `max_i |H(γ_i) − H(γ_i,old)|` against the sweep-start snapshot.
    pub delta_h: f64,
    /// `|σ̃ − σ̃_old|`.
    pub delta_sigma: f64,
    pub elbo: f64,
}

pub fn logistic(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// Binary entropy in nats with `0·log 0 = 0`.
pub fn binary_entropy(g: f64) -> f64 {
    let xlogx = |x: f64| if x <= 0.0 { 0.0 } else { x * x.ln() };
    -xlogx(g) - xlogx(1.0 - g)
}

fn logit(w: f64) -> f64 {
    (w / (1.0 - w)).ln()
}

fn check_finite(state: &VariationalState, i: usize, sweep: usize) -> Result<()> {
    let bad = |what: &str| GvssbError::NonFinite {
        group: i,
        sweep,
        what: what.to_string(),
    };
    if !state.gamma[i].is_finite() {
        return Err(bad("inclusion probability"));
    }
    if state.mu[i].iter().any(|v| !v.is_finite()) {
        return Err(bad("mean vector"));
    }
    if state.sigma_mat[i].iter().any(|v| !v.is_finite()) {
        return Err(bad("covariance"));
    }
    if !state.kappa[i].is_finite() {
        return Err(bad("kappa"));
    }
    if state.residual.iter().any(|v| !v.is_finite()) {
        return Err(bad("residual"));
    }
    Ok(())
}

/// Shared body of both group updates. `precision` is the prior precision
/// entering `Σ_i`.
fn update_group_with(
    i: usize,
    state: &mut VariationalState,
    design: &GroupedDesign,
    hyper: &Hyperparams,
    slab: &SlabSpec,
) -> Result<()> {
    let x = design.block(i);
    let p = x.ncols();
    let s2 = state.sigma_tilde_sq;
    let precision = slab::expected_alpha_sq(slab, state.kappa[i], p)?;

    // r_i = r + γ_i X_i μ_i
    state
        .residual
        .gemv(state.gamma[i], x, &state.mu[i], 1.0);

    let mut a = design.gram(i) / s2;
    for k in 0..p {
        a[(k, k)] += precision;
    }
    let chol = a.cholesky().ok_or_else(|| {
        GvssbError::NotPositiveDefinite(format!("posterior precision of group {i}"))
    })?;
    let b = x.tr_mul(&state.residual) / s2;
    let mu = chol.solve(&b);
    let inv = chol.inverse();
    let sigma = (&inv + inv.transpose()) * 0.5;
    let logdet_sigma = -2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad_form = mu.dot(&b);

    let term = slab::gamma_prior_term(slab, state.kappa[i], p, logdet_sigma, quad_form);
    let gamma = logistic(logit(hyper.w) + term);

    if slab.is_hierarchical() {
        state.kappa[i] = mu.norm_squared() + sigma.trace();
    }
    state.residual.gemv(-gamma, x, &mu, 1.0);
    state.mu[i] = mu;
    state.sigma_mat[i] = sigma;
    state.gamma[i] = gamma;
    Ok(())
}

/// Group update for the Gaussian slab: `Σ_i = (X_iᵀX_i/σ̃² + ρI)⁻¹`,
/// `μ_i = Σ_i X_iᵀ r_i / σ̃²`, closed-form `γ_i`.
pub fn update_group_gaussian(
    i: usize,
    state: &mut VariationalState,
    design: &GroupedDesign,
    hyper: &Hyperparams,
    slab: &SlabSpec,
) -> Result<()> {
    if slab.family != SlabFamily::Gaussian {
        return Err(GvssbError::Unsupported(
            "Gaussian update called with a hierarchical slab".into(),
        ));
    }
    update_group_with(i, state, design, hyper, slab)
}

/// Group update for hierarchical slabs; also refreshes
/// `κ_i = μ_iᵀμ_i + Tr(Σ_i)`.
pub fn update_group_hierarchical(
    i: usize,
    state: &mut VariationalState,
    design: &GroupedDesign,
    hyper: &Hyperparams,
    slab: &SlabSpec,
) -> Result<()> {
    if !slab.is_hierarchical() {
        return Err(GvssbError::Unsupported(
            "hierarchical update called with the Gaussian slab".into(),
        ));
    }
    update_group_with(i, state, design, hyper, slab)
}

/// Dispatches to the slab-appropriate group update.
pub fn update_group(
    i: usize,
    state: &mut VariationalState,
    design: &GroupedDesign,
    hyper: &Hyperparams,
    slab: &SlabSpec,
) -> Result<()> {
    update_group_with(i, state, design, hyper, slab)
}

/// `E_q ‖Y − Xθ‖²` via the residual identity
/// `‖r‖² + Σ γ(1−γ) μᵀX ᵀXμ + Σ γ Tr(XᵀX Σ)`.
pub fn expected_sse(state: &VariationalState, design: &GroupedDesign) -> f64 {
    let mut v = state.residual.norm_squared();
    for i in 0..design.n_groups() {
        let g = state.gamma[i];
        if g == 0.0 {
            continue;
        }
        let gram = design.gram(i);
        let mu = &state.mu[i];
        let fit = (gram * mu).dot(mu);
        let trace = gram.component_mul(&state.sigma_mat[i]).sum();
        v += g * (1.0 - g) * fit + g * trace;
    }
    v
}

/// Refreshes `v` and `σ̃² = (v/2 + β)/(n/2 + α)`.
pub fn update_v_sigma(state: &mut VariationalState, design: &GroupedDesign, hyper: &Hyperparams) {
    state.v = expected_sse(state, design).max(V_FLOOR);
    state.sigma_tilde_sq = hyper.sigma_tilde_sq(state.v, design.n());
}

fn noise_shape_rate(state: &VariationalState, n: usize, hyper: &Hyperparams) -> (f64, f64) {
    (
        hyper.alpha_sigma + n as f64 / 2.0,
        hyper.beta_sigma + state.v / 2.0,
    )
}

/// Posterior mean of `σ²` under the Inverse-Gamma `q(σ²)`; falls back to
/// `σ̃²` when the mean is undefined.
pub fn sigma_hat_sq(state: &VariationalState, n: usize, hyper: &Hyperparams) -> f64 {
    let (shape, rate) = noise_shape_rate(state, n, hyper);
    if shape > 1.0 {
        rate / (shape - 1.0)
    } else {
        state.sigma_tilde_sq
    }
}

/// Evidence lower bound `E_q log p(Y, θ, z, α², σ²) − E_q log q`.
///
/// With `α = β = 0` the noise prior is the improper `1/σ²` kernel, so the
/// bound is defined up to that convention.
pub fn elbo(
    state: &VariationalState,
    design: &GroupedDesign,
    y: &DVector<f64>,
    hyper: &Hyperparams,
    slab: &SlabSpec,
) -> Result<f64> {
    let n = y.len();
    let nf = n as f64;
    let (shape, rate) = noise_shape_rate(state, n, hyper);
    let e_inv = shape / rate;
    let e_log = rate.ln() - digamma(shape);

    let sse = expected_sse(state, design);
    let loglik = -0.5 * nf * (2.0 * PI).ln() - 0.5 * nf * e_log - 0.5 * e_inv * sse;

    let (a0, b0) = (hyper.alpha_sigma, hyper.beta_sigma);
    let prior_norm = if a0 > 0.0 && b0 > 0.0 {
        a0 * b0.ln() - ln_gamma(a0)
    } else {
        0.0
    };
    let log_prior_sigma = prior_norm - (a0 + 1.0) * e_log - b0 * e_inv;
    let entropy_sigma = shape + rate.ln() + ln_gamma(shape) - (1.0 + shape) * digamma(shape);

    let xlog = |x: f64, y: f64| if x <= 0.0 { 0.0 } else { x * (y / x).ln() };
    let w = hyper.w;
    let mut selection = 0.0;
    let mut slab_part = 0.0;
    for i in 0..design.n_groups() {
        let g = state.gamma[i];
        selection += xlog(g, w) + xlog(1.0 - g, 1.0 - w);
        if g > 0.0 {
            let sigma = &state.sigma_mat[i];
            let logdet = sigma
                .clone()
                .cholesky()
                .ok_or_else(|| {
                    GvssbError::NotPositiveDefinite(format!("covariance of group {i}"))
                })?
                .l()
                .diagonal()
                .iter()
                .map(|d| 2.0 * d.ln())
                .sum::<f64>();
            let second = state.mu[i].norm_squared() + sigma.trace();
            slab_part += g
                * slab::slab_elbo_term(slab, state.kappa[i], sigma.nrows(), logdet, second)?;
        }
    }
    Ok(loglik + log_prior_sigma + entropy_sigma + selection + slab_part)
}

/// Empirical-Bayes M-step: `w = mean(γ)` clamped to
/// `[1/(10G), 1 − 1/(10G)]`, then one λ step. Keeps `hyper.lambda` and
/// `slab.lambda` in sync.
pub fn update_hyperparameters(
    state: &VariationalState,
    design: &GroupedDesign,
    slab: &mut SlabSpec,
    hyper: &mut Hyperparams,
) -> Result<()> {
    let g = state.n_groups();
    if g == 0 {
        return Ok(());
    }
    let gf = g as f64;
    let floor = 1.0 / (10.0 * gf);
    let mean = state.gamma.iter().sum::<f64>() / gf;
    hyper.w = mean.clamp(floor, 1.0 - floor);

    let stats: Vec<LambdaStats> = (0..g)
        .map(|i| LambdaStats {
            p: design.group_size(i),
            second_moment: state.mu[i].norm_squared() + state.sigma_mat[i].trace(),
            kappa: state.kappa[i],
        })
        .collect();
    let lambda = slab::em_lambda_update(slab, &state.gamma, &stats)?;
    slab.lambda = lambda;
    hyper.lambda = lambda;
    Ok(())
}

/// Descending `‖μ_i‖`, ties broken by ascending index.
pub fn update_order(state: &VariationalState) -> Vec<usize> {
    let norms: Vec<f64> = state.mu.iter().map(|m| m.norm()).collect();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    order
}

fn sample_variance(y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let mean = y.mean();
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Starting state: `γ_i = 1/G`, ridge (or given) `μ`, `σ̃² = Var(y)`,
/// `Σ_i = (X_iᵀX_i/σ̃² + I)⁻¹`, `κ_i = μ_iᵀμ_i + Tr(Σ_i)`.
pub fn initialize_state(
    design: &GroupedDesign,
    y: &DVector<f64>,
    hyper: &Hyperparams,
    config: &FitConfig,
) -> Result<VariationalState> {
    let n = design.n();
    let g = design.n_groups();
    let s2_init = config
        .sigma_init
        .unwrap_or_else(|| sample_variance(y))
        .max(V_FLOOR);
    let v = (2.0 * (s2_init * (n as f64 / 2.0 + hyper.alpha_sigma) - hyper.beta_sigma))
        .max(V_FLOOR);
    let s2 = hyper.sigma_tilde_sq(v, n);

    let flat = match &config.init {
        InitPolicy::Ridge { folds, grid } => {
            ridge_init(design, y, *folds, grid, config.rng_seed)?.coefficients
        }
        InitPolicy::Zero => DVector::zeros(design.n_columns()),
        InitPolicy::Given(values) => {
            if values.len() != design.n_columns() {
                return Err(GvssbError::DimensionMismatch(format!(
                    "initial coefficients have {} entries, design has {} columns",
                    values.len(),
                    design.n_columns()
                )));
            }
            DVector::from_column_slice(values)
        }
    };
    let mu = design.split_coefficients(&flat);
    let mut sigma_mat = Vec::with_capacity(g);
    for i in 0..g {
        let p = design.group_size(i);
        let a = design.gram(i) / s2 + DMatrix::identity(p, p);
        let inv = a
            .cholesky()
            .ok_or_else(|| GvssbError::NotPositiveDefinite(format!("initial covariance {i}")))?
            .inverse();
        sigma_mat.push((&inv + inv.transpose()) * 0.5);
    }
    let kappa = mu
        .iter()
        .zip(&sigma_mat)
        .map(|(m, s)| m.norm_squared() + s.trace())
        .collect();
    let gamma = vec![1.0 / g.max(1) as f64; g];
    let mut state = VariationalState {
        gamma,
        mu,
        sigma_mat,
        kappa,
        v,
        sigma_tilde_sq: s2,
        residual: DVector::zeros(n),
    };
    state.residual = state.full_residual(design, y);
    Ok(state)
}

/// Stateful driver bundling the design, response and current estimates.
#[derive(Debug, Clone)]
pub struct CaviEngine<'a> {
    pub design: &'a GroupedDesign,
    pub y: &'a DVector<f64>,
    pub slab: SlabSpec,
    pub hyper: Hyperparams,
    pub state: VariationalState,
}

impl<'a> CaviEngine<'a> {
    pub fn new(
        design: &'a GroupedDesign,
        y: &'a DVector<f64>,
        slab: SlabSpec,
        hyper: Hyperparams,
        state: VariationalState,
    ) -> Self {
        Self {
            design,
            y,
            slab,
            hyper,
            state,
        }
    }

    pub fn update_group(&mut self, i: usize) -> Result<()> {
        update_group(i, &mut self.state, self.design, &self.hyper, &self.slab)
    }

    pub fn update_v_sigma(&mut self) {
        update_v_sigma(&mut self.state, self.design, &self.hyper)
    }

    pub fn update_hyperparameters(&mut self) -> Result<()> {
        update_hyperparameters(&self.state, self.design, &mut self.slab, &mut self.hyper)
    }

    pub fn elbo(&self) -> Result<f64> {
        elbo(&self.state, self.design, self.y, &self.hyper, &self.slab)
    }

    /// One pass of Algorithm-style updates: prioritized group sweep, optional
    /// EM step, then the (possibly gated) noise update.
    pub fn sweep(&mut self, sweep: usize, config: &FitConfig) -> Result<SweepStats> {
        let gamma_old = self.state.gamma.clone();
        for i in update_order(&self.state) {
            self.update_group(i)?;
            check_finite(&self.state, i, sweep)?;
        }
        if config.em_enabled {
            self.update_hyperparameters()?;
        }
        let delta_h = self
            .state
            .gamma
            .iter()
            .zip(&gamma_old)
            .map(|(g, o)| (binary_entropy(*g) - binary_entropy(*o)).abs())
            .fold(0.0, f64::max);
        let sigma_old = self.state.sigma_tilde_sq.sqrt();
        let refresh = match config.sigma_update {
            SigmaUpdate::Gated => delta_h <= config.eps_h,
            SigmaUpdate::Always => true,
            SigmaUpdate::Fixed => false,
        };
        if refresh {
            self.update_v_sigma();
        }
        if !self.state.sigma_tilde_sq.is_finite() {
            return Err(GvssbError::NonFinite {
                group: usize::MAX,
                sweep,
                what: "noise variance".into(),
            });
        }
        let delta_sigma = (self.state.sigma_tilde_sq.sqrt() - sigma_old).abs();
        Ok(SweepStats {
            delta_h,
            delta_sigma,
            elbo: self.elbo()?,
        })
    }
}

/// Fits the grouped spike-and-slab model by CAVI on standardized inputs.
///
/// The starting λ is taken from `slab`; `hyper` supplies `w` and the noise
/// prior.
pub fn fit(
    design: &GroupedDesign,
    y: &DVector<f64>,
    slab: SlabSpec,
    hyper: Hyperparams,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let mut hyper = Hyperparams {
        lambda: slab.lambda,
        ..hyper
    };
    hyper.validate()?;
    if y.len() != design.n() {
        return Err(GvssbError::DimensionMismatch(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            design.n()
        )));
    }
    if design.n_groups() == 0 {
        return Err(GvssbError::InvalidInput("design has no groups".into()));
    }
    let state = initialize_state(design, y, &hyper, config)?;
    hyper.lambda = slab.lambda;
    let mut engine = CaviEngine::new(design, y, slab, hyper, state);

    let mut elbo_trace = Vec::new();
    let mut hyper_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for sweep in 0..config.max_iter {
        let stats = engine.sweep(sweep, config)?;
        iterations = sweep + 1;
        elbo_trace.push(stats.elbo);
        if config.em_enabled {
            hyper_trace.push((engine.hyper.lambda, engine.hyper.w));
        }
        debug!(
            "sweep {sweep}: dH={:.3e} dsigma={:.3e} elbo={:.6}",
            stats.delta_h, stats.delta_sigma, stats.elbo
        );
        if stats.delta_h < config.eps_h && stats.delta_sigma < config.eps_sigma {
            converged = true;
            break;
        }
    }

    let CaviEngine {
        slab, hyper, state, ..
    } = engine;
    let selected = state
        .gamma
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > config.selection_threshold)
        .map(|(i, _)| i)
        .collect();
    let sigma_hat_sq = sigma_hat_sq(&state, design.n(), &hyper);
    Ok(FitResult {
        state,
        selected,
        sigma_hat_sq,
        elbo_trace,
        hyper_trace,
        iterations,
        converged,
        slab,
        hyper,
    })
}
