#![allow(dead_code)]

pub mod oracle;

mod oracle_types {
    pub use gvssb::{SlabFamily, SlabSpec};
}

use gvssb::{make_grouped_design, standardize, GroupedDesign, VariationalState};
use nalgebra::{DMatrix, DVector};
use oracle::SplitMix;

/// Standardized random instance with the first `active` groups carrying
/// signal.
pub fn random_instance(
    seed: u64,
    n: usize,
    g: usize,
    p: usize,
    active: usize,
) -> (GroupedDesign, DVector<f64>) {
    let mut rng = SplitMix(seed);
    let x = DMatrix::from_fn(n, g * p, |_, _| rng.normal());
    let theta = DVector::from_fn(g * p, |c, _| {
        if c / p < active {
            1.0 + rng.next()
        } else {
            0.0
        }
    });
    let y = &x * &theta + DVector::from_fn(n, |_, _| rng.normal());
    let labels: Vec<String> = (0..g * p).map(|c| format!("g{}", c / p)).collect();
    let raw = make_grouped_design(&x, &labels).unwrap();
    let (design, y, _) = standardize(&raw, &y).unwrap();
    (design, y)
}

/// Random but valid variational state with a current residual.
pub fn random_state(seed: u64, design: &GroupedDesign, y: &DVector<f64>) -> VariationalState {
    let mut rng = SplitMix(seed);
    let g = design.n_groups();
    let mut sigma_mat = Vec::new();
    let mut mu = Vec::new();
    for i in 0..g {
        let p = design.group_size(i);
        let l = DMatrix::from_fn(p, p, |_, _| 0.5 * rng.normal());
        sigma_mat.push(&l * l.transpose() + DMatrix::identity(p, p) * 0.05);
        mu.push(DVector::from_fn(p, |_, _| rng.normal()));
    }
    let gamma: Vec<f64> = (0..g).map(|_| rng.next()).collect();
    let kappa = (0..g).map(|_| 0.1 + rng.next()).collect();
    let mut state = VariationalState {
        gamma,
        mu,
        sigma_mat,
        kappa,
        v: 1.0,
        sigma_tilde_sq: 1.0,
        residual: DVector::zeros(design.n()),
    };
    state.residual = state.full_residual(design, y);
    state
}

/// `E‖Y − Σ z_i X_i θ_i‖²` expanded term by term from the full design,
/// without the running residual:
/// `‖Y‖² − 2Σγ YᵀXμ + Σγ(μᵀGμ + Tr(GΣ)) + Σ_{i≠j} γ_iγ_j μ_iᵀX_iᵀX_jμ_j`.
pub fn literal_expected_sse(state: &VariationalState, design: &GroupedDesign, y: &DVector<f64>) -> f64 {
    let g = design.n_groups();
    let fits: Vec<DVector<f64>> = (0..g).map(|i| design.block(i) * &state.mu[i]).collect();
    let mut total = y.dot(y);
    for i in 0..g {
        let gi = state.gamma[i];
        total -= 2.0 * gi * y.dot(&fits[i]);
        let x = design.block(i);
        let gram = x.transpose() * x;
        let mut trace = 0.0;
        for a in 0..gram.nrows() {
            for b in 0..gram.ncols() {
                trace += gram[(a, b)] * state.sigma_mat[i][(b, a)];
            }
        }
        total += gi * (fits[i].dot(&fits[i]) + trace);
        for j in 0..g {
            if j != i {
                total += gi * state.gamma[j] * fits[i].dot(&fits[j]);
            }
        }
    }
    total
}

/// Exact posterior for one Gaussian-slab group with σ² known:
/// `(mean, covariance, P(z = 1 | y))`. The inclusion probability compares
/// the two marginal likelihoods `N(0, σ²I)` and `N(0, σ²I + XXᵀ/ρ)` in
/// `n`-dimensional form.
pub fn conjugate_posterior(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma2: f64,
    rho: f64,
    w: f64,
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let n = x.nrows();
    let p = x.ncols();
    let precision = x.transpose() * x / sigma2 + DMatrix::identity(p, p) * rho;
    let cov = precision.try_inverse().unwrap();
    let mean = &cov * x.transpose() * y / sigma2;

    let log_gauss = |c: DMatrix<f64>| {
        let chol = c.cholesky().unwrap();
        let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let quad = y.dot(&chol.solve(y));
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
    };
    let null = log_gauss(DMatrix::identity(n, n) * sigma2);
    let slab = log_gauss(DMatrix::identity(n, n) * sigma2 + x * x.transpose() / rho);
    let log_odds = (w / (1.0 - w)).ln() + slab - null;
    (mean, cov, 1.0 / (1.0 + (-log_odds).exp()))
}
