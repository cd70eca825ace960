//! Shared data model: grouped designs, slab choices, hyperparameters,
//! the variational state and fit configuration/results.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GvssbError, Result};

/// A design matrix partitioned into column blocks, one per group.
///
/// Blocks are ordered by first appearance of their group label. Each block
/// keeps the indices of the source columns it was built from so results can
/// be mapped back to the caller's column order.
#[derive(Debug, Clone)]
pub struct GroupedDesign {
    n: usize,
    blocks: Vec<DMatrix<f64>>,
    names: Vec<String>,
    columns: Vec<Vec<usize>>,
    grams: Vec<DMatrix<f64>>,
}

impl GroupedDesign {
    /// Builds a design from already-split blocks. `columns[i]` lists the
    /// original column index of every column in block `i`.
    pub fn from_blocks(
        n: usize,
        blocks: Vec<DMatrix<f64>>,
        names: Vec<String>,
        columns: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(GvssbError::InvalidInput(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        if blocks.len() != names.len() || blocks.len() != columns.len() {
            return Err(GvssbError::DimensionMismatch(
                "blocks, names and column maps differ in length".into(),
            ));
        }
        for ((b, name), cols) in blocks.iter().zip(&names).zip(&columns) {
            if b.ncols() == 0 {
                return Err(GvssbError::EmptyGroup(name.clone()));
            }
            if b.nrows() != n {
                return Err(GvssbError::DimensionMismatch(format!(
                    "group `{name}` has {} rows, expected {n}",
                    b.nrows()
                )));
            }
            if cols.len() != b.ncols() {
                return Err(GvssbError::DimensionMismatch(format!(
                    "group `{name}` column map has {} entries for {} columns",
                    cols.len(),
                    b.ncols()
                )));
            }
        }
        let grams = blocks.iter().map(|b| b.tr_mul(b)).collect();
        Ok(Self {
            n,
            blocks,
            names,
            columns,
            grams,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of groups `G`.
    pub fn n_groups(&self) -> usize {
        self.blocks.len()
    }

    /// Total column count `p = Σ p_i`.
    pub fn n_columns(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    pub fn group_size(&self, i: usize) -> usize {
        self.blocks[i].ncols()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn gram(&self, i: usize) -> &DMatrix<f64> {
        &self.grams[i]
    }

    pub fn group_names(&self) -> &[String] {
        &self.names
    }

    /// Source column indices of block `i`.
    pub fn columns(&self, i: usize) -> &[usize] {
        &self.columns[i]
    }

    /// Largest eigenvalue of each block Gram matrix.
    pub fn op_norm_sq(&self) -> Vec<f64> {
        self.grams
            .iter()
            .map(|g| {
                SymmetricEigen::new(g.clone())
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Reassembles the blocks into one `n × p` matrix in source column order.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n_columns());
        for (b, cols) in self.blocks.iter().zip(&self.columns) {
            for (k, &c) in cols.iter().enumerate() {
                out.set_column(c, &b.column(k));
            }
        }
        out
    }

    /// Splits a flat coefficient vector (source column order) into per-group
    /// vectors.
    pub fn split_coefficients(&self, flat: &DVector<f64>) -> Vec<DVector<f64>> {
        self.columns
            .iter()
            .map(|cols| DVector::from_iterator(cols.len(), cols.iter().map(|&c| flat[c])))
            .collect()
    }

    /// Inverse of [`split_coefficients`](Self::split_coefficients).
    pub fn flatten_coefficients(&self, groups: &[DVector<f64>]) -> DVector<f64> {
        let mut flat = DVector::zeros(self.n_columns());
        for (g, cols) in groups.iter().zip(&self.columns) {
            for (k, &c) in cols.iter().enumerate() {
                flat[c] = g[k];
            }
        }
        flat
    }

    /// `Σ_i X_i b_i` for per-group coefficient vectors.
    pub fn predict(&self, coefs: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (x, b) in self.blocks.iter().zip(coefs) {
            out.gemv(1.0, x, b, 1.0);
        }
        out
    }

    /// Copy of the design with every block transformed by `f`; grams are
    /// recomputed.
    pub(crate) fn map_blocks<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &DMatrix<f64>) -> Result<DMatrix<f64>>,
    {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| f(i, b))
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(self.n, blocks, self.names.clone(), self.columns.clone())
    }

    /// Subset of rows, keeping the group structure.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.select_rows(rows.iter()))
            .collect();
        Self::from_blocks(rows.len(), blocks, self.names.clone(), self.columns.clone())
    }
}

/// Splits the columns of `matrix` into groups according to `group_labels`.
///
/// Blocks appear in order of first occurrence of each label and keep the
/// relative column order within a group. No standardization is performed.
pub fn make_grouped_design<S: AsRef<str>>(
    matrix: &DMatrix<f64>,
    group_labels: &[S],
) -> Result<GroupedDesign> {
    if group_labels.is_empty() {
        return Err(GvssbError::InvalidInput("no group labels given".into()));
    }
    if group_labels.len() != matrix.ncols() {
        return Err(GvssbError::DimensionMismatch(format!(
            "{} group labels for {} columns",
            group_labels.len(),
            matrix.ncols()
        )));
    }
    if let Some(pos) = group_labels.iter().position(|l| l.as_ref().is_empty()) {
        return Err(GvssbError::InvalidInput(format!(
            "column {pos} has an empty group label"
        )));
    }
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut columns: Vec<Vec<usize>> = Vec::new();
    for (c, label) in group_labels.iter().enumerate() {
        let label = label.as_ref();
        let g = *index.entry(label).or_insert_with(|| {
            names.push(label.to_string());
            columns.push(Vec::new());
            names.len() - 1
        });
        columns[g].push(c);
    }
    let blocks = columns
        .iter()
        .map(|cols| matrix.select_columns(cols.iter()))
        .collect();
    GroupedDesign::from_blocks(matrix.nrows(), blocks, names, columns)
}

/// Builds a dense matrix from row vectors, rejecting ragged input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(GvssbError::DimensionMismatch(format!(
            "ragged matrix: row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Slab family of the spike-and-slab prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SlabFamily {
    /// `N(0, ρ⁻¹ I)`; `lambda` holds the precision ρ.
    Gaussian,
    /// Multi-Laplacian `∝ exp(-λ‖θ‖)`.
    Laplacian,
    /// Multivariate t with `nu` degrees of freedom and scale λ.
    StudentT,
}

/// Slab family plus its hyperparameters. Cauchy is represented as
/// `StudentT` with `nu = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub family: SlabFamily,
    pub lambda: f64,
    pub nu: Option<f64>,
}

impl SlabSpec {
    pub fn gaussian(precision: f64) -> Result<Self> {
        Self::new(SlabFamily::Gaussian, precision, None)
    }

    pub fn laplacian(lambda: f64) -> Result<Self> {
        Self::new(SlabFamily::Laplacian, lambda, None)
    }

    pub fn student_t(lambda: f64, nu: f64) -> Result<Self> {
        Self::new(SlabFamily::StudentT, lambda, Some(nu))
    }

    pub fn cauchy(lambda: f64) -> Result<Self> {
        Self::student_t(lambda, 1.0)
    }

    pub fn new(family: SlabFamily, lambda: f64, nu: Option<f64>) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(GvssbError::InvalidInput(format!(
                "slab lambda must be positive, got {lambda}"
            )));
        }
        let nu = match family {
            SlabFamily::StudentT => {
                let nu = nu.ok_or_else(|| {
                    GvssbError::InvalidInput("student-t slab needs degrees of freedom".into())
                })?;
                if !(nu > 0.0 && nu.is_finite()) {
                    return Err(GvssbError::InvalidInput(format!(
                        "degrees of freedom must be positive, got {nu}"
                    )));
                }
                Some(nu)
            }
            _ => None,
        };
        Ok(Self { family, lambda, nu })
    }

    /// Parses a CLI-style slab name (`gaussian`, `laplacian`, `t`, `cauchy`).
    pub fn from_name(name: &str, lambda: f64, nu: Option<f64>) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Self::gaussian(lambda),
            "laplacian" | "laplace" => Self::laplacian(lambda),
            "t" | "student-t" | "studentt" => Self::student_t(lambda, nu.unwrap_or(3.0)),
            "cauchy" => Self::cauchy(lambda),
            other => Err(GvssbError::InvalidInput(format!("unknown slab `{other}`"))),
        }
    }

    pub fn is_hierarchical(&self) -> bool {
        self.family != SlabFamily::Gaussian
    }

    /// Degrees of freedom; 0 for families without one.
    pub fn nu_or_zero(&self) -> f64 {
        self.nu.unwrap_or(0.0)
    }
}

/// Prior hyperparameters: slab scale λ, inclusion probability `w`, and the
/// Inverse-Gamma(α, β) prior on the noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub w: f64,
    pub alpha_sigma: f64,
    pub beta_sigma: f64,
}

impl Hyperparams {
    /// λ from the slab, `w = 1/G`, improper `1/σ²` noise prior.
    pub fn default_for(slab: &SlabSpec, n_groups: usize) -> Self {
        let w = if n_groups > 1 { 1.0 / n_groups as f64 } else { 0.5 };
        Self {
            lambda: slab.lambda,
            w,
            alpha_sigma: 0.0,
            beta_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w < 1.0) {
            return Err(GvssbError::InvalidInput(format!(
                "w must lie in (0, 1), got {}",
                self.w
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(GvssbError::InvalidInput(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.alpha_sigma >= 0.0 && self.beta_sigma >= 0.0) {
            return Err(GvssbError::InvalidInput(
                "noise prior shape and scale must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// `σ̃² = (v/2 + β)/(n/2 + α)`.
    pub fn sigma_tilde_sq(&self, v: f64, n: usize) -> f64 {
        (v / 2.0 + self.beta_sigma) / (n as f64 / 2.0 + self.alpha_sigma)
    }
}

/// All mean-field parameters. `z_i` is implicit as `Bernoulli(gamma[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub gamma: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub sigma_mat: Vec<DMatrix<f64>>,
    pub kappa: Vec<f64>,
    pub v: f64,
    pub sigma_tilde_sq: f64,
    pub residual: DVector<f64>,
}

impl VariationalState {
    /// `Y - Σ_j γ_j X_j μ_j` computed from scratch.
    pub fn full_residual(&self, design: &GroupedDesign, y: &DVector<f64>) -> DVector<f64> {
        let mut r = y.clone();
        for (i, x) in design.blocks().iter().enumerate() {
            r.gemv(-self.gamma[i], x, &self.mu[i], 1.0);
        }
        r
    }

    /// Posterior-mean coefficients `γ_j μ_j`.
    pub fn theta_hat(&self) -> Vec<DVector<f64>> {
        self.gamma
            .iter()
            .zip(&self.mu)
            .map(|(g, m)| m * *g)
            .collect()
    }

    pub fn n_groups(&self) -> usize {
        self.gamma.len()
    }
}

/// How `μ` is initialized before the first sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitPolicy {
    /// Ridge regression with the penalty chosen by k-fold CV.
    Ridge { folds: usize, grid: Vec<f64> },
    Zero,
    /// Explicit flat coefficient vector in source column order.
    Given(Vec<f64>),
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::Ridge {
            folds: 10,
            grid: crate::preprocess::default_ridge_grid(),
        }
    }
}

/// When `q(σ²)` is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaUpdate {
    /// Only after a sweep whose entropy change is within `eps_h`.
    Gated,
    /// After every sweep.
    Always,
    /// Never; `σ̃²` stays at its initial value.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub eps_h: f64,
    pub eps_sigma: f64,
    pub max_iter: usize,
    pub em_enabled: bool,
    pub selection_threshold: f64,
    pub rng_seed: u64,
    pub init: InitPolicy,
    pub sigma_update: SigmaUpdate,
    /// Overrides the initial `σ̃²` (default: sample variance of `y`).
    pub sigma_init: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            eps_h: 1e-3,
            eps_sigma: 1e-3,
            max_iter: 500,
            em_enabled: true,
            selection_threshold: 0.5,
            rng_seed: 0,
            init: InitPolicy::default(),
            sigma_update: SigmaUpdate::Gated,
            sigma_init: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_h > 0.0 && self.eps_sigma > 0.0) {
            return Err(GvssbError::InvalidInput(
                "convergence tolerances must be positive".into(),
            ));
        }
        if !(self.selection_threshold > 0.0 && self.selection_threshold < 1.0) {
            return Err(GvssbError::InvalidInput(format!(
                "selection threshold must lie in (0, 1), got {}",
                self.selection_threshold
            )));
        }
        if self.max_iter == 0 {
            return Err(GvssbError::InvalidInput("max_iter must be positive".into()));
        }
        if let Some(s) = self.sigma_init {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GvssbError::InvalidInput(format!(
                    "initial noise variance must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub state: VariationalState,
    /// Group indices (0-based) with `γ_i` above the selection threshold.
    pub selected: Vec<usize>,
    /// Posterior mean of `σ²` under `q(σ²)`.
    pub sigma_hat_sq: f64,
    pub elbo_trace: Vec<f64>,
    /// `(λ, w)` after every EM step.
    pub hyper_trace: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub slab: SlabSpec,
    pub hyper: Hyperparams,
}

/// Consistency report for a variational state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDiagnostics {
    /// `‖r − (Y − Σ γ_j X_j μ_j)‖∞`.
    pub max_residual_drift: f64,
    /// Smallest eigenvalue over all `Σ_i`.
    pub min_sigma_eigenvalue: f64,
    /// Groups whose `γ_i` lies outside `[0, 1]`.
    pub gamma_violations: Vec<usize>,
}

impl StateDiagnostics {
    pub fn is_healthy(&self, drift_tol: f64) -> bool {
        self.max_residual_drift <= drift_tol
            && self.min_sigma_eigenvalue > 0.0
            && self.gamma_violations.is_empty()
    }
}

pub fn validate_state(
    state: &VariationalState,
    design: &GroupedDesign,
    y: &DVector<f64>,
) -> Result<StateDiagnostics> {
    let g = design.n_groups();
    if state.gamma.len() != g
        || state.mu.len() != g
        || state.sigma_mat.len() != g
        || state.kappa.len() != g
    {
        return Err(GvssbError::DimensionMismatch(format!(
            "state carries {} groups, design has {g}",
            state.gamma.len()
        )));
    }
    if y.len() != design.n() || state.residual.len() != design.n() {
        return Err(GvssbError::DimensionMismatch(
            "response or residual length differs from the design".into(),
        ));
    }
    for i in 0..g {
        let p = design.group_size(i);
        if state.mu[i].len() != p || state.sigma_mat[i].shape() != (p, p) {
            return Err(GvssbError::DimensionMismatch(format!(
                "group {i} parameters do not match block width {p}"
            )));
        }
    }
    let fresh = state.full_residual(design, y);
    let max_residual_drift = (&state.residual - fresh).amax();
    let min_sigma_eigenvalue = state
        .sigma_mat
        .iter()
        .map(|s| {
            SymmetricEigen::new(s.clone())
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    let gamma_violations = state
        .gamma
        .iter()
        .enumerate()
        .filter(|(_, &g)| !(0.0..=1.0).contains(&g))
        .map(|(i, _)| i)
        .collect();
    Ok(StateDiagnostics {
        max_residual_drift,
        min_sigma_eigenvalue,
        gamma_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_follow_first_appearance() {
        let x = DMatrix::from_row_slice(4, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]);
        let d = make_grouped_design(&x, &["a", "a", "b"]).unwrap();
        assert_eq!(d.n_groups(), 2);
        assert_eq!(d.group_sizes(), vec![2, 1]);
        assert_eq!(d.gram(0).shape(), (2, 2));
        assert_eq!(d.gram(1).shape(), (1, 1));
    }

    #[test]
    fn interleaved_labels_gather_columns() {
        let x = DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let d = make_grouped_design(&x, &["a", "b", "a"]).unwrap();
        assert_eq!(d.group_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.block(0), &DMatrix::from_row_slice(2, 2, &[1., 3., 4., 6.]));
        assert_eq!(d.columns(0), &[0, 2]);
        assert_eq!(d.to_matrix(), x);
    }

    #[test]
    fn gram_of_single_column_is_squared_norm() {
        let x = DMatrix::from_row_slice(3, 3, &[2., 0., 0., 0., 3., 0., 0., 0., -1.]);
        let d = make_grouped_design(&x, &["a", "b", "c"]).unwrap();
        for i in 0..3 {
            let col = x.column(i);
            let direct: f64 = col.iter().map(|v| v * v).sum();
            assert_eq!(d.gram(i)[(0, 0)], direct);
        }
    }

    #[test]
    fn construction_errors() {
        let x = DMatrix::<f64>::zeros(1, 2);
        assert!(make_grouped_design(&x, &["a", "b"]).is_err());
        let x = DMatrix::<f64>::zeros(3, 2);
        assert!(make_grouped_design::<&str>(&x, &[]).is_err());
        assert!(make_grouped_design(&x, &["a", ""]).is_err());
        assert!(make_grouped_design(&x, &["a"]).is_err());
        assert!(matrix_from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let empty = GroupedDesign::from_blocks(
            3,
            vec![DMatrix::zeros(3, 0)],
            vec!["e".into()],
            vec![vec![]],
        );
        assert!(matches!(empty, Err(GvssbError::EmptyGroup(_))));
    }

    #[test]
    fn slab_names_and_cauchy_alias() {
        let c = SlabSpec::from_name("cauchy", 1.0, None).unwrap();
        let t = SlabSpec::from_name("t", 1.0, Some(1.0)).unwrap();
        assert_eq!(c, t);
        assert!(SlabSpec::from_name("horseshoe", 1.0, None).is_err());
        assert!(SlabSpec::laplacian(0.0).is_err());
        assert!(SlabSpec::student_t(1.0, -2.0).is_err());
    }

    #[test]
    fn diagnostics_flag_gamma_out_of_range() {
        let x = DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 1., 1.]);
        let d = make_grouped_design(&x, &["a", "b"]).unwrap();
        let y = DVector::from_vec(vec![1., 2., 3.]);
        let mut state = VariationalState {
            gamma: vec![0.5, 0.5],
            mu: vec![DVector::from_element(1, 0.3), DVector::from_element(1, -0.2)],
            sigma_mat: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            kappa: vec![1.0, 1.0],
            v: 1.0,
            sigma_tilde_sq: 1.0,
            residual: DVector::zeros(3),
        };
        state.residual = state.full_residual(&d, &y);
        let diag = validate_state(&state, &d, &y).unwrap();
        assert_eq!(diag.max_residual_drift, 0.0);
        assert!(diag.is_healthy(1e-12));
        state.gamma[0] = 1.2;
        let diag = validate_state(&state, &d, &y).unwrap();
        assert_eq!(diag.gamma_violations, vec![0]);
        let short = DVector::from_vec(vec![1., 2.]);
        assert!(validate_state(&state, &d, &short).is_err());
    }
}
