//! Centering/scaling to the `‖X_j‖ = √n` convention and the cross-validated
//! ridge regression used to initialize `μ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvssbError, Result};
use crate::types::GroupedDesign;

/// The affine map taking raw covariates to the standardized design.
///
/// Means and scales are stored in source column order; the standardized
/// column is `(x_j − col_means[j]) / col_scales[j]`, which has norm `√n` on
/// the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationInfo {
    pub y_mean: f64,
    pub col_means: Vec<f64>,
    pub col_scales: Vec<f64>,
}

impl StandardizationInfo {
    /// Applies the stored transform to a raw matrix in source column order.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.col_means.len() {
            return Err(GvssbError::DimensionMismatch(format!(
                "matrix has {} columns, transform expects {}",
                x.ncols(),
                self.col_means.len()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.col_means[j], self.col_scales[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    /// Applies the stored transform to a raw design with the same layout as
    /// the training design.
    pub fn apply(&self, raw: &GroupedDesign) -> Result<GroupedDesign> {
        if raw.n_columns() != self.col_means.len() {
            return Err(GvssbError::DimensionMismatch(format!(
                "design has {} columns, transform expects {}",
                raw.n_columns(),
                self.col_means.len()
            )));
        }
        raw.map_blocks(|i, b| {
            let mut out = b.clone();
            for (k, &c) in raw.columns(i).iter().enumerate() {
                let (m, s) = (self.col_means[c], self.col_scales[c]);
                out.column_mut(k).apply(|v| *v = (*v - m) / s);
            }
            Ok(out)
        })
    }

    /// Undoes [`apply_matrix`](Self::apply_matrix).
    pub fn invert_matrix(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.col_means[j], self.col_scales[j]);
            col.apply(|v| *v = *v * s + m);
        }
        out
    }

    /// Maps standardized-scale coefficients (source order) to the raw
    /// covariate scale, returning `(intercept, coefficients)` such that
    /// `y_mean + Z b = intercept + X b_raw`.
    pub fn destandardize(&self, coef: &DVector<f64>) -> (f64, DVector<f64>) {
        let raw = DVector::from_iterator(
            coef.len(),
            coef.iter().zip(&self.col_scales).map(|(b, s)| b / s),
        );
        let shift: f64 = raw.iter().zip(&self.col_means).map(|(b, m)| b * m).sum();
        (self.y_mean - shift, raw)
    }
}

/// Centers `y` and every column of the design, then rescales each column to
/// Euclidean norm `√n`.
pub fn standardize(
    raw: &GroupedDesign,
    y: &DVector<f64>,
) -> Result<(GroupedDesign, DVector<f64>, StandardizationInfo)> {
    let n = raw.n();
    if y.len() != n {
        return Err(GvssbError::DimensionMismatch(format!(
            "response has {} entries, design has {n} rows",
            y.len()
        )));
    }
    let p = raw.n_columns();
    let mut col_means = vec![0.0; p];
    let mut col_scales = vec![0.0; p];
    let root_n = (n as f64).sqrt();
    for (i, b) in raw.blocks().iter().enumerate() {
        for (k, &c) in raw.columns(i).iter().enumerate() {
            let col = b.column(k);
            let mean = col.mean();
            let norm = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            let magnitude = col.amax().max(f64::MIN_POSITIVE);
            if norm <= 1e-12 * magnitude * root_n || norm == 0.0 {
                return Err(GvssbError::ConstantColumn(format!(
                    "column {c} (group `{}`)",
                    raw.group_names()[i]
                )));
            }
            col_means[c] = mean;
            col_scales[c] = norm / root_n;
        }
    }
    let y_mean = y.mean();
    let info = StandardizationInfo {
        y_mean,
        col_means,
        col_scales,
    };
    let design = info.apply(raw)?;
    let yc = y.map(|v| v - y_mean);
    Ok((design, yc, info))
}

/// 50 log-spaced ridge penalties in `[1e-4, 1e4]`.
pub fn default_ridge_grid() -> Vec<f64> {
    log_grid(1e-4, 1e4, 50)
}

pub(crate) fn log_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..len)
        .map(|k| (a + (b - a) * k as f64 / (len - 1) as f64).exp())
        .collect()
}

/// Outcome of the cross-validated ridge fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeInit {
    /// Coefficients in source column order, refit on all rows.
    pub coefficients: DVector<f64>,
    /// Grid penalty with the lowest CV error.
    pub penalty: f64,
    /// Mean held-out squared error per grid value.
    pub cv_error: Vec<f64>,
}

/// Ridge solutions for every penalty from one eigendecomposition.
///
/// Uses the `p × p` normal equations when `p ≤ n` and the `n × n` dual form
/// otherwise.
struct RidgePath {
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    projected: DVector<f64>,
    dual: Option<DMatrix<f64>>,
}

impl RidgePath {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (n, p) = x.shape();
        if p <= n {
            let eig = SymmetricEigen::new(x.tr_mul(x));
            let projected = eig.eigenvectors.tr_mul(&x.tr_mul(y));
            Self {
                basis: eig.eigenvectors,
                eigenvalues: eig.eigenvalues.map(|d| d.max(0.0)),
                projected,
                dual: None,
            }
        } else {
            let eig = SymmetricEigen::new(x * x.transpose());
            let projected = eig.eigenvectors.tr_mul(y);
            Self {
                basis: eig.eigenvectors,
                eigenvalues: eig.eigenvalues.map(|d| d.max(0.0)),
                projected,
                dual: Some(x.transpose()),
            }
        }
    }

    fn solve(&self, penalty: f64) -> DVector<f64> {
        let scaled = self
            .projected
            .zip_map(&self.eigenvalues, |c, d| c / (d + penalty));
        let inner = &self.basis * scaled;
        match &self.dual {
            None => inner,
            Some(xt) => xt * inner,
        }
    }
}

/// Deterministic fold assignment: seeded permutation cut into contiguous
/// slices.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    (0..folds)
        .map(|f| perm[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect()
}

/// Ridge regression initialization with the penalty picked by k-fold CV.
pub fn ridge_init(
    design: &GroupedDesign,
    y: &DVector<f64>,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<RidgeInit> {
    let x = design.to_matrix();
    ridge_cv(&x, y, folds, grid, seed)
}

/// [`ridge_init`] on a plain matrix.
pub fn ridge_cv(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<RidgeInit> {
    let n = x.nrows();
    if folds < 2 {
        return Err(GvssbError::InvalidInput(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if n < folds {
        return Err(GvssbError::InvalidInput(format!(
            "{n} observations cannot be split into {folds} folds"
        )));
    }
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(GvssbError::InvalidInput(
            "ridge grid must be nonempty and positive".into(),
        ));
    }
    if y.len() != n {
        return Err(GvssbError::DimensionMismatch(format!(
            "response has {} entries, design has {n} rows",
            y.len()
        )));
    }

    let assignment = fold_assignment(n, folds, seed);
    let per_fold: Vec<Vec<f64>> = assignment
        .par_iter()
        .map(|test| {
            let mut in_test = vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let x_train = x.select_rows(train.iter());
            let y_train = y.select_rows(train.iter());
            let x_test = x.select_rows(test.iter());
            let y_test = y.select_rows(test.iter());
            let path = RidgePath::new(&x_train, &y_train);
            grid.iter()
                .map(|&l| {
                    let beta = path.solve(l);
                    (&y_test - &x_test * beta).norm_squared()
                })
                .collect()
        })
        .collect();

    let cv_error: Vec<f64> = (0..grid.len())
        .map(|k| per_fold.iter().map(|f| f[k]).sum::<f64>() / n as f64)
        .collect();
    let best = cv_error
        .iter()
        .enumerate()
        .fold(0, |best, (k, &e)| if e < cv_error[best] { k } else { best });
    let penalty = grid[best];
    let coefficients = RidgePath::new(x, y).solve(penalty);
    Ok(RidgeInit {
        coefficients,
        penalty,
        cv_error,
    })
}
