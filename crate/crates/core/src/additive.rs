//! B-spline front end for sparse additive models.
//!
//! Each covariate is expanded into `d` B-spline functions on a clamped knot
//! vector with interior knots at empirical quantiles. The expanded columns
//! are centered and rescaled to norm `√n`, so each covariate becomes one
//! group of the grouped regression.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvssbError, Result};
use crate::preprocess::StandardizationInfo;
use crate::types::{FitResult, GroupedDesign};

/// Everything needed to reproduce the training expansion on new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisInfo {
    pub d: usize,
    pub degree: usize,
    /// Interior knots per covariate, strictly inside the boundary.
    pub knots: Vec<Vec<f64>>,
    /// `[min, max]` of each training covariate.
    pub boundary: Vec<[f64; 2]>,
    /// Training means of the raw basis columns.
    pub centering_offsets: Vec<Vec<f64>>,
    /// Divisors taking centered columns to norm `√n`.
    pub scales: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

impl BasisInfo {
    pub fn n_covariates(&self) -> usize {
        self.boundary.len()
    }
}

/// Spline degree used for `d` basis functions.
pub fn degree_for(d: usize) -> usize {
    3.min(d - 1)
}

fn clamped_knot_vector(degree: usize, interior: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut t = vec![lo; degree + 1];
    t.extend_from_slice(interior);
    t.extend(std::iter::repeat_n(hi, degree + 1));
    t
}

/// Raw (uncentered) B-spline basis on `[lo, hi]` by the Cox–de Boor
/// recursion. Returns an `n × (interior + degree + 1)` matrix whose rows sum
/// to one.
pub fn bspline_basis(
    x: &[f64],
    degree: usize,
    interior: &[f64],
    lo: f64,
    hi: f64,
) -> Result<DMatrix<f64>> {
    if degree < 1 {
        return Err(GvssbError::InvalidInput("spline degree must be >= 1".into()));
    }
    if !(lo < hi) {
        return Err(GvssbError::InvalidInput(format!(
            "degenerate spline boundary [{lo}, {hi}]"
        )));
    }
    if interior
        .windows(2)
        .any(|w| w[0] >= w[1])
        || interior.iter().any(|&k| k <= lo || k >= hi)
    {
        return Err(GvssbError::InvalidInput(
            "interior knots must be strictly increasing inside the boundary".into(),
        ));
    }
    let t = clamped_knot_vector(degree, interior, lo, hi);
    let nb = t.len() - degree - 1;
    let mut out = DMatrix::zeros(x.len(), nb);
    // Index of the last non-empty knot span, used for x = hi.
    let last_span = t.len() - degree - 2;
    let mut b = vec![0.0; t.len() - 1];
    for (row, &xv) in x.iter().enumerate() {
        if xv.is_nan() {
            return Err(GvssbError::InvalidInput(format!("NaN covariate at row {row}")));
        }
        if xv < lo || xv > hi {
            return Err(GvssbError::InvalidInput(format!(
                "value {xv} at row {row} outside [{lo}, {hi}]"
            )));
        }
        b.iter_mut().for_each(|v| *v = 0.0);
        let span = if xv >= hi {
            last_span
        } else {
            (0..t.len() - 1)
                .find(|&j| t[j] <= xv && xv < t[j + 1])
                .unwrap_or(last_span)
        };
        b[span] = 1.0;
        for k in 1..=degree {
            for j in 0..t.len() - 1 - k {
                let left = t[j + k] - t[j];
                let right = t[j + k + 1] - t[j + 1];
                let a = if left > 0.0 { (xv - t[j]) / left * b[j] } else { 0.0 };
                let c = if right > 0.0 {
                    (t[j + k + 1] - xv) / right * b[j + 1]
                } else {
                    0.0
                };
                b[j] = a + c;
            }
        }
        for j in 0..nb {
            out[(row, j)] = b[j];
        }
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn distinct_sorted(col: &[f64]) -> Vec<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

struct Expanded {
    block: DMatrix<f64>,
    knots: Vec<f64>,
    boundary: [f64; 2],
    offsets: Vec<f64>,
    scales: Vec<f64>,
}

fn expand_column(col: &[f64], d: usize, degree: usize, name: &str) -> Result<Expanded> {
    let distinct = distinct_sorted(col);
    if col.iter().any(|v| !v.is_finite()) {
        return Err(GvssbError::InvalidInput(format!(
            "covariate `{name}` has non-finite values"
        )));
    }
    if distinct.len() < d {
        return Err(GvssbError::TooFewDistinct {
            name: name.to_string(),
            distinct: distinct.len(),
            required: d,
        });
    }
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let m = d - degree - 1;
    let knots: Vec<f64> = (1..=m)
        .map(|k| quantile(&distinct, k as f64 / (m + 1) as f64))
        .collect();
    let raw = bspline_basis(col, degree, &knots, lo, hi)?;
    let n = col.len() as f64;
    let mut block = raw;
    let mut offsets = Vec::with_capacity(d);
    let mut scales = Vec::with_capacity(d);
    for mut c in block.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
        let scale = c.norm() / n.sqrt();
        if scale <= 0.0 {
            return Err(GvssbError::ConstantColumn(format!(
                "basis column of covariate `{name}`"
            )));
        }
        c /= scale;
        offsets.push(mean);
        scales.push(scale);
    }
    Ok(Expanded {
        block,
        knots,
        boundary: [lo, hi],
        offsets,
        scales,
    })
}

/// Expands every column of `x` into `d` centered, scaled B-spline columns.
/// The degree is `min(3, d − 1)`; covariates are named `x1, x2, …` unless
/// `names` is given.
pub fn expand_additive(
    x: &DMatrix<f64>,
    d: usize,
    names: Option<&[String]>,
) -> Result<(GroupedDesign, BasisInfo)> {
    if d < 2 {
        return Err(GvssbError::InvalidInput(format!("d must be >= 2, got {d}")));
    }
    let n = x.nrows();
    if n <= d {
        return Err(GvssbError::InvalidInput(format!(
            "need more rows ({n}) than basis functions ({d})"
        )));
    }
    let names: Vec<String> = match names {
        Some(v) if v.len() == x.ncols() => v.to_vec(),
        Some(v) => {
            return Err(GvssbError::DimensionMismatch(format!(
                "{} names for {} covariates",
                v.len(),
                x.ncols()
            )))
        }
        None => (1..=x.ncols()).map(|j| format!("x{j}")).collect(),
    };
    let degree = degree_for(d);
    let expanded: Vec<Expanded> = (0..x.ncols())
        .into_par_iter()
        .map(|j| expand_column(x.column(j).as_slice(), d, degree, &names[j]))
        .collect::<Result<_>>()?;

    let mut info = BasisInfo {
        d,
        degree,
        knots: Vec::with_capacity(x.ncols()),
        boundary: Vec::with_capacity(x.ncols()),
        centering_offsets: Vec::with_capacity(x.ncols()),
        scales: Vec::with_capacity(x.ncols()),
        names: names.clone(),
    };
    let mut blocks = Vec::with_capacity(x.ncols());
    for e in expanded {
        blocks.push(e.block);
        info.knots.push(e.knots);
        info.boundary.push(e.boundary);
        info.centering_offsets.push(e.offsets);
        info.scales.push(e.scales);
    }
    let columns = (0..x.ncols())
        .map(|j| (j * d..(j + 1) * d).collect())
        .collect();
    let design = GroupedDesign::from_blocks(n, blocks, names, columns)?;
    Ok((design, info))
}

/// Applies a stored expansion to new rows, clamping to the training range.
/// Returns one centered, scaled block per covariate.
pub fn transform_additive(info: &BasisInfo, x_new: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    if x_new.ncols() != info.n_covariates() {
        return Err(GvssbError::DimensionMismatch(format!(
            "new data has {} columns, model was trained on {}",
            x_new.ncols(),
            info.n_covariates()
        )));
    }
    (0..x_new.ncols())
        .map(|j| {
            let [lo, hi] = info.boundary[j];
            let col: Vec<f64> = x_new.column(j).iter().map(|v| v.clamp(lo, hi)).collect();
            let mut b = bspline_basis(&col, info.degree, &info.knots[j], lo, hi)?;
            for (k, mut c) in b.column_iter_mut().enumerate() {
                let (m, s) = (info.centering_offsets[j][k], info.scales[j][k]);
                c.apply(|v| *v = (*v - m) / s);
            }
            Ok(b)
        })
        .collect()
}

/// `ŷ = ȳ + Σ_j γ_j B̃_j(x_new) μ_j` from raw variational parameters.
pub fn predict_additive_with(
    gamma: &[f64],
    mu: &[DVector<f64>],
    info: &BasisInfo,
    std: &StandardizationInfo,
    x_new: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let blocks = transform_additive(info, x_new)?;
    if gamma.len() != blocks.len() || mu.len() != blocks.len() {
        return Err(GvssbError::DimensionMismatch(format!(
            "fit has {} groups, basis has {} covariates",
            gamma.len(),
            blocks.len()
        )));
    }
    let mut yhat = DVector::from_element(x_new.nrows(), std.y_mean);
    for (j, b) in blocks.iter().enumerate() {
        if gamma[j] == 0.0 {
            continue;
        }
        // Second-stage standardization of the expanded design.
        let mut z = b.clone();
        for (k, mut c) in z.column_iter_mut().enumerate() {
            let col = j * info.d + k;
            let (m, s) = (std.col_means[col], std.col_scales[col]);
            c.apply(|v| *v = (*v - m) / s);
        }
        yhat.gemv(gamma[j], &z, &mu[j], 1.0);
    }
    Ok(yhat)
}

/// Posterior-mean prediction for new covariate rows.
pub fn predict_additive(
    fit: &FitResult,
    info: &BasisInfo,
    std: &StandardizationInfo,
    x_new: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    predict_additive_with(&fit.state.gamma, &fit.state.mu, info, std, x_new)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_endpoints() {
        let x: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        for degree in 1..=3 {
            let b = bspline_basis(&x, degree, &[0.2, 0.55, 0.7], 0.0, 1.0).unwrap();
            assert_eq!(b.ncols(), 3 + degree + 1);
            for r in 0..b.nrows() {
                assert!((b.row(r).sum() - 1.0).abs() < 1e-12);
            }
            assert_eq!(b[(0, 0)], 1.0);
            assert_eq!(b[(40, b.ncols() - 1)], 1.0);
        }
    }

    #[test]
    fn linear_hat_values() {
        let b = bspline_basis(&[0.25], 1, &[0.5], 0.0, 1.0).unwrap();
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn nan_rejected() {
        assert!(bspline_basis(&[f64::NAN], 1, &[], 0.0, 1.0).is_err());
    }

    fn sample_x(n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |i, j| (((i * 7 + j * 13) % 29) as f64 / 29.0 + 0.01 * i as f64).sin())
    }

    #[test]
    fn expansion_shape_centering_and_round_trip() {
        let x = sample_x(60, 3);
        for d in [2, 3, 5] {
            let (design, info) = expand_additive(&x, d, None).unwrap();
            assert_eq!(design.n_groups(), 3);
            assert!(design.group_sizes().iter().all(|&s| s == d));
            for b in design.blocks() {
                for c in b.column_iter() {
                    assert!(c.mean().abs() < 1e-10);
                    assert!((c.norm() - 60f64.sqrt()).abs() < 1e-8);
                }
            }
            let again = transform_additive(&info, &x).unwrap();
            for (a, b) in again.iter().zip(design.blocks()) {
                assert!((a - b).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn too_few_distinct_names_covariate() {
        let mut x = sample_x(20, 2);
        for i in 0..20 {
            x[(i, 1)] = (i % 3) as f64;
        }
        match expand_additive(&x, 5, None) {
            Err(GvssbError::TooFewDistinct { name, distinct, .. }) => {
                assert_eq!(name, "x2");
                assert_eq!(distinct, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn null_model_predicts_mean_and_clamps() {
        let x = sample_x(30, 2);
        let (_, info) = expand_additive(&x, 4, None).unwrap();
        let std = StandardizationInfo {
            y_mean: 1.5,
            col_means: vec![0.0; 8],
            col_scales: vec![1.0; 8],
        };
        let mu = vec![DVector::zeros(4), DVector::zeros(4)];
        let far = DMatrix::from_row_slice(2, 2, &[100.0, -100.0, 0.3, 0.2]);
        let y = predict_additive_with(&[0.7, 0.2], &mu, &info, &std, &far).unwrap();
        assert!(y.iter().all(|&v| v == 1.5));
        let mu = vec![DVector::from_element(4, 1.0), DVector::from_element(4, -1.0)];
        let y = predict_additive_with(&[0.0, 0.0], &mu, &info, &std, &far).unwrap();
        assert!(y.iter().all(|&v| v == 1.5));
        let y = predict_additive_with(&[1.0, 1.0], &mu, &info, &std, &far).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }
}
