//! Slab-specific mathematics.
//!
//! Hierarchical slabs are scale mixtures `θ | α² ~ N(0, α⁻² I)`, `α² ~ h̃`.
//! The variational factor `q(α²) ∝ (α²)^{p/2} e^{-α²κ/2} h̃(α²)` is
//! inverse-Gaussian for the multi-Laplacian slab (`h̃` = Inv-Gamma((p+1)/2, λ²/2))
//! and Gamma((ν+p)/2, (νλ²+κ)/2) for the multivariate t (`h̃` =
//! Gamma(ν/2, νλ²/2)). Everything here is closed form.
//!
//! The Gaussian slab is `N(0, ρ⁻¹ I)` and its `lambda` is the precision ρ.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{GvssbError, Result};
use crate::types::{SlabFamily, SlabSpec};

/// Moments of `q(α²)` feeding the group updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabMoments {
    pub e_alpha_sq: f64,
    pub log_c: f64,
    pub gamma_prior_term: f64,
}

/// `E_κ[α²]` under `q(α²)`; for the Gaussian slab the fixed precision.
pub fn expected_alpha_sq(slab: &SlabSpec, kappa: f64, p: usize) -> Result<f64> {
    let lambda = slab.lambda;
    match slab.family {
        SlabFamily::Gaussian => Ok(lambda),
        SlabFamily::Laplacian => {
            if !(kappa > 0.0) {
                return Err(GvssbError::InvalidInput(format!(
                    "multi-Laplacian slab needs kappa > 0, got {kappa}"
                )));
            }
            Ok(lambda / kappa.sqrt())
        }
        SlabFamily::StudentT => {
            if !(kappa >= 0.0) {
                return Err(GvssbError::InvalidInput(format!(
                    "kappa must be nonnegative, got {kappa}"
                )));
            }
            let nu = slab.nu_or_zero();
            Ok((nu + p as f64) / (nu * lambda * lambda + kappa))
        }
    }
}

/// `E_κ[1/α²]` for hierarchical slabs. For the multivariate t this is finite
/// only when `ν + p > 2`.
pub fn expected_inv_alpha_sq(slab: &SlabSpec, kappa: f64, p: usize) -> Result<f64> {
    let lambda = slab.lambda;
    match slab.family {
        SlabFamily::Gaussian => Ok(1.0 / lambda),
        SlabFamily::Laplacian => {
            if !(kappa >= 0.0) {
                return Err(GvssbError::InvalidInput(format!(
                    "kappa must be nonnegative, got {kappa}"
                )));
            }
            Ok(kappa.sqrt() / lambda + 1.0 / (lambda * lambda))
        }
        SlabFamily::StudentT => {
            let nu = slab.nu_or_zero();
            let shape = (nu + p as f64) / 2.0;
            if shape <= 1.0 {
                return Err(GvssbError::InvalidInput(
                    "E[1/α²] diverges for ν + p ≤ 2".into(),
                ));
            }
            Ok((nu * lambda * lambda + kappa) / 2.0 / (shape - 1.0))
        }
    }
}

/// `log C = log ∫ (α²)^{p/2} e^{-α²κ/2} h̃(α²) dα²`.
pub fn log_norm_const(slab: &SlabSpec, kappa: f64, p: usize) -> Result<f64> {
    if !(kappa >= 0.0) {
        return Err(GvssbError::InvalidInput(format!(
            "kappa must be nonnegative, got {kappa}"
        )));
    }
    let lambda = slab.lambda;
    let pf = p as f64;
    match slab.family {
        SlabFamily::Gaussian => Err(GvssbError::Unsupported(
            "Gaussian slab has no augmentation".into(),
        )),
        SlabFamily::Laplacian => Ok(pf / 2.0 * (lambda * lambda / 2.0).ln()
            - ln_gamma((pf + 1.0) / 2.0)
            + 0.5 * PI.ln()
            - lambda * kappa.sqrt()),
        SlabFamily::StudentT => {
            let nu = slab.nu_or_zero();
            let rate0 = nu * lambda * lambda / 2.0;
            Ok(nu / 2.0 * rate0.ln() - ln_gamma(nu / 2.0) + ln_gamma((nu + pf) / 2.0)
                - (nu + pf) / 2.0 * (rate0 + kappa / 2.0).ln())
        }
    }
}

/// Slab-dependent part of the `γ_i` logit, i.e. everything except
/// `log(w/(1−w))`. `quad_form` is `μᵀΣ⁻¹μ`.
pub fn gamma_prior_term(
    slab: &SlabSpec,
    kappa: f64,
    p: usize,
    logdet_sigma: f64,
    quad_form: f64,
) -> f64 {
    let lambda = slab.lambda;
    let pf = p as f64;
    match slab.family {
        SlabFamily::Gaussian => 0.5 * logdet_sigma + 0.5 * pf * lambda.ln() + 0.5 * quad_form,
        SlabFamily::Laplacian => {
            0.5 * (logdet_sigma + PI.ln() + pf * (lambda * lambda / 2.0).ln()
                - lambda * kappa.sqrt()
                - 2.0 * ln_gamma((pf + 1.0) / 2.0)
                + quad_form)
        }
        SlabFamily::StudentT => {
            let nu = slab.nu_or_zero();
            let s = nu * lambda * lambda;
            0.5 * (logdet_sigma + nu * (s / 2.0).ln() - (nu + pf) * ((s + kappa) / 2.0).ln()
                + kappa * (nu + pf) / (s + kappa)
                + quad_form)
                + ln_gamma((nu + pf) / 2.0)
                - ln_gamma(nu / 2.0)
        }
    }
}

/// Bundles the three slab quantities used by one hierarchical group update.
pub fn slab_moments(
    slab: &SlabSpec,
    kappa: f64,
    p: usize,
    logdet_sigma: f64,
    quad_form: f64,
) -> Result<SlabMoments> {
    let e_alpha_sq = expected_alpha_sq(slab, kappa, p)?;
    let log_c = if slab.is_hierarchical() {
        log_norm_const(slab, kappa, p)?
    } else {
        0.0
    };
    Ok(SlabMoments {
        e_alpha_sq,
        log_c,
        gamma_prior_term: gamma_prior_term(slab, kappa, p, logdet_sigma, quad_form),
    })
}

/// `E_{N(μ,Σ)} log N(θ; 0, ρ⁻¹ I)` for the Gaussian slab.
pub fn gaussian_expected_log_h(
    mu: &DVector<f64>,
    sigma_mat: &DMatrix<f64>,
    slab: &SlabSpec,
) -> Result<f64> {
    if slab.family != SlabFamily::Gaussian {
        return Err(GvssbError::Unsupported(
            "expected log-slab is closed form only for the Gaussian slab".into(),
        ));
    }
    let rho = slab.lambda;
    let p = mu.len() as f64;
    let second_moment = mu.norm_squared() + sigma_mat.trace();
    Ok(-0.5 * p * (2.0 * PI / rho).ln() - 0.5 * rho * second_moment)
}

/// Contribution of one active group's slab block to the ELBO:
/// `E_q[log p(θ, α²) − log q(θ, α²)]` given `z_i = 1`. `second_moment` is
/// `μᵀμ + Tr(Σ)`.
pub fn slab_elbo_term(
    slab: &SlabSpec,
    kappa: f64,
    p: usize,
    logdet_sigma: f64,
    second_moment: f64,
) -> Result<f64> {
    let pf = p as f64;
    match slab.family {
        SlabFamily::Gaussian => {
            let rho = slab.lambda;
            Ok(0.5 * logdet_sigma + 0.5 * pf + 0.5 * pf * rho.ln() - 0.5 * rho * second_moment)
        }
        _ => {
            let ea = expected_alpha_sq(slab, kappa, p)?;
            let log_c = log_norm_const(slab, kappa, p)?;
            Ok(0.5 * logdet_sigma + 0.5 * pf + 0.5 * ea * (kappa - second_moment) + log_c)
        }
    }
}

/// Per-group sufficient statistics for the λ update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaStats {
    pub p: usize,
    /// `Tr(Σ_i + μ_i μ_iᵀ)`.
    pub second_moment: f64,
    pub kappa: f64,
}

/// One M-step for λ with `q(α²)` held at the current λ.
///
/// Gaussian: `ρ = Σγp / Σγ Tr(Σ+μμᵀ)`. Laplacian:
/// `λ² = Σγ(p+1) / Σγ E[1/α²]`. Student t: `λ² = Σγ / Σγ E[α²]`.
/// Returns the old λ unchanged when `Σγ` vanishes.
pub fn em_lambda_update(slab: &SlabSpec, gamma: &[f64], stats: &[LambdaStats]) -> Result<f64> {
    if gamma.len() != stats.len() {
        return Err(GvssbError::DimensionMismatch(format!(
            "{} inclusion probabilities for {} groups",
            gamma.len(),
            stats.len()
        )));
    }
    let total: f64 = gamma.iter().sum();
    if !(total > 1e-300) {
        warn!("all inclusion probabilities vanish; keeping lambda = {}", slab.lambda);
        return Ok(slab.lambda);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&g, s) in gamma.iter().zip(stats) {
        let pf = s.p as f64;
        match slab.family {
            SlabFamily::Gaussian => {
                num += g * pf;
                den += g * s.second_moment;
            }
            SlabFamily::Laplacian => {
                num += g * (pf + 1.0);
                den += g * expected_inv_alpha_sq(slab, s.kappa, s.p)?;
            }
            SlabFamily::StudentT => {
                num += g;
                den += g * expected_alpha_sq(slab, s.kappa, s.p)?;
            }
        }
    }
    let updated = match slab.family {
        SlabFamily::Gaussian => num / den,
        _ => (num / den).sqrt(),
    };
    if !(updated > 0.0 && updated.is_finite()) {
        warn!("lambda update produced {updated}; keeping {}", slab.lambda);
        return Ok(slab.lambda);
    }
    Ok(updated)
}

#[cfg(test)]
mod oracle_types {
    pub use crate::types::{SlabFamily, SlabSpec};
}

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod oracle;

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;

    fn lap(l: f64) -> SlabSpec {
        SlabSpec::laplacian(l).unwrap()
    }

    fn st(l: f64, nu: f64) -> SlabSpec {
        SlabSpec::student_t(l, nu).unwrap()
    }

    #[test]
    fn table_values() {
        assert_eq!(expected_alpha_sq(&lap(2.0), 4.0, 3).unwrap(), 1.0);
        assert_eq!(expected_alpha_sq(&st(1.0, 1.0), 3.0, 1).unwrap(), 0.5);
        let g = SlabSpec::gaussian(2.5).unwrap();
        assert_eq!(
            expected_alpha_sq(&g, 1.0, 2).unwrap(),
            expected_alpha_sq(&g, 100.0, 2).unwrap()
        );
        assert!(expected_alpha_sq(&lap(1.0), 0.0, 2).is_err());
    }

    #[test]
    fn laplacian_log_c_matches_quadrature() {
        let s = lap(1.0);
        let want = quad_log_norm_const(&s, 1.0, 1);
        assert!((log_norm_const(&s, 1.0, 1).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn student_t_log_c_at_zero_kappa() {
        let s = st(1.3, 2.0);
        let got = log_norm_const(&s, 0.0, 2).unwrap();
        let want = quad_log_norm_const(&s, 0.0, 2);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        // Reduced form: lnΓ((ν+p)/2) − lnΓ(ν/2) − (p/2) ln(νλ²/2).
        let reduced = ln_gamma(2.0) - ln_gamma(1.0) - (2.0 * 1.69 / 2.0f64).ln();
        assert!((got - reduced).abs() < 1e-12);
    }

    #[test]
    fn log_c_decreases_in_kappa() {
        for s in [lap(0.7), st(1.0, 3.0), st(2.0, 1.0)] {
            let vals: Vec<f64> = (0..40)
                .map(|k| log_norm_const(&s, 0.05 + 0.5 * k as f64, 3).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]));
        }
        assert!(log_norm_const(&SlabSpec::gaussian(1.0).unwrap(), 1.0, 1).is_err());
    }

    #[test]
    fn gaussian_null_signal_term_is_zero() {
        let g = SlabSpec::gaussian(1.0).unwrap();
        assert_eq!(gamma_prior_term(&g, 0.0, 3, 0.0, 0.0), 0.0);
    }

    #[test]
    fn laplacian_table_form_matches_general_assembly() {
        let mut rng = SplitMix(17);
        for _ in 0..50 {
            let s = lap(0.2 + 3.0 * rng.next());
            let p = 1 + (rng.next() * 6.0) as usize;
            let kappa = 0.05 + 8.0 * rng.next();
            let logdet = -5.0 + 4.0 * rng.next();
            let quad = 10.0 * rng.next();
            let general = 0.5 * (kappa * expected_alpha_sq(&s, kappa, p).unwrap() + logdet + quad)
                + quad_log_norm_const(&s, kappa, p);
            let table = gamma_prior_term(&s, kappa, p, logdet, quad);
            assert!((general - table).abs() < 1e-8, "{general} vs {table}");
        }
    }

    #[test]
    fn student_t_table_form_matches_general_assembly() {
        let mut rng = SplitMix(3);
        for _ in 0..50 {
            let s = st(0.2 + 3.0 * rng.next(), 0.5 + 5.0 * rng.next());
            let p = 1 + (rng.next() * 6.0) as usize;
            let kappa = 8.0 * rng.next();
            let general = 0.5 * kappa * expected_alpha_sq(&s, kappa, p).unwrap()
                + quad_log_norm_const(&s, kappa, p);
            let table = gamma_prior_term(&s, kappa, p, 0.0, 0.0);
            assert!((general - table).abs() < 1e-8, "{general} vs {table}");
        }
    }

    #[test]
    fn student_t_approaches_gaussian_for_large_nu() {
        // With ν → ∞ the Gamma mixing density concentrates at α² = 1/λ², so
        // the t slab tends to a Gaussian slab of precision 1/λ².
        let lambda = 1.3;
        let g = SlabSpec::gaussian(1.0 / (lambda * lambda)).unwrap();
        let (logdet, quad, p) = (-1.7, 2.4, 3);
        let kappa = 0.9;
        let target = gamma_prior_term(&g, kappa, p, logdet, quad);
        let mut prev = f64::INFINITY;
        for nu in [1e2, 1e3, 1e4, 1e5, 1e6] {
            let t = gamma_prior_term(&st(lambda, nu), kappa, p, logdet, quad);
            let gap = (t - target).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-5, "gap {prev}");
    }

    #[test]
    fn gaussian_expected_log_density() {
        let tau2: f64 = 0.8;
        let g = SlabSpec::gaussian(1.0 / tau2).unwrap();
        let mu = DVector::zeros(2);
        let sig = DMatrix::identity(2, 2) * tau2;
        let got = gaussian_expected_log_h(&mu, &sig, &g).unwrap();
        assert!((got - (-(2.0 * PI * tau2).ln() - 1.0)).abs() < 1e-12);

        let mu = DVector::from_vec(vec![1.0, 0.0]);
        let tiny = DMatrix::identity(2, 2) * 1e-12;
        let point = -(2.0 * PI * tau2).ln() - 1.0 / (2.0 * tau2);
        assert!((gaussian_expected_log_h(&mu, &tiny, &g).unwrap() - point).abs() < 1e-6);

        // Doubling τ² halves the quadratic part.
        let g2 = SlabSpec::gaussian(1.0 / (2.0 * tau2)).unwrap();
        let quad = |s: &SlabSpec| {
            gaussian_expected_log_h(&mu, &tiny, s).unwrap() + 0.5 * 2.0 * (2.0 * PI / s.lambda).ln()
        };
        assert!((quad(&g2) - 0.5 * quad(&g)).abs() < 1e-12);
        assert!(gaussian_expected_log_h(&mu, &tiny, &lap(1.0)).is_err());
    }

    #[test]
    fn em_gaussian_closed_form() {
        let g = SlabSpec::gaussian(1.0).unwrap();
        let stats = [LambdaStats {
            p: 2,
            second_moment: 3.0,
            kappa: 3.0,
        }];
        assert_eq!(em_lambda_update(&g, &[1.0], &stats).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn em_student_t_zero_kappa() {
        let (l0, nu, p) = (1.5, 3.0, 2);
        let s = st(l0, nu);
        let stats = [LambdaStats {
            p,
            second_moment: 0.0,
            kappa: 0.0,
        }];
        let l = em_lambda_update(&s, &[0.7], &stats).unwrap();
        assert!((l * l - l0 * l0 * nu / (nu + p as f64)).abs() < 1e-12);
    }

    #[test]
    fn em_zero_gamma_keeps_lambda() {
        let s = lap(0.9);
        let stats = [LambdaStats {
            p: 2,
            second_moment: 1.0,
            kappa: 1.0,
        }];
        assert_eq!(em_lambda_update(&s, &[0.0], &stats).unwrap(), 0.9);
    }

    #[test]
    fn laplacian_jensen() {
        for kappa in [0.01, 0.3, 1.0, 7.0, 50.0] {
            for l in [0.3, 1.0, 4.0] {
                let s = lap(l);
                let prod = expected_alpha_sq(&s, kappa, 2).unwrap()
                    * expected_inv_alpha_sq(&s, kappa, 2).unwrap();
                assert!(prod >= 1.0);
            }
        }
    }
}
