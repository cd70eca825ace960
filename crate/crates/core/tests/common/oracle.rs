// Independent numerical oracles shared by unit and integration tests.
// Nothing here calls into the closed forms it is used to check.
#![allow(dead_code)]

use statrs::function::gamma::ln_gamma;

use super::oracle_types::{SlabFamily, SlabSpec};

/// Small deterministic generator so oracle-driven tests need no RNG crate.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on [0, 1).
    pub fn next(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.next().max(1e-300);
        let u2 = self.next();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    // Split into panels first so narrow peaks are not missed.
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            let hi = lo + h;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_rec(&f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// `log ∫_0^∞ exp(log_f(a)) da` computed on `t = ln a`.
pub fn log_integral_positive<F: Fn(f64) -> f64>(log_f: F) -> f64 {
    let g = |t: f64| log_f(t.exp()) + t;
    // Locate the peak on a coarse grid and integrate around it.
    let (lo, hi) = (-80.0, 30.0);
    let mut peak = f64::NEG_INFINITY;
    let mut arg = 0.0;
    for k in 0..=11000 {
        let t = lo + (hi - lo) * k as f64 / 11000.0;
        let v = g(t);
        if v > peak {
            peak = v;
            arg = t;
        }
    }
    let integrand = |t: f64| {
        let v = g(t) - peak;
        if v < -745.0 {
            0.0
        } else {
            v.exp()
        }
    };
    let width = 40.0;
    peak + adaptive_simpson(integrand, arg - width, arg + width, 1e-13).ln()
}

/// Log density of the mixing law `h̃` written out directly.
/// `family`: 0 = multi-Laplacian (Inv-Gamma((p+1)/2, λ²/2)),
/// 1 = multivariate t (Gamma(ν/2, rate νλ²/2)).
pub fn log_mixing_density(family: u8, lambda: f64, nu: f64, p: usize, a: f64) -> f64 {
    let pf = p as f64;
    match family {
        0 => {
            let shape = (pf + 1.0) / 2.0;
            let scale = lambda * lambda / 2.0;
            shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * a.ln() - scale / a
        }
        _ => {
            let shape = nu / 2.0;
            let rate = nu * lambda * lambda / 2.0;
            shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * a.ln() - rate * a
        }
    }
}

/// Log of the unnormalized `q(α²)` density.
pub fn log_q_kernel(family: u8, lambda: f64, nu: f64, p: usize, kappa: f64, a: f64) -> f64 {
    0.5 * p as f64 * a.ln() - 0.5 * a * kappa + log_mixing_density(family, lambda, nu, p, a)
}

pub fn quad_log_c(family: u8, lambda: f64, nu: f64, p: usize, kappa: f64) -> f64 {
    log_integral_positive(|a| log_q_kernel(family, lambda, nu, p, kappa, a))
}

/// `E_q[g(α²)]` for a positive function `g`.
pub fn quad_expectation<G: Fn(f64) -> f64>(
    family: u8,
    lambda: f64,
    nu: f64,
    p: usize,
    kappa: f64,
    g: G,
) -> f64 {
    let log_c = quad_log_c(family, lambda, nu, p, kappa);
    log_integral_positive(|a| log_q_kernel(family, lambda, nu, p, kappa, a) + g(a).ln()).exp()
        / log_c.exp()
}

/// `E_q[log h̃_λ'(α²)]` with `q` built from `lambda_q`; may be negative so
/// it is integrated directly on the log scale grid.
pub fn quad_expected_log_mixing(
    family: u8,
    lambda_q: f64,
    lambda_eval: f64,
    nu: f64,
    p: usize,
    kappa: f64,
) -> f64 {
    let log_c = quad_log_c(family, lambda_q, nu, p, kappa);
    let integrand = |t: f64| {
        let a = t.exp();
        let w = (log_q_kernel(family, lambda_q, nu, p, kappa, a) + t - log_c).exp();
        w * log_mixing_density(family, lambda_eval, nu, p, a)
    };
    adaptive_simpson(integrand, -80.0, 30.0, 1e-12)
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Quadrature log C for a slab spec, for use inside unit tests.
pub fn quad_log_norm_const(slab: &SlabSpec, kappa: f64, p: usize) -> f64 {
    let (family, nu) = match slab.family {
        SlabFamily::Laplacian => (0u8, 0.0),
        SlabFamily::StudentT => (1u8, slab.nu.unwrap()),
        SlabFamily::Gaussian => panic!("no mixing density"),
    };
    quad_log_c(family, slab.lambda, nu, p, kappa)
}

/// Normalized `q(α²)` on a fixed trapezoid grid in `t = ln a`, returned as
/// `(a_k, weight_k)`. With fixed nodes, objectives built from the weights
/// are smooth in any outer parameter.
pub fn q_grid(family: u8, lambda: f64, nu: f64, p: usize, kappa: f64) -> Vec<(f64, f64)> {
    let g = |t: f64| log_q_kernel(family, lambda, nu, p, kappa, t.exp()) + t;
    let mut peak = f64::NEG_INFINITY;
    let mut arg = 0.0;
    for k in 0..=11000 {
        let t = -80.0 + 110.0 * k as f64 / 11000.0;
        let v = g(t);
        if v > peak {
            peak = v;
            arg = t;
        }
    }
    let (width, nodes) = (40.0, 40000);
    let h = 2.0 * width / nodes as f64;
    let mut out: Vec<(f64, f64)> = (0..=nodes)
        .map(|k| {
            let t = arg - width + k as f64 * h;
            (t.exp(), (g(t) - peak).exp() * h)
        })
        .collect();
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    out.iter_mut().for_each(|(_, w)| *w /= total);
    out
}
