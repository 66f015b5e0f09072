//! Laplace asymptotics of `E[exp(nH)]` on the simplex and the constants that
//! govern the estimators: moment constants, Beta-function asymptotics, the
//! limiting control-variate correlation and the sparsity lower bound.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{log_det_spd, permute_symmetric};
use crate::maximizer::{critical_cone_basis, MaximizerReport};
use crate::objectives::LdaInstance;
use crate::simplex::{ln_gamma, DirichletParams};

/// `ln C + rate·n + poly·ln(scale·n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceApprox {
    pub log_constant: f64,
    pub exponential_rate: f64,
    pub poly_exponent: f64,
    /// argument scaling of the polynomial factor: 2 for the plain second moment
    pub n_scale: f64,
}

impl LaplaceApprox {
    pub fn log_value(&self, n: f64) -> f64 {
        self.log_constant + self.exponential_rate * n + self.poly_exponent * (self.n_scale * n).ln()
    }
}

fn check_assumptions(report: &MaximizerReport, alpha: &DirichletParams) -> Result<()> {
    if alpha.len() != report.k() {
        return Err(Error::Dimension {
            what: "alpha length",
            expected: report.k(),
            found: alpha.len(),
        });
    }
    if !report.negative_definite {
        return Err(invalid("reduced Hessian at the maximizer is not negative definite"));
    }
    if let Some(l) = report.lambda.iter().find(|&&l| !(l > 0.0)) {
        return Err(invalid(format!("strict complementarity fails: multiplier {l:.3e}")));
    }
    Ok(())
}

/// `−(K−1−m)/2 − Σ_{active} α_i`.
pub fn poly_exponent(report: &MaximizerReport, alpha: &DirichletParams) -> f64 {
    let d = (report.k() - 1 - report.m) as f64;
    -0.5 * d - report.active_set.iter().map(|&i| alpha.alpha()[i]).sum::<f64>()
}

/// `ln Dir_{α,m}(θ*)`: the density normalizer times the inactive-coordinate product.
fn log_partial_dirichlet(report: &MaximizerReport, alpha: &DirichletParams) -> f64 {
    let a = alpha.alpha();
    -alpha.log_beta()
        + report
            .theta_star
            .iter()
            .zip(a)
            .filter(|(&t, _)| t > 0.0)
            .map(|(&t, &ai)| (ai - 1.0) * t.ln())
            .sum::<f64>()
}

fn moment_constant(report: &MaximizerReport, alpha: &DirichletParams, lambda_scale: f64, gauss_base: f64) -> Result<f64> {
    check_assumptions(report, alpha)?;
    let a = alpha.alpha();
    let d = (report.k() - 1 - report.m) as f64;
    let kkt: f64 = report
        .active_set
        .iter()
        .zip(&report.lambda)
        .map(|(&i, &l)| -a[i] * (lambda_scale * l).ln() + ln_gamma(a[i]))
        .sum();
    let log_det = report
        .log_abs_det_reduced()
        .ok_or_else(|| invalid("reduced Hessian is not negative definite"))?;
    Ok(log_partial_dirichlet(report, alpha) + kkt + 0.5 * d * gauss_base.ln() - 0.5 * log_det)
}

/// `E[e^{nH}] ~ C_H e^{nH(θ*)} n^{−(K−1−m)/2 − Σ_{active} α_i}`.
pub fn laplace_first_moment(report: &MaximizerReport, alpha: &DirichletParams, h_at_star: f64) -> Result<LaplaceApprox> {
    Ok(LaplaceApprox {
        log_constant: moment_constant(report, alpha, 1.0, 2.0 * PI)?,
        exponential_rate: h_at_star,
        poly_exponent: poly_exponent(report, alpha),
        n_scale: 1.0,
    })
}

/// `E[e^{2nH}]`: the first-moment expansion with `n` replaced by `2n`.
pub fn laplace_second_moment_plain(report: &MaximizerReport, alpha: &DirichletParams, h_at_star: f64) -> Result<LaplaceApprox> {
    let first = laplace_first_moment(report, alpha, h_at_star)?;
    Ok(LaplaceApprox {
        exponential_rate: 2.0 * h_at_star,
        n_scale: 2.0,
        ..first
    })
}

/// `E_α[e^{2nH + n^γ KL} 1_{Δ^ε}] ~ C'_H e^{2nH(θ*)} n^{poly}` with the
/// multipliers doubled and `π` in place of `2π`.
pub fn laplace_second_moment_is(report: &MaximizerReport, alpha: &DirichletParams, h_at_star: f64) -> Result<LaplaceApprox> {
    Ok(LaplaceApprox {
        log_constant: moment_constant(report, alpha, 2.0, PI)?,
        exponential_rate: 2.0 * h_at_star,
        poly_exponent: poly_exponent(report, alpha),
        n_scale: 1.0,
    })
}

/// Pieces of `ln B(α + xθ*) ≈ ln C_B + poly·ln x + x·θ*·ln θ*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaAsymptotic {
    pub log_constant: f64,
    pub poly_exponent: f64,
    pub rate: f64,
}

impl BetaAsymptotic {
    pub fn new(alpha: &DirichletParams, theta_star: &[f64]) -> Self {
        let a = alpha.alpha();
        let k = a.len();
        let m = theta_star.iter().filter(|&&t| t == 0.0).count();
        let d = (k - 1 - m) as f64;
        let mut log_constant = 0.5 * d * (2.0 * PI).ln();
        let mut poly_exponent = -0.5 * d;
        let mut rate = 0.0;
        for (&ai, &t) in a.iter().zip(theta_star) {
            if t == 0.0 {
                // active coordinates keep their Gamma function exactly
                log_constant += ln_gamma(ai);
                poly_exponent -= ai;
            } else {
                log_constant += (ai - 0.5) * t.ln();
                rate += t * t.ln();
            }
        }
        Self {
            log_constant,
            poly_exponent,
            rate,
        }
    }

    pub fn log_value(&self, x: f64) -> f64 {
        self.log_constant + self.poly_exponent * x.ln() + self.rate * x
    }
}

pub fn beta_asymptotic(alpha: &DirichletParams, theta_star: &[f64], x: f64) -> f64 {
    BetaAsymptotic::new(alpha, theta_star).log_value(x)
}

/// `diag(1/θ*)` on the support, zero on active coordinates.
fn kl_curvature(theta: &[f64]) -> DMatrix<f64> {
    let k = theta.len();
    DMatrix::from_fn(k, k, |i, j| if i == j && theta[i] > 0.0 { 1.0 / theta[i] } else { 0.0 })
}

/// Large-`n` squared correlation between `e^{nH}` and `e^{nĤ}`.
///
/// Interior maximizers with a definite full Hessian use the full `K×K`
/// matrices; otherwise the critical-cone reductions are used. A vertex
/// maximizer has no curvature factor.
pub fn limiting_rho_squared(report: &MaximizerReport, alpha: &DirichletParams) -> Result<f64> {
    check_assumptions(report, alpha)?;
    let a = alpha.alpha();
    let k = report.k();
    let d = k - 1 - report.m;
    let kkt_log: f64 = report
        .active_set
        .iter()
        .zip(&report.lambda)
        .map(|(&i, &l)| a[i] * ((4.0 * l).ln() - 2.0 * (l + 1.0).ln()))
        .sum();
    let det_log = if d == 0 {
        0.0
    } else {
        let full = (report.m == 0)
            .then(|| {
                let y = -report.hessian_matrix();
                let x = kl_curvature(&report.theta_star);
                let ly = log_det_spd(&y)?;
                let lx = log_det_spd(&x)?;
                let lm = log_det_spd(&((&x + &y) * 0.5))?;
                Some(0.5 * (ly + lx) - lm)
            })
            .flatten();
        match full {
            Some(v) => v,
            None => {
                let u = critical_cone_basis(k, report.m)?;
                let q = -report.reduced_hessian_matrix();
                let dk = permute_symmetric(&kl_curvature(&report.theta_star), &report.permutation);
                let r = u.transpose() * dk * &u;
                let lq = log_det_spd(&q).ok_or_else(|| invalid("reduced Hessian is not negative definite"))?;
                let lr = log_det_spd(&r).ok_or_else(|| Error::Numerical("reduced KL Hessian is singular".into()))?;
                let lm = log_det_spd(&((&q + &r) * 0.5)).ok_or_else(|| Error::Numerical("averaged Hessian is singular".into()))?;
                0.5 * (lq + lr) - lm
            }
        }
    };
    Ok((det_log + kkt_log).exp().min(1.0))
}

/// Sparsity diagnostics and the resulting lower bound on the limiting correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub epsilon: f64,
    pub c_max1: f64,
    pub c_max2: f64,
    pub epsilon_zero: f64,
    /// `√F(ε₀) / √(1 − ε₀√F(ε₀))`
    pub constant: f64,
    /// `exp(−C²ε²/8)`, present only when applicable
    pub lower_bound: Option<f64>,
    /// `exp(−C²ε²)`, the weaker form, present only when applicable
    pub lower_bound_theorem_form: Option<f64>,
    pub applicable: bool,
    pub reason: Option<String>,
}

/// `max_v Σ_{j≠k(v)} φ_j(v) / φ_{k(v)}(v)`, failing when some word has no unique dominant topic.
pub fn sparsity_epsilon(phi: &[impl AsRef<[f64]>]) -> Result<f64> {
    let k = phi.len();
    let v = phi[0].as_ref().len();
    let mut eps: f64 = 0.0;
    for word in 0..v {
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut total = 0.0;
        for row in phi {
            let x = row.as_ref()[word];
            total += x;
            if x > best {
                second = best;
                best = x;
            } else if x > second {
                second = x;
            }
        }
        if k > 1 && best - second <= 1e-12 * best {
            return Err(invalid(format!("word {word} has no unique dominant topic")));
        }
        if best > 0.0 {
            eps = eps.max((total - best) / best);
        }
    }
    Ok(eps)
}

/// `F(ε) = 4 (C²)² K + K(K−1)(2C¹ + C²ε)²`.
pub fn sparsity_f(eps: f64, c1: f64, c2: f64, k: usize) -> f64 {
    let k = k as f64;
    4.0 * c2 * c2 * k + k * (k - 1.0) * (2.0 * c1 + c2 * eps).powi(2)
}

/// Root of `ε√F(ε) = 1/2` by bisection.
pub fn epsilon_zero(c1: f64, c2: f64, k: usize) -> f64 {
    let g = |e: f64| e * sparsity_f(e, c1, c2, k).sqrt() - 0.5;
    let mut hi = 1.0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn sparsity_report(inst: &LdaInstance, report: &MaximizerReport) -> Result<SparsityReport> {
    let phi: Vec<&[f64]> = inst.phi().iter().map(|r| r.coords()).collect();
    let epsilon = sparsity_epsilon(&phi)?;
    let k = inst.num_topics();
    let theta = &report.theta_star;
    let tmax = theta.iter().copied().fold(0.0, f64::max);
    let tmin = theta.iter().copied().fold(f64::INFINITY, f64::min);
    let interior = report.m == 0;
    let (c_max1, c_max2, epsilon_zero, constant) = if interior {
        let c1 = tmax.sqrt() / tmin.powf(1.5);
        let c2 = tmax / (tmin * tmin);
        let e0 = epsilon_zero(c1, c2, k);
        let s = sparsity_f(e0, c1, c2, k).sqrt();
        (c1, c2, e0, s / (1.0 - e0 * s).sqrt())
    } else {
        (f64::INFINITY, f64::INFINITY, 0.0, f64::INFINITY)
    };
    let reason = if !interior {
        Some("maximizer is on the boundary".to_string())
    } else if k <= 3 {
        Some("bound needs more than three topics".to_string())
    } else if epsilon >= epsilon_zero {
        Some(format!("epsilon {epsilon:.3e} is not below epsilon_0 {epsilon_zero:.3e}"))
    } else {
        None
    };
    let applicable = reason.is_none();
    let c2e2 = constant * constant * epsilon * epsilon;
    Ok(SparsityReport {
        epsilon,
        c_max1,
        c_max2,
        epsilon_zero,
        constant,
        lower_bound: applicable.then(|| (-c2e2 / 8.0).exp()),
        lower_bound_theorem_form: applicable.then(|| (-c2e2).exp()),
        applicable,
        reason,
    })
}
