//! MSE-ratio and bias experiments over a grid of document lengths.
//!
//! Estimator variances are computed from reference second moments rather than
//! from the spread of the plain Monte Carlo draws, which collapses at large `n`.

use serde::{Deserialize, Serialize};

use super::quadrature::{quadrature_is_second_moment, quadrature_reference, QuadratureConfig};
use super::{log_diff_abs, proposal_shift, EstimatorConfig, LogMoments, Proposal};
use crate::error::{invalid, Error, Result};
use crate::laplace::poly_exponent;
use crate::maximizer::MaximizerReport;
use crate::objectives::{KlObjective, Objective};
use crate::simplex::{log_sum_exp, DirichletParams, RandomStream, TruncationMode};
use crate::stats::linear_fit;

/// Number of largest grid points used for the slope fit.
pub const SLOPE_FIT_WINDOW: usize = 5;

/// Floor recorded for `Bias²/MSE_MC` when no sample was truncated.
pub const BIAS_FLOOR: f64 = 1e-300;

/// Stream index of the reference importance sampler; distinct from every chunk
/// and pilot stream.
const REFERENCE_STREAM: u64 = u64::MAX - 1;

/// Where the exact moments `I(n)`, `E[e^{2nH}]` and the IS second moment come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferencePolicy {
    /// log-Beta closed form; the objective must be the KL surrogate
    ClosedForm,
    /// Gauss–Jacobi quadrature, `K ≤ 3`
    Quadrature,
    /// an importance sampler with `γ = 0.9`, `ε = 0.1` (relative) and the plain
    /// Monte Carlo sample budget
    HighPrecisionIs,
}

impl ReferencePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ClosedForm => "closed-form",
            Self::Quadrature => "quadrature",
            Self::HighPrecisionIs => "high-precision-is",
        }
    }
}

impl std::str::FromStr for ReferencePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-form" => Ok(Self::ClosedForm),
            "quadrature" => Ok(Self::Quadrature),
            "high-precision-is" => Ok(Self::HighPrecisionIs),
            other => Err(invalid(format!("unknown reference policy '{other}'"))),
        }
    }
}

/// The objective and its maximizer. `closed_form` is required by
/// [`ReferencePolicy::ClosedForm`] and must describe the same function.
#[derive(Clone, Copy)]
pub struct ExperimentTarget<'a> {
    pub objective: &'a dyn Objective,
    pub report: &'a MaximizerReport,
    pub closed_form: Option<&'a KlObjective>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub n: f64,
    /// `ln I(n)` from the reference
    pub log_reference: f64,
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_mse_is: f64,
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_mse_mc: f64,
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_mse_ratio: f64,
    /// `ln Bias²` with the bias estimated by the truncated mass
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_bias_sq: f64,
    pub truncated_fraction: f64,
    pub reference_policy: ReferencePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseExperimentResult {
    pub gamma: f64,
    pub n_grid: Vec<f64>,
    pub points: Vec<MsePoint>,
    pub log_mse_ratio: Vec<f64>,
    pub fitted_slope: f64,
    pub theoretical_slope: f64,
    pub intercept_fit_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub n: f64,
    /// `ln(Bias²/MSE_MC)`, or `ln 10^{-300}` when nothing was truncated
    pub log_ratio: f64,
    pub zero_truncation: bool,
    pub truncated_fraction: f64,
    pub reference_policy: ReferencePolicy,
}

/// Exact or reference log-moments at one `n`.
struct Moments {
    log_i: f64,
    log_m2_mc: f64,
    /// per IS configuration: per-sample second moment
    log_m2_is: Vec<f64>,
}

fn validate_grid(n_grid: &[f64]) -> Result<()> {
    if n_grid.iter().any(|&n| !(n.is_finite() && n >= 0.0)) {
        return Err(invalid("n grid must hold finite non-negative values"));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("n grid must be strictly increasing"));
    }
    Ok(())
}

fn reference_moments(
    target: &ExperimentTarget<'_>,
    alpha: &DirichletParams,
    n: f64,
    cfg_mc: &EstimatorConfig,
    cfg_is: &[EstimatorConfig],
    policy: ReferencePolicy,
) -> Result<Moments> {
    let star = target.report.theta_star.coords();
    match policy {
        ReferencePolicy::ClosedForm => {
            let kl = target
                .closed_form
                .ok_or_else(|| invalid("closed-form reference needs the KL surrogate"))?;
            // the objective must be the surrogate itself
            for theta in [star.to_vec(), vec![1.0 / star.len() as f64; star.len()]] {
                let (a, b) = (target.objective.value(&theta), kl.value(&theta));
                if (a - b).abs() > 1e-12 * (1.0 + b.abs()) {
                    return Err(invalid("closed-form reference requires the objective to be the KL surrogate"));
                }
            }
            let log_i = kl.log_expectation(alpha, n);
            let log_m2_mc = kl.log_expectation(alpha, 2.0 * n);
            let log_m2_is = cfg_is
                .iter()
                .map(|c| {
                    let s = proposal_shift(n, c.gamma);
                    let p = Proposal::shifted(alpha, star, s)?;
                    // the indicator is dropped: the untruncated moment is finite for Ĥ
                    Ok(p.log_beta_ratio() - s * kl.neg_entropy() + kl.log_expectation_general(alpha, 2.0 * n, 2.0 * n - s)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Moments {
                log_i,
                log_m2_mc,
                log_m2_is,
            })
        }
        ReferencePolicy::Quadrature => {
            let q = QuadratureConfig::default();
            let log_i = quadrature_reference(target.objective, alpha, n, 1.0, &q)?.log_value;
            let log_m2_mc = quadrature_reference(target.objective, alpha, n, 2.0, &q)?.log_value;
            let log_m2_is = cfg_is
                .iter()
                .map(|c| {
                    let spec = c.truncation(star)?;
                    let s = proposal_shift(n, c.gamma);
                    Ok(quadrature_is_second_moment(target.objective, alpha, n, &spec, star, s, &q)?.log_value)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Moments {
                log_i,
                log_m2_mc,
                log_m2_is,
            })
        }
        ReferencePolicy::HighPrecisionIs => {
            let ref_cfg = EstimatorConfig {
                gamma: 0.9,
                epsilon: 0.1,
                truncation_mode: TruncationMode::Relative,
                ..*cfg_mc
            };
            let ref_spec = ref_cfg.truncation(star)?;
            let s_ref = proposal_shift(n, ref_cfg.gamma);
            let proposal = Proposal::shifted(alpha, star, s_ref)?;
            let stream = RandomStream::with_stream(cfg_mc.seed, REFERENCE_STREAM);
            let draws = proposal.draw(target.objective, None, ref_cfg.num_samples, ref_cfg.chunk_size, stream);
            let total = draws.len();
            let inside: Vec<_> = draws.iter().filter(|d| d.inside(Some(&ref_spec))).collect();
            let first: Vec<f64> = inside.iter().map(|d| n * d.h + d.log_w).collect();
            let second: Vec<f64> = inside.iter().map(|d| 2.0 * n * d.h + d.log_w).collect();
            let log_i = LogMoments::from_log_values(&first, total).log_mean;
            let log_m2_mc = LogMoments::from_log_values(&second, total).log_mean;
            // E_α[w_t e^{2nH} 1_t] = E_ref[w_ref w_t e^{2nH} 1_t], over all reference draws
            let log_m2_is = cfg_is
                .iter()
                .map(|c| {
                    let spec = c.truncation(star)?;
                    let s = proposal_shift(n, c.gamma);
                    let pt = Proposal::shifted(alpha, star, s)?;
                    let terms: Vec<f64> = draws
                        .iter()
                        .filter(|d| d.inside(Some(&spec)))
                        .map(|d| d.log_w + pt.log_beta_ratio() - s * d.star_dot + 2.0 * n * d.h)
                        .collect();
                    Ok(log_sum_exp(&terms) - (total as f64).ln())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(Moments {
                log_i,
                log_m2_mc,
                log_m2_is,
            })
        }
    }
}

/// `ln((e^{m2} − e^{2·i})/N)`, `-inf` when the difference is not positive.
fn log_mse(log_m2: f64, log_mean: f64, num_samples: usize) -> f64 {
    if log_m2 <= 2.0 * log_mean {
        return f64::NEG_INFINITY;
    }
    log_diff_abs(log_m2, 2.0 * log_mean) - (num_samples as f64).ln()
}

fn log_add(a: f64, b: f64) -> f64 {
    log_sum_exp(&[a, b])
}

/// Runs the IS estimators under test at one `n`; returns `(ln Bias², truncated fraction)` per config.
fn is_bias(
    target: &ExperimentTarget<'_>,
    alpha: &DirichletParams,
    n: f64,
    cfg_is: &[EstimatorConfig],
) -> Result<Vec<(f64, f64)>> {
    cfg_is
        .iter()
        .map(|c| {
            let est = super::importance_sampling(target.objective, alpha, n, target.report.theta_star.coords(), c)?;
            Ok((2.0 * est.log_truncated_mass, est.truncated_fraction))
        })
        .collect()
}

fn fit_slope(n_grid: &[f64], values: &[f64]) -> Result<f64> {
    let start = n_grid.len() - SLOPE_FIT_WINDOW;
    let x: Vec<f64> = n_grid[start..].iter().map(|n| n.ln()).collect();
    let y = &values[start..];
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite MSE ratio inside the slope window".into()));
    }
    Ok(linear_fit(&x, y).0)
}

/// MSE ratio of each IS configuration against plain Monte Carlo at one `n`.
pub fn mse_points(
    target: &ExperimentTarget<'_>,
    alpha: &DirichletParams,
    n: f64,
    cfg_mc: &EstimatorConfig,
    cfg_is: &[EstimatorConfig],
    policy: ReferencePolicy,
) -> Result<Vec<MsePoint>> {
    if !(n.is_finite() && n >= 0.0) {
        return Err(invalid(format!("document length {n} must be finite and non-negative")));
    }
    cfg_mc.validate()?;
    for c in cfg_is {
        c.validate()?;
        c.validate_gamma()?;
    }
    let mom = reference_moments(target, alpha, n, cfg_mc, cfg_is, policy)?;
    let bias = is_bias(target, alpha, n, cfg_is)?;
    let log_mse_mc = log_mse(mom.log_m2_mc, mom.log_i, cfg_mc.num_samples);
    Ok(cfg_is
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let (log_bias_sq, truncated_fraction) = bias[j];
            let log_var = log_mse(mom.log_m2_is[j], mom.log_i, c.num_samples);
            let log_mse_is = log_add(log_var, log_bias_sq);
            MsePoint {
                n,
                log_reference: mom.log_i,
                log_mse_is,
                log_mse_mc,
                log_mse_ratio: log_mse_is - log_mse_mc,
                log_bias_sq,
                truncated_fraction,
                reference_policy: policy,
            }
        })
        .collect())
}

/// Log MSE ratio of IS against plain Monte Carlo for several IS configurations
/// sharing one reference per grid point.
pub fn mse_ratio_experiment_multi(
    target: &ExperimentTarget<'_>,
    alpha: &DirichletParams,
    n_grid: &[f64],
    cfg_mc: &EstimatorConfig,
    cfg_is: &[EstimatorConfig],
    policy: ReferencePolicy,
) -> Result<Vec<MseExperimentResult>> {
    validate_grid(n_grid)?;
    if n_grid.len() < SLOPE_FIT_WINDOW {
        return Err(invalid(format!(
            "slope fitting needs at least {SLOPE_FIT_WINDOW} grid points, got {}",
            n_grid.len()
        )));
    }
    let poly = poly_exponent(target.report, alpha);
    let mut points: Vec<Vec<MsePoint>> = vec![Vec::with_capacity(n_grid.len()); cfg_is.len()];
    for &n in n_grid {
        for (j, p) in mse_points(target, alpha, n, cfg_mc, cfg_is, policy)?.into_iter().enumerate() {
            points[j].push(p);
        }
    }
    cfg_is
        .iter()
        .zip(points)
        .map(|(c, pts)| {
            let ratios: Vec<f64> = pts.iter().map(|p| p.log_mse_ratio).collect();
            Ok(MseExperimentResult {
                gamma: c.gamma,
                n_grid: n_grid.to_vec(),
                fitted_slope: fit_slope(n_grid, &ratios)?,
                theoretical_slope: c.gamma * poly,
                log_mse_ratio: ratios,
                points: pts,
                intercept_fit_window: SLOPE_FIT_WINDOW,
            })
        })
        .collect()
}

pub fn mse_ratio_experiment(
    target: &ExperimentTarget<'_>,
    alpha: &DirichletParams,
    n_grid: &[f64],
    cfg_mc: &EstimatorConfig,
    cfg_is: &EstimatorConfig,
    policy: ReferencePolicy,
) -> Result<MseExperimentResult> {
    Ok(mse_ratio_experiment_multi(target, alpha, n_grid, cfg_mc, std::slice::from_ref(cfg_is), policy)?.remove(0))
}

/// `ln(Bias²/MSE_MC)` per grid point, where `MSE_MC` uses the IS sample budget.
pub fn bias_diagnostic(
    target: &ExperimentTarget<'_>,
    alpha: &DirichletParams,
    n_grid: &[f64],
    cfg_is: &EstimatorConfig,
    policy: ReferencePolicy,
) -> Result<Vec<BiasPoint>> {
    validate_grid(n_grid)?;
    cfg_is.validate()?;
    cfg_is.validate_gamma()?;
    let star = target.report.theta_star.coords();
    let spec = cfg_is.truncation(star)?;
    if !spec.contains(star) {
        return Err(invalid("truncated simplex excludes the maximizer"));
    }
    n_grid
        .iter()
        .map(|&n| {
            let mom = reference_moments(target, alpha, n, cfg_is, &[], policy)?;
            let (log_bias_sq, truncated_fraction) = is_bias(target, alpha, n, std::slice::from_ref(cfg_is))?[0];
            let zero_truncation = truncated_fraction == 0.0;
            let log_ratio = if zero_truncation {
                BIAS_FLOOR.ln()
            } else {
                (log_bias_sq - log_mse(mom.log_m2_mc, mom.log_i, cfg_is.num_samples)).max(BIAS_FLOOR.ln())
            };
            Ok(BiasPoint {
                n,
                log_ratio,
                zero_truncation,
                truncated_fraction,
                reference_policy: policy,
            })
        })
        .collect()
}
