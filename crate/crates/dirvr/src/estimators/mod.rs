//! Estimators of `I(n) = E_{Dir(α)}[exp(nH(θ))]` in log-space.
//!
//! All three estimators run on the same sampling engine: a fixed partition of
//! the `N` draws into chunks, each chunk seeded from `(seed, chunk index)`, with
//! results concatenated in chunk order. Output is therefore independent of the
//! number of worker threads.

pub mod experiments;
pub mod quadrature;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objectives::{KlObjective, Objective};
use crate::simplex::{log_multivariate_beta, DirichletParams, DirichletSampler, RandomStream, TruncationMode, TruncationSpec};

pub use experiments::{
    bias_diagnostic, mse_points, mse_ratio_experiment, mse_ratio_experiment_multi, BiasPoint, ExperimentTarget,
    MseExperimentResult, MsePoint, ReferencePolicy, BIAS_FLOOR, SLOPE_FIT_WINDOW,
};
pub use quadrature::{
    quadrature_is_second_moment, quadrature_reference, simplex_integral, GaussJacobi, QuadratureConfig,
    QuadratureResult,
};

/// Largest allowed proposal parameter; `ln Γ` loses accuracy beyond it.
pub const MAX_PROPOSAL_PARAM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvCoefficientMode {
    /// coefficient estimated from the same draws as the estimate
    Pooled,
    /// coefficient estimated from an independent pilot of 10% of the budget
    Pilot,
    /// coefficient fixed at zero; reproduces plain Monte Carlo
    Disabled,
}

impl std::str::FromStr for CvCoefficientMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Self::Pooled),
            "pilot" => Ok(Self::Pilot),
            "disabled" => Ok(Self::Disabled),
            other => Err(invalid(format!("unknown control-variate coefficient mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub gamma: f64,
    pub epsilon: f64,
    pub truncation_mode: TruncationMode,
    pub cv_mode: CvCoefficientMode,
    pub chunk_size: usize,
    /// permits `γ ≥ 1`, where the importance weights lose finite variance
    pub allow_unstable_gamma: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            num_samples: 10_000,
            seed: 0,
            gamma: 0.9,
            epsilon: 0.1,
            truncation_mode: TruncationMode::Relative,
            cv_mode: CvCoefficientMode::Pooled,
            chunk_size: 1024,
            allow_unstable_gamma: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples < 2 {
            return Err(invalid("need at least two samples"));
        }
        if self.chunk_size == 0 {
            return Err(invalid("chunk size must be positive"));
        }
        Ok(())
    }

    fn validate_gamma(&self) -> Result<()> {
        let g = self.gamma;
        if !(g.is_finite() && g > 0.0) {
            return Err(invalid(format!("gamma {g} must be positive")));
        }
        if g >= 1.0 && !self.allow_unstable_gamma {
            return Err(invalid(format!(
                "gamma {g} >= 1 makes the importance weights heavy-tailed; pass the unstable-gamma override to run it anyway"
            )));
        }
        Ok(())
    }

    pub fn truncation(&self, theta_star: &[f64]) -> Result<TruncationSpec> {
        TruncationSpec::new(self.epsilon, self.truncation_mode, theta_star)
    }
}

/// Log-scale summary of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEstimate {
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_mean: f64,
    /// log of the mean squared per-sample term
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_second_moment: f64,
    /// log of the unbiased per-sample variance
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_variance: f64,
    pub n: f64,
    pub num_samples: usize,
    pub truncated_fraction: f64,
    /// log of `(1/N) Σ_{truncated} w·e^{nH}`, the mass the truncation removed
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_truncated_mass: f64,
    pub seed: u64,
}

impl LogEstimate {
    /// Log standard error of the mean.
    pub fn log_std_error(&self) -> f64 {
        0.5 * (self.log_variance - (self.num_samples as f64).ln())
    }

    /// `|estimate − ln reference|` measured in standard errors on the linear scale.
    pub fn z_score(&self, log_reference: f64) -> f64 {
        let diff = log_diff_abs(self.log_mean, log_reference);
        (diff - self.log_std_error()).exp()
    }
}

/// `ln |e^a − e^b|`.
pub fn log_diff_abs(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (-(lo - hi).exp()).ln_1p()
}

/// Shifted first and second moments of `exp(l_i)` with the shift `max l_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMoments {
    pub log_mean: f64,
    pub log_second_moment: f64,
    pub log_variance: f64,
}

impl LogMoments {
    /// `N` is the divisor; entries beyond `values.len()` count as zeros.
    pub fn from_log_values(values: &[f64], n_total: usize) -> Self {
        let shift = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return Self {
                log_mean: f64::NEG_INFINITY,
                log_second_moment: f64::NEG_INFINITY,
                log_variance: f64::NEG_INFINITY,
            };
        }
        let n = n_total as f64;
        let scaled: Vec<f64> = values.iter().map(|&l| (l - shift).exp()).collect();
        let mean = scaled.iter().sum::<f64>() / n;
        let second = scaled.iter().map(|x| x * x).sum::<f64>() / n;
        let missing = (n_total - values.len()) as f64;
        let ss = scaled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() + missing * mean * mean;
        let var = ss / (n - 1.0);
        Self {
            log_mean: shift + mean.ln(),
            log_second_moment: 2.0 * shift + second.ln(),
            log_variance: 2.0 * shift + var.ln(),
        }
    }
}

/// One draw, reduced to what every downstream quantity needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Draw {
    /// `H(θ)`
    pub h: f64,
    /// `Ĥ(θ)` when a surrogate was supplied, otherwise NaN
    pub h_hat: f64,
    /// `ln Dir_α(θ) − ln Dir_η(θ)`; zero when sampling from the prior
    pub log_w: f64,
    /// `min_{i ∈ supp θ*} θ_i / θ*_i`
    pub min_rel: f64,
    /// `min_{i ∈ supp θ*} θ_i`
    pub min_abs: f64,
    /// `Σ_{i ∈ supp θ*} θ*_i ln θ_i`, zero without a `θ*`
    pub star_dot: f64,
}

impl Draw {
    pub fn inside(&self, spec: Option<&TruncationSpec>) -> bool {
        match spec {
            None => true,
            Some(s) => match s.mode() {
                TruncationMode::Relative => self.min_rel >= s.epsilon(),
                TruncationMode::Absolute => self.min_abs >= s.epsilon(),
            },
        }
    }
}

/// Sampling law `Dir(α + shift·θ*)` and the bookkeeping to weight back to `Dir(α)`.
pub(crate) struct Proposal<'a> {
    alpha: &'a DirichletParams,
    theta_star: Option<&'a [f64]>,
    shift: f64,
    eta: Vec<f64>,
    log_w_const: f64,
}

impl<'a> Proposal<'a> {
    pub fn prior(alpha: &'a DirichletParams) -> Self {
        Self {
            alpha,
            theta_star: None,
            shift: 0.0,
            eta: alpha.alpha().to_vec(),
            log_w_const: 0.0,
        }
    }

    /// `theta_star` is also used for truncation bookkeeping when `shift = 0`.
    pub fn shifted(alpha: &'a DirichletParams, theta_star: &'a [f64], shift: f64) -> Result<Self> {
        if theta_star.len() != alpha.len() {
            return Err(Error::Dimension {
                what: "theta* length",
                expected: alpha.len(),
                found: theta_star.len(),
            });
        }
        if !(shift.is_finite() && shift >= 0.0) {
            return Err(invalid(format!("proposal shift {shift} must be finite and non-negative")));
        }
        let eta: Vec<f64> = alpha.alpha().iter().zip(theta_star).map(|(a, t)| a + shift * t).collect();
        if let Some(e) = eta.iter().find(|&&e| e > MAX_PROPOSAL_PARAM) {
            return Err(invalid(format!("proposal parameter {e:.3e} exceeds {MAX_PROPOSAL_PARAM:.0e}")));
        }
        let log_w_const = log_multivariate_beta(&eta) - alpha.log_beta();
        Ok(Self {
            alpha,
            theta_star: Some(theta_star),
            shift,
            eta,
            log_w_const,
        })
    }

    /// `ln B(η) − ln B(α)`.
    pub fn log_beta_ratio(&self) -> f64 {
        self.log_w_const
    }

    /// Draws `num_samples` points in fixed chunks, each from its own derived stream.
    pub fn draw(
        &self,
        objective: &dyn Objective,
        surrogate: Option<&KlObjective>,
        num_samples: usize,
        chunk_size: usize,
        stream: RandomStream,
    ) -> Vec<Draw> {
        let k = self.alpha.len();
        let sampler = DirichletSampler::new(&self.eta);
        let num_chunks = num_samples.div_ceil(chunk_size);
        let chunks: Vec<Vec<Draw>> = (0..num_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream.derive(c as u64).rng();
                let len = chunk_size.min(num_samples - c * chunk_size);
                let mut theta = vec![0.0; k];
                let mut log_theta = vec![0.0; k];
                let mut out = Vec::with_capacity(len);
                for _ in 0..len {
                    sampler.sample_into(&mut rng, &mut theta, &mut log_theta);
                    out.push(self.record(objective, surrogate, &theta, &log_theta));
                }
                out
            })
            .collect();
        chunks.into_iter().flatten().collect()
    }

    fn record(&self, objective: &dyn Objective, surrogate: Option<&KlObjective>, theta: &[f64], log_theta: &[f64]) -> Draw {
        let h = objective.value_with_logs(theta, log_theta);
        let h_hat = surrogate.map_or(f64::NAN, |s| s.value_with_logs(theta, log_theta));
        let (mut min_rel, mut min_abs) = (f64::INFINITY, f64::INFINITY);
        let mut log_w = 0.0;
        let mut dot = 0.0;
        if let Some(star) = self.theta_star {
            for ((&s, &t), &lt) in star.iter().zip(theta).zip(log_theta) {
                if s > 0.0 {
                    min_rel = min_rel.min(t / s);
                    min_abs = min_abs.min(t);
                    dot += s * lt;
                }
            }
            if self.shift > 0.0 {
                log_w = self.log_w_const - self.shift * dot;
            }
        }
        Draw {
            h,
            h_hat,
            log_w,
            min_rel,
            min_abs,
            star_dot: dot,
        }
    }
}

/// Plain Monte Carlo: `(1/N) Σ exp(nH(θ_i))`, `θ_i ~ Dir(α)`.
pub fn plain_mc(objective: &dyn Objective, alpha: &DirichletParams, n: f64, cfg: &EstimatorConfig) -> Result<LogEstimate> {
    cfg.validate()?;
    check_dim(objective, alpha)?;
    let draws = Proposal::prior(alpha).draw(objective, None, cfg.num_samples, cfg.chunk_size, RandomStream::new(cfg.seed));
    let logs: Vec<f64> = draws.iter().map(|d| n * d.h).collect();
    let m = LogMoments::from_log_values(&logs, cfg.num_samples);
    Ok(LogEstimate {
        log_mean: m.log_mean,
        log_second_moment: m.log_second_moment,
        log_variance: m.log_variance,
        n,
        num_samples: cfg.num_samples,
        truncated_fraction: 0.0,
        log_truncated_mass: f64::NEG_INFINITY,
        seed: cfg.seed,
    })
}

fn check_dim(objective: &dyn Objective, alpha: &DirichletParams) -> Result<()> {
    if objective.dim() != alpha.len() {
        return Err(Error::Dimension {
            what: "alpha length",
            expected: objective.dim(),
            found: alpha.len(),
        });
    }
    Ok(())
}

/// `n^γ`, with `0^γ = 0`.
pub fn proposal_shift(n: f64, gamma: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n.powf(gamma)
    }
}

/// γ-importance sampling from `Dir(α + n^γ θ*)` with truncation to `Δ^ε`.
pub fn importance_sampling(
    objective: &dyn Objective,
    alpha: &DirichletParams,
    n: f64,
    theta_star: &[f64],
    cfg: &EstimatorConfig,
) -> Result<LogEstimate> {
    cfg.validate_gamma()?;
    importance_sampling_with_shift(objective, alpha, n, theta_star, proposal_shift(n, cfg.gamma), cfg)
}

/// Importance sampling with an explicit proposal shift in place of `n^γ`.
pub fn importance_sampling_with_shift(
    objective: &dyn Objective,
    alpha: &DirichletParams,
    n: f64,
    theta_star: &[f64],
    shift: f64,
    cfg: &EstimatorConfig,
) -> Result<LogEstimate> {
    cfg.validate()?;
    check_dim(objective, alpha)?;
    let spec = cfg.truncation(theta_star)?;
    let proposal = Proposal::shifted(alpha, theta_star, shift)?;
    let draws = proposal.draw(objective, None, cfg.num_samples, cfg.chunk_size, RandomStream::new(cfg.seed));
    Ok(summarize_is(&draws, n, Some(&spec), cfg))
}

pub(crate) fn summarize_is(draws: &[Draw], n: f64, spec: Option<&TruncationSpec>, cfg: &EstimatorConfig) -> LogEstimate {
    let mut kept = Vec::with_capacity(draws.len());
    let mut dropped = Vec::new();
    for d in draws {
        let l = n * d.h + d.log_w;
        if d.inside(spec) {
            kept.push(l);
        } else {
            dropped.push(l);
        }
    }
    let m = LogMoments::from_log_values(&kept, draws.len());
    let lost = LogMoments::from_log_values(&dropped, draws.len());
    LogEstimate {
        log_mean: m.log_mean,
        log_second_moment: m.log_second_moment,
        log_variance: m.log_variance,
        n,
        num_samples: draws.len(),
        truncated_fraction: dropped.len() as f64 / draws.len() as f64,
        log_truncated_mass: lost.log_mean,
        seed: cfg.seed,
    }
}

/// Coefficient and correlation diagnostics of a control-variate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// `ln |c*|` of the coefficient on `e^{nĤ} − E[e^{nĤ}]`
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_abs_coefficient: f64,
    /// c* is `−β` rescaled, so it is negative when the pair is positively correlated
    pub coefficient_negative: bool,
    pub rho_squared: f64,
    /// `1 − ρ̂²`, the per-sample variance ratio against plain Monte Carlo
    pub variance_ratio: f64,
    #[serde(with = "crate::serde_ext::ext_f64")]
    pub log_known_mean: f64,
    /// the linear-scale estimate came out non-positive, so `log_mean` is `-inf`
    pub non_positive: bool,
    pub mode: CvCoefficientMode,
}

/// Sample moments of `X' = e^{x−max x}` and `Y' = e^{y−max y}`.
struct PairMoments {
    var_x: f64,
    var_y: f64,
    cov: f64,
}

impl PairMoments {
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean_x = xs.iter().sum::<f64>() / n;
        let mean_y = ys.iter().sum::<f64>() / n;
        let (mut vx, mut vy, mut c) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            let (dx, dy) = (x - mean_x, y - mean_y);
            vx += dx * dx;
            vy += dy * dy;
            c += dx * dy;
        }
        Self {
            var_x: vx / (n - 1.0),
            var_y: vy / (n - 1.0),
            cov: c / (n - 1.0),
        }
    }

    fn beta(&self) -> f64 {
        if self.var_y > 0.0 {
            self.cov / self.var_y
        } else {
            0.0
        }
    }
}

fn shifted_exp(values: &[f64]) -> (f64, Vec<f64>) {
    let shift = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (shift, values.iter().map(|&v| (v - shift).exp()).collect())
}

/// Control variate `p̂_MC + c(p̂_Ĥ − E[e^{nĤ}])` with the variance-minimizing `c`.
pub fn control_variate(
    objective: &dyn Objective,
    surrogate: &KlObjective,
    alpha: &DirichletParams,
    n: f64,
    cfg: &EstimatorConfig,
) -> Result<(LogEstimate, CvReport)> {
    cfg.validate()?;
    check_dim(objective, alpha)?;
    let stream = RandomStream::new(cfg.seed);
    let proposal = Proposal::prior(alpha);
    let (main_n, pilot_n) = match cfg.cv_mode {
        CvCoefficientMode::Pilot => {
            let pilot = (cfg.num_samples / 10).max(2);
            (cfg.num_samples - pilot, pilot)
        }
        _ => (cfg.num_samples, 0),
    };
    if main_n < 2 {
        return Err(invalid("sample budget too small for a pilot run"));
    }
    let draws = proposal.draw(objective, Some(surrogate), main_n, cfg.chunk_size, stream);
    let x: Vec<f64> = draws.iter().map(|d| n * d.h).collect();
    let y: Vec<f64> = draws.iter().map(|d| n * d.h_hat).collect();
    let (mx, xs) = shifted_exp(&x);
    let (my, ys) = shifted_exp(&y);
    let pooled = PairMoments::new(&xs, &ys);
    let log_known = surrogate.log_expectation(alpha, n);
    if pooled.var_y == 0.0 && cfg.cv_mode != CvCoefficientMode::Disabled {
        return Err(Error::Numerical("control variate has zero sample variance".into()));
    }
    let beta = match cfg.cv_mode {
        CvCoefficientMode::Pooled => pooled.beta(),
        CvCoefficientMode::Disabled => 0.0,
        CvCoefficientMode::Pilot => {
            // pilot draws live on a stream no main chunk can reach
            let pilot_stream = RandomStream::with_stream(cfg.seed, u64::MAX);
            let pd = proposal.draw(objective, Some(surrogate), pilot_n, cfg.chunk_size, pilot_stream);
            let px: Vec<f64> = pd.iter().map(|d| n * d.h - mx).collect();
            let py: Vec<f64> = pd.iter().map(|d| n * d.h_hat - my).collect();
            let pxs: Vec<f64> = px.iter().map(|v| v.exp()).collect();
            let pys: Vec<f64> = py.iter().map(|v| v.exp()).collect();
            PairMoments::new(&pxs, &pys).beta()
        }
    };
    let terms: Vec<f64> = if cfg.cv_mode == CvCoefficientMode::Disabled {
        xs.clone()
    } else {
        let known_scaled = (log_known - my).exp();
        xs.iter().zip(&ys).map(|(x, y)| x - beta * (y - known_scaled)).collect()
    };
    let nf = main_n as f64;
    let mean = terms.iter().sum::<f64>() / nf;
    let second = terms.iter().map(|t| t * t).sum::<f64>() / nf;
    let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (nf - 1.0);
    let rho_squared = if pooled.var_x > 0.0 && pooled.var_y > 0.0 {
        (pooled.cov * pooled.cov / (pooled.var_x * pooled.var_y)).min(1.0)
    } else {
        0.0
    };
    let residual_var = {
        let b = pooled.beta();
        let r: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x - b * y).collect();
        let rm = r.iter().sum::<f64>() / nf;
        r.iter().map(|v| (v - rm) * (v - rm)).sum::<f64>() / (nf - 1.0)
    };
    let variance_ratio = if pooled.var_x > 0.0 {
        (residual_var / pooled.var_x).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let non_positive = !(mean > 0.0);
    let estimate = LogEstimate {
        log_mean: if non_positive { f64::NEG_INFINITY } else { mx + mean.ln() },
        log_second_moment: 2.0 * mx + second.ln(),
        log_variance: 2.0 * mx + var.ln(),
        n,
        num_samples: main_n,
        truncated_fraction: 0.0,
        log_truncated_mass: f64::NEG_INFINITY,
        seed: cfg.seed,
    };
    let report = CvReport {
        log_abs_coefficient: beta.abs().ln() + mx - my,
        coefficient_negative: beta > 0.0,
        rho_squared,
        variance_ratio,
        log_known_mean: log_known,
        non_positive,
        mode: cfg.cv_mode,
    };
    Ok((estimate, report))
}

/// How [`empirical_rho_squared`] draws its samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoSampling {
    /// draws from the prior, equal weights
    Prior,
    /// draws from `Dir(α + n^γ θ*)` truncated to `Δ^ε`, weighted back to the prior
    Weighted,
    /// prior draws unless their effective sample size for `e^{nH}` is below 1000
    Auto,
}

/// Weighted squared correlation from log-weights and log-values.
///
/// Values are shifted by their maximum before anything else, so adding a
/// constant to `x` or `y` leaves the result unchanged.
pub(crate) fn weighted_rho_squared(log_w: &[f64], x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let my = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(mx.is_finite() && my.is_finite()) {
        return Err(Error::Numerical("no finite values to correlate".into()));
    }
    let lse = |f: &dyn Fn(usize) -> f64| {
        let v: Vec<f64> = (0..x.len()).map(f).collect();
        crate::simplex::log_sum_exp(&v)
    };
    let xs: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let ys: Vec<f64> = y.iter().map(|v| v - my).collect();
    let l1 = lse(&|i| log_w[i]);
    let lx = lse(&|i| log_w[i] + xs[i]) - l1;
    let ly = lse(&|i| log_w[i] + ys[i]) - l1;
    let lxx = lse(&|i| log_w[i] + 2.0 * xs[i]) - l1;
    let lyy = lse(&|i| log_w[i] + 2.0 * ys[i]) - l1;
    let lxy = lse(&|i| log_w[i] + xs[i] + ys[i]) - l1;
    // central moments as (raw moment)·(1 − mean²/raw) to keep them in log form
    let var_x = lxx + (-(2.0 * lx - lxx).exp()).ln_1p();
    let var_y = lyy + (-(2.0 * ly - lyy).exp()).ln_1p();
    let cov_rel = 1.0 - (lx + ly - lxy).exp();
    if !(var_x.is_finite() && var_y.is_finite()) {
        return Err(Error::Numerical("degenerate variance in correlation estimate".into()));
    }
    if cov_rel <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let log_rho2 = 2.0 * (lxy + cov_rel.ln()) - var_x - var_y;
    let rho2 = log_rho2.exp().min(1.0);
    let one_minus = if log_rho2 >= 0.0 { 0.0 } else { -log_rho2.exp_m1() };
    Ok((rho2, one_minus))
}

/// Result of [`empirical_rho_squared`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub rho_squared: f64,
    /// `1 − ρ̂²` computed without cancellation
    pub one_minus: f64,
    pub sampling: RhoSampling,
}

/// Squared correlation of `e^{nH}` and `e^{nĤ}` under the prior.
pub fn empirical_rho_squared(
    objective: &dyn Objective,
    surrogate: &KlObjective,
    alpha: &DirichletParams,
    n: f64,
    cfg: &EstimatorConfig,
    sampling: RhoSampling,
) -> Result<RhoEstimate> {
    cfg.validate()?;
    check_dim(objective, alpha)?;
    let stream = RandomStream::new(cfg.seed);
    let prior_draws = || Proposal::prior(alpha).draw(objective, Some(surrogate), cfg.num_samples, cfg.chunk_size, stream);
    let use_weighted = match sampling {
        RhoSampling::Prior => false,
        RhoSampling::Weighted => true,
        RhoSampling::Auto => {
            let draws = prior_draws();
            let x: Vec<f64> = draws.iter().map(|d| n * d.h).collect();
            let ess = effective_sample_size(&x);
            if ess >= 1000.0 {
                let y: Vec<f64> = draws.iter().map(|d| n * d.h_hat).collect();
                let zeros = vec![0.0; x.len()];
                let (rho_squared, one_minus) = weighted_rho_squared(&zeros, &x, &y)?;
                return Ok(RhoEstimate {
                    rho_squared,
                    one_minus,
                    sampling: RhoSampling::Prior,
                });
            }
            true
        }
    };
    let (log_w, x, y) = if use_weighted {
        cfg.validate_gamma()?;
        let star = surrogate.theta_star().coords();
        let spec = cfg.truncation(star)?;
        let proposal = Proposal::shifted(alpha, star, proposal_shift(n, cfg.gamma))?;
        let draws = proposal.draw(objective, Some(surrogate), cfg.num_samples, cfg.chunk_size, stream);
        let kept: Vec<&Draw> = draws.iter().filter(|d| d.inside(Some(&spec))).collect();
        (
            kept.iter().map(|d| d.log_w).collect::<Vec<f64>>(),
            kept.iter().map(|d| n * d.h).collect::<Vec<f64>>(),
            kept.iter().map(|d| n * d.h_hat).collect::<Vec<f64>>(),
        )
    } else {
        let draws = prior_draws();
        (
            vec![0.0; draws.len()],
            draws.iter().map(|d| n * d.h).collect(),
            draws.iter().map(|d| n * d.h_hat).collect(),
        )
    };
    let (rho_squared, one_minus) = weighted_rho_squared(&log_w, &x, &y)?;
    Ok(RhoEstimate {
        rho_squared,
        one_minus,
        sampling: if use_weighted { RhoSampling::Weighted } else { RhoSampling::Prior },
    })
}

/// `(Σ e^{l})² / Σ e^{2l}`.
pub fn effective_sample_size(log_values: &[f64]) -> f64 {
    let (_, s) = shifted_exp(log_values);
    let a: f64 = s.iter().sum();
    let b: f64 = s.iter().map(|v| v * v).sum();
    a * a / b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_moments_constant_values() {
        let m = LogMoments::from_log_values(&[0.0; 10], 10);
        assert_eq!(m.log_mean, 0.0);
        assert_eq!(m.log_variance, f64::NEG_INFINITY);
    }

    #[test]
    fn log_moments_with_zeros() {
        // values {1, 0}: mean 1/2, second moment 1/2, variance 1/2
        let m = LogMoments::from_log_values(&[0.0], 2);
        assert!((m.log_mean - 0.5f64.ln()).abs() < 1e-15);
        assert!((m.log_second_moment - 0.5f64.ln()).abs() < 1e-15);
        assert!((m.log_variance - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_diff_abs_matches_linear() {
        let v = log_diff_abs(3f64.ln(), 1f64.ln());
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gamma_one_needs_override() {
        let mut cfg = EstimatorConfig {
            gamma: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate_gamma().is_err());
        cfg.allow_unstable_gamma = true;
        assert!(cfg.validate_gamma().is_ok());
    }
}
