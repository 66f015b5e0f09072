//! Points on the probability simplex, Dirichlet laws, KL divergence, and the
//! seeded random streams every sampler draws from.

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Absolute tolerance on the coordinate sum of a stored point.
pub const SUM_TOL: f64 = 1e-12;
/// Inputs whose sum is off by at most this much are renormalized; beyond it they are rejected.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// `ln Γ(x)`; exact factorials for small integer arguments, so `ln Γ(1) = ln Γ(2) = 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x.fract() == 0.0 && (1.0..=19.0).contains(&x) {
        let fact: f64 = (2..x as u64).map(|i| i as f64).product();
        return fact.ln();
    }
    statrs::function::gamma::ln_gamma(x)
}

/// `Σ ln Γ(α_i) − ln Γ(Σ α_i)`.
pub fn log_multivariate_beta(alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total)
}

/// `ln Σ exp(x_i)`, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// A non-negative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    /// Validates and, when the sum is within [`RENORMALIZE_TOL`] of one, renormalizes.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("simplex point must have at least one coordinate"));
        }
        if let Some((i, x)) = coords
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || **x < 0.0)
        {
            return Err(invalid(format!("coordinate {i} is {x}, expected a finite non-negative value")));
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOL {
            return Err(invalid(format!("coordinates sum to {sum}, not 1")));
        }
        let mut coords = coords;
        if (sum - 1.0).abs() > SUM_TOL {
            coords.iter_mut().for_each(|x| *x /= sum);
        }
        Ok(Self { coords })
    }

    /// Normalizes an arbitrary non-negative vector with positive sum.
    pub fn normalized(coords: Vec<f64>) -> Result<Self> {
        let sum: f64 = coords.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() || coords.iter().any(|x| *x < 0.0) {
            return Err(invalid("cannot normalize: need non-negative entries with positive finite sum"));
        }
        Ok(Self {
            coords: coords.into_iter().map(|x| x / sum).collect(),
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            coords: vec![1.0 / k as f64; k],
        }
    }

    pub fn vertex(k: usize, i: usize) -> Self {
        let mut coords = vec![0.0; k];
        coords[i] = 1.0;
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    /// Indices of strictly positive coordinates.
    pub fn support(&self) -> Vec<usize> {
        self.coords
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

impl Deref for SimplexPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.coords
    }
}

impl AsRef<[f64]> for SimplexPoint {
    fn as_ref(&self) -> &[f64] {
        &self.coords
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = crate::Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Vec<f64> {
        p.coords
    }
}

/// Strictly positive Dirichlet parameter vector with its cached log-normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletParams {
    alpha: Vec<f64>,
    log_beta: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(invalid("Dirichlet parameter vector is empty"));
        }
        if let Some((i, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0))
        {
            return Err(invalid(format!("alpha[{i}] = {a}, must be positive and finite")));
        }
        let log_beta = log_multivariate_beta(&alpha);
        Ok(Self { alpha, log_beta })
    }

    pub fn symmetric(a: f64, k: usize) -> Result<Self> {
        Self::new(vec![a; k])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `ln B(α)`.
    pub fn log_beta(&self) -> f64 {
        self.log_beta
    }

    /// Log density with the extended-real conventions at faces: a zero
    /// coordinate gives `+inf` for `α_i < 1`, `-inf` for `α_i > 1`, and nothing
    /// for `α_i = 1`.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.alpha.len());
        let mut acc = -self.log_beta;
        let mut pos_inf = false;
        for (&a, &t) in self.alpha.iter().zip(theta) {
            if a == 1.0 {
                continue;
            }
            if t == 0.0 {
                if a < 1.0 {
                    pos_inf = true;
                } else {
                    return f64::NEG_INFINITY;
                }
            } else {
                acc += (a - 1.0) * t.ln();
            }
        }
        if pos_inf {
            f64::INFINITY
        } else {
            acc
        }
    }

    /// Same as [`log_density`](Self::log_density) but from precomputed `ln θ_i`.
    pub fn log_density_from_logs(&self, log_theta: &[f64]) -> f64 {
        let mut acc = -self.log_beta;
        for (&a, &lt) in self.alpha.iter().zip(log_theta) {
            if a != 1.0 {
                acc += (a - 1.0) * lt;
            }
        }
        acc
    }

    pub fn sampler(&self) -> DirichletSampler {
        DirichletSampler::new(&self.alpha)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> SimplexPoint {
        let k = self.alpha.len();
        let mut theta = vec![0.0; k];
        let mut log_theta = vec![0.0; k];
        self.sampler().sample_into(rng, &mut theta, &mut log_theta);
        SimplexPoint { coords: theta }
    }
}

impl TryFrom<Vec<f64>> for DirichletParams {
    type Error = crate::Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DirichletParams> for Vec<f64> {
    fn from(p: DirichletParams) -> Vec<f64> {
        p.alpha
    }
}

/// Draws `ln G` for `G ~ Gamma(shape, 1)` without underflow.
///
/// Shapes below one use `G = G' · U^{1/shape}` with `G' ~ Gamma(shape + 1)`, kept in
/// log form so very small shapes cannot round the draw to zero.
#[derive(Debug, Clone)]
struct LogGamma {
    inner: Gamma<f64>,
    boost: Option<f64>,
}

impl LogGamma {
    fn new(shape: f64) -> Self {
        if shape < 1.0 {
            Self {
                inner: Gamma::new(shape + 1.0, 1.0).expect("positive shape"),
                boost: Some(1.0 / shape),
            }
        } else {
            Self {
                inner: Gamma::new(shape, 1.0).expect("positive shape"),
                boost: None,
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let g: f64 = self.inner.sample(rng);
        match self.boost {
            None => g.ln(),
            Some(inv_shape) => {
                // 1 - u lies in (0, 1], so the log is finite
                let u = 1.0 - rng.gen::<f64>();
                g.ln() + inv_shape * u.ln()
            }
        }
    }
}

/// Reusable Dirichlet sampler: normalized independent Gamma draws.
#[derive(Debug, Clone)]
pub struct DirichletSampler {
    gammas: Vec<LogGamma>,
}

impl DirichletSampler {
    pub fn new(alpha: &[f64]) -> Self {
        Self {
            gammas: alpha.iter().map(|&a| LogGamma::new(a)).collect(),
        }
    }

    /// Writes one draw to `theta` and its coordinate logs to `log_theta`.
    pub fn sample_into(&self, rng: &mut impl Rng, theta: &mut [f64], log_theta: &mut [f64]) {
        for (lg, g) in log_theta.iter_mut().zip(&self.gammas) {
            *lg = g.sample(rng);
        }
        let norm = log_sum_exp(log_theta);
        let mut sum = 0.0;
        for (t, lt) in theta.iter_mut().zip(log_theta.iter_mut()) {
            *lt -= norm;
            *t = lt.exp();
            sum += *t;
        }
        // exp rounding can leave the sum a few ulps away from one
        if sum != 1.0 {
            theta.iter_mut().for_each(|t| *t /= sum);
        }
    }
}

/// `Σ θ*_k ln(θ*_k/θ_k)` with `0 ln 0 = 0` and `0 ln ∞ = 0`.
pub fn kl_divergence(p_star: &[f64], theta: &[f64]) -> f64 {
    debug_assert_eq!(p_star.len(), theta.len());
    let mut acc = 0.0;
    for (&p, &t) in p_star.iter().zip(theta) {
        if p > 0.0 {
            if t <= 0.0 {
                return f64::INFINITY;
            }
            acc += p * (p.ln() - t.ln());
        }
    }
    acc
}

/// Seeded generator identity: the same `(seed, stream)` pair always replays the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child stream for index `i`; children of distinct parents or indices do not overlap
    /// except with negligible (hash collision) probability.
    pub fn derive(&self, i: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(i.wrapping_add(1))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationMode {
    /// keep `θ` when `θ_i ≥ ε` on the support of `θ*`
    Absolute,
    /// keep `θ` when `θ_i ≥ ε θ*_i` on the support of `θ*`
    Relative,
}

impl std::str::FromStr for TruncationMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(Self::Absolute),
            "relative" => Ok(Self::Relative),
            other => Err(invalid(format!("unknown truncation mode '{other}'"))),
        }
    }
}

/// The truncated simplex `Δ^ε` around a fixed `θ*`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSpec {
    epsilon: f64,
    mode: TruncationMode,
    support: Vec<usize>,
    star: Vec<f64>,
}

impl TruncationSpec {
    pub fn new(epsilon: f64, mode: TruncationMode, theta_star: &[f64]) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid(format!("truncation epsilon {epsilon} outside (0, 1)")));
        }
        let support: Vec<usize> = (0..theta_star.len()).filter(|&i| theta_star[i] > 0.0).collect();
        if support.is_empty() {
            return Err(invalid("theta* has empty support"));
        }
        let star: Vec<f64> = support.iter().map(|&i| theta_star[i]).collect();
        if mode == TruncationMode::Absolute {
            let min = star.iter().copied().fold(f64::INFINITY, f64::min);
            if epsilon >= min {
                return Err(invalid(format!(
                    "absolute truncation epsilon {epsilon} would exclude theta* (smallest support coordinate {min})"
                )));
            }
        }
        Ok(Self {
            epsilon,
            mode,
            support,
            star,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> TruncationMode {
        self.mode
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Relative mode compares `θ_i / θ*_i` with `ε`, the same test the samplers apply.
    pub fn contains(&self, theta: &[f64]) -> bool {
        match self.mode {
            TruncationMode::Absolute => self.support.iter().all(|&i| theta[i] >= self.epsilon),
            TruncationMode::Relative => self
                .support
                .iter()
                .zip(&self.star)
                .all(|(&i, &s)| theta[i] / s >= self.epsilon),
        }
    }
}
