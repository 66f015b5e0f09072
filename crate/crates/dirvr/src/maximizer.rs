//! `θ* = argmax H` over the simplex by Cover's multiplicative update, and the
//! KKT report (active set, multipliers, reduced Hessian) built at `θ*`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{from_rows, log_det_spd, permute_symmetric, to_rows};
use crate::objectives::{KlObjective, LdaInstance};
use crate::simplex::SimplexPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverConfig {
    pub max_iters: usize,
    /// stop once an iteration raises the objective by less than this
    pub value_tol: f64,
    /// coordinates below this count as active (zero)
    pub zero_tol: f64,
    pub kkt_tol: f64,
    /// active-set Newton refinement after the multiplicative phase
    pub polish: bool,
}

impl Default for CoverConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            value_tol: 1e-14,
            zero_tol: 1e-8,
            kkt_tol: 1e-6,
            polish: true,
        }
    }
}

impl CoverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.value_tol > 0.0 && self.zero_tol > 0.0 && self.kkt_tol > 0.0) {
            return Err(invalid("Cover tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CoverResult {
    pub point: SimplexPoint,
    /// `H(b^t)` for `t = 0..=iterations`
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// true when the value tolerance stopped the loop before `max_iters`
    pub converged: bool,
}

/// Runs `b_i ← b_i · a_i(b)` with `a(b) = ∇H(b)` from a strictly positive start.
pub fn cover_maximize(inst: &LdaInstance, cfg: &CoverConfig, b0: &SimplexPoint) -> Result<CoverResult> {
    cfg.validate()?;
    if b0.len() != inst.num_topics() {
        return Err(Error::Dimension {
            what: "starting point",
            expected: inst.num_topics(),
            found: b0.len(),
        });
    }
    if b0.iter().any(|&x| x <= 0.0) {
        return Err(invalid("Cover's update needs a strictly positive starting point"));
    }
    let mut b: Vec<f64> = b0.to_vec();
    let (mut value, mut a) = inst.value_and_gradient(&b);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("objective is {value} at the starting point")));
    }
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        for (bi, ai) in b.iter_mut().zip(&a) {
            *bi *= ai;
        }
        // Σ b_i a_i = bᵀ∇H(b) = 1 analytically; this only removes rounding drift
        let sum: f64 = b.iter().sum();
        b.iter_mut().for_each(|x| *x /= sum);
        let (next, next_a) = inst.value_and_gradient(&b);
        if !next.is_finite() {
            return Err(Error::Numerical(format!("objective became {next} at iteration {iterations}")));
        }
        iterations += 1;
        trace.push(next);
        let gain = next - value;
        value = next;
        a = next_a;
        if gain < cfg.value_tol {
            converged = true;
            break;
        }
    }
    Ok(CoverResult {
        point: SimplexPoint::new(b)?,
        trace,
        iterations,
        converged,
    })
}

/// Sets coordinates below `zero_tol` to exactly zero and renormalizes the rest.
pub fn snap(theta: &[f64], zero_tol: f64) -> Result<SimplexPoint> {
    let snapped: Vec<f64> = theta.iter().map(|&x| if x < zero_tol { 0.0 } else { x }).collect();
    SimplexPoint::normalized(snapped)
}

/// Primal active-set Newton refinement of an approximate maximizer.
///
/// Newton steps are taken on the current face. A step that would push a free
/// coordinate below zero is cut at the boundary and that coordinate leaves the
/// face; once the face is solved, a zero coordinate with `∇H_i > 1 + enter_tol`
/// re-enters. This settles near-degenerate multipliers that the multiplicative
/// update only shrinks geometrically.
pub fn refine_active_set(inst: &LdaInstance, theta: &SimplexPoint, enter_tol: f64, max_steps: usize) -> SimplexPoint {
    let k = theta.len();
    let mut x = theta.to_vec();
    let mut free: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
    let mut e = inst.eval(&x, true);
    for _ in 0..max_steps {
        let g = e.gradient.as_ref().unwrap();
        let h = e.hessian.as_ref().unwrap();
        let idx: Vec<usize> = (0..k).filter(|&i| free[i]).collect();
        let residual = idx.iter().map(|&i| (g[i] - 1.0).abs()).fold(0.0, f64::max);
        let f = idx.len();
        if residual < 1e-14 || f < 2 {
            let entering = (0..k)
                .filter(|&i| !free[i])
                .max_by(|&a, &b| g[a].total_cmp(&g[b]))
                .filter(|&j| g[j] > 1.0 + enter_tol);
            match entering {
                Some(j) => {
                    free[j] = true;
                    continue;
                }
                None => break,
            }
        }
        // θ = x + U z with U = [I; −1ᵀ] on the free coordinates, last one eliminated
        let last = idx[f - 1];
        let rg = DVector::from_fn(f - 1, |r, _| g[idx[r]] - g[last]);
        let rh = DMatrix::from_fn(f - 1, f - 1, |r, c| {
            let (i, j) = (idx[r], idx[c]);
            h[(i, j)] - h[(i, last)] - h[(last, j)] + h[(last, last)]
        });
        let Some(chol) = (-rh).cholesky() else { break };
        let z = chol.solve(&rg);
        let mut d = vec![0.0; k];
        for r in 0..f - 1 {
            d[idx[r]] = z[r];
            d[last] -= z[r];
        }
        let mut t = 1.0;
        let mut blocking = None;
        for &i in &idx {
            if d[i] < 0.0 && x[i] + d[i] <= 0.0 {
                let ti = -x[i] / d[i];
                if ti < t {
                    t = ti;
                    blocking = Some(i);
                }
            }
        }
        let mut next: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
        if let Some(i) = blocking {
            next[i] = 0.0;
        }
        next.iter_mut().for_each(|v| *v = v.max(0.0));
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= sum);
        let next_e = inst.eval(&next, true);
        let next_g = next_e.gradient.as_ref().unwrap();
        let next_residual = idx
            .iter()
            .filter(|&&i| Some(i) != blocking)
            .map(|&i| (next_g[i] - 1.0).abs())
            .fold(0.0, f64::max);
        // near the optimum value changes drown in rounding, so either a higher
        // value or a smaller stationarity residual counts as progress
        if blocking.is_none() && !(next_e.value > e.value || next_residual < residual) {
            break;
        }
        if let Some(i) = blocking {
            free[i] = false;
        }
        x = next;
        e = next_e;
    }
    SimplexPoint::new(x).unwrap_or_else(|_| theta.clone())
}

/// `U = [0_{m×(K−1−m)}; I_{K−1−m}; −1ᵀ]`, the basis of the critical cone in
/// coordinates relabeled so the `m` active indices come first.
pub fn critical_cone_basis(k: usize, m: usize) -> Result<DMatrix<f64>> {
    if k == 0 || m > k - 1 {
        return Err(invalid(format!("critical cone needs 0 <= m <= K-1, got K={k}, m={m}")));
    }
    let d = k - 1 - m;
    let mut u = DMatrix::zeros(k, d);
    for c in 0..d {
        u[(m + c, c)] = 1.0;
        u[(k - 1, c)] = -1.0;
    }
    Ok(u)
}

/// `UᵀMU` and whether it is negative definite (Cholesky of its negation succeeds).
pub fn reduced_hessian(hess: &DMatrix<f64>, u: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let r = u.transpose() * hess * u;
    let r = (&r + r.transpose()) * 0.5;
    let definite = r.nrows() == 0 || (-&r).cholesky().is_some();
    (r, definite)
}

/// Everything downstream formulas need about the maximizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximizerReport {
    pub theta_star: SimplexPoint,
    pub h_at_star: f64,
    /// original indices with `θ*_i = 0`, ascending
    pub active_set: Vec<usize>,
    pub m: usize,
    /// `λ_i = 1 − ∇H(θ*)_i`, aligned with `active_set`
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub gradient: Vec<f64>,
    /// full Hessian at `θ*` in original indexing
    pub hessian: Vec<Vec<f64>>,
    /// `permutation[j]` is the original index at relabeled position `j` (active first)
    pub permutation: Vec<usize>,
    /// `UᵀHU` in relabeled coordinates, `(K−1−m)` square
    pub reduced_hessian: Vec<Vec<f64>>,
    pub negative_definite: bool,
    pub strict_complementarity: bool,
    pub min_lambda: Option<f64>,
    /// `max |∇H_i − 1|` over the support
    pub kkt_residual: f64,
}

impl MaximizerReport {
    /// Builds the report from the gradient and Hessian at a snapped maximizer.
    pub fn from_derivatives(
        theta_star: SimplexPoint,
        h_at_star: f64,
        gradient: Vec<f64>,
        hessian: &DMatrix<f64>,
        kkt_tol: f64,
    ) -> Result<Self> {
        let k = theta_star.len();
        let active_set: Vec<usize> = (0..k).filter(|&i| theta_star[i] == 0.0).collect();
        let inactive: Vec<usize> = (0..k).filter(|&i| theta_star[i] > 0.0).collect();
        let m = active_set.len();
        if inactive.is_empty() {
            return Err(invalid("maximizer has empty support"));
        }
        let kkt_residual = inactive
            .iter()
            .map(|&i| (gradient[i] - 1.0).abs())
            .fold(0.0, f64::max);
        if !(kkt_residual <= kkt_tol) {
            return Err(Error::KktViolation(format!(
                "max |grad_i - 1| on the support is {kkt_residual:.3e} > {kkt_tol:.1e}"
            )));
        }
        let lambda: Vec<f64> = active_set.iter().map(|&i| 1.0 - gradient[i]).collect();
        if let Some(bad) = lambda.iter().find(|&&l| l < -kkt_tol) {
            return Err(Error::KktViolation(format!("negative multiplier {bad:.3e} on an active coordinate")));
        }
        let min_lambda = lambda.iter().copied().reduce(f64::min);
        let strict_complementarity = min_lambda.map_or(true, |l| l > kkt_tol);
        let permutation: Vec<usize> = active_set.iter().chain(&inactive).copied().collect();
        let relabeled = permute_symmetric(hessian, &permutation);
        let u = critical_cone_basis(k, m)?;
        let (reduced, negative_definite) = reduced_hessian(&relabeled, &u);
        Ok(Self {
            theta_star,
            h_at_star,
            active_set,
            m,
            lambda,
            mu: 1.0,
            gradient,
            hessian: to_rows(hessian),
            permutation,
            reduced_hessian: to_rows(&reduced),
            negative_definite,
            strict_complementarity,
            min_lambda,
            kkt_residual,
        })
    }

    pub fn k(&self) -> usize {
        self.theta_star.len()
    }

    pub fn hessian_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.hessian)
    }

    pub fn reduced_hessian_matrix(&self) -> DMatrix<f64> {
        let d = self.k() - 1 - self.m;
        if d == 0 {
            return DMatrix::zeros(0, 0);
        }
        from_rows(&self.reduced_hessian)
    }

    /// `θ*` in relabeled order.
    pub fn relabeled_theta(&self) -> Vec<f64> {
        self.permutation.iter().map(|&i| self.theta_star[i]).collect()
    }

    /// `ln |det(UᵀHU)|`, `None` when the reduced Hessian is not negative definite.
    pub fn log_abs_det_reduced(&self) -> Option<f64> {
        log_det_spd(&(-self.reduced_hessian_matrix()))
    }
}

/// KKT report at a given (approximately stationary) point of an LDA objective.
pub fn kkt_report(inst: &LdaInstance, theta_star: &SimplexPoint, cfg: &CoverConfig) -> Result<MaximizerReport> {
    cfg.validate()?;
    let snapped = snap(theta_star, cfg.zero_tol)?;
    let e = inst.eval(&snapped, true);
    MaximizerReport::from_derivatives(snapped, e.value, e.gradient.unwrap(), &e.hessian.unwrap(), cfg.kkt_tol)
}

/// Cover from the barycenter, snap, optional active-set refinement, then the KKT report.
pub fn maximize(inst: &LdaInstance, cfg: &CoverConfig) -> Result<(CoverResult, MaximizerReport)> {
    let start = SimplexPoint::uniform(inst.num_topics());
    let run = cover_maximize(inst, cfg, &start)?;
    let mut theta = snap(&run.point, cfg.zero_tol)?;
    if cfg.polish {
        theta = refine_active_set(inst, &theta, cfg.kkt_tol, 50);
    }
    let report = kkt_report(inst, &theta, cfg)?;
    Ok((run, report))
}

/// Report for the KL surrogate: gradient one on the support, so every
/// multiplier equals one, and Hessian `−diag(1/θ*)`.
pub fn kl_report(obj: &KlObjective) -> Result<MaximizerReport> {
    let theta = obj.theta_star().clone();
    let gradient: Vec<f64> = theta.iter().map(|&t| if t > 0.0 { 1.0 } else { 0.0 }).collect();
    MaximizerReport::from_derivatives(theta, obj.h_at_star(), gradient, &obj.hessian_at_star(), 1e-12)
}
