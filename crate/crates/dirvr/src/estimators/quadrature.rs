//! Gauss–Jacobi quadrature on the projected simplex for `K ≤ 3`, used as an
//! exact reference for the Monte Carlo estimators.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objectives::Objective;
use crate::simplex::{ln_gamma, log_sum_exp, DirichletParams, TruncationMode, TruncationSpec};

/// Nodes and log-weights for `∫_0^1 x^a (1−x)^b f(x) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussJacobi {
    pub nodes: Vec<f64>,
    /// `ln(1 − x_i)`, accurate near `x = 1`
    pub log_one_minus: Vec<f64>,
    pub log_weights: Vec<f64>,
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (`e[i]` couples `i` and `i+1`), by implicit QL with shifts.
fn tridiagonal_eigenvalues(mut d: Vec<f64>, off: &[f64]) -> Result<Vec<f64>> {
    let n = d.len();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical("tridiagonal eigenvalue iteration did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(f64::total_cmp);
    Ok(d)
}

impl GaussJacobi {
    /// `n`-point rule for the weight `x^a (1−x)^b` on `[0, 1]`, `a, b > −1`.
    ///
    /// Nodes come from the Jacobi matrix eigenvalues, then a few Newton steps on
    /// the orthonormal recurrence; weights are Christoffel numbers `1/Σ p_k(x)²`.
    pub fn new(n: usize, a: f64, b: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("quadrature needs at least one node"));
        }
        if !(a > -1.0 && b > -1.0) {
            return Err(invalid(format!("Jacobi exponents must exceed -1, got ({a}, {b})")));
        }
        // standard interval [-1, 1] with weight (1−t)^al (1+t)^be, x = (1+t)/2
        let (al, be) = (b, a);
        let s = al + be;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        diag[0] = (be - al) / (s + 2.0);
        for k in 1..n {
            let kf = k as f64;
            let t = 2.0 * kf + s;
            diag[k] = (be * be - al * al) / (t * (t + 2.0));
        }
        for k in 1..n {
            let kf = k as f64;
            let t = 2.0 * kf + s;
            off[k - 1] = if k == 1 {
                // the general expression is 0/0 when al + be = -1
                (4.0 * (1.0 + al) * (1.0 + be) / ((2.0 + s) * (2.0 + s) * (3.0 + s))).sqrt()
            } else {
                2.0 / t * (kf * (kf + al) * (kf + be) * (kf + s) / ((t + 1.0) * (t - 1.0))).sqrt()
            };
        }
        let mut roots = if n == 1 {
            vec![diag[0]]
        } else {
            tridiagonal_eigenvalues(diag.clone(), &off)?
        };
        // q_0 = 1; b_{k+1} q_{k+1} = (t − a_k) q_k − b_k q_{k−1}
        let eval = |t: f64| -> (f64, f64, f64) {
            let (mut q_prev, mut q) = (0.0, 1.0);
            let (mut dq_prev, mut dq) = (0.0, 0.0);
            let mut sum_sq = 1.0;
            for k in 0..n {
                let bk = if k == 0 { 0.0 } else { off[k - 1] };
                let bnext = if k + 1 < n { off[k] } else { 1.0 };
                let q_next = ((t - diag[k]) * q - bk * q_prev) / bnext;
                let dq_next = ((t - diag[k]) * dq + q - bk * dq_prev) / bnext;
                q_prev = q;
                q = q_next;
                dq_prev = dq;
                dq = dq_next;
                if k + 1 < n {
                    sum_sq += q * q;
                }
            }
            (q, dq, sum_sq)
        };
        for t in roots.iter_mut() {
            for _ in 0..3 {
                let (q, dq, _) = eval(*t);
                if dq == 0.0 || !dq.is_finite() {
                    break;
                }
                let step = q / dq;
                if !(step.abs() < 1e-6) {
                    break;
                }
                *t -= step;
            }
        }
        roots.sort_by(f64::total_cmp);
        let log_mu0 = ln_gamma(a + 1.0) + ln_gamma(b + 1.0) - ln_gamma(a + b + 2.0);
        let mut nodes = Vec::with_capacity(n);
        let mut log_one_minus = Vec::with_capacity(n);
        let mut log_weights = Vec::with_capacity(n);
        for &t in &roots {
            let (_, _, sum_sq) = eval(t);
            nodes.push(0.5 * (1.0 + t));
            log_one_minus.push((0.5 * (1.0 - t)).ln());
            log_weights.push(log_mu0 - sum_sq.ln());
        }
        Ok(Self {
            nodes,
            log_one_minus,
            log_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub start_nodes: usize,
    pub max_nodes: usize,
    /// accepted change in the log value between successive node doublings
    pub tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            start_nodes: 64,
            max_nodes: 4096,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub log_value: f64,
    /// `|log value(2m nodes) − log value(m nodes)|` at the accepted level
    pub refinement_error: f64,
    pub nodes_per_axis: usize,
}

/// Power of the endpoint grading map used for `K = 2`.
const GRADING: f64 = 4.0;

/// `ln ∫_Δ Π u_i^{e_i} exp(g(u, ln u)) du` over the `K`-simplex with `m` nodes per axis
/// (per half for `K = 2`).
fn integrate_at(exponents: &[f64], g: &Integrand<'_>, nodes: usize) -> Result<f64> {
    let e = exponents;
    let terms: Vec<f64> = match e.len() {
        2 => {
            // Split at 1/2 and grade each half toward its endpoint with
            // u = t^q/2; log terms whose singularity sits just outside the
            // simplex (tiny topic entries) then stay far from every node.
            let mut out = Vec::with_capacity(2 * nodes);
            for (near, far) in [(0, 1), (1, 0)] {
                let rule = GaussJacobi::new(nodes, GRADING * (e[near] + 1.0) - 1.0, 0.0)?;
                let jac = (GRADING / 2.0).ln() - e[near] * LN_2;
                for (&t, &lw) in rule.nodes.iter().zip(&rule.log_weights) {
                    let ln_u = GRADING * t.ln() - LN_2;
                    let u = ln_u.exp();
                    let ln_rest = (-u).ln_1p();
                    let mut point = [u, 1.0 - u];
                    let mut logs = [ln_u, ln_rest];
                    if near == 1 {
                        point.swap(0, 1);
                        logs.swap(0, 1);
                    }
                    out.push(lw + jac + e[far] * ln_rest + g(&point, &logs));
                }
            }
            out
        }
        3 => {
            // u = (x, (1−x)y, (1−x)(1−y)) turns the weight into a product of
            // x^{e1}(1−x)^{e2+e3+1} and y^{e2}(1−y)^{e3}
            let rx = GaussJacobi::new(nodes, e[0], e[1] + e[2] + 1.0)?;
            let ry = GaussJacobi::new(nodes, e[1], e[2])?;
            let mut out = Vec::with_capacity(nodes * nodes);
            for i in 0..rx.len() {
                let x = rx.nodes[i];
                let lx1 = rx.log_one_minus[i];
                for j in 0..ry.len() {
                    let y = ry.nodes[j];
                    let u = [x, (1.0 - x) * y, (1.0 - x) * (1.0 - y)];
                    let logs = [x.ln(), lx1 + y.ln(), lx1 + ry.log_one_minus[j]];
                    out.push(rx.log_weights[i] + ry.log_weights[j] + g(&u, &logs));
                }
            }
            out
        }
        _ => unreachable!("dimension checked by the caller"),
    };
    Ok(log_sum_exp(&terms))
}

type Integrand<'a> = dyn Fn(&[f64], &[f64]) -> f64 + 'a;

/// `ln ∫_Δ Π u_i^{e_i} exp(g(u, ln u)) du` for `K ∈ {2, 3}`, doubling the node
/// count until successive values agree within `cfg.tol`.
pub fn simplex_integral(exponents: &[f64], g: &Integrand<'_>, cfg: &QuadratureConfig) -> Result<QuadratureResult> {
    let k = exponents.len();
    if !(2..=3).contains(&k) {
        return Err(invalid(format!("simplex quadrature supports K in {{2, 3}}, got K = {k}")));
    }
    let cap = if k == 3 { cfg.max_nodes.min(1024) } else { cfg.max_nodes };
    let mut m = cfg.start_nodes.max(2);
    let mut prev = integrate_at(exponents, g, m)?;
    let mut last_err = f64::INFINITY;
    while 2 * m <= cap {
        m *= 2;
        let next = integrate_at(exponents, g, m)?;
        last_err = (next - prev).abs();
        prev = next;
        if last_err < cfg.tol {
            return Ok(QuadratureResult {
                log_value: next,
                refinement_error: last_err,
                nodes_per_axis: m,
            });
        }
    }
    Err(Error::Convergence(format!(
        "quadrature refinement stalled at {m} nodes per axis with change {last_err:.3e}"
    )))
}

fn check_dim(objective: &dyn Objective, alpha: &DirichletParams) -> Result<()> {
    if objective.dim() != alpha.len() {
        return Err(Error::Dimension {
            what: "alpha length",
            expected: objective.dim(),
            found: alpha.len(),
        });
    }
    if alpha.len() > 3 {
        return Err(invalid(format!("quadrature supports K <= 3, got K = {}", alpha.len())));
    }
    Ok(())
}

/// `ln E_α[exp(multiplier·n·H)]` by Gauss–Jacobi rules.
pub fn quadrature_reference(
    objective: &dyn Objective,
    alpha: &DirichletParams,
    n: f64,
    multiplier: f64,
    cfg: &QuadratureConfig,
) -> Result<QuadratureResult> {
    check_dim(objective, alpha)?;
    let scale = multiplier * n;
    if alpha.len() == 1 {
        return Ok(QuadratureResult {
            log_value: scale * objective.value_with_logs(&[1.0], &[0.0]),
            refinement_error: 0.0,
            nodes_per_axis: 0,
        });
    }
    let exponents: Vec<f64> = alpha.alpha().iter().map(|a| a - 1.0).collect();
    let g = |t: &[f64], l: &[f64]| scale * objective.value_with_logs(t, l);
    let mut r = simplex_integral(&exponents, &g, cfg)?;
    r.log_value -= alpha.log_beta();
    Ok(r)
}

/// Exact per-sample second moment of the truncated importance sampler,
/// `ln E_α[w · e^{2nH} · 1_{Δ^ε}]` with `w = Dir_α/Dir_{α+shift·θ*}`.
///
/// The truncated region `{θ_i ≥ c_i}` is the simplex `c + (1 − Σc)Δ`, so it is
/// integrated through that affine map and the indicator never enters a rule.
pub fn quadrature_is_second_moment(
    objective: &dyn Objective,
    alpha: &DirichletParams,
    n: f64,
    spec: &TruncationSpec,
    theta_star: &[f64],
    shift: f64,
    cfg: &QuadratureConfig,
) -> Result<QuadratureResult> {
    check_dim(objective, alpha)?;
    let k = alpha.len();
    if k < 2 {
        return Err(invalid("truncated quadrature needs K >= 2"));
    }
    let corner: Vec<f64> = (0..k)
        .map(|i| {
            if theta_star[i] > 0.0 {
                match spec.mode() {
                    TruncationMode::Relative => spec.epsilon() * theta_star[i],
                    TruncationMode::Absolute => spec.epsilon(),
                }
            } else {
                0.0
            }
        })
        .collect();
    let r = 1.0 - corner.iter().sum::<f64>();
    if !(r > 0.0) {
        return Err(invalid("truncated simplex is empty"));
    }
    let ln_r = r.ln();
    let a = alpha.alpha();
    let eta: Vec<f64> = a.iter().zip(theta_star).map(|(a, t)| a + shift * t).collect();
    let mut constant = crate::simplex::log_multivariate_beta(&eta) - 2.0 * alpha.log_beta() + (k - 1) as f64 * ln_r;
    let exponents: Vec<f64> = (0..k)
        .map(|i| {
            if corner[i] > 0.0 {
                0.0
            } else {
                constant += (a[i] - 1.0) * ln_r;
                a[i] - 1.0
            }
        })
        .collect();
    let g = |u: &[f64], lu: &[f64]| {
        let mut theta = [0.0; 3];
        let mut logs = [0.0; 3];
        let mut extra = 0.0;
        for i in 0..k {
            theta[i] = corner[i] + r * u[i];
            if corner[i] > 0.0 {
                logs[i] = theta[i].ln();
                extra += (a[i] - 1.0) * logs[i];
            } else {
                logs[i] = ln_r + lu[i];
            }
            if theta_star[i] > 0.0 {
                extra -= shift * theta_star[i] * logs[i];
            }
        }
        2.0 * n * objective.value_with_logs(&theta[..k], &logs[..k]) + extra
    };
    let mut res = simplex_integral(&exponents, &g, cfg)?;
    res.log_value += constant;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_three_point_rule() {
        let r = GaussJacobi::new(3, 0.0, 0.0).unwrap();
        let expect = [0.5 - 0.5 * 0.6f64.sqrt(), 0.5, 0.5 + 0.5 * 0.6f64.sqrt()];
        for (x, e) in r.nodes.iter().zip(expect) {
            assert!((x - e).abs() < 1e-14);
        }
        let w: Vec<f64> = r.log_weights.iter().map(|l| l.exp()).collect();
        assert!((w[0] - 5.0 / 18.0).abs() < 1e-14 && (w[1] - 8.0 / 18.0).abs() < 1e-14);
    }

    #[test]
    fn chebyshev_weights_are_equal() {
        // a = b = −1/2 exercises the 0/0 branch of the recurrence
        let r = GaussJacobi::new(16, -0.5, -0.5).unwrap();
        let w0 = r.log_weights[0];
        for &w in &r.log_weights {
            assert!((w - w0).abs() < 1e-12);
        }
        let total: f64 = r.log_weights.iter().map(|l| l.exp()).sum();
        assert!((total - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn integrates_polynomials_exactly() {
        // ∫ x^{a} (1−x)^{b} x^3 dx = B(a+4, b+1)
        let (a, b) = (-0.3, 1.7);
        let r = GaussJacobi::new(5, a, b).unwrap();
        let got: f64 = r.nodes.iter().zip(&r.log_weights).map(|(x, l)| l.exp() * x.powi(3)).sum();
        let exact = (ln_gamma(a + 4.0) + ln_gamma(b + 1.0) - ln_gamma(a + b + 5.0)).exp();
        assert!((got - exact).abs() < 1e-14 * exact.max(1.0));
    }
}
