//! Objectives `H` on the simplex: the LDA held-out log-likelihood and the KL
//! surrogate `Ĥ(θ) = H(θ*) − KL(θ*|θ)`.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::simplex::{log_multivariate_beta, DirichletParams, SimplexPoint};

/// Something whose exponentiated expectation `E[exp(nH)]` can be estimated.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> f64;

    /// Evaluation when the sampler already has `ln θ_i` at hand. Objectives that
    /// take logs of the coordinates should override this for accuracy near faces.
    fn value_with_logs(&self, theta: &[f64], log_theta: &[f64]) -> f64 {
        let _ = log_theta;
        self.value(theta)
    }
}

/// Value, gradient and Hessian from one pass over the vocabulary.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Topic matrix `φ` (K rows over a vocabulary of V words), word frequencies `p`
/// and the document length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaInstance {
    phi: Vec<SimplexPoint>,
    p: SimplexPoint,
    doc_length: u64,
    // Compressed view over words with p_v > 0: weights[w] = p_v and
    // columns[w*K..(w+1)*K] = φ(v).
    weights: Vec<f64>,
    columns: Vec<f64>,
}

impl LdaInstance {
    pub fn new(phi: Vec<SimplexPoint>, p: SimplexPoint, doc_length: u64) -> Result<Self> {
        let k = phi.len();
        if k == 0 {
            return Err(invalid("topic matrix has no rows"));
        }
        let v = phi[0].len();
        for row in &phi {
            if row.len() != v {
                return Err(Error::Dimension {
                    what: "topic row length",
                    expected: v,
                    found: row.len(),
                });
            }
        }
        if p.len() != v {
            return Err(Error::Dimension {
                what: "word frequency vector length",
                expected: v,
                found: p.len(),
            });
        }
        let mut weights = Vec::new();
        let mut columns = Vec::new();
        for (word, &pv) in p.iter().enumerate() {
            if pv == 0.0 {
                continue;
            }
            if phi.iter().all(|row| row[word] == 0.0) {
                return Err(invalid(format!(
                    "word {word} has positive frequency but zero probability under every topic"
                )));
            }
            weights.push(pv);
            columns.extend(phi.iter().map(|row| row[word]));
        }
        Ok(Self {
            phi,
            p,
            doc_length,
            weights,
            columns,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.phi.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.p.len()
    }

    pub fn phi(&self) -> &[SimplexPoint] {
        &self.phi
    }

    pub fn p(&self) -> &SimplexPoint {
        &self.p
    }

    pub fn doc_length(&self) -> u64 {
        self.doc_length
    }

    fn word_columns(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.weights
            .iter()
            .copied()
            .zip(self.columns.chunks_exact(self.phi.len()))
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (pv, col) in self.word_columns() {
            let s: f64 = col.iter().zip(theta).map(|(f, t)| f * t).sum();
            acc += pv * s.ln();
        }
        acc
    }

    /// `∇H(θ)_i = Σ_v p_v φ_i(v) / θᵀφ(v)`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.eval(theta, false).gradient.unwrap()
    }

    /// `∇²H(θ) = −Σ_v p_v φ(v)φ(v)ᵀ / (θᵀφ(v))²`.
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        self.eval(theta, true).hessian.unwrap()
    }

    /// Gradient always, Hessian on request; mixtures are computed once.
    pub fn eval(&self, theta: &[f64], with_hessian: bool) -> ObjectiveEval {
        let k = self.phi.len();
        let mut value = 0.0;
        let mut grad = vec![0.0; k];
        let mut hess = with_hessian.then(|| DMatrix::<f64>::zeros(k, k));
        for (pv, col) in self.word_columns() {
            let s: f64 = col.iter().zip(theta).map(|(f, t)| f * t).sum();
            value += pv * s.ln();
            let w = pv / s;
            for (g, f) in grad.iter_mut().zip(col) {
                *g += w * f;
            }
            if let Some(h) = hess.as_mut() {
                let w2 = w / s;
                for i in 0..k {
                    let a = w2 * col[i];
                    for j in 0..=i {
                        h[(i, j)] -= a * col[j];
                    }
                }
            }
        }
        if let Some(h) = hess.as_mut() {
            for i in 0..k {
                for j in 0..i {
                    h[(j, i)] = h[(i, j)];
                }
            }
        }
        ObjectiveEval {
            value,
            gradient: Some(grad),
            hessian: hess,
        }
    }

    /// Cover's multiplicative factors `a_i(b)` together with `H(b)`; identical to
    /// the gradient, exposed under the name the update rule uses.
    pub(crate) fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let e = self.eval(theta, false);
        (e.value, e.gradient.unwrap())
    }
}

impl Objective for LdaInstance {
    fn dim(&self) -> usize {
        self.phi.len()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        LdaInstance::value(self, theta)
    }
}

/// `Ĥ(θ) = h* − KL(θ*|θ)`: equal to `h*` at `θ*`, `-inf` when `θ` leaves the support.
#[derive(Debug, Clone)]
pub struct KlObjective {
    theta_star: SimplexPoint,
    h_at_star: f64,
    support: Vec<usize>,
    log_star: Vec<f64>,
}

impl KlObjective {
    pub fn new(theta_star: SimplexPoint, h_at_star: f64) -> Self {
        let support = theta_star.support();
        let log_star = support.iter().map(|&i| theta_star[i].ln()).collect();
        Self {
            theta_star,
            h_at_star,
            support,
            log_star,
        }
    }

    pub fn theta_star(&self) -> &SimplexPoint {
        &self.theta_star
    }

    pub fn h_at_star(&self) -> f64 {
        self.h_at_star
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// `Σ θ*_i ln θ*_i` over the support.
    pub fn neg_entropy(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.log_star)
            .map(|(&i, &l)| self.theta_star[i] * l)
            .sum()
    }

    /// `−diag(1/θ*_i)` on the support, zero rows and columns elsewhere.
    pub fn hessian_at_star(&self) -> DMatrix<f64> {
        let k = self.theta_star.len();
        let mut h = DMatrix::zeros(k, k);
        for &i in &self.support {
            h[(i, i)] = -1.0 / self.theta_star[i];
        }
        h
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.theta_star.len()];
        for &i in &self.support {
            g[i] = self.theta_star[i] / theta[i];
        }
        g
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let k = self.theta_star.len();
        let mut h = DMatrix::zeros(k, k);
        for &i in &self.support {
            h[(i, i)] = -self.theta_star[i] / (theta[i] * theta[i]);
        }
        h
    }

    /// `ln E_α[exp(a·h* − c·KL(θ*|θ))]`, finite whenever `α_i + c θ*_i > 0` for all `i`.
    ///
    /// With `a = c = n` this is `ln E[exp(nĤ)]`.
    pub fn log_expectation_general(&self, alpha: &DirichletParams, a: f64, c: f64) -> Result<f64> {
        let shifted: Vec<f64> = alpha
            .alpha()
            .iter()
            .zip(self.theta_star.iter())
            .map(|(&al, &t)| al + c * t)
            .collect();
        if shifted.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("KL moment diverges: alpha + c·theta* has a non-positive entry"));
        }
        Ok(a * self.h_at_star - c * self.neg_entropy() + log_multivariate_beta(&shifted) - alpha.log_beta())
    }

    /// Closed form `ln E_α[exp(nĤ)] = ln B(α+nθ*) − ln B(α) + n(h* − θ*·ln θ*)`.
    pub fn log_expectation(&self, alpha: &DirichletParams, n: f64) -> f64 {
        self.log_expectation_general(alpha, n, n)
            .expect("non-negative n keeps alpha + n theta* positive")
    }
}

impl Objective for KlObjective {
    fn dim(&self) -> usize {
        self.theta_star.len()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.h_at_star - crate::simplex::kl_divergence(&self.theta_star, theta)
    }

    fn value_with_logs(&self, _theta: &[f64], log_theta: &[f64]) -> f64 {
        let mut kl = 0.0;
        for (&i, &ls) in self.support.iter().zip(&self.log_star) {
            kl += self.theta_star[i] * (ls - log_theta[i]);
        }
        self.h_at_star - kl
    }
}
