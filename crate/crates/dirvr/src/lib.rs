//! Monte Carlo estimation of Dirichlet expectations `I(n) = E[exp(n H(θ))]`.
//!
//! Three estimators are provided: plain Monte Carlo, γ-importance sampling
//! from `Dir(α + n^γ θ*)` with truncation near the faces of the simplex, and a
//! control variate built from the KL surrogate `Ĥ(θ) = H(θ*) − KL(θ*|θ)` whose
//! expectation is known in closed form. Supporting modules cover the LDA
//! objective, Cover's multiplicative maximizer with a KKT report, Laplace
//! asymptotics, and synthetic instance generation.
//!
//! Everything is computed in log-space; `exp(nH)` underflows long before the
//! interesting regime of `n`.

pub mod error;
pub mod estimators;
pub mod instances;
pub mod laplace;
pub mod linalg;
pub mod maximizer;
pub mod objectives;
pub mod serde_ext;
pub mod simplex;
pub mod stats;

pub use error::{Error, Result};
