//! Synthetic LDA instances with known maximizers, and loaders for topic
//! matrices, bag-of-words corpora and instance bundles.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objectives::LdaInstance;
use crate::simplex::{DirichletParams, RandomStream, SimplexPoint};

/// Smallest accepted `λ_min/λ_max` eigenvalue ratio of the topic Gram matrix.
const GRAM_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "V")]
    pub v: usize,
    /// symmetric Dirichlet parameter of each topic row
    pub phi_prior: f64,
    /// number of planted zeros in `θ*`
    pub m: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_retries: usize,
    /// document length recorded on the instance
    pub doc_length: u64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            k: 5,
            v: 1000,
            phi_prior: 0.1,
            m: 0,
            lambda_min: 0.2,
            lambda_max: 1.0,
            max_retries: 1000,
            doc_length: 1000,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.v == 0 {
            return Err(invalid("K and V must be positive"));
        }
        if self.v < self.k {
            return Err(invalid(format!("V = {} must be at least K = {}", self.v, self.k)));
        }
        if self.m >= self.k {
            return Err(invalid(format!("m = {} must be at most K - 1 = {}", self.m, self.k - 1)));
        }
        if !(self.phi_prior > 0.0 && self.phi_prior.is_finite()) {
            return Err(invalid("phi prior must be positive"));
        }
        if !(0.0 < self.lambda_min && self.lambda_min <= self.lambda_max && self.lambda_max <= 1.0) {
            return Err(invalid(format!(
                "need 0 < lambda_min <= lambda_max <= 1, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.max_retries == 0 {
            return Err(invalid("max_retries must be positive"));
        }
        Ok(())
    }

    pub fn stream(&self) -> RandomStream {
        RandomStream::new(self.seed)
    }
}

/// An instance together with the maximizer it was built around.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub instance: LdaInstance,
    pub theta_star: SimplexPoint,
    /// ascending planted zero coordinates of `θ*`
    pub active_set: Vec<usize>,
    /// planted multipliers, aligned with `active_set`
    pub lambda: Vec<f64>,
}

fn sample_topics(k: usize, v: usize, beta: f64, rng: &mut impl Rng) -> Result<Vec<SimplexPoint>> {
    let prior = DirichletParams::symmetric(beta, v)?;
    let sampler = prior.sampler();
    let mut theta = vec![0.0; v];
    let mut logs = vec![0.0; v];
    (0..k)
        .map(|_| {
            sampler.sample_into(rng, &mut theta, &mut logs);
            SimplexPoint::normalized(theta.clone())
        })
        .collect()
}

fn gram(phi: &[SimplexPoint]) -> DMatrix<f64> {
    let k = phi.len();
    DMatrix::from_fn(k, k, |i, j| phi[i].iter().zip(phi[j].iter()).map(|(a, b)| a * b).sum())
}

fn well_conditioned(g: &DMatrix<f64>) -> bool {
    let eig = g.clone().symmetric_eigen().eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(0.0, f64::max);
    hi > 0.0 && lo > GRAM_RCOND * hi
}

fn mixture(phi: &[SimplexPoint], theta: &[f64]) -> Vec<f64> {
    let v = phi[0].len();
    let mut out = vec![0.0; v];
    for (row, &t) in phi.iter().zip(theta) {
        if t > 0.0 {
            for (o, &x) in out.iter_mut().zip(row.iter()) {
                *o += t * x;
            }
        }
    }
    out
}

/// `p = Σ_k θ_k φ_k` with `θ ~ Dir(1)`, so the maximizer is `θ` itself.
pub fn gen_interior_instance(cfg: &GeneratorConfig, stream: RandomStream) -> Result<PlantedInstance> {
    cfg.validate()?;
    if cfg.m != 0 {
        return Err(invalid("interior instances need m = 0"));
    }
    let mut rng = stream.rng();
    for _ in 0..cfg.max_retries {
        let phi = sample_topics(cfg.k, cfg.v, cfg.phi_prior, &mut rng)?;
        if !well_conditioned(&gram(&phi)) {
            continue;
        }
        let theta = DirichletParams::symmetric(1.0, cfg.k)?.sample(&mut rng);
        let p = SimplexPoint::new(mixture(&phi, &theta))?;
        let instance = LdaInstance::new(phi, p, cfg.doc_length)?;
        return Ok(PlantedInstance {
            instance,
            theta_star: theta,
            active_set: Vec::new(),
            lambda: Vec::new(),
        });
    }
    Err(Error::Generation(format!(
        "no full-rank topic matrix after {} attempts",
        cfg.max_retries
    )))
}

/// Instance whose maximizer has zeros on `{0, …, m−1}` with planted multipliers.
///
/// The word weights `w` solve `φw = b` by the minimum-norm correction from
/// `w₀ = 1/V`. The normalization row `sᵀw = 1` is implied by `φw = b` because
/// `sᵀw = θ*ᵀφw = θ*ᵀb = 1`, so only the `K×K` Gram matrix is factored.
pub fn gen_boundary_instance(cfg: &GeneratorConfig, stream: RandomStream) -> Result<PlantedInstance> {
    cfg.validate()?;
    if cfg.m == 0 {
        return Err(invalid("boundary instances need m >= 1"));
    }
    let (k, v, m) = (cfg.k, cfg.v, cfg.m);
    let mut rng = stream.rng();
    let inner = DirichletParams::symmetric(1.0, k - m)?;
    for _ in 0..cfg.max_retries {
        let phi = sample_topics(k, v, cfg.phi_prior, &mut rng)?;
        let mut theta = vec![0.0; k];
        theta[m..].copy_from_slice(&inner.sample(&mut rng));
        let lambda: Vec<f64> = (0..m)
            .map(|_| {
                if cfg.lambda_min == cfg.lambda_max {
                    cfg.lambda_min
                } else {
                    rng.gen_range(cfg.lambda_min..cfg.lambda_max)
                }
            })
            .collect();
        let g = gram(&phi);
        if !well_conditioned(&g) {
            continue;
        }
        let Some(chol) = g.cholesky() else { continue };
        let w0 = 1.0 / v as f64;
        let rhs = DVector::from_fn(k, |i, _| {
            let b = if i < m { 1.0 - lambda[i] } else { 1.0 };
            b - w0 * phi[i].iter().sum::<f64>()
        });
        let y = chol.solve(&rhs);
        let w: Vec<f64> = (0..v).map(|j| w0 + (0..k).map(|i| y[i] * phi[i][j]).sum::<f64>()).collect();
        if w.iter().any(|&x| x < 0.0) {
            continue;
        }
        let s = mixture(&phi, &theta);
        let sw: Vec<f64> = s.iter().zip(&w).map(|(a, b)| a * b).collect();
        if !(sw.iter().sum::<f64>() > 0.0) {
            continue;
        }
        let p = SimplexPoint::normalized(sw)?;
        let theta_star = SimplexPoint::normalized(theta)?;
        let instance = LdaInstance::new(phi, p, cfg.doc_length)?;
        return Ok(PlantedInstance {
            instance,
            theta_star,
            active_set: (0..m).collect(),
            lambda,
        });
    }
    Err(Error::Generation(format!(
        "no non-negative word weights after {} attempts",
        cfg.max_retries
    )))
}

/// Topic matrix whose sparsity `max_v Σ_{j≠k(v)} φ_j(v)/φ_{k(v)}(v)` equals `target`.
///
/// Word `v` is owned by topic `v mod K`. Each topic spreads unit mass over its
/// own words by `Dir(1)` and every other topic gets `target/(K−1)` times that
/// mass on the word, so each word has ratio exactly `target` and every row sums
/// to `1 + target` before normalization.
pub fn gen_sparsity_controlled_phi(k: usize, v: usize, target: f64, stream: RandomStream) -> Result<Vec<SimplexPoint>> {
    if k < 2 || v < k {
        return Err(invalid(format!("need K >= 2 and V >= K, got K = {k}, V = {v}")));
    }
    if !(target >= 0.0 && target.is_finite()) {
        return Err(invalid(format!("target sparsity {target} must be finite and non-negative")));
    }
    let off = target / (k - 1) as f64;
    if off >= 1.0 {
        return Err(invalid(format!(
            "target sparsity {target} leaves no unique dominant topic for K = {k}; need target < {}",
            k - 1
        )));
    }
    let mut rng = stream.rng();
    let mut dominant = vec![0.0; v];
    for topic in 0..k {
        let owned: Vec<usize> = (topic..v).step_by(k).collect();
        let d = DirichletParams::symmetric(1.0, owned.len())?.sample(&mut rng);
        for (&word, &mass) in owned.iter().zip(d.iter()) {
            dominant[word] = mass;
        }
    }
    let scale = 1.0 + target;
    (0..k)
        .map(|topic| {
            let row: Vec<f64> = (0..v)
                .map(|word| {
                    let d = dominant[word];
                    if word % k == topic {
                        d / scale
                    } else {
                        off * d / scale
                    }
                })
                .collect();
            SimplexPoint::new(row)
        })
        .collect()
}

/// Word counts of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub counts: BTreeMap<usize, u64>,
}

impl CorpusDocument {
    pub fn new(counts: BTreeMap<usize, u64>) -> Result<Self> {
        let doc = Self { counts };
        if doc.length() == 0 {
            return Err(invalid("document has no words"));
        }
        Ok(doc)
    }

    /// Total word count `n`.
    pub fn length(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Parses one `{"counts": {"idx": count, …}}` record.
    pub fn from_json(record: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            counts: BTreeMap<String, serde_json::Value>,
        }
        let raw: Raw = serde_json::from_str(record).map_err(|e| invalid(format!("bad document record: {e}")))?;
        let mut counts = BTreeMap::new();
        for (key, value) in raw.counts {
            let idx: usize = key
                .parse()
                .map_err(|_| invalid(format!("word index '{key}' is not a non-negative integer")))?;
            let count = match value.as_i64() {
                Some(c) if c < 0 => return Err(invalid(format!("word {idx} has negative count {c}"))),
                Some(c) => c as u64,
                None => return Err(invalid(format!("word {idx} count {value} is not an integer"))),
            };
            if count > 0 {
                counts.insert(idx, count);
            }
        }
        Self::new(counts)
    }

    pub fn to_json(&self) -> String {
        let counts: BTreeMap<String, u64> = self.counts.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        serde_json::json!({ "counts": counts }).to_string()
    }

    /// Empirical word frequencies `p_v = count_v / n` over a vocabulary of `v` words.
    pub fn frequencies(&self, v: usize) -> Result<SimplexPoint> {
        if let Some((&idx, _)) = self.counts.iter().next_back() {
            if idx >= v {
                return Err(Error::Dimension {
                    what: "document word index vs vocabulary size",
                    expected: v,
                    found: idx + 1,
                });
            }
        }
        let n = self.length() as f64;
        let mut p = vec![0.0; v];
        for (&idx, &c) in &self.counts {
            p[idx] = c as f64 / n;
        }
        SimplexPoint::normalized(p)
    }

    /// Draws `n_words` tokens from the mixture `Σ θ_k φ_k`.
    pub fn sample(phi: &[SimplexPoint], theta: &[f64], n_words: u64, rng: &mut impl Rng) -> Result<Self> {
        let dist = WeightedAliasIndex::new(mixture(phi, theta))
            .map_err(|e| invalid(format!("cannot sample from topic mixture: {e}")))?;
        let mut counts = BTreeMap::new();
        for _ in 0..n_words {
            *counts.entry(dist.sample(rng)).or_insert(0) += 1;
        }
        Self::new(counts)
    }
}

pub fn to_lda_instance(topics: &[SimplexPoint], doc: &CorpusDocument) -> Result<LdaInstance> {
    if topics.is_empty() {
        return Err(invalid("topic matrix has no rows"));
    }
    let p = doc.frequencies(topics[0].len())?;
    LdaInstance::new(topics.to_vec(), p, doc.length())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopicMatrixFile {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "V")]
    v: usize,
    phi: Vec<Vec<f64>>,
}

fn topics_from_rows(k: usize, v: usize, rows: Vec<Vec<f64>>) -> Result<Vec<SimplexPoint>> {
    if rows.len() != k {
        return Err(Error::Dimension {
            what: "number of topic rows",
            expected: k,
            found: rows.len(),
        });
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != v {
                return Err(Error::Dimension {
                    what: "topic row length",
                    expected: v,
                    found: row.len(),
                });
            }
            SimplexPoint::new(row).map_err(|e| invalid(format!("topic row {i}: {e}")))
        })
        .collect()
}

/// Reads `{"K": …, "V": …, "phi": [[…], …]}`.
pub fn load_topic_matrix(path: &Path) -> Result<Vec<SimplexPoint>> {
    let file: TopicMatrixFile = parse_json(path, &read(path)?)?;
    topics_from_rows(file.k, file.v, file.phi)
}

pub fn save_topic_matrix(path: &Path, topics: &[SimplexPoint]) -> Result<()> {
    let file = TopicMatrixFile {
        k: topics.len(),
        v: topics.first().map_or(0, |r| r.len()),
        phi: topics.iter().map(|r| r.to_vec()).collect(),
    };
    write(path, &serde_json::to_string(&file).expect("topic matrix serializes"))
}

/// Reads a JSON-lines corpus; blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusDocument>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| CorpusDocument::from_json(l).map_err(|e| invalid(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn save_corpus(path: &Path, docs: &[CorpusDocument]) -> Result<()> {
    let mut text = String::new();
    for d in docs {
        text.push_str(&d.to_json());
        text.push('\n');
    }
    write(path, &text)
}

/// An instance on disk, with the planted maximizer when one is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceBundle {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "V")]
    pub v: usize,
    pub phi: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_set: Option<Vec<usize>>,
}

impl InstanceBundle {
    pub fn from_instance(inst: &LdaInstance) -> Self {
        Self {
            k: inst.num_topics(),
            v: inst.vocab_size(),
            phi: inst.phi().iter().map(|r| r.to_vec()).collect(),
            p: inst.p().to_vec(),
            n: inst.doc_length(),
            theta_star: None,
            lambda: None,
            active_set: None,
        }
    }

    pub fn from_planted(planted: &PlantedInstance) -> Self {
        Self {
            theta_star: Some(planted.theta_star.to_vec()),
            lambda: Some(planted.lambda.clone()),
            active_set: Some(planted.active_set.clone()),
            ..Self::from_instance(&planted.instance)
        }
    }

    pub fn to_instance(&self) -> Result<LdaInstance> {
        let topics = topics_from_rows(self.k, self.v, self.phi.clone())?;
        let p = SimplexPoint::new(self.p.clone()).map_err(|e| invalid(format!("word frequencies: {e}")))?;
        LdaInstance::new(topics, p, self.n)
    }

    pub fn theta_star_point(&self) -> Result<Option<SimplexPoint>> {
        self.theta_star.clone().map(SimplexPoint::new).transpose()
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_json(path, &read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &serde_json::to_string(self).expect("bundle serializes"))
    }
}
