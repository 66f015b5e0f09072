//! The single-instance commands and the corpus evaluation.

use std::path::Path;

use anyhow::Result;
use dirvr::estimators::{
    control_variate, importance_sampling, mse_points, plain_mc, CvReport, EstimatorConfig, ExperimentTarget, LogEstimate,
    ReferencePolicy,
};
use dirvr::instances::{
    gen_boundary_instance, gen_interior_instance, gen_sparsity_controlled_phi, load_corpus, load_topic_matrix,
    to_lda_instance, CorpusDocument, GeneratorConfig, InstanceBundle,
};
use dirvr::maximizer::{maximize, CoverConfig, MaximizerReport};
use dirvr::objectives::{KlObjective, LdaInstance};
use dirvr::simplex::{DirichletParams, RandomStream, SimplexPoint};
use dirvr::stats::{median, spearman};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{CorpusArgs, EstimateArgs, GenArgs, KktArgs, Method, SamplingArgs};
use crate::config::{resolve_seed, RunContext, RunManifest};
use crate::output::{to_json, write_text};
use crate::usage;

pub const DEFAULT_ALPHA: f64 = 1.0;

/// `Dir(α)` from one symmetric value or a full vector.
pub fn alpha_params(alpha: Option<&[f64]>, k: usize, default: f64) -> Result<DirichletParams> {
    Ok(match alpha {
        None => DirichletParams::symmetric(default, k)?,
        Some([a]) => DirichletParams::symmetric(*a, k)?,
        Some(v) if v.len() == k => DirichletParams::new(v.to_vec())?,
        Some(v) => {
            return Err(dirvr::Error::Dimension {
                what: "alpha",
                expected: k,
                found: v.len(),
            }
            .into())
        }
    })
}

/// Estimator settings with library defaults for anything unset. Only the first
/// `gamma` is used.
pub fn estimator_config(s: &SamplingArgs, seed: u64) -> Result<EstimatorConfig> {
    let d = EstimatorConfig::default();
    Ok(EstimatorConfig {
        num_samples: s.num_samples.unwrap_or(d.num_samples),
        seed,
        gamma: s.gamma.as_ref().and_then(|g| g.first().copied()).unwrap_or(d.gamma),
        epsilon: s.epsilon.unwrap_or(d.epsilon),
        truncation_mode: match &s.truncation_mode {
            Some(m) => m.parse()?,
            None => d.truncation_mode,
        },
        cv_mode: d.cv_mode,
        chunk_size: s.chunk_size.unwrap_or(d.chunk_size),
        allow_unstable_gamma: s.allow_unstable_gamma,
    })
}

pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| usage(format!("missing required --{flag}")))
}

pub fn load_bundle(path: &Path) -> Result<(InstanceBundle, LdaInstance)> {
    let bundle = InstanceBundle::load(path)?;
    let inst = bundle.to_instance()?;
    Ok((bundle, inst))
}

#[derive(Serialize)]
struct InstanceFile<'a> {
    #[serde(flatten)]
    bundle: &'a InstanceBundle,
    report: &'a MaximizerReport,
    manifest: &'a RunManifest,
}

/// The generator settings a `gen-instance` run resolves to.
pub fn generator_config(a: &GenArgs, seed: u64) -> Result<GeneratorConfig> {
    let d = GeneratorConfig::default();
    Ok(GeneratorConfig {
        k: *required(&a.k, "K")?,
        v: a.v.unwrap_or(d.v),
        phi_prior: a.phi_prior.unwrap_or(d.phi_prior),
        m: a.m.unwrap_or(d.m),
        lambda_min: a.lambda_min.unwrap_or(d.lambda_min),
        lambda_max: a.lambda_max.unwrap_or(d.lambda_max),
        max_retries: a.max_retries.unwrap_or(d.max_retries),
        doc_length: a.doc_length.unwrap_or(d.doc_length),
        seed,
    })
}

/// Sparsity-controlled topics with a document of `doc_length` words drawn from
/// a `Dir(1)` topic mixture.
pub fn sparsity_instance(k: usize, v: usize, target: f64, doc_length: u64, stream: RandomStream) -> Result<LdaInstance> {
    let phi = gen_sparsity_controlled_phi(k, v, target, stream.derive(0))?;
    let mut rng = stream.derive(1).rng();
    let theta = DirichletParams::symmetric(1.0, k)?.sample(&mut rng);
    let doc = CorpusDocument::sample(&phi, theta.coords(), doc_length, &mut rng)?;
    Ok(to_lda_instance(&phi, &doc)?)
}

pub fn gen_instance(a: &GenArgs, ctx: &RunContext, name: &str) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let cfg = generator_config(a, seed)?;
    let bundle = match a.sparsity {
        Some(target) => {
            if cfg.m != 0 {
                return Err(usage("--sparsity builds unplanted instances; drop --m"));
            }
            InstanceBundle::from_instance(&sparsity_instance(cfg.k, cfg.v, target, cfg.doc_length, cfg.stream())?)
        }
        None if cfg.m == 0 => InstanceBundle::from_planted(&gen_interior_instance(&cfg, cfg.stream())?),
        None => InstanceBundle::from_planted(&gen_boundary_instance(&cfg, cfg.stream())?),
    };
    let (_, report) = maximize(&bundle.to_instance()?, &CoverConfig::default())?;
    let manifest = ctx.manifest(name, a, seed);
    let file = InstanceFile {
        bundle: &bundle,
        report: &report,
        manifest: &manifest,
    };
    write_text(a.out.as_deref(), &to_json(&file))
}

#[derive(Serialize)]
struct CoverSummary {
    iterations: usize,
    converged: bool,
    monotone: bool,
}

#[derive(Serialize)]
struct PlantedComparison {
    active_set_matches: bool,
    max_theta_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_lambda_error: Option<f64>,
}

#[derive(Serialize)]
struct KktOutput<'a> {
    report: &'a MaximizerReport,
    cover: CoverSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    planted: Option<PlantedComparison>,
    manifest: RunManifest,
}

/// Largest backwards step tolerated in the Cover trace.
const MONOTONE_SLACK: f64 = 1e-13;

pub fn check_kkt(a: &KktArgs, ctx: &RunContext, name: &str) -> Result<()> {
    let (bundle, inst) = load_bundle(required(&a.instance, "instance")?)?;
    let d = CoverConfig::default();
    let cfg = CoverConfig {
        max_iters: a.max_iters.unwrap_or(d.max_iters),
        zero_tol: a.zero_tol.unwrap_or(d.zero_tol),
        kkt_tol: a.kkt_tol.unwrap_or(d.kkt_tol),
        ..d
    };
    let (run, report) = maximize(&inst, &cfg)?;
    let monotone = run.trace.windows(2).all(|w| w[1] - w[0] >= -MONOTONE_SLACK);
    let planted = bundle.theta_star.as_ref().map(|star| PlantedComparison {
        active_set_matches: bundle.active_set.as_ref().map_or(true, |s| *s == report.active_set),
        max_theta_error: star.iter().zip(report.theta_star.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        max_lambda_error: bundle.lambda.as_ref().filter(|l| l.len() == report.lambda.len()).map(|l| {
            l.iter().zip(&report.lambda).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        }),
    });
    let out = KktOutput {
        report: &report,
        cover: CoverSummary {
            iterations: run.iterations,
            converged: run.converged,
            monotone,
        },
        planted,
        manifest: ctx.manifest(name, a, 0),
    };
    write_text(a.out.as_deref(), &to_json(&out))
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    method: Method,
    n: f64,
    alpha: &'a [f64],
    theta_star: &'a [f64],
    h_at_star: f64,
    estimate: LogEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    control_variate: Option<CvReport>,
    manifest: RunManifest,
}

fn reject_flags(method: Method, flags: &[(&str, bool)]) -> Result<()> {
    match flags.iter().find(|(_, set)| *set) {
        Some((flag, _)) => Err(usage(format!("--{flag} does not apply to method {method:?}").to_lowercase())),
        None => Ok(()),
    }
}

pub fn estimate(a: &EstimateArgs, ctx: &RunContext, name: &str) -> Result<()> {
    let method = *required(&a.method, "method")?;
    let s = &a.sampling;
    let is_flags = [
        ("gamma", s.gamma.is_some()),
        ("epsilon", s.epsilon.is_some()),
        ("truncation-mode", s.truncation_mode.is_some()),
        ("allow-unstable-gamma", s.allow_unstable_gamma),
    ];
    match method {
        Method::Mc => {
            reject_flags(method, &is_flags)?;
            reject_flags(method, &[("cv-mode", a.cv_mode.is_some())])?;
        }
        Method::Is => reject_flags(method, &[("cv-mode", a.cv_mode.is_some())])?,
        Method::Cv => reject_flags(method, &is_flags)?,
    }
    if s.gamma.as_ref().is_some_and(|g| g.len() != 1) {
        return Err(usage("estimate takes a single --gamma"));
    }
    let seed = resolve_seed(s.seed)?;
    let (_, inst) = load_bundle(required(&a.instance, "instance")?)?;
    let n = a.n.unwrap_or(inst.doc_length() as f64);
    let alpha = alpha_params(s.alpha.as_deref(), inst.num_topics(), DEFAULT_ALPHA)?;
    let mut cfg = estimator_config(s, seed)?;
    if let Some(m) = &a.cv_mode {
        cfg.cv_mode = m.parse()?;
    }
    let (_, report) = maximize(&inst, &CoverConfig::default())?;
    let star = report.theta_star.coords();
    let (estimate, cv) = match method {
        Method::Mc => (plain_mc(&inst, &alpha, n, &cfg)?, None),
        Method::Is => (importance_sampling(&inst, &alpha, n, star, &cfg)?, None),
        Method::Cv => {
            let kl = KlObjective::new(report.theta_star.clone(), report.h_at_star);
            let (e, r) = control_variate(&inst, &kl, &alpha, n, &cfg)?;
            (e, Some(r))
        }
    };
    let out = EstimateOutput {
        method,
        n,
        alpha: alpha.alpha(),
        theta_star: star,
        h_at_star: report.h_at_star,
        estimate,
        control_variate: cv,
        manifest: ctx.manifest(name, a, seed),
    };
    write_text(a.out.as_deref(), &to_json(&out))
}

/// One corpus document's evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentResult {
    pub doc_id: usize,
    pub n: f64,
    pub m: usize,
    pub min_lambda: Option<f64>,
    pub h_at_star: f64,
    pub log_mean_mc: Option<f64>,
    pub log_mean_is: Option<f64>,
    pub log_mean_cv: Option<f64>,
    pub log_mse_ratio: f64,
}

pub fn evaluate_document(
    doc_id: usize,
    topics: &[SimplexPoint],
    doc: &CorpusDocument,
    alpha: &DirichletParams,
    methods: &[Method],
    cfg: &EstimatorConfig,
    policy: ReferencePolicy,
) -> Result<DocumentResult> {
    let inst = to_lda_instance(topics, doc)?;
    let n = doc.length() as f64;
    let (_, report) = maximize(&inst, &CoverConfig::default())?;
    let kl = KlObjective::new(report.theta_star.clone(), report.h_at_star);
    let star = report.theta_star.coords();
    let run = |m: Method| -> Result<Option<f64>> {
        if !methods.contains(&m) {
            return Ok(None);
        }
        Ok(Some(match m {
            Method::Mc => plain_mc(&inst, alpha, n, cfg)?.log_mean,
            Method::Is => importance_sampling(&inst, alpha, n, star, cfg)?.log_mean,
            Method::Cv => control_variate(&inst, &kl, alpha, n, cfg)?.0.log_mean,
        }))
    };
    let target = ExperimentTarget {
        objective: &inst,
        report: &report,
        closed_form: None,
    };
    let ratio = mse_points(&target, alpha, n, cfg, std::slice::from_ref(cfg), policy)?[0].log_mse_ratio;
    Ok(DocumentResult {
        doc_id,
        n,
        m: report.m,
        min_lambda: report.min_lambda,
        h_at_star: report.h_at_star,
        log_mean_mc: run(Method::Mc)?,
        log_mean_is: run(Method::Is)?,
        log_mean_cv: run(Method::Cv)?,
        log_mse_ratio: ratio,
    })
}

#[derive(Serialize)]
struct CorpusSummary {
    documents: usize,
    /// rank correlation of document length with the log MSE ratio
    length_ratio_spearman: Option<f64>,
    median_log_mse_ratio: Option<f64>,
    reference_policy: ReferencePolicy,
    manifest: RunManifest,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn eval_corpus(a: &CorpusArgs, ctx: &RunContext, name: &str) -> Result<()> {
    let topics = load_topic_matrix(required(&a.topics, "topics")?)?;
    let docs = load_corpus(required(&a.corpus, "corpus")?)?;
    let seed = resolve_seed(a.sampling.seed)?;
    let s = &a.sampling;
    if s.gamma.as_ref().is_some_and(|g| g.len() != 1) {
        return Err(usage("eval-corpus takes a single --gamma"));
    }
    let alpha = alpha_params(s.alpha.as_deref(), topics.len(), DEFAULT_ALPHA)?;
    let policy: ReferencePolicy = a.reference.as_deref().unwrap_or("high-precision-is").parse()?;
    let methods = a.methods.clone().unwrap_or_else(|| vec![Method::Mc, Method::Is, Method::Cv]);
    let base = estimator_config(s, seed)?;
    let results: Vec<DocumentResult> = docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            let cfg = EstimatorConfig {
                seed: seed.wrapping_add(i as u64),
                ..base
            };
            evaluate_document(i, &topics, doc, &alpha, &methods, &cfg, policy)
        })
        .collect::<Result<_>>()?;

    let mut manifest = ctx.manifest(name, a, seed);
    manifest.reference_policy = Some(policy);
    let mut buf = format!("# manifest {}\n", serde_json::to_string(&manifest)?).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "doc_id",
            "n",
            "m",
            "min_lambda",
            "h_at_star",
            "log_mean_mc",
            "log_mean_is",
            "log_mean_cv",
            "log_mse_ratio",
            "reference_policy",
        ])?;
        for r in &results {
            w.write_record([
                r.doc_id.to_string(),
                r.n.to_string(),
                r.m.to_string(),
                opt(r.min_lambda),
                r.h_at_star.to_string(),
                opt(r.log_mean_mc),
                opt(r.log_mean_is),
                opt(r.log_mean_cv),
                r.log_mse_ratio.to_string(),
                policy.as_str().to_string(),
            ])?;
        }
        w.flush()?;
    }
    write_text(a.out.as_deref(), &String::from_utf8(buf)?)?;

    if let Some(path) = &a.summary {
        let finite: Vec<&DocumentResult> = results.iter().filter(|r| r.log_mse_ratio.is_finite()).collect();
        let lengths: Vec<f64> = finite.iter().map(|r| r.n).collect();
        let ratios: Vec<f64> = finite.iter().map(|r| r.log_mse_ratio).collect();
        let summary = CorpusSummary {
            documents: results.len(),
            length_ratio_spearman: (finite.len() >= 2).then(|| spearman(&lengths, &ratios)).filter(|r| r.is_finite()),
            median_log_mse_ratio: (!ratios.is_empty()).then(|| median(&ratios)),
            reference_policy: policy,
            manifest,
        };
        write_text(Some(path), &to_json(&summary))?;
    }
    Ok(())
}
