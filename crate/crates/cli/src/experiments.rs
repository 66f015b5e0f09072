//! Experiment sweeps. Each instance (or sparsity level) is an independent cell
//! with its own seed, run in parallel and collected in input order.

use std::path::Path;

use anyhow::{Context, Result};
use dirvr::estimators::{
    bias_diagnostic, empirical_rho_squared, mse_ratio_experiment_multi, EstimatorConfig, ExperimentTarget,
    MseExperimentResult, ReferencePolicy, RhoSampling,
};
use dirvr::instances::{gen_boundary_instance, gen_interior_instance, GeneratorConfig};
use dirvr::laplace::{limiting_rho_squared, sparsity_report, SparsityReport};
use dirvr::maximizer::{maximize, CoverConfig, MaximizerReport};
use dirvr::objectives::{KlObjective, LdaInstance};
use dirvr::simplex::{DirichletParams, RandomStream};
use dirvr::stats::{interquartile, mean, median, spearman};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{ExperimentArgs, ExperimentKind};
use crate::commands::{alpha_params, estimator_config, load_bundle, sparsity_instance, DEFAULT_ALPHA};
use crate::config::{resolve_seed, RunContext, RunManifest};
use crate::output::{rows_to_csv, summarize_rows, to_json, write_text, CellSummary, Row};
use crate::plot::{write_gnuplot, write_svg};
use crate::usage;

/// Generated instance `i` uses stream `GEN_STREAM_BASE + i` of the run seed,
/// away from the streams the estimators derive from the same seed.
pub const GEN_STREAM_BASE: u64 = 1 << 40;

pub const DEFAULT_SPARSITY_LEVELS: [f64; 8] = [1e-7, 1e-5, 1e-3, 0.1, 0.5, 1.0, 2.0, 5.0];

/// An instance with its maximizer.
#[derive(Debug, Clone)]
pub struct ExperimentInstance {
    pub id: String,
    pub instance: LdaInstance,
    pub report: MaximizerReport,
}

impl ExperimentInstance {
    pub fn new(id: String, instance: LdaInstance) -> Result<Self> {
        let (_, report) = maximize(&instance, &CoverConfig::default())?;
        Ok(Self { id, instance, report })
    }

    pub fn target(&self) -> ExperimentTarget<'_> {
        ExperimentTarget {
            objective: &self.instance,
            report: &self.report,
            closed_form: None,
        }
    }

    pub fn surrogate(&self) -> KlObjective {
        KlObjective::new(self.report.theta_star.clone(), self.report.h_at_star)
    }
}

/// `count` points from `lo` to `hi` evenly spaced in log scale, rounded to integers.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo.round()];
    }
    (0..count)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).round())
        .collect()
}

/// Planted instances `0..count` from one generator configuration.
pub fn generate_instances(cfg: &GeneratorConfig, count: usize) -> Result<Vec<ExperimentInstance>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let stream = RandomStream::with_stream(cfg.seed, GEN_STREAM_BASE + i as u64);
            let planted = if cfg.m == 0 {
                gen_interior_instance(cfg, stream)?
            } else {
                gen_boundary_instance(cfg, stream)?
            };
            ExperimentInstance::new(format!("gen-{i}"), planted.instance)
        })
        .collect()
}

/// Rows and slope fits of the MSE-ratio sweep on one instance.
pub fn mse_ratio_cell(
    inst: &ExperimentInstance,
    alpha: &DirichletParams,
    n_grid: &[f64],
    cfg_mc: &EstimatorConfig,
    cfg_is: &[EstimatorConfig],
    policy: ReferencePolicy,
) -> Result<(Vec<Row>, Vec<MseExperimentResult>)> {
    let results = mse_ratio_experiment_multi(&inst.target(), alpha, n_grid, cfg_mc, cfg_is, policy)?;
    let mut rows = Vec::new();
    let p = policy.as_str();
    for (j, res) in results.iter().enumerate() {
        for pt in &res.points {
            if j == 0 {
                rows.push(Row::new(&inst.id, pt.n, "log_reference", pt.log_reference, p));
                rows.push(Row::new(&inst.id, pt.n, "log_mse_mc", pt.log_mse_mc, p));
            }
            let g = res.gamma;
            rows.push(Row::new(&inst.id, pt.n, format!("log_mse_is[gamma={g}]"), pt.log_mse_is, p));
            rows.push(Row::new(&inst.id, pt.n, format!("log_mse_ratio[gamma={g}]"), pt.log_mse_ratio, p));
            rows.push(Row::new(&inst.id, pt.n, format!("log_bias_sq[gamma={g}]"), pt.log_bias_sq, p));
            rows.push(Row::new(&inst.id, pt.n, format!("truncated_fraction[gamma={g}]"), pt.truncated_fraction, p));
        }
    }
    Ok((rows, results))
}

/// Empirical and limiting squared correlation of `e^{nH}` with `e^{nĤ}`.
pub fn cv_correlation_cell(
    inst: &ExperimentInstance,
    alpha: &DirichletParams,
    n_grid: &[f64],
    cfg: &EstimatorConfig,
    sampling: RhoSampling,
) -> Result<Vec<Row>> {
    let kl = inst.surrogate();
    let limit = limiting_rho_squared(&inst.report, alpha)?;
    let mut rows = Vec::new();
    for &n in n_grid {
        let est = empirical_rho_squared(&inst.instance, &kl, alpha, n, cfg, sampling)?;
        rows.push(Row::new(&inst.id, n, "rho_squared", est.rho_squared, "none"));
        rows.push(Row::new(&inst.id, n, "one_minus_rho_squared", est.one_minus, "none"));
        rows.push(Row::new(&inst.id, n, "limiting_rho_squared", limit, "none"));
        rows.push(Row::new(&inst.id, n, "log_one_minus_gap", est.one_minus.ln() - (-limit).ln_1p(), "none"));
    }
    Ok(rows)
}

pub fn bias_cell(
    inst: &ExperimentInstance,
    alpha: &DirichletParams,
    n_grid: &[f64],
    cfg: &EstimatorConfig,
    policy: ReferencePolicy,
) -> Result<Vec<Row>> {
    let p = policy.as_str();
    let mut rows = Vec::new();
    for pt in bias_diagnostic(&inst.target(), alpha, n_grid, cfg, policy)? {
        rows.push(Row::new(&inst.id, pt.n, "log_bias_ratio", pt.log_ratio, p));
        rows.push(Row::new(&inst.id, pt.n, "zero_truncation", f64::from(u8::from(pt.zero_truncation)), p));
        rows.push(Row::new(&inst.id, pt.n, "truncated_fraction", pt.truncated_fraction, p));
    }
    Ok(rows)
}

/// One document of the sparsity sweep whose maximizer is interior.
#[derive(Debug, Clone, Serialize)]
pub struct SparsityRun {
    pub attempt: usize,
    pub rho_squared: f64,
    pub one_minus_rho_squared: f64,
    pub limiting_rho_squared: f64,
    pub sparsity: SparsityReport,
}

/// Builds a sparsity-controlled instance and measures `ρ̂²`. Returns `None`
/// when the maximizer lies on the boundary, where the sparsity bound says nothing.
pub fn sparsity_run(
    k: usize,
    v: usize,
    target: f64,
    n: u64,
    alpha: &DirichletParams,
    cfg: &EstimatorConfig,
    sampling: RhoSampling,
    stream: RandomStream,
) -> Result<Option<(SparsityRun, ExperimentInstance)>> {
    let inst = ExperimentInstance::new(String::new(), sparsity_instance(k, v, target, n, stream)?)?;
    if inst.report.m > 0 {
        return Ok(None);
    }
    let sparsity = sparsity_report(&inst.instance, &inst.report)?;
    let est = empirical_rho_squared(&inst.instance, &inst.surrogate(), alpha, n as f64, cfg, sampling)?;
    let run = SparsityRun {
        attempt: 0,
        rho_squared: est.rho_squared,
        one_minus_rho_squared: est.one_minus,
        limiting_rho_squared: limiting_rho_squared(&inst.report, alpha)?,
        sparsity,
    };
    Ok(Some((run, inst)))
}

#[derive(Debug, Clone)]
pub struct SparsitySweep {
    pub k: usize,
    pub v: usize,
    pub n: u64,
    pub alpha: DirichletParams,
    pub levels: Vec<f64>,
    /// interior runs kept per level
    pub runs_per_level: usize,
    pub max_attempts: usize,
    pub cfg: EstimatorConfig,
    pub sampling: RhoSampling,
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityLevel {
    pub epsilon: f64,
    pub attempts: usize,
    pub runs: Vec<SparsityRun>,
    pub mean_rho_squared: Option<f64>,
    /// runs where the bound applies and `ρ̂²` falls below it
    pub bound_violations: usize,
    pub bound_applicable: usize,
}

impl SparsitySweep {
    /// Document `t` at level `j` uses stream `(seed, j·max_attempts + t)` and
    /// estimator seed `seed + j·max_attempts + t`.
    pub fn run(&self) -> Result<Vec<SparsityLevel>> {
        let seed = self.cfg.seed;
        self.levels
            .par_iter()
            .enumerate()
            .map(|(j, &eps)| {
                let mut runs = Vec::new();
                let mut attempts = 0;
                while runs.len() < self.runs_per_level && attempts < self.max_attempts {
                    let idx = (j * self.max_attempts + attempts) as u64;
                    let cfg = EstimatorConfig {
                        seed: seed.wrapping_add(idx),
                        ..self.cfg
                    };
                    let stream = RandomStream::with_stream(seed, GEN_STREAM_BASE + idx);
                    if let Some((mut r, _)) =
                        sparsity_run(self.k, self.v, eps, self.n, &self.alpha, &cfg, self.sampling, stream)?
                    {
                        r.attempt = attempts;
                        runs.push(r);
                    }
                    attempts += 1;
                }
                let rho: Vec<f64> = runs.iter().map(|r| r.rho_squared).collect();
                let applicable: Vec<&SparsityRun> = runs.iter().filter(|r| r.sparsity.applicable).collect();
                Ok(SparsityLevel {
                    epsilon: eps,
                    attempts,
                    mean_rho_squared: (!rho.is_empty()).then(|| mean(&rho)),
                    bound_violations: applicable
                        .iter()
                        .filter(|r| r.sparsity.lower_bound.is_some_and(|b| r.rho_squared < b))
                        .count(),
                    bound_applicable: applicable.len(),
                    runs,
                })
            })
            .collect()
    }
}

/// Spearman coefficient of sparsity level against mean `ρ̂²` over the levels
/// that produced at least one interior run.
pub fn sparsity_trend(levels: &[SparsityLevel]) -> Option<f64> {
    let (eps, rho): (Vec<f64>, Vec<f64>) =
        levels.iter().filter_map(|l| l.mean_rho_squared.map(|r| (l.epsilon, r))).unzip();
    (eps.len() >= 2).then(|| spearman(&eps, &rho))
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeSummary {
    pub gamma: f64,
    pub median_fitted_slope: f64,
    pub q1: f64,
    pub q3: f64,
    pub median_theoretical_slope: f64,
    pub fitted_slopes: Vec<f64>,
    pub theoretical_slopes: Vec<f64>,
}

pub fn slope_summary(gamma: f64, fits: &[&MseExperimentResult]) -> SlopeSummary {
    let fitted: Vec<f64> = fits.iter().map(|r| r.fitted_slope).collect();
    let theory: Vec<f64> = fits.iter().map(|r| r.theoretical_slope).collect();
    let (q1, q3) = interquartile(&fitted);
    SlopeSummary {
        gamma,
        median_fitted_slope: median(&fitted),
        q1,
        q3,
        median_theoretical_slope: median(&theory),
        fitted_slopes: fitted,
        theoretical_slopes: theory,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroTruncation {
    pub n: f64,
    pub fraction: f64,
}

#[derive(Serialize)]
struct ExperimentSummary {
    kind: ExperimentKind,
    instances: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_policy: Option<ReferencePolicy>,
    cells: Vec<CellSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slopes: Option<Vec<SlopeSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_truncation: Option<Vec<ZeroTruncation>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sparsity_levels: Option<Vec<SparsityLevel>>,
    /// Spearman coefficient of sparsity level against mean squared correlation
    #[serde(skip_serializing_if = "Option::is_none")]
    sparsity_spearman: Option<f64>,
    manifest: RunManifest,
}

fn parse_rho_sampling(s: Option<&str>) -> Result<RhoSampling> {
    let s = s.unwrap_or("weighted");
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| usage(format!("unknown correlation sampling '{s}' (prior, weighted or auto)")))
}

fn default_grid(kind: ExperimentKind) -> Vec<f64> {
    match kind {
        ExperimentKind::MseRatio => geometric_grid(1e3, 1.5e4, 8),
        ExperimentKind::CvCorrelation => vec![1e3, 1e4],
        ExperimentKind::Bias => vec![25.0, 50.0, 100.0, 200.0, 1000.0],
        ExperimentKind::Sparsity => vec![1e3],
    }
}

fn experiment_instances(a: &ExperimentArgs, seed: u64) -> Result<Vec<ExperimentInstance>> {
    if let Some(paths) = &a.instances {
        return paths
            .par_iter()
            .map(|p| {
                let (_, inst) = load_bundle(p)?;
                ExperimentInstance::new(p.display().to_string(), inst)
            })
            .collect();
    }
    let d = GeneratorConfig::default();
    let cfg = GeneratorConfig {
        k: a.k.unwrap_or(d.k),
        v: a.v.unwrap_or(d.v),
        phi_prior: a.phi_prior.unwrap_or(d.phi_prior),
        m: a.m.unwrap_or(d.m),
        lambda_min: a.lambda_min.unwrap_or(d.lambda_min),
        lambda_max: a.lambda_max.unwrap_or(d.lambda_max),
        seed,
        ..d
    };
    generate_instances(&cfg, a.count.unwrap_or(20))
}

fn seeded(cfg: &EstimatorConfig, seed: u64, i: usize) -> EstimatorConfig {
    EstimatorConfig {
        seed: seed.wrapping_add(i as u64),
        ..*cfg
    }
}

pub fn experiment(a: &ExperimentArgs, ctx: &RunContext, name: &str) -> Result<()> {
    let kind = *crate::commands::required(&a.kind, "kind")?;
    let out_dir = crate::commands::required(&a.out_dir, "out-dir")?;
    let seed = resolve_seed(a.sampling.seed)?;
    let n_grid = a.n_grid.clone().unwrap_or_else(|| default_grid(kind));
    let base = estimator_config(&a.sampling, seed)?;
    let policy: ReferencePolicy = a.reference.as_deref().unwrap_or("high-precision-is").parse()?;
    let gammas = a.sampling.gamma.clone().unwrap_or_else(|| vec![base.gamma]);
    let sampling = parse_rho_sampling(a.rho_sampling.as_deref())?;
    let mut manifest = ctx.manifest(name, a, seed);
    if matches!(kind, ExperimentKind::MseRatio | ExperimentKind::Bias) {
        manifest.reference_policy = Some(policy);
    }
    let mut summary = ExperimentSummary {
        kind,
        instances: 0,
        reference_policy: None,
        cells: Vec::new(),
        slopes: None,
        zero_truncation: None,
        sparsity_levels: None,
        sparsity_spearman: None,
        manifest: manifest.clone(),
    };

    let rows: Vec<Row> = match kind {
        ExperimentKind::Sparsity => {
            let k = a.k.unwrap_or(10);
            let sweep = SparsitySweep {
                k,
                v: a.v.unwrap_or(1000),
                n: n_grid.first().copied().unwrap_or(1e3) as u64,
                alpha: alpha_params(a.sampling.alpha.as_deref(), k, DEFAULT_ALPHA)?,
                levels: a.epsilon_grid.clone().unwrap_or_else(|| DEFAULT_SPARSITY_LEVELS.to_vec()),
                runs_per_level: a.count.unwrap_or(6),
                max_attempts: a.max_attempts.unwrap_or(40),
                cfg: base,
                sampling,
            };
            let levels = sweep.run()?;
            let mut rows = Vec::new();
            for (j, level) in levels.iter().enumerate() {
                for r in &level.runs {
                    let id = format!("level{j}-doc{}", r.attempt);
                    let n = sweep.n as f64;
                    rows.push(Row::new(&id, n, "epsilon", r.sparsity.epsilon, "none"));
                    rows.push(Row::new(&id, n, "rho_squared", r.rho_squared, "none"));
                    rows.push(Row::new(&id, n, "limiting_rho_squared", r.limiting_rho_squared, "none"));
                    if let Some(b) = r.sparsity.lower_bound {
                        rows.push(Row::new(&id, n, "lower_bound", b, "none"));
                    }
                }
            }
            summary.instances = levels.iter().map(|l| l.runs.len()).sum();
            summary.sparsity_spearman = sparsity_trend(&levels);
            summary.sparsity_levels = Some(levels);
            rows
        }
        _ => {
            let instances = experiment_instances(a, seed)?;
            let alpha_for = |inst: &ExperimentInstance| {
                alpha_params(a.sampling.alpha.as_deref(), inst.instance.num_topics(), DEFAULT_ALPHA)
            };
            summary.instances = instances.len();
            match kind {
                ExperimentKind::MseRatio => {
                    let n_mc = a.num_samples_mc.unwrap_or(base.num_samples);
                    let cells: Vec<(Vec<Row>, Vec<MseExperimentResult>)> = instances
                        .par_iter()
                        .enumerate()
                        .map(|(i, inst)| {
                            let cfg = seeded(&base, seed, i);
                            let cfg_mc = EstimatorConfig { num_samples: n_mc, ..cfg };
                            let cfg_is: Vec<EstimatorConfig> =
                                gammas.iter().map(|&gamma| EstimatorConfig { gamma, ..cfg }).collect();
                            mse_ratio_cell(inst, &alpha_for(inst)?, &n_grid, &cfg_mc, &cfg_is, policy)
                        })
                        .collect::<Result<_>>()?;
                    summary.reference_policy = Some(policy);
                    summary.slopes = Some(
                        gammas
                            .iter()
                            .enumerate()
                            .map(|(j, &g)| slope_summary(g, &cells.iter().map(|c| &c.1[j]).collect::<Vec<_>>()))
                            .collect(),
                    );
                    cells.into_iter().flat_map(|c| c.0).collect()
                }
                ExperimentKind::CvCorrelation => {
                    let cells: Vec<Vec<Row>> = instances
                        .par_iter()
                        .enumerate()
                        .map(|(i, inst)| cv_correlation_cell(inst, &alpha_for(inst)?, &n_grid, &seeded(&base, seed, i), sampling))
                        .collect::<Result<_>>()?;
                    cells.concat()
                }
                ExperimentKind::Bias => {
                    let cells: Vec<Vec<Row>> = instances
                        .par_iter()
                        .enumerate()
                        .map(|(i, inst)| bias_cell(inst, &alpha_for(inst)?, &n_grid, &seeded(&base, seed, i), policy))
                        .collect::<Result<_>>()?;
                    let rows = cells.concat();
                    summary.reference_policy = Some(policy);
                    summary.zero_truncation = Some(
                        n_grid
                            .iter()
                            .map(|&n| {
                                let z: Vec<f64> = rows
                                    .iter()
                                    .filter(|r| r.n == n && r.quantity == "zero_truncation")
                                    .map(|r| r.value)
                                    .collect();
                                ZeroTruncation { n, fraction: mean(&z) }
                            })
                            .collect(),
                    );
                    rows
                }
                ExperimentKind::Sparsity => unreachable!(),
            }
        }
    };

    summary.cells = summarize_rows(&rows);
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    write_text(Some(&out_dir.join("results.csv")), &rows_to_csv(&manifest, &rows)?)?;
    write_text(Some(&out_dir.join("summary.json")), &to_json(&summary))?;
    emit_plots(a, out_dir, kind, &summary.cells)
}

fn emit_plots(a: &ExperimentArgs, out_dir: &Path, kind: ExperimentKind, cells: &[CellSummary]) -> Result<()> {
    let title = serde_json::to_value(kind)?.as_str().unwrap_or_default().to_string();
    if a.emit_gnuplot {
        write_gnuplot(out_dir, &title, cells)?;
    }
    if a.emit_svg {
        write_svg(&out_dir.join("plot.svg"), &title, cells)?;
    }
    Ok(())
}
