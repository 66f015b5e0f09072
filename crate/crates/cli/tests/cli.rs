use std::path::Path;
use std::process::{Command, Output};

use dirvr::instances::{
    gen_interior_instance, save_corpus, save_topic_matrix, CorpusDocument, GeneratorConfig, InstanceBundle,
};
use dirvr::simplex::{RandomStream, SimplexPoint};
use serde_json::Value;

fn dirvr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirvr"))
        .args(args)
        .env_remove("DIRVR_SEED")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = dirvr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    dirvr(args).status.code().unwrap()
}

fn interior_file(dir: &Path, k: usize, seed: u64) -> String {
    let cfg = GeneratorConfig {
        k,
        v: 200,
        seed,
        ..Default::default()
    };
    let path = dir.join(format!("interior-{k}-{seed}.json"));
    InstanceBundle::from_planted(&gen_interior_instance(&cfg, cfg.stream()).unwrap()).save(&path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generated_boundary_instance_is_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.json");
    let p = path.to_str().unwrap();
    let out = dirvr(&["gen-instance", "--K", "5", "--V", "1000", "--m", "1", "--seed", "7", "--out", p]);
    assert!(out.status.success());
    let file: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(file["active_set"], serde_json::json!([0]));
    assert_eq!(file["report"]["active_set"], serde_json::json!([0]));
    assert_eq!(file["manifest"]["seed"], 7);

    let kkt = ok_json(&["check-kkt", "--instance", p]);
    assert_eq!(kkt["planted"]["active_set_matches"], true);
    assert!(kkt["planted"]["max_lambda_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(kkt["cover"]["monotone"], true);
}

#[test]
fn generated_interior_instance_has_no_active_set() {
    let file = ok_json(&["gen-instance", "--K", "5", "--m", "0", "--seed", "1"]);
    assert_eq!(file["report"]["m"], 0);
}

#[test]
fn exit_codes_follow_the_error_category() {
    assert_eq!(code(&["gen-instance", "--K", "2", "--m", "2"]), 2);
    assert_eq!(code(&["check-kkt", "--instance", "/nonexistent/instance.json"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let inst = interior_file(dir.path(), 3, 2);
    // a KKT tolerance no floating-point maximizer can meet
    assert_eq!(code(&["check-kkt", "--instance", &inst, "--kkt-tol", "1e-300"]), 3);
}

#[test]
fn unstable_gamma_needs_the_override() {
    let dir = tempfile::tempdir().unwrap();
    let inst = interior_file(dir.path(), 3, 3);
    let base = ["estimate", "--instance", &inst, "--method", "is", "--gamma", "1.0", "--n", "100", "--N", "2000"];
    assert_eq!(code(&base), 2);
    let mut args = base.to_vec();
    args.push("--allow-unstable-gamma");
    assert!(dirvr(&args).status.success());
}

#[test]
fn method_flag_mismatches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let inst = interior_file(dir.path(), 3, 4);
    assert_eq!(code(&["estimate", "--instance", &inst, "--method", "mc", "--gamma", "0.5"]), 2);
    assert_eq!(code(&["estimate", "--instance", &inst, "--method", "cv", "--epsilon", "0.2"]), 2);
    assert_eq!(code(&["estimate", "--instance", &inst, "--method", "is", "--cv-mode", "pilot"]), 2);
    assert_eq!(code(&["estimate", "--instance", &inst, "--method", "is", "--alpha", "1,2"]), 2);
}

#[test]
fn zero_length_document_estimates_one() {
    let dir = tempfile::tempdir().unwrap();
    let inst = interior_file(dir.path(), 3, 5);
    let out = ok_json(&["estimate", "--instance", &inst, "--method", "mc", "--n", "0", "--N", "1000"]);
    assert_eq!(out["estimate"]["log_mean"].as_f64().unwrap(), 0.0);
}

#[test]
fn estimates_are_reproducible_and_cv_reports_its_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let inst = interior_file(dir.path(), 3, 6);
    let args = ["estimate", "--instance", &inst, "--method", "cv", "--n", "500", "--N", "5000", "--seed", "11"];
    let a = dirvr(&args);
    let b = dirvr(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let cv = &v["control_variate"];
    assert!(cv["log_abs_coefficient"].is_number());
    let rho = cv["rho_squared"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rho));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let inst = interior_file(dir.path(), 3, 7);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, format!(r#"{{"instance": "{inst}", "method": "mc", "N": 3000, "n": 50, "seed": 4}}"#)).unwrap();
    let c = cfg.to_str().unwrap();
    let v = ok_json(&["--config", c, "estimate", "--N", "1500"]);
    assert_eq!(v["estimate"]["num_samples"], 1500);
    assert_eq!(v["n"], 50.0);
    assert_eq!(v["manifest"]["seed"], 4);
    assert_eq!(v["manifest"]["config"]["N"], 1500);

    std::fs::write(&cfg, r#"{"method": "mc", "N_typo": 3}"#).unwrap();
    assert_eq!(code(&["--config", c, "estimate", "--instance", &inst]), 2);
    std::fs::write(&cfg, "[1, 2]").unwrap();
    assert_eq!(code(&["--config", c, "estimate", "--instance", &inst, "--method", "mc"]), 2);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let inst = interior_file(dir.path(), 3, 8);
    let run = |env: Option<&str>, extra: &[&str]| -> Value {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dirvr"));
        cmd.args(["estimate", "--instance", &inst, "--method", "mc", "--N", "500"]).args(extra);
        match env {
            Some(s) => cmd.env("DIRVR_SEED", s),
            None => cmd.env_remove("DIRVR_SEED"),
        };
        serde_json::from_slice(&cmd.output().unwrap().stdout).unwrap()
    };
    assert_eq!(run(None, &[])["manifest"]["seed"], 0);
    assert_eq!(run(Some("42"), &[])["manifest"]["seed"], 42);
    assert_eq!(run(Some("42"), &["--seed", "3"])["manifest"]["seed"], 3);
}

#[test]
fn timestamps_are_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let inst = interior_file(dir.path(), 3, 9);
    let plain = ok_json(&["check-kkt", "--instance", &inst]);
    assert!(plain["manifest"].get("started_unix_ms").is_none());
    let stamped = ok_json(&["--timestamps", "check-kkt", "--instance", &inst]);
    assert!(stamped["manifest"]["started_unix_ms"].is_u64());
}

#[test]
fn mse_ratio_experiment_reports_slopes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mse");
    let o = out.to_str().unwrap();
    let args = [
        "experiment", "--kind", "mse-ratio", "--K", "5", "--m", "0", "--gamma", "0.9", "--alpha", "0.1", "--count", "2",
        "--N", "2000", "--out-dir", o, "--emit-svg", "--emit-gnuplot",
    ];
    let run = dirvr(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let slope = &summary["slopes"][0];
    assert!((slope["median_theoretical_slope"].as_f64().unwrap() + 1.8).abs() < 1e-12);
    assert!(slope["median_fitted_slope"].as_f64().unwrap() < 0.0);
    assert_eq!(summary["manifest"]["reference_policy"], "high-precision-is");

    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# manifest {"));
    assert_eq!(lines.next().unwrap(), "instance_id,n,quantity,value,reference_policy");
    assert!(lines.all(|l| l.split(',').count() == 5));
    for f in ["plot.svg", "plot.gp", "plot.dat"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn slope_fitting_needs_five_grid_points() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("x");
    let args = ["experiment", "--kind", "mse-ratio", "--count", "1", "--n-grid", "100,200,400,800", "--out-dir", o.to_str().unwrap()];
    assert_eq!(code(&args), 2);
}

#[test]
fn cv_correlation_and_bias_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("cv");
    let args = ["experiment", "--kind", "cv-correlation", "--count", "2", "--N", "3000", "--out-dir", o.to_str().unwrap()];
    assert!(dirvr(&args).status.success());
    let s: Value = serde_json::from_str(&std::fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    let cells = s["cells"].as_array().unwrap();
    assert!(cells.iter().any(|c| c["quantity"] == "log_one_minus_gap"));

    let o = dir.path().join("bias");
    let args = ["experiment", "--kind", "bias", "--count", "2", "--N", "3000", "--alpha", "0.1", "--out-dir", o.to_str().unwrap()];
    assert!(dirvr(&args).status.success());
    let s: Value = serde_json::from_str(&std::fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    let zero = s["zero_truncation"].as_array().unwrap();
    assert_eq!(zero.len(), 5);
    assert!(zero.iter().all(|z| (0.0..=1.0).contains(&z["fraction"].as_f64().unwrap())));
}

#[test]
fn sparsity_sweep_summarizes_levels() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("sp");
    let args = [
        "experiment", "--kind", "sparsity", "--count", "2", "--N", "3000", "--epsilon-grid", "1e-7,0.5,2", "--out-dir",
        o.to_str().unwrap(),
    ];
    assert!(dirvr(&args).status.success());
    let s: Value = serde_json::from_str(&std::fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["sparsity_levels"].as_array().unwrap().len(), 3);
    assert!(s["sparsity_spearman"].as_f64().unwrap() < 0.0);
}

/// Writes `topics.json` and a corpus whose first document equals topic 1.
fn corpus_files(dir: &Path, lengths: &[u64]) -> (String, String) {
    let cfg = GeneratorConfig {
        k: 3,
        v: 150,
        phi_prior: 1.0,
        seed: 21,
        ..Default::default()
    };
    let planted = gen_interior_instance(&cfg, cfg.stream()).unwrap();
    let mut rng = RandomStream::new(22).rng();
    let docs: Vec<CorpusDocument> = lengths
        .iter()
        .map(|&len| CorpusDocument::sample(planted.instance.phi(), planted.theta_star.coords(), len, &mut rng).unwrap())
        .collect();
    let mut topics: Vec<SimplexPoint> = planted.instance.phi().to_vec();
    topics[1] = docs[0].frequencies(150).unwrap();
    let t = dir.join("topics.json");
    let c = dir.join("corpus.jsonl");
    save_topic_matrix(&t, &topics).unwrap();
    save_corpus(&c, &docs).unwrap();
    (t.to_str().unwrap().to_string(), c.to_str().unwrap().to_string())
}

#[test]
fn corpus_document_equal_to_a_topic() {
    let dir = tempfile::tempdir().unwrap();
    let (t, c) = corpus_files(dir.path(), &[300, 80]);
    let args = ["eval-corpus", "--topics", &t, "--corpus", &c, "--N", "2000", "--seed", "5"];
    let a = dirvr(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, dirvr(&args).stdout);

    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# manifest {"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| first[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("m"), "2");
    let topics = dirvr::instances::load_topic_matrix(Path::new(&t)).unwrap();
    let entropy: f64 = -topics[1].iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
    assert!((col("h_at_star").parse::<f64>().unwrap() + entropy).abs() < 1e-9);
}

#[test]
fn longer_documents_gain_more_from_importance_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let (t, c) = corpus_files(dir.path(), &[10, 50, 100, 200, 400, 800, 1600, 3200]);
    let summary = dir.path().join("summary.json");
    let csv = dir.path().join("docs.csv");
    let args = [
        "eval-corpus", "--topics", &t, "--corpus", &c, "--N", "5000", "--methods", "is", "--summary",
        summary.to_str().unwrap(), "--out", csv.to_str().unwrap(),
    ];
    let out = dirvr(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert!(s["length_ratio_spearman"].as_f64().unwrap() < 0.0, "{s}");
}
