//! End-to-end tests of the `pama` binary: workflows, determinism, file
//! shapes, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pama(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pama"))
        .args(args)
        .current_dir(dir)
        .env("PAMA_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path.to_string_lossy().into_owned()
}

fn results_of(path: &Path) -> Value {
    let doc: Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    doc["results"].clone()
}

const RANKINGS: &str = "e1,e2,e3,e4,e5,e6\n1,2,3,4,5,6\n2,1,3,4,6,5\n1,3,2,5,4,6\n2,1,4,3,5,6\n";

fn fit_config(mode: &str, extra: &str) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "mode": "{mode}",
  "n1": 2,
  "rankings": "rankings.csv",
  "seed": 11,
  "chain": {{"iterations": 400, "burn_in": 200, "thin": 2}},
  "mle": {{"tol": 0.01}}{extra}
}}"#
    )
}

#[test]
fn fit_bayes_shapes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rankings.csv", RANKINGS);
    write(dir.path(), "cfg.json", &fit_config("fit-bayes", ",\n  \"write_samples\": true"));

    let out = pama(&["fit", "--config", "cfg.json", "--out", "run1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let doc: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run1/result.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["meta"]["n"], 6);
    assert_eq!(doc["meta"]["m"], 4);
    assert_eq!(doc["results"]["kind"], "bayes");
    assert_eq!(doc["results"]["gamma_bar"].as_array().unwrap().len(), 4);
    assert_eq!(doc["results"]["i_bar"].as_array().unwrap().len(), 6);
    assert_eq!(doc["results"]["aggregate"].as_array().unwrap().len(), 6);
    assert!(dir.path().join("run1/samples.csv").exists());
    assert!(dir.path().join("run1/log_post.csv").exists());

    // Same config and seed: byte-identical numeric payloads.
    let out2 = pama(&["fit", "--config", "cfg.json", "--out", "run2"], dir.path());
    assert!(out2.status.success());
    assert_eq!(
        serde_json::to_vec(&results_of(&dir.path().join("run1/result.json"))).unwrap(),
        serde_json::to_vec(&results_of(&dir.path().join("run2/result.json"))).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("run1/samples.csv")).unwrap(),
        std::fs::read(dir.path().join("run2/samples.csv")).unwrap()
    );

    // A different seed changes the numeric payloads.
    let out3 = pama(
        &["fit", "--config", "cfg.json", "--out", "run3", "--seed", "12"],
        dir.path(),
    );
    assert!(out3.status.success());
    assert_ne!(
        serde_json::to_vec(&results_of(&dir.path().join("run1/result.json"))).unwrap(),
        serde_json::to_vec(&results_of(&dir.path().join("run3/result.json"))).unwrap()
    );
}

#[test]
fn fit_mle_full_and_partial() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rankings.csv", RANKINGS);
    write(dir.path(), "cfg.json", &fit_config("fit-mle", ""));
    let out = pama(&["fit", "--config", "cfg.json", "--out", "mle"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = results_of(&dir.path().join("mle/result.json"));
    assert_eq!(res["kind"], "mle");
    assert_eq!(res["tied_from"], 2);
    assert_eq!(res["gamma_hat"].as_array().unwrap().len(), 4);
    assert_eq!(res["converged"], true);

    // Partial lists: empty cells auto-detected; the same command dispatches
    // to the augmented path.
    let partial = "e1,e2,e3,e4,e5,e6\n1,2,3,,4,\n2,1,,3,,4\n1,2,3,4,5,6\n";
    write(dir.path(), "partial.csv", partial);
    let cfg = fit_config("fit-mle", ",\n  \"write_samples\": false")
        .replace("rankings.csv", "partial.csv");
    write(dir.path(), "cfg_partial.json", &cfg);
    let out = pama(
        &["fit", "--config", "cfg_partial.json", "--out", "mle_partial"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("mle_partial/result.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["meta"]["partial_lists"], true);
}

#[test]
fn covariate_fit_reports_positive_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rankings.csv", RANKINGS);
    write(
        dir.path(),
        "cov.csv",
        "entity,strength,noise\ne1,2.0,0.3\ne2,1.8,0.1\ne3,0.2,0.9\ne4,0.1,0.4\ne5,0.0,0.2\ne6,0.3,0.6\n",
    );
    let cfg = format!(
        r#"{{
  "schema_version": 1,
  "mode": "fit-bayes",
  "model": "covariate",
  "n1": 2,
  "rankings": "rankings.csv",
  "covariates": "cov.csv",
  "seed": 5,
  "chain": {{"iterations": 400, "burn_in": 200, "thin": 2}}
}}"#
    );
    write(dir.path(), "cfg.json", &cfg);
    let out = pama(&["fit", "--config", "cfg.json", "--out", "cov"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = results_of(&dir.path().join("cov/result.json"));
    let psi = &res["psi"];
    assert_eq!(psi["names"], serde_json::json!(["strength", "noise"]));
    let probs = psi["positive_probability"].as_array().unwrap();
    assert_eq!(probs.len(), 2);
    for p in probs {
        let p = p.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn simulate_writes_replicates_and_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
  "schema_version": 1,
  "mode": "simulate",
  "scenario": {"family":"s_pm","a":2.5,"phi":0.6,"n":12,"m":6,"n1":3,"replicate_count":2,"seed":21}
}"#;
    write(dir.path(), "sim.json", cfg);
    let out = pama(&["simulate", "--config", "sim.json", "--out", "sim1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "rankings_0000.csv",
        "rankings_0001.csv",
        "truth_0000.json",
        "truth_0001.json",
        "manifest.json",
    ] {
        assert!(dir.path().join("sim1").join(name).exists(), "{name} missing");
    }
    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sim1/manifest.json")).unwrap(),
    )
    .unwrap();
    let reps = manifest["replicates"].as_array().unwrap();
    assert_eq!(reps.len(), 2);
    assert_ne!(reps[0]["seed"], reps[1]["seed"]);

    // Regenerating under the same master seed reproduces every file.
    let out = pama(&["simulate", "--config", "sim.json", "--out", "sim2"], dir.path());
    assert!(out.status.success());
    for name in ["rankings_0000.csv", "rankings_0001.csv", "truth_0001.json", "manifest.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("sim1").join(name)).unwrap(),
            std::fs::read(dir.path().join("sim2").join(name)).unwrap(),
            "{name} differs"
        );
    }

    // Simulated data feeds straight back into a fit.
    let fit_cfg = r#"{
  "schema_version": 1,
  "mode": "fit-mle",
  "n1": 3,
  "rankings": "sim1/rankings_0000.csv",
  "seed": 2
}"#;
    write(dir.path(), "fit.json", fit_cfg);
    let out = pama(&["fit", "--config", "fit.json", "--out", "fitout"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn benchmark_moment_method_and_external_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
  "schema_version": 1,
  "mode": "benchmark",
  "benchmark": {
    "scenarios": [{"name":"small","family":"s_pm","a":2.5,"phi":0.6,"n":12,"m":6,"n1":3,"replicate_count":5,"seed":3}],
    "methods": ["moment"],
    "external": [{"name":"baseline","path":"ext.csv"}]
  }
}"#;
    write(dir.path(), "bench.json", cfg);
    write(
        dir.path(),
        "ext.csv",
        "replicate,kappa_R,rho_R\n0,3.0,0.9\n1,2.0,1.0\n2,5.0,0.8\n3,1.0,1.0\n4,0.0,1.0\n",
    );
    let out = pama(&["benchmark", "--config", "bench.json", "--out", "rep"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let rows = std::fs::read_to_string(dir.path().join("rep/replicates.csv")).unwrap();
    // Header + 5 replicates x 2 methods.
    assert_eq!(rows.lines().count(), 11);
    let summary = std::fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.contains("moment"));
    assert!(summary.contains("external:baseline"));

    // An external file missing a replicate fails, naming one of the
    // missing ones (replicates run in parallel, so whichever is hit first).
    write(dir.path(), "ext.csv", "replicate,kappa_R,rho_R\n0,3.0,0.9\n");
    let out = pama(&["benchmark", "--config", "bench.json", "--out", "rep2"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("missing replicate") && stderr.contains("baseline"),
        "{stderr}"
    );
}

#[test]
fn exit_code_contract() {
    let dir = tempfile::tempdir().unwrap();

    // 0: success.
    write(dir.path(), "rankings.csv", RANKINGS);
    write(dir.path(), "ok.json", &fit_config("fit-mle", ""));
    let out = pama(&["fit", "--config", "ok.json", "--out", "ok"], dir.path());
    assert_eq!(out.status.code(), Some(0));

    // 1: validation failures, with a machine-readable error document.
    write(dir.path(), "dup.csv", "a,b,c\n1,1,2\n");
    let bad = fit_config("fit-mle", "").replace("rankings.csv", "dup.csv");
    write(dir.path(), "bad.json", &bad);
    let out = pama(&["fit", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["error"]["kind"], "validation");

    let out = pama(&["fit", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    // Mode/subcommand mismatch is also a validation error.
    let out = pama(&["simulate", "--config", "ok.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    // n1 larger than the universe.
    let too_big = fit_config("fit-mle", "").replace("\"n1\": 2", "\"n1\": 40");
    write(dir.path(), "toobig.json", &too_big);
    let out = pama(&["fit", "--config", "toobig.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn partial_policy_flag() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rankings.csv", "a,b,c\n1,,2\n1,2,3\n");
    write(dir.path(), "cfg.json", &fit_config("fit-mle", "").replace("\"n1\": 2", "\"n1\": 1"));
    // Policy `no` rejects files with empty cells.
    let out = pama(
        &["fit", "--config", "cfg.json", "--partial", "no"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    // Default (auto) accepts them.
    let out = pama(&["fit", "--config", "cfg.json", "--out", "p"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn documented_example_configs_stay_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Result<pama_cli::config::RunConfig, _> = serde_json::from_str(&text);
        assert!(parsed.is_ok(), "{} no longer parses: {:?}", path.display(), parsed.err());
        seen += 1;
    }
    assert!(seen >= 4, "expected the documented example configs, found {seen}");
}

#[test]
fn check_command_passes_and_reports_runtimes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pama(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in [
        "likelihood-normalization",
        "mallows-z-bruteforce",
        "derivative-finite-difference",
        "sampler-tv",
    ] {
        assert!(stdout.contains(name), "missing check `{name}`:\n{stdout}");
    }
    // Each line carries a runtime.
    assert!(stdout.contains("s ") || stdout.contains("ms"), "{stdout}");
}
