use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vtrim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtrim"))
        .args(args)
        .output()
        .expect("spawn vtrim")
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn fixtures() -> String {
    repo("../core/tests/fixtures/demo").display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn mock_trim_then_agent_evaluation() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("job");
    let out = out.to_str().unwrap();
    let fx = fixtures();

    let o = vtrim(&["trim", "--backend", "mock", "--fixtures", &fx, "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    for artifact in [
        "clips.json",
        "descriptions.jsonl",
        "verdicts.json",
        "saliency.json",
        "plan.json",
        "storyline.txt",
        "manifest.json",
    ] {
        assert!(Path::new(out).join(artifact).exists(), "{artifact} missing");
    }

    let o = vtrim(&["evaluate", "--mode", "agent", "--backend", "mock", "--fixtures", &fx, "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("average"), "{}", stdout(&o));
    assert!(Path::new(out).join("metrics/agent.json").exists());
}

#[test]
fn stage_order_is_enforced() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().to_str().unwrap();
    let o = vtrim(&["compose", "--backend", "mock", "--fixtures", &fixtures(), "--out", out]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing stage output"), "{}", stderr(&o));
}

#[test]
fn correlation_on_toy_scores() {
    let work = tempfile::tempdir().unwrap();
    let scores = repo("tests/data/toy_scores.json");
    let reports = work.path().join("reports");
    let o = vtrim(&[
        "evaluate",
        "--mode",
        "correlation",
        "--scores",
        scores.to_str().unwrap(),
        "--report-dir",
        reports.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    // Hand-computed: deviations give r = 8/10; two discordant pairs out of ten.
    assert!(table.contains("pearson_r      0.8000"), "{table}");
    assert!(table.contains("spearman_rho   0.8000"), "{table}");
    assert!(table.contains("kendall_tau_b  0.6000"), "{table}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("correlation.json")).unwrap()).unwrap();
    assert_eq!(json["mode"], "correlation");
}

#[test]
fn unknown_flag_is_rejected() {
    let o = vtrim(&["trim", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn missing_mode_input_is_reported() {
    let o = vtrim(&["evaluate", "--mode", "fidelity"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--final-emb"), "{}", stderr(&o));
}

#[test]
fn shipped_job_file_matches_demo() {
    let text = std::fs::read_to_string(repo("../core/tests/fixtures/demo/job.toml")).unwrap();
    let job: vtrim::pipeline::JobFile = toml::from_str(&text).unwrap();
    assert_eq!(job, vtrim::demo::job());
}
