use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn responses() -> String {
    fixtures().join("mock_responses.jsonl").display().to_string()
}

/// Runs the binary in `cwd` with a clean `CFI_*` environment.
fn cli(cwd: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cfinception"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("CFI_")) {
        cmd.env_remove(k);
    }
    cmd.current_dir(cwd).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn image_dir(root: &Path) -> PathBuf {
    let dir = root.join("images");
    std::fs::create_dir_all(&dir).unwrap();
    for name in ["img01.png", "img02.png", "img03.png"] {
        std::fs::copy(fixtures().join("images").join(name), dir.join(name)).unwrap();
    }
    dir
}

fn lines(path: impl AsRef<Path>) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn keywords_for_three_images() {
    let tmp = tempfile::tempdir().unwrap();
    image_dir(tmp.path());
    let o = cli(tmp.path(), &["keywords", "images", "--fixtures", &responses(), "--out", "runs"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(lines(tmp.path().join("runs/keywords/keywords.jsonl")), 3);
}

#[test]
fn unreadable_image_is_skipped_with_partial_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = image_dir(tmp.path());
    std::fs::write(dir.join("broken.png"), "not an image").unwrap();
    let o = cli(tmp.path(), &["keywords", "images", "--fixtures", &responses(), "--out", "runs"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("broken.png"), "{}", stderr(&o));
    assert_eq!(lines(tmp.path().join("runs/keywords/keywords.jsonl")), 3);
}

#[test]
fn appendix_profile_is_recorded_in_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    image_dir(tmp.path());
    let o =
        cli(tmp.path(), &["keywords", "images", "--fixtures", &responses(), "--out", "runs", "--profile", "appendix"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("runs/keywords/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["profile"], "appendix");
    assert_eq!(manifest["dvp"]["visual_mode"]["mode"], "absolute");
    assert_eq!(manifest["dvp"]["visual_mode"]["low"], 0.2);
    assert_eq!(manifest["dvp"]["visual_mode"]["high"], 0.8);
    assert_eq!(manifest["dvp"]["tau"], 0.8);
}

#[test]
fn rerunning_keywords_needs_resume() {
    let tmp = tempfile::tempdir().unwrap();
    image_dir(tmp.path());
    let args = ["keywords", "images", "--fixtures", &responses(), "--out", "runs"];
    assert_eq!(code(&cli(tmp.path(), &args)), 0);
    assert_eq!(code(&cli(tmp.path(), &args)), 1);
    let mut resumed = args.to_vec();
    resumed.push("--resume");
    let o = cli(tmp.path(), &resumed);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("0 keyword records written"));
    assert_eq!(lines(tmp.path().join("runs/keywords/keywords.jsonl")), 3);
}

fn pope() -> String {
    fixtures().join("mini_pope.jsonl").display().to_string()
}

#[test]
fn eval_on_mini_pope_reports_binary_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(tmp.path(), &["eval", &pope(), "--kind", "pope", "--fixtures", &responses(), "--out", "runs"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tsv = std::fs::read_to_string(tmp.path().join("runs/pope_adversarial/report/metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().next().unwrap(), "metric\tbaseline\tinception\tdelta(inception-baseline)");
    for metric in ["accuracy", "precision", "recall", "f1", "yes_ratio"] {
        assert!(tsv.lines().any(|l| l.starts_with(&format!("{metric}\t"))), "missing {metric}");
    }
    assert!(stdout(&o).contains("yes_ratio"));

    let again = cli(tmp.path(), &["report", "runs/pope_adversarial"]);
    assert_eq!(code(&again), 0);
    assert_eq!(std::fs::read_to_string(tmp.path().join("runs/pope_adversarial/report/metrics.tsv")).unwrap(), tsv);
}

#[test]
fn baseline_only_eval_has_no_delta_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(
        tmp.path(),
        &["eval", &pope(), "--kind", "pope", "--conditions", "baseline", "--fixtures", &responses(), "--out", "runs"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tsv = std::fs::read_to_string(tmp.path().join("runs/pope_adversarial/report/metrics.tsv")).unwrap();
    assert!(!tsv.contains("delta"));
}

#[test]
fn usage_errors_exit_64() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 6] = [
        &["eval", &pope(), "--kind", "pope", "--fixtures", "/nonexistent.jsonl"],
        &["eval", &pope(), "--kind", "nonsense", "--fixtures", &responses()],
        &["eval", &pope(), "--fixtures", &responses()],
        &["eval", &pope(), "--kind", "pope", "--conditions", "baseline,sideways", "--fixtures", &responses()],
        &["eval", &pope(), "--kind", "pope"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = cli(tmp.path(), args);
        assert_eq!(code(&o), 64, "{args:?}: {}", stderr(&o));
    }
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn credentials_in_config_files_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.conf"), "chat_api_key = sk-live-123\n").unwrap();
    let o = cli(tmp.path(), &["eval", &pope(), "--kind", "pope", "--config", "run.conf", "--dry-run"]);
    assert_eq!(code(&o), 64);
    assert!(!stderr(&o).contains("sk-live-123"));
    assert!(stderr(&o).contains("environment"));
}

#[test]
fn dry_run_plans_without_touching_backends_or_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(tmp.path(), &["eval", &pope(), "--kind", "pope", "--fixtures", &responses(), "--dry-run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for line in ["samples = 10", "keyword_calls = 5", "inference_calls = 20", "judge_calls = 0"] {
        assert!(out.contains(line), "missing {line:?} in\n{out}");
    }
    assert!(!tmp.path().join("runs").exists());

    image_dir(tmp.path());
    let o = cli(tmp.path(), &["keywords", "images", "--fixtures", &responses(), "--dry-run"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("keyword_calls = 3"));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn flags_beat_env_beat_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.conf"), "run_id = from-file\nparallelism = 2\n").unwrap();
    let base = ["eval", &pope(), "--kind", "pope", "--fixtures", &responses(), "--config", "run.conf", "--dry-run"];
    let resolved =
        |o: &Output, key: &str| stdout(o).lines().find(|l| l.starts_with(&format!("{key} "))).unwrap().to_string();

    let o = cli(tmp.path(), &base);
    assert!(resolved(&o, "run_id").contains("= from-file  # file"));
    assert!(resolved(&o, "parallelism").contains("= 2  # file"));

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cfinception"));
    let o = cmd.current_dir(tmp.path()).args(base).env("CFI_RUN_ID", "from-env").output().unwrap();
    assert!(resolved(&o, "run_id").contains("= from-env  # env"));

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cfinception"));
    let o = cmd
        .current_dir(tmp.path())
        .args(base)
        .args(["--run-id", "from-flag"])
        .env("CFI_RUN_ID", "from-env")
        .output()
        .unwrap();
    assert!(resolved(&o, "run_id").contains("= from-flag  # flag"));
    assert!(stdout(&o).contains("run_dir = runs/from-flag"));
}

#[test]
fn verify_then_trend_with_plot() {
    let tmp = tempfile::tempdir().unwrap();
    image_dir(tmp.path());
    let fx = responses();
    assert_eq!(code(&cli(tmp.path(), &["keywords", "images", "--fixtures", &fx, "--out", "runs"])), 0);

    let o = cli(tmp.path(), &["trend", "runs/keywords"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("incomplete run"), "{}", stderr(&o));

    let o = cli(tmp.path(), &["verify", "runs/keywords", "--fixtures", &fx]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(lines(tmp.path().join("runs/keywords/candidates.jsonl")), 3);
    assert_eq!(lines(tmp.path().join("runs/keywords/optimal.jsonl")), 3);

    let o = cli(tmp.path(), &["trend", "runs/keywords", "--plot", "trend.svg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Vec<Vec<String>> =
        stdout(&o).lines().skip(1).map(|l| l.split('\t').map(str::to_string).collect()).collect();
    // the aggregate row of each iteration is the mean of the per-image rows
    for iteration in 1..=5 {
        let it = iteration.to_string();
        let per_image: Vec<f64> =
            rows.iter().filter(|r| r[0] != "aggregate" && r[1] == it).map(|r| r[3].parse().unwrap()).collect();
        assert_eq!(per_image.len(), 3);
        let agg: f64 = rows.iter().find(|r| r[0] == "aggregate" && r[1] == it).unwrap()[3].parse().unwrap();
        let mean = per_image.iter().sum::<f64>() / 3.0;
        assert!((agg - mean).abs() < 1e-3, "iteration {iteration}: {agg} vs {mean}");
    }
    let svg = std::fs::read_to_string(tmp.path().join("trend.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 2);
}

#[test]
fn infer_answers_one_question() {
    let tmp = tempfile::tempdir().unwrap();
    let image = fixtures().join("images/img01.png").display().to_string();
    let o = cli(
        tmp.path(),
        &[
            "infer",
            "--image",
            &image,
            "--question",
            "Is there a dog in the image?",
            "--max-tokens",
            "64",
            "--baseline",
            "--fixtures",
            &responses(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(out["answer"].as_str().unwrap().starts_with("No"));
    assert!(out["baseline_answer"].as_str().unwrap().starts_with("Yes"));
    assert!(!out["counterfactual_keywords"].as_array().unwrap().is_empty());
}
