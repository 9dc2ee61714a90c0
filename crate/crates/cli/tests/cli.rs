use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use effalign::ingest::{ingest_survey, IngestMode};
use effalign::survey::load_catalog;
use effalign::AttributeSchema;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn effalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effalign")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Generates a small synthetic survey into `dir`.
fn synthetic(dir: &Path, cell_size: &str) {
    let out = effalign(&[
        "generate-synthetic",
        "--out",
        s(dir),
        "--countries",
        "USA,NGA",
        "--questions",
        "3",
        "--options",
        "4",
        "--cell-size",
        cell_size,
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}

fn data_flags(dir: &Path) -> Vec<String> {
    ["--survey", "survey.csv", "--catalog", "questions.json", "--schema", "schema.json", "--out", "."]
        .iter()
        .map(|a| match *a {
            "survey.csv" | "questions.json" | "schema.json" | "." => dir.join(a).display().to_string(),
            other => other.to_string(),
        })
        .collect()
}

fn run_with(cmd: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.to_string()];
    args.extend(data_flags(dir));
    args.extend(extra.iter().map(|a| a.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    effalign(&refs)
}

#[test]
fn ingest_accepts_a_valid_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = effalign(&[
        "ingest",
        "--survey",
        s(&fixture("survey.csv")),
        "--catalog",
        s(&fixture("questions.json")),
        "--out",
        s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report = read_json(&dir.path().join("ingest_report.json"));
    assert_eq!(report["ingest"]["records_kept"], 4);
    assert_eq!(report["ingest"]["missing_answers"], 1);
}

#[test]
fn ingest_names_a_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let out = effalign(&["ingest", "--survey", s(&missing), "--catalog", s(&fixture("questions.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains(s(&missing)), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn corrupt_rows_fail_strict_and_are_counted_when_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let (survey, catalog) = (fixture("corrupt.csv"), fixture("questions.json"));
    let base = ["ingest", "--survey", s(&survey), "--catalog", s(&catalog), "--out", s(dir.path())];
    let strict = effalign(&base);
    assert_eq!(strict.status.code(), Some(1));
    assert!(text(&strict.stderr).contains("line 3"), "{}", text(&strict.stderr));

    let mut lenient_args = base.to_vec();
    lenient_args.push("--lenient");
    let lenient = effalign(&lenient_args);
    assert!(lenient.status.success(), "{}", text(&lenient.stderr));
    let report = read_json(&dir.path().join("ingest_report.json"));
    assert_eq!(report["ingest"]["records_kept"], 2);
    assert_eq!(report["ingest"]["dropped"].as_array().unwrap().len(), 1);
}

#[test]
fn effect_table_has_one_row_per_supported_edit_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "12");
    let out = run_with("estimate-effects", dir.path(), &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let first = std::fs::read(dir.path().join("effects.csv")).unwrap();

    let schema = AttributeSchema::load(&dir.path().join("schema.json")).unwrap();
    let catalog = load_catalog(&dir.path().join("questions.json")).unwrap();
    let file = std::fs::File::open(dir.path().join("survey.csv")).unwrap();
    let (data, _) = ingest_survey(file, &schema, &catalog, IngestMode::Strict).unwrap();
    let expected = data.enumerate_contexts(10).len();
    let rows = text(&first).lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, expected);
    assert_eq!(expected, 2 * 3 * 32);

    assert!(run_with("estimate-effects", dir.path(), &[]).status.success());
    assert_eq!(std::fs::read(dir.path().join("effects.csv")).unwrap(), first);
}

#[test]
fn too_strict_support_is_an_empty_context_error() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "12");
    let out = run_with("estimate-effects", dir.path(), &["--min-support", "13"]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.starts_with("error[empty-contexts]"), "{err}");
    assert!(err.contains("--min-support"));
}

#[test]
fn gradcheck_passes_on_the_default_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let out = effalign(&["gradcheck", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report = read_json(&dir.path().join("gradcheck.json"));
    let worst = report["max_relative_error"].as_f64().unwrap();
    assert!(worst <= 1e-5, "{worst}");
    assert!(text(&out.stdout).contains("max_relative_error="));
}

#[test]
fn evaluate_rejects_two_model_sources() {
    let out = effalign(&["evaluate", "--checkpoint", "model.json", "--endpoint", "http://127.0.0.1:1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).starts_with("error[usage]"));
}

#[test]
fn the_survey_itself_is_fully_aligned() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "12");
    let out = run_with("diagnose", dir.path(), &["--empirical"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let counts = std::fs::read_to_string(dir.path().join("diagnosis_counts.csv")).unwrap();
    let mut rows = 0;
    for line in counts.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(&f[1..4], &["0", "0", "0"], "{line}");
        assert_eq!(f[4], f[5]);
        rows += 1;
    }
    assert_eq!(rows, 2);
}

#[test]
fn config_values_yield_to_flags_and_are_stamped_on_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "12");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 11\n\n[paths]\nsurvey = \"survey.csv\"\ncatalog = \"questions.json\"\nschema = \"schema.json\"\noutput = \"out\"\n\n[data]\nmin_support = 13\n",
    )
    .unwrap();
    let fails = effalign(&["estimate-effects", "--config", s(&config)]);
    assert_eq!(fails.status.code(), Some(1), "config min_support applies");

    let ok = effalign(&["estimate-effects", "--config", s(&config), "--min-support", "5", "--seed", "21"]);
    assert!(ok.status.success(), "{}", text(&ok.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/effects.csv")).unwrap();
    let preamble: Vec<&str> = csv.lines().take_while(|l| l.starts_with('#')).collect();
    assert!(preamble.iter().any(|l| l.starts_with("# config_hash=")));
    assert!(preamble.contains(&"# seed=21"));

    let again = effalign(&["estimate-effects", "--config", s(&config), "--min-support", "5", "--seed", "21"]);
    assert!(again.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("out/effects.csv")).unwrap(), csv);

    let other = effalign(&["estimate-effects", "--config", s(&config), "--min-support", "6", "--seed", "21"]);
    assert!(other.status.success());
    let changed = std::fs::read_to_string(dir.path().join("out/effects.csv")).unwrap();
    assert_ne!(changed.lines().next(), csv.lines().next());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "seed = 1\n[trainer]\nlearning_rat = 0.1\n").unwrap();
    let out = effalign(&["gradcheck", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("learning_rat"), "{}", text(&out.stderr));
}

#[test]
fn subcommands_compose_through_files() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "40");
    let train = run_with(
        "train",
        dir.path(),
        &["--epochs-stage1", "40", "--epochs-stage2", "60", "--holdout", "Female,College Educated,Urban,Married"],
    );
    assert!(train.status.success(), "{}", text(&train.stderr));
    let report = read_json(&dir.path().join("train_report.json"));
    assert!(report["held_out"]["contexts"].as_u64().unwrap() > 0, "{report}");
    let checkpoint = dir.path().join("checkpoint.json");
    let curve = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 1 + 100);

    let eval = run_with("evaluate", dir.path(), &["--checkpoint", s(&checkpoint), "--model-name", "fitted"]);
    assert!(eval.status.success(), "{}", text(&eval.stderr));
    let scores = dir.path().join("scores.csv");
    let baseline = run_with("sweep", dir.path(), &["--empirical", "--model-name", "survey"]);
    assert!(baseline.status.success(), "{}", text(&baseline.stderr));
    let sweep_scores = dir.path().join("sweep_scores.csv");
    let table = std::fs::read_to_string(&sweep_scores).unwrap();
    assert!(table.contains("survey,1,"));

    let tiers = dir.path().join("tiers.toml");
    std::fs::write(&tiers, "[tiers]\ngap = \"max_min_country\"\n[tiers.members]\nUSA = 1\nNGA = 3\n").unwrap();
    let equity = effalign(&[
        "equity-report",
        "--config",
        s(&tiers),
        "--scores",
        s(&scores),
        "--scores",
        s(&sweep_scores),
        "--baseline",
        "survey",
        "--out",
        s(dir.path()),
    ]);
    assert!(equity.status.success(), "{}", text(&equity.stderr));
    let report = read_json(&dir.path().join("equity_report.json"));
    let text_report = report.to_string();
    assert!(text_report.contains("fitted") && text_report.contains("survey"));
}

#[test]
fn equity_report_recomputes_gaps_from_a_score_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/country_scores.csv");
    let out = effalign(&["equity-report", "--scores", s(&table), "--baseline", "base", "--out", s(dir.path()), "--svg"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report = read_json(&dir.path().join("equity_report.json"));
    let base = report["models"].as_array().unwrap().iter().find(|m| m["model"] == "base").unwrap().clone();
    let g1 = base["per_granularity"][0]["gap"].as_f64().unwrap();
    assert!((g1 - 12.43).abs() <= 1e-9, "{g1}");
    assert!(dir.path().join("equity.svg").exists());
}

#[test]
fn synthetic_generation_is_seeded() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synthetic(a.path(), "3");
    synthetic(b.path(), "3");
    let read = |d: &Path| std::fs::read(d.join("survey.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}
