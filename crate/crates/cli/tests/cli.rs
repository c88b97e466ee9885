use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use behavior_gap::simgen::{generate, Assistant, CannedAssistant, GenerationConfig, GoalSpec, PersonaSimulator, Population, Simulator};

fn corpus(dir: &Path, pop: Population, n: usize) -> PathBuf {
    let goals: Vec<GoalSpec> = (0..n)
        .map(|i| GoalSpec {
            id: format!("{}-{i:03}", pop.name),
            goal: format!("Draft an email about meeting number {i}."),
            task: behavior_gap::corpus::Task::Writing,
        })
        .collect();
    let name = pop.name.clone();
    let sim = Simulator::new(name.clone(), Arc::new(PersonaSimulator::new(pop, 11)));
    let out = generate(&name, &goals, &sim, &Assistant::new(Arc::new(CannedAssistant)), &GenerationConfig::default()).unwrap();
    let p = dir.join(format!("{name}.jsonl"));
    out.corpus.save(&p).unwrap();
    p
}

fn config(dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(
        &p,
        r#"{"truncate_dim": 64, "embedder": {"stub_dim": 256}, "quantize": {"k": 4, "restarts": 2},
            "interpret": {"tfidf": {"min_df": 2}}}"#,
    )
    .unwrap();
    p
}

fn bgap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgap")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_lines(o: &Output) -> usize {
    String::from_utf8_lossy(&o.stderr).lines().count()
}

#[test]
fn measure_with_warm_cache_runs_offline() {
    let tmp = tempfile::tempdir().unwrap();
    let real = corpus(tmp.path(), Population::polite(), 30);
    let sim = corpus(tmp.path(), Population::terse(), 30);
    let cfg = config(tmp.path());
    let out = tmp.path().join("run");
    let common = ["--stub", "--config", s(&cfg), "--out", s(&out), "--seed", "3"];
    let warm = bgap(&[&["measure", "--real", s(&real), "--sim", s(&sim)][..], &common].concat());
    assert_eq!(warm.status.code(), Some(0), "{}", String::from_utf8_lossy(&warm.stderr));
    let first = std::fs::read(out.join("reports.json")).unwrap();

    // a fresh run directory sharing the cache must not need the service
    let out2 = tmp.path().join("run2");
    let cache = out.join("cache");
    let args = [
        "measure", "--real", s(&real), "--sim", s(&sim), "--offline", "--stub", "--config", s(&cfg), "--out",
        s(&out2), "--cache-dir", s(&cache), "--seed", "3",
    ];
    let cold = bgap(&args);
    assert_eq!(cold.status.code(), Some(0), "{}", String::from_utf8_lossy(&cold.stderr));
    assert_eq!(std::fs::read(out2.join("reports.json")).unwrap(), first);
    let stdout = String::from_utf8_lossy(&cold.stdout);
    assert!(stdout.contains("JS"));

    // same inputs again: same outputs, same exit code
    let again = bgap(&args);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(out2.join("reports.json")).unwrap(), first);

    let rep = bgap(&["report", s(&out2)]);
    assert_eq!(rep.status.code(), Some(0));
    assert!(out2.join("metrics.csv").exists());
}

#[test]
fn offline_with_cold_cache_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let real = corpus(tmp.path(), Population::polite(), 10);
    let sim = corpus(tmp.path(), Population::terse(), 10);
    let out = tmp.path().join("run");
    let o = bgap(&["measure", "--real", s(&real), "--sim", s(&sim), "--offline", "--stub", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_lines(&o), 1);
}

#[test]
fn missing_real_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = corpus(tmp.path(), Population::terse(), 5);
    let o = bgap(&["measure", "--sim", s(&sim), "--stub", "--out", s(&tmp.path().join("run"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_lines(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--real"));
    assert!(o.stdout.is_empty());
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let o = bgap(&["measure", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_lines(&o), 1);
}

#[test]
fn pairwise_writes_square_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let a = corpus(tmp.path(), Population::polite(), 25);
    let b = corpus(tmp.path(), Population::terse(), 25);
    let cfg = config(tmp.path());
    let out = tmp.path().join("pw");
    let o = bgap(&["pairwise", "--corpora", s(&a), s(&b), "--stub", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("pairwise.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.len() == 3));
    assert_eq!(rows[0], vec!["", "polite", "terse"]);
    assert_eq!(rows[1][2], rows[2][1]);
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 0.0);

    // warm cache: offline rerun reproduces the file
    let again = bgap(&[
        "pairwise", "--corpora", s(&a), s(&b), "--offline", "--stub", "--config", s(&cfg), "--out", s(&out),
    ]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out.join("pairwise.csv")).unwrap(), csv);
}

#[test]
fn simulate_then_describe_and_embed() {
    let tmp = tempfile::tempdir().unwrap();
    let goals = corpus(tmp.path(), Population::polite(), 12);
    let gen = tmp.path().join("gen");
    let o = bgap(&[
        "simulate", "--goals", s(&goals), "--simulator", "a=persona:polite@0.5", "--simulator",
        "b=persona:terse@0.5", "--stub", "--out", s(&gen), "--seed", "7",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let produced = gen.join("corpus.jsonl");
    assert!(gen.join("assignments.jsonl").exists());
    let o = bgap(&["describe", s(&produced), "--kind", "sim", "--stub", "--out", s(&gen)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(gen.join("descriptions/corpus.jsonl").exists());
    let o = bgap(&["embed", s(&produced), "--kind", "sim", "--stub", "--truncate-dim", "64", "--out", s(&gen)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(gen.join("embeddings/corpus.bgm").exists());
}

#[test]
fn bad_weights_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let goals = corpus(tmp.path(), Population::polite(), 4);
    let o = bgap(&[
        "simulate", "--goals", s(&goals), "--simulator", "a=persona:polite@0.5", "--simulator",
        "b=persona:terse@0.2", "--stub", "--out", s(&tmp.path().join("g")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_lines(&o), 1);
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"kk": 4}"#).unwrap();
    let o = bgap(&["report", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kk"));
}
