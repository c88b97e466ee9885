use std::sync::Arc;

use super::*;
use crate::simgen::{generate, Assistant, CannedAssistant, GoalSpec, PersonaSimulator, Population, Simulator};

fn write_population(dir: &Path, pop: Population, n: usize) -> PathBuf {
    let goals: Vec<GoalSpec> = (0..n)
        .map(|i| GoalSpec {
            id: format!("{}-{i:03}", pop.name),
            goal: format!("Write a function that parses record type {i}."),
            task: crate::corpus::Task::Coding,
        })
        .collect();
    let name = pop.name.clone();
    let sim = Simulator::new(name.clone(), Arc::new(PersonaSimulator::new(pop, 3)));
    let asst = Assistant::new(Arc::new(CannedAssistant));
    let out = generate(&name, &goals, &sim, &asst, &GenerationConfig::default()).unwrap();
    fs::create_dir_all(dir).unwrap();
    let path = dir.join(format!("{name}.jsonl"));
    out.corpus.save(&path).unwrap();
    path
}

fn small_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::stub();
    cfg.real = Some(write_population(dir, Population::polite(), 40));
    cfg.sim = Some(write_population(dir, Population::terse(), 40));
    cfg.out = dir.join("run");
    cfg.embedder.stub_dim = 256;
    cfg.truncate_dim = 64;
    cfg.quantize = QuantizeConfig::default().with_k(4);
    cfg.quantize.clusters.restarts = 2;
    cfg.interpret.tfidf.min_df = 2;
    cfg
}

#[test]
fn rerun_is_served_from_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let first = run(&cfg).unwrap();
    assert!(first.provider_requests > 0);
    let r = &first.reports[0];
    assert!(r.js > 0.0 && r.js <= std::f64::consts::LN_2);
    assert!(r.mauve > 0.0 && r.mauve <= 1.0);
    assert_eq!(r.real, "polite");
    assert_eq!(r.facet_subset.len(), 6);
    assert!(cfg.out.join("interpret/main/clusters.json").exists());
    let second = run(&cfg).unwrap();
    assert_eq!(second.provider_requests, 0);
    assert_eq!(first.reports, second.reports);
    Manifest::load_or_default(&cfg.out).unwrap().verify(&cfg.out).unwrap();
}

#[test]
fn tampered_artifact_is_rebuilt_from_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let first = run(&cfg).unwrap();
    let emb = cfg.out.join("embeddings/sim.bgm");
    let mut bytes = fs::read(&emb).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    fs::write(&emb, bytes).unwrap();
    assert!(Manifest::load_or_default(&cfg.out).unwrap().verify(&cfg.out).is_err());
    let second = run(&cfg).unwrap();
    // embeddings come back from the response cache, not the service
    assert_eq!(second.provider_requests, 0);
    assert_eq!(first.reports, second.reports);
    Manifest::load_or_default(&cfg.out).unwrap().verify(&cfg.out).unwrap();
}

#[test]
fn offline_run_without_cache_fails_as_provider_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.offline = true;
    let err = run(&cfg).unwrap_err();
    assert!(err.is_provider_failure(), "{err}");
}

#[test]
fn per_facet_rows_follow_overall_row() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.per_facet = true;
    cfg.interpret.enabled = false;
    let out = run(&cfg).unwrap();
    assert_eq!(out.reports.len(), 7);
    for (r, f) in out.reports[1..].iter().zip(FacetId::ALL) {
        assert_eq!(r.facet_subset, vec![f.to_string()]);
    }
    let rep = report(&cfg.out).unwrap();
    assert_eq!(rep.csv.lines().count(), 8);
    assert!(rep.table.contains("requests"));
}

#[test]
fn modes_change_the_embedded_text() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let corpus = load_corpus(cfg.real.as_deref().unwrap(), CorpusKind::Real).unwrap();
    let empty = HashMap::new();
    let (_, raw) = representation_texts(
        &corpus,
        RepresentationMode::RawConversation,
        &empty,
        &cfg.facets,
        &cfg.facet_options,
    )
    .unwrap();
    let (_, users) = representation_texts(
        &corpus,
        RepresentationMode::UserUtterancesOnly,
        &empty,
        &cfg.facets,
        &cfg.facet_options,
    )
    .unwrap();
    assert!(raw[0].contains("Assistant:"));
    assert!(!users[0].contains("Assistant:"));
    assert!(representation_texts(
        &corpus,
        RepresentationMode::BehaviorDescriptions,
        &empty,
        &cfg.facets,
        &cfg.facet_options
    )
    .is_err());
}

#[test]
fn pairwise_matrix_is_symmetric_with_zero_diagonal() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.corpora = vec![cfg.real.take().unwrap(), cfg.sim.take().unwrap()];
    let extra = write_population(&tmp.path().join("x"), Population::polite(), 30);
    cfg.corpora.push(extra);
    cfg.mode = RepresentationMode::UserUtterancesOnly;
    let m = run_pairwise(&cfg).unwrap();
    assert_eq!(m.names, vec!["polite", "terse", "polite-2"]);
    for i in 0..3 {
        assert_eq!(m.js[i][i], 0.0);
        for j in 0..3 {
            assert_eq!(m.js[i][j], m.js[j][i]);
        }
    }
    assert!(cfg.out.join("pairwise.csv").exists());
}

#[test]
fn validation_rejects_bad_settings() {
    let mut cfg = RunConfig::stub();
    assert!(matches!(run(&cfg), Err(Error::Invalid(_))));
    cfg.per_facet = true;
    cfg.mode = RepresentationMode::RawConversation;
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::stub();
    cfg.quantize.clusters.k = 1;
    assert!(cfg.validate().is_err());
    assert!("bogus".parse::<RepresentationMode>().is_err());
}

#[test]
fn simulate_writes_corpus_and_records() {
    let tmp = tempfile::tempdir().unwrap();
    let base = small_config(tmp.path());
    let mut cfg = RunConfig::stub();
    cfg.out = tmp.path().join("gen");
    cfg.simulators = vec![
        SimulatorEntry {
            name: "polite".into(),
            provider: ProviderConfig::stub("persona:polite"),
            weight: 0.5,
        },
        SimulatorEntry {
            name: "terse".into(),
            provider: ProviderConfig::stub("persona:terse"),
            weight: 0.5,
        },
    ];
    let out = simulate(&cfg, base.real.as_deref().unwrap(), "mix").unwrap();
    assert_eq!(out.assignments.len(), 40);
    let names: BTreeSet<_> = out.assignments.iter().map(|a| a.simulator.clone()).collect();
    assert_eq!(names.len(), 2);
    assert!(cfg.out.join("corpus.jsonl").exists());
    assert!(cfg.out.join("generation.jsonl").exists());
    let again = simulate(&cfg, base.real.as_deref().unwrap(), "mix").unwrap();
    assert_eq!(out.assignments, again.assignments);
}

#[test]
fn ingest_classifies_and_filters() {
    let tmp = tempfile::tempdir().unwrap();
    let base = small_config(tmp.path());
    let mut cfg = RunConfig::stub();
    cfg.out = tmp.path().join("ing");
    let opts = IngestOptions {
        label: Some("goals".into()),
        classify_goals: true,
        task: Some(crate::corpus::Task::Coding),
    };
    let out = ingest(&cfg, base.real.as_deref().unwrap(), CorpusKind::Real, &opts).unwrap();
    assert_eq!(out.labels.len(), 40);
    assert_eq!(out.kept + out.dropped, 40);
    assert!(out.path.exists());
}

#[test]
fn shipped_config_matches_defaults() {
    let body = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.json"));
    let cfg: RunConfig = serde_json::from_str(body).unwrap();
    assert_eq!(cfg, RunConfig::default());
    let partial: RunConfig = serde_json::from_str(r#"{"quantize": {"k": 50}, "seed": 4}"#).unwrap();
    assert_eq!(partial.quantize.clusters.k, 50);
    assert_eq!(partial.quantize.clusters.iters, 500);
    assert!(serde_json::from_str::<RunConfig>(r#"{"k": 50}"#).is_err());
}
