use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    build_client, corpus_name, measure_pair, prepare_pair, read_json, read_jsonl, run, write_json, write_jsonl,
    RepresentationMode, RunConfig, Workspace,
};
use crate::corpus::{load_corpus, Corpus, CorpusKind, Task};
use crate::error::{Error, Result};
use crate::facets::{classify_goal, FacetId, GoalLabel};
use crate::gateway::{parallel_map, ProviderConfig};
use crate::probes::{
    ablation_correlation, linear_probe, read_annotations, sample_triplets, score_annotations, AblationResults,
    AnnotationScore, AnswerKey, CorrelationMatrix, ProbeResult, Triplet,
};
use crate::quantize::Algorithm;
use crate::simgen::{run_mixture, generate, Assistant, GenerationOutput, GoalSpec, Simulator};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorEntry {
    pub name: String,
    pub provider: ProviderConfig,
    /// Mixture weight; ignored when there is only one simulator.
    #[serde(default = "one")]
    pub weight: f64,
}

/// Runs the configured simulators against `goals` (a corpus whose
/// conversations carry goals) and writes `corpus.jsonl`, `generation.jsonl`
/// and `assignments.jsonl` under the output directory.
pub fn simulate(cfg: &RunConfig, goals: &Path, name: &str) -> Result<GenerationOutput> {
    if cfg.simulators.is_empty() {
        return Err(Error::invalid("no simulators configured"));
    }
    let source = load_corpus(goals, CorpusKind::Real)?;
    let specs: Vec<GoalSpec> = source.conversations().iter().map(GoalSpec::from).collect();
    if let Some(g) = specs.iter().find(|g| g.goal.trim().is_empty()) {
        return Err(Error::invalid(format!("conversation {} has no goal", g.id)));
    }
    let providers = cfg.providers()?;
    let cache = providers.cache();
    let mut sims = Vec::with_capacity(cfg.simulators.len());
    for s in &cfg.simulators {
        let client = build_client(&s.provider, cache.clone(), cfg.offline)?;
        sims.push((Simulator::new(s.name.clone(), Arc::new(client)), s.weight));
    }
    let asst = Assistant::new(Arc::new(build_client(&cfg.assistant, cache, cfg.offline)?));
    let out = if sims.len() == 1 {
        generate(name, &specs, &sims[0].0, &asst, &cfg.generation)?
    } else {
        run_mixture(name, &specs, &sims, &asst, &cfg.generation, cfg.seed)?
    };
    let ws = Workspace::open(&cfg.out)?;
    out.corpus.save(&ws.path("corpus.jsonl"))?;
    write_jsonl(&ws.path("generation.jsonl"), &out.records)?;
    write_jsonl(&ws.path("assignments.jsonl"), &out.assignments)?;
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Stored name; defaults to the file stem.
    pub label: Option<String>,
    /// Classify each goal and set the conversation's task from the label.
    pub classify_goals: bool,
    /// Keep only conversations of this task.
    pub task: Option<Task>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestOutcome {
    pub path: PathBuf,
    pub kept: usize,
    pub dropped: usize,
    pub labels: Vec<(String, GoalLabel)>,
}

/// Validates a corpus and stores a normalized copy under `corpora/`,
/// optionally classifying goals and filtering by task.
pub fn ingest(cfg: &RunConfig, path: &Path, kind: CorpusKind, opts: &IngestOptions) -> Result<IngestOutcome> {
    let label = opts.label.clone().unwrap_or_else(|| corpus_name(path));
    let mut ws = Workspace::open(&cfg.out)?;
    if !opts.classify_goals && opts.task.is_none() {
        let (corpus, _) = ws.ingest(&label, path, kind)?;
        return Ok(IngestOutcome {
            path: ws.path(&format!("corpora/{label}.jsonl")),
            kept: corpus.len(),
            dropped: 0,
            labels: Vec::new(),
        });
    }
    let corpus = load_corpus(path, kind)?;
    let mut convs = corpus.conversations().to_vec();
    let mut labels = Vec::new();
    if opts.classify_goals {
        let providers = cfg.providers()?;
        let chat = providers.annotator()?;
        let results = parallel_map(&convs, providers.annotator_config().max_concurrency, |_, c| {
            classify_goal(&c.goal, chat.as_ref())
        });
        for (c, r) in convs.iter_mut().zip(results) {
            let l = r?;
            c.task = l.task();
            labels.push((c.id.clone(), l));
        }
        write_jsonl(
            &ws.path(&format!("corpora/{label}.goals.jsonl")),
            &labels
                .iter()
                .map(|(id, l)| serde_json::json!({"conversation_id": id, "label": l}))
                .collect::<Vec<_>>(),
        )?;
    }
    let before = convs.len();
    if let Some(t) = opts.task {
        convs.retain(|c| c.task == t);
    }
    let kept = Corpus::new(corpus.name.clone(), kind, convs)?;
    let rel = format!("corpora/{label}.jsonl");
    kept.save(&ws.path(&rel))?;
    ws.record(
        &format!("ingest:{label}"),
        &[&rel],
        crate::hashing::file_hash(path)?,
        crate::hashing::json_hash(&(opts.classify_goals, opts.task)),
        0,
    )?;
    Ok(IngestOutcome {
        path: ws.path(&rel),
        kept: kept.len(),
        dropped: before - kept.len(),
        labels,
    })
}

/// Held-out accuracy of a linear classifier separating real from simulated
/// representations. Writes `probe.json`.
pub fn probe(cfg: &RunConfig) -> Result<ProbeResult> {
    cfg.validate()?;
    let providers = cfg.providers()?;
    let mut ws = Workspace::open(&cfg.out)?;
    let (real, sim) = prepare_pair(&mut ws, cfg, &providers)?;
    let result = linear_probe(&real.embeddings, &sim.embeddings, &cfg.probe, cfg.seed)?;
    write_json(&ws.path("probe.json"), &result)?;
    Ok(result)
}

/// Samples odd-one-out triplets from the clusters of a run, writing the blind
/// sheet to `triplets/triplets.jsonl` and the answers to `triplets/key.jsonl`.
pub fn triplets(cfg: &RunConfig, n: usize) -> Result<Vec<Triplet>> {
    cfg.validate()?;
    let providers = cfg.providers()?;
    let mut ws = Workspace::open(&cfg.out)?;
    let (real, sim) = prepare_pair(&mut ws, cfg, &providers)?;
    let names = (corpus_name(cfg.real.as_deref().unwrap()), corpus_name(cfg.sim.as_deref().unwrap()));
    let subset: Vec<String> = cfg.facets.iter().map(|f| f.to_string()).collect();
    let (_, labels) = measure_pair(&mut ws, "main", &real, &sim, (&names.0, &names.1), &subset, cfg)?;
    let pooled: Vec<usize> = labels.real.iter().chain(&labels.sim).copied().collect();
    let ids: Vec<String> = real
        .ids
        .iter()
        .map(|i| format!("real:{i}"))
        .chain(sim.ids.iter().map(|i| format!("sim:{i}")))
        .collect();
    let texts: Vec<String> = real.texts.iter().chain(&sim.texts).cloned().collect();
    let out = sample_triplets(&pooled, &ids, &texts, n, cfg.seed)?;
    write_jsonl(&ws.path("triplets/triplets.jsonl"), &out.iter().map(Triplet::blind).collect::<Vec<_>>())?;
    write_jsonl(&ws.path("triplets/key.jsonl"), &out.iter().map(Triplet::key).collect::<Vec<_>>())?;
    Ok(out)
}

/// Scores an annotation sheet (CSV: triplet_id, annotator_id, choice) against
/// an answer key written by [`triplets`].
pub fn score_annotation_files(key: &Path, sheet: &Path) -> Result<AnnotationScore> {
    let keys: Vec<AnswerKey> = read_jsonl(key)?;
    score_annotations(&keys, &read_annotations(sheet)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub real: PathBuf,
    pub sims: Vec<PathBuf>,
}

/// Settings that differ from the base configuration in one ablation variant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationVariant {
    pub name: String,
    pub mode: Option<RepresentationMode>,
    pub algorithm: Option<Algorithm>,
    pub k: Option<usize>,
    pub embedder: Option<ProviderConfig>,
    pub facets: Option<BTreeSet<FacetId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub datasets: Vec<DatasetSpec>,
    pub variants: Vec<AblationVariant>,
}

impl AblationVariant {
    fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(a) = self.algorithm {
            c.quantize.clusters.algorithm = a;
        }
        if let Some(k) = self.k {
            c.quantize.clusters.k = k;
        }
        if let Some(e) = &self.embedder {
            c.embedder = e.clone();
        }
        if let Some(f) = &self.facets {
            c.facets = f.clone();
        }
        c
    }
}

/// Measures JS for every (variant, dataset, simulator) and correlates the
/// variants. Writes `ablation_results.json` and `ablation_correlation.json`.
pub fn ablate(cfg: &RunConfig, spec: &AblationSpec) -> Result<(AblationResults, CorrelationMatrix)> {
    if spec.variants.len() < 2 {
        return Err(Error::invalid("an ablation needs at least two variants"));
    }
    let mut results = AblationResults::new();
    let cache = cfg.cache_path();
    for v in &spec.variants {
        let vcfg = v.apply(cfg);
        for ds in &spec.datasets {
            for sim in &ds.sims {
                let mut c = vcfg.clone();
                let sim_name = corpus_name(sim);
                c.out = cfg.out.join("ablate").join(&v.name).join(&ds.name).join(&sim_name);
                c.cache_dir = Some(cache.clone());
                c.real = Some(ds.real.clone());
                c.sim = Some(sim.clone());
                c.per_facet = false;
                c.interpret.enabled = false;
                let outcome = run(&c)?;
                results
                    .entry(v.name.clone())
                    .or_default()
                    .entry(ds.name.clone())
                    .or_default()
                    .insert(sim_name, outcome.reports[0].js);
            }
        }
    }
    let corr = ablation_correlation(&results)?;
    write_json(&cfg.out.join("ablation_results.json"), &results)?;
    write_json(&cfg.out.join("ablation_correlation.json"), &corr)?;
    Ok((results, corr))
}

/// Correlates previously recorded ablation results.
pub fn correlate_results(path: &Path) -> Result<CorrelationMatrix> {
    let results: AblationResults = read_json(path)?;
    ablation_correlation(&results)
}
