//! End-to-end orchestration: ingest, describe, embed, quantize, measure and
//! interpret, with every stage recorded in the run directory's manifest so an
//! interrupted or repeated run resumes from verified artifacts.

mod pairwise;
mod providers;
mod report;
mod tasks;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{load_corpus, read_matrix, write_matrix, Conversation, Corpus, CorpusKind, Manifest, MatrixFile};
use crate::error::{Error, Result};
use crate::facets::{
    assemble_representation, describe_conversation, render_history, FacetConfig, FacetDescription, FacetId,
};
use crate::gateway::{embed, parallel_map, ProviderConfig, DEFAULT_TRUNCATE_DIM};
use crate::hashing::{file_hash, json_hash};
use crate::interpret::{
    categorize_clusters, contrastive_tfidf, llm_term_filter, select_documents, Category, Stoplist, TfidfConfig,
    Thresholds,
};
use crate::matrix::Matrix;
use crate::metrics::{gap_analysis, GapReport, MauveConfig};
use crate::probes::ProbeConfig;
use crate::quantize::{BehaviorHistogram, QuantizeConfig};
use crate::simgen::{GenerationConfig, ASSISTANT_TEMPERATURE, SIMULATOR_TEMPERATURE};

pub use pairwise::{run_pairwise, PairwiseMatrix};
pub use providers::{build_client, OfflineChat, Providers};
pub use report::{report, ReportOutput};
pub use tasks::{
    ablate, correlate_results, ingest, probe, score_annotation_files, simulate, triplets, AblationSpec,
    AblationVariant, DatasetSpec, IngestOptions, IngestOutcome, SimulatorEntry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationMode {
    /// Six-facet behavior descriptions.
    #[default]
    BehaviorDescriptions,
    /// The whole transcript, no descriptions.
    RawConversation,
    /// Only the user turns of the transcript.
    UserUtterancesOnly,
}

impl RepresentationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RepresentationMode::BehaviorDescriptions => "behavior_descriptions",
            RepresentationMode::RawConversation => "raw_conversation",
            RepresentationMode::UserUtterancesOnly => "user_utterances_only",
        }
    }
}

impl std::str::FromStr for RepresentationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            RepresentationMode::BehaviorDescriptions,
            RepresentationMode::RawConversation,
            RepresentationMode::UserUtterancesOnly,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown representation mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpretConfig {
    pub enabled: bool,
    pub thresholds: Thresholds,
    pub tfidf: TfidfConfig,
    /// Ask the annotator model for extra stoplist terms.
    pub llm_filter: bool,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            enabled: true,
            thresholds: Thresholds::default(),
            tfidf: TfidfConfig::default(),
            llm_filter: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub real: Option<PathBuf>,
    pub sim: Option<PathBuf>,
    /// Simulated corpora for pairwise comparison.
    pub corpora: Vec<PathBuf>,
    pub out: PathBuf,
    /// Response cache; defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Chat model that writes facet descriptions and classifies goals.
    pub annotator: ProviderConfig,
    pub embedder: ProviderConfig,
    pub simulators: Vec<SimulatorEntry>,
    pub assistant: ProviderConfig,
    pub facets: BTreeSet<FacetId>,
    /// Also measure each facet on its own.
    pub per_facet: bool,
    pub mode: RepresentationMode,
    pub facet_options: FacetConfig,
    pub truncate_dim: usize,
    pub quantize: QuantizeConfig,
    pub mauve: MauveConfig,
    pub interpret: InterpretConfig,
    pub probe: ProbeConfig,
    pub generation: GenerationConfig,
    pub seed: u64,
    /// Serve every model request from the cache; a miss is an error.
    pub offline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            real: None,
            sim: None,
            corpora: Vec::new(),
            out: PathBuf::from("runs/default"),
            cache_dir: None,
            annotator: ProviderConfig {
                model: "Qwen/Qwen3.5-122B-A10B".into(),
                ..Default::default()
            },
            embedder: ProviderConfig {
                model: "Qwen/Qwen3-Embedding-8B".into(),
                ..Default::default()
            },
            simulators: Vec::new(),
            assistant: ProviderConfig {
                model: "Qwen/Qwen3.5-122B-A10B".into(),
                temperature: ASSISTANT_TEMPERATURE,
                ..Default::default()
            },
            facets: FacetId::ALL.into_iter().collect(),
            per_facet: false,
            mode: RepresentationMode::default(),
            facet_options: FacetConfig::default(),
            truncate_dim: DEFAULT_TRUNCATE_DIM,
            quantize: QuantizeConfig::default(),
            mauve: MauveConfig::default(),
            interpret: InterpretConfig::default(),
            probe: ProbeConfig::default(),
            generation: GenerationConfig::default(),
            seed: 0,
            offline: false,
        }
    }
}

impl RunConfig {
    /// Every model provider switched to the built-in offline stub.
    pub fn stub() -> Self {
        let mut c = RunConfig::default();
        c.use_stub_providers();
        c
    }

    pub fn use_stub_providers(&mut self) {
        for p in [&mut self.annotator, &mut self.embedder, &mut self.assistant] {
            p.kind = crate::gateway::ProviderKind::Stub;
            p.api_key_env = None;
        }
        for s in &mut self.simulators {
            s.provider.kind = crate::gateway::ProviderKind::Stub;
            s.provider.api_key_env = None;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.truncate_dim == 0 {
            return Err(Error::invalid("truncate_dim must be positive"));
        }
        if self.facets.is_empty() {
            return Err(Error::invalid("facet subset is empty"));
        }
        if self.per_facet && self.mode != RepresentationMode::BehaviorDescriptions {
            return Err(Error::invalid("per-facet runs need behavior_descriptions mode"));
        }
        let q = &self.quantize;
        if q.clusters.k < 2 {
            return Err(Error::invalid("k must be at least 2"));
        }
        if q.clusters.iters == 0 || q.clusters.restarts == 0 {
            return Err(Error::invalid("iters and restarts must be positive"));
        }
        if let Some(t) = q.pca_target {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid("pca_target must be in (0, 1]"));
            }
        }
        if let Some(a) = q.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("alpha must be positive"));
            }
        }
        if !(self.mauve.scale > 0.0) || self.mauve.grid_size == 0 {
            return Err(Error::invalid("MAUVE scale and grid size must be positive"));
        }
        self.annotator.validate()?;
        self.embedder.validate()?;
        Ok(())
    }

    fn cache_path(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    pub fn providers(&self) -> Result<Providers> {
        Providers::new(
            Some(&self.cache_path()),
            self.annotator.clone(),
            self.embedder.clone(),
            self.offline,
        )
    }
}

pub fn default_simulator(model: &str) -> SimulatorEntry {
    SimulatorEntry {
        name: model.to_string(),
        provider: ProviderConfig {
            model: model.to_string(),
            temperature: SIMULATOR_TEMPERATURE,
            ..Default::default()
        },
        weight: 1.0,
    }
}

/// A conversation dropped from downstream stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub conversation_id: String,
    pub stage: String,
    pub reason: String,
}

/// Run directory plus its manifest; the manifest is saved after every stage.
pub(crate) struct Workspace {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let body = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))
}

pub(crate) fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut body = String::new();
    for it in items {
        body.push_str(&serde_json::to_string(it).map_err(|e| Error::json("serialize", e))?);
        body.push('\n');
    }
    write_text(path, &body)
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e)))
        .collect()
}

impl Workspace {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Workspace {
            dir: dir.to_path_buf(),
            manifest: Manifest::load_or_default(dir)?,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn fresh(&self, stage: &str, inputs: &str, config: &str, seed: u64) -> bool {
        self.manifest.is_fresh(&self.dir, stage, inputs, config, seed)
    }

    pub fn record(&mut self, stage: &str, artifacts: &[&str], inputs: String, config: String, seed: u64) -> Result<()> {
        self.manifest.record(&self.dir, stage, artifacts, inputs, config, seed)?;
        self.manifest.save(&self.dir)
    }

    /// Loads a corpus and keeps a copy under `corpora/`. Returns the corpus
    /// and the hash of the copy.
    pub fn ingest(&mut self, label: &str, source: &Path, kind: CorpusKind) -> Result<(Corpus, String)> {
        let corpus = load_corpus(source, kind)?;
        let rel = format!("corpora/{label}.jsonl");
        let src_hash = file_hash(source)?;
        if !self.fresh(&format!("ingest:{label}"), &src_hash, "", 0) {
            fs::create_dir_all(self.path("corpora")).map_err(|e| Error::io(self.path("corpora"), e))?;
            corpus.save(&self.path(&rel))?;
            self.record(&format!("ingest:{label}"), &[&rel], src_hash, String::new(), 0)?;
        }
        let hash = file_hash(&self.path(&rel))?;
        Ok((corpus, hash))
    }

    /// Facet descriptions for every conversation, keyed by conversation id.
    /// Conversations whose replies stay unusable are returned as exclusions;
    /// provider failures abort the stage.
    pub fn describe(
        &mut self,
        label: &str,
        corpus: &Corpus,
        corpus_hash: &str,
        facets: &BTreeSet<FacetId>,
        options: &FacetConfig,
        providers: &Providers,
    ) -> Result<(HashMap<String, Vec<FacetDescription>>, Vec<Exclusion>)> {
        let stage = format!("describe:{label}");
        let cfg = providers.annotator_config();
        let config_hash = json_hash(&json!({
            "model": cfg.model,
            "temperature": cfg.temperature,
            "facets": facets,
            "options": options,
        }));
        let rel = format!("descriptions/{label}.jsonl");
        let rel_fail = format!("descriptions/{label}.excluded.json");
        if !self.fresh(&stage, corpus_hash, &config_hash, 0) {
            let chat = providers.annotator()?;
            let results = parallel_map(corpus.conversations(), cfg.max_concurrency, |_, c| {
                describe_conversation(c, facets, chat.as_ref(), options)
            });
            let mut descs = Vec::new();
            let mut excluded = Vec::new();
            for (c, r) in corpus.conversations().iter().zip(results) {
                match r {
                    Ok(d) => descs.extend(d),
                    Err(Error::Reply(reason)) => excluded.push(Exclusion {
                        conversation_id: c.id.clone(),
                        stage: "describe".into(),
                        reason,
                    }),
                    Err(e) => return Err(e),
                }
            }
            write_jsonl(&self.path(&rel), &descs)?;
            write_json(&self.path(&rel_fail), &excluded)?;
            self.record(&stage, &[&rel, &rel_fail], corpus_hash.to_string(), config_hash, 0)?;
        }
        let descs: Vec<FacetDescription> = read_jsonl(&self.path(&rel))?;
        let excluded: Vec<Exclusion> = read_json(&self.path(&rel_fail))?;
        let mut by_id: HashMap<String, Vec<FacetDescription>> = HashMap::new();
        for d in descs {
            by_id.entry(d.conversation_id.clone()).or_default().push(d);
        }
        Ok((by_id, excluded))
    }

    /// Embeds `texts`, reusing `embeddings/<key>.bgm` when the texts and the
    /// embedder are unchanged.
    pub fn embed(
        &mut self,
        key: &str,
        ids: &[String],
        texts: &[String],
        truncate_dim: usize,
        providers: &Providers,
    ) -> Result<(Matrix, String)> {
        let stage = format!("embed:{key}");
        let inputs = json_hash(&json!({"ids": ids, "texts": texts}));
        let cfg = providers.embedder_config();
        let config_hash = json_hash(&json!({"model": cfg.model, "truncate_dim": truncate_dim}));
        let rel = format!("embeddings/{key}.bgm");
        if !self.fresh(&stage, &inputs, &config_hash, 0) {
            let m = embed(providers.embedder()?.as_ref(), texts, truncate_dim)?;
            fs::create_dir_all(self.path("embeddings")).map_err(|e| Error::io(self.path("embeddings"), e))?;
            write_matrix(&self.path(&rel), &MatrixFile::from_matrix(&m, ids.to_vec())?)?;
            let ids_rel = format!("{rel}.ids.json");
            self.record(&stage, &[&rel, &ids_rel], inputs, config_hash, 0)?;
        }
        let mf = read_matrix(&self.path(&rel))?;
        if mf.row_ids != ids {
            return Err(Error::Manifest(format!("{rel} rows do not match the corpus")));
        }
        Ok((mf.to_matrix(), file_hash(&self.path(&rel))?))
    }
}

/// Texts to embed for each conversation, in corpus order, plus the ids of the
/// conversations that have one.
pub fn representation_texts(
    corpus: &Corpus,
    mode: RepresentationMode,
    descriptions: &HashMap<String, Vec<FacetDescription>>,
    subset: &BTreeSet<FacetId>,
    options: &FacetConfig,
) -> Result<(Vec<String>, Vec<String>)> {
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    for c in corpus.conversations() {
        let text = match mode {
            RepresentationMode::BehaviorDescriptions => match descriptions.get(&c.id) {
                Some(d) => assemble_representation(d, subset)?.text,
                None => continue,
            },
            RepresentationMode::RawConversation => render_history(&c.turns, false, options.history_budget),
            RepresentationMode::UserUtterancesOnly => render_history(&c.turns, true, options.history_budget),
        };
        ids.push(c.id.clone());
        texts.push(text);
    }
    if ids.is_empty() {
        return Err(Error::invalid(format!("corpus {} has no usable conversations", corpus.name)));
    }
    Ok((ids, texts))
}

/// One corpus carried through ingest, description and embedding.
pub(crate) struct Prepared {
    pub corpus: Corpus,
    pub descriptions: HashMap<String, Vec<FacetDescription>>,
    pub excluded: Vec<Exclusion>,
    pub ids: Vec<String>,
    pub texts: Vec<String>,
    pub embeddings: Matrix,
    pub embedding_hash: String,
}

pub(crate) fn prepare(
    ws: &mut Workspace,
    label: &str,
    path: &Path,
    kind: CorpusKind,
    cfg: &RunConfig,
    providers: &Providers,
    describe_facets: &BTreeSet<FacetId>,
) -> Result<Prepared> {
    let (corpus, hash) = ws.ingest(label, path, kind)?;
    let (descriptions, excluded) = if cfg.mode == RepresentationMode::BehaviorDescriptions {
        ws.describe(label, &corpus, &hash, describe_facets, &cfg.facet_options, providers)?
    } else {
        (HashMap::new(), Vec::new())
    };
    let (ids, texts) = representation_texts(&corpus, cfg.mode, &descriptions, &cfg.facets, &cfg.facet_options)?;
    write_jsonl(
        &ws.path(&format!("representations/{label}.jsonl")),
        &ids.iter()
            .zip(&texts)
            .map(|(i, t)| json!({"conversation_id": i, "text": t}))
            .collect::<Vec<_>>(),
    )?;
    let (embeddings, embedding_hash) = ws.embed(label, &ids, &texts, cfg.truncate_dim, providers)?;
    Ok(Prepared {
        corpus,
        descriptions,
        excluded,
        ids,
        texts,
        embeddings,
        embedding_hash,
    })
}

fn corpus_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub real_ids: Vec<String>,
    pub sim_ids: Vec<String>,
    pub real: Vec<usize>,
    pub sim: Vec<usize>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub real: BehaviorHistogram,
    pub sim: BehaviorHistogram,
}

/// Quantizes one embedded pair and measures it, reusing `measure/<key>/` when
/// the embeddings and settings are unchanged.
pub(crate) fn measure_pair(
    ws: &mut Workspace,
    key: &str,
    real: &Prepared,
    sim: &Prepared,
    names: (&str, &str),
    subset: &[String],
    cfg: &RunConfig,
) -> Result<(GapReport, Labels)> {
    let stage = format!("measure:{key}");
    let inputs = json_hash(&[&real.embedding_hash, &sim.embedding_hash]);
    let config_hash = json_hash(&json!({"quantize": cfg.quantize, "mauve": cfg.mauve}));
    let dir = format!("measure/{key}");
    let report_rel = format!("{dir}/report.json");
    let labels_rel = format!("{dir}/labels.json");
    if !ws.fresh(&stage, &inputs, &config_hash, cfg.seed) {
        let analysis = gap_analysis(&real.embeddings, &sim.embeddings, &cfg.quantize, &cfg.mauve, cfg.seed)?;
        let mut report = analysis.report;
        report.real = names.0.to_string();
        report.sim = names.1.to_string();
        report.facet_subset = subset.to_vec();
        let labels = Labels {
            real_ids: real.ids.clone(),
            sim_ids: sim.ids.clone(),
            real: analysis.quantized.labels[0].clone(),
            sim: analysis.quantized.labels[1].clone(),
            k: analysis.quantized.model.k(),
        };
        let hists = Histograms {
            real: analysis.quantized.histograms[0].clone(),
            sim: analysis.quantized.histograms[1].clone(),
        };
        let abs = ws.path(&dir);
        fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
        let mut artifacts: Vec<String> = analysis
            .quantized
            .model
            .save(&abs, "quantizer")?
            .into_iter()
            .map(|f| format!("{dir}/{f}"))
            .collect();
        write_json(&ws.path(&report_rel), &report)?;
        write_json(&ws.path(&labels_rel), &labels)?;
        write_json(&ws.path(&format!("{dir}/histograms.json")), &hists)?;
        write_text(&ws.path(&format!("{dir}/divergence_curve.csv")), &analysis.curve.to_csv())?;
        artifacts.extend([
            report_rel.clone(),
            labels_rel.clone(),
            format!("{dir}/histograms.json"),
            format!("{dir}/divergence_curve.csv"),
        ]);
        let refs: Vec<&str> = artifacts.iter().map(String::as_str).collect();
        ws.record(&stage, &refs, inputs, config_hash, cfg.seed)?;
    }
    Ok((read_json(&ws.path(&report_rel))?, read_json(&ws.path(&labels_rel))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub thresholds: Thresholds,
    pub clusters: Vec<crate::interpret::ClusterCategory>,
    pub counts: BTreeMap<Category, usize>,
}

/// Categorizes clusters and extracts contrastive terms for a measured pair.
pub(crate) fn interpret_pair(
    ws: &mut Workspace,
    key: &str,
    labels: &Labels,
    real: &Prepared,
    sim: &Prepared,
    cfg: &RunConfig,
    providers: &Providers,
) -> Result<ClusterSummary> {
    let k = labels.k;
    let mut cr = vec![0u64; k];
    let mut cs = vec![0u64; k];
    labels.real.iter().for_each(|&l| cr[l] += 1);
    labels.sim.iter().for_each(|&l| cs[l] += 1);
    let cats = categorize_clusters(
        &cr,
        &cs,
        labels.real.len() as u64,
        labels.sim.len() as u64,
        cfg.interpret.thresholds,
    )?;
    let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    cats.iter().for_each(|c| *counts.get_mut(&c.category).unwrap() += 1);
    let dir = format!("interpret/{key}");
    let clusters_rel = format!("{dir}/clusters.json");
    let summary = ClusterSummary {
        thresholds: cfg.interpret.thresholds,
        clusters: cats.clone(),
        counts,
    };
    write_json(&ws.path(&clusters_rel), &summary)?;
    let mut artifacts = vec![clusters_rel];
    let pooled_labels: Vec<usize> = labels.real.iter().chain(&labels.sim).copied().collect();
    let pooled_texts: Vec<String> = real.texts.iter().chain(&sim.texts).cloned().collect();
    let docs = select_documents(&pooled_labels, &pooled_texts, &cats, cfg.interpret.tfidf.top_clusters)?;
    let mut stop = Stoplist::english();
    if cfg.interpret.llm_filter {
        let probe_cfg = TfidfConfig {
            top_n: Some(cfg.interpret.tfidf.top_n.unwrap_or(50) * 2),
            ..cfg.interpret.tfidf.clone()
        };
        if let Ok(first) = contrastive_tfidf(&docs, &stop, &probe_cfg) {
            let terms: BTreeSet<String> = Category::ALL
                .iter()
                .flat_map(|c| first.get(*c).iter().map(|t| t.term.clone()))
                .collect();
            let terms: Vec<String> = terms.into_iter().collect();
            let added = llm_term_filter(&terms, providers.annotator()?.as_ref());
            write_json(&ws.path(&format!("{dir}/stoplist_additions.json")), &added)?;
            artifacts.push(format!("{dir}/stoplist_additions.json"));
            stop.extend(added);
        }
    }
    match contrastive_tfidf(&docs, &stop, &cfg.interpret.tfidf) {
        Ok(terms) => {
            write_json(&ws.path(&format!("{dir}/terms.json")), &terms)?;
            write_text(&ws.path(&format!("{dir}/terms.csv")), &terms.to_csv()?)?;
            artifacts.push(format!("{dir}/terms.json"));
            artifacts.push(format!("{dir}/terms.csv"));
        }
        Err(e) => log::warn!("skipping term extraction for {key}: {e}"),
    }
    let refs: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    ws.record(&format!("interpret:{key}"), &refs, String::new(), json_hash(&cfg.interpret), cfg.seed)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub dir: PathBuf,
    /// Overall row first, then one row per facet when requested.
    pub reports: Vec<GapReport>,
    pub excluded: BTreeMap<String, Vec<Exclusion>>,
    /// Requests that reached a model service during this run.
    pub provider_requests: u64,
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::invalid(format!("missing required input --{flag}")))
}

fn facets_to_describe(cfg: &RunConfig) -> BTreeSet<FacetId> {
    if cfg.per_facet {
        FacetId::ALL.into_iter().collect()
    } else {
        cfg.facets.clone()
    }
}

/// Ingests, describes and embeds both corpora of a run.
pub(crate) fn prepare_pair(
    ws: &mut Workspace,
    cfg: &RunConfig,
    providers: &Providers,
) -> Result<(Prepared, Prepared)> {
    let real_path = require(&cfg.real, "real")?;
    let sim_path = require(&cfg.sim, "sim")?;
    let facets = facets_to_describe(cfg);
    let real = prepare(ws, "real", real_path, CorpusKind::Real, cfg, providers, &facets)?;
    let sim = prepare(ws, "sim", sim_path, CorpusKind::Simulated, cfg, providers, &facets)?;
    Ok((real, sim))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub label: String,
    pub conversations: usize,
    pub represented: usize,
    pub excluded: Vec<Exclusion>,
}

/// Ingests one corpus and writes its facet descriptions.
pub fn describe(cfg: &RunConfig, path: &Path, label: Option<&str>, kind: CorpusKind) -> Result<StageSummary> {
    cfg.validate()?;
    let label = label.map(str::to_string).unwrap_or_else(|| corpus_name(path));
    let providers = cfg.providers()?;
    let mut ws = Workspace::open(&cfg.out)?;
    let (corpus, hash) = ws.ingest(&label, path, kind)?;
    let (descs, excluded) = ws.describe(&label, &corpus, &hash, &cfg.facets, &cfg.facet_options, &providers)?;
    Ok(StageSummary {
        label,
        conversations: corpus.len(),
        represented: descs.len(),
        excluded,
    })
}

/// Ingests, describes (when the mode needs it) and embeds one corpus.
pub fn embed_corpus(cfg: &RunConfig, path: &Path, label: Option<&str>, kind: CorpusKind) -> Result<StageSummary> {
    cfg.validate()?;
    let label = label.map(str::to_string).unwrap_or_else(|| corpus_name(path));
    let providers = cfg.providers()?;
    let mut ws = Workspace::open(&cfg.out)?;
    let p = prepare(&mut ws, &label, path, kind, cfg, &providers, &cfg.facets)?;
    Ok(StageSummary {
        label,
        conversations: p.corpus.len(),
        represented: p.ids.len(),
        excluded: p.excluded,
    })
}

/// Measures the pair if needed, then categorizes clusters and extracts terms.
pub fn interpret(cfg: &RunConfig) -> Result<ClusterSummary> {
    cfg.validate()?;
    let providers = cfg.providers()?;
    let mut ws = Workspace::open(&cfg.out)?;
    let (real, sim) = prepare_pair(&mut ws, cfg, &providers)?;
    let names = (corpus_name(cfg.real.as_deref().unwrap()), corpus_name(cfg.sim.as_deref().unwrap()));
    let subset: Vec<String> = cfg.facets.iter().map(|f| f.to_string()).collect();
    let (_, labels) = measure_pair(&mut ws, "main", &real, &sim, (&names.0, &names.1), &subset, cfg)?;
    interpret_pair(&mut ws, "main", &labels, &real, &sim, cfg, &providers)
}

/// Runs every stage up to and including quantization, without reports.
pub fn quantize(cfg: &RunConfig) -> Result<Labels> {
    cfg.validate()?;
    let providers = cfg.providers()?;
    let mut ws = Workspace::open(&cfg.out)?;
    let (real, sim) = prepare_pair(&mut ws, cfg, &providers)?;
    let names = (corpus_name(cfg.real.as_deref().unwrap()), corpus_name(cfg.sim.as_deref().unwrap()));
    let subset: Vec<String> = cfg.facets.iter().map(|f| f.to_string()).collect();
    let (_, labels) = measure_pair(&mut ws, "main", &real, &sim, (&names.0, &names.1), &subset, cfg)?;
    Ok(labels)
}

/// Full pipeline for one (real, simulated) pair.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let providers = cfg.providers()?;
    let mut ws = Workspace::open(&cfg.out)?;
    write_json(&ws.path("config.json"), cfg)?;
    let (real, sim) = prepare_pair(&mut ws, cfg, &providers)?;
    let names = (corpus_name(cfg.real.as_deref().unwrap()), corpus_name(cfg.sim.as_deref().unwrap()));
    let subset: Vec<String> = cfg.facets.iter().map(|f| f.to_string()).collect();
    let (main, labels) = measure_pair(&mut ws, "main", &real, &sim, (&names.0, &names.1), &subset, cfg)?;
    let mut reports = vec![main];
    if cfg.interpret.enabled {
        interpret_pair(&mut ws, "main", &labels, &real, &sim, cfg, &providers)?;
    }
    if cfg.per_facet {
        for facet in FacetId::ALL {
            let single: BTreeSet<FacetId> = [facet].into_iter().collect();
            let key = facet.as_str();
            let mut per = Vec::with_capacity(2);
            for p in [&real, &sim] {
                let (ids, texts) =
                    representation_texts(&p.corpus, cfg.mode, &p.descriptions, &single, &cfg.facet_options)?;
                let label = if std::ptr::eq(p, &real) { "real" } else { "sim" };
                let (embeddings, embedding_hash) =
                    ws.embed(&format!("{label}.{key}"), &ids, &texts, cfg.truncate_dim, &providers)?;
                per.push(Prepared {
                    corpus: p.corpus.clone(),
                    descriptions: HashMap::new(),
                    excluded: Vec::new(),
                    ids,
                    texts,
                    embeddings,
                    embedding_hash,
                });
            }
            let (r, _) = measure_pair(&mut ws, key, &per[0], &per[1], (&names.0, &names.1), &[key.to_string()], cfg)?;
            reports.push(r);
        }
    }
    let mut excluded = BTreeMap::new();
    excluded.insert("real".to_string(), real.excluded.clone());
    excluded.insert("sim".to_string(), sim.excluded.clone());
    write_json(&ws.path("reports.json"), &reports)?;
    write_json(&ws.path("excluded.json"), &excluded)?;
    ws.record("report", &["reports.json", "excluded.json"], String::new(), String::new(), cfg.seed)?;
    Ok(RunOutcome {
        dir: cfg.out.clone(),
        reports,
        excluded,
        provider_requests: providers.request_count(),
    })
}

/// Conversations of `corpus` that survived every stage of a run.
pub fn surviving(corpus: &Corpus, ids: &[String]) -> Vec<Conversation> {
    let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    corpus
        .conversations()
        .iter()
        .filter(|c| keep.contains(c.id.as_str()))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests;
