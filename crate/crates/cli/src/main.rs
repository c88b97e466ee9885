//! `bgap`: command-line front end for the behavior-gap pipeline.
//!
//! Settings come from built-in defaults, then `--config <file.json>`, then
//! explicit flags; the most specific source wins.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use behavior_gap::corpus::{CorpusKind, Task};
use behavior_gap::facets::parse_facet_subset;
use behavior_gap::gateway::ProviderConfig;
use behavior_gap::pipeline::{self, AblationSpec, IngestOptions, RepresentationMode, RunConfig, SimulatorEntry};
use behavior_gap::quantize::Algorithm;
use behavior_gap::simgen::SIMULATOR_TEMPERATURE;
use behavior_gap::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bgap", version, about = "Measure the behavior gap between real and simulated users")]
struct Cli {
    /// JSON run configuration; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Answer every model request from the response cache; a miss is an error.
    #[arg(long, global = true)]
    offline: bool,
    /// Use the built-in offline models instead of HTTP services.
    #[arg(long, global = true)]
    stub: bool,
    /// Response cache directory (default: <out>/cache).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Real,
    Sim,
}

impl From<Kind> for CorpusKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Real => CorpusKind::Real,
            Kind::Sim => CorpusKind::Simulated,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Coding,
    Writing,
    Other,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Coding => Task::Coding,
            TaskArg::Writing => Task::Writing,
            TaskArg::Other => Task::Other,
        }
    }
}

/// Representation and quantization settings shared by the measuring commands.
#[derive(Args, Debug, Default)]
struct Repr {
    /// `all` or a comma-separated facet list.
    #[arg(long)]
    facets: Option<String>,
    /// behavior_descriptions, raw_conversation or user_utterances_only.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    truncate_dim: Option<usize>,
    /// Number of clusters.
    #[arg(long)]
    k: Option<usize>,
    /// kmeans, gmm or agglomerative.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    annotator_model: Option<String>,
    #[arg(long)]
    embedder_model: Option<String>,
}

#[derive(Args, Debug, Default)]
struct Pair {
    #[arg(long)]
    real: Option<PathBuf>,
    #[arg(long)]
    sim: Option<PathBuf>,
    #[command(flatten)]
    repr: Repr,
}

#[derive(Args, Debug)]
struct Single {
    /// Corpus file (JSONL).
    input: PathBuf,
    /// Name used for the stored copies; defaults to the file stem.
    #[arg(long)]
    label: Option<String>,
    #[arg(long, value_enum, default_value = "real")]
    kind: Kind,
    #[command(flatten)]
    repr: Repr,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus and store a normalized copy.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, value_enum, default_value = "real")]
        kind: Kind,
        /// Classify each conversation's goal and set its task.
        #[arg(long)]
        classify_goals: bool,
        /// Keep only conversations of this task.
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
    },
    /// Generate simulated conversations from the goals of a corpus.
    Simulate {
        #[arg(long)]
        goals: PathBuf,
        /// Simulator as NAME=MODEL or NAME=MODEL@WEIGHT; repeat for a mixture.
        #[arg(long = "simulator")]
        simulators: Vec<String>,
        #[arg(long)]
        assistant_model: Option<String>,
        #[arg(long)]
        max_turns: Option<usize>,
        /// Name of the generated corpus.
        #[arg(long, default_value = "simulated")]
        name: String,
    },
    /// Write facet descriptions for one corpus.
    Describe(Single),
    /// Embed one corpus.
    Embed(Single),
    /// Fit the quantizer on a real/simulated pair.
    Quantize(Pair),
    /// Full measurement of a real/simulated pair.
    Measure {
        #[command(flatten)]
        pair: Pair,
        /// Also measure each facet on its own.
        #[arg(long)]
        per_facet: bool,
        #[arg(long)]
        no_interpret: bool,
    },
    /// Pairwise JS between simulated corpora under one quantizer.
    Pairwise {
        #[arg(long, num_args = 2.., required = true)]
        corpora: Vec<PathBuf>,
        #[command(flatten)]
        repr: Repr,
    },
    /// Categorize clusters and extract distinctive terms.
    Interpret {
        #[command(flatten)]
        pair: Pair,
        /// Ask the annotator model for extra stopwords.
        #[arg(long)]
        llm_filter: bool,
    },
    /// Linear separability of real and simulated representations.
    Probe(Pair),
    /// Sample odd-one-out triplets for human annotation.
    Triplets {
        #[command(flatten)]
        pair: Pair,
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Score a triplet annotation sheet against its answer key.
    ScoreAnnotations {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        sheet: PathBuf,
    },
    /// Rank correlation between pipeline variants.
    Ablate {
        /// Ablation spec (datasets and variants) to run.
        #[arg(long, conflicts_with = "results", required_unless_present = "results")]
        spec: Option<PathBuf>,
        /// Previously recorded results to correlate.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Print and export the metrics of a finished run.
    Report {
        /// Run directory; defaults to --out.
        dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let body = std::fs::read_to_string(p).map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&body).map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if cli.offline {
        cfg.offline = true;
    }
    if let Some(c) = &cli.cache_dir {
        cfg.cache_dir = Some(c.clone());
    }
    if cli.stub {
        cfg.use_stub_providers();
    }
    Ok(cfg)
}

fn apply_repr(cfg: &mut RunConfig, r: &Repr) -> Result<()> {
    if let Some(f) = &r.facets {
        cfg.facets = parse_facet_subset(f)?;
    }
    if let Some(m) = &r.mode {
        cfg.mode = m.parse::<RepresentationMode>()?;
    }
    if let Some(d) = r.truncate_dim {
        cfg.truncate_dim = d;
    }
    if let Some(k) = r.k {
        cfg.quantize.clusters.k = k;
    }
    if let Some(a) = &r.algorithm {
        cfg.quantize.clusters.algorithm = a.parse::<Algorithm>()?;
    }
    if let Some(m) = &r.annotator_model {
        cfg.annotator.model = m.clone();
    }
    if let Some(m) = &r.embedder_model {
        cfg.embedder.model = m.clone();
    }
    Ok(())
}

fn apply_pair(cfg: &mut RunConfig, p: &Pair) -> Result<()> {
    if let Some(r) = &p.real {
        cfg.real = Some(r.clone());
    }
    if let Some(s) = &p.sim {
        cfg.sim = Some(s.clone());
    }
    apply_repr(cfg, &p.repr)
}

fn parse_simulator(spec: &str, base: &ProviderConfig) -> Result<SimulatorEntry> {
    let (name, rest) = spec
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("--simulator {spec:?}: expected NAME=MODEL[@WEIGHT]")))?;
    let (model, weight) = match rest.rsplit_once('@') {
        Some((m, w)) => (
            m,
            w.parse::<f64>()
                .map_err(|_| Error::Invalid(format!("--simulator {spec:?}: bad weight {w:?}")))?,
        ),
        None => (rest, 1.0),
    };
    Ok(SimulatorEntry {
        name: name.to_string(),
        provider: ProviderConfig {
            model: model.to_string(),
            temperature: SIMULATOR_TEMPERATURE,
            ..base.clone()
        },
        weight,
    })
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest {
            input,
            label,
            kind,
            classify_goals,
            task,
        } => {
            let opts = IngestOptions {
                label,
                classify_goals,
                task: task.map(Task::from),
            };
            let out = pipeline::ingest(&cfg, &input, kind.into(), &opts)?;
            println!("{} conversations kept, {} dropped: {}", out.kept, out.dropped, show(&out.path));
        }
        Command::Simulate {
            goals,
            simulators,
            assistant_model,
            max_turns,
            name,
        } => {
            if !simulators.is_empty() {
                let base = cfg.assistant.clone();
                cfg.simulators = simulators
                    .iter()
                    .map(|s| parse_simulator(s, &base))
                    .collect::<Result<_>>()?;
                if cli.stub {
                    cfg.use_stub_providers();
                }
            }
            if let Some(m) = assistant_model {
                cfg.assistant.model = m;
            }
            if let Some(t) = max_turns {
                cfg.generation.max_turns = t;
            }
            let out = pipeline::simulate(&cfg, &goals, &name)?;
            println!(
                "{} conversations generated, {} failed: {}",
                out.corpus.len(),
                out.failures().count(),
                show(&cfg.out.join("corpus.jsonl"))
            );
        }
        Command::Describe(s) => {
            apply_repr(&mut cfg, &s.repr)?;
            let out = pipeline::describe(&cfg, &s.input, s.label.as_deref(), s.kind.into())?;
            println!(
                "{}: {} of {} conversations described, {} excluded",
                out.label,
                out.represented,
                out.conversations,
                out.excluded.len()
            );
        }
        Command::Embed(s) => {
            apply_repr(&mut cfg, &s.repr)?;
            let out = pipeline::embed_corpus(&cfg, &s.input, s.label.as_deref(), s.kind.into())?;
            println!("{}: {} representations embedded", out.label, out.represented);
        }
        Command::Quantize(p) => {
            apply_pair(&mut cfg, &p)?;
            let labels = pipeline::quantize(&cfg)?;
            println!("k = {}: {}", labels.k, show(&cfg.out.join("measure/main")));
        }
        Command::Measure {
            pair,
            per_facet,
            no_interpret,
        } => {
            apply_pair(&mut cfg, &pair)?;
            if per_facet {
                cfg.per_facet = true;
            }
            if no_interpret {
                cfg.interpret.enabled = false;
            }
            pipeline::run(&cfg)?;
            print!("{}", pipeline::report(&cfg.out)?.table);
        }
        Command::Pairwise { corpora, repr } => {
            cfg.corpora = corpora;
            apply_repr(&mut cfg, &repr)?;
            let m = pipeline::run_pairwise(&cfg)?;
            println!("{0}x{0} matrix: {1}", m.names.len(), show(&cfg.out.join("pairwise.csv")));
        }
        Command::Interpret { pair, llm_filter } => {
            apply_pair(&mut cfg, &pair)?;
            if llm_filter {
                cfg.interpret.llm_filter = true;
            }
            let s = pipeline::interpret(&cfg)?;
            let counts: Vec<String> = s.counts.iter().map(|(c, n)| format!("{} {n}", c.as_str())).collect();
            println!("{}: {}", counts.join(", "), show(&cfg.out.join("interpret/main")));
        }
        Command::Probe(p) => {
            apply_pair(&mut cfg, &p)?;
            let r = pipeline::probe(&cfg)?;
            println!("mean accuracy {:.4} over {} splits", r.mean_accuracy, r.accuracies.len());
        }
        Command::Triplets { pair, n } => {
            apply_pair(&mut cfg, &pair)?;
            let t = pipeline::triplets(&cfg, n)?;
            println!("{} triplets: {}", t.len(), show(&cfg.out.join("triplets")));
        }
        Command::ScoreAnnotations { key, sheet } => {
            let s = pipeline::score_annotation_files(&key, &sheet)?;
            println!(
                "accuracy {:.4}, Fleiss kappa {:.4} ({} triplets, {} annotators)",
                s.accuracy, s.kappa, s.triplets, s.annotators
            );
        }
        Command::Ablate { spec, results } => {
            let corr = match (spec, results) {
                (Some(p), _) => {
                    let body = std::fs::read_to_string(&p).map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?;
                    let spec: AblationSpec =
                        serde_json::from_str(&body).map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?;
                    pipeline::ablate(&cfg, &spec)?.1
                }
                (None, Some(p)) => {
                    let c = pipeline::correlate_results(&p)?;
                    let out = cfg.out.join("ablation_correlation.json");
                    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::Invalid(e.to_string()))?;
                    std::fs::write(&out, serde_json::to_vec_pretty(&c).expect("serializable"))
                        .map_err(|e| Error::Invalid(format!("{}: {e}", out.display())))?;
                    c
                }
                (None, None) => unreachable!("clap requires one of --spec or --results"),
            };
            for (i, a) in corr.variants.iter().enumerate() {
                for (j, b) in corr.variants.iter().enumerate().skip(i + 1) {
                    println!("{a} vs {b}: rho = {:.3}", corr.rho[i][j]);
                }
            }
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.out.clone());
            print!("{}", pipeline::report(&dir)?.table);
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format(|buf, record| {
            use std::io::Write;
            writeln!(buf, "{}: {}", record.level().as_str().to_lowercase(), one_line(&record.args().to_string()))
        })
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            if e.is_provider_failure() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
