use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use t2s_core::embed::HttpEmbedder;
use t2s_core::fewshot::Augmenter;
use t2s_core::harness::{
    load_training_pairs, run_bench, run_pipeline, BenchDeps, DbArtifacts, EvalReport, PipelineDeps, PipelineRun,
};
use t2s_core::llm::{Limited, RecordingGateway, SamplingMode};
use t2s_core::schema::RenderOptions;
use t2s_core::{
    ingest_schema, load_dataset, render_schema, Ablation, Database, Embedder, FewShotLibrary, LlmGateway,
    OpenAiGateway, PipelineConfig, ScriptedGateway, Task, TrigramEmbedder, Workspace,
};

#[derive(Parser, Debug)]
#[command(name = "t2s", version, about = "Multi-agent text-to-SQL pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Pipeline configuration (TOML). Flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the JSON result here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replay model replies from a transcript instead of calling the live endpoint.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    /// With --transcript, answer unmatched prompts with empty replies instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    /// Append every model exchange to this transcript file.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    /// Directory for saved value indexes.
    #[arg(long, global = true, default_value = "t2s-index")]
    index_dir: PathBuf,
    /// Questions evaluated concurrently; defaults to the number of cores.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Maximum concurrent model requests.
    #[arg(long, global = true, default_value_t = 8)]
    max_requests: usize,
    #[command(flatten)]
    overrides: Overrides,
    /// Log level filter, e.g. `info` or `t2s_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Few-shot examples per prompt.
    #[arg(long, global = true)]
    fewshots: Option<usize>,
    /// Candidates sampled per question.
    #[arg(long, global = true)]
    candidates: Option<usize>,
    /// Similarity threshold for value retrieval and column filtering.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Per-statement execution timeout in seconds.
    #[arg(long, global = true)]
    timeout: Option<f64>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    no_extraction: bool,
    #[arg(long, global = true)]
    no_value_retrieval: bool,
    #[arg(long, global = true)]
    no_column_filtering: bool,
    #[arg(long, global = true)]
    no_info_alignment: bool,
    #[arg(long, global = true)]
    no_fewshot: bool,
    #[arg(long, global = true)]
    no_cot: bool,
    #[arg(long, global = true)]
    no_alignments: bool,
    #[arg(long, global = true)]
    no_correction: bool,
    #[arg(long, global = true)]
    no_vote: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest schemas and build value indexes for one database directory or a root of them.
    Preprocess { db_dir: PathBuf },
    /// Augment training pairs into a Query-CoT-SQL few-shot library.
    Fewshot {
        train: PathBuf,
        /// Library file to create or resume.
        #[arg(long)]
        library: PathBuf,
        /// Database root, to show each pair's schema to the model.
        #[arg(long)]
        db_root: Option<PathBuf>,
    },
    /// Answer one question.
    Run {
        question: String,
        #[arg(long, default_value = "")]
        evidence: String,
        #[arg(long)]
        db_root: PathBuf,
        #[arg(long)]
        db_id: String,
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Run and score every task of a dataset.
    Bench {
        dataset: PathBuf,
        #[arg(long)]
        db_root: PathBuf,
        #[arg(long)]
        library: Option<PathBuf>,
        /// Write per-question stage traces as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score the full pipeline and the pipeline without each listed component.
    Ablate {
        dataset: PathBuf,
        #[arg(long)]
        db_root: PathBuf,
        #[arg(long)]
        library: Option<PathBuf>,
        /// Ablation flags, e.g. `no_vote,no_cot`; all of them when omitted.
        #[arg(long, value_delimiter = ',')]
        flags: Vec<String>,
    },
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(k) = self.fewshots {
            cfg.fewshots = k;
        }
        if let Some(n) = self.candidates {
            cfg.n_candidates = n;
        }
        if let Some(t) = self.threshold {
            cfg.values.threshold = t;
            cfg.column_threshold = t;
        }
        if let Some(t) = self.timeout {
            cfg.exec.timeout = std::time::Duration::try_from_secs_f64(t).context("--timeout")?;
        }
        if let Some(m) = &self.model {
            cfg.llm.model_name = m.clone();
        }
        let flags = [
            ("no_extraction", self.no_extraction),
            ("no_value_retrieval", self.no_value_retrieval),
            ("no_column_filtering", self.no_column_filtering),
            ("no_info_alignment", self.no_info_alignment),
            ("no_fewshot", self.no_fewshot),
            ("no_cot", self.no_cot),
            ("no_alignments", self.no_alignments),
            ("no_correction", self.no_correction),
            ("no_vote", self.no_vote),
        ];
        for (name, on) in flags {
            if on {
                cfg.ablation.set(name)?;
            }
        }
        Ok(())
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    g.overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn gateway(g: &Global) -> Result<Box<dyn LlmGateway>> {
    let inner: Box<dyn LlmGateway> = match &g.transcript {
        Some(p) => Box::new(ScriptedGateway::from_file(p, !g.lenient)?),
        None => match OpenAiGateway::from_env(SamplingMode::Native) {
            Some(live) => Box::new(Limited::new(live?, g.max_requests)),
            None => bail!("no model configured: set T2S_LLM_ENDPOINT (and T2S_LLM_KEY) or pass --transcript"),
        },
    };
    Ok(match &g.record {
        Some(p) => Box::new(RecordingGateway::new(inner, p).with_context(|| format!("opening {}", p.display()))?),
        None => inner,
    })
}

fn embedder() -> Result<Arc<dyn Embedder>> {
    Ok(match HttpEmbedder::from_env() {
        Some(e) => Arc::new(e?),
        None => Arc::new(TrigramEmbedder),
    })
}

fn library(path: Option<&Path>) -> Result<FewShotLibrary> {
    match path {
        Some(p) => FewShotLibrary::load(p).with_context(|| format!("loading few-shot library {}", p.display())),
        None => Ok(FewShotLibrary::default()),
    }
}

fn parallelism(g: &Global) -> usize {
    g.parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    if let Some(p) = path {
        let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

fn write_traces(path: &Path, runs: &[PipelineRun]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in runs {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// A BIRD database directory holds `<name>.sqlite` named after itself;
/// anything else is treated as a root of such directories.
fn databases(dir: &Path) -> Result<Vec<Database>> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .context("database directory has no name")?;
    let own = dir.join(format!("{name}.sqlite"));
    if own.exists() {
        return Ok(vec![Database::with_id(name, own)]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if let Some(id) = path.file_name().and_then(|n| n.to_str()) {
            let file = path.join(format!("{id}.sqlite"));
            if file.exists() {
                out.push(Database::with_id(id, file));
            }
        }
    }
    out.sort_by(|a, b| a.db_id().cmp(b.db_id()));
    if out.is_empty() {
        bail!("no <db_id>/<db_id>.sqlite databases under {}", dir.display());
    }
    Ok(out)
}

fn preprocess(g: &Global, db_dir: &Path) -> Result<serde_json::Value> {
    let embedder = embedder()?;
    std::fs::create_dir_all(&g.index_dir)?;
    let mut summary = Vec::new();
    for db in databases(db_dir)? {
        let id = db.db_id().to_string();
        let a = DbArtifacts::prepare(db, Some(&g.index_dir), embedder.as_ref())
            .with_context(|| format!("preprocessing {id}"))?;
        println!(
            "{id}: {} tables, {} columns, {} index entries",
            a.catalog.tables().len(),
            a.catalog.all_columns().count(),
            a.index.len()
        );
        summary.push(json!({
            "db_id": id,
            "tables": a.catalog.tables().len(),
            "columns": a.catalog.all_columns().count(),
            "index_entries": a.index.len(),
            "index_file": t2s_core::harness::index_file(&g.index_dir, &id),
        }));
    }
    Ok(json!({ "databases": summary }))
}

fn fewshot(g: &Global, train: &Path, out: &Path, db_root: Option<&Path>) -> Result<serde_json::Value> {
    let cfg = load_config(g)?;
    let pairs = load_training_pairs(train)?;
    let llm = gateway(g)?;
    let embedder = embedder()?;
    let mut schemas: BTreeMap<String, String> = BTreeMap::new();
    if let Some(root) = db_root {
        for id in pairs.iter().filter_map(|p| p.db_id.clone()) {
            if schemas.contains_key(&id) {
                continue;
            }
            let catalog = ingest_schema(&Database::in_root(root, &id)).with_context(|| format!("schema of {id}"))?;
            let text = render_schema(&catalog, None, RenderOptions { descriptions: false })?;
            schemas.insert(id, text);
        }
    }
    let mut augmenter = Augmenter::new(llm.as_ref(), embedder.as_ref());
    augmenter.config = cfg.refinement_llm();
    augmenter.parallelism = parallelism(g);
    let lib = augmenter.build(&pairs, out, |p| p.db_id.as_ref().and_then(|id| schemas.get(id).cloned()))?;
    let degraded = lib.shots.iter().filter(|s| s.cot.is_none()).count();
    println!("{} examples in {} ({degraded} without reasoning)", lib.len(), out.display());
    Ok(json!({ "library": out, "examples": lib.len(), "degraded": degraded }))
}

fn run_one(g: &Global, question: &str, evidence: &str, root: &Path, db_id: &str, lib: Option<&Path>) -> Result<serde_json::Value> {
    let cfg = load_config(g)?;
    let llm = gateway(g)?;
    let embedder = embedder()?;
    let library = library(lib)?;
    let ws = Workspace::new(root, Some(g.index_dir.clone()));
    let artifacts = ws.get(db_id, embedder.as_ref())?;
    let task = Task {
        question_id: "cli".into(),
        db_id: db_id.into(),
        question: question.into(),
        evidence: evidence.into(),
        gold_sql: String::new(),
        difficulty: None,
    };
    let run = run_pipeline(
        &task,
        &cfg,
        &PipelineDeps {
            artifacts: &artifacts,
            library: &library,
            embedder: embedder.as_ref(),
            llm: llm.as_ref(),
        },
    );
    match &run.final_sql {
        Some(sql) => println!("{sql}"),
        None => eprintln!("no SQL: {}", run.error.as_deref().unwrap_or("unknown failure")),
    }
    Ok(serde_json::to_value(&run)?)
}

struct BenchInputs {
    tasks: Vec<Task>,
    library: FewShotLibrary,
    llm: Box<dyn LlmGateway>,
    embedder: Arc<dyn Embedder>,
    workspace: Workspace,
}

impl BenchInputs {
    fn new(g: &Global, dataset: &Path, root: &Path, lib: Option<&Path>) -> Result<Self> {
        Ok(Self {
            tasks: load_dataset(dataset)?,
            library: library(lib)?,
            llm: gateway(g)?,
            embedder: embedder()?,
            workspace: Workspace::new(root, Some(g.index_dir.clone())),
        })
    }

    fn bench(&self, cfg: &PipelineConfig, parallelism: usize) -> (EvalReport, Vec<PipelineRun>) {
        let deps = BenchDeps {
            workspace: &self.workspace,
            library: &self.library,
            embedder: self.embedder.as_ref(),
            llm: self.llm.as_ref(),
        };
        run_bench(&self.tasks, cfg, &deps, parallelism)
    }
}

fn summary_line(label: &str, r: &EvalReport) {
    println!(
        "{label}: EX {:.2}% over {} tasks, R-VES {:.2}, {} skipped",
        r.overall.ex * 100.0,
        r.overall.count,
        r.overall.rves,
        r.skipped
    );
}

fn bench(g: &Global, dataset: &Path, root: &Path, lib: Option<&Path>, trace: Option<&Path>) -> Result<serde_json::Value> {
    let cfg = load_config(g)?;
    let inputs = BenchInputs::new(g, dataset, root, lib)?;
    let (report, runs) = inputs.bench(&cfg, parallelism(g));
    summary_line("bench", &report);
    if let Some(p) = trace {
        write_traces(p, &runs)?;
    }
    Ok(serde_json::to_value(&report)?)
}

fn ablate(g: &Global, dataset: &Path, root: &Path, lib: Option<&Path>, flags: &[String]) -> Result<serde_json::Value> {
    let base = load_config(g)?;
    let flags: Vec<String> = if flags.is_empty() {
        Ablation::FLAGS.iter().map(|f| f.to_string()).collect()
    } else {
        flags.to_vec()
    };
    let mut runs = vec![("full".to_string(), base.clone())];
    for f in &flags {
        let mut cfg = base.clone();
        cfg.ablation.set(f)?;
        runs.push((f.trim_start_matches('-').replace('-', "_"), cfg));
    }
    let inputs = BenchInputs::new(g, dataset, root, lib)?;
    let mut rows = Vec::new();
    for (label, cfg) in runs {
        let (report, _) = inputs.bench(&cfg, parallelism(g));
        summary_line(&label, &report);
        rows.push(json!({ "variant": label, "report": report }));
    }
    Ok(json!({ "format": "t2s-ablation-report", "version": 1, "variants": rows }))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let value = match &cli.command {
        Command::Preprocess { db_dir } => preprocess(g, db_dir)?,
        Command::Fewshot { train, library, db_root } => fewshot(g, train, library, db_root.as_deref())?,
        Command::Run {
            question,
            evidence,
            db_root,
            db_id,
            library,
        } => run_one(g, question, evidence, db_root, db_id, library.as_deref())?,
        Command::Bench {
            dataset,
            db_root,
            library,
            trace,
        } => bench(g, dataset, db_root, library.as_deref(), trace.as_deref())?,
        Command::Ablate {
            dataset,
            db_root,
            library,
            flags,
        } => ablate(g, dataset, db_root, library.as_deref(), flags)?,
    };
    write_json(g.out.as_deref(), &value)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.global.log))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
