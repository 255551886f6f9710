//! `fbsdiag` subcommands. Exit codes: 0 success, 1 domain error, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use fbsdiag::chunker::generate_chunks;
use fbsdiag::config::Config;
use fbsdiag::diagnose::Scoring;
use fbsdiag::eval::{gen_synthetic_line, read_suite, run_ablation, SynthParams};
use fbsdiag::ingest::{self, list_records, read_model_spec, read_record_specs};
use fbsdiag::store::{self, StoreError};
use fbsdiag::{
    bundled, infer_causes, ChunkMethod, DiagnoseOptions, DiagnosisIndex, DiagnosisQuery,
    EmbedderKind, KnowledgeGraph, Level, NodeId, ValidationReport,
};

use crate::envelope::ApiEnvelope;

#[derive(Debug, Parser)]
#[command(
    name = "fbsdiag",
    version,
    about = "Failure-cause diagnosis over an FBS knowledge graph"
)]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// TOML configuration file. PORT, GRAPH_PATH and EMBED_KEY_ENV override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a graph from a model spec or add maintenance records to it.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Check a graph file (or a model spec) against the ontology rules.
    Validate(ValidateArgs),
    /// Write the chunks of one method to a file for inspection.
    Chunk(ChunkArgs),
    /// Build and save a retrieval index beside the graph.
    Index(IndexArgs),
    /// Rank candidate causes for an observed failure.
    Diagnose(DiagnoseArgs),
    /// Evaluation suites and synthetic data.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Export the graph as property-graph CSV files and a Cypher script.
    Export(ExportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write the bundled example line, records and suite to a directory.
    Bundled(BundledArgs),
}

#[derive(Debug, Subcommand)]
pub enum IngestCommand {
    /// Build a new graph from a model spec.
    Model {
        file: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Replace an existing graph file.
        #[arg(long)]
        force: bool,
    },
    /// Add one record or a list of records. All or nothing.
    Record {
        file: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, conflicts_with_all = ["model", "bundled"])]
    pub graph: Option<PathBuf>,
    /// Validate the graph built from this model spec instead.
    #[arg(long, conflicts_with = "bundled")]
    pub model: Option<PathBuf>,
    /// Validate the bundled line model with its records replayed.
    #[arg(long)]
    pub bundled: bool,
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value = "proposed")]
    pub method: ChunkMethod,
    #[arg(long)]
    pub level: Option<Level>,
    /// Include every HasPart ancestor of attached system nodes.
    #[arg(long)]
    pub include_ancestor_path: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value = "proposed")]
    pub method: ChunkMethod,
    #[arg(long)]
    pub level: Option<Level>,
    #[arg(long)]
    pub provider: Option<EmbedderKind>,
    /// Defaults to `<graph>.<method>[.<level>].index.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Description of the observed failure.
    #[arg(long)]
    pub text: String,
    /// Level at which the failure was observed. Required for `proposed`.
    #[arg(long)]
    pub level: Option<Level>,
    #[arg(long, default_value = "proposed")]
    pub method: ChunkMethod,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// System node id; keeps only anchors inside its subtree.
    #[arg(long)]
    pub attach: Option<String>,
    #[arg(long)]
    pub dedup: bool,
    /// Chunks retrieved (default from config).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub scoring: Option<Scoring>,
    #[arg(long)]
    pub provider: Option<EmbedderKind>,
    /// Use a saved index instead of building one.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Score methods against a suite's ground truth.
    Run(EvalRunArgs),
    /// Generate a synthetic line, records and suite.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvalRunArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "proposed,baseline")]
    pub methods: Vec<ChunkMethod>,
    #[arg(long)]
    pub provider: Option<EmbedderKind>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    pub processes: usize,
    #[arg(long, default_value_t = 4)]
    pub elements: usize,
    #[arg(long, default_value_t = 3)]
    pub records_per_topic: usize,
    /// Share of failure-label words replaced by synonyms, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub bind: Option<String>,
    /// Static files served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BundledArgs {
    #[arg(long)]
    pub out: PathBuf,
}

/// Error reported by a subcommand.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub detail: Option<Value>,
    pub exit: i32,
}

impl CliError {
    fn domain(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.into(),
            message: message.into(),
            detail: None,
            exit: 1,
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::domain(e.code(), e.to_string())
            }
        }
    )*};
}

domain_from!(
    fbsdiag::ingest::IngestError,
    StoreError,
    fbsdiag::diagnose::DiagnoseError,
    fbsdiag::eval::EvalError,
    fbsdiag::eval::SynthError,
    fbsdiag::config::ConfigError
);

/// What a successful command produced, in both output formats.
struct Output {
    text: String,
    json: Value,
    /// Exit code for completed commands that still report a problem.
    exit: i32,
}

impl Output {
    fn new(text: impl Into<String>, json: Value) -> Self {
        Output {
            text: text.into(),
            json,
            exit: 0,
        }
    }
}

fn usage_error(kind: clap::error::ErrorKind, message: impl std::fmt::Display) -> clap::Error {
    Cli::command().error(kind, message)
}

/// Parses `argv` and runs the command, writing results to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => return report_clap(e, out, err),
    };
    if let Command::Diagnose(a) = &cli.command {
        if a.method == ChunkMethod::Proposed && a.level.is_none() {
            let e = usage_error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "--level is required with --method proposed (the level at which the failure was observed)",
            );
            return report_clap(e, out, err);
        }
    }
    if let Command::Chunk(a) = &cli.command {
        if a.method == ChunkMethod::Proposed && a.level.is_none() {
            let e = usage_error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "--level is required with --method proposed",
            );
            return report_clap(e, out, err);
        }
    }
    if let Command::Index(a) = &cli.command {
        if a.method == ChunkMethod::Proposed && a.level.is_none() {
            let e = usage_error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "--level is required with --method proposed",
            );
            return report_clap(e, out, err);
        }
    }

    let format = cli.format;
    match execute(cli) {
        Ok(o) => {
            match format {
                Format::Text => {
                    let _ = out.write_all(o.text.as_bytes());
                    if !o.text.is_empty() && !o.text.ends_with('\n') {
                        let _ = writeln!(out);
                    }
                }
                Format::Json => write_json(out, &ApiEnvelope::ok(o.json)),
            }
            o.exit
        }
        Err(e) => {
            match format {
                Format::Text => {
                    let _ = writeln!(err, "error [{}]: {}", e.code, e.message);
                }
                Format::Json => write_json(
                    out,
                    &ApiEnvelope::error(e.code.clone(), e.message.clone(), e.detail.clone()),
                ),
            }
            e.exit
        }
    }
}

fn report_clap(e: clap::Error, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    use clap::error::ErrorKind;
    if matches!(
        e.kind(),
        ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
    ) {
        let _ = write!(out, "{}", e.render());
        return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
            2
        } else {
            0
        };
    }
    let _ = write!(err, "{}", e.render());
    2
}

fn write_json(out: &mut dyn Write, env: &ApiEnvelope) {
    let _ = serde_json::to_writer_pretty(&mut *out, env);
    let _ = writeln!(out);
}

fn execute(cli: Cli) -> Result<Output, CliError> {
    let config = Config::load(cli.config.as_deref())?;
    let graph_path = |p: Option<PathBuf>| p.unwrap_or_else(|| config.service.graph_path.clone());
    match cli.command {
        Command::Ingest(IngestCommand::Model { file, graph, force }) => {
            ingest_model(&file, &graph_path(graph), force)
        }
        Command::Ingest(IngestCommand::Record { file, graph }) => {
            ingest_records(&file, &graph_path(graph))
        }
        Command::Validate(a) => validate(a, &config),
        Command::Chunk(a) => chunk(&graph_path(a.graph.clone()), a, &config),
        Command::Index(a) => index(&graph_path(a.graph.clone()), a, &config),
        Command::Diagnose(a) => diagnose(&graph_path(a.graph.clone()), a, &config),
        Command::Eval(EvalCommand::Run(a)) => eval_run(&graph_path(a.graph.clone()), a, &config),
        Command::Eval(EvalCommand::Synth(a)) => synth(a),
        Command::Export(a) => export(&graph_path(a.graph), &a.out),
        Command::Serve(a) => serve(a, config),
        Command::Bundled(a) => write_bundled(&a.out),
    }
}

fn load(path: &Path) -> Result<KnowledgeGraph, CliError> {
    Ok(store::load_graph(path)?)
}

fn ingest_model(file: &Path, graph: &Path, force: bool) -> Result<Output, CliError> {
    if graph.exists() && !force {
        return Err(CliError::domain(
            "graph-exists",
            format!(
                "{} already exists (use --force to replace it)",
                graph.display()
            ),
        ));
    }
    let spec = read_model_spec(file)?;
    let g = ingest::build_fbs_model(&spec)?;
    store::save_graph(&g, graph)?;
    Ok(Output::new(
        format!(
            "{} system nodes, {} system edges -> {}",
            g.system_count(),
            g.system_edge_count(),
            graph.display()
        ),
        json!({"graph": graph, "system_nodes": g.system_count(), "system_edges": g.system_edge_count()}),
    ))
}

fn ingest_records(file: &Path, graph: &Path) -> Result<Output, CliError> {
    let mut g = load(graph)?;
    let specs = read_record_specs(file)?;
    let mut stored = Vec::new();
    for spec in &specs {
        let id = ingest::add_maintenance_record(&mut g, spec)
            .map_err(|e| CliError::from(e).with_detail(json!({"record_id": spec.record_id})))?;
        stored.push(id);
    }
    store::save_graph(&g, graph)?;
    let records = list_records(&g).len();
    Ok(Output::new(
        format!(
            "stored {} record(s); graph holds {} records, {} failures",
            stored.len(),
            records,
            g.failure_count()
        ),
        json!({"stored": stored, "records": records, "failures": g.failure_count()}),
    ))
}

fn report_output(report: &ValidationReport, subject: &str) -> Output {
    let mut text = format!("{subject}: {} violations\n", report.len());
    for v in &report.violations {
        let _ = writeln!(text, "  {v}");
    }
    let mut o = Output::new(
        text,
        json!({"violations": report.violations, "count": report.len()}),
    );
    o.exit = i32::from(!report.is_empty());
    o
}

fn validate(a: ValidateArgs, config: &Config) -> Result<Output, CliError> {
    let (subject, result) = if a.bundled {
        (
            "bundled line".to_string(),
            bundled::line_graph().map(|g| g.check()),
        )
    } else if let Some(model) = &a.model {
        let spec = read_model_spec(model)?;
        (
            model.display().to_string(),
            ingest::build_fbs_model(&spec).map(|g| g.check()),
        )
    } else {
        let path = a.graph.unwrap_or_else(|| config.service.graph_path.clone());
        let subject = path.display().to_string();
        return match store::load_graph(&path) {
            Ok(g) => Ok(report_output(&g.check(), &subject)),
            Err(StoreError::Invalid { report, .. }) => Ok(report_output(&report, &subject)),
            Err(e) => Err(e.into()),
        };
    };
    match result {
        Ok(report) => Ok(report_output(&report, &subject)),
        Err(fbsdiag::ingest::IngestError::Invalid(report)) => Ok(report_output(&report, &subject)),
        Err(e) => Err(e.into()),
    }
}

fn chunk(graph: &Path, a: ChunkArgs, config: &Config) -> Result<Output, CliError> {
    let g = load(graph)?;
    let mut options = config.chunking;
    options.include_ancestor_path |= a.include_ancestor_path;
    let chunks = generate_chunks(&g, a.method, a.level, options).map_err(|e| CliError {
        code: "level-missing".into(),
        message: e.to_string(),
        detail: None,
        exit: 2,
    })?;
    let mut text = serde_json::to_string_pretty(&chunks).expect("chunks serialize");
    text.push('\n');
    match a.out {
        Some(out) => {
            std::fs::write(&out, text)
                .map_err(|e| CliError::domain("io-error", format!("{}: {e}", out.display())))?;
            Ok(Output::new(
                format!("{} {} chunks -> {}", chunks.len(), a.method, out.display()),
                json!({"chunks": chunks.len(), "out": out}),
            ))
        }
        None => Ok(Output::new(text, json!({"chunks": chunks}))),
    }
}

/// `<graph>.<method>[.<level>].index.json`
pub fn default_index_path(graph: &Path, method: ChunkMethod, level: Option<Level>) -> PathBuf {
    let mut name = graph
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "graph".into());
    name.push('.');
    name.push_str(method.as_str());
    if let (ChunkMethod::Proposed, Some(level)) = (method, level) {
        name.push('.');
        name.push_str(level.as_str());
    }
    name.push_str(".index.json");
    graph.with_file_name(name)
}

fn embedder(config: &Config, provider: Option<EmbedderKind>) -> fbsdiag::EmbedderConfig {
    let mut e = config.embedder.clone();
    if let Some(kind) = provider {
        e.kind = kind;
    }
    e
}

fn index(graph: &Path, a: IndexArgs, config: &Config) -> Result<Output, CliError> {
    let g = load(graph)?;
    let idx = DiagnosisIndex::build(
        &g,
        a.method,
        a.level,
        config.chunking,
        &embedder(config, a.provider),
    )?;
    let out = a
        .out
        .unwrap_or_else(|| default_index_path(graph, a.method, a.level));
    idx.save(&out)?;
    Ok(Output::new(
        format!(
            "{} chunks indexed ({}) -> {}",
            idx.chunks().len(),
            idx.vectors().fingerprint(),
            out.display()
        ),
        json!({"chunks": idx.chunks().len(), "fingerprint": idx.vectors().fingerprint(), "out": out}),
    ))
}

fn diagnose(graph: &Path, a: DiagnoseArgs, config: &Config) -> Result<Output, CliError> {
    let g = load(graph)?;
    let idx = match &a.index {
        Some(p) => DiagnosisIndex::load(p)?,
        None => DiagnosisIndex::build(
            &g,
            a.method,
            a.level,
            config.chunking,
            &embedder(config, a.provider),
        )?,
    };
    let query = DiagnosisQuery {
        description: a.text,
        level: a.level,
        attach_hint: a.attach.map(NodeId::new),
        method: a.method,
        n: a.n,
    };
    let mut options: DiagnoseOptions = config.retrieval;
    options.dedup |= a.dedup;
    if let Some(k) = a.k {
        options.k = k;
    }
    if let Some(s) = a.scoring {
        options.scoring = s;
    }
    let list = infer_causes(&g, &idx, &query, &options)?;
    let mut text = String::from("rank\tscore\tlabel\tprovenance\n");
    for c in &list.causes {
        let _ = writeln!(
            text,
            "{}\t{:.4}\t{}\t{}",
            c.rank,
            c.score,
            c.label,
            c.provenance.join(",")
        );
    }
    Ok(Output::new(
        text,
        serde_json::to_value(&list).expect("list serializes"),
    ))
}

fn eval_run(graph: &Path, a: EvalRunArgs, config: &Config) -> Result<Output, CliError> {
    let g = load(graph)?;
    let suite = read_suite(&a.suite)?;
    let report = run_ablation(&g, &suite, &a.methods, &embedder(config, a.provider))?;
    report.write_to(&a.out)?;
    let mut o = Output::new(
        report.summary_text(),
        serde_json::to_value(&report).expect("report serializes"),
    );
    if let Some(i) = &report.interrupted {
        // Partial results are on disk; the run itself still failed.
        o.exit = 1;
        o.text.push_str(&format!(
            "partial results written to {} ({})\n",
            a.out.display(),
            i.code
        ));
    }
    Ok(o)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::domain("io-error", format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::domain("io-error", format!("{}: {e}", dir.display())))
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    s
}

fn synth(a: SynthArgs) -> Result<Output, CliError> {
    let params = SynthParams {
        processes: a.processes,
        elements_per_process: a.elements,
        records_per_topic: a.records_per_topic,
        drift: a.drift,
        seed: a.seed,
    };
    let data = gen_synthetic_line(&params)?;
    let g = data.build_graph()?;
    create_dir(&a.out)?;
    write_file(&a.out.join("model.json"), &pretty(&data.model))?;
    write_file(&a.out.join("records.json"), &pretty(&data.records))?;
    write_file(&a.out.join("suite.json"), &pretty(&data.suite))?;
    store::save_graph(&g, a.out.join("line.dkg"))?;
    Ok(Output::new(
        format!(
            "{} system nodes, {} records, {} queries -> {}",
            g.system_count(),
            data.records.len(),
            data.suite.queries.len(),
            a.out.display()
        ),
        json!({"system_nodes": g.system_count(), "records": data.records.len(), "queries": data.suite.queries.len(), "out": a.out}),
    ))
}

fn export(graph: &Path, out: &Path) -> Result<Output, CliError> {
    let g = load(graph)?;
    store::export_property_graph(&g, out)?;
    let script = out.join("graph.cypher");
    store::export_graph_script(&g, &script)?;
    Ok(Output::new(
        format!(
            "{} nodes, {} relationships -> {}",
            g.system_count() + g.failure_count(),
            g.edge_count(),
            out.display()
        ),
        json!({"nodes": g.system_count() + g.failure_count(), "relationships": g.edge_count(), "out": out}),
    ))
}

fn serve(a: ServeArgs, mut config: Config) -> Result<Output, CliError> {
    if let Some(g) = a.graph {
        config.service.graph_path = g;
    }
    if let Some(p) = a.port {
        config.service.port = p;
    }
    if let Some(b) = a.bind {
        config.service.bind = b;
    }
    if a.ui_dir.is_some() {
        config.service.ui_dir = a.ui_dir;
    }
    let runtime =
        tokio::runtime::Runtime::new().map_err(|e| CliError::domain("io-error", e.to_string()))?;
    runtime
        .block_on(crate::service::serve(config))
        .map_err(|e| CliError::domain(e.code(), e.to_string()))?;
    Ok(Output::new("", json!({"stopped": true})))
}

fn write_bundled(out: &Path) -> Result<Output, CliError> {
    create_dir(out)?;
    write_file(&out.join("lego_line_model.json"), bundled::LINE_MODEL_JSON)?;
    write_file(
        &out.join("lego_line_records.json"),
        bundled::LINE_RECORDS_JSON,
    )?;
    write_file(&out.join("lego_line_suite.json"), bundled::LINE_SUITE_JSON)?;
    let g = bundled::line_graph()?;
    let graph = out.join("lego_line.dkg");
    store::save_graph(&g, &graph)?;
    Ok(Output::new(
        format!(
            "bundled line: {} system nodes, {} records -> {}",
            g.system_count(),
            list_records(&g).len(),
            out.display()
        ),
        json!({"graph": graph, "system_nodes": g.system_count(), "records": list_records(&g).len()}),
    ))
}
