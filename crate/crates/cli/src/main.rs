//! `cca`: command-line driver for the curation pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 external
//! command failure. Machine-readable output is JSON on stdout; the human
//! summary goes to stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cca_core::config::ConfigError;
use cca_core::eval::{eval_grouped, load_groups, parse_mapping, DistanceNorm, EvalGroup, MappingEntry, Role};
use cca_core::pipeline::{read_reports, Pipeline, PipelineError, PipelineStage, StageRange, StageReport};
use cca_core::synth::{generate, SynthSpec};
use cca_core::PipelineConfig;

#[derive(Parser)]
#[command(name = "cca", version, about = "Clean-collector curation pipeline for SAR-to-EO datasets")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (overrides run.workers; 0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory for manifests and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// First stage for `run`.
    #[arg(long, global = true)]
    stage_from: Option<PipelineStage>,
    /// Last stage for `run`.
    #[arg(long, global = true)]
    stage_to: Option<PipelineStage>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load the catalog into ingest.json.
    Ingest,
    /// Stages 1 and 2 (cloud, night, no-data).
    Filter,
    /// Stage 3 (Fréchet score against the cloud subset).
    Score,
    /// Build SAR–EO pairs.
    Pair,
    /// Normalize paired SAR scenes and render EO references.
    Prep,
    /// Run the external translation model through the file bridge.
    Translate,
    /// Evaluate model outputs against references.
    Eval(EvalArgs),
    /// Generate a labelled synthetic corpus.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Summarize the stage reports in the output directory.
    Report,
    /// Run a range of stages in order (default: all configured stages).
    Run {
        /// Skip stages whose manifest already matches the config.
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of model outputs (standalone mode).
    #[arg(long)]
    outputs: Option<PathBuf>,
    /// Directory of reference images (standalone mode).
    #[arg(long)]
    references: Option<PathBuf>,
    /// CSV `query_key,role,path`; without it all outputs and references form one group.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    norm: Option<DistanceNorm>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Pipeline(PipelineError),
    Config(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) => e.exit_code() as u8,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Pipeline(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Pipeline(e.into())
    }
}

fn load_config(global: &Global) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = global.workers {
        cfg.run.workers = w;
    }
    Ok(cfg)
}

fn pipeline(global: &Global) -> Result<Pipeline, CliError> {
    Ok(Pipeline::new(load_config(global)?, &global.out)?)
}

fn summarize(reports: &[StageReport]) {
    for r in reports {
        let dropped: Vec<String> = r
            .dropped
            .iter()
            .map(|(rule, n)| format!("{}={n}", serde_json::to_value(rule).unwrap().as_str().unwrap_or("?")))
            .collect();
        eprintln!(
            "{:<9} input {:>6}  kept {:>6}  dropped [{}]  {:.2}s  {:.1}/s  workers {}",
            r.stage.name(),
            r.input,
            r.kept,
            dropped.join(", "),
            r.wall_time_s,
            r.throughput_per_s,
            r.workers
        );
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run_stages(global: &Global, range: StageRange, resume: bool) -> Result<(), CliError> {
    let p = pipeline(global)?;
    let reports = p.run(range, resume)?;
    summarize(&reports);
    print_json(&reports);
    Ok(())
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "tif" | "tiff")))
        .collect();
    files.sort();
    Ok(files
        .into_iter()
        .map(|p| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or(p))
        .collect())
}

fn eval_cmd(global: &Global, args: &EvalArgs) -> Result<(), CliError> {
    let (Some(outputs), Some(references)) = (&args.outputs, &args.references) else {
        // Pipeline mode: evaluate the translated pairs.
        return run_stages(global, StageRange::single(PipelineStage::Eval), false);
    };
    let norm = match args.norm {
        Some(n) => n,
        None => load_config(global)?.eval.norm,
    };
    let groups: BTreeMap<String, EvalGroup> = match &args.mapping {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let entries = parse_mapping(&text).map_err(|e| CliError::Data(e.to_string()))?;
            load_groups(&entries, outputs, references).map_err(|e| CliError::Data(e.to_string()))?
        }
        None => {
            let entries: Vec<MappingEntry> = list_images(outputs)?
                .into_iter()
                .map(|path| MappingEntry {
                    query_key: "all".into(),
                    role: Role::Output,
                    path,
                })
                .chain(list_images(references)?.into_iter().map(|path| MappingEntry {
                    query_key: "all".into(),
                    role: Role::Reference,
                    path,
                }))
                .collect();
            load_groups(&entries, outputs, references).map_err(|e| CliError::Data(e.to_string()))?
        }
    };
    let report = eval_grouped(&groups, norm).map_err(|e| CliError::Data(e.to_string()))?;
    eprintln!(
        "eval: {} references, total {:.6}, mean MAE {:.6}, sharpness {:.6}",
        report.per_reference.len(),
        report.total,
        report.mean_mae,
        report.sharpness
    );
    match &args.report {
        Some(path) => {
            let json = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
            cca_core::pipeline::write_atomic(path, json.as_bytes())?;
        }
        None => print_json(&report),
    }
    Ok(())
}

fn synth_cmd(spec: Option<&Path>, global: &Global) -> Result<(), CliError> {
    let spec = match spec {
        Some(p) => SynthSpec::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => SynthSpec::default(),
    };
    let out = &global.out;
    let generated = generate(&spec, out).map_err(|e| match e {
        cca_core::synth::SynthError::InvalidSpec(_) | cca_core::synth::SynthError::Parse(_) => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    eprintln!(
        "synth: {} EO + {} SAR scenes written to {}",
        generated.eo_scenes,
        generated.sar_scenes,
        out.display()
    );
    print_json(&serde_json::json!({
        "catalog": generated.catalog,
        "labels": generated.labels,
        "cloud_subset": generated.cloud_subset,
        "config": generated.config,
        "eo_scenes": generated.eo_scenes,
        "sar_scenes": generated.sar_scenes,
    }));
    Ok(())
}

fn default_range(global: &Global) -> Result<StageRange, CliError> {
    let cfg = load_config(global)?;
    let last = if cfg.bridge.command.is_some() {
        PipelineStage::Eval
    } else {
        PipelineStage::Prep
    };
    let range = StageRange {
        from: global.stage_from.unwrap_or(PipelineStage::Ingest),
        to: global.stage_to.unwrap_or(last),
    };
    if range.from > range.to {
        return Err(CliError::Config(format!("--stage-from {} comes after --stage-to {}", range.from, range.to)));
    }
    Ok(range)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let single = |s| run_stages(g, StageRange::single(s), false);
    match &cli.command {
        Cmd::Ingest => single(PipelineStage::Ingest),
        Cmd::Filter => single(PipelineStage::Filter),
        Cmd::Score => single(PipelineStage::Score),
        Cmd::Pair => single(PipelineStage::Pair),
        Cmd::Prep => single(PipelineStage::Prep),
        Cmd::Translate => single(PipelineStage::Translate),
        Cmd::Eval(args) => eval_cmd(g, args),
        Cmd::Synth { spec } => synth_cmd(spec.as_deref(), g),
        Cmd::Report => {
            let reports = read_reports(&g.out)?;
            summarize(&reports);
            print_json(&reports);
            Ok(())
        }
        Cmd::Run { resume } => run_stages(g, default_range(g)?, *resume),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
