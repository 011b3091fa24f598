use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use faithscore::backends::{Backend, BackendConfig};
use faithscore::decomposer::{self, DecomposerTemplate};
use faithscore::harness::{
    build_report, export_results, load_samples, read_all, read_results, run_evaluation, write_report,
    DatasetFormat, ExportFormat, Pipeline, ReportOptions, RunOptions, SummaryMetric,
};
use faithscore::meta_eval::{load_annotations, meta_evaluate, render_meta_eval, write_meta_eval};
use faithscore::recognizer::{self, RecognizerTemplate, SplitOptions};
use faithscore_annotation::{Store, TaskSet};

#[derive(Parser)]
#[command(name = "faithscore", version, about = "Score the faithfulness of vision-language model answers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a dataset.
    Score(ScoreArgs),
    /// Build tables, curves and plots from results files.
    Report(ReportArgs),
    /// Compare results with human annotations.
    MetaEval(MetaEvalArgs),
    /// Export results as JSONL or a model-by-task CSV grid.
    Export(ExportArgs),
    /// Write the bundled prompt templates into a directory.
    Templates {
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotation service and its task sets.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Text backend config (JSON or TOML).
    #[arg(long)]
    llm_backend: PathBuf,
    /// Visual-entailment backend config (JSON or TOML).
    #[arg(long)]
    vem_backend: PathBuf,
    /// Directory holding recognizer.txt and decomposer.txt; bundled templates when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Samples evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Concurrent entailment calls per sample.
    #[arg(long, default_value_t = 1)]
    fact_workers: usize,
    #[arg(long)]
    resume: bool,
    /// Also split sub-sentences at commas.
    #[arg(long)]
    split_on_commas: bool,
    /// Stop after this many samples.
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    length_bin_width: usize,
}

#[derive(Args)]
struct MetaEvalArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    CsvSummary,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Faithscore,
    Sentence,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    #[arg(long, value_enum)]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "faithscore")]
    metric: MetricArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AnnotateCommand {
    /// Create a task set from a results file.
    Import {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        task_set: String,
        #[arg(long)]
        results: PathBuf,
        /// Directory image locators resolve against; defaults to the results file's directory.
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Write submitted records as one file per annotator and sample.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        task_set: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parent_dir(path: &Path) -> Option<PathBuf> {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
}

fn score(args: ScoreArgs) -> Result<()> {
    let samples = load_samples(&args.dataset, DatasetFormat::Jsonl)?;
    let llm_cfg = BackendConfig::from_file(&args.llm_backend)?;
    let vem_cfg = BackendConfig::from_file(&args.vem_backend)?;
    let llm = Backend::new(llm_cfg)?;
    let mut vem = Backend::new(vem_cfg)?;
    if let Some(dir) = parent_dir(&args.dataset) {
        vem = vem.with_image_root(dir);
    }
    let (rec, dec) = match &args.templates {
        Some(dir) => (RecognizerTemplate::load_dir(dir)?, DecomposerTemplate::load_dir(dir)?),
        None => (RecognizerTemplate::builtin(), DecomposerTemplate::builtin()),
    };
    let rec = rec.with_split_options(SplitOptions {
        split_on_commas: args.split_on_commas,
    });
    let mut pipeline = Pipeline::new(llm, vem, rec, dec);
    pipeline.fact_workers = args.fact_workers.max(1);

    let opts = RunOptions {
        workers: args.workers.max(1),
        resume: args.resume,
        max_samples: args.max_samples,
    };
    let summary = run_evaluation(&samples, &pipeline, &args.out, &opts)?;
    println!(
        "run {}: {} done, {} failed, {} skipped, {} remaining",
        summary.run_id, summary.done, summary.failed, summary.skipped, summary.remaining
    );
    println!("results: {}", summary.results_path.display());
    println!("ledger:  {}", summary.ledger_path.display());
    println!(
        "backend calls: text {} (cache hits {}), entailment {} (cache hits {})",
        pipeline.llm.upstream_calls(),
        pipeline.llm.cache_hits(),
        pipeline.vem.upstream_calls(),
        pipeline.vem.cache_hits()
    );
    if summary.failed > 0 {
        bail!("{} sample(s) failed; see the ledger and rerun with --resume", summary.failed);
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let records = read_all(&args.results)?;
    let bundle = build_report(
        &records,
        &ReportOptions {
            length_bin_width: args.length_bin_width,
        },
    )?;
    for path in write_report(&bundle, &args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn meta_eval(args: MetaEvalArgs) -> Result<()> {
    let records = read_results(&args.results)?;
    let annotations = load_annotations(&args.annotations)?;
    let report = meta_evaluate(&records, &annotations)?;
    write_meta_eval(&report, &args.out)?;
    print!("{}", render_meta_eval(&report));
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let records = read_all(&args.results)?;
    let format = match args.format {
        FormatArg::Jsonl => ExportFormat::Jsonl,
        FormatArg::CsvSummary => ExportFormat::CsvSummary,
    };
    let metric = match args.metric {
        MetricArg::Faithscore => SummaryMetric::FaithScore,
        MetricArg::Sentence => SummaryMetric::SentenceScore,
    };
    export_results(&records, format, metric, &args.out)?;
    println!("{}", args.out.display());
    Ok(())
}

fn templates(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, body) in [
        (recognizer::TEMPLATE_FILE, RecognizerTemplate::builtin().template().to_file_string()),
        (decomposer::TEMPLATE_FILE, DecomposerTemplate::builtin().template().to_file_string()),
    ] {
        let path = out.join(name);
        if path.exists() {
            bail!("{} already exists", path.display());
        }
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn annotate(cmd: AnnotateCommand) -> Result<()> {
    match cmd {
        AnnotateCommand::Import {
            store,
            task_set,
            results,
            image_root,
        } => {
            let store = Store::open(store)?;
            let records = read_results(&results)?;
            let image_root = image_root.or_else(|| parent_dir(&results));
            let set = TaskSet::from_records(task_set, &records, image_root);
            store.import_task_set(&set)?;
            println!("task set {} with {} task(s)", set.id, set.tasks.len());
        }
        AnnotateCommand::Serve { store, addr } => {
            let store = Arc::new(Store::open(store)?);
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                log::info!("listening on {}", listener.local_addr()?);
                faithscore_annotation::serve(store, listener).await?;
                anyhow::Ok(())
            })?;
        }
        AnnotateCommand::Export { store, task_set, out } => {
            let store = Store::open(store)?;
            let files = store.export_to_dir(&task_set, &out)?;
            println!("{} record file(s) in {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Score(a) => score(a),
        Command::Report(a) => report(a),
        Command::MetaEval(a) => meta_eval(a),
        Command::Export(a) => export(a),
        Command::Templates { out } => templates(&out),
        Command::Annotate(c) => annotate(c),
    }
}
