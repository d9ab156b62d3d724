use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use metamorph::dataset::synthetic::{generate, SyntheticConfig};
use metamorph::dataset::{load_dataset, Split};
use metamorph::likert::http::{serve, AppState};
use metamorph::likert::SessionStore;
use metamorph::metrics::{builtin_classifier, inception_score, load_scores, mean_grey_tint, DEFAULT_SPLITS};
use metamorph::modelio::{list_generated, load_generated, mock_generate_dir, MockConfig};
use metamorph::mrengine::{builtin_mrs, evaluate_all, load_mrs, load_records, validate_mr_set, with_thresholds, Thresholds};
use metamorph::mutate::{apply_test_case, preset_by_name, to_sorted_json, TestCaseFile, DEFAULT_SEED};
use metamorph::pipeline::{replay_table1, run_pipeline, RunConfig, DEFAULT_CLASSES};
use metamorph::report::{render_report, Format, StudyReport, REPORT_FILE};

/// Metamorphic testing of image-synthesis models.
#[derive(Parser)]
#[command(name = "metamorph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an annotated dataset and print a summary.
    Ingest {
        #[arg(long)]
        root: PathBuf,
    },
    /// Write a small synthetic dataset in the annotated layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Apply one test case to a dataset.
    Mutate(MutateArgs),
    /// Run a full study from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Inception Score and grey tint of a directory of images.
    Score(ScoreArgs),
    /// Metamorphic relation evaluation.
    Mr {
        #[command(subcommand)]
        command: MrCommand,
    },
    /// Likert rating service.
    Likert {
        #[command(subcommand)]
        command: LikertCommand,
    },
    /// Render a stored study report.
    Report {
        /// Output root of a run, or a report.json file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Evaluate the built-in relations on the published study results.
    #[command(name = "replay-table1")]
    ReplayTable1 {
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Run the built-in mock model on a mutated dataset.
    MockGenerate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        k_desat: f64,
        #[arg(long, default_value_t = 0.0)]
        k_is_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "case")]
struct CaseSource {
    /// TC01 .. TC08
    #[arg(long)]
    preset: Option<String>,
    /// JSON test-case file.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct MutateArgs {
    #[command(flatten)]
    case: CaseSource,
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "scorer")]
struct Scorer {
    /// Class-probability file, one `id p1 .. pK` row per image.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Use the built-in deterministic classifier.
    #[arg(long)]
    builtin: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    images: PathBuf,
    #[command(flatten)]
    scorer: Scorer,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    n_splits: usize,
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    n_classes: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Subcommand)]
enum MrCommand {
    /// Evaluate relations over a file of metric records.
    Eval {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.10)]
        tau: f64,
        /// Relation file to use instead of the built-in MR01..MR05.
        #[arg(long)]
        mrs: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LikertCommand {
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Directory of static files (the rating UI) served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

/// Exit status 1: bad input. Exit status 2: a step failed while running.
enum Failure {
    Validation(anyhow::Error),
    Pipeline(anyhow::Error),
}

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Validation(e.into())
}

fn failed<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Pipeline(e.into())
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Ingest { root } => ingest(&root),
        Command::Synth { out, n, seed } => {
            let ds = generate(&out, &SyntheticConfig { n_images: n, seed, ..Default::default() }).map_err(failed)?;
            println!("wrote {} images to {}", ds.images().len(), out.display());
            Ok(())
        }
        Command::Mutate(args) => mutate(args),
        Command::Run { config, format } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("reading {}", config.display())).map_err(invalid)?;
            let report = run_pipeline(&cfg).map_err(|e| if e.is_validation() { invalid(e) } else { failed(e) })?;
            print!("{}", render_report(&report, format));
            Ok(())
        }
        Command::Score(args) => score(args),
        Command::Mr { command: MrCommand::Eval { records, epsilon, tau, mrs } } => {
            let recs = load_records(&records).map_err(invalid)?;
            let set = match mrs {
                Some(path) => load_mrs(&path).map_err(invalid)?,
                None => builtin_mrs(),
            };
            let set = with_thresholds(set, Thresholds { epsilon_is: epsilon, tau_tint: tau });
            validate_mr_set(&set).map_err(invalid)?;
            let (verdicts, anomalies) = evaluate_all(&set, &recs);
            let doc = to_sorted_json(&json!({ "verdicts": verdicts, "anomalies": anomalies })).map_err(failed)?;
            print!("{doc}");
            Ok(())
        }
        Command::Likert { command: LikertCommand::Serve { port, sessions, bind, static_dir } } => {
            let store = SessionStore::open(&sessions).map_err(invalid)?;
            let state = Arc::new(AppState { store, static_dir });
            let rt = tokio::runtime::Runtime::new().map_err(failed)?;
            rt.block_on(serve(state, SocketAddr::new(bind, port))).map_err(failed)
        }
        Command::Report { input, format } => {
            let path = if input.is_dir() { input.join(REPORT_FILE) } else { input };
            let report = StudyReport::load(&path).with_context(|| format!("reading {}", path.display())).map_err(invalid)?;
            report.validate().map_err(|e| invalid(anyhow::anyhow!(e)))?;
            print!("{}", render_report(&report, format));
            Ok(())
        }
        Command::ReplayTable1 { format } => {
            print!("{}", render_report(&replay_table1(), format));
            Ok(())
        }
        Command::MockGenerate { input, output, k_desat, k_is_noise, seed } => {
            let cfg = MockConfig { k_desat, k_is_noise, seed, ..Default::default() };
            let images = mock_generate_dir(&input, &cfg, &output).map_err(failed)?;
            println!("wrote {} images to {}", images.len(), output.display());
            Ok(())
        }
    }
}

fn ingest(root: &Path) -> CmdResult {
    let ds = load_dataset(root).map_err(invalid)?;
    let count = |s: Split| ds.images().iter().filter(|r| ds.split_of(r.id) == Some(s)).count();
    let summary = json!({
        "root": root,
        "images": ds.images().len(),
        "classes": ds.classes().len(),
        "train": count(Split::Train),
        "test": count(Split::Test),
    });
    print!("{}", to_sorted_json(&summary).map_err(failed)?);
    Ok(())
}

fn mutate(args: MutateArgs) -> CmdResult {
    let mut spec = match (&args.case.preset, &args.case.spec) {
        (Some(name), _) => preset_by_name(name).map_err(invalid)?,
        (_, Some(path)) => TestCaseFile::load(path).map_err(invalid)?,
        _ => unreachable!("clap enforces one source"),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let ds = load_dataset(&args.root).map_err(invalid)?;
    let manifest = apply_test_case(&ds, &spec, &args.out).map_err(|e| match e {
        metamorph::mutate::MutateError::Io(_) | metamorph::mutate::MutateError::Image(_) => failed(e),
        other => invalid(other),
    })?;
    println!(
        "{}: {} of {} training images modified, {} skipped; manifest in {}",
        spec.name,
        manifest.placements.len(),
        manifest.train_count,
        manifest.skips.len(),
        args.out.display()
    );
    Ok(())
}

fn score(args: ScoreArgs) -> CmdResult {
    let listed = list_generated(&args.images).map_err(invalid)?;
    let images = load_generated(&listed).map_err(invalid)?;
    let tint = mean_grey_tint(images.iter().map(|(_, i)| i)).map_err(invalid)?;
    let scores = match (&args.scorer.scores, args.scorer.builtin) {
        (Some(path), _) => load_scores(path).map_err(invalid)?,
        _ => builtin_classifier(&images, args.n_classes, args.seed).map_err(invalid)?,
    };
    let is = inception_score(&scores, args.n_splits).map_err(invalid)?;
    let doc = json!({ "n_images": images.len(), "inception_score": is, "tint": tint });
    print!("{}", to_sorted_json(&doc).map_err(failed)?);
    Ok(())
}
