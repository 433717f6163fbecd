//! `switch`: corpus preparation, batch classification, threshold search,
//! metric reports, the session server and scripted demo sessions.

mod setup;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use switch_core::config::{Config, ENV_API_TOKEN};
use switch_core::corpus::{self, SplitMode, SplitSpec, TranscriptCorpus};
use switch_core::metrics::{self, render_per_skill_table, render_summary_table, MetricsReport};
use switch_core::session::{events_to_jsonl, http, SessionScript, SessionService};
use switch_core::thresholds::{self, ConfidenceMatrix, Objective, ThresholdVector};

#[derive(Parser)]
#[command(name = "switch", version, about = "Counseling-skill training engine tools")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Answer every LLM call from this mock script instead of the network.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a transcript file and optionally write it back in canonical form.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded train/test split.
    Split {
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Turn)]
        mode: ModeArg,
        /// Also carve this fraction of train into fit.jsonl / validation.jsonl.
        #[arg(long)]
        validation: Option<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Label distribution and skills-per-turn histogram.
    Dist {
        corpus: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Classify every turn of a corpus and write prediction records.
    Classify {
        #[arg(long, value_enum)]
        backend: BackendArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Demonstration pool for the in-context backends.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Demonstrations per request (defaults to the config value).
        #[arg(long)]
        k: Option<usize>,
        /// Score file for the scores backend.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Threshold file for the scores backend.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Also write full classification results here.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Fit per-skill decision thresholds on a score file.
    Thresholds {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
    },
    /// Summary and per-skill reports for one or more prediction files.
    Metrics {
        #[arg(long, required = true)]
        preds: Vec<PathBuf>,
        /// Write the reports as JSON here as well.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Run the session HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, value_enum, default_value_t = BackendArg::Baseline)]
        backend: BackendArg,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Run a scripted session against its mock provider.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        /// Overrides the profile named in the script.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        events_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Turn,
    Session,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Baseline,
    BaselineDefex,
    IclBm25,
    IclDense,
    Scores,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Static,
    Independent,
    Joint,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    MicroF1,
    MacroF1,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Ingest { file, out } => {
            let corpus = load_corpus(&file)?;
            println!(
                "{}: {} turns, {} dropped (others only), {} others labels excluded",
                file.display(),
                corpus.len(),
                corpus.dropped_rows,
                corpus.excluded_other_labels
            );
            if let Some(out) = out {
                corpus.export(&out)?;
            }
        }
        Command::Split { corpus: path, train, seed, mode, validation, out_dir } => {
            let corpus = load_corpus(&path)?;
            let mode = match mode {
                ModeArg::Turn => SplitMode::Turn,
                ModeArg::Session => SplitMode::Session,
            };
            let mut spec = SplitSpec { train_fraction: train, seed, mode, ..SplitSpec::default() };
            if let Some(v) = validation {
                spec.validation_fraction_of_train = v;
            }
            let (train_set, test_set) = corpus::split(&corpus, &spec)?;
            std::fs::create_dir_all(&out_dir)?;
            train_set.export(out_dir.join("train.jsonl"))?;
            test_set.export(out_dir.join("test.jsonl"))?;
            print!("train {}  test {}", train_set.len(), test_set.len());
            if validation.is_some() {
                let (fit, val) = corpus::carve_validation(&train_set, &spec)?;
                fit.export(out_dir.join("fit.jsonl"))?;
                val.export(out_dir.join("validation.jsonl"))?;
                print!("  (fit {}  validation {})", fit.len(), val.len());
            }
            println!();
        }
        Command::Dist { corpus: path, json } => {
            let report = corpus::distribution_report(&load_corpus(&path)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.render_table());
            }
        }
        Command::Classify { backend, input, out, pool, k, scores, thresholds, results } => {
            let gateway = setup::gateway(&config, cli.mock.as_deref())?;
            let backend = setup::backend(
                backend,
                &config,
                &gateway,
                setup::BackendInputs { pool: pool.as_deref(), k, scores: scores.as_deref(), thresholds: thresholds.as_deref() },
            )?;
            let corpus = load_corpus(&input)?;
            let classified = switch_core::classifier::classify_corpus(&corpus, &backend, &gateway)?;
            let records: Vec<_> = classified.iter().map(|(r, _)| r.clone()).collect();
            metrics::write_predictions(&records, create(&out)?)?;
            if let Some(path) = results {
                let mut w = create(&path)?;
                for (_, result) in &classified {
                    serde_json::to_writer(&mut w, result)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            let report = MetricsReport::compute(&records)?;
            print!("{}", report.render_summary(backend.id()));
        }
        Command::Thresholds { strategy, scores, out, seed, objective } => {
            let matrix = ConfidenceMatrix::read_jsonl(open(&scores)?)?;
            let objective = match objective {
                Some(ObjectiveArg::MicroF1) => Objective::MicroF1,
                Some(ObjectiveArg::MacroF1) => Objective::MacroF1,
                None => config.thresholds.objective,
            };
            let vector = match strategy {
                StrategyArg::Static => thresholds::optimize_static(&matrix, objective)?,
                StrategyArg::Independent => thresholds::optimize_independent(&matrix, objective)?,
                StrategyArg::Joint => thresholds::optimize_joint_ga(&matrix, objective, &config.thresholds.ga, seed)?,
            };
            std::fs::write(&out, vector.to_json()).with_context(|| format!("writing {}", out.display()))?;
            println!("{:?} {:?} = {:.4} on {} samples", vector.strategy, vector.objective, vector.objective_value, matrix.len());
        }
        Command::Metrics { preds, json_out } => {
            let mut reports = Vec::new();
            for path in &preds {
                let records = metrics::read_predictions(open(path)?).with_context(|| format!("reading {}", path.display()))?;
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                reports.push((name, MetricsReport::compute(&records)?));
            }
            let rows: Vec<(&str, &MetricsReport)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
            print!("{}\n{}", render_summary_table(&rows), render_per_skill_table(&rows));
            if let Some(path) = json_out {
                let map: serde_json::Map<String, serde_json::Value> =
                    reports.iter().map(|(n, r)| Ok((n.clone(), serde_json::to_value(r)?))).collect::<Result<_>>()?;
                std::fs::write(&path, serde_json::to_string_pretty(&map)? + "\n")?;
            }
        }
        Command::Serve { port, backend, pool } => {
            let gateway = setup::gateway(&config, cli.mock.as_deref())?;
            let backend = setup::backend(
                backend,
                &config,
                &gateway,
                setup::BackendInputs { pool: pool.as_deref(), k: None, scores: None, thresholds: None },
            )?;
            if matches!(backend, switch_core::classifier::Backend::Scores { .. }) {
                bail!("the scores backend only works on corpus files");
            }
            let mut bind = config.server.bind.clone();
            if let Some(port) = port {
                let host = bind.rsplit_once(':').map_or("127.0.0.1", |(h, _)| h).to_string();
                bind = format!("{host}:{port}");
            }
            let profiles = setup::profiles(&config)?;
            let store = setup::store(&config)?;
            let service = Arc::new(SessionService::new(config, Arc::new(gateway), backend, profiles, store)?);
            let token = std::env::var(ENV_API_TOKEN).ok();
            if token.is_none() {
                tracing::warn!("{ENV_API_TOKEN} is not set; the API is unauthenticated");
            }
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(http::serve(service, &bind, token))?;
        }
        Command::Simulate { script, profile, events_out } => {
            let mut script = SessionScript::load(&script)?;
            if let Some(p) = profile {
                script.profile_id = p;
            }
            let profiles = setup::profiles(&config)?;
            let run = script.run(config, profiles)?;
            for (r, text) in run.results.iter().zip(&script.turns) {
                let skills: Vec<&str> = r.skills.skills.iter().map(|s| s.name()).collect();
                println!("[{}] trainee: {text}", r.turn);
                println!("     skills: {}", skills.join(", "));
                println!("     client: {}", r.reply.message);
                println!("     progression: {}", serde_json::to_string(&r.progression)?);
            }
            println!("final stage: {:?}  state: {}", run.state.mi.stage, run.state.state_hash());
            if let Some(path) = events_out {
                std::fs::write(&path, events_to_jsonl(&run.events))?;
            }
        }
    }
    Ok(())
}

fn load_corpus(path: &Path) -> Result<TranscriptCorpus> {
    corpus::ingest(path).with_context(|| format!("reading {}", path.display()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn read_thresholds(path: &Path) -> Result<ThresholdVector> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ThresholdVector::from_json(&text)?)
}
