use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use relevance_core::evalkit::{emit_report, run_ablation};
use relevance_core::pipeline::stages::{
    align_annotator, distill, evaluate_run, gen_corpus, mine, run_synthesis, train_annotator, train_teachers,
};
use relevance_core::pipeline::{PipelineConfig, RunDir, StudentVariant};
use relevance_core::Error;

#[derive(Parser)]
#[command(name = "relevance", version, about = "Relevance pipeline over a synthetic e-commerce world")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed to run; defaults to the first configured seed (run-all: every configured seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; each seed's artifacts go to <out>/seed-<seed>.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Override a config value, e.g. --set annotator.strictness=0.9 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default configuration with every key spelled out.
    InitConfig { path: PathBuf },
    /// World, splits, exposure pools and purchase logs.
    GenCorpus,
    /// Tune the CoT decoder on simulator CoTs.
    TrainAnnotator,
    /// KTO-align the tuned decoder against purchases.
    AlignAnnotator,
    /// Relabel exposures where the base student and the annotator disagree.
    MineHard,
    /// Error-type-aware synthesis loop (trains the +RD+DS student).
    Synthesize,
    /// Attribute-augmented and plain teachers.
    TrainTeacher,
    /// Train a student checkpoint.
    Distill {
        #[arg(long, value_enum)]
        variant: Variant,
    },
    /// Score every checkpoint of one seed on the test split.
    Evaluate,
    /// Every stage for every seed, then the aggregate report.
    RunAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    /// Oracle training split only.
    Base,
    /// Training split plus mined hard samples.
    Rd,
    /// Distilled from the attribute teacher on the full pool.
    Kd,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::InitConfig { .. } => "init-config",
            Command::GenCorpus => "gen-corpus",
            Command::TrainAnnotator => "train-annotator",
            Command::AlignAnnotator => "align-annotator",
            Command::MineHard => "mine-hard",
            Command::Synthesize => "synthesize",
            Command::TrainTeacher => "train-teacher",
            Command::Distill { .. } => "distill",
            Command::Evaluate => "evaluate",
            Command::RunAll => "run-all",
        }
    }
}

/// Apply dotted `key=value` overrides; values are parsed as TOML, falling
/// back to a bare string.
fn apply_overrides(text: &str, overrides: &[String]) -> Result<String, Error> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{ov}` is not KEY=VALUE")))?;
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        let mut table = &mut doc;
        for part in path {
            table = table
                .get_mut(*part)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("override `{key}`: no table `{part}`")))?;
        }
        if !table.contains_key(*last) {
            return Err(Error::Config(format!("override `{key}`: unknown key")));
        }
        table.insert(last.to_string(), value);
    }
    Ok(toml::to_string(&doc).expect("table serializes"))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required (see `relevance init-config`)".into()))?;
    if !path.exists() {
        return Err(Error::MissingArtifact(path.clone()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    PipelineConfig::from_toml(&apply_overrides(&text, &cli.overrides)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn seed_dir(out: &Path, seed: u64) -> Result<RunDir, Error> {
    RunDir::create(&out.join(format!("seed-{seed}")))
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Command::InitConfig { path } = &cli.command {
        let text = PipelineConfig::default().to_toml();
        return std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        });
    }
    let cfg = load_config(cli)?;
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    match &cli.command {
        Command::InitConfig { .. } => unreachable!("handled above"),
        Command::RunAll => {
            let seeds = cli.seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            std::fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
                path: cli.out.clone(),
                source: e,
            })?;
            let report = run_ablation(&cfg, &seeds, &cli.out)?;
            let path = cli.out.join("report.json");
            emit_report(&report, &path)?;
            print!("{}", report.to_table());
            log::info!("report written to {}", path.display());
        }
        cmd => {
            let dir = seed_dir(&cli.out, seed)?;
            match cmd {
                Command::GenCorpus => gen_corpus(&cfg, seed, &dir)?,
                Command::TrainAnnotator => {
                    train_annotator(&cfg, seed, &dir)?;
                }
                Command::AlignAnnotator => {
                    align_annotator(&cfg, seed, &dir)?;
                }
                Command::MineHard => {
                    mine(&cfg, seed, &dir)?;
                }
                Command::Synthesize => {
                    run_synthesis(&cfg, seed, &dir)?;
                }
                Command::TrainTeacher => {
                    train_teachers(&cfg, seed, &dir)?;
                }
                Command::Distill { variant } => {
                    let v = match variant {
                        Variant::Base => StudentVariant::Base,
                        Variant::Rd => StudentVariant::Rd,
                        Variant::Kd => StudentVariant::Kd,
                    };
                    distill(&cfg, seed, &dir, v)?;
                }
                Command::Evaluate => {
                    let report = evaluate_run(&cfg, seed, &dir)?;
                    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                }
                Command::InitConfig { .. } | Command::RunAll => unreachable!("handled above"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "stage": cli.command.name(),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            ExitCode::from(2)
        }
    }
}
