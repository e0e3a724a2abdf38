use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use personaforge::feedback::{Compliance, FeedbackRecord, YesNo};
use personaforge::pipeline::demo::{write_demo_corpus, DemoConfig};
use personaforge::pipeline::{Pipeline, PipelineConfig, RetrainRequest, RetrainTarget};
use personaforge::service::views::{CloseSummary, InferResponse, RoundView};
use personaforge::store::{Platform, DATA_ENV};
use personaforge::train::{evaluate_matrix, synthesize_corpus, Corpus, CorpusConfig};
use personaforge::{Error, Result};

#[derive(Parser)]
#[command(name = "personaforge", version, about = "Personality-driven content generation")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = DATA_ENV, default_value = "personaforge-data")]
    data_dir: PathBuf,
    /// Pipeline configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic brand and user corpus for trying the pipeline.
    DemoCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        users: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Import brand assets and user timelines.
    Ingest {
        #[arg(long)]
        brands: Option<PathBuf>,
        #[arg(long)]
        users: Option<PathBuf>,
    },
    TrainProfiler,
    /// Train one industry's generator, or every industry with enough assets.
    TrainGenerator {
        #[arg(long)]
        industry: Option<String>,
    },
    /// Infer and store a user's type.
    Infer {
        /// User id or handle.
        #[arg(long)]
        user: String,
        #[arg(long, value_parser = snake::<Platform>)]
        platform: Option<Platform>,
    },
    /// Create a generation round and export its cards.
    Generate {
        #[arg(long)]
        user: String,
        #[arg(long)]
        industry: String,
        #[arg(short = 'k', long = "num-variants", default_value_t = 5)]
        k: usize,
        /// Export directory; defaults to `./<round id>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rate one card.
    Feedback {
        #[arg(long)]
        round: String,
        #[arg(long)]
        card: String,
        #[arg(long)]
        attractiveness: u32,
        #[arg(long)]
        preference: u32,
        #[arg(long, value_parser = snake::<Compliance>, default_value = "dont_know")]
        compliance: Compliance,
        #[arg(long, value_parser = snake::<YesNo>, default_value = "no")]
        would_click: YesNo,
    },
    CloseRound {
        #[arg(long)]
        round: String,
    },
    /// Retrain models in the foreground.
    Retrain {
        #[arg(long, value_parser = snake::<RetrainTarget>)]
        target: RetrainTarget,
        #[arg(long)]
        industry: Option<String>,
    },
    /// Advance the logical clock and run due tasks.
    Tick {
        #[arg(long)]
        hours: u64,
    },
    /// Train text, image and fused profilers and report test macro F1 per axis.
    EvalMatrix {
        /// `synthetic`, or a directory written by `demo-corpus`'s user export.
        #[arg(long, default_value = "synthetic")]
        corpus: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Size of the synthetic corpus.
        #[arg(long, default_value_t = 500)]
        users: usize,
        /// Print an aligned table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

/// Parses a snake_case enum name through its serde representation.
fn snake<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn export_round(p: &Pipeline, view: &RoundView, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let round = p.round(&view.round_id)?;
    for card in &round.cards {
        std::fs::copy(p.store().image_path(&card.image), out.join(format!("{}.png", card.card_id)))?;
    }
    std::fs::write(out.join("round.json"), serde_json::to_string_pretty(view)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let open = || Pipeline::open(&cli.data_dir, config.clone());
    match cli.command {
        Command::DemoCorpus { out, users, seed } => {
            let demo = DemoConfig {
                users,
                seed,
                ..DemoConfig::default()
            };
            let layout = write_demo_corpus(&out, &demo, &config.industries)?;
            println!("brands: {}\nusers: {}", layout.brand_dir.display(), layout.user_dir.display());
        }
        Command::Ingest { brands, users } => {
            print_json(&open()?.ingest(brands.as_deref(), users.as_deref())?)?;
        }
        Command::TrainProfiler => print_json(&open()?.train_profiler()?)?,
        Command::TrainGenerator { industry } => {
            let p = open()?;
            let reports = match industry {
                Some(name) => vec![p.train_generator(&name)?],
                // Industries without enough assets are skipped.
                None => {
                    p.run_retrain(&[RetrainRequest {
                        target: RetrainTarget::Generator,
                        industry: None,
                    }])?
                    .generators
                }
            };
            print_json(&reports)?;
        }
        Command::Infer { user, platform } => {
            let p = open()?;
            let id = p.find_user(&user, platform)?.id;
            let (id, payload) = p.infer(&id)?;
            print_json(&InferResponse::new(id, payload))?;
        }
        Command::Generate { user, industry, k, out } => {
            let p = open()?;
            let round = p.generate(&user, &industry, k)?;
            let view = RoundView::new(&round, &[]);
            export_round(&p, &view, &out.unwrap_or_else(|| PathBuf::from(&round.round_id)))?;
            print_json(&view)?;
        }
        Command::Feedback {
            round,
            card,
            attractiveness,
            preference,
            compliance,
            would_click,
        } => {
            let p = open()?;
            let timestamp = p.store().snapshot().clock;
            p.submit_feedback(FeedbackRecord {
                round_id: round,
                card_id: card,
                attractiveness,
                preference,
                compliance,
                would_click,
                timestamp,
            })?;
        }
        Command::CloseRound { round } => {
            let (settlement, manifest) = open()?.close_round(&round)?;
            print_json(&CloseSummary::new(&settlement, manifest))?;
        }
        Command::Retrain { target, industry } => {
            print_json(&open()?.run_retrain(&[RetrainRequest { target, industry }])?)?;
        }
        Command::Tick { hours } => {
            let p = Arc::new(open()?);
            let report = p.tick(hours)?;
            // Retrain jobs run on background threads; finish them before exiting.
            for run in &report.executed {
                if let Some(job) = &run.job_id {
                    let status = p.wait_job(job)?;
                    if let Some(e) = status.error {
                        return Err(Error::Unavailable(format!("{job} failed: {e}")));
                    }
                }
            }
            print_json(&report)?;
        }
        Command::EvalMatrix {
            corpus,
            seed,
            users,
            table,
        } => {
            let mut train = config.profiler.clone();
            train.seed = seed;
            let size = train.dims.image_size;
            let corpus = if corpus == "synthetic" {
                synthesize_corpus(&CorpusConfig {
                    image_size: size,
                    ..CorpusConfig::new(users, seed)
                })?
            } else {
                Corpus::load(Path::new(&corpus), size)?
            };
            let report = evaluate_matrix(&corpus, &train)?;
            if table {
                print!("{}", report.table());
            } else {
                println!("{}", report.to_json()?);
            }
        }
        Command::Serve { host, port } => {
            let p = Arc::new(open()?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(personaforge::service::serve(p, SocketAddr::new(host, port)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

