use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dinebench::llm::LlmEndpointConfig;
use dinebench::report::{render_report, write_report, ReportFormat};
use dinebench::runner::{
    run_condition, LlmSetup, PolicySpec, RunConfig, DEFAULT_EPISODES, DEFAULT_MAX_TIMESTEPS,
    DEFAULT_SEED,
};
use dinebench::{verify, ConditionCode, Transcript};

/// Dining-philosophers coordination benchmark for scripted and LLM agents.
#[derive(Parser)]
#[command(name = "dinebench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every episode of one condition and write transcripts plus a report.
    Run(RunArgs),
    /// Rebuild the report for a directory of transcripts.
    Report {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long, default_value = "md", value_parser = parse_format)]
        format: ReportFormat,
    },
    /// Re-derive every recorded state of a transcript and check it matches.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Condition code such as sim5nc or seq3c.
    #[arg(long)]
    condition: ConditionCode,
    /// Policy name for every seat, or a comma-separated list with one name
    /// per philosopher (greedy-left, greedy-right, dijkstra, random, polite,
    /// announce, llm).
    #[arg(long)]
    policy: PolicySpec,
    #[arg(long, default_value_t = DEFAULT_EPISODES)]
    episodes: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_TIMESTEPS)]
    max_timesteps: u32,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output directory; transcripts go to <out>/<condition>/ep<k>.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Format of <out>/report.<ext>.
    #[arg(long, default_value = "md", value_parser = parse_format)]
    format: ReportFormat,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

#[derive(Args)]
struct EndpointArgs {
    /// Chat-completions base URL (the client appends /chat/completions).
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Environment variable holding the API key.
    #[arg(long, value_name = "VAR")]
    api_key_env: Option<String>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long, value_name = "SECS")]
    timeout: Option<u64>,
    #[arg(long)]
    max_tokens: Option<u32>,
}

impl EndpointArgs {
    fn config(&self) -> LlmEndpointConfig {
        let mut cfg = LlmEndpointConfig::default();
        if let Some(v) = &self.base_url {
            cfg.base_url = v.clone();
        }
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = &self.api_key_env {
            cfg.api_key_env = v.clone();
        }
        if let Some(v) = self.max_retries {
            cfg.max_retries = v;
        }
        if let Some(v) = self.timeout {
            cfg.timeout = Duration::from_secs(v);
        }
        if self.max_tokens.is_some() {
            cfg.max_tokens = self.max_tokens;
        }
        cfg
    }
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: dinebench::Error| e.to_string())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = RunConfig::new(args.condition, args.policy);
    config.episodes = args.episodes;
    config.max_timesteps = args.max_timesteps;
    config.seed = args.seed;
    config.out_dir = Some(args.out.clone());
    if config.policy.uses_llm() {
        config.llm = Some(LlmSetup::from_env(args.endpoint.config())?);
    }

    let outcome = run_condition(&config)?;
    let (path, _) = write_report(&args.out, args.format)
        .with_context(|| format!("writing report under {}", args.out.display()))?;
    print!(
        "{}",
        render_report(&[outcome.report], ReportFormat::Markdown)?
    );
    eprintln!(
        "{} episodes written to {}; report at {}",
        config.episodes,
        args.out.join(config.condition.to_string()).display(),
        path.display()
    );
    Ok(())
}

fn replay(path: PathBuf) -> Result<()> {
    let transcript = Transcript::read(&path)?;
    let summary = verify(&transcript).with_context(|| format!("replaying {}", path.display()))?;
    let header = transcript.header().context("transcript has no header")?;
    println!(
        "{}: {} episode {} (seed {}), {} steps verified",
        path.display(),
        header.condition,
        header.episode,
        header.episode_seed,
        summary.steps
    );
    if summary.aborted {
        println!("episode was aborted before completion");
    }
    match &summary.result {
        Some(r) => println!(
            "deadlocked: {}{}, meals: {:?}, timesteps used: {}",
            r.deadlocked,
            r.deadlock_timestep
                .map_or(String::new(), |t| format!(" at timestep {t}")),
            r.meals_per_philosopher,
            r.timesteps_used
        ),
        None if !summary.aborted => bail!("transcript has no footer"),
        None => {}
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Report { input, format } => write_report(&input, format)
            .map(|(_, text)| print!("{text}"))
            .map_err(Into::into),
        Command::Replay { transcript } => replay(transcript),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
