//! `llmrl`: train, compare and design rewards from JSON experiment configs.
//!
//! Exit codes: 0 on success, 2 on configuration or validation failure, 3
//! when the language-model backend fails, 1 for anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use llmrl::harness::{
    design_for, load_rows, run_experiment, summarize, write_csv, BackendConfig, ExperimentConfig, HarnessError, Metric,
};
use llmrl::llm::{AuditLog, HttpBackend, LlmBackend, LlmClient};
use llmrl::roles::{write_ledger, RoleError};

#[derive(Parser)]
#[command(name = "llmrl", version, about = "Reward design and guided training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and write its logs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds replacing the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        /// Endpoint for `--backend http` when the config has none.
        #[arg(long)]
        base_url: Option<String>,
        /// Environment variable holding the bearer token.
        #[arg(long)]
        token_env: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the final-window metric of two run directories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long, default_value = "return")]
        metric: String,
        /// Also write a CSV table here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate and rank reward candidates without training.
    DesignReward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long)]
        token_env: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn override_backend(
    cfg: &mut ExperimentConfig,
    backend: Option<Backend>,
    base_url: Option<String>,
    token_env: Option<String>,
) -> Result<(), HarnessError> {
    match backend {
        None => {}
        Some(Backend::Mock) => {
            if matches!(cfg.backend, BackendConfig::Http { .. }) {
                cfg.backend = BackendConfig::default();
            }
        }
        Some(Backend::Http) => {
            let existing = match &cfg.backend {
                BackendConfig::Http { base_url, .. } => Some(base_url.clone()),
                BackendConfig::Mock { .. } => None,
            };
            let url = base_url
                .or(existing)
                .ok_or_else(|| HarnessError::Config("--backend http needs --base-url or an http backend in the config".into()))?;
            let (model, retries) = match &cfg.backend {
                BackendConfig::Http { model, retries, .. } => (model.clone(), *retries),
                BackendConfig::Mock { .. } => (None, 2),
            };
            cfg.backend = BackendConfig::Http {
                base_url: url,
                token_env,
                model,
                retries,
            };
        }
    }
    Ok(())
}

fn design_client(cfg: &ExperimentConfig) -> Result<LlmClient, HarnessError> {
    match &cfg.backend {
        BackendConfig::Http {
            base_url,
            token_env,
            model,
            retries,
        } => Ok(LlmClient::new(LlmBackend::Http(HttpBackend {
            token_env: token_env.clone(),
            model: model.clone(),
            retries: *retries,
            ..HttpBackend::new(base_url.clone())
        }))),
        BackendConfig::Mock { design: Some(s), .. } => Ok(LlmClient::mock(s.clone())),
        BackendConfig::Mock { .. } => Err(HarnessError::Config("the mock backend has no design script".into())),
    }
}

fn cmd_run(
    config: PathBuf,
    seeds: Option<Vec<u64>>,
    backend: Option<Backend>,
    base_url: Option<String>,
    token_env: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    override_backend(&mut cfg, backend, base_url, token_env)?;
    cfg.validate()?;
    let set = run_experiment(&cfg)?;
    for r in &set.records {
        let s = &r.summary;
        let mut line = format!(
            "seed {:>4}: final return {:.4} +/- {:.4} over {} episodes",
            s.seed, s.final_return_mean, s.final_return_std, s.window
        );
        if let Some(e) = s.final_energy_mean {
            line.push_str(&format!(", energy {e:.2}"));
        }
        if let Some(d) = s.final_delivered_mean {
            line.push_str(&format!(", delivered {d:.2}"));
        }
        if s.interventions > 0 {
            line.push_str(&format!(", {} interventions, {} rollbacks", s.interventions, s.rollbacks));
        }
        println!("{line}");
    }
    println!("logs in {}", set.dir.display());
    Ok(())
}

fn cmd_compare(a: PathBuf, b: PathBuf, window: usize, metric: String, csv: Option<PathBuf>) -> Result<()> {
    let metric: Metric = metric.parse()?;
    let ra = load_rows(&a)?;
    let rb = load_rows(&b)?;
    let c = summarize(&ra, &rb, window, metric)?;
    println!("{}", serde_json::to_string_pretty(&c).context("serializing the comparison")?);
    if let Some(path) = csv {
        write_csv(&path, &c)?;
    }
    Ok(())
}

fn cmd_design(
    config: PathBuf,
    backend: Option<Backend>,
    base_url: Option<String>,
    token_env: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    override_backend(&mut cfg, backend, base_url, token_env)?;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let client = design_client(&cfg)?.with_audit(AuditLog::open(dir.join("design_audit.jsonl"))?);
    let ledger_path = dir.join("candidates.jsonl");
    let ledger = match design_for(&cfg, &client) {
        Ok(outcome) => outcome.ledger,
        Err(HarnessError::Role(RoleError::DesignFailed { ledger })) => {
            write_ledger(&ledger_path, &ledger)?;
            for c in &ledger {
                println!("{}", serde_json::to_string(c)?);
            }
            return Err(HarnessError::Role(RoleError::DesignFailed { ledger }).into());
        }
        Err(e) => return Err(e.into()),
    };
    write_ledger(&ledger_path, &ledger)?;
    for c in &ledger {
        println!("{}", serde_json::to_string(c)?);
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<HarnessError>())
        .map_or(1, |h| h.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seeds,
            backend,
            base_url,
            token_env,
            out,
        } => cmd_run(config, seeds, backend, base_url, token_env, out),
        Command::Compare {
            a,
            b,
            window,
            metric,
            csv,
        } => cmd_compare(a, b, window, metric, csv),
        Command::DesignReward {
            config,
            backend,
            base_url,
            token_env,
            out,
        } => cmd_design(config, backend, base_url, token_env, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
