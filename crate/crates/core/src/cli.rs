//! Command-line entry point: batch experiments and the HTTP service.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::generator::render_png;
use crate::linalg::seeded_rng;
use crate::metrics::{policy_seed, ssim, EvalReport, SessionRow};
use crate::prompt::tokenize;
use crate::rl::{Checkpoint, LinearPolicy};
use crate::service::{serve, AppState};
use crate::session::{
    initial_heads, load_logs, mi_report, run_session, save_session, train_policy, Chooser,
    SessionRecord, SimulatedUser,
};

pub const PORT_ENV: &str = "COADAPT_PORT";

#[derive(Debug, Parser)]
#[command(name = "coadapt", version, about = "Attention-editing co-adaptation sessions on a toy generator")]
pub struct Cli {
    /// TOML config file (generator, vocab, session, train, sampler sections).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a prompt to a PNG and dump its attention maps.
    Generate {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run simulated sessions and write logs plus an evaluation report.
    Simulate {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint whose policy picks strategies; greedy proposals otherwise.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Regenerate from scratch instead of injecting attention.
        #[arg(long)]
        no_injection: bool,
        #[arg(long, default_value = "runs/simulate")]
        out: PathBuf,
    },
    /// Train the strategy policy and write a checkpoint.
    Train {
        #[arg(long)]
        episodes: Option<usize>,
        /// Use the small-budget training preset instead of the config's [train].
        #[arg(long)]
        desk_scale: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Train on sessions that regenerate from scratch.
        #[arg(long)]
        no_injection: bool,
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
        /// Per-episode training report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Summarize a directory of session logs.
    Eval {
        #[arg(long)]
        logs: PathBuf,
        /// Directory for report.csv and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate prompt/image mutual information over logged rounds.
    Mi {
        #[arg(long)]
        logs: PathBuf,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Where completed sessions are written.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Let the inner ascent adjust user edits.
        #[arg(long)]
        refine: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn load_policy(path: Option<&Path>, cfg: &Config) -> Result<LinearPolicy> {
    let features = 2 * cfg.generator.dim + 2;
    match path {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.policy.features() != features {
                return Err(Error::Config(format!(
                    "{}: policy expects {} features, config gives {features}",
                    p.display(),
                    ck.policy.features()
                )));
            }
            Ok(ck.policy)
        }
        None => Ok(initial_heads(&cfg.train, features).0),
    }
}

fn generate(cfg: &Config, prompt: &str, out: &Path) -> Result<()> {
    let engine = cfg.engine()?;
    let p = tokenize(prompt, &engine.vocab)?;
    let (img, stack) = engine.generator.generate(&p)?;
    std::fs::create_dir_all(out).map_err(|source| Error::WriteError {
        path: out.to_owned(),
        source,
    })?;
    let png = out.join("image.png");
    render_png(&img, &png)?;
    let attn = out.join("attention.json");
    std::fs::write(&attn, stack.to_json()).map_err(|source| Error::WriteError {
        path: attn.clone(),
        source,
    })?;
    println!("{}\n{}", png.display(), attn.display());
    Ok(())
}

fn simulate(cfg: &Config, n: usize, seed: u64, policy: Option<&Path>, injection: bool, out: &Path) -> Result<()> {
    let engine = cfg.engine()?;
    let policy = policy.map(|p| load_policy(Some(p), cfg)).transpose()?;
    let tasks = cfg.clone().with_sampler_seed(seed).sampler().tasks(n);
    let results = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let mut task = task.clone();
            task.id = format!("sim-{seed}-{i}");
            let user = SimulatedUser::new(task.target.clone(), &engine.generator)?;
            let chooser = match &policy {
                Some(p) => Chooser::Policy { policy: p, greedy: true },
                None => Chooser::Greedy,
            };
            let ps = policy_seed(seed, i);
            let ep = run_session(&task, &user, chooser, &engine, injection, &mut seeded_rng(ps, 0))?;
            let row = SessionRow {
                session_id: task.id.clone(),
                task_seed: task.seed,
                policy_seed: ps,
                rounds: ep.rounds(),
                final_reward: ep.final_score(),
                ssim_to_target: Some(ssim(&ep.state.image, &user.target_image)?),
                status: ep.state.status,
            };
            let record = SessionRecord::from_state(&ep.state, Some((&user.target, &user.target_image)));
            Ok((record, row))
        })
        .collect::<Result<Vec<_>>>()?;
    let logs = out.join("logs");
    let mut rows = Vec::with_capacity(results.len());
    for (record, row) in results {
        save_session(&record, &logs)?;
        rows.push(row);
    }
    let arm = if policy.is_some() { "policy" } else { "greedy" };
    let report = EvalReport::from_rows(arm, rows)?;
    report.write(out, "report")?;
    print!("{}", report.summary_json());
    Ok(())
}

struct TrainArgs<'a> {
    episodes: Option<usize>,
    desk: bool,
    seed: Option<u64>,
    injection: bool,
    out: &'a Path,
    report: Option<&'a Path>,
}

fn train(cfg: &Config, args: TrainArgs<'_>) -> Result<()> {
    let TrainArgs { episodes, desk, seed, injection, out, report } = args;
    let mut tc = if desk { crate::rl::TrainConfig::desk_scale() } else { cfg.train.clone() };
    if let Some(e) = episodes {
        tc.episodes = e;
    }
    if let Some(s) = seed {
        tc.seed = s;
    }
    let engine = cfg.engine()?;
    let (policy, value, rep) = match train_policy(&tc, &engine, &cfg.sampler(), injection) {
        Err(Error::TrainingAborted { episode, reason, checkpoint }) => {
            checkpoint.save(out)?;
            return Err(Error::TrainingAborted { episode, reason, checkpoint });
        }
        other => other?,
    };
    Checkpoint::new(&tc, tc.episodes, policy, value).save(out)?;
    if let Some(path) = report {
        let json = serde_json::to_string_pretty(&rep).expect("reports always serialize");
        std::fs::write(path, json + "\n").map_err(|source| Error::WriteError {
            path: path.to_owned(),
            source,
        })?;
    }
    let q = rep.quintile_mean_rounds();
    println!("{}", out.display());
    if !rep.episodes.is_empty() {
        println!("mean rounds by quintile: {q:.2?}");
    }
    Ok(())
}

fn eval(logs_dir: &Path, out: Option<&Path>) -> Result<()> {
    let logs = load_logs(logs_dir)?;
    let report = EvalReport::from_logs("logs", &logs, logs_dir)?;
    if let Some(dir) = out {
        report.write(dir, "report")?;
    }
    print!("{}", report.summary_json());
    Ok(())
}

fn mi(cfg: &Config, logs_dir: &Path) -> Result<()> {
    let logs = load_logs(logs_dir)?;
    let nats = mi_report(&logs, logs_dir, &cfg.vocab)?;
    println!("{nats:.6}");
    Ok(())
}

fn port_from_env(flag: u16) -> Result<u16> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("{PORT_ENV}={v:?} is not a port number"))),
        Err(_) => Ok(flag),
    }
}

fn run_serve(cfg: &Config, host: &str, port: u16, policy: Option<&Path>, log_dir: Option<PathBuf>, refine: bool) -> Result<()> {
    let mut session = cfg.session.clone();
    session.refine = refine;
    let engine = cfg.engine()?.with_session(session)?;
    let policy = load_policy(policy, cfg)?;
    let mut app = AppState::new(engine, policy);
    if let Some(dir) = log_dir {
        app = app.with_log_dir(dir);
    }
    let port = port_from_env(port)?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|_| Error::Config(format!("bad listen address {host}:{port}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("tokio runtime: {e}")))?;
    eprintln!("listening on http://{addr}");
    rt.block_on(serve(Arc::new(app), addr))
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { prompt, out } => generate(&cfg, &prompt, &out),
        Command::Simulate { n, seed, policy, no_injection, out } => {
            simulate(&cfg, n, seed, policy.as_deref(), !no_injection, &out)
        }
        Command::Train { episodes, desk_scale, seed, no_injection, out, report } => train(
            &cfg,
            TrainArgs {
                episodes,
                desk: desk_scale,
                seed,
                injection: !no_injection,
                out: &out,
                report: report.as_deref(),
            },
        ),
        Command::Eval { logs, out } => eval(&logs, out.as_deref()),
        Command::Mi { logs } => mi(&cfg, &logs),
        Command::Serve { host, port, policy, log_dir, refine } => {
            run_serve(&cfg, &host, port, policy.as_deref(), log_dir, refine)
        }
    }
}

/// Parses `args` and runs. Exit 0 on success, 2 on usage errors, 1 otherwise.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
