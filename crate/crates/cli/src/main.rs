use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use evolib_core::config::{load_world, pool_domain, ConfigFile, Mode};
use evolib_core::engine::{Backend, Engine, RunConfig};
use evolib_core::extraction::{Domain, ModelAgent, Prompts, PythonExecutor, TaskSpec};
use evolib_core::persistence::{curve, inspect, load_snapshot, read_log, verify, LogEvent, RunDir, SNAPSHOT_FILE};
use evolib_core::providers::{HttpChat, HttpEmbedder};
use evolib_core::simworld::SimBackend;

const WORLD_FILE: &str = "world.toml";

#[derive(Parser)]
#[command(name = "evolib", version, about = "Run and inspect evolving abstraction-library agents")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run as described by the configuration.
    Run(RunArgs),
    /// Continue the run checkpointed in `--out-dir` (or `--resume-from`).
    Resume(RunArgs),
    /// Start a run in a simulated world.
    Simulate(RunArgs),
    /// Print the top entries of a snapshot by weight.
    Inspect {
        /// Run directory or snapshot file.
        path: PathBuf,
        #[arg(short = 'k', long, default_value_t = 10)]
        top: usize,
        /// Emit JSON Lines instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Print cumulative weighted cost against mean best score.
    Curve {
        /// Run directory or run log.
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = CurveFormat::Csv)]
        format: CurveFormat,
    },
    /// Replay a run log through the reference estimators and report mismatches.
    Verify {
        /// Run directory.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Real,
    Simulate,
}

#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Directory of the run to continue.
    #[arg(long)]
    resume_from: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `default` or a world file (simulated runs only).
    #[arg(long)]
    world: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(args) => execute(args, None, false),
        Command::Resume(args) => execute(args, None, true),
        Command::Simulate(args) => execute(args, Some(Mode::Simulate), false),
        Command::Inspect { path, top, json } => cmd_inspect(&path, top, json),
        Command::Curve { path, format } => cmd_curve(&path, format),
        Command::Verify { dir } => cmd_verify(&dir),
    }
}

/// What a run needs besides its configuration.
enum Setup {
    Simulated(SimBackend),
    Real(Vec<TaskSpec>, ModelAgent),
}

impl Setup {
    fn backend(&self) -> &dyn Backend {
        match self {
            Setup::Simulated(sim) => sim,
            Setup::Real(_, agent) => agent,
        }
    }

    fn tasks(&self) -> Vec<TaskSpec> {
        match self {
            Setup::Simulated(sim) => sim.world().task_specs(),
            Setup::Real(tasks, _) => tasks.clone(),
        }
    }
}

fn execute(args: RunArgs, forced: Option<Mode>, resume_cmd: bool) -> Result<ExitCode> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mode = forced
        .or(args.mode.map(|m| match m {
            ModeArg::Real => Mode::Real,
            ModeArg::Simulate => Mode::Simulate,
        }))
        .unwrap_or(file.settings.mode);
    let resume_dir = match (&args.resume_from, resume_cmd) {
        (Some(dir), _) => Some(dir.clone()),
        (None, true) => Some(
            args.out_dir
                .clone()
                .or_else(|| file.settings.out_dir.as_ref().map(|p| file.resolve(p)))
                .ok_or_else(|| anyhow!("resume needs --out-dir or --resume-from"))?,
        ),
        (None, false) => None,
    };
    let out_dir = match (&resume_dir, &args.out_dir, &file.settings.out_dir) {
        (Some(dir), _, _) => dir.clone(),
        (None, Some(dir), _) => dir.clone(),
        (None, None, Some(dir)) => file.resolve(dir),
        (None, None, None) => bail!("no output directory: pass --out-dir or set `out_dir` in the config"),
    };
    let run_dir = RunDir::new(&out_dir);

    let setup = match mode {
        Mode::Simulate => {
            let stored = run_dir.root.join(WORLD_FILE);
            let world = match (&args.world, resume_dir.is_some() && stored.exists()) {
                (None, true) => load_world(&stored.display().to_string(), Path::to_path_buf)?,
                (Some(spec), _) => load_world(spec, Path::to_path_buf)?,
                (None, false) => file.world()?,
            };
            Setup::Simulated(SimBackend::new(world))
        }
        Mode::Real => {
            let tasks = file.tasks()?;
            Setup::Real(tasks, real_agent(&file)?)
        }
    };
    let tasks = setup.tasks();
    let domain = match mode {
        Mode::Simulate => Domain::Simulated,
        Mode::Real => pool_domain(&tasks)?,
    };

    let mut config = match &resume_dir {
        Some(dir) => logged_config(&RunDir::new(dir))?,
        None => file.run_config(domain)?,
    };
    if let Some(seed) = args.seed {
        if resume_dir.is_some() && seed != config.master_seed {
            bail!("--seed {seed} differs from the checkpointed run's seed {}", config.master_seed);
        }
        config.master_seed = seed;
    }
    if let Some(t) = args.iterations {
        config.iterations = t;
    }
    config
        .validate()
        .map_err(|e| anyhow!("invalid value from the command line or run log: {e}"))?;

    let backend = setup.backend();
    let mut engine = match &resume_dir {
        Some(_) => Engine::resume(config, tasks, backend, run_dir.clone())?,
        None => {
            if run_dir.snapshot().exists() {
                bail!(
                    "{} already holds a run; use `resume` or pick another --out-dir",
                    out_dir.display()
                );
            }
            let engine = Engine::create(config, tasks, backend, run_dir.clone())?;
            if let Setup::Simulated(sim) = &setup {
                fs::write(run_dir.root.join(WORLD_FILE), sim.world().to_toml())
                    .with_context(|| format!("writing {}", out_dir.join(WORLD_FILE).display()))?;
            }
            engine
        }
    };

    let total = engine.config().iterations;
    while engine.state().iteration < total {
        let s = engine.run_iteration()?;
        if s.iteration % 10 == 0 || s.iteration == total {
            log::info!(
                "iteration {}/{total}: library {} entries, mean best score {:.4}, weighted cost {}",
                s.iteration,
                s.library_size,
                s.mean_best_score,
                s.ledger.weighted_cost
            );
        }
    }
    let report = engine.report();
    let last = report.summaries.last();
    println!(
        "completed {} iterations in {}: library {} entries, mean best score {:.4}, weighted cost {}",
        report.iterations,
        out_dir.display(),
        report.library_size,
        last.map_or(0.0, |s| s.mean_best_score),
        report.ledger.weighted_cost
    );
    Ok(ExitCode::SUCCESS)
}

fn real_agent(file: &ConfigFile) -> Result<ModelAgent> {
    let s = &file.settings;
    let chat_endpoint = s.chat.clone().ok_or_else(|| file.invalid("chat", "a real run needs a [chat] endpoint"))?;
    let embed_endpoint = s
        .embeddings
        .clone()
        .ok_or_else(|| file.invalid("embeddings", "a real run needs an [embeddings] endpoint"))?;
    let chat = HttpChat::new(chat_endpoint, s.retry)?;
    let embedder = HttpEmbedder::new(embed_endpoint, s.embedding_dim, s.retry)?;
    let prompts = match &s.prompts_dir {
        Some(dir) => {
            let dir = file.resolve(dir);
            Prompts::with_overrides(&dir).with_context(|| format!("reading prompts from {}", dir.display()))?
        }
        None => Prompts::default(),
    };
    Ok(ModelAgent::new(
        Arc::new(chat),
        Arc::new(embedder),
        Arc::new(PythonExecutor::default()),
        prompts,
        s.agent.clone(),
    ))
}

fn logged_config(dir: &RunDir) -> Result<RunConfig> {
    match read_log(&dir.log())?.into_iter().next().map(|l| l.event) {
        Some(LogEvent::RunStarted { config, .. }) => Ok(config),
        _ => bail!("{} does not start with a run header", dir.log().display()),
    }
}

fn snapshot_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(SNAPSHOT_FILE)
    } else {
        path.to_owned()
    }
}

fn cmd_inspect(path: &Path, k: usize, json: bool) -> Result<ExitCode> {
    let doc = load_snapshot(&snapshot_path(path))?;
    let rows = inspect(&doc, k)?;
    let mut out = std::io::stdout().lock();
    if json {
        for row in &rows {
            serde_json::to_writer(&mut out, row)?;
            writeln!(out)?;
        }
        return Ok(ExitCode::SUCCESS);
    }
    writeln!(
        out,
        "iteration {} | {} entries | weighted cost {}",
        doc.run_state.iteration,
        doc.entries.len(),
        doc.run_state.ledger.weighted_cost
    )?;
    writeln!(
        out,
        "{:>4}  {:>6}  {:<7}  {:>8}  {:>8}  {:>8}  {:>4}  content",
        "rank", "id", "kind", "weight", "ig", "fut_ig", "n"
    )?;
    for (i, r) in rows.iter().enumerate() {
        let content: String = r.content.lines().next().unwrap_or("").chars().take(60).collect();
        writeln!(
            out,
            "{:>4}  {:>6}  {:<7}  {:>8.4}  {:>8.4}  {:>8.4}  {:>4}  {content}",
            i + 1,
            r.id.to_string(),
            r.kind.as_str(),
            r.weight,
            r.ig_score,
            r.mean_future_ig,
            r.future_ig_count
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_curve(path: &Path, format: CurveFormat) -> Result<ExitCode> {
    let log_path = if path.is_dir() { RunDir::new(path).log() } else { path.to_owned() };
    let points = curve(&read_log(&log_path)?)?;
    let mut out = std::io::stdout().lock();
    match format {
        CurveFormat::Csv => {
            writeln!(out, "weighted_cost,mean_best_score")?;
            for p in &points {
                writeln!(out, "{},{}", p.weighted_cost, p.mean_best_score)?;
            }
        }
        CurveFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &points)?;
            writeln!(out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(dir: &Path) -> Result<ExitCode> {
    let run_dir = RunDir::new(dir);
    let log = read_log(&run_dir.log())?;
    let snapshot = if run_dir.snapshot().exists() {
        Some(load_snapshot(&run_dir.snapshot())?)
    } else {
        None
    };
    let report = verify(&log, snapshot.as_ref());
    for d in &report.discrepancies {
        println!("{d}");
    }
    println!(
        "verified {} iterations, {} checks, {} discrepancies",
        report.iterations,
        report.checks,
        report.discrepancies.len()
    );
    Ok(if report.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
