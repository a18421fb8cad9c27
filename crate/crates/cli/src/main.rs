use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use lmpc::config::{Objective, RunConfig};
use lmpc::data::{read_container, read_dataset, write_container, write_dataset};
use lmpc::experiment::{
    self, collect, collect_policy, load_pool, population, registry, replay, reports, train, write_reports,
    CollectParams, ExperimentError, ModelPool, TrainParams,
};
use lmpc::rag::{retrieve, RagIndex, DEFAULT_FRACTION, DEFAULT_K};
use lmpc::task::Split;
use lmpc_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "lmpc", version, about = "Teach toy robots with chat feedback")]
struct Cli {
    /// TOML config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: Overrides,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run simulated teaching sessions and write a dataset.
    Collect {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an n-gram session model on a dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train the untrained base model instead (prompt exemplars only).
        #[arg(long)]
        base: bool,
    },
    /// Evaluate models blind on a task split and write reports.
    Eval,
    /// Build a retrieval index from a dataset; optionally query it.
    Rag {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        query: Option<String>,
    },
    /// Re-execute a logged session.
    Replay {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        session_id: String,
        /// Write frame records (JSON lines) here.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Serve interactive sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Labeled sessions are appended here.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

/// One flag per config key.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    task_registry: Option<PathBuf>,
    #[arg(long, global = true)]
    embodiment: Option<String>,
    #[arg(long, global = true)]
    sessions: Option<usize>,
    #[arg(long, global = true, value_parser = parse_split)]
    collect_split: Option<Split>,
    #[arg(long, global = true)]
    collect_model: Option<String>,
    #[arg(long, global = true)]
    eval_sessions: Option<usize>,
    #[arg(long, global = true, value_parser = parse_split)]
    eval_split: Option<Split>,
    /// Model spec `name:decoder:path`; repeatable.
    #[arg(long, global = true)]
    models: Vec<String>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    rollouts: Option<usize>,
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
    #[arg(long, global = true, value_parser = parse_objective)]
    objective: Option<Objective>,
    #[arg(long, global = true)]
    augment_k: Option<usize>,
    #[arg(long, global = true)]
    top_user_conditioning: Option<bool>,
    #[arg(long, global = true)]
    top_percentile: Option<f64>,
    #[arg(long, global = true)]
    include_failures: Option<bool>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    control_steps_max: Option<usize>,
    #[arg(long, global = true)]
    transition_timeout: Option<usize>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("expected train or test, got `{s}`")),
    }
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "rollouts" => Ok(Objective::Rollouts),
        "skip" => Ok(Objective::Skip),
        _ => Err(format!("expected rollouts or skip, got `{s}`")),
    }
}

macro_rules! apply {
    ($cfg:ident, $o:ident; $($f:ident),*) => {
        $( if let Some(v) = $o.$f.clone() { $cfg.$f = v; } )*
    };
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let o = self;
        apply!(cfg, o; seed, output_dir, sessions, collect_split, collect_model, eval_sessions, eval_split,
            workers, order, alpha, temperature, rollouts, max_tokens, objective, augment_k,
            top_user_conditioning, top_percentile, include_failures, horizon, samples, noise_sigma,
            control_steps_max, transition_timeout);
        if o.task_registry.is_some() {
            cfg.task_registry = o.task_registry.clone();
        }
        if o.embodiment.is_some() {
            cfg.embodiment = o.embodiment.clone();
        }
        if !o.models.is_empty() {
            cfg.models = o.models.clone();
        }
    }
}

/// Bad input from the user; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Config file, then flags; the seed falls back to `LMPC_SEED`.
fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Usage(e.to_string()))?,
        None => {
            let mut c = RunConfig::default();
            if let Ok(s) = std::env::var("LMPC_SEED") {
                c.seed = s.parse().map_err(|_| Usage(format!("LMPC_SEED is not an integer: `{s}`")))?;
            }
            c
        }
    };
    cli.keys.apply(&mut cfg);
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(cfg)
}

fn tasks(cfg: &RunConfig, split: Split) -> anyhow::Result<Vec<lmpc::task::Task>> {
    let reg = registry(cfg)?;
    let t = reg.filter(cfg.embodiment.as_deref(), Some(split));
    if t.is_empty() {
        return Err(Usage(format!("no {} tasks for the selected embodiment", split.as_str())).into());
    }
    Ok(t)
}

fn ensure_parent(p: &Path) -> anyhow::Result<()> {
    if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(())
}

fn cmd_collect(cfg: &RunConfig, out: Option<PathBuf>) -> anyhow::Result<()> {
    let (name, policy) = collect_policy(cfg)?;
    let pool = ModelPool::new().with(&name, policy);
    let params = CollectParams {
        sessions: cfg.sessions,
        seed: cfg.seed,
        id_prefix: "c".into(),
        limits: experiment::limits(cfg),
        workers: cfg.workers,
    };
    let c = collect(&pool, &tasks(cfg, cfg.collect_split)?, &population(cfg), &params)?;
    let out = out.unwrap_or_else(|| cfg.output_dir.join("sessions.jsonl"));
    ensure_parent(&out)?;
    write_dataset(&c.dataset, &out)?;
    let ok = c.dataset.sessions.iter().filter(|s| s.outcome == lmpc::Outcome::Success).count();
    println!("wrote {} sessions ({ok} successful) to {}", c.dataset.len(), out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, dataset: Option<PathBuf>, out: Option<PathBuf>, base: bool) -> anyhow::Result<()> {
    let out = out.unwrap_or_else(|| cfg.output_dir.join("model.ngram"));
    ensure_parent(&out)?;
    if base {
        experiment::base_model(cfg.order, cfg.alpha)?.save(&out)?;
        println!("wrote base model to {}", out.display());
        return Ok(());
    }
    let dataset = dataset.unwrap_or_else(|| cfg.output_dir.join("sessions.jsonl"));
    let d = read_dataset(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let (model, summary) = train(&d, &TrainParams::from_config(cfg))?;
    model.save(&out)?;
    let mut summary_path = out.clone().into_os_string();
    summary_path.push(".summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "trained on {} sequences ({} selected sessions, {} tokens); wrote {}",
        summary.sequences,
        summary.selected_sessions,
        summary.tokens,
        out.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> anyhow::Result<()> {
    if cfg.models.is_empty() {
        return Err(Usage("eval needs at least one --models name:decoder:path".into()).into());
    }
    let pool = load_pool(cfg)?;
    let params = CollectParams {
        sessions: cfg.eval_sessions,
        seed: cfg.seed,
        id_prefix: "e".into(),
        limits: experiment::limits(cfg),
        workers: cfg.workers,
    };
    let c = collect(&pool, &tasks(cfg, cfg.eval_split)?, &population(cfg), &params)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_dataset(&c.dataset, &cfg.output_dir.join("eval_sessions.jsonl"))?;
    let groups = reports(&c.dataset, cfg.eval_split.as_str())?;
    write_reports(&groups, &cfg.output_dir)?;
    for g in &groups {
        let s = &g.summary;
        println!(
            "{}: n={} success={} turns={} good={} one-turn={} multi-turn={}",
            g.model, s.sessions, s.success_rate, s.num_chat_turns, s.good_rating_rate, s.one_turn_success,
            s.multi_turn_success
        );
    }
    println!("reports in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_rag(cfg: &RunConfig, dataset: Option<PathBuf>, out: Option<PathBuf>, query: Option<String>) -> anyhow::Result<()> {
    let dataset = dataset.unwrap_or_else(|| cfg.output_dir.join("sessions.jsonl"));
    let (d, _) = read_container(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let index = RagIndex::build(&d);
    let out = out.unwrap_or_else(|| cfg.output_dir.join("rag.jsonl"));
    ensure_parent(&out)?;
    write_container(&d, &index.records(), &out)?;
    println!("indexed {} entries into {}", index.entries.len(), out.display());
    if let Some(q) = query {
        let emb = cfg.embodiment.clone().unwrap_or_else(|| "pusher".into());
        for e in retrieve(&index, &q, DEFAULT_FRACTION, DEFAULT_K, &emb)? {
            println!("# {}\n{}", e.instruction, e.code);
        }
    }
    Ok(())
}

fn cmd_replay(cfg: &RunConfig, dataset: &Path, session_id: &str, frames: Option<PathBuf>) -> anyhow::Result<()> {
    let d = read_dataset(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let r = match replay(&d, session_id, &registry(cfg)?, &cfg.plan_params()) {
        Err(e @ ExperimentError::UnknownSession(_)) => return Err(Usage(e.to_string()).into()),
        other => other?,
    };
    let s = d.get(session_id).expect("replay found it");
    let mut out = std::io::stdout().lock();
    writeln!(out, "session {} task {} user {} outcome {:?}", s.session_id, s.task_id, s.user_id, s.outcome)?;
    for (t, traj) in s.turns.iter().zip(&r.trajectories) {
        writeln!(out, "[{}] human: {}", t.turn_index, t.human_text)?;
        for line in t.robot_code.lines() {
            writeln!(out, "[{}] robot: {line}", t.turn_index)?;
        }
        let errs: Vec<String> = r.instance.goal_errors(traj.final_state()).iter().map(|e| format!("{e:.3}")).collect();
        writeln!(out, "[{}] steps {} goal errors [{}]", t.turn_index, traj.steps(), errs.join(", "))?;
    }
    if let Some(p) = frames {
        ensure_parent(&p)?;
        let mut buf = String::new();
        for tf in r.frames() {
            for f in tf.frames {
                buf.push_str(&serde_json::to_string(&serde_json::json!({"turn": tf.turn, "frame": f}))?);
                buf.push('\n');
            }
        }
        std::fs::write(&p, buf)?;
        writeln!(out, "frames written to {}", p.display())?;
    }
    Ok(())
}

fn cmd_serve(cfg: &RunConfig, addr: &str, dataset: Option<PathBuf>) -> anyhow::Result<()> {
    let pool = if cfg.models.is_empty() {
        let (name, p) = collect_policy(cfg)?;
        ModelPool::new().with(&name, p)
    } else {
        load_pool(cfg)?
    };
    let reg = registry(cfg)?;
    let tasks = reg.filter(cfg.embodiment.as_deref(), None);
    let dataset_path = dataset.unwrap_or_else(|| cfg.output_dir.join("live.jsonl"));
    ensure_parent(&dataset_path)?;
    let state = AppState::new(ServiceConfig {
        seed: cfg.seed,
        registry: reg,
        tasks,
        pool,
        plan: cfg.plan_params(),
        dataset_path,
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        lmpc_service::serve(listener, state).await?;
        Ok::<_, anyhow::Error>(())
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(&cli)?;
    match cli.cmd {
        Cmd::Collect { out } => cmd_collect(&cfg, out),
        Cmd::Train { dataset, out, base } => cmd_train(&cfg, dataset, out, base),
        Cmd::Eval => cmd_eval(&cfg),
        Cmd::Rag { dataset, out, query } => cmd_rag(&cfg, dataset, out, query),
        Cmd::Replay { dataset, session_id, frames } => cmd_replay(&cfg, &dataset, &session_id, frames),
        Cmd::Serve { addr, dataset } => cmd_serve(&cfg, &addr, dataset),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
