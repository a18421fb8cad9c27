//! End-to-end pipelines: collect sessions with simulated teachers, build
//! training corpora, evaluate models blind, and replay logged sessions.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, DecoderKind, ModelSpec, Objective, RunConfig};
use crate::controller::{Frame, PlanParams, Trajectory};
use crate::data::{
    apply_user_conditioning, augment, filter_successes, identify_top_users, read_container, DataError, Provenance,
    TeachingDataset, UserScoreTable,
};
use crate::metrics::{curve_plot_spec, group_report, write_curve_csv, write_metrics_csv, GroupReport, MetricsError};
use crate::model::{NGramError, NGramModel};
use crate::rag::{RagIndex, RagPolicy, DEFAULT_FRACTION, DEFAULT_K};
use crate::session::{serialize_session, ChatSession, ChatTurn, Outcome, Rating, SessionError, TokenSeq, TOP_USER};
use crate::task::{
    prompt_exemplar, system_prompt, BlindSampler, RegistryError, SamplerConfig, SamplerError, Task, TaskInstance,
    TaskRegistry,
};
use crate::teacher::{
    execute_turn, reference_population, run_session, turn_plan_params, DecodingPolicy, RobotPolicy, SessionLimits,
    SessionRecord, TeacherProfile,
};
use crate::bootstrap::BootstrapPolicy;
use crate::util::{derive_seed, rng_from_seed, seed_from_label};
use crate::world::Layout;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] NGramError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("{0}")]
    Invalid(String),
}

/// Named robot policies the blind sampler chooses between.
#[derive(Clone, Default)]
pub struct ModelPool {
    policies: BTreeMap<String, Arc<dyn RobotPolicy>>,
}

impl ModelPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, policy: Arc<dyn RobotPolicy>) -> Self {
        self.insert(name, policy);
        self
    }

    pub fn insert(&mut self, name: &str, policy: Arc<dyn RobotPolicy>) {
        self.policies.insert(name.to_owned(), policy);
    }

    pub fn ids(&self) -> Vec<String> {
        self.policies.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn RobotPolicy>> {
        self.policies.get(name)
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectParams {
    pub sessions: usize,
    pub seed: u64,
    /// Session ids are `{prefix}-{index:05}`.
    pub id_prefix: String,
    pub limits: SessionLimits,
    pub workers: usize,
}

/// Sessions from one collection run, ordered by session id.
#[derive(Clone, Debug)]
pub struct Collection {
    pub dataset: TeachingDataset,
    pub records: Vec<SessionRecord>,
}

struct Job {
    id: String,
    index: usize,
    model_id: String,
    instance: TaskInstance,
    teacher: usize,
}

/// Runs `p.sessions` sessions. Task, model and teacher draws happen up
/// front from the seed, so the output does not depend on `workers`.
pub fn collect(
    pool: &ModelPool,
    tasks: &[Task],
    population: &[TeacherProfile],
    p: &CollectParams,
) -> Result<Collection, ExperimentError> {
    if population.is_empty() {
        return Err(ExperimentError::Invalid("teacher population is empty".into()));
    }
    let mut sampler = BlindSampler::new(SamplerConfig {
        model_ids: pool.ids(),
        tasks: tasks.to_vec(),
        seed: seed_from_label(p.seed, &p.id_prefix),
    })?;
    let mut teacher_rng = rng_from_seed(derive_seed(seed_from_label(p.seed, &p.id_prefix), 7));
    let jobs: Vec<Job> = (0..p.sessions)
        .map(|index| {
            let pair = sampler.next_pair();
            Job {
                id: format!("{}-{index:05}", p.id_prefix),
                index,
                model_id: pair.model_id,
                instance: pair.instance,
                teacher: rand::Rng::random_range(&mut teacher_rng, 0..population.len()),
            }
        })
        .collect();
    let run = |j: &Job| {
        let policy = pool.get(&j.model_id).expect("sampled from the pool");
        let rec = run_session(&population[j.teacher], policy.as_ref(), &j.instance, &p.limits, &j.id, j.instance.seed);
        (j.index, j.model_id.clone(), rec)
    };
    let done: Vec<(usize, String, SessionRecord)> = if p.workers <= 1 {
        jobs.iter().map(run).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(p.workers)
            .build()
            .map_err(|e| ExperimentError::Invalid(e.to_string()))?
            .install(|| jobs.par_iter().map(run).collect())
    };
    let mut dataset = TeachingDataset::new();
    let mut records = Vec::with_capacity(done.len());
    for (index, model_id, rec) in done {
        let prov = Provenance { model_id, seed: rec.seed, timestamp: index as u64 };
        dataset.push(rec.session.clone(), prov)?;
        records.push(rec);
    }
    Ok(Collection { dataset, records })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub objective: Objective,
    pub order: usize,
    pub alpha: f64,
    pub augment_k: usize,
    pub top_user_conditioning: bool,
    pub top_percentile: f64,
    pub include_failures: bool,
    pub seed: u64,
}

impl TrainParams {
    pub fn from_config(c: &RunConfig) -> Self {
        Self {
            objective: c.objective,
            order: c.order,
            alpha: c.alpha,
            augment_k: c.augment_k,
            top_user_conditioning: c.top_user_conditioning,
            top_percentile: c.top_percentile,
            include_failures: c.include_failures,
            seed: c.seed,
        }
    }
}

/// What went into a training corpus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub labeled_sessions: usize,
    pub selected_sessions: usize,
    pub augmented_sessions: usize,
    pub exemplar_sessions: usize,
    pub sequences: usize,
    pub tokens: usize,
    pub top_users: Option<UserScoreTable>,
}

/// The single exemplar each system prompt carries, as a one-turn
/// successful session per embodiment.
pub fn exemplar_sessions(embodiments: &[&str]) -> Vec<ChatSession> {
    embodiments
        .iter()
        .filter_map(|e| Layout::builtin(e))
        .map(|layout| {
            let (instr, code) = prompt_exemplar(&layout);
            let mut s = ChatSession::new(
                format!("exemplar-{}", layout.embodiment_id),
                system_prompt(&layout),
                TOP_USER,
                "exemplar",
                &layout.embodiment_id,
            );
            s.push_turn(instr, code, Rating::Unrated);
            s.outcome = Outcome::Success;
            s
        })
        .collect()
}

pub fn base_corpus() -> Result<Vec<TokenSeq>, ExperimentError> {
    exemplar_sessions(&Layout::builtin_ids())
        .iter()
        .map(|s| serialize_session(s, TOP_USER).map_err(Into::into))
        .collect()
}

/// The first instruction answered directly with the final code.
pub fn skip_view(s: &ChatSession) -> ChatSession {
    let mut v = s.clone();
    if let (Some(first), Some(last)) = (s.turns.first(), s.turns.last()) {
        v.turns = vec![ChatTurn {
            human_text: first.human_text.clone(),
            robot_code: last.robot_code.clone(),
            rating: Rating::Unrated,
            turn_index: 0,
        }];
    }
    v
}

pub fn training_corpus(
    d: &TeachingDataset,
    p: &TrainParams,
) -> Result<(Vec<TokenSeq>, CorpusSummary), ExperimentError> {
    let mut labeled = TeachingDataset::new();
    for s in d.sessions.iter().filter(|s| s.is_labeled()) {
        let prov = d.provenance.get(&s.session_id).cloned().unwrap_or(Provenance {
            model_id: String::new(),
            seed: 0,
            timestamp: 0,
        });
        labeled.push(s.clone(), prov)?;
    }
    let table = if p.top_user_conditioning { Some(identify_top_users(&labeled, p.top_percentile)?) } else { None };
    let mut selected = if p.include_failures { labeled.clone() } else { filter_successes(&labeled) };
    if let Some(t) = &table {
        selected = apply_user_conditioning(&selected, &t.top_users);
    }
    let n_selected = selected.len();
    let mut rng = rng_from_seed(derive_seed(p.seed, 9));
    let augmented = augment(&selected, p.augment_k, &mut rng);
    let exemplars = exemplar_sessions(&Layout::builtin_ids());
    let mut corpus = Vec::with_capacity(augmented.len() + exemplars.len());
    for s in augmented.sessions.iter().chain(&exemplars) {
        let s = match p.objective {
            Objective::Rollouts => s.clone(),
            Objective::Skip => skip_view(s),
        };
        corpus.push(serialize_session(&s, s.conditioning_uid())?);
    }
    let summary = CorpusSummary {
        labeled_sessions: labeled.len(),
        selected_sessions: n_selected,
        augmented_sessions: augmented.len() - n_selected,
        exemplar_sessions: exemplars.len(),
        sequences: corpus.len(),
        tokens: corpus.iter().map(|c| c.len()).sum(),
        top_users: table,
    };
    Ok((corpus, summary))
}

pub fn train(d: &TeachingDataset, p: &TrainParams) -> Result<(NGramModel, CorpusSummary), ExperimentError> {
    let (corpus, summary) = training_corpus(d, p)?;
    Ok((NGramModel::train(&corpus, p.order, p.alpha)?, summary))
}

pub fn base_model(order: usize, alpha: f64) -> Result<NGramModel, ExperimentError> {
    Ok(NGramModel::train(&base_corpus()?, order, alpha)?)
}

/// Builds a policy for a model spec. Retrieval specs point at a dataset
/// container and pair the base model with its retrieval index.
pub fn load_policy(spec: &ModelSpec, cfg: &RunConfig) -> Result<Arc<dyn RobotPolicy>, ExperimentError> {
    let decoder = cfg.decoder(spec.decoder);
    Ok(match spec.decoder {
        DecoderKind::Rag => {
            let (d, rag) = read_container(&spec.path)?;
            let index = if rag.is_empty() { RagIndex::build(&d) } else { RagIndex::from_records(rag) };
            Arc::new(RagPolicy {
                model: base_model(cfg.order, cfg.alpha)?,
                decoder,
                index,
                fraction: DEFAULT_FRACTION,
                k: DEFAULT_K,
            })
        }
        _ => Arc::new(DecodingPolicy { model: NGramModel::load(&spec.path)?, decoder }),
    })
}

pub fn load_pool(cfg: &RunConfig) -> Result<ModelPool, ExperimentError> {
    let mut pool = ModelPool::new();
    for spec in cfg.model_specs()? {
        pool.insert(&spec.name, load_policy(&spec, cfg)?);
    }
    if pool.is_empty() {
        return Err(ExperimentError::Invalid("no models given".into()));
    }
    Ok(pool)
}

pub fn collect_policy(cfg: &RunConfig) -> Result<(String, Arc<dyn RobotPolicy>), ExperimentError> {
    if cfg.collect_model == "bootstrap" {
        return Ok(("bootstrap".into(), Arc::new(BootstrapPolicy::default())));
    }
    let spec = ModelSpec::parse(&cfg.collect_model)?;
    Ok((spec.name.clone(), load_policy(&spec, cfg)?))
}

pub fn registry(cfg: &RunConfig) -> Result<TaskRegistry, ExperimentError> {
    Ok(match &cfg.task_registry {
        Some(p) => TaskRegistry::load(p)?,
        None => TaskRegistry::builtin(),
    })
}

pub fn limits(cfg: &RunConfig) -> SessionLimits {
    SessionLimits { plan: cfg.plan_params(), ..SessionLimits::default() }
}

/// One report per model, in model-name order.
pub fn reports(d: &TeachingDataset, split: &str) -> Result<Vec<GroupReport>, ExperimentError> {
    let mut by_model: BTreeMap<String, Vec<ChatSession>> = BTreeMap::new();
    for s in &d.sessions {
        let m = d.provenance.get(&s.session_id).map(|p| p.model_id.clone()).unwrap_or_default();
        by_model.entry(m).or_default().push(s.clone());
    }
    by_model.iter().map(|(m, ss)| group_report(m, split, ss).map_err(Into::into)).collect()
}

/// Writes `metrics.csv`, `curve.csv` and `curve_plot.json` into `dir`.
pub fn write_reports(groups: &[GroupReport], dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    write_metrics_csv(groups, std::fs::File::create(dir.join("metrics.csv"))?)?;
    write_curve_csv(groups, std::fs::File::create(dir.join("curve.csv"))?)?;
    let plot = serde_json::to_string_pretty(&curve_plot_spec(groups)).expect("plot spec serializes");
    std::fs::write(dir.join("curve_plot.json"), plot)?;
    Ok(())
}

/// Re-execution of a logged session.
#[derive(Clone, Debug)]
pub struct Replay {
    pub instance: TaskInstance,
    pub trajectories: Vec<Trajectory>,
}

impl Replay {
    pub fn frames(&self) -> Vec<TurnFrames> {
        self.trajectories
            .iter()
            .enumerate()
            .map(|(turn, t)| TurnFrames { turn, frames: t.frames() })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnFrames {
    pub turn: usize,
    pub frames: Vec<Frame>,
}

/// Rebuilds the instance from the logged seed and re-executes each turn's
/// code with the same planner seeds.
pub fn replay(
    d: &TeachingDataset,
    session_id: &str,
    reg: &TaskRegistry,
    plan: &PlanParams,
) -> Result<Replay, ExperimentError> {
    let s = d.get(session_id).ok_or_else(|| ExperimentError::UnknownSession(session_id.to_owned()))?;
    let seed = d.provenance.get(session_id).ok_or_else(|| DataError::MissingProvenance(session_id.to_owned()))?.seed;
    let task = reg.get(&s.task_id).ok_or_else(|| ExperimentError::UnknownTask(s.task_id.clone()))?;
    let instance = task.instantiate(seed);
    let trajectories = s
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| execute_turn(&instance, &t.robot_code, &turn_plan_params(plan, seed, i)).0)
        .collect();
    Ok(Replay { instance, trajectories })
}

/// The default simulated teacher population for a run seed.
pub fn population(cfg: &RunConfig) -> Vec<TeacherProfile> {
    reference_population(cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Split;

    fn small_collection(workers: usize) -> Collection {
        let reg = TaskRegistry::builtin();
        let tasks = reg.filter(Some("pusher"), Some(Split::Train));
        let pool = ModelPool::new().with("bootstrap", Arc::new(BootstrapPolicy::default()));
        let p = CollectParams {
            sessions: 6,
            seed: 3,
            id_prefix: "t".into(),
            limits: SessionLimits::default(),
            workers,
        };
        collect(&pool, &tasks, &reference_population(3), &p).unwrap()
    }

    #[test]
    fn collection_is_independent_of_workers() {
        let a = small_collection(1);
        let b = small_collection(2);
        assert_eq!(a.dataset, b.dataset);
        assert!(a.dataset.sessions.iter().all(|s| s.is_labeled()));
        assert_eq!(a.dataset.sessions[0].session_id, "t-00000");
    }

    #[test]
    fn replay_matches_recorded_trajectories() {
        let c = small_collection(1);
        let reg = TaskRegistry::builtin();
        for rec in &c.records {
            let r = replay(&c.dataset, &rec.session.session_id, &reg, &SessionLimits::default().plan).unwrap();
            assert_eq!(r.trajectories, rec.trajectories);
        }
    }

    #[test]
    fn skip_corpus_has_one_turn_per_session() {
        let c = small_collection(1);
        let p = TrainParams {
            objective: Objective::Skip,
            order: 4,
            alpha: 0.1,
            augment_k: 1,
            top_user_conditioning: true,
            top_percentile: 75.0,
            include_failures: true,
            seed: 0,
        };
        let (corpus, sum) = training_corpus(&c.dataset, &p).unwrap();
        assert_eq!(sum.selected_sessions, 6);
        assert_eq!(corpus.len(), 6 * 2 + 2);
        for seq in &corpus {
            assert_eq!(seq.iter().filter(|t| *t == crate::session::ROBOT).count(), 1);
        }
    }
}
