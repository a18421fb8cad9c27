//! Retrieval-augmented prompting baseline: hashed bag-of-words embeddings,
//! similarity pool, farthest point sampling, and prompt assembly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{filter_successes, RagEntryRecord, TeachingDataset};
use crate::decoder::DecoderConfig;
use crate::model::SessionModel;
use crate::session::{serialize_prefix, tokenize, ChatTurn, TokenSeq, TOP_USER};
use crate::teacher::{RobotPolicy, TurnContext};
use crate::util::{fnv1a, Rng};

pub const EMBED_DIM: usize = 256;
pub const DEFAULT_FRACTION: f64 = 0.30;
pub const DEFAULT_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Normalizes a raw vector; the zero vector maps to the first basis
    /// vector.
    pub fn from_raw(mut v: Vec<f64>) -> Self {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n == 0.0 {
            v.iter_mut().for_each(|a| *a = 0.0);
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|a| *a /= n);
        }
        Embedding(v)
    }
}

/// Token counts hashed into [`EMBED_DIM`] bins, L2-normalized.
pub fn embed(text: &str) -> Embedding {
    let mut v = vec![0.0; EMBED_DIM];
    for t in tokenize(text).iter() {
        v[(fnv1a(t.as_bytes()) % EMBED_DIM as u64) as usize] += 1.0;
    }
    Embedding::from_raw(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RagEntry {
    pub instruction: String,
    pub embedding: Embedding,
    pub code: String,
    pub embodiment_id: String,
}

impl RagEntry {
    pub fn new(instruction: &str, code: &str, embodiment_id: &str) -> Self {
        Self {
            instruction: instruction.to_owned(),
            embedding: embed(instruction),
            code: code.to_owned(),
            embodiment_id: embodiment_id.to_owned(),
        }
    }
}

impl From<&RagEntry> for RagEntryRecord {
    fn from(e: &RagEntry) -> Self {
        RagEntryRecord {
            instruction: e.instruction.clone(),
            code: e.code.clone(),
            embodiment_id: e.embodiment_id.clone(),
            embedding: e.embedding.0.clone(),
        }
    }
}

impl From<RagEntryRecord> for RagEntry {
    fn from(r: RagEntryRecord) -> Self {
        Self { instruction: r.instruction, embedding: Embedding(r.embedding), code: r.code, embodiment_id: r.embodiment_id }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RagError {
    #[error("no retrieval entries for embodiment `{0}`")]
    EmptyIndex(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RagIndex {
    pub entries: Vec<RagEntry>,
}

impl RagIndex {
    /// First instruction and final code of every successful session.
    pub fn build(d: &TeachingDataset) -> Self {
        let entries = filter_successes(d)
            .sessions
            .iter()
            .filter_map(|s| {
                let first = s.turns.first()?;
                let last = s.turns.last()?;
                Some(RagEntry::new(&first.human_text, &last.robot_code, &s.embodiment_id))
            })
            .collect();
        Self { entries }
    }

    pub fn records(&self) -> Vec<RagEntryRecord> {
        self.entries.iter().map(RagEntryRecord::from).collect()
    }

    pub fn from_records(r: Vec<RagEntryRecord>) -> Self {
        Self { entries: r.into_iter().map(RagEntry::from).collect() }
    }
}

/// Greedy max-min selection under Euclidean distance, starting from
/// `start`. Ties go to the lowest index.
pub fn farthest_point_sample(cands: &[Embedding], k: usize, start: usize) -> Vec<usize> {
    if cands.is_empty() || k == 0 {
        return Vec::new();
    }
    let k = k.min(cands.len());
    let mut chosen = vec![start];
    let mut min_d: Vec<f64> = cands.iter().map(|c| c.distance(&cands[start])).collect();
    let mut taken = vec![false; cands.len()];
    taken[start] = true;
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k is capped at the candidate count");
        taken[b] = true;
        chosen.push(b);
        for i in 0..cands.len() {
            min_d[i] = min_d[i].min(cands[i].distance(&cands[b]));
        }
    }
    chosen
}

/// Size of the similarity pool: the closest `fraction` of the entries, but
/// never fewer than `k` when that many exist.
pub fn pool_size(n: usize, fraction: f64, k: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).max(k.min(n)).min(n)
}

/// Retrieves exemplars for `query`, ordered from least to most similar.
pub fn retrieve<'a>(
    idx: &'a RagIndex,
    query: &str,
    fraction: f64,
    k: usize,
    embodiment: &str,
) -> Result<Vec<&'a RagEntry>, RagError> {
    let cands: Vec<&RagEntry> = idx.entries.iter().filter(|e| e.embodiment_id == embodiment).collect();
    if cands.is_empty() {
        return Err(RagError::EmptyIndex(embodiment.to_owned()));
    }
    let q = embed(query);
    let sims: Vec<f64> = cands.iter().map(|e| e.embedding.cosine(&q)).collect();
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|a, b| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b)));
    order.truncate(pool_size(cands.len(), fraction, k));
    let pool: Vec<Embedding> = order.iter().map(|i| cands[*i].embedding.clone()).collect();
    let mut picked: Vec<usize> = farthest_point_sample(&pool, k, 0).into_iter().map(|p| order[p]).collect();
    picked.sort_by(|a, b| sims[*a].total_cmp(&sims[*b]).then(b.cmp(a)));
    Ok(picked.into_iter().map(|i| cands[i]).collect())
}

/// Base prompt followed by one example block per exemplar.
pub fn exemplar_prompt(base: &str, exemplars: &[&RagEntry]) -> String {
    let mut p = base.to_owned();
    for e in exemplars {
        p.push_str("\n# example: ");
        p.push_str(&e.instruction);
        p.push('\n');
        p.push_str(&e.code);
    }
    p
}

/// Decoding prefix with the exemplars inserted between the base prompt and
/// the conversation.
pub fn assemble_prompt(
    base: &str,
    exemplars: &[&RagEntry],
    condition_uid: &str,
    turns: &[ChatTurn],
    pending_human: &str,
) -> TokenSeq {
    serialize_prefix(&exemplar_prompt(base, exemplars), condition_uid, turns, pending_human)
}

/// A session model prompted with retrieved exemplars for the first
/// instruction of the session.
pub struct RagPolicy<M: SessionModel> {
    pub model: M,
    pub decoder: DecoderConfig,
    pub index: RagIndex,
    pub fraction: f64,
    pub k: usize,
}

impl<M: SessionModel> RobotPolicy for RagPolicy<M> {
    fn respond(&self, ctx: &TurnContext<'_>, rng: &mut Rng) -> Result<String, String> {
        let first = ctx.turns.first().map(|t| t.human_text.as_str()).unwrap_or(ctx.pending_human);
        let ex = retrieve(&self.index, first, self.fraction, self.k, &ctx.instance.task.embodiment)
            .unwrap_or_default();
        let prefix = assemble_prompt(ctx.system_prompt, &ex, TOP_USER, ctx.turns, ctx.pending_human);
        self.decoder.step(&self.model, &prefix, rng).map(|(code, _)| code).map_err(|e| e.to_string())
    }
}
