use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use thiserror::Error;

use super::SessionModel;
use crate::session::{is_terminal, TokenSeq, SPECIAL_TOKENS};
use crate::util::Rng;

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_ALPHA: f64 = 0.1;

const FORMAT_HEADER: &str = "lmpc-ngram 1";
const UNKNOWN: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("sequence of length {len} is shorter than the model order {order}")]
    TooShort { len: usize, order: usize },
    #[error("order must be at least 2, got {0}")]
    InvalidOrder(usize),
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("bad model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
struct NextCounts {
    total: u64,
    /// Sorted by token id; every count is positive.
    next: Vec<(u32, u64)>,
}

/// Fixed-order n-gram model with additive (Laplace) smoothing.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    contexts: HashMap<Box<[u32]>, NextCounts>,
}

impl NGramModel {
    /// Counts every `(order - 1)`-token context and its successor.
    pub fn train<S: AsRef<[String]>>(corpus: &[S], order: usize, alpha: f64) -> Result<Self, NGramError> {
        if corpus.is_empty() {
            return Err(NGramError::EmptyCorpus);
        }
        if order < 2 {
            return Err(NGramError::InvalidOrder(order));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(NGramError::InvalidAlpha(alpha));
        }
        let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for seq in corpus {
            vocab.extend(seq.as_ref().iter().cloned());
        }
        vocab.sort();
        vocab.dedup();
        let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

        let mut raw: HashMap<Box<[u32]>, BTreeMap<u32, u64>> = HashMap::new();
        for seq in corpus {
            let ids: Vec<u32> = seq.as_ref().iter().map(|t| index[t]).collect();
            for i in (order - 1)..ids.len() {
                let ctx: Box<[u32]> = ids[i + 1 - order..i].into();
                *raw.entry(ctx).or_default().entry(ids[i]).or_insert(0) += 1;
            }
        }
        let contexts = raw
            .into_iter()
            .map(|(ctx, m)| {
                let total = m.values().sum();
                (ctx, NextCounts { total, next: m.into_iter().collect() })
            })
            .collect();
        Ok(Self { order, alpha, vocab, index, contexts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    fn id(&self, tok: &str) -> u32 {
        self.index.get(tok).copied().unwrap_or(UNKNOWN)
    }

    fn ids(&self, toks: &[String]) -> Vec<u32> {
        toks.iter().map(|t| self.id(t)).collect()
    }

    /// Smoothed conditional probability of `next` after `context` (the last
    /// `order - 1` tokens of `context` are used). Tokens outside the
    /// vocabulary have probability zero.
    pub fn prob(&self, context: &[String], next: &str) -> f64 {
        let next = self.id(next);
        if next == UNKNOWN {
            return 0.0;
        }
        let ctx = self.ids(context);
        self.prob_ids(&ctx, next)
    }

    fn prob_ids(&self, ctx: &[u32], next: u32) -> f64 {
        let v = self.vocab.len() as f64;
        let k = self.order - 1;
        if ctx.len() < k {
            return 1.0 / v;
        }
        match self.contexts.get(&ctx[ctx.len() - k..]) {
            None => 1.0 / v,
            Some(nc) => {
                let c = nc
                    .next
                    .binary_search_by_key(&next, |e| e.0)
                    .map(|i| nc.next[i].1)
                    .unwrap_or(0);
                (c as f64 + self.alpha) / (nc.total as f64 + self.alpha * v)
            }
        }
    }

    /// Sum of log conditional probabilities of every token after the first
    /// `order - 1`.
    pub fn sequence_logprob(&self, seq: &[String]) -> Result<f64, NGramError> {
        if seq.len() < self.order {
            return Err(NGramError::TooShort { len: seq.len(), order: self.order });
        }
        let ids = self.ids(seq);
        let k = self.order - 1;
        Ok((k..ids.len())
            .map(|i| {
                if ids[i] == UNKNOWN {
                    f64::NEG_INFINITY
                } else {
                    self.prob_ids(&ids[i - k..i], ids[i]).ln()
                }
            })
            .sum())
    }

    /// Mean log-probability per predicted token over a corpus, skipping
    /// sequences too short to score.
    pub fn mean_token_logprob<S: AsRef<[String]>>(&self, corpus: &[S]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in corpus {
            let s = s.as_ref();
            if let Ok(lp) = self.sequence_logprob(s) {
                sum += lp;
                n += s.len() + 1 - self.order;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    fn sample_next(&self, ctx: &[u32], temperature: f64, rng: &mut Rng) -> u32 {
        let v = self.vocab.len();
        let nc = match self.contexts.get(ctx) {
            Some(nc) => nc,
            None => return rng.random_range(0..v as u32),
        };
        let denom = nc.total as f64 + self.alpha * v as f64;
        let inv_t = 1.0 / temperature;
        let unseen = v - nc.next.len();
        let lu = (self.alpha / denom).ln() * inv_t;
        let mut max = if unseen > 0 { lu } else { f64::NEG_INFINITY };
        let lw: Vec<f64> = nc
            .next
            .iter()
            .map(|&(_, c)| {
                let l = ((c as f64 + self.alpha) / denom).ln() * inv_t;
                max = max.max(l);
                l
            })
            .collect();
        let weights: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
        let unseen_mass = unseen as f64 * (lu - max).exp();
        let z: f64 = weights.iter().sum::<f64>() + unseen_mass;
        let mut r = rng.random::<f64>() * z;
        for (w, &(id, _)) in weights.iter().zip(&nc.next) {
            if r < *w {
                return id;
            }
            r -= w;
        }
        if unseen == 0 {
            return nc.next.last().map(|e| e.0).unwrap_or(0);
        }
        // j-th id not present in the (sorted) seen list
        let mut id = rng.random_range(0..unseen as u32);
        for &(s, _) in &nc.next {
            if s <= id {
                id += 1;
            } else {
                break;
            }
        }
        id
    }

    /// Writes the flat text format: header, order, alpha, vocabulary, then
    /// one record per context in sorted order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "alpha {}", self.alpha);
        let _ = writeln!(out, "vocab {}", self.vocab.len());
        for t in &self.vocab {
            let _ = writeln!(out, "{}", escape(t));
        }
        let mut ctxs: Vec<(&Box<[u32]>, &NextCounts)> = self.contexts.iter().collect();
        ctxs.sort_by(|a, b| a.0.cmp(b.0));
        let _ = writeln!(out, "contexts {}", ctxs.len());
        for (ctx, nc) in ctxs {
            let c: Vec<String> = ctx.iter().map(u32::to_string).collect();
            let n: Vec<String> = nc.next.iter().map(|(id, k)| format!("{id}:{k}")).collect();
            let _ = writeln!(out, "{}\t{}", c.join(" "), n.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NGramError> {
        let bad = |m: &str| NGramError::Format(m.to_owned());
        let mut lines = text.lines();
        if lines.next() != Some(FORMAT_HEADER) {
            return Err(bad("missing or unsupported header"));
        }
        let mut field = |name: &str| -> Result<String, NGramError> {
            let line = lines.next().ok_or_else(|| bad("truncated file"))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| NGramError::Format(format!("expected `{name}`")))
        };
        let order: usize = field("order")?.parse().map_err(|_| bad("bad order"))?;
        let alpha: f64 = field("alpha")?.parse().map_err(|_| bad("bad alpha"))?;
        let nv: usize = field("vocab")?.parse().map_err(|_| bad("bad vocab size"))?;
        if order < 2 {
            return Err(NGramError::InvalidOrder(order));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(NGramError::InvalidAlpha(alpha));
        }
        let mut vocab = Vec::with_capacity(nv);
        for _ in 0..nv {
            vocab.push(unescape(lines.next().ok_or_else(|| bad("truncated vocabulary"))?));
        }
        let nc: usize = {
            let line = lines.next().ok_or_else(|| bad("truncated file"))?;
            line.strip_prefix("contexts ")
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| bad("expected `contexts`"))?
        };
        let v = vocab.len() as u32;
        let mut contexts = HashMap::with_capacity(nc);
        for _ in 0..nc {
            let line = lines.next().ok_or_else(|| bad("truncated contexts"))?;
            let (c, n) = line.split_once('\t').ok_or_else(|| bad("bad context record"))?;
            let ctx: Vec<u32> = c
                .split(' ')
                .map(|x| x.parse::<u32>().ok().filter(|&i| i < v))
                .collect::<Option<_>>()
                .ok_or_else(|| bad("bad context id"))?;
            if ctx.len() != order - 1 {
                return Err(bad("context length does not match order"));
            }
            let mut next = Vec::new();
            for e in n.split(' ') {
                let (id, k) = e.split_once(':').ok_or_else(|| bad("bad count entry"))?;
                let id: u32 = id.parse().ok().filter(|&i| i < v).ok_or_else(|| bad("bad next id"))?;
                let k: u64 = k.parse().ok().filter(|&k| k > 0).ok_or_else(|| bad("bad count"))?;
                next.push((id, k));
            }
            if !next.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(bad("next-token entries must be strictly sorted"));
            }
            let total = next.iter().map(|e| e.1).sum();
            contexts.insert(ctx.into_boxed_slice(), NextCounts { total, next });
        }
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Self { order, alpha, vocab, index, contexts })
    }

    pub fn save(&self, path: &Path) -> Result<(), NGramError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NGramError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

impl SessionModel for NGramModel {
    fn supports_training(&self) -> bool {
        true
    }

    fn vocabulary(&self) -> Option<&[String]> {
        Some(&self.vocab)
    }

    fn sample_rollout(&self, prefix: &[String], temperature: f64, max_tokens: usize, rng: &mut Rng) -> TokenSeq {
        assert!(temperature > 0.0, "temperature must be positive");
        let k = self.order - 1;
        let mut ctx: Vec<u32> = self.ids(&prefix[prefix.len().saturating_sub(k)..]);
        while ctx.len() < k {
            ctx.insert(0, UNKNOWN);
        }
        let mut out = TokenSeq::new();
        for _ in 0..max_tokens {
            let id = self.sample_next(&ctx, temperature, rng);
            let tok = &self.vocab[id as usize];
            out.push(tok.clone());
            if is_terminal(tok) {
                break;
            }
            ctx.remove(0);
            ctx.push(id);
        }
        out
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}
