//! Greedy, beam and ensemble caption generation.
//!
//! Scores are summed `ln p` with each probability clamped at the log floor.
//! Every candidate, END included, competes for the `k` beam slots; finished
//! hypotheses retire to a pool and never expand. START is never proposed.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, END, START};
use crate::error::{Error, Result};
use crate::model::{CaptionModel, DecodeContext, DecoderState};
use crate::numerics::{log_floor, Scalar};

pub const DEFAULT_BEAM_WIDTH: usize = 3;
pub const DEFAULT_MAX_LEN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub k: usize,
    pub max_len: usize,
    /// Rank the final pool by logprob per generated token.
    pub length_norm: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_BEAM_WIDTH,
            max_len: DEFAULT_MAX_LEN,
            length_norm: false,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// A partial or finished caption. `state` holds one decoder state per
/// ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<T> {
    pub tokens: Vec<usize>,
    pub logprob: T,
    pub state: Vec<DecoderState<T>>,
    pub finished: bool,
}

impl<T: Scalar> Hypothesis<T> {
    /// Tokens without the START/END framing.
    pub fn words(&self) -> &[usize] {
        let body = &self.tokens[1..];
        match body.last() {
            Some(&END) => &body[..body.len() - 1],
            _ => body,
        }
    }

    fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    fn ranking_score(&self, length_norm: bool) -> T {
        if length_norm {
            self.logprob / T::from_usize(self.generated().max(1)).unwrap()
        } else {
            self.logprob
        }
    }
}

/// Higher score first, then the lexicographically lower token sequence.
fn rank<T: Scalar>(sa: T, ta: &[usize], sb: T, tb: &[usize]) -> Ordering {
    sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then_with(|| ta.cmp(tb))
}

struct Members<'m, T> {
    models: Vec<&'m CaptionModel<T>>,
    contexts: Vec<DecodeContext<T>>,
    vocab: usize,
}

impl<'m, T: Scalar> Members<'m, T> {
    fn new(models: &[&'m CaptionModel<T>], ann: &AnnotationSet<T>) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::Input("ensemble has no models".into()))?;
        let vocab = first.vocab_size();
        if let Some(m) = models.iter().find(|m| m.vocab_size() != vocab) {
            return Err(Error::Input(format!(
                "ensemble vocabulary mismatch: {} vs {}",
                vocab,
                m.vocab_size()
            )));
        }
        if vocab <= END {
            return Err(Error::Input("vocabulary too small to decode".into()));
        }
        let contexts = models.iter().map(|m| m.prepare(ann)).collect::<Result<_>>()?;
        Ok(Self {
            models: models.to_vec(),
            contexts,
            vocab,
        })
    }

    fn initial(&self) -> Vec<DecoderState<T>> {
        self.contexts.iter().map(|c| c.init.clone()).collect()
    }

    /// Mean next-token distribution, as log scores, and the advanced states.
    fn step(&self, states: &[DecoderState<T>], token: usize) -> Result<(Vec<T>, Vec<DecoderState<T>>)> {
        let mut sum = vec![T::zero(); self.vocab];
        let mut next = Vec::with_capacity(self.models.len());
        for ((m, ctx), st) in self.models.iter().zip(&self.contexts).zip(states) {
            let (p, s) = m.step(ctx, st, token)?;
            sum.iter_mut().zip(&p).for_each(|(a, b)| *a = *a + *b);
            next.push(s);
        }
        let n = T::from_usize(self.models.len()).unwrap();
        let floor = log_floor::<T>();
        Ok((sum.into_iter().map(|p| (p / n).max(floor).ln()).collect(), next))
    }
}

fn greedy_members<T: Scalar>(members: &Members<'_, T>, max_len: usize) -> Result<Vec<usize>> {
    let mut states = members.initial();
    let mut token = START;
    let mut words = Vec::new();
    let mut logprob = T::zero();
    for t in 0..=max_len {
        let (logp, next) = members.step(&states, token)?;
        states = next;
        let best = if t == max_len {
            END
        } else {
            let mut best = END;
            let mut best_score = logprob + logp[END];
            for (w, &lp) in logp.iter().enumerate() {
                if w == START {
                    continue;
                }
                let s = logprob + lp;
                if s > best_score || (s == best_score && w < best) {
                    best = w;
                    best_score = s;
                }
            }
            best
        };
        logprob = logprob + logp[best];
        if best == END {
            break;
        }
        words.push(best);
        token = best;
    }
    Ok(words)
}

/// Feeds back the most probable token until END or `max_len` words.
pub fn greedy_decode<T: Scalar>(model: &CaptionModel<T>, ann: &AnnotationSet<T>, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    greedy_members(&Members::new(&[model], ann)?, max_len)
}

fn beam_members<T: Scalar>(members: &Members<'_, T>, cfg: &BeamConfig) -> Result<Vec<Hypothesis<T>>> {
    cfg.validate()?;
    let mut live = vec![Hypothesis {
        tokens: vec![START],
        logprob: T::zero(),
        state: members.initial(),
        finished: false,
    }];
    let mut pool: Vec<Hypothesis<T>> = Vec::new();
    for t in 0..=cfg.max_len {
        // (score, parent, token); parent states are advanced once per parent
        let mut cands: Vec<(T, usize, usize)> = Vec::new();
        let mut advanced = Vec::with_capacity(live.len());
        for (hi, h) in live.iter().enumerate() {
            let (logp, next) = members.step(&h.state, *h.tokens.last().unwrap())?;
            if t == cfg.max_len {
                cands.push((h.logprob + logp[END], hi, END));
            } else {
                for (w, &lp) in logp.iter().enumerate() {
                    if w != START {
                        cands.push((h.logprob + lp, hi, w));
                    }
                }
            }
            advanced.push(next);
        }
        cands.sort_by(|a, b| {
            let ta = &live[a.1].tokens;
            let tb = &live[b.1].tokens;
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| ta.iter().chain([&a.2]).cmp(tb.iter().chain([&b.2])))
        });
        cands.truncate(cfg.k);
        let mut next_live = Vec::with_capacity(cfg.k);
        for (score, hi, w) in cands {
            let mut tokens = live[hi].tokens.clone();
            tokens.push(w);
            let hyp = Hypothesis {
                tokens,
                logprob: score,
                state: advanced[hi].clone(),
                finished: w == END,
            };
            if hyp.finished {
                pool.push(hyp);
            } else {
                next_live.push(hyp);
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        if pool.len() >= cfg.k && !cfg.length_norm {
            pool.sort_by(|a, b| rank(a.logprob, &a.tokens, b.logprob, &b.tokens));
            // scores only fall as tokens are appended
            if live[0].logprob < pool[cfg.k - 1].logprob {
                break;
            }
        }
    }
    pool.sort_by(|a, b| {
        rank(
            a.ranking_score(cfg.length_norm),
            &a.tokens,
            b.ranking_score(cfg.length_norm),
            &b.tokens,
        )
    });
    pool.truncate(cfg.k);
    Ok(pool)
}

/// Ranked finished hypotheses, best first, at most `k` of them.
pub fn beam_decode<T: Scalar>(model: &CaptionModel<T>, ann: &AnnotationSet<T>, cfg: &BeamConfig) -> Result<Vec<Hypothesis<T>>> {
    beam_members(&Members::new(&[model], ann)?, cfg)
}

/// Beam search over the arithmetic mean of the members' distributions.
pub fn ensemble_decode<T: Scalar>(
    models: &[&CaptionModel<T>],
    ann: &AnnotationSet<T>,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis<T>>> {
    beam_members(&Members::new(models, ann)?, cfg)
}

/// Greedy decoding over an ensemble.
pub fn ensemble_greedy<T: Scalar>(models: &[&CaptionModel<T>], ann: &AnnotationSet<T>, max_len: usize) -> Result<Vec<usize>> {
    greedy_members(&Members::new(models, ann)?, max_len)
}

/// Summed clamped log probability of `words` followed by END.
pub fn sequence_logprob<T: Scalar>(model: &CaptionModel<T>, ann: &AnnotationSet<T>, words: &[usize]) -> Result<T> {
    let members = Members::new(&[model], ann)?;
    let mut states = members.initial();
    let mut token = START;
    let mut total = T::zero();
    for &w in words.iter().chain([&END]) {
        let (logp, next) = members.step(&states, token)?;
        total = total + *logp.get(w).ok_or(Error::Index {
            what: "vocabulary",
            index: w,
            size: logp.len(),
        })?;
        states = next;
        token = w;
    }
    Ok(total)
}
