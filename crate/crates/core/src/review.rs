//! Review steps that turn encoder annotations into thought vectors.
//!
//! The review LSTM attends over `A1` for `T_r` steps, taking `W_v1·v1` (or
//! a zero vector) as input each step. Its hidden states form `A2`, which the
//! decoder attends over, and its final state seeds the decoder.

use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, FrequentWordSet};
use crate::error::{Error, Result};
use crate::guiding::{guide_projection, GuideMasks, GuidingParams, GuidingVector};
use crate::model::{
    attend_node, attention_keys, init_state_node, lstm_step_node, AttentionParams, CaptionModel, DecoderState,
    InitParams, LstmParams, Variant,
};
use crate::numerics::{NodeId, ParamStore, Scalar, Tape};
use crate::objective::LossWeights;

pub const DEFAULT_REVIEW_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewConfig {
    pub steps: usize,
    pub share_params: bool,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_REVIEW_STEPS,
            share_params: true,
        }
    }
}

/// Review-side parameters. `lstm` holds one entry when shared, else one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewIds {
    pub lstm: Vec<LstmParams>,
    pub att: AttentionParams,
    pub init: InitParams,
    pub guide: Option<GuidingParams>,
}

impl ReviewIds {
    fn lstm_at(&self, step: usize) -> &LstmParams {
        &self.lstm[step.min(self.lstm.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThoughtVectors<T> {
    pub vectors: Vec<Vec<T>>,
}

impl<T> ThoughtVectors<T> {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Records `steps` review steps; returns the thought nodes and the final `(h, c)`.
pub fn review_node<T: Scalar>(
    tape: &mut Tape<'_, T>,
    rev: &ReviewIds,
    items: &[NodeId],
    input: NodeId,
    steps: usize,
) -> Result<(Vec<NodeId>, NodeId, NodeId)> {
    if items.is_empty() {
        return Err(Error::dim("review_rollout", "empty annotation set"));
    }
    if steps == 0 {
        return Err(Error::Config("review.steps must be at least 1".into()));
    }
    let (mut h, mut c) = init_state_node(tape, &rev.init, items)?;
    let keys = attention_keys(tape, &rev.att, items)?;
    let mut thoughts = Vec::with_capacity(steps);
    for s in 0..steps {
        let (_, z) = attend_node(tape, &rev.att, &keys, items, h)?;
        let (h2, c2) = lstm_step_node(tape, rev.lstm_at(s), input, h, c, z)?;
        h = h2;
        c = c2;
        thoughts.push(h);
    }
    Ok((thoughts, h, c))
}

/// Runs the review steps on plain values. `v1` is `None` for the unguided
/// variant, in which case the review input is the zero vector.
pub fn review_rollout<T: Scalar>(
    store: &ParamStore<T>,
    rev: &ReviewIds,
    items: &[Vec<T>],
    v1: Option<&GuidingVector<T>>,
    cfg: &ReviewConfig,
) -> Result<(ThoughtVectors<T>, DecoderState<T>)> {
    let mut tape = Tape::new(store);
    let nodes: Vec<NodeId> = items.iter().map(|v| tape.leaf(v.clone())).collect();
    let input = match (v1, &rev.guide) {
        (Some(v), Some(g)) => {
            let vn = tape.leaf(v.v.clone());
            guide_projection(&mut tape, g, vn)?
        }
        (Some(_), None) => return Err(Error::State("guiding vector given to an unguided review".into())),
        (None, _) => {
            let width = store.get(rev.lstm[0].w).shape.dims().1;
            let hidden = store.get(rev.init.h).shape.dims().0;
            let d = items.first().map_or(0, Vec::len);
            let x = width.checked_sub(hidden + d).ok_or_else(|| Error::dim("review_rollout", "annotation too wide"))?;
            tape.leaf(vec![T::zero(); x])
        }
    };
    let (thoughts, h, c) = review_node(&mut tape, rev, &nodes, input, cfg.steps)?;
    Ok((
        ThoughtVectors {
            vectors: thoughts.iter().map(|&t| tape.value(t).to_vec()).collect(),
        },
        DecoderState {
            h: tape.value(h).to_vec(),
            c: tape.value(c).to_vec(),
        },
    ))
}

/// Teacher-forced output of a guided review model for one caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewForward<T> {
    pub distributions: Vec<Vec<T>>,
    pub v1: GuidingVector<T>,
    pub v2: GuidingVector<T>,
}

/// Teacher-forced rollout of caption `index` of `record`.
pub fn ltg_review_forward<T: Scalar>(
    model: &CaptionModel<T>,
    record: &CaptionRecord<T>,
    index: usize,
) -> Result<ReviewForward<T>> {
    if model.config.variant != Variant::ReviewNet || !model.config.guided {
        return Err(Error::State("ltg_review_forward needs a guided review model".into()));
    }
    let caption = record.captions.get(index).ok_or(Error::Index {
        what: "caption",
        index,
        size: record.captions.len(),
    })?;
    let mut tape = Tape::new(&model.params);
    let g = model.forward(&mut tape, &record.annotations, caption, None, LossWeights::default())?;
    let pooled = |id: NodeId| GuidingVector {
        v: tape.value(id).to_vec(),
        winners: tape.winners(id).map(<[usize]>::to_vec).unwrap_or_default(),
    };
    Ok(ReviewForward {
        distributions: g.distributions.iter().map(|&p| tape.value(p).to_vec()).collect(),
        v1: pooled(g.guides[0]),
        v2: pooled(g.guides[1]),
    })
}

/// `v1 = g1(A1, e)` for a guided review model.
pub fn first_guide<T: Scalar>(
    model: &CaptionModel<T>,
    items: &[Vec<T>],
    attrs: &[T],
    masks: GuideMasks,
) -> Result<GuidingVector<T>> {
    let g1 = model
        .review_guide()
        .ok_or_else(|| Error::State("model has no review-side guiding network".into()))?;
    crate::guiding::guiding_forward(&model.params, g1, items, attrs, masks)
}

/// Discriminative loss of both guiding vectors against one shared word set.
pub fn review_discriminative_losses<T: Scalar>(out: &ReviewForward<T>, caption: &[usize], fws: &FrequentWordSet) -> Result<(T, T)> {
    Ok((
        crate::guiding::discriminative_loss(&out.v1.v, caption, fws)?,
        crate::guiding::discriminative_loss(&out.v2.v, caption, fws)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotationSet, END, START};
    use crate::model::ModelConfig;

    fn cfg(guided: bool, steps: usize, share: bool) -> ModelConfig {
        ModelConfig {
            variant: Variant::ReviewNet,
            vocab: 12,
            embed: 6,
            hidden: 8,
            annot_dim: 6,
            attention: 5,
            attrs: 5,
            guided,
            review: ReviewConfig {
                steps,
                share_params: share,
            },
            ..ModelConfig::default()
        }
    }

    fn record() -> CaptionRecord<f64> {
        CaptionRecord {
            image_id: "x".into(),
            annotations: AnnotationSet::new(
                vec![0.0; 6],
                (0..4).map(|i| (0..6).map(|j| ((i * 6 + j) as f64 * 0.3).cos()).collect()).collect(),
                vec![1.0, 0.0, 0.0, 1.0, 0.0],
            )
            .unwrap(),
            captions: vec![vec![START, 3, 4, 5, END]],
        }
    }

    #[test]
    fn forward_shapes() {
        let m = CaptionModel::<f64>::new(cfg(true, 3, true), 2).unwrap();
        let out = ltg_review_forward(&m, &record(), 0).unwrap();
        assert_eq!(out.distributions.len(), 4);
        for p in &out.distributions {
            assert_eq!(p.len(), 12);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(out.v1.v.len(), 5);
        assert_eq!(out.v2.v.len(), 5);
        assert!(ltg_review_forward(&m, &record(), 1).is_err());
        let fws = FrequentWordSet::from_ids(vec![3, 4, 7, 8, 9]);
        let (d1, d2) = review_discriminative_losses(&out, &record().captions[0], &fws).unwrap();
        assert!(d1 >= 0.0 && d2 >= 0.0);
    }

    #[test]
    fn thought_count_and_sharing() {
        let m = CaptionModel::<f64>::new(cfg(false, 1, true), 2).unwrap();
        let rev = m.ids().review.clone().unwrap();
        let (a2, st) = review_rollout(&m.params, &rev, &record().annotations.items, None, &m.config.review).unwrap();
        assert_eq!(a2.len(), 1);
        assert_eq!(a2.vectors[0], st.h);
        assert_eq!(cfg(true, 1, true).param_count(), cfg(true, 8, true).param_count());
        assert!(cfg(true, 1, false).param_count() < cfg(true, 8, false).param_count());
    }

    #[test]
    fn guide_matches_forward() {
        let m = CaptionModel::<f64>::new(cfg(true, 3, false), 4).unwrap();
        let r = record();
        let out = ltg_review_forward(&m, &r, 0).unwrap();
        let v1 = first_guide(&m, &r.annotations.items, &r.annotations.attrs, GuideMasks::default()).unwrap();
        assert_eq!(v1, out.v1);
        let rev = m.ids().review.clone().unwrap();
        let (a2, _) = review_rollout(&m.params, &rev, &r.annotations.items, Some(&v1), &m.config.review).unwrap();
        assert_eq!(a2.len(), 3);
    }

    #[test]
    fn zero_review_params_closed_form() {
        let mut m = CaptionModel::<f64>::new(cfg(false, 2, true), 4).unwrap();
        for p in m.params.iter_mut() {
            if p.name.starts_with("rev.") {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let rev = m.ids().review.clone().unwrap();
        let (a2, _) = review_rollout(&m.params, &rev, &record().annotations.items, None, &m.config.review).unwrap();
        // zero weights: every gate is 0.5, g = 0, so c and h stay at zero
        assert!(a2.vectors.iter().flatten().all(|v| *v == 0.0));
    }
}
