//! The attention encoder-decoder, with optional guiding network(s).

mod cell;
mod config;

pub use cell::{
    attend, attend_node, attention_keys, embed, embed_node, init_decoder_state, init_state_node, lstm_step,
    lstm_step_node, output_distribution, output_node, AttentionParams, DecoderState, InitParams, LstmParams,
};
pub use config::{ModelConfig, Variant};

use crate::corpus::AnnotationSet;
use crate::error::{Error, Result};
use crate::guiding::{
    compose_input_node, discriminative_loss_node, guide_projection, guiding_node, GuidingParams,
};
use crate::numerics::{Gradients, NodeId, ParamStore, Scalar, Tape};
use crate::objective::{LossBreakdown, LossWeights};
use crate::review::{review_node, ReviewIds};
use crate::trainer::init_params;
use config::names;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ModelIds {
    pub embed: crate::numerics::ParamId,
    pub out: crate::numerics::ParamId,
    pub dec_lstm: LstmParams,
    pub dec_att: AttentionParams,
    pub dec_init: Option<InitParams>,
    /// Guide feeding the decoder (`g` or `g2`).
    pub guide: Option<GuidingParams>,
    pub review: Option<ReviewIds>,
}

fn lstm_ids<T: Scalar>(s: &ParamStore<T>, prefix: &str) -> Result<LstmParams> {
    Ok(LstmParams {
        w: s.id(&format!("{prefix}.lstm.w"))?,
        b: s.id(&format!("{prefix}.lstm.b"))?,
    })
}

fn att_ids<T: Scalar>(s: &ParamStore<T>, prefix: &str) -> Result<AttentionParams> {
    Ok(AttentionParams {
        wa: s.id(&format!("{prefix}.att.wa"))?,
        wh: s.id(&format!("{prefix}.att.wh"))?,
        b: s.id(&format!("{prefix}.att.b"))?,
        w: s.id(&format!("{prefix}.att.v"))?,
    })
}

fn init_ids<T: Scalar>(s: &ParamStore<T>, prefix: &str) -> Result<InitParams> {
    Ok(InitParams {
        h: s.id(&format!("{prefix}.init.h"))?,
        c: s.id(&format!("{prefix}.init.c"))?,
    })
}

fn guide_ids<T: Scalar>(s: &ParamStore<T>, prefix: &str) -> Result<GuidingParams> {
    Ok(GuidingParams {
        w: s.id(&format!("{prefix}.w"))?,
        b: s.id(&format!("{prefix}.b"))?,
        wv: s.id(&format!("{prefix}.wv"))?,
    })
}

/// Nodes of one teacher-forced caption rollout.
#[derive(Debug, Clone)]
pub struct CaptionGraph {
    pub distributions: Vec<NodeId>,
    /// Attention weights of each decoder step.
    pub attention: Vec<NodeId>,
    pub token_nll: Vec<NodeId>,
    pub nll: NodeId,
    /// Guiding vectors: `[v]` or `[v1, v2]`; empty when unguided.
    pub guides: Vec<NodeId>,
    /// Discriminative terms, one per guide, when membership flags were given.
    pub dis: Vec<NodeId>,
    pub total: NodeId,
}

/// Decoder-side inputs derived once per image.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    pub items: Vec<NodeId>,
    pub keys: Vec<NodeId>,
    pub guide_input: Option<NodeId>,
    pub h0: NodeId,
    pub c0: NodeId,
    pub guides: Vec<NodeId>,
}

/// Per-image values needed for step-by-step decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeContext<T> {
    pub items: Vec<Vec<T>>,
    pub keys: Vec<Vec<T>>,
    pub guide_input: Option<Vec<T>>,
    pub init: DecoderState<T>,
    pub guides: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    ids: ModelIds,
}

impl<T: Scalar> CaptionModel<T> {
    /// Freshly initialized model (weights U[-0.1, 0.1], biases zero).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.param_shapes(), seed)?;
        Self::from_params(config, params)
    }

    /// Wraps an existing store after checking that every tensor the config
    /// needs is present with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Data(format!(
                "model needs {} tensors, parameter store has {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &shapes {
            let p = params
                .by_name(name)
                .ok_or_else(|| Error::Data(format!("parameter store lacks {name}")))?;
            if p.shape != *shape {
                return Err(Error::Data(format!("{name} has shape {:?}, expected {shape:?}", p.shape)));
            }
        }
        let ids = Self::resolve(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    fn resolve(config: &ModelConfig, s: &ParamStore<T>) -> Result<ModelIds> {
        let review = match config.variant {
            Variant::SoftAttention => None,
            Variant::ReviewNet => {
                let lstm = if config.review.share_params {
                    vec![lstm_ids(s, names::REV)?]
                } else {
                    (0..config.review.steps)
                        .map(|i| lstm_ids(s, &format!("{}.{i}", names::REV)))
                        .collect::<Result<_>>()?
                };
                Some(ReviewIds {
                    lstm,
                    att: att_ids(s, names::REV)?,
                    init: init_ids(s, names::REV)?,
                    guide: if config.guided {
                        Some(guide_ids(s, names::GUIDE1)?)
                    } else {
                        None
                    },
                })
            }
        };
        let guide = match (config.guided, config.variant) {
            (false, _) => None,
            (true, Variant::SoftAttention) => Some(guide_ids(s, names::GUIDE)?),
            (true, Variant::ReviewNet) => Some(guide_ids(s, names::GUIDE2)?),
        };
        Ok(ModelIds {
            embed: s.id(names::EMBED)?,
            out: s.id(names::OUT)?,
            dec_lstm: lstm_ids(s, names::DEC)?,
            dec_att: att_ids(s, names::DEC)?,
            dec_init: match config.variant {
                Variant::SoftAttention => Some(init_ids(s, names::DEC)?),
                Variant::ReviewNet => None,
            },
            guide,
            review,
        })
    }

    #[cfg(test)]
    pub(crate) fn ids(&self) -> &ModelIds {
        &self.ids
    }

    pub fn embed_id(&self) -> crate::numerics::ParamId {
        self.ids.embed
    }

    pub fn decoder_guide(&self) -> Option<&GuidingParams> {
        self.ids.guide.as_ref()
    }

    pub fn review_guide(&self) -> Option<&GuidingParams> {
        self.ids.review.as_ref().and_then(|r| r.guide.as_ref())
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab
    }

    fn check_annotations(&self, ann: &AnnotationSet<T>) -> Result<()> {
        if ann.items.is_empty() {
            return Err(Error::dim("model", "empty annotation set"));
        }
        if let Some(bad) = ann.items.iter().find(|v| v.len() != self.config.annot_dim) {
            return Err(Error::dim(
                "model",
                format!("annotation vector of length {} but model expects {}", bad.len(), self.config.annot_dim),
            ));
        }
        if self.config.guided && ann.attrs.len() != self.config.attrs {
            return Err(Error::dim(
                "model",
                format!("attribute vector of length {} but model expects {}", ann.attrs.len(), self.config.attrs),
            ));
        }
        Ok(())
    }

    /// Records everything that precedes the first decoder step.
    pub(crate) fn encode<'p>(&'p self, tape: &mut Tape<'p, T>, ann: &AnnotationSet<T>) -> Result<Encoded> {
        self.check_annotations(ann)?;
        let items: Vec<NodeId> = ann.items.iter().map(|v| tape.leaf(v.clone())).collect();
        let attrs = self.config.guided.then(|| tape.leaf(ann.attrs.clone()));
        match &self.ids.review {
            None => {
                let init = self.ids.dec_init.as_ref().expect("soft attention has an init layer");
                let (h0, c0) = init_state_node(tape, init, &items)?;
                let mut guides = Vec::new();
                let guide_input = match (&self.ids.guide, attrs) {
                    (Some(g), Some(e)) => {
                        let v = guiding_node(tape, g, &items, e, self.config.masks)?;
                        guides.push(v);
                        Some(guide_projection(tape, g, v)?)
                    }
                    _ => None,
                };
                let keys = attention_keys(tape, &self.ids.dec_att, &items)?;
                Ok(Encoded {
                    items,
                    keys,
                    guide_input,
                    h0,
                    c0,
                    guides,
                })
            }
            Some(rev) => {
                let mut guides = Vec::new();
                let review_input = match (&rev.guide, attrs) {
                    (Some(g1), Some(e)) => {
                        let v1 = guiding_node(tape, g1, &items, e, self.config.masks)?;
                        guides.push(v1);
                        guide_projection(tape, g1, v1)?
                    }
                    _ => tape.leaf(vec![T::zero(); self.config.embed]),
                };
                let (thoughts, h0, c0) = review_node(tape, rev, &items, review_input, self.config.review.steps)?;
                let guide_input = match (&self.ids.guide, attrs) {
                    (Some(g2), Some(e)) => {
                        let v2 = guiding_node(tape, g2, &thoughts, e, self.config.masks)?;
                        guides.push(v2);
                        Some(guide_projection(tape, g2, v2)?)
                    }
                    _ => None,
                };
                let keys = attention_keys(tape, &self.ids.dec_att, &thoughts)?;
                Ok(Encoded {
                    items: thoughts,
                    keys,
                    guide_input,
                    h0,
                    c0,
                    guides,
                })
            }
        }
    }

    /// One decoder step: feed `token`, return `(p(next), alpha, h, c)`.
    pub(crate) fn decoder_step(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &Encoded,
        h: NodeId,
        c: NodeId,
        token: usize,
    ) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        if token >= self.config.vocab {
            return Err(Error::Index {
                what: "vocabulary",
                index: token,
                size: self.config.vocab,
            });
        }
        let x = compose_input_node(tape, self.ids.embed, token, enc.guide_input)?;
        let (alpha, z) = attend_node(tape, &self.ids.dec_att, &enc.keys, &enc.items, h)?;
        let (h, c) = lstm_step_node(tape, &self.ids.dec_lstm, x, h, c, z)?;
        let p = output_node(tape, self.ids.out, h)?;
        Ok((p, alpha, h, c))
    }

    /// Teacher-forced rollout of `caption` (START .. END). `positive` flags
    /// frequent-word membership for the discriminative terms.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        ann: &AnnotationSet<T>,
        caption: &[usize],
        positive: Option<&[bool]>,
        weights: LossWeights,
    ) -> Result<CaptionGraph> {
        if caption.len() < 2 {
            return Err(Error::Input("caption needs at least START and one target token".into()));
        }
        let enc = self.encode(tape, ann)?;
        let (mut h, mut c) = (enc.h0, enc.c0);
        let steps = caption.len() - 1;
        let mut distributions = Vec::with_capacity(steps);
        let mut attention = Vec::with_capacity(steps);
        let mut token_nll = Vec::with_capacity(steps);
        for t in 0..steps {
            let (p, alpha, h2, c2) = self.decoder_step(tape, &enc, h, c, caption[t])?;
            h = h2;
            c = c2;
            token_nll.push(tape.neg_log(p, caption[t + 1])?);
            distributions.push(p);
            attention.push(alpha);
        }
        let terms: Vec<(NodeId, T)> = token_nll.iter().map(|&n| (n, T::one())).collect();
        let nll = tape.combine(&terms)?;

        let mut dis = Vec::new();
        if let Some(pos) = positive {
            for &v in &enc.guides {
                dis.push(discriminative_loss_node(tape, v, pos)?);
            }
        }
        let lambdas = [T::lit(weights.lambda1), T::lit(weights.lambda2)];
        let mut total_terms = vec![(nll, T::one())];
        total_terms.extend(dis.iter().zip(lambdas).map(|(&d, l)| (d, l)));
        let total = tape.combine(&total_terms)?;

        Ok(CaptionGraph {
            distributions,
            attention,
            token_nll,
            nll,
            guides: enc.guides,
            dis,
            total,
        })
    }

    fn breakdown(&self, tape: &Tape<'_, T>, g: &CaptionGraph, weights: LossWeights) -> LossBreakdown<T> {
        let dis = |i: usize| g.dis.get(i).map_or(T::zero(), |&d| tape.scalar(d));
        let soft = self.config.variant == Variant::SoftAttention;
        LossBreakdown {
            nll: tape.scalar(g.nll),
            dis1: dis(0),
            dis2: dis(1),
            total: tape.scalar(g.total),
            lambda1: T::lit(weights.lambda1),
            lambda2: if soft { T::zero() } else { T::lit(weights.lambda2) },
            token_nll: g.token_nll.iter().map(|&n| tape.scalar(n)).collect(),
        }
    }

    pub fn loss(
        &self,
        ann: &AnnotationSet<T>,
        caption: &[usize],
        positive: Option<&[bool]>,
        weights: LossWeights,
    ) -> Result<LossBreakdown<T>> {
        let mut tape = Tape::new(&self.params);
        let g = self.forward(&mut tape, ann, caption, positive, weights)?;
        Ok(self.breakdown(&tape, &g, weights))
    }

    /// Loss and the gradient of its total with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        ann: &AnnotationSet<T>,
        caption: &[usize],
        positive: Option<&[bool]>,
        weights: LossWeights,
    ) -> Result<(LossBreakdown<T>, Gradients<T>)> {
        let mut tape = Tape::new(&self.params);
        let g = self.forward(&mut tape, ann, caption, positive, weights)?;
        let back = tape.backward(g.total)?;
        Ok((self.breakdown(&tape, &g, weights), back.params))
    }

    /// Values needed to decode one image step by step.
    pub fn prepare(&self, ann: &AnnotationSet<T>) -> Result<DecodeContext<T>> {
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, ann)?;
        let vals = |ids: &[NodeId]| ids.iter().map(|&i| tape.value(i).to_vec()).collect::<Vec<_>>();
        Ok(DecodeContext {
            items: vals(&enc.items),
            keys: vals(&enc.keys),
            guide_input: enc.guide_input.map(|g| tape.value(g).to_vec()),
            init: DecoderState {
                h: tape.value(enc.h0).to_vec(),
                c: tape.value(enc.c0).to_vec(),
            },
            guides: vals(&enc.guides),
        })
    }

    /// Feeds `token` from `state` and returns the next-token distribution
    /// with the updated state. Arithmetic matches [`CaptionModel::forward`].
    pub fn step(&self, ctx: &DecodeContext<T>, state: &DecoderState<T>, token: usize) -> Result<(Vec<T>, DecoderState<T>)> {
        let mut tape = Tape::new(&self.params);
        let items: Vec<NodeId> = ctx.items.iter().map(|v| tape.leaf(v.clone())).collect();
        let keys: Vec<NodeId> = ctx.keys.iter().map(|v| tape.leaf(v.clone())).collect();
        let guide_input = ctx.guide_input.as_ref().map(|g| tape.leaf(g.clone()));
        let h0 = tape.leaf(state.h.clone());
        let c0 = tape.leaf(state.c.clone());
        let enc = Encoded {
            items,
            keys,
            guide_input,
            h0,
            c0,
            guides: Vec::new(),
        };
        let (p, _, h, c) = self.decoder_step(&mut tape, &enc, h0, c0, token)?;
        Ok((
            tape.value(p).to_vec(),
            DecoderState {
                h: tape.value(h).to_vec(),
                c: tape.value(c).to_vec(),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{END, START};
    use crate::guiding::hinge_loss;

    pub(crate) fn tiny(variant: Variant, guided: bool) -> ModelConfig {
        ModelConfig {
            variant,
            vocab: 12,
            embed: 6,
            hidden: 8,
            annot_dim: 6,
            attention: 5,
            attrs: 5,
            guided,
            review: crate::review::ReviewConfig {
                steps: 3,
                share_params: true,
            },
            ..ModelConfig::default()
        }
    }

    fn ann(k: usize, d: usize, f: usize) -> AnnotationSet<f64> {
        AnnotationSet::new(
            vec![0.0; d],
            (0..k).map(|i| (0..d).map(|j| ((i * d + j) as f64 * 0.7).sin()).collect()).collect(),
            (0..f).map(|i| (i % 2) as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn teacher_forced_matches_stepwise_decoding() {
        for variant in [Variant::SoftAttention, Variant::ReviewNet] {
            let m = CaptionModel::<f64>::new(tiny(variant, true), 3).unwrap();
            let a = ann(4, 6, 5);
            let cap = [START, 4, 7, 5, END];
            let mut tape = Tape::new(&m.params);
            let g = m.forward(&mut tape, &a, &cap, None, LossWeights::default()).unwrap();
            let ctx = m.prepare(&a).unwrap();
            let mut st = ctx.init.clone();
            for (t, &tok) in cap[..cap.len() - 1].iter().enumerate() {
                let (p, s2) = m.step(&ctx, &st, tok).unwrap();
                assert_eq!(p.as_slice(), tape.value(g.distributions[t]));
                st = s2;
            }
        }
    }

    #[test]
    fn loss_components() {
        let m = CaptionModel::<f64>::new(tiny(Variant::SoftAttention, true), 5).unwrap();
        let a = ann(4, 6, 5);
        let cap = [START, 4, 7, END];
        let pos = [true, false, true, false, false];
        let l = m.loss(&a, &cap, Some(&pos), LossWeights::same(10.0)).unwrap();
        assert_eq!(l.token_nll.len(), 3);
        assert!((l.total - l.recomputed_total()).abs() <= 1e-12);
        assert_eq!(l.dis2, 0.0);
        let ctx = m.prepare(&a).unwrap();
        assert!((l.dis1 - hinge_loss(&ctx.guides[0], &pos)).abs() < 1e-15);
        assert!(m.loss(&a, &[START], None, LossWeights::default()).is_err());
        assert!(m.loss(&a, &[START, 12], None, LossWeights::default()).is_err());
    }

    #[test]
    fn review_model_has_two_guides() {
        let m = CaptionModel::<f64>::new(tiny(Variant::ReviewNet, true), 5).unwrap();
        let ctx = m.prepare(&ann(4, 6, 5)).unwrap();
        assert_eq!(ctx.guides.len(), 2);
        assert_eq!(ctx.items.len(), 3);
        assert!(ctx.items.iter().all(|t| t.len() == 8));
    }

    #[test]
    fn from_params_checks_shapes() {
        let m = CaptionModel::<f64>::new(tiny(Variant::SoftAttention, true), 1).unwrap();
        let mut cfg = m.config.clone();
        cfg.hidden = 9;
        assert!(CaptionModel::from_params(cfg, m.params.clone()).is_err());
        let cfg = tiny(Variant::SoftAttention, false);
        assert!(CaptionModel::from_params(cfg, m.params.clone()).is_err());
    }

    #[test]
    fn annotation_dims_checked() {
        let m = CaptionModel::<f64>::new(tiny(Variant::SoftAttention, true), 1).unwrap();
        assert!(m.prepare(&ann(4, 5, 5)).is_err());
        assert!(m.prepare(&ann(4, 6, 4)).is_err());
    }
}
