use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guiding::GuideMasks;
use crate::numerics::{ParamKind, Shape};
use crate::review::ReviewConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SoftAttention,
    ReviewNet,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SoftAttention => "soft-attention",
            Variant::ReviewNet => "review-net",
        }
    }
}

/// Architecture hyper-parameters. `vocab`, `annot_dim` and `attrs` are
/// data-dependent and normally filled in from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub annot_dim: usize,
    pub attention: usize,
    /// Frequent-word count F; also the guiding vector size Z.
    pub attrs: usize,
    pub guided: bool,
    pub masks: GuideMasks,
    pub review: ReviewConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SoftAttention,
            vocab: 0,
            embed: 32,
            hidden: 64,
            annot_dim: 16,
            attention: 32,
            attrs: 0,
            guided: true,
            masks: GuideMasks::default(),
            review: ReviewConfig::default(),
        }
    }
}

pub(crate) mod names {
    pub const EMBED: &str = "embed";
    pub const OUT: &str = "dec.out.w";
    pub const DEC: &str = "dec";
    pub const REV: &str = "rev";
    pub const GUIDE: &str = "guide";
    pub const GUIDE1: &str = "guide1";
    pub const GUIDE2: &str = "guide2";
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab", self.vocab),
            ("embed", self.embed),
            ("hidden", self.hidden),
            ("annot_dim", self.annot_dim),
            ("attention", self.attention),
        ];
        if let Some((n, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{n} must be positive")));
        }
        if self.guided && self.attrs == 0 {
            return Err(Error::Config("guided models need at least one frequent word".into()));
        }
        if self.variant == Variant::ReviewNet && self.review.steps == 0 {
            return Err(Error::Config("review.steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Every tensor of the model in declaration order.
    pub fn param_shapes(&self) -> Vec<(String, Shape, ParamKind)> {
        use names::*;
        let (v, e, h, d, a, f) = (self.vocab, self.embed, self.hidden, self.annot_dim, self.attention, self.attrs);
        let mut out = Vec::new();
        let mut push = |name: String, shape: Shape, kind: ParamKind| out.push((name, shape, kind));

        push(EMBED.into(), Shape::Matrix(v, e), ParamKind::Weight);
        // decoder context vectors come from A (soft) or the thought vectors (review)
        let ctx = match self.variant {
            Variant::SoftAttention => d,
            Variant::ReviewNet => h,
        };
        lstm_shapes(&mut push, DEC, e, h, ctx);
        attention_shapes(&mut push, DEC, ctx, h, a);
        push(OUT.into(), Shape::Matrix(v, h), ParamKind::Weight);

        match self.variant {
            Variant::SoftAttention => {
                init_shapes(&mut push, DEC, d, h);
                if self.guided {
                    guide_shapes(&mut push, GUIDE, d, f, e);
                }
            }
            Variant::ReviewNet => {
                if self.review.share_params {
                    lstm_shapes(&mut push, REV, e, h, d);
                } else {
                    for s in 0..self.review.steps {
                        lstm_shapes(&mut push, &format!("{REV}.{s}"), e, h, d);
                    }
                }
                attention_shapes(&mut push, REV, d, h, a);
                init_shapes(&mut push, REV, d, h);
                if self.guided {
                    guide_shapes(&mut push, GUIDE1, d, f, e);
                    guide_shapes(&mut push, GUIDE2, h, f, e);
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s, _)| s.numel()).sum()
    }
}

fn lstm_shapes(push: &mut impl FnMut(String, Shape, ParamKind), prefix: &str, x: usize, h: usize, z: usize) {
    push(format!("{prefix}.lstm.w"), Shape::Matrix(4 * h, x + h + z), ParamKind::Weight);
    push(format!("{prefix}.lstm.b"), Shape::Vector(4 * h), ParamKind::Bias);
}

fn attention_shapes(push: &mut impl FnMut(String, Shape, ParamKind), prefix: &str, ctx: usize, h: usize, a: usize) {
    push(format!("{prefix}.att.wa"), Shape::Matrix(a, ctx), ParamKind::Weight);
    push(format!("{prefix}.att.wh"), Shape::Matrix(a, h), ParamKind::Weight);
    push(format!("{prefix}.att.b"), Shape::Vector(a), ParamKind::Bias);
    push(format!("{prefix}.att.v"), Shape::Vector(a), ParamKind::Weight);
}

fn init_shapes(push: &mut impl FnMut(String, Shape, ParamKind), prefix: &str, d: usize, h: usize) {
    push(format!("{prefix}.init.h"), Shape::Matrix(h, d), ParamKind::Weight);
    push(format!("{prefix}.init.c"), Shape::Matrix(h, d), ParamKind::Weight);
}

fn guide_shapes(push: &mut impl FnMut(String, Shape, ParamKind), prefix: &str, d: usize, f: usize, e: usize) {
    push(format!("{prefix}.w"), Shape::Matrix(f, d + f), ParamKind::Weight);
    push(format!("{prefix}.b"), Shape::Vector(f), ParamKind::Bias);
    push(format!("{prefix}.wv"), Shape::Matrix(e, f), ParamKind::Weight);
}
