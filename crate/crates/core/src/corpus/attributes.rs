//! Attribute vectors: oracle word-occurrence indicators, all-zero vectors
//! for ablations, or probabilities from a logistic predictor on the mean
//! annotation vector.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, FrequentWordSet};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamKind, ParamStore, Scalar, Shape};
use crate::trainer::AdaGrad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeMode {
    Oracle,
    Predicted,
    Zero,
}

impl AttributeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributeMode::Oracle => "oracle",
            AttributeMode::Predicted => "predicted",
            AttributeMode::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Set from the run seed, not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr: 0.1,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// One affine layer from the mean annotation vector to per-word logits.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributePredictor<T> {
    pub params: ParamStore<T>,
    w: ParamId,
    b: ParamId,
}

impl<T: Scalar> AttributePredictor<T> {
    pub const WEIGHT: &'static str = "attr.w";
    pub const BIAS: &'static str = "attr.b";

    /// Zero-initialized predictor.
    pub fn new(dim: usize, words: usize) -> Result<Self> {
        let mut params = ParamStore::new();
        params.insert_zeros(Self::WEIGHT, Shape::Matrix(words, dim), ParamKind::Weight)?;
        params.insert_zeros(Self::BIAS, Shape::Vector(words), ParamKind::Bias)?;
        Self::from_params(params)
    }

    pub fn from_params(params: ParamStore<T>) -> Result<Self> {
        let w = params.id(Self::WEIGHT)?;
        let b = params.id(Self::BIAS)?;
        let (rows, _) = params.get(w).shape.dims();
        if params.get(b).value.len() != rows {
            return Err(Error::dim("AttributePredictor", "bias length differs from weight rows"));
        }
        Ok(Self { params, w, b })
    }

    pub fn words(&self) -> usize {
        self.params.get(self.w).shape.dims().0
    }

    pub fn dim(&self) -> usize {
        self.params.get(self.w).shape.dims().1
    }

    fn logits(&self, feature: &[T]) -> Vec<T> {
        let w = self.params.get(self.w);
        let b = &self.params.get(self.b).value;
        w.value
            .chunks_exact(self.dim())
            .zip(b)
            .map(|(row, bi)| row.iter().zip(feature).fold(*bi, |acc, (a, x)| acc + *a * *x))
            .collect()
    }

    /// Word-occurrence probabilities, kept strictly inside (0, 1).
    pub fn predict(&self, items: &[Vec<T>]) -> Result<Vec<T>> {
        let feature = mean_of(items)?;
        if feature.len() != self.dim() {
            return Err(Error::dim(
                "AttributePredictor::predict",
                format!("annotation dim {} but predictor expects {}", feature.len(), self.dim()),
            ));
        }
        let lo = T::epsilon();
        let hi = T::one() - T::epsilon();
        Ok(self.logits(&feature).into_iter().map(|z| sigmoid(z).max(lo).min(hi)).collect())
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn mean_of<T: Scalar>(items: &[Vec<T>]) -> Result<Vec<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::dim("mean", "empty annotation set"))?;
    let mut m = vec![T::zero(); first.len()];
    for it in items {
        for (a, b) in m.iter_mut().zip(it) {
            *a = *a + *b;
        }
    }
    let n = T::from_usize(items.len()).unwrap();
    Ok(m.into_iter().map(|a| a / n).collect())
}

/// Indicator of which frequent words occur in any of the record's captions.
fn oracle_indicator<T: Scalar>(record: &CaptionRecord<T>, fws: &FrequentWordSet) -> Vec<T> {
    let mut out = vec![T::zero(); fws.len()];
    for cap in &record.captions {
        for (o, hit) in out.iter_mut().zip(fws.membership(cap)) {
            if hit {
                *o = T::one();
            }
        }
    }
    out
}

pub fn attribute_vector<T: Scalar>(
    record: &CaptionRecord<T>,
    fws: &FrequentWordSet,
    mode: AttributeMode,
    predictor: Option<&AttributePredictor<T>>,
) -> Result<Vec<T>> {
    match mode {
        AttributeMode::Oracle => Ok(oracle_indicator(record, fws)),
        AttributeMode::Zero => Ok(vec![T::zero(); fws.len()]),
        AttributeMode::Predicted => {
            let p = predictor
                .ok_or_else(|| Error::State("predicted attributes requested but no predictor is trained".into()))?;
            if p.words() != fws.len() {
                return Err(Error::dim(
                    "attribute_vector",
                    format!("predictor covers {} words, frequent set has {}", p.words(), fws.len()),
                ));
            }
            p.predict(&record.annotations.items)
        }
    }
}

/// Fills `annotations.attrs` of every record.
pub fn assign_attributes<T: Scalar>(
    records: &mut [CaptionRecord<T>],
    fws: &FrequentWordSet,
    mode: AttributeMode,
    predictor: Option<&AttributePredictor<T>>,
) -> Result<()> {
    for r in records.iter_mut() {
        r.annotations.attrs = attribute_vector(r, fws, mode, predictor)?;
    }
    Ok(())
}

/// Fits the predictor with per-word binary cross-entropy against oracle
/// indicators. Returns the predictor and the mean per-entry BCE over the
/// training split after the final epoch.
pub fn train_attribute_predictor<T: Scalar>(
    train: &[CaptionRecord<T>],
    fws: &FrequentWordSet,
    cfg: &PredictorConfig,
) -> Result<(AttributePredictor<T>, T)> {
    let first = train
        .first()
        .ok_or_else(|| Error::Input("attribute predictor needs a non-empty training split".into()))?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("predictor batch_size must be positive".into()));
    }
    let dim = first.annotations.dim();
    let mut pred = AttributePredictor::new(dim, fws.len())?;
    let opt = AdaGrad {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdaGrad::default()
    };
    let examples: Vec<(Vec<T>, Vec<T>)> = train
        .iter()
        .map(|r| Ok((mean_of(&r.annotations.items)?, oracle_indicator(r, fws))))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let scale = T::one() / T::from_usize(batch.len()).unwrap();
            for &i in batch {
                let (x, y) = &examples[i];
                let logits = pred.logits(x);
                let (w_id, b_id) = (pred.w, pred.b);
                let deltas: Vec<T> = logits.iter().zip(y).map(|(z, t)| (sigmoid(*z) - *t) * scale).collect();
                {
                    let w = pred.params.get_mut(w_id);
                    for (row, d) in w.grad.chunks_exact_mut(dim).zip(&deltas) {
                        for (g, xj) in row.iter_mut().zip(x) {
                            *g = *g + *d * *xj;
                        }
                    }
                }
                let b = pred.params.get_mut(b_id);
                for (g, d) in b.grad.iter_mut().zip(&deltas) {
                    *g = *g + *d;
                }
            }
            opt.step(&mut pred.params)
                .map_err(|e| Error::Numerical(format!("attribute predictor epoch {epoch}: {e}")))?;
        }
    }
    let loss = mean_bce(&pred, &examples);
    if !loss.is_finite() {
        return Err(Error::Numerical("attribute predictor loss is not finite".into()));
    }
    Ok((pred, loss))
}

fn mean_bce<T: Scalar>(pred: &AttributePredictor<T>, examples: &[(Vec<T>, Vec<T>)]) -> T {
    let mut total = T::zero();
    let mut n = 0usize;
    for (x, y) in examples {
        for (z, t) in pred.logits(x).into_iter().zip(y) {
            // log(1 + e^z) − t·z, evaluated stably
            let softplus = z.max(T::zero()) + (T::one() + (-z.abs()).exp()).ln();
            total = total + softplus - *t * z;
            n += 1;
        }
    }
    total / T::from_usize(n.max(1)).unwrap()
}
