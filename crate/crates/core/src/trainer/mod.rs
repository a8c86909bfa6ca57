//! Initialization, AdaGrad, the epoch loop with early stopping on validation
//! CIDEr, and the gradient-check harness.

mod gradcheck;
mod optim;

pub use gradcheck::{compare_gradients, grad_check, grad_check_model, GradCheckOptions, GradCheckReport, TensorCheck, MAX_GRADCHECK_SCALARS};
pub use optim::{adagrad_step, init_params, reinit_uniform, AdaGrad, ADAGRAD_EPS, INIT_RANGE};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, FrequentWordSet, END, START};
use crate::decode::greedy_decode;
use crate::error::{Error, Result};
use crate::metrics::cider;
use crate::model::{CaptionModel, Variant};
use crate::numerics::Scalar;
use crate::objective::{LossBreakdown, LossWeights, DEFAULT_LAMBDA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Set from the run seed, not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
    /// Caption length cap for validation decoding.
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 1e-4,
            lambda1: DEFAULT_LAMBDA,
            lambda2: DEFAULT_LAMBDA,
            max_epochs: 50,
            patience: 10,
            batch_size: 16,
            seed: 0,
            max_len: crate::decode::DEFAULT_MAX_LEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("train.lambda1 and train.lambda2 must be non-negative".into()));
        }
        for (name, v) in [
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn optimizer(&self) -> AdaGrad {
        AdaGrad {
            lr: self.lr,
            weight_decay: self.weight_decay,
            eps: ADAGRAD_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max-epochs",
        }
    }
}

/// Tracks the best score and how long it has gone without improving.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since: 0,
        }
    }

    /// Records `score` for `epoch`; true when it is a new strict maximum.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, b)) if score <= b => {
                self.since += 1;
                false
            }
            _ => {
                self.best = Some((epoch, score));
                self.since = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown<f64>,
    pub val: LossBreakdown<f64>,
    pub val_cider: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub variant: Variant,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub updates: usize,
}

impl TrainReport {
    pub fn val_cider(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_cider).collect()
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// Whitespace-aligned table, one row per epoch, then `key=value` lines.
    pub fn to_text(&self) -> String {
        let review = self.variant == Variant::ReviewNet;
        let mut s = String::new();
        let cols: &[&str] = if review {
            &["nll", "dis1", "dis2", "total"]
        } else {
            &["nll", "dis1", "total"]
        };
        let _ = write!(s, "{:>5}", "epoch");
        for split in ["train", "val"] {
            for c in cols {
                let _ = write!(s, " {:>12}", format!("{split}_{c}"));
            }
        }
        let _ = writeln!(s, " {:>12}", "val_cider");
        let row = |s: &mut String, l: &LossBreakdown<f64>| {
            let _ = write!(s, " {:>12.6} {:>12.6}", l.nll, l.dis1);
            if review {
                let _ = write!(s, " {:>12.6}", l.dis2);
            }
            let _ = write!(s, " {:>12.6}", l.total);
        };
        for e in &self.epochs {
            let _ = write!(s, "{:>5}", e.epoch);
            row(&mut s, &e.train);
            row(&mut s, &e.val);
            let _ = writeln!(s, " {:>12.6}", e.val_cider);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "variant={}", self.variant.as_str());
        let _ = writeln!(s, "epochs={}", self.epochs.len());
        let _ = writeln!(s, "updates={}", self.updates);
        let _ = writeln!(s, "best_epoch={}", self.best_epoch);
        let _ = writeln!(s, "best_val_cider={:.17e}", self.best().val_cider);
        let _ = writeln!(s, "stop_reason={}", self.stop_reason.as_str());
        s
    }
}

fn to_f64<T: Scalar>(l: &LossBreakdown<T>) -> LossBreakdown<f64> {
    LossBreakdown {
        nll: l.nll.as_f64(),
        dis1: l.dis1.as_f64(),
        dis2: l.dis2.as_f64(),
        total: l.total.as_f64(),
        lambda1: l.lambda1.as_f64(),
        lambda2: l.lambda2.as_f64(),
        token_nll: l.token_nll.iter().map(|v| v.as_f64()).collect(),
    }
}

/// `(record, caption)` index pairs in corpus order.
fn caption_pairs<T>(records: &[CaptionRecord<T>]) -> Vec<(usize, usize)> {
    records
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| (0..rec.captions.len()).map(move |c| (r, c)))
        .collect()
}

/// Owns a model and its optimizer state for one training run.
#[derive(Debug, Clone)]
pub struct Trainer<'f, T> {
    pub model: CaptionModel<T>,
    cfg: TrainConfig,
    fws: Option<&'f FrequentWordSet>,
    rng: ChaCha8Rng,
    updates: usize,
}

impl<'f, T: Scalar> Trainer<'f, T> {
    /// `fws` supplies the discriminative targets; guided models need it.
    pub fn new(model: CaptionModel<T>, fws: Option<&'f FrequentWordSet>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if model.config.guided {
            let f = fws.ok_or_else(|| Error::State("guided training needs a frequent-word set".into()))?;
            if f.len() != model.config.attrs {
                return Err(Error::dim(
                    "train",
                    format!("{} frequent words for a guiding vector of size {}", f.len(), model.config.attrs),
                ));
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            model,
            cfg,
            fws,
            rng,
            updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    fn positive(&self, caption: &[usize]) -> Option<Vec<bool>> {
        self.fws.filter(|_| self.model.config.guided).map(|f| f.membership(caption))
    }

    fn pair_loss(&self, rec: &CaptionRecord<T>, c: usize) -> Result<LossBreakdown<T>> {
        let cap = &rec.captions[c];
        let pos = self.positive(cap);
        self.model.loss(&rec.annotations, cap, pos.as_deref(), self.cfg.weights())
    }

    /// One shuffled pass with an AdaGrad update per batch; returns the mean
    /// training loss over all pairs.
    pub fn run_epoch(&mut self, train: &[CaptionRecord<T>], epoch: usize) -> Result<LossBreakdown<T>> {
        let mut pairs = caption_pairs(train);
        if pairs.is_empty() {
            return Err(Error::Data("training split has no captions".into()));
        }
        pairs.shuffle(&mut self.rng);
        let opt = self.cfg.optimizer();
        let weights = self.cfg.weights();
        let mut seen = Vec::with_capacity(pairs.len());
        for (b, batch) in pairs.chunks(self.cfg.batch_size).enumerate() {
            let results: Vec<_> = {
                let this = &*self;
                batch
                    .par_iter()
                    .map(|&(r, c)| {
                        let rec = &train[r];
                        let pos = this.positive(&rec.captions[c]);
                        this.model.loss_and_grad(&rec.annotations, &rec.captions[c], pos.as_deref(), weights)
                    })
                    .collect()
            };
            let scale = T::one() / T::from_usize(batch.len()).unwrap();
            self.model.params.zero_grads();
            for res in results {
                let (loss, grads) = res?;
                if !loss.total.is_finite() {
                    return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}, batch {}", b + 1)));
                }
                self.model.params.accumulate(&grads, scale);
                seen.push(loss);
            }
            opt.step(&mut self.model.params)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
            self.updates += 1;
        }
        Ok(LossBreakdown::mean(&seen).expect("non-empty epoch"))
    }

    /// Mean loss over every caption of `records`, without updating.
    pub fn evaluate(&self, records: &[CaptionRecord<T>]) -> Result<LossBreakdown<T>> {
        let pairs = caption_pairs(records);
        let losses: Vec<LossBreakdown<T>> = pairs
            .par_iter()
            .map(|&(r, c)| self.pair_loss(&records[r], c))
            .collect::<Result<_>>()?;
        LossBreakdown::mean(&losses).ok_or_else(|| Error::Data("no captions to evaluate".into()))
    }

    /// Greedy captions for each record.
    pub fn decode_all(&self, records: &[CaptionRecord<T>]) -> Result<Vec<Vec<usize>>> {
        records
            .par_iter()
            .map(|r| greedy_decode(&self.model, &r.annotations, self.cfg.max_len))
            .collect()
    }

    pub fn validation_cider(&self, records: &[CaptionRecord<T>]) -> Result<f64> {
        let cands = self.decode_all(records)?;
        let refs: Vec<Vec<Vec<usize>>> = records.iter().map(|r| r.captions.iter().map(|c| strip(c)).collect()).collect();
        cider(&cands, &refs)
    }
}

/// Caption ids without the START/END framing.
pub fn strip(caption: &[usize]) -> Vec<usize> {
    caption.iter().copied().filter(|&t| t != START && t != END).collect()
}

/// Trains until validation CIDEr stalls for `patience` epochs or
/// `max_epochs` is reached, then restores the best epoch's parameters.
pub fn train<T: Scalar>(
    model: CaptionModel<T>,
    train: &[CaptionRecord<T>],
    val: &[CaptionRecord<T>],
    fws: Option<&FrequentWordSet>,
    cfg: &TrainConfig,
) -> Result<(CaptionModel<T>, TrainReport)> {
    let variant = model.config.variant;
    let mut trainer = Trainer::new(model, fws, cfg.clone())?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = trainer.model.params.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let tl = trainer.run_epoch(train, epoch)?;
        let vl = trainer.evaluate(val)?;
        let score = trainer.validation_cider(val)?;
        if !score.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation CIDEr at epoch {epoch}")));
        }
        if stopper.observe(epoch, score) {
            best = trainer.model.params.clone();
        }
        epochs.push(EpochRecord {
            epoch,
            train: to_f64(&tl),
            val: to_f64(&vl),
            val_cider: score,
        });
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    let updates = trainer.updates();
    let mut model = trainer.model;
    model.params = best;
    let report = TrainReport {
        variant,
        epochs,
        best_epoch: stopper.best().map(|b| b.0).expect("at least one epoch"),
        stop_reason,
        updates,
    };
    Ok((model, report))
}
