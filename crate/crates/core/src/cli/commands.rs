use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{
    assign_attributes, encode_records, frequent_words, preprocess_caption, synth_generate, tokenized_captions,
    train_attribute_predictor, AttributeMode, AttributePredictor, CaptionRecord, DatasetSplit, FrequentWordSet,
    RawRecord, Vocabulary,
};
use crate::decode::{ensemble_decode, ensemble_greedy, BeamConfig};
use crate::error::{Error, Result};
use crate::guiding::GuideMasks;
use crate::metrics::EvalReport;
use crate::model::CaptionModel;
use crate::numerics::ParamStore;
use crate::trainer::{grad_check, train, GradCheckOptions, TrainConfig, Trainer};

use super::config::RunConfig;
use super::formats::{
    captions_to_text, dataset_to_text, parse_captions, read_dataset, read_text, write_text, Checkpoint,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTOR_FILE: &str = "predictor.txt";
pub const TEST_CAPTIONS_FILE: &str = "test_captions.txt";
pub const ABLATE_FILE: &str = "ablate.txt";

/// Encoded splits plus the vocabulary-derived pieces shared by every run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub raw: DatasetSplit<RawRecord>,
    pub vocab: Vocabulary,
    pub fws: FrequentWordSet,
    pub fws_truncated: bool,
    pub train: Vec<CaptionRecord<f64>>,
    pub val: Vec<CaptionRecord<f64>>,
    pub test: Vec<CaptionRecord<f64>>,
    pub dropped: usize,
    pub predictor: Option<(AttributePredictor<f64>, f64)>,
}

impl Prepared {
    pub fn annot_dim(&self) -> usize {
        self.train[0].annotations.dim()
    }

    pub fn model(&self, cfg: &RunConfig) -> Result<CaptionModel<f64>> {
        let mcfg = cfg.model.resolve(self.vocab.len(), self.annot_dim(), self.fws.len());
        CaptionModel::new(mcfg, cfg.seed)
    }

    pub fn train_config(&self, cfg: &RunConfig) -> TrainConfig {
        TrainConfig {
            seed: cfg.seed,
            ..cfg.train.clone()
        }
    }
}

fn load_splits(cfg: &RunConfig) -> Result<DatasetSplit<RawRecord>> {
    if let Some(s) = &cfg.synth {
        return synth_generate(s, cfg.seed);
    }
    let need = |p: &Option<PathBuf>, key: &str| {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("data.{key} is required without a [synth] section")))
            .and_then(read_dataset)
    };
    Ok(DatasetSplit {
        train: need(&cfg.data.train, "train")?,
        val: need(&cfg.data.val, "val")?,
        test: match &cfg.data.test {
            Some(p) => read_dataset(p)?,
            None => Vec::new(),
        },
    })
}

fn encode(raw: &[RawRecord], vocab: &Vocabulary, what: &str) -> Result<(Vec<CaptionRecord<f64>>, usize)> {
    encode_records(raw, vocab).map_err(|e| Error::Data(format!("{what} split: {e}")))
}

/// Loads or generates the data and builds vocabulary, frequent words and
/// attribute vectors.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let raw = load_splits(cfg)?;
    if raw.train.is_empty() || raw.val.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }
    let vocab = Vocabulary::build(&tokenized_captions(&raw.train), cfg.data.min_count)
        .map_err(|e| Error::Data(format!("training captions: {e}")))?;
    let fw = frequent_words(&vocab, cfg.data.frequent_words)?;
    let (mut train, d1) = encode(&raw.train, &vocab, "train")?;
    let (mut val, d2) = encode(&raw.val, &vocab, "val")?;
    let (mut test, d3) = encode(&raw.test, &vocab, "test")?;
    let dim = train[0].annotations.dim();
    for r in train.iter().chain(&val).chain(&test) {
        if r.annotations.dim() != dim {
            return Err(Error::Data(format!(
                "record {} has annotation dimension {}, expected {dim}",
                r.image_id,
                r.annotations.dim()
            )));
        }
    }
    let predictor = match cfg.data.attributes {
        AttributeMode::Predicted => {
            let pcfg = crate::corpus::PredictorConfig {
                seed: cfg.seed,
                ..cfg.predictor.clone()
            };
            Some(train_attribute_predictor(&train, &fw.set, &pcfg)?)
        }
        _ => None,
    };
    let p = predictor.as_ref().map(|(p, _)| p);
    for split in [&mut train, &mut val, &mut test] {
        assign_attributes(split, &fw.set, cfg.data.attributes, p)?;
    }
    Ok(Prepared {
        raw,
        vocab,
        fws: fw.set,
        fws_truncated: fw.truncated,
        train,
        val,
        test,
        dropped: d1 + d2 + d3,
        predictor,
    })
}

/// Trains one model and writes its checkpoint, report, beam-search captions
/// for the test split and, for generated data, the three splits into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let data = prepare(cfg)?;
    let model = data.model(cfg)?;
    let tcfg = data.train_config(cfg);
    let (model, report) = train(model, &data.train, &data.val, Some(&data.fws), &tcfg)?;
    let dir = &cfg.output.dir;
    let ck = Checkpoint {
        model,
        vocab: data.vocab.clone(),
        fws: data.fws.clone(),
        attributes: cfg.data.attributes,
    };
    write_text(&dir.join(CHECKPOINT_FILE), &ck.to_text())?;
    let mut text = report.to_text();
    let _ = writeln!(text, "seed={}", cfg.seed);
    let _ = writeln!(text, "vocab={}", data.vocab.len());
    let _ = writeln!(text, "frequent_words={}", data.fws.len());
    let _ = writeln!(text, "frequent_words_truncated={}", data.fws_truncated);
    let _ = writeln!(text, "dropped_captions={}", data.dropped);
    let _ = writeln!(text, "attributes={}", cfg.data.attributes.as_str());
    let _ = writeln!(text, "checkpoint_digest={:016x}", ck.model.params.checksum());
    if let Some((p, bce)) = &data.predictor {
        write_text(&dir.join(PREDICTOR_FILE), &p.params.to_text())?;
        let _ = writeln!(text, "predictor_bce={bce:.17e}");
    }
    if !data.test.is_empty() {
        let rows = data
            .test
            .par_iter()
            .map(|r| {
                let hyps = ensemble_decode(&[&ck.model], &r.annotations, &cfg.beam)?;
                let words = hyps.first().map(|h| h.words().to_vec()).unwrap_or_default();
                Ok((r.image_id.clone(), data.vocab.detokenize(&words)))
            })
            .collect::<Result<Vec<_>>>()?;
        write_text(&dir.join(TEST_CAPTIONS_FILE), &captions_to_text(&rows))?;
    }
    write_text(&dir.join(REPORT_FILE), &text)?;
    if cfg.synth.is_some() {
        for (name, split) in [("train", &data.raw.train), ("val", &data.raw.val), ("test", &data.raw.test)] {
            write_text(&dir.join(format!("{name}.tsv")), &dataset_to_text(split))?;
        }
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionArgs {
    pub dataset: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    /// `None` decodes greedily.
    pub beam: Option<usize>,
    pub max_len: usize,
    pub predictor: Option<PathBuf>,
}

/// Decodes one caption per record of the dataset; returns the caption file
/// contents.
pub fn cmd_caption(args: &CaptionArgs) -> Result<String> {
    if args.checkpoints.is_empty() {
        return Err(Error::Config("at least one checkpoint is required".into()));
    }
    let cks = args
        .checkpoints
        .iter()
        .map(|p| Checkpoint::read(p))
        .collect::<Result<Vec<_>>>()?;
    let first = &cks[0];
    for (ck, path) in cks.iter().zip(&args.checkpoints).skip(1) {
        if ck.vocab.tokens() != first.vocab.tokens() || ck.fws != first.fws || ck.attributes != first.attributes {
            return Err(Error::Data(format!(
                "{} uses a different vocabulary, frequent-word set or attribute mode than {}",
                path.display(),
                args.checkpoints[0].display()
            )));
        }
    }
    let raw = read_dataset(&args.dataset)?;
    if raw.is_empty() {
        return Err(Error::Data(format!("{} has no records", args.dataset.display())));
    }
    let (mut recs, _) = encode(&raw, &first.vocab, "caption")?;
    for (ck, path) in cks.iter().zip(&args.checkpoints) {
        let want = ck.model.config.annot_dim;
        if let Some(r) = recs.iter().find(|r| r.annotations.dim() != want) {
            return Err(Error::dim(
                "caption",
                format!(
                    "record {} has annotation dimension {}, {} expects {want}",
                    r.image_id,
                    r.annotations.dim(),
                    path.display()
                ),
            ));
        }
    }
    let predictor = match (first.attributes, &args.predictor) {
        (AttributeMode::Predicted, Some(p)) => {
            Some(AttributePredictor::from_params(ParamStore::from_text(&read_text(p)?, p)?)?)
        }
        (AttributeMode::Predicted, None) => {
            return Err(Error::Config("checkpoint uses predicted attributes; pass --predictor".into()))
        }
        _ => None,
    };
    assign_attributes(&mut recs, &first.fws, first.attributes, predictor.as_ref())?;
    let models: Vec<&CaptionModel<f64>> = cks.iter().map(|c| &c.model).collect();
    let beam = args.beam.map(|k| BeamConfig {
        k,
        max_len: args.max_len,
        length_norm: false,
    });
    if let Some(b) = &beam {
        b.validate()?;
    } else if args.max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let rows = recs
        .par_iter()
        .map(|r| {
            let words = match &beam {
                Some(b) => ensemble_decode(&models, &r.annotations, b)?
                    .first()
                    .map(|h| h.words().to_vec())
                    .unwrap_or_default(),
                None => ensemble_greedy(&models, &r.annotations, args.max_len)?,
            };
            Ok((r.image_id.clone(), first.vocab.detokenize(&words)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(captions_to_text(&rows))
}

/// Scores a caption file against a reference dataset.
pub fn cmd_evaluate(captions: &Path, references: &Path) -> Result<String> {
    let rows = parse_captions(&read_text(captions)?, captions)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} contains no captions", captions.display())));
    }
    let refs = read_dataset(references)?;
    let by_id: HashMap<&str, &RawRecord> = refs.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut unmatched = Vec::new();
    let mut cands = Vec::with_capacity(rows.len());
    let mut refsets = Vec::with_capacity(rows.len());
    let mut ids = Vec::with_capacity(rows.len());
    for (id, cap) in &rows {
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("{}: duplicate image id {id}", captions.display())));
        }
        let Some(r) = by_id.get(id.as_str()) else {
            unmatched.push(id.clone());
            continue;
        };
        let rs: Vec<Vec<String>> = r
            .captions
            .iter()
            .map(|c| preprocess_caption(c))
            .filter(|c| !c.is_empty())
            .collect();
        if rs.is_empty() {
            return Err(Error::Data(format!("reference record {id} has no usable captions")));
        }
        cands.push(cap.split_whitespace().map(str::to_string).collect());
        refsets.push(rs);
        ids.push(id.clone());
    }
    if !unmatched.is_empty() {
        return Err(Error::Data(format!(
            "image ids missing from {}: {}",
            references.display(),
            unmatched.join(", ")
        )));
    }
    let report = EvalReport::compute(&cands, &refsets)?;
    Ok(report.to_text(&ids))
}

/// Runs the gradient check; the flag is whether every tensor passed.
pub fn cmd_gradcheck(cfg: &RunConfig, tolerance: Option<f64>) -> Result<(bool, String)> {
    let tol = tolerance.unwrap_or(cfg.gradcheck.tolerance);
    if !(tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let opts = GradCheckOptions {
        tolerance: tol,
        seed: cfg.seed,
        annotations: cfg.gradcheck.annotations,
        caption_len: cfg.gradcheck.caption_len,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&cfg.gradcheck.model(), &opts)?;
    Ok((report.passed(), report.to_text()))
}

/// Input-zeroing arms of the ablation, in table order.
pub const ARMS: [(&str, GuideMasks); 4] = [
    (
        "keep-both",
        GuideMasks {
            annotations: false,
            attributes: false,
        },
    ),
    (
        "keep-e",
        GuideMasks {
            annotations: true,
            attributes: false,
        },
    ),
    (
        "keep-A",
        GuideMasks {
            annotations: false,
            attributes: true,
        },
    ),
    (
        "keep-none",
        GuideMasks {
            annotations: true,
            attributes: true,
        },
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub arm: String,
    pub lambda: f64,
    pub seed: u64,
    pub val_nll: f64,
    pub val_cider: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    /// `(arm, λ, mean nll, mean CIDEr)` per row, in run order.
    pub fn rows(&self) -> Vec<(String, f64, f64, f64)> {
        let mut out: Vec<(String, f64, Vec<&AblationRun>)> = Vec::new();
        for r in &self.runs {
            match out.iter_mut().find(|(a, l, _)| *a == r.arm && *l == r.lambda) {
                Some(row) => row.2.push(r),
                None => out.push((r.arm.clone(), r.lambda, vec![r])),
            }
        }
        out.into_iter()
            .map(|(arm, l, rs)| {
                let n = rs.len() as f64;
                let nll = rs.iter().map(|r| r.val_nll).sum::<f64>() / n;
                let cid = rs.iter().map(|r| r.val_cider).sum::<f64>() / n;
                (arm, l, nll, cid)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>10} {:>14} {:>14}", "arm", "lambda", "val_nll", "val_cider");
        for (arm, l, nll, cid) in self.rows() {
            let _ = writeln!(s, "{arm:<12} {l:>10} {nll:>14.6} {cid:>14.6}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>10} {:>6} {:>14} {:>14}", "arm", "lambda", "seed", "val_nll", "val_cider");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{:<12} {:>10} {:>6} {:>14.6} {:>14.6}",
                r.arm, r.lambda, r.seed, r.val_nll, r.val_cider
            );
        }
        s
    }
}

/// Trains every arm (and each extra λ on the keep-both arm) for a fixed
/// number of epochs over `ablate.seeds` seeds.
pub fn ablate(cfg: &RunConfig) -> Result<AblationTable> {
    if cfg.ablate.seeds == 0 {
        return Err(Error::Config("ablate.seeds must be at least 1".into()));
    }
    let data = prepare(cfg)?;
    let lambda = cfg.train.lambda1;
    let mut jobs: Vec<(&str, GuideMasks, f64)> = ARMS.iter().map(|(n, m)| (*n, *m, lambda)).collect();
    jobs.extend(cfg.ablate.lambdas.iter().map(|&l| ("sweep", ARMS[0].1, l)));
    let runs: Vec<(usize, u64)> = (0..jobs.len())
        .flat_map(|j| (0..cfg.ablate.seeds as u64).map(move |s| (j, cfg.seed + s)))
        .collect();
    let runs = runs
        .par_iter()
        .map(|&(j, seed)| {
            let (arm, masks, l) = jobs[j];
            let mut mcfg = cfg.model.resolve(data.vocab.len(), data.annot_dim(), data.fws.len());
            mcfg.guided = true;
            mcfg.masks = masks;
            let model = CaptionModel::new(mcfg, seed)?;
            let tcfg = TrainConfig {
                seed,
                lambda1: l,
                lambda2: l,
                ..cfg.train.clone()
            };
            let mut t = Trainer::new(model, Some(&data.fws), tcfg)?;
            for epoch in 1..=cfg.ablate.epochs {
                t.run_epoch(&data.train, epoch)?;
            }
            Ok(AblationRun {
                arm: arm.to_string(),
                lambda: l,
                seed,
                val_nll: t.evaluate(&data.val)?.nll,
                val_cider: t.validation_cider(&data.val)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { runs })
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<String> {
    let text = ablate(cfg)?.to_text();
    write_text(&cfg.output.dir.join(ABLATE_FILE), &text)?;
    Ok(text)
}
