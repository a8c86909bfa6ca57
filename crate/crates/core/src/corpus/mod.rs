//! Caption text handling, dataset records, the synthetic generator and the
//! attribute predictor.

mod attributes;
mod synth;
mod text;

pub use attributes::{
    assign_attributes, attribute_vector, train_attribute_predictor, AttributeMode, AttributePredictor,
    PredictorConfig,
};
pub use synth::{concept_word, synth_generate, SynthConfig, MAX_CONCEPTS_PER_RECORD};
pub use text::{
    frequent_words, preprocess_caption, FrequentWordSet, FrequentWords, Vocabulary, DEFAULT_MIN_COUNT, END,
    END_TOKEN, MAX_CAPTION_TOKENS, START, START_TOKEN, UNK, UNK_TOKEN,
};

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// A record as stored on disk: features and untokenized captions.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub image_id: String,
    pub a0: Vec<f64>,
    pub items: Vec<Vec<f64>>,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<R> {
    pub train: Vec<R>,
    pub val: Vec<R>,
    pub test: Vec<R>,
}

/// Global feature, annotation vectors and attribute vector of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet<T> {
    pub a0: Vec<T>,
    pub items: Vec<Vec<T>>,
    pub attrs: Vec<T>,
}

impl<T: Scalar> AnnotationSet<T> {
    pub fn new(a0: Vec<T>, items: Vec<Vec<T>>, attrs: Vec<T>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Data("annotation set needs at least one vector".into()))?;
        if items.iter().any(|v| v.len() != first.len()) {
            return Err(Error::Data("annotation vectors differ in length".into()));
        }
        Ok(Self { a0, items, attrs })
    }

    pub fn dim(&self) -> usize {
        self.items[0].len()
    }

    pub fn mean_item(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim()];
        for it in &self.items {
            for (a, b) in m.iter_mut().zip(it) {
                *a = *a + *b;
            }
        }
        let n = T::from_usize(self.items.len()).unwrap();
        m.iter_mut().for_each(|a| *a = *a / n);
        m
    }
}

/// Encoded record: every caption is framed by START/END.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord<T> {
    pub image_id: String,
    pub annotations: AnnotationSet<T>,
    pub captions: Vec<Vec<usize>>,
}

/// Tokenized captions of a raw split, in record order.
pub fn tokenized_captions(records: &[RawRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .flat_map(|r| r.captions.iter().map(|c| preprocess_caption(c)))
        .collect()
}

/// Encodes raw records against `vocab`. Captions that are empty after
/// preprocessing are dropped; the second value counts them. Attribute
/// vectors start empty (see [`assign_attributes`]).
pub fn encode_records<T: Scalar>(raw: &[RawRecord], vocab: &Vocabulary) -> Result<(Vec<CaptionRecord<T>>, usize)> {
    let mut dropped = 0;
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let annotations = AnnotationSet::new(conv(&r.a0), r.items.iter().map(|v| conv(v)).collect(), Vec::new())
            .map_err(|e| Error::Data(format!("record {}: {e}", r.image_id)))?;
        let mut captions = Vec::with_capacity(r.captions.len());
        for c in &r.captions {
            let toks = preprocess_caption(c);
            if toks.is_empty() {
                dropped += 1;
            } else {
                captions.push(vocab.encode(&toks));
            }
        }
        out.push(CaptionRecord {
            image_id: r.image_id.clone(),
            annotations,
            captions,
        });
    }
    Ok((out, dropped))
}
