//! Synthetic image records standing in for CNN-encoded photos.
//!
//! Each record draws a handful of latent concepts. Its annotation vectors
//! are the concept embeddings plus Gaussian noise, padded with noise-only
//! vectors, and its captions are template sentences naming every drawn
//! concept.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, RawRecord};
use crate::error::{Error, Result};

const CONCEPT_WORDS: &[&str] = &[
    "dog", "cat", "horse", "bird", "car", "bus", "train", "boat", "plane", "bicycle", "table", "chair",
    "couch", "bed", "clock", "vase", "pizza", "cake", "apple", "banana", "sandwich", "laptop", "phone",
    "book", "umbrella", "kite", "surfboard", "skateboard", "giraffe", "zebra", "elephant", "sheep", "cow",
    "bear", "bench", "hydrant", "statue", "luggage", "bottle", "cup", "bowl", "oven", "sink", "toilet",
    "teddy", "frisbee", "truck", "person",
];

const TEMPLATES: &[(&str, &str)] = &[
    ("", ""),
    ("a photo of ", ""),
    ("there is ", " in the picture"),
    ("", " next to each other"),
];

/// Most concepts a single record may contain.
pub const MAX_CONCEPTS_PER_RECORD: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of latent concepts (M).
    pub concepts: usize,
    /// Annotation vector dimension (d).
    pub dim: usize,
    /// Annotation vectors per record (k).
    pub annotations: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub captions_per_record: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            concepts: 10,
            dim: 16,
            annotations: 6,
            train: 200,
            val: 50,
            test: 50,
            noise: 0.3,
            captions_per_record: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let zero = [
            ("concepts", self.concepts),
            ("dim", self.dim),
            ("annotations", self.annotations),
            ("captions_per_record", self.captions_per_record),
        ];
        if let Some((name, _)) = zero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth.{name} must be positive")));
        }
        if self.train + self.val + self.test == 0 {
            return Err(Error::Config("synth record counts are all zero".into()));
        }
        if self.concepts > CONCEPT_WORDS.len() {
            return Err(Error::Config(format!(
                "synth.concepts is limited to {} named concepts",
                CONCEPT_WORDS.len()
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("synth.noise must be finite and non-negative".into()));
        }
        Ok(())
    }
}

pub fn concept_word(i: usize) -> &'static str {
    CONCEPT_WORDS[i]
}

/// Deterministic in `(cfg, seed)`.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<DatasetSplit<RawRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings: Vec<Vec<f64>> = (0..cfg.concepts)
        .map(|_| (0..cfg.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let max_drawn = MAX_CONCEPTS_PER_RECORD.min(cfg.annotations).min(cfg.concepts);

    let mut counter = 0usize;
    let mut make = |n: usize, rng: &mut ChaCha8Rng| -> Vec<RawRecord> {
        (0..n)
            .map(|_| {
                counter += 1;
                synth_record(cfg, &embeddings, max_drawn, format!("img{counter:05}"), rng)
            })
            .collect()
    };
    let train = make(cfg.train, &mut rng);
    let val = make(cfg.val, &mut rng);
    let test = make(cfg.test, &mut rng);
    Ok(DatasetSplit { train, val, test })
}

fn synth_record(
    cfg: &SynthConfig,
    embeddings: &[Vec<f64>],
    max_drawn: usize,
    image_id: String,
    rng: &mut ChaCha8Rng,
) -> RawRecord {
    let n_drawn = rng.random_range(1..=max_drawn);
    let mut all: Vec<usize> = (0..cfg.concepts).collect();
    all.shuffle(rng);
    let mut drawn = all[..n_drawn].to_vec();
    drawn.sort_unstable();

    let noise = |rng: &mut ChaCha8Rng| cfg.noise * rng.sample::<f64, _>(StandardNormal);
    let mut items: Vec<Vec<f64>> = drawn
        .iter()
        .map(|&c| embeddings[c].iter().map(|&x| x + noise(rng)).collect())
        .collect();
    while items.len() < cfg.annotations {
        items.push((0..cfg.dim).map(|_| noise(rng)).collect());
    }
    items.shuffle(rng);

    let mut a0 = vec![0.0; cfg.dim];
    for it in &items {
        for (m, x) in a0.iter_mut().zip(it) {
            *m += x;
        }
    }
    a0.iter_mut().for_each(|m| *m /= items.len() as f64);

    let captions = (0..cfg.captions_per_record)
        .map(|_| {
            // the last template needs at least two concepts
            let n_templates = if drawn.len() > 1 { TEMPLATES.len() } else { TEMPLATES.len() - 1 };
            let (pre, post) = TEMPLATES[rng.random_range(0..n_templates)];
            caption_text(pre, &drawn, post)
        })
        .collect();

    RawRecord {
        image_id,
        a0,
        items,
        captions,
    }
}

fn caption_text(pre: &str, concepts: &[usize], post: &str) -> String {
    let phrases: Vec<String> = concepts.iter().map(|&c| format!("a {}", concept_word(c))).collect();
    let list = match phrases.len() {
        1 => phrases[0].clone(),
        n => format!("{} and {}", phrases[..n - 1].join(", "), phrases[n - 1]),
    };
    let mut s = format!("{pre}{list}{post}.");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}
