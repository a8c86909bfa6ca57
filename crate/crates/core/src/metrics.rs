//! Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr and vocabulary
//! richness. Inputs are tokenized; any ordered token type works.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::corpus::{END_TOKEN, START_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

fn ngrams<W: Ord + Clone>(tokens: &[W], n: usize) -> BTreeMap<&[W], usize> {
    let mut out = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

fn check_pairs<W, R>(candidates: &[W], references: &[R]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Input("no candidates to score".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Input(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    Ok(())
}

/// Corpus BLEU-`n` with clipped counts, brevity penalty and no smoothing.
pub fn bleu<W: Ord + Clone>(candidates: &[Vec<W>], references: &[Vec<Vec<W>>], n: usize) -> Result<f64> {
    check_pairs(candidates, references)?;
    if !(1..=4).contains(&n) {
        return Err(Error::Input(format!("BLEU order must be 1..=4, got {n}")));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::Input(format!("image {i} has no references")));
    }
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        c += cand.len();
        // closest reference length; ties go to the shorter one
        r += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap();
        for m in 1..=n {
            let cg = ngrams(cand, m);
            let mut max_ref: BTreeMap<&[W], usize> = BTreeMap::new();
            for rf in refs {
                for (g, k) in ngrams(rf, m) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in &cg {
                matched[m - 1] += (*k).min(max_ref.get(g).copied().unwrap_or(0));
                total[m - 1] += k;
            }
        }
    }
    if c == 0 || matched.iter().zip(&total).any(|(&a, &t)| a == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_mean = matched
        .iter()
        .zip(&total)
        .map(|(&a, &t)| (a as f64 / t as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = (1.0 - r as f64 / c as f64).exp().min(1.0);
    Ok(bp * log_mean.exp())
}

pub fn lcs_len<W: PartialEq>(a: &[W], b: &[W]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure of one candidate, best over its references.
pub fn rouge_l_single<W: PartialEq>(cand: &[W], refs: &[Vec<W>]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    refs.iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            let l = lcs_len(cand, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / cand.len() as f64;
            let rc = l / r.len() as f64;
            (1.0 + b2) * p * rc / (rc + b2 * p)
        })
        .fold(0.0, f64::max)
}

pub fn rouge_l<W: PartialEq>(candidates: &[Vec<W>], references: &[Vec<Vec<W>>]) -> Result<f64> {
    check_pairs(candidates, references)?;
    let sum: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l_single(c, r))
        .sum();
    Ok(sum / candidates.len() as f64)
}

type TfIdf<'a, W> = BTreeMap<&'a [W], f64>;

fn tfidf<'a, W: Ord>(counts: BTreeMap<&'a [W], usize>, df: &BTreeMap<&[W], usize>, n_images: f64) -> (TfIdf<'a, W>, f64) {
    let mut vec = BTreeMap::new();
    let mut norm = 0.0;
    for (g, k) in counts {
        let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
        let w = k as f64 * (n_images / d).ln();
        norm += w * w;
        vec.insert(g, w);
    }
    (vec, norm.sqrt())
}

fn cosine<W: Ord>(a: &(TfIdf<'_, W>, f64), b: &(TfIdf<'_, W>, f64)) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().filter_map(|(g, x)| b.0.get(g).map(|y| x * y)).sum();
    dot / (a.1 * b.1)
}

/// Plain CIDEr: per-image scores and their mean. IDF comes from the
/// reference corpus; n-grams absent from it use a document frequency of 1.
pub fn cider_per_image<W: Ord + Clone>(candidates: &[Vec<W>], references: &[Vec<Vec<W>>]) -> Result<Vec<f64>> {
    check_pairs(candidates, references)?;
    if candidates.len() < 2 {
        return Err(Error::Input("CIDEr needs at least two images for document frequencies".into()));
    }
    let n_images = candidates.len() as f64;
    let mut scores = vec![0.0; candidates.len()];
    for n in 1..=CIDER_MAX_N {
        let mut df: BTreeMap<&[W], usize> = BTreeMap::new();
        for refs in references {
            let seen: BTreeSet<&[W]> = refs.iter().flat_map(|r| ngrams(r, n).into_keys()).collect();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            if refs.is_empty() {
                continue;
            }
            let cv = tfidf(ngrams(cand, n), &df, n_images);
            let sim: f64 = refs
                .iter()
                .map(|r| cosine(&cv, &tfidf(ngrams(r, n), &df, n_images)))
                .sum::<f64>()
                / refs.len() as f64;
            scores[i] += sim / CIDER_MAX_N as f64;
        }
    }
    Ok(scores.into_iter().map(|s| s * CIDER_SCALE).collect())
}

pub fn cider<W: Ord + Clone>(candidates: &[Vec<W>], references: &[Vec<Vec<W>>]) -> Result<f64> {
    let per = cider_per_image(candidates, references)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Distinct tokens across captions, ignoring the reserved markers.
pub fn distinct_words<S: AsRef<str>>(captions: &[Vec<S>]) -> usize {
    captions
        .iter()
        .flatten()
        .map(AsRef::as_ref)
        .filter(|w| ![START_TOKEN, END_TOKEN, UNK_TOKEN].contains(w))
        .collect::<BTreeSet<_>>()
        .len()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
    pub distinct_words: usize,
    pub per_image_cider: Vec<f64>,
}

impl EvalReport {
    pub fn compute(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<Self> {
        let mut b = [0.0; 4];
        for (n, slot) in b.iter_mut().enumerate() {
            *slot = bleu(candidates, references, n + 1)?;
        }
        let per_image_cider = cider_per_image(candidates, references)?;
        Ok(Self {
            bleu: b,
            rouge_l: rouge_l(candidates, references)?,
            cider: per_image_cider.iter().sum::<f64>() / per_image_cider.len() as f64,
            distinct_words: distinct_words(candidates),
            per_image_cider,
        })
    }

    /// Aligned table followed by a `key=value` block.
    pub fn to_text(&self, image_ids: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metric      value");
        for (i, b) in self.bleu.iter().enumerate() {
            let _ = writeln!(s, "BLEU-{}      {:.6}", i + 1, b);
        }
        let _ = writeln!(s, "ROUGE-L     {:.6}", self.rouge_l);
        let _ = writeln!(s, "CIDEr       {:.6}", self.cider);
        let _ = writeln!(s, "words       {}", self.distinct_words);
        let _ = writeln!(s);
        for (i, b) in self.bleu.iter().enumerate() {
            let _ = writeln!(s, "bleu{}={b:.17e}", i + 1);
        }
        let _ = writeln!(s, "rouge_l={:.17e}", self.rouge_l);
        let _ = writeln!(s, "cider={:.17e}", self.cider);
        let _ = writeln!(s, "distinct_words={}", self.distinct_words);
        for (id, c) in image_ids.iter().zip(&self.per_image_cider) {
            let _ = writeln!(s, "cider.{id}={c:.17e}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn bleu_examples() {
        let c = vec![toks("a man rides a red horse")];
        let r = vec![vec![toks("a man rides a red horse")]];
        for n in 1..=4 {
            assert!((bleu(&c, &r, n).unwrap() - 1.0).abs() < 1e-12);
        }
        // "the" is clipped to one match out of four; the candidate is longer, so BP = 1
        let c = vec![toks("the the the the")];
        let r = vec![vec![toks("the cat")]];
        assert!((bleu(&c, &r, 1).unwrap() - 0.25).abs() < 1e-12);
        // shorter candidate is penalized
        let c = vec![toks("the cat")];
        let r = vec![vec![toks("the cat sat on the mat")]];
        assert!((bleu(&c, &r, 1).unwrap() - (1.0f64 - 3.0).exp()).abs() < 1e-12);
        assert_eq!(bleu(&[toks("x y")], &[vec![toks("a b")]], 1).unwrap(), 0.0);
        assert!(bleu::<String>(&[], &[], 1).is_err());
        assert!(bleu(&c, &r, 5).is_err());
    }

    #[test]
    fn rouge_examples() {
        let r = rouge_l(&[toks("a b c")], &[vec![toks("a x c")]]).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l(&[toks("a b")], &[vec![toks("a b")]]).unwrap(), 1.0);
        assert_eq!(rouge_l(&[toks("a b")], &[vec![toks("c d")]]).unwrap(), 0.0);
        assert_eq!(rouge_l(&[vec![]], &[vec![toks("c d")]]).unwrap(), 0.0);
    }

    #[test]
    fn cider_examples() {
        let caps = vec![toks("a dog runs on the grass"), toks("two cats sleep on a warm bed")];
        let refs: Vec<Vec<Vec<String>>> = caps.iter().map(|c| vec![c.clone()]).collect();
        assert!((cider(&caps, &refs).unwrap() - 10.0).abs() < 1e-9);
        let none = vec![toks("zebra"), toks("giraffe")];
        assert_eq!(cider(&none, &refs).unwrap(), 0.0);
        assert!(cider(&caps[..1], &refs[..1]).is_err());
    }

    #[test]
    fn order_invariance() {
        let caps = vec![toks("a dog runs"), toks("a cat sleeps"), toks("a bird sings loudly")];
        let refs = vec![
            vec![toks("a dog runs fast"), toks("dog running")],
            vec![toks("a cat is sleeping")],
            vec![toks("a bird sings"), toks("bird singing loudly")],
        ];
        let a = EvalReport::compute(&caps, &refs).unwrap();
        let rc: Vec<_> = caps.iter().rev().cloned().collect();
        let rr: Vec<_> = refs.iter().rev().cloned().collect();
        let b = EvalReport::compute(&rc, &rr).unwrap();
        for (x, y) in a.bleu.iter().zip(&b.bleu) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.rouge_l - b.rouge_l).abs() < 1e-12);
        assert!((a.cider - b.cider).abs() < 1e-12);
    }

    #[test]
    fn distinct_word_counts() {
        assert_eq!(distinct_words(&[toks("a dog"), toks("a cat")]), 3);
        assert_eq!(distinct_words::<String>(&[]), 0);
        assert_eq!(distinct_words(&[toks("<start> a <unk> <end>")]), 1);
    }

    #[test]
    fn report_text_has_keys() {
        let caps = vec![toks("a dog"), toks("a cat")];
        let refs: Vec<_> = caps.iter().map(|c| vec![c.clone()]).collect();
        let r = EvalReport::compute(&caps, &refs).unwrap();
        let t = r.to_text(&["i1".into(), "i2".into()]);
        assert!(t.contains("distinct_words=3"));
        assert!(t.contains("cider.i2="));
    }
}
