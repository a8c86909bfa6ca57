//! Line-oriented file formats.
//!
//! Dataset (`.tsv`), one record per line, `#` comments and blank lines
//! ignored:
//!
//! ```text
//! <image_id> TAB <groups> [TAB <caption>]...
//! <groups>   := "[" <num> ("," <num>)* "]" { [spaces] "[" ... "]" }
//! ```
//!
//! The first group is the global feature `a0`, the rest are the annotation
//! vectors. Captions are raw text and are preprocessed on load.
//!
//! Caption file: `<image_id> TAB <space-separated words>` per line.
//!
//! Checkpoint: a `guidecap-checkpoint 1` header, `key value` lines for the
//! model configuration and attribute mode, a `tokens <n>` block of
//! `<token> <count>` lines in id order, a `frequent <n>` line followed by
//! the frequent-word ids on one line, then a parameter block as written by
//! [`ParamStore::to_text`].

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{AttributeMode, FrequentWordSet, RawRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::guiding::GuideMasks;
use crate::model::{CaptionModel, ModelConfig, Variant};
use crate::numerics::ParamStore;
use crate::review::ReviewConfig;

pub const CHECKPOINT_HEADER: &str = "guidecap-checkpoint 1";

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn perr(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_groups(s: &str, path: &Path, line: usize) -> Result<Vec<Vec<f64>>> {
    let mut groups = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let body = rest
            .strip_prefix('[')
            .ok_or_else(|| perr(path, line, format!("expected `[` at `{}`", truncate(rest))))?;
        let close = body
            .find(']')
            .ok_or_else(|| perr(path, line, "unterminated `[` group"))?;
        let values = body[..close]
            .split(',')
            .map(|t| {
                let t = t.trim();
                match t.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(perr(path, line, format!("bad number `{t}`"))),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        groups.push(values);
        rest = body[close + 1..].trim_start();
    }
    Ok(groups)
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(16) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = raw.split('\t');
        let image_id = fields.next().unwrap_or_default().trim().to_string();
        if image_id.is_empty() || image_id.contains(char::is_whitespace) {
            return Err(perr(path, line, "image id must be a non-empty word"));
        }
        if !seen.insert(image_id.clone()) {
            return Err(perr(path, line, format!("duplicate image id `{image_id}`")));
        }
        let groups = parse_groups(
            fields
                .next()
                .ok_or_else(|| perr(path, line, "missing feature groups"))?,
            path,
            line,
        )?;
        if groups.len() < 2 {
            return Err(perr(path, line, "need the global feature and at least one annotation vector"));
        }
        let mut groups = groups.into_iter();
        let a0 = groups.next().unwrap();
        let items: Vec<Vec<f64>> = groups.collect();
        if items.iter().any(|v| v.len() != items[0].len()) {
            return Err(perr(path, line, "annotation vectors differ in length"));
        }
        out.push(RawRecord {
            image_id,
            a0,
            items,
            captions: fields.map(str::to_string).collect(),
        });
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<RawRecord>> {
    parse_dataset(&read_text(path)?, path)
}

pub fn dataset_to_text(records: &[RawRecord]) -> String {
    let group = |v: &[f64]| format!("[{}]", v.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    let mut s = String::new();
    for r in records {
        let _ = write!(s, "{}\t{}", r.image_id, group(&r.a0));
        for it in &r.items {
            s.push_str(&group(it));
        }
        for c in &r.captions {
            let _ = write!(s, "\t{}", c.replace(['\t', '\n', '\r'], " "));
        }
        s.push('\n');
    }
    s
}

pub fn captions_to_text(rows: &[(String, String)]) -> String {
    rows.iter().map(|(id, c)| format!("{id}\t{c}\n")).collect()
}

pub fn parse_captions(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let (id, cap) = raw
            .split_once('\t')
            .ok_or_else(|| perr(path, i + 1, "expected `<image_id> TAB <caption>`"))?;
        out.push((id.trim().to_string(), cap.trim().to_string()));
    }
    Ok(out)
}

struct Lines<'a, I> {
    inner: I,
    path: &'a Path,
    last: usize,
}

impl<'a, 't, I: Iterator<Item = (usize, &'t str)>> Lines<'a, I> {
    fn next(&mut self, what: &str) -> Result<(usize, &'t str)> {
        let (ln, l) = self
            .inner
            .next()
            .ok_or_else(|| perr(self.path, self.last, format!("unexpected end of file, expected {what}")))?;
        self.last = ln;
        Ok((ln, l))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'t str)> {
        let (ln, l) = self.next(key)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok((ln, v.trim())),
            _ => Err(perr(self.path, ln, format!("expected `{key} <value>`, found `{l}`"))),
        }
    }

    fn num(&mut self, key: &str) -> Result<usize> {
        let (ln, v) = self.field(key)?;
        v.parse().map_err(|_| perr(self.path, ln, format!("bad integer `{v}` for {key}")))
    }

    fn flag(&mut self, key: &str) -> Result<bool> {
        let (ln, v) = self.field(key)?;
        v.parse()
            .map_err(|_| perr(self.path, ln, format!("expected true or false for {key}, found `{v}`")))
    }
}

/// A trained model together with everything needed to decode new data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CaptionModel<f64>,
    pub vocab: Vocabulary,
    pub fws: FrequentWordSet,
    pub attributes: AttributeMode,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.model.config;
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_HEADER}");
        let _ = writeln!(s, "variant {}", c.variant.as_str());
        for (k, v) in [
            ("vocab", c.vocab),
            ("embed", c.embed),
            ("hidden", c.hidden),
            ("annot_dim", c.annot_dim),
            ("attention", c.attention),
            ("attrs", c.attrs),
        ] {
            let _ = writeln!(s, "{k} {v}");
        }
        let _ = writeln!(s, "guided {}", c.guided);
        let _ = writeln!(s, "mask_annotations {}", c.masks.annotations);
        let _ = writeln!(s, "mask_attributes {}", c.masks.attributes);
        let _ = writeln!(s, "review_steps {}", c.review.steps);
        let _ = writeln!(s, "review_share {}", c.review.share_params);
        let _ = writeln!(s, "attributes {}", self.attributes.as_str());
        let _ = writeln!(s, "tokens {}", self.vocab.len());
        for (t, n) in self.vocab.tokens().iter().zip(self.vocab.counts()) {
            let _ = writeln!(s, "{t} {n}");
        }
        let ids: Vec<String> = self.fws.ids().iter().map(usize::to_string).collect();
        let _ = writeln!(s, "frequent {}", ids.len());
        let _ = writeln!(s, "{}", ids.join(" "));
        s.push_str(&self.model.params.to_text());
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut r = Lines {
            inner: text.lines().enumerate().map(|(i, l)| (i + 1, l)),
            path,
            last: 0,
        };
        let (ln, head) = r.next("header")?;
        if head.trim() != CHECKPOINT_HEADER {
            return Err(perr(path, ln, format!("expected `{CHECKPOINT_HEADER}`")));
        }
        let (vln, v) = r.field("variant")?;
        let variant = match v {
            "soft-attention" => Variant::SoftAttention,
            "review-net" => Variant::ReviewNet,
            _ => return Err(perr(path, vln, format!("unknown variant `{v}`"))),
        };
        let vocab = r.num("vocab")?;
        let embed = r.num("embed")?;
        let hidden = r.num("hidden")?;
        let annot_dim = r.num("annot_dim")?;
        let attention = r.num("attention")?;
        let attrs = r.num("attrs")?;
        let guided = r.flag("guided")?;
        let masks = GuideMasks {
            annotations: r.flag("mask_annotations")?,
            attributes: r.flag("mask_attributes")?,
        };
        let review = ReviewConfig {
            steps: r.num("review_steps")?,
            share_params: r.flag("review_share")?,
        };
        let (aln, a) = r.field("attributes")?;
        let attributes = match a {
            "oracle" => AttributeMode::Oracle,
            "predicted" => AttributeMode::Predicted,
            "zero" => AttributeMode::Zero,
            _ => return Err(perr(path, aln, format!("unknown attribute mode `{a}`"))),
        };
        let ntok = r.num("tokens")?;
        let mut tokens = Vec::with_capacity(ntok);
        let mut counts = Vec::with_capacity(ntok);
        for _ in 0..ntok {
            let (ln, l) = r.next("vocabulary entry")?;
            let (t, n) = l
                .rsplit_once(' ')
                .ok_or_else(|| perr(path, ln, "expected `<token> <count>`"))?;
            tokens.push(t.to_string());
            counts.push(n.parse().map_err(|_| perr(path, ln, format!("bad count `{n}`")))?);
        }
        let vocabulary = Vocabulary::from_parts(tokens, counts).map_err(|e| perr(path, r.last, e.to_string()))?;
        let nfreq = r.num("frequent")?;
        let (fln, fl) = r.next("frequent word ids")?;
        let ids = fl
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| perr(path, fln, format!("bad id `{t}`"))))
            .collect::<Result<Vec<usize>>>()?;
        if ids.len() != nfreq || ids.iter().any(|&i| i >= vocabulary.len()) {
            return Err(perr(path, fln, "frequent word ids do not match the vocabulary"));
        }
        let params = ParamStore::from_lines(&mut r.inner, path, fln + 1)?;
        let config = ModelConfig {
            variant,
            vocab,
            embed,
            hidden,
            annot_dim,
            attention,
            attrs,
            guided,
            masks,
            review,
        };
        if vocab != vocabulary.len() {
            return Err(Error::Data(format!(
                "{}: model vocabulary {vocab} differs from {} stored tokens",
                path.display(),
                vocabulary.len()
            )));
        }
        let model = CaptionModel::from_params(config, params)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok(Self {
            model,
            vocab: vocabulary,
            fws: FrequentWordSet::from_ids(ids),
            attributes,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preprocess_caption, tokenized_captions};

    const SAMPLE: &str = "# two records\n\
        a1\t[0.5,1][1,2][3, 4]\tA dog runs.\tthe dog\n\
        \n\
        b2\t[0] [1e-3,-2]\n";

    #[test]
    fn dataset_round_trip() {
        let p = Path::new("d.tsv");
        let recs = parse_dataset(SAMPLE, p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].items, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(recs[0].captions.len(), 2);
        assert!(recs[1].captions.is_empty());
        let again = parse_dataset(&dataset_to_text(&recs), p).unwrap();
        assert_eq!(again, recs);
    }

    #[test]
    fn dataset_errors_carry_line() {
        let p = Path::new("d.tsv");
        for (text, line) in [
            ("a\t[1][1,2]\nb\t[1][x]\n", 2),
            ("a\t[1]\n", 1),
            ("a\t[1][1,2][3]\n", 1),
            ("a\t[1][2]\na\t[1][2]\n", 2),
            ("a\t[1][2\n", 1),
        ] {
            match parse_dataset(text, p) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let recs = parse_dataset(SAMPLE, Path::new("d.tsv")).unwrap();
        let vocab = Vocabulary::build(&tokenized_captions(&recs), 1).unwrap();
        let fws = FrequentWordSet::from_ids(vec![3, 4]);
        let cfg = ModelConfig {
            vocab: vocab.len(),
            embed: 3,
            hidden: 4,
            annot_dim: 2,
            attention: 3,
            attrs: 2,
            ..ModelConfig::default()
        };
        let ck = Checkpoint {
            model: CaptionModel::new(cfg, 5).unwrap(),
            vocab,
            fws,
            attributes: AttributeMode::Zero,
        };
        let p = Path::new("c.txt");
        let text = ck.to_text();
        let back = Checkpoint::parse(&text, p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.vocab.id("dog"), ck.vocab.id(&preprocess_caption("Dog")[0]));

        let broken = text.replacen("hidden 4", "hidden four", 1);
        assert!(matches!(Checkpoint::parse(&broken, p), Err(Error::Parse { line: 5, .. })));
        let truncated: String = text.lines().take(30).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::parse(&truncated, p).is_err());
    }

    #[test]
    fn captions_round_trip() {
        let rows = vec![("a".to_string(), "a dog".to_string()), ("b".to_string(), String::new())];
        let p = Path::new("c.txt");
        assert_eq!(parse_captions(&captions_to_text(&rows), p).unwrap(), rows);
        assert!(parse_captions("no tab here\n", p).is_err());
    }
}
