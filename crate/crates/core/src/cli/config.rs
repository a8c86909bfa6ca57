use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeMode, PredictorConfig, SynthConfig, DEFAULT_MIN_COUNT};
use crate::decode::BeamConfig;
use crate::error::{Error, Result};
use crate::guiding::GuideMasks;
use crate::model::{ModelConfig, Variant};
use crate::review::ReviewConfig;
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "GUIDECAP_SEED";
pub const DEFAULT_FREQUENT_WORDS: usize = 50;

/// Where the records come from and how they are turned into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub min_count: usize,
    pub frequent_words: usize,
    pub attributes: AttributeMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            val: None,
            test: None,
            min_count: DEFAULT_MIN_COUNT,
            frequent_words: DEFAULT_FREQUENT_WORDS,
            attributes: AttributeMode::Oracle,
        }
    }
}

/// Architecture knobs; data-dependent sizes are filled in after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub guided: bool,
    pub masks: GuideMasks,
    pub review: ReviewConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            variant: m.variant,
            embed: m.embed,
            hidden: m.hidden,
            attention: m.attention,
            guided: m.guided,
            masks: m.masks,
            review: m.review,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, vocab: usize, annot_dim: usize, attrs: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            vocab,
            embed: self.embed,
            hidden: self.hidden,
            annot_dim,
            attention: self.attention,
            attrs,
            guided: self.guided,
            masks: self.masks,
            review: self.review,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub seeds: usize,
    /// Training epochs per run; every run trains exactly this long.
    pub epochs: usize,
    /// Extra rows training the keep-both arm with `lambda1 = lambda2 = λ`.
    pub lambdas: Vec<f64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            epochs: 20,
            lambdas: Vec::new(),
        }
    }
}

/// Tiny model used by `gradcheck`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub annotations: usize,
    pub annot_dim: usize,
    pub attention: usize,
    pub frequent_words: usize,
    pub review_steps: usize,
    pub caption_len: usize,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            vocab: 12,
            embed: 6,
            hidden: 8,
            annotations: 4,
            annot_dim: 6,
            attention: 5,
            frequent_words: 5,
            review_steps: 3,
            caption_len: 5,
            tolerance: 1e-4,
        }
    }
}

impl GradCheckConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            variant: Variant::SoftAttention,
            vocab: self.vocab,
            embed: self.embed,
            hidden: self.hidden,
            annot_dim: self.annot_dim,
            attention: self.attention,
            attrs: self.frequent_words,
            guided: true,
            masks: GuideMasks::default(),
            review: ReviewConfig {
                steps: self.review_steps,
                share_params: true,
            },
        }
    }
}

/// Everything a command needs, read from one TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// When present, records are generated instead of read from files.
    pub synth: Option<SynthConfig>,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub predictor: PredictorConfig,
    pub beam: BeamConfig,
    pub output: OutputConfig,
    pub ablate: AblateConfig,
    pub gradcheck: GradCheckConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }

    /// Reads `path`, applies `GUIDECAP_SEED`, resolves relative paths
    /// against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.data.train, &mut self.data.val, &mut self.data.test].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.beam.validate()?;
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if self.data.frequent_words == 0 {
            return Err(Error::Config("data.frequent_words must be at least 1".into()));
        }
        if self.ablate.seeds == 0 {
            return Err(Error::Config("ablate.seeds must be at least 1".into()));
        }
        if self.ablate.epochs == 0 {
            return Err(Error::Config("ablate.epochs must be at least 1".into()));
        }
        if self.ablate.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("ablate.lambdas must be non-negative".into()));
        }
        if !(self.gradcheck.tolerance > 0.0) {
            return Err(Error::Config("gradcheck.tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let text = r#"
seed = 11

[synth]
train = 20
noise = 0.1

[model]
variant = "review-net"
hidden = 16

[model.review]
steps = 2

[train]
lambda1 = 1.0
max_epochs = 3

[ablate]
lambdas = [100.0, 10.0]
"#;
        let cfg = RunConfig::parse(text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.model.variant, Variant::ReviewNet);
        assert_eq!(cfg.model.review.steps, 2);
        assert_eq!(cfg.synth.as_ref().unwrap().train, 20);
        let again = RunConfig::parse(&cfg.to_toml().unwrap(), Path::new("y.toml")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_report_position() {
        let err = RunConfig::parse("seed = 1\n[train]\nlearning_rate = 0.1\n", Path::new("c.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.synth = Some(SynthConfig {
            concepts: 0,
            ..SynthConfig::default()
        });
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.synth = Some(SynthConfig::default());
        cfg.ablate.seeds = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
