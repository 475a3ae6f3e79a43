//! Run configuration.
//!
//! A TOML file. Relative paths resolve against the directory holding the
//! config file. Secrets never appear here; adapters name the environment
//! variable that holds them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::CorpusFormat;
use crate::linker::{NerAdapter, ResolverConfig, DEFAULT_LINK_THRESHOLD};
use crate::strategies::{
    PerspectiveConfig, StrategyCategory, StrategyId, DEFAULT_TOXICITY_THRESHOLD, FASTTEXT_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    pub kb: KbConfig,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub linking: LinkingConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    pub strategies: StrategiesConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_work_dir() -> PathBuf {
    "work".into()
}

fn default_output_dir() -> PathBuf {
    "out".into()
}

/// Every random choice is driven by one of these. No defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub sampling: u64,
    pub training: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbConfig {
    /// People Dataset TSV.
    pub people: PathBuf,
    /// Region map; the bundled one when absent.
    #[serde(default)]
    pub regions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Paths or glob patterns.
    pub inputs: Vec<String>,
    pub format: CorpusFormat,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub sample_size: usize,
    /// Documents held out for quality-threshold calibration.
    #[serde(default)]
    pub calibration_size: usize,
}

fn default_samples() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkingConfig {
    #[serde(default = "default_link_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub resolver: Option<ResolverConfig>,
    #[serde(default)]
    pub ner: Option<NerAdapter>,
}

fn default_link_threshold() -> f64 {
    DEFAULT_LINK_THRESHOLD
}

impl Default for LinkingConfig {
    fn default() -> Self {
        LinkingConfig {
            threshold: DEFAULT_LINK_THRESHOLD,
            resolver: None,
            ner: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dim: crate::strategies::linear::DEFAULT_DIM,
            epochs: 10,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Local hashed linear model.
    #[default]
    Model,
    /// Remote toxicity API through the adapter.
    Perspective,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Lexicon file; the bundled starter list when absent.
    pub lexicon: Option<PathBuf>,
    /// Labelled `label TAB text` training file.
    pub train: Option<PathBuf>,
    /// Pre-trained model; takes precedence over `train`.
    pub model: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub target_removal: Option<f64>,
    pub backend: Backend,
    pub adapter: Option<PerspectiveConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategiesConfig {
    pub enabled: Vec<StrategyId>,
    #[serde(default)]
    pub shutterstock: StrategyConfig,
    #[serde(default)]
    pub hatebase: StrategyConfig,
    #[serde(default)]
    pub perspective: StrategyConfig,
    #[serde(default)]
    pub fasttext: StrategyConfig,
    #[serde(default)]
    pub profanity: StrategyConfig,
    #[serde(default)]
    pub quality_wiki: StrategyConfig,
    #[serde(default)]
    pub quality_webtext: StrategyConfig,
}

impl StrategiesConfig {
    pub fn get(&self, id: StrategyId) -> &StrategyConfig {
        match id {
            StrategyId::Shutterstock => &self.shutterstock,
            StrategyId::Hatebase => &self.hatebase,
            StrategyId::Perspective => &self.perspective,
            StrategyId::Fasttext => &self.fasttext,
            StrategyId::Profanity => &self.profanity,
            StrategyId::QualityWiki => &self.quality_wiki,
            StrategyId::QualityWebtext => &self.quality_webtext,
        }
    }

    fn get_mut(&mut self, id: StrategyId) -> &mut StrategyConfig {
        match id {
            StrategyId::Shutterstock => &mut self.shutterstock,
            StrategyId::Hatebase => &mut self.hatebase,
            StrategyId::Perspective => &mut self.perspective,
            StrategyId::Fasttext => &mut self.fasttext,
            StrategyId::Profanity => &mut self.profanity,
            StrategyId::QualityWiki => &mut self.quality_wiki,
            StrategyId::QualityWebtext => &mut self.quality_webtext,
        }
    }

    /// Classifier threshold, falling back to the strategy default.
    pub fn threshold(&self, id: StrategyId) -> f64 {
        self.get(id).threshold.unwrap_or(match id {
            StrategyId::Fasttext => FASTTEXT_THRESHOLD,
            _ => DEFAULT_TOXICITY_THRESHOLD,
        })
    }

    /// Share of documents a quality filter should remove.
    pub fn target_removal(&self, id: StrategyId) -> f64 {
        self.get(id).target_removal.unwrap_or(match id {
            StrategyId::QualityWebtext => 0.45,
            _ => 0.15,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub harm_strategies: Vec<StrategyId>,
    pub top_k: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            harm_strategies: Vec::new(),
            top_k: 5,
        }
    }
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub offline: bool,
    /// Replaces every seed.
    pub seed: Option<u64>,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} = {v} is outside [0, 1]")))
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            base
        };
        Self::parse(&text, &base)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(s) = o.seed {
            self.seeds = Seeds {
                sampling: s,
                training: s,
            };
        }
        if o.offline {
            if let Some(r) = &mut self.linking.resolver {
                r.offline = true;
            }
            for id in StrategyId::ALL {
                if let Some(a) = &mut self.strategies.get_mut(id).adapter {
                    a.offline = true;
                }
            }
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Path relative to the config directory when possible, for reporting.
    pub fn display_path(&self, p: &Path) -> String {
        p.strip_prefix(&self.base_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.work_dir)
    }

    pub fn run_output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir).join(&self.run_id)
    }

    /// Expanded corpus inputs, sorted, duplicates removed. Every pattern must
    /// match at least one file.
    pub fn corpus_files(&self) -> Result<Vec<PathBuf>> {
        let mut out = BTreeSet::new();
        for pat in &self.corpus.inputs {
            let full = self.resolve(Path::new(pat));
            let full = full.to_string_lossy();
            let mut n = 0;
            for entry in glob::glob(&full).map_err(|e| Error::Validation(format!("bad corpus pattern {pat:?}: {e}")))? {
                let p = entry.map_err(|e| Error::Validation(format!("corpus pattern {pat:?}: {e}")))?;
                if p.is_file() {
                    out.insert(p);
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::Validation(format!("corpus input {pat:?} matches no files")));
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Digest of the effective configuration (after overrides).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn harm_strategies(&self) -> Vec<StrategyId> {
        self.audit.harm_strategies.clone()
    }

    /// Checks everything that can be checked without doing work.
    pub fn validate(&self) -> Result<()> {
        let v = |m: String| Err(Error::Validation(m));
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            || self.run_id.starts_with('.')
        {
            return v(format!(
                "run_id {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.run_id
            ));
        }
        let must_exist = |what: &str, p: &Path| -> Result<()> {
            let full = self.resolve(p);
            if full.is_file() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{what} {} does not exist", full.display())))
            }
        };
        must_exist("kb.people", &self.kb.people)?;
        if let Some(r) = &self.kb.regions {
            must_exist("kb.regions", r)?;
        }
        if self.corpus.inputs.is_empty() {
            return v("corpus.inputs is empty".into());
        }
        self.corpus_files()?;
        if self.corpus.samples == 0 || self.corpus.sample_size == 0 {
            return v("corpus.samples and corpus.sample_size must be positive".into());
        }
        check_unit("linking.threshold", self.linking.threshold)?;
        if let Some(ner) = &self.linking.ner {
            if ner.command.is_empty() {
                return v("linking.ner.command is empty".into());
            }
        }
        if self.training.dim == 0 || self.training.epochs == 0 {
            return v("training.dim and training.epochs must be positive".into());
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return v(format!(
                "training.learning_rate = {} must be positive",
                self.training.learning_rate
            ));
        }
        let enabled = &self.strategies.enabled;
        if enabled.is_empty() {
            return v("strategies.enabled is empty".into());
        }
        let distinct: BTreeSet<_> = enabled.iter().collect();
        if distinct.len() != enabled.len() {
            return v("strategies.enabled lists a strategy twice".into());
        }
        for &id in enabled {
            let sc = self.strategies.get(id);
            let name = id.name();
            if let Some(t) = sc.threshold {
                check_unit(&format!("strategies.{name}.threshold"), t)?;
            }
            match id.category() {
                StrategyCategory::RuleBased => {
                    if let Some(p) = &sc.lexicon {
                        must_exist(&format!("strategies.{name}.lexicon"), p)?;
                    }
                }
                StrategyCategory::ClassifierBased | StrategyCategory::QualityBased => {
                    let remote = sc.backend == Backend::Perspective;
                    if remote && id.category() == StrategyCategory::QualityBased {
                        return v(format!(
                            "strategies.{name}: the perspective backend only scores sentences"
                        ));
                    }
                    if remote {
                        let a = sc.adapter.clone().unwrap_or_default();
                        if a.api_key_env.is_empty() {
                            return v(format!("strategies.{name}.adapter.api_key_env is empty"));
                        }
                        if let Some(p) = &a.replay {
                            must_exist(&format!("strategies.{name}.adapter.replay"), p)?;
                        }
                    } else {
                        match (&sc.model, &sc.train) {
                            (Some(m), _) => must_exist(&format!("strategies.{name}.model"), m)?,
                            (None, Some(t)) => must_exist(&format!("strategies.{name}.train"), t)?,
                            (None, None) => {
                                return v(format!("strategies.{name} needs a model or a train file"));
                            }
                        }
                    }
                    if id.category() == StrategyCategory::QualityBased {
                        let t = self.strategies.target_removal(id);
                        if !(0.0..1.0).contains(&t) {
                            return v(format!("strategies.{name}.target_removal = {t} must be in [0, 1)"));
                        }
                        if self.corpus.calibration_size == 0 {
                            return v(format!("{name} needs corpus.calibration_size > 0"));
                        }
                    }
                }
            }
        }
        for id in &self.audit.harm_strategies {
            if !enabled.contains(id) || !id.is_sentence_level() {
                return v(format!(
                    "audit.harm_strategies: {id} is not an enabled sentence-level strategy"
                ));
            }
        }
        Ok(())
    }
}
