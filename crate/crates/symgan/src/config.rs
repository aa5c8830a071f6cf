//! The single TOML document that drives every pipeline stage.
//!
//! Relative paths are resolved against the directory holding the config
//! file. A missing `vocabulary` selects the shipped default vocabulary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symgan_core::dataset::{BalanceConfig, DEFAULT_CANVAS};
use symgan_core::engraver::Geometry;
use symgan_core::metrics::KidConfig;
use symgan_core::models::ModelConfig;
use symgan_core::trainer::TrainConfig;
use symgan_core::vocab::ClassVocabulary;

use crate::error::{Error, Result};
use crate::ingest::SourceDescriptor;

pub const DEFAULT_VOCABULARY: &str = include_str!("../assets/default.vocab");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub engrave: EngraveConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    /// Directory the config was loaded from; not part of the document.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownLabelPolicy {
    #[default]
    Skip,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub canvas: usize,
    pub stroke_width: f32,
    pub on_unknown: UnknownLabelPolicy,
    pub threshold: usize,
    pub max_multiplier: usize,
    /// Folder of `<base class>/*.png` distorted exemplars for shadow classes.
    pub shadow_dir: Option<PathBuf>,
    pub sources: Vec<SourceDescriptor>,
}

impl DataConfig {
    pub fn balance(&self) -> BalanceConfig {
        BalanceConfig {
            threshold: self.threshold,
            max_multiplier: self.max_multiplier,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            canvas: DEFAULT_CANVAS,
            stroke_width: 3.0,
            on_unknown: UnknownLabelPolicy::Skip,
            threshold: BalanceConfig::default().threshold,
            max_multiplier: BalanceConfig::default().max_multiplier,
            shadow_dir: None,
            sources: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Classes to generate; empty means every generation class.
    pub classes: Vec<String>,
    pub count: usize,
    /// Style exemplars; defaults to the prepared training samples.
    pub style_dir: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            classes: Vec::new(),
            count: 10,
            style_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngraveConfig {
    pub scores: Option<PathBuf>,
    pub backgrounds: Option<PathBuf>,
    pub geometry: Geometry,
}

impl Default for EngraveConfig {
    fn default() -> Self {
        EngraveConfig {
            scores: None,
            backgrounds: None,
            geometry: Geometry::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorChoice {
    #[default]
    Stub,
    Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub reference: Option<PathBuf>,
    pub extractor: ExtractorChoice,
    /// Weights file; `SYMGAN_EXTRACTOR_WEIGHTS` overrides it.
    pub weights: Option<PathBuf>,
    /// Optional separate network for the style (HWD) features.
    pub style_weights: Option<PathBuf>,
    pub allow_stub_fallback: bool,
    pub binarize: bool,
    pub kid_resamples: usize,
    pub kid_subset: Option<usize>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            reference: None,
            extractor: ExtractorChoice::Stub,
            weights: None,
            style_weights: None,
            allow_stub_fallback: false,
            binarize: true,
            kid_resamples: KidConfig::default().resamples,
            kid_subset: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::parse(base_dir, e))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingPath {
                what: "config file",
                path: path.to_path_buf(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.base_dir = base;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    /// Loads the configured vocabulary, failing with the path when it is absent.
    pub fn load_vocabulary(&self) -> Result<ClassVocabulary> {
        let text = match &self.vocabulary {
            None => DEFAULT_VOCABULARY.to_string(),
            Some(p) => {
                let path = self.resolve(p);
                if !path.is_file() {
                    return Err(Error::MissingPath {
                        what: "vocabulary file",
                        path,
                    });
                }
                std::fs::read_to_string(&path).map_err(Error::io(&path))?
            }
        };
        Ok(ClassVocabulary::parse(&text)?)
    }

    /// Training config with the stage seed derived from the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: symgan_core::rng::derive(self.seed, "stage.train"),
            ..self.train.clone()
        }
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        symgan_core::rng::derive(self.seed, stage)
    }

    /// Checks that every path the config names exists.
    pub fn check_paths(&self) -> Result<()> {
        let check = |what, p: &Option<PathBuf>| match p {
            Some(p) if !self.resolve(p).exists() => Err(Error::MissingPath { what, path: self.resolve(p) }),
            _ => Ok(()),
        };
        check("vocabulary file", &self.vocabulary)?;
        check("shadow directory", &self.data.shadow_dir)?;
        check("style directory", &self.generate.style_dir)?;
        check("scores directory", &self.engrave.scores)?;
        check("background directory", &self.engrave.backgrounds)?;
        check("reference directory", &self.evaluate.reference)?;
        for s in &self.data.sources {
            let p = self.resolve(&s.path);
            if !p.exists() {
                return Err(Error::MissingPath { what: "data source", path: p });
            }
        }
        Ok(())
    }
}
