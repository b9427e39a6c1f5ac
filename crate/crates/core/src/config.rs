//! Pipeline configuration, read from TOML with one table per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentParams;
use crate::classify::{ClassifierKind, ClassifyParams};
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_ROI_FACTOR;
use crate::pairs::SplitSpec;
use crate::photometric::AceParams;
use crate::synth::SynthSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    #[serde(rename = "vgg-face-4096")]
    VggFace4096,
    #[serde(rename = "openface-128")]
    OpenFace128,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::VggFace4096 => "vgg-face-4096",
            Backend::OpenFace128 => "openface-128",
        }
    }

    pub fn chip_size(self) -> usize {
        match self {
            Backend::VggFace4096 => 224,
            Backend::OpenFace128 => 96,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Backend::VggFace4096 => 4096,
            Backend::OpenFace128 => 128,
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Backend::VggFace4096, Backend::OpenFace128]
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown backend {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub roi_factor: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            roi_factor: DEFAULT_ROI_FACTOR,
        }
    }
}

/// Where embeddings come from: an extractor process, or precomputed store files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub extractor: Option<Vec<String>>,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub classifier: ClassifierKind,
    #[serde(flatten)]
    pub params: ClassifyParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierKind::VotingRf,
            params: ClassifyParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub timing_repetitions: usize,
    pub plot: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            timing_repetitions: 3,
            plot: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub backend: Backend,
    pub geometry: GeometryConfig,
    pub ace: AceParams,
    pub augment: AugmentParams,
    pub embed: EmbedConfig,
    pub pairs: SplitSpec,
    pub classify: TrainConfig,
    pub evaluate: EvalConfig,
    pub synth: SynthSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: Backend::OpenFace128,
            geometry: GeometryConfig::default(),
            ace: AceParams::default(),
            augment: AugmentParams::default(),
            embed: EmbedConfig::default(),
            pairs: SplitSpec::default(),
            classify: TrainConfig::default(),
            evaluate: EvalConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Pushes the master seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.ace.seed = seed;
        self.pairs.seed = seed;
        self.synth.seed = seed;
        self.classify.params = self.classify.params.with_seed(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.geometry.roi_factor >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "roi_factor must be >= 0, got {}",
                self.geometry.roi_factor
            )));
        }
        if self.embed.extractor.is_some() && !self.embed.files.is_empty() {
            return Err(Error::InvalidParameter(
                "embed.extractor and embed.files are mutually exclusive".into(),
            ));
        }
        if self.embed.extractor.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::InvalidParameter("embed.extractor is an empty command".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_sizes() {
        assert_eq!(Backend::VggFace4096.chip_size(), 224);
        assert_eq!(Backend::OpenFace128.dim(), 128);
        assert_eq!("openface-128".parse::<Backend>().unwrap(), Backend::OpenFace128);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = PipelineConfig::default().with_seed(11);
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = PipelineConfig::from_toml(
            "backend = \"vgg-face-4096\"\n[classify]\nclassifier = \"pm-svm\"\n[classify.pm_svm]\nomega = 0.5\n",
        )
        .unwrap();
        assert_eq!(p.backend, Backend::VggFace4096);
        assert_eq!(p.classify.classifier, ClassifierKind::PmSvm);
        assert_eq!(p.classify.params.pm_svm.omega, 0.5);
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }
}
