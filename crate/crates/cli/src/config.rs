use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cardioregion::models::{ClassifierConfig, SegmenterConfig};
use cardioregion::pipeline::Arm;
use cardioregion::sampler::RATIO_HIGH;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

/// Settings shared by all commands. A config file provides the base values
/// and command-line flags override individual keys.
///
/// `segmenter` and `classifier`, when present, must be complete and replace
/// the named profile's values wholesale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub split_seed: u64,
    pub arms: Vec<Arm>,
    pub sampler_ratio: f64,
    pub profile: Profile,
    pub segmenter: Option<SegmenterConfig>,
    pub classifier: Option<ClassifierConfig>,
    pub out: Option<PathBuf>,
    /// Overrides the seeds of every model config when set.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            split_seed: 0,
            arms: vec![Arm::Baseline],
            sampler_ratio: RATIO_HIGH,
            profile: Profile::Desk,
            segmenter: None,
            classifier: None,
            out: None,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn segmenter_config(&self) -> SegmenterConfig {
        let mut c = self.segmenter.clone().unwrap_or_else(|| match self.profile {
            Profile::Desk => SegmenterConfig::desk(),
            Profile::Paper => SegmenterConfig::paper(),
        });
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let mut c = self.classifier.clone().unwrap_or_else(|| match self.profile {
            Profile::Desk => ClassifierConfig::desk(),
            Profile::Paper => ClassifierConfig::paper(),
        });
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }

    pub fn data_dir(&self) -> Result<&Path> {
        let Some(d) = self.data.as_deref() else {
            bail!("no dataset root given (--data or \"data\" in the config file)");
        };
        if !d.is_dir() {
            bail!("dataset root {} does not exist", d.display());
        }
        Ok(d)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("no output directory given (--out or \"out\" in the config file)")
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
